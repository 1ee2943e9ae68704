#pragma once

// Experiment harness: initial part-model calibration, episodes with a
// simulated teacher, seed x strategy experiments, regret statistics and
// their CSV / JSON outputs.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "xil/agent.hpp"
#include "xil/dialogue.hpp"
#include "xil/errors.hpp"
#include "xil/memory.hpp"
#include "xil/rng.hpp"
#include "xil/worldsim.hpp"

namespace xil {

// Stream tags for derive_seed.
inline constexpr std::uint64_t kTagScene = 1;
inline constexpr std::uint64_t kTagCalibration = 2;
inline constexpr std::uint64_t kTagHeldOut = 3;
inline constexpr std::uint64_t kTagPerception = 4;

enum class Quality { LQ, MQ, HQ };

inline std::string to_string(Quality q) { return q == Quality::LQ ? "LQ" : q == Quality::MQ ? "MQ" : "HQ"; }

inline Quality quality_from_string(std::string_view s) {
  if (s == "LQ") return Quality::LQ;
  if (s == "MQ") return Quality::MQ;
  if (s == "HQ") return Quality::HQ;
  throw ConfigurationError("unknown quality '" + std::string(s) + "' (LQ, MQ, HQ)");
}

inline int exposure_episodes(Quality q) { return q == Quality::LQ ? 20 : q == Quality::MQ ? 100 : 200; }

inline double target_accuracy(Quality q) { return q == Quality::LQ ? 74.83 : q == Quality::MQ ? 88.86 : 98.17; }

// ---------------------------------------------------------------------------
// Calibration

// Taught part concepts that have a word, grouped by dimension.
inline std::map<std::string, std::vector<std::string>> taught_parts_by_dimension(const DomainConfig& c) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& p : c.taught_parts())
    if (std::any_of(c.words.begin(), c.words.end(), [&](const WordForms& w) { return w.concept_id == p; }))
      out[c.dimension_of(p)].push_back(p);
  return out;
}

// Part-exposure episodes: each shows one scene and names the region of every
// taught dimension. The region becomes a positive for its own part concept
// and a negative for the other parts of that dimension. Nothing else in the
// scene is labelled.
inline ExemplarBase calibrate_initial_xb(Quality quality, const DomainConfig& domain, std::uint64_t seed,
                                         std::optional<int> episodes = std::nullopt) {
  ExemplarBase xb;
  const auto dims = taught_parts_by_dimension(domain);
  for (const auto& [d, parts] : dims)
    for (const auto& p : parts) xb.register_concept(p);
  const int n = episodes.value_or(exposure_episodes(quality));
  for (int e = 0; e < n; ++e) {
    const auto scene = sample_scene(domain, derive_seed(seed, {kTagCalibration, static_cast<std::uint64_t>(e)}));
    for (const auto& [d, parts] : dims) {
      const auto& r = scene.region_of_role(d);
      for (const auto& p : parts) xb.add(p, r.features, r.label == p ? Label::positive : Label::negative);
    }
  }
  return xb;
}

// Held-out part accuracy in percent: per part concept the balanced accuracy
// of the one-vs-rest decision over regions of its dimension (a vote of
// exactly 0.5 scores half), averaged over concepts.
inline double part_accuracy(const ExemplarBase& xb, const DomainConfig& domain, std::uint64_t seed, int held_out = 300,
                            const PerceptionParams& params = {}) {
  const auto dims = taught_parts_by_dimension(domain);
  std::map<std::string, std::pair<double, int>> pos, neg;
  for (int h = 0; h < held_out; ++h) {
    const auto scene = sample_scene(domain, derive_seed(seed, {kTagHeldOut, static_cast<std::uint64_t>(h)}));
    for (const auto& [d, parts] : dims) {
      const auto& r = scene.region_of_role(d);
      for (const auto& p : parts) {
        const double v = knn_probability(r.features, xb.contains(p) ? xb.at(p) : ExemplarSets{}, params);
        const bool is = r.label == p;
        const double score = v == 0.5 ? 0.5 : ((v > 0.5) == is ? 1.0 : 0.0);
        auto& slot = is ? pos[p] : neg[p];
        slot.first += score;
        ++slot.second;
      }
    }
  }
  double total = 0.0;
  int concepts = 0;
  for (const auto& [d, parts] : dims)
    for (const auto& p : parts) {
      const double a = pos[p].second ? pos[p].first / pos[p].second : 0.5;
      const double b = neg[p].second ? neg[p].first / neg[p].second : 0.5;
      total += 0.5 * (a + b);
      ++concepts;
    }
  return concepts ? 100.0 * total / concepts : 50.0;
}

struct CalibrationReport {
  Quality quality;
  std::string domain;
  double accuracy = 0.0;  // mean over seeds
  double target = 0.0;
  bool within(double tol = 5.0) const { return std::abs(accuracy - target) <= tol; }
};

inline CalibrationReport measure_calibration(Quality q, const DomainConfig& domain, int seeds = 10) {
  double sum = 0.0;
  for (int s = 0; s < seeds; ++s) {
    const auto xb = calibrate_initial_xb(q, domain, static_cast<std::uint64_t>(s));
    sum += part_accuracy(xb, domain, static_cast<std::uint64_t>(1000 + s));
  }
  return {q, domain.name, sum / seeds, target_accuracy(q)};
}

struct SigmaSearch {
  double sigma = 0.0;
  std::vector<CalibrationReport> reports;
  bool feasible = false;
};

// One global shape-noise level for all domains and regimes: the grid point
// with the smallest worst-case deviation from the targets.
inline SigmaSearch search_sigma(std::vector<DomainConfig> domains, const std::vector<double>& grid, int seeds = 6) {
  if (domains.empty() || grid.empty()) throw ContractError("search_sigma needs domains and a grid");
  SigmaSearch best;
  double best_err = 1e18;
  for (double s : grid) {
    std::vector<CalibrationReport> reps;
    double err = 0.0;
    for (auto& d : domains) {
      d.features.sigma = s;
      for (auto q : {Quality::LQ, Quality::MQ, Quality::HQ}) {
        reps.push_back(measure_calibration(q, d, seeds));
        reps.back().domain = d.name;
        err = std::max(err, std::abs(reps.back().accuracy - reps.back().target));
      }
    }
    if (err < best_err) {
      best_err = err;
      best = {s, reps, err <= 5.0};
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Episodes

struct EpisodeRecord {
  int episode = 0;
  bool correct = false;
  std::string answer;
  std::string truth;
  double probability = 0.0;
  std::vector<TranscriptRecord> transcript;
  std::optional<SufficientReason> reason;  // when the learner was asked why
  std::optional<std::string> cited_vertex;
};

inline TrueScene episode_scene(const DomainConfig& domain, std::uint64_t seed, int episode) {
  return sample_scene(domain, derive_seed(seed, {kTagScene, static_cast<std::uint64_t>(episode)}));
}

inline Rng episode_rng(std::uint64_t seed, int episode) {
  return Rng(derive_seed(seed, {kTagPerception, static_cast<std::uint64_t>(episode)}));
}

// One episode seen from the teacher's side: the probe and the learner's
// answer, then teacher moves one at a time. Used by the simulated teacher
// and by human sessions alike.
class EpisodeRun {
 public:
  EpisodeRun(Agent& agent, const TrueScene& scene, int episode, Rng& rng, const Lexicon& vocabulary)
      : agent_(agent), scene_(scene), rng_(rng), vocabulary_(vocabulary) {
    rec_.episode = episode;
    rec_.truth = scene.truck().whole;
    state_.strategy = agent.config().strategy;
  }

  // Probe -> learner answer.
  const Utterance& begin() {
    if (state_.phase != Phase::AwaitProbe) throw ConformanceError("episode already started");
    const RegionRef target{scene_.truck().id, 1.0, false};
    const Utterance probe = make_utterance(teacher_probe(scene_), {{scene_.truck().id, target}}, vocabulary_);
    state_ = advance(state_, probe.move);
    log(probe);
    last_ = agent_.handle_probe(probe, scene_, rng_, rec_.episode);
    const auto& tr = *agent_.trace();
    rec_.answer = tr.answer.answer;
    rec_.probability = tr.answer.probability;
    rec_.correct = rec_.answer == rec_.truth;
    state_ = advance(state_, last_.move);
    log(last_, tr.marginals.converged ? std::map<std::string, std::string>{}
                                      : std::map<std::string, std::string>{{"bp_converged", "false"}});
    return last_;
  }

  // One teacher move. An illegal move throws and leaves everything as it was.
  std::optional<Utterance> teacher(const Utterance& u) {
    if (u.speaker != Speaker::teacher) throw ConformanceError(move_name(u.move) + " is a learner move");
    if (std::holds_alternative<Probe>(u.move)) throw ConformanceError("the probe is issued by begin()");
    state_ = advance(state_, u.move);
    log(u);
    agent_.learn(u, turn_ - 1);
    if (!std::holds_alternative<WhyQ>(u.move)) return std::nullopt;
    last_ = agent_.handle_why(u);
    rec_.reason = agent_.last_reason();
    if (auto* x = std::get_if<Explain>(&last_.move)) rec_.cited_vertex = x->region;
    state_ = advance(state_, last_.move);
    log(last_);
    return last_;
  }

  // Closes the episode; throws while a teacher move is still due. The
  // flowchart alone cannot tell a wrong answer from a right one, the scene
  // can.
  void end() {
    if (state_.phase == Phase::AnswerJudged && !rec_.correct)
      throw ConformanceError("this_" + state_.object + " was answered wrongly and needs a correction");
    state_ = finish(state_);
    agent_.end_episode();
  }

  bool can_end() const {
    if (state_.phase == Phase::AnswerJudged && !rec_.correct) return false;
    try {
      finish(state_);
      return true;
    } catch (const ConformanceError&) {
      return false;
    }
  }

  const DialogueState& state() const { return state_; }
  const EpisodeRecord& record() const { return rec_; }
  EpisodeRecord take_record() { return std::move(rec_); }
  const Utterance& last_learner_move() const { return last_; }

 private:
  void log(const Utterance& u, std::map<std::string, std::string> flags = {}) {
    rec_.transcript.push_back({rec_.episode, turn_++, u, to_string(state_.strategy), std::move(flags)});
  }

  Agent& agent_;
  const TrueScene& scene_;
  Rng& rng_;
  const Lexicon& vocabulary_;
  DialogueState state_;
  EpisodeRecord rec_;
  Utterance last_;
  int turn_ = 0;
};

// One round of the flowchart between the agent and the simulated teacher.
inline EpisodeRecord run_episode(Agent& agent, const TrueScene& scene, const DomainConfig& domain, int episode,
                                 Rng& rng, const Lexicon& vocabulary) {
  EpisodeRun run(agent, scene, episode, rng, vocabulary);
  const Utterance answer = run.begin();
  auto pending = teacher_policy(run.state(), answer, scene, domain);
  for (std::size_t i = 0; i < pending.size(); ++i) {
    const Utterance u = make_utterance(pending[i].first, pending[i].second, vocabulary);
    if (const auto reply = run.teacher(u))
      for (auto& more : teacher_policy(run.state(), *reply, scene, domain)) pending.push_back(std::move(more));
  }
  run.end();
  return run.take_record();
}

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentConfig {
  DomainConfig domain = single_4way();
  std::vector<Strategy> strategies{Strategy::VisOnly, Strategy::VisGenr, Strategy::VisGenrExpl};
  int seeds = 30;
  int episodes = 120;
  Quality quality = Quality::LQ;
  std::uint64_t base_seed = 0;
  AgentConfig agent;  // strategy overwritten per run
  int threads = 0;    // 0: hardware concurrency
  bool keep_transcripts = false;
  // Inspection hook, called once per finished run (seed, strategy, agent, records).
  std::function<void(int, Strategy, const Agent&, const std::vector<EpisodeRecord>&)> on_run;
  // Called after every episode while the agent still holds its trace. Runs on
  // worker threads.
  std::function<void(int, Strategy, const Agent&, const EpisodeRecord&)> on_episode;
};

struct RunResult {
  Strategy strategy;
  int seed = 0;
  std::vector<int> cumulative;  // cumulative regret after each episode
  std::vector<TranscriptRecord> transcript;
  Memory final_memory;
};

struct Summary {
  double mean = 0.0;
  double sd = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int n = 0;
};

// Mean with a Student-t 95% interval.
inline Summary summarize(const std::vector<double>& xs) {
  Summary s;
  s.n = static_cast<int>(xs.size());
  if (s.n == 0) return s;
  for (double x : xs) s.mean += x / s.n;
  if (s.n < 2) {
    s.ci_low = s.ci_high = s.mean;
    return s;
  }
  double ss = 0.0;
  for (double x : xs) ss += (x - s.mean) * (x - s.mean);
  s.sd = std::sqrt(ss / (s.n - 1));
  const boost::math::students_t t(s.n - 1);
  const double h = boost::math::quantile(boost::math::complement(t, 0.025)) * s.sd / std::sqrt(double(s.n));
  s.ci_low = s.mean - h;
  s.ci_high = s.mean + h;
  return s;
}

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-sided
};

inline WelchResult welch_test(const std::vector<double>& a, const std::vector<double>& b) {
  const auto sa = summarize(a), sb = summarize(b);
  if (sa.n < 2 || sb.n < 2) throw ContractError("Welch test needs two samples of size >= 2");
  const double va = sa.sd * sa.sd / sa.n, vb = sb.sd * sb.sd / sb.n;
  WelchResult r;
  if (va + vb == 0.0) {
    r.p = sa.mean == sb.mean ? 1.0 : 0.0;
    r.t = sa.mean == sb.mean ? 0.0 : std::copysign(INFINITY, sa.mean - sb.mean);
    r.df = sa.n + sb.n - 2;
    return r;
  }
  r.t = (sa.mean - sb.mean) / std::sqrt(va + vb);
  r.df = (va + vb) * (va + vb) / (va * va / (sa.n - 1) + vb * vb / (sb.n - 1));
  const boost::math::students_t dist(r.df);
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

struct ExperimentResult {
  std::vector<RunResult> runs;  // strategy-major, then seed

  std::vector<double> final_regrets(Strategy s) const {
    std::vector<double> out;
    for (const auto& r : runs)
      if (r.strategy == s) out.push_back(r.cumulative.empty() ? 0.0 : r.cumulative.back());
    return out;
  }
};

inline Memory seeded_memory(const ExperimentConfig& cfg, int seed) {
  Memory m = initial_memory(cfg.domain);
  const auto xb = calibrate_initial_xb(cfg.quality, cfg.domain, derive_seed(cfg.base_seed, {kTagCalibration, std::uint64_t(seed)}));
  for (const auto& [id, sets] : xb.all()) {
    for (const auto& v : sets.positives) m.exemplars.add(id, v, Label::positive);
    for (const auto& v : sets.negatives) m.exemplars.add(id, v, Label::negative);
  }
  return m;
}

inline RunResult run_one(const ExperimentConfig& cfg, Strategy strategy, int seed, const Memory& initial) {
  AgentConfig ac = cfg.agent;
  ac.strategy = strategy;
  const Lexicon vocabulary = domain_lexicon(cfg.domain);
  Agent agent(ac, initial, vocabulary);
  RunResult rr{strategy, seed, {}, {}, {}};
  std::vector<EpisodeRecord> records;
  const std::uint64_t run_seed = derive_seed(cfg.base_seed, {std::uint64_t(seed)});
  int regret = 0;
  for (int e = 0; e < cfg.episodes; ++e) {
    const auto scene = episode_scene(cfg.domain, run_seed, e);
    Rng rng = episode_rng(run_seed, e);
    auto rec = run_episode(agent, scene, cfg.domain, e, rng, vocabulary);
    regret += rec.correct ? 0 : 1;
    rr.cumulative.push_back(regret);
    if (cfg.on_episode) cfg.on_episode(seed, strategy, agent, rec);
    if (cfg.keep_transcripts)
      for (auto& t : rec.transcript) rr.transcript.push_back(t);
    if (cfg.on_run) records.push_back(std::move(rec));
  }
  rr.final_memory = agent.memory();
  if (cfg.on_run) cfg.on_run(seed, strategy, agent, records);
  return rr;
}

// Runs every (strategy, seed) pair; all strategies see the same scenes and
// the same initial part model for a given seed.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  rng_algorithm_version();
  std::vector<Memory> initial(cfg.seeds);
  for (int s = 0; s < cfg.seeds; ++s) initial[s] = seeded_memory(cfg, s);

  ExperimentResult res;
  for (auto st : cfg.strategies)
    for (int s = 0; s < cfg.seeds; ++s) res.runs.push_back({st, s, {}, {}, {}});
  std::atomic<std::size_t> next{0};
  std::mutex hook;
  std::exception_ptr failure;
  auto worker = [&]() {
    for (std::size_t i = next++; i < res.runs.size(); i = next++) {
      try {
        res.runs[i] = run_one(cfg, res.runs[i].strategy, res.runs[i].seed, initial[res.runs[i].seed]);
      } catch (...) {
        std::lock_guard lock(hook);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  unsigned n = cfg.threads > 0 ? unsigned(cfg.threads) : std::max(1u, std::thread::hardware_concurrency());
  n = std::min<unsigned>(n, static_cast<unsigned>(res.runs.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return res;
}

inline void write_regret_csv(const ExperimentResult& r, std::ostream& out) {
  out << "strategy,seed,episode,cumulative_regret\n";
  for (const auto& run : r.runs)
    for (std::size_t e = 0; e < run.cumulative.size(); ++e)
      out << to_string(run.strategy) << ',' << run.seed << ',' << e << ',' << run.cumulative[e] << '\n';
}

inline nlohmann::json experiment_summary(const ExperimentConfig& cfg, const ExperimentResult& r) {
  using nlohmann::json;
  json strategies = json::object();
  for (auto s : cfg.strategies) {
    const auto sum = summarize(r.final_regrets(s));
    // Mean curve with per-episode intervals.
    json mean = json::array(), lo = json::array(), hi = json::array();
    for (int e = 0; e < cfg.episodes; ++e) {
      std::vector<double> col;
      for (const auto& run : r.runs)
        if (run.strategy == s) col.push_back(run.cumulative[e]);
      const auto c = summarize(col);
      mean.push_back(c.mean);
      lo.push_back(c.ci_low);
      hi.push_back(c.ci_high);
    }
    strategies[to_string(s)] = {{"final_mean", sum.mean}, {"final_sd", sum.sd},       {"final_ci95", {sum.ci_low, sum.ci_high}},
                                {"curve_mean", mean},     {"curve_ci95_low", lo},     {"curve_ci95_high", hi}};
  }
  json tests = json::array();
  for (std::size_t i = 0; i < cfg.strategies.size(); ++i)
    for (std::size_t j = i + 1; j < cfg.strategies.size(); ++j) {
      const auto w = welch_test(r.final_regrets(cfg.strategies[i]), r.final_regrets(cfg.strategies[j]));
      tests.push_back({{"a", to_string(cfg.strategies[i])}, {"b", to_string(cfg.strategies[j])},
                       {"t", w.t}, {"df", w.df}, {"p", w.p}});
    }
  return {{"domain", cfg.domain.name}, {"quality", to_string(cfg.quality)}, {"seeds", cfg.seeds},
          {"episodes", cfg.episodes},  {"strategies", strategies},          {"welch", tests}};
}

}  // namespace xil
