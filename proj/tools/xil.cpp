// xil: experiments, calibration, inference, transcript replay and the
// human-teacher front ends.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "xil/harness.hpp"
#include "xil/reasoner.hpp"
#include "xil/session.hpp"

namespace fs = std::filesystem;
using namespace xil;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, sep);)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// --- run-experiment -------------------------------------------------------

struct ExperimentArgs {
  std::string domain = "single_4way";
  std::string strategies = "VisOnly,VisGenr,VisGenrExpl";
  int seeds = 30;
  int episodes = 120;
  std::string quality = "LQ";
  std::string out;
  std::uint64_t base_seed = 0;
  int threads = 0;
  bool transcripts = false;
};

int run_experiment_cmd(const ExperimentArgs& a) {
  ExperimentConfig cfg;
  cfg.domain = load_domain(a.domain);
  cfg.strategies.clear();
  for (const auto& s : split(a.strategies, ',')) cfg.strategies.push_back(strategy_from_string(s));
  if (cfg.strategies.empty()) throw ConfigurationError("no strategies given");
  cfg.seeds = a.seeds;
  cfg.episodes = a.episodes;
  cfg.quality = quality_from_string(a.quality);
  cfg.base_seed = a.base_seed;
  cfg.threads = a.threads;
  cfg.keep_transcripts = a.transcripts;

  const auto t0 = std::chrono::steady_clock::now();
  const auto res = run_experiment(cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  fs::create_directories(a.out);
  {
    std::ofstream csv(fs::path(a.out) / "regret.csv");
    write_regret_csv(res, csv);
  }
  const auto summary = experiment_summary(cfg, res);
  {
    std::ofstream js(fs::path(a.out) / "summary.json");
    js << summary.dump(2) << '\n';
  }
  if (a.transcripts) {
    std::ofstream tr(fs::path(a.out) / "transcripts.jsonl");
    for (const auto& run : res.runs)
      for (const auto& r : run.transcript) {
        auto j = record_to_json(r);
        j["seed"] = run.seed;
        tr << j.dump() << '\n';
      }
  }

  std::cout << cfg.domain.name << ' ' << to_string(cfg.quality) << ", " << cfg.seeds << " seeds x " << cfg.episodes
            << " episodes\n";
  std::cout << std::fixed << std::setprecision(2);
  for (auto s : cfg.strategies) {
    const auto& j = summary["strategies"][to_string(s)];
    std::cout << "  " << std::left << std::setw(12) << to_string(s) << " final regret " << j["final_mean"].get<double>()
              << "  95% CI [" << j["final_ci95"][0].get<double>() << ", " << j["final_ci95"][1].get<double>() << "]\n";
  }
  std::cout << std::setprecision(4);
  for (const auto& w : summary["welch"])
    std::cout << "  Welch " << w["a"].get<std::string>() << " vs " << w["b"].get<std::string>() << ": t="
              << w["t"].get<double>() << " p=" << std::scientific << w["p"].get<double>() << std::fixed << '\n';
  std::cout << std::setprecision(1) << "  wrote " << a.out << " (" << secs << " s)\n";
  return 0;
}

// --- calibrate ------------------------------------------------------------

int calibrate_cmd(const std::string& quality, const std::string& domains, int seeds, const std::string& grid) {
  std::vector<DomainConfig> ds;
  for (const auto& d : split(domains, ',')) ds.push_back(load_domain(d));
  std::vector<Quality> qs;
  if (quality == "all") qs = {Quality::LQ, Quality::MQ, Quality::HQ};
  else qs = {quality_from_string(quality)};

  std::cout << std::fixed << std::setprecision(2);
  if (!grid.empty()) {
    std::vector<double> g;
    for (const auto& s : split(grid, ',')) g.push_back(std::stod(s));
    const auto best = search_sigma(ds, g, seeds);
    std::cout << "best sigma " << best.sigma << (best.feasible ? "" : " (infeasible)") << '\n';
    for (const auto& r : best.reports)
      std::cout << "  " << std::left << std::setw(12) << r.domain << ' ' << to_string(r.quality) << "  accuracy "
                << r.accuracy << "  target " << r.target << (r.within() ? "" : "  OUTSIDE +-5") << '\n';
    if (!best.feasible) throw ConfigurationError("no sigma in the grid puts every regime within +-5 points");
    return 0;
  }
  bool all_within = true;
  for (const auto& d : ds)
    for (auto q : qs) {
      const auto r = measure_calibration(q, d, seeds);
      all_within = all_within && r.within();
      std::cout << std::left << std::setw(12) << d.name << ' ' << to_string(q) << "  " << exposure_episodes(q)
                << " exposures  accuracy " << r.accuracy << "  target " << r.target
                << (r.within() ? "  ok" : "  OUTSIDE +-5") << '\n';
    }
  return all_within ? 0 : 1;
}

// --- infer ----------------------------------------------------------------

int infer_cmd(const std::string& path, bool exact, bool show_graph) {
  const auto program = parse_program(read_file(path));
  const auto g = build_factor_graph(program);
  const auto bp = run_bp(g);
  nlohmann::json out = {{"variables", g.variables.size()},
                        {"factors", g.factors.size()},
                        {"bp", {{"converged", bp.converged}, {"iterations", bp.iterations}, {"marginals", bp.p}}}};
  if (exact) {
    try {
      out["exact"] = exact_marginals(g).p;
    } catch (const RefusalError& e) {
      out["exact"] = {{"refused", e.what()}};
    }
  }
  if (show_graph) out["program"] = to_string(program);
  std::cout << out.dump(2) << '\n';
  return 0;
}

// --- replay ---------------------------------------------------------------

int replay_cmd(const std::string& path, const std::string& domain, const std::string& strategy) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot read '" + path + "'");
  // Transcripts of a whole experiment hold several runs; each (seed,
  // strategy) pair is replayed on its own.
  std::map<std::pair<long, std::string>, std::vector<nlohmann::json>> runs;
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    runs[{j.value("seed", -1L), j.value("strategy", std::string())}].push_back(std::move(j));
    ++n;
  }
  const auto lex = domain_lexicon(load_domain(domain));
  std::optional<Strategy> forced;
  if (!strategy.empty()) forced = strategy_from_string(strategy);
  int episodes = 0, rejected = 0;
  for (const auto& [key, lines] : runs) {
    const auto rep = replay_transcript(lines, lex, forced);
    episodes += rep.episodes;
    rejected += static_cast<int>(rep.errors.size());
    for (const auto& e : rep.errors) std::cerr << "seed " << key.first << ' ' << key.second << ": " << e << '\n';
  }
  std::cout << (rejected ? "REJECTED " : "accepted ") << episodes - rejected << '/' << episodes << " episodes, " << n
            << " records\n";
  return rejected ? 1 : 0;
}

// --- repl -----------------------------------------------------------------

void print_view(const nlohmann::json& v) {
  if (!v.value("open", false)) {
    std::cout << "(episode " << v["episode"] << " closed; :new for the next one)\n";
    return;
  }
  const auto& o = v["scene"]["objects"][0];
  std::cout << "\n-- episode " << v["episode"].get<int>() << "  truck o is a " << o["whole"].get<std::string>() << '\n';
  for (const auto& r : o["regions"])
    std::cout << "   " << r["id"].get<std::string>() << "  " << r["role"].get<std::string>() << ' '
              << r["label"].get<std::string>() << '\n';
  for (const auto& r : v["scene"]["clutter"]) std::cout << "   " << r["id"].get<std::string>() << "  background\n";
  for (const auto& h : v["history"]) {
    std::cout << (h["speaker"] == "teacher" ? "  T: " : "  L: ") << h["surface"].get<std::string>();
    for (const auto& [tag, ref] : h["refs"].items())
      if (tag != "o") std::cout << "   [" << tag << " -> " << ref["region_id"].get<std::string>() << ']';
    std::cout << '\n';
  }
  std::cout << "  phase " << v["phase"].get<std::string>();
  if (!v["legal"].empty()) std::cout << ", expecting " << v["legal"].dump();
  if (v["can_end"].get<bool>()) std::cout << ", may end (:new)";
  std::cout << '\n';
}

int repl_cmd(const std::string& domain, const std::string& strategy, const std::string& quality, int seed,
             std::uint64_t base_seed) {
  SessionManager mgr;
  auto r = mgr.handle({{"op", "create"}, {"domain", domain}, {"strategy", strategy}, {"quality", quality},
                       {"seed", seed}, {"base_seed", base_seed}});
  if (!r["ok"]) throw ConfigurationError(r["error"]["message"].get<std::string>());
  const std::string id = r["view"]["session"];
  std::cout << "You are the teacher. Type utterances; a new tag binds with  text @tag=region  (e.g.\n"
               "\"This_p1 is not a dumper.\"). Commands: :new  :end  :memory  :transcript  :quit\n";
  print_view(r["view"]);
  for (std::string line; std::cout << "> " << std::flush, std::getline(std::cin, line);) {
    if (line.empty()) continue;
    nlohmann::json req = {{"session", id}};
    if (line == ":quit") break;
    if (line == ":new") req["op"] = "new_episode";
    else if (line == ":end") req["op"] = "end_episode";
    else if (line == ":memory") req["op"] = "memory";
    else if (line == ":transcript") req["op"] = "transcript";
    else {
      req["op"] = "submit";
      const auto at = line.find(" @");
      std::string text = line.substr(0, at);
      if (at != std::string::npos) {
        nlohmann::json refs = nlohmann::json::object();
        for (const auto& b : split(line.substr(at + 2), ' ')) {
          const auto eq = b.find('=');
          if (eq == std::string::npos) continue;
          refs[b.substr(0, eq)] = {{"region_id", b.substr(eq + 1)}, {"fidelity", 1.0}, {"proposed", false}};
        }
        req["refs"] = refs;
      }
      req["text"] = text;
    }
    const auto rep = mgr.handle(req);
    if (!rep["ok"]) {
      std::cout << "  ! " << rep["error"]["kind"].get<std::string>() << ": " << rep["error"]["message"].get<std::string>()
                << '\n';
      continue;
    }
    if (rep.contains("view")) print_view(rep["view"]);
    else if (rep.contains("summary")) std::cout << rep["summary"].dump(2) << '\n';
    else if (rep.contains("transcript"))
      for (const auto& t : rep["transcript"]) std::cout << t.dump() << '\n';
  }
  return 0;
}

// --- serve ----------------------------------------------------------------

int serve_cmd(const std::string& bind) {
  SessionManager mgr;
  boost::asio::io_context io;
  LineServer server(io, bind, mgr);
  boost::asio::signal_set signals(io, SIGINT, SIGTERM);
  signals.async_wait([&](const boost::system::error_code&, int) {
    server.close();
    io.stop();
  });
  std::cerr << "listening on port " << server.port() << '\n';
  io.run();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interactive concept learning with explanations: experiments and tools"};
  app.require_subcommand(1);

  ExperimentArgs ex;
  auto* run = app.add_subcommand("run-experiment", "Regret curves for several strategies over shared seeds");
  run->add_option("--domain", ex.domain, "single_4way, double_5way or a domain JSON file")->capture_default_str();
  run->add_option("--strategies", ex.strategies, "Comma-separated: VisOnly, VisGenr, VisGenrExpl")->capture_default_str();
  run->add_option("--seeds", ex.seeds)->capture_default_str()->check(CLI::PositiveNumber);
  run->add_option("--episodes", ex.episodes)->capture_default_str()->check(CLI::PositiveNumber);
  run->add_option("--quality", ex.quality, "Initial part model: LQ, MQ or HQ")->capture_default_str();
  run->add_option("--out", ex.out, "Output directory")->required();
  run->add_option("--base-seed", ex.base_seed)->capture_default_str();
  run->add_option("--threads", ex.threads, "0 uses every core")->capture_default_str();
  run->add_flag("--transcripts", ex.transcripts, "Also write transcripts.jsonl");

  std::string cal_quality = "all", cal_domains = "single_4way,double_5way", cal_grid;
  int cal_seeds = 10;
  auto* cal = app.add_subcommand("calibrate", "Held-out part accuracy after 20/100/200 exposures");
  cal->add_option("--quality", cal_quality, "LQ, MQ, HQ or all")->capture_default_str();
  cal->add_option("--domain", cal_domains, "Comma-separated domains")->capture_default_str();
  cal->add_option("--seeds", cal_seeds)->capture_default_str()->check(CLI::PositiveNumber);
  cal->add_option("--search-sigma", cal_grid, "Comma-separated sigma grid; picks the best worst-case value");

  std::string program_file;
  bool exact = false, show_program = false;
  auto* inf = app.add_subcommand("infer", "Marginals of a weighted program");
  inf->add_option("--program-file", program_file)->required()->check(CLI::ExistingFile);
  inf->add_flag("--exact", exact, "Also enumerate exactly");
  inf->add_flag("--show-program", show_program, "Echo the parsed program");

  std::string transcript, replay_domain = "double_5way", replay_strategy;
  auto* rep = app.add_subcommand("replay", "Check a JSONL transcript against the grammar and the flowchart");
  rep->add_option("--transcript", transcript)->required()->check(CLI::ExistingFile);
  rep->add_option("--domain", replay_domain, "Vocabulary to parse with")->capture_default_str();
  rep->add_option("--strategy", replay_strategy, "Override the strategy recorded in the transcript");

  std::string s_domain = "single_4way", s_strategy = "VisGenrExpl", s_quality = "LQ";
  int s_seed = 0;
  std::uint64_t s_base = 0;
  auto* repl = app.add_subcommand("repl", "Play the teacher in the terminal");
  repl->add_option("--domain", s_domain)->capture_default_str();
  repl->add_option("--strategy", s_strategy)->capture_default_str();
  repl->add_option("--quality", s_quality)->capture_default_str();
  repl->add_option("--seed", s_seed)->capture_default_str();
  repl->add_option("--base-seed", s_base)->capture_default_str();

  std::string bind = "127.0.0.1:7878";
  auto* serve = app.add_subcommand("serve", "Session service: one JSON request per line, one reply per line");
  serve->add_option("--bind", bind, "host:port")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return run_experiment_cmd(ex);
    if (*cal) return calibrate_cmd(cal_quality, cal_domains, cal_seeds, cal_grid);
    if (*inf) return infer_cmd(program_file, exact, show_program);
    if (*rep) return replay_cmd(transcript, replay_domain, replay_strategy);
    if (*repl) return repl_cmd(s_domain, s_strategy, s_quality, s_seed, s_base);
    if (*serve) return serve_cmd(bind);
  } catch (const ConfigurationError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
