#pragma once

// Controlled-language moves, their parser and generator, the episode state
// machine, the simulated teacher and the transcript format.

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "xil/errors.hpp"
#include "xil/memory.hpp"
#include "xil/worldsim.hpp"

namespace xil {

// ---------------------------------------------------------------------------
// Moves. Deictic arguments are identifiers ("o", "p1"); the RegionRef each
// one denotes travels beside the move.

struct Probe {
  std::string object;
  bool operator==(const Probe&) const = default;
};
struct Answer {
  std::string type;
  std::string object;
  bool operator==(const Answer&) const = default;
};
struct Correction {
  std::string wrong;
  std::string truth;
  std::string object;
  bool operator==(const Correction&) const = default;
};
struct WhyQ {
  std::string type;
  std::string object;
  bool operator==(const WhyQ&) const = default;
};
struct Explain {
  std::string part;
  std::string region;
  bool operator==(const Explain&) const = default;
};
struct CannotExplain {
  bool operator==(const CannotExplain&) const = default;
};
struct PartNegation {
  std::string part;
  std::string region;
  bool operator==(const PartNegation&) const = default;
};
struct PartAck {
  std::string part;
  std::string region;
  std::string other;  // whole type that shares the part
  bool operator==(const PartAck&) const = default;
};
struct GenericTeach {
  std::vector<std::pair<std::string, std::string>> pairs;  // (whole, part)
  std::vector<std::string> connectors;                     // "and" | "while", one per clause after the first
  bool operator==(const GenericTeach&) const = default;
};

using Move = std::variant<Probe, Answer, Correction, WhyQ, Explain, CannotExplain, PartNegation, PartAck, GenericTeach>;

inline std::string move_name(const Move& m) {
  static const char* names[] = {"Probe",        "Answer",       "Correction", "WhyQ",        "Explain",
                                "CannotExplain", "PartNegation", "PartAck",    "GenericTeach"};
  return names[m.index()];
}

// "while" between clauses about different wholes, "and" otherwise.
inline GenericTeach make_generic_teach(std::vector<std::pair<std::string, std::string>> pairs) {
  GenericTeach g;
  for (std::size_t i = 1; i < pairs.size(); ++i)
    g.connectors.push_back(pairs[i].first == pairs[i - 1].first ? "and" : "while");
  g.pairs = std::move(pairs);
  return g;
}

enum class Speaker { teacher, learner };

inline std::string to_string(Speaker s) { return s == Speaker::teacher ? "teacher" : "learner"; }

inline Speaker speaker_of(const Move& m) {
  return std::holds_alternative<Answer>(m) || std::holds_alternative<Explain>(m) ||
                 std::holds_alternative<CannotExplain>(m)
             ? Speaker::learner
             : Speaker::teacher;
}

using RefMap = std::map<std::string, RegionRef>;

struct Utterance {
  Speaker speaker = Speaker::teacher;
  Move move;
  RefMap refs;
  std::string surface;
};

// Identifiers a move points at.
inline std::vector<std::string> deictics(const Move& m) {
  return std::visit(
      [](const auto& x) -> std::vector<std::string> {
        using T = std::decay_t<decltype(x)>;
        if constexpr (requires { x.object; }) return {x.object};
        else if constexpr (requires { x.region; }) return {x.region};
        else return {};
      },
      m);
}

// ---------------------------------------------------------------------------
// Generation

namespace detail {

inline std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

}  // namespace detail

inline std::string generate(const Move& m, const Lexicon& lex) {
  auto sg = [&](const std::string& id) { return lex.forms(id).singular; };
  auto pl = [&](const std::string& id) { return lex.forms(id).plural; };
  return std::visit(
      [&](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, Probe>) {
          return "What kind of truck is this_" + x.object + "?";
        } else if constexpr (std::is_same_v<T, Answer>) {
          return "This_" + x.object + " is a " + sg(x.type) + ".";
        } else if constexpr (std::is_same_v<T, Correction>) {
          return "This_" + x.object + " is not a " + sg(x.wrong) + ". This_" + x.object + " is a " + sg(x.truth) + ".";
        } else if constexpr (std::is_same_v<T, WhyQ>) {
          return "Why did you think this_" + x.object + " is a " + sg(x.type) + "?";
        } else if constexpr (std::is_same_v<T, Explain>) {
          return "Because I thought this_" + x.region + " is a " + sg(x.part) + ".";
        } else if constexpr (std::is_same_v<T, CannotExplain>) {
          return "I cannot explain.";
        } else if constexpr (std::is_same_v<T, PartNegation>) {
          return "This_" + x.region + " is not a " + sg(x.part) + ".";
        } else if constexpr (std::is_same_v<T, PartAck>) {
          return "It's true that this_" + x.region + " is a " + sg(x.part) + ". But " + pl(x.other) + " have " +
                 pl(x.part) + ", too.";
        } else {
          if (x.pairs.empty()) throw ContractError("generic utterance without clauses");
          if (x.connectors.size() + 1 != x.pairs.size()) throw ContractError("generic connectors misaligned");
          std::string s;
          for (std::size_t i = 0; i < x.pairs.size(); ++i) {
            if (i) s += " " + x.connectors[i - 1] + " ";
            s += pl(x.pairs[i].first) + " have " + pl(x.pairs[i].second);
          }
          return detail::capitalize(s) + ".";
        }
      },
      m);
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

class MoveReader {
 public:
  MoveReader(std::string_view s, const Lexicon& lex) : s_(s), lex_(lex) {
    for (const auto& [id, w] : lex.words()) {
      nouns_.push_back({w.singular, id, false});
      nouns_.push_back({w.plural, id, true});
    }
    // Longest match first so multiword nouns win over their prefixes.
    std::stable_sort(nouns_.begin(), nouns_.end(),
                     [](const Noun& a, const Noun& b) { return a.text.size() > b.text.size(); });
  }

  Move read() {
    if (eat("What kind of truck is ")) {
      Probe p{deictic(false)};
      finish("?");
      return p;
    }
    if (eat("Why did you think ")) {
      WhyQ q;
      q.object = deictic(false);
      expect(" is a ");
      q.type = noun(false);
      finish("?");
      return q;
    }
    if (eat("I cannot explain.")) {
      finish("");
      return CannotExplain{};
    }
    if (eat("Because I thought ")) {
      Explain e;
      e.region = deictic(false);
      expect(" is a ");
      e.part = noun(false);
      finish(".");
      return e;
    }
    if (eat("It's true that ")) {
      PartAck a;
      a.region = deictic(false);
      expect(" is a ");
      a.part = noun(false);
      expect(". But ");
      a.other = noun(true);
      expect(" have ");
      const std::size_t at_part = i_;
      if (noun(true) != a.part) fail("acknowledged part differs from the shared part", at_part);
      finish(", too.");
      return a;
    }
    if (at("This_")) {
      const std::string x = deictic(true);
      if (eat(" is not a ")) {
        const std::string n = noun(false);
        expect(".");
        if (i_ == s_.size()) return PartNegation{n, x};
        expect(" ");
        const std::size_t at_second = i_;
        if (deictic(true) != x) fail("correction refers to two different objects", at_second);
        expect(" is a ");
        const std::string t = noun(false);
        finish(".");
        return Correction{n, t, x};
      }
      expect(" is a ");
      Answer a{noun(false), x};
      finish(".");
      return a;
    }
    return generic();
  }

 private:
  struct Noun {
    std::string text;
    std::string id;
    bool plural;
  };

  [[noreturn]] void fail(const std::string& what, std::optional<std::size_t> pos = std::nullopt) const {
    throw ParseError(what, pos.value_or(i_));
  }
  bool at(std::string_view lit) const { return s_.substr(i_, lit.size()) == lit; }
  bool eat(std::string_view lit) {
    if (!at(lit)) return false;
    i_ += lit.size();
    return true;
  }
  void expect(std::string_view lit) {
    if (!eat(lit)) fail("expected \"" + std::string(lit) + "\"");
  }
  void finish(std::string_view lit) {
    expect(lit);
    if (i_ != s_.size()) fail("unexpected trailing text");
  }

  std::string deictic(bool sentence_initial) {
    if (!eat(sentence_initial ? "This_" : "this_")) fail(sentence_initial ? "expected \"This_\"" : "expected \"this_\"");
    const std::size_t start = i_;
    while (i_ < s_.size() && std::isalnum(static_cast<unsigned char>(s_[i_]))) ++i_;
    if (i_ == start) fail("expected a reference tag");
    return std::string(s_.substr(start, i_ - start));
  }

  std::string noun(bool plural, bool capitalized = false) {
    for (const auto& n : nouns_) {
      if (n.plural != plural) continue;
      const std::string text = capitalized ? capitalize(n.text) : n.text;
      if (!at(text)) continue;
      // Must end on a word boundary.
      const std::size_t end = i_ + text.size();
      if (end < s_.size() && std::isalnum(static_cast<unsigned char>(s_[end]))) continue;
      i_ = end;
      return n.id;
    }
    fail(plural ? "expected a known plural noun" : "expected a known singular noun");
  }

  Move generic() {
    std::vector<std::pair<std::string, std::string>> pairs;
    std::vector<std::string> connectors;
    bool first = true;
    while (true) {
      const std::string whole = noun(true, first);
      first = false;
      expect(" have ");
      pairs.emplace_back(whole, noun(true));
      if (eat(" and ")) connectors.push_back("and");
      else if (eat(" while ")) connectors.push_back("while");
      else break;
    }
    finish(".");
    return GenericTeach{std::move(pairs), std::move(connectors)};
  }

  std::string_view s_;
  const Lexicon& lex_;
  std::vector<Noun> nouns_;
  std::size_t i_ = 0;
};

}  // namespace detail

// Parses one utterance. `lex` is the vocabulary of the dialogue (the domain's
// words); concepts absent from the learner's own lexicon are registered by
// the learner when it absorbs the move.
inline Move parse(std::string_view text, const Lexicon& lex) { return detail::MoveReader(text, lex).read(); }

// Parses and binds each deictic tag to its payload.
inline Utterance parse_utterance(std::string_view text, const RefMap& payloads, const Lexicon& lex) {
  Utterance u;
  u.move = parse(text, lex);
  u.speaker = speaker_of(u.move);
  u.surface = std::string(text);
  for (const auto& id : deictics(u.move)) {
    auto it = payloads.find(id);
    if (it == payloads.end()) throw ParseError("no region payload for this_" + id, text.find("_" + id) + 1);
    u.refs[id] = it->second;
  }
  return u;
}

inline Utterance make_utterance(const Move& m, RefMap refs, const Lexicon& lex) {
  Utterance u{speaker_of(m), m, {}, generate(m, lex)};
  for (const auto& id : deictics(m)) {
    auto it = refs.find(id);
    if (it == refs.end()) throw ContractError(move_name(m) + " lacks a payload for " + id);
    u.refs[id] = it->second;
  }
  return u;
}

inline Lexicon domain_lexicon(const DomainConfig& c) {
  Lexicon lex;
  for (const auto& w : c.words) lex.register_word(w);
  return lex;
}

// ---------------------------------------------------------------------------
// Episode protocol

enum class Strategy { VisOnly, VisGenr, VisGenrExpl };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::VisOnly: return "VisOnly";
    case Strategy::VisGenr: return "VisGenr";
    default: return "VisGenrExpl";
  }
}

inline Strategy strategy_from_string(std::string_view s) {
  if (s == "VisOnly" || s == "vis") return Strategy::VisOnly;
  if (s == "VisGenr" || s == "genr") return Strategy::VisGenr;
  if (s == "VisGenrExpl" || s == "expl") return Strategy::VisGenrExpl;
  throw ConfigurationError("unknown strategy '" + std::string(s) + "'");
}

enum class Phase { AwaitProbe, AwaitAnswer, AnswerJudged, AwaitWhy, AwaitExplanation, ExplanationJudged, Terminated };

inline std::string to_string(Phase p) {
  static const char* names[] = {"AwaitProbe",       "AwaitAnswer",       "AnswerJudged", "AwaitWhy",
                                "AwaitExplanation", "ExplanationJudged", "Terminated"};
  return names[static_cast<int>(p)];
}

struct DialogueState {
  Phase phase = Phase::AwaitProbe;
  Strategy strategy = Strategy::VisGenrExpl;
  std::string object;
  std::optional<std::string> answered;
  std::optional<std::string> truth;
  std::optional<std::string> cited_part;
  std::optional<std::string> cited_region;
  bool explained = false;      // last learner explanation cited a part
  bool acknowledged = false;   // teacher confirmed the cited part
};

// Transition function of the episode flowchart.
inline DialogueState advance(DialogueState s, const Move& m) {
  auto bad = [&]() -> ConformanceError {
    return ConformanceError(move_name(m) + " is not allowed in phase " + to_string(s.phase));
  };
  switch (s.phase) {
    case Phase::AwaitProbe:
      if (auto* p = std::get_if<Probe>(&m)) {
        s.object = p->object;
        s.phase = Phase::AwaitAnswer;
        return s;
      }
      throw bad();
    case Phase::AwaitAnswer:
      if (auto* a = std::get_if<Answer>(&m)) {
        if (a->object != s.object) throw ConformanceError("answer about this_" + a->object + ", probe was this_" + s.object);
        s.answered = a->type;
        s.phase = Phase::AnswerJudged;
        return s;
      }
      throw bad();
    case Phase::AnswerJudged:
      if (auto* c = std::get_if<Correction>(&m)) {
        if (c->wrong != s.answered || c->object != s.object) throw ConformanceError("correction does not match the answer");
        if (c->truth == c->wrong) throw ConformanceError("correction repeats the answered type");
        s.truth = c->truth;
        s.phase = s.strategy == Strategy::VisOnly ? Phase::Terminated : Phase::AwaitWhy;
        return s;
      }
      throw bad();
    case Phase::AwaitWhy:
      if (auto* q = std::get_if<WhyQ>(&m)) {
        if (q->type != s.answered || q->object != s.object) throw ConformanceError("why-question about another claim");
        s.phase = Phase::AwaitExplanation;
        return s;
      }
      throw bad();
    case Phase::AwaitExplanation:
      if (std::holds_alternative<CannotExplain>(m)) {
        s.phase = Phase::ExplanationJudged;
        return s;
      }
      if (auto* e = std::get_if<Explain>(&m)) {
        if (s.strategy != Strategy::VisGenrExpl) throw ConformanceError("Explain from a learner that cannot explain");
        s.cited_part = e->part;
        s.cited_region = e->region;
        s.explained = true;
        s.phase = Phase::ExplanationJudged;
        return s;
      }
      throw bad();
    case Phase::ExplanationJudged:
      if (auto* n = std::get_if<PartNegation>(&m)) {
        if (!s.explained || s.acknowledged || n->part != s.cited_part || n->region != s.cited_region) throw bad();
        s.phase = Phase::Terminated;
        return s;
      }
      if (auto* a = std::get_if<PartAck>(&m)) {
        if (!s.explained || s.acknowledged || a->part != s.cited_part || a->region != s.cited_region) throw bad();
        if (a->other != s.truth) throw ConformanceError("acknowledgement names a type other than the true one");
        s.acknowledged = true;
        return s;
      }
      if (std::holds_alternative<GenericTeach>(m)) {
        if (s.explained && !s.acknowledged) throw bad();
        s.phase = Phase::Terminated;
        return s;
      }
      throw bad();
    case Phase::Terminated:
      throw bad();
  }
  throw bad();
}

// Ends the episode when no further move is due: a correct answer, or nothing
// left to teach.
inline DialogueState finish(DialogueState s) {
  const bool ok = s.phase == Phase::Terminated || s.phase == Phase::AnswerJudged ||
                  (s.phase == Phase::ExplanationJudged && (!s.explained || s.acknowledged));
  if (!ok) throw ConformanceError("episode cannot end in phase " + to_string(s.phase));
  s.phase = Phase::Terminated;
  return s;
}

// ---------------------------------------------------------------------------
// Simulated teacher

// Parts of taught dimensions that tell `a` from `b`: `a`'s clauses first.
inline std::vector<std::pair<std::string, std::string>> distinguishing_clauses(const DomainConfig& c,
                                                                               const std::string& a,
                                                                               const std::string& b) {
  std::vector<std::pair<std::string, std::string>> out;
  auto has_word = [&](const std::string& id) {
    return std::any_of(c.words.begin(), c.words.end(), [&](const WordForms& w) { return w.concept_id == id; });
  };
  for (const auto& who : {a, b}) {
    const auto& other = who == a ? b : a;
    for (const auto& dim : c.dimensions) {
      if (!dim.taught) continue;
      const auto& mine = c.whole(who).parts;
      const auto& theirs = c.whole(other).parts;
      auto m = mine.find(dim.name);
      if (m == mine.end() || !has_word(m->second)) continue;
      auto t = theirs.find(dim.name);
      if (t != theirs.end() && t->second == m->second) continue;
      out.emplace_back(who, m->second);
    }
  }
  return out;
}

inline Probe teacher_probe(const TrueScene& scene) { return Probe{scene.truck().id}; }

// Replies to a learner move. `refs` carries the payloads of the learner's
// deictic tags; `state` is the state after that move.
inline std::vector<std::pair<Move, RefMap>> teacher_policy(const DialogueState& state, const Utterance& incoming,
                                                           const TrueScene& scene, const DomainConfig& domain) {
  std::vector<std::pair<Move, RefMap>> out;
  const RegionRef whole_ref{scene.truck().id, 1.0, false};
  const std::string truth = scene.truck().whole;
  if (auto* a = std::get_if<Answer>(&incoming.move)) {
    if (a->type == truth) return out;
    out.push_back({Correction{a->type, truth, a->object}, {{a->object, whole_ref}}});
    if (state.strategy != Strategy::VisOnly) out.push_back({WhyQ{a->type, a->object}, {{a->object, whole_ref}}});
    return out;
  }
  if (!state.answered || !state.truth) throw ConformanceError("teacher asked to judge an explanation out of turn");
  if (std::holds_alternative<CannotExplain>(incoming.move)) {
    auto clauses = distinguishing_clauses(domain, *state.answered, *state.truth);
    if (!clauses.empty()) out.push_back({make_generic_teach(std::move(clauses)), {}});
    return out;
  }
  if (auto* e = std::get_if<Explain>(&incoming.move)) {
    const auto it = incoming.refs.find(e->region);
    if (it == incoming.refs.end()) throw ConformanceError("explanation without a region payload");
    const RefMap refs{{e->region, it->second}};
    const auto gt = ground_truth(scene, it->second);
    if (!gt.label || *gt.label != e->part) {
      out.push_back({PartNegation{e->part, e->region}, refs});
      return out;
    }
    const bool shared = domain.true_parts(*state.truth).contains(e->part) &&
                        domain.true_parts(*state.answered).contains(e->part);
    if (!shared) throw ConformanceError("explanation cites a " + e->part + " that only one type has");
    out.push_back({PartAck{e->part, e->region, *state.truth}, refs});
    auto clauses = distinguishing_clauses(domain, *state.answered, *state.truth);
    if (!clauses.empty()) out.push_back({make_generic_teach(std::move(clauses)), {}});
    return out;
  }
  throw ConformanceError("teacher has no reply to " + move_name(incoming.move));
}

// ---------------------------------------------------------------------------
// Transcripts

inline nlohmann::json move_to_json(const Move& m) {
  using nlohmann::json;
  json j = {{"kind", move_name(m)}};
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, Probe>) {
          j["object"] = x.object;
        } else if constexpr (std::is_same_v<T, Answer> || std::is_same_v<T, WhyQ>) {
          j["type"] = x.type;
          j["object"] = x.object;
        } else if constexpr (std::is_same_v<T, Correction>) {
          j["wrong"] = x.wrong;
          j["truth"] = x.truth;
          j["object"] = x.object;
        } else if constexpr (std::is_same_v<T, Explain> || std::is_same_v<T, PartNegation>) {
          j["part"] = x.part;
          j["region"] = x.region;
        } else if constexpr (std::is_same_v<T, PartAck>) {
          j["part"] = x.part;
          j["region"] = x.region;
          j["other"] = x.other;
        } else if constexpr (std::is_same_v<T, GenericTeach>) {
          json pairs = json::array();
          for (const auto& [w, p] : x.pairs) pairs.push_back({{"whole", w}, {"part", p}});
          j["pairs"] = pairs;
          j["connectors"] = x.connectors;
        }
      },
      m);
  return j;
}

inline nlohmann::json refs_to_json(const RefMap& refs) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [id, r] : refs) j[id] = {{"region_id", r.region_id}, {"fidelity", r.fidelity}, {"proposed", r.proposed}};
  return j;
}

inline RefMap refs_from_json(const nlohmann::json& j) {
  RefMap out;
  for (const auto& [id, r] : j.items())
    out[id] = RegionRef{r.at("region_id"), r.at("fidelity"), r.value("proposed", false)};
  return out;
}

struct TranscriptRecord {
  int episode = 0;
  int turn = 0;
  Utterance utterance;
  std::string strategy;
  std::map<std::string, std::string> flags;  // e.g. bp_converged=false
};

inline nlohmann::json record_to_json(const TranscriptRecord& r) {
  nlohmann::json j = {{"episode", r.episode},
                      {"turn", r.turn},
                      {"speaker", to_string(r.utterance.speaker)},
                      {"surface", r.utterance.surface},
                      {"move", move_to_json(r.utterance.move)},
                      {"refs", refs_to_json(r.utterance.refs)}};
  if (!r.strategy.empty()) j["strategy"] = r.strategy;
  if (!r.flags.empty()) j["flags"] = r.flags;
  return j;
}

struct ReplayReport {
  int episodes = 0;
  int records = 0;
  std::vector<std::string> errors;  // one per rejected episode
  bool accepted() const { return errors.empty(); }
};

// Checks a transcript against the grammar and the flowchart: every surface
// must parse to the recorded move with the recorded speaker, generation must
// reproduce the surface, and each episode must walk legal transitions to a
// legal end.
inline ReplayReport replay_transcript(const std::vector<nlohmann::json>& lines, const Lexicon& lex,
                                      std::optional<Strategy> strategy = std::nullopt) {
  ReplayReport rep;
  std::map<int, std::vector<const nlohmann::json*>> episodes;
  std::vector<int> order;
  for (const auto& l : lines) {
    const int e = l.at("episode");
    if (!episodes.contains(e)) order.push_back(e);
    episodes[e].push_back(&l);
    ++rep.records;
  }
  for (int e : order) {
    ++rep.episodes;
    try {
      DialogueState s;
      const auto& first = *episodes[e].front();
      if (strategy) s.strategy = *strategy;
      else if (first.contains("strategy")) s.strategy = strategy_from_string(first["strategy"].get<std::string>());
      else throw ConformanceError("transcript names no strategy");
      int turn = 0;
      for (const auto* l : episodes[e]) {
        if (l->at("turn").get<int>() != turn++) throw ConformanceError("turns out of sequence");
        const std::string surface = l->at("surface");
        const auto u = parse_utterance(surface, refs_from_json(l->at("refs")), lex);
        if (move_to_json(u.move) != l->at("move")) throw ConformanceError("surface does not parse to the recorded move");
        if (to_string(u.speaker) != l->at("speaker").get<std::string>()) throw ConformanceError("wrong speaker");
        if (generate(u.move, lex) != surface) throw ConformanceError("generation does not reproduce the surface");
        s = advance(s, u.move);
      }
      finish(s);
    } catch (const std::exception& ex) {
      rep.errors.push_back("episode " + std::to_string(e) + ": " + ex.what());
    }
  }
  return rep;
}

}  // namespace xil
