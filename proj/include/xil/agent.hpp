#pragma once

// The learner: inference, explanation, and instance- and rule-level learning
// wired to perception, memory, the reasoner and the dialogue layer.

#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "xil/dialogue.hpp"
#include "xil/errors.hpp"
#include "xil/explain.hpp"
#include "xil/memory.hpp"
#include "xil/perception.hpp"
#include "xil/reasoner.hpp"
#include "xil/rng.hpp"
#include "xil/worldsim.hpp"

namespace xil {

struct AgentConfig {
  Strategy strategy = Strategy::VisGenrExpl;
  double confidence = 0.75;  // below this a correct answer still counts as unsure
  double u_d = kDefaultUd;
  double u_a = kDefaultUa;
  BpSettings bp;
  PerceptionParams perception;
  ExplainOptions explain;
};

// Everything inference produced for the current probe, kept for a later
// why-question and for learning.
struct InferenceTrace {
  TrueScene scene;
  RegionRef target;
  SceneGraph graph;
  WeightedProgram program;
  FactorGraph factors;
  Marginals marginals;
  ProbeAnswer answer;
  std::vector<std::string> candidates;
};

// Fresh learner memory: the vocabulary with empty exemplar sets plus `have`.
inline Memory initial_memory(const DomainConfig& domain) {
  Memory m;
  m.lexicon.register_concept(Concept("have", 2, ConceptKind::relation));
  for (const auto& w : domain.words) register_neologism(m, w, {-1, "vocabulary"});
  m.audit.clear();
  return m;
}

class Agent {
 public:
  Agent(AgentConfig config, Memory memory, Lexicon vocabulary)
      : config_(std::move(config)), memory_(std::move(memory)), vocabulary_(std::move(vocabulary)) {}

  const AgentConfig& config() const { return config_; }
  const Memory& memory() const { return memory_; }
  Memory& memory() { return memory_; }
  const std::optional<InferenceTrace>& trace() const { return trace_; }

  // Probe -> Answer.
  Utterance handle_probe(const Utterance& probe, const TrueScene& scene, Rng& rng, int episode) {
    const auto* p = std::get_if<Probe>(&probe.move);
    if (p == nullptr) throw ContractError("handle_probe needs a Probe");
    auto it = probe.refs.find(p->object);
    if (it == probe.refs.end()) throw ContractError("probe without a region payload");
    episode_ = episode;
    corrected_ = false;

    InferenceTrace t;
    t.scene = scene;
    t.target = it->second;
    static const KnowledgeBase kNoRules;
    const KnowledgeBase& kb = config_.strategy == Strategy::VisOnly ? kNoRules : memory_.kb;
    t.graph = build_scene_graph(scene, t.target, memory_, kb, config_.perception, rng);
    t.program = compile_visual(t.graph);
    if (config_.strategy != Strategy::VisOnly) t.program.append(compile_kb(kb, t.graph, config_.u_d, config_.u_a));
    t.factors = build_factor_graph(t.program);
    t.marginals = run_bp(t.factors, config_.bp);
    for (const auto& c : memory_.lexicon.concepts_of_kind(ConceptKind::whole_type)) t.candidates.push_back(c.id);
    if (t.candidates.empty()) throw ContractError("learner knows no whole types");
    t.answer = answer_probe(t.marginals, t.candidates, p->object);
    trace_ = std::move(t);
    return make_utterance(Answer{trace_->answer.answer, p->object}, {{p->object, trace_->target}}, vocabulary_);
  }

  // WhyQ -> Explain | CannotExplain.
  Utterance handle_why(const Utterance& why) {
    const auto* q = std::get_if<WhyQ>(&why.move);
    if (q == nullptr) throw ContractError("handle_why needs a WhyQ");
    if (!trace_ || trace_->answer.answer != q->type) throw ConformanceError("why-question about an unanswered claim");
    if (config_.strategy == Strategy::VisOnly) throw ConformanceError("VisOnly learners are never asked why");
    const Utterance none = make_utterance(CannotExplain{}, {}, vocabulary_);
    if (config_.strategy == Strategy::VisGenr || memory_.kb.empty()) return none;
    std::set<std::string> parts;
    for (const auto& c : memory_.lexicon.concepts_of_kind(ConceptKind::part_type)) parts.insert(c.id);
    const auto reason = sufficient_reason(trace_->factors, {q->type, q->object, trace_->candidates}, parts, config_.explain);
    last_reason_ = reason;
    if (!reason) return none;
    const auto cited = cite_part(trace_->factors, *reason, memory_.lexicon, trace_->graph, parts_of(memory_.kb, q->type));
    if (!cited) return none;
    return make_utterance(Explain{cited->part, cited->vertex}, {{cited->vertex, cited->ref}}, vocabulary_);
  }

  const std::optional<SufficientReason>& last_reason() const { return last_reason_; }

  // Absorbs one teacher move.
  void learn(const Utterance& u, int turn) {
    const Provenance why{episode_, "teacher:" + move_name(u.move) + "@" + std::to_string(turn)};
    for (const auto& id : concepts_in(u.move))
      if (!memory_.lexicon.knows_concept(id)) register_neologism(memory_, vocabulary_.forms(id), why);
    if (auto* c = std::get_if<Correction>(&u.move)) {
      corrected_ = true;
      const Vector v = target_features();
      add_exemplar(memory_, c->wrong, v, Label::negative, why);
      add_exemplar(memory_, c->truth, v, Label::positive, why);
    } else if (auto* n = std::get_if<PartNegation>(&u.move)) {
      add_exemplar(memory_, n->part, vertex_features(n->region), Label::negative, why);
    } else if (auto* g = std::get_if<GenericTeach>(&u.move)) {
      for (const auto& [whole, part] : g->pairs)
        add_rule(memory_, make_generic(memory_.lexicon.concept_by_id(whole), memory_.lexicon.concept_by_id(part)), why);
    }
  }

  // Called once the episode is over. A correct but unsure answer adds the
  // probe to its type's positives, and the search result for each of that
  // type's parts to the part's positives, right or wrong.
  void end_episode() {
    if (!trace_ || corrected_) return;
    if (trace_->answer.probability >= config_.confidence) return;
    const Provenance why{episode_, "unconfident-correct"};
    const std::string& type = trace_->answer.answer;
    add_exemplar(memory_, type, target_features(), Label::positive, why);
    if (config_.strategy == Strategy::VisOnly) return;
    for (const auto& part : parts_of(memory_.kb, type))
      for (const auto& v : trace_->graph.vertices) {
        if (v.id == trace_->graph.vertices.front().id) continue;
        const bool searched = std::find(v.searched_for.begin(), v.searched_for.end(), part) != v.searched_for.end();
        if (searched) add_exemplar(memory_, part, v.features, Label::positive, why);
      }
  }

 private:
  static std::vector<std::string> concepts_in(const Move& m) {
    return std::visit(
        [](const auto& x) -> std::vector<std::string> {
          using T = std::decay_t<decltype(x)>;
          if constexpr (std::is_same_v<T, Correction>) return {x.wrong, x.truth};
          else if constexpr (std::is_same_v<T, PartNegation>) return {x.part};
          else if constexpr (std::is_same_v<T, PartAck>) return {x.part, x.other};
          else if constexpr (std::is_same_v<T, GenericTeach>) {
            std::vector<std::string> out;
            for (const auto& [w, p] : x.pairs) {
              out.push_back(w);
              out.push_back(p);
            }
            return out;
          } else if constexpr (std::is_same_v<T, WhyQ>) return {x.type};
          else return {};
        },
        m);
  }

  Vector target_features() const {
    if (!trace_) throw ContractError("no probe in progress");
    return trace_->graph.vertices.front().features;
  }

  Vector vertex_features(const std::string& id) const {
    if (!trace_) throw ContractError("no probe in progress");
    return trace_->graph.vertex(id).features;
  }

  AgentConfig config_;
  Memory memory_;
  Lexicon vocabulary_;
  std::optional<InferenceTrace> trace_;
  std::optional<SufficientReason> last_reason_;
  int episode_ = -1;
  bool corrected_ = false;
};

}  // namespace xil
