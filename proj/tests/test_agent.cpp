#include <gtest/gtest.h>

#include "xil/agent.hpp"
#include "xil/harness.hpp"

using namespace xil;

namespace {

TrueScene scene_with_truth(const DomainConfig& c, const std::string& whole, std::uint64_t from = 0) {
  for (std::uint64_t s = from;; ++s) {
    auto sc = sample_scene(c, s);
    if (sc.truck().whole == whole) return sc;
  }
}

Utterance probe_for(const TrueScene& sc, const Lexicon& vocab) {
  const std::string o = sc.truck().id;
  return make_utterance(Probe{o}, {{o, RegionRef{o, 1.0, false}}}, vocab);
}

Memory calibrated(const DomainConfig& c, Quality q, std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.domain = c;
  cfg.quality = q;
  cfg.base_seed = seed;
  return seeded_memory(cfg, 0);
}

std::size_t exemplar_count(const Memory& m) {
  std::size_t n = 0;
  for (const auto& [id, s] : m.exemplars.all()) n += s.size();
  return n;
}

}  // namespace

TEST(Agent, InitialMemoryKnowsTheVocabulary) {
  const auto c = double_5way();
  const Memory m = initial_memory(c);
  for (const auto& w : c.words) {
    EXPECT_TRUE(m.lexicon.knows_concept(w.concept_id));
    EXPECT_EQ(m.exemplars.at(w.concept_id).size(), 0u);
  }
  EXPECT_TRUE(m.lexicon.knows_concept("have"));
  EXPECT_TRUE(m.kb.empty());
  EXPECT_TRUE(m.audit.empty());
}

TEST(Agent, CorrectionMovesTheProbe) {
  const auto c = single_4way();
  const auto vocab = domain_lexicon(c);
  Agent a({.strategy = Strategy::VisGenrExpl}, calibrated(c, Quality::LQ, 3), vocab);
  const auto sc = scene_with_truth(c, "fireTruck");
  Rng rng(1);
  const auto ans = std::get<Answer>(a.handle_probe(probe_for(sc, vocab), sc, rng, 4).move);
  const std::string wrong = ans.type == "dumpTruck" ? "baseTruck" : "dumpTruck";
  const auto before = a.memory();
  a.learn(make_utterance(Correction{wrong, "fireTruck", ans.object}, {{ans.object, a.trace()->target}}, vocab), 2);
  const Vector& v = a.trace()->graph.vertices.front().features;
  EXPECT_EQ(a.memory().exemplars.at(wrong).negatives.size(), before.exemplars.at(wrong).negatives.size() + 1);
  EXPECT_EQ(a.memory().exemplars.at(wrong).negatives.back(), v);
  EXPECT_EQ(a.memory().exemplars.at("fireTruck").positives.back(), v);
  ASSERT_EQ(a.memory().audit.size(), 2u);
  for (const auto& e : a.memory().audit) {
    EXPECT_EQ(e.cause, "teacher:Correction@2");
    EXPECT_EQ(e.episode, 4);
  }
  // Corrected episodes do not self-train.
  const auto after = a.memory();
  a.end_episode();
  EXPECT_TRUE(a.memory().same_state(after));
}

TEST(Agent, GenericTeachIsIdempotent) {
  const auto c = double_5way();
  const auto vocab = domain_lexicon(c);
  Agent a({}, initial_memory(c), vocab);
  const auto u = make_utterance(make_generic_teach({{"dumpTruck", "quadCabin"}, {"containerTruck", "hemttCabin"}}), {}, vocab);
  a.learn(u, 6);
  EXPECT_EQ(a.memory().kb.size(), 2u);
  const auto once = a.memory();
  for (int i = 0; i < 3; ++i) a.learn(u, 6);
  EXPECT_TRUE(a.memory().same_state(once));
  EXPECT_EQ(a.memory().audit, once.audit);
  EXPECT_EQ(parts_of(a.memory().kb, "dumpTruck"), std::set<std::string>{"quadCabin"});
}

TEST(Agent, PartNegationLabelsTheVertex) {
  const auto c = single_4way();
  const auto vocab = domain_lexicon(c);
  Agent a({}, calibrated(c, Quality::MQ, 1), vocab);
  a.learn(make_utterance(make_generic_teach({{"dumpTruck", "dumper"}}), {}, vocab), 5);
  const auto sc = scene_with_truth(c, "fireTruck");
  Rng rng(2);
  a.handle_probe(probe_for(sc, vocab), sc, rng, 0);
  const auto ids = a.trace()->graph.candidates_for("dumper");
  ASSERT_EQ(ids.size(), 1u);
  const auto& v = a.trace()->graph.vertex(ids[0]);
  const auto n = a.memory().exemplars.at("dumper").negatives.size();
  a.learn(make_utterance(PartNegation{"dumper", ids[0]}, {{ids[0], v.ref}}, vocab), 5);
  EXPECT_EQ(a.memory().exemplars.at("dumper").negatives.size(), n + 1);
  EXPECT_EQ(a.memory().exemplars.at("dumper").negatives.back(), v.features);
  EXPECT_EQ(a.memory().audit.back().cause, "teacher:PartNegation@5");
}

TEST(Agent, WhyDependsOnStrategy) {
  const auto c = single_4way();
  const auto vocab = domain_lexicon(c);
  const auto sc = scene_with_truth(c, "dumpTruck");
  for (auto st : {Strategy::VisOnly, Strategy::VisGenr, Strategy::VisGenrExpl}) {
    Agent a({.strategy = st}, calibrated(c, Quality::LQ, 2), vocab);
    Rng rng(3);
    const auto ans = std::get<Answer>(a.handle_probe(probe_for(sc, vocab), sc, rng, 0).move);
    const auto why = make_utterance(WhyQ{ans.type, ans.object}, {{ans.object, a.trace()->target}}, vocab);
    if (st == Strategy::VisOnly) {
      EXPECT_THROW(a.handle_why(why), ConformanceError);
    } else {
      // No rules yet: nothing but the whole-type vote to point at.
      EXPECT_TRUE(std::holds_alternative<CannotExplain>(a.handle_why(why).move));
    }
    const std::string other = ans.type == "fireTruck" ? "dumpTruck" : "fireTruck";
    if (st != Strategy::VisOnly)
      EXPECT_THROW(a.handle_why(make_utterance(WhyQ{other, ans.object}, {{ans.object, a.trace()->target}}, vocab)),
                   ConformanceError);
  }
}

// With no exemplars every type ties at 0.5, so a right answer is an unsure
// one: the probe joins its type's positives and every proposal searched for
// one of that type's parts joins the part's positives.
TEST(Agent, UnconfidentCorrectSelfTrains) {
  const auto c = double_5way();
  const auto vocab = domain_lexicon(c);
  const auto sc = scene_with_truth(c, "baseTruck");
  std::vector<std::pair<std::string, std::string>> all_quad;
  for (const auto& w : c.whole_ids()) all_quad.emplace_back(w, "quadCabin");
  for (auto st : {Strategy::VisOnly, Strategy::VisGenrExpl}) {
    Agent a({.strategy = st}, initial_memory(c), vocab);
    a.learn(make_utterance(make_generic_teach(all_quad), {}, vocab), 1);
    Rng rng(4);
    const auto ans = std::get<Answer>(a.handle_probe(probe_for(sc, vocab), sc, rng, 9).move);
    ASSERT_EQ(ans.type, "baseTruck");
    ASSERT_LT(a.trace()->answer.probability, 0.75);
    a.end_episode();
    const auto& m = a.memory();
    EXPECT_EQ(m.exemplars.at("baseTruck").positives.size(), 1u);
    const std::size_t quad = m.exemplars.at("quadCabin").positives.size();
    EXPECT_EQ(quad, st == Strategy::VisOnly ? 0u : 1u);
    for (const auto& e : m.audit)
      if (e.kind == "exemplar") EXPECT_EQ(e.cause, "unconfident-correct");
  }
}

TEST(Agent, ConfidentCorrectLeavesMemoryAlone) {
  const auto c = single_4way();
  const auto vocab = domain_lexicon(c);
  AgentConfig ac;
  ac.confidence = 0.0;
  Agent a(ac, calibrated(c, Quality::HQ, 5), vocab);
  const auto sc = scene_with_truth(c, "dumpTruck");
  Rng rng(5);
  a.handle_probe(probe_for(sc, vocab), sc, rng, 0);
  const auto before = a.memory();
  a.end_episode();
  EXPECT_TRUE(a.memory().same_state(before));
}

TEST(Agent, VisOnlyNeverLearnsRules) {
  ExperimentConfig cfg;
  cfg.domain = double_5way();
  cfg.seeds = 1;
  cfg.episodes = 40;
  const Memory init = seeded_memory(cfg, 0);
  const auto r = run_one(cfg, Strategy::VisOnly, 0, init);
  EXPECT_TRUE(r.final_memory.kb.empty());
  // Part models are untouched; only whole types learn.
  for (const auto& [id, s] : r.final_memory.exemplars.all())
    if (cfg.domain.word(id).kind == ConceptKind::part_type) EXPECT_EQ(s, init.exemplars.at(id));
}

// Every exemplar added during a run is matched by one audit event from a
// teacher move or a correct-but-unsure answer.
TEST(Agent, MutationsAreTraceable) {
  ExperimentConfig cfg;
  cfg.domain = double_5way();
  cfg.seeds = 1;
  cfg.episodes = 30;
  const Memory init = seeded_memory(cfg, 0);
  for (auto st : {Strategy::VisOnly, Strategy::VisGenr, Strategy::VisGenrExpl}) {
    const auto r = run_one(cfg, st, 0, init);
    std::size_t logged = 0;
    for (const auto& e : r.final_memory.audit) {
      EXPECT_TRUE(e.cause.starts_with("teacher:") || e.cause == "unconfident-correct") << e.cause;
      if (e.kind == "exemplar" && e.detail != "conflict") ++logged;
    }
    EXPECT_EQ(exemplar_count(r.final_memory) - exemplar_count(init), logged) << to_string(st);
    if (st != Strategy::VisOnly) EXPECT_FALSE(r.final_memory.kb.empty());
  }
}
