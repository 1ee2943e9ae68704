#include <gtest/gtest.h>

#include "xil/perception.hpp"

using namespace xil;

TEST(Perception, KnnTrivialCases) {
  const Vector v{1.0, 0.0};
  EXPECT_DOUBLE_EQ(knn_probability(v, {}), 0.5);
  EXPECT_NEAR(knn_probability(v, ExemplarSets{{v}, {}}), 1.0, 1e-12);
  // Equidistant from one positive and one negative.
  EXPECT_NEAR(knn_probability(Vector{0.0, 0.0}, ExemplarSets{{{1.0, 0.0}}, {{-1.0, 0.0}}}), 0.5, 1e-12);
}

TEST(Perception, KnnSwapSymmetry) {
  Rng rng(5);
  ExemplarSets s;
  for (int i = 0; i < 7; ++i) s.positives.push_back({rng.normal(), rng.normal()});
  for (int i = 0; i < 4; ++i) s.negatives.push_back({rng.normal(1.0), rng.normal()});
  const ExemplarSets swapped{s.negatives, s.positives};
  for (int i = 0; i < 20; ++i) {
    const Vector q{rng.normal(), rng.normal()};
    const double p = knn_probability(q, s);
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
    EXPECT_NEAR(knn_probability(q, swapped), 1.0 - p, 1e-12);
  }
}

TEST(Perception, ClfArityChecked) {
  const auto scene = sample_scene(single_4way(), 1);
  const std::vector<RegionRef> one{{"o", 1.0, false}};
  EXPECT_THROW(f_clf(scene, one, Concept("have", 2, ConceptKind::relation), {}), ContractError);
  EXPECT_DOUBLE_EQ(f_clf(scene, one, Concept("dumpTruck", 1, ConceptKind::whole_type), {}), 0.5);
}

TEST(Perception, SegWithoutExemplarsReturnsEverything) {
  const auto scene = sample_scene(single_4way(), 2);
  Rng rng(1);
  const auto props = f_seg(scene, {}, {}, rng);
  EXPECT_EQ(props.size(), scene.all_regions().size());
  for (const auto& p : props) {
    EXPECT_DOUBLE_EQ(p.ref.fidelity, 1.0);
    EXPECT_DOUBLE_EQ(p.score, 0.5);
  }
}

TEST(Perception, SegFindsDumperWithRichExemplars) {
  const auto c = single_4way();
  const FeatureSpace space(c);
  Rng ex(11);
  ExemplarSets sets;
  // About what 200 load-part exposures leave behind for one of four classes.
  const char* others[] = {"flatbed", "rocketLauncher", "ladder"};
  for (int i = 0; i < 50; ++i) sets.positives.push_back(space.region_vector("dumper", ex.index(8), ex));
  for (int i = 0; i < 150; ++i) sets.negatives.push_back(space.region_vector(others[i % 3], ex.index(8), ex));
  int hits = 0, trials = 0;
  for (std::uint64_t s = 0; trials < 200; ++s) {
    const auto scene = sample_scene(c, s);
    if (scene.truck().whole != "dumpTruck") continue;
    ++trials;
    Rng rng(s);
    const auto top = f_seg(scene, sets, {}, rng).front();
    const auto truth = ground_truth(scene, top.ref);
    if (truth.label == "dumper" && top.ref.fidelity >= 0.9) ++hits;
  }
  EXPECT_GE(hits, 190);
}

TEST(Perception, CorruptionShrinksWithExemplars) {
  const PerceptionParams p;
  EXPECT_GT(corruption_probability(0, p), corruption_probability(20, p));
  EXPECT_LT(corruption_probability(200, p), 0.01);
}

TEST(Perception, SceneGraphVisOnlyIsSingleVertex) {
  const auto scene = sample_scene(single_4way(), 4);
  Memory m;
  register_neologism(m, {"dumpTruck", "dump truck", "dump trucks", ConceptKind::whole_type});
  Rng rng(0);
  const auto sg = build_scene_graph(scene, {"o", 1.0, false}, m, m.kb, {}, rng);
  ASSERT_EQ(sg.vertices.size(), 1u);
  EXPECT_DOUBLE_EQ(sg.vertices[0].beliefs.at("dumpTruck"), 0.5);
  EXPECT_TRUE(sg.edges.empty());
}

TEST(Perception, SceneGraphSearchesRelevantParts) {
  const auto scene = sample_scene(single_4way(), 4);
  Memory m;
  m.lexicon.register_concept(Concept("have", 2, ConceptKind::relation));
  for (const auto& w : single_4way().words) register_neologism(m, w);
  for (const auto& [t, p] : std::vector<std::pair<std::string, std::string>>{
           {"dumpTruck", "dumper"}, {"fireTruck", "ladder"}, {"missileTruck", "rocketLauncher"}})
    add_rule(m, make_generic(m.lexicon.concept_by_id(t), m.lexicon.concept_by_id(p)), {});
  Rng rng(0);
  const auto sg = build_scene_graph(scene, {"o", 1.0, false}, m, m.kb, {}, rng);
  EXPECT_GE(sg.vertices.size(), 2u);
  EXPECT_LE(sg.vertices.size(), 4u);
  for (const auto& [pair, rel] : sg.edges) {
    const double h = rel.at("have");
    EXPECT_TRUE(h == 0.95 || h == 0.05);
    EXPECT_EQ(h == 0.95, inside_truck(scene, sg.vertex(pair.second).ref.region_id));
  }
}
