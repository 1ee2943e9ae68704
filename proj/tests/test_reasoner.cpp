#include <gtest/gtest.h>

#include "xil/reasoner.hpp"

using namespace xil;

namespace {

// Reference semantics computed straight from the program text: enumerate the
// probabilistic atoms, derive defined atoms by their rules (bottom-up, the
// generated programs are stratified), and weight each world.
std::map<std::string, double> program_oracle(const WeightedProgram& prog) {
  std::vector<std::string> free_atoms;
  std::map<std::string, std::vector<const WeightedRule*>> defs;
  std::map<std::string, double> prior;
  std::map<std::string, std::pair<double, double>> ev;
  std::map<std::string, std::string> ev_of;
  std::vector<const WeightedRule*> cons;
  for (const auto& r : prog.rules) {
    if (!r.head) {
      cons.push_back(&r);
    } else if (r.head->predicate.starts_with("ev_")) {
      auto& e = ev[r.head->str()];
      (r.body[0].negated ? e.second : e.first) = r.weight;
      ev_of[r.head->str()] = r.body[0].atom.str();
    } else if (r.body.empty()) {
      prior[r.head->str()] = r.weight;
      free_atoms.push_back(r.head->str());
    } else {
      defs[r.head->str()].push_back(&r);
    }
  }
  std::map<std::string, double> mass;
  double total = 0.0;
  for (std::uint64_t w = 0; w < (std::uint64_t{1} << free_atoms.size()); ++w) {
    std::map<std::string, bool> val;
    double weight = 1.0;
    for (std::size_t i = 0; i < free_atoms.size(); ++i) {
      val[free_atoms[i]] = (w >> i) & 1u;
      weight *= val[free_atoms[i]] ? prior[free_atoms[i]] : 1.0 - prior[free_atoms[i]];
    }
    std::function<bool(const std::string&)> truth = [&](const std::string& a) -> bool {
      if (auto it = val.find(a); it != val.end()) return it->second;
      bool any = false;
      if (auto d = defs.find(a); d != defs.end())
        for (const auto* r : d->second) {
          bool all = true;
          for (const auto& b : r->body) all = all && (truth(b.atom.str()) != b.negated);
          any = any || all;
        }
      return val[a] = any;
    };
    for (const auto& [e, pq] : ev) weight *= truth(ev_of[e]) ? pq.first : pq.second;
    for (const auto* r : cons) {
      bool violated = true;
      for (const auto& b : r->body) violated = violated && (truth(b.atom.str()) != b.negated);
      if (violated) weight *= 1.0 - r->weight;
    }
    total += weight;
    for (const auto& [a, v] : val)
      if (v) mass[a] += weight;
    for (const auto& [a, v] : val) mass.try_emplace(a, 0.0);
  }
  for (auto& [a, m] : mass) m /= total;
  return mass;
}

WeightedProgram deductive_example() {
  return parse_program(
      "0.5 :: a(o).\n0.8 :: ev_a(o) <- a(o).\n0.2 :: ev_a(o) <- not a(o).\n0.5 :: b(o).\n"
      "% knowledge\n0.99 :: <- a(o), not b(o).\n");
}

WeightedProgram abductive_example() {
  return parse_program(
      "0.5 :: a(o).\n0.5 :: b(o).\n0.9 :: ev_b(o) <- b(o).\n0.1 :: ev_b(o) <- not b(o).\n"
      "% knowledge\n0.99 :: <- b(o), not a(o).\n");
}

}  // namespace

TEST(Reasoner, EvidenceOnlyPosteriorIsP) {
  WeightedProgram prog;
  append_evidence_fragment(prog, Atom{"g", {"o"}}, 0.8);
  ASSERT_EQ(prog.size(), 3u);
  EXPECT_EQ(to_string(prog.rules[0]), "0.5 :: g(o).");
  EXPECT_EQ(to_string(prog.rules[1]), "0.8 :: ev_g(o) <- g(o).");
  EXPECT_NEAR(prog.rules[2].weight, 0.2, 1e-15);
  EXPECT_TRUE(prog.rules[2].body[0].negated);
  const auto g = build_factor_graph(prog);
  EXPECT_EQ(g.variables.size(), 2u);
  EXPECT_NEAR(run_bp(g).at("g(o)"), 0.8, 1e-12);
  EXPECT_NEAR(exact_marginals(g).at("g(o)"), 0.8, 1e-12);
}

TEST(Reasoner, DeductiveWorkedValue) {
  const auto g = build_factor_graph(deductive_example());
  EXPECT_NEAR(exact_marginals(g).at("a(o)"), 0.808 / 1.208, 1e-12);
  EXPECT_NEAR(run_bp(g).at("a(o)"), 0.808 / 1.208, 1e-9);
  EXPECT_NEAR(program_oracle(deductive_example()).at("a(o)"), 0.808 / 1.208, 1e-12);
}

TEST(Reasoner, AbductiveWorkedValue) {
  const auto g = build_factor_graph(abductive_example());
  EXPECT_NEAR(exact_marginals(g).at("a(o)"), 1.0 / 1.109, 1e-12);
  EXPECT_NEAR(run_bp(g).at("a(o)"), 1.0 / 1.109, 1e-9);
}

TEST(Reasoner, ProgramTextRoundTrip) {
  const auto p = deductive_example();
  EXPECT_EQ(parse_program(to_string(p)).rules, p.rules);
  EXPECT_THROW(parse_program("0.5 :: a(o)"), ParseError);
  EXPECT_THROW(parse_program("1.5 :: a(o)."), ParseError);
}

TEST(Reasoner, ExactRefusesLargeComponents) {
  std::string text;
  for (int i = 0; i < 26; ++i) text += "0.5 :: a(x" + std::to_string(i) + ").\n";
  for (int i = 0; i + 1 < 26; ++i)
    text += "0.9 :: <- a(x" + std::to_string(i) + "), not a(x" + std::to_string(i + 1) + ").\n";
  EXPECT_THROW(exact_marginals(build_factor_graph(parse_program(text))), RefusalError);
  EXPECT_TRUE(exact_marginals(FactorGraph{}).p.empty());
}

TEST(Reasoner, UniformGraphConvergesImmediately) {
  const auto m = run_bp(build_factor_graph(parse_program("0.5 :: a(o).\n")));
  EXPECT_TRUE(m.converged);
  EXPECT_LE(m.iterations, 2);
  EXPECT_DOUBLE_EQ(m.at("a(o)"), 0.5);
}

TEST(Reasoner, AnswerProbeTieBreaksLexicographically) {
  Marginals m;
  m.p = {{"dump(o)", 0.7}, {"missile(o)", 0.2}};
  EXPECT_EQ(answer_probe(m, {"missile", "dump"}, "o").answer, "dump");
  m.p = {{"b(o)", 0.5}, {"a(o)", 0.5}};
  EXPECT_EQ(answer_probe(m, {"b", "a"}, "o").answer, "a");
}

namespace {

SceneGraph two_candidate_graph() {
  SceneGraph sg;
  sg.vertices.push_back({"o", {"o", 1.0, false}, {}, {{"dumpTruck", 0.4}, {"containerTruck", 0.45}, {"dumper", 0.5}}});
  sg.vertices.push_back({"p1", {"r1", 1.0, true}, {}, {{"dumpTruck", 0.5}, {"containerTruck", 0.5}, {"dumper", 0.9}}, {"dumper"}});
  sg.vertices.push_back({"p2", {"r2", 0.3, true}, {}, {{"dumpTruck", 0.5}, {"containerTruck", 0.5}, {"dumper", 0.6}}, {"dumper"}});
  sg.edges[{"o", "p1"}]["have"] = 0.95;
  sg.edges[{"o", "p2"}]["have"] = 0.05;
  return sg;
}

KnowledgeBase shared_dumper_kb() {
  KnowledgeBase kb;
  kb.add(make_generic(Concept("dumpTruck", 1, ConceptKind::whole_type), Concept("dumper", 1, ConceptKind::part_type)));
  kb.add(make_generic(Concept("containerTruck", 1, ConceptKind::whole_type), Concept("dumper", 1, ConceptKind::part_type)));
  return kb;
}

}  // namespace

TEST(Reasoner, CompileVisualCountsRules) {
  SceneGraph sg;
  sg.vertices.push_back({"o", {}, {}, {{"a", 0.1}, {"b", 0.2}, {"c", 0.3}}});
  sg.vertices.push_back({"p1", {}, {}, {{"a", 0.1}, {"b", 0.2}, {"c", 0.3}}});
  EXPECT_EQ(compile_visual(sg).size(), 18u);
}

TEST(Reasoner, SharedConsequentGivesOneAbductiveConstraint) {
  const auto prog = compile_kb(shared_dumper_kb(), two_candidate_graph());
  int deductive = 0, abductive = 0;
  for (const auto& r : prog.rules) {
    if (r.head) continue;
    if (r.body.front().negated) continue;
    if (r.body.front().atom.predicate == "cons_dumper") {
      ++abductive;
      EXPECT_EQ(r.body.size(), 3u);
    } else {
      ++deductive;
    }
  }
  EXPECT_EQ(deductive, 2);
  EXPECT_EQ(abductive, 1);
  EXPECT_TRUE(compile_kb(KnowledgeBase{}, two_candidate_graph()).empty());
}

TEST(Reasoner, CompiledSceneMatchesProgramOracle) {
  auto prog = compile_visual(two_candidate_graph());
  prog.append(compile_kb(shared_dumper_kb(), two_candidate_graph()));
  const auto oracle = program_oracle(prog);
  const auto g = build_factor_graph(prog);
  const auto exact = exact_marginals(g);
  const auto bp = run_bp(g);
  for (const auto& [name, p] : exact.p) {
    if (name.find('#') != std::string::npos) continue;
    EXPECT_NEAR(p, oracle.at(name), 1e-12) << name;
    EXPECT_NEAR(bp.at(name), p, 0.05) << name;
  }
}

TEST(Reasoner, AbductionNeverLowersWhole) {
  const auto sg = two_candidate_graph();
  KnowledgeBase kb;
  kb.add(make_generic(Concept("dumpTruck", 1, ConceptKind::whole_type), Concept("dumper", 1, ConceptKind::part_type)));
  const double base = exact_marginals(build_factor_graph(compile_visual(sg))).at("dumpTruck(o)");
  auto prog = compile_visual(sg);
  prog.append(compile_kb(kb, sg));
  EXPECT_GE(exact_marginals(build_factor_graph(prog)).at("dumpTruck(o)"), base);
}

TEST(Reasoner, MonotoneInPenalty) {
  double last = 0.0;
  for (double u : {0.0, 0.25, 0.5, 0.75, 0.9, 0.99}) {
    auto text = "0.5 :: a(o).\n0.5 :: b(o).\n0.9 :: ev_b(o) <- b(o).\n0.1 :: ev_b(o) <- not b(o).\n" +
                format_weight(u) + " :: <- b(o), not a(o).\n";
    const double p = exact_marginals(build_factor_graph(parse_program(text))).at("a(o)");
    EXPECT_GE(p, last - 1e-15);
    last = p;
  }
}

// Two parts shared by the same two wholes close a loop through the
// constraint factors; merging them makes BP exact again.
TEST(Reasoner, SharedAntecedentsAreMergedIntoATree) {
  SceneGraph sg;
  sg.vertices.push_back({"o", {"o", 1.0, false}, {}, {{"dumpTruck", 0.3}, {"containerTruck", 0.6}}});
  sg.vertices.push_back({"p1", {"r1", 1.0, true}, {}, {{"dumper", 0.8}}, {"dumper"}});
  sg.vertices.push_back({"p2", {"r2", 1.0, true}, {}, {{"ladder", 0.3}}, {"ladder"}});
  sg.edges[{"o", "p1"}]["have"] = 0.95;
  sg.edges[{"o", "p2"}]["have"] = 0.95;
  KnowledgeBase kb;
  for (const std::string w : {"dumpTruck", "containerTruck"})
    for (const std::string p : {"dumper", "ladder"})
      kb.add(make_generic(Concept(w, 1, ConceptKind::whole_type), Concept(p, 1, ConceptKind::part_type)));
  auto prog = compile_visual(sg);
  prog.append(compile_kb(kb, sg));
  const auto loopy = build_factor_graph(prog, 0);
  const auto merged = build_factor_graph(prog);
  EXPECT_FALSE(is_forest(loopy));
  EXPECT_TRUE(is_forest(merged));
  EXPECT_LT(merged.factors.size(), loopy.factors.size());
  const auto oracle = program_oracle(prog);
  const auto bp = run_bp(merged);
  for (const auto& [name, p] : exact_marginals(merged).p) {
    EXPECT_NEAR(p, exact_marginals(loopy).at(name), 1e-12) << name;
    EXPECT_NEAR(bp.at(name), p, 1e-9) << name;
    if (name.find('#') == std::string::npos) EXPECT_NEAR(p, oracle.at(name), 1e-12) << name;
  }
}
