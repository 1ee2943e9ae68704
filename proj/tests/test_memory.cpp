#include <gtest/gtest.h>

#include <filesystem>

#include "xil/memory.hpp"

using namespace xil;

namespace {

Concept whole(const std::string& id) { return Concept(id, 1, ConceptKind::whole_type); }
Concept part(const std::string& id) { return Concept(id, 1, ConceptKind::part_type); }

}  // namespace

TEST(Memory, KbIdempotentUnderRepeatedTeaching) {
  Memory m;
  EXPECT_TRUE(add_rule(m, make_generic(whole("dumpTruck"), part("dumper")), {1, "t"}));
  for (int i = 0; i < 5; ++i) EXPECT_FALSE(add_rule(m, make_generic(whole("dumpTruck"), part("dumper")), {2, "t"}));
  EXPECT_EQ(m.kb.size(), 1u);
  EXPECT_EQ(m.audit.size(), 1u);
  EXPECT_THROW(m.kb.add(make_fact(whole("dumpTruck"), {"o"})), ContractError);
}

TEST(Memory, ExemplarConflictKeepsBoth) {
  Memory m;
  register_neologism(m, {"dumper", "dumper", "dumpers", ConceptKind::part_type}, {0, "t"});
  add_exemplar(m, "dumper", {1.0, 2.0}, Label::positive, {1, "t"});
  add_exemplar(m, "dumper", {1.0, 2.0}, Label::negative, {1, "t"});
  EXPECT_EQ(m.exemplars.at("dumper").size(), 2u);
  EXPECT_EQ(m.audit.back().detail, "conflict");
  EXPECT_THROW(add_exemplar(m, "ladder", {0.0}, Label::positive, {}), ContractError);
}

TEST(Memory, LexiconBijection) {
  Lexicon lex;
  lex.register_word({"dumper", "dumper", "dumpers", ConceptKind::part_type});
  EXPECT_THROW(lex.register_word({"other", "dumper", "others", ConceptKind::part_type}), StructuralError);
  EXPECT_EQ(lex.concept_for_word("dumpers").id, "dumper");
  EXPECT_THROW(lex.concept_for_word("ladder"), LookupError);
}

TEST(Memory, DistinguishingParts) {
  KnowledgeBase kb;
  kb.add(make_generic(whole("dumpTruck"), part("dumper")));
  kb.add(make_generic(whole("dumpTruck"), part("quadCabin")));
  kb.add(make_generic(whole("containerTruck"), part("dumper")));
  kb.add(make_generic(whole("containerTruck"), part("hemttCabin")));
  const auto d = distinguishing_parts(kb, "dumpTruck", "containerTruck");
  EXPECT_EQ(d.only_a, std::set<std::string>{"quadCabin"});
  EXPECT_EQ(d.only_b, std::set<std::string>{"hemttCabin"});
  EXPECT_EQ(d.shared, std::set<std::string>{"dumper"});
  EXPECT_EQ(relevant_parts(kb, {"dumpTruck"}), (std::set<std::string>{"dumper", "quadCabin"}));
}

TEST(Memory, CheckpointRoundTrip) {
  Memory m;
  m.lexicon.register_concept(Concept("have", 2, ConceptKind::relation));
  register_neologism(m, {"dumpTruck", "dump truck", "dump trucks", ConceptKind::whole_type}, {});
  register_neologism(m, {"dumper", "dumper", "dumpers", ConceptKind::part_type}, {});
  add_exemplar(m, "dumper", {0.25, -1.5}, Label::positive, {});
  add_rule(m, make_generic(whole("dumpTruck"), part("dumper")), {3, "t"});
  const auto path = std::filesystem::temp_directory_path() / "xil_memory_test.json";
  save_memory(m, path.string());
  const Memory back = load_memory(path.string());
  EXPECT_TRUE(back.same_state(m));
  std::filesystem::remove(path);
}
