#pragma once

// Long-term memory: the exemplar base, the generic-rule knowledge base and the
// lexicon, plus the checkpoint format shared by the CLI and the session
// service.

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "xil/errors.hpp"
#include "xil/logic.hpp"

namespace xil {

using Vector = std::vector<double>;

enum class Label { positive, negative };

inline std::string_view to_string(Label l) { return l == Label::positive ? "positive" : "negative"; }

// Who caused a memory mutation. Every mutation carries one.
struct Provenance {
  int episode = -1;
  std::string cause;
};

struct MutationEvent {
  int episode = -1;
  std::string cause;
  std::string kind;    // exemplar | rule | concept
  std::string target;  // concept id or canonical rule text
  std::string detail;  // label, "conflict", ...
  bool operator==(const MutationEvent&) const = default;
};

// Multisets of raw feature vectors per concept.
struct ExemplarSets {
  std::vector<Vector> positives;
  std::vector<Vector> negatives;
  bool operator==(const ExemplarSets&) const = default;

  std::size_t size() const { return positives.size() + negatives.size(); }
};

class ExemplarBase {
 public:
  void register_concept(const std::string& id) { sets_.try_emplace(id); }
  bool contains(const std::string& id) const { return sets_.contains(id); }

  const ExemplarSets& at(const std::string& id) const {
    auto it = sets_.find(id);
    if (it == sets_.end()) throw LookupError("no exemplar sets for concept '" + id + "'");
    return it->second;
  }

  // Returns true when the vector already sits in the opposite set; both
  // occurrences are kept.
  bool add(const std::string& id, Vector v, Label label) {
    auto it = sets_.find(id);
    if (it == sets_.end()) throw ContractError("add_exemplar on unregistered concept '" + id + "'");
    auto& s = it->second;
    const auto& opposite = label == Label::positive ? s.negatives : s.positives;
    const bool conflict = std::find(opposite.begin(), opposite.end(), v) != opposite.end();
    (label == Label::positive ? s.positives : s.negatives).push_back(std::move(v));
    return conflict;
  }

  const std::map<std::string, ExemplarSets>& all() const { return sets_; }
  bool operator==(const ExemplarBase&) const = default;

 private:
  std::map<std::string, ExemplarSets> sets_;
};

struct KbEntry {
  Prop rule;  // canonical, skolem function renumbered per KB
  int episode = -1;
  bool operator==(const KbEntry&) const = default;
};

class KnowledgeBase {
 public:
  // Idempotent: returns false (and leaves the KB unchanged) when an
  // alpha-equivalent entry exists.
  bool add(const Prop& rule, int episode = -1) {
    if (!rule.is_generic()) throw ContractError("only generic props can enter the KB");
    auto canon = canonicalize(rule);
    for (const auto& e : entries_)
      if (canonicalize(e.rule) == canon) return false;
    entries_.push_back(KbEntry{renumber(canon, entries_.size() + 1), episode});
    return true;
  }

  const std::vector<KbEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  bool operator==(const KnowledgeBase&) const = default;

 private:
  static Prop renumber(Prop p, std::size_t k) {
    const std::string id = "f" + std::to_string(k);
    for (auto* side : {&p.antecedent, &p.consequent})
      for (auto& l : *side)
        for (auto& a : l.args)
          if (auto* s = std::get_if<Skolem>(&a)) s->function = id;
    return p;
  }

  std::vector<KbEntry> entries_;
};

// Singular/plural surface forms of a content word.
struct WordForms {
  std::string concept_id;
  std::string singular;
  std::string plural;
  ConceptKind kind = ConceptKind::part_type;
  bool operator==(const WordForms&) const = default;
};

class Lexicon {
 public:
  // Concepts without surface words (relations such as `have`).
  void register_concept(const Concept& c) {
    auto [it, fresh] = concepts_.try_emplace(c.id, c);
    if (!fresh && it->second != c) throw StructuralError("concept '" + c.id + "' re-registered differently");
  }

  void register_word(const WordForms& w) {
    register_concept(Concept(w.concept_id, 1, w.kind));
    for (const auto& s : {w.singular, w.plural}) {
      auto it = word_to_id_.find(s);
      if (it != word_to_id_.end() && it->second != w.concept_id)
        throw StructuralError("word '" + s + "' already bound to " + it->second);
    }
    auto f = forms_.find(w.concept_id);
    if (f != forms_.end() && f->second != w)
      throw StructuralError("concept '" + w.concept_id + "' already has different surface forms");
    forms_[w.concept_id] = w;
    word_to_id_[w.singular] = w.concept_id;
    word_to_id_[w.plural] = w.concept_id;
  }

  bool knows_word(const std::string& word) const { return word_to_id_.contains(word); }
  bool knows_concept(const std::string& id) const { return concepts_.contains(id); }

  const Concept& concept_by_id(const std::string& id) const {
    auto it = concepts_.find(id);
    if (it == concepts_.end()) throw LookupError("unknown concept '" + id + "'");
    return it->second;
  }

  const Concept& concept_for_word(const std::string& word) const {
    auto it = word_to_id_.find(word);
    if (it == word_to_id_.end()) throw LookupError("unknown word '" + word + "'");
    return concept_by_id(it->second);
  }

  const WordForms& forms(const std::string& id) const {
    auto it = forms_.find(id);
    if (it == forms_.end()) throw LookupError("no lexicon entry for concept '" + id + "'");
    return it->second;
  }

  std::vector<Concept> concepts_of_kind(ConceptKind kind) const {
    std::vector<Concept> out;
    for (const auto& [id, c] : concepts_)
      if (c.kind == kind) out.push_back(c);
    return out;  // sorted by id (map order)
  }

  const std::map<std::string, Concept>& concepts() const { return concepts_; }
  const std::map<std::string, WordForms>& words() const { return forms_; }
  bool operator==(const Lexicon&) const = default;

 private:
  std::map<std::string, Concept> concepts_;
  std::map<std::string, WordForms> forms_;
  std::map<std::string, std::string> word_to_id_;
};

struct Memory {
  Lexicon lexicon;
  ExemplarBase exemplars;
  KnowledgeBase kb;
  std::vector<MutationEvent> audit;

  // Memory state proper; the audit trail is excluded.
  bool same_state(const Memory& o) const {
    return lexicon == o.lexicon && exemplars == o.exemplars && kb == o.kb;
  }
};

// ---------------------------------------------------------------------------
// Update operations

inline void add_exemplar(Memory& m, const std::string& concept_id, Vector v, Label label,
                         const Provenance& why) {
  const bool conflict = m.exemplars.add(concept_id, std::move(v), label);
  m.audit.push_back({why.episode, why.cause, "exemplar", concept_id, std::string(to_string(label))});
  if (conflict) m.audit.push_back({why.episode, why.cause, "exemplar", concept_id, "conflict"});
}

inline ExemplarBase add_exemplar(ExemplarBase base, const std::string& concept_id, Vector v, Label label) {
  base.add(concept_id, std::move(v), label);
  return base;
}

inline bool add_rule(Memory& m, const Prop& rule, const Provenance& why) {
  const bool fresh = m.kb.add(rule, why.episode);
  if (fresh)
    m.audit.push_back({why.episode, why.cause, "rule", to_string(m.kb.entries().back().rule), "added"});
  return fresh;
}

inline std::pair<KnowledgeBase, bool> add_rule(KnowledgeBase kb, const Prop& rule) {
  const bool fresh = kb.add(rule);
  return {std::move(kb), fresh};
}

// Registers a word the learner has not seen before together with empty
// exemplar sets. Known words return their existing concept.
inline Concept register_neologism(Memory& m, const WordForms& w, const Provenance& why = {}) {
  if (m.lexicon.knows_word(w.singular)) return m.lexicon.concept_for_word(w.singular);
  if (m.lexicon.knows_word(w.plural)) return m.lexicon.concept_for_word(w.plural);
  m.lexicon.register_word(w);
  m.exemplars.register_concept(w.concept_id);
  m.audit.push_back({why.episode, why.cause, "concept", w.concept_id, "registered"});
  return m.lexicon.concept_by_id(w.concept_id);
}

inline std::set<std::string> relevant_parts(const KnowledgeBase& kb, const std::set<std::string>& wholes) {
  std::set<std::string> out;
  for (const auto& e : kb.entries())
    if (wholes.contains(generic_whole(e.rule))) out.insert(generic_part(e.rule));
  return out;
}

inline std::set<std::string> parts_of(const KnowledgeBase& kb, const std::string& whole) {
  return relevant_parts(kb, {whole});
}

struct PartPartition {
  std::set<std::string> only_a;
  std::set<std::string> only_b;
  std::set<std::string> shared;
  bool operator==(const PartPartition&) const = default;
};

inline PartPartition distinguishing_parts(const KnowledgeBase& kb, const std::string& type_a,
                                          const std::string& type_b) {
  const auto a = parts_of(kb, type_a);
  const auto b = parts_of(kb, type_b);
  PartPartition out;
  for (const auto& p : a) (b.contains(p) ? out.shared : out.only_a).insert(p);
  for (const auto& p : b)
    if (!a.contains(p)) out.only_b.insert(p);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint format

inline nlohmann::json memory_to_json(const Memory& m) {
  using nlohmann::json;
  json concepts = json::array();
  for (const auto& [id, c] : m.lexicon.concepts()) {
    json e = {{"id", id}, {"arity", c.arity}, {"kind", std::string(to_string(c.kind))}};
    if (auto it = m.lexicon.words().find(id); it != m.lexicon.words().end()) {
      e["singular"] = it->second.singular;
      e["plural"] = it->second.plural;
    }
    concepts.push_back(std::move(e));
  }
  json exemplars = json::object();
  for (const auto& [id, s] : m.exemplars.all())
    exemplars[id] = {{"positive", s.positives}, {"negative", s.negatives}};
  json kb = json::array();
  for (const auto& e : m.kb.entries()) kb.push_back({{"rule", to_string(e.rule)}, {"episode", e.episode}});
  return {{"format", "xil-memory/1"}, {"concepts", concepts}, {"exemplars", exemplars}, {"kb", kb}};
}

inline Memory memory_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "xil-memory/1") throw ConfigurationError("not an xil-memory/1 document");
  Memory m;
  for (const auto& c : j.at("concepts")) {
    const auto kind = concept_kind_from_string(c.at("kind").get<std::string>());
    if (c.contains("singular")) {
      m.lexicon.register_word(WordForms{c.at("id"), c.at("singular"), c.at("plural"), kind});
    } else {
      m.lexicon.register_concept(Concept(c.at("id"), c.at("arity").get<int>(), kind));
    }
  }
  for (const auto& [id, s] : j.at("exemplars").items()) {
    m.exemplars.register_concept(id);
    for (const auto& v : s.at("positive")) m.exemplars.add(id, v.get<Vector>(), Label::positive);
    for (const auto& v : s.at("negative")) m.exemplars.add(id, v.get<Vector>(), Label::negative);
  }
  for (const auto& e : j.at("kb")) m.kb.add(parse_prop(e.at("rule").get<std::string>()), e.at("episode"));
  return m;
}

inline void save_memory(const Memory& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigurationError("cannot write " + path);
  out << memory_to_json(m).dump(1) << "\n";
}

inline Memory load_memory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot read " + path);
  return memory_from_json(nlohmann::json::parse(in));
}

}  // namespace xil
