#pragma once

// Sufficient reasons over a compiled factor graph and their rendering as
// part-based explanations.

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "xil/errors.hpp"
#include "xil/memory.hpp"
#include "xil/perception.hpp"
#include "xil/reasoner.hpp"

namespace xil {

struct ReasonQuery {
  std::string answer;  // whole-type concept id chosen under full evidence
  std::string object;
  std::vector<std::string> candidates;
};

struct SufficientReason {
  std::vector<int> evidence;  // evidence variable indices, strongest first
  std::string answer;
  std::string object;
  double strength = 0.0;  // marginal of the answer under this evidence alone
};

struct ExplainOptions {
  std::size_t exhaustive_limit = 12;
  double margin = 1e-6;  // the answer must beat every rival by more than this
  BpSettings bp;
};

// Argmax preservation in the strict sense: a tie broken by id is not a reason.
inline bool wins_strictly(const Marginals& m, const std::vector<std::string>& candidates, const std::string& object,
                          const std::string& answer, double margin) {
  auto p = [&](const std::string& c) {
    auto it = m.p.find(Atom{c, {object}}.str());
    return it == m.p.end() ? 0.5 : it->second;
  };
  const double a = p(answer);
  for (const auto& c : candidates)
    if (c != answer && p(c) + margin >= a) return false;
  return true;
}

inline double evidence_strength(const FactorGraph& g, int ev_var) {
  for (const auto& f : g.factors)
    if (f.kind == FactorKind::evidence && f.vars[1] == ev_var) return std::abs(f.table[3] - 0.5);
  throw LookupError("no evidence factor for variable " + g.variables.at(ev_var).name);
}

// Membership atom an evidence variable reports on.
inline Atom evidence_subject(const FactorGraph& g, int ev_var) {
  for (const auto& [ev, x] : g.evidence_links())
    if (ev == ev_var) return parse_program(g.variables[x].name + ".").rules.front().head.value();
  throw LookupError("variable " + g.variables.at(ev_var).name + " is not evidence");
}

namespace detail {

class ReasonSearch {
 public:
  ReasonSearch(const FactorGraph& g, const ReasonQuery& q, const ExplainOptions& o) : g_(g), q_(q), o_(o) {}

  bool sufficient(const std::set<int>& s) {
    auto it = memo_.find(s);
    if (it != memo_.end()) return it->second;
    const auto m = run_bp(restrict_evidence(g_, s), o_.bp);
    const bool ok = wins_strictly(m, q_.candidates, q_.object, q_.answer, o_.margin);
    memo_.emplace(s, ok);
    return ok;
  }

  double marginal(const std::set<int>& s) const {
    return run_bp(restrict_evidence(g_, s), o_.bp).at(Atom{q_.answer, {q_.object}}.str());
  }

 private:
  const FactorGraph& g_;
  const ReasonQuery& q_;
  const ExplainOptions& o_;
  std::map<std::set<int>, bool> memo_;
};

}  // namespace detail

// A subset-minimal set S of evidence variables such that keeping only their
// evidence factors preserves the argmax. Reasons avoiding the answer's own
// direct evidence and containing part evidence are preferred. Returns none
// when the answer already wins with no evidence at all.
inline std::optional<SufficientReason> sufficient_reason(const FactorGraph& g, const ReasonQuery& q,
                                                         const std::set<std::string>& part_concepts = {},
                                                         const ExplainOptions& opts = {}) {
  detail::ReasonSearch search(g, q, opts);
  std::vector<int> all;
  for (const auto& [ev, x] : g.evidence_links()) all.push_back(ev);
  std::stable_sort(all.begin(), all.end(),
                   [&](int a, int b) { return evidence_strength(g, a) > evidence_strength(g, b); });
  if (all.empty() || search.sufficient({})) return std::nullopt;

  const int direct = g.find(evidence_atom(Atom{q.answer, {q.object}}).str());
  auto is_part_ev = [&](int ev) {
    const Atom a = evidence_subject(g, ev);
    return a.args.size() == 1 && a.args[0] != q.object && part_concepts.contains(a.predicate);
  };
  // Lower is better.
  auto rank = [&](const std::set<int>& s) {
    const bool has_direct = s.contains(direct);
    const bool has_part = std::any_of(s.begin(), s.end(), is_part_ev);
    double strength = 0.0;
    for (int v : s) strength += evidence_strength(g, v);
    return std::make_tuple(has_direct ? 1 : 0, has_part ? 0 : 1, s.size(), -strength);
  };
  // Best sufficient subset of `pool`, every subset tried.
  auto exhaustive = [&](const std::vector<int>& pool) -> std::optional<std::set<int>> {
    std::optional<std::set<int>> best;
    const std::uint32_t n = static_cast<std::uint32_t>(pool.size());
    std::vector<std::uint32_t> masks(std::size_t{1} << n);
    std::iota(masks.begin(), masks.end(), 0u);
    std::stable_sort(masks.begin(), masks.end(),
                     [](std::uint32_t a, std::uint32_t b) { return std::popcount(a) < std::popcount(b); });
    std::vector<std::uint32_t> found;
    for (auto mask : masks) {
      if (mask == 0) continue;
      // A superset of a sufficient set is never minimal.
      if (std::any_of(found.begin(), found.end(), [&](std::uint32_t f) { return (f & mask) == f; })) continue;
      std::set<int> s;
      for (std::uint32_t i = 0; i < n; ++i)
        if (mask >> i & 1u) s.insert(pool[i]);
      if (!search.sufficient(s)) continue;
      found.push_back(mask);
      if (!best || rank(s) < rank(*best)) best = s;
    }
    return best;
  };

  std::optional<std::set<int>> chosen;
  if (all.size() <= opts.exhaustive_limit) {
    chosen = exhaustive(all);
  } else {
    // Pools in order of preference: evidence about other vertices only, then
    // everything but the answer's own evidence, then everything.
    std::vector<int> off_object, without_direct;
    for (int v : all) {
      if (v != direct) without_direct.push_back(v);
      const Atom a = evidence_subject(g, v);
      if (std::find(a.args.begin(), a.args.end(), q.object) == a.args.end() || a.args.size() > 1)
        off_object.push_back(v);
    }
    for (const auto* pool : {&off_object, &without_direct, &all}) {
      std::set<int> s;
      for (int v : *pool) {
        s.insert(v);
        if (search.sufficient(s)) break;
      }
      if (!search.sufficient(s)) continue;
      // Weakest first; drop whatever is not needed.
      std::vector<int> members(s.begin(), s.end());
      std::stable_sort(members.begin(), members.end(),
                       [&](int a, int b) { return evidence_strength(g, a) < evidence_strength(g, b); });
      for (int v : members) {
        auto t = s;
        t.erase(v);
        if (!t.empty() && search.sufficient(t)) s = std::move(t);
      }
      chosen = s;
      break;
    }
    if (chosen && chosen->size() <= opts.exhaustive_limit)
      chosen = exhaustive(std::vector<int>(chosen->begin(), chosen->end()));
  }
  if (!chosen) return std::nullopt;

  SufficientReason r;
  r.evidence.assign(chosen->begin(), chosen->end());
  std::stable_sort(r.evidence.begin(), r.evidence.end(),
                   [&](int a, int b) { return evidence_strength(g, a) > evidence_strength(g, b); });
  r.answer = q.answer;
  r.object = q.object;
  r.strength = search.marginal(*chosen);
  return r;
}

// The one part instance an explanation cites.
struct CitedPart {
  std::string part;
  std::string vertex;
  RegionRef ref;
  int evidence_var = -1;
};

// Strongest positive evidence for one of `parts` on a part vertex; direct
// perceptions of the probe object are never cited. None when the reason has
// no such evidence.
inline std::optional<CitedPart> cite_part(const FactorGraph& g, const SufficientReason& r, const Lexicon& lex,
                                          const SceneGraph& sg, const std::set<std::string>& parts) {
  for (int ev : r.evidence) {  // strongest first
    const Atom a = evidence_subject(g, ev);
    if (a.args.size() != 1 || a.args[0] == r.object || !parts.contains(a.predicate)) continue;
    if (!lex.knows_concept(a.predicate) || lex.concept_by_id(a.predicate).kind != ConceptKind::part_type) continue;
    bool positive = false;
    for (const auto& f : g.factors)
      if (f.kind == FactorKind::evidence && f.vars[1] == ev) positive = f.table[3] > f.table[2];
    if (!positive) continue;
    const SceneVertex* v = nullptr;
    for (const auto& x : sg.vertices)
      if (x.id == a.args[0]) v = &x;
    if (v == nullptr || v->ref.region_id.empty())
      throw ContractError("cited variable " + a.str() + " has no region reference");
    return CitedPart{a.predicate, v->id, v->ref, ev};
  }
  return std::nullopt;
}

}  // namespace xil
