#pragma once

// Probability-weighted normal logic programs compiled from scene graphs and
// the KB, their factor-graph translation, loopy belief propagation, and an
// exact enumeration oracle.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "xil/errors.hpp"
#include "xil/logic.hpp"
#include "xil/memory.hpp"
#include "xil/perception.hpp"

namespace xil {

inline constexpr double kDefaultUd = 0.99;
inline constexpr double kDefaultUa = 0.99;
inline constexpr double kWeightClamp = 1e-6;
inline constexpr const char* kEvidencePrefix = "ev_";
inline constexpr const char* kConsPrefix = "cons_";
inline constexpr std::size_t kMaxClusterScope = 12;  // variables in one merged rule factor

// ---------------------------------------------------------------------------
// Programs

struct Atom {
  std::string predicate;
  std::vector<std::string> args;
  auto operator<=>(const Atom&) const = default;

  std::string str() const {
    std::string s = predicate + "(";
    for (std::size_t i = 0; i < args.size(); ++i) s += (i ? "," : "") + args[i];
    return s + ")";
  }
};

struct BodyLiteral {
  Atom atom;
  bool negated = false;  // default negation
  bool operator==(const BodyLiteral&) const = default;
};

enum class Partition { visual, knowledge };

struct WeightedRule {
  double weight = 1.0;
  std::optional<Atom> head;  // none: integrity constraint
  std::vector<BodyLiteral> body;
  Partition partition = Partition::visual;
  bool weighted = true;  // false for definitional rules written without a weight
  bool operator==(const WeightedRule&) const = default;
};

struct WeightedProgram {
  std::vector<WeightedRule> rules;

  void append(const WeightedProgram& o) { rules.insert(rules.end(), o.rules.begin(), o.rules.end()); }
  std::size_t size() const { return rules.size(); }
  bool empty() const { return rules.empty(); }
};

inline std::string format_weight(double w) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, w);
  return std::string(buf, end);
}

inline std::string to_string(const WeightedRule& r) {
  std::string s;
  if (r.weighted) s += format_weight(r.weight) + " :: ";
  if (r.head) s += r.head->str();
  if (!r.body.empty()) {
    s += r.head ? " <- " : "<- ";
    for (std::size_t i = 0; i < r.body.size(); ++i) {
      if (i) s += ", ";
      if (r.body[i].negated) s += "not ";
      s += r.body[i].atom.str();
    }
  }
  return s + ".";
}

inline std::string to_string(const WeightedProgram& p) {
  std::string s;
  std::optional<Partition> current;
  for (const auto& r : p.rules) {
    if (r.partition != current) {
      s += r.partition == Partition::visual ? "% visual\n" : "% knowledge\n";
      current = r.partition;
    }
    s += to_string(r) + "\n";
  }
  return s;
}

namespace detail {

class ProgramReader {
 public:
  explicit ProgramReader(std::string_view s, std::size_t offset) : s_(s), offset_(offset) {}

  WeightedRule rule(Partition partition) {
    WeightedRule r;
    r.partition = partition;
    skip_ws();
    // Optional "w ::" prefix.
    const std::size_t save = i_;
    double w = 0;
    auto [ptr, ec] = std::from_chars(s_.data() + i_, s_.data() + s_.size(), w);
    if (ec == std::errc()) {
      i_ = static_cast<std::size_t>(ptr - s_.data());
      skip_ws();
      if (at("::")) {
        i_ += 2;
        r.weight = w;
        r.weighted = true;
      } else {
        i_ = save;
        r.weighted = false;
      }
    } else {
      r.weighted = false;
    }
    skip_ws();
    if (!at("<-")) r.head = atom();
    skip_ws();
    if (at("<-")) {
      i_ += 2;
      do {
        skip_ws();
        BodyLiteral b;
        if (at("not ")) {
          i_ += 4;
          b.negated = true;
          skip_ws();
        }
        b.atom = atom();
        r.body.push_back(std::move(b));
        skip_ws();
      } while (at(",") && ++i_);
    }
    skip_ws();
    expect(".");
    skip_ws();
    if (i_ != s_.size()) fail("trailing input after rule");
    if (!r.head && r.body.empty()) fail("empty rule");
    if (r.weight < 0.0 || r.weight > 1.0) fail("weight outside [0,1]");
    return r;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, offset_ + i_); }
  bool at(std::string_view lit) const { return s_.substr(i_, lit.size()) == lit; }
  void expect(std::string_view lit) {
    if (!at(lit)) fail("expected '" + std::string(lit) + "'");
    i_ += lit.size();
  }
  void skip_ws() {
    while (i_ < s_.size() && (s_[i_] == ' ' || s_[i_] == '\t' || s_[i_] == '\r')) ++i_;
  }
  std::string ident() {
    const std::size_t start = i_;
    while (i_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[i_])) || s_[i_] == '_')) ++i_;
    if (i_ == start) fail("expected identifier");
    return std::string(s_.substr(start, i_ - start));
  }
  Atom atom() {
    Atom a;
    a.predicate = ident();
    expect("(");
    skip_ws();
    a.args.push_back(ident());
    skip_ws();
    while (at(",")) {
      ++i_;
      skip_ws();
      a.args.push_back(ident());
      skip_ws();
    }
    expect(")");
    return a;
  }

  std::string_view s_;
  std::size_t offset_;
  std::size_t i_ = 0;
};

}  // namespace detail

// One rule per line; blank lines ignored; "% knowledge" / "% visual" switch
// the partition tag of subsequent rules; other "%" lines are comments.
inline WeightedProgram parse_program(std::string_view text) {
  WeightedProgram p;
  Partition part = Partition::visual;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    const auto first = line.find_first_not_of(" \t\r");
    if (first != std::string_view::npos) {
      if (line[first] == '%') {
        if (line.find("knowledge") != std::string_view::npos) part = Partition::knowledge;
        else if (line.find("visual") != std::string_view::npos) part = Partition::visual;
      } else {
        p.rules.push_back(detail::ProgramReader(line, pos).rule(part));
      }
    }
    pos = nl + 1;
  }
  return p;
}

inline Atom evidence_atom(const Atom& a) { return Atom{kEvidencePrefix + a.predicate, a.args}; }

inline void append_evidence_fragment(WeightedProgram& prog, const Atom& a, double p) {
  prog.rules.push_back({0.5, a, {}, Partition::visual, true});
  prog.rules.push_back({p, evidence_atom(a), {{a, false}}, Partition::visual, true});
  prog.rules.push_back({1.0 - p, evidence_atom(a), {{a, true}}, Partition::visual, true});
}

// Three rules per (object, concept) belief: a uniform prior and the two
// likelihood rules for the observed evidence atom.
inline WeightedProgram compile_visual(const SceneGraph& sg) {
  WeightedProgram prog;
  for (const auto& v : sg.vertices)
    for (const auto& [concept_, p] : v.beliefs) {
      if (p < 0.0 || p > 1.0) throw ContractError("belief outside [0,1]");
      append_evidence_fragment(prog, Atom{concept_, {v.id}}, p);
    }
  for (const auto& [pair, rels] : sg.edges)
    for (const auto& [concept_, p] : rels) append_evidence_fragment(prog, Atom{concept_, {pair.first, pair.second}}, p);
  return prog;
}

inline Atom cons_atom(const std::string& part, const std::string& object) {
  return Atom{kConsPrefix + part, {object}};
}

// Deductive and abductive constraints for the KB grounded on the target
// object. Entries sharing a consequent (same part concept) share one
// auxiliary atom cons_<part>(o), defined as the disjunction over the
// groundings of the skolem term.
inline WeightedProgram compile_kb(const KnowledgeBase& kb, const SceneGraph& sg, double u_d = kDefaultUd,
                                  double u_a = kDefaultUa) {
  WeightedProgram prog;
  if (kb.empty() || sg.vertices.empty()) return prog;
  const std::string& o = sg.vertices.front().id;

  std::map<std::string, std::vector<std::string>> wholes_by_part;  // Cons class -> antecedents
  std::vector<std::string> part_order;
  for (const auto& e : kb.entries()) {
    const auto part = generic_part(e.rule);
    if (!wholes_by_part.contains(part)) part_order.push_back(part);
    wholes_by_part[part].push_back(generic_whole(e.rule));
  }
  for (const auto& part : part_order) {
    const Atom cons = cons_atom(part, o);
    // Definition: one rule per grounding of the skolem term.
    const auto candidates = sg.candidates_for(part);
    const auto& representative = [&]() -> const Prop& {
      for (const auto& e : kb.entries())
        if (generic_part(e.rule) == part) return e.rule;
      throw ContractError("unreachable");
    }();
    for (const auto& g : ground_generic(representative, o, candidates)) {
      WeightedRule def{1.0, cons, {}, Partition::knowledge, false};
      for (const auto& lit : g.consequent) {
        Atom a{lit.predicate, {}};
        for (const auto& t : lit.args) a.args.push_back(std::get<Constant>(t).id);
        def.body.push_back({a, lit.negated});
      }
      prog.rules.push_back(std::move(def));
    }
    for (const auto& whole : wholes_by_part[part])
      prog.rules.push_back({u_d, std::nullopt, {{Atom{whole, {o}}, false}, {cons, true}}, Partition::knowledge, true});
    WeightedRule abd{u_a, std::nullopt, {{cons, false}}, Partition::knowledge, true};
    for (const auto& whole : wholes_by_part[part]) abd.body.push_back({Atom{whole, {o}}, true});
    prog.rules.push_back(std::move(abd));
  }
  return prog;
}

// ---------------------------------------------------------------------------
// Factor graphs

enum class VarKind { membership, evidence, aux };
enum class FactorKind { prior, evidence, rule, aggregation };

struct FgVariable {
  std::string name;
  VarKind kind = VarKind::membership;
  std::optional<bool> observed;
};

// Table over the factor's variables; bit i of the index is the value of
// vars[i].
struct FgFactor {
  FactorKind kind = FactorKind::rule;
  std::vector<int> vars;
  std::vector<double> table;

  double value(std::uint32_t index) const { return table[index]; }
};

struct FactorGraph {
  std::vector<FgVariable> variables;
  std::vector<FgFactor> factors;
  std::map<std::string, int> index;

  int find(const std::string& name) const {
    auto it = index.find(name);
    return it == index.end() ? -1 : it->second;
  }

  int add_variable(const std::string& name, VarKind kind) {
    auto [it, fresh] = index.try_emplace(name, static_cast<int>(variables.size()));
    if (fresh) variables.push_back({name, kind, std::nullopt});
    return it->second;
  }

  // Evidence variables together with the membership variable each is tied to.
  std::vector<std::pair<int, int>> evidence_links() const {
    std::vector<std::pair<int, int>> out;
    for (const auto& f : factors)
      if (f.kind == FactorKind::evidence) out.emplace_back(f.vars[1], f.vars[0]);
    return out;
  }
};

inline double clamp_weight(double w) { return std::clamp(w, kWeightClamp, 1.0 - kWeightClamp); }

// True when the variable/factor incidence graph has no cycle.
inline bool is_forest(const FactorGraph& g) {
  const std::size_t nv = g.variables.size();
  std::vector<std::size_t> parent(nv + g.factors.size());
  std::iota(parent.begin(), parent.end(), 0);
  std::function<std::size_t(std::size_t)> root = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t f = 0; f < g.factors.size(); ++f)
    for (int v : g.factors[f].vars) {
      const auto a = root(nv + f), b = root(static_cast<std::size_t>(v));
      if (a == b) return false;
      parent[a] = b;
    }
  return true;
}

namespace detail {

inline FgFactor make_table(FactorKind kind, std::vector<int> vars,
                           const std::function<double(std::uint32_t)>& fn) {
  FgFactor f;
  f.kind = kind;
  f.vars = std::move(vars);
  f.table.resize(std::size_t{1} << f.vars.size());
  for (std::uint32_t i = 0; i < f.table.size(); ++i) f.table[i] = fn(i);
  return f;
}

inline bool bit(std::uint32_t idx, std::size_t i) { return (idx >> i) & 1u; }

// Multiplies factors whose scope is contained in another rule factor's scope
// into it, which removes the short cycles between the deductive and
// abductive constraints of a consequent class.
inline void absorb_rule_factors(FactorGraph& g) {
  std::vector<bool> gone(g.factors.size(), false);
  for (std::size_t a = 0; a < g.factors.size(); ++a) {
    if (g.factors[a].kind != FactorKind::rule) continue;
    for (std::size_t b = 0; b < g.factors.size(); ++b) {
      if (a == b || gone[b] || g.factors[b].kind != FactorKind::rule) continue;
      auto& small = g.factors[a];
      auto& big = g.factors[b];
      if (small.vars.size() > big.vars.size()) continue;
      if (small.vars.size() == big.vars.size() && a < b) continue;
      std::vector<int> pos;
      for (int v : small.vars) {
        auto it = std::find(big.vars.begin(), big.vars.end(), v);
        if (it == big.vars.end()) break;
        pos.push_back(static_cast<int>(it - big.vars.begin()));
      }
      if (pos.size() != small.vars.size()) continue;
      for (std::uint32_t i = 0; i < big.table.size(); ++i) {
        std::uint32_t j = 0;
        for (std::size_t k = 0; k < pos.size(); ++k) j |= static_cast<std::uint32_t>(bit(i, pos[k])) << k;
        big.table[i] *= small.table[j];
      }
      gone[a] = true;
      break;
    }
  }
  std::vector<FgFactor> kept;
  for (std::size_t i = 0; i < g.factors.size(); ++i)
    if (!gone[i]) kept.push_back(std::move(g.factors[i]));
  g.factors = std::move(kept);
}


// Factors of the 2-core of the incidence graph, i.e. those on or between
// cycles.
inline std::vector<bool> cyclic_factors(const FactorGraph& g) {
  const std::size_t nv = g.variables.size(), nf = g.factors.size();
  std::vector<std::vector<std::size_t>> adj(nv + nf);
  for (std::size_t f = 0; f < nf; ++f)
    for (int v : g.factors[f].vars) {
      adj[nv + f].push_back(static_cast<std::size_t>(v));
      adj[static_cast<std::size_t>(v)].push_back(nv + f);
    }
  std::vector<std::size_t> degree(nv + nf);
  std::vector<bool> removed(nv + nf, false);
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < adj.size(); ++i) {
    degree[i] = adj[i].size();
    if (degree[i] <= 1) stack.push_back(i);
  }
  while (!stack.empty()) {
    const auto i = stack.back();
    stack.pop_back();
    if (removed[i]) continue;
    removed[i] = true;
    for (auto j : adj[i])
      if (!removed[j] && --degree[j] <= 1) stack.push_back(j);
  }
  std::vector<bool> out(nf);
  for (std::size_t f = 0; f < nf; ++f) out[f] = !removed[nv + f];
  return out;
}

// Multiplies rule and aggregation factors on cycles together, smallest merged
// scope first, until the graph is a forest or no merge fits under `cap`
// variables. Evidence and prior factors are left alone so that evidence can
// still be dropped one variable at a time.
inline void cluster_rule_factors(FactorGraph& g, std::size_t cap) {
  auto structural = [](const FgFactor& f) { return f.kind == FactorKind::rule || f.kind == FactorKind::aggregation; };
  while (!is_forest(g)) {
    const auto cyclic = cyclic_factors(g);
    std::size_t best_a = 0, best_b = 0, best_size = cap + 1;
    for (std::size_t a = 0; a < g.factors.size(); ++a) {
      if (!cyclic[a] || !structural(g.factors[a])) continue;
      for (std::size_t b = a + 1; b < g.factors.size(); ++b) {
        if (!cyclic[b] || !structural(g.factors[b])) continue;
        const auto& va = g.factors[a].vars;
        const auto& vb = g.factors[b].vars;
        std::size_t shared = 0;
        for (int v : vb) shared += std::find(va.begin(), va.end(), v) != va.end();
        if (shared == 0) continue;
        const std::size_t size = va.size() + vb.size() - shared;
        if (size < best_size) {
          best_size = size;
          best_a = a;
          best_b = b;
        }
      }
    }
    if (best_size > cap) return;
    const FgFactor& fa = g.factors[best_a];
    const FgFactor& fb = g.factors[best_b];
    std::vector<int> vars = fa.vars;
    for (int v : fb.vars)
      if (std::find(vars.begin(), vars.end(), v) == vars.end()) vars.push_back(v);
    auto slot = [&](int v) { return static_cast<std::size_t>(std::find(vars.begin(), vars.end(), v) - vars.begin()); };
    auto project = [&](const FgFactor& f, std::uint32_t i) {
      std::uint32_t j = 0;
      for (std::size_t k = 0; k < f.vars.size(); ++k) j |= static_cast<std::uint32_t>(bit(i, slot(f.vars[k]))) << k;
      return f.table[j];
    };
    FgFactor merged = make_table(FactorKind::rule, vars, [&](std::uint32_t i) { return project(fa, i) * project(fb, i); });
    g.factors[best_a] = std::move(merged);
    g.factors.erase(g.factors.begin() + static_cast<std::ptrdiff_t>(best_b));
  }
}
}  // namespace detail

// Evidence fragments become pairwise evidence factors with the evidence node
// observed true; probabilistic facts become prior factors; definitional rules
// become deterministic AND/OR aggregation factors; constraints become factors
// worth 1-w on violating assignments. Atoms with no defining rule and no prior
// are false.
inline FactorGraph build_factor_graph(const WeightedProgram& program, std::size_t cluster_cap = kMaxClusterScope) {
  FactorGraph g;
  std::map<std::string, std::pair<std::optional<double>, std::optional<double>>> ev;  // ev atom -> (p|X, p|not X)
  std::map<std::string, std::string> ev_target;
  std::map<std::string, double> priors;
  std::map<std::string, std::vector<const WeightedRule*>> defs;
  std::vector<const WeightedRule*> constraints;
  std::vector<std::string> order;  // first-appearance order of atoms
  std::set<std::string> seen;
  auto note = [&](const Atom& a) {
    if (seen.insert(a.str()).second) order.push_back(a.str());
  };

  for (const auto& r : program.rules) {
    if (r.head) note(*r.head);
    for (const auto& b : r.body) note(b.atom);
    if (!r.head) {
      constraints.push_back(&r);
      continue;
    }
    const std::string h = r.head->str();
    if (r.head->predicate.starts_with(kEvidencePrefix) && r.body.size() == 1 && r.weighted) {
      auto& slot = ev[h];
      (r.body[0].negated ? slot.second : slot.first) = r.weight;
      ev_target[h] = r.body[0].atom.str();
      continue;
    }
    if (r.body.empty()) {
      priors[h] = r.weight;
      continue;
    }
    if (r.weighted && r.weight != 1.0)
      throw StructuralError("probabilistic rule with a body is outside the supported fragment: " + to_string(r));
    defs[h].push_back(&r);
  }

  for (const auto& name : order) {
    VarKind kind = VarKind::membership;
    if (ev.contains(name)) kind = VarKind::evidence;
    else if (!priors.contains(name)) kind = VarKind::aux;
    const int v = g.add_variable(name, kind);
    if (kind == VarKind::evidence) g.variables[v].observed = true;
  }

  for (const auto& name : order) {
    const int v = g.find(name);
    if (auto it = priors.find(name); it != priors.end()) {
      const double w = it->second;
      g.factors.push_back(detail::make_table(FactorKind::prior, {v}, [&](std::uint32_t i) { return i ? w : 1.0 - w; }));
    }
    if (auto it = ev.find(name); it != ev.end()) {
      if (!it->second.first || !it->second.second)
        throw StructuralError("evidence atom " + name + " lacks one of its two likelihood rules");
      const double p = clamp_weight(*it->second.first);
      const double q = clamp_weight(*it->second.second);
      const int x = g.find(ev_target[name]);
      g.factors.push_back(detail::make_table(FactorKind::evidence, {x, v}, [&](std::uint32_t i) {
        const bool xv = detail::bit(i, 0), e = detail::bit(i, 1);
        const double pe = xv ? p : q;
        return e ? pe : 1.0 - pe;
      }));
    }
    if (auto it = defs.find(name); it != defs.end()) {
      // Each body becomes one disjunct; multi-literal bodies get an AND aux.
      std::vector<std::pair<int, bool>> disjuncts;  // (var, negated)
      int k = 0;
      for (const auto* r : it->second) {
        if (r->body.size() == 1 || it->second.size() == 1) {
          if (it->second.size() == 1) {
            std::vector<int> vars{v};
            std::vector<bool> neg;
            for (const auto& b : r->body) {
              vars.push_back(g.find(b.atom.str()));
              neg.push_back(b.negated);
            }
            g.factors.push_back(detail::make_table(FactorKind::aggregation, vars, [&](std::uint32_t i) {
              bool all = true;
              for (std::size_t j = 0; j < neg.size(); ++j) all = all && (detail::bit(i, j + 1) != neg[j]);
              return detail::bit(i, 0) == all ? 1.0 : 0.0;
            }));
            break;
          }
          disjuncts.emplace_back(g.find(r->body[0].atom.str()), r->body[0].negated);
          continue;
        }
        const int aux = g.add_variable(name + "#" + std::to_string(++k), VarKind::aux);
        std::vector<int> vars{aux};
        std::vector<bool> neg;
        for (const auto& b : r->body) {
          vars.push_back(g.find(b.atom.str()));
          neg.push_back(b.negated);
        }
        g.factors.push_back(detail::make_table(FactorKind::aggregation, vars, [&](std::uint32_t i) {
          bool all = true;
          for (std::size_t j = 0; j < neg.size(); ++j) all = all && (detail::bit(i, j + 1) != neg[j]);
          return detail::bit(i, 0) == all ? 1.0 : 0.0;
        }));
        disjuncts.emplace_back(aux, false);
      }
      if (!disjuncts.empty()) {
        std::vector<int> vars{v};
        for (const auto& d : disjuncts) vars.push_back(d.first);
        g.factors.push_back(detail::make_table(FactorKind::aggregation, vars, [&](std::uint32_t i) {
          bool any = false;
          for (std::size_t j = 0; j < disjuncts.size(); ++j) any = any || (detail::bit(i, j + 1) != disjuncts[j].second);
          return detail::bit(i, 0) == any ? 1.0 : 0.0;
        }));
      }
    } else if (g.variables[v].kind == VarKind::aux) {
      g.factors.push_back(detail::make_table(FactorKind::aggregation, {v}, [](std::uint32_t i) { return i ? 0.0 : 1.0; }));
    }
  }

  for (const auto* r : constraints) {
    const double w = clamp_weight(r->weight);
    std::vector<int> vars;
    std::vector<bool> neg;
    for (const auto& b : r->body) {
      vars.push_back(g.find(b.atom.str()));
      neg.push_back(b.negated);
    }
    g.factors.push_back(detail::make_table(FactorKind::rule, vars, [&](std::uint32_t i) {
      bool violated = true;
      for (std::size_t j = 0; j < neg.size(); ++j) violated = violated && (detail::bit(i, j) != neg[j]);
      return violated ? 1.0 - w : 1.0;
    }));
  }
  detail::absorb_rule_factors(g);
  if (cluster_cap > 0) detail::cluster_rule_factors(g, cluster_cap);
  return g;
}

// Drops the evidence factors of every evidence variable not in `keep`.
inline FactorGraph restrict_evidence(const FactorGraph& g, const std::set<int>& keep) {
  FactorGraph out = g;
  std::erase_if(out.factors, [&](const FgFactor& f) {
    return f.kind == FactorKind::evidence && !keep.contains(f.vars[1]);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Inference

struct BpSettings {
  int max_iters = 200;
  double damping = 0.5;
  double tolerance = 1e-6;
};

struct Marginals {
  std::map<std::string, double> p;  // P(var = true), unobserved variables
  bool converged = true;
  int iterations = 0;

  double at(const std::string& name) const {
    auto it = p.find(name);
    if (it == p.end()) throw LookupError("no marginal for '" + name + "'");
    return it->second;
  }
};

// Synchronous sum-product. Damping applies to loopy graphs only; on forests
// the undamped schedule reaches the exact fixed point after a number of sweeps
// equal to the diameter.
inline Marginals run_bp(const FactorGraph& g, const BpSettings& s = {}) {
  using Msg = std::array<double, 2>;
  const std::size_t nf = g.factors.size();
  const double damping = is_forest(g) ? 0.0 : s.damping;

  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> var_edges(g.variables.size());  // (factor, slot)
  std::vector<std::vector<Msg>> f2v(nf), v2f(nf);
  for (std::size_t f = 0; f < nf; ++f) {
    const auto n = g.factors[f].vars.size();
    f2v[f].assign(n, Msg{1.0, 1.0});
    v2f[f].assign(n, Msg{1.0, 1.0});
    for (std::size_t k = 0; k < n; ++k) var_edges[g.factors[f].vars[k]].emplace_back(f, k);
  }
  auto normalize = [](Msg& m) {
    const double z = m[0] + m[1];
    if (z > 0.0) {
      m[0] /= z;
      m[1] /= z;
    } else {
      m = {0.5, 0.5};
    }
  };

  Marginals out;
  out.converged = false;
  std::vector<std::vector<Msg>> next(nf);
  std::vector<double> suffix;
  for (int it = 1; it <= std::max(1, s.max_iters); ++it) {
    // Variable -> factor.
    for (std::size_t v = 0; v < g.variables.size(); ++v) {
      const auto& obs = g.variables[v].observed;
      for (const auto& [f, k] : var_edges[v]) {
        Msg m{1.0, 1.0};
        if (obs) {
          m = *obs ? Msg{0.0, 1.0} : Msg{1.0, 0.0};
        } else {
          for (const auto& [f2, k2] : var_edges[v]) {
            if (f2 == f && k2 == k) continue;
            m[0] *= f2v[f2][k2][0];
            m[1] *= f2v[f2][k2][1];
          }
          normalize(m);
        }
        v2f[f][k] = m;
      }
    }
    // Factor -> variable, skipping zero table entries.
    double residual = 0.0;
    for (std::size_t f = 0; f < nf; ++f) {
      const auto& fac = g.factors[f];
      const std::size_t n = fac.vars.size();
      next[f].assign(n, Msg{0.0, 0.0});
      suffix.resize(n + 1);
      for (std::uint32_t i = 0; i < fac.table.size(); ++i) {
        const double t = fac.table[i];
        if (t == 0.0) continue;
        // Products of the incoming messages after slot k, then a running
        // prefix gives the product over every slot but k.
        suffix[n] = 1.0;
        for (std::size_t k = n; k-- > 0;) suffix[k] = suffix[k + 1] * v2f[f][k][detail::bit(i, k)];
        double prefix = t;
        for (std::size_t k = 0; k < n; ++k) {
          const bool b = detail::bit(i, k);
          next[f][k][b] += prefix * suffix[k + 1];
          prefix *= v2f[f][k][b];
        }
      }
      for (std::size_t k = 0; k < n; ++k) {
        Msg m = next[f][k];
        normalize(m);
        if (damping > 0.0) {
          m[0] = (1.0 - damping) * m[0] + damping * f2v[f][k][0];
          m[1] = (1.0 - damping) * m[1] + damping * f2v[f][k][1];
          normalize(m);
        }
        residual = std::max({residual, std::abs(m[0] - f2v[f][k][0]), std::abs(m[1] - f2v[f][k][1])});
        f2v[f][k] = m;
      }
    }
    out.iterations = it;
    if (residual < s.tolerance) {
      out.converged = true;
      break;
    }
  }
  for (std::size_t v = 0; v < g.variables.size(); ++v) {
    if (g.variables[v].observed) continue;
    Msg b{1.0, 1.0};
    for (const auto& [f, k] : var_edges[v]) {
      b[0] *= f2v[f][k][0];
      b[1] *= f2v[f][k][1];
      normalize(b);
    }
    out.p[g.variables[v].name] = b[1];
  }
  return out;
}

inline constexpr std::size_t kMaxEnumerationVars = 25;

// Enumerates every assignment of each connected component of unobserved
// variables. Refuses components larger than kMaxEnumerationVars.
inline Marginals exact_marginals(const FactorGraph& g) {
  const std::size_t nv = g.variables.size();
  std::vector<std::size_t> parent(nv);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<std::size_t(std::size_t)> root = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& f : g.factors) {
    int first = -1;
    for (int v : f.vars) {
      if (g.variables[v].observed) continue;
      if (first < 0) first = v;
      else parent[root(v)] = root(first);
    }
  }
  std::map<std::size_t, std::vector<int>> comps;
  for (std::size_t v = 0; v < nv; ++v)
    if (!g.variables[v].observed) comps[root(v)].push_back(static_cast<int>(v));
  std::vector<std::vector<std::size_t>> comp_factors(nv);
  std::vector<std::size_t> free_factors;
  for (std::size_t f = 0; f < g.factors.size(); ++f) {
    int any = -1;
    for (int v : g.factors[f].vars)
      if (!g.variables[v].observed) any = v;
    if (any >= 0) comp_factors[root(any)].push_back(f);
  }

  Marginals out;
  std::vector<int> slot(nv, -1);
  for (const auto& [r, vars] : comps) {
    if (vars.size() > kMaxEnumerationVars)
      throw RefusalError("exact enumeration refused: component with " + std::to_string(vars.size()) + " variables");
    for (std::size_t i = 0; i < vars.size(); ++i) slot[vars[i]] = static_cast<int>(i);
    const auto& facs = comp_factors[r];
    std::vector<double> mass(vars.size(), 0.0);
    double total = 0.0;
    const std::uint64_t worlds = std::uint64_t{1} << vars.size();
    for (std::uint64_t w = 0; w < worlds; ++w) {
      double weight = 1.0;
      for (std::size_t fi = 0; fi < facs.size() && weight != 0.0; ++fi) {
        const auto& f = g.factors[facs[fi]];
        std::uint32_t idx = 0;
        for (std::size_t k = 0; k < f.vars.size(); ++k) {
          const int v = f.vars[k];
          const bool val = g.variables[v].observed ? *g.variables[v].observed : ((w >> slot[v]) & 1u);
          idx |= static_cast<std::uint32_t>(val) << k;
        }
        weight *= f.table[idx];
      }
      if (weight == 0.0) continue;
      total += weight;
      for (std::size_t i = 0; i < vars.size(); ++i)
        if ((w >> i) & 1u) mass[i] += weight;
    }
    if (total <= 0.0) throw ContractError("factor graph has no world with positive weight");
    for (std::size_t i = 0; i < vars.size(); ++i) out.p[g.variables[vars[i]].name] = mass[i] / total;
  }
  return out;
}

struct ProbeAnswer {
  std::string answer;
  double probability = 0.0;
};

// Argmax over candidate concepts for `object`; ties go to the
// lexicographically smallest id.
inline ProbeAnswer answer_probe(const Marginals& m, std::vector<std::string> candidates, const std::string& object) {
  if (candidates.empty()) throw ContractError("answer_probe needs at least one candidate");
  std::sort(candidates.begin(), candidates.end());
  ProbeAnswer best{candidates.front(), -1.0};
  for (const auto& c : candidates) {
    auto it = m.p.find(Atom{c, {object}}.str());
    const double p = it == m.p.end() ? 0.5 : it->second;
    if (p > best.probability) best = {c, p};
  }
  return best;
}

}  // namespace xil
