#pragma once

// Formal semantic units exchanged between the dialogue, memory and
// reasoning layers: concepts, terms, literals, PROPs and QUESes.

#include <atomic>
#include <cctype>
#include <compare>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "xil/errors.hpp"

namespace xil {

enum class ConceptKind { whole_type, part_type, relation };

inline std::string_view to_string(ConceptKind kind) {
  switch (kind) {
    case ConceptKind::whole_type: return "whole";
    case ConceptKind::part_type: return "part";
    case ConceptKind::relation: return "relation";
  }
  return "?";
}

inline ConceptKind concept_kind_from_string(std::string_view s) {
  if (s == "whole") return ConceptKind::whole_type;
  if (s == "part") return ConceptKind::part_type;
  if (s == "relation") return ConceptKind::relation;
  throw StructuralError("unknown concept kind '" + std::string(s) + "'");
}

struct Concept {
  std::string id;
  int arity = 1;
  ConceptKind kind = ConceptKind::part_type;

  Concept() = default;
  Concept(std::string id_, int arity_, ConceptKind kind_)
      : id(std::move(id_)), arity(arity_), kind(kind_) {
    if (arity != 1 && arity != 2) throw StructuralError("concept arity must be 1 or 2");
    if ((kind == ConceptKind::relation) != (arity == 2))
      throw StructuralError("relations are binary and types unary: " + id);
  }

  bool operator==(const Concept&) const = default;
};

struct Constant {
  std::string id;
  auto operator<=>(const Constant&) const = default;
};

struct Variable {
  std::string name;
  auto operator<=>(const Variable&) const = default;
};

// f(x): nests exactly one level.
struct Skolem {
  std::string function;
  std::variant<Constant, Variable> argument;
  bool operator==(const Skolem&) const = default;
};

using Term = std::variant<Constant, Variable, Skolem>;

inline bool is_ground(const Term& t) { return std::holds_alternative<Constant>(t); }

struct Literal {
  std::string predicate;
  std::vector<Term> args;
  bool negated = false;
  bool operator==(const Literal&) const = default;
};

enum class Quantifier { none, generic };

struct Prop {
  Quantifier quantifier = Quantifier::none;
  std::string bound;  // quantified variable name when generic
  std::vector<Literal> antecedent;
  std::vector<Literal> consequent;
  bool operator==(const Prop&) const = default;

  bool is_generic() const { return quantifier == Quantifier::generic; }
};

// ?lambda P. P(o) & |-type(P,truck)
struct WhQuestion {
  std::string bound;
  Prop body;
  std::optional<std::string> supertype;
  bool operator==(const WhQuestion&) const = default;
};

// ?why_agt. dumpTruck(o)
struct WhyQuestion {
  std::string addressee;
  Prop body;
  bool operator==(const WhyQuestion&) const = default;
};

using Ques = std::variant<WhQuestion, WhyQuestion>;

// ---------------------------------------------------------------------------
// Construction

inline Prop make_fact(const Concept& concept_, std::span<const std::string> objects,
                      bool negated = false) {
  if (static_cast<int>(objects.size()) != concept_.arity)
    throw StructuralError("arity mismatch for " + concept_.id + ": expected " +
                          std::to_string(concept_.arity) + " got " +
                          std::to_string(objects.size()));
  Literal lit{concept_.id, {}, negated};
  for (const auto& o : objects) lit.args.emplace_back(Constant{o});
  return Prop{Quantifier::none, {}, {}, {std::move(lit)}};
}

inline Prop make_fact(const Concept& concept_, std::initializer_list<std::string> objects,
                      bool negated = false) {
  std::vector<std::string> v(objects);
  return make_fact(concept_, std::span<const std::string>(v), negated);
}

namespace detail {
inline std::atomic<unsigned long>& skolem_counter() {
  static std::atomic<unsigned long> counter{0};
  return counter;
}
}  // namespace detail

inline std::string fresh_skolem_id() { return "f" + std::to_string(++detail::skolem_counter()); }

// G x. whole(x) => have(x,f(x)) & part(f(x))
inline Prop make_generic(const Concept& whole, const Concept& part,
                         const std::string& relation = "have") {
  if (whole.arity != 1 || part.arity != 1 || whole.kind == ConceptKind::relation ||
      part.kind == ConceptKind::relation)
    throw ContractError("make_generic expects unary type concepts");
  const Variable x{"x"};
  const Skolem fx{fresh_skolem_id(), x};
  Prop p;
  p.quantifier = Quantifier::generic;
  p.bound = x.name;
  p.antecedent.push_back(Literal{whole.id, {x}, false});
  p.consequent.push_back(Literal{relation, {x, fx}, false});
  p.consequent.push_back(Literal{part.id, {fx}, false});
  return p;
}

struct Grounding {
  std::vector<Literal> antecedent;
  std::vector<Literal> consequent;
  bool operator==(const Grounding&) const = default;
};

// Substitutes the quantified variable by `whole` and every skolem term by
// each candidate in turn. One grounding per candidate.
inline std::vector<Grounding> ground_generic(const Prop& rule, const std::string& whole,
                                             std::span<const std::string> part_candidates) {
  if (!rule.is_generic()) throw ContractError("ground_generic requires a generic rule");
  auto subst = [&](const Term& t, const std::string& cand) -> Term {
    if (std::holds_alternative<Variable>(t)) return Constant{whole};
    if (std::holds_alternative<Skolem>(t)) return Constant{cand};
    return t;
  };
  auto ground = [&](const std::vector<Literal>& lits, const std::string& cand) {
    std::vector<Literal> out;
    for (const auto& l : lits) {
      Literal g{l.predicate, {}, l.negated};
      for (const auto& a : l.args) g.args.push_back(subst(a, cand));
      out.push_back(std::move(g));
    }
    return out;
  };
  std::vector<Grounding> out;
  out.reserve(part_candidates.size());
  for (const auto& c : part_candidates)
    out.push_back(Grounding{ground(rule.antecedent, c), ground(rule.consequent, c)});
  return out;
}

// Accessors for the whole--part shape produced by make_generic.
inline const std::string& generic_whole(const Prop& rule) {
  if (!rule.is_generic() || rule.antecedent.empty()) throw ContractError("not a generic rule");
  return rule.antecedent.front().predicate;
}

inline std::string generic_part(const Prop& rule) {
  if (!rule.is_generic()) throw ContractError("not a generic rule");
  for (const auto& l : rule.consequent)
    if (l.args.size() == 1) return l.predicate;
  throw ContractError("generic rule has no unary consequent");
}

// Renames skolem functions to f1, f2, ... and variables to x, y, ... in order
// of first appearance, so alpha-equivalent props become identical.
inline Prop canonicalize(const Prop& p) {
  std::map<std::string, std::string> fn, var;
  static constexpr const char* kVarNames[] = {"x", "y", "z", "u", "v", "w"};
  auto rename_var = [&](const std::string& n) {
    auto [it, fresh] = var.try_emplace(n, "");
    if (fresh) {
      auto k = var.size() - 1;
      it->second = k < 6 ? kVarNames[k] : "x" + std::to_string(k);
    }
    return it->second;
  };
  auto rename_fn = [&](const std::string& n) {
    auto [it, fresh] = fn.try_emplace(n, "");
    if (fresh) it->second = "f" + std::to_string(fn.size());
    return it->second;
  };
  auto term = [&](const Term& t) -> Term {
    if (auto* v = std::get_if<Variable>(&t)) return Variable{rename_var(v->name)};
    if (auto* s = std::get_if<Skolem>(&t)) {
      Skolem out{rename_fn(s->function), s->argument};
      if (auto* av = std::get_if<Variable>(&s->argument)) out.argument = Variable{rename_var(av->name)};
      return out;
    }
    return t;
  };
  Prop out;
  out.quantifier = p.quantifier;
  if (p.is_generic()) out.bound = rename_var(p.bound);
  for (const auto* side : {&p.antecedent, &p.consequent}) {
    auto& dst = side == &p.antecedent ? out.antecedent : out.consequent;
    for (const auto& l : *side) {
      Literal c{l.predicate, {}, l.negated};
      for (const auto& a : l.args) c.args.push_back(term(a));
      dst.push_back(std::move(c));
    }
  }
  return out;
}

inline bool alpha_equivalent(const Prop& a, const Prop& b) {
  return canonicalize(a) == canonicalize(b);
}

// ---------------------------------------------------------------------------
// Canonical text form

inline std::string to_string(const Term& t) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Constant>) {
          return v.id;
        } else if constexpr (std::is_same_v<T, Variable>) {
          return v.name;
        } else {
          std::string arg = std::visit(
              [](const auto& a) -> std::string {
                if constexpr (std::is_same_v<std::decay_t<decltype(a)>, Constant>) return a.id;
                else return a.name;
              },
              v.argument);
          return v.function + "(" + arg + ")";
        }
      },
      t);
}

inline std::string to_string(const Literal& l) {
  std::string s = l.negated ? "~" : "";
  s += l.predicate + "(";
  for (std::size_t i = 0; i < l.args.size(); ++i) {
    if (i) s += ",";
    s += to_string(l.args[i]);
  }
  return s + ")";
}

inline std::string to_string(const std::vector<Literal>& conj) {
  std::string s;
  for (std::size_t i = 0; i < conj.size(); ++i) {
    if (i) s += " & ";
    s += to_string(conj[i]);
  }
  return s;
}

inline std::string to_string(const Prop& p) {
  std::string s;
  if (p.is_generic()) s += "G " + p.bound + ". ";
  if (!p.antecedent.empty()) s += to_string(p.antecedent) + " => ";
  return s + to_string(p.consequent);
}

inline std::string to_string(const Ques& q) {
  if (auto* wh = std::get_if<WhQuestion>(&q)) {
    std::string s = "?lambda " + wh->bound + ". " + to_string(wh->body);
    if (wh->supertype) s += " & |-type(" + wh->bound + "," + *wh->supertype + ")";
    return s;
  }
  const auto& why = std::get<WhyQuestion>(q);
  return "?why_" + why.addressee + ". " + to_string(why.body);
}

namespace detail {

class PropReader {
 public:
  explicit PropReader(std::string_view text) : s_(text) {}

  Prop prop() {
    Prop p;
    if (s_.substr(i_, 2) == "G ") {
      i_ += 2;
      p.quantifier = Quantifier::generic;
      p.bound = ident();
      expect(". ");
      bound_ = p.bound;
    }
    auto first = conj();
    if (at(" => ")) {
      i_ += 4;
      p.antecedent = std::move(first);
      p.consequent = conj();
    } else {
      p.consequent = std::move(first);
    }
    return p;
  }

  void set_bound(std::string b) { bound_ = std::move(b); }
  bool at(std::string_view lit) const { return s_.substr(i_, lit.size()) == lit; }
  bool done() const { return i_ == s_.size(); }
  std::size_t pos() const { return i_; }

  void expect(std::string_view lit) {
    if (!at(lit)) throw ParseError("expected '" + std::string(lit) + "'", i_);
    i_ += lit.size();
  }

  std::string ident() {
    std::size_t start = i_;
    while (i_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[i_])) || s_[i_] == '_' ||
                              s_[i_] == '-'))
      ++i_;
    if (i_ == start) throw ParseError("expected identifier", i_);
    return std::string(s_.substr(start, i_ - start));
  }

  std::vector<Literal> conj() {
    std::vector<Literal> out{literal()};
    while (at(" & ") && !at(" & |-type(")) {
      i_ += 3;
      out.push_back(literal());
    }
    return out;
  }

 private:
  Literal literal() {
    Literal l;
    if (at("~")) {
      l.negated = true;
      ++i_;
    }
    l.predicate = ident();
    expect("(");
    l.args.push_back(term());
    while (at(",")) {
      ++i_;
      l.args.push_back(term());
    }
    expect(")");
    return l;
  }

  Term term() {
    auto name = ident();
    if (at("(")) {
      ++i_;
      auto arg = ident();
      expect(")");
      Skolem sk{name, Constant{arg}};
      if (arg == bound_) sk.argument = Variable{arg};
      return sk;
    }
    if (!bound_.empty() && name == bound_) return Variable{name};
    return Constant{name};
  }

  std::string_view s_;
  std::size_t i_ = 0;
  std::string bound_;
};

}  // namespace detail

inline Prop parse_prop(std::string_view text) {
  detail::PropReader r(text);
  auto p = r.prop();
  if (!r.done()) throw ParseError("trailing input", r.pos());
  return p;
}

inline Ques parse_ques(std::string_view text) {
  detail::PropReader r(text);
  if (r.at("?lambda ")) {
    r.expect("?lambda ");
    WhQuestion wh;
    wh.bound = r.ident();
    r.expect(". ");
    wh.body.consequent = r.conj();
    if (r.at(" & |-type(")) {
      r.expect(" & |-type(");
      if (r.ident() != wh.bound) throw ParseError("subtype predicate must use the bound variable", r.pos());
      r.expect(",");
      wh.supertype = r.ident();
      r.expect(")");
    }
    if (!r.done()) throw ParseError("trailing input", r.pos());
    return wh;
  }
  r.expect("?why_");
  WhyQuestion why;
  why.addressee = r.ident();
  r.expect(". ");
  why.body.consequent = r.conj();
  if (!r.done()) throw ParseError("trailing input", r.pos());
  return why;
}

inline Ques make_type_question(const std::string& object, const std::string& supertype = "truck") {
  WhQuestion wh;
  wh.bound = "P";
  wh.body.consequent.push_back(Literal{"P", {Constant{object}}, false});
  wh.supertype = supertype;
  return wh;
}

inline Ques make_why_question(const std::string& addressee, const Prop& ground_body) {
  return WhyQuestion{addressee, ground_body};
}

}  // namespace xil
