#pragma once

// Simulated few-shot vision: a distance-weighted kNN concept classifier, an
// exemplar-driven part search with a mask-corruption model, and scene-graph
// construction.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xil/errors.hpp"
#include "xil/memory.hpp"
#include "xil/rng.hpp"
#include "xil/worldsim.hpp"

namespace xil {

struct PerceptionParams {
  int k = 5;
  double epsilon = 1e-6;
  int max_proposals = 3;
  // q(n) = q0 * exp(-n / tau_q), n = |positives|
  double corruption_q0 = 0.15;
  double corruption_tau = 10.0;
  double have_inside = 0.95;
  double have_outside = 0.05;
};

inline double euclidean(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw StructuralError("feature dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

// Distance-weighted kNN vote: p = sum_pos w / sum_all w over the
// k = min(K, |pos|+|neg|) nearest exemplars, w = 1/(eps + dist). Both sets
// empty gives the uninformative 0.5.
inline double knn_probability(std::span<const double> query, const ExemplarSets& sets,
                              const PerceptionParams& params = {}) {
  const std::size_t total = sets.size();
  if (total == 0) return 0.5;
  struct Hit {
    double dist;
    bool positive;
    std::size_t order;
  };
  std::vector<Hit> hits;
  hits.reserve(total);
  for (const auto& v : sets.positives) hits.push_back({euclidean(query, v), true, hits.size()});
  for (const auto& v : sets.negatives) hits.push_back({euclidean(query, v), false, hits.size()});
  const std::size_t k = std::min<std::size_t>(params.k, total);
  auto cmp = [](const Hit& a, const Hit& b) { return a.dist != b.dist ? a.dist < b.dist : a.order < b.order; };
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), cmp);
  double pos = 0.0, all = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double w = 1.0 / (params.epsilon + hits[i].dist);
    all += w;
    if (hits[i].positive) pos += w;
  }
  return pos / all;
}

// Feature vector seen through a (possibly poor) mask: the region's own
// features blended with clutter in proportion to the mask fidelity.
inline Vector features_of(const TrueScene& scene, const RegionRef& ref) {
  const Vector* base = nullptr;
  for (const auto& o : scene.objects)
    if (o.id == ref.region_id) base = &o.features;
  if (base == nullptr) {
    const auto* r = scene.find_region(ref.region_id);
    if (r == nullptr) throw LookupError("unknown region '" + ref.region_id + "'");
    base = &r->features;
  }
  if (ref.fidelity >= 1.0) return *base;
  std::uint64_t h = 1469598103934665603ULL;
  for (char ch : ref.region_id) h = (h ^ static_cast<unsigned char>(ch)) * 1099511628211ULL;
  Rng rng(derive_seed(scene.seed, {h, 0xC1u}));
  Vector out(base->size());
  const double f = std::clamp(ref.fidelity, 0.0, 1.0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f * (*base)[i] + (1.0 - f) * rng.normal(0.0, 0.7);
  return out;
}

inline bool inside_truck(const TrueScene& scene, const std::string& region_id) {
  const auto* r = scene.find_region(region_id);
  return r != nullptr && r->inside_truck;
}

// Pair feature for binary concepts: both feature vectors plus a containment
// indicator for the second region inside the first object.
inline Vector pair_features(const TrueScene& scene, const RegionRef& a, const RegionRef& b) {
  Vector v = features_of(scene, a);
  const Vector w = features_of(scene, b);
  v.insert(v.end(), w.begin(), w.end());
  v.push_back(inside_truck(scene, b.region_id) ? 1.0 : 0.0);
  return v;
}

inline double f_clf(const TrueScene& scene, std::span<const RegionRef> refs, const Concept& concept_,
                    const ExemplarSets& sets, const PerceptionParams& params = {}) {
  if (static_cast<int>(refs.size()) != concept_.arity)
    throw ContractError("f_clf: " + std::to_string(refs.size()) + " refs for arity-" +
                        std::to_string(concept_.arity) + " concept " + concept_.id);
  if (concept_.arity == 1) return knn_probability(features_of(scene, refs[0]), sets, params);
  return knn_probability(pair_features(scene, refs[0], refs[1]), sets, params);
}

struct Proposal {
  RegionRef ref;
  double score = 0.5;
  bool corrupted = false;
};

inline double corruption_probability(std::size_t positives, const PerceptionParams& p) {
  return p.corruption_q0 * std::exp(-static_cast<double>(positives) / p.corruption_tau);
}

// Part search. Regions are ranked by distance to the positive centroid, the
// best few are re-scored by the kNN classifier, and with probability
// q(|positives|) the winning mask is corrupted: either another region is
// returned in its place, or its fidelity drops below the floor.
inline std::vector<Proposal> f_seg(const TrueScene& scene, const ExemplarSets& sets,
                                   const PerceptionParams& params, Rng& rng) {
  const auto regions = scene.all_regions();
  std::vector<Proposal> out;
  if (sets.positives.empty()) {
    for (const auto* r : regions) out.push_back({RegionRef{r->id, 1.0, true}, 0.5, false});
    return out;
  }
  const std::size_t dim = sets.positives.front().size();
  Vector centroid(dim, 0.0);
  for (const auto& v : sets.positives)
    for (std::size_t i = 0; i < dim; ++i) centroid[i] += v[i] / static_cast<double>(sets.positives.size());

  std::vector<std::pair<double, const TrueRegion*>> ranked;
  for (const auto* r : regions) ranked.emplace_back(euclidean(r->features, centroid), r);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  const std::size_t keep = std::min<std::size_t>(params.max_proposals, ranked.size());
  for (std::size_t i = 0; i < keep; ++i) {
    RegionRef ref{ranked[i].second->id, 1.0, true};
    out.push_back({ref, knn_probability(ranked[i].second->features, sets, params), false});
  }
  // Re-evaluation only demotes proposals the classifier rejects; the vote
  // saturates on colour matches, so it does not reorder accepted ones.
  std::stable_partition(out.begin(), out.end(), [](const Proposal& p) { return p.score >= 0.5; });

  if (rng.bernoulli(corruption_probability(sets.positives.size(), params))) {
    Proposal& top = out.front();
    if (rng.bernoulli(0.5) && regions.size() > 1) {
      std::vector<const TrueRegion*> others;
      for (const auto* r : regions)
        if (r->id != top.ref.region_id) others.push_back(r);
      top.ref = RegionRef{others[rng.index(others.size())]->id, 1.0, true};
    } else {
      top.ref.fidelity = rng.uniform(0.0, kFidelityFloor);
    }
    top.corrupted = true;
    top.score = knn_probability(features_of(scene, top.ref), sets, params);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scene graphs

struct SceneVertex {
  std::string id;
  RegionRef ref;
  Vector features;
  std::map<std::string, double> beliefs;  // unary concept -> probability
  std::vector<std::string> searched_for;  // part concepts whose search produced this vertex
  bool corrupted = false;
};

struct SceneGraph {
  std::vector<SceneVertex> vertices;
  // (subject, object) -> binary concept -> probability
  std::map<std::pair<std::string, std::string>, std::map<std::string, double>> edges;

  const SceneVertex& vertex(const std::string& id) const {
    for (const auto& v : vertices)
      if (v.id == id) return v;
    throw LookupError("no scene-graph vertex '" + id + "'");
  }

  const SceneVertex* find_by_ref(const RegionRef& ref) const {
    for (const auto& v : vertices)
      if (v.ref == ref) return &v;
    return nullptr;
  }

  // Vertices proposed by the search for `part`.
  std::vector<std::string> candidates_for(const std::string& part) const {
    std::vector<std::string> out;
    for (const auto& v : vertices)
      if (std::find(v.searched_for.begin(), v.searched_for.end(), part) != v.searched_for.end())
        out.push_back(v.id);
    return out;
  }
};

// Exemplar sets the classifier sees for a concept. Whole types are mutually
// exclusive, so positives of every other whole type count as negatives.
inline ExemplarSets classifier_sets(const Memory& memory, const std::string& id) {
  if (!memory.exemplars.contains(id)) return {};
  ExemplarSets s = memory.exemplars.at(id);
  if (memory.lexicon.knows_concept(id) && memory.lexicon.concept_by_id(id).kind == ConceptKind::whole_type)
    for (const auto& c : memory.lexicon.concepts_of_kind(ConceptKind::whole_type))
      if (c.id != id && memory.exemplars.contains(c.id))
        for (const auto& v : memory.exemplars.at(c.id).positives) s.negatives.push_back(v);
  return s;
}

inline void fill_beliefs(SceneVertex& v, const Memory& memory, const PerceptionParams& params) {
  for (const auto& [id, c] : memory.lexicon.concepts()) {
    if (c.arity != 1) continue;
    v.beliefs[id] = knn_probability(v.features, classifier_sets(memory, id), params);
  }
}

// Target vertex plus, when the KB is non-empty, the best part proposal for
// every part concept the KB links to a known whole type.
inline SceneGraph build_scene_graph(const TrueScene& scene, const RegionRef& target, const Memory& memory,
                                    const KnowledgeBase& kb, const PerceptionParams& params, Rng& rng) {
  SceneGraph sg;
  SceneVertex o;
  o.id = target.region_id;
  o.ref = target;
  o.features = features_of(scene, target);
  fill_beliefs(o, memory, params);
  sg.vertices.push_back(std::move(o));
  if (kb.empty()) return sg;

  std::set<std::string> wholes;
  for (const auto& c : memory.lexicon.concepts_of_kind(ConceptKind::whole_type)) wholes.insert(c.id);
  int next = 1;
  for (const auto& part : relevant_parts(kb, wholes)) {
    static const ExemplarSets kEmpty{};
    const ExemplarSets& sets = memory.exemplars.contains(part) ? memory.exemplars.at(part) : kEmpty;
    const auto proposals = f_seg(scene, sets, params, rng);
    if (proposals.empty()) continue;
    const Proposal& best = proposals.front();
    auto existing = std::find_if(sg.vertices.begin(), sg.vertices.end(),
                                 [&](const SceneVertex& v) { return v.ref == best.ref; });
    if (existing != sg.vertices.end() && existing->id != target.region_id) {
      existing->searched_for.push_back(part);
      continue;
    }
    SceneVertex p;
    p.id = "p" + std::to_string(next++);
    p.ref = best.ref;
    p.features = features_of(scene, best.ref);
    p.searched_for.push_back(part);
    p.corrupted = best.corrupted;
    fill_beliefs(p, memory, params);
    const double have = inside_truck(scene, best.ref.region_id) ? params.have_inside : params.have_outside;
    sg.edges[{sg.vertices.front().id, p.id}]["have"] = have;
    sg.vertices.push_back(std::move(p));
  }
  return sg;
}

}  // namespace xil
