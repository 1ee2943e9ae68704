#pragma once

// Synthetic truck world. Each scene holds one truck made of a load, a cabin,
// a body and wheels, plus background clutter. Pixels are replaced by latent
// feature vectors: the first `shape_dims` coordinates carry the region's
// concept prototype plus Gaussian noise, the remaining ones carry distracting
// appearance (a colour drawn from a fixed palette).

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xil/errors.hpp"
#include "xil/memory.hpp"
#include "xil/rng.hpp"

namespace xil {

inline constexpr double kFidelityFloor = 0.5;
inline constexpr const char* kBackground = "background";

struct PartDimension {
  std::string name;  // load | cabin
  bool taught = true;
};

struct WholeType {
  std::string id;
  std::map<std::string, std::string> parts;  // dimension -> part subtype
};

struct FeatureModel {
  int dim = 16;
  int shape_dims = 8;
  int palette = 8;             // number of distracting colours
  double color_scale = 1.5;    // norm of a palette colour
  double color_jitter = 0.05;
  double sigma = 0.19;         // shape noise, set by calibration
  double whole_noise = 0.2;
  double cabin_angle_deg = 40.0;  // angle between the two cabin prototypes
  double context_scale = 2.0;     // prototype norm of regions with no learner-facing word
  std::uint64_t palette_seed = 7;
};

struct DomainConfig {
  std::string name;
  std::vector<PartDimension> dimensions;
  std::vector<WholeType> wholes;
  std::vector<WordForms> words;  // learner-facing nouns: whole types and taught parts
  std::map<std::string, int> prototype_axis;  // region label -> shape axis
  std::vector<std::string> cabin_pair;        // the two confusable cabin subtypes
  int min_wheels = 2;
  int max_wheels = 4;
  int background_blobs = 2;
  FeatureModel features;

  const WholeType& whole(const std::string& id) const {
    for (const auto& w : wholes)
      if (w.id == id) return w;
    throw LookupError("unknown whole type '" + id + "'");
  }

  bool dimension_taught(const std::string& dim) const {
    for (const auto& d : dimensions)
      if (d.name == dim) return d.taught;
    return false;
  }

  std::vector<std::string> whole_ids() const {
    std::vector<std::string> out;
    for (const auto& w : wholes) out.push_back(w.id);
    return out;
  }

  // Part subtypes the teacher talks about.
  std::vector<std::string> taught_parts() const {
    std::set<std::string> s;
    for (const auto& w : wholes)
      for (const auto& [dim, part] : w.parts)
        if (dimension_taught(dim)) s.insert(part);
    return {s.begin(), s.end()};
  }

  // Taught parts the ontology assigns to a whole type.
  std::set<std::string> true_parts(const std::string& whole_id) const {
    std::set<std::string> out;
    for (const auto& [dim, part] : whole(whole_id).parts)
      if (dimension_taught(dim)) out.insert(part);
    return out;
  }

  std::string dimension_of(const std::string& part) const {
    for (const auto& w : wholes)
      for (const auto& [dim, p] : w.parts)
        if (p == part) return dim;
    throw LookupError("part '" + part + "' not in ontology");
  }

  const WordForms& word(const std::string& id) const {
    for (const auto& w : words)
      if (w.concept_id == id) return w;
    throw LookupError("no word for '" + id + "'");
  }
};

// ---------------------------------------------------------------------------
// Built-in domains

inline std::vector<WordForms> default_truck_words() {
  using K = ConceptKind;
  return {
      {"baseTruck", "base truck", "base trucks", K::whole_type},
      {"dumpTruck", "dump truck", "dump trucks", K::whole_type},
      {"missileTruck", "missile truck", "missile trucks", K::whole_type},
      {"fireTruck", "fire truck", "fire trucks", K::whole_type},
      {"containerTruck", "container truck", "container trucks", K::whole_type},
      {"dumper", "dumper", "dumpers", K::part_type},
      {"rocketLauncher", "rocket launcher", "rocket launchers", K::part_type},
      {"ladder", "ladder", "ladders", K::part_type},
      {"quadCabin", "quad cabin", "quad cabins", K::part_type},
      {"hemttCabin", "hemtt cabin", "hemtt cabins", K::part_type},
  };
}

inline std::map<std::string, int> default_prototype_axes() {
  return {{"dumper", 0}, {"rocketLauncher", 1}, {"ladder", 2}, {"flatbed", 3},
          {"quadCabin", 4}, {"hemttCabin", 4}, {"standardCabin", 5}, {"body", 6},
          {"wheel", 7}};
}

inline DomainConfig single_4way() {
  DomainConfig c;
  c.name = "single_4way";
  c.dimensions = {{"load", true}, {"cabin", false}};
  c.wholes = {
      {"baseTruck", {{"load", "flatbed"}, {"cabin", "standardCabin"}}},
      {"dumpTruck", {{"load", "dumper"}, {"cabin", "standardCabin"}}},
      {"missileTruck", {{"load", "rocketLauncher"}, {"cabin", "standardCabin"}}},
      {"fireTruck", {{"load", "ladder"}, {"cabin", "standardCabin"}}},
  };
  for (const auto& w : default_truck_words())
    if (w.concept_id != "containerTruck" && w.concept_id != "quadCabin" && w.concept_id != "hemttCabin")
      c.words.push_back(w);
  c.prototype_axis = default_prototype_axes();
  return c;
}

inline DomainConfig double_5way() {
  DomainConfig c;
  c.name = "double_5way";
  c.dimensions = {{"load", true}, {"cabin", true}};
  c.wholes = {
      {"baseTruck", {{"load", "flatbed"}, {"cabin", "quadCabin"}}},
      {"dumpTruck", {{"load", "dumper"}, {"cabin", "quadCabin"}}},
      {"containerTruck", {{"load", "dumper"}, {"cabin", "hemttCabin"}}},
      {"missileTruck", {{"load", "rocketLauncher"}, {"cabin", "hemttCabin"}}},
      {"fireTruck", {{"load", "ladder"}, {"cabin", "quadCabin"}}},
  };
  c.words = default_truck_words();
  c.prototype_axis = default_prototype_axes();
  c.cabin_pair = {"quadCabin", "hemttCabin"};
  return c;
}

inline nlohmann::json domain_to_json(const DomainConfig& c) {
  using nlohmann::json;
  json dims = json::array();
  for (const auto& d : c.dimensions) dims.push_back({{"name", d.name}, {"taught", d.taught}});
  json wholes = json::array();
  for (const auto& w : c.wholes) wholes.push_back({{"id", w.id}, {"parts", w.parts}});
  json words = json::array();
  for (const auto& w : c.words)
    words.push_back({{"id", w.concept_id}, {"singular", w.singular}, {"plural", w.plural},
                     {"kind", std::string(to_string(w.kind))}});
  const auto& f = c.features;
  return {{"name", c.name},
          {"dimensions", dims},
          {"wholes", wholes},
          {"words", words},
          {"prototype_axis", c.prototype_axis},
          {"cabin_pair", c.cabin_pair},
          {"wheels", {c.min_wheels, c.max_wheels}},
          {"background_blobs", c.background_blobs},
          {"features",
           {{"dim", f.dim}, {"shape_dims", f.shape_dims}, {"palette", f.palette},
            {"color_scale", f.color_scale}, {"color_jitter", f.color_jitter}, {"sigma", f.sigma},
            {"whole_noise", f.whole_noise}, {"cabin_angle_deg", f.cabin_angle_deg}, {"context_scale", f.context_scale},
            {"palette_seed", f.palette_seed}}}};
}

inline DomainConfig domain_from_json(const nlohmann::json& j) {
  DomainConfig c;
  c.name = j.at("name");
  for (const auto& d : j.at("dimensions")) c.dimensions.push_back({d.at("name"), d.value("taught", true)});
  for (const auto& w : j.at("wholes"))
    c.wholes.push_back({w.at("id"), w.at("parts").get<std::map<std::string, std::string>>()});
  for (const auto& w : j.at("words"))
    c.words.push_back({w.at("id"), w.at("singular"), w.at("plural"),
                       concept_kind_from_string(w.at("kind").get<std::string>())});
  c.prototype_axis = j.value("prototype_axis", default_prototype_axes());
  c.cabin_pair = j.value("cabin_pair", std::vector<std::string>{});
  if (j.contains("wheels")) {
    c.min_wheels = j["wheels"].at(0);
    c.max_wheels = j["wheels"].at(1);
  }
  c.background_blobs = j.value("background_blobs", c.background_blobs);
  if (j.contains("features")) {
    const auto& f = j["features"];
    auto& m = c.features;
    m.dim = f.value("dim", m.dim);
    m.shape_dims = f.value("shape_dims", m.shape_dims);
    m.palette = f.value("palette", m.palette);
    m.color_scale = f.value("color_scale", m.color_scale);
    m.color_jitter = f.value("color_jitter", m.color_jitter);
    m.sigma = f.value("sigma", m.sigma);
    m.whole_noise = f.value("whole_noise", m.whole_noise);
    m.cabin_angle_deg = f.value("cabin_angle_deg", m.cabin_angle_deg);
    m.context_scale = f.value("context_scale", m.context_scale);
    m.palette_seed = f.value("palette_seed", m.palette_seed);
  }
  if (c.wholes.empty()) throw ConfigurationError("domain '" + c.name + "' has no whole types");
  if (c.features.shape_dims <= 0 || c.features.shape_dims >= c.features.dim)
    throw ConfigurationError("shape_dims must lie strictly inside (0, dim)");
  for (const auto& w : c.wholes)
    for (const auto& [dim, part] : w.parts)
      if (!c.prototype_axis.contains(part)) throw ConfigurationError("no prototype axis for '" + part + "'");
  return c;
}

inline DomainConfig load_domain(const std::string& name_or_path) {
  if (name_or_path == "single_4way") return single_4way();
  if (name_or_path == "double_5way") return double_5way();
  std::ifstream in(name_or_path);
  if (!in) throw ConfigurationError("unknown domain or unreadable file '" + name_or_path + "'");
  return domain_from_json(nlohmann::json::parse(in));
}

// ---------------------------------------------------------------------------
// Scenes

struct RegionRef {
  std::string region_id;
  double fidelity = 1.0;
  bool proposed = false;
  bool operator==(const RegionRef&) const = default;
};

struct TrueRegion {
  std::string id;
  std::string role;   // load | cabin | body | wheel | background
  std::string label;  // true concept, or "background"
  Vector features;
  bool inside_truck = true;
  int color = 0;
  double size = 1.0;
};

struct TrueObject {
  std::string id;
  std::string whole;
  std::vector<TrueRegion> regions;
  Vector features;
  int wheel_count = 0;
};

struct TrueScene {
  std::uint64_t seed = 0;
  std::vector<TrueObject> objects;
  std::vector<TrueRegion> clutter;  // background blobs

  const TrueObject& truck() const { return objects.front(); }

  std::vector<const TrueRegion*> all_regions() const {
    std::vector<const TrueRegion*> out;
    for (const auto& o : objects)
      for (const auto& r : o.regions) out.push_back(&r);
    for (const auto& r : clutter) out.push_back(&r);
    return out;
  }

  const TrueRegion* find_region(const std::string& id) const {
    for (const auto* r : all_regions())
      if (r->id == id) return r;
    return nullptr;
  }

  const TrueRegion& region_of_role(const std::string& role) const {
    for (const auto& r : truck().regions)
      if (r.role == role) return r;
    throw LookupError("truck has no " + role + " region");
  }
};

// Deterministic concept prototypes and colour palette for a feature model.
class FeatureSpace {
 public:
  explicit FeatureSpace(const DomainConfig& c) : model_(c.features) {
    const int s = model_.shape_dims;
    for (const auto& [label, axis] : c.prototype_axis) {
      if (axis < 0 || axis >= s) throw ConfigurationError("prototype axis out of range for " + label);
      Vector v(s, 0.0);
      v[axis] = 1.0;
      prototypes_[label] = v;
    }
    if (c.cabin_pair.size() == 2) {
      // Two cabins share a base axis and are split along the next one; the
      // angle between them controls how confusable they are.
      const int base = c.prototype_axis.at(c.cabin_pair[0]);
      const int side = (base + 1) % s;
      const double half = model_.cabin_angle_deg * std::numbers::pi / 360.0;
      for (int k = 0; k < 2; ++k) {
        Vector v(s, 0.0);
        v[base] = std::cos(half);
        v[side] = (k == 0 ? 1.0 : -1.0) * std::sin(half);
        prototypes_[c.cabin_pair[k]] = v;
      }
    }
    // Context regions (body, wheels, untaught parts, background) sit further
    // out so part search is not drawn to them by a colour match alone.
    for (auto& [label, v] : prototypes_) {
      const bool named = std::any_of(c.words.begin(), c.words.end(),
                                     [&](const WordForms& w) { return w.concept_id == label; });
      if (!named)
        for (auto& x : v) x *= model_.context_scale;
    }
    prototypes_[kBackground] = Vector(s, -model_.context_scale / std::sqrt(static_cast<double>(s)));
    Rng rng(model_.palette_seed);
    const int cd = model_.dim - s;
    for (int k = 0; k < model_.palette; ++k) {
      Vector col(cd);
      double norm = 0.0;
      for (auto& x : col) {
        x = rng.normal();
        norm += x * x;
      }
      norm = std::sqrt(norm);
      for (auto& x : col) x *= model_.color_scale / norm;
      palette_.push_back(std::move(col));
    }
  }

  Vector region_vector(const std::string& label, int color, Rng& rng) const {
    Vector v(model_.dim, 0.0);
    auto it = prototypes_.find(label);
    for (int i = 0; i < model_.shape_dims; ++i) {
      const double base = it == prototypes_.end() ? 0.0 : it->second[i];
      v[i] = base + rng.normal(0.0, model_.sigma);
    }
    for (int i = model_.shape_dims; i < model_.dim; ++i)
      v[i] = palette_[color][i - model_.shape_dims] + rng.normal(0.0, model_.color_jitter);
    return v;
  }

  const FeatureModel& model() const { return model_; }
  const std::map<std::string, Vector>& prototypes() const { return prototypes_; }

 private:
  FeatureModel model_;
  std::map<std::string, Vector> prototypes_;
  std::vector<Vector> palette_;
};

// Whole type uniform over the domain; every distractor drawn independently.
inline TrueScene sample_scene(const DomainConfig& c, std::uint64_t seed) {
  rng_algorithm_version();
  const FeatureSpace space(c);
  Rng rng(seed);
  TrueScene scene;
  scene.seed = seed;
  const auto& type = c.wholes[rng.index(c.wholes.size())];
  const int palette = c.features.palette;

  TrueObject truck;
  truck.id = "o";
  truck.whole = type.id;
  int next = 1;
  auto region = [&](const std::string& role, const std::string& label, bool inside) {
    TrueRegion r;
    r.id = "r" + std::to_string(next++);
    r.role = role;
    r.label = label;
    r.inside_truck = inside;
    r.color = static_cast<int>(rng.index(palette));
    r.size = rng.uniform(0.5, 1.5);
    r.features = space.region_vector(inside ? label : kBackground, r.color, rng);
    return r;
  };
  for (const auto& dim : c.dimensions) {
    auto it = type.parts.find(dim.name);
    if (it != type.parts.end()) truck.regions.push_back(region(dim.name, it->second, true));
  }
  truck.regions.push_back(region("body", "body", true));
  truck.wheel_count = c.min_wheels + static_cast<int>(rng.index(c.max_wheels - c.min_wheels + 1));
  for (int w = 0; w < truck.wheel_count; ++w) truck.regions.push_back(region("wheel", "wheel", true));
  for (int b = 0; b < c.background_blobs; ++b) scene.clutter.push_back(region("background", kBackground, false));

  // Whole appearance: noisy average of the structural regions (load, cabin,
  // body) plus a wheel-count offset that acts as one more distractor.
  const int d = c.features.dim;
  truck.features.assign(d, 0.0);
  int n = 0;
  for (const auto& r : truck.regions) {
    if (r.role == "wheel") continue;
    for (int i = 0; i < d; ++i) truck.features[i] += r.features[i];
    ++n;
  }
  for (int i = 0; i < d; ++i) {
    truck.features[i] = truck.features[i] / n + rng.normal(0.0, c.features.whole_noise);
  }
  truck.features[d - 1] += 0.1 * (truck.wheel_count - c.min_wheels);
  scene.objects.push_back(std::move(truck));
  return scene;
}

struct GroundTruth {
  std::optional<std::string> label;  // nullopt: the reference picks out no object
  std::optional<std::string> whole;  // object the region belongs to
};

inline GroundTruth ground_truth(const TrueScene& scene, const RegionRef& ref) {
  for (const auto& o : scene.objects) {
    if (o.id == ref.region_id) {
      if (ref.fidelity < kFidelityFloor) return {};
      return {o.whole, std::nullopt};
    }
  }
  const auto* r = scene.find_region(ref.region_id);
  if (r == nullptr) throw LookupError("unknown region '" + ref.region_id + "'");
  if (ref.fidelity < kFidelityFloor) return {};
  GroundTruth g{r->label, std::nullopt};
  if (r->inside_truck) g.whole = scene.truck().id;
  return g;
}

inline nlohmann::json scene_to_json(const TrueScene& s) {
  using nlohmann::json;
  auto reg = [](const TrueRegion& r) {
    return json{{"id", r.id}, {"role", r.role}, {"label", r.label}, {"inside_truck", r.inside_truck},
                {"color", r.color}, {"size", r.size}};
  };
  json objects = json::array();
  for (const auto& o : s.objects) {
    json regions = json::array();
    for (const auto& r : o.regions) regions.push_back(reg(r));
    objects.push_back({{"id", o.id}, {"whole", o.whole}, {"wheel_count", o.wheel_count}, {"regions", regions}});
  }
  json clutter = json::array();
  for (const auto& r : s.clutter) clutter.push_back(reg(r));
  return {{"seed", s.seed}, {"objects", objects}, {"clutter", clutter}};
}

}  // namespace xil
