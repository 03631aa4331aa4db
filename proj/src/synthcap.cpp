#include "mocha/synthcap.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <unordered_map>

#include "json.hpp"
#include "mocha/errors.hpp"
#include "mocha/rng.hpp"

namespace mocha {
namespace {

using nlohmann::json;

constexpr int kDatasetVersion = 1;
constexpr double kSamplingFloor = 0.05;

std::size_t index_of(const std::vector<std::string>& names, const std::string& name) {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ConfigError("unknown name '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

json spec_to_json(const WorldSpec& spec) {
  return json{{"object_types", spec.object_types},
              {"attributes", spec.attributes},
              {"affinity", spec.affinity},
              {"bias_rate", spec.bias_rate},
              {"min_scene_size", spec.min_scene_size},
              {"max_scene_size", spec.max_scene_size},
              {"feature_dim", spec.feature_dim},
              {"num_train_scenes", spec.num_train_scenes},
              {"num_eval_scenes", spec.num_eval_scenes},
              {"train_captions_per_scene", spec.train_captions_per_scene},
              {"seed", spec.seed}};
}

WorldSpec spec_from_json(const json& j) {
  WorldSpec spec;
  spec.object_types = j.at("object_types").get<std::vector<std::string>>();
  spec.attributes = j.at("attributes").get<std::vector<std::string>>();
  spec.affinity = j.at("affinity").get<std::vector<double>>();
  spec.bias_rate = j.at("bias_rate").get<double>();
  spec.min_scene_size = j.at("min_scene_size").get<std::size_t>();
  spec.max_scene_size = j.at("max_scene_size").get<std::size_t>();
  spec.feature_dim = j.at("feature_dim").get<std::size_t>();
  spec.num_train_scenes = j.at("num_train_scenes").get<std::size_t>();
  spec.num_eval_scenes = j.at("num_eval_scenes").get<std::size_t>();
  spec.train_captions_per_scene = j.at("train_captions_per_scene").get<std::size_t>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  return spec;
}

json record_to_json(const SceneRecord& rec, const char* split) {
  json objects = json::array();
  for (const auto& f : rec.scene.objects) objects.push_back({f.object, f.attribute.value_or("")});
  return json{{"id", rec.scene.id},
              {"split", split},
              {"objects", objects},
              {"features", rec.scene.features},
              {"train_captions", rec.train_captions},
              {"reference_captions", rec.reference_captions}};
}

}  // namespace

std::vector<std::string> default_object_types() {
  return {"dog",     "cat",      "horse",      "sheep",    "cow",        "elephant", "bear",     "zebra",
          "giraffe", "bird",     "bicycle",    "car",      "motorcycle", "airplane", "bus",      "train",
          "truck",   "boat",     "bench",      "umbrella", "backpack",   "suitcase", "kite",     "skateboard",
          "surfboard", "bottle", "cup",        "fork",     "knife",      "spoon",    "bowl",     "banana",
          "apple",   "sandwich", "pizza",      "cake",     "chair",      "couch",    "bed",      "table",
          "laptop",  "clock",    "vase",       "book",     "guitar",     "lamp",     "drum",     "violin"};
}

std::vector<std::string> default_attributes() {
  return {"red", "blue", "green", "yellow", "black", "white", "brown", "purple"};
}

WorldSpec default_world_spec() {
  WorldSpec spec;
  spec.object_types = default_object_types();
  spec.attributes = default_attributes();
  return spec;
}

std::vector<double> generate_affinity(std::size_t n, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, 0xaff1);
  std::vector<double> a(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double w = 0.05 * rng.uniform();
      a[i * n + j] = a[j * n + i] = w;
    }
  }
  // One strong partner per object: a seeded perfect matching (the last
  // object stays unmatched when n is odd).
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  for (std::size_t k = 0; k + 1 < n; k += 2) {
    const std::size_t i = perm[k], j = perm[k + 1];
    a[i * n + j] = a[j * n + i] = 1.0;
  }
  return a;
}

void WorldSpec::validate() const {
  const std::size_t n = object_types.size();
  if (n == 0) throw ConfigError("world: object_types is empty");
  if (attributes.empty()) throw ConfigError("world: attributes is empty");
  std::unordered_map<std::string, int> seen;
  for (const auto& o : object_types) {
    if (o.empty() || o.find(' ') != std::string::npos) throw ConfigError("world: invalid object type '" + o + "'");
    if (seen[o]++) throw ConfigError("world: duplicate word '" + o + "'");
  }
  for (const auto& a : attributes) {
    if (a.empty() || a.find(' ') != std::string::npos) throw ConfigError("world: invalid attribute '" + a + "'");
    if (seen[a]++) throw ConfigError("world: duplicate word '" + a + "'");
  }
  if (seen.contains(kConjunction)) throw ConfigError("world: 'and' is reserved");
  if (!affinity.empty()) {
    if (affinity.size() != n * n) throw ConfigError("world: affinity must be |objects| x |objects|");
    for (std::size_t i = 0; i < n; ++i) {
      if (affinity[i * n + i] != 0.0) throw ConfigError("world: affinity diagonal must be zero");
      for (std::size_t j = 0; j < n; ++j) {
        const double v = affinity[i * n + j];
        if (!std::isfinite(v) || v < 0.0) throw ConfigError("world: affinity entries must be finite and >= 0");
        if (v != affinity[j * n + i]) throw ConfigError("world: affinity must be symmetric");
      }
    }
  }
  if (!(bias_rate >= 0.0 && bias_rate <= 1.0)) throw ConfigError("world: bias_rate must lie in [0,1]");
  if (min_scene_size < 1 || min_scene_size > max_scene_size || max_scene_size > n) {
    throw ConfigError("world: scene_size_range must satisfy 1 <= min <= max <= |object_types|");
  }
  if (feature_dim == 0) throw ConfigError("world: feature_dim must be positive");
  if (num_train_scenes == 0) throw ConfigError("world: num_train_scenes must be positive");
  if (train_captions_per_scene == 0) throw ConfigError("world: train_captions_per_scene must be positive");
}

bool Scene::has_object(const std::string& object) const {
  return std::any_of(objects.begin(), objects.end(), [&](const Fact& f) { return f.object == object; });
}

WorldLexicon SceneDataset::lexicon() const {
  WorldLexicon lex;
  lex.objects.insert(spec.object_types.begin(), spec.object_types.end());
  lex.attributes.insert(spec.attributes.begin(), spec.attributes.end());
  return lex;
}

Vocabulary SceneDataset::vocabulary() const {
  std::vector<std::string> words{kConjunction};
  words.insert(words.end(), spec.attributes.begin(), spec.attributes.end());
  words.insert(words.end(), spec.object_types.begin(), spec.object_types.end());
  return Vocabulary(words);
}

std::vector<double> scene_features(const FactSet& objects, const WorldSpec& spec) {
  std::vector<double> v(spec.feature_dim, 0.0);
  for (const auto& f : objects) {
    const std::uint64_t oi = index_of(spec.object_types, f.object);
    const std::uint64_t ai = f.attribute ? index_of(spec.attributes, *f.attribute) + 1 : 0;
    Rng rng = Rng::derive(spec.seed, 0x5eed0000ULL + oi * 1024 + ai);
    for (auto& x : v) x += rng.normal();
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (auto& x : v) x /= norm;
  }
  return v;
}

std::string render_caption(const std::vector<Fact>& facts) {
  std::string out;
  for (const auto& f : facts) {
    if (!out.empty()) out += std::string(" ") + kConjunction + " ";
    out += to_string(f);
  }
  return out;
}

SceneDataset build_world(const WorldSpec& input) {
  input.validate();
  SceneDataset ds;
  ds.spec = input;
  WorldSpec& spec = ds.spec;
  const std::size_t n = spec.object_types.size();
  if (spec.affinity.empty()) spec.affinity = generate_affinity(n, spec.seed);
  const auto& aff = spec.affinity;

  Rng rng(spec.seed);
  const std::size_t total = spec.num_train_scenes + spec.num_eval_scenes;
  for (std::size_t s = 0; s < total; ++s) {
    const std::size_t size = spec.min_scene_size + rng.index(spec.max_scene_size - spec.min_scene_size + 1);
    std::vector<std::size_t> chosen{rng.index(n)};
    std::vector<bool> in_scene(n, false);
    in_scene[chosen[0]] = true;
    while (chosen.size() < size) {
      std::vector<double> w(n, 0.0);
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (in_scene[j]) continue;
        w[j] = kSamplingFloor;
        for (std::size_t c : chosen) w[j] += aff[c * n + j];
        sum += w[j];
      }
      double u = rng.uniform() * sum;
      std::size_t pick = n;
      for (std::size_t j = 0; j < n; ++j) {
        if (in_scene[j]) continue;
        pick = j;
        if (u < w[j]) break;
        u -= w[j];
      }
      chosen.push_back(pick);
      in_scene[pick] = true;
    }
    std::sort(chosen.begin(), chosen.end());

    SceneRecord rec;
    rec.scene.id = static_cast<int>(s);
    std::vector<Fact> facts;
    for (std::size_t o : chosen) facts.push_back({spec.object_types[o], spec.attributes[rng.index(spec.attributes.size())]});
    rec.scene.objects = FactSet(facts.begin(), facts.end());
    rec.scene.features = scene_features(rec.scene.objects, spec);

    // Planted bias: the strongest (present, absent) affinity pair.
    std::size_t partner = n;
    double best = 0.0;
    for (std::size_t o : chosen) {
      for (std::size_t j = 0; j < n; ++j) {
        if (!in_scene[j] && aff[o * n + j] > best) {
          best = aff[o * n + j];
          partner = j;
        }
      }
    }
    for (std::size_t c = 0; c < spec.train_captions_per_scene; ++c) {
      std::vector<Fact> caption = facts;
      if (rng.uniform() < spec.bias_rate && partner < n) {
        Fact planted{spec.object_types[partner], spec.attributes[rng.index(spec.attributes.size())]};
        auto pos = std::find_if(caption.begin(), caption.end(), [&](const Fact& f) {
          return index_of(spec.object_types, f.object) > partner;
        });
        caption.insert(pos, planted);
      }
      rec.train_captions.push_back(render_caption(caption));
    }

    rec.reference_captions.push_back(render_caption(facts));
    std::vector<Fact> shuffled = facts;
    for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.index(i)]);
    rec.reference_captions.push_back(render_caption(shuffled));
    std::vector<Fact> subset;
    const std::size_t keep = 1 + rng.index(facts.size());
    std::vector<std::size_t> order(facts.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    order.resize(keep);
    std::sort(order.begin(), order.end());
    for (std::size_t i : order) subset.push_back(facts[i]);
    rec.reference_captions.push_back(render_caption(subset));

    (s < spec.num_train_scenes ? ds.train : ds.eval).push_back(std::move(rec));
  }
  return ds;
}

void SceneDataset::save(std::ostream& out) const {
  json header{{"format", "synthcap-dataset"}, {"version", kDatasetVersion}, {"spec", spec_to_json(spec)}};
  out << header.dump() << '\n';
  for (const auto& r : train) out << record_to_json(r, "train").dump() << '\n';
  for (const auto& r : eval) out << record_to_json(r, "eval").dump() << '\n';
}

SceneDataset SceneDataset::load(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("dataset: missing header line");
  SceneDataset ds;
  try {
    const json header = json::parse(line);
    if (header.at("format") != "synthcap-dataset") throw ConfigError("dataset: unexpected format tag");
    if (header.at("version") != kDatasetVersion) throw ConfigError("dataset: unsupported version");
    ds.spec = spec_from_json(header.at("spec"));
    ds.spec.validate();
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const json j = json::parse(line);
      SceneRecord rec;
      rec.scene.id = j.at("id").get<int>();
      for (const auto& o : j.at("objects")) {
        const auto attr = o.at(1).get<std::string>();
        rec.scene.objects.insert(Fact{o.at(0).get<std::string>(), attr.empty() ? std::nullopt : std::optional(attr)});
      }
      rec.scene.features = j.at("features").get<std::vector<double>>();
      rec.train_captions = j.at("train_captions").get<std::vector<std::string>>();
      rec.reference_captions = j.at("reference_captions").get<std::vector<std::string>>();
      const auto split = j.at("split").get<std::string>();
      if (split == "train") {
        ds.train.push_back(std::move(rec));
      } else if (split == "eval") {
        ds.eval.push_back(std::move(rec));
      } else {
        throw ConfigError("dataset: line " + std::to_string(lineno) + ": unknown split '" + split + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("dataset: malformed record: ") + e.what());
  }
  return ds;
}

bool is_hallucinated(const Fact& fact, const Scene& scene) { return !scene.has_object(fact.object); }

bool is_contradicted(const Fact& fact, const Scene& scene) {
  for (const auto& s : scene.objects) {
    if (s.object != fact.object) continue;
    return fact.attribute && s.attribute != fact.attribute;
  }
  return true;
}

double oracle_contradiction(const FactSet& asserted, const Scene& scene) {
  if (asserted.empty()) return 0.0;
  std::size_t bad = 0;
  for (const auto& f : asserted) bad += is_contradicted(f, scene) ? 1 : 0;
  return static_cast<double>(bad) / static_cast<double>(asserted.size());
}

double oracle_adequacy(const FactSet& asserted, const Scene& scene) {
  if (asserted.empty() || scene.objects.empty()) return 0.0;
  std::size_t supported = 0;
  for (const auto& f : asserted) supported += is_contradicted(f, scene) ? 0 : 1;
  std::size_t mentioned = 0;
  for (const auto& s : scene.objects) {
    mentioned += std::any_of(asserted.begin(), asserted.end(), [&](const Fact& f) { return f.object == s.object; });
  }
  const double precision = static_cast<double>(supported) / static_cast<double>(asserted.size());
  const double recall = static_cast<double>(mentioned) / static_cast<double>(scene.objects.size());
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace mocha
