#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mocha/seqmodel.hpp"

namespace mocha {

// Parameters of the synthetic captioning world. All defaults are tunable
// laboratory settings.
struct WorldSpec {
  std::vector<std::string> object_types;
  std::vector<std::string> attributes;
  // Row-major |objects| x |objects|, symmetric, zero diagonal. Empty means
  // "generate from seed".
  std::vector<double> affinity;
  double bias_rate = 0.15;
  std::size_t min_scene_size = 2;
  std::size_t max_scene_size = 4;
  std::size_t feature_dim = 16;
  std::size_t num_train_scenes = 1000;
  std::size_t num_eval_scenes = 200;
  std::size_t train_captions_per_scene = 2;
  std::uint64_t seed = 20240101;

  // Throws ConfigError on any invariant violation.
  void validate() const;
  bool operator==(const WorldSpec&) const = default;
};

// 48 object types and 8 colors.
WorldSpec default_world_spec();
std::vector<std::string> default_object_types();
std::vector<std::string> default_attributes();

// Symmetric affinity with one strong partner per object plus weak noise.
std::vector<double> generate_affinity(std::size_t num_objects, std::uint64_t seed);

struct Scene {
  int id = 0;
  // Every fact carries an attribute.
  FactSet objects;
  std::vector<double> features;

  bool has_object(const std::string& object) const;
};

struct SceneRecord {
  Scene scene;
  std::vector<std::string> train_captions;
  std::vector<std::string> reference_captions;
};

struct SceneDataset {
  WorldSpec spec;
  std::vector<SceneRecord> train;
  std::vector<SceneRecord> eval;

  WorldLexicon lexicon() const;
  // "and" + attributes + object types.
  Vocabulary vocabulary() const;

  // Line-delimited records behind a versioned header line.
  void save(std::ostream& out) const;
  static SceneDataset load(std::istream& in);
};

inline constexpr std::size_t kReferencesPerScene = 3;
inline constexpr const char* kConjunction = "and";

SceneDataset build_world(const WorldSpec& spec);

// Pure function of (objects, feature_dim, seed): sum of seeded per-fact
// embeddings, L2-normalized.
std::vector<double> scene_features(const FactSet& objects, const WorldSpec& spec);

// "red cube and blue sphere": facts in the order given.
std::string render_caption(const std::vector<Fact>& facts);

// Fraction of asserted facts contradicted by the scene. A fact is
// contradicted when its object is absent or present with another attribute.
double oracle_contradiction(const FactSet& asserted, const Scene& scene);

// F1 of asserted facts against the scene. Precision counts supported facts;
// recall counts mentioned scene objects, ignoring attributes.
double oracle_adequacy(const FactSet& asserted, const Scene& scene);

bool is_contradicted(const Fact& fact, const Scene& scene);
// Object-level hallucination: the object is absent from the scene.
bool is_hallucinated(const Fact& fact, const Scene& scene);

}  // namespace mocha
