#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mocha/benchgen.hpp"
#include "mocha/policy.hpp"
#include "mocha/remote.hpp"
#include "mocha/reward.hpp"
#include "mocha/rl.hpp"
#include "mocha/synthcap.hpp"

namespace mocha {

// One `key = value` line of a sectioned config file.
struct ConfigEntry {
  std::string section;
  std::string key;
  std::string value;
  int line = 0;
};

// Sections in `[name]` headers; `#` and `;` start comments; keys before the
// first header belong to section "run".
std::vector<ConfigEntry> parse_config_entries(std::istream& in, const std::string& source);

enum class ScorerKind { Oracle, Remote };
enum class JudgeKind { Lexical, Remote };
enum class LlmKind { Fixture, Remote };

struct EvalSettings {
  JudgeKind judge = JudgeKind::Lexical;
  EndpointConfig judge_endpoint;
  std::filesystem::path concreteness;
  std::filesystem::path synonyms;
  std::size_t beam_width = 5;
  std::size_t max_len = kDefaultMaxLen;
  std::size_t max_in_flight = 1;
  std::size_t kl_samples = 10;
  std::size_t kl_scenes = 50;
};

struct BenchSettings {
  std::filesystem::path seeds;
  LlmKind llm = LlmKind::Fixture;
  std::filesystem::path fixture_responses;
  EndpointConfig llm_endpoint;
  std::filesystem::path concreteness;
  std::filesystem::path exclusions;  // optional, one caption per line
  GenConfig gen;
};

struct RunConfig {
  std::uint64_t seed = 1;
  WorldSpec world = default_world_spec();
  PolicyShape policy;  // vocab and feature_dim are filled from the world
  MleConfig mle;
  RewardConfig reward;
  ScorerKind scorer = ScorerKind::Oracle;
  EndpointConfig fidelity_endpoint;
  EndpointConfig adequacy_endpoint;
  RlConfig rl;
  std::filesystem::path init_checkpoint;  // empty: <out-dir>/mle.ckpt
  EvalSettings eval;
  std::vector<double> sweep_alphas{0.0, 0.25, 0.5, 0.75, 1.0};
  BenchSettings bench;

  std::filesystem::path source;  // empty when built in code
  std::string text;              // verbatim config file contents

  // Re-derives every module seed from `seed`.
  void derive_seeds();
  // Throws ConfigError naming the first invalid setting.
  void validate() const;
};

// Defaults with data paths under `data_dir` and seeds derived from run.seed.
RunConfig default_run_config(const std::filesystem::path& data_dir);

// Unknown sections or keys and unparsable values are ConfigErrors that cite
// `source:line`. Relative paths resolve against `base_dir`.
RunConfig parse_run_config(std::istream& in, const std::string& source, const std::filesystem::path& base_dir,
                           const std::filesystem::path& data_dir);
RunConfig load_run_config(const std::filesystem::path& path, const std::filesystem::path& data_dir);

// Seed for one module, a pure function of (run seed, module name).
std::uint64_t module_seed(std::uint64_t run_seed, std::string_view module);

}  // namespace mocha
