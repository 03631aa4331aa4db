#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mocha/config.hpp"
#include "mocha/halleval.hpp"
#include "mocha/rl.hpp"

namespace mocha {

// The world a run operates on plus the objects derived from it.
struct Workspace {
  RunConfig config;
  SceneDataset dataset;
  Vocabulary vocab;
  WorldLexicon lexicon;
  std::string dataset_hash;  // git blob hash of the saved dataset

  static Workspace build(const RunConfig& config);
  // Uses a dataset file written by synth-init; throws ConfigError when its
  // world spec differs from the config's.
  static Workspace from_file(const RunConfig& config, const std::filesystem::path& dataset_path);
};

PolicyShape policy_shape(const RunConfig& config, const Vocabulary& vocab);

// Random init from the mle seed, then maximum likelihood on the train split.
PolicyParams pretrain(const Workspace& ws, MleResult* result = nullptr);

// Owns the scorers a RewardSetup points at.
class RewardScorers {
 public:
  explicit RewardScorers(const RunConfig& config);
  RewardSetup setup(const RewardConfig& weights) const;

 private:
  std::unique_ptr<ContradictionScorer> fidelity_;
  std::unique_ptr<SimilarityScorer> adequacy_;
};

// Variant of the reward/optimizer run against the configured default.
struct RunVariant {
  std::string name = "full";
  RewardConfig reward;
  Algorithm algorithm = Algorithm::Ppo;
  std::uint64_t rl_seed = 0;
};

RunVariant full_variant(const RunConfig& config);
// no_rf: alpha = 0; no_ra: alpha = 1; no_kl: beta = 0; scst: SCST updates.
RunVariant ablation_variant(const RunConfig& config, const std::string& which);
const std::vector<std::string>& ablation_names();

struct MochaRun {
  TrainState state;
  std::vector<IterationLog> log;
};

MochaRun run_mocha(const Workspace& ws, const PolicyParams& init, const RunVariant& variant,
                   const RewardScorers& scorers, const TrainHooks& hooks = {});
// Continues `state` to the configured iteration count.
std::vector<IterationLog> resume_mocha(const Workspace& ws, TrainState& state, const RunVariant& variant,
                                       const RewardScorers& scorers, const TrainHooks& hooks = {});

// Mean of mean_base over the last `tail` iterations of a log.
double final_base_reward(const std::vector<IterationLog>& log, std::size_t tail = 50);

// Loaded concreteness lexicon, synonym map and judge for evaluation.
struct EvalTools {
  ConcretenessLexicon concreteness;
  ChairSynonymMap synonyms;
  std::unique_ptr<Judge> judge;

  static EvalTools load(const RunConfig& config);
};

struct EvalReport {
  PolicyEvalPoint oracle;  // beam decoding on the eval split
  ChairReport chair;
  OchReport och;
  std::optional<double> kl;  // KL(policy || reference) when a reference is given

  nlohmann::json to_json() const;
};

EvalReport evaluate_policy(const Workspace& ws, const PolicyParams& policy, EvalTools& tools,
                           const PolicyParams* reference = nullptr);

struct ResultRow {
  std::string variant;
  double alpha = 0.0;
  double beta = 0.0;
  std::string algorithm;
  std::uint64_t rl_seed = 0;
  std::string dataset_hash;
  double final_base = 0.0;
  EvalReport report;

  nlohmann::json to_json() const;
};

ResultRow make_row(const Workspace& ws, const RunVariant& variant, const MochaRun& run, EvalReport report);

// Fixed-width table: variant, alpha, beta, p-bar, F1, CH_i, CH_s, OCH, instance rate, length, KL.
void write_result_table(std::ostream& out, const std::vector<ResultRow>& rows);
void write_result_records(std::ostream& out, const std::vector<ResultRow>& rows);

}  // namespace mocha
