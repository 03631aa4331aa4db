#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "mocha/policy.hpp"
#include "mocha/reward.hpp"
#include "mocha/synthcap.hpp"

namespace mocha {

enum class Algorithm { Ppo, Scst };

struct RlConfig {
  std::size_t images_per_batch = 10;
  std::size_t samples_per_image = 10;
  std::size_t ppo_epochs = 4;
  double clip_eps = 0.2;
  double lr = 1e-4;
  double grad_clip_norm = 5.0;
  std::size_t total_iterations = 300;
  Algorithm algorithm = Algorithm::Ppo;
  std::uint64_t seed = 11;
  DecodeConfig decode;  // sampling: nucleus 0.9, temperature 1.2, 40 tokens
  std::size_t probe_size = 50;
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints

  void validate() const;
};

// Reward weights plus the two scorers used to compute r_f and r_a.
struct RewardSetup {
  RewardConfig config;
  const ContradictionScorer* fidelity_scorer = nullptr;
  const SimilarityScorer* adequacy_scorer = nullptr;
};

struct RolloutSample {
  std::size_t scene_index = 0;  // into SceneDataset::train
  TokenSeq seq;
  double logprob_old = 0.0;  // policy snapshot at collection time
  double logprob_ref = 0.0;  // frozen initial policy
  RewardBreakdown reward;
  std::size_t length = 0;  // words
};

struct RolloutBatch {
  std::size_t images = 0;
  std::size_t per_image = 0;
  std::vector<RolloutSample> samples;  // grouped by image, per_image each
};

RolloutBatch collect(const PolicyParams& policy, const FrozenPolicy& frozen, const SceneDataset& dataset,
                     const Vocabulary& vocab, const RewardSetup& reward, const RlConfig& cfg, Rng& rng);

// min(rho A, clip(rho, 1-eps, 1+eps) A)
double clipped_surrogate(double ratio, double advantage, double clip_eps);

struct SurrogateStats {
  double objective = 0.0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
};

// Gradient (ascent direction) of mean_s min(rho_s A_s, clip(rho_s) A_s).
PolicyParams surrogate_gradient(const PolicyParams& policy, const RolloutBatch& batch, const SceneDataset& dataset,
                                double clip_eps, SurrogateStats* stats = nullptr);
// Gradient of mean_s A_s log pi(c_s | i_s).
PolicyParams scst_gradient(const PolicyParams& policy, const RolloutBatch& batch, const SceneDataset& dataset,
                           double* objective = nullptr);

struct StepStats {
  double objective = 0.0;        // first pass
  double final_objective = 0.0;  // last pass
  double mean_ratio = 0.0;       // averaged over passes
  double clip_fraction = 0.0;    // averaged over passes
  double grad_norm = 0.0;        // last pass, before clipping
};

StepStats ppo_step(PolicyParams& policy, Adam& optimizer, const RolloutBatch& batch, const SceneDataset& dataset,
                   const RlConfig& cfg);
StepStats scst_step(PolicyParams& policy, Adam& optimizer, const RolloutBatch& batch, const SceneDataset& dataset,
                    const RlConfig& cfg);

struct TrainState {
  PolicyParams policy;
  FrozenPolicy frozen;
  Adam optimizer;
  std::size_t iteration = 0;

  // Captures the frozen copy of `initial` and a fresh optimizer.
  static TrainState start(const PolicyParams& initial, const RlConfig& cfg);

  void save(std::ostream& out) const;
  static TrainState load(std::istream& in);
};

struct IterationLog {
  std::size_t iteration = 0;
  double mean_rf = 0.0;
  double mean_ra = 0.0;
  double mean_K = 0.0;
  double mean_base = 0.0;
  double clip_fraction = 0.0;
  double probe_halluc_rate = 0.0;
  double probe_f1 = 0.0;
  double mean_len = 0.0;
};

void write_log_header(std::ostream& out);
void write_log_row(std::ostream& out, const IterationLog& row);

struct TrainHooks {
  std::function<void(const IterationLog&)> on_iteration;
  std::function<void(const TrainState&)> on_checkpoint;
};

// Alternates collect and the configured update until state.iteration reaches
// cfg.total_iterations. Randomness for iteration t comes from (cfg.seed, t),
// so a resumed state continues the same trajectory.
std::vector<IterationLog> train(TrainState& state, const SceneDataset& dataset, const Vocabulary& vocab,
                                const RewardSetup& reward, const RlConfig& cfg, const TrainHooks& hooks = {});

// Monte Carlo KL(pi_theta || pi_0) from ancestral samples of pi_theta.
double estimate_kl(const PolicyParams& policy, const PolicyParams& reference, std::span<const SceneRecord> scenes,
                   std::size_t samples_per_scene, std::size_t max_len, std::uint64_t seed);

// Scenes used by the per-iteration probe.
std::span<const SceneRecord> probe_scenes(const SceneDataset& dataset, std::size_t n);

}  // namespace mocha
