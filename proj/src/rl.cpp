#include "mocha/rl.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <string>

#include "mocha/errors.hpp"
#include "mocha/halleval.hpp"

namespace mocha {
namespace {

std::span<const double> features_of(const SceneDataset& ds, std::size_t scene_index) {
  if (scene_index >= ds.train.size()) throw ConfigError("rollout: scene index out of range");
  return ds.train[scene_index].scene.features;
}

template <class Error>
[[noreturn]] void rethrow_with_context(const Error& e, const std::string& context) {
  throw Error(context + ": " + e.what());
}

}  // namespace

void RlConfig::validate() const {
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw ConfigError("rl: clip_eps must lie in (0,1)");
  if (samples_per_image < 2) throw ConfigError("rl: samples_per_image must be at least 2");
  if (images_per_batch < 1) throw ConfigError("rl: images_per_batch must be at least 1");
  if (ppo_epochs < 1) throw ConfigError("rl: ppo_epochs must be at least 1");
  if (!(lr >= 0.0)) throw ConfigError("rl: lr must be >= 0");
  if (!(grad_clip_norm > 0.0)) throw ConfigError("rl: grad_clip_norm must be positive");
  decode.validate();
}

RolloutBatch collect(const PolicyParams& policy, const FrozenPolicy& frozen, const SceneDataset& dataset,
                     const Vocabulary& vocab, const RewardSetup& reward, const RlConfig& cfg, Rng& rng) {
  cfg.validate();
  reward.config.validate();
  if (reward.fidelity_scorer == nullptr || reward.adequacy_scorer == nullptr) {
    throw ConfigError("collect: reward scorers not set");
  }
  if (dataset.train.empty()) throw ConfigError("collect: empty train split");
  const WorldLexicon lexicon = dataset.lexicon();
  DecodeConfig decode = cfg.decode;
  decode.mode = DecodeMode::Sample;

  // Distinct images per batch; the pool is refilled if the batch outgrows it.
  const std::size_t n = dataset.train.size();
  std::vector<std::size_t> pool;
  std::vector<std::size_t> images;
  for (std::size_t k = 0; k < cfg.images_per_batch; ++k) {
    if (pool.empty()) {
      for (std::size_t i = n; i > 0; --i) pool.push_back(i - 1);
    }
    const std::size_t j = rng.index(pool.size());
    std::swap(pool[j], pool.back());
    images.push_back(pool.back());
    pool.pop_back();
  }

  RolloutBatch batch;
  batch.images = cfg.images_per_batch;
  batch.per_image = cfg.samples_per_image;
  for (std::size_t image : images) {
    const SceneRecord& rec = dataset.train[image];
    std::vector<Reference> refs;
    for (const auto& text : rec.reference_captions) refs.push_back({text, &rec.scene});
    std::vector<RolloutSample> group;
    std::vector<RewardInputs> inputs;
    for (std::size_t g = 0; g < cfg.samples_per_image; ++g) {
      RolloutSample s;
      s.scene_index = image;
      s.seq = sample(policy, rec.scene.features, decode, rng).seq;
      s.logprob_old = logprob(policy, rec.scene.features, s.seq);
      s.logprob_ref = logprob(frozen.params(), rec.scene.features, s.seq);
      s.length = word_count(s.seq);
      Candidate cand{mocha::decode(s.seq, vocab), {}};
      cand.facts = parse_facts(cand.text, lexicon);
      const std::string context = "scene " + std::to_string(rec.scene.id) + " sample " + std::to_string(g);
      RewardInputs in;
      try {
        in.fidelity = fidelity(cand, refs, *reward.fidelity_scorer);
        in.adequacy = adequacy(cand, refs, *reward.adequacy_scorer);
      } catch (const ServiceError& e) {
        rethrow_with_context(e, context);
      } catch (const ConfigError& e) {
        rethrow_with_context(e, context);
      }
      in.kl = kl_term(s.logprob_old, s.logprob_ref);
      inputs.push_back(in);
      group.push_back(std::move(s));
    }
    const auto rewards = center_and_combine(inputs, reward.config);
    for (std::size_t g = 0; g < group.size(); ++g) {
      group[g].reward = rewards[g];
      batch.samples.push_back(std::move(group[g]));
    }
  }
  return batch;
}

double clipped_surrogate(double ratio, double advantage, double clip_eps) {
  const double unclipped = ratio * advantage;
  const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantage;
  return std::min(unclipped, clipped);
}

PolicyParams surrogate_gradient(const PolicyParams& policy, const RolloutBatch& batch, const SceneDataset& dataset,
                                double clip_eps, SurrogateStats* stats) {
  if (batch.samples.empty()) throw ConfigError("surrogate_gradient: empty batch");
  PolicyParams grad(policy.shape());
  const double inv_n = 1.0 / static_cast<double>(batch.samples.size());
  SurrogateStats st;
  std::size_t outside = 0;
  for (const auto& s : batch.samples) {
    SequenceEvaluation ev(policy, features_of(dataset, s.scene_index), s.seq);
    const double ratio = std::exp(ev.logprob() - s.logprob_old);
    const double a = s.reward.advantage;
    const double term = clipped_surrogate(ratio, a, clip_eps);
    if (!(term <= ratio * a)) throw NumericError("surrogate exceeds its unclipped term");
    st.objective += term * inv_n;
    st.mean_ratio += ratio * inv_n;
    outside += (ratio < 1.0 - clip_eps || ratio > 1.0 + clip_eps) ? 1 : 0;
    // The clipped branch is constant in theta; only the unclipped one
    // contributes d(rho A) = rho A d log pi.
    if (ratio * a <= term) ev.backward(ratio * a * inv_n, grad);
  }
  st.clip_fraction = static_cast<double>(outside) * inv_n;
  if (stats != nullptr) *stats = st;
  return grad;
}

PolicyParams scst_gradient(const PolicyParams& policy, const RolloutBatch& batch, const SceneDataset& dataset,
                           double* objective) {
  if (batch.samples.empty()) throw ConfigError("scst_gradient: empty batch");
  PolicyParams grad(policy.shape());
  const double inv_n = 1.0 / static_cast<double>(batch.samples.size());
  double obj = 0.0;
  for (const auto& s : batch.samples) {
    SequenceEvaluation ev(policy, features_of(dataset, s.scene_index), s.seq);
    obj += s.reward.advantage * ev.logprob() * inv_n;
    if (s.reward.advantage != 0.0) ev.backward(s.reward.advantage * inv_n, grad);
  }
  if (objective != nullptr) *objective = obj;
  return grad;
}

namespace {

// Ascent on `grad` through an optimizer that minimizes.
double apply_ascent(PolicyParams& policy, Adam& optimizer, PolicyParams& grad, double clip_norm) {
  for (auto& g : grad.values()) g = -g;
  const double norm = clip_global_norm(grad.values(), clip_norm);
  optimizer.step(policy.values(), grad.values());
  if (!policy.all_finite()) throw NumericError("parameters became non-finite after update");
  return norm;
}

}  // namespace

StepStats ppo_step(PolicyParams& policy, Adam& optimizer, const RolloutBatch& batch, const SceneDataset& dataset,
                   const RlConfig& cfg) {
  cfg.validate();
  StepStats stats;
  for (std::size_t pass = 0; pass < cfg.ppo_epochs; ++pass) {
    SurrogateStats st;
    PolicyParams grad = surrogate_gradient(policy, batch, dataset, cfg.clip_eps, &st);
    if (pass == 0) stats.objective = st.objective;
    stats.final_objective = st.objective;
    stats.mean_ratio += st.mean_ratio / static_cast<double>(cfg.ppo_epochs);
    stats.clip_fraction += st.clip_fraction / static_cast<double>(cfg.ppo_epochs);
    try {
      stats.grad_norm = apply_ascent(policy, optimizer, grad, cfg.grad_clip_norm);
    } catch (const NumericError& e) {
      throw NumericError("ppo pass " + std::to_string(pass) + ": " + e.what());
    }
  }
  return stats;
}

StepStats scst_step(PolicyParams& policy, Adam& optimizer, const RolloutBatch& batch, const SceneDataset& dataset,
                    const RlConfig& cfg) {
  cfg.validate();
  StepStats stats;
  PolicyParams grad = scst_gradient(policy, batch, dataset, &stats.objective);
  stats.final_objective = stats.objective;
  stats.mean_ratio = 1.0;
  try {
    stats.grad_norm = apply_ascent(policy, optimizer, grad, cfg.grad_clip_norm);
  } catch (const NumericError& e) {
    throw NumericError(std::string("scst: ") + e.what());
  }
  return stats;
}

TrainState TrainState::start(const PolicyParams& initial, const RlConfig& cfg) {
  return TrainState{initial, FrozenPolicy(initial), Adam(initial.values().size(), cfg.lr), 0};
}

void TrainState::save(std::ostream& out) const {
  out << "mocha-train-state 1\niteration " << iteration << '\n';
  policy.save(out);
  frozen.params().save(out);
  optimizer.save(out);
}

TrainState TrainState::load(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "mocha-train-state 1") throw ConfigError("train state: bad header");
  if (!std::getline(in, line) || line.rfind("iteration ", 0) != 0) throw ConfigError("train state: missing iteration");
  const std::size_t iteration = std::stoull(line.substr(10));
  PolicyParams policy = PolicyParams::load(in);
  PolicyParams frozen = PolicyParams::load(in);
  Adam adam = Adam::load(in);
  return TrainState{std::move(policy), FrozenPolicy(std::move(frozen)), std::move(adam), iteration};
}

void write_log_header(std::ostream& out) {
  out << "iteration,mean_rf,mean_ra,mean_K,mean_base,clip_fraction,probe_halluc_rate,probe_F1,mean_len\n";
}

void write_log_row(std::ostream& out, const IterationLog& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.iteration, r.mean_rf,
                r.mean_ra, r.mean_K, r.mean_base, r.clip_fraction, r.probe_halluc_rate, r.probe_f1, r.mean_len);
  out << buf;
}

std::span<const SceneRecord> probe_scenes(const SceneDataset& dataset, std::size_t n) {
  const auto& split = dataset.eval.empty() ? dataset.train : dataset.eval;
  return std::span<const SceneRecord>(split).first(std::min(n, split.size()));
}

std::vector<IterationLog> train(TrainState& state, const SceneDataset& dataset, const Vocabulary& vocab,
                                const RewardSetup& reward, const RlConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  const WorldLexicon lexicon = dataset.lexicon();
  const auto probe = probe_scenes(dataset, cfg.probe_size);
  DecodeConfig probe_decode;
  probe_decode.mode = DecodeMode::Greedy;
  probe_decode.max_len = cfg.decode.max_len;

  std::vector<IterationLog> log;
  while (state.iteration < cfg.total_iterations) {
    Rng rng = Rng::derive(cfg.seed, state.iteration);
    const RolloutBatch batch = collect(state.policy, state.frozen, dataset, vocab, reward, cfg, rng);
    const StepStats stats = cfg.algorithm == Algorithm::Ppo
                                ? ppo_step(state.policy, state.optimizer, batch, dataset, cfg)
                                : scst_step(state.policy, state.optimizer, batch, dataset, cfg);
    ++state.iteration;

    IterationLog row;
    row.iteration = state.iteration;
    const double inv = 1.0 / static_cast<double>(batch.samples.size());
    for (const auto& s : batch.samples) {
      row.mean_rf += s.reward.r_f * inv;
      row.mean_ra += s.reward.r_a * inv;
      row.mean_K += s.reward.K * inv;
      row.mean_base += s.reward.base * inv;
    }
    row.clip_fraction = stats.clip_fraction;
    if (!probe.empty()) {
      const auto pt = fidelity_adequacy_point(state.policy, probe, vocab, lexicon, probe_decode);
      row.probe_halluc_rate = pt.instance_rate;
      row.probe_f1 = pt.mean_f1;
      row.mean_len = pt.mean_length;
    }
    log.push_back(row);
    if (hooks.on_iteration) hooks.on_iteration(row);
    if (hooks.on_checkpoint && cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0) {
      hooks.on_checkpoint(state);
    }
  }
  return log;
}

double estimate_kl(const PolicyParams& policy, const PolicyParams& reference, std::span<const SceneRecord> scenes,
                   std::size_t samples_per_scene, std::size_t max_len, std::uint64_t seed) {
  if (scenes.empty() || samples_per_scene == 0) return 0.0;
  DecodeConfig ancestral;
  ancestral.nucleus_p = 1.0;
  ancestral.temperature = 1.0;
  ancestral.max_len = max_len;
  Rng rng = Rng::derive(seed, 0x6b1);
  double sum = 0.0;
  for (const auto& rec : scenes) {
    for (std::size_t k = 0; k < samples_per_scene; ++k) {
      const auto s = sample(policy, rec.scene.features, ancestral, rng);
      sum += logprob(policy, rec.scene.features, s.seq) - logprob(reference, rec.scene.features, s.seq);
    }
  }
  return sum / static_cast<double>(scenes.size() * samples_per_scene);
}

}  // namespace mocha
