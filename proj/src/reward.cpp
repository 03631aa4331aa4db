#include "mocha/reward.hpp"

#include <cmath>

#include "mocha/errors.hpp"
#include "mocha/synthcap.hpp"

namespace mocha {
namespace {

const Scene& scene_of(const Reference& ref) {
  if (ref.scene == nullptr) throw ConfigError("oracle scorer: reference has no scene");
  return *ref.scene;
}

}  // namespace

double OracleContradictionScorer::contradiction(const Candidate& candidate, const Reference& reference) const {
  return oracle_contradiction(candidate.facts, scene_of(reference));
}

double OracleSimilarityScorer::f1(const Candidate& candidate, const Reference& reference) const {
  return oracle_adequacy(candidate.facts, scene_of(reference));
}

double RemoteScorer::score(const Candidate& candidate, const Reference& reference) const {
  const auto response = transport_->post({{"candidate", candidate.text}, {"reference", reference.text}});
  if (!response.is_object() || !response.contains("score") || !response["score"].is_number()) {
    throw ServiceError("remote scorer: response lacks a numeric 'score'");
  }
  const double s = response["score"].get<double>();
  if (!(s >= 0.0 && s <= 1.0)) throw ServiceError("remote scorer: score " + std::to_string(s) + " outside [0,1]");
  return s;
}

double RemoteScorer::contradiction(const Candidate& candidate, const Reference& reference) const {
  return score(candidate, reference);
}

double RemoteScorer::f1(const Candidate& candidate, const Reference& reference) const {
  return score(candidate, reference);
}

void RewardConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("reward: alpha must lie in [0,1]");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("reward: beta must be finite and >= 0");
}

double fidelity(const Candidate& candidate, std::span<const Reference> references, const ContradictionScorer& scorer) {
  if (references.empty()) throw ConfigError("fidelity: at least one reference required");
  double sum = 0.0;
  for (const auto& ref : references) sum += 1.0 - 2.0 * scorer.contradiction(candidate, ref);
  return sum / static_cast<double>(references.size());
}

double adequacy(const Candidate& candidate, std::span<const Reference> references, const SimilarityScorer& scorer) {
  if (references.empty()) throw ConfigError("adequacy: at least one reference required");
  double sum = 0.0;
  for (const auto& ref : references) sum += scorer.f1(candidate, ref);
  return 2.0 * (sum / static_cast<double>(references.size())) - 1.0;
}

RewardBreakdown combine(const RewardInputs& in, const RewardConfig& cfg) {
  RewardBreakdown b;
  b.r_f = in.fidelity;
  b.r_a = in.adequacy;
  b.K = in.kl;
  b.base = cfg.alpha * in.fidelity + (1.0 - cfg.alpha) * in.adequacy;
  b.total = b.base + cfg.beta * in.kl;
  b.advantage = b.total;
  return b;
}

std::vector<RewardBreakdown> center_and_combine(std::span<const RewardInputs> group, const RewardConfig& cfg) {
  if (group.empty()) throw ConfigError("center_and_combine: empty group");
  std::vector<RewardBreakdown> out;
  out.reserve(group.size());
  double mean = 0.0;
  for (const auto& in : group) {
    out.push_back(combine(in, cfg));
    mean += out.back().base;
  }
  mean /= static_cast<double>(group.size());
  for (auto& b : out) b.advantage = (b.base - mean) + cfg.beta * b.K;
  return out;
}

}  // namespace mocha
