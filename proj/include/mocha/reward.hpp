#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mocha/remote.hpp"
#include "mocha/seqmodel.hpp"

namespace mocha {

struct Scene;

// A generated caption as seen by the scorers.
struct Candidate {
  std::string text;
  FactSet facts;
};

// A ground-truth caption; `scene` is the image it describes.
struct Reference {
  std::string text;
  const Scene* scene = nullptr;
};

// Probability in [0,1] that the candidate contradicts the reference.
class ContradictionScorer {
 public:
  virtual ~ContradictionScorer() = default;
  virtual double contradiction(const Candidate& candidate, const Reference& reference) const = 0;
};

// F1-style similarity in [0,1] of candidate to reference.
class SimilarityScorer {
 public:
  virtual ~SimilarityScorer() = default;
  virtual double f1(const Candidate& candidate, const Reference& reference) const = 0;
};

class OracleContradictionScorer : public ContradictionScorer {
 public:
  double contradiction(const Candidate& candidate, const Reference& reference) const override;
};

class OracleSimilarityScorer : public SimilarityScorer {
 public:
  double f1(const Candidate& candidate, const Reference& reference) const override;
};

// Wire contract: request {candidate, reference} -> response {score in [0,1]}.
// Serves as either scorer kind.
class RemoteScorer : public ContradictionScorer, public SimilarityScorer {
 public:
  explicit RemoteScorer(std::shared_ptr<JsonTransport> transport) : transport_(std::move(transport)) {}
  double contradiction(const Candidate& candidate, const Reference& reference) const override;
  double f1(const Candidate& candidate, const Reference& reference) const override;

 private:
  double score(const Candidate& candidate, const Reference& reference) const;
  std::shared_ptr<JsonTransport> transport_;
};

struct RewardConfig {
  double alpha = 0.5;
  double beta = 0.02;

  void validate() const;
};

// r_f = mean_j (1 - 2 p_j) over references.
double fidelity(const Candidate& candidate, std::span<const Reference> references, const ContradictionScorer& scorer);
// r_a = 2 * mean_j F1_j - 1.
double adequacy(const Candidate& candidate, std::span<const Reference> references, const SimilarityScorer& scorer);
// K = log pi_0(c|i) - log pi_theta(c|i).
inline double kl_term(double policy_logprob, double reference_logprob) { return reference_logprob - policy_logprob; }

struct RewardInputs {
  double fidelity = 0.0;
  double adequacy = 0.0;
  double kl = 0.0;
};

struct RewardBreakdown {
  double r_f = 0.0;
  double r_a = 0.0;
  double K = 0.0;
  double base = 0.0;   // alpha r_f + (1 - alpha) r_a
  double total = 0.0;  // base + beta K
  double advantage = 0.0;
};

// Uncentered: advantage == total.
RewardBreakdown combine(const RewardInputs& in, const RewardConfig& cfg);

// One image group: advantage_g = (base_g - mean base) + beta K_g. The KL
// term is never centered.
std::vector<RewardBreakdown> center_and_combine(std::span<const RewardInputs> group, const RewardConfig& cfg);

}  // namespace mocha
