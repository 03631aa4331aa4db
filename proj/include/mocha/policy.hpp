#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include "mocha/rng.hpp"
#include "mocha/seqmodel.hpp"

namespace mocha {

struct SceneDataset;

// Fixed-window conditional language model:
//   x = [scene features ; E[ctx_1] ; ... ; E[ctx_k]]
//   h = tanh(W1 x + b1),  logits = W2 h + b2
// with BOS, PAD and UNK masked out of the output softmax.
struct PolicyShape {
  std::size_t vocab = 0;
  std::size_t token_dim = 16;
  std::size_t hidden = 64;
  std::size_t context = 3;
  std::size_t feature_dim = 16;

  std::size_t input_dim() const { return feature_dim + context * token_dim; }
  std::size_t num_params() const;
  bool operator==(const PolicyShape&) const = default;
};

class PolicyParams {
 public:
  PolicyParams() = default;
  explicit PolicyParams(const PolicyShape& shape);  // zero-initialized

  static PolicyParams random(const PolicyShape& shape, Rng& rng);

  const PolicyShape& shape() const { return shape_; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  std::span<double> embeddings() { return block(0, shape_.vocab * shape_.token_dim); }
  std::span<double> w1() { return block(off_w1(), shape_.hidden * shape_.input_dim()); }
  std::span<double> b1() { return block(off_b1(), shape_.hidden); }
  std::span<double> w2() { return block(off_w2(), shape_.vocab * shape_.hidden); }
  std::span<double> b2() { return block(off_b2(), shape_.vocab); }
  std::span<const double> embeddings() const { return block(0, shape_.vocab * shape_.token_dim); }
  std::span<const double> w1() const { return block(off_w1(), shape_.hidden * shape_.input_dim()); }
  std::span<const double> b1() const { return block(off_b1(), shape_.hidden); }
  std::span<const double> w2() const { return block(off_w2(), shape_.vocab * shape_.hidden); }
  std::span<const double> b2() const { return block(off_b2(), shape_.vocab); }

  bool all_finite() const;
  bool operator==(const PolicyParams&) const = default;

  // Versioned text dump: header line, shape line, one hexfloat per line.
  void save(std::ostream& out) const;
  static PolicyParams load(std::istream& in);

 private:
  std::size_t off_w1() const { return shape_.vocab * shape_.token_dim; }
  std::size_t off_b1() const { return off_w1() + shape_.hidden * shape_.input_dim(); }
  std::size_t off_w2() const { return off_b1() + shape_.hidden; }
  std::size_t off_b2() const { return off_w2() + shape_.vocab * shape_.hidden; }
  std::span<double> block(std::size_t off, std::size_t n) { return std::span<double>(values_).subspan(off, n); }
  std::span<const double> block(std::size_t off, std::size_t n) const {
    return std::span<const double>(values_).subspan(off, n);
  }

  PolicyShape shape_;
  std::vector<double> values_;
};

// Reference policy captured at the start of RL; never mutated afterwards.
class FrozenPolicy {
 public:
  explicit FrozenPolicy(PolicyParams params)
      : params_(std::make_shared<const PolicyParams>(std::move(params))) {}
  const PolicyParams& params() const { return *params_; }

 private:
  std::shared_ptr<const PolicyParams> params_;
};

enum class DecodeMode { Sample, Greedy, Beam };

struct DecodeConfig {
  DecodeMode mode = DecodeMode::Sample;
  double nucleus_p = 0.9;
  double temperature = 1.2;
  std::size_t beam_width = 5;
  std::size_t max_len = kDefaultMaxLen;

  void validate() const;
};

// Masked log-softmax over the next token given the preceding ids.
std::vector<double> next_token_logprobs(const PolicyParams& params, std::span<const double> features,
                                        std::span<const TokenId> prefix);

// Forward pass over a whole sequence with the activations kept for backprop.
class SequenceEvaluation {
 public:
  SequenceEvaluation(const PolicyParams& params, std::span<const double> features, const TokenSeq& seq);

  double logprob() const { return logprob_; }
  // grad += weight * d logprob / d params
  void backward(double weight, PolicyParams& grad) const;

 private:
  const PolicyParams* params_;
  std::vector<std::size_t> context_;  // steps x k token ids
  std::vector<TokenId> targets_;
  std::vector<double> inputs_;  // steps x input_dim
  std::vector<double> hidden_;  // steps x hidden
  std::vector<double> probs_;   // steps x vocab
  double logprob_ = 0.0;
};

double logprob(const PolicyParams& params, std::span<const double> features, const TokenSeq& seq);
PolicyParams grad_logprob(const PolicyParams& params, std::span<const double> features, const TokenSeq& seq);

struct SampledSeq {
  TokenSeq seq;
  // Untruncated, untempered model log-probabilities of each emitted token.
  std::vector<double> step_logprobs;
  double logprob = 0.0;
};

// Nucleus sampling with temperature; stops at EOS or max_len.
SampledSeq sample(const PolicyParams& params, std::span<const double> features, const DecodeConfig& cfg,
                  Rng& rng);
TokenSeq greedy(const PolicyParams& params, std::span<const double> features, std::size_t max_len = kDefaultMaxLen);

struct Hypothesis {
  TokenSeq seq;
  double logprob = 0.0;
};

// Ranked by summed log-probability, best first; ties go to the
// lexicographically smaller id sequence.
std::vector<Hypothesis> beam_search(const PolicyParams& params, std::span<const double> features,
                                    const DecodeConfig& cfg);

// Dispatches on cfg.mode; beam mode returns the top hypothesis.
TokenSeq decode_one(const PolicyParams& params, std::span<const double> features, const DecodeConfig& cfg, Rng& rng);

// Rescales grad in place when its L2 norm exceeds max_norm. Returns the
// pre-clip norm; throws NumericError on non-finite entries.
double clip_global_norm(std::span<double> grad, double max_norm);

class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // params -= lr * adam_direction(grad); grad is the gradient of a loss.
  void step(std::span<double> params, std::span<const double> grad);

  double learning_rate() const { return lr_; }
  std::uint64_t steps() const { return t_; }

  void save(std::ostream& out) const;
  static Adam load(std::istream& in);

 private:
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::uint64_t t_ = 0;
  std::vector<double> m_, v_;
};

struct MleConfig {
  std::size_t epochs = 40;
  double lr = 1e-3;
  std::size_t batch_size = 32;
  double grad_clip_norm = 5.0;
  std::uint64_t seed = 7;
};

struct MleResult {
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;
};

// Adam on the mean negative log-likelihood of the train captions.
MleResult mle_train(PolicyParams& params, const SceneDataset& dataset, const Vocabulary& vocab,
                    const MleConfig& cfg);

PolicyShape default_policy_shape(const Vocabulary& vocab, std::size_t feature_dim);

// Helpers for text state files (hexfloat, bit-exact).
void write_doubles(std::ostream& out, std::span<const double> values);
std::vector<double> read_doubles(std::istream& in, std::size_t n);

}  // namespace mocha
