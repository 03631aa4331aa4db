#include "mocha/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

#include <Eigen/Core>

#include "mocha/errors.hpp"
#include "mocha/synthcap.hpp"

namespace mocha {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Fills x = [features ; E[ctx...]] and returns the context ids used.
void build_input(const PolicyParams& p, std::span<const double> features, std::span<const TokenId> prefix,
                 std::span<double> x, std::span<std::size_t> ctx) {
  const auto& s = p.shape();
  if (features.size() != s.feature_dim) throw ConfigError("policy: feature dimension mismatch");
  std::copy(features.begin(), features.end(), x.begin());
  const auto emb = p.embeddings();
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(prefix.size());
  for (std::size_t i = 0; i < s.context; ++i) {
    const std::ptrdiff_t pos = n - static_cast<std::ptrdiff_t>(s.context) + static_cast<std::ptrdiff_t>(i);
    const TokenId id = pos >= 0 ? prefix[static_cast<std::size_t>(pos)] : Vocabulary::kBos;
    if (id < 0 || static_cast<std::size_t>(id) >= s.vocab) {
      throw ConfigError("policy: token id " + std::to_string(id) + " outside vocabulary");
    }
    ctx[i] = static_cast<std::size_t>(id);
    const double* e = emb.data() + ctx[i] * s.token_dim;
    std::copy(e, e + s.token_dim, x.begin() + static_cast<std::ptrdiff_t>(s.feature_dim + i * s.token_dim));
  }
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;

ConstMatrixMap w1_of(const PolicyParams& p) {
  return ConstMatrixMap(p.w1().data(), static_cast<Eigen::Index>(p.shape().hidden),
                        static_cast<Eigen::Index>(p.shape().input_dim()));
}
ConstMatrixMap w2_of(const PolicyParams& p) {
  return ConstMatrixMap(p.w2().data(), static_cast<Eigen::Index>(p.shape().vocab),
                        static_cast<Eigen::Index>(p.shape().hidden));
}
ConstVectorMap vec(std::span<const double> v) { return ConstVectorMap(v.data(), static_cast<Eigen::Index>(v.size())); }
VectorMap vec(std::span<double> v) { return VectorMap(v.data(), static_cast<Eigen::Index>(v.size())); }

// h = tanh(W1 x + b1); z = W2 h + b2.
void forward_step(const PolicyParams& p, std::span<const double> x, std::span<double> h, std::span<double> z) {
  vec(h) = (w1_of(p) * vec(x) + vec(p.b1())).array().tanh().matrix();
  vec(z) = w2_of(p) * vec(std::span<const double>(h)) + vec(p.b2());
}

// In-place masked log-softmax of z / temperature.
void masked_log_softmax(std::span<double> z, double temperature = 1.0) {
  double zmax = kNegInf;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (Vocabulary::emittable(static_cast<TokenId>(i))) zmax = std::max(zmax, z[i]);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!Vocabulary::emittable(static_cast<TokenId>(i))) {
      z[i] = kNegInf;
      continue;
    }
    z[i] = (z[i] - zmax) / temperature;
    sum += std::exp(z[i]);
  }
  const double lse = std::log(sum);
  for (auto& v : z) v -= lse;
}

struct StepOutput {
  std::vector<double> x, h, z;
  std::vector<std::size_t> ctx;
  explicit StepOutput(const PolicyShape& s) : x(s.input_dim()), h(s.hidden), z(s.vocab), ctx(s.context) {}
};

// Raw logits for the next token.
void raw_logits(const PolicyParams& p, std::span<const double> features, std::span<const TokenId> prefix,
                StepOutput& out) {
  build_input(p, features, prefix, out.x, out.ctx);
  forward_step(p, out.x, out.h, out.z);
}

TokenId argmax_emittable(std::span<const double> z) {
  TokenId best = Vocabulary::kEos;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (Vocabulary::emittable(static_cast<TokenId>(i)) && z[i] > z[static_cast<std::size_t>(best)]) {
      best = static_cast<TokenId>(i);
    }
  }
  return best;
}

bool hypothesis_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.logprob != b.logprob) return a.logprob > b.logprob;
  return a.seq.ids < b.seq.ids;
}

}  // namespace

std::size_t PolicyShape::num_params() const {
  return vocab * token_dim + hidden * input_dim() + hidden + vocab * hidden + vocab;
}

PolicyShape default_policy_shape(const Vocabulary& vocab, std::size_t feature_dim) {
  PolicyShape s;
  s.vocab = vocab.size();
  s.feature_dim = feature_dim;
  return s;
}

PolicyParams::PolicyParams(const PolicyShape& shape) : shape_(shape), values_(shape.num_params(), 0.0) {
  if (shape.vocab <= Vocabulary::kNumSpecial - 1 || shape.token_dim == 0 || shape.hidden == 0 ||
      shape.context == 0 || shape.feature_dim == 0) {
    throw ConfigError("policy: invalid shape");
  }
}

PolicyParams PolicyParams::random(const PolicyShape& shape, Rng& rng) {
  PolicyParams p(shape);
  for (auto& v : p.embeddings()) v = 0.5 * rng.normal();
  const double s1 = 1.0 / std::sqrt(static_cast<double>(shape.input_dim()));
  for (auto& v : p.w1()) v = s1 * rng.normal();
  const double s2 = 0.5 / std::sqrt(static_cast<double>(shape.hidden));
  for (auto& v : p.w2()) v = s2 * rng.normal();
  return p;
}

bool PolicyParams::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void write_doubles(std::ostream& out, std::span<const double> values) {
  char buf[64];
  for (double v : values) {
    std::snprintf(buf, sizeof buf, "%a\n", v);
    out << buf;
  }
}

std::vector<double> read_doubles(std::istream& in, std::size_t n) {
  std::vector<double> values(n);
  std::string line;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw ConfigError("state file: truncated tensor data");
    char* end = nullptr;
    values[i] = std::strtod(line.c_str(), &end);
    if (end == line.c_str()) throw ConfigError("state file: malformed number '" + line + "'");
  }
  return values;
}

void PolicyParams::save(std::ostream& out) const {
  out << "mocha-policy 1\n";
  out << "vocab " << shape_.vocab << " token_dim " << shape_.token_dim << " hidden " << shape_.hidden
      << " context " << shape_.context << " feature_dim " << shape_.feature_dim << '\n';
  write_doubles(out, values_);
}

PolicyParams PolicyParams::load(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "mocha-policy 1") throw ConfigError("checkpoint: bad header");
  if (!std::getline(in, line)) throw ConfigError("checkpoint: missing shape line");
  std::istringstream ss(line);
  std::string k1, k2, k3, k4, k5;
  PolicyShape s;
  if (!(ss >> k1 >> s.vocab >> k2 >> s.token_dim >> k3 >> s.hidden >> k4 >> s.context >> k5 >> s.feature_dim) ||
      k1 != "vocab" || k2 != "token_dim" || k3 != "hidden" || k4 != "context" || k5 != "feature_dim") {
    throw ConfigError("checkpoint: malformed shape line");
  }
  PolicyParams p(s);
  p.values_ = read_doubles(in, s.num_params());
  return p;
}

void DecodeConfig::validate() const {
  if (!(nucleus_p > 0.0 && nucleus_p <= 1.0)) throw ConfigError("decode: nucleus_p must lie in (0,1]");
  if (!(temperature > 0.0)) throw ConfigError("decode: temperature must be positive");
  if (beam_width < 1) throw ConfigError("decode: beam_width must be at least 1");
  if (max_len < 2) throw ConfigError("decode: max_len must be at least 2");
}

std::vector<double> next_token_logprobs(const PolicyParams& params, std::span<const double> features,
                                        std::span<const TokenId> prefix) {
  StepOutput out(params.shape());
  raw_logits(params, features, prefix, out);
  masked_log_softmax(out.z);
  return out.z;
}

SequenceEvaluation::SequenceEvaluation(const PolicyParams& params, std::span<const double> features,
                                       const TokenSeq& seq)
    : params_(&params) {
  const auto& s = params.shape();
  if (seq.ids.empty() || seq.ids.front() != Vocabulary::kBos) throw ConfigError("policy: sequence must start with BOS");
  const std::size_t steps = seq.ids.size() - 1;
  context_.resize(steps * s.context);
  targets_.resize(steps);
  inputs_.resize(steps * s.input_dim());
  hidden_.resize(steps * s.hidden);
  probs_.resize(steps * s.vocab);
  const std::span<const TokenId> ids(seq.ids);
  for (std::size_t t = 0; t < steps; ++t) {
    const TokenId target = seq.ids[t + 1];
    if (target < 0 || static_cast<std::size_t>(target) >= s.vocab) {
      throw ConfigError("policy: token id " + std::to_string(target) + " outside vocabulary");
    }
    if (!Vocabulary::emittable(target)) throw ConfigError("policy: sequence contains a non-emittable token");
    targets_[t] = target;
    std::span<double> x(inputs_.data() + t * s.input_dim(), s.input_dim());
    build_input(params, features, ids.first(t + 1), x, std::span<std::size_t>(context_.data() + t * s.context, s.context));
  }
  if (steps == 0) return;
  const auto n = static_cast<Eigen::Index>(steps);
  const ConstMatrixMap X(inputs_.data(), n, static_cast<Eigen::Index>(s.input_dim()));
  MatrixMap H(hidden_.data(), n, static_cast<Eigen::Index>(s.hidden));
  MatrixMap Z(probs_.data(), n, static_cast<Eigen::Index>(s.vocab));
  H.noalias() = X * w1_of(params).transpose();
  H.rowwise() += vec(params.b1()).transpose();
  H = H.array().tanh().matrix();
  Z.noalias() = H * w2_of(params).transpose();
  Z.rowwise() += vec(params.b2()).transpose();
  for (std::size_t t = 0; t < steps; ++t) {
    std::span<double> z(probs_.data() + t * s.vocab, s.vocab);
    masked_log_softmax(z);
    logprob_ += z[static_cast<std::size_t>(targets_[t])];
    for (auto& v : z) v = std::exp(v);
  }
}

void SequenceEvaluation::backward(double weight, PolicyParams& grad) const {
  const PolicyParams& p = *params_;
  const auto& s = p.shape();
  if (!(grad.shape() == s)) throw ConfigError("policy: gradient shape mismatch");
  const std::size_t in = s.input_dim();
  const std::size_t steps = targets_.size();
  if (steps == 0) return;
  const auto n = static_cast<Eigen::Index>(steps);
  const ConstMatrixMap X(inputs_.data(), n, static_cast<Eigen::Index>(in));
  const ConstMatrixMap H(hidden_.data(), n, static_cast<Eigen::Index>(s.hidden));
  const ConstMatrixMap P(probs_.data(), n, static_cast<Eigen::Index>(s.vocab));
  // d logprob / d logits = onehot(target) - p, per step.
  RowMatrix dZ = -weight * P;
  for (std::size_t t = 0; t < steps; ++t) dZ(static_cast<Eigen::Index>(t), targets_[t]) += weight;
  MatrixMap gW2(grad.w2().data(), static_cast<Eigen::Index>(s.vocab), static_cast<Eigen::Index>(s.hidden));
  MatrixMap gW1(grad.w1().data(), static_cast<Eigen::Index>(s.hidden), static_cast<Eigen::Index>(in));
  vec(grad.b2()) += dZ.colwise().sum().transpose();
  gW2.noalias() += dZ.transpose() * H;
  RowMatrix dA = dZ * w2_of(p);
  dA.array() *= (1.0 - H.array().square());
  vec(grad.b1()) += dA.colwise().sum().transpose();
  gW1.noalias() += dA.transpose() * X;
  const RowMatrix dX = dA * w1_of(p);
  auto gE = grad.embeddings();
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < s.context; ++i) {
      double* ge = gE.data() + context_[t * s.context + i] * s.token_dim;
      const double* src = dX.data() + t * in + s.feature_dim + i * s.token_dim;
      for (std::size_t d = 0; d < s.token_dim; ++d) ge[d] += src[d];
    }
  }
}

double logprob(const PolicyParams& params, std::span<const double> features, const TokenSeq& seq) {
  return SequenceEvaluation(params, features, seq).logprob();
}

PolicyParams grad_logprob(const PolicyParams& params, std::span<const double> features, const TokenSeq& seq) {
  PolicyParams g(params.shape());
  SequenceEvaluation(params, features, seq).backward(1.0, g);
  return g;
}

SampledSeq sample(const PolicyParams& params, std::span<const double> features, const DecodeConfig& cfg, Rng& rng) {
  cfg.validate();
  SampledSeq out;
  out.seq.ids.push_back(Vocabulary::kBos);
  StepOutput step(params.shape());
  const std::size_t v = params.shape().vocab;
  std::vector<double> model(v), tempered(v);
  std::vector<TokenId> order;
  while (out.seq.ids.size() < cfg.max_len) {
    raw_logits(params, features, out.seq.ids, step);
    model = step.z;
    masked_log_softmax(model);
    tempered = step.z;
    masked_log_softmax(tempered, cfg.temperature);
    order.clear();
    for (std::size_t i = 0; i < v; ++i) {
      if (Vocabulary::emittable(static_cast<TokenId>(i))) order.push_back(static_cast<TokenId>(i));
    }
    std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) {
      return tempered[static_cast<std::size_t>(a)] > tempered[static_cast<std::size_t>(b)];
    });
    double mass = 0.0;
    std::size_t keep = 0;
    while (keep < order.size()) {
      mass += std::exp(tempered[static_cast<std::size_t>(order[keep])]);
      ++keep;
      if (mass >= cfg.nucleus_p) break;
    }
    double u = rng.uniform() * mass;
    TokenId tok = order[keep - 1];
    for (std::size_t i = 0; i < keep; ++i) {
      const double pr = std::exp(tempered[static_cast<std::size_t>(order[i])]);
      if (u < pr) {
        tok = order[i];
        break;
      }
      u -= pr;
    }
    const double lp = model[static_cast<std::size_t>(tok)];
    out.step_logprobs.push_back(lp);
    out.logprob += lp;
    out.seq.ids.push_back(tok);
    if (tok == Vocabulary::kEos) {
      out.seq.terminated = true;
      break;
    }
  }
  return out;
}

TokenSeq greedy(const PolicyParams& params, std::span<const double> features, std::size_t max_len) {
  TokenSeq seq;
  seq.ids.push_back(Vocabulary::kBos);
  StepOutput step(params.shape());
  while (seq.ids.size() < max_len) {
    raw_logits(params, features, seq.ids, step);
    const TokenId tok = argmax_emittable(step.z);
    seq.ids.push_back(tok);
    if (tok == Vocabulary::kEos) {
      seq.terminated = true;
      break;
    }
  }
  return seq;
}

std::vector<Hypothesis> beam_search(const PolicyParams& params, std::span<const double> features,
                                    const DecodeConfig& cfg) {
  cfg.validate();
  std::vector<Hypothesis> live{Hypothesis{TokenSeq{{Vocabulary::kBos}, false}, 0.0}};
  std::vector<Hypothesis> finished;
  std::vector<Hypothesis> candidates;
  // Each step keeps the best beam_width extensions; those that end leave the
  // beam, so the beam shrinks by one slot per finished hypothesis.
  std::size_t slots = cfg.beam_width;
  while (!live.empty()) {
    candidates.clear();
    for (const auto& hyp : live) {
      const auto lp = next_token_logprobs(params, features, hyp.seq.ids);
      for (std::size_t j = 0; j < lp.size(); ++j) {
        const TokenId tok = static_cast<TokenId>(j);
        if (!Vocabulary::emittable(tok)) continue;
        Hypothesis next = hyp;
        next.seq.ids.push_back(tok);
        next.seq.terminated = tok == Vocabulary::kEos;
        next.logprob += lp[j];
        candidates.push_back(std::move(next));
      }
    }
    const std::size_t keep = std::min(slots, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      hypothesis_before);
    live.clear();
    for (std::size_t i = 0; i < keep; ++i) {
      auto& c = candidates[i];
      if (c.seq.terminated || c.seq.ids.size() >= cfg.max_len) {
        finished.push_back(std::move(c));
        --slots;
      } else {
        live.push_back(std::move(c));
      }
    }
  }
  std::sort(finished.begin(), finished.end(), hypothesis_before);
  return finished;
}

TokenSeq decode_one(const PolicyParams& params, std::span<const double> features, const DecodeConfig& cfg, Rng& rng) {
  switch (cfg.mode) {
    case DecodeMode::Sample:
      return sample(params, features, cfg, rng).seq;
    case DecodeMode::Greedy:
      return greedy(params, features, cfg.max_len);
    case DecodeMode::Beam:
      return beam_search(params, features, cfg).front().seq;
  }
  return {};
}

double clip_global_norm(std::span<double> grad, double max_norm) {
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient (norm " + std::to_string(norm) + ")");
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& g : grad) g *= scale;
  }
  return norm;
}

Adam::Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw ConfigError("adam: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

void Adam::save(std::ostream& out) const {
  out << "mocha-adam 1\n" << m_.size() << ' ' << t_ << '\n';
  const double hyper[] = {lr_, beta1_, beta2_, eps_};
  write_doubles(out, hyper);
  write_doubles(out, m_);
  write_doubles(out, v_);
}

Adam Adam::load(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "mocha-adam 1") throw ConfigError("optimizer state: bad header");
  std::size_t n = 0;
  std::uint64_t t = 0;
  if (!std::getline(in, line) || !(std::istringstream(line) >> n >> t)) {
    throw ConfigError("optimizer state: malformed size line");
  }
  const auto hyper = read_doubles(in, 4);
  Adam a(n, hyper[0], hyper[1], hyper[2], hyper[3]);
  a.t_ = t;
  a.m_ = read_doubles(in, n);
  a.v_ = read_doubles(in, n);
  return a;
}

MleResult mle_train(PolicyParams& params, const SceneDataset& dataset, const Vocabulary& vocab, const MleConfig& cfg) {
  struct Example {
    const Scene* scene;
    TokenSeq seq;
  };
  std::vector<Example> examples;
  for (const auto& rec : dataset.train) {
    for (const auto& cap : rec.train_captions) examples.push_back({&rec.scene, encode(cap, vocab)});
  }
  if (examples.empty()) throw ConfigError("mle_train: no train captions");
  if (cfg.batch_size == 0) throw ConfigError("mle_train: batch_size must be positive");

  MleResult result;
  double total = 0.0;
  for (const auto& ex : examples) total -= logprob(params, ex.scene->features, ex.seq);
  result.initial_loss = total / static_cast<double>(examples.size());

  Adam adam(params.values().size(), cfg.lr);
  Rng rng = Rng::derive(cfg.seed, 0x41e);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  PolicyParams grad(params.shape());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double w = 1.0 / static_cast<double>(end - start);
      std::fill(grad.values().begin(), grad.values().end(), 0.0);
      for (std::size_t k = start; k < end; ++k) {
        const auto& ex = examples[order[k]];
        SequenceEvaluation ev(params, ex.scene->features, ex.seq);
        epoch_loss -= ev.logprob();
        ev.backward(-w, grad);
      }
      clip_global_norm(grad.values(), cfg.grad_clip_norm);
      adam.step(params.values(), grad.values());
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(examples.size()));
  }
  return result;
}

}  // namespace mocha
