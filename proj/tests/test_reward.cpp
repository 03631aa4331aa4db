#include <cmath>
#include <functional>

#include "doctest.h"
#include "mocha/errors.hpp"
#include "mocha/policy.hpp"
#include "mocha/reward.hpp"
#include "mocha/synthcap.hpp"

using namespace mocha;

namespace {

// Returns queued scores in order, one per call.
class QueueScorer : public ContradictionScorer, public SimilarityScorer {
 public:
  explicit QueueScorer(std::vector<double> scores) : scores_(std::move(scores)) {}
  double contradiction(const Candidate&, const Reference&) const override { return scores_.at(next_++); }
  double f1(const Candidate&, const Reference&) const override { return scores_.at(next_++); }

 private:
  std::vector<double> scores_;
  mutable std::size_t next_ = 0;
};

class FakeTransport : public JsonTransport {
 public:
  explicit FakeTransport(nlohmann::json reply) : reply_(std::move(reply)) {}
  nlohmann::json post(const nlohmann::json& request) override {
    last = request;
    return reply_;
  }
  nlohmann::json last;

 private:
  nlohmann::json reply_;
};

std::vector<Reference> refs(std::size_t n) { return std::vector<Reference>(n, Reference{"ref", nullptr}); }

// Independent restatement of the reward arithmetic.
struct RefReward {
  double base, total;
};
RefReward ref_reward(double rf, double ra, double k, double alpha, double beta) {
  const double base = alpha * rf + (1.0 - alpha) * ra;
  return {base, base + beta * k};
}

}  // namespace

TEST_CASE("fidelity examples") {
  const Candidate c{"x", {}};
  CHECK(fidelity(c, refs(3), QueueScorer({0, 0, 0})) == 1.0);
  CHECK(fidelity(c, refs(1), QueueScorer({0.5})) == 0.0);
  CHECK(fidelity(c, refs(3), QueueScorer({0.2, 0.4, 0.0})) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK_THROWS_AS(fidelity(c, refs(0), QueueScorer({})), ConfigError);
}

TEST_CASE("adequacy examples") {
  const Candidate c{"x", {}};
  CHECK(adequacy(c, refs(1), QueueScorer({1.0})) == 1.0);
  CHECK(adequacy(c, refs(1), QueueScorer({0.0})) == -1.0);
  CHECK(adequacy(c, refs(1), QueueScorer({2.0 / 3.0})) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS_AS(adequacy(c, refs(0), QueueScorer({})), ConfigError);
}

TEST_CASE("kl term examples") {
  CHECK(kl_term(-4.5, -4.5) == 0.0);
  CHECK(kl_term(-2.0, -3.0) == -1.0);
}

TEST_CASE("centering examples") {
  RewardConfig cfg{0.3, 0.0};
  std::vector<RewardInputs> same(4, RewardInputs{0.2, 0.2, 0.0});
  for (const auto& b : center_and_combine(same, cfg)) CHECK(b.advantage == 0.0);

  for (double alpha : {0.0, 0.5, 1.0}) {
    cfg = {alpha, 0.02};
    const std::vector<RewardInputs> g{{1, 1, 0}, {-1, -1, 0}};
    const auto out = center_and_combine(g, cfg);
    CHECK(out[0].advantage == 1.0);
    CHECK(out[1].advantage == -1.0);
  }

  // Bases {0.5, 0.1, -0.6} via r_f == r_a.
  cfg = {0.5, 0.02};
  const std::vector<RewardInputs> g{{0.5, 0.5, -1}, {0.1, 0.1, 0}, {-0.6, -0.6, 2}};
  const auto out = center_and_combine(g, cfg);
  CHECK(out[0].advantage == doctest::Approx(0.48).epsilon(1e-14));
  CHECK(out[1].advantage == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(out[2].advantage == doctest::Approx(-0.56).epsilon(1e-14));
  CHECK_THROWS_AS(center_and_combine(std::vector<RewardInputs>{}, cfg), ConfigError);
}

TEST_CASE("random tuples match the reference arithmetic") {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const RewardConfig cfg{rng.uniform(), 0.004 + 0.056 * rng.uniform()};
    const std::size_t g = 2 + rng.index(9);
    std::vector<RewardInputs> group(g);
    for (auto& in : group) in = {2 * rng.uniform() - 1, 2 * rng.uniform() - 1, 4 * rng.normal()};
    const auto out = center_and_combine(group, cfg);
    double mean = 0;
    for (const auto& in : group) mean += ref_reward(in.fidelity, in.adequacy, in.kl, cfg.alpha, cfg.beta).base;
    mean /= static_cast<double>(g);
    double residual = 0;
    for (std::size_t i = 0; i < g; ++i) {
      const auto r = ref_reward(group[i].fidelity, group[i].adequacy, group[i].kl, cfg.alpha, cfg.beta);
      CHECK(std::abs(out[i].base - r.base) <= 1e-12);
      CHECK(std::abs(out[i].total - r.total) <= 1e-12);
      CHECK(out[i].total == out[i].base + cfg.beta * out[i].K);
      CHECK(std::abs(out[i].advantage - (r.base - mean + cfg.beta * group[i].kl)) <= 1e-12);
      residual += out[i].advantage - cfg.beta * out[i].K;
    }
    CHECK(std::abs(residual) <= 1e-9);
  }
}

TEST_CASE("alpha endpoints silence one objective") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const double rf = 2 * rng.uniform() - 1, ra = 2 * rng.uniform() - 1, ra2 = 2 * rng.uniform() - 1;
    CHECK(combine({rf, ra, 0.3}, {1.0, 0.02}).total == combine({rf, ra2, 0.3}, {1.0, 0.02}).total);
    CHECK(combine({ra, rf, 0.3}, {0.0, 0.02}).total == combine({ra2, rf, 0.3}, {0.0, 0.02}).total);
    const double alpha = rng.uniform();
    const double d = combine({rf + 0.25, ra, 0.1}, {alpha, 0.02}).total - combine({rf, ra, 0.1}, {alpha, 0.02}).total;
    CHECK(d == doctest::Approx(0.25 * alpha).epsilon(1e-9));
  }
}

TEST_CASE("reward config validation") {
  CHECK_NOTHROW(RewardConfig{}.validate());
  CHECK_THROWS_AS((RewardConfig{1.5, 0.02}).validate(), ConfigError);
  CHECK_THROWS_AS((RewardConfig{0.5, -0.1}).validate(), ConfigError);
  CHECK_NOTHROW((RewardConfig{0.5, 0.0}).validate());  // the no-KL ablation
}

TEST_CASE("oracle scorers read the reference's scene") {
  Scene sc;
  sc.objects = {{"cube", "red"}, {"cone", "blue"}};
  const Reference r{"red cube and blue cone", &sc};
  const Candidate c{"red cube and green ring", {{"cube", "red"}, {"ring", "green"}}};
  CHECK(OracleContradictionScorer().contradiction(c, r) == 0.5);
  CHECK(OracleSimilarityScorer().f1(c, r) == 0.5);
  const Reference none{"x", nullptr};
  CHECK_THROWS(OracleContradictionScorer().contradiction(c, none));
}

TEST_CASE("remote scorer wire contract") {
  auto t = std::make_shared<FakeTransport>(nlohmann::json{{"score", 0.25}});
  RemoteScorer scorer(t);
  const Candidate c{"red cube", {}};
  const Reference r{"blue cube", nullptr};
  CHECK(scorer.contradiction(c, r) == 0.25);
  CHECK(t->last == nlohmann::json{{"candidate", "red cube"}, {"reference", "blue cube"}});
  for (const auto& bad : {nlohmann::json{{"score", 1.5}}, nlohmann::json{{"value", 0.1}},
                          nlohmann::json{{"score", "0.1"}}, nlohmann::json::array()}) {
    RemoteScorer s(std::make_shared<FakeTransport>(bad));
    CHECK_THROWS_AS(s.f1(c, r), ServiceError);
  }
}

TEST_CASE("expected -K under the policy is the KL divergence and nonnegative") {
  const Vocabulary vocab(std::vector<std::string>{"a", "b"});
  PolicyShape shape;
  shape.vocab = vocab.size();
  shape.token_dim = 3;
  shape.hidden = 5;
  shape.context = 2;
  shape.feature_dim = 2;
  Rng rng(61);
  const std::vector<TokenId> emit{1, 4, 5};
  for (int trial = 0; trial < 5; ++trial) {
    const PolicyParams theta = PolicyParams::random(shape, rng);
    const PolicyParams pi0 = PolicyParams::random(shape, rng);
    const std::vector<double> feat{rng.normal(), rng.normal()};
    double expect_neg_k = 0, kl = 0, mass0 = 0;
    std::function<void(TokenSeq&)> rec = [&](TokenSeq& s) {
      for (TokenId t : emit) {
        s.ids.push_back(t);
        s.terminated = t == Vocabulary::kEos;
        if (s.terminated || s.ids.size() == 4) {
          const double lt = logprob(theta, feat, s), l0 = logprob(pi0, feat, s);
          expect_neg_k += std::exp(lt) * -kl_term(lt, l0);
          kl += std::exp(lt) * (lt - l0);
          mass0 += std::exp(l0);
        } else {
          rec(s);
        }
        s.ids.pop_back();
      }
    };
    TokenSeq start{{0}, false};
    rec(start);
    CHECK(std::abs(mass0 - 1.0) <= 1e-9);
    CHECK(expect_neg_k == doctest::Approx(kl).epsilon(1e-12));
    CHECK(expect_neg_k >= 0.0);
  }
}
