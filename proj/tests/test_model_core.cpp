#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "evsi/decision_model.hpp"
#include "evsi/toy_model.hpp"

using namespace evsi;

namespace {

// Wraps a model, adds `shift` to every net benefit and optionally keeps only
// the first decision.
class Shifted final : public DecisionModel {
 public:
  Shifted(const DecisionModel& base, double shift, bool single) : base_(base), shift_(shift), single_(single) {}
  std::size_t decision_count() const override { return single_ ? 1 : base_.decision_count(); }
  std::size_t parameter_count() const override { return base_.parameter_count(); }
  std::size_t observation_dim() const override { return base_.observation_dim(); }
  void sample_prior(RandomSource& rng, std::span<double> theta) const override { base_.sample_prior(rng, theta); }
  void net_benefits(std::span<const double> theta, std::span<double> out) const override {
    std::array<double, 8> all{};
    base_.net_benefits(theta, std::span<double>(all.data(), base_.decision_count()));
    for (std::size_t d = 0; d < decision_count(); ++d) out[d] = all[d] + shift_;
  }
  void sample_observation(std::span<const double> theta, RandomSource& rng, std::span<double> y) const override {
    base_.sample_observation(theta, rng, y);
  }
  double log_likelihood(std::span<const double> y, std::span<const double> theta) const override {
    return base_.log_likelihood(y, theta);
  }

 private:
  const DecisionModel& base_;
  double shift_;
  bool single_;
};

double normal_pdf_log(double x, double m, double v) {
  return -0.5 * std::log(2 * std::numbers::pi * v) - (x - m) * (x - m) / (2 * v);
}

}  // namespace

TEST_CASE("parameter registry") {
  const ParameterRegistry reg({"a", "b", "c"});
  CHECK(reg.size() == 3);
  CHECK(reg.index("c") == 2);
  CHECK(reg.name(1) == "b");
  CHECK_THROWS_AS(reg.index("zz"), std::out_of_range);
  CHECK_THROWS_AS(ParameterRegistry({"a", "a"}), std::invalid_argument);
}

TEST_CASE("toy model net benefits and decision range") {
  const ToyModel toy;
  const std::array<double, 1> one{1.0}, zero{0.0};
  CHECK(toy.net_benefit(0, one) == 1.0);
  CHECK(toy.net_benefit(1, one) == 0.0);
  CHECK(toy.net_benefit(0, zero) == 0.0);
  CHECK(toy.net_benefit(1, zero) == 1.0);
  CHECK_THROWS_AS(toy.net_benefit(2, one), std::out_of_range);
}

TEST_CASE("toy model likelihood") {
  const ToyModel toy;
  const std::array<double, 1> one{1.0}, zero{0.0};
  const std::array<double, 1> y1{1.0}, y0{0.0};
  CHECK(toy.log_likelihood(y1, one) == doctest::Approx(std::log(0.8)));
  CHECK(toy.log_likelihood(y0, one) == doctest::Approx(std::log(0.2)));
  CHECK(toy.log_likelihood(y1, zero) == doctest::Approx(std::log(0.2)));
  CHECK(toy.log_likelihood(y0, zero) == doctest::Approx(std::log(0.8)));
  CHECK(toy.observation_probability(1.0) == doctest::Approx(0.8));
  CHECK(toy.observation_probability(0.0) == doctest::Approx(0.2));
}

TEST_CASE("toy model observation frequencies") {
  const ToyModel toy;
  RandomSource rng(1);
  const int n = 200000;
  int ones = 0, y_given_one = 0, theta_ones = 0;
  std::array<double, 1> theta{};
  for (int i = 0; i < n; ++i) {
    toy.sample_prior(rng, theta);
    const Observation y = toy.sample_observation(theta, rng);
    ones += y[0] == 1.0;
    if (theta[0] == 1.0) {
      ++theta_ones;
      y_given_one += y[0] == 1.0;
    }
  }
  // P(Y = 1) = 0.3 * 0.8 + 0.7 * 0.2
  CHECK(std::abs(ones / double(n) - 0.38) < 4.0 * std::sqrt(0.38 * 0.62 / n));
  CHECK(std::abs(theta_ones / double(n) - 0.3) < 4.0 * std::sqrt(0.21 / n));
  CHECK(std::abs(y_given_one / double(theta_ones) - 0.8) < 4.0 * std::sqrt(0.16 / theta_ones));
}

TEST_CASE("toy EVPI against enumeration") {
  // E[max(theta, 1 - theta)] = 1 and max_d E f_d = 0.7.
  const double p = 0.3;
  const double exact = 1.0 - std::max(p, 1.0 - p);
  const ToyModel toy(p);
  RandomSource rng(2);
  const EvpiEstimate e = estimate_evpi(toy, 200000, rng);
  CHECK(e.best_decision == 1);
  CHECK(std::abs(e.estimate - exact) < 4.0 * e.std_error);
  CHECK(e.std_error > 0.0);
  CHECK(e.samples == 200000);
  CHECK(e.decision_means.size() == 2);
}

TEST_CASE("EVPI is zero with one decision and invariant to a common shift") {
  const ToyModel toy;
  const Shifted single(toy, 0.0, true);
  RandomSource r1(3);
  CHECK(estimate_evpi(single, 1000, r1).estimate == 0.0);

  const Shifted shifted(toy, 1e3, false);
  RandomSource ra(4), rb(4);
  const EvpiEstimate a = estimate_evpi(toy, 50000, ra);
  const EvpiEstimate b = estimate_evpi(shifted, 50000, rb);
  CHECK(b.estimate == doctest::Approx(a.estimate).epsilon(1e-9));
  CHECK(b.decision_means[0] == doctest::Approx(a.decision_means[0] + 1e3));
  CHECK(a.estimate >= 0.0);

  RandomSource rc(5);
  CHECK_THROWS_AS(estimate_evpi(toy, 1, rc), std::invalid_argument);
}

TEST_CASE("observation channels") {
  const std::array<double, 3> theta{0.7, 2.0, 0.25};
  const auto normal = ObservationChannel::normal(0, 0.04);
  const auto on_log = ObservationChannel::normal_on_log(1, 0.04);
  const auto binom = ObservationChannel::binomial(2, 100);
  CHECK(normal.log_likelihood(0.6, theta) == doctest::Approx(normal_pdf_log(0.6, 0.7, 0.04)).epsilon(1e-13));
  CHECK(on_log.log_likelihood(0.5, theta) ==
        doctest::Approx(normal_pdf_log(0.5, std::log(2.0), 0.04)).epsilon(1e-13));
  const double lb = std::lgamma(101.0) - std::lgamma(21.0) - std::lgamma(81.0) + 20 * std::log(0.25) +
                    80 * std::log(0.75);
  CHECK(binom.log_likelihood(20.0, theta) == doctest::Approx(lb).epsilon(1e-12));

  const std::vector<ObservationChannel> channels{normal, on_log, binom};
  const std::array<double, 3> y{0.6, 0.5, 20.0};
  const double sum = normal.log_likelihood(0.6, theta) + on_log.log_likelihood(0.5, theta) +
                     binom.log_likelihood(20.0, theta);
  CHECK(channels_log_likelihood(channels, y, theta) == doctest::Approx(sum).epsilon(1e-14));

  const std::array<double, 2> short_y{0.6, 0.5};
  CHECK_THROWS_AS(channels_log_likelihood(channels, short_y, theta), std::invalid_argument);
  const std::array<double, 3> fractional{0.6, 0.5, 20.5};
  CHECK_THROWS_AS(channels_log_likelihood(channels, fractional, theta), std::invalid_argument);
  // within the tolerance the count is accepted
  const std::array<double, 3> nearly{0.6, 0.5, 20.0 + 1e-12};
  CHECK(channels_log_likelihood(channels, nearly, theta) == doctest::Approx(sum).epsilon(1e-12));
}

TEST_CASE("prior blocks on transformed scales") {
  Eigen::Vector2d mean(-1.4, -1.1);
  Eigen::Matrix2d cov;
  cov << 0.10, 0.05, 0.05, 0.25;
  const auto logit_block = PriorBlock::logitnormal({0, 1}, MvNormalParams(mean, cov));
  const std::array<double, 2> x{0.2, 0.3};
  const std::array<double, 2> z{std::log(0.2 / 0.8), std::log(0.3 / 0.7)};
  const double expect = MvNormalParams(mean, cov).log_density(z) - std::log(0.2 * 0.8) - std::log(0.3 * 0.7);
  CHECK(logit_block.log_density(x) == doctest::Approx(expect).epsilon(1e-13));
  const std::array<double, 2> outside{1.2, 0.3};
  CHECK(std::isinf(logit_block.log_density(outside)));

  const auto beta_block = PriorBlock::beta(0, 15.0, 85.0);
  const std::array<double, 1> p{0.15};
  const double lbeta = std::lgamma(15.0) + std::lgamma(85.0) - std::lgamma(100.0);
  CHECK(beta_block.log_density(p) == doctest::Approx(14 * std::log(0.15) + 84 * std::log(0.85) - lbeta));

  RandomSource rng(6);
  std::array<double, 2> draw{};
  for (int i = 0; i < 1000; ++i) {
    logit_block.sample(rng, draw);
    CHECK((draw[0] > 0.0 && draw[0] < 1.0 && draw[1] > 0.0 && draw[1] < 1.0));
  }
}

TEST_CASE("block prior must cover every parameter exactly once") {
  Eigen::VectorXd m(1);
  m << 0.0;
  Eigen::MatrixXd v(1, 1);
  v << 1.0;
  std::vector<PriorBlock> blocks{PriorBlock::normal({0}, MvNormalParams(m, v))};
  CHECK_THROWS_AS(BlockPrior(2, blocks), std::invalid_argument);
  blocks.push_back(PriorBlock::normal({0}, MvNormalParams(m, v)));
  CHECK_THROWS_AS(BlockPrior(2, blocks), std::invalid_argument);
  blocks[1] = PriorBlock::beta(1, 2.0, 3.0);
  const BlockPrior ok(2, blocks);
  const std::array<double, 2> theta{0.5, 0.25};
  CHECK(ok.log_density(theta) ==
        doctest::Approx(blocks[0].log_density(theta) + blocks[1].log_density(theta)).epsilon(1e-14));
}

TEST_CASE("prior sampler has unit weights and the default importance hook throws") {
  const ToyModel toy;
  const PriorSampler prior(toy);
  const std::array<double, 1> theta{1.0};
  CHECK(prior.log_prior_ratio(theta) == 0.0);
  const Shifted plain(toy, 0.0, false);
  CHECK_FALSE(plain.supports_importance_sampling());
  const std::array<double, 1> y{1.0};
  CHECK_THROWS_AS(plain.importance_sampler(y), std::logic_error);
  CHECK(std::isinf(plain.net_benefit_bound()));
}
