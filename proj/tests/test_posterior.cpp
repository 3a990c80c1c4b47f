#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "evsi/posterior.hpp"

using namespace evsi;

namespace {

MvNormalParams mvn2(double m0, double m1, double v00, double v01, double v11) {
  Eigen::Vector2d m(m0, m1);
  Eigen::Matrix2d c;
  c << v00, v01, v01, v11;
  return MvNormalParams(m, c);
}

MvNormalParams mvn1(double m, double v) {
  Eigen::VectorXd mean(1);
  mean << m;
  Eigen::MatrixXd cov(1, 1);
  cov << v;
  return MvNormalParams(mean, cov);
}

// Weighted mean and effective sample size of a self-normalized estimate.
struct Weighted {
  double w = 0, wx = 0, w2 = 0, wx2 = 0;
  void add(double weight, double x) {
    w += weight;
    wx += weight * x;
    w2 += weight * weight;
    wx2 += weight * x * x;
  }
  double mean() const { return wx / w; }
  double sd_of_mean() const {
    const double m = mean();
    const double var = wx2 / w - m * m;
    return std::sqrt(var * w2 / (w * w));
  }
};

}  // namespace

TEST_CASE("scalar normal conditioning") {
  const MvNormalParams post = gaussian_condition(mvn1(0.0, 1.0), 0, 2.0, 1.0);
  CHECK(post.mean()(0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(post.covariance()(0, 0) == doctest::Approx(0.5).epsilon(1e-15));

  const MvNormalParams vague = gaussian_condition(mvn1(0.7, 0.01), 0, 5.0, 1e18);
  CHECK(vague.mean()(0) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(vague.covariance()(0, 0) == doctest::Approx(0.01).epsilon(1e-12));

  CHECK_THROWS_AS(gaussian_condition(mvn1(0.0, 1.0), 0, 1.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_condition(mvn1(0.0, 1.0), 1, 1.0, 1.0), std::invalid_argument);
}

TEST_CASE("bivariate conditioning matches the information-form update") {
  const MvNormalParams prior = mvn2(15000.0, 20000.0, 300.0, 100.0, 500.0);
  const double y = 20040.0, noise = 100.0;
  const MvNormalParams post = gaussian_condition(prior, 1, y, noise);

  // Precision form: P = S^-1 + e e^T / noise, m = P^-1 (S^-1 mu + e y / noise).
  const Eigen::Matrix2d s_inv = prior.covariance().inverse();
  Eigen::Vector2d e(0.0, 1.0);
  const Eigen::Matrix2d precision = s_inv + e * e.transpose() / noise;
  const Eigen::Matrix2d cov = precision.inverse();
  const Eigen::Vector2d mean = cov * (s_inv * prior.mean() + e * y / noise);
  for (int i = 0; i < 2; ++i) {
    CHECK(post.mean()(i) == doctest::Approx(mean(i)).epsilon(1e-12));
    for (int j = 0; j < 2; ++j) CHECK(post.covariance()(i, j) == doctest::Approx(cov(i, j)).epsilon(1e-10));
  }
}

TEST_CASE("treatment-cost posterior against likelihood-weighted prior draws") {
  const MvNormalParams prior = mvn2(15000.0, 20000.0, 300.0, 100.0, 500.0);
  const double y = 19960.0, noise = 100.0;
  const MvNormalParams post = gaussian_condition(prior, 1, y, noise);
  RandomSource rng(21);
  Weighted c2, c3;
  std::array<double, 2> x{};
  for (int i = 0; i < 400000; ++i) {
    prior.sample(rng, x);
    const double w = std::exp(-(y - x[1]) * (y - x[1]) / (2 * noise));
    c2.add(w, x[0]);
    c3.add(w, x[1]);
  }
  CHECK(std::abs(c2.mean() - post.mean()(0)) < 4.0 * c2.sd_of_mean());
  CHECK(std::abs(c3.mean() - post.mean()(1)) < 4.0 * c3.sd_of_mean());
}

TEST_CASE("beta moment matching") {
  const BetaApprox b = beta_from_moments(0.15, 15.0 * 85.0 / (100.0 * 100.0 * 101.0));
  CHECK(b.a == doctest::Approx(15.0).epsilon(1e-12));
  CHECK(b.b == doctest::Approx(85.0).epsilon(1e-12));
  CHECK_THROWS_AS(beta_from_moments(0.5, 0.25), std::invalid_argument);
  CHECK_THROWS_AS(beta_from_moments(1.2, 0.01), std::invalid_argument);
  CHECK_THROWS_AS(beta_from_moments(0.5, 0.0), std::invalid_argument);

  for (const auto& [mu, s2] : std::vector<std::pair<double, double>>{{-1.4, 0.10}, {-1.1, 0.25}, {0.6, 1.0 / 36}}) {
    const BetaApprox m = beta_moment_match(mu, s2);
    const Moments target = logitnormal_moments(mu, s2);
    CHECK(m.mean() == doctest::Approx(target.mean).epsilon(1e-12));
    CHECK(m.variance() == doctest::Approx(target.variance).epsilon(1e-12));
  }
  const BetaApprox post = BetaApprox{15.0, 85.0}.posterior(20.0, 100);
  CHECK(post.a == 35.0);
  CHECK(post.b == 165.0);
}

TEST_CASE("a plan without channels samples the prior with unit weights") {
  const BlockPrior prior(2, {PriorBlock::normal({0, 1}, mvn2(0.0, 0.0, 1.0, 0.5, 1.0))});
  const ImportancePlan plan(prior, {});
  CHECK(plan.informed_block_count() == 0);
  const auto q = plan.build(std::span<const double>());
  RandomSource rng(1);
  std::array<double, 2> theta{};
  for (int i = 0; i < 100; ++i) {
    q->sample(rng, theta);
    CHECK(q->log_prior_ratio(theta) == 0.0);
  }
}

TEST_CASE("unsupported pairings are rejected") {
  const BlockPrior prior(3, {PriorBlock::normal({0}, mvn1(0.0, 1.0)),
                             PriorBlock::logitnormal({1, 2}, mvn2(-1.4, -1.1, 0.1, 0.05, 0.25))});
  CHECK_THROWS_AS(ImportancePlan(prior, {ObservationChannel::normal_on_log(0, 1.0)}), std::invalid_argument);
  CHECK_THROWS_AS(ImportancePlan(prior, {ObservationChannel::binomial(0, 10)}), std::invalid_argument);
  CHECK_THROWS_AS(ImportancePlan(prior, {ObservationChannel::normal(1, 1.0)}), std::invalid_argument);
  CHECK_THROWS_AS(ImportancePlan(prior, {ObservationChannel::binomial(1, 10), ObservationChannel::binomial(2, 10)}),
                  std::invalid_argument);
  CHECK_THROWS_AS(ImportancePlan(prior, {ObservationChannel::normal(7, 1.0)}), std::invalid_argument);
  const ImportancePlan ok(prior, {ObservationChannel::normal(0, 1.0), ObservationChannel::binomial(2, 10)});
  CHECK(ok.informed_block_count() == 2);
  const std::array<double, 1> short_y{0.0};
  CHECK_THROWS_AS(ok.build(short_y), std::invalid_argument);
}

TEST_CASE("importance weights have mean one under the proposal") {
  const BlockPrior prior(5, {PriorBlock::normal({0}, mvn1(0.7, 0.01)),
                             PriorBlock::lognormal({1, 2}, mvn2(-1.5, -1.75, 0.11, 0.02, 0.06)),
                             PriorBlock::logitnormal({3, 4}, mvn2(-1.4, -1.1, 0.10, 0.05, 0.25))});
  const std::vector<ObservationChannel> channels{ObservationChannel::normal(0, 0.04),
                                                 ObservationChannel::normal_on_log(2, 0.04),
                                                 ObservationChannel::binomial(3, 100)};
  const ImportancePlan plan(prior, channels);
  const std::array<double, 3> y{0.65, -1.6, 22.0};
  const auto q = plan.build(y);
  RandomSource rng(31);
  const int n = 400000;
  double s = 0, s2 = 0;
  std::array<double, 5> theta{};
  for (int i = 0; i < n; ++i) {
    q->sample(rng, theta);
    const double w = std::exp(q->log_prior_ratio(theta));
    s += w;
    s2 += w * w;
  }
  const double mean = s / n;
  const double se = std::sqrt((s2 / n - mean * mean) / n);
  CHECK(std::abs(mean - 1.0) < 4.0 * se);
}

TEST_CASE("importance and prior sampling agree on posterior means") {
  // The observed probability uses the matched beta, its partner the marginal prior.
  const BlockPrior prior(2, {PriorBlock::logitnormal({0, 1}, mvn2(-1.4, -1.1, 0.10, 0.05, 0.25))});
  const std::vector<ObservationChannel> channels{ObservationChannel::binomial(0, 100)};
  const ImportancePlan plan(prior, channels);
  const std::array<double, 1> y{26.0};
  const auto q = plan.build(y);
  RandomSource r1(41), r2(42);
  Weighted is0, is1, pr0, pr1, partner;
  std::array<double, 2> theta{};
  for (int i = 0; i < 300000; ++i) {
    q->sample(r1, theta);
    partner.add(1.0, theta[1]);
    const double w = std::exp(channels_log_likelihood(channels, y, theta) + q->log_prior_ratio(theta));
    is0.add(w, theta[0]);
    is1.add(w, theta[1]);
    prior.sample(r2, theta);
    const double v = std::exp(channels_log_likelihood(channels, y, theta));
    pr0.add(v, theta[0]);
    pr1.add(v, theta[1]);
  }
  CHECK(std::abs(is0.mean() - pr0.mean()) < 4.0 * std::hypot(is0.sd_of_mean(), pr0.sd_of_mean()));
  CHECK(std::abs(is1.mean() - pr1.mean()) < 4.0 * std::hypot(is1.sd_of_mean(), pr1.sd_of_mean()));
  CHECK(std::abs(partner.mean() - logitnormal_moments(-1.1, 0.25).mean) < 4.0 * partner.sd_of_mean());
  // the proposal concentrates: the IS estimate has the smaller error
  CHECK(is0.sd_of_mean() < pr0.sd_of_mean());
}

TEST_CASE("beta block uses the exact conjugate posterior") {
  const BlockPrior prior(1, {PriorBlock::beta(0, 15.0, 85.0)});
  const std::vector<ObservationChannel> channels{ObservationChannel::binomial(0, 1000)};
  const ImportancePlan plan(prior, channels);
  const std::array<double, 1> y{140.0};
  const auto q = plan.build(y);
  RandomSource rng(51);
  std::array<double, 1> theta{};
  double first = 0.0;
  for (int i = 0; i < 50; ++i) {
    q->sample(rng, theta);
    // prior / q times the likelihood is a constant when q is the exact posterior
    const double lw = channels_log_likelihood(channels, y, theta) + q->log_prior_ratio(theta);
    if (i == 0) first = lw;
    CHECK(lw == doctest::Approx(first).epsilon(1e-9));
  }
}
