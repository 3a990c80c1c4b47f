#include "evsi/distributions.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace evsi {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLogTwoPi = 1.8378770664093454836;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require(bool ok, const char* what) {
  if (!ok) {
    throw std::invalid_argument(what);
  }
}

struct GaussHermiteRule {
  static constexpr int kOrder = 64;
  std::array<double, kOrder> nodes{};
  std::array<double, kOrder> weights{};
};

// Physicists' Hermite rule (weight exp(-x^2)) via Golub-Welsch, with each node
// polished by Newton steps on the three-term recurrence.
GaussHermiteRule build_gauss_hermite() {
  constexpr int n = GaussHermiteRule::kOrder;
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    jacobi(i, i - 1) = jacobi(i - 1, i) = std::sqrt(i / 2.0);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  GaussHermiteRule rule;
  for (int k = 0; k < n; ++k) {
    double x = solver.eigenvalues()(k);
    double dp = 0.0;
    for (int it = 0; it < 4; ++it) {
      // Orthonormal recurrence: p_{j+1} = x sqrt(2/(j+1)) p_j - sqrt(j/(j+1)) p_{j-1}.
      double p0 = std::pow(std::numbers::pi, -0.25);
      double p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = x * std::sqrt(2.0 / (j + 1)) * p1 - std::sqrt(static_cast<double>(j) / (j + 1)) * p2;
      }
      // p0 = p_n, p1 = p_{n-1}
      dp = std::sqrt(2.0 * n) * p1;
      x -= p0 / dp;
    }
    rule.nodes[k] = x;
    rule.weights[k] = 2.0 / (dp * dp);
  }
  // Eigenvalues come out ascending; enforce exact mirror symmetry.
  for (int k = 0; k < n / 2; ++k) {
    const double x = 0.5 * (rule.nodes[n - 1 - k] - rule.nodes[k]);
    const double w = 0.5 * (rule.weights[n - 1 - k] + rule.weights[k]);
    rule.nodes[k] = -x;
    rule.nodes[n - 1 - k] = x;
    rule.weights[k] = rule.weights[n - 1 - k] = w;
  }
  return rule;
}

const GaussHermiteRule& gauss_hermite() {
  static const GaussHermiteRule rule = build_gauss_hermite();
  return rule;
}

}  // namespace

UnivariateDist make_normal(double mean, double variance) {
  require(variance > 0.0 && std::isfinite(mean), "Normal: variance must be positive");
  return Normal{mean, variance};
}

UnivariateDist make_lognormal(double mu, double sigma2) {
  require(sigma2 > 0.0 && std::isfinite(mu), "LogNormal: sigma2 must be positive");
  return LogNormal{mu, sigma2};
}

UnivariateDist make_logitnormal(double mu, double sigma2) {
  require(sigma2 > 0.0 && std::isfinite(mu), "LogitNormal: sigma2 must be positive");
  return LogitNormal{mu, sigma2};
}

UnivariateDist make_beta(double a, double b) {
  require(a > 0.0 && b > 0.0, "Beta: shape parameters must be positive");
  return Beta{a, b};
}

UnivariateDist make_binomial(int trials, double p) {
  require(trials >= 1, "Binomial: trials must be at least 1");
  require(p >= 0.0 && p <= 1.0, "Binomial: p must lie in [0, 1]");
  return Binomial{trials, p};
}

UnivariateDist make_constant(double value) { return Constant{value}; }

double logistic(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

double normal_log_density(double x, double mean, double variance) {
  const double r = x - mean;
  return -0.5 * (kLogTwoPi + std::log(variance) + r * r / variance);
}

double beta_log_density(double x, double a, double b) {
  if (!(x > 0.0 && x < 1.0)) {
    // Closed endpoints only carry finite density for a == 1 or b == 1.
    if (x == 0.0 && a == 1.0) return std::log(b);
    if (x == 1.0 && b == 1.0) return std::log(a);
    return kNegInf;
  }
  return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) + std::lgamma(a + b) - std::lgamma(a) -
         std::lgamma(b);
}

double binomial_log_mass(double k, int trials, double p) {
  if (!(k >= 0.0 && k <= trials) || k != std::floor(k)) {
    return kNegInf;
  }
  const double log_coef = std::lgamma(trials + 1.0) - std::lgamma(k + 1.0) - std::lgamma(trials - k + 1.0);
  // 0 * log(0) terms are taken as 0.
  const double success = k > 0.0 ? k * std::log(p) : 0.0;
  const double failure = k < trials ? (trials - k) * std::log1p(-p) : 0.0;
  return log_coef + success + failure;
}

double sample_beta(double a, double b, RandomSource& rng) {
  std::gamma_distribution<double> ga(a, 1.0);
  std::gamma_distribution<double> gb(b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  return x / (x + y);
}

int sample_binomial(int trials, double p, RandomSource& rng) {
  std::binomial_distribution<int> dist(trials, p);
  return dist(rng);
}

double sample(const UnivariateDist& dist, RandomSource& rng) {
  return std::visit(
      Overloaded{
          [&](const Normal& d) { return d.mean + std::sqrt(d.variance) * rng.normal(); },
          [&](const LogNormal& d) { return std::exp(d.mu + std::sqrt(d.sigma2) * rng.normal()); },
          [&](const LogitNormal& d) { return logistic(d.mu + std::sqrt(d.sigma2) * rng.normal()); },
          [&](const Beta& d) { return sample_beta(d.a, d.b, rng); },
          [&](const Binomial& d) { return static_cast<double>(sample_binomial(d.trials, d.p, rng)); },
          [](const Constant& d) { return d.value; },
      },
      dist);
}

double log_density(const UnivariateDist& dist, double x) {
  return std::visit(
      Overloaded{
          [&](const Normal& d) { return normal_log_density(x, d.mean, d.variance); },
          [&](const LogNormal& d) {
            if (!(x > 0.0)) return kNegInf;
            const double lx = std::log(x);
            return normal_log_density(lx, d.mu, d.sigma2) - lx;
          },
          [&](const LogitNormal& d) {
            if (!(x > 0.0 && x < 1.0)) return kNegInf;
            return normal_log_density(logit(x), d.mu, d.sigma2) - std::log(x) - std::log1p(-x);
          },
          [&](const Beta& d) { return beta_log_density(x, d.a, d.b); },
          [&](const Binomial& d) { return binomial_log_mass(x, d.trials, d.p); },
          [&](const Constant& d) { return x == d.value ? 0.0 : kNegInf; },
      },
      dist);
}

Moments logitnormal_moments(double mu, double sigma2) {
  require(sigma2 > 0.0, "logitnormal_moments: sigma2 must be positive");
  const auto& rule = gauss_hermite();
  const double scale = std::sqrt(2.0 * sigma2);
  const double norm = 1.0 / std::sqrt(std::numbers::pi);
  double mean = 0.0;
  for (int k = 0; k < GaussHermiteRule::kOrder; ++k) {
    mean += rule.weights[k] * logistic(mu + scale * rule.nodes[k]);
  }
  mean *= norm;
  // Central second moment directly, which stays accurate as sigma2 -> 0.
  double variance = 0.0;
  for (int k = 0; k < GaussHermiteRule::kOrder; ++k) {
    const double r = logistic(mu + scale * rule.nodes[k]) - mean;
    variance += rule.weights[k] * r * r;
  }
  variance *= norm;
  return {mean, variance};
}

MvNormalParams::MvNormalParams(Eigen::VectorXd mean, Eigen::MatrixXd covariance)
    : mean_(std::move(mean)), covariance_(std::move(covariance)) {
  const auto k = mean_.size();
  if (k == 0 || covariance_.rows() != k || covariance_.cols() != k) {
    throw std::invalid_argument("MvNormalParams: dimension mismatch");
  }
  if (!covariance_.isApprox(covariance_.transpose(), 1e-12)) {
    throw std::invalid_argument("MvNormalParams: covariance is not symmetric");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(covariance_);
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument("MvNormalParams: covariance is not positive definite");
  }
  lower_ = llt.matrixL();
  for (Eigen::Index i = 0; i < k; ++i) {
    if (!(lower_(i, i) > 0.0)) {
      throw std::invalid_argument("MvNormalParams: covariance is not positive definite");
    }
  }
  const double log_det = 2.0 * lower_.diagonal().array().log().sum();
  log_norm_ = -0.5 * (static_cast<double>(k) * kLogTwoPi + log_det);
  mean_flat_.assign(mean_.data(), mean_.data() + k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      lower_packed_.push_back(lower_(i, j));
    }
    inv_diag_.push_back(1.0 / lower_(i, i));
  }
}

void MvNormalParams::sample(RandomSource& rng, std::span<double> out) const {
  const std::size_t k = mean_flat_.size();
  // k <= 8 in practice; a fixed-size scratch keeps the hot path allocation free.
  std::array<double, 16> z{};
  if (k > z.size()) {
    throw std::invalid_argument("MvNormalParams: dimension too large");
  }
  for (std::size_t i = 0; i < k; ++i) {
    z[i] = rng.normal();
  }
  const double* row = lower_packed_.data();
  for (std::size_t i = 0; i < k; ++i) {
    double acc = mean_flat_[i];
    for (std::size_t j = 0; j <= i; ++j) {
      acc += row[j] * z[j];
    }
    row += i + 1;
    out[i] = acc;
  }
}

double MvNormalParams::log_density(std::span<const double> x) const {
  const std::size_t k = mean_flat_.size();
  std::array<double, 16> r{};
  // Forward substitution: solve L r = x - mean.
  double quad = 0.0;
  const double* row = lower_packed_.data();
  for (std::size_t i = 0; i < k; ++i) {
    double acc = x[i] - mean_flat_[i];
    for (std::size_t j = 0; j < i; ++j) {
      acc -= row[j] * r[j];
    }
    row += i + 1;
    r[i] = acc * inv_diag_[i];
    quad += r[i] * r[i];
  }
  return log_norm_ - 0.5 * quad;
}

Eigen::VectorXd sample_mvn(const MvNormalParams& params, RandomSource& rng) {
  Eigen::VectorXd out(params.dim());
  params.sample(rng, std::span<double>(out.data(), params.dim()));
  return out;
}

}  // namespace evsi
