#ifndef EVSI_DISTRIBUTIONS_HPP
#define EVSI_DISTRIBUTIONS_HPP

#include <span>
#include <vector>
#include <variant>

#include <Eigen/Dense>

#include "evsi/random.hpp"

namespace evsi {

// Univariate families. The normal-based families carry the mean and variance
// of the underlying normal. Use the make_* factories, which validate.
struct Normal {
  double mean;
  double variance;
};
struct LogNormal {
  double mu;
  double sigma2;
};
struct LogitNormal {
  double mu;
  double sigma2;
};
struct Beta {
  double a;
  double b;
};
struct Binomial {
  int trials;
  double p;
};
struct Constant {
  double value;
};

using UnivariateDist = std::variant<Normal, LogNormal, LogitNormal, Beta, Binomial, Constant>;

UnivariateDist make_normal(double mean, double variance);
UnivariateDist make_lognormal(double mu, double sigma2);
UnivariateDist make_logitnormal(double mu, double sigma2);
UnivariateDist make_beta(double a, double b);
UnivariateDist make_binomial(int trials, double p);
UnivariateDist make_constant(double value);

double sample(const UnivariateDist& dist, RandomSource& rng);

/// Natural-log density (continuous) or log mass (Binomial). Out-of-support
/// points give -infinity.
double log_density(const UnivariateDist& dist, double x);

double logistic(double z);
double logit(double p);

// Scalar log densities used directly by the hot paths.
double normal_log_density(double x, double mean, double variance);
double beta_log_density(double x, double a, double b);
double binomial_log_mass(double k, int trials, double p);

double sample_beta(double a, double b, RandomSource& rng);
int sample_binomial(int trials, double p, RandomSource& rng);

struct Moments {
  double mean;
  double variance;
};

/// Mean and variance of logistic(Z), Z ~ Normal(mu, sigma2), by 64-point
/// Gauss-Hermite quadrature.
Moments logitnormal_moments(double mu, double sigma2);

/// Multivariate normal with a cached lower Cholesky factor.
class MvNormalParams {
 public:
  /// Throws std::invalid_argument unless `covariance` is square, symmetric,
  /// positive definite and matches `mean`.
  MvNormalParams(Eigen::VectorXd mean, Eigen::MatrixXd covariance);

  std::size_t dim() const { return static_cast<std::size_t>(mean_.size()); }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& covariance() const { return covariance_; }
  const Eigen::MatrixXd& cholesky() const { return lower_; }

  void sample(RandomSource& rng, std::span<double> out) const;
  double log_density(std::span<const double> x) const;

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd covariance_;
  Eigen::MatrixXd lower_;
  double log_norm_ = 0.0;
  // Row-major packed copies for the sampling loop.
  std::vector<double> mean_flat_;
  std::vector<double> lower_packed_;
  std::vector<double> inv_diag_;
};

Eigen::VectorXd sample_mvn(const MvNormalParams& params, RandomSource& rng);

}  // namespace evsi

#endif  // EVSI_DISTRIBUTIONS_HPP
