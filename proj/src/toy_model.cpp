#include "evsi/toy_model.hpp"

#include <cmath>
#include <limits>

namespace evsi {
namespace {

class BernoulliSampler final : public InnerSampler {
 public:
  BernoulliSampler(double prior_p, double posterior_p) : prior_p_(prior_p), posterior_p_(posterior_p) {}

  void sample(RandomSource& rng, std::span<double> theta) const override {
    theta[0] = rng.uniform() < posterior_p_ ? 1.0 : 0.0;
  }

  double log_prior_ratio(std::span<const double> theta) const override {
    return theta[0] == 1.0 ? std::log(prior_p_ / posterior_p_) : std::log((1.0 - prior_p_) / (1.0 - posterior_p_));
  }

 private:
  double prior_p_;
  double posterior_p_;
};

}  // namespace

ToyModel::ToyModel(double prior_p, double sensitivity, double specificity)
    : prior_p_(prior_p), sensitivity_(sensitivity), specificity_(specificity) {
  auto open_unit = [](double p) { return p > 0.0 && p < 1.0; };
  if (!open_unit(prior_p) || !open_unit(sensitivity) || !open_unit(specificity)) {
    throw std::invalid_argument("ToyModel: probabilities must lie in (0, 1)");
  }
}

void ToyModel::sample_prior(RandomSource& rng, std::span<double> theta) const {
  theta[0] = rng.uniform() < prior_p_ ? 1.0 : 0.0;
}

void ToyModel::net_benefits(std::span<const double> theta, std::span<double> out) const {
  out[0] = theta[0];
  out[1] = 1.0 - theta[0];
}

double ToyModel::observation_probability(double theta) const {
  return theta == 1.0 ? sensitivity_ : 1.0 - specificity_;
}

void ToyModel::sample_observation(std::span<const double> theta, RandomSource& rng, std::span<double> y) const {
  y[0] = rng.uniform() < observation_probability(theta[0]) ? 1.0 : 0.0;
}

double ToyModel::log_likelihood(std::span<const double> y, std::span<const double> theta) const {
  if (y.size() != 1 || theta.size() != 1) {
    throw std::invalid_argument("ToyModel: dimension mismatch");
  }
  const double p = observation_probability(theta[0]);
  if (y[0] == 1.0) return std::log(p);
  if (y[0] == 0.0) return std::log1p(-p);
  return -std::numeric_limits<double>::infinity();
}

std::unique_ptr<InnerSampler> ToyModel::importance_sampler(std::span<const double> y) const {
  const double l1 = y[0] == 1.0 ? sensitivity_ : 1.0 - sensitivity_;
  const double l0 = y[0] == 1.0 ? 1.0 - specificity_ : specificity_;
  const double posterior = prior_p_ * l1 / (prior_p_ * l1 + (1.0 - prior_p_) * l0);
  return std::make_unique<BernoulliSampler>(prior_p_, posterior);
}

}  // namespace evsi
