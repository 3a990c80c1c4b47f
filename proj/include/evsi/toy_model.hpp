#ifndef EVSI_TOY_MODEL_HPP
#define EVSI_TOY_MODEL_HPP

#include "evsi/decision_model.hpp"

namespace evsi {

/// Two-decision model with a binary parameter and a binary noisy test.
///
/// theta ~ Bernoulli(prior_p), Y | theta ~ Bernoulli(sensitivity) if theta = 1
/// and Bernoulli(1 - specificity) otherwise; f_1(theta) = theta and
/// f_2(theta) = 1 - theta. Small enough that every expectation can be
/// enumerated exactly.
class ToyModel final : public DecisionModel {
 public:
  explicit ToyModel(double prior_p = 0.3, double sensitivity = 0.8, double specificity = 0.8);

  std::size_t decision_count() const override { return 2; }
  std::size_t parameter_count() const override { return 1; }
  std::size_t observation_dim() const override { return 1; }

  void sample_prior(RandomSource& rng, std::span<double> theta) const override;
  void net_benefits(std::span<const double> theta, std::span<double> out) const override;
  void sample_observation(std::span<const double> theta, RandomSource& rng, std::span<double> y) const override;
  using DecisionModel::sample_observation;
  double log_likelihood(std::span<const double> y, std::span<const double> theta) const override;
  double net_benefit_bound() const override { return 1.0; }

  /// Exact posterior as the importance distribution.
  bool supports_importance_sampling() const override { return true; }
  std::unique_ptr<InnerSampler> importance_sampler(std::span<const double> y) const override;

  double prior_p() const { return prior_p_; }
  /// P(Y = 1 | theta).
  double observation_probability(double theta) const;

 private:
  double prior_p_;
  double sensitivity_;
  double specificity_;
};

}  // namespace evsi

#endif  // EVSI_TOY_MODEL_HPP
