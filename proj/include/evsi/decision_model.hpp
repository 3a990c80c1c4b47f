#ifndef EVSI_DECISION_MODEL_HPP
#define EVSI_DECISION_MODEL_HPP

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "evsi/distributions.hpp"
#include "evsi/random.hpp"

namespace evsi {

/// Realization of the uncertain model parameters, indexed by a ParameterRegistry.
using ThetaSample = std::vector<double>;
/// Realization of the sample information. Binomial counts are stored as reals.
using Observation = std::vector<double>;

/// Fixed-order name -> index map for the entries of a ThetaSample.
class ParameterRegistry {
 public:
  ParameterRegistry() = default;
  explicit ParameterRegistry(std::vector<std::string> names);

  std::size_t size() const { return names_.size(); }
  /// Throws std::out_of_range for unknown names.
  std::size_t index(std::string_view name) const;
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
};

/// One jointly distributed group of parameters in the prior.
///
/// Normal, LogNormal and LogitNormal blocks are multivariate normal on the
/// identity, log and logit scale respectively; Beta blocks are univariate.
struct PriorBlock {
  enum class Kind { Normal, LogNormal, LogitNormal, Beta };

  Kind kind;
  std::vector<std::size_t> indices;
  MvNormalParams gaussian;  // latent-scale parameters (ignored for Beta)
  double beta_a = 1.0;
  double beta_b = 1.0;

  static PriorBlock normal(std::vector<std::size_t> indices, MvNormalParams params);
  static PriorBlock lognormal(std::vector<std::size_t> indices, MvNormalParams params);
  static PriorBlock logitnormal(std::vector<std::size_t> indices, MvNormalParams params);
  static PriorBlock beta(std::size_t index, double a, double b);

  std::size_t dim() const { return indices.size(); }
  void sample(RandomSource& rng, std::span<double> theta) const;
  /// Density of the block's entries of theta on the natural (parameter) scale.
  double log_density(std::span<const double> theta) const;
};

double to_latent(PriorBlock::Kind kind, double x);
double from_latent(PriorBlock::Kind kind, double z);
/// log |d latent / d x|, the change-of-variables term for one component.
double log_jacobian(PriorBlock::Kind kind, double x);

class BlockPrior {
 public:
  BlockPrior(std::size_t parameter_count, std::vector<PriorBlock> blocks);

  std::size_t parameter_count() const { return parameter_count_; }
  const std::vector<PriorBlock>& blocks() const { return blocks_; }

  void sample(RandomSource& rng, std::span<double> theta) const;
  double log_density(std::span<const double> theta) const;

 private:
  std::size_t parameter_count_;
  std::vector<PriorBlock> blocks_;
};

/// One component of Y = h(theta) + noise.
struct ObservationChannel {
  enum class Kind { Normal, NormalOnLog, Binomial };

  Kind kind;
  std::size_t parameter;
  double noise_variance = 0.0;  // Normal, NormalOnLog
  int trials = 0;               // Binomial

  static ObservationChannel normal(std::size_t parameter, double noise_variance);
  static ObservationChannel normal_on_log(std::size_t parameter, double noise_variance);
  static ObservationChannel binomial(std::size_t parameter, int trials);

  double sample(std::span<const double> theta, RandomSource& rng) const;
  double log_likelihood(double y, std::span<const double> theta) const;
};

/// Sum of per-channel log densities. Throws std::invalid_argument on a
/// dimension mismatch or a binomial count that is not an integer to 1e-9.
double channels_log_likelihood(std::span<const ObservationChannel> channels, std::span<const double> y,
                               std::span<const double> theta);

/// Inner-sample distribution q^Y together with log[pi0(theta) / q^Y(theta)].
class InnerSampler {
 public:
  virtual ~InnerSampler() = default;
  virtual void sample(RandomSource& rng, std::span<double> theta) const = 0;
  virtual double log_prior_ratio(std::span<const double> theta) const = 0;
};

/// Thrown when every inner weight of an outer sample underflows to zero.
class DegenerateLikelihood : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Decision problem with an information model. Implementations are immutable
/// and shared across worker threads.
class DecisionModel {
 public:
  virtual ~DecisionModel() = default;

  virtual std::size_t decision_count() const = 0;
  virtual std::size_t parameter_count() const = 0;
  virtual std::size_t observation_dim() const = 0;

  virtual void sample_prior(RandomSource& rng, std::span<double> theta) const = 0;
  /// Writes f_d(theta) for every decision into `out`.
  virtual void net_benefits(std::span<const double> theta, std::span<double> out) const = 0;
  virtual void sample_observation(std::span<const double> theta, RandomSource& rng,
                                  std::span<double> y) const = 0;
  virtual double log_likelihood(std::span<const double> y, std::span<const double> theta) const = 0;

  /// Declared F_max. Exceedances are counted by the engine, never clamped.
  virtual double net_benefit_bound() const;

  virtual bool supports_importance_sampling() const { return false; }
  /// Importance distribution for the given observation. The default throws.
  virtual std::unique_ptr<InnerSampler> importance_sampler(std::span<const double> y) const;

  /// Throws std::out_of_range for an invalid decision index.
  double net_benefit(std::size_t decision, std::span<const double> theta) const;
  Observation sample_observation(std::span<const double> theta, RandomSource& rng) const;
};

/// q^Y = prior. log_prior_ratio is identically 0.
class PriorSampler final : public InnerSampler {
 public:
  explicit PriorSampler(const DecisionModel& model) : model_(model) {}
  void sample(RandomSource& rng, std::span<double> theta) const override { model_.sample_prior(rng, theta); }
  double log_prior_ratio(std::span<const double>) const override { return 0.0; }

 private:
  const DecisionModel& model_;
};

struct EvpiEstimate {
  double estimate = 0.0;
  /// Standard error of max_d f_d - f_{d*}, d* the best decision on average.
  double std_error = 0.0;
  /// Standard error of the mean of max_d f_d alone (diagnostic).
  double max_term_std_error = 0.0;
  std::size_t best_decision = 0;
  std::vector<double> decision_means;
  std::size_t samples = 0;
};

/// Plain Monte Carlo EVPI from n prior draws shared by both terms, so the
/// estimate is nonnegative exactly. Throws std::invalid_argument for n < 2.
EvpiEstimate estimate_evpi(const DecisionModel& model, std::size_t n, RandomSource& rng);

}  // namespace evsi

#endif  // EVSI_DECISION_MODEL_HPP
