#ifndef EVSI_POSTERIOR_HPP
#define EVSI_POSTERIOR_HPP

#include <memory>
#include <span>
#include <vector>

#include "evsi/decision_model.hpp"
#include "evsi/distributions.hpp"

namespace evsi {

/// Exact posterior of a Gaussian block after observing component
/// `observed_index` plus Normal(0, noise_var) noise.
MvNormalParams gaussian_condition(const MvNormalParams& prior, std::size_t observed_index, double y,
                                  double noise_var);

struct BetaApprox {
  double a;
  double b;

  double mean() const { return a / (a + b); }
  double variance() const { return a * b / ((a + b) * (a + b) * (a + b + 1.0)); }
  /// Conjugate update after `successes` out of `trials`.
  BetaApprox posterior(double successes, int trials) const { return {a + successes, b + trials - successes}; }
};

/// Beta with the given mean and variance. Throws std::invalid_argument unless
/// 0 < variance < mean (1 - mean).
BetaApprox beta_from_moments(double mean, double variance);

/// Beta matching the mean and variance of logit-normal(mu, sigma2).
BetaApprox beta_moment_match(double mu, double sigma2);

/// Per-model importance construction: which prior blocks are informed by
/// which observation channels, validated once and reused for every Y.
///
/// Supported pairings:
///  - Normal block, Normal channels: exact Gaussian conditioning of the block.
///  - LogNormal block, NormalOnLog channels: the same on the log scale.
///  - LogitNormal block, one Binomial channel: the observed component is drawn
///    from the beta-binomial posterior of its moment-matched beta prior, the
///    other components from their marginal priors. The weight uses the exact
///    joint prior density.
///  - Beta block, one Binomial channel: exact conjugate posterior.
/// Blocks without channels are drawn from the prior and contribute nothing to
/// the weight.
class ImportancePlan {
 public:
  /// Throws std::invalid_argument for an unsupported block/channel pairing.
  ImportancePlan(BlockPrior prior, std::vector<ObservationChannel> channels);

  std::unique_ptr<InnerSampler> build(std::span<const double> y) const;

  std::size_t informed_block_count() const;
  const BlockPrior& prior() const { return prior_; }

  struct BlockRule {
    std::vector<std::size_t> channels;     // indices into the channel list
    std::vector<std::size_t> components;   // block component observed by each channel
    BetaApprox beta{1.0, 1.0};             // LogitNormal: matched prior of the observed component
  };

 private:
  BlockPrior prior_;
  std::vector<ObservationChannel> channels_;
  std::vector<BlockRule> rules_;
};

std::unique_ptr<InnerSampler> build_importance_sampler(const ImportancePlan& plan, std::span<const double> y);

}  // namespace evsi

#endif  // EVSI_POSTERIOR_HPP
