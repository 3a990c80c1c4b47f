#include "evsi/posterior.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>

namespace evsi {

MvNormalParams gaussian_condition(const MvNormalParams& prior, std::size_t observed_index, double y,
                                  double noise_var) {
  if (!(noise_var > 0.0)) {
    throw std::invalid_argument("gaussian_condition: noise variance must be positive");
  }
  if (observed_index >= prior.dim()) {
    throw std::invalid_argument("gaussian_condition: observed index out of range");
  }
  const auto i = static_cast<Eigen::Index>(observed_index);
  const Eigen::MatrixXd& cov = prior.covariance();
  const Eigen::VectorXd gain_column = cov.col(i);
  const double innovation_var = cov(i, i) + noise_var;
  Eigen::VectorXd mean = prior.mean() + gain_column * ((y - prior.mean()(i)) / innovation_var);
  Eigen::MatrixXd post = cov - gain_column * gain_column.transpose() / innovation_var;
  try {
    return MvNormalParams(std::move(mean), std::move(post));
  } catch (const std::invalid_argument&) {
    throw std::runtime_error("gaussian_condition: posterior covariance lost positive definiteness");
  }
}

BetaApprox beta_from_moments(double mean, double variance) {
  if (!(mean > 0.0 && mean < 1.0) || !(variance > 0.0) || !(variance < mean * (1.0 - mean))) {
    throw std::invalid_argument("beta_from_moments: no beta distribution has these moments");
  }
  const double concentration = mean * (1.0 - mean) / variance - 1.0;
  return {mean * concentration, (1.0 - mean) * concentration};
}

BetaApprox beta_moment_match(double mu, double sigma2) {
  const Moments m = logitnormal_moments(mu, sigma2);
  return beta_from_moments(m.mean, m.variance);
}

namespace {

struct BlockProposal {
  enum class Kind { Prior, Gaussian, LogitBeta, BetaConjugate };
  Kind kind = Kind::Prior;
  const PriorBlock* block = nullptr;
  std::optional<MvNormalParams> posterior;  // Gaussian: latent-scale posterior
  std::size_t observed = 0;                 // LogitBeta: observed component
  BetaApprox beta{1.0, 1.0};                // LogitBeta / BetaConjugate posterior
};

class BlockImportanceSampler final : public InnerSampler {
 public:
  explicit BlockImportanceSampler(std::vector<BlockProposal> proposals) : proposals_(std::move(proposals)) {}

  void sample(RandomSource& rng, std::span<double> theta) const override {
    for (const auto& p : proposals_) {
      const PriorBlock& block = *p.block;
      switch (p.kind) {
        case BlockProposal::Kind::Prior:
          block.sample(rng, theta);
          break;
        case BlockProposal::Kind::Gaussian: {
          std::array<double, 16> z{};
          p.posterior->sample(rng, std::span<double>(z.data(), block.dim()));
          for (std::size_t i = 0; i < block.dim(); ++i) {
            theta[block.indices[i]] = from_latent(block.kind, z[i]);
          }
          break;
        }
        case BlockProposal::Kind::LogitBeta: {
          const Eigen::VectorXd& mean = block.gaussian.mean();
          const Eigen::MatrixXd& cov = block.gaussian.covariance();
          for (std::size_t i = 0; i < block.dim(); ++i) {
            if (i == p.observed) {
              theta[block.indices[i]] = sample_beta(p.beta.a, p.beta.b, rng);
            } else {
              const auto ii = static_cast<Eigen::Index>(i);
              theta[block.indices[i]] = logistic(mean(ii) + std::sqrt(cov(ii, ii)) * rng.normal());
            }
          }
          break;
        }
        case BlockProposal::Kind::BetaConjugate:
          theta[block.indices[0]] = sample_beta(p.beta.a, p.beta.b, rng);
          break;
      }
    }
  }

  double log_prior_ratio(std::span<const double> theta) const override {
    double total = 0.0;
    for (const auto& p : proposals_) {
      const PriorBlock& block = *p.block;
      switch (p.kind) {
        case BlockProposal::Kind::Prior:
          break;
        case BlockProposal::Kind::Gaussian: {
          // Same transform under prior and proposal, so the Jacobians cancel.
          std::array<double, 16> z{};
          for (std::size_t i = 0; i < block.dim(); ++i) {
            z[i] = to_latent(block.kind, theta[block.indices[i]]);
          }
          const std::span<const double> zs(z.data(), block.dim());
          total += block.gaussian.log_density(zs) - p.posterior->log_density(zs);
          break;
        }
        case BlockProposal::Kind::LogitBeta: {
          double log_q = 0.0;
          const Eigen::VectorXd& mean = block.gaussian.mean();
          const Eigen::MatrixXd& cov = block.gaussian.covariance();
          for (std::size_t i = 0; i < block.dim(); ++i) {
            const double x = theta[block.indices[i]];
            if (i == p.observed) {
              log_q += beta_log_density(x, p.beta.a, p.beta.b);
            } else {
              const auto ii = static_cast<Eigen::Index>(i);
              log_q += normal_log_density(logit(x), mean(ii), cov(ii, ii)) +
                       log_jacobian(PriorBlock::Kind::LogitNormal, x);
            }
          }
          total += block.log_density(theta) - log_q;
          break;
        }
        case BlockProposal::Kind::BetaConjugate: {
          const double x = theta[block.indices[0]];
          total += beta_log_density(x, block.beta_a, block.beta_b) - beta_log_density(x, p.beta.a, p.beta.b);
          break;
        }
      }
    }
    return total;
  }

 private:
  std::vector<BlockProposal> proposals_;
};

bool channel_fits_block(ObservationChannel::Kind channel, PriorBlock::Kind block) {
  using C = ObservationChannel::Kind;
  using B = PriorBlock::Kind;
  switch (block) {
    case B::Normal:
      return channel == C::Normal;
    case B::LogNormal:
      return channel == C::NormalOnLog;
    case B::LogitNormal:
    case B::Beta:
      return channel == C::Binomial;
  }
  return false;
}

}  // namespace

ImportancePlan::ImportancePlan(BlockPrior prior, std::vector<ObservationChannel> channels)
    : prior_(std::move(prior)), channels_(std::move(channels)) {
  const auto& blocks = prior_.blocks();
  rules_.resize(blocks.size());
  for (std::size_t c = 0; c < channels_.size(); ++c) {
    const auto& channel = channels_[c];
    bool placed = false;
    for (std::size_t b = 0; b < blocks.size() && !placed; ++b) {
      const auto& idx = blocks[b].indices;
      for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] != channel.parameter) continue;
        if (!channel_fits_block(channel.kind, blocks[b].kind)) {
          throw std::invalid_argument("ImportancePlan: unsupported channel type for the observed prior block");
        }
        rules_[b].channels.push_back(c);
        rules_[b].components.push_back(k);
        placed = true;
        break;
      }
    }
    if (!placed) {
      throw std::invalid_argument("ImportancePlan: channel observes a parameter outside the prior");
    }
  }
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    auto& rule = rules_[b];
    const auto& block = blocks[b];
    const bool binomial_block = block.kind == PriorBlock::Kind::LogitNormal || block.kind == PriorBlock::Kind::Beta;
    if (binomial_block && rule.channels.size() > 1) {
      throw std::invalid_argument("ImportancePlan: at most one binomial channel per probability block");
    }
    if (block.kind == PriorBlock::Kind::LogitNormal && !rule.channels.empty()) {
      const auto k = static_cast<Eigen::Index>(rule.components[0]);
      rule.beta = beta_moment_match(block.gaussian.mean()(k), block.gaussian.covariance()(k, k));
    }
  }
}

std::size_t ImportancePlan::informed_block_count() const {
  std::size_t n = 0;
  for (const auto& rule : rules_) {
    n += rule.channels.empty() ? 0 : 1;
  }
  return n;
}

std::unique_ptr<InnerSampler> ImportancePlan::build(std::span<const double> y) const {
  if (y.size() != channels_.size()) {
    throw std::invalid_argument("ImportancePlan: observation dimension mismatch");
  }
  const auto& blocks = prior_.blocks();
  std::vector<BlockProposal> proposals(blocks.size());
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    auto& p = proposals[b];
    const auto& rule = rules_[b];
    p.block = &blocks[b];
    if (rule.channels.empty()) {
      continue;
    }
    switch (blocks[b].kind) {
      case PriorBlock::Kind::Normal:
      case PriorBlock::Kind::LogNormal: {
        p.kind = BlockProposal::Kind::Gaussian;
        MvNormalParams post = blocks[b].gaussian;
        for (std::size_t j = 0; j < rule.channels.size(); ++j) {
          const auto& channel = channels_[rule.channels[j]];
          post = gaussian_condition(post, rule.components[j], y[rule.channels[j]], channel.noise_variance);
        }
        p.posterior = std::move(post);
        break;
      }
      case PriorBlock::Kind::LogitNormal: {
        const auto& channel = channels_[rule.channels[0]];
        p.kind = BlockProposal::Kind::LogitBeta;
        p.observed = rule.components[0];
        p.beta = rule.beta.posterior(std::round(y[rule.channels[0]]), channel.trials);
        break;
      }
      case PriorBlock::Kind::Beta: {
        const auto& channel = channels_[rule.channels[0]];
        p.kind = BlockProposal::Kind::BetaConjugate;
        p.beta = BetaApprox{blocks[b].beta_a, blocks[b].beta_b}.posterior(std::round(y[rule.channels[0]]),
                                                                         channel.trials);
        break;
      }
    }
  }
  return std::make_unique<BlockImportanceSampler>(std::move(proposals));
}

std::unique_ptr<InnerSampler> build_importance_sampler(const ImportancePlan& plan, std::span<const double> y) {
  return plan.build(y);
}

}  // namespace evsi
