#include "evsi/decision_model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

namespace evsi {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

MvNormalParams unit_normal() { return MvNormalParams(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1)); }

void check_gaussian_block(const std::vector<std::size_t>& indices, const MvNormalParams& params) {
  if (indices.empty() || indices.size() != params.dim()) {
    throw std::invalid_argument("PriorBlock: index list does not match the block dimension");
  }
}

}  // namespace

ParameterRegistry::ParameterRegistry(std::vector<std::string> names) : names_(std::move(names)) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (names_[i] == names_[j]) {
        throw std::invalid_argument("ParameterRegistry: duplicate name " + names_[i]);
      }
    }
  }
}

std::size_t ParameterRegistry::index(std::string_view name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) {
    throw std::out_of_range("unknown parameter: " + std::string(name));
  }
  return static_cast<std::size_t>(it - names_.begin());
}

PriorBlock PriorBlock::normal(std::vector<std::size_t> indices, MvNormalParams params) {
  check_gaussian_block(indices, params);
  return PriorBlock{Kind::Normal, std::move(indices), std::move(params)};
}

PriorBlock PriorBlock::lognormal(std::vector<std::size_t> indices, MvNormalParams params) {
  check_gaussian_block(indices, params);
  return PriorBlock{Kind::LogNormal, std::move(indices), std::move(params)};
}

PriorBlock PriorBlock::logitnormal(std::vector<std::size_t> indices, MvNormalParams params) {
  check_gaussian_block(indices, params);
  return PriorBlock{Kind::LogitNormal, std::move(indices), std::move(params)};
}

PriorBlock PriorBlock::beta(std::size_t index, double a, double b) {
  if (!(a > 0.0 && b > 0.0)) {
    throw std::invalid_argument("PriorBlock: beta shape parameters must be positive");
  }
  return PriorBlock{Kind::Beta, {index}, unit_normal(), a, b};
}

double to_latent(PriorBlock::Kind kind, double x) {
  switch (kind) {
    case PriorBlock::Kind::LogNormal:
      return std::log(x);
    case PriorBlock::Kind::LogitNormal:
      return logit(x);
    default:
      return x;
  }
}

double from_latent(PriorBlock::Kind kind, double z) {
  switch (kind) {
    case PriorBlock::Kind::LogNormal:
      return std::exp(z);
    case PriorBlock::Kind::LogitNormal:
      return logistic(z);
    default:
      return z;
  }
}

double log_jacobian(PriorBlock::Kind kind, double x) {
  switch (kind) {
    case PriorBlock::Kind::LogNormal:
      return -std::log(x);
    case PriorBlock::Kind::LogitNormal:
      return -std::log(x) - std::log1p(-x);
    default:
      return 0.0;
  }
}

void PriorBlock::sample(RandomSource& rng, std::span<double> theta) const {
  if (kind == Kind::Beta) {
    theta[indices[0]] = sample_beta(beta_a, beta_b, rng);
    return;
  }
  std::array<double, 16> z{};
  gaussian.sample(rng, std::span<double>(z.data(), dim()));
  for (std::size_t i = 0; i < dim(); ++i) {
    theta[indices[i]] = from_latent(kind, z[i]);
  }
}

double PriorBlock::log_density(std::span<const double> theta) const {
  if (kind == Kind::Beta) {
    return beta_log_density(theta[indices[0]], beta_a, beta_b);
  }
  std::array<double, 16> z{};
  double log_jac = 0.0;
  for (std::size_t i = 0; i < dim(); ++i) {
    const double x = theta[indices[i]];
    if ((kind == Kind::LogNormal && !(x > 0.0)) || (kind == Kind::LogitNormal && !(x > 0.0 && x < 1.0))) {
      return kNegInf;
    }
    z[i] = to_latent(kind, x);
    log_jac += log_jacobian(kind, x);
  }
  return gaussian.log_density(std::span<const double>(z.data(), dim())) + log_jac;
}

BlockPrior::BlockPrior(std::size_t parameter_count, std::vector<PriorBlock> blocks)
    : parameter_count_(parameter_count), blocks_(std::move(blocks)) {
  std::vector<int> seen(parameter_count_, 0);
  for (const auto& block : blocks_) {
    for (const auto i : block.indices) {
      if (i >= parameter_count_) {
        throw std::invalid_argument("BlockPrior: parameter index out of range");
      }
      ++seen[i];
    }
  }
  if (std::any_of(seen.begin(), seen.end(), [](int c) { return c != 1; })) {
    throw std::invalid_argument("BlockPrior: every parameter must belong to exactly one block");
  }
}

void BlockPrior::sample(RandomSource& rng, std::span<double> theta) const {
  for (const auto& block : blocks_) {
    block.sample(rng, theta);
  }
}

double BlockPrior::log_density(std::span<const double> theta) const {
  double total = 0.0;
  for (const auto& block : blocks_) {
    total += block.log_density(theta);
  }
  return total;
}

ObservationChannel ObservationChannel::normal(std::size_t parameter, double noise_variance) {
  if (!(noise_variance > 0.0)) {
    throw std::invalid_argument("ObservationChannel: noise variance must be positive");
  }
  return {Kind::Normal, parameter, noise_variance, 0};
}

ObservationChannel ObservationChannel::normal_on_log(std::size_t parameter, double noise_variance) {
  if (!(noise_variance > 0.0)) {
    throw std::invalid_argument("ObservationChannel: noise variance must be positive");
  }
  return {Kind::NormalOnLog, parameter, noise_variance, 0};
}

ObservationChannel ObservationChannel::binomial(std::size_t parameter, int trials) {
  if (trials < 1) {
    throw std::invalid_argument("ObservationChannel: binomial trials must be at least 1");
  }
  return {Kind::Binomial, parameter, 0.0, trials};
}

double ObservationChannel::sample(std::span<const double> theta, RandomSource& rng) const {
  const double x = theta[parameter];
  switch (kind) {
    case Kind::Normal:
      return x + std::sqrt(noise_variance) * rng.normal();
    case Kind::NormalOnLog:
      return std::log(x) + std::sqrt(noise_variance) * rng.normal();
    case Kind::Binomial:
      return static_cast<double>(sample_binomial(trials, x, rng));
  }
  return 0.0;
}

double ObservationChannel::log_likelihood(double y, std::span<const double> theta) const {
  const double x = theta[parameter];
  switch (kind) {
    case Kind::Normal:
      return normal_log_density(y, x, noise_variance);
    case Kind::NormalOnLog:
      return x > 0.0 ? normal_log_density(y, std::log(x), noise_variance) : kNegInf;
    case Kind::Binomial: {
      const double k = std::round(y);
      if (std::abs(y - k) > 1e-9) {
        throw std::invalid_argument("binomial observation is not an integer count");
      }
      return binomial_log_mass(k, trials, x);
    }
  }
  return kNegInf;
}

double channels_log_likelihood(std::span<const ObservationChannel> channels, std::span<const double> y,
                               std::span<const double> theta) {
  if (y.size() != channels.size()) {
    throw std::invalid_argument("observation dimension does not match the channel count");
  }
  double total = 0.0;
  for (std::size_t c = 0; c < channels.size(); ++c) {
    total += channels[c].log_likelihood(y[c], theta);
  }
  return total;
}

double DecisionModel::net_benefit_bound() const { return std::numeric_limits<double>::infinity(); }

std::unique_ptr<InnerSampler> DecisionModel::importance_sampler(std::span<const double>) const {
  throw std::logic_error("model does not provide an importance distribution");
}

double DecisionModel::net_benefit(std::size_t decision, std::span<const double> theta) const {
  if (decision >= decision_count()) {
    throw std::out_of_range("decision index out of range");
  }
  if (theta.size() != parameter_count()) {
    throw std::invalid_argument("theta has the wrong dimension");
  }
  std::vector<double> f(decision_count());
  net_benefits(theta, f);
  return f[decision];
}

Observation DecisionModel::sample_observation(std::span<const double> theta, RandomSource& rng) const {
  Observation y(observation_dim());
  sample_observation(theta, rng, y);
  return y;
}

EvpiEstimate estimate_evpi(const DecisionModel& model, std::size_t n, RandomSource& rng) {
  if (n < 2) {
    throw std::invalid_argument("estimate_evpi: need at least two samples");
  }
  const std::size_t nd = model.decision_count();
  std::vector<double> values(n * nd);
  std::vector<double> maxima(n);
  ThetaSample theta(model.parameter_count());
  std::vector<double> sums(nd, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    model.sample_prior(rng, theta);
    std::span<double> f(values.data() + i * nd, nd);
    model.net_benefits(theta, f);
    maxima[i] = *std::max_element(f.begin(), f.end());
    for (std::size_t d = 0; d < nd; ++d) {
      sums[d] += f[d];
    }
  }

  EvpiEstimate out;
  out.samples = n;
  out.decision_means.resize(nd);
  for (std::size_t d = 0; d < nd; ++d) {
    out.decision_means[d] = sums[d] / static_cast<double>(n);
  }
  out.best_decision = static_cast<std::size_t>(
      std::max_element(out.decision_means.begin(), out.decision_means.end()) - out.decision_means.begin());

  // Samplewise gaps max_d f_d - f_{d*} are nonnegative, so their mean is too.
  double gap_sum = 0.0;
  double max_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    gap_sum += maxima[i] - values[i * nd + out.best_decision];
    max_sum += maxima[i];
  }
  const double dn = static_cast<double>(n);
  out.estimate = gap_sum / dn;
  const double max_mean = max_sum / dn;
  double gap_ss = 0.0;
  double max_ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = maxima[i] - values[i * nd + out.best_decision] - out.estimate;
    const double m = maxima[i] - max_mean;
    gap_ss += g * g;
    max_ss += m * m;
  }
  out.std_error = std::sqrt(gap_ss / (dn - 1.0) / dn);
  out.max_term_std_error = std::sqrt(max_ss / (dn - 1.0) / dn);
  return out;
}

}  // namespace evsi
