#include "evsi/mlmc.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace evsi {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::int64_t kChunk = 256;

// Stream salts keep the different estimators on disjoint streams.
constexpr std::uint64_t kLevelSalt = 0x4d4c4d43;   // MLMC levels
constexpr std::uint64_t kReportSalt = 0x52505254;  // convergence report
constexpr std::uint64_t kNestedSalt = 0x4e4d4352;  // nested MC

std::int64_t inner_count(int level, const MlmcConfig& config) {
  return static_cast<std::int64_t>(config.m0) << level;
}

int worker_count(const MlmcConfig& config, std::int64_t chunks) {
  int t = config.threads > 0 ? config.threads : static_cast<int>(std::thread::hardware_concurrency());
  t = std::max(t, 1);
  return static_cast<int>(std::min<std::int64_t>(t, std::max<std::int64_t>(chunks, 1)));
}

// Runs body(chunk_index) for every chunk on a small pool. The body writes to
// its own slot, so the caller can reduce the slots in order afterwards.
template <class Body>
void parallel_chunks(std::int64_t chunks, int threads, Body&& body) {
  if (threads <= 1) {
    for (std::int64_t c = 0; c < chunks; ++c) body(c);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::int64_t c = next++; c < chunks; c = next++) {
        try {
          body(c);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = chunks;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

void MlmcConfig::validate() const {
  if (m0 < 1) throw std::invalid_argument("M0 must be a positive integer");
  if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
  if (initial_levels < 2) throw std::invalid_argument("initial_levels must be at least 2");
  if (max_level < initial_levels - 1 || max_level > 40) throw std::invalid_argument("max_level out of range");
  if (initial_samples < 2) throw std::invalid_argument("initial_samples must be at least 2");
  if (!(variance_fraction > 0.0 && variance_fraction < 1.0)) {
    throw std::invalid_argument("variance_fraction must lie in (0, 1)");
  }
  if (max_retries < 0) throw std::invalid_argument("max_retries must be nonnegative");
}

double LevelEstimate::mean_delta() const { return n > 0 ? delta_power_sums[0] / static_cast<double>(n) : 0.0; }

double LevelEstimate::var_delta() const {
  if (n < 2) return 0.0;
  const double m = mean_delta();
  return std::max(0.0, delta_power_sums[1] / static_cast<double>(n) - m * m);
}

double LevelEstimate::mean_fine() const { return n > 0 ? fine_power_sums[0] / static_cast<double>(n) : 0.0; }

double LevelEstimate::var_fine() const {
  if (n < 2) return 0.0;
  const double m = mean_fine();
  return std::max(0.0, fine_power_sums[1] / static_cast<double>(n) - m * m);
}

double LevelEstimate::kurtosis() const {
  const double v = var_delta();
  if (!(v > 0.0)) return 0.0;
  const double dn = static_cast<double>(n);
  const double m = mean_delta();
  const double s2 = delta_power_sums[1] / dn;
  const double s3 = delta_power_sums[2] / dn;
  const double s4 = delta_power_sums[3] / dn;
  return (s4 - 4.0 * s3 * m + 6.0 * s2 * m * m - 3.0 * m * m * m * m) / (v * v);
}

void LevelEstimate::add(double delta_p, double p_fine) {
  ++n;
  const double d2 = delta_p * delta_p;
  delta_power_sums[0] += delta_p;
  delta_power_sums[1] += d2;
  delta_power_sums[2] += d2 * delta_p;
  delta_power_sums[3] += d2 * d2;
  delta_abs_sum += std::abs(delta_p);
  fine_power_sums[0] += p_fine;
  fine_power_sums[1] += p_fine * p_fine;
}

void LevelEstimate::merge(const LevelEstimate& other) {
  n += other.n;
  for (std::size_t k = 0; k < 4; ++k) delta_power_sums[k] += other.delta_power_sums[k];
  for (std::size_t k = 0; k < 2; ++k) fine_power_sums[k] += other.fine_power_sums[k];
  delta_abs_sum += other.delta_abs_sum;
  degenerate_redraws += other.degenerate_redraws;
  bound_violations += other.bound_violations;
}

double WeightedSums::p_value(std::size_t decisions) const {
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t d = 0; d < decisions; ++d) {
    best = std::max(best, weighted_values[d] / weight);
  }
  return weighted_max / weight - best;
}

void InnerDraws::resize(std::size_t draws, std::size_t nd, std::size_t np, std::size_t obs_dim) {
  decisions = nd;
  parameters = np;
  y.resize(obs_dim);
  thetas.resize(draws * np);
  log_weights.resize(draws);
  values.resize(draws * nd);
  maxima.resize(draws);
}

WeightedSums accumulate(const InnerDraws& draws, double log_shift, std::size_t begin, std::size_t end) {
  WeightedSums s;
  const std::size_t nd = draws.decisions;
  for (std::size_t m = begin; m < end; ++m) {
    const double w = std::exp(draws.log_weights[m] - log_shift);
    s.weight += w;
    s.weighted_max += w * draws.maxima[m];
    const double* f = draws.values.data() + m * nd;
    for (std::size_t d = 0; d < nd; ++d) {
      s.weighted_values[d] += w * f[d];
    }
  }
  return s;
}

LevelSample evaluate_level_sample(const InnerDraws& draws, int level) {
  const std::size_t m = draws.size();
  if (m == 0 || (level > 0 && m % 2 != 0)) {
    throw std::invalid_argument("evaluate_level_sample: inner draw count does not fit the level");
  }
  LevelSample out;
  out.log_shift = *std::max_element(draws.log_weights.begin(), draws.log_weights.end());
  if (out.log_shift == kNegInf || std::isnan(out.log_shift)) {
    throw DegenerateLikelihood("all inner weights are zero for this observation");
  }
  const std::size_t nd = draws.decisions;
  out.full = accumulate(draws, out.log_shift, 0, m);
  out.p_fine = out.full.p_value(nd);
  if (level == 0) {
    out.delta_p = out.p_fine;
    out.p_half_a = out.p_half_b = out.p_fine;
    return out;
  }
  out.half_a = accumulate(draws, out.log_shift, 0, m / 2);
  out.half_b = accumulate(draws, out.log_shift, m / 2, m);
  if (!(out.half_a.weight > 0.0) || !(out.half_b.weight > 0.0)) {
    throw DegenerateLikelihood("all inner weights of one half are zero for this observation");
  }
  out.p_half_a = out.half_a.p_value(nd);
  out.p_half_b = out.half_b.p_value(nd);
  out.delta_p = out.p_fine - 0.5 * (out.p_half_a + out.p_half_b);
  return out;
}

InnerEstimate inner_estimate(const DecisionModel& model, std::span<const ThetaSample> thetas,
                             std::span<const double> log_weights) {
  if (thetas.empty() || thetas.size() != log_weights.size()) {
    throw std::invalid_argument("inner_estimate: need equally many (nonzero) thetas and weights");
  }
  const std::size_t nd = model.decision_count();
  if (nd > kMaxDecisions) {
    throw std::invalid_argument("inner_estimate: too many decisions");
  }
  InnerDraws draws;
  draws.resize(thetas.size(), nd, model.parameter_count(), model.observation_dim());
  for (std::size_t m = 0; m < thetas.size(); ++m) {
    std::span<double> f(draws.values.data() + m * nd, nd);
    model.net_benefits(thetas[m], f);
    draws.maxima[m] = *std::max_element(f.begin(), f.end());
    draws.log_weights[m] = log_weights[m];
  }
  const double shift = *std::max_element(log_weights.begin(), log_weights.end());
  if (shift == kNegInf || std::isnan(shift)) {
    throw DegenerateLikelihood("all inner weights are zero for this observation");
  }
  const WeightedSums s = accumulate(draws, shift, 0, thetas.size());
  InnerEstimate out;
  out.g_max = s.weighted_max / s.weight;
  out.g.resize(nd);
  for (std::size_t d = 0; d < nd; ++d) {
    out.g[d] = s.weighted_values[d] / s.weight;
  }
  return out;
}

void draw_level_inputs(const DecisionModel& model, int level, const MlmcConfig& config, RandomSource& rng,
                       InnerDraws& draws) {
  const std::size_t nd = model.decision_count();
  const std::size_t np = model.parameter_count();
  if (nd > kMaxDecisions) {
    throw std::invalid_argument("too many decisions for the level estimator");
  }
  const auto m = static_cast<std::size_t>(inner_count(level, config));
  draws.resize(m, nd, np, model.observation_dim());

  // Marginal draw of Y: theta from the prior, then Y | theta.
  std::span<double> outer(draws.thetas.data(), np);
  model.sample_prior(rng, outer);
  model.sample_observation(outer, rng, draws.y);

  std::unique_ptr<InnerSampler> importance;
  PriorSampler prior(model);
  const InnerSampler* sampler = &prior;
  if (config.use_importance_sampling && model.supports_importance_sampling()) {
    importance = model.importance_sampler(draws.y);
    sampler = importance.get();
  }
  for (std::size_t i = 0; i < m; ++i) {
    std::span<double> theta(draws.thetas.data() + i * np, np);
    sampler->sample(rng, theta);
    const double log_ratio = sampler->log_prior_ratio(theta);
    draws.log_weights[i] = log_ratio == kNegInf ? kNegInf : model.log_likelihood(draws.y, theta) + log_ratio;
    std::span<double> f(draws.values.data() + i * nd, nd);
    model.net_benefits(theta, f);
    draws.maxima[i] = *std::max_element(f.begin(), f.end());
  }
}

LevelSample sample_delta_p(const DecisionModel& model, int level, const MlmcConfig& config, RandomSource& rng,
                           InnerDraws& scratch, std::int64_t* redraws) {
  for (int attempt = 0;; ++attempt) {
    draw_level_inputs(model, level, config, rng, scratch);
    try {
      return evaluate_level_sample(scratch, level);
    } catch (const DegenerateLikelihood&) {
      if (attempt >= config.max_retries) {
        throw;
      }
      if (redraws != nullptr) ++*redraws;
    }
  }
}

namespace {

LevelEstimate run_level_salted(const DecisionModel& model, int level, std::int64_t n, const MlmcConfig& config,
                               std::int64_t first, std::uint64_t salt) {
  if (n < 0) throw std::invalid_argument("run_level: negative sample count");
  const std::int64_t chunks = (n + kChunk - 1) / kChunk;
  std::vector<LevelEstimate> partial(static_cast<std::size_t>(chunks));
  const double bound = model.net_benefit_bound();
  const std::uint64_t run = stream_key(salt, config.run_id);

  parallel_chunks(chunks, worker_count(config, chunks), [&](std::int64_t c) {
    InnerDraws scratch;
    LevelEstimate& acc = partial[static_cast<std::size_t>(c)];
    const std::int64_t begin = c * kChunk;
    const std::int64_t end = std::min(n, begin + kChunk);
    for (std::int64_t i = begin; i < end; ++i) {
      const auto index = static_cast<std::uint64_t>(first + i);
      RandomSource rng(config.seed, stream_key(run, static_cast<std::uint64_t>(level), index));
      const LevelSample s = sample_delta_p(model, level, config, rng, scratch, &acc.degenerate_redraws);
      acc.add(s.delta_p, s.p_fine);
      for (const double v : scratch.values) {
        if (std::abs(v) > bound) ++acc.bound_violations;
      }
    }
  });

  LevelEstimate out;
  out.level = level;
  out.cost_per_sample = static_cast<double>(inner_count(level, config));
  for (const auto& p : partial) {
    out.merge(p);
  }
  return out;
}

}  // namespace

LevelEstimate run_level(const DecisionModel& model, int level, std::int64_t n, const MlmcConfig& config,
                        std::int64_t first) {
  return run_level_salted(model, level, n, config, first, kLevelSalt);
}

RateFit regress_rates(std::span<const LevelEstimate> levels, int l_min) {
  std::vector<double> ls;
  std::vector<double> log_means;
  std::vector<double> log_vars;
  for (const auto& lv : levels) {
    if (lv.level < l_min) continue;
    const double m = std::abs(lv.mean_delta());
    const double v = lv.var_delta();
    if (!(m > 0.0) || !(v > 0.0)) continue;
    ls.push_back(lv.level);
    log_means.push_back(std::log2(m));
    log_vars.push_back(std::log2(v));
  }
  if (ls.size() < 2) {
    throw std::invalid_argument("regress_rates: need at least two levels with nonzero statistics");
  }
  auto slope = [&](const std::vector<double>& ys) {
    const double k = static_cast<double>(ls.size());
    double sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < ls.size(); ++i) {
      sx += ls[i];
      sy += ys[i];
    }
    const double mx = sx / k;
    const double my = sy / k;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < ls.size(); ++i) {
      sxy += (ls[i] - mx) * (ys[i] - my);
      sxx += (ls[i] - mx) * (ls[i] - mx);
    }
    return sxy / sxx;
  };
  return {-slope(log_means), -slope(log_vars)};
}

MlmcRunResult run_mlmc(const DecisionModel& model, const MlmcConfig& config) {
  config.validate();
  const double eps2 = config.eps * config.eps;
  int top = config.initial_levels - 1;
  std::vector<LevelEstimate> levels;
  std::vector<std::int64_t> pending;
  for (int l = 0; l <= top; ++l) {
    LevelEstimate lv;
    lv.level = l;
    lv.cost_per_sample = static_cast<double>(inner_count(l, config));
    levels.push_back(lv);
    pending.push_back(config.initial_samples);
  }

  MlmcRunResult result;
  double alpha = 1.0;
  double beta = 1.0;
  bool done = false;
  while (!done) {
    for (int l = 0; l <= top; ++l) {
      if (pending[l] > 0) {
        levels[l].merge(run_level(model, l, pending[l], config, levels[l].n));
        pending[l] = 0;
      }
    }

    // Means and variances, with the usual floor against spuriously small
    // estimates on the finest levels.
    std::vector<double> ml(top + 1);
    std::vector<double> vl(top + 1);
    for (int l = 0; l <= top; ++l) {
      ml[l] = std::abs(levels[l].mean_delta());
      vl[l] = levels[l].var_delta();
    }
    // Rates on the fly over l >= 1 (l >= 2 once there are enough levels).
    const int l_min = top >= 3 ? 2 : 1;
    try {
      const RateFit fit = regress_rates(levels, l_min);
      alpha = std::max(0.5, fit.alpha);
      beta = std::max(0.5, fit.beta);
    } catch (const std::invalid_argument&) {
      // Keep the previous rates.
    }
    for (int l = 2; l <= top; ++l) {
      ml[l] = std::max(ml[l], 0.5 * ml[l - 1] / std::pow(2.0, alpha));
      vl[l] = std::max(vl[l], 0.5 * vl[l - 1] / std::pow(2.0, beta));
    }

    // Optimal N_l for variance variance_fraction * eps^2.
    double sum_vc = 0.0;
    for (int l = 0; l <= top; ++l) sum_vc += std::sqrt(vl[l] * levels[l].cost_per_sample);
    bool pending_work = false;
    for (int l = 0; l <= top; ++l) {
      const double target =
          std::ceil(std::sqrt(vl[l] / levels[l].cost_per_sample) * sum_vc / (config.variance_fraction * eps2));
      const auto want = static_cast<std::int64_t>(std::min(target, 1e15));
      pending[l] = std::max<std::int64_t>(0, want - levels[l].n);
      if (static_cast<double>(pending[l]) > 0.01 * static_cast<double>(levels[l].n)) pending_work = true;
    }
    if (pending_work) continue;

    // Bias test on the alpha-extrapolated remainder of the last three levels.
    double remainder = 0.0;
    for (int i = 0; i < 3 && i <= top; ++i) {
      remainder = std::max(remainder, ml[top - i] * std::pow(2.0, -alpha * i));
    }
    const double bias_target = (std::pow(2.0, alpha) - 1.0) * config.eps * std::sqrt(1.0 - config.variance_fraction);
    if (remainder <= bias_target) {
      result.converged = true;
      done = true;
    } else if (top >= config.max_level) {
      result.converged = false;
      done = true;
    } else {
      ++top;
      LevelEstimate lv;
      lv.level = top;
      lv.cost_per_sample = static_cast<double>(inner_count(top, config));
      levels.push_back(lv);
      pending.push_back(config.initial_samples);
    }
  }

  result.levels = levels;
  result.final_level = top;
  result.alpha = alpha;
  result.beta = beta;
  for (const auto& lv : levels) {
    result.estimate += lv.mean_delta();
    result.samples.push_back(lv.n);
    result.total_cost += lv.total_cost();
    result.variance += lv.n > 0 ? lv.var_delta() / static_cast<double>(lv.n) : 0.0;
    result.degenerate_redraws += lv.degenerate_redraws;
    result.bound_violations += lv.bound_violations;
  }
  return result;
}

NestedMcResult run_nested_mc(const DecisionModel& model, const MlmcConfig& config, int level, std::int64_t n) {
  if (n < 2) throw std::invalid_argument("run_nested_mc: need at least two outer samples");
  if (level < 0) throw std::invalid_argument("run_nested_mc: negative level");
  const std::int64_t chunks = (n + kChunk - 1) / kChunk;
  std::vector<std::array<double, 2>> partial(static_cast<std::size_t>(chunks));
  const std::uint64_t run = stream_key(kNestedSalt, config.run_id);
  parallel_chunks(chunks, worker_count(config, chunks), [&](std::int64_t c) {
    InnerDraws scratch;
    auto& acc = partial[static_cast<std::size_t>(c)];
    const std::int64_t begin = c * kChunk;
    const std::int64_t end = std::min(n, begin + kChunk);
    for (std::int64_t i = begin; i < end; ++i) {
      RandomSource rng(config.seed, stream_key(run, static_cast<std::uint64_t>(level), static_cast<std::uint64_t>(i)));
      // Level-0 evaluation of m0 2^L draws is exactly P_L with no correction.
      for (int attempt = 0;; ++attempt) {
        draw_level_inputs(model, level, config, rng, scratch);
        try {
          const double p = evaluate_level_sample(scratch, 0).p_fine;
          acc[0] += p;
          acc[1] += p * p;
          break;
        } catch (const DegenerateLikelihood&) {
          if (attempt >= config.max_retries) throw;
        }
      }
    }
  });
  double s1 = 0.0, s2 = 0.0;
  for (const auto& p : partial) {
    s1 += p[0];
    s2 += p[1];
  }
  const double dn = static_cast<double>(n);
  NestedMcResult out;
  out.estimate = s1 / dn;
  out.variance = std::max(0.0, (s2 / dn - out.estimate * out.estimate) * dn / (dn - 1.0));
  out.std_error = std::sqrt(out.variance / dn);
  out.total_cost = dn * static_cast<double>(inner_count(level, config));
  return out;
}

double nested_mc_cost(double var_fine, int level, const MlmcConfig& config) {
  // Continuous sample count, as in the usual MLMC cost comparisons.
  const double n = var_fine / (config.variance_fraction * config.eps * config.eps);
  return n * static_cast<double>(inner_count(level, config));
}

ConvergenceReport convergence_report(const DecisionModel& model, int max_level, std::int64_t samples_per_level,
                                     const MlmcConfig& config, int l_min) {
  if (max_level < 0) throw std::invalid_argument("convergence_report: negative max level");
  if (samples_per_level < 100) {
    throw std::invalid_argument("convergence_report: need at least 100 samples per level");
  }
  ConvergenceReport report;
  for (int l = 0; l <= max_level; ++l) {
    LevelEstimate lv = run_level_salted(model, l, samples_per_level, config, 0, kReportSalt);
    report.rows.push_back({l, lv.n, lv.mean_fine(), lv.var_fine(), lv.mean_delta(), lv.var_delta(), lv.kurtosis(),
                           lv.cost_per_sample});
    report.levels.push_back(lv);
  }
  try {
    const RateFit fit = regress_rates(report.levels, l_min);
    report.alpha = fit.alpha;
    report.beta = fit.beta;
    report.rates_available = true;
  } catch (const std::invalid_argument&) {
    report.rates_available = false;
  }
  return report;
}

}  // namespace evsi
