#ifndef EVSI_MLMC_HPP
#define EVSI_MLMC_HPP

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "evsi/decision_model.hpp"

namespace evsi {

/// Largest decision set the level estimator supports.
inline constexpr std::size_t kMaxDecisions = 16;

struct MlmcConfig {
  int m0 = 16;  ///< inner samples at level 0; level l uses m0 * 2^l
  double eps = 1.0;  ///< target root-mean-square accuracy
  int initial_levels = 3;
  int max_level = 16;
  std::int64_t initial_samples = 100;  ///< warm-up draws per new level
  bool use_importance_sampling = true;
  std::uint64_t seed = 0;
  /// Share of eps^2 given to the sampling variance; the rest bounds the squared bias.
  double variance_fraction = 0.5;
  int threads = 0;  ///< 0 = std::thread::hardware_concurrency()
  int max_retries = 100;  ///< Y redraws allowed after a degenerate likelihood
  /// Salt for stream derivation, so runs that share a seed stay independent.
  std::uint64_t run_id = 0;

  /// Throws std::invalid_argument on an out-of-range field.
  void validate() const;
};

/// Accumulated statistics of Delta P_l and P_l at one level.
struct LevelEstimate {
  int level = 0;
  std::int64_t n = 0;
  double cost_per_sample = 0.0;  ///< m0 * 2^level model evaluations
  std::array<double, 4> delta_power_sums{};  ///< sums of dP, dP^2, dP^3, dP^4
  std::array<double, 2> fine_power_sums{};   ///< sums of P, P^2
  double delta_abs_sum = 0.0;
  std::int64_t degenerate_redraws = 0;
  std::int64_t bound_violations = 0;  ///< inner draws with some |f_d| > F_max

  double mean_delta() const;
  double var_delta() const;
  double mean_fine() const;
  double var_fine() const;
  double kurtosis() const;
  double total_cost() const { return cost_per_sample * static_cast<double>(n); }

  void add(double delta_p, double p_fine);
  void merge(const LevelEstimate& other);
};

/// Self-normalized weighted sums over a contiguous run of inner draws, after
/// the shared log-weight shift.
struct WeightedSums {
  double weight = 0.0;
  double weighted_max = 0.0;
  std::array<double, kMaxDecisions> weighted_values{};

  /// g_max - max_d g_d.
  double p_value(std::size_t decisions) const;
};

/// Inner draws behind one outer sample.
struct InnerDraws {
  std::size_t decisions = 0;
  std::size_t parameters = 0;
  Observation y;
  std::vector<double> thetas;       ///< row-major, one row per draw
  std::vector<double> log_weights;  ///< log rho(Y|theta) + log pi0/q
  std::vector<double> values;       ///< row-major f_d(theta)
  std::vector<double> maxima;       ///< max_d f_d(theta)

  std::size_t size() const { return log_weights.size(); }
  void resize(std::size_t draws, std::size_t decisions, std::size_t parameters, std::size_t obs_dim);
};

WeightedSums accumulate(const InnerDraws& draws, double log_shift, std::size_t begin, std::size_t end);

/// One correction sample together with all its ingredients.
struct LevelSample {
  double delta_p = 0.0;
  double p_fine = 0.0;
  double p_half_a = 0.0;  ///< equal to p_fine at level 0
  double p_half_b = 0.0;
  double log_shift = 0.0;
  WeightedSums full;
  WeightedSums half_a;
  WeightedSums half_b;
};

/// Evaluates Delta P_l on recorded draws. Throws DegenerateLikelihood when
/// every weight is zero.
LevelSample evaluate_level_sample(const InnerDraws& draws, int level);

struct InnerEstimate {
  double g_max = 0.0;
  std::vector<double> g;
};

/// Self-normalized ratio estimates of E[max_d f_d | Y] and E[f_d | Y].
InnerEstimate inner_estimate(const DecisionModel& model, std::span<const ThetaSample> thetas,
                             std::span<const double> log_weights);

/// Draws Y from its marginal and m0 * 2^level inner samples (prior or importance).
void draw_level_inputs(const DecisionModel& model, int level, const MlmcConfig& config, RandomSource& rng,
                       InnerDraws& draws);

/// Draws inputs and evaluates Delta P_l, redrawing Y after degenerate
/// likelihoods up to config.max_retries times. `redraws` counts them.
LevelSample sample_delta_p(const DecisionModel& model, int level, const MlmcConfig& config, RandomSource& rng,
                           InnerDraws& scratch, std::int64_t* redraws = nullptr);

/// n correction samples with indices first..first+n-1 of this level. Each draw
/// uses its own derived stream, and partial sums are reduced in a fixed order,
/// so the result does not depend on the thread count.
LevelEstimate run_level(const DecisionModel& model, int level, std::int64_t n, const MlmcConfig& config,
                        std::int64_t first = 0);

struct RateFit {
  double alpha = 0.0;
  double beta = 0.0;
};

/// Least-squares slopes of -log2 |mean dP_l| and -log2 var dP_l over l >= l_min.
/// Throws std::invalid_argument with fewer than two usable levels.
RateFit regress_rates(std::span<const LevelEstimate> levels, int l_min = 2);

struct MlmcRunResult {
  double estimate = 0.0;  ///< of EVPI - EVSI
  std::vector<LevelEstimate> levels;
  int final_level = 0;
  std::vector<std::int64_t> samples;  ///< N_l
  double alpha = 0.0;
  double beta = 0.0;
  double total_cost = 0.0;  ///< sum_l N_l m0 2^l
  double variance = 0.0;    ///< sum_l V_l / N_l
  bool converged = false;
  std::int64_t degenerate_redraws = 0;
  std::int64_t bound_violations = 0;
};

/// Adaptive MLMC driver targeting mean-square error eps^2.
MlmcRunResult run_mlmc(const DecisionModel& model, const MlmcConfig& config);

struct NestedMcResult {
  double estimate = 0.0;
  double std_error = 0.0;
  double total_cost = 0.0;  ///< n m0 2^L
  double variance = 0.0;    ///< sample variance of P_L
};

/// Plain average of n draws of P_L.
NestedMcResult run_nested_mc(const DecisionModel& model, const MlmcConfig& config, int level, std::int64_t n);

/// Cost of nested MC at the same level and accuracy, from a variance of P_L.
double nested_mc_cost(double var_fine, int level, const MlmcConfig& config);

struct ConvergenceRow {
  int level = 0;
  std::int64_t n = 0;
  double mean_fine = 0.0;
  double var_fine = 0.0;
  double mean_delta = 0.0;
  double var_delta = 0.0;
  double kurtosis = 0.0;
  double cost = 0.0;  ///< per sample
};

struct ConvergenceReport {
  std::vector<ConvergenceRow> rows;
  std::vector<LevelEstimate> levels;
  double alpha = 0.0;
  double beta = 0.0;
  bool rates_available = false;
};

/// Fixed-sample statistics for levels 0..max_level plus regressed rates.
ConvergenceReport convergence_report(const DecisionModel& model, int max_level, std::int64_t samples_per_level,
                                     const MlmcConfig& config, int l_min = 2);

}  // namespace evsi

#endif  // EVSI_MLMC_HPP
