#ifndef EVSI_CASE_STUDY_HPP
#define EVSI_CASE_STUDY_HPP

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "evsi/decision_model.hpp"
#include "evsi/posterior.hpp"

namespace evsi::case_study {

// Fixed parameter order of the 12-entry ThetaSample.
enum Param : std::size_t { L, Q_E, Q_SE, C_E, C_SE, C_T2, C_T3, P_E1, OR_E2, OR_E3, P_SE2, P_SE3, kParamCount };

const ParameterRegistry& registry();

struct Constants {
  double cost_treatment1 = 0.0;     // C_T1
  double side_effect_prob1 = 0.0;   // P_SE1
  double qaly_value = 75000.0;      // lambda, currency per QALY

  bool operator==(const Constants&) const = default;
};

struct PriorBlockSpec {
  std::string family;  // "normal" | "log-normal" | "logit-normal" | "beta"
  std::vector<std::string> parameters;
  std::vector<double> mean;
  std::vector<std::vector<double>> covariance;
  double a = 0.0;  // beta only
  double b = 0.0;

  bool operator==(const PriorBlockSpec&) const = default;
};

struct ChannelSpec {
  std::string type;  // "normal" | "normal-on-log" | "binomial"
  std::string parameter;
  double variance_scale = 0.0;  // noise variance = variance_scale / n_p

  bool operator==(const ChannelSpec&) const = default;
};

struct Scenario {
  int id = 0;
  int patients = 0;  // n_p
  double study_cost = 0.0;
  std::string description;
  std::vector<ChannelSpec> channels;

  std::vector<ObservationChannel> observation_channels() const;
  bool operator==(const Scenario&) const = default;
};

struct PopulationSpec {
  double annual_population = 2500.0;
  int horizon_years = 10;
  double discount_factor = 1.035;
  double total_discounted_population = 21519.0;

  bool operator==(const PopulationSpec&) const = default;
};

struct CaseStudyConfig {
  Constants constants;
  std::vector<PriorBlockSpec> prior;
  std::vector<Scenario> scenarios;
  PopulationSpec population;

  /// The built-in model inputs.
  static CaseStudyConfig defaults();
  const Scenario& scenario(int id) const;
  bool operator==(const CaseStudyConfig&) const = default;
};

CaseStudyConfig load_config(const std::filesystem::path& path);
void save_config(const CaseStudyConfig& config, const std::filesystem::path& path);

BlockPrior build_prior(const CaseStudyConfig& config);

/// Probability of the critical event under treatment 2 or 3 from the
/// treatment-1 probability and the odds ratio.
double event_probability(double p_e1, double odds_ratio);

/// f_d(theta) for treatment d in {1, 2, 3}. Throws std::out_of_range otherwise.
double case_net_benefit(int treatment, std::span<const double> theta, const Constants& constants = {});

/// Cost-effectiveness model with the information model of one scenario.
class CaseStudyModel final : public DecisionModel {
 public:
  CaseStudyModel(const CaseStudyConfig& config, int scenario_id);

  std::size_t decision_count() const override { return 3; }
  std::size_t parameter_count() const override { return kParamCount; }
  std::size_t observation_dim() const override { return channels_.size(); }

  void sample_prior(RandomSource& rng, std::span<double> theta) const override;
  void net_benefits(std::span<const double> theta, std::span<double> out) const override;
  void sample_observation(std::span<const double> theta, RandomSource& rng, std::span<double> y) const override;
  using DecisionModel::sample_observation;
  double log_likelihood(std::span<const double> y, std::span<const double> theta) const override;

  /// Calibrated on first use: the 1 - 1e-6 empirical quantile of |f_d| over
  /// 2^20 prior draws.
  double net_benefit_bound() const override;

  bool supports_importance_sampling() const override { return true; }
  std::unique_ptr<InnerSampler> importance_sampler(std::span<const double> y) const override;

  const Scenario& scenario() const { return scenario_; }
  const BlockPrior& prior() const { return plan_.prior(); }
  const std::vector<ObservationChannel>& channels() const { return channels_; }
  const ImportancePlan& importance_plan() const { return plan_; }

 private:
  Constants constants_;
  Scenario scenario_;
  std::vector<ObservationChannel> channels_;
  ImportancePlan plan_;
  mutable std::once_flag bound_once_;
  mutable double bound_ = 0.0;
};

/// Empirical quantile of |f_d| over n prior draws and all decisions.
double calibrate_net_benefit_bound(const DecisionModel& model, std::size_t n, double quantile,
                                   std::uint64_t seed);

double population_evsi(double per_person_evsi, const PopulationSpec& population);
double enbs(double population_evsi, double study_cost);
/// Sum over years t = first_year .. first_year + horizon - 1 of annual * factor^-t.
double discounted_population(const PopulationSpec& population, int first_year = 0);

}  // namespace evsi::case_study

#endif  // EVSI_CASE_STUDY_HPP
