#include "evsi/case_study.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace evsi::case_study {
using nlohmann::json;

namespace {

PriorBlockSpec gaussian_spec(std::string family, std::vector<std::string> params, std::vector<double> mean,
                             std::vector<std::vector<double>> cov) {
  return PriorBlockSpec{std::move(family), std::move(params), std::move(mean), std::move(cov)};
}

MvNormalParams to_mvn(const PriorBlockSpec& spec) {
  const auto k = static_cast<Eigen::Index>(spec.mean.size());
  if (spec.covariance.size() != spec.mean.size()) {
    throw std::invalid_argument("prior block '" + spec.family + "': covariance has the wrong shape");
  }
  Eigen::VectorXd mean(k);
  Eigen::MatrixXd cov(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    mean(i) = spec.mean[i];
    if (spec.covariance[i].size() != spec.mean.size()) {
      throw std::invalid_argument("prior block '" + spec.family + "': covariance has the wrong shape");
    }
    for (Eigen::Index j = 0; j < k; ++j) {
      cov(i, j) = spec.covariance[i][j];
    }
  }
  return MvNormalParams(std::move(mean), std::move(cov));
}

}  // namespace

// Found by ADL from nlohmann::adl_serializer, so they live in this namespace.
void to_json(json& j, const PriorBlockSpec& s) {
  j = json{{"family", s.family}, {"parameters", s.parameters}};
  if (s.family == "beta") {
    j["a"] = s.a;
    j["b"] = s.b;
  } else {
    j["mean"] = s.mean;
    j["covariance"] = s.covariance;
  }
}

void from_json(const json& j, PriorBlockSpec& s) {
  j.at("family").get_to(s.family);
  j.at("parameters").get_to(s.parameters);
  if (s.family == "beta") {
    j.at("a").get_to(s.a);
    j.at("b").get_to(s.b);
  } else {
    j.at("mean").get_to(s.mean);
    j.at("covariance").get_to(s.covariance);
  }
}

void to_json(json& j, const ChannelSpec& s) {
  j = json{{"type", s.type}, {"parameter", s.parameter}};
  if (s.type != "binomial") {
    j["variance_scale"] = s.variance_scale;
  }
}

void from_json(const json& j, ChannelSpec& s) {
  j.at("type").get_to(s.type);
  j.at("parameter").get_to(s.parameter);
  s.variance_scale = j.value("variance_scale", 0.0);
}

void to_json(json& j, const Scenario& s) {
  j = json{{"id", s.id},
           {"patients", s.patients},
           {"study_cost", s.study_cost},
           {"description", s.description},
           {"channels", s.channels}};
}

void from_json(const json& j, Scenario& s) {
  j.at("id").get_to(s.id);
  j.at("patients").get_to(s.patients);
  j.at("study_cost").get_to(s.study_cost);
  s.description = j.value("description", "");
  j.at("channels").get_to(s.channels);
}

const ParameterRegistry& registry() {
  static const ParameterRegistry reg({"L", "Q_E", "Q_SE", "C_E", "C_SE", "C_T2", "C_T3", "P_E1", "OR_E2", "OR_E3",
                                      "P_SE2", "P_SE3"});
  return reg;
}

std::vector<ObservationChannel> Scenario::observation_channels() const {
  if (patients < 1) {
    throw std::invalid_argument("scenario needs at least one patient");
  }
  std::vector<ObservationChannel> out;
  for (const auto& c : channels) {
    const std::size_t p = registry().index(c.parameter);
    const double variance = c.variance_scale / patients;
    if (c.type == "normal") {
      out.push_back(ObservationChannel::normal(p, variance));
    } else if (c.type == "normal-on-log") {
      out.push_back(ObservationChannel::normal_on_log(p, variance));
    } else if (c.type == "binomial") {
      out.push_back(ObservationChannel::binomial(p, patients));
    } else {
      throw std::invalid_argument("unknown channel type: " + c.type);
    }
  }
  return out;
}

CaseStudyConfig CaseStudyConfig::defaults() {
  CaseStudyConfig c;
  c.prior = {
      gaussian_spec("normal", {"L"}, {30.0}, {{25.0}}),
      gaussian_spec("logit-normal", {"Q_E"}, {0.6}, {{1.0 / 36.0}}),
      gaussian_spec("normal", {"Q_SE"}, {0.7}, {{0.01}}),
      gaussian_spec("normal", {"C_E"}, {2e5}, {{1e8}}),
      gaussian_spec("normal", {"C_SE"}, {1e5}, {{1e8}}),
      gaussian_spec("normal", {"C_T2", "C_T3"}, {1.5e4, 2e4}, {{300.0, 100.0}, {100.0, 500.0}}),
      PriorBlockSpec{"beta", {"P_E1"}, {}, {}, 15.0, 85.0},
      gaussian_spec("log-normal", {"OR_E2", "OR_E3"}, {-1.5, -1.75}, {{0.11, 0.02}, {0.02, 0.06}}),
      gaussian_spec("logit-normal", {"P_SE2", "P_SE3"}, {-1.4, -1.1}, {{0.10, 0.05}, {0.05, 0.25}}),
  };
  c.scenarios = {
      Scenario{1,
               100,
               75000.0,
               "observational study of side effects on treatment 2",
               {{"normal", "Q_SE", 4.0}, {"normal", "C_SE", 1e4}, {"binomial", "P_SE2", 0.0}}},
      Scenario{2,
               100,
               400000.0,
               "small two-arm RCT of treatments 1 and 3",
               {{"normal-on-log", "OR_E3", 4.0}, {"normal", "C_T3", 1e4}, {"binomial", "P_SE3", 0.0}}},
      Scenario{3,
               1000,
               4200000.0,
               "multicentre two-arm RCT of treatments 1 and 3",
               {{"binomial", "P_E1", 0.0},
                {"normal-on-log", "OR_E3", 4.0},
                {"normal", "C_T3", 1e4},
                {"binomial", "P_SE3", 0.0},
                {"normal", "C_SE", 1e4},
                {"normal", "C_E", 1e4}}},
  };
  return c;
}

const Scenario& CaseStudyConfig::scenario(int id) const {
  const auto it = std::find_if(scenarios.begin(), scenarios.end(), [id](const Scenario& s) { return s.id == id; });
  if (it == scenarios.end()) {
    throw std::invalid_argument("unknown scenario id " + std::to_string(id));
  }
  return *it;
}

CaseStudyConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open model config " + path.string());
  }
  json j;
  try {
    in >> j;
    CaseStudyConfig c;
    const auto& k = j.at("constants");
    c.constants = {k.at("C_T1").get<double>(), k.at("P_SE1").get<double>(), k.at("lambda").get<double>()};
    j.at("prior").get_to(c.prior);
    j.at("scenarios").get_to(c.scenarios);
    const auto& p = j.at("population");
    c.population = {p.at("annual_population").get<double>(), p.at("horizon_years").get<int>(),
                    p.at("discount_factor").get<double>(), p.at("total_discounted_population").get<double>()};
    return c;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed model config " + path.string() + ": " + e.what());
  }
}

void save_config(const CaseStudyConfig& c, const std::filesystem::path& path) {
  json j;
  j["constants"] = {{"C_T1", c.constants.cost_treatment1},
                    {"P_SE1", c.constants.side_effect_prob1},
                    {"lambda", c.constants.qaly_value}};
  j["parameters"] = registry().names();
  j["prior"] = c.prior;
  j["scenarios"] = c.scenarios;
  j["population"] = {{"annual_population", c.population.annual_population},
                     {"horizon_years", c.population.horizon_years},
                     {"discount_factor", c.population.discount_factor},
                     {"total_discounted_population", c.population.total_discounted_population}};
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write model config " + path.string());
  }
  out << j.dump(2) << '\n';
}

BlockPrior build_prior(const CaseStudyConfig& config) {
  std::vector<PriorBlock> blocks;
  for (const auto& spec : config.prior) {
    std::vector<std::size_t> idx;
    for (const auto& name : spec.parameters) {
      idx.push_back(registry().index(name));
    }
    if (spec.family == "normal") {
      blocks.push_back(PriorBlock::normal(std::move(idx), to_mvn(spec)));
    } else if (spec.family == "log-normal") {
      blocks.push_back(PriorBlock::lognormal(std::move(idx), to_mvn(spec)));
    } else if (spec.family == "logit-normal") {
      blocks.push_back(PriorBlock::logitnormal(std::move(idx), to_mvn(spec)));
    } else if (spec.family == "beta") {
      if (idx.size() != 1) {
        throw std::invalid_argument("beta prior blocks are univariate");
      }
      blocks.push_back(PriorBlock::beta(idx[0], spec.a, spec.b));
    } else {
      throw std::invalid_argument("unknown prior family: " + spec.family);
    }
  }
  return BlockPrior(kParamCount, std::move(blocks));
}

double event_probability(double p_e1, double odds_ratio) {
  const double odds = odds_ratio * p_e1 / (1.0 - p_e1);
  return odds / (1.0 + odds);
}

namespace {

double net_benefit_terms(double p_se, double p_e, double cost_treatment, std::span<const double> t, double lambda) {
  const double life = t[L];
  const double event_life = life * (1.0 + t[Q_E]) / 2.0;
  return p_se * p_e * (lambda * (event_life - t[Q_SE]) - (t[C_SE] + t[C_E])) +
         p_se * (1.0 - p_e) * (lambda * (life - t[Q_SE]) - t[C_SE]) +
         (1.0 - p_se) * p_e * (lambda * event_life - t[C_E]) + (1.0 - p_se) * (1.0 - p_e) * lambda * life -
         cost_treatment;
}

}  // namespace

double case_net_benefit(int treatment, std::span<const double> t, const Constants& k) {
  switch (treatment) {
    case 1:
      return net_benefit_terms(k.side_effect_prob1, t[P_E1], k.cost_treatment1, t, k.qaly_value);
    case 2:
      return net_benefit_terms(t[P_SE2], event_probability(t[P_E1], t[OR_E2]), t[C_T2], t, k.qaly_value);
    case 3:
      return net_benefit_terms(t[P_SE3], event_probability(t[P_E1], t[OR_E3]), t[C_T3], t, k.qaly_value);
    default:
      throw std::out_of_range("treatment must be 1, 2 or 3");
  }
}

CaseStudyModel::CaseStudyModel(const CaseStudyConfig& config, int scenario_id)
    : constants_(config.constants),
      scenario_(config.scenario(scenario_id)),
      channels_(scenario_.observation_channels()),
      plan_(build_prior(config), channels_) {}

void CaseStudyModel::sample_prior(RandomSource& rng, std::span<double> theta) const { prior().sample(rng, theta); }

void CaseStudyModel::net_benefits(std::span<const double> theta, std::span<double> out) const {
  for (int d = 0; d < 3; ++d) {
    out[d] = case_net_benefit(d + 1, theta, constants_);
  }
}

void CaseStudyModel::sample_observation(std::span<const double> theta, RandomSource& rng,
                                        std::span<double> y) const {
  for (std::size_t c = 0; c < channels_.size(); ++c) {
    y[c] = channels_[c].sample(theta, rng);
  }
}

double CaseStudyModel::log_likelihood(std::span<const double> y, std::span<const double> theta) const {
  if (theta.size() != kParamCount) {
    throw std::invalid_argument("theta has the wrong dimension");
  }
  return channels_log_likelihood(channels_, y, theta);
}

double CaseStudyModel::net_benefit_bound() const {
  std::call_once(bound_once_, [this] { bound_ = calibrate_net_benefit_bound(*this, 1u << 20, 1.0 - 1e-6, 0); });
  return bound_;
}

std::unique_ptr<InnerSampler> CaseStudyModel::importance_sampler(std::span<const double> y) const {
  return plan_.build(y);
}

double calibrate_net_benefit_bound(const DecisionModel& model, std::size_t n, double quantile,
                                   std::uint64_t seed) {
  RandomSource rng(seed, stream_key(0xf3a7, 0));
  const std::size_t nd = model.decision_count();
  std::vector<double> theta(model.parameter_count());
  std::vector<double> f(nd);
  std::vector<double> magnitudes;
  magnitudes.reserve(n * nd);
  for (std::size_t i = 0; i < n; ++i) {
    model.sample_prior(rng, theta);
    model.net_benefits(theta, f);
    for (const double v : f) {
      magnitudes.push_back(std::abs(v));
    }
  }
  const auto rank = std::min(magnitudes.size() - 1,
                             static_cast<std::size_t>(std::ceil(quantile * static_cast<double>(magnitudes.size()))));
  std::nth_element(magnitudes.begin(), magnitudes.begin() + static_cast<std::ptrdiff_t>(rank), magnitudes.end());
  return magnitudes[rank];
}

double population_evsi(double per_person_evsi, const PopulationSpec& population) {
  return per_person_evsi * population.total_discounted_population;
}

double enbs(double population_evsi, double study_cost) { return population_evsi - study_cost; }

double discounted_population(const PopulationSpec& population, int first_year) {
  double total = 0.0;
  for (int t = first_year; t < first_year + population.horizon_years; ++t) {
    total += population.annual_population * std::pow(population.discount_factor, -t);
  }
  return total;
}

}  // namespace evsi::case_study
