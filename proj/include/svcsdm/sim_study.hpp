#pragma once

// Simulated species-environment scenarios on a regular grid and the experiment that
// fits the five functional forms to each of them.

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "svcsdm/data_model.hpp"
#include "svcsdm/outputs.hpp"

namespace svcsdm {

enum class Scenario { kLinear, kQuadratic, kStratum, kInteraction, kMissingInteraction, kFull };
inline constexpr int kScenarioCount = 6;

const std::vector<std::string>& scenario_names();
std::string to_string(Scenario s);
std::optional<Scenario> parse_scenario(const std::string& name);

/// The five fitted forms. kSvc is the spatially-varying coefficient model.
enum class ModelForm { kLinear, kQuadratic, kStratum, kInteraction, kSvc };
inline constexpr int kModelFormCount = 5;

const std::vector<std::string>& model_form_names();
std::string to_string(ModelForm m);
std::optional<ModelForm> parse_model_form(const std::string& name);

/// Covariate and stratum names used by generated data.
inline constexpr const char* kSimCovariate = "x";
inline constexpr const char* kSimModifier = "xstar";
inline constexpr const char* kSimStrata = "block";

/// Model specification of a form fitted to generated data (no spatial intercept,
/// intercept-only detection).
OccupancyModelSpec model_spec(ModelForm form);

struct TrueCoefficients {
  double beta0 = 0.0;
  double beta1 = 0.75;
  double beta_quadratic = -0.5;
  /// Frozen draws from N(0, 0.5^2), one per 3 x 3 block in row-major block order.
  std::array<double, 9> stratum_dev{-0.7652, 0.287, 0.5294, -0.6563, 0.4467, -0.3504, -0.1686, -0.1008, 0.0191};
  double beta_interaction = 0.5;
  double hidden_sigma2 = 1.0;
  /// Effective range of the hidden surface as a fraction of the grid diagonal.
  double hidden_range_fraction = 0.5;
  double detection_prob = 0.62;
};

enum class StudyProfile { kDesk, kPaper };

struct ScenarioConfig {
  Scenario scenario = Scenario::kLinear;
  int grid_rows = 20;
  int grid_cols = 20;
  int replicates = 10;
  int visits = 5;  // replicate surveys per site
  TrueCoefficients truth;
  std::uint64_t seed = 1;

  int n_sites() const { return grid_rows * grid_cols; }
  std::vector<std::string> problems() const;
};

/// Preset for a scenario: 10 data sets per scenario on the desk profile, 50 on the paper profile.
ScenarioConfig scenario_preset(Scenario scenario, StudyProfile profile, std::uint64_t seed);

/// Component names in the order effect contributions are summed for the full scenario.
inline constexpr std::array<const char*, 5> kComponentNames{"linear", "quadratic", "stratum", "interaction",
                                                             "missing"};

struct ScenarioTruth {
  std::vector<double> effect;  // d logit(psi) / dx per site
  /// Per-site effect contribution of each component, kComponentNames order.
  std::array<std::vector<double>, 5> components;
  std::vector<double> logit_psi;
  std::vector<double> psi;
  std::vector<int> z;
  std::vector<double> hidden;  // unknown interacting surface
};

struct ScenarioData {
  Scenario scenario = Scenario::kLinear;
  DetectionData data;
  CovariateSet covariates;
  ScenarioTruth truth;
};

/// Data set `replicate` of a scenario. Deterministic in (config, replicate).
ScenarioData generate_scenario(const ScenarioConfig& config, int replicate);

/// Per-site truth table: site_id, easting, northing, x, xstar, block, hidden, the five
/// components, effect, psi, z.
void write_truth_csv(std::ostream& out, const ScenarioData& sim);

/// Schema that reads generated data back without re-standardising it.
CsvSchema simulation_schema();

struct ExperimentCell {
  Scenario scenario = Scenario::kLinear;
  int replicate = 0;
  ModelForm model = ModelForm::kLinear;
  WaicResult waic;
  double effect_rmse = 0.0;
  double effect_coverage = 0.0;  // fraction of sites whose 95% interval covers the true effect
  double beta1_median = 0.0;
  double beta1_q025 = 0.0;
  double beta1_q975 = 0.0;
  bool beta1_covered = false;
  double max_rhat = 1.0;
  bool converged = true;  // max coefficient R-hat <= 1.1
  double w1_spatial_sd = kNaN;  // sd over sites of the posterior median w1 (svc only)
  std::vector<double> effect_median;  // per site
};

struct ModelAggregate {
  Scenario scenario = Scenario::kLinear;
  ModelForm model = ModelForm::kLinear;
  double mean_waic = 0.0;
  double mean_rank = 0.0;  // 1 = lowest WAIC
  double mean_effect_rmse = 0.0;
  int beta1_covered = 0;
  int nonconverged = 0;
  int replicates = 0;
};

struct ExperimentResult {
  std::vector<ExperimentCell> cells;  // ordered by (scenario, replicate, model)
  std::vector<ModelAggregate> aggregates;

  const ExperimentCell& cell(Scenario s, int replicate, ModelForm m) const;
  const ModelAggregate& aggregate(Scenario s, ModelForm m) const;
  void write_csv(std::ostream& out) const;
  void write_aggregate_csv(std::ostream& out) const;
};

struct ExperimentOptions {
  MCMCConfig mcmc;
  std::vector<ModelForm> models{ModelForm::kLinear, ModelForm::kQuadratic, ModelForm::kStratum,
                                ModelForm::kInteraction, ModelForm::kSvc};
  int threads = 1;
  /// Called after each finished cell (from the worker that ran it, under a lock).
  std::function<void(const ExperimentCell&)> on_cell;
};

/// Fits one model to one generated data set and scores it against the truth.
ExperimentCell run_cell(const ScenarioConfig& config, int replicate, ModelForm model, const MCMCConfig& mcmc);

ExperimentResult run_experiment(const std::vector<ScenarioConfig>& configs, const ExperimentOptions& options);

/// Long CSV (cell_x, cell_y, statistic, value) with the true effect and every model's
/// posterior median effect for one (scenario, replicate).
void write_effect_surfaces_csv(std::ostream& out, const ScenarioData& sim, const ExperimentResult& result,
                               int replicate);

}  // namespace svcsdm
