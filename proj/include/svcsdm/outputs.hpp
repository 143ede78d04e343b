#pragma once

// Post-processing of posterior chains: convergence diagnostics, WAIC, holdout AUC,
// parameter summaries, trend categories and kriged prediction surfaces.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "svcsdm/data_model.hpp"
#include "svcsdm/mcmc.hpp"
#include "svcsdm/occupancy.hpp"

namespace svcsdm {

// ---------------------------------------------------------------------------
// Diagnostics

/// Split-chain potential scale reduction factor. Each chain is cut into halves of
/// floor(n/2) draws (a middle draw is dropped for odd n). Needs >= 2 chains of equal
/// length >= 4. Zero within-chain variance gives 1 when every value is identical and
/// +infinity otherwise.
double rhat(const std::vector<std::vector<double>>& chains);

/// Effective sample size of the pooled draws (Geyer initial monotone sequence on the
/// multi-chain autocorrelation estimate).
double ess(const std::vector<std::vector<double>>& chains);

struct WaicResult {
  double waic = 0.0;
  double elpd = 0.0;
  double p_waic = 0.0;
  double lppd = 0.0;
  int n_units = 0;
};

/// WAIC from a draws x units pointwise log-likelihood matrix. Variances use the
/// n - 1 denominator. Throws NumericError naming the unit on a non-finite entry.
WaicResult waic(const Eigen::MatrixXd& loglik, const std::vector<std::string>& unit_names = {});

/// Mann-Whitney AUC with ties counted one half; nullopt when a class is empty.
std::optional<double> auc(std::span<const double> scores, std::span<const int> labels);

/// Mean over draws of the AUC of each draw's scores (draws x units) against labels.
std::optional<double> holdout_auc(const Eigen::MatrixXd& score_draws, std::span<const int> labels);

/// Copy of `data` with every observation in season index `season` set missing, plus
/// the held-out units and their labels (detected at least once).
struct HoldoutSplit {
  DetectionData training;
  std::vector<UnitId> units;
  std::vector<int> labels;
};
HoldoutSplit mask_season(const DetectionData& data, int season);

/// Probability that a trend is positive, binned as
///   P > 0.8 strong positive, 0.6 < P <= 0.8 moderate positive, 0.4 < P <= 0.6 no effect,
///   0.2 <= P <= 0.4 moderate negative, P < 0.2 strong negative.
enum class TrendCategory { kStrongPositive, kModeratePositive, kNoEffect, kModerateNegative, kStrongNegative };
inline constexpr int kTrendCategoryCount = 5;

TrendCategory categorize_probability(double p_positive);
/// Category per column of a draws x sites matrix of trend draws.
std::vector<TrendCategory> categorize_trend(const Eigen::MatrixXd& draws);
std::string to_string(TrendCategory c);

/// Type-7 (linear interpolation) sample quantile.
double quantile(std::vector<double> values, double prob);

// ---------------------------------------------------------------------------
// Fitted model context

/// What is needed besides the draws to evaluate a fitted model anywhere: the spec,
/// the data sites, covariate transforms and the dimensions fixed at fit time.
struct FitContext {
  OccupancyModelSpec spec;
  SpatialCoordinates coords;
  std::map<std::string, Standardization> transforms;
  std::map<std::string, int> n_strata;  // per stratum label set
  int first_season = 1;
  int n_seasons = 1;
  int max_replicates = 1;
  int neighbors = 15;
};

FitContext make_fit_context(const OccupancyModelSpec& spec, const DetectionData& data,
                            const CovariateSet& covs, int neighbors);
nlohmann::json to_json(const FitContext& ctx);
FitContext fit_context_from_json(const nlohmann::json& j);

/// Turns rows of a chain back into parameter structs.
class DrawDecoder {
 public:
  DrawDecoder(const FitContext& ctx, const PosteriorChain& chain);

  const OccurrenceLayout& layout() const { return layout_; }
  /// Parameters of draw `d`. Surfaces are filled only when `with_surfaces` is set.
  OccurrenceParams occurrence(int d, bool with_surfaces = true) const;
  DetectionParams detection(int d) const;
  /// (sigma2, phi) of GP surface `r` at draw `d`, surfaces ordered w0 first then svc terms.
  SpatialParams spatial(int d, int r) const;
  const std::vector<std::string>& surface_names() const { return surface_names_; }
  int n_surfaces() const { return static_cast<int>(surface_names_.size()); }

 private:
  const PosteriorChain& chain_;
  OccurrenceLayout layout_;
  std::vector<std::string> surface_names_;
  std::vector<int> beta_cols_;
  std::vector<std::vector<int>> stratum_cols_;
  std::vector<int> alpha_cols_;
  std::vector<int> sigma2_cols_, phi_cols_;
  std::vector<int> eta_cols_;
  int sigma2_eta_col_ = -1, rho_col_ = -1;
  std::vector<int> surface_index_;  // decoder surface -> chain surface
};

/// Draws x sites matrix of d logit(psi) / dx at the data sites in season `season`.
Eigen::MatrixXd site_effect_draws(const FitContext& ctx, const std::vector<PosteriorChain>& chains,
                                  const CovariateSet& covs, const std::string& covariate, int season);

// ---------------------------------------------------------------------------
// Summaries

struct ParameterSummary {
  std::string name;
  double median = 0.0;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
  double rhat = 1.0;
  double ess = 0.0;
};

struct FitSummary {
  std::vector<ParameterSummary> parameters;
  WaicResult waic;
  int n_chains = 0;
  int pooled_draws = 0;
  /// Largest R-hat over the fixed occurrence and detection coefficients.
  double max_coefficient_rhat = 1.0;
  std::optional<double> holdout_auc;
};

/// True for the fixed-effect coefficient names ("beta[...]" and "alpha[...]").
bool is_top_level_coefficient(const std::string& name);

FitSummary summarize_fit(const std::vector<PosteriorChain>& chains);
void write_summary_csv(std::ostream& out, const FitSummary& summary);
nlohmann::json to_json(const FitSummary& summary);

/// WAIC of the pooled pointwise log-likelihoods of all chains.
WaicResult pooled_waic(const std::vector<PosteriorChain>& chains);

// ---------------------------------------------------------------------------
// Prediction

/// Prediction locations with raw covariate values (transformed with the fit's
/// transforms), optional stratum labels, and the season to predict for.
struct PredictionGrid {
  SpatialCoordinates cells;
  std::map<std::string, std::vector<double>> covariates;
  std::map<std::string, std::vector<int>> strata;
  int season = -1;  // season index; -1 means the last fitted season
};

/// Reads a grid CSV with columns cell_x, cell_y, any covariate / stratum columns and
/// an optional season column (a single value over all rows).
PredictionGrid read_prediction_grid(std::istream& in, const FitContext& ctx);

struct PredictionOptions {
  /// Draw kriged surface values from their predictive distribution; otherwise use
  /// the kriging mean.
  bool sample_surfaces = true;
  std::uint64_t seed = 1;
  /// Covariate whose effect is mapped; defaults to the first svc covariate, else the
  /// first main effect.
  std::string effect_covariate;
  int threads = 1;
};

struct PredictionSurface {
  SpatialCoordinates cells;
  std::string effect_covariate;
  Eigen::MatrixXd psi;     // draws x cells
  Eigen::MatrixXd effect;  // draws x cells, empty without an effect covariate
  Eigen::MatrixXd w1;      // draws x cells, empty without an svc term on the effect covariate

  /// One row per (cell, statistic): psi_median/mean/q025/q975, effect_median/q025/q975,
  /// p_effect_positive, w1_median.
  void write_long_csv(std::ostream& out) const;
};

PredictionSurface predict_surfaces(const FitContext& ctx, const std::vector<PosteriorChain>& chains,
                                   const PredictionGrid& grid, const PredictionOptions& options = {});

}  // namespace svcsdm
