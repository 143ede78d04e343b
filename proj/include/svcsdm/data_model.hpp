#pragma once

// Observation, covariate and configuration types plus the long-CSV and JSON
// formats they are read from and written to.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace svcsdm {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct SpatialCoordinates {
  std::vector<std::string> site_ids;
  std::vector<double> easting;
  std::vector<double> northing;

  std::size_t size() const { return site_ids.size(); }
  double distance(std::size_t a, std::size_t b) const {
    return std::hypot(easting[a] - easting[b], northing[a] - northing[b]);
  }
};

/// Smallest and largest distance between distinct sites. Both zero for a single site.
std::pair<double, double> distance_range(const SpatialCoordinates& coords);

/// Detection/nondetection array over sites x seasons x replicates.
///
/// Seasons are the contiguous integer range [first_season, first_season + n_seasons);
/// replicate k is stored at index k-1. Entries are 0, 1 or kMissingObs.
struct DetectionData {
  static constexpr std::int8_t kMissingObs = -1;

  SpatialCoordinates coords;
  int first_season = 1;
  int n_seasons = 0;
  int max_replicates = 0;
  std::vector<std::int8_t> y;

  int n_sites() const { return static_cast<int>(coords.size()); }
  std::size_t index(int site, int season, int rep) const {
    return (static_cast<std::size_t>(site) * n_seasons + season) * max_replicates + rep;
  }
  std::int8_t at(int site, int season, int rep) const { return y[index(site, season, rep)]; }
  std::int8_t& at(int site, int season, int rep) { return y[index(site, season, rep)]; }

  /// At least one non-missing replicate at (site, season).
  bool sampled(int site, int season) const;
  bool detected(int site, int season) const;
  /// Seasons with at least one non-missing replicate, per site.
  std::vector<std::vector<int>> seasons_sampled() const;
};

/// Affine transform applied at ingest: stored = (raw - mean) / sd.
struct Standardization {
  double mean = 0.0;
  double sd = 1.0;
  double apply(double raw) const { return (raw - mean) / sd; }
};

/// Covariate at site-season resolution (n_sites * n_seasons, NaN = missing).
struct SiteSeasonCovariate {
  std::string name;
  std::vector<double> raw;
  std::vector<double> values;
  Standardization transform;
};

/// Covariate at site-season-replicate resolution, indexed like DetectionData::y.
struct ReplicateCovariate {
  std::string name;
  std::vector<double> raw;
  std::vector<double> values;
  Standardization transform;
};

/// Stratum labels 1..n_strata, one per site.
struct StratumLabels {
  std::string name;
  std::vector<int> labels;
  int n_strata = 0;
};

struct CovariateSet {
  int n_sites = 0;
  int n_seasons = 0;
  int max_replicates = 0;
  std::vector<SiteSeasonCovariate> occurrence;
  std::vector<ReplicateCovariate> detection;
  std::vector<StratumLabels> strata;

  const SiteSeasonCovariate* find_occurrence(const std::string& name) const;
  const ReplicateCovariate* find_detection(const std::string& name) const;
  const StratumLabels* find_strata(const std::string& name) const;

  /// Standardised occurrence covariate value (throws std::out_of_range for unknown names).
  double occ(const std::string& name, int site, int season) const;
  double det(const std::string& name, int site, int season, int rep) const;
  int stratum(const std::string& name, int site) const;

  /// Recompute `values` from `raw`, fitting a fresh transform when `standardize` is set.
  void restandardize(bool standardize);
};

// ---------------------------------------------------------------------------
// Model specification

enum class OccurrenceTermKind { kIntercept, kLinear, kQuadratic, kStratum, kInteraction, kSvc };
enum class DetectionTermKind { kIntercept, kLinear, kQuadratic, kReplicateIntercept };
enum class YearEffect { kNone, kAr1 };

/// One occurrence term. `modifier` holds the stratum label set for kStratum and the
/// interacting covariate for kInteraction.
struct OccurrenceTerm {
  OccurrenceTermKind kind = OccurrenceTermKind::kIntercept;
  std::string covariate;
  std::string modifier;
  bool operator==(const OccurrenceTerm&) const = default;
};

struct DetectionTerm {
  DetectionTermKind kind = DetectionTermKind::kIntercept;
  std::string covariate;
  bool operator==(const DetectionTerm&) const = default;
};

struct NormalPrior {
  double mean = 0.0;
  double var = 2.72;
  bool operator==(const NormalPrior&) const = default;
};

struct InverseGammaPrior {
  double shape = 2.0;
  double scale = 1.0;
  bool operator==(const InverseGammaPrior&) const = default;
};

struct UniformPrior {
  double lower = 0.0;
  double upper = 1.0;
  bool operator==(const UniformPrior&) const = default;
};

struct PriorSpec {
  NormalPrior beta;
  NormalPrior alpha;
  /// Per-coefficient overrides keyed by coefficient name.
  std::map<std::string, NormalPrior> beta_overrides;
  std::map<std::string, NormalPrior> alpha_overrides;
  InverseGammaPrior sigma2;
  /// Unset means Uniform(3 / d_max, 3 / d_min) from the data's inter-site distances.
  std::optional<UniformPrior> phi;
  InverseGammaPrior sigma2_eta;
  UniformPrior rho{-1.0, 1.0};
  InverseGammaPrior tau2_stratum;
  bool operator==(const PriorSpec&) const = default;
};

struct OccupancyModelSpec {
  std::vector<OccurrenceTerm> occurrence;
  bool spatial_intercept = false;
  YearEffect year_effect = YearEffect::kNone;
  std::vector<DetectionTerm> detection;
  PriorSpec priors;

  bool has_svc() const;
  bool has_gp() const { return spatial_intercept || has_svc(); }
  bool operator==(const OccupancyModelSpec&) const = default;
};

/// Ordered names of the fixed occurrence coefficients: intercept, one main effect per
/// covariate (first-appearance order), then quadratic and interaction coefficients in
/// term order.
std::vector<std::string> occurrence_coefficient_names(const OccupancyModelSpec& spec);
/// Ordered names of the detection coefficients. Replicate intercepts take one name per
/// replicate, so `max_replicates` is needed.
std::vector<std::string> detection_coefficient_names(const OccupancyModelSpec& spec,
                                                     int max_replicates);

/// Phi support actually used for a fit: the explicit prior or the distance-based default.
UniformPrior resolve_phi_prior(const PriorSpec& priors, const SpatialCoordinates& coords);

struct MCMCConfig {
  int n_chains = 3;
  int n_iterations = 20000;
  int n_burn = 10000;
  int n_thin = 10;
  int neighbors = 15;
  std::uint64_t seed = 1;
  double phi_proposal_sd = 0.5;
  double rho_proposal_sd = 0.2;

  int draws_per_chain() const { return (n_iterations - n_burn) / n_thin; }
  int pooled_draws() const { return n_chains * draws_per_chain(); }
  std::vector<std::string> problems() const;
};

/// The MCMC run lengths used by the published case-study fits.
MCMCConfig paper_mcmc_profile();
/// Short run lengths for desk-scale experiments.
MCMCConfig desk_mcmc_profile();

/// Every violated invariant of `spec` against the data (empty when valid).
std::vector<std::string> validate_spec(const OccupancyModelSpec& spec, const DetectionData& data,
                                       const CovariateSet& covs, int neighbors);

// ---------------------------------------------------------------------------
// Files

/// Column mapping for the long CSV format. The six structural column names default
/// to site_id, easting, northing, season, replicate, y.
struct CsvSchema {
  std::string site_id = "site_id";
  std::string easting = "easting";
  std::string northing = "northing";
  std::string season = "season";
  std::string replicate = "replicate";
  std::string y = "y";
  std::vector<std::string> occurrence_covariates;
  std::vector<std::string> detection_covariates;
  std::vector<std::string> strata;
  bool standardize = true;
};

struct IngestedData {
  DetectionData data;
  CovariateSet covariates;
};

IngestedData ingest_long_csv(const std::filesystem::path& path, const CsvSchema& schema);
IngestedData parse_long_csv(std::istream& in, const CsvSchema& schema);
/// Writes raw (unstandardised) values; re-ingesting the output reproduces the input.
void write_long_csv(std::ostream& out, const DetectionData& data, const CovariateSet& covs,
                    const CsvSchema& schema);

nlohmann::json to_canonical_json(const DetectionData& data, const CovariateSet& covs);

nlohmann::json to_json(const OccupancyModelSpec& spec);
OccupancyModelSpec spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MCMCConfig& config);
MCMCConfig mcmc_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CsvSchema& schema);
CsvSchema schema_from_json(const nlohmann::json& j);

std::string to_string(OccurrenceTermKind kind);
std::string to_string(DetectionTermKind kind);

/// Shortest round-trip decimal representation ("NA" for NaN).
std::string format_double(double v);

}  // namespace svcsdm
