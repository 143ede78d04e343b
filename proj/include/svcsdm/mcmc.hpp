#pragma once

// Gibbs sampler for occupancy models with NNGP spatial surfaces.
//
// Logit links are handled with Polya-Gamma augmentation, so coefficients, surfaces
// and season effects all have Gaussian full conditionals. Spatial decay and the
// AR(1) correlation are updated by random-walk Metropolis. One sweep runs, in
// order: z, omega, detection block, occurrence block, w0, each w1, spatial
// parameters, AR(1).

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "svcsdm/data_model.hpp"
#include "svcsdm/occupancy.hpp"
#include "svcsdm/rng.hpp"
#include "svcsdm/spatial_gp.hpp"

namespace svcsdm {

inline constexpr const char* kSoftwareVersion = "0.1.0";

/// (site, season) pair, both zero-based.
struct UnitId {
  int site = 0;
  int season = 0;
  bool operator==(const UnitId&) const = default;
};

/// Thinned post-burn-in draws of one chain.
struct PosteriorChain {
  std::vector<std::string> param_names;
  Eigen::MatrixXd draws;  // draws x scalar parameters
  std::vector<std::string> surface_names;
  std::vector<Eigen::MatrixXd> surfaces;  // per surface: draws x sites
  std::vector<UnitId> loglik_units;
  Eigen::MatrixXd loglik;  // draws x units, z summed out
  std::vector<UnitId> psi_units;
  Eigen::MatrixXd psi;  // draws x psi_units

  // Provenance.
  int chain_index = 0;
  std::uint64_t seed = 0;
  MCMCConfig config;
  nlohmann::json spec;
  std::string software_version = kSoftwareVersion;

  int n_draws() const { return static_cast<int>(draws.rows()); }
  int param_index(const std::string& name) const;
  Eigen::VectorXd column(const std::string& name) const;
  const Eigen::MatrixXd* surface(const std::string& name) const;
};

struct SamplerOptions {
  /// Units whose occurrence probability is recorded per draw (e.g. holdout units).
  std::vector<UnitId> psi_units;
  bool record_surfaces = true;
};

/// Mutable sampler state. Surface r of `spatial` governs w0 when the spec has a spatial
/// intercept (r = 0) and the svc surfaces after it.
struct ChainState {
  OccurrenceParams occ;
  DetectionParams det;
  std::vector<double> tau2;        // per stratum term
  std::vector<std::int8_t> z;      // per occurrence unit
  std::vector<double> omega_occ;   // per sampled unit
  std::vector<double> omega_det;   // per observation (meaningful where z = 1)
  std::vector<SpatialParams> spatial;
  long iteration = 0;
};

class OccupancySampler {
 public:
  OccupancySampler(const DetectionData& data, const CovariateSet& covs, const OccupancyModelSpec& spec,
                   const MCMCConfig& config, std::uint64_t seed, SamplerOptions options = {});

  ChainState& state() { return state_; }
  const ChainState& state() const { return state_; }
  Rng& rng() { return rng_; }

  // Individual full-conditional updates; sweep() runs them in the fixed order.
  void update_z();
  void update_omega();
  void update_detection();
  void update_occurrence();
  void update_gp_surface(int surface);
  void update_spatial_params(int surface);
  void update_sigma2(int surface);
  void update_phi(int surface);
  void update_ar1();
  void update_eta();
  void update_ar1_params();
  void sweep();

  /// Runs config.n_iterations sweeps from the current state and returns the thinned draws.
  PosteriorChain run();

  // Introspection.
  int n_units() const { return static_cast<int>(units_.size()); }
  int n_sampled() const { return static_cast<int>(sampled_.size()); }
  int n_obs() const { return static_cast<int>(obs_.size()); }
  int n_surfaces() const { return static_cast<int>(surfaces_.size()); }
  const std::vector<UnitId>& units() const { return units_; }
  /// Index of (site, season) among the occurrence units, or -1.
  int unit_index(UnitId u) const;
  double psi_logit(int unit) const;
  double det_logit(int obs) const;
  const NNGPStructure& surface_nngp(int surface) const { return surfaces_[surface].unit_nngp; }
  const std::vector<std::string>& scalar_names() const { return names_; }
  UniformPrior phi_prior(int surface) const { return surfaces_[surface].phi_prior; }
  /// Current surface values.
  std::vector<double>& surface_values(int surface);
  /// Covariate weight of surface `surface` at unit `unit` (1 for the spatial intercept).
  double surface_weight(int surface, int unit) const;

 private:
  struct Obs {
    int unit;
    int replicate;
    std::int8_t y;
  };
  struct Surface {
    std::string name;
    int svc_term = -1;               // -1 for the spatial intercept
    std::vector<double> unit_weight;  // per occurrence unit
    NNGPStructure unit_nngp;          // built with sigma2 = 1
    UniformPrior phi_prior;
  };

  void build_design();
  void init_state();
  Eigen::VectorXd occurrence_fixed_part() const;
  Eigen::VectorXd other_than_fixed() const;
  std::vector<double> all_psi_logits() const;
  Eigen::VectorXd all_det_logits() const;
  double surface_log_density(const NNGPStructure& unit, const std::vector<double>& w, double sigma2) const;
  void scalar_snapshot(std::vector<double>& out) const;
  void check_finite() const;

  const DetectionData& data_;
  const CovariateSet& covs_;
  OccupancyModelSpec spec_;
  MCMCConfig config_;
  std::uint64_t seed_;
  SamplerOptions options_;
  Rng rng_;

  OccurrenceLayout occ_layout_;
  DetectionLayout det_layout_;
  NeighborGraph graph_;
  std::vector<Surface> surfaces_;

  std::vector<UnitId> units_;
  std::vector<int> unit_lookup_;  // site * T + season -> unit or -1
  std::vector<int> sampled_;      // unit indices with >= 1 observation
  std::vector<int> sampled_pos_;  // unit -> position in sampled_ or -1
  std::vector<bool> detected_;
  std::vector<std::pair<int, int>> unit_obs_;  // [begin, end) into obs_
  std::vector<Obs> obs_;

  Eigen::MatrixXd occ_design_;  // units x (fixed coefficients + stratum deviations)
  std::vector<int> strat_offset_;  // first column per stratum term
  std::vector<int> n_strata_;
  Eigen::MatrixXd det_design_;  // obs x detection coefficients
  Eigen::VectorXd beta_prior_mean_, beta_prior_var_;
  Eigen::VectorXd alpha_prior_mean_, alpha_prior_var_;

  std::vector<std::string> names_;
  ChainState state_;
};

/// Runs one chain with the given seed.
PosteriorChain run_chain(const DetectionData& data, const CovariateSet& covs, const OccupancyModelSpec& spec,
                         const MCMCConfig& config, std::uint64_t chain_seed, SamplerOptions options = {});

/// Runs config.n_chains chains on up to `threads` workers. Chain c uses
/// stream_seed(config.seed, c); the result does not depend on `threads`.
std::vector<PosteriorChain> run_chains(const DetectionData& data, const CovariateSet& covs,
                                       const OccupancyModelSpec& spec, const MCMCConfig& config,
                                       const SamplerOptions& options = {}, int threads = 1);

// Columnar CSV: one column per scalar parameter followed by surface blocks
// named "<surface>[<site id>]".
void write_posterior_csv(std::ostream& out, const PosteriorChain& chain, const std::vector<std::string>& site_ids);
/// Reads back a posterior CSV. Surface columns are recognised by the `surface_names` prefixes.
PosteriorChain read_posterior_csv(std::istream& in, const std::vector<std::string>& surface_names,
                                  int n_sites);
void write_matrix_csv(std::ostream& out, const Eigen::MatrixXd& m, const std::vector<std::string>& header);
Eigen::MatrixXd read_matrix_csv(std::istream& in, std::vector<std::string>* header = nullptr);
nlohmann::json provenance_json(const PosteriorChain& chain);

}  // namespace svcsdm
