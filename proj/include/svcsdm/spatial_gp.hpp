#pragma once

// Exponential-correlation Gaussian processes and their nearest-neighbour (NNGP)
// sparse approximation.

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "svcsdm/data_model.hpp"
#include "svcsdm/rng.hpp"

namespace svcsdm {

struct SpatialParams {
  double sigma2 = 1.0;
  double phi = 1.0;
};

/// exp(-phi * d). Throws std::invalid_argument for d < 0 or phi <= 0.
double exp_correlation(double distance, double phi);

/// NNGP ordering: ascending easting + northing, ties by site identifier.
std::vector<int> nngp_ordering(const SpatialCoordinates& coords);

/// Parameter-free part of an NNGP: ordering, neighbour sets and the distances the
/// conditional weights are computed from. Shared by every surface on the same sites.
struct NeighborGraph {
  int n_sites = 0;
  int m = 0;
  std::vector<int> ordering;  // ordering[pos] = site
  std::vector<int> position;  // position[site] = pos
  /// Neighbour site indices per site, all earlier in the ordering.
  std::vector<std::vector<int>> neighbors;
  /// Per site: distances to each neighbour, and the neighbour-neighbour distance matrix.
  std::vector<Eigen::VectorXd> site_to_neighbor;
  std::vector<Eigen::MatrixXd> neighbor_to_neighbor;
  /// children[s] = (site c, slot) pairs with neighbors[c][slot] == s.
  std::vector<std::vector<std::pair<int, int>>> children;
};

NeighborGraph build_neighbor_graph(const SpatialCoordinates& coords, int m);

/// NNGP for one set of spatial parameters: w_s | w_N(s) ~ N(b_s' w_N(s), f_s).
struct NNGPStructure {
  const NeighborGraph* graph = nullptr;
  SpatialParams params;
  std::vector<Eigen::VectorXd> weights;  // b_s, one entry per neighbour
  std::vector<double> cond_var;          // f_s

  int n_sites() const { return graph ? graph->n_sites : 0; }
};

/// Conditional weights and variances for `params` on a prebuilt graph. The graph
/// must outlive the returned structure. Throws NumericError if a neighbour
/// covariance is not positive definite.
NNGPStructure build_nngp(const NeighborGraph& graph, SpatialParams params);

/// Owns its graph; convenient when only one parameter set is needed.
struct OwnedNNGP {
  NeighborGraph graph;
  NNGPStructure nngp;
};
OwnedNNGP build_nngp(const SpatialCoordinates& coords, int m, SpatialParams params);

double nngp_log_density(std::span<const double> w, const NNGPStructure& nngp);

/// sum_s (w_s - b_s' w_N(s))^2 / f_s with f evaluated at sigma2 = 1; the sigma2 update's
/// sufficient statistic.
double nngp_unit_quadratic_form(std::span<const double> w, const NNGPStructure& nngp);

/// Sequential conditional draw in NNGP order.
std::vector<double> nngp_simulate(const NNGPStructure& nngp, Rng& rng);

struct KrigingResult {
  double mean = 0.0;
  double variance = 0.0;
};

/// Predictive conditional of the surface at `target` given the values at the m
/// nearest observed sites. A target at distance zero from an observed site returns
/// that site's value with variance 0.
KrigingResult krige_point(double easting, double northing, std::span<const double> observed,
                          const SpatialCoordinates& coords, int m, SpatialParams params);

std::vector<KrigingResult> krige_predict(const SpatialCoordinates& targets,
                                         std::span<const double> observed,
                                         const SpatialCoordinates& coords, int m,
                                         SpatialParams params);

/// Precomputed neighbour sets for repeated kriging to fixed targets (one per draw).
struct KrigingPlan {
  struct Target {
    int exact_site = -1;  // >= 0 when the target coincides with an observed site
    std::vector<int> neighbors;
    Eigen::VectorXd target_to_neighbor;
    Eigen::MatrixXd neighbor_to_neighbor;
  };
  std::vector<Target> targets;
};

KrigingPlan plan_kriging(const SpatialCoordinates& targets, const SpatialCoordinates& coords, int m);
KrigingResult krige_with_plan(const KrigingPlan::Target& target, std::span<const double> observed,
                              SpatialParams params);

// Dense reference implementation.

Eigen::MatrixXd dense_covariance(const SpatialCoordinates& coords, SpatialParams params);
double dense_log_density(std::span<const double> w, const SpatialCoordinates& coords,
                         SpatialParams params);

}  // namespace svcsdm
