#include "svcsdm/spatial_gp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "svcsdm/errors.hpp"

namespace svcsdm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void check_params(SpatialParams p) {
  if (!(p.sigma2 > 0.0) || !(p.phi > 0.0) || !std::isfinite(p.sigma2) || !std::isfinite(p.phi))
    throw std::invalid_argument("spatial parameters must be positive and finite");
}

Eigen::MatrixXd correlation_of(const Eigen::MatrixXd& dist, double phi) {
  return (-phi * dist.array()).exp().matrix();
}

}  // namespace

double exp_correlation(double distance, double phi) {
  if (!(distance >= 0.0)) throw std::invalid_argument("distance must be >= 0");
  if (!(phi > 0.0)) throw std::invalid_argument("phi must be > 0");
  return std::exp(-phi * distance);
}

std::vector<int> nngp_ordering(const SpatialCoordinates& coords) {
  std::vector<int> order(coords.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const double sa = coords.easting[a] + coords.northing[a];
    const double sb = coords.easting[b] + coords.northing[b];
    if (sa != sb) return sa < sb;
    return coords.site_ids[a] < coords.site_ids[b];
  });
  return order;
}

NeighborGraph build_neighbor_graph(const SpatialCoordinates& coords, int m) {
  if (coords.size() == 0) throw std::invalid_argument("NNGP needs at least one site");
  if (m < 1) throw std::invalid_argument("neighbour count m must be >= 1");
  NeighborGraph g;
  g.n_sites = static_cast<int>(coords.size());
  g.m = m;
  g.ordering = nngp_ordering(coords);
  g.position.resize(g.n_sites);
  for (int p = 0; p < g.n_sites; ++p) g.position[g.ordering[p]] = p;
  g.neighbors.resize(g.n_sites);
  g.site_to_neighbor.resize(g.n_sites);
  g.neighbor_to_neighbor.resize(g.n_sites);
  g.children.resize(g.n_sites);

  std::vector<std::pair<double, int>> cand;  // (distance, position)
  for (int p = 1; p < g.n_sites; ++p) {
    const int s = g.ordering[p];
    cand.clear();
    for (int q = 0; q < p; ++q) cand.emplace_back(coords.distance(s, g.ordering[q]), q);
    const int n = std::min(m, p);
    std::partial_sort(cand.begin(), cand.begin() + n, cand.end());
    auto& nb = g.neighbors[s];
    for (int i = 0; i < n; ++i) nb.push_back(g.ordering[cand[i].second]);
    Eigen::VectorXd d(n);
    Eigen::MatrixXd dd(n, n);
    for (int i = 0; i < n; ++i) {
      d(i) = cand[i].first;
      for (int k = 0; k < n; ++k) dd(i, k) = coords.distance(nb[i], nb[k]);
    }
    g.site_to_neighbor[s] = std::move(d);
    g.neighbor_to_neighbor[s] = std::move(dd);
    for (int i = 0; i < n; ++i) g.children[nb[i]].emplace_back(s, i);
  }
  for (int s = 0; s < g.n_sites; ++s)
    if (g.neighbors[s].empty()) {
      g.site_to_neighbor[s] = Eigen::VectorXd(0);
      g.neighbor_to_neighbor[s] = Eigen::MatrixXd(0, 0);
    }
  return g;
}

NNGPStructure build_nngp(const NeighborGraph& graph, SpatialParams params) {
  check_params(params);
  NNGPStructure out;
  out.graph = &graph;
  out.params = params;
  out.weights.resize(graph.n_sites);
  out.cond_var.resize(graph.n_sites);
  for (int s = 0; s < graph.n_sites; ++s) {
    const auto n = static_cast<Eigen::Index>(graph.neighbors[s].size());
    if (n == 0) {
      out.weights[s] = Eigen::VectorXd(0);
      out.cond_var[s] = params.sigma2;
      continue;
    }
    const Eigen::MatrixXd R = correlation_of(graph.neighbor_to_neighbor[s], params.phi);
    const Eigen::VectorXd r = (-params.phi * graph.site_to_neighbor[s].array()).exp().matrix();
    Eigen::LLT<Eigen::MatrixXd> llt(R);
    if (llt.info() != Eigen::Success)
      throw NumericError("neighbour correlation matrix of site " + std::to_string(s) +
                         " is not positive definite");
    Eigen::VectorXd b = llt.solve(r);
    const double f = params.sigma2 * (1.0 - r.dot(b));
    if (!(f > 0.0) || !std::isfinite(f))
      throw NumericError("non-positive NNGP conditional variance at site " + std::to_string(s));
    out.weights[s] = std::move(b);
    out.cond_var[s] = f;
  }
  return out;
}

OwnedNNGP build_nngp(const SpatialCoordinates& coords, int m, SpatialParams params) {
  OwnedNNGP out;
  out.graph = build_neighbor_graph(coords, m);
  out.nngp = build_nngp(out.graph, params);
  return out;
}

namespace {

double conditional_mean(std::span<const double> w, const NNGPStructure& nngp, int s) {
  const auto& nb = nngp.graph->neighbors[s];
  const auto& b = nngp.weights[s];
  double mu = 0.0;
  for (std::size_t i = 0; i < nb.size(); ++i) mu += b(static_cast<Eigen::Index>(i)) * w[nb[i]];
  return mu;
}

void check_length(std::span<const double> w, const NNGPStructure& nngp) {
  if (static_cast<int>(w.size()) != nngp.n_sites())
    throw ContractError("surface length does not match the NNGP site count");
}

}  // namespace

double nngp_log_density(std::span<const double> w, const NNGPStructure& nngp) {
  check_length(w, nngp);
  double ll = 0.0;
  for (int s = 0; s < nngp.n_sites(); ++s) {
    const double e = w[s] - conditional_mean(w, nngp, s);
    const double f = nngp.cond_var[s];
    ll += -0.5 * (kLog2Pi + std::log(f) + e * e / f);
  }
  return ll;
}

double nngp_unit_quadratic_form(std::span<const double> w, const NNGPStructure& nngp) {
  check_length(w, nngp);
  double q = 0.0;
  for (int s = 0; s < nngp.n_sites(); ++s) {
    const double e = w[s] - conditional_mean(w, nngp, s);
    q += e * e / (nngp.cond_var[s] / nngp.params.sigma2);
  }
  return q;
}

std::vector<double> nngp_simulate(const NNGPStructure& nngp, Rng& rng) {
  std::vector<double> w(nngp.n_sites(), 0.0);
  for (int s : nngp.graph->ordering)
    w[s] = conditional_mean(w, nngp, s) + std::sqrt(nngp.cond_var[s]) * rng.normal();
  return w;
}

// ---------------------------------------------------------------------------
// Kriging

KrigingPlan plan_kriging(const SpatialCoordinates& targets, const SpatialCoordinates& coords, int m) {
  if (m < 1) throw std::invalid_argument("neighbour count m must be >= 1");
  const int J = static_cast<int>(coords.size());
  if (J < 1) throw std::invalid_argument("kriging needs observed sites");
  KrigingPlan plan;
  plan.targets.resize(targets.size());
  std::vector<std::pair<double, int>> cand(J);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    auto& tgt = plan.targets[i];
    for (int s = 0; s < J; ++s)
      cand[s] = {std::hypot(targets.easting[i] - coords.easting[s], targets.northing[i] - coords.northing[s]), s};
    const int n = std::min(m, J);
    std::partial_sort(cand.begin(), cand.begin() + n, cand.end());
    if (cand[0].first == 0.0) {
      tgt.exact_site = cand[0].second;
      continue;
    }
    tgt.target_to_neighbor.resize(n);
    tgt.neighbor_to_neighbor.resize(n, n);
    for (int a = 0; a < n; ++a) {
      tgt.neighbors.push_back(cand[a].second);
      tgt.target_to_neighbor(a) = cand[a].first;
    }
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b)
        tgt.neighbor_to_neighbor(a, b) = coords.distance(tgt.neighbors[a], tgt.neighbors[b]);
  }
  return plan;
}

KrigingResult krige_with_plan(const KrigingPlan::Target& target, std::span<const double> observed,
                              SpatialParams params) {
  check_params(params);
  if (target.exact_site >= 0) return {observed[target.exact_site], 0.0};
  const Eigen::MatrixXd R = correlation_of(target.neighbor_to_neighbor, params.phi);
  const Eigen::VectorXd r = (-params.phi * target.target_to_neighbor.array()).exp().matrix();
  Eigen::LLT<Eigen::MatrixXd> llt(R);
  if (llt.info() != Eigen::Success) throw NumericError("kriging neighbour correlation is not positive definite");
  const Eigen::VectorXd b = llt.solve(r);
  double mean = 0.0;
  for (std::size_t a = 0; a < target.neighbors.size(); ++a)
    mean += b(static_cast<Eigen::Index>(a)) * observed[target.neighbors[a]];
  const double var = std::max(0.0, params.sigma2 * (1.0 - r.dot(b)));
  return {mean, var};
}

KrigingResult krige_point(double easting, double northing, std::span<const double> observed,
                          const SpatialCoordinates& coords, int m, SpatialParams params) {
  SpatialCoordinates one;
  one.site_ids = {"target"};
  one.easting = {easting};
  one.northing = {northing};
  return krige_predict(one, observed, coords, m, params).front();
}

std::vector<KrigingResult> krige_predict(const SpatialCoordinates& targets,
                                         std::span<const double> observed,
                                         const SpatialCoordinates& coords, int m,
                                         SpatialParams params) {
  if (observed.size() != coords.size()) throw ContractError("observed surface length mismatch");
  if (static_cast<int>(coords.size()) < m)
    throw std::invalid_argument("kriging needs at least m observed sites");
  const KrigingPlan plan = plan_kriging(targets, coords, m);
  std::vector<KrigingResult> out;
  out.reserve(plan.targets.size());
  for (const auto& t : plan.targets) out.push_back(krige_with_plan(t, observed, params));
  return out;
}

// ---------------------------------------------------------------------------
// Dense reference

Eigen::MatrixXd dense_covariance(const SpatialCoordinates& coords, SpatialParams params) {
  check_params(params);
  const auto n = static_cast<Eigen::Index>(coords.size());
  Eigen::MatrixXd C(n, n);
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b)
      C(a, b) = params.sigma2 * std::exp(-params.phi * coords.distance(a, b));
  return C;
}

double dense_log_density(std::span<const double> w, const SpatialCoordinates& coords, SpatialParams params) {
  const Eigen::MatrixXd C = dense_covariance(coords, params);
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  if (llt.info() != Eigen::Success) throw NumericError("dense covariance is not positive definite");
  const Eigen::Map<const Eigen::VectorXd> x(w.data(), static_cast<Eigen::Index>(w.size()));
  const Eigen::VectorXd z = llt.matrixL().solve(x);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(w.size()) * kLog2Pi + logdet + z.squaredNorm());
}

}  // namespace svcsdm
