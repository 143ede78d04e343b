#pragma once

// Small simulated data sets and brute-force oracles shared by the unit and
// acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <utility>
#include <vector>

#include "svcsdm/data_model.hpp"
#include "svcsdm/occupancy.hpp"
#include "svcsdm/rng.hpp"

namespace svcsdm::testing {

struct SmallData {
  DetectionData data;
  CovariateSet covs;
  std::vector<int> z;  // true occupancy per (site, season)
};

inline SpatialCoordinates random_coords(int n, Rng& rng, double extent = 1.0) {
  SpatialCoordinates c;
  char buf[32];
  for (int i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "site%03d", i);
    c.site_ids.push_back(buf);
    c.easting.push_back(extent * rng.uniform());
    c.northing.push_back(extent * rng.uniform());
  }
  return c;
}

/// Occupancy data with logit(psi) = beta0 + beta1 * x and constant detection, x ~ N(0, 1)
/// per site-season under the covariate name "x".
inline SmallData simulate_occupancy(int n_sites, int n_seasons, int n_reps, double beta0, double beta1,
                                    double alpha0, Rng& rng) {
  SmallData s;
  s.data.coords = random_coords(n_sites, rng);
  s.data.first_season = 1;
  s.data.n_seasons = n_seasons;
  s.data.max_replicates = n_reps;
  s.data.y.assign(static_cast<std::size_t>(n_sites) * n_seasons * n_reps, 0);
  s.covs.n_sites = n_sites;
  s.covs.n_seasons = n_seasons;
  s.covs.max_replicates = n_reps;
  SiteSeasonCovariate x{"x", {}, {}, {}};
  const double p = logistic(alpha0);
  for (int j = 0; j < n_sites; ++j)
    for (int t = 0; t < n_seasons; ++t) {
      const double v = rng.normal();
      x.raw.push_back(v);
      x.values.push_back(v);
      const int z = rng.bernoulli(logistic(beta0 + beta1 * v));
      s.z.push_back(z);
      for (int k = 0; k < n_reps; ++k) s.data.at(j, t, k) = static_cast<std::int8_t>(z && rng.bernoulli(p));
    }
  s.covs.occurrence.push_back(std::move(x));
  return s;
}

inline OccupancyModelSpec linear_spec(bool with_slope) {
  OccupancyModelSpec spec;
  spec.occurrence.push_back({OccurrenceTermKind::kIntercept, "", ""});
  if (with_slope) spec.occurrence.push_back({OccurrenceTermKind::kLinear, "x", ""});
  spec.detection.push_back({DetectionTermKind::kIntercept, ""});
  return spec;
}

struct GridMedians {
  double psi = 0.0;
  double p = 0.0;
};

/// Posterior medians of psi and p for the intercept-only model by integration over a
/// regular (beta0, alpha0) grid with independent N(0, prior_var) priors on the logit scale.
inline GridMedians intercept_only_grid(const DetectionData& d, double prior_var, int n = 1201,
                                       double half_width = 6.0) {
  // Each sampled unit reduces to (number of surveys, number of detections).
  std::map<std::pair<int, int>, int> patterns;
  for (int j = 0; j < d.n_sites(); ++j)
    for (int t = 0; t < d.n_seasons; ++t) {
      int k = 0, det = 0;
      for (int r = 0; r < d.max_replicates; ++r) {
        const auto y = d.at(j, t, r);
        if (y == DetectionData::kMissingObs) continue;
        ++k;
        det += y;
      }
      if (k > 0) ++patterns[{k, det}];
    }
  const double h = 2.0 * half_width / (n - 1);
  std::vector<double> lp(static_cast<std::size_t>(n) * n);
  double max_lp = -INFINITY;
  for (int a = 0; a < n; ++a) {
    const double b0 = -half_width + a * h;
    const double psi = logistic(b0);
    for (int c = 0; c < n; ++c) {
      const double a0 = -half_width + c * h;
      const double p = logistic(a0);
      double v = -0.5 * (b0 * b0 + a0 * a0) / prior_var;
      for (const auto& [kd, count] : patterns) {
        const auto [k, det] = kd;
        double l = psi * std::pow(p, det) * std::pow(1.0 - p, k - det);
        if (det == 0) l += 1.0 - psi;
        v += count * std::log(l);
      }
      lp[static_cast<std::size_t>(a) * n + c] = v;
      max_lp = std::max(max_lp, v);
    }
  }
  std::vector<double> mb(n, 0.0), ma(n, 0.0);
  for (int a = 0; a < n; ++a)
    for (int c = 0; c < n; ++c) {
      const double w = std::exp(lp[static_cast<std::size_t>(a) * n + c] - max_lp);
      mb[a] += w;
      ma[c] += w;
    }
  auto median = [&](const std::vector<double>& m) {
    double total = 0.0;
    for (double v : m) total += v;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      // Mass of grid point i spread uniformly over [x_i - h/2, x_i + h/2].
      if (acc + m[i] >= 0.5 * total) return -half_width + (i - 0.5) * h + h * (0.5 * total - acc) / m[i];
      acc += m[i];
    }
    return half_width;
  };
  return {logistic(median(mb)), logistic(median(ma))};
}

}  // namespace svcsdm::testing
