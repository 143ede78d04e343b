#include <cmath>
#include <sstream>

#include "doctest.h"
#include "support.hpp"
#include "svcsdm/errors.hpp"
#include "svcsdm/mcmc.hpp"
#include "svcsdm/polya_gamma.hpp"

using namespace svcsdm;
using namespace svcsdm::testing;

namespace {

MCMCConfig short_config(int iterations, int burn, int thin, int neighbors = 5) {
  MCMCConfig c;
  c.n_chains = 2;
  c.n_iterations = iterations;
  c.n_burn = burn;
  c.n_thin = thin;
  c.neighbors = neighbors;
  c.seed = 42;
  return c;
}

OccupancyModelSpec svc_spec() {
  OccupancyModelSpec s = linear_spec(false);
  s.occurrence.push_back({OccurrenceTermKind::kSvc, "x", ""});
  return s;
}

struct Moments {
  double mean = 0.0, var = 0.0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= v.size();
  for (double x : v) m.var += (x - m.mean) * (x - m.mean);
  m.var /= v.size() - 1;
  return m;
}

}  // namespace

TEST_CASE("Polya-Gamma moments") {
  Rng rng(1);
  for (double c : {0.0, 2.0, -3.5}) {
    const int n = 100000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double w = sample_polya_gamma(c, rng);
      REQUIRE(w > 0.0);
      s += w;
      s2 += w * w;
    }
    const double mean = s / n;
    const double se = std::sqrt((s2 / n - mean * mean) / n);
    CHECK(std::abs(mean - polya_gamma_mean(c)) < 3.0 * se);
  }
  CHECK(polya_gamma_mean(0.0) == 0.25);
  CHECK(polya_gamma_mean(2.0) == doctest::Approx(std::tanh(1.0) / 4.0).epsilon(1e-14));
  Rng a(9), b(9);
  for (int i = 0; i < 100; ++i) CHECK(sample_polya_gamma(1.3, a) == sample_polya_gamma(1.3, b));
}

TEST_CASE("chain shapes and draw counts") {
  Rng rng(3);
  const auto d = simulate_occupancy(30, 2, 3, 0.2, 0.8, 0.0, rng);
  const auto chain = run_chain(d.data, d.covs, svc_spec(), short_config(50, 20, 3), 7);
  CHECK(chain.n_draws() == 10);
  CHECK(chain.param_names ==
        std::vector<std::string>{"beta[(Intercept)]", "beta[x]", "alpha[(Intercept)]", "sigma2[w1[x]]", "phi[w1[x]]"});
  CHECK(chain.surface_names == std::vector<std::string>{"w1[x]"});
  CHECK(chain.surfaces[0].rows() == 10);
  CHECK(chain.surfaces[0].cols() == 30);
  CHECK(chain.loglik.cols() == 60);
  CHECK(chain.loglik.rows() == 10);
  CHECK((chain.loglik.array() <= 0.0).all());
  CHECK(chain.seed == 7);
  CHECK_FALSE(provenance_json(chain).empty());
}

TEST_CASE("runs are deterministic and independent of thread count") {
  Rng rng(4);
  const auto d = simulate_occupancy(25, 1, 3, 0.0, 1.0, 0.3, rng);
  const auto cfg = short_config(60, 20, 2);
  const auto a = run_chains(d.data, d.covs, svc_spec(), cfg, {}, 1);
  const auto b = run_chains(d.data, d.covs, svc_spec(), cfg, {}, 2);
  REQUIRE(a.size() == 2);
  for (int c = 0; c < 2; ++c) {
    CHECK(a[c].draws == b[c].draws);
    CHECK(a[c].surfaces[0] == b[c].surfaces[0]);
    CHECK(a[c].loglik == b[c].loglik);
    CHECK(a[c].seed == stream_seed(cfg.seed, c));
  }
  CHECK(a[0].draws != a[1].draws);
}

TEST_CASE("invalid configurations are rejected before sampling") {
  Rng rng(4);
  const auto d = simulate_occupancy(10, 1, 2, 0.0, 1.0, 0.3, rng);
  auto cfg = short_config(10, 20, 1);
  CHECK_THROWS_AS(run_chains(d.data, d.covs, linear_spec(true), cfg), ValidationError);
  cfg = short_config(10, 5, 1, 20);
  CHECK_THROWS_AS(run_chains(d.data, d.covs, svc_spec(), cfg), ValidationError);
}

TEST_CASE("latent occupancy update") {
  // Site 0 season 1 has one survey with no detection; season 2 is unsampled.
  SmallData s;
  s.data.coords = {{"a", "b"}, {0, 1}, {0, 0}};
  s.data.n_seasons = 2;
  s.data.max_replicates = 1;
  s.data.y = {0, DetectionData::kMissingObs, 1, DetectionData::kMissingObs};
  s.covs.n_sites = 2;
  s.covs.n_seasons = 2;
  s.covs.max_replicates = 1;
  OccupancySampler sampler(s.data, s.covs, linear_spec(false), short_config(10, 0, 1), 5);
  const int u00 = sampler.unit_index({0, 0}), u01 = sampler.unit_index({0, 1}), u10 = sampler.unit_index({1, 0});
  REQUIRE(u00 >= 0);
  REQUIRE(u01 >= 0);

  SUBCASE("psi = p = 0.5 with one non-detection gives 1/3") {
    sampler.state().occ.beta = {0.0};
    sampler.state().det.alpha = {0.0};
    int hits = 0;
    const int n = 60000;
    for (int i = 0; i < n; ++i) {
      sampler.update_z();
      hits += sampler.state().z[u00];
      CHECK(sampler.state().z[u10] == 1);
    }
    const double se = std::sqrt((1.0 / 3.0) * (2.0 / 3.0) / n);
    CHECK(std::abs(hits / double(n) - 1.0 / 3.0) < 4.0 * se);
  }
  SUBCASE("unsampled units follow psi") {
    sampler.state().occ.beta = {logit(0.9)};
    int hits = 0;
    const int n = 60000;
    for (int i = 0; i < n; ++i) {
      sampler.update_z();
      hits += sampler.state().z[u01];
    }
    CHECK(std::abs(hits / double(n) - 0.9) < 4.0 * std::sqrt(0.09 / n));
  }
}

TEST_CASE("spatial variance with a flat surface follows its conjugate prior") {
  Rng rng(6);
  const auto d = simulate_occupancy(10, 1, 2, 0.0, 1.0, 0.0, rng);
  OccupancySampler sampler(d.data, d.covs, svc_spec(), short_config(10, 0, 1), 8);
  std::fill(sampler.surface_values(0).begin(), sampler.surface_values(0).end(), 0.0);
  std::vector<double> draws;
  for (int i = 0; i < 40000; ++i) {
    sampler.update_sigma2(0);
    draws.push_back(sampler.state().spatial[0].sigma2);
  }
  // IG(2 + J/2, 1): mean 1/6, variance 1/(36 * 5).
  const auto m = moments(draws);
  CHECK(std::abs(m.mean - 1.0 / 6.0) < 4.0 * std::sqrt(1.0 / 180.0 / draws.size()));
  CHECK(m.var == doctest::Approx(1.0 / 180.0).epsilon(0.05));
}

TEST_CASE("two-site surface matches its Gaussian full conditional") {
  SmallData s;
  s.data.coords = {{"a", "b"}, {0, 0.5}, {0, 0}};
  s.data.n_seasons = 1;
  s.data.max_replicates = 2;
  s.data.y = {1, 0, 0, 0};
  s.covs.n_sites = 2;
  s.covs.n_seasons = 1;
  s.covs.max_replicates = 2;
  s.covs.occurrence.push_back({"x", {1.5, -0.7}, {1.5, -0.7}, {}});
  auto spec = svc_spec();
  spec.priors.phi = UniformPrior{1.0, 3.0};  // the sampler starts phi at the midpoint
  OccupancySampler sampler(s.data, s.covs, spec, short_config(10, 0, 1, 1), 12);
  auto& st = sampler.state();
  REQUIRE(st.spatial[0].phi == 2.0);
  st.occ.beta = {0.3};
  st.z = {1, 0};
  st.omega_occ = {0.2, 0.35};
  st.spatial[0].sigma2 = 0.8;

  // Oracle: prior N(0, K) times Gaussian pseudo-likelihood with precision omega x^2.
  const double x[2] = {1.5, -0.7}, kappa[2] = {0.5, -0.5};
  Eigen::Matrix2d k;
  k << 0.8, 0.8 * std::exp(-1.0), 0.8 * std::exp(-1.0), 0.8;
  Eigen::Matrix2d q = k.inverse();
  Eigen::Vector2d b;
  for (int j = 0; j < 2; ++j) {
    q(j, j) += st.omega_occ[j] * x[j] * x[j];
    b[j] = x[j] * (kappa[j] - st.omega_occ[j] * 0.3);
  }
  const Eigen::Matrix2d cov = q.inverse();
  const Eigen::Vector2d mean = cov * b;

  const int n = 200000;
  Eigen::Vector2d sum = Eigen::Vector2d::Zero();
  Eigen::Matrix2d sum2 = Eigen::Matrix2d::Zero();
  for (int i = 0; i < n; ++i) {
    sampler.update_gp_surface(0);
    const Eigen::Vector2d w(sampler.surface_values(0)[0], sampler.surface_values(0)[1]);
    sum += w;
    sum2 += w * w.transpose();
  }
  const Eigen::Vector2d m = sum / n;
  const Eigen::Matrix2d c = sum2 / n - m * m.transpose();
  for (int i = 0; i < 2; ++i) {
    CHECK(std::abs(m[i] - mean[i]) < 0.02);
    for (int j = 0; j < 2; ++j) CHECK(std::abs(c(i, j) - cov(i, j)) < 0.02);
  }
}

TEST_CASE("surface limits") {
  Rng rng(10);
  auto d = simulate_occupancy(15, 1, 2, 0.0, 1.0, 0.0, rng);
  SUBCASE("vanishing variance pins the surface to zero") {
    OccupancySampler sampler(d.data, d.covs, svc_spec(), short_config(10, 0, 1), 1);
    sampler.state().spatial[0].sigma2 = 1e-14;
    sampler.update_gp_surface(0);
    for (double w : sampler.surface_values(0)) CHECK(std::abs(w) < 1e-5);
  }
  SUBCASE("a zero covariate leaves the prior") {
    for (auto& v : d.covs.occurrence[0].values) v = 0.0;
    d.covs.occurrence[0].raw = d.covs.occurrence[0].values;
    OccupancySampler sampler(d.data, d.covs, svc_spec(), short_config(10, 0, 1), 2);
    sampler.state().spatial[0].sigma2 = 1.7;
    std::vector<double> site0;
    for (int i = 0; i < 40000; ++i) {
      sampler.update_gp_surface(0);
      site0.push_back(sampler.surface_values(0)[3]);
    }
    const auto m = moments(site0);
    CHECK(std::abs(m.mean) < 0.06);
    CHECK(m.var == doctest::Approx(1.7).epsilon(0.06));
  }
}

TEST_CASE("unsampled seasons propagate the AR(1) prior") {
  // Only season 1 of 3 is surveyed, so eta_2 | eta_1 and eta_3 | eta_2 follow the prior.
  Rng rng(13);
  auto d = simulate_occupancy(20, 3, 2, 0.0, 0.0, 0.0, rng);
  for (int j = 0; j < 20; ++j)
    for (int t = 1; t < 3; ++t)
      for (int k = 0; k < 2; ++k) d.data.at(j, t, k) = DetectionData::kMissingObs;
  auto spec = linear_spec(false);
  spec.year_effect = YearEffect::kAr1;
  OccupancySampler sampler(d.data, d.covs, spec, short_config(10, 0, 1), 3);
  sampler.update_omega();
  sampler.state().occ.rho = 0.6;
  sampler.state().occ.sigma2_eta = 0.5;
  std::vector<double> e1, e2;
  for (int i = 0; i < 40000; ++i) {
    sampler.update_eta();
    const auto& eta = sampler.state().occ.eta;
    e1.push_back(eta[1] - 0.6 * eta[0]);
    e2.push_back(eta[2] - 0.6 * eta[1]);
  }
  const double v = 0.5 * (1.0 - 0.36);
  for (const auto* e : {&e1, &e2}) {
    const auto m = moments(*e);
    CHECK(std::abs(m.mean) < 4.0 * std::sqrt(v / e->size()));
    CHECK(m.var == doctest::Approx(v).epsilon(0.03));
  }
}

TEST_CASE("AR(1) correlation respects its support") {
  Rng rng(14);
  const auto d = simulate_occupancy(10, 4, 2, 0.0, 0.0, 0.0, rng);
  auto spec = linear_spec(false);
  spec.year_effect = YearEffect::kAr1;
  spec.priors.rho = {-0.3, 0.5};
  OccupancySampler sampler(d.data, d.covs, spec, short_config(10, 0, 1), 3);
  sampler.state().occ.eta = {1.0, 0.9, 1.1, 1.0};
  for (int i = 0; i < 5000; ++i) {
    sampler.update_ar1_params();
    CHECK(sampler.state().occ.rho > -0.3);
    CHECK(sampler.state().occ.rho < 0.5);
  }
}

TEST_CASE("intercept-only posterior agrees with grid integration") {
  Rng rng(21);
  const auto d = simulate_occupancy(80, 1, 4, logit(0.6), 0.0, logit(0.4), rng);
  MCMCConfig cfg = short_config(4000, 1000, 2);
  cfg.n_chains = 1;
  const auto chain = run_chain(d.data, d.covs, linear_spec(false), cfg, 99);
  auto median = [](Eigen::VectorXd v) {
    std::sort(v.data(), v.data() + v.size());
    return 0.5 * (v[(v.size() - 1) / 2] + v[v.size() / 2]);
  };
  const double psi = logistic(median(chain.column("beta[(Intercept)]")));
  const double p = logistic(median(chain.column("alpha[(Intercept)]")));
  const auto oracle = intercept_only_grid(d.data, 2.72, 601);
  CHECK(std::abs(psi - oracle.psi) < 0.03);
  CHECK(std::abs(p - oracle.p) < 0.03);
}

TEST_CASE("posterior CSV round trip") {
  Rng rng(5);
  const auto d = simulate_occupancy(12, 1, 2, 0.0, 1.0, 0.0, rng);
  const auto chain = run_chain(d.data, d.covs, svc_spec(), short_config(30, 10, 2), 3);
  std::stringstream io;
  write_posterior_csv(io, chain, d.data.coords.site_ids);
  const auto back = read_posterior_csv(io, chain.surface_names, 12);
  CHECK(back.param_names == chain.param_names);
  CHECK(back.draws == chain.draws);
  CHECK(back.surfaces[0] == chain.surfaces[0]);

  std::stringstream m;
  write_matrix_csv(m, chain.loglik, std::vector<std::string>(chain.loglik.cols(), "u"));
  std::vector<std::string> header;
  CHECK(read_matrix_csv(m, &header) == chain.loglik);
  CHECK(header.size() == 12);
}
