#include <cmath>
#include <numbers>

#include "doctest.h"
#include "svcsdm/errors.hpp"
#include "svcsdm/spatial_gp.hpp"

using namespace svcsdm;

namespace {

SpatialCoordinates random_sites(int n, Rng& rng, double extent = 3.0) {
  SpatialCoordinates c;
  for (int i = 0; i < n; ++i) {
    c.site_ids.push_back("s" + std::to_string(100 + i));
    c.easting.push_back(extent * rng.uniform());
    c.northing.push_back(extent * rng.uniform());
  }
  return c;
}

// Covariance built directly from coordinates, independent of the library helpers.
Eigen::MatrixXd oracle_cov(const SpatialCoordinates& c, double sigma2, double phi) {
  const int n = static_cast<int>(c.size());
  Eigen::MatrixXd k(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      k(i, j) = sigma2 * std::exp(-phi * std::hypot(c.easting[i] - c.easting[j], c.northing[i] - c.northing[j]));
  return k;
}

double oracle_log_density(const Eigen::VectorXd& w, const Eigen::MatrixXd& k) {
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  const Eigen::MatrixXd l = llt.matrixL();
  const double logdet = 2.0 * l.diagonal().array().log().sum();
  const Eigen::VectorXd a = l.triangularView<Eigen::Lower>().solve(w);
  return -0.5 * (w.size() * std::log(2.0 * std::numbers::pi) + logdet + a.squaredNorm());
}

}  // namespace

TEST_CASE("exponential correlation") {
  CHECK(exp_correlation(0.0, 2.0) == 1.0);
  CHECK(exp_correlation(1.0, 1.0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK(exp_correlation(3.0, 1.0) == doctest::Approx(0.049787068367863944).epsilon(1e-14));
  CHECK_THROWS_AS(exp_correlation(-1.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(exp_correlation(1.0, 0.0), std::invalid_argument);
}

TEST_CASE("ordering is by coordinate sum with identifier ties") {
  SpatialCoordinates c{{"c", "a", "b", "d"}, {2, 1, 0, 0}, {0, 0, 1, 0}};
  // sums 2, 1, 1, 0 -> d, then a before b, then c
  CHECK(nngp_ordering(c) == std::vector<int>{3, 1, 2, 0});
}

TEST_CASE("three collinear sites give the Markov weights") {
  SpatialCoordinates c{{"a", "b", "c"}, {0, 1, 2}, {0, 0, 0}};
  const auto owned = build_nngp(c, 2, {1.0, 1.0});
  const auto& nn = owned.nngp;
  CHECK(nn.cond_var[0] == doctest::Approx(1.0));
  CHECK(nn.cond_var[1] == doctest::Approx(1.0 - std::exp(-2.0)));
  CHECK(nn.cond_var[2] == doctest::Approx(1.0 - std::exp(-2.0)));
  const auto& nb = owned.graph.neighbors[2];
  REQUIRE(nb.size() == 2);
  for (std::size_t k = 0; k < nb.size(); ++k) {
    const double expect = nb[k] == 1 ? std::exp(-1.0) : 0.0;
    CHECK(nn.weights[2][k] == doctest::Approx(expect).epsilon(1e-12).scale(1.0));
  }
}

TEST_CASE("single site log-density") {
  SpatialCoordinates c{{"a"}, {0}, {0}};
  const auto owned = build_nngp(c, 5, {1.0, 1.0});
  const std::vector<double> w{0.0};
  CHECK(nngp_log_density(w, owned.nngp) == doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)));
}

TEST_CASE("NNGP with m = J-1 equals the dense GP") {
  Rng rng(11);
  for (int rep = 0; rep < 5; ++rep) {
    const int n = 5 + 7 * rep;
    const auto c = random_sites(n, rng);
    const SpatialParams p{0.5 + rng.uniform(), 0.5 + 2.0 * rng.uniform()};
    const auto owned = build_nngp(c, n - 1, p);
    Eigen::VectorXd w(n);
    for (int i = 0; i < n; ++i) w[i] = rng.normal();
    const double dense = oracle_log_density(w, oracle_cov(c, p.sigma2, p.phi));
    const std::vector<double> wv(w.data(), w.data() + n);
    CHECK(std::abs(nngp_log_density(wv, owned.nngp) - dense) < 1e-8);
    CHECK(std::abs(dense_log_density(wv, c, p) - dense) < 1e-8);
    // The unit quadratic form scales out sigma2.
    const Eigen::MatrixXd k1 = oracle_cov(c, 1.0, p.phi);
    const double q = w.dot(k1.llt().solve(w));
    CHECK(nngp_unit_quadratic_form(wv, owned.nngp) == doctest::Approx(q).epsilon(1e-9));
  }
}

TEST_CASE("conditional variance must be positive") {
  SpatialCoordinates c{{"a", "b"}, {0, 0}, {0, 0}};
  CHECK_THROWS(build_nngp(c, 1, {1.0, 1.0}));
}

TEST_CASE("kriging matches the dense conditional") {
  Rng rng(5);
  const auto c = random_sites(12, rng);
  const SpatialParams p{1.3, 1.1};
  std::vector<double> w(12);
  for (auto& v : w) v = rng.normal();
  const double te = 1.4, tn = 1.7;
  const auto r = krige_point(te, tn, w, c, 12, p);

  const Eigen::MatrixXd k = oracle_cov(c, p.sigma2, p.phi);
  Eigen::VectorXd kt(12);
  for (int i = 0; i < 12; ++i) kt[i] = p.sigma2 * std::exp(-p.phi * std::hypot(c.easting[i] - te, c.northing[i] - tn));
  const Eigen::VectorXd wv = Eigen::Map<const Eigen::VectorXd>(w.data(), 12);
  const Eigen::VectorXd a = k.llt().solve(kt);
  CHECK(std::abs(r.mean - a.dot(wv)) < 1e-8);
  CHECK(std::abs(r.variance - (p.sigma2 - kt.dot(a))) < 1e-8);

  SUBCASE("exact at observed sites") {
    const auto e = krige_point(c.easting[3], c.northing[3], w, c, 4, p);
    CHECK(e.mean == w[3]);
    CHECK(e.variance == 0.0);
  }
  SUBCASE("reverts to the prior far away") {
    const auto f = krige_point(1e4, 1e4, w, c, 4, p);
    CHECK(std::abs(f.mean) < 1e-12);
    CHECK(f.variance == doctest::Approx(p.sigma2));
  }
  SUBCASE("plan gives the same answer") {
    SpatialCoordinates t{{"t"}, {te}, {tn}};
    const auto plan = plan_kriging(t, c, 12);
    const auto q = krige_with_plan(plan.targets[0], w, p);
    CHECK(std::abs(q.mean - r.mean) < 1e-12);
    CHECK(std::abs(q.variance - r.variance) < 1e-12);
  }
}

TEST_CASE("simulated surfaces have the dense covariance") {
  Rng rng(3);
  const auto c = random_sites(6, rng, 1.5);
  const SpatialParams p{2.0, 1.0};
  const auto owned = build_nngp(c, 5, p);
  const Eigen::MatrixXd k = oracle_cov(c, p.sigma2, p.phi);
  const int n = 20000;
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(6, 6);
  Eigen::MatrixXd sum2 = Eigen::MatrixXd::Zero(6, 6);
  for (int s = 0; s < n; ++s) {
    const auto w = nngp_simulate(owned.nngp, rng);
    const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(w.data(), 6);
    const Eigen::MatrixXd o = v * v.transpose();
    sum += o;
    sum2 += o.cwiseProduct(o);
  }
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) {
      const double mean = sum(i, j) / n;
      const double se = std::sqrt((sum2(i, j) / n - mean * mean) / n);
      CHECK(std::abs(mean - k(i, j)) < 4.0 * se);
    }
}

TEST_CASE("nearest neighbours are earlier in the ordering") {
  Rng rng(9);
  const auto c = random_sites(40, rng);
  const auto g = build_neighbor_graph(c, 5);
  for (int s = 0; s < 40; ++s) {
    const int pos = g.position[s];
    CHECK(static_cast<int>(g.neighbors[s].size()) == std::min(pos, 5));
    for (int nb : g.neighbors[s]) CHECK(g.position[nb] < pos);
    for (const auto& [child, slot] : g.children[s]) CHECK(g.neighbors[child][slot] == s);
  }
}
