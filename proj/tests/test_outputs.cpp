#include <cmath>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "support.hpp"
#include "svcsdm/errors.hpp"
#include "svcsdm/outputs.hpp"

using namespace svcsdm;
using namespace svcsdm::testing;

namespace {

double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        ++pairs;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return wins / pairs;
}

// elpd and p_waic straight from the definitions, one unit at a time.
std::pair<double, double> brute_waic(const Eigen::MatrixXd& ll) {
  double lppd = 0.0, p = 0.0;
  const double S = static_cast<double>(ll.rows());
  for (Eigen::Index i = 0; i < ll.cols(); ++i) {
    double sum = 0.0, mean = 0.0;
    for (Eigen::Index s = 0; s < ll.rows(); ++s) {
      sum += std::exp(ll(s, i));
      mean += ll(s, i);
    }
    mean /= S;
    double v = 0.0;
    for (Eigen::Index s = 0; s < ll.rows(); ++s) v += (ll(s, i) - mean) * (ll(s, i) - mean);
    lppd += std::log(sum / S);
    p += v / (S - 1.0);
  }
  return {lppd, p};
}

MCMCConfig tiny_config(int neighbors) {
  MCMCConfig c;
  c.n_chains = 2;
  c.n_iterations = 40;
  c.n_burn = 20;
  c.n_thin = 2;
  c.neighbors = neighbors;
  c.seed = 17;
  return c;
}

}  // namespace

TEST_CASE("split R-hat") {
  CHECK(rhat({{2, 2, 2, 2}, {2, 2, 2, 2}}) == 1.0);
  CHECK(std::isinf(rhat({{0, 0, 1, 1}, {1, 1, 2, 2}})));
  CHECK(std::abs(rhat({{1, 2, 3, 4}, {1, 2, 3, 4}}) - std::sqrt(19.0 / 6.0)) <= 1e-12);
  CHECK(std::abs(rhat({{1, 2, 3, 4}, {2, 3, 4, 5}}) - std::sqrt(23.0 / 6.0)) <= 1e-12);
  // Odd length: the middle draw is dropped.
  CHECK(rhat({{1, 2, 9, 3, 4}, {1, 2, -9, 3, 4}}) == rhat({{1, 2, 3, 4}, {1, 2, 3, 4}}));
  Rng rng(1);
  std::vector<double> a(500), b(500);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = 10.0 + rng.normal();
  CHECK(rhat({a, b}) > 1.1);
  std::vector<double> c(500);
  for (auto& v : c) v = rng.normal();
  CHECK(rhat({a, c}) < 1.02);
  CHECK(rhat({a, c}) > 0.99);
  CHECK_THROWS(rhat({a}));
  CHECK_THROWS(rhat({{1, 2, 3}, {1, 2, 3}}));
}

TEST_CASE("effective sample size") {
  Rng rng(2);
  std::vector<std::vector<double>> iid(3, std::vector<double>(2000));
  for (auto& c : iid)
    for (auto& v : c) v = rng.normal();
  const double e = ess(iid);
  CHECK(e > 4500);
  CHECK(e < 7500);
  // AR(1) with coefficient 0.9 has an integrated autocorrelation time of 19.
  std::vector<std::vector<double>> ar(3, std::vector<double>(20000));
  for (auto& c : ar) {
    double x = 0.0;
    for (auto& v : c) v = x = 0.9 * x + std::sqrt(1 - 0.81) * rng.normal();
  }
  CHECK(ess(ar) == doctest::Approx(60000.0 / 19.0).epsilon(0.15));
}

TEST_CASE("WAIC") {
  SUBCASE("zero posterior variance") {
    Eigen::MatrixXd ll = Eigen::MatrixXd::Constant(5, 1, std::log(0.5));
    const auto w = waic(ll);
    CHECK(w.p_waic == 0.0);
    CHECK(std::abs(w.waic - -2.0 * std::log(0.5)) <= 1e-12);
  }
  SUBCASE("two units, two draws") {
    Eigen::MatrixXd ll(2, 2);
    ll << -1, -2, -1, -1;
    // Unit 1: lppd -1, var 0. Unit 2: lppd log((e^-2 + e^-1) / 2), var 1/2.
    const double lppd = -1.0 + std::log(0.5 * (std::exp(-2.0) + std::exp(-1.0)));
    const auto w = waic(ll);
    CHECK(std::abs(w.lppd - lppd) <= 1e-12);
    CHECK(std::abs(w.p_waic - 0.5) <= 1e-12);
    CHECK(std::abs(w.elpd - (lppd - 0.5)) <= 1e-12);
    CHECK(std::abs(w.waic + 2.0 * (lppd - 0.5)) <= 1e-12);
    CHECK(w.n_units == 2);
  }
  SUBCASE("random matrices against the definition") {
    Rng rng(3);
    for (int rep = 0; rep < 20; ++rep) {
      Eigen::MatrixXd ll(30, 7);
      for (Eigen::Index i = 0; i < ll.size(); ++i) ll.data()[i] = -3.0 * rng.uniform();
      const auto [lppd, p] = brute_waic(ll);
      const auto w = waic(ll);
      CHECK(std::abs(w.lppd - lppd) <= 1e-12);
      CHECK(std::abs(w.p_waic - p) <= 1e-12);
      CHECK(std::abs(w.waic - -2.0 * (lppd - p)) <= 1e-11);

      // Unit and draw reordering change nothing beyond rounding.
      Eigen::MatrixXd shuffled = ll.rowwise().reverse().colwise().reverse();
      CHECK(waic(shuffled).waic == doctest::Approx(w.waic).epsilon(1e-13));
      // Duplicating the draw set keeps lppd exactly; p_waic follows the n - 1 denominators.
      Eigen::MatrixXd twice(60, 7);
      twice << ll, ll;
      const auto w2 = waic(twice);
      CHECK(w2.lppd == doctest::Approx(w.lppd).epsilon(1e-13));
      CHECK(w2.p_waic == doctest::Approx(w.p_waic * (2.0 * 29.0) / 59.0).epsilon(1e-12));
    }
  }
  SUBCASE("non-finite entries name the unit") {
    Eigen::MatrixXd ll = Eigen::MatrixXd::Constant(3, 2, -1.0);
    ll(1, 1) = -INFINITY;
    try {
      waic(ll, {"a/1", "b/1"});
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("b/1") != std::string::npos);
    }
  }
  SUBCASE("large magnitudes stay stable") {
    Eigen::MatrixXd ll(2, 1);
    ll << -1000.0, -1001.0;
    CHECK(std::isfinite(waic(ll).waic));
  }
}

TEST_CASE("AUC") {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  CHECK(std::abs(*auc(s, y) - 0.75) <= 1e-12);
  CHECK(*auc(std::vector<double>{0.1, 0.2, 0.7, 0.9}, y) == 1.0);
  CHECK(*auc(std::vector<double>{0.3, 0.3, 0.3, 0.3}, y) == 0.5);
  CHECK_FALSE(auc(s, std::vector<int>{1, 1, 1, 1}).has_value());

  Rng rng(4);
  for (int rep = 0; rep < 50; ++rep) {
    const int n = 5 + rep;
    std::vector<double> sc(n), tr(n);
    std::vector<int> lab(n);
    for (int i = 0; i < n; ++i) {
      sc[i] = std::round(rng.uniform() * 10.0) / 10.0;  // plenty of ties
      lab[i] = i < 2 ? i : rng.bernoulli(0.4);
      tr[i] = std::exp(3.0 * sc[i]) - 7.0;
    }
    const double a = *auc(sc, lab);
    CHECK(std::abs(a - brute_auc(sc, lab)) <= 1e-12);
    CHECK(*auc(tr, lab) == a);
  }

  Eigen::MatrixXd draws(2, 4);
  draws << 0.1, 0.4, 0.35, 0.8, 0.1, 0.2, 0.7, 0.9;
  CHECK(std::abs(*holdout_auc(draws, y) - 0.875) <= 1e-12);
}

TEST_CASE("trend categories") {
  using C = TrendCategory;
  const std::vector<std::pair<double, C>> probes{{0.1, C::kStrongNegative},   {0.2, C::kModerateNegative},
                                                 {0.4, C::kModerateNegative}, {0.5, C::kNoEffect},
                                                 {0.6, C::kNoEffect},         {0.8, C::kModeratePositive},
                                                 {0.9, C::kStrongPositive},   {0.85, C::kStrongPositive}};
  for (const auto& [p, c] : probes) CHECK(categorize_probability(p) == c);
  CHECK(to_string(C::kNoEffect) == "No effect");
  CHECK(to_string(C::kStrongPositive) == "Strong Positive");

  Rng rng(5);
  for (int i = 0; i < 10000; ++i) {
    const double p = rng.uniform();
    const C c = categorize_probability(p);
    // Exactly one bin holds p.
    const int hits = (p > 0.8) + (p > 0.6 && p <= 0.8) + (p > 0.4 && p <= 0.6) + (p >= 0.2 && p <= 0.4) + (p < 0.2);
    CHECK(hits == 1);
    const C expect = p > 0.8    ? C::kStrongPositive
                     : p > 0.6  ? C::kModeratePositive
                     : p > 0.4  ? C::kNoEffect
                     : p >= 0.2 ? C::kModerateNegative
                                : C::kStrongNegative;
    CHECK(c == expect);
  }

  Eigen::MatrixXd draws(5, 2);
  draws << 1, -1, 2, -1, 3, 1, -1, -2, 0, -3;  // P(> 0) = 0.6 and 0.2
  CHECK(categorize_trend(draws) == std::vector<C>{C::kNoEffect, C::kModerateNegative});
}

TEST_CASE("type 7 quantiles") {
  CHECK(quantile({1, 2, 3, 4}, 0.5) == 2.5);
  CHECK(quantile({4, 1, 3, 2}, 0.25) == 1.75);
  CHECK(quantile({7}, 0.975) == 7.0);
}

TEST_CASE("predicting at the data sites reproduces the fitted surfaces") {
  Rng rng(6);
  const auto d = simulate_occupancy(14, 1, 3, 0.3, 0.8, 0.0, rng);
  auto spec = linear_spec(false);
  spec.occurrence.push_back({OccurrenceTermKind::kSvc, "x", ""});
  spec.spatial_intercept = true;
  const auto cfg = tiny_config(4);
  const auto chains = run_chains(d.data, d.covs, spec, cfg);
  const auto ctx = make_fit_context(spec, d.data, d.covs, cfg.neighbors);

  PredictionGrid grid;
  grid.cells = d.data.coords;
  grid.covariates["x"] = d.covs.occurrence[0].raw;
  PredictionOptions opt;
  for (bool sample : {true, false}) {
    opt.sample_surfaces = sample;
    const auto pred = predict_surfaces(ctx, chains, grid, opt);
    REQUIRE(pred.w1.rows() == 2 * cfg.draws_per_chain());
    for (int c = 0; c < 2; ++c) {
      DrawDecoder dec(ctx, chains[c]);
      for (int i = 0; i < chains[c].n_draws(); ++i) {
        const int g = c * cfg.draws_per_chain() + i;
        const auto occ = dec.occurrence(i);
        for (int j = 0; j < 14; ++j) {
          CHECK(pred.w1(g, j) == chains[c].surfaces[1](i, j));
          const double x = d.covs.occurrence[0].values[j];
          const double lp = occ.beta[0] + occ.w0[j] + (occ.beta[1] + occ.w1[0][j]) * x;
          CHECK(std::abs(pred.psi(g, j) - logistic(lp)) < 1e-12);
          CHECK(std::abs(pred.effect(g, j) - (occ.beta[1] + occ.w1[0][j])) < 1e-12);
        }
      }
    }
  }
}

TEST_CASE("three-site kriging matches the dense conditional") {
  SmallData s;
  s.data.coords = {{"a", "b", "c"}, {0.0, 1.0, 0.2}, {0.0, 0.3, 0.9}};
  s.data.n_seasons = 1;
  s.data.max_replicates = 2;
  s.data.y = {1, 0, 0, 0, 1, 1};
  s.covs.n_sites = 3;
  s.covs.n_seasons = 1;
  s.covs.max_replicates = 2;
  auto spec = linear_spec(false);
  spec.spatial_intercept = true;
  const auto chains = run_chains(s.data, s.covs, spec, tiny_config(2));
  auto ctx = make_fit_context(spec, s.data, s.covs, 2);
  ctx.neighbors = 3;

  PredictionGrid grid;
  grid.cells = {{"cell 1"}, {0.5}, {0.4}};
  PredictionOptions opt;
  opt.sample_surfaces = false;
  const auto pred = predict_surfaces(ctx, chains, grid, opt);
  int g = 0;
  for (const auto& ch : chains) {
    DrawDecoder dec(ctx, ch);
    for (int i = 0; i < ch.n_draws(); ++i, ++g) {
      const auto sp = dec.spatial(i, 0);
      Eigen::Matrix3d k;
      Eigen::Vector3d kt, w;
      for (int a = 0; a < 3; ++a) {
        w[a] = ch.surfaces[0](i, a);
        kt[a] = sp.sigma2 * std::exp(-sp.phi * std::hypot(s.data.coords.easting[a] - 0.5, s.data.coords.northing[a] - 0.4));
        for (int b = 0; b < 3; ++b) k(a, b) = sp.sigma2 * std::exp(-sp.phi * s.data.coords.distance(a, b));
      }
      const double w_star = kt.dot(k.ldlt().solve(w));
      const double expect = logistic(ch.draws(i, ch.param_index("beta[(Intercept)]")) + w_star);
      CHECK(std::abs(pred.psi(g, 0) - expect) <= 1e-8);
    }
  }
}

TEST_CASE("intercept-only predictions are constant across cells") {
  Rng rng(7);
  const auto d = simulate_occupancy(10, 1, 2, 0.0, 0.0, 0.0, rng);
  const auto spec = linear_spec(false);
  const auto chains = run_chains(d.data, d.covs, spec, tiny_config(3));
  const auto ctx = make_fit_context(spec, d.data, d.covs, 3);
  PredictionGrid grid;
  grid.cells = random_coords(6, rng, 3.0);
  const auto pred = predict_surfaces(ctx, chains, grid);
  for (Eigen::Index g = 0; g < pred.psi.rows(); ++g)
    for (Eigen::Index c = 1; c < pred.psi.cols(); ++c) CHECK(pred.psi(g, c) == pred.psi(g, 0));
}

TEST_CASE("prediction grid errors name the cell") {
  Rng rng(8);
  const auto d = simulate_occupancy(10, 1, 2, 0.0, 1.0, 0.0, rng);
  const auto spec = linear_spec(true);
  const auto chains = run_chains(d.data, d.covs, spec, tiny_config(3));
  const auto ctx = make_fit_context(spec, d.data, d.covs, 3);
  std::istringstream in("cell_x,cell_y,x\n0,0,1\n0.5,0.5,NA\n");
  const auto grid = read_prediction_grid(in, ctx);
  try {
    predict_surfaces(ctx, chains, grid);
    FAIL("expected an error");
  } catch (const IngestError& e) {
    CHECK(std::string(e.what()).find("cell 2") != std::string::npos);
  }
  std::istringstream bad("cell_x,x\n0,1\n");
  CHECK_THROWS_AS(read_prediction_grid(bad, ctx), IngestError);
}

TEST_CASE("holdout masking") {
  Rng rng(9);
  const auto d = simulate_occupancy(8, 2, 3, 0.5, 0.0, 0.5, rng);
  const auto split = mask_season(d.data, 1);
  CHECK(split.units.size() == 8);
  for (std::size_t i = 0; i < split.units.size(); ++i) {
    const int j = split.units[i].site;
    CHECK_FALSE(split.training.sampled(j, 1));
    CHECK(split.labels[i] == int(d.data.detected(j, 1)));
  }
  CHECK(split.training.y.size() == d.data.y.size());
}

TEST_CASE("fit summaries") {
  Rng rng(10);
  const auto d = simulate_occupancy(20, 1, 3, 0.0, 1.0, 0.0, rng);
  auto cfg = tiny_config(3);
  cfg.n_iterations = 1000;
  cfg.n_burn = 500;
  cfg.n_thin = 1;
  const auto chains = run_chains(d.data, d.covs, linear_spec(true), cfg);
  const auto sum = summarize_fit(chains);
  CHECK(sum.pooled_draws == 1000);
  CHECK(sum.n_chains == 2);
  double worst = 0.0;
  for (const auto& p : sum.parameters) {
    CHECK(p.q025 <= p.median);
    CHECK(p.median <= p.q975);
    CHECK(p.rhat >= 0.99);
    if (is_top_level_coefficient(p.name)) worst = std::max(worst, p.rhat);
  }
  CHECK(sum.max_coefficient_rhat == worst);
  CHECK(is_top_level_coefficient("alpha[(Intercept)]"));
  CHECK_FALSE(is_top_level_coefficient("sigma2[w1[x]]"));
  CHECK(sum.waic.waic == doctest::Approx(pooled_waic(chains).waic));
  std::ostringstream out;
  write_summary_csv(out, sum);
  CHECK(out.str().rfind("parameter,median,mean,sd,q2.5,q97.5,rhat,ess\n", 0) == 0);
}
