#include <sstream>

#include "doctest.h"
#include "svcsdm/data_model.hpp"
#include "svcsdm/errors.hpp"
#include "svcsdm/sim_study.hpp"

using namespace svcsdm;

namespace {

IngestedData parse(const std::string& text, const CsvSchema& schema = {}) {
  std::istringstream in(text);
  return parse_long_csv(in, schema);
}

std::string ingest_error(const std::string& text, const CsvSchema& schema = {}) {
  try {
    parse(text, schema);
  } catch (const IngestError& e) {
    return e.what();
  }
  return "";
}

OccupancyModelSpec svc_spec(const std::string& cov) {
  OccupancyModelSpec s;
  s.occurrence = {{OccurrenceTermKind::kIntercept, "", ""}, {OccurrenceTermKind::kSvc, cov, ""}};
  s.detection = {{DetectionTermKind::kIntercept, ""}};
  return s;
}

}  // namespace

TEST_CASE("single site with four replicates") {
  const auto d = parse(
      "site_id,easting,northing,season,replicate,y\n"
      "a,0,0,1,1,0\na,0,0,1,2,1\na,0,0,1,3,0\na,0,0,1,4,0\n");
  CHECK(d.data.n_sites() == 1);
  CHECK(d.data.n_seasons == 1);
  CHECK(d.data.max_replicates == 4);
  CHECK(d.data.at(0, 0, 0) == 0);
  CHECK(d.data.at(0, 0, 1) == 1);
  CHECK(d.data.detected(0, 0));
}

TEST_CASE("full simulation grid ingests to 400 sites") {
  ScenarioConfig cfg;
  const ScenarioData sim = generate_scenario(cfg, 0);
  std::ostringstream out;
  write_long_csv(out, sim.data, sim.covariates, simulation_schema());
  const auto d = parse(out.str(), simulation_schema());
  CHECK(d.data.n_sites() == 400);
  CHECK(d.data.n_seasons == 1);
  CHECK(d.data.max_replicates == 5);
}

TEST_CASE("long CSV round trip is exact") {
  const std::string text =
      "site_id,easting,northing,season,replicate,y,elev,day,hab\n"
      "b,1.5,2,2019,1,1,100.25,3,2\n"
      "b,1.5,2,2019,2,NA,100.25,NA,2\n"
      "a,0,0,2019,1,0,80,1,1\n"
      "a,0,0,2020,1,0,81,2,1\n"
      "a,0,0,2020,2,1,81,5,1\n";
  CsvSchema schema;
  schema.occurrence_covariates = {"elev"};
  schema.detection_covariates = {"day"};
  schema.strata = {"hab"};
  const auto d1 = parse(text, schema);
  std::ostringstream o1;
  write_long_csv(o1, d1.data, d1.covariates, schema);
  const auto d2 = parse(o1.str(), schema);
  std::ostringstream o2;
  write_long_csv(o2, d2.data, d2.covariates, schema);
  CHECK(o1.str() == o2.str());
  CHECK(to_canonical_json(d1.data, d1.covariates) == to_canonical_json(d2.data, d2.covariates));
  // Sites sorted by identifier, seasons contiguous from the smallest.
  CHECK(d1.data.coords.site_ids == std::vector<std::string>{"a", "b"});
  CHECK(d1.data.first_season == 2019);
  CHECK(d1.data.n_seasons == 2);
  CHECK_FALSE(d1.data.sampled(1, 1));
  // Standardised with the sample mean and sd of the unit-level values.
  const auto* elev = d1.covariates.find_occurrence("elev");
  REQUIRE(elev);
  CHECK(elev->transform.mean == doctest::Approx((80.0 + 81.0 + 100.25) / 3.0));
}

TEST_CASE("ingest errors name the offending row") {
  const std::string head = "site_id,easting,northing,season,replicate,y\n";
  SUBCASE("duplicate key") {
    const auto msg = ingest_error(head + "a,0,0,1,1,0\na,0,0,1,2,1\na,0,0,1,1,1\n");
    CHECK(msg.find("row 3") != std::string::npos);
    CHECK(msg.find("duplicate") != std::string::npos);
  }
  SUBCASE("y outside {0,1}") {
    const auto msg = ingest_error(head + "a,0,0,1,1,2\n");
    CHECK(msg.find("row 1") != std::string::npos);
  }
  SUBCASE("non-numeric coordinate") {
    const auto msg = ingest_error(head + "a,0,0,1,1,0\nb,x,0,1,1,0\n");
    CHECK(msg.find("row 2") != std::string::npos);
  }
  SUBCASE("missing column") { CHECK(ingest_error("site_id,easting,season,replicate,y\n").find("northing") != std::string::npos); }
  SUBCASE("inconsistent coordinates") {
    CHECK(ingest_error(head + "a,0,0,1,1,0\na,1,0,1,2,0\n").find("inconsistent") != std::string::npos);
  }
}

TEST_CASE("validate_spec collects every violation") {
  const ScenarioData sim = generate_scenario(ScenarioConfig{}, 0);
  SUBCASE("svc with J=400 and m=5 is valid") { CHECK(validate_spec(svc_spec("x"), sim.data, sim.covariates, 5).empty()); }
  SUBCASE("ar1 with a single season") {
    auto s = svc_spec("x");
    s.year_effect = YearEffect::kAr1;
    const auto p = validate_spec(s, sim.data, sim.covariates, 5);
    CHECK(std::find(p.begin(), p.end(), "ar1 requires T > 1") != p.end());
  }
  SUBCASE("empty stratum is named") {
    CovariateSet covs = sim.covariates;
    for (auto& l : covs.strata[0].labels)
      if (l == 4) l = 5;
    OccupancyModelSpec s = model_spec(ModelForm::kStratum);
    const auto p = validate_spec(s, sim.data, covs, 5);
    REQUIRE(p.size() == 1);
    CHECK(p[0] == "stratum 4 of 'block' is empty");
  }
  SUBCASE("several problems at once") {
    auto s = svc_spec("nope");
    s.year_effect = YearEffect::kAr1;
    const auto p = validate_spec(s, sim.data, sim.covariates, 500);
    CHECK(p.size() >= 3);
  }
}

TEST_CASE("MCMC profiles") {
  const MCMCConfig paper = paper_mcmc_profile();
  CHECK(paper.n_chains == 3);
  CHECK(paper.draws_per_chain() == 1000);
  CHECK(paper.pooled_draws() == 3000);
  const MCMCConfig desk = desk_mcmc_profile();
  CHECK(desk.n_iterations == 20000);
  CHECK(desk.n_burn == 10000);
  CHECK(desk.n_thin == 10);
  CHECK(desk.neighbors == 5);
  MCMCConfig small;
  small.n_iterations = 200;
  small.n_burn = 100;
  small.n_thin = 10;
  CHECK(small.draws_per_chain() == 10);
  MCMCConfig bad;
  bad.n_burn = bad.n_iterations;
  CHECK_FALSE(bad.problems().empty());
}

TEST_CASE("coefficient names") {
  OccupancyModelSpec s;
  s.occurrence = {{OccurrenceTermKind::kIntercept, "", ""},
                  {OccurrenceTermKind::kQuadratic, "x", ""},
                  {OccurrenceTermKind::kInteraction, "x", "z"},
                  {OccurrenceTermKind::kSvc, "y", ""}};
  CHECK(occurrence_coefficient_names(s) == std::vector<std::string>{"(Intercept)", "x", "y", "x^2", "x:z"});
  s.detection = {{DetectionTermKind::kReplicateIntercept, ""}, {DetectionTermKind::kQuadratic, "day"}};
  CHECK(detection_coefficient_names(s, 3) ==
        std::vector<std::string>{"rep[1]", "rep[2]", "rep[3]", "day", "day^2"});
}

TEST_CASE("spec and config JSON round trips") {
  OccupancyModelSpec s = model_spec(ModelForm::kStratum);
  s.spatial_intercept = true;
  s.year_effect = YearEffect::kAr1;
  s.priors.phi = UniformPrior{0.1, 2.0};
  s.priors.beta_overrides["x"] = {0.5, 1.0};
  CHECK(spec_from_json(to_json(s)) == s);
  MCMCConfig c = paper_mcmc_profile();
  c.seed = 77;
  const MCMCConfig back = mcmc_from_json(to_json(c));
  CHECK(back.seed == 77);
  CHECK(back.pooled_draws() == 3000);
  CHECK_THROWS_AS(spec_from_json(nlohmann::json::parse(R"({"occurrence":[{"kind":"cubic","covariate":"x"}]})")),
                  ValidationError);
}

TEST_CASE("default phi support comes from inter-site distances") {
  SpatialCoordinates c{{"a", "b", "c"}, {0, 1, 3}, {0, 0, 0}};
  const auto [dmin, dmax] = distance_range(c);
  CHECK(dmin == 1.0);
  CHECK(dmax == 3.0);
  const UniformPrior p = resolve_phi_prior(PriorSpec{}, c);
  CHECK(p.lower == doctest::Approx(1.0));
  CHECK(p.upper == doctest::Approx(3.0));
}

TEST_CASE("format_double round trips") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-17, 123456789.125}) CHECK(std::stod(format_double(v)) == v);
  CHECK(format_double(kNaN) == "NA");
}
