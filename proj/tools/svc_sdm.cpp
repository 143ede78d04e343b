// svc_sdm: simulate, fit, compare, predict and summarize occupancy models with
// spatially-varying coefficients.
//
// Exit codes: 0 success, 1 runtime or numeric failure (including failed convergence
// under strict mode), 2 usage or validation error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "svcsdm/data_model.hpp"
#include "svcsdm/errors.hpp"
#include "svcsdm/manifest.hpp"
#include "svcsdm/mcmc.hpp"
#include "svcsdm/outputs.hpp"
#include "svcsdm/parallel.hpp"
#include "svcsdm/sim_study.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace svcsdm;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Signals an orderly nonzero exit after outputs were written.
struct ExitStatus {
  int code;
};

json read_json(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::parse_error& e) {
    throw UsageError(p.string() + ": invalid JSON (" + e.what() + ")");
  } catch (const std::runtime_error& e) {
    throw UsageError(e.what());
  }
}

std::string to_text(const std::function<void(std::ostream&)>& fn) {
  std::ostringstream ss;
  fn(ss);
  return ss.str();
}

void write_output(const fs::path& dir, const std::string& name, const std::string& contents,
                  std::vector<std::string>& outputs) {
  write_file_atomic(dir / name, contents);
  outputs.push_back(name);
}

std::string two_digit(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02d", i);
  return buf;
}

RunManifest start_manifest(const std::string& command, const std::vector<std::string>& args) {
  RunManifest m;
  m.command = command;
  m.arguments = args;
  m.software_version = kSoftwareVersion;
  m.started_at = utc_timestamp();
  return m;
}

void hash_configs(RunManifest& m) {
  std::string all;
  for (const auto& f : m.config_files) all += read_file(f);
  m.config_hash = sha256_hex(all);
}

// Column mapping implied by a model: every covariate the spec names.
CsvSchema schema_for_spec(const OccupancyModelSpec& spec) {
  CsvSchema s;
  auto add = [](std::vector<std::string>& v, const std::string& n) {
    if (!n.empty() && std::find(v.begin(), v.end(), n) == v.end()) v.push_back(n);
  };
  for (const auto& t : spec.occurrence) {
    if (t.kind == OccurrenceTermKind::kIntercept) continue;
    add(s.occurrence_covariates, t.covariate);
    if (t.kind == OccurrenceTermKind::kInteraction) add(s.occurrence_covariates, t.modifier);
    if (t.kind == OccurrenceTermKind::kStratum) add(s.strata, t.modifier);
  }
  for (const auto& t : spec.detection) {
    if (t.kind == DetectionTermKind::kIntercept || t.kind == DetectionTermKind::kReplicateIntercept) continue;
    if (std::find(s.occurrence_covariates.begin(), s.occurrence_covariates.end(), t.covariate) ==
        s.occurrence_covariates.end())
      add(s.detection_covariates, t.covariate);
  }
  return s;
}

std::vector<std::string> surface_names_for(const OccupancyModelSpec& spec) {
  const OccurrenceLayout L = make_occurrence_layout(spec);
  std::vector<std::string> names;
  if (L.spatial_intercept) names.push_back("w0");
  for (int c : L.svc) names.push_back("w1[" + L.covariates[c] + "]");
  return names;
}

struct LoadedFit {
  json meta;
  FitContext ctx;
  std::vector<PosteriorChain> chains;
};

LoadedFit load_fit(const fs::path& dir) {
  LoadedFit f;
  f.meta = read_json(dir / "fit.json");
  f.ctx = fit_context_from_json(f.meta.at("context"));
  const auto surfaces = surface_names_for(f.ctx.spec);
  for (const auto& name : f.meta.at("chain_files")) {
    std::ifstream in(dir / name.get<std::string>());
    if (!in) throw std::runtime_error("cannot read " + (dir / name.get<std::string>()).string());
    f.chains.push_back(read_posterior_csv(in, surfaces, static_cast<int>(f.ctx.coords.size())));
  }
  return f;
}

IngestedData load_fitted_data(const fs::path& dir, const json& meta) {
  return ingest_long_csv(dir / "data.csv", schema_from_json(meta.at("schema")));
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string scenario;
  fs::path out;
  std::uint64_t seed = 1;
  std::string profile = "desk";
  int replicates = 0;
};

int cmd_simulate(const SimulateArgs& a, const std::vector<std::string>& argv) {
  const auto sc = parse_scenario(a.scenario);
  if (!sc) {
    std::string names;
    for (const auto& n : scenario_names()) names += (names.empty() ? "" : ", ") + n;
    throw UsageError("unknown scenario '" + a.scenario + "'; valid scenarios: " + names);
  }
  RunManifest m = start_manifest("simulate", argv);
  ScenarioConfig cfg = scenario_preset(*sc, a.profile == "paper" ? StudyProfile::kPaper : StudyProfile::kDesk, a.seed);
  if (a.replicates > 0) cfg.replicates = a.replicates;
  if (auto p = cfg.problems(); !p.empty()) throw svcsdm::ValidationError(p);
  fs::create_directories(a.out);

  const CsvSchema schema = simulation_schema();
  std::vector<std::string> outputs;
  write_output(a.out, "schema.json", to_json(schema).dump(2) + "\n", outputs);
  for (int f = 0; f < kModelFormCount; ++f) {
    const auto form = static_cast<ModelForm>(f);
    write_output(a.out, "model_" + to_string(form) + ".json", to_json(model_spec(form)).dump(2) + "\n", outputs);
  }
  for (int r = 0; r < cfg.replicates; ++r) {
    const ScenarioData sim = generate_scenario(cfg, r);
    write_output(a.out, "data_" + two_digit(r + 1) + ".csv",
                 to_text([&](std::ostream& o) { write_long_csv(o, sim.data, sim.covariates, schema); }), outputs);
    write_output(a.out, "truth_" + two_digit(r + 1) + ".csv", to_text([&](std::ostream& o) { write_truth_csv(o, sim); }),
                 outputs);
  }
  const json plan = {{"scenario", a.scenario},    {"profile", a.profile},        {"replicates", cfg.replicates},
                     {"grid_rows", cfg.grid_rows}, {"grid_cols", cfg.grid_cols}, {"visits", cfg.visits},
                     {"beta1", cfg.truth.beta1},   {"detection_prob", cfg.truth.detection_prob}};
  m.config_hash = sha256_hex(plan.dump());
  m.seed = a.seed;
  m.extra = {{"plan", plan}};
  m.outputs = outputs;
  m.finished_at = utc_timestamp();
  m.write(a.out);
  std::cout << "wrote " << cfg.replicates << " data set(s) for scenario " << a.scenario << " to " << a.out.string()
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct McmcFlags {
  fs::path file;
  std::string profile;
  std::optional<int> chains, iterations, burn, thin, neighbors;
  std::optional<std::uint64_t> seed;

  void add_to(CLI::App* app) {
    app->add_option("--mcmc", file, "MCMC settings JSON");
    app->add_option("--profile", profile, "Run-length preset: desk or paper")->check(CLI::IsMember({"desk", "paper"}));
    app->add_option("--chains", chains);
    app->add_option("--iterations", iterations);
    app->add_option("--burn", burn);
    app->add_option("--thin", thin);
    app->add_option("--neighbors", neighbors);
    app->add_option("--seed", seed);
  }

  MCMCConfig resolve(RunManifest& m) const {
    MCMCConfig c = desk_mcmc_profile();
    c.neighbors = MCMCConfig{}.neighbors;
    if (!file.empty()) {
      c = mcmc_from_json(read_json(file));
      m.config_files.push_back(file);
    }
    if (profile == "paper") c = paper_mcmc_profile();
    if (profile == "desk") c = desk_mcmc_profile();
    if (chains) c.n_chains = *chains;
    if (iterations) c.n_iterations = *iterations;
    if (burn) c.n_burn = *burn;
    if (thin) c.n_thin = *thin;
    if (neighbors) c.neighbors = *neighbors;
    if (seed) c.seed = *seed;
    if (auto p = c.problems(); !p.empty()) throw svcsdm::ValidationError(p);
    return c;
  }
};

struct FitArgs {
  fs::path data, spec, schema, out;
  McmcFlags mcmc;
  bool no_strict = false;
  std::optional<int> holdout_season;
  int threads = 1;
};

int cmd_fit(const FitArgs& a, const std::vector<std::string>& argv) {
  RunManifest m = start_manifest("fit", argv);
  m.config_files.push_back(a.spec);
  const OccupancyModelSpec spec = spec_from_json(read_json(a.spec));
  CsvSchema schema = schema_for_spec(spec);
  if (!a.schema.empty()) {
    schema = schema_from_json(read_json(a.schema));
    m.config_files.push_back(a.schema);
  }
  const MCMCConfig config = a.mcmc.resolve(m);
  hash_configs(m);
  m.seed = config.seed;

  const std::string data_bytes = read_file(a.data);
  IngestedData in = ingest_long_csv(a.data, schema);
  std::optional<HoldoutSplit> holdout;
  SamplerOptions options;
  const DetectionData* fit_data = &in.data;
  if (a.holdout_season) {
    const int idx = *a.holdout_season - in.data.first_season;
    if (idx < 0 || idx >= in.data.n_seasons) throw UsageError("holdout season is not in the data");
    holdout = mask_season(in.data, idx);
    options.psi_units = holdout->units;
    fit_data = &holdout->training;
  }
  if (auto p = validate_spec(spec, *fit_data, in.covariates, config.neighbors); !p.empty())
    throw svcsdm::ValidationError(p);

  const auto chains = run_chains(*fit_data, in.covariates, spec, config, options, a.threads);
  FitSummary summary = summarize_fit(chains);
  if (holdout) {
    Eigen::Index rows = 0;
    for (const auto& c : chains) rows += c.psi.rows();
    Eigen::MatrixXd psi(rows, static_cast<Eigen::Index>(holdout->units.size()));
    Eigen::Index at = 0;
    for (const auto& c : chains) {
      psi.middleRows(at, c.psi.rows()) = c.psi;
      at += c.psi.rows();
    }
    summary.holdout_auc = holdout_auc(psi, holdout->labels);
  }

  fs::create_directories(a.out);
  std::vector<std::string> outputs;
  write_output(a.out, "data.csv", data_bytes, outputs);
  json chain_files = json::array();
  std::vector<std::string> unit_header;
  for (const auto& u : chains[0].loglik_units)
    unit_header.push_back(in.data.coords.site_ids[u.site] + "@" + std::to_string(in.data.first_season + u.season));
  for (const auto& c : chains) {
    const std::string k = std::to_string(c.chain_index + 1);
    write_output(a.out, "chain_" + k + ".csv",
                 to_text([&](std::ostream& o) { write_posterior_csv(o, c, in.data.coords.site_ids); }), outputs);
    write_output(a.out, "chain_" + k + ".json", provenance_json(c).dump(2) + "\n", outputs);
    write_output(a.out, "chain_" + k + "_loglik.csv",
                 to_text([&](std::ostream& o) { write_matrix_csv(o, c.loglik, unit_header); }), outputs);
    chain_files.push_back("chain_" + k + ".csv");
  }
  write_output(a.out, "summary.csv", to_text([&](std::ostream& o) { write_summary_csv(o, summary); }), outputs);
  write_output(a.out, "summary.json", to_json(summary).dump(2) + "\n", outputs);

  const FitContext ctx = make_fit_context(spec, in.data, in.covariates, config.neighbors);
  json fit = {{"context", to_json(ctx)},
              {"schema", to_json(schema)},
              {"mcmc", to_json(config)},
              {"data_hash", sha256_hex(data_bytes)},
              {"units", summary.waic.n_units},
              {"waic", summary.waic.waic},
              {"elpd", summary.waic.elpd},
              {"p_waic", summary.waic.p_waic},
              {"pooled_draws", summary.pooled_draws},
              {"max_coefficient_rhat", summary.max_coefficient_rhat},
              {"chain_files", chain_files}};
  if (holdout) {
    fit["holdout_season"] = *a.holdout_season;
    fit["holdout_auc"] = summary.holdout_auc ? json(*summary.holdout_auc) : json(nullptr);
  }
  write_output(a.out, "fit.json", fit.dump(2) + "\n", outputs);
  m.outputs = outputs;
  m.finished_at = utc_timestamp();
  m.write(a.out);

  std::cout << "chains " << summary.n_chains << ", pooled draws " << summary.pooled_draws << "\n";
  std::cout << "WAIC " << format_double(summary.waic.waic) << " (elpd " << format_double(summary.waic.elpd)
            << ", p_waic " << format_double(summary.waic.p_waic) << ")\n";
  if (summary.holdout_auc) std::cout << "holdout AUC " << format_double(*summary.holdout_auc) << "\n";
  std::cout << "R-hat report:\n";
  for (const auto& p : summary.parameters)
    if (is_top_level_coefficient(p.name)) std::cout << "  " << p.name << " " << format_double(p.rhat) << "\n";
  if (summary.max_coefficient_rhat > 1.1) {
    std::cerr << "warning: R-hat " << format_double(summary.max_coefficient_rhat) << " exceeds 1.1\n";
    if (!a.no_strict) throw ExitStatus{1};
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct CompareArgs {
  std::vector<fs::path> fits;
  fs::path out;
};

int cmd_compare(const CompareArgs& a, const std::vector<std::string>& argv) {
  if (a.fits.size() < 2) throw UsageError("compare needs at least two fits");
  RunManifest m = start_manifest("compare", argv);
  struct Row {
    std::string name;
    double waic;
  };
  std::vector<Row> rows;
  std::string hash;
  int units = -1;
  std::string all;
  for (const auto& f : a.fits) {
    const json meta = read_json(f / "fit.json");
    all += read_file(f / "fit.json");
    const std::string h = meta.at("data_hash").get<std::string>();
    const int u = meta.at("units").get<int>();
    if (units >= 0 && (h != hash || u != units))
      throw UsageError("fit " + f.string() + " was run on different data or units than " + a.fits[0].string());
    hash = h;
    units = u;
    rows.push_back({f.string(), meta.at("waic").get<double>()});
  }
  m.config_hash = sha256_hex(all);
  std::stable_sort(rows.begin(), rows.end(), [](const Row& x, const Row& y) { return x.waic < y.waic; });
  std::ostringstream table;
  table << "fit,waic,delta_waic,substantial\n";
  for (const auto& r : rows) {
    const double delta = r.waic - rows[0].waic;
    table << r.name << ',' << format_double(r.waic) << ',' << format_double(delta) << ','
          << (delta > 2.0 ? "yes" : "no") << '\n';
  }
  std::cout << table.str();
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    std::vector<std::string> outputs;
    write_output(a.out, "compare.csv", table.str(), outputs);
    m.outputs = outputs;
    m.finished_at = utc_timestamp();
    m.write(a.out);
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct PredictArgs {
  fs::path fit, grid, out;
  std::uint64_t seed = 1;
  bool mean = false;
  std::string covariate;
  int threads = 1;
};

int cmd_predict(const PredictArgs& a, const std::vector<std::string>& argv) {
  RunManifest m = start_manifest("predict", argv);
  const LoadedFit f = load_fit(a.fit);
  std::ifstream gin(a.grid);
  if (!gin) throw UsageError("cannot read " + a.grid.string());
  const PredictionGrid grid = read_prediction_grid(gin, f.ctx);
  PredictionOptions opt;
  opt.seed = a.seed;
  opt.sample_surfaces = !a.mean;
  opt.effect_covariate = a.covariate;
  opt.threads = a.threads;
  const PredictionSurface surf = predict_surfaces(f.ctx, f.chains, grid, opt);
  m.config_files = {a.fit / "fit.json", a.grid};
  hash_configs(m);
  m.seed = a.seed;
  fs::create_directories(a.out);
  std::vector<std::string> outputs;
  write_output(a.out, "prediction.csv", to_text([&](std::ostream& o) { surf.write_long_csv(o); }), outputs);
  m.outputs = outputs;
  m.finished_at = utc_timestamp();
  m.write(a.out);
  std::cout << "predicted " << grid.cells.size() << " cell(s) over " << surf.psi.rows() << " draw(s)\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct SummarizeArgs {
  fs::path fit, out;
  std::string categories = "trend";
  std::string covariate;
  std::optional<int> season;
};

int cmd_summarize(const SummarizeArgs& a, const std::vector<std::string>& argv) {
  RunManifest m = start_manifest("summarize", argv);
  const LoadedFit f = load_fit(a.fit);
  const IngestedData in = load_fitted_data(a.fit, f.meta);
  const OccurrenceLayout L = make_occurrence_layout(f.ctx.spec);
  std::string cov = a.covariate;
  if (cov.empty()) {
    if (!L.svc.empty())
      cov = L.covariates[L.svc[0]];
    else if (!L.mains.empty())
      cov = L.covariates[L.mains[0].covariate];
    else
      throw UsageError("model has no covariate to summarize");
  }
  int season = f.ctx.n_seasons - 1;
  if (a.season) season = *a.season - f.ctx.first_season;
  if (season < 0 || season >= f.ctx.n_seasons) throw UsageError("season is not in the fitted data");
  const Eigen::MatrixXd draws = site_effect_draws(f.ctx, f.chains, in.covariates, cov, season);

  std::ostringstream sites;
  sites << "site_id,p_positive,category\n";
  std::array<int, kTrendCategoryCount> counts{};
  int n = 0;
  for (Eigen::Index j = 0; j < draws.cols(); ++j) {
    if (std::isnan(draws(0, j))) continue;
    const double p = static_cast<double>((draws.col(j).array() > 0.0).count()) / static_cast<double>(draws.rows());
    const TrendCategory c = categorize_probability(p);
    ++counts[static_cast<int>(c)];
    ++n;
    sites << f.ctx.coords.site_ids[j] << ',' << format_double(p) << ',' << to_string(c) << '\n';
  }
  std::ostringstream cats;
  cats << "category,count,proportion\n";
  for (int k = 0; k < kTrendCategoryCount; ++k)
    cats << to_string(static_cast<TrendCategory>(k)) << ',' << counts[k] << ','
         << format_double(n > 0 ? static_cast<double>(counts[k]) / n : 0.0) << '\n';
  std::cout << "covariate " << cov << ", " << n << " site(s)\n" << cats.str();

  m.config_files = {a.fit / "fit.json"};
  hash_configs(m);
  fs::create_directories(a.out);
  std::vector<std::string> outputs;
  write_output(a.out, "trend_sites.csv", sites.str(), outputs);
  write_output(a.out, "trend_categories.csv", cats.str(), outputs);
  m.extra = {{"covariate", cov}, {"season", f.ctx.first_season + season}};
  m.outputs = outputs;
  m.finished_at = utc_timestamp();
  m.write(a.out);
  return 0;
}

// ---------------------------------------------------------------------------

struct ExperimentArgs {
  std::vector<std::string> scenarios;
  fs::path out;
  std::string profile = "desk";
  std::uint64_t seed = 1;
  int replicates = 0;
  McmcFlags mcmc;
  int threads = 1;
};

int cmd_experiment(const ExperimentArgs& a, const std::vector<std::string>& argv) {
  RunManifest m = start_manifest("experiment", argv);
  const StudyProfile profile = a.profile == "paper" ? StudyProfile::kPaper : StudyProfile::kDesk;
  std::vector<ScenarioConfig> configs;
  const auto names = a.scenarios.empty() ? scenario_names() : a.scenarios;
  for (const auto& n : names) {
    const auto sc = parse_scenario(n);
    if (!sc) throw UsageError("unknown scenario '" + n + "'");
    configs.push_back(scenario_preset(*sc, profile, a.seed));
    if (a.replicates > 0) configs.back().replicates = a.replicates;
  }
  McmcFlags flags = a.mcmc;
  if (flags.profile.empty() && flags.file.empty()) flags.profile = a.profile;
  ExperimentOptions opt;
  opt.mcmc = flags.resolve(m);
  if (!flags.neighbors && flags.file.empty()) opt.mcmc.neighbors = desk_mcmc_profile().neighbors;
  opt.threads = a.threads;
  opt.on_cell = [](const ExperimentCell& c) {
    std::cerr << to_string(c.scenario) << " #" << c.replicate + 1 << " " << to_string(c.model) << ": WAIC "
              << format_double(c.waic.waic) << "\n";
  };
  const ExperimentResult result = run_experiment(configs, opt);

  const json plan = {{"scenarios", names}, {"profile", a.profile}, {"mcmc", to_json(opt.mcmc)}};
  m.config_hash = sha256_hex(plan.dump());
  m.seed = a.seed;
  m.extra = {{"plan", plan}};
  fs::create_directories(a.out);
  std::vector<std::string> outputs;
  write_output(a.out, "experiment.csv", to_text([&](std::ostream& o) { result.write_csv(o); }), outputs);
  write_output(a.out, "aggregate.csv", to_text([&](std::ostream& o) { result.write_aggregate_csv(o); }), outputs);
  for (const auto& cfg : configs) {
    const ScenarioData sim = generate_scenario(cfg, 0);
    write_output(a.out, "effects_" + to_string(cfg.scenario) + ".csv",
                 to_text([&](std::ostream& o) { write_effect_surfaces_csv(o, sim, result, 0); }), outputs);
  }
  m.outputs = outputs;
  m.finished_at = utc_timestamp();
  m.write(a.out);
  result.write_aggregate_csv(std::cout);
  return 0;
}

void print_problems(const std::string& head, const std::vector<std::string>& problems) {
  std::cerr << "error: " << head << "\n";
  for (const auto& p : problems) std::cerr << "  - " << p << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Occupancy models with spatially-varying coefficients"};
  app.require_subcommand(1);
  const std::vector<std::string> args(argv + 1, argv + argc);
  int threads = default_thread_count();
  app.add_option("--threads", threads, "Worker threads (default: SVC_SDM_THREADS or hardware)");

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Generate a simulation scenario");
  s->add_option("--scenario", sim.scenario, "linear, quadratic, stratum, interaction, missing-interaction or full")
      ->required();
  s->add_option("--out", sim.out, "Output directory")->required();
  s->add_option("--seed", sim.seed);
  s->add_option("--profile", sim.profile)->check(CLI::IsMember({"desk", "paper"}));
  s->add_option("--replicates", sim.replicates, "Override the profile's data-set count");

  FitArgs fit;
  auto* f = app.add_subcommand("fit", "Fit an occupancy model");
  f->add_option("--data", fit.data, "Long-format detection CSV")->required();
  f->add_option("--spec", fit.spec, "Model specification JSON")->required();
  f->add_option("--schema", fit.schema, "Column mapping JSON (default: columns named in the spec)");
  f->add_option("--out", fit.out, "Output directory")->required();
  f->add_flag("--no-strict", fit.no_strict, "Exit 0 even when R-hat exceeds 1.1");
  f->add_option("--holdout-season", fit.holdout_season, "Season withheld for AUC scoring");
  fit.mcmc.add_to(f);

  CompareArgs cmp;
  auto* c = app.add_subcommand("compare", "Rank fits by WAIC");
  c->add_option("--fits", cmp.fits, "Fit directories")->required();
  c->add_option("--out", cmp.out, "Output directory");

  PredictArgs pred;
  auto* p = app.add_subcommand("predict", "Predict surfaces on a grid");
  p->add_option("--fit", pred.fit)->required();
  p->add_option("--grid", pred.grid)->required();
  p->add_option("--out", pred.out)->required();
  p->add_option("--seed", pred.seed);
  p->add_flag("--mean", pred.mean, "Use kriging means instead of predictive draws");
  p->add_option("--covariate", pred.covariate);

  SummarizeArgs sum;
  auto* u = app.add_subcommand("summarize", "Per-site trend categories");
  u->add_option("--fit", sum.fit)->required();
  u->add_option("--out", sum.out)->required();
  u->add_option("--categories", sum.categories)->check(CLI::IsMember({"trend"}));
  u->add_option("--covariate", sum.covariate);
  u->add_option("--season", sum.season);

  ExperimentArgs exp;
  auto* e = app.add_subcommand("experiment", "Fit the five forms to simulated scenarios");
  e->add_option("--scenarios", exp.scenarios);
  e->add_option("--out", exp.out)->required();
  e->add_option("--data-seed", exp.seed, "Seed of the generated data sets");
  e->add_option("--replicates", exp.replicates);
  e->add_option("--study-profile", exp.profile)->check(CLI::IsMember({"desk", "paper"}));
  exp.mcmc.add_to(e);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return 2;
  }

  try {
    if (*s) return cmd_simulate(sim, args);
    if (*f) {
      fit.threads = threads;
      return cmd_fit(fit, args);
    }
    if (*c) return cmd_compare(cmp, args);
    if (*p) {
      pred.threads = threads;
      return cmd_predict(pred, args);
    }
    if (*u) return cmd_summarize(sum, args);
    if (*e) {
      exp.threads = threads;
      return cmd_experiment(exp, args);
    }
  } catch (const ExitStatus& st) {
    return st.code;
  } catch (const UsageError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  } catch (const svcsdm::ValidationError& ex) {
    print_problems("invalid model or configuration", ex.problems());
    return 2;
  } catch (const IngestError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  } catch (const NumericError& ex) {
    std::cerr << "numeric failure: " << ex.what() << "\n";
    return 1;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 2;
}
