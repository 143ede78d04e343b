#include "svcsdm/sim_study.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "svcsdm/errors.hpp"
#include "svcsdm/mcmc.hpp"
#include "svcsdm/occupancy.hpp"
#include "svcsdm/parallel.hpp"
#include "svcsdm/rng.hpp"
#include "svcsdm/spatial_gp.hpp"

namespace svcsdm {

const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names{"linear",      "quadratic",           "stratum",
                                              "interaction", "missing-interaction", "full"};
  return names;
}

std::string to_string(Scenario s) { return scenario_names()[static_cast<int>(s)]; }

std::optional<Scenario> parse_scenario(const std::string& name) {
  const auto& n = scenario_names();
  auto it = std::find(n.begin(), n.end(), name);
  if (it == n.end()) return std::nullopt;
  return static_cast<Scenario>(it - n.begin());
}

const std::vector<std::string>& model_form_names() {
  static const std::vector<std::string> names{"linear", "quadratic", "stratum", "interaction", "svc"};
  return names;
}

std::string to_string(ModelForm m) { return model_form_names()[static_cast<int>(m)]; }

std::optional<ModelForm> parse_model_form(const std::string& name) {
  const auto& n = model_form_names();
  auto it = std::find(n.begin(), n.end(), name);
  if (it == n.end()) return std::nullopt;
  return static_cast<ModelForm>(it - n.begin());
}

OccupancyModelSpec model_spec(ModelForm form) {
  OccupancyModelSpec spec;
  spec.occurrence.push_back({OccurrenceTermKind::kIntercept, "", ""});
  switch (form) {
    case ModelForm::kLinear: spec.occurrence.push_back({OccurrenceTermKind::kLinear, kSimCovariate, ""}); break;
    case ModelForm::kQuadratic: spec.occurrence.push_back({OccurrenceTermKind::kQuadratic, kSimCovariate, ""}); break;
    case ModelForm::kStratum:
      spec.occurrence.push_back({OccurrenceTermKind::kStratum, kSimCovariate, kSimStrata});
      break;
    case ModelForm::kInteraction:
      spec.occurrence.push_back({OccurrenceTermKind::kInteraction, kSimCovariate, kSimModifier});
      break;
    case ModelForm::kSvc: spec.occurrence.push_back({OccurrenceTermKind::kSvc, kSimCovariate, ""}); break;
  }
  spec.detection.push_back({DetectionTermKind::kIntercept, ""});
  return spec;
}

std::vector<std::string> ScenarioConfig::problems() const {
  std::vector<std::string> p;
  if (grid_rows < 1 || grid_cols < 1) p.push_back("grid must have at least one row and column");
  if ((scenario == Scenario::kStratum || scenario == Scenario::kFull) && (grid_rows < 3 || grid_cols < 3))
    p.push_back("nine strata need a grid of at least 3 x 3");
  if (grid_rows * grid_cols < 2) p.push_back("grid needs at least two sites");
  if (replicates < 1) p.push_back("replicates must be >= 1");
  if (visits < 1) p.push_back("visits must be >= 1");
  if (!(truth.detection_prob > 0.0 && truth.detection_prob < 1.0)) p.push_back("detection probability must be in (0, 1)");
  if (!(truth.hidden_sigma2 > 0.0)) p.push_back("hidden surface variance must be positive");
  if (!(truth.hidden_range_fraction > 0.0)) p.push_back("hidden surface range must be positive");
  return p;
}

ScenarioConfig scenario_preset(Scenario scenario, StudyProfile profile, std::uint64_t seed) {
  ScenarioConfig c;
  c.scenario = scenario;
  c.replicates = profile == StudyProfile::kPaper ? 50 : 10;
  c.seed = seed;
  return c;
}

namespace {

// Splits n into three near-equal consecutive blocks (larger blocks first) and
// returns the block of index i.
int block_of(int i, int n) {
  const int base = n / 3, extra = n % 3;
  int upper = 0;
  for (int b = 0; b < 3; ++b) {
    upper += base + (b < extra ? 1 : 0);
    if (i < upper) return b;
  }
  return 2;
}

std::vector<double> standardized(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  std::vector<double> out;
  for (double x : v) out.push_back(sd > 0.0 ? (x - mean) / sd : 0.0);
  return out;
}

std::string site_id(int i, int n) {
  const int width = static_cast<int>(std::to_string(n).size());
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%0*d", width, i + 1);
  return buf;
}

}  // namespace

ScenarioData generate_scenario(const ScenarioConfig& config, int replicate) {
  if (auto p = config.problems(); !p.empty()) throw ValidationError(p);
  if (replicate < 0) throw std::invalid_argument("replicate index must be >= 0");
  const int R = config.grid_rows, Cn = config.grid_cols, J = R * Cn;
  const TrueCoefficients& tc = config.truth;
  Rng rng(stream_seed(stream_seed(config.seed, static_cast<std::uint64_t>(config.scenario)),
                      static_cast<std::uint64_t>(replicate)));

  ScenarioData out;
  out.scenario = config.scenario;
  auto& coords = out.data.coords;
  std::vector<int> block(J);
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < Cn; ++c) {
      const int j = r * Cn + c;
      coords.site_ids.push_back(site_id(j, J));
      coords.easting.push_back(c);
      coords.northing.push_back(r);
      block[j] = 3 * block_of(r, R) + block_of(c, Cn) + 1;
    }

  // Covariates: noisy standardised northing, and standardised easting.
  const std::vector<double> north_std = standardized(coords.northing);
  const std::vector<double> xstar = standardized(coords.easting);
  std::vector<double> x(J);
  for (int j = 0; j < J; ++j) x[j] = north_std[j] + 0.25 * rng.normal();

  // Hidden interacting surface: exact GP draw.
  const double diagonal = std::hypot(Cn - 1.0, R - 1.0);
  const double range = tc.hidden_range_fraction * diagonal;
  const SpatialParams hp{tc.hidden_sigma2, 3.0 / range};
  const Eigen::MatrixXd K = dense_covariance(coords, hp);
  Eigen::LLT<Eigen::MatrixXd> llt(K);
  if (llt.info() != Eigen::Success) throw NumericError("hidden surface covariance is not positive definite");
  Eigen::VectorXd eps(J);
  for (int j = 0; j < J; ++j) eps(j) = rng.normal();
  const Eigen::VectorXd h = llt.matrixL() * eps;

  ScenarioTruth& truth = out.truth;
  truth.hidden.assign(h.data(), h.data() + J);
  for (auto& comp : truth.components) comp.resize(J);
  truth.effect.resize(J);
  truth.logit_psi.resize(J);
  truth.psi.resize(J);
  truth.z.resize(J);
  const Scenario sc = config.scenario;
  for (int j = 0; j < J; ++j) {
    // Contribution of each component to logit(psi) and to its derivative in x.
    const std::array<double, 5> term{tc.beta1 * x[j], tc.beta_quadratic * x[j] * x[j],
                                     tc.stratum_dev[block[j] - 1] * x[j], tc.beta_interaction * xstar[j] * x[j],
                                     truth.hidden[j] * x[j]};
    const std::array<double, 5> slope{tc.beta1, 2.0 * tc.beta_quadratic * x[j], tc.stratum_dev[block[j] - 1],
                                      tc.beta_interaction * xstar[j], truth.hidden[j]};
    for (int k = 0; k < 5; ++k) truth.components[k][j] = slope[k];
    double lp = tc.beta0 + term[0];
    double eff = slope[0];
    if (sc == Scenario::kFull) {
      lp = tc.beta0;
      eff = 0.0;
      for (int k = 0; k < 5; ++k) {
        lp += term[k];
        eff += slope[k];
      }
    } else if (sc != Scenario::kLinear) {
      const int k = static_cast<int>(sc);  // quadratic=1 ... missing-interaction=4
      lp += term[k];
      eff += slope[k];
    }
    truth.logit_psi[j] = lp;
    truth.effect[j] = eff;
    truth.psi[j] = logistic(lp);
  }

  // Latent occupancy and detections.
  auto& data = out.data;
  data.first_season = 1;
  data.n_seasons = 1;
  data.max_replicates = config.visits;
  data.y.assign(static_cast<std::size_t>(J) * config.visits, 0);
  for (int j = 0; j < J; ++j) {
    truth.z[j] = rng.bernoulli(truth.psi[j]) ? 1 : 0;
    for (int k = 0; k < config.visits; ++k)
      data.at(j, 0, k) = truth.z[j] && rng.bernoulli(tc.detection_prob) ? 1 : 0;
  }

  auto& covs = out.covariates;
  covs.n_sites = J;
  covs.n_seasons = 1;
  covs.max_replicates = config.visits;
  covs.occurrence.push_back({kSimCovariate, x, x, {}});
  covs.occurrence.push_back({kSimModifier, xstar, xstar, {}});
  covs.strata.push_back({kSimStrata, block, 9});
  return out;
}

CsvSchema simulation_schema() {
  CsvSchema s;
  s.occurrence_covariates = {kSimCovariate, kSimModifier};
  s.strata = {kSimStrata};
  s.standardize = false;
  return s;
}

void write_truth_csv(std::ostream& out, const ScenarioData& sim) {
  out << "site_id,easting,northing,x,xstar,block,hidden";
  for (const char* n : kComponentNames) out << ",effect_" << n;
  out << ",effect,psi,z\n";
  const auto& c = sim.data.coords;
  for (int j = 0; j < sim.data.n_sites(); ++j) {
    out << c.site_ids[j] << ',' << format_double(c.easting[j]) << ',' << format_double(c.northing[j]) << ','
        << format_double(sim.covariates.occurrence[0].values[j]) << ','
        << format_double(sim.covariates.occurrence[1].values[j]) << ',' << sim.covariates.strata[0].labels[j] << ','
        << format_double(sim.truth.hidden[j]);
    for (const auto& comp : sim.truth.components) out << ',' << format_double(comp[j]);
    out << ',' << format_double(sim.truth.effect[j]) << ',' << format_double(sim.truth.psi[j]) << ','
        << sim.truth.z[j] << '\n';
  }
}

// ---------------------------------------------------------------------------

ExperimentCell run_cell(const ScenarioConfig& config, int replicate, ModelForm model, const MCMCConfig& mcmc) {
  const ScenarioData sim = generate_scenario(config, replicate);
  const OccupancyModelSpec spec = model_spec(model);
  MCMCConfig cfg = mcmc;
  cfg.seed = stream_seed(stream_seed(mcmc.seed, static_cast<std::uint64_t>(config.scenario) * 1000003ULL +
                                                    static_cast<std::uint64_t>(replicate)),
                         static_cast<std::uint64_t>(model));
  const auto chains = run_chains(sim.data, sim.covariates, spec, cfg, {}, 1);
  const FitContext ctx = make_fit_context(spec, sim.data, sim.covariates, cfg.neighbors);
  const FitSummary summary = summarize_fit(chains);

  ExperimentCell cell;
  cell.scenario = config.scenario;
  cell.replicate = replicate;
  cell.model = model;
  cell.waic = summary.waic;
  cell.max_rhat = summary.max_coefficient_rhat;
  cell.converged = cell.max_rhat <= 1.1;
  for (const auto& p : summary.parameters)
    if (p.name == std::string("beta[") + kSimCovariate + "]") {
      cell.beta1_median = p.median;
      cell.beta1_q025 = p.q025;
      cell.beta1_q975 = p.q975;
      cell.beta1_covered = p.q025 <= config.truth.beta1 && config.truth.beta1 <= p.q975;
    }

  const Eigen::MatrixXd eff = site_effect_draws(ctx, chains, sim.covariates, kSimCovariate, 0);
  const int J = sim.data.n_sites();
  double se = 0.0;
  int covered = 0;
  cell.effect_median.resize(J);
  for (int j = 0; j < J; ++j) {
    std::vector<double> v(eff.col(j).data(), eff.col(j).data() + eff.rows());
    const double med = quantile(v, 0.5);
    cell.effect_median[j] = med;
    se += (med - sim.truth.effect[j]) * (med - sim.truth.effect[j]);
    if (quantile(v, 0.025) <= sim.truth.effect[j] && sim.truth.effect[j] <= quantile(v, 0.975)) ++covered;
  }
  cell.effect_rmse = std::sqrt(se / J);
  cell.effect_coverage = static_cast<double>(covered) / J;

  if (model == ModelForm::kSvc) {
    std::vector<double> med(J);
    const std::string name = std::string("w1[") + kSimCovariate + "]";
    std::vector<double> pooled;
    for (int j = 0; j < J; ++j) {
      pooled.clear();
      for (const auto& ch : chains) {
        const Eigen::MatrixXd* s = ch.surface(name);
        for (Eigen::Index d = 0; d < s->rows(); ++d) pooled.push_back((*s)(d, j));
      }
      med[j] = quantile(pooled, 0.5);
    }
    const double m = std::accumulate(med.begin(), med.end(), 0.0) / J;
    double ss = 0.0;
    for (double v : med) ss += (v - m) * (v - m);
    cell.w1_spatial_sd = std::sqrt(ss / J);
  }
  return cell;
}

ExperimentResult run_experiment(const std::vector<ScenarioConfig>& configs, const ExperimentOptions& options) {
  struct Job {
    int config;
    int replicate;
    ModelForm model;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < configs.size(); ++c) {
    if (auto p = configs[c].problems(); !p.empty()) throw ValidationError(p);
    for (int r = 0; r < configs[c].replicates; ++r)
      for (ModelForm m : options.models) jobs.push_back({static_cast<int>(c), r, m});
  }
  ExperimentResult result;
  result.cells.resize(jobs.size());
  std::mutex mu;
  parallel_for(jobs.size(), options.threads, [&](std::size_t i) {
    const Job& job = jobs[i];
    result.cells[i] = run_cell(configs[job.config], job.replicate, job.model, options.mcmc);
    if (options.on_cell) {
      std::lock_guard lock(mu);
      options.on_cell(result.cells[i]);
    }
  });

  // Aggregates per (scenario, model), ranking models within each data set by WAIC.
  for (const auto& cfg : configs) {
    std::vector<ModelAggregate> agg;
    for (ModelForm m : options.models) agg.push_back({cfg.scenario, m, 0.0, 0.0, 0.0, 0, 0, 0});
    for (int r = 0; r < cfg.replicates; ++r) {
      std::vector<const ExperimentCell*> row;
      for (ModelForm m : options.models)
        for (const auto& c : result.cells)
          if (c.scenario == cfg.scenario && c.replicate == r && c.model == m) row.push_back(&c);
      for (std::size_t a = 0; a < row.size(); ++a) {
        double rank = 1.0;
        for (std::size_t b = 0; b < row.size(); ++b) {
          if (b == a) continue;
          if (row[b]->waic.waic < row[a]->waic.waic) rank += 1.0;
          else if (row[b]->waic.waic == row[a]->waic.waic) rank += 0.5;
        }
        auto& g = agg[a];
        g.mean_waic += row[a]->waic.waic;
        g.mean_rank += rank;
        g.mean_effect_rmse += row[a]->effect_rmse;
        g.beta1_covered += row[a]->beta1_covered ? 1 : 0;
        g.nonconverged += row[a]->converged ? 0 : 1;
        g.replicates += 1;
      }
    }
    for (auto& g : agg) {
      if (g.replicates == 0) continue;
      g.mean_waic /= g.replicates;
      g.mean_rank /= g.replicates;
      g.mean_effect_rmse /= g.replicates;
    }
    result.aggregates.insert(result.aggregates.end(), agg.begin(), agg.end());
  }
  return result;
}

const ExperimentCell& ExperimentResult::cell(Scenario s, int replicate, ModelForm m) const {
  for (const auto& c : cells)
    if (c.scenario == s && c.replicate == replicate && c.model == m) return c;
  throw std::out_of_range("no such experiment cell");
}

const ModelAggregate& ExperimentResult::aggregate(Scenario s, ModelForm m) const {
  for (const auto& a : aggregates)
    if (a.scenario == s && a.model == m) return a;
  throw std::out_of_range("no such experiment aggregate");
}

void ExperimentResult::write_csv(std::ostream& out) const {
  out << "scenario,replicate,model,waic,elpd,p_waic,effect_rmse,effect_coverage,beta1_median,beta1_q2.5,"
         "beta1_q97.5,beta1_covered,max_rhat,converged,w1_spatial_sd\n";
  for (const auto& c : cells)
    out << to_string(c.scenario) << ',' << c.replicate + 1 << ',' << to_string(c.model) << ','
        << format_double(c.waic.waic) << ',' << format_double(c.waic.elpd) << ',' << format_double(c.waic.p_waic)
        << ',' << format_double(c.effect_rmse) << ',' << format_double(c.effect_coverage) << ','
        << format_double(c.beta1_median) << ',' << format_double(c.beta1_q025) << ','
        << format_double(c.beta1_q975) << ',' << (c.beta1_covered ? 1 : 0) << ',' << format_double(c.max_rhat)
        << ',' << (c.converged ? 1 : 0) << ',' << format_double(c.w1_spatial_sd) << '\n';
}

void ExperimentResult::write_aggregate_csv(std::ostream& out) const {
  out << "scenario,model,replicates,mean_waic,mean_rank,mean_effect_rmse,beta1_covered,nonconverged\n";
  for (const auto& a : aggregates)
    out << to_string(a.scenario) << ',' << to_string(a.model) << ',' << a.replicates << ','
        << format_double(a.mean_waic) << ',' << format_double(a.mean_rank) << ','
        << format_double(a.mean_effect_rmse) << ',' << a.beta1_covered << ',' << a.nonconverged << '\n';
}

void write_effect_surfaces_csv(std::ostream& out, const ScenarioData& sim, const ExperimentResult& result,
                               int replicate) {
  out << "cell_x,cell_y,statistic,value\n";
  std::vector<const ExperimentCell*> fits;
  for (const auto& c : result.cells)
    if (c.scenario == sim.scenario && c.replicate == replicate &&
        static_cast<int>(c.effect_median.size()) == sim.data.n_sites() &&
        sim.truth.effect.size() == c.effect_median.size())
      fits.push_back(&c);
  const auto& co = sim.data.coords;
  for (int j = 0; j < sim.data.n_sites(); ++j) {
    const std::string prefix = format_double(co.easting[j]) + "," + format_double(co.northing[j]) + ",";
    out << prefix << "truth_effect," << format_double(sim.truth.effect[j]) << '\n';
    for (const auto* c : fits)
      out << prefix << to_string(c->model) << "_effect_median," << format_double(c->effect_median[j]) << '\n';
  }
}

}  // namespace svcsdm
