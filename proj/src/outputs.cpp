#include "svcsdm/outputs.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "svcsdm/errors.hpp"
#include "svcsdm/parallel.hpp"
#include "svcsdm/spatial_gp.hpp"

namespace svcsdm {

namespace {

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Sample variance with the n - 1 denominator.
double var_of(std::span<const double> v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

void check_chains(const std::vector<std::vector<double>>& chains, std::size_t min_len) {
  if (chains.empty()) throw std::invalid_argument("no chains");
  const std::size_t n = chains[0].size();
  for (const auto& c : chains)
    if (c.size() != n) throw std::invalid_argument("chains differ in length");
  if (n < min_len) throw std::invalid_argument("chains are too short");
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (c == '"') {
      if (quoted && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else {
        quoted = !quoted;
      }
    } else if (c == ',' && !quoted) {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

}  // namespace

double rhat(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) throw std::invalid_argument("rhat needs at least two chains");
  check_chains(chains, 4);
  const std::size_t n = chains[0].size();
  const std::size_t h = n / 2;
  std::vector<std::span<const double>> halves;
  for (const auto& c : chains) {
    halves.emplace_back(c.data(), h);
    halves.emplace_back(c.data() + (n - h), h);
  }
  const double M = static_cast<double>(halves.size());
  std::vector<double> means;
  double W = 0.0;
  for (const auto& s : halves) {
    means.push_back(mean_of(s));
    W += var_of(s);
  }
  W /= M;
  const double grand = mean_of(means);
  double B = 0.0;
  for (double m : means) B += (m - grand) * (m - grand);
  B *= static_cast<double>(h) / (M - 1.0);
  if (W == 0.0) {
    const double first = chains[0][0];
    for (const auto& c : chains)
      for (double v : c)
        if (v != first) return INFINITY;
    return 1.0;
  }
  const double hd = static_cast<double>(h);
  const double v_hat = (hd - 1.0) / hd * W + B / hd;
  return std::sqrt(v_hat / W);
}

double ess(const std::vector<std::vector<double>>& chains) {
  check_chains(chains, 4);
  const std::size_t n = chains[0].size();
  const double M = static_cast<double>(chains.size());
  const double nd = static_cast<double>(n);
  std::vector<std::vector<double>> acov(chains.size(), std::vector<double>(n, 0.0));
  std::vector<double> means;
  for (std::size_t c = 0; c < chains.size(); ++c) {
    const double m = mean_of(chains[c]);
    means.push_back(m);
    for (std::size_t t = 0; t < n; ++t) {
      double s = 0.0;
      for (std::size_t i = 0; i + t < n; ++i) s += (chains[c][i] - m) * (chains[c][i + t] - m);
      acov[c][t] = s / nd;
    }
  }
  double W = 0.0;
  for (const auto& a : acov) W += a[0] * nd / (nd - 1.0);
  W /= M;
  double B = 0.0;
  if (chains.size() > 1) {
    const double grand = mean_of(means);
    for (double m : means) B += (m - grand) * (m - grand);
    B *= nd / (M - 1.0);
  }
  const double var_plus = (nd - 1.0) / nd * W + B / nd;
  if (!(var_plus > 0.0)) return M * nd;
  auto rho = [&](std::size_t t) {
    double a = 0.0;
    for (const auto& c : acov) a += c[t];
    a /= M;
    return 1.0 - (W - a) / var_plus;
  };
  // Geyer: sum of adjacent pairs while positive, made monotone.
  double tau = -1.0;
  double prev_pair = INFINITY;
  for (std::size_t t = 0; t + 1 < n; t += 2) {
    double pair = rho(t) + rho(t + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    tau += 2.0 * pair;
  }
  tau = std::max(tau, 1.0 / std::log10(M * nd));
  return M * nd / tau;
}

WaicResult waic(const Eigen::MatrixXd& loglik, const std::vector<std::string>& unit_names) {
  const Eigen::Index S = loglik.rows();
  if (S < 2) throw std::invalid_argument("waic needs at least two draws");
  WaicResult r;
  r.n_units = static_cast<int>(loglik.cols());
  std::vector<double> col(S);
  for (Eigen::Index i = 0; i < loglik.cols(); ++i) {
    double mx = -INFINITY;
    for (Eigen::Index s = 0; s < S; ++s) {
      col[s] = loglik(s, i);
      if (!std::isfinite(col[s])) {
        const std::string unit =
            static_cast<std::size_t>(i) < unit_names.size() ? unit_names[i] : "unit " + std::to_string(i);
        throw NumericError("non-finite log-likelihood at " + unit);
      }
      mx = std::max(mx, col[s]);
    }
    double acc = 0.0;
    for (double v : col) acc += std::exp(v - mx);
    const double lppd_i = mx + std::log(acc / static_cast<double>(S));
    const double v = var_of(col);
    r.lppd += lppd_i;
    r.p_waic += v;
  }
  r.elpd = r.lppd - r.p_waic;
  r.waic = -2.0 * r.elpd;
  return r;
}

std::optional<double> auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  double n1 = 0.0, n0 = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    // Average of the 1-based ranks i+1 .. j.
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]]) {
        n1 += 1.0;
        rank_sum += avg;
      } else {
        n0 += 1.0;
      }
    }
    i = j;
  }
  if (n1 == 0.0 || n0 == 0.0) return std::nullopt;
  return (rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0);
}

std::optional<double> holdout_auc(const Eigen::MatrixXd& score_draws, std::span<const int> labels) {
  if (score_draws.rows() == 0) return std::nullopt;
  double total = 0.0;
  std::vector<double> row(score_draws.cols());
  for (Eigen::Index d = 0; d < score_draws.rows(); ++d) {
    for (Eigen::Index i = 0; i < score_draws.cols(); ++i) row[i] = score_draws(d, i);
    const auto a = auc(row, labels);
    if (!a) return std::nullopt;
    total += *a;
  }
  return total / static_cast<double>(score_draws.rows());
}

HoldoutSplit mask_season(const DetectionData& data, int season) {
  if (season < 0 || season >= data.n_seasons) throw std::invalid_argument("holdout season out of range");
  HoldoutSplit out;
  out.training = data;
  for (int j = 0; j < data.n_sites(); ++j) {
    if (!data.sampled(j, season)) continue;
    out.units.push_back({j, season});
    out.labels.push_back(data.detected(j, season) ? 1 : 0);
    for (int k = 0; k < data.max_replicates; ++k) out.training.at(j, season, k) = DetectionData::kMissingObs;
  }
  return out;
}

TrendCategory categorize_probability(double p) {
  if (std::isnan(p) || p < 0.0 || p > 1.0) throw std::invalid_argument("probability outside [0, 1]");
  if (p > 0.8) return TrendCategory::kStrongPositive;
  if (p > 0.6) return TrendCategory::kModeratePositive;
  if (p > 0.4) return TrendCategory::kNoEffect;
  if (p >= 0.2) return TrendCategory::kModerateNegative;
  return TrendCategory::kStrongNegative;
}

std::vector<TrendCategory> categorize_trend(const Eigen::MatrixXd& draws) {
  if (draws.rows() < 1) throw std::invalid_argument("no trend draws");
  std::vector<TrendCategory> out;
  for (Eigen::Index j = 0; j < draws.cols(); ++j) {
    const double pos = static_cast<double>((draws.col(j).array() > 0.0).count());
    out.push_back(categorize_probability(pos / static_cast<double>(draws.rows())));
  }
  return out;
}

std::string to_string(TrendCategory c) {
  switch (c) {
    case TrendCategory::kStrongPositive: return "Strong Positive";
    case TrendCategory::kModeratePositive: return "Moderate Positive";
    case TrendCategory::kNoEffect: return "No effect";
    case TrendCategory::kModerateNegative: return "Moderate Negative";
    case TrendCategory::kStrongNegative: return "Strong Negative";
  }
  return "";
}

double quantile(std::vector<double> v, double prob) {
  if (v.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// ---------------------------------------------------------------------------

FitContext make_fit_context(const OccupancyModelSpec& spec, const DetectionData& data, const CovariateSet& covs,
                            int neighbors) {
  FitContext ctx;
  ctx.spec = spec;
  ctx.coords = data.coords;
  for (const auto& c : covs.occurrence) ctx.transforms[c.name] = c.transform;
  for (const auto& c : covs.detection) ctx.transforms[c.name] = c.transform;
  for (const auto& s : covs.strata) ctx.n_strata[s.name] = s.n_strata;
  ctx.first_season = data.first_season;
  ctx.n_seasons = data.n_seasons;
  ctx.max_replicates = data.max_replicates;
  ctx.neighbors = neighbors;
  return ctx;
}

nlohmann::json to_json(const FitContext& ctx) {
  nlohmann::json sites = nlohmann::json::array();
  for (std::size_t j = 0; j < ctx.coords.size(); ++j)
    sites.push_back({{"id", ctx.coords.site_ids[j]}, {"easting", ctx.coords.easting[j]},
                     {"northing", ctx.coords.northing[j]}});
  nlohmann::json tr = nlohmann::json::object();
  for (const auto& [name, t] : ctx.transforms) tr[name] = {{"mean", t.mean}, {"sd", t.sd}};
  return {{"spec", to_json(ctx.spec)},      {"sites", sites},
          {"transforms", tr},               {"n_strata", ctx.n_strata},
          {"first_season", ctx.first_season}, {"n_seasons", ctx.n_seasons},
          {"max_replicates", ctx.max_replicates}, {"neighbors", ctx.neighbors}};
}

FitContext fit_context_from_json(const nlohmann::json& j) {
  FitContext ctx;
  ctx.spec = spec_from_json(j.at("spec"));
  for (const auto& s : j.at("sites")) {
    ctx.coords.site_ids.push_back(s.at("id").get<std::string>());
    ctx.coords.easting.push_back(s.at("easting").get<double>());
    ctx.coords.northing.push_back(s.at("northing").get<double>());
  }
  for (const auto& [name, t] : j.at("transforms").items())
    ctx.transforms[name] = {t.at("mean").get<double>(), t.at("sd").get<double>()};
  ctx.n_strata = j.at("n_strata").get<std::map<std::string, int>>();
  ctx.first_season = j.at("first_season").get<int>();
  ctx.n_seasons = j.at("n_seasons").get<int>();
  ctx.max_replicates = j.at("max_replicates").get<int>();
  ctx.neighbors = j.at("neighbors").get<int>();
  return ctx;
}

DrawDecoder::DrawDecoder(const FitContext& ctx, const PosteriorChain& chain)
    : chain_(chain), layout_(make_occurrence_layout(ctx.spec)) {
  auto col = [&](const std::string& name) {
    const int c = chain.param_index(name);
    if (c < 0) throw ContractError("posterior lacks column '" + name + "'");
    return c;
  };
  for (const auto& n : occurrence_coefficient_names(ctx.spec)) beta_cols_.push_back(col("beta[" + n + "]"));
  for (const auto& st : layout_.strata) {
    const std::string& labels = layout_.label_sets[st.labels];
    const std::string tag = layout_.covariates[st.covariate] + "|" + labels;
    auto it = ctx.n_strata.find(labels);
    if (it == ctx.n_strata.end()) throw ContractError("fit context lacks stratum set '" + labels + "'");
    std::vector<int> cols;
    for (int k = 1; k <= it->second; ++k) cols.push_back(col("beta_stratum[" + tag + "][" + std::to_string(k) + "]"));
    stratum_cols_.push_back(std::move(cols));
  }
  for (const auto& n : detection_coefficient_names(ctx.spec, ctx.max_replicates))
    alpha_cols_.push_back(col("alpha[" + n + "]"));
  if (layout_.spatial_intercept) surface_names_.push_back("w0");
  for (int c : layout_.svc) surface_names_.push_back("w1[" + layout_.covariates[c] + "]");
  for (const auto& s : surface_names_) {
    sigma2_cols_.push_back(col("sigma2[" + s + "]"));
    phi_cols_.push_back(col("phi[" + s + "]"));
    int found = -1;
    for (std::size_t i = 0; i < chain.surface_names.size(); ++i)
      if (chain.surface_names[i] == s) found = static_cast<int>(i);
    surface_index_.push_back(found);
  }
  if (layout_.ar1) {
    for (int t = 0; t < ctx.n_seasons; ++t) eta_cols_.push_back(col("eta[" + std::to_string(ctx.first_season + t) + "]"));
    sigma2_eta_col_ = col("sigma2_eta");
    rho_col_ = col("rho");
  }
}

OccurrenceParams DrawDecoder::occurrence(int d, bool with_surfaces) const {
  OccurrenceParams p;
  for (int c : beta_cols_) p.beta.push_back(chain_.draws(d, c));
  for (const auto& cols : stratum_cols_) {
    std::vector<double> dev;
    for (int c : cols) dev.push_back(chain_.draws(d, c));
    p.stratum_dev.push_back(std::move(dev));
  }
  if (with_surfaces) {
    for (std::size_t r = 0; r < surface_names_.size(); ++r) {
      if (surface_index_[r] < 0) throw ContractError("posterior lacks surface '" + surface_names_[r] + "'");
      const Eigen::MatrixXd& m = chain_.surfaces[surface_index_[r]];
      std::vector<double> w(m.cols());
      for (Eigen::Index j = 0; j < m.cols(); ++j) w[j] = m(d, j);
      if (layout_.spatial_intercept && r == 0)
        p.w0 = std::move(w);
      else
        p.w1.push_back(std::move(w));
    }
  }
  for (int c : eta_cols_) p.eta.push_back(chain_.draws(d, c));
  if (layout_.ar1) {
    p.sigma2_eta = chain_.draws(d, sigma2_eta_col_);
    p.rho = chain_.draws(d, rho_col_);
  }
  return p;
}

DetectionParams DrawDecoder::detection(int d) const {
  DetectionParams p;
  for (int c : alpha_cols_) p.alpha.push_back(chain_.draws(d, c));
  return p;
}

SpatialParams DrawDecoder::spatial(int d, int r) const {
  return {chain_.draws(d, sigma2_cols_[r]), chain_.draws(d, phi_cols_[r])};
}

Eigen::MatrixXd site_effect_draws(const FitContext& ctx, const std::vector<PosteriorChain>& chains,
                                  const CovariateSet& covs, const std::string& covariate, int season) {
  const OccurrenceLayout layout = make_occurrence_layout(ctx.spec);
  const int ci = layout.covariate_index(covariate);
  if (ci < 0) throw std::invalid_argument("model has no term in '" + covariate + "'");
  const int J = static_cast<int>(ctx.coords.size());
  int total = 0;
  for (const auto& c : chains) total += c.n_draws();
  Eigen::MatrixXd out(total, J);
  std::vector<double> x(layout.covariates.size());
  std::vector<int> labels(layout.label_sets.size());
  int row = 0;
  for (const auto& chain : chains) {
    const DrawDecoder dec(ctx, chain);
    for (int d = 0; d < chain.n_draws(); ++d, ++row) {
      const OccurrenceParams p = dec.occurrence(d);
      for (int j = 0; j < J; ++j) {
        bool ok = true;
        for (std::size_t i = 0; i < x.size(); ++i) {
          x[i] = covs.occ(layout.covariates[i], j, season);
          ok &= !std::isnan(x[i]);
        }
        for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = covs.stratum(layout.label_sets[i], j);
        out(row, j) = ok ? covariate_effect(layout, p, x, labels, j, ci) : kNaN;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

bool is_top_level_coefficient(const std::string& name) {
  return name.rfind("beta[", 0) == 0 || name.rfind("alpha[", 0) == 0;
}

FitSummary summarize_fit(const std::vector<PosteriorChain>& chains) {
  if (chains.empty()) throw std::invalid_argument("no chains to summarize");
  FitSummary s;
  s.n_chains = static_cast<int>(chains.size());
  for (const auto& c : chains) s.pooled_draws += c.n_draws();
  const auto& names = chains[0].param_names;
  s.max_coefficient_rhat = 1.0;
  for (std::size_t p = 0; p < names.size(); ++p) {
    std::vector<std::vector<double>> per_chain;
    std::vector<double> pooled;
    for (const auto& c : chains) {
      std::vector<double> v(c.draws.col(static_cast<Eigen::Index>(p)).data(),
                            c.draws.col(static_cast<Eigen::Index>(p)).data() + c.n_draws());
      pooled.insert(pooled.end(), v.begin(), v.end());
      per_chain.push_back(std::move(v));
    }
    ParameterSummary ps;
    ps.name = names[p];
    ps.mean = mean_of(pooled);
    ps.sd = pooled.size() > 1 ? std::sqrt(var_of(pooled)) : 0.0;
    ps.median = quantile(pooled, 0.5);
    ps.q025 = quantile(pooled, 0.025);
    ps.q975 = quantile(pooled, 0.975);
    const bool long_enough = per_chain[0].size() >= 4;
    ps.rhat = chains.size() >= 2 && long_enough ? rhat(per_chain) : kNaN;
    ps.ess = long_enough ? ess(per_chain) : kNaN;
    if (is_top_level_coefficient(ps.name) && !std::isnan(ps.rhat))
      s.max_coefficient_rhat = std::max(s.max_coefficient_rhat, ps.rhat);
    s.parameters.push_back(std::move(ps));
  }
  if (s.pooled_draws >= 2 && chains[0].loglik.cols() > 0) s.waic = pooled_waic(chains);
  return s;
}

WaicResult pooled_waic(const std::vector<PosteriorChain>& chains) {
  Eigen::Index rows = 0;
  for (const auto& c : chains) rows += c.loglik.rows();
  Eigen::MatrixXd ll(rows, chains.at(0).loglik.cols());
  Eigen::Index at = 0;
  for (const auto& c : chains) {
    if (c.loglik.cols() != ll.cols()) throw ContractError("chains disagree on log-likelihood units");
    ll.middleRows(at, c.loglik.rows()) = c.loglik;
    at += c.loglik.rows();
  }
  std::vector<std::string> names;
  for (const auto& u : chains[0].loglik_units)
    names.push_back("site " + std::to_string(u.site) + " season " + std::to_string(u.season));
  return waic(ll, names);
}

void write_summary_csv(std::ostream& out, const FitSummary& s) {
  out << "parameter,median,mean,sd,q2.5,q97.5,rhat,ess\n";
  for (const auto& p : s.parameters)
    out << p.name << ',' << format_double(p.median) << ',' << format_double(p.mean) << ',' << format_double(p.sd)
        << ',' << format_double(p.q025) << ',' << format_double(p.q975) << ',' << format_double(p.rhat) << ','
        << format_double(p.ess) << '\n';
}

nlohmann::json to_json(const FitSummary& s) {
  auto num = [](double v) -> nlohmann::json {
    if (std::isnan(v)) return nullptr;
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
  };
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : s.parameters)
    params.push_back({{"name", p.name}, {"median", num(p.median)}, {"mean", num(p.mean)}, {"sd", num(p.sd)},
                      {"q2.5", num(p.q025)}, {"q97.5", num(p.q975)}, {"rhat", num(p.rhat)}, {"ess", num(p.ess)}});
  nlohmann::json j = {{"chains", s.n_chains},
                      {"pooled_draws", s.pooled_draws},
                      {"max_coefficient_rhat", num(s.max_coefficient_rhat)},
                      {"waic",
                       {{"waic", s.waic.waic},
                        {"elpd", s.waic.elpd},
                        {"p_waic", s.waic.p_waic},
                        {"lppd", s.waic.lppd},
                        {"units", s.waic.n_units}}},
                      {"parameters", params}};
  if (s.holdout_auc) j["holdout_auc"] = *s.holdout_auc;
  return j;
}

// ---------------------------------------------------------------------------

PredictionGrid read_prediction_grid(std::istream& in, const FitContext& ctx) {
  std::string line;
  if (!std::getline(in, line)) throw IngestError("empty grid file");
  const auto header = split_csv_line(line);
  auto find = [&](const std::string& n) {
    auto it = std::find(header.begin(), header.end(), n);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  };
  const int cx = find("cell_x"), cy = find("cell_y"), cs = find("season");
  if (cx < 0 || cy < 0) throw IngestError("grid needs cell_x and cell_y columns");
  const OccurrenceLayout layout = make_occurrence_layout(ctx.spec);
  std::vector<std::pair<std::string, int>> cov_cols, strata_cols;
  for (const auto& c : layout.covariates) {
    const int i = find(c);
    if (i < 0) throw IngestError("grid lacks covariate column '" + c + "'");
    cov_cols.emplace_back(c, i);
  }
  for (const auto& s : layout.label_sets) {
    const int i = find(s);
    if (i < 0) throw IngestError("grid lacks stratum column '" + s + "'");
    strata_cols.emplace_back(s, i);
  }
  PredictionGrid g;
  std::optional<int> season;
  std::size_t row = 0;
  auto number = [&](const std::string& s) {
    if (s.empty() || s == "NA") return kNaN;
    std::size_t pos = 0;
    double v;
    try {
      v = std::stod(s, &pos);
    } catch (const std::logic_error&) {
      throw IngestError("non-numeric value '" + s + "'", row);
    }
    if (pos != s.size()) throw IngestError("non-numeric value '" + s + "'", row);
    return v;
  };
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) throw IngestError("wrong field count", row);
    g.cells.site_ids.push_back("cell " + std::to_string(g.cells.size() + 1));
    g.cells.easting.push_back(number(f[cx]));
    g.cells.northing.push_back(number(f[cy]));
    if (std::isnan(g.cells.easting.back()) || std::isnan(g.cells.northing.back()))
      throw IngestError("missing cell coordinate", row);
    for (const auto& [name, i] : cov_cols) g.covariates[name].push_back(number(f[i]));
    for (const auto& [name, i] : strata_cols) {
      const double v = number(f[i]);
      g.strata[name].push_back(std::isnan(v) ? 0 : static_cast<int>(v));
    }
    if (cs >= 0) {
      const int s = static_cast<int>(number(f[cs]));
      if (season && *season != s) throw IngestError("grid mixes seasons", row);
      season = s;
    }
  }
  if (season) {
    g.season = *season - ctx.first_season;
    if (g.season < 0 || g.season >= ctx.n_seasons) throw IngestError("grid season outside the fitted seasons");
  }
  return g;
}

PredictionSurface predict_surfaces(const FitContext& ctx, const std::vector<PosteriorChain>& chains,
                                   const PredictionGrid& grid, const PredictionOptions& options) {
  const OccurrenceLayout layout = make_occurrence_layout(ctx.spec);
  const int C = static_cast<int>(grid.cells.size());
  const int season = grid.season < 0 ? ctx.n_seasons - 1 : grid.season;

  // Transformed covariates per cell.
  std::vector<std::vector<double>> x(C, std::vector<double>(layout.covariates.size()));
  std::vector<std::vector<int>> labels(C, std::vector<int>(layout.label_sets.size()));
  auto cell_name = [&](int c) {
    return grid.cells.site_ids[c] + " (" + format_double(grid.cells.easting[c]) + ", " +
           format_double(grid.cells.northing[c]) + ")";
  };
  for (std::size_t i = 0; i < layout.covariates.size(); ++i) {
    const auto& name = layout.covariates[i];
    auto it = grid.covariates.find(name);
    if (it == grid.covariates.end()) throw IngestError("grid lacks covariate '" + name + "'");
    auto tr = ctx.transforms.find(name);
    for (int c = 0; c < C; ++c) {
      const double raw = it->second.at(c);
      if (std::isnan(raw)) throw IngestError("missing covariate '" + name + "' at " + cell_name(c));
      x[c][i] = tr == ctx.transforms.end() ? raw : tr->second.apply(raw);
    }
  }
  for (std::size_t i = 0; i < layout.label_sets.size(); ++i) {
    const auto& name = layout.label_sets[i];
    auto it = grid.strata.find(name);
    if (it == grid.strata.end()) throw IngestError("grid lacks stratum column '" + name + "'");
    const int S = ctx.n_strata.at(name);
    for (int c = 0; c < C; ++c) {
      const int l = it->second.at(c);
      if (l < 1 || l > S) throw IngestError("invalid stratum label for '" + name + "' at " + cell_name(c));
      labels[c][i] = l;
    }
  }

  PredictionSurface out;
  out.cells = grid.cells;
  out.effect_covariate = options.effect_covariate;
  if (out.effect_covariate.empty()) {
    if (!layout.svc.empty())
      out.effect_covariate = layout.covariates[layout.svc[0]];
    else if (!layout.mains.empty())
      out.effect_covariate = layout.covariates[layout.mains[0].covariate];
  }
  const int effect_cov = out.effect_covariate.empty() ? -1 : layout.covariate_index(out.effect_covariate);
  if (!out.effect_covariate.empty() && effect_cov < 0)
    throw std::invalid_argument("model has no term in '" + out.effect_covariate + "'");
  int w1_term = -1;
  for (std::size_t r = 0; r < layout.svc.size(); ++r)
    if (layout.svc[r] == effect_cov) w1_term = static_cast<int>(r);

  int total = 0;
  std::vector<std::pair<int, int>> draw_ref;  // pooled draw -> (chain, draw)
  for (std::size_t k = 0; k < chains.size(); ++k)
    for (int d = 0; d < chains[k].n_draws(); ++d) draw_ref.emplace_back(static_cast<int>(k), d);
  total = static_cast<int>(draw_ref.size());
  out.psi.resize(total, C);
  if (effect_cov >= 0) out.effect.resize(total, C);
  if (w1_term >= 0) out.w1.resize(total, C);

  const bool any_gp = ctx.spec.has_gp();
  KrigingPlan plan;
  if (any_gp) plan = plan_kriging(grid.cells, ctx.coords, std::min<int>(ctx.neighbors, static_cast<int>(ctx.coords.size())));
  std::vector<DrawDecoder> decoders;
  for (const auto& ch : chains) decoders.emplace_back(ctx, ch);

  parallel_for(static_cast<std::size_t>(total), options.threads, [&](std::size_t g) {
    const auto [k, d] = draw_ref[g];
    const DrawDecoder& dec = decoders[k];
    OccurrenceParams site_params = dec.occurrence(d);
    OccurrenceParams cell_params = site_params;
    Rng rng(stream_seed(options.seed, g));
    auto krige = [&](const std::vector<double>& at_sites, SpatialParams sp) {
      std::vector<double> v(C);
      for (int c = 0; c < C; ++c) {
        const auto kr = krige_with_plan(plan.targets[c], at_sites, sp);
        v[c] = kr.mean;
        if (options.sample_surfaces && kr.variance > 0.0) v[c] += std::sqrt(kr.variance) * rng.normal();
      }
      return v;
    };
    int r = 0;
    if (layout.spatial_intercept) cell_params.w0 = krige(site_params.w0, dec.spatial(d, r++));
    for (std::size_t t = 0; t < layout.svc.size(); ++t) cell_params.w1[t] = krige(site_params.w1[t], dec.spatial(d, r++));
    for (int c = 0; c < C; ++c) {
      const double lp = occurrence_logit(layout, cell_params, x[c], labels[c], c, season);
      out.psi(static_cast<Eigen::Index>(g), c) = logistic(lp);
      if (effect_cov >= 0)
        out.effect(static_cast<Eigen::Index>(g), c) = covariate_effect(layout, cell_params, x[c], labels[c], c, effect_cov);
      if (w1_term >= 0) out.w1(static_cast<Eigen::Index>(g), c) = cell_params.w1[w1_term][c];
    }
  });
  return out;
}

void PredictionSurface::write_long_csv(std::ostream& out) const {
  out << "cell_x,cell_y,statistic,value\n";
  auto column = [](const Eigen::MatrixXd& m, Eigen::Index c) {
    return std::vector<double>(m.col(c).data(), m.col(c).data() + m.rows());
  };
  for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(cells.size()); ++c) {
    const std::string prefix = format_double(cells.easting[c]) + "," + format_double(cells.northing[c]) + ",";
    auto emit = [&](const char* stat, double v) { out << prefix << stat << ',' << format_double(v) << '\n'; };
    const auto psi_c = column(psi, c);
    emit("psi_median", quantile(psi_c, 0.5));
    emit("psi_mean", mean_of(psi_c));
    emit("psi_q2.5", quantile(psi_c, 0.025));
    emit("psi_q97.5", quantile(psi_c, 0.975));
    if (effect.size() > 0) {
      const auto e = column(effect, c);
      emit("effect_median", quantile(e, 0.5));
      emit("effect_q2.5", quantile(e, 0.025));
      emit("effect_q97.5", quantile(e, 0.975));
      const double pos = static_cast<double>(std::count_if(e.begin(), e.end(), [](double v) { return v > 0.0; }));
      emit("p_effect_positive", pos / static_cast<double>(e.size()));
    }
    if (w1.size() > 0) emit("w1_median", quantile(column(w1, c), 0.5));
  }
}

}  // namespace svcsdm
