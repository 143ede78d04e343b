#include "svcsdm/mcmc.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "svcsdm/errors.hpp"
#include "svcsdm/parallel.hpp"
#include "svcsdm/polya_gamma.hpp"

namespace svcsdm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

/// Draw from N(P^{-1} b, P^{-1}).
Eigen::VectorXd draw_canonical_gaussian(const Eigen::MatrixXd& precision, const Eigen::VectorXd& b, Rng& rng,
                                        const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success)
    throw NumericError(std::string("conditional precision of ") + what + " is not positive definite");
  Eigen::VectorXd mean = llt.solve(b);
  Eigen::VectorXd eps(b.size());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = rng.normal();
  return mean + llt.matrixU().solve(eps);
}

/// eta' R(rho)^{-1} eta for the unit-variance stationary AR(1) correlation.
double ar1_quadratic(const std::vector<double>& eta, double rho) {
  double q = eta[0] * eta[0];
  for (std::size_t t = 1; t < eta.size(); ++t) {
    const double e = eta[t] - rho * eta[t - 1];
    q += e * e / (1.0 - rho * rho);
  }
  return q;
}

}  // namespace

int PosteriorChain::param_index(const std::string& name) const {
  auto it = std::find(param_names.begin(), param_names.end(), name);
  return it == param_names.end() ? -1 : static_cast<int>(it - param_names.begin());
}

Eigen::VectorXd PosteriorChain::column(const std::string& name) const {
  const int i = param_index(name);
  if (i < 0) throw std::out_of_range("no parameter named '" + name + "'");
  return draws.col(i);
}

const Eigen::MatrixXd* PosteriorChain::surface(const std::string& name) const {
  for (std::size_t i = 0; i < surface_names.size(); ++i)
    if (surface_names[i] == name) return &surfaces[i];
  return nullptr;
}

// ---------------------------------------------------------------------------

OccupancySampler::OccupancySampler(const DetectionData& data, const CovariateSet& covs,
                                   const OccupancyModelSpec& spec, const MCMCConfig& config, std::uint64_t seed,
                                   SamplerOptions options)
    : data_(data),
      covs_(covs),
      spec_(spec),
      config_(config),
      seed_(seed),
      options_(std::move(options)),
      rng_(seed),
      occ_layout_(make_occurrence_layout(spec)),
      det_layout_(make_detection_layout(spec, data.max_replicates)) {
  auto problems = validate_spec(spec, data, covs, config.neighbors);
  auto cfg = config.problems();
  problems.insert(problems.end(), cfg.begin(), cfg.end());
  if (!problems.empty()) throw ValidationError(problems);
  build_design();
  init_state();
}

void OccupancySampler::build_design() {
  const int J = data_.n_sites(), T = data_.n_seasons;
  std::vector<const SiteSeasonCovariate*> occ_covs;
  for (const auto& n : occ_layout_.covariates) occ_covs.push_back(covs_.find_occurrence(n));
  std::vector<const StratumLabels*> label_sets;
  for (const auto& n : occ_layout_.label_sets) label_sets.push_back(covs_.find_strata(n));

  unit_lookup_.assign(static_cast<std::size_t>(J) * T, -1);
  std::vector<double> x(occ_covs.size());
  std::vector<int> labels(label_sets.size());
  for (int j = 0; j < J; ++j)
    for (int t = 0; t < T; ++t) {
      bool complete = true;
      for (const auto* c : occ_covs) complete &= !std::isnan(c->values[static_cast<std::size_t>(j) * T + t]);
      const bool sampled = data_.sampled(j, t);
      if (!complete) {
        if (sampled) throw ContractError("sampled unit without occurrence covariates");
        continue;
      }
      unit_lookup_[static_cast<std::size_t>(j) * T + t] = static_cast<int>(units_.size());
      units_.push_back({j, t});
    }
  const int U = n_units();

  n_strata_.clear();
  strat_offset_.clear();
  int cols = occ_layout_.n_coef;
  for (const auto& st : occ_layout_.strata) {
    strat_offset_.push_back(cols);
    n_strata_.push_back(label_sets[st.labels]->n_strata);
    cols += n_strata_.back();
  }
  occ_design_ = Eigen::MatrixXd::Zero(U, cols);
  sampled_pos_.assign(U, -1);
  detected_.assign(U, false);
  unit_obs_.assign(U, {0, 0});
  for (int u = 0; u < U; ++u) {
    const auto [j, t] = units_[u];
    for (std::size_t c = 0; c < occ_covs.size(); ++c) x[c] = occ_covs[c]->values[static_cast<std::size_t>(j) * T + t];
    for (std::size_t l = 0; l < label_sets.size(); ++l) labels[l] = label_sets[l]->labels[j];
    const auto& L = occ_layout_;
    if (L.intercept >= 0) occ_design_(u, L.intercept) = 1.0;
    for (const auto& m : L.mains) occ_design_(u, m.coef) = x[m.covariate];
    for (const auto& q : L.quadratics) occ_design_(u, q.coef) = x[q.covariate] * x[q.covariate];
    for (const auto& i : L.interactions) occ_design_(u, i.coef) = x[i.modifier] * x[i.covariate];
    for (std::size_t s = 0; s < L.strata.size(); ++s)
      occ_design_(u, strat_offset_[s] + labels[L.strata[s].labels] - 1) = x[L.strata[s].covariate];

    const int begin = static_cast<int>(obs_.size());
    for (int k = 0; k < data_.max_replicates; ++k) {
      const auto y = data_.at(j, t, k);
      if (y == DetectionData::kMissingObs) continue;
      obs_.push_back({u, k, y});
      if (y == 1) detected_[u] = true;
    }
    unit_obs_[u] = {begin, static_cast<int>(obs_.size())};
    if (unit_obs_[u].second > begin) {
      sampled_pos_[u] = static_cast<int>(sampled_.size());
      sampled_.push_back(u);
    }
  }

  det_design_ = Eigen::MatrixXd::Zero(n_obs(), det_layout_.n_coef);
  std::vector<double> dx(det_layout_.covariates.size());
  for (int o = 0; o < n_obs(); ++o) {
    const auto [j, t] = units_[obs_[o].unit];
    const int k = obs_[o].replicate;
    for (std::size_t c = 0; c < dx.size(); ++c) dx[c] = covs_.det(det_layout_.covariates[c], j, t, k);
    const auto& L = det_layout_;
    if (L.intercept >= 0) det_design_(o, L.intercept) = 1.0;
    if (L.replicate_intercepts >= 0) det_design_(o, L.replicate_intercepts + k) = 1.0;
    for (const auto& m : L.mains) det_design_(o, m.coef) = dx[m.covariate];
    for (const auto& q : L.quadratics) det_design_(o, q.coef) = dx[q.covariate] * dx[q.covariate];
  }

  // Priors on fixed coefficients.
  const auto occ_names = occurrence_coefficient_names(spec_);
  beta_prior_mean_.resize(occ_layout_.n_coef);
  beta_prior_var_.resize(occ_layout_.n_coef);
  for (int i = 0; i < occ_layout_.n_coef; ++i) {
    auto it = spec_.priors.beta_overrides.find(occ_names[i]);
    const NormalPrior p = it == spec_.priors.beta_overrides.end() ? spec_.priors.beta : it->second;
    beta_prior_mean_(i) = p.mean;
    beta_prior_var_(i) = p.var;
  }
  const auto det_names = detection_coefficient_names(spec_, data_.max_replicates);
  alpha_prior_mean_.resize(det_layout_.n_coef);
  alpha_prior_var_.resize(det_layout_.n_coef);
  for (int i = 0; i < det_layout_.n_coef; ++i) {
    auto it = spec_.priors.alpha_overrides.find(det_names[i]);
    const NormalPrior p = it == spec_.priors.alpha_overrides.end() ? spec_.priors.alpha : it->second;
    alpha_prior_mean_(i) = p.mean;
    alpha_prior_var_(i) = p.var;
  }

  // Spatial surfaces.
  if (spec_.has_gp()) {
    graph_ = build_neighbor_graph(data_.coords, config_.neighbors);
    const UniformPrior phi_prior = resolve_phi_prior(spec_.priors, data_.coords);
    if (spec_.spatial_intercept) {
      Surface s;
      s.name = "w0";
      s.unit_weight.assign(U, 1.0);
      s.phi_prior = phi_prior;
      surfaces_.push_back(std::move(s));
    }
    for (std::size_t r = 0; r < occ_layout_.svc.size(); ++r) {
      Surface s;
      s.name = "w1[" + occ_layout_.covariates[occ_layout_.svc[r]] + "]";
      s.svc_term = static_cast<int>(r);
      s.unit_weight.resize(U);
      const auto* c = occ_covs[occ_layout_.svc[r]];
      for (int u = 0; u < U; ++u)
        s.unit_weight[u] = c->values[static_cast<std::size_t>(units_[u].site) * T + units_[u].season];
      s.phi_prior = phi_prior;
      surfaces_.push_back(std::move(s));
    }
  }

  // Scalar parameter names.
  for (const auto& n : occ_names) names_.push_back("beta[" + n + "]");
  for (std::size_t s = 0; s < occ_layout_.strata.size(); ++s) {
    const auto& st = occ_layout_.strata[s];
    const std::string tag = occ_layout_.covariates[st.covariate] + "|" + occ_layout_.label_sets[st.labels];
    for (int k = 1; k <= n_strata_[s]; ++k) names_.push_back("beta_stratum[" + tag + "][" + std::to_string(k) + "]");
    names_.push_back("tau2_stratum[" + tag + "]");
  }
  for (const auto& n : det_names) names_.push_back("alpha[" + n + "]");
  for (const auto& s : surfaces_) {
    names_.push_back("sigma2[" + s.name + "]");
    names_.push_back("phi[" + s.name + "]");
  }
  if (occ_layout_.ar1) {
    for (int t = 0; t < T; ++t) names_.push_back("eta[" + std::to_string(data_.first_season + t) + "]");
    names_.push_back("sigma2_eta");
    names_.push_back("rho");
  }
}

void OccupancySampler::init_state() {
  const int J = data_.n_sites(), T = data_.n_seasons;
  ChainState& s = state_;
  s.occ.beta.assign(occ_layout_.n_coef, 0.0);
  s.occ.stratum_dev.clear();
  for (int n : n_strata_) s.occ.stratum_dev.emplace_back(n, 0.0);
  s.tau2.assign(n_strata_.size(), 1.0);
  s.det.alpha.assign(det_layout_.n_coef, 0.0);
  if (spec_.spatial_intercept) s.occ.w0.assign(J, 0.0);
  s.occ.w1.assign(occ_layout_.svc.size(), std::vector<double>(J, 0.0));
  if (occ_layout_.ar1) {
    s.occ.eta.assign(T, 0.0);
    s.occ.rho = 0.0;
    s.occ.sigma2_eta = 1.0;
  }
  s.spatial.clear();
  for (auto& surf : surfaces_) {
    const SpatialParams p{1.0, 0.5 * (surf.phi_prior.lower + surf.phi_prior.upper)};
    s.spatial.push_back(p);
    surf.unit_nngp = build_nngp(graph_, {1.0, p.phi});
  }
  s.z.resize(n_units());
  for (int u = 0; u < n_units(); ++u) s.z[u] = detected_[u] ? 1 : (rng_.bernoulli(0.5) ? 1 : 0);
  s.omega_occ.assign(sampled_.size(), 0.25);
  s.omega_det.assign(obs_.size(), 0.0);
  s.iteration = 0;
}

int OccupancySampler::unit_index(UnitId u) const {
  if (u.site < 0 || u.site >= data_.n_sites() || u.season < 0 || u.season >= data_.n_seasons) return -1;
  return unit_lookup_[static_cast<std::size_t>(u.site) * data_.n_seasons + u.season];
}

std::vector<double>& OccupancySampler::surface_values(int surface) {
  const auto& s = surfaces_[surface];
  return s.svc_term < 0 ? state_.occ.w0 : state_.occ.w1[s.svc_term];
}

double OccupancySampler::surface_weight(int surface, int unit) const { return surfaces_[surface].unit_weight[unit]; }

Eigen::VectorXd OccupancySampler::occurrence_fixed_part() const {
  Eigen::VectorXd theta(occ_design_.cols());
  for (int i = 0; i < occ_layout_.n_coef; ++i) theta(i) = state_.occ.beta[i];
  for (std::size_t s = 0; s < strat_offset_.size(); ++s)
    for (int k = 0; k < n_strata_[s]; ++k) theta(strat_offset_[s] + k) = state_.occ.stratum_dev[s][k];
  return occ_design_ * theta;
}

Eigen::VectorXd OccupancySampler::other_than_fixed() const {
  Eigen::VectorXd o = Eigen::VectorXd::Zero(n_units());
  for (std::size_t r = 0; r < surfaces_.size(); ++r) {
    const auto& s = surfaces_[r];
    const auto& w = s.svc_term < 0 ? state_.occ.w0 : state_.occ.w1[s.svc_term];
    for (int u = 0; u < n_units(); ++u) o(u) += w[units_[u].site] * s.unit_weight[u];
  }
  if (occ_layout_.ar1)
    for (int u = 0; u < n_units(); ++u) o(u) += state_.occ.eta[units_[u].season];
  return o;
}

std::vector<double> OccupancySampler::all_psi_logits() const {
  const Eigen::VectorXd v = occurrence_fixed_part() + other_than_fixed();
  return {v.data(), v.data() + v.size()};
}

double OccupancySampler::psi_logit(int unit) const {
  double v = 0.0;
  for (int i = 0; i < occ_layout_.n_coef; ++i) v += occ_design_(unit, i) * state_.occ.beta[i];
  for (std::size_t s = 0; s < strat_offset_.size(); ++s)
    for (int k = 0; k < n_strata_[s]; ++k) v += occ_design_(unit, strat_offset_[s] + k) * state_.occ.stratum_dev[s][k];
  for (const auto& s : surfaces_) {
    const auto& w = s.svc_term < 0 ? state_.occ.w0 : state_.occ.w1[s.svc_term];
    v += w[units_[unit].site] * s.unit_weight[unit];
  }
  if (occ_layout_.ar1) v += state_.occ.eta[units_[unit].season];
  return v;
}

Eigen::VectorXd OccupancySampler::all_det_logits() const {
  const Eigen::Map<const Eigen::VectorXd> alpha(state_.det.alpha.data(), static_cast<Eigen::Index>(state_.det.alpha.size()));
  return det_design_ * alpha;
}

double OccupancySampler::det_logit(int obs) const {
  double v = 0.0;
  for (int i = 0; i < det_layout_.n_coef; ++i) v += det_design_(obs, i) * state_.det.alpha[i];
  return v;
}

// ---------------------------------------------------------------------------
// Updates

void OccupancySampler::update_z() {
  const auto psi = all_psi_logits();
  const Eigen::VectorXd dl = all_det_logits();
  std::vector<double> p;
  std::vector<std::int8_t> y;
  for (int u = 0; u < n_units(); ++u) {
    if (detected_[u]) {
      state_.z[u] = 1;
      continue;
    }
    const auto [b, e] = unit_obs_[u];
    double prob;
    if (b == e) {
      prob = logistic(psi[u]);
    } else {
      p.clear();
      y.clear();
      for (int o = b; o < e; ++o) {
        p.push_back(dl(o));
        y.push_back(obs_[o].y);
      }
      prob = z_conditional_prob_logit(psi[u], p, y);
    }
    state_.z[u] = rng_.bernoulli(prob) ? 1 : 0;
  }
}

void OccupancySampler::update_omega() {
  const auto psi = all_psi_logits();
  for (std::size_t i = 0; i < sampled_.size(); ++i) state_.omega_occ[i] = sample_polya_gamma(psi[sampled_[i]], rng_);
  const Eigen::VectorXd dl = all_det_logits();
  for (int o = 0; o < n_obs(); ++o)
    state_.omega_det[o] = state_.z[obs_[o].unit] ? sample_polya_gamma(dl(o), rng_) : 0.0;
}

void OccupancySampler::update_detection() {
  const int q = det_layout_.n_coef;
  if (q == 0) return;
  int n = 0;
  for (int o = 0; o < n_obs(); ++o) n += state_.z[obs_[o].unit];
  Eigen::MatrixXd D(n, q);
  Eigen::VectorXd omega(n), kappa(n);
  for (int o = 0, i = 0; o < n_obs(); ++o) {
    if (!state_.z[obs_[o].unit]) continue;
    D.row(i) = det_design_.row(o);
    omega(i) = state_.omega_det[o];
    kappa(i) = obs_[o].y - 0.5;
    ++i;
  }
  Eigen::MatrixXd P = alpha_prior_var_.cwiseInverse().asDiagonal();
  P.noalias() += D.transpose() * omega.asDiagonal() * D;
  const Eigen::VectorXd b = alpha_prior_mean_.cwiseQuotient(alpha_prior_var_) + D.transpose() * kappa;
  const Eigen::VectorXd alpha = draw_canonical_gaussian(P, b, rng_, "detection coefficients");
  state_.det.alpha.assign(alpha.data(), alpha.data() + q);
}

void OccupancySampler::update_occurrence() {
  const Eigen::Index dim = occ_design_.cols();
  if (dim > 0) {
    Eigen::VectorXd prior_prec(dim), prior_b = Eigen::VectorXd::Zero(dim);
    for (int i = 0; i < occ_layout_.n_coef; ++i) {
      prior_prec(i) = 1.0 / beta_prior_var_(i);
      prior_b(i) = beta_prior_mean_(i) / beta_prior_var_(i);
    }
    for (std::size_t s = 0; s < strat_offset_.size(); ++s)
      for (int k = 0; k < n_strata_[s]; ++k) prior_prec(strat_offset_[s] + k) = 1.0 / state_.tau2[s];

    const Eigen::VectorXd other = other_than_fixed();
    const auto n = static_cast<Eigen::Index>(sampled_.size());
    Eigen::MatrixXd D(n, dim);
    Eigen::VectorXd omega(n), rhs(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int u = sampled_[i];
      D.row(i) = occ_design_.row(u);
      omega(i) = state_.omega_occ[i];
      rhs(i) = (state_.z[u] - 0.5) - omega(i) * other(u);
    }
    Eigen::MatrixXd P = prior_prec.asDiagonal();
    P.noalias() += D.transpose() * omega.asDiagonal() * D;
    const Eigen::VectorXd b = prior_b + D.transpose() * rhs;
    const Eigen::VectorXd theta = draw_canonical_gaussian(P, b, rng_, "occurrence coefficients");
    for (int i = 0; i < occ_layout_.n_coef; ++i) state_.occ.beta[i] = theta(i);
    for (std::size_t s = 0; s < strat_offset_.size(); ++s)
      for (int k = 0; k < n_strata_[s]; ++k) state_.occ.stratum_dev[s][k] = theta(strat_offset_[s] + k);
  }
  // Shared variance of each stratum term's deviations.
  const auto& pr = spec_.priors.tau2_stratum;
  for (std::size_t s = 0; s < strat_offset_.size(); ++s) {
    double ss = 0.0;
    for (double d : state_.occ.stratum_dev[s]) ss += d * d;
    state_.tau2[s] = rng_.inverse_gamma(pr.shape + 0.5 * n_strata_[s], pr.scale + 0.5 * ss);
  }
}

void OccupancySampler::update_gp_surface(int r) {
  const Surface& surf = surfaces_[r];
  std::vector<double>& w = surface_values(r);
  const int J = data_.n_sites();
  const auto psi = all_psi_logits();
  std::vector<double> lik_prec(J, 0.0), lik_b(J, 0.0);
  for (std::size_t i = 0; i < sampled_.size(); ++i) {
    const int u = sampled_[i];
    const double x = surf.unit_weight[u];
    if (x == 0.0) continue;
    const int s = units_[u].site;
    const double om = state_.omega_occ[i];
    const double other = psi[u] - w[s] * x;
    lik_prec[s] += om * x * x;
    lik_b[s] += x * ((state_.z[u] - 0.5) - om * other);
  }
  const double sigma2 = state_.spatial[r].sigma2;
  const NNGPStructure& nn = surf.unit_nngp;
  const auto& g = graph_;
  for (int s = 0; s < J; ++s) {
    const double F = sigma2 * nn.cond_var[s];
    double prec = 1.0 / F;
    double mean_num = 0.0;
    const auto& nb = g.neighbors[s];
    for (std::size_t i = 0; i < nb.size(); ++i) mean_num += nn.weights[s](static_cast<Eigen::Index>(i)) * w[nb[i]];
    mean_num /= F;
    for (const auto& [c, slot] : g.children[s]) {
      const double Fc = sigma2 * nn.cond_var[c];
      const auto& bc = nn.weights[c];
      const double bcs = bc(slot);
      double resid = w[c];
      const auto& nbc = g.neighbors[c];
      for (std::size_t l = 0; l < nbc.size(); ++l)
        if (static_cast<int>(l) != slot) resid -= bc(static_cast<Eigen::Index>(l)) * w[nbc[l]];
      prec += bcs * bcs / Fc;
      mean_num += bcs * resid / Fc;
    }
    prec += lik_prec[s];
    mean_num += lik_b[s];
    w[s] = mean_num / prec + rng_.normal() / std::sqrt(prec);
  }
}

double OccupancySampler::surface_log_density(const NNGPStructure& unit, const std::vector<double>& w,
                                             double sigma2) const {
  double ll = 0.0;
  for (int s = 0; s < unit.n_sites(); ++s) {
    const auto& nb = unit.graph->neighbors[s];
    double mu = 0.0;
    for (std::size_t i = 0; i < nb.size(); ++i) mu += unit.weights[s](static_cast<Eigen::Index>(i)) * w[nb[i]];
    const double F = sigma2 * unit.cond_var[s];
    const double e = w[s] - mu;
    ll += -0.5 * (kLog2Pi + std::log(F) + e * e / F);
  }
  return ll;
}

void OccupancySampler::update_sigma2(int r) {
  const auto& pr = spec_.priors.sigma2;
  const double q = nngp_unit_quadratic_form(surface_values(r), surfaces_[r].unit_nngp);
  state_.spatial[r].sigma2 = rng_.inverse_gamma(pr.shape + 0.5 * data_.n_sites(), pr.scale + 0.5 * q);
}

void OccupancySampler::update_phi(int r) {
  Surface& surf = surfaces_[r];
  const auto [lo, hi] = surf.phi_prior;
  const double phi = state_.spatial[r].phi;
  const double sigma2 = state_.spatial[r].sigma2;
  const auto& w = surface_values(r);
  const double u = logit((phi - lo) / (hi - lo));
  const double u_new = u + config_.phi_proposal_sd * rng_.normal();
  const double phi_new = lo + (hi - lo) * logistic(u_new);
  const double accept_draw = rng_.uniform();
  if (!(phi_new > lo && phi_new < hi)) return;
  NNGPStructure proposal;
  try {
    proposal = build_nngp(graph_, {1.0, phi_new});
  } catch (const NumericError&) {
    return;
  }
  // Target on the logit scale: density times the Jacobian (phi - lo)(hi - phi).
  const double cur = surface_log_density(surf.unit_nngp, w, sigma2) + std::log(phi - lo) + std::log(hi - phi);
  const double nxt = surface_log_density(proposal, w, sigma2) + std::log(phi_new - lo) + std::log(hi - phi_new);
  if (std::log(accept_draw) < nxt - cur) {
    surf.unit_nngp = std::move(proposal);
    state_.spatial[r].phi = phi_new;
  }
}

void OccupancySampler::update_spatial_params(int r) {
  update_sigma2(r);
  update_phi(r);
}

void OccupancySampler::update_eta() {
  const int T = data_.n_seasons;
  const double rho = state_.occ.rho;
  const double s2 = state_.occ.sigma2_eta;
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(T, T);
  const double scale = 1.0 / (s2 * (1.0 - rho * rho));
  for (int t = 0; t < T; ++t) {
    P(t, t) = scale * ((t == 0 || t == T - 1) ? 1.0 : 1.0 + rho * rho);
    if (t > 0) P(t, t - 1) = P(t - 1, t) = -scale * rho;
  }
  if (T == 1) P(0, 0) = 1.0 / s2;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(T);
  const auto psi = all_psi_logits();
  for (std::size_t i = 0; i < sampled_.size(); ++i) {
    const int u = sampled_[i];
    const int t = units_[u].season;
    const double om = state_.omega_occ[i];
    P(t, t) += om;
    b(t) += (state_.z[u] - 0.5) - om * (psi[u] - state_.occ.eta[t]);
  }
  const Eigen::VectorXd eta = draw_canonical_gaussian(P, b, rng_, "season effects");
  state_.occ.eta.assign(eta.data(), eta.data() + T);
}

void OccupancySampler::update_ar1_params() {
  const int T = data_.n_seasons;
  const auto& eta = state_.occ.eta;
  const auto& pr = spec_.priors.sigma2_eta;
  state_.occ.sigma2_eta =
      rng_.inverse_gamma(pr.shape + 0.5 * T, pr.scale + 0.5 * ar1_quadratic(eta, state_.occ.rho));

  const double s2 = state_.occ.sigma2_eta;
  const double rho = state_.occ.rho;
  const double rho_new = rho + config_.rho_proposal_sd * rng_.normal();
  const double accept_draw = rng_.uniform();
  const auto& support = spec_.priors.rho;
  if (!(rho_new > support.lower && rho_new < support.upper) || !(std::abs(rho_new) < 1.0)) return;
  auto log_target = [&](double r) {
    return -0.5 * (T - 1) * std::log(1.0 - r * r) - 0.5 * ar1_quadratic(eta, r) / s2;
  };
  if (std::log(accept_draw) < log_target(rho_new) - log_target(rho)) state_.occ.rho = rho_new;
}

void OccupancySampler::update_ar1() {
  if (!occ_layout_.ar1) return;
  update_eta();
  update_ar1_params();
}

void OccupancySampler::sweep() {
  update_z();
  update_omega();
  update_detection();
  update_occurrence();
  for (int r = 0; r < n_surfaces(); ++r) update_gp_surface(r);
  for (int r = 0; r < n_surfaces(); ++r) update_spatial_params(r);
  update_ar1();
  ++state_.iteration;
}

void OccupancySampler::scalar_snapshot(std::vector<double>& out) const {
  out.clear();
  out.insert(out.end(), state_.occ.beta.begin(), state_.occ.beta.end());
  for (std::size_t s = 0; s < state_.occ.stratum_dev.size(); ++s) {
    out.insert(out.end(), state_.occ.stratum_dev[s].begin(), state_.occ.stratum_dev[s].end());
    out.push_back(state_.tau2[s]);
  }
  out.insert(out.end(), state_.det.alpha.begin(), state_.det.alpha.end());
  for (const auto& p : state_.spatial) {
    out.push_back(p.sigma2);
    out.push_back(p.phi);
  }
  if (occ_layout_.ar1) {
    out.insert(out.end(), state_.occ.eta.begin(), state_.occ.eta.end());
    out.push_back(state_.occ.sigma2_eta);
    out.push_back(state_.occ.rho);
  }
}

void OccupancySampler::check_finite() const {
  std::vector<double> v;
  scalar_snapshot(v);
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i]))
      throw NumericError("non-finite " + names_[i] + " at iteration " + std::to_string(state_.iteration));
  for (std::size_t r = 0; r < surfaces_.size(); ++r) {
    const auto& s = surfaces_[r];
    const auto& w = s.svc_term < 0 ? state_.occ.w0 : state_.occ.w1[s.svc_term];
    for (std::size_t j = 0; j < w.size(); ++j)
      if (!std::isfinite(w[j]))
        throw NumericError("non-finite " + s.name + "[" + data_.coords.site_ids[j] + "] at iteration " +
                           std::to_string(state_.iteration));
  }
}

PosteriorChain OccupancySampler::run() {
  PosteriorChain chain;
  chain.param_names = names_;
  chain.seed = seed_;
  chain.config = config_;
  chain.spec = to_json(spec_);
  const int n_draws = config_.draws_per_chain();
  chain.draws.resize(n_draws, static_cast<Eigen::Index>(names_.size()));
  if (options_.record_surfaces)
    for (const auto& s : surfaces_) {
      chain.surface_names.push_back(s.name);
      chain.surfaces.emplace_back(n_draws, data_.n_sites());
    }
  for (int u : sampled_) chain.loglik_units.push_back(units_[u]);
  chain.loglik.resize(n_draws, static_cast<Eigen::Index>(sampled_.size()));
  std::vector<int> psi_idx;
  for (const auto& id : options_.psi_units) {
    const int u = unit_index(id);
    if (u < 0) throw ContractError("requested occurrence unit has no covariates");
    psi_idx.push_back(u);
  }
  chain.psi_units = options_.psi_units;
  chain.psi.resize(n_draws, static_cast<Eigen::Index>(psi_idx.size()));

  std::vector<double> snap;
  std::vector<double> p;
  std::vector<std::int8_t> y;
  int d = 0;
  for (int it = 1; it <= config_.n_iterations; ++it) {
    sweep();
    check_finite();
    if (it <= config_.n_burn || (it - config_.n_burn) % config_.n_thin != 0 || d >= n_draws) continue;
    scalar_snapshot(snap);
    for (std::size_t i = 0; i < snap.size(); ++i) chain.draws(d, static_cast<Eigen::Index>(i)) = snap[i];
    if (options_.record_surfaces)
      for (std::size_t r = 0; r < surfaces_.size(); ++r) {
        const auto& w = surface_values(static_cast<int>(r));
        for (int j = 0; j < data_.n_sites(); ++j) chain.surfaces[r](d, j) = w[j];
      }
    const auto psi = all_psi_logits();
    const Eigen::VectorXd dl = all_det_logits();
    for (std::size_t i = 0; i < sampled_.size(); ++i) {
      const int u = sampled_[i];
      p.clear();
      y.clear();
      for (int o = unit_obs_[u].first; o < unit_obs_[u].second; ++o) {
        p.push_back(dl(o));
        y.push_back(obs_[o].y);
      }
      chain.loglik(d, static_cast<Eigen::Index>(i)) = marginal_unit_loglik_logit(psi[u], p, y);
    }
    for (std::size_t i = 0; i < psi_idx.size(); ++i) chain.psi(d, static_cast<Eigen::Index>(i)) = logistic(psi[psi_idx[i]]);
    ++d;
  }
  return chain;
}

PosteriorChain run_chain(const DetectionData& data, const CovariateSet& covs, const OccupancyModelSpec& spec,
                         const MCMCConfig& config, std::uint64_t chain_seed, SamplerOptions options) {
  OccupancySampler sampler(data, covs, spec, config, chain_seed, std::move(options));
  return sampler.run();
}

std::vector<PosteriorChain> run_chains(const DetectionData& data, const CovariateSet& covs,
                                       const OccupancyModelSpec& spec, const MCMCConfig& config,
                                       const SamplerOptions& options, int threads) {
  auto problems = validate_spec(spec, data, covs, config.neighbors);
  auto cfg = config.problems();
  problems.insert(problems.end(), cfg.begin(), cfg.end());
  if (!problems.empty()) throw ValidationError(problems);
  std::vector<PosteriorChain> chains(config.n_chains);
  parallel_for(chains.size(), threads, [&](std::size_t c) {
    chains[c] = run_chain(data, covs, spec, config, stream_seed(config.seed, c), options);
    chains[c].chain_index = static_cast<int>(c);
  });
  return chains;
}

// ---------------------------------------------------------------------------
// Files

namespace {

std::vector<std::string> split_simple(const std::string& line) {
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

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

double parse_cell(const std::string& s) {
  if (s == "NA") return kNaN;
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw IngestError("malformed numeric cell '" + s + "'");
  return v;
}

}  // namespace

void write_matrix_csv(std::ostream& out, const Eigen::MatrixXd& m, const std::vector<std::string>& header) {
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << quote(header[i]);
  out << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << format_double(m(r, c));
    out << '\n';
  }
}

Eigen::MatrixXd read_matrix_csv(std::istream& in, std::vector<std::string>* header) {
  std::string line;
  if (!std::getline(in, line)) throw IngestError("empty matrix file");
  const auto h = split_simple(line);
  std::vector<std::vector<double>> rows;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto f = split_simple(line);
    if (f.size() != h.size()) throw IngestError("wrong field count", row);
    std::vector<double> v;
    v.reserve(f.size());
    try {
      for (const auto& s : f) v.push_back(parse_cell(s));
    } catch (const std::logic_error&) {
      throw IngestError("non-numeric cell", row);
    }
    rows.push_back(std::move(v));
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(h.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < h.size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  if (header) *header = h;
  return m;
}

void write_posterior_csv(std::ostream& out, const PosteriorChain& chain, const std::vector<std::string>& site_ids) {
  std::vector<std::string> header = chain.param_names;
  Eigen::Index cols = chain.draws.cols();
  for (std::size_t s = 0; s < chain.surfaces.size(); ++s) {
    for (const auto& id : site_ids) header.push_back(chain.surface_names[s] + "[" + id + "]");
    cols += chain.surfaces[s].cols();
  }
  Eigen::MatrixXd all(chain.draws.rows(), cols);
  all.leftCols(chain.draws.cols()) = chain.draws;
  Eigen::Index at = chain.draws.cols();
  for (const auto& s : chain.surfaces) {
    all.middleCols(at, s.cols()) = s;
    at += s.cols();
  }
  write_matrix_csv(out, all, header);
}

PosteriorChain read_posterior_csv(std::istream& in, const std::vector<std::string>& surface_names, int n_sites) {
  std::vector<std::string> header;
  const Eigen::MatrixXd all = read_matrix_csv(in, &header);
  PosteriorChain chain;
  Eigen::Index scalar_cols = static_cast<Eigen::Index>(header.size()) - static_cast<Eigen::Index>(surface_names.size()) * n_sites;
  if (scalar_cols < 0) throw IngestError("posterior file has fewer columns than its surfaces need");
  for (Eigen::Index c = 0; c < scalar_cols; ++c) chain.param_names.push_back(header[c]);
  chain.draws = all.leftCols(scalar_cols);
  Eigen::Index at = scalar_cols;
  for (const auto& name : surface_names) {
    if (header[at].rfind(name + "[", 0) != 0) throw IngestError("expected surface block '" + name + "'");
    chain.surface_names.push_back(name);
    chain.surfaces.push_back(all.middleCols(at, n_sites));
    at += n_sites;
  }
  return chain;
}

nlohmann::json provenance_json(const PosteriorChain& chain) {
  return {{"chain_index", chain.chain_index},
          {"seed", chain.seed},
          {"config", to_json(chain.config)},
          {"spec", chain.spec},
          {"software_version", chain.software_version},
          {"draws", chain.n_draws()},
          {"surfaces", chain.surface_names}};
}

}  // namespace svcsdm
