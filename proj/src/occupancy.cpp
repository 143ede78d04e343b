#include "svcsdm/occupancy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "svcsdm/errors.hpp"

namespace svcsdm {

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("logit is defined only on (0, 1)");
  return std::log(p) - std::log1p(-p);
}

double log_logistic(double x) {
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

double log1m_logistic(double x) { return log_logistic(-x); }

namespace {

int intern(std::vector<std::string>& names, const std::string& n) {
  auto it = std::find(names.begin(), names.end(), n);
  if (it != names.end()) return static_cast<int>(it - names.begin());
  names.push_back(n);
  return static_cast<int>(names.size()) - 1;
}

double log_add(double a, double b) {
  if (a == -INFINITY) return b;
  if (b == -INFINITY) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace

int OccurrenceLayout::covariate_index(const std::string& name) const {
  auto it = std::find(covariates.begin(), covariates.end(), name);
  return it == covariates.end() ? -1 : static_cast<int>(it - covariates.begin());
}

OccurrenceLayout make_occurrence_layout(const OccupancyModelSpec& spec) {
  OccurrenceLayout L;
  L.spatial_intercept = spec.spatial_intercept;
  L.ar1 = spec.year_effect == YearEffect::kAr1;
  const auto names = occurrence_coefficient_names(spec);
  auto coef = [&](const std::string& n) {
    return static_cast<int>(std::find(names.begin(), names.end(), n) - names.begin());
  };
  L.n_coef = static_cast<int>(names.size());
  std::vector<std::string> seen_main;
  for (const auto& t : spec.occurrence) {
    if (t.kind == OccurrenceTermKind::kIntercept) {
      L.intercept = coef("(Intercept)");
      continue;
    }
    const int c = intern(L.covariates, t.covariate);
    if (std::find(seen_main.begin(), seen_main.end(), t.covariate) == seen_main.end()) {
      seen_main.push_back(t.covariate);
      L.mains.push_back({c, coef(t.covariate)});
    }
    switch (t.kind) {
      case OccurrenceTermKind::kQuadratic: L.quadratics.push_back({c, coef(t.covariate + "^2")}); break;
      case OccurrenceTermKind::kInteraction:
        L.interactions.push_back({c, intern(L.covariates, t.modifier), coef(t.covariate + ":" + t.modifier)});
        break;
      case OccurrenceTermKind::kStratum: L.strata.push_back({c, intern(L.label_sets, t.modifier)}); break;
      case OccurrenceTermKind::kSvc: L.svc.push_back(c); break;
      default: break;
    }
  }
  return L;
}

DetectionLayout make_detection_layout(const OccupancyModelSpec& spec, int max_replicates) {
  DetectionLayout L;
  const auto names = detection_coefficient_names(spec, max_replicates);
  auto coef = [&](const std::string& n) {
    return static_cast<int>(std::find(names.begin(), names.end(), n) - names.begin());
  };
  L.n_coef = static_cast<int>(names.size());
  std::vector<std::string> seen;
  for (const auto& t : spec.detection) {
    switch (t.kind) {
      case DetectionTermKind::kIntercept: L.intercept = coef("(Intercept)"); break;
      case DetectionTermKind::kReplicateIntercept: L.replicate_intercepts = coef("rep[1]"); break;
      case DetectionTermKind::kLinear:
      case DetectionTermKind::kQuadratic: {
        const int c = intern(L.covariates, t.covariate);
        if (std::find(seen.begin(), seen.end(), t.covariate) == seen.end()) {
          seen.push_back(t.covariate);
          L.mains.push_back({c, coef(t.covariate)});
        }
        if (t.kind == DetectionTermKind::kQuadratic) L.quadratics.push_back({c, coef(t.covariate + "^2")});
        break;
      }
    }
  }
  return L;
}

void check_conformity(const OccurrenceLayout& layout, const OccurrenceParams& params,
                      const std::vector<int>& n_strata, int n_sites, int n_seasons) {
  if (static_cast<int>(params.beta.size()) != layout.n_coef)
    throw ContractError("expected " + std::to_string(layout.n_coef) + " occurrence coefficients, got " +
                        std::to_string(params.beta.size()));
  if (params.stratum_dev.size() != layout.strata.size())
    throw ContractError("stratum deviation blocks do not match stratum terms");
  for (std::size_t i = 0; i < layout.strata.size(); ++i)
    if (i < n_strata.size() && static_cast<int>(params.stratum_dev[i].size()) != n_strata[i])
      throw ContractError("stratum deviation count does not match the number of strata");
  if (layout.spatial_intercept != !params.w0.empty())
    throw ContractError("spatial intercept surface presence does not match the spec");
  if (layout.spatial_intercept && static_cast<int>(params.w0.size()) != n_sites)
    throw ContractError("spatial intercept surface has the wrong length");
  if (params.w1.size() != layout.svc.size()) throw ContractError("svc surfaces do not match svc terms");
  for (const auto& w : params.w1)
    if (static_cast<int>(w.size()) != n_sites) throw ContractError("svc surface has the wrong length");
  if (layout.ar1 != !params.eta.empty()) throw ContractError("season effects do not match the year effect");
  if (layout.ar1 && static_cast<int>(params.eta.size()) != n_seasons)
    throw ContractError("season effect vector has the wrong length");
}

double occurrence_logit(const OccurrenceLayout& L, const OccurrenceParams& p, std::span<const double> x,
                        std::span<const int> labels, int site, int season) {
  double v = L.intercept >= 0 ? p.beta[L.intercept] : 0.0;
  for (const auto& m : L.mains) v += p.beta[m.coef] * x[m.covariate];
  for (const auto& q : L.quadratics) v += p.beta[q.coef] * x[q.covariate] * x[q.covariate];
  for (const auto& i : L.interactions) v += p.beta[i.coef] * x[i.modifier] * x[i.covariate];
  for (std::size_t s = 0; s < L.strata.size(); ++s)
    v += p.stratum_dev[s][labels[L.strata[s].labels] - 1] * x[L.strata[s].covariate];
  for (std::size_t s = 0; s < L.svc.size(); ++s) v += p.w1[s][site] * x[L.svc[s]];
  if (L.spatial_intercept) v += p.w0[site];
  if (L.ar1) v += p.eta[season];
  return v;
}

double covariate_effect(const OccurrenceLayout& L, const OccurrenceParams& p, std::span<const double> x,
                        std::span<const int> labels, int site, int covariate) {
  double e = 0.0;
  for (const auto& m : L.mains)
    if (m.covariate == covariate) e += p.beta[m.coef];
  for (const auto& q : L.quadratics)
    if (q.covariate == covariate) e += 2.0 * p.beta[q.coef] * x[covariate];
  for (const auto& i : L.interactions) {
    if (i.covariate == covariate) e += p.beta[i.coef] * x[i.modifier];
    if (i.modifier == covariate) e += p.beta[i.coef] * x[i.covariate];
  }
  for (std::size_t s = 0; s < L.strata.size(); ++s)
    if (L.strata[s].covariate == covariate) e += p.stratum_dev[s][labels[L.strata[s].labels] - 1];
  for (std::size_t s = 0; s < L.svc.size(); ++s)
    if (L.svc[s] == covariate) e += p.w1[s][site];
  return e;
}

double detection_logit(const DetectionLayout& L, const DetectionParams& p, std::span<const double> x,
                       int replicate) {
  double v = L.intercept >= 0 ? p.alpha[L.intercept] : 0.0;
  if (L.replicate_intercepts >= 0) v += p.alpha[L.replicate_intercepts + replicate];
  for (const auto& m : L.mains) v += p.alpha[m.coef] * x[m.covariate];
  for (const auto& q : L.quadratics) v += p.alpha[q.coef] * x[q.covariate] * x[q.covariate];
  return v;
}

double occurrence_logit(const OccupancyModelSpec& spec, const OccurrenceParams& params, const CovariateSet& covs,
                        int site, int season) {
  const OccurrenceLayout L = make_occurrence_layout(spec);
  std::vector<int> n_strata;
  std::vector<int> labels;
  for (const auto& name : L.label_sets) {
    const auto* s = covs.find_strata(name);
    if (!s) throw ContractError("unknown stratum label set '" + name + "'");
    labels.push_back(s->labels[site]);
  }
  for (const auto& st : L.strata) n_strata.push_back(covs.find_strata(L.label_sets[st.labels])->n_strata);
  check_conformity(L, params, n_strata, covs.n_sites, covs.n_seasons);
  std::vector<double> x;
  for (const auto& name : L.covariates) {
    if (!covs.find_occurrence(name)) throw ContractError("unknown occurrence covariate '" + name + "'");
    x.push_back(covs.occ(name, site, season));
  }
  return occurrence_logit(L, params, x, labels, site, season);
}

double detection_logit(const OccupancyModelSpec& spec, const DetectionParams& params, const CovariateSet& covs,
                       int site, int season, int replicate) {
  const DetectionLayout L = make_detection_layout(spec, covs.max_replicates);
  if (static_cast<int>(params.alpha.size()) != L.n_coef)
    throw ContractError("expected " + std::to_string(L.n_coef) + " detection coefficients, got " +
                        std::to_string(params.alpha.size()));
  std::vector<double> x;
  for (const auto& name : L.covariates) x.push_back(covs.det(name, site, season, replicate));
  return detection_logit(L, params, x, replicate);
}

// ---------------------------------------------------------------------------

namespace {

double safe_log(double p) { return p > 0.0 ? std::log(p) : -INFINITY; }
double safe_log1m(double p) { return p < 1.0 ? std::log1p(-p) : -INFINITY; }

}  // namespace

double z_conditional_prob(double psi, std::span<const double> p, std::span<const int> y) {
  if (p.size() != y.size()) throw ContractError("detection probability and observation lengths differ");
  for (int v : y)
    if (v == 1) return 1.0;
  const double log_present = safe_log(psi) + [&] {
    double s = 0.0;
    for (double pk : p) s += safe_log1m(pk);
    return s;
  }();
  const double log_absent = safe_log1m(psi);
  if (log_present == -INFINITY) return 0.0;
  return std::exp(log_present - log_add(log_present, log_absent));
}

double z_conditional_prob_logit(double psi_logit, std::span<const double> p_logit, std::span<const std::int8_t> y) {
  if (p_logit.size() != y.size()) throw ContractError("detection logit and observation lengths differ");
  double log_miss = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    if (y[k] == 1) return 1.0;
    if (y[k] == 0) log_miss += log1m_logistic(p_logit[k]);
  }
  const double log_present = log_logistic(psi_logit) + log_miss;
  const double log_absent = log1m_logistic(psi_logit);
  return std::exp(log_present - log_add(log_present, log_absent));
}

double marginal_unit_loglik(double psi, std::span<const double> p, std::span<const int> y) {
  if (p.size() != y.size()) throw ContractError("detection probability and observation lengths differ");
  double log_obs = safe_log(psi);
  bool any = false;
  for (std::size_t k = 0; k < y.size(); ++k) {
    if (y[k] == 1) {
      any = true;
      log_obs += safe_log(p[k]);
    } else if (y[k] == 0) {
      log_obs += safe_log1m(p[k]);
    }
  }
  return any ? log_obs : log_add(log_obs, safe_log1m(psi));
}

double marginal_unit_loglik_logit(double psi_logit, std::span<const double> p_logit,
                                  std::span<const std::int8_t> y) {
  if (p_logit.size() != y.size()) throw ContractError("detection logit and observation lengths differ");
  double log_obs = log_logistic(psi_logit);
  bool any = false;
  for (std::size_t k = 0; k < y.size(); ++k) {
    if (y[k] == 1) {
      any = true;
      log_obs += log_logistic(p_logit[k]);
    } else if (y[k] == 0) {
      log_obs += log1m_logistic(p_logit[k]);
    }
  }
  return any ? log_obs : log_add(log_obs, log1m_logistic(psi_logit));
}

}  // namespace svcsdm
