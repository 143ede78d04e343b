#pragma once

// Link functions, linear predictors and per-unit likelihood pieces of the
// occupancy model.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "svcsdm/data_model.hpp"

namespace svcsdm {

double logistic(double x);
/// Throws std::domain_error unless 0 < p < 1.
double logit(double p);
/// log(logistic(x)) and log(1 - logistic(x)) without underflow.
double log_logistic(double x);
double log1m_logistic(double x);

struct OccurrenceParams {
  /// Fixed coefficients in occurrence_coefficient_names() order.
  std::vector<double> beta;
  /// Stratum slope deviations, one vector per stratum term (index = label - 1).
  std::vector<std::vector<double>> stratum_dev;
  /// Spatial intercept surface; empty when the spec has none.
  std::vector<double> w0;
  /// One spatially-varying slope surface per svc term, in term order.
  std::vector<std::vector<double>> w1;
  /// Season effects; empty without an AR(1) year effect.
  std::vector<double> eta;
  double rho = 0.0;
  double sigma2_eta = 1.0;
};

struct DetectionParams {
  std::vector<double> alpha;
};

/// Occurrence terms resolved to coefficient slots and covariate indices.
struct OccurrenceLayout {
  struct Slot {
    int covariate = -1;
    int coef = -1;
  };
  struct Interaction {
    int covariate = -1;
    int modifier = -1;
    int coef = -1;
  };
  struct Stratum {
    int covariate = -1;
    int labels = -1;
  };

  std::vector<std::string> covariates;  // every occurrence covariate the spec touches
  std::vector<std::string> label_sets;  // every stratum label set the spec touches
  int intercept = -1;
  std::vector<Slot> mains;
  std::vector<Slot> quadratics;
  std::vector<Interaction> interactions;
  std::vector<Stratum> strata;  // index = stratum term index
  std::vector<int> svc;         // covariate index per svc term
  bool spatial_intercept = false;
  bool ar1 = false;
  int n_coef = 0;

  int covariate_index(const std::string& name) const;
};

struct DetectionLayout {
  struct Slot {
    int covariate = -1;
    int coef = -1;
  };
  std::vector<std::string> covariates;
  int intercept = -1;
  int replicate_intercepts = -1;  // first slot of K per-replicate intercepts
  std::vector<Slot> mains;
  std::vector<Slot> quadratics;
  int n_coef = 0;
};

OccurrenceLayout make_occurrence_layout(const OccupancyModelSpec& spec);
DetectionLayout make_detection_layout(const OccupancyModelSpec& spec, int max_replicates);

/// Throws ContractError unless `params` has the shape `layout` requires for `n_sites`
/// sites and `n_seasons` seasons.
void check_conformity(const OccurrenceLayout& layout, const OccurrenceParams& params,
                      const std::vector<int>& n_strata, int n_sites, int n_seasons);

/// Linear predictor from resolved covariate values: `x[i]` is the value of
/// layout.covariates[i] at the unit, `labels[i]` the unit's label in layout.label_sets[i].
double occurrence_logit(const OccurrenceLayout& layout, const OccurrenceParams& params,
                        std::span<const double> x, std::span<const int> labels, int site, int season);

/// d logit(psi) / d x for covariate `covariate` (an index into layout.covariates).
double covariate_effect(const OccurrenceLayout& layout, const OccurrenceParams& params,
                        std::span<const double> x, std::span<const int> labels, int site, int covariate);

double detection_logit(const DetectionLayout& layout, const DetectionParams& params,
                       std::span<const double> x, int replicate);

/// Spec-level evaluation straight from a CovariateSet; checks parameter conformity.
double occurrence_logit(const OccupancyModelSpec& spec, const OccurrenceParams& params,
                        const CovariateSet& covs, int site, int season);
double detection_logit(const OccupancyModelSpec& spec, const DetectionParams& params,
                       const CovariateSet& covs, int site, int season, int replicate);

/// P(z = 1 | y, psi, p) over the non-missing replicates. Exactly 1 when any y is 1.
double z_conditional_prob(double psi, std::span<const double> p, std::span<const int> y);
/// Same quantity from logits, entirely in log space.
double z_conditional_prob_logit(double psi_logit, std::span<const double> p_logit,
                                std::span<const std::int8_t> y);

/// log P(y | psi, p) with z summed out.
double marginal_unit_loglik(double psi, std::span<const double> p, std::span<const int> y);
double marginal_unit_loglik_logit(double psi_logit, std::span<const double> p_logit,
                                  std::span<const std::int8_t> y);

}  // namespace svcsdm
