#pragma once

#include "svcsdm/rng.hpp"

namespace svcsdm {

/// Exact draw from PG(1, c) by the alternating-series rejection sampler
/// (Devroye-style, truncation point 0.64).
double sample_polya_gamma(double c, Rng& rng);

/// E[PG(1, c)] = tanh(c / 2) / (2c), with limit 1/4 at c = 0.
double polya_gamma_mean(double c);

}  // namespace svcsdm
