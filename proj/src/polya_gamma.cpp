#include "svcsdm/polya_gamma.hpp"

#include <cmath>
#include <numbers>

namespace svcsdm {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTrunc = 0.64;

// log of the standard normal CDF.
double log_norm_cdf(double x) { return std::log(0.5 * std::erfc(-x / std::numbers::sqrt2)); }

// n-th term of the series representation of the J*(1, 0) density at x.
double series_term(int n, double x) {
  const double k = (n + 0.5) * kPi;
  if (x > kTrunc) return k * std::exp(-0.5 * k * k * x);
  if (x <= 0.0) return 0.0;
  const double e = -1.5 * (std::log(0.5 * kPi) + std::log(x)) + std::log(k) - 2.0 * (n + 0.5) * (n + 0.5) / x;
  return std::exp(e);
}

// Probability of drawing from the truncated exponential piece of the proposal.
double exponential_mass(double z) {
  const double fz = 0.125 * kPi * kPi + 0.5 * z * z;
  const double b = std::sqrt(1.0 / kTrunc) * (kTrunc * z - 1.0);
  const double a = -std::sqrt(1.0 / kTrunc) * (kTrunc * z + 1.0);
  const double x0 = std::log(fz) + fz * kTrunc;
  const double xb = x0 - z + log_norm_cdf(b);
  const double xa = x0 + z + log_norm_cdf(a);
  const double q_over_p = 4.0 / kPi * (std::exp(xb) + std::exp(xa));
  return 1.0 / (1.0 + q_over_p);
}

// Inverse-Gaussian(1/z, 1) truncated to (0, kTrunc).
double truncated_inverse_gaussian(double z, Rng& rng) {
  const double mu = 1.0 / z;  // +inf when z == 0
  double x = kTrunc + 1.0;
  if (mu > kTrunc) {
    double alpha = 0.0;
    while (rng.uniform() > alpha) {
      double e1 = rng.exponential(), e2 = rng.exponential();
      while (e1 * e1 > 2.0 * e2 / kTrunc) {
        e1 = rng.exponential();
        e2 = rng.exponential();
      }
      x = kTrunc / ((1.0 + kTrunc * e1) * (1.0 + kTrunc * e1));
      alpha = std::exp(-0.5 * z * z * x);
    }
  } else {
    while (x > kTrunc) {
      const double n = rng.normal();
      const double y = n * n;
      x = mu + 0.5 * mu * mu * y - 0.5 * mu * std::sqrt(4.0 * mu * y + (mu * y) * (mu * y));
      if (rng.uniform() > mu / (mu + x)) x = mu * mu / x;
    }
  }
  return x;
}

}  // namespace

double sample_polya_gamma(double c, Rng& rng) {
  const double z = 0.5 * std::abs(c);
  const double fz = 0.125 * kPi * kPi + 0.5 * z * z;
  // Consecutive draws often share c (e.g. intercept-only detection), so the mixture
  // weight is cached per thread.
  thread_local double cached_z = -1.0, cached_p = 0.0;
  if (z != cached_z) {
    cached_z = z;
    cached_p = exponential_mass(z);
  }
  const double p_exp = cached_p;
  for (;;) {
    const double x = rng.uniform() < p_exp ? kTrunc + rng.exponential() / fz : truncated_inverse_gaussian(z, rng);
    double s = series_term(0, x);
    const double y = rng.uniform() * s;
    for (int n = 1;; ++n) {
      if (n % 2 == 1) {
        s -= series_term(n, x);
        if (y <= s) return 0.25 * x;
      } else {
        s += series_term(n, x);
        if (y > s) break;
      }
    }
  }
}

double polya_gamma_mean(double c) {
  if (std::abs(c) < 1e-8) return 0.25;
  return std::tanh(0.5 * c) / (2.0 * c);
}

}  // namespace svcsdm
