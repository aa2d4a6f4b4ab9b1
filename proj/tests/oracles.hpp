// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

// Reference computations used only by the tests. None of them call into the library's
// probit or filter code; they rebuild the quantities from first principles.

#include <cmath>
#include <functional>
#include <numbers>
#include <utility>
#include <vector>

namespace srec::oracle {

inline double std_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

/// Composite Simpson rule with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double sum = f(a) + f(b);
  for (int k = 1; k < n; ++k) sum += f(a + k * h) * (k % 2 ? 4.0 : 2.0);
  return sum * h / 3.0;
}

/// Raw moments E[X^p], p = 1, 2 of N(mu, sigma^2) restricted to (lo, hi], by quadrature.
/// Infinite bounds are cut at 14 standard deviations from mu.
inline std::pair<double, double> truncated_moments(double mu, double sigma, double lo, double hi, int panels = 40000) {
  const double a = std::isinf(lo) ? mu - 14.0 * sigma : lo;
  const double b = std::isinf(hi) ? mu + 14.0 * sigma : hi;
  auto dens = [&](double x) { return std_pdf((x - mu) / sigma); };
  const double z = simpson(dens, a, b, panels);
  const double m1 = simpson([&](double x) { return x * dens(x); }, a, b, panels) / z;
  const double m2 = simpson([&](double x) { return x * x * dens(x); }, a, b, panels) / z;
  return {m1, m2};
}

/// Standard normal cdf from the Taylor series Phi(x) = 1/2 + phi(x) * sum x^(2n+1) / (2n+1)!!,
/// summed in long double.
inline long double cdf_series(long double x) {
  long double term = x, sum = x;
  for (int n = 1; n < 400; ++n) {
    term *= x * x / (2.0L * n + 1.0L);
    sum += term;
    if (std::fabs(term) < 1e-30L * std::fabs(sum)) break;
  }
  const long double pdf = std::exp(-0.5L * x * x) / std::sqrt(2.0L * std::numbers::pi_v<long double>);
  return 0.5L + pdf * sum;
}

struct GridPosterior {
  double mean_u = 0.0;
  double mean_v = 0.0;
  double var_u = 0.0;
  double var_v = 0.0;
};

/// One observed level with its interval (lo, hi].
struct Observation {
  double lo;
  double hi;
};

/// Exact posterior of scalar (U, V) under independent Gaussian priors and ordered-probit
/// observations X = U V + E, E ~ N(0, sigma2_e), evaluated by midpoint integration on an
/// n x n grid spanning +-6 prior standard deviations.
inline GridPosterior grid_posterior(double mu_u, double var_u, double mu_v, double var_v,
                                    const std::vector<Observation>& obs, double sigma2_e, int n = 400) {
  const double su = std::sqrt(var_u), sv = std::sqrt(var_v), se = std::sqrt(sigma2_e);
  const double hu = 12.0 * su / n, hv = 12.0 * sv / n;
  auto cdf = [](double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); };
  double w_sum = 0.0, u1 = 0.0, v1 = 0.0, u2 = 0.0, v2 = 0.0;
  for (int a = 0; a < n; ++a) {
    const double u = mu_u - 6.0 * su + (a + 0.5) * hu;
    const double pu = std::exp(-0.5 * (u - mu_u) * (u - mu_u) / var_u);
    for (int b = 0; b < n; ++b) {
      const double v = mu_v - 6.0 * sv + (b + 0.5) * hv;
      double w = pu * std::exp(-0.5 * (v - mu_v) * (v - mu_v) / var_v);
      for (const auto& o : obs) {
        const double upper = std::isinf(o.hi) ? 1.0 : cdf((o.hi - u * v) / se);
        const double lower = std::isinf(o.lo) ? 0.0 : cdf((o.lo - u * v) / se);
        w *= upper - lower;
      }
      w_sum += w;
      u1 += w * u;
      v1 += w * v;
      u2 += w * u * u;
      v2 += w * v * v;
    }
  }
  GridPosterior g;
  g.mean_u = u1 / w_sum;
  g.mean_v = v1 / w_sum;
  g.var_u = u2 / w_sum - g.mean_u * g.mean_u;
  g.var_v = v2 / w_sum - g.mean_v * g.mean_v;
  return g;
}

struct MeanfieldPosterior {
  double mean_u, var_u, mean_v, var_v;
};

/// Scalar factorized posterior q(U) q(V) q(X) after each observation in turn, each one solved to a
/// fixed point by closed-form coordinate updates; the result of one step is the prior of the next.
inline MeanfieldPosterior sequential_meanfield(double mu_u, double var_u, double mu_v, double var_v,
                                               const std::vector<Observation>& obs, double sigma2_e) {
  const double se = std::sqrt(sigma2_e);
  auto cdf = [](double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); };
  auto trunc_mean = [&](double m, double lo, double hi) {
    const double a = (lo - m) / se, b = (hi - m) / se;
    const double pa = std::isinf(a) ? 0.0 : std_pdf(a), pb = std::isinf(b) ? 0.0 : std_pdf(b);
    const double mass = (std::isinf(b) ? 1.0 : cdf(b)) - (std::isinf(a) ? 0.0 : cdf(a));
    return m + se * (pa - pb) / mass;
  };
  MeanfieldPosterior q{mu_u, var_u, mu_v, var_v};
  for (const auto& o : obs) {
    const MeanfieldPosterior prior = q;
    for (int it = 0; it < 100000; ++it) {
      const double x = trunc_mean(q.mean_u * q.mean_v, o.lo, o.hi);
      q.var_u = 1.0 / (1.0 / prior.var_u + (q.var_v + q.mean_v * q.mean_v) / sigma2_e);
      const double mu = q.var_u * (prior.mean_u / prior.var_u + x * q.mean_v / sigma2_e);
      q.var_v = 1.0 / (1.0 / prior.var_v + (q.var_u + mu * mu) / sigma2_e);
      const double mv = q.var_v * (prior.mean_v / prior.var_v + x * mu / sigma2_e);
      const double change = std::max(std::abs(mu - q.mean_u), std::abs(mv - q.mean_v));
      q.mean_u = mu;
      q.mean_v = mv;
      if (change < 1e-15) break;
    }
  }
  return q;
}

struct JointSmooth {
  double mean1, mean2;
  double var1, var2;
  double cross;  // Cov(x2, x1)
};

/// Two-time scalar chain: x1 has filtered posterior N(m1, p1); x2 = x1 + w, w ~ N(0, q);
/// the filtered posterior of x2 is N(m2, p2). The likelihood at time 2 is recovered as
/// precision lam = 1/p2 - 1/(p1+q), information eta = m2/p2 - m1/(p1+q), and the joint
/// Gaussian over (x1, x2) is inverted directly from its 2 x 2 precision matrix.
inline JointSmooth joint_two_step(double m1, double p1, double q, double m2, double p2) {
  const double lam = 1.0 / p2 - 1.0 / (p1 + q);
  const double eta = m2 / p2 - m1 / (p1 + q);
  const double j11 = 1.0 / p1 + 1.0 / q, j12 = -1.0 / q, j22 = 1.0 / q + lam;
  const double h1 = m1 / p1, h2 = eta;
  const double det = j11 * j22 - j12 * j12;
  const double c11 = j22 / det, c22 = j11 / det, c12 = -j12 / det;
  return {c11 * h1 + c12 * h2, c12 * h1 + c22 * h2, c11, c22, c12};
}

}  // namespace srec::oracle
