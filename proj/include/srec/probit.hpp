// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <vector>

#include "srec/core_model.hpp"

namespace srec {

// ---------------------------------------------------------------------------
// Standard normal

inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) * (0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * (0.5 * std::numbers::sqrt2)); }

// Upper tail 1 - Phi(x), without cancellation for large x.
inline double normal_sf(double x) { return 0.5 * std::erfc(x * (0.5 * std::numbers::sqrt2)); }

/// Mills ratio (1 - Phi(x)) / phi(x) for x >= 0; finite for any finite x, 0 at +inf.
inline double mills_ratio(double x) {
  if (std::isinf(x)) return x > 0 ? 0.0 : std::numeric_limits<double>::infinity();
  if (x < 6.0) return normal_sf(x) / normal_pdf(x);
  // Laplace continued fraction 1/(x+ 1/(x+ 2/(x+ 3/(x+ ...)))), evaluated bottom-up.
  double tail = x;
  for (int k = 120; k >= 1; --k) tail = x + k / tail;
  return 1.0 / tail;
}

// ---------------------------------------------------------------------------
// Truncated Gaussian moments

struct TruncatedGaussian {
  double mu = 0.0;
  double sigma = 1.0;
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
};

/// Raised when the truncation interval carries less than 1e-300 probability mass.
class DegenerateMass : public std::runtime_error {
 public:
  DegenerateMass() : std::runtime_error("truncated Gaussian mass underflows (< 1e-300)") {}
};

namespace detail {

// For Z ~ N(0,1) on (a, b]:
//   ratio1 = (phi(a) - phi(b)) / M,  ratio2 = (a phi(a) - b phi(b)) / M,  M = Phi(b) - Phi(a),
// so E[Z] = ratio1 and E[Z^2] = 1 + ratio2.
struct StdTruncMoments {
  double ratio1 = 0.0;
  double ratio2 = 0.0;
  double log_mass = 0.0;
};

inline constexpr double kStableThreshold = 6.0;
inline const double kLogMinMass = std::log(1e-300);

inline double x_pdf(double x) { return std::isinf(x) ? 0.0 : x * normal_pdf(x); }

// Both bounds in the upper tail: a >= 0. Everything is scaled by phi(a).
inline std::optional<StdTruncMoments> upper_tail_moments(double a, double b) {
  const double w = std::isinf(b) ? 0.0 : std::exp(-0.5 * (b - a) * (b + a));
  const double scaled_mass = mills_ratio(a) - (w == 0.0 ? 0.0 : w * mills_ratio(b));
  if (!(scaled_mass > 0.0)) return std::nullopt;
  StdTruncMoments m;
  m.log_mass = -0.5 * a * a - std::log(std::sqrt(2.0 * std::numbers::pi)) + std::log(scaled_mass);
  m.ratio1 = (1.0 - w) / scaled_mass;
  m.ratio2 = (a - (w == 0.0 ? 0.0 : b * w)) / scaled_mass;
  return m;
}

inline std::optional<StdTruncMoments> std_trunc_moments(double a, double b) {
  if (!(a < b)) return std::nullopt;
  if (std::isinf(a) && std::isinf(b)) return StdTruncMoments{};
  if (a >= kStableThreshold) return upper_tail_moments(a, b);
  if (b <= -kStableThreshold) {
    auto m = upper_tail_moments(-b, -a);
    if (m) m->ratio1 = -m->ratio1;
    return m;
  }
  double mass;
  if (a >= 0.0) {
    mass = normal_sf(a) - normal_sf(b);
  } else if (b <= 0.0) {
    mass = normal_cdf(b) - normal_cdf(a);
  } else {
    mass = 1.0 - normal_sf(b) - normal_cdf(a);
  }
  if (!(mass > 0.0)) return std::nullopt;
  StdTruncMoments m;
  m.log_mass = std::log(mass);
  const double pa = std::isinf(a) ? 0.0 : normal_pdf(a);
  const double pb = std::isinf(b) ? 0.0 : normal_pdf(b);
  m.ratio1 = (pa - pb) / mass;
  m.ratio2 = (x_pdf(a) - x_pdf(b)) / mass;
  return m;
}

inline StdTruncMoments checked_moments(const TruncatedGaussian& tg) {
  if (!(tg.sigma > 0.0)) throw std::invalid_argument("truncated Gaussian needs sigma > 0");
  if (!(tg.lo < tg.hi)) throw std::invalid_argument("truncated Gaussian needs lo < hi");
  const auto m = std_trunc_moments((tg.lo - tg.mu) / tg.sigma, (tg.hi - tg.mu) / tg.sigma);
  if (!m || m->log_mass < kLogMinMass) throw DegenerateMass{};
  return *m;
}

}  // namespace detail

inline double tg_mean(const TruncatedGaussian& tg) {
  const auto m = detail::checked_moments(tg);
  return tg.mu + tg.sigma * m.ratio1;
}

inline double tg_second_moment(const TruncatedGaussian& tg) {
  const auto m = detail::checked_moments(tg);
  return tg.mu * tg.mu + 2.0 * tg.mu * tg.sigma * m.ratio1 + tg.sigma * tg.sigma * (1.0 + m.ratio2);
}

inline double tg_variance(const TruncatedGaussian& tg) {
  const auto m = detail::checked_moments(tg);
  return tg.sigma * tg.sigma * (1.0 + m.ratio2 - m.ratio1 * m.ratio1);
}

struct TruncatedMoments {
  double mean = 0.0;
  double second = 0.0;
  bool clamped = false;
};

/// Mean and second moment; on degenerate mass falls back to the boundary nearest mu.
inline TruncatedMoments tg_moments_or_clamp(const TruncatedGaussian& tg) {
  const auto m = detail::std_trunc_moments((tg.lo - tg.mu) / tg.sigma, (tg.hi - tg.mu) / tg.sigma);
  if (m && m->log_mass >= detail::kLogMinMass) {
    return {tg.mu + tg.sigma * m->ratio1,
            tg.mu * tg.mu + 2.0 * tg.mu * tg.sigma * m->ratio1 + tg.sigma * tg.sigma * (1.0 + m->ratio2), false};
  }
  const double edge = (tg.mu <= tg.lo) ? tg.lo : tg.hi;
  return {edge, edge * edge, true};
}

// ---------------------------------------------------------------------------
// Ordered-probit discretization

/// Level k such that x lies in (pi_k, pi_{k+1}].
inline int discretize(double x, const RatingScale& scale) {
  if (std::isnan(x)) throw std::invalid_argument("cannot discretize NaN");
  const auto& t = scale.thresholds();
  const auto idx = std::lower_bound(t.begin(), t.end(), x) - t.begin();
  return std::clamp(static_cast<int>(idx), 1, scale.levels());
}

/// K levels with interior thresholds anchor, anchor + step, ..., anchor + (K-2) step.
inline RatingScale default_thresholds(int levels, double anchor, double step) {
  if (levels < 2) throw std::invalid_argument("rating scale needs K >= 2");
  if (!(step > 0.0)) throw std::invalid_argument("threshold step must be positive");
  std::vector<double> interior;
  interior.reserve(static_cast<std::size_t>(levels - 1));
  for (int k = 2; k <= levels; ++k) interior.push_back(anchor + (k - 2) * step);
  return RatingScale(std::move(interior));
}

/// Affine map between levels 1..K, star values and the centered latent scale.
struct StarScale {
  int levels = 5;
  double first = 1.0;   // star value of level 1
  double step = 1.0;    // star increment per level
  double center = 0.0;  // subtracted from star values before thresholding

  double last() const { return first + (levels - 1) * step; }
  double star_of_level(int k) const { return first + (k - 1) * step; }
  double star_of_likeness(double x) const { return std::clamp(center + x, first, last()); }
  double likeness_of_star(double star) const { return star - center; }

  int level_of_star(double star) const {
    return static_cast<int>(std::lround((star - first) / step)) + 1;
  }

  // Thresholds sit half-way between adjacent star values, shifted by the center.
  RatingScale rating_scale() const { return default_thresholds(levels, first + 0.5 * step - center, step); }

  friend bool operator==(const StarScale&, const StarScale&) = default;
};

}  // namespace srec
