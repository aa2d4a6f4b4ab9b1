// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "srec/core_model.hpp"
#include "srec/log.hpp"
#include "srec/online_filter.hpp"
#include "srec/probit.hpp"

namespace srec {

// ---------------------------------------------------------------------------
// Forward pass

/// Filtered moments of one entity at each of its event times.
/// Entry 0 is the birth; priors of later entries are the propagated previous posterior.
struct TrajectoryRecord {
  Side side = Side::user;
  std::size_t slot = 0;
  std::string id;
  double drift = 0.0;          // Brownian variance rate used while filtering
  LatentState birth_prior;     // prior at entry 0
  bool first_entry_rated = false;
  std::vector<Time> times;
  std::vector<Vector> means;   // filtered posterior
  std::vector<Matrix> covs;

  std::size_t size() const { return times.size(); }

  LatentState posterior(std::size_t k) const { return {means.at(k), covs.at(k), times.at(k)}; }

  LatentState prior(std::size_t k) const {
    if (k == 0) return birth_prior;
    return propagate(posterior(k - 1), times.at(k), drift);
  }
};

struct RatingRecord {
  std::size_t user = 0;  // filter slots
  std::size_t item = 0;
  int level = 0;
  Time time = 0.0;
  std::size_t user_entry = 0;  // index into the entity's trajectory
  std::size_t item_entry = 0;
  double mu = 0.0;
  double x_mean = 0.0;
};

struct ForwardResult {
  std::vector<TrajectoryRecord> users;
  std::vector<TrajectoryRecord> items;
  std::vector<RatingRecord> ratings;
  FilterState final_state;
  StreamMetrics metrics;
};

/// Runs the online filter over the whole log, recording every entity's prior/posterior moments.
inline ForwardResult forward_pass(const EventLog& log, const ModelParams& params, const RatingScale& scale,
                                  BatchOptions opts = {}) {
  opts.record_states = true;
  ForwardResult out{{}, {}, {}, FilterState(params, scale), {}};
  auto observer = [&](const FilterState& fs, std::span<const Event>, const BatchResult& r) {
    for (const EntityUpdate& up : r.updates) {
      auto& list = up.side == Side::user ? out.users : out.items;
      if (up.born) {
        TrajectoryRecord rec;
        rec.side = up.side;
        rec.slot = up.slot;
        rec.id = fs.table(up.side).names[up.slot];
        rec.drift = fs.params.drift(up.side);
        rec.birth_prior = up.prior;
        rec.first_entry_rated = up.rated;
        if (list.size() != up.slot) throw std::logic_error("trajectory slots out of birth order");
        list.push_back(std::move(rec));
      }
      auto& rec = list[up.slot];
      rec.times.push_back(r.time);
      rec.means.push_back(up.posterior.mean);
      rec.covs.push_back(up.posterior.cov);
    }
    for (const RatingFit& fit : r.ratings) {
      out.ratings.push_back({fit.user, fit.item, fit.level, r.time, out.users[fit.user].size() - 1,
                             out.items[fit.item].size() - 1, fit.mu, fit.x_mean});
    }
  };
  out.metrics = run_stream(out.final_state, log, opts, observer);
  return out;
}

// ---------------------------------------------------------------------------
// Backward smoothing

struct SmoothedTrajectory {
  std::vector<Vector> means;
  std::vector<Matrix> covs;
  std::vector<Matrix> cross;       // Cov(U_{k+1}, U_k)
  std::vector<double> sq_jump;     // E ||U_{k+1} - U_k||^2
  std::vector<double> gaps;        // t_{k+1} - t_k
};

namespace detail {
// Solves a X = b for symmetric positive-definite a, with the same jitter fallback as spd_inverse.
inline Matrix spd_solve(const Matrix& a, const Matrix& b) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) {
    llt.compute(a + 1e-9 * Matrix::Identity(a.rows(), a.cols()));
    if (llt.info() != Eigen::Success) throw std::runtime_error("filtered covariance is singular");
  }
  return llt.solve(b);
}
}  // namespace detail

/// Rauch-Tung-Striebel pass over one entity's own event times under Brownian drift `sigma2`.
inline SmoothedTrajectory smooth_entity(const TrajectoryRecord& traj, double sigma2) {
  const std::size_t n = traj.size();
  if (n == 0) throw std::invalid_argument("cannot smooth an empty trajectory");
  SmoothedTrajectory out;
  out.means.resize(n);
  out.covs.resize(n);
  out.cross.resize(n - 1);
  out.sq_jump.resize(n - 1);
  out.gaps.resize(n - 1);
  out.means[n - 1] = traj.means[n - 1];
  out.covs[n - 1] = traj.covs[n - 1];

  for (std::size_t k = n - 1; k-- > 0;) {
    const double gap = traj.times[k + 1] - traj.times[k];
    if (!(gap > 0.0)) throw std::invalid_argument("trajectory times must be strictly increasing");
    const Matrix& filt = traj.covs[k];
    Matrix predicted = filt;
    predicted.diagonal().array() += sigma2 * gap;
    // gain = filt * predicted^{-1}; both symmetric so gain^T = predicted^{-1} * filt
    const Matrix gain_t = detail::spd_solve(predicted, filt);
    const Matrix gain = gain_t.transpose();

    out.means[k] = traj.means[k] + gain * (out.means[k + 1] - traj.means[k]);
    Matrix cov = filt + gain * (out.covs[k + 1] - predicted) * gain_t;
    symmetrize(cov);
    out.covs[k] = std::move(cov);
    out.cross[k] = out.covs[k + 1] * gain_t;
    out.gaps[k] = gap;
    out.sq_jump[k] = (out.means[k + 1] - out.means[k]).squaredNorm() + out.covs[k + 1].trace() +
                     out.covs[k].trace() - 2.0 * out.cross[k].trace();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sufficient statistics and M-step

/// Offline moments feeding the noise-variance update for one rating.
struct RatingMoments {
  double x_mean = 0.0;
  double x_second = 0.0;
  Vector u_mean;
  Matrix u_second;  // E[U U^T]
  Vector v_mean;
  Matrix v_second;
};

/// E[(X - U^T V)^2] with X, U, V independent.
inline double expected_sq_residual(const RatingMoments& m) {
  return m.x_second - 2.0 * m.x_mean * m.u_mean.dot(m.v_mean) + m.u_second.cwiseProduct(m.v_second).sum();
}

struct PairStat {
  double sq_jump = 0.0;
  double gap = 0.0;
};

struct SmoothedStats {
  int d = 1;
  std::vector<SmoothedTrajectory> users;
  std::vector<SmoothedTrajectory> items;
  std::vector<double> residual_sq;  // per rating
  std::vector<double> smoothed_mu;  // per rating, E[U]^T E[V] under the smoothed moments
  std::vector<PairStat> user_pairs;
  std::vector<PairStat> item_pairs;
};

struct SmoothingConfig {
  // Count the birth -> first-rating gap as a pair even when the birth carried no rating.
  bool include_birth_gap = true;
  unsigned threads = 1;
};

namespace detail {

inline std::vector<SmoothedTrajectory> smooth_side(const std::vector<TrajectoryRecord>& trajs, double sigma2,
                                                   unsigned threads) {
  std::vector<SmoothedTrajectory> out(trajs.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) out[k] = smooth_entity(trajs[k], sigma2);
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(trajs.size())));
  if (threads <= 1) {
    work(0, trajs.size());
    return out;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (trajs.size() + threads - 1) / threads;
    for (unsigned w = 0; w < threads; ++w) {
      const std::size_t b = w * chunk, e = std::min(trajs.size(), b + chunk);
      if (b >= e) continue;
      pool.emplace_back([&, w, b, e] {
        try {
          work(b, e);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);
  return out;
}

inline std::vector<PairStat> collect_pairs(const std::vector<TrajectoryRecord>& trajs,
                                           const std::vector<SmoothedTrajectory>& smoothed, bool include_birth_gap) {
  std::vector<PairStat> pairs;
  for (std::size_t e = 0; e < trajs.size(); ++e) {
    const auto& s = smoothed[e];
    for (std::size_t k = 0; k < s.gaps.size(); ++k) {
      if (k == 0 && !include_birth_gap && !trajs[e].first_entry_rated) continue;
      pairs.push_back({s.sq_jump[k], s.gaps[k]});
    }
  }
  return pairs;
}

}  // namespace detail

/// E-step: smooths every entity and rebuilds the truncated-Gaussian rating moments from smoothed means.
inline SmoothedStats smooth_all(const ForwardResult& fwd, const ModelParams& params, const RatingScale& scale,
                                const SmoothingConfig& cfg = {}) {
  SmoothedStats stats;
  stats.d = params.d;
  stats.users = detail::smooth_side(fwd.users, params.sigma2_U, cfg.threads);
  stats.items = detail::smooth_side(fwd.items, params.sigma2_V, cfg.threads);
  stats.user_pairs = detail::collect_pairs(fwd.users, stats.users, cfg.include_birth_gap);
  stats.item_pairs = detail::collect_pairs(fwd.items, stats.items, cfg.include_birth_gap);

  const double sigma_e = std::sqrt(params.sigma2_E);
  stats.residual_sq.reserve(fwd.ratings.size());
  stats.smoothed_mu.reserve(fwd.ratings.size());
  for (const RatingRecord& r : fwd.ratings) {
    const auto& su = stats.users[r.user];
    const auto& sv = stats.items[r.item];
    const Vector& mu_u = su.means[r.user_entry];
    const Vector& mu_v = sv.means[r.item_entry];
    const Matrix& cov_u = su.covs[r.user_entry];
    const Matrix& cov_v = sv.covs[r.item_entry];
    const double mu = mu_u.dot(mu_v);
    const auto x = tg_moments_or_clamp({mu, sigma_e, scale.lower(r.level), scale.upper(r.level)});
    // tr(E[UU^T] E[VV^T]) expanded to avoid forming the outer products
    const double trace = cov_u.cwiseProduct(cov_v).sum() + mu_v.dot(cov_u * mu_v) + mu_u.dot(cov_v * mu_u) + mu * mu;
    stats.residual_sq.push_back(x.second - 2.0 * x.mean * mu + trace);
    stats.smoothed_mu.push_back(mu);
  }
  return stats;
}

inline double estimate_sigma_E(const SmoothedStats& stats) {
  if (stats.residual_sq.empty()) throw std::invalid_argument("noise variance needs at least one rating");
  double sum = 0.0;
  for (double r : stats.residual_sq) sum += r;
  return sum / static_cast<double>(stats.residual_sq.size());
}

namespace detail {
// Per-coordinate Brownian variance rate: sum of E||dU||^2 / gap over d * (number of pairs).
inline double estimate_drift(const std::vector<PairStat>& pairs, int d) {
  if (pairs.empty()) throw std::invalid_argument("drift variance needs at least one adjacent event pair");
  double sum = 0.0;
  for (const auto& p : pairs) sum += p.sq_jump / p.gap;
  return sum / (static_cast<double>(d) * static_cast<double>(pairs.size()));
}
}  // namespace detail

inline double estimate_sigma_U(const SmoothedStats& stats) { return detail::estimate_drift(stats.user_pairs, stats.d); }
inline double estimate_sigma_V(const SmoothedStats& stats) { return detail::estimate_drift(stats.item_pairs, stats.d); }

// ---------------------------------------------------------------------------
// EM driver

struct EmConfig {
  int max_iterations = 30;  // E+M evaluations, extrapolation steps included
  double tolerance = 1e-3;  // max relative parameter change of one E+M evaluation
  bool accelerate = true;   // SQUAREM extrapolation over log-variances
  SmoothingConfig smoothing;
  BatchOptions batch;
};

struct EmTraceRow {
  int iter = 0;
  double sigma2_E = 0.0;
  double sigma2_U = 0.0;
  double sigma2_V = 0.0;
  double train_rmse = 0.0;
  double change = 0.0;  // max relative change of this evaluation against its input
};

struct EmResult {
  ModelParams params;
  std::vector<EmTraceRow> trace;
  bool converged = false;
};

/// Training RMSE in star units from smoothed likeness.
inline double training_rmse(const ForwardResult& fwd, const SmoothedStats& stats, const StarScale& stars) {
  if (fwd.ratings.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t r = 0; r < fwd.ratings.size(); ++r) {
    const double err = stars.star_of_likeness(stats.smoothed_mu[r]) - stars.star_of_level(fwd.ratings[r].level);
    sum += err * err;
  }
  return std::sqrt(sum / static_cast<double>(fwd.ratings.size()));
}

namespace detail {

using LogVariances = std::array<double, 3>;  // log sigma2_E, sigma2_U, sigma2_V

inline LogVariances to_log(const ModelParams& p) {
  return {std::log(p.sigma2_E), std::log(p.sigma2_U), std::log(p.sigma2_V)};
}

inline ModelParams from_log(ModelParams p, const LogVariances& x) {
  p.sigma2_E = std::exp(x[0]);
  p.sigma2_U = std::exp(x[1]);
  p.sigma2_V = std::exp(x[2]);
  return p;
}

inline double max_relative_change(const ModelParams& next, const ModelParams& prev) {
  auto rel = [](double a, double b) { return std::abs(a - b) / std::abs(b); };
  return std::max({rel(next.sigma2_E, prev.sigma2_E), rel(next.sigma2_U, prev.sigma2_U),
                   rel(next.sigma2_V, prev.sigma2_V)});
}

}  // namespace detail

/// One E-step (filter + smoother) and M-step from `params`.
inline ModelParams em_step(const EventLog& log, const ModelParams& params, const RatingScale& scale,
                           const StarScale& stars, const EmConfig& cfg, double* train_rmse = nullptr) {
  const ForwardResult fwd = forward_pass(log, params, scale, cfg.batch);
  const SmoothedStats stats = smooth_all(fwd, params, scale, cfg.smoothing);
  ModelParams next = params;
  next.sigma2_E = estimate_sigma_E(stats);
  next.sigma2_U = estimate_sigma_U(stats);
  next.sigma2_V = estimate_sigma_V(stats);
  for (double v : {next.sigma2_E, next.sigma2_U, next.sigma2_V}) {
    if (!std::isfinite(v) || !(v > 0.0)) throw std::runtime_error("EM produced a non-finite or non-positive variance");
  }
  if (train_rmse) *train_rmse = training_rmse(fwd, stats, stars);
  return next;
}

/// Variational EM over (sigma2_E, sigma2_U, sigma2_V). With `accelerate`, cycles of two plain
/// steps are followed by a SQUAREM extrapolation in log space and a stabilizing step; a failed
/// extrapolation falls back to the second plain step.
inline EmResult em_fit(const EventLog& log, const ModelParams& init, const StarScale& stars, const EmConfig& cfg = {}) {
  init.validate();
  const RatingScale scale = stars.rating_scale();
  EmResult result;
  result.params = init;
  int iter = 0;

  // Applies one E+M evaluation, records it and reports whether the change fell below tolerance.
  auto step = [&](const ModelParams& from, ModelParams& to) {
    double rmse = 0.0;
    to = em_step(log, from, scale, stars, cfg, &rmse);
    ++iter;
    const double change = detail::max_relative_change(to, from);
    result.trace.push_back({iter, to.sigma2_E, to.sigma2_U, to.sigma2_V, rmse, change});
    log::info("em iter ", iter, ": sigma2_E=", to.sigma2_E, " sigma2_U=", to.sigma2_U, " sigma2_V=", to.sigma2_V,
              " train_rmse=", rmse, " change=", change);
    return change < cfg.tolerance;
  };
  auto finish = [&](const ModelParams& p) {
    result.params = p;
    result.converged = true;
    return result;
  };

  ModelParams x0 = init;
  while (iter < cfg.max_iterations) {
    ModelParams x1, x2;
    if (step(x0, x1)) return finish(x1);
    if (!cfg.accelerate || iter >= cfg.max_iterations) {
      x0 = x1;
      continue;
    }
    if (step(x1, x2)) return finish(x2);
    if (iter >= cfg.max_iterations) {
      x0 = x2;
      break;
    }

    const auto l0 = detail::to_log(x0), l1 = detail::to_log(x1), l2 = detail::to_log(x2);
    detail::LogVariances r{}, v{};
    double rr = 0.0, vv = 0.0;
    for (int k = 0; k < 3; ++k) {
      r[k] = l1[k] - l0[k];
      v[k] = l2[k] - l1[k] - r[k];
      rr += r[k] * r[k];
      vv += v[k] * v[k];
    }
    if (!(vv > 0.0)) {
      x0 = x2;
      continue;
    }
    const double alpha = std::clamp(-std::sqrt(rr / vv), -64.0, -1.0);
    detail::LogVariances lx{};
    for (int k = 0; k < 3; ++k) lx[k] = l0[k] - 2.0 * alpha * r[k] + alpha * alpha * v[k];
    const ModelParams extrapolated = detail::from_log(x0, lx);

    ModelParams x3;
    try {
      if (step(extrapolated, x3)) return finish(x3);
      x0 = x3;
    } catch (const std::runtime_error& e) {
      log::info("em extrapolation rejected: ", e.what());
      x0 = x2;
    }
  }
  result.params = x0;
  return result;
}

inline void write_em_trace(const std::vector<EmTraceRow>& trace, std::ostream& os) {
  os << "iter,sigma2_E,sigma2_U,sigma2_V,train_rmse\n";
  for (const auto& row : trace) {
    os << row.iter << ',' << detail::format_double(row.sigma2_E) << ',' << detail::format_double(row.sigma2_U) << ','
       << detail::format_double(row.sigma2_V) << ',' << detail::format_double(row.train_rmse) << '\n';
  }
}

}  // namespace srec
