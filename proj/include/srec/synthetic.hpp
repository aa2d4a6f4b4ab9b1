// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "srec/core_model.hpp"
#include "srec/probit.hpp"

namespace srec {

struct SimConfig {
  // Ground truth. sigma2_E, sigma2_U and sigma2_V may be zero here.
  ModelParams truth{0.5, 1e-2, 5e-3, 1.0, 1.0, 2};
  StarScale stars{5, -2.0, 1.0, 0.0};
  int initial_users = 0;  // born at t = 0
  int initial_items = 0;
  double user_birth_rate = 1.0;  // per day
  double item_birth_rate = 1.0;  // per day
  double rating_rate = 1.0;      // per day, per born user
  Time horizon = 365.0;
  Time time_quantum = 0.0;  // > 0 rounds event times up to a grid, producing same-time batches
  std::uint64_t seed = 1;

  void validate() const {
    if (truth.d < 1) throw std::invalid_argument("simulator needs d >= 1");
    for (double v : {truth.sigma2_E, truth.sigma2_U, truth.sigma2_V}) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("simulator variances must be >= 0");
    }
    if (!(truth.sigma2_U0 > 0.0) || !(truth.sigma2_V0 > 0.0)) throw std::invalid_argument("birth variances must be > 0");
    if (initial_users < 0 || initial_items < 0) throw std::invalid_argument("initial populations must be >= 0");
    if (!(user_birth_rate >= 0.0) || !(item_birth_rate >= 0.0) || !(rating_rate > 0.0)) {
      throw std::invalid_argument("simulator rates must be positive");
    }
    if (!(horizon > 0.0)) throw std::invalid_argument("simulator horizon must be positive");
    if (!(time_quantum >= 0.0)) throw std::invalid_argument("time quantum must be >= 0");
  }
};

/// Ground-truth latent value of one entity at one of its event times.
struct TruthPoint {
  Side side = Side::user;
  std::uint32_t entity = 0;  // index into the log's id table
  Time time = 0.0;
  Vector value;
};

struct SimResult {
  EventLog log;
  std::vector<TruthPoint> truth;
};

namespace detail {

class LatentPopulation {
 public:
  LatentPopulation(int d, double drift, double birth_variance)
      : d_(d), drift_(drift), birth_sd_(std::sqrt(birth_variance)), sum_(Vector::Zero(d)) {}

  template <typename Rng>
  std::uint32_t born(Time t, Rng& rng) {
    Vector v(d_);
    for (int k = 0; k < d_; ++k) v[k] = normal_(rng);
    if (!values_.empty() && t > 0.0) v = sum_ / static_cast<double>(values_.size()) + birth_sd_ * v;
    sum_ += v;
    values_.push_back(std::move(v));
    last_.push_back(t);
    return static_cast<std::uint32_t>(values_.size() - 1);
  }

  // Brownian increment from the entity's previous event time to t.
  template <typename Rng>
  const Vector& advance(std::uint32_t idx, Time t, Rng& rng) {
    Vector& v = values_[idx];
    const double sd = std::sqrt(drift_ * (t - last_[idx]));
    if (sd > 0.0) {
      Vector step(d_);
      for (int k = 0; k < d_; ++k) step[k] = sd * normal_(rng);
      v += step;
      sum_ += step;
    }
    last_[idx] = t;
    return v;
  }

  const Vector& value(std::uint32_t idx) const { return values_[idx]; }
  std::size_t size() const { return values_.size(); }

 private:
  int d_;
  double drift_;
  double birth_sd_;
  Vector sum_;
  std::vector<Vector> values_;
  std::vector<Time> last_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace detail

/// Ancestral sampling of births, Brownian latent paths and ordered-probit ratings.
/// Arrivals are homogeneous Poisson; the rated item is uniform among born items.
inline SimResult generate(const SimConfig& cfg) {
  cfg.validate();
  const int d = cfg.truth.d;
  const RatingScale scale = cfg.stars.rating_scale();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  detail::LatentPopulation users(d, cfg.truth.sigma2_U, cfg.truth.sigma2_U0);
  detail::LatentPopulation items(d, cfg.truth.sigma2_V, cfg.truth.sigma2_V0);
  const double sigma_e = std::sqrt(cfg.truth.sigma2_E);

  SimResult out;
  auto add_user = [&](Time t) {
    const auto idx = users.born(t, rng);
    out.log.add_user_birth(t, "u" + std::to_string(idx));
    out.truth.push_back({Side::user, idx, t, users.value(idx)});
  };
  auto add_item = [&](Time t) {
    const auto idx = items.born(t, rng);
    out.log.add_item_birth(t, "i" + std::to_string(idx));
    out.truth.push_back({Side::item, idx, t, items.value(idx)});
  };

  for (int k = 0; k < cfg.initial_users; ++k) add_user(0.0);
  for (int k = 0; k < cfg.initial_items; ++k) add_item(0.0);

  Time clock = 0.0;
  while (true) {
    const double rating_total = items.size() > 0 ? cfg.rating_rate * static_cast<double>(users.size()) : 0.0;
    const double total = cfg.user_birth_rate + cfg.item_birth_rate + rating_total;
    if (!(total > 0.0)) break;
    clock += std::exponential_distribution<double>(total)(rng);
    if (clock > cfg.horizon) break;
    Time t = clock;
    if (cfg.time_quantum > 0.0) t = std::ceil(clock / cfg.time_quantum) * cfg.time_quantum;
    if (t > cfg.horizon) break;

    const double pick = std::uniform_real_distribution<double>(0.0, total)(rng);
    if (pick < cfg.user_birth_rate) {
      add_user(t);
    } else if (pick < cfg.user_birth_rate + cfg.item_birth_rate) {
      add_item(t);
    } else {
      const auto u = static_cast<std::uint32_t>(std::uniform_int_distribution<std::size_t>(0, users.size() - 1)(rng));
      const auto i = static_cast<std::uint32_t>(std::uniform_int_distribution<std::size_t>(0, items.size() - 1)(rng));
      const Vector& uv = users.advance(u, t, rng);
      const Vector& iv = items.advance(i, t, rng);
      const double x = uv.dot(iv) + sigma_e * noise(rng);
      out.log.events.push_back(Event::rating(t, u, i, discretize(x, scale)));
      out.truth.push_back({Side::user, u, t, uv});
      out.truth.push_back({Side::item, i, t, iv});
    }
  }
  return out;
}

inline void write_truth_csv(const SimResult& sim, std::ostream& os, int d) {
  os << "entity,kind,time";
  for (int k = 0; k < d; ++k) os << ",mean_" << k;
  os << '\n';
  for (const auto& p : sim.truth) {
    const auto& name = p.side == Side::user ? sim.log.users.name(p.entity) : sim.log.items.name(p.entity);
    os << name << ',' << to_string(p.side) << ',' << detail::format_double(p.time);
    for (int k = 0; k < d; ++k) os << ',' << detail::format_double(p.value[k]);
    os << '\n';
  }
}

}  // namespace srec
