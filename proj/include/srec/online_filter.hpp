// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "srec/core_model.hpp"
#include "srec/log.hpp"
#include "srec/probit.hpp"

namespace srec {

// ---------------------------------------------------------------------------
// Small dense helpers

/// Inverse of a symmetric positive-definite matrix; retries once with 1e-9 I jitter.
inline Matrix spd_inverse(const Matrix& a) {
  const auto n = a.rows();
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) {
    llt.compute(a + 1e-9 * Matrix::Identity(n, n));
    if (llt.info() != Eigen::Success) throw std::runtime_error("matrix is not positive definite");
  }
  Matrix inv = llt.solve(Matrix::Identity(n, n));
  return 0.5 * (inv + inv.transpose());
}

inline void symmetrize(Matrix& m) { m = 0.5 * (m + m.transpose()).eval(); }

/// Mean unchanged, covariance grows by sigma2 * elapsed * I.
inline LatentState propagate(const LatentState& state, Time to, double sigma2) {
  const Time elapsed = to - state.last_event_time;
  if (elapsed < 0.0) throw std::invalid_argument("cannot propagate a latent state backwards in time");
  LatentState out = state;
  if (elapsed > 0.0) out.cov.diagonal().array() += sigma2 * elapsed;
  out.last_event_time = to;
  return out;
}

// ---------------------------------------------------------------------------
// Filter state

/// All live users (or items) of one side, in birth order.
struct EntityTable {
  std::vector<LatentState> states;
  std::vector<std::string> names;
  std::vector<Time> birth_times;
  std::unordered_map<std::string, std::size_t> index;
  Vector mean_sum;

  std::size_t size() const { return states.size(); }

  std::optional<std::size_t> find(std::string_view name) const {
    if (auto it = index.find(std::string{name}); it != index.end()) return it->second;
    return std::nullopt;
  }

  std::size_t slot(std::string_view name) const {
    if (auto s = find(name)) return *s;
    throw std::out_of_range("unknown entity '" + std::string(name) + "'");
  }
};

struct FilterState {
  ModelParams params;
  RatingScale scale;
  Time now = 0.0;
  EntityTable users;
  EntityTable items;

  FilterState(ModelParams p, RatingScale s) : params(std::move(p)), scale(std::move(s)) {
    params.validate();
    if (!scale.valid()) throw std::invalid_argument("filter needs a valid rating scale");
    users.mean_sum = Vector::Zero(params.d);
    items.mean_sum = Vector::Zero(params.d);
  }

  EntityTable& table(Side side) { return side == Side::user ? users : items; }
  const EntityTable& table(Side side) const { return side == Side::user ? users : items; }

  std::size_t user_count() const { return users.size(); }
  std::size_t item_count() const { return items.size(); }
};

/// Largest per-coordinate gap between the running mean sum and a fresh recomputation.
inline double audit_mean_sum(const FilterState& fs, Side side) {
  const auto& table = fs.table(side);
  Vector fresh = Vector::Zero(fs.params.d);
  for (const auto& s : table.states) fresh += s.mean;
  return table.size() == 0 ? table.mean_sum.cwiseAbs().maxCoeff() : (fresh - table.mean_sum).cwiseAbs().maxCoeff();
}

namespace detail {

/// Deterministic N(0, I) draw keyed on (seed, side, id), independent of arrival order.
inline Vector birth_offset(std::uint64_t seed, Side side, std::string_view id, int d) {
  std::vector<std::uint32_t> key{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                                 side == Side::user ? 1u : 2u};
  for (unsigned char c : id) key.push_back(c);
  std::seed_seq seq(key.begin(), key.end());
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(d);
  for (int k = 0; k < d; ++k) z[k] = normal(rng);
  return z;
}

}  // namespace detail

namespace detail {

// Births against a fixed population snapshot (sum of means and count).
inline std::size_t birth_from(FilterState& fs, Side side, std::string_view id, Time t, const Vector& pop_sum,
                              std::size_t pop_count) {
  if (t < fs.now) throw std::invalid_argument("birth at t=" + std::to_string(t) + " precedes filter time");
  auto& table = fs.table(side);
  if (table.find(id)) throw std::invalid_argument(std::string("duplicate ") + to_string(side) + " '" + std::string(id) + "'");

  const int d = fs.params.d;
  LatentState state;
  state.last_event_time = t;
  if (pop_count == 0 || t == 0.0) {
    state.mean = Vector::Zero(d);
    state.cov = Matrix::Identity(d, d);
  } else {
    state.mean = pop_sum / static_cast<double>(pop_count);
    state.cov = fs.params.birth_variance(side) * Matrix::Identity(d, d);
  }
  if (fs.params.birth_jitter > 0.0) {
    state.mean += fs.params.birth_jitter * birth_offset(fs.params.birth_seed, side, id, d);
  }
  table.mean_sum += state.mean;
  const std::size_t slot = table.size();
  table.states.push_back(std::move(state));
  table.names.emplace_back(id);
  table.birth_times.push_back(t);
  table.index.emplace(table.names.back(), slot);
  if (fs.now < t) fs.now = t;
  return slot;
}

}  // namespace detail

/// New entity prior: N(0, I) for the very first entities or at t = 0,
/// otherwise centered on the average of existing posterior means with variance sigma2_{U0,V0}.
/// The mean is then shifted by birth_jitter times a per-entity seeded standard normal draw.
inline std::size_t birth(FilterState& fs, Side side, std::string_view id, Time t) {
  const auto& table = fs.table(side);
  const Vector sum = table.mean_sum;
  return detail::birth_from(fs, side, id, t, sum, table.size());
}

inline std::size_t birth_user(FilterState& fs, std::string_view id, Time t) { return birth(fs, Side::user, id, t); }
inline std::size_t birth_item(FilterState& fs, std::string_view id, Time t) { return birth(fs, Side::item, id, t); }

// ---------------------------------------------------------------------------
// Batch processing

/// Caches EventLog index -> filter slot lookups for one log.
class SlotBinding {
 public:
  SlotBinding(const FilterState& fs, const EventLog& log)
      : fs_(&fs), log_(&log), users_(log.users.size(), kUnbound), items_(log.items.size(), kUnbound) {}

  std::size_t user(std::uint32_t idx) { return resolve(Side::user, idx); }
  std::size_t item(std::uint32_t idx) { return resolve(Side::item, idx); }

  void bind(Side side, std::uint32_t idx, std::size_t slot) { (side == Side::user ? users_ : items_)[idx] = slot; }

  std::size_t resolve(Side side, std::uint32_t idx) {
    auto& cache = side == Side::user ? users_ : items_;
    if (cache[idx] != kUnbound) return cache[idx];
    const auto& name = side == Side::user ? log_->users.name(idx) : log_->items.name(idx);
    const auto slot = fs_->table(side).find(name);
    if (!slot) throw std::runtime_error(std::string("rating references unborn ") + to_string(side) + " '" + name + "'");
    cache[idx] = *slot;
    return *slot;
  }

 private:
  static constexpr std::size_t kUnbound = static_cast<std::size_t>(-1);
  const FilterState* fs_;
  const EventLog* log_;
  std::vector<std::size_t> users_;
  std::vector<std::size_t> items_;
};

struct BatchOptions {
  int max_passes = 50;
  double tolerance = 1e-6;
  bool record_states = false;
};

struct RatingFit {
  std::size_t user = 0;  // filter slots
  std::size_t item = 0;
  int level = 0;
  double mu = 0.0;  // E[U]^T E[V] at the fixed point
  double x_mean = 0.0;
};

/// Prior (propagated or newborn) and posterior moments of one entity at a batch.
struct EntityUpdate {
  Side side = Side::user;
  std::size_t slot = 0;
  bool born = false;
  bool rated = false;
  LatentState prior;
  LatentState posterior;
};

struct BatchResult {
  Time time = 0.0;
  std::vector<RatingFit> ratings;
  std::vector<EntityUpdate> updates;  // only filled when BatchOptions::record_states
  std::size_t births = 0;
  std::size_t entity_updates = 0;
  int passes = 0;
  bool converged = true;
};

namespace detail {

struct Touched {
  std::size_t slot;
  LatentState prior;
  Matrix prior_precision;
  Vector prior_info;
  Vector mean;
  Matrix cov;
  std::vector<std::size_t> ratings;
};

inline std::size_t touch(std::vector<Touched>& list, std::unordered_map<std::size_t, std::size_t>& where,
                         std::size_t slot) {
  auto [it, inserted] = where.emplace(slot, list.size());
  if (inserted) list.push_back(Touched{slot, {}, {}, {}, {}, {}, {}});
  return it->second;
}

// Posterior of one entity given the other side's moments (information form).
inline double update_entity(Touched& self, const std::vector<Touched>& others,
                            const std::vector<std::size_t>& other_of_rating, const std::vector<double>& x_mean,
                            double inv_noise) {
  Matrix precision = self.prior_precision;
  Vector info = self.prior_info;
  for (std::size_t r : self.ratings) {
    const Touched& o = others[other_of_rating[r]];
    precision.noalias() += inv_noise * (o.cov + o.mean * o.mean.transpose());
    info.noalias() += (inv_noise * x_mean[r]) * o.mean;
  }
  self.cov = spd_inverse(precision);
  Vector mean = self.cov * info;
  const double change = (mean - self.mean).cwiseAbs().maxCoeff();
  self.mean = std::move(mean);
  return change;
}

}  // namespace detail

/// Processes all events sharing one timestamp: births, then a coordinate-ascent
/// fixed point over the touched users, items and latent ratings.
inline BatchResult process_batch(FilterState& fs, const EventLog& log, std::span<const Event> batch,
                                 SlotBinding& binding, const BatchOptions& opts = {}) {
  BatchResult result;
  if (batch.empty()) return result;
  const Time t = batch.front().time;
  result.time = t;
  for (const Event& e : batch) {
    if (e.time != t) throw std::invalid_argument("batch events must share one timestamp");
  }
  if (t < fs.now) throw std::invalid_argument("batch time precedes filter time");

  // Newborns of one instant all see the population as it was before the batch.
  std::vector<std::pair<Side, std::size_t>> born;
  const Vector user_sum = fs.users.mean_sum, item_sum = fs.items.mean_sum;
  const std::size_t user_pop = fs.users.size(), item_pop = fs.items.size();
  for (const Event& e : batch) {
    if (e.kind == EventKind::user_birth) {
      const auto slot = detail::birth_from(fs, Side::user, log.users.name(e.user), t, user_sum, user_pop);
      binding.bind(Side::user, e.user, slot);
      born.emplace_back(Side::user, slot);
    } else if (e.kind == EventKind::item_birth) {
      const auto slot = detail::birth_from(fs, Side::item, log.items.name(e.item), t, item_sum, item_pop);
      binding.bind(Side::item, e.item, slot);
      born.emplace_back(Side::item, slot);
    }
  }
  result.births = born.size();
  fs.now = t;

  std::vector<detail::Touched> users, items;
  std::unordered_map<std::size_t, std::size_t> user_pos, item_pos;
  std::vector<std::size_t> rating_user, rating_item;
  std::vector<const Event*> rated;
  for (const Event& e : batch) {
    if (e.kind != EventKind::rating) continue;
    if (!fs.scale.contains_level(e.level)) {
      throw std::invalid_argument("rating level " + std::to_string(e.level) + " outside the scale");
    }
    const auto u = detail::touch(users, user_pos, binding.user(e.user));
    const auto i = detail::touch(items, item_pos, binding.item(e.item));
    users[u].ratings.push_back(rated.size());
    items[i].ratings.push_back(rated.size());
    rating_user.push_back(u);
    rating_item.push_back(i);
    rated.push_back(&e);
  }

  auto prepare = [&](std::vector<detail::Touched>& list, Side side) {
    for (auto& tch : list) {
      tch.prior = propagate(fs.table(side).states[tch.slot], t, fs.params.drift(side));
      tch.prior_precision = spd_inverse(tch.prior.cov);
      tch.prior_info = tch.prior_precision * tch.prior.mean;
      tch.mean = tch.prior.mean;
      tch.cov = tch.prior.cov;
    }
  };
  prepare(users, Side::user);
  prepare(items, Side::item);

  const double sigma_e = std::sqrt(fs.params.sigma2_E);
  const double inv_noise = 1.0 / fs.params.sigma2_E;
  std::vector<double> x_mean(rated.size());
  std::vector<double> mu(rated.size());
  auto refresh_x = [&] {
    for (std::size_t r = 0; r < rated.size(); ++r) {
      mu[r] = users[rating_user[r]].mean.dot(items[rating_item[r]].mean);
      const int k = rated[r]->level;
      x_mean[r] = tg_moments_or_clamp({mu[r], sigma_e, fs.scale.lower(k), fs.scale.upper(k)}).mean;
    }
  };

  if (!rated.empty()) {
    refresh_x();
    result.converged = false;
    for (int pass = 1; pass <= opts.max_passes; ++pass) {
      double change = 0.0;
      for (auto& u : users) change = std::max(change, detail::update_entity(u, items, rating_item, x_mean, inv_noise));
      for (auto& i : items) change = std::max(change, detail::update_entity(i, users, rating_user, x_mean, inv_noise));
      refresh_x();
      result.passes = pass;
      if (change < opts.tolerance) {
        result.converged = true;
        break;
      }
    }
    if (!result.converged) {
      log::debug("batch at t=", t, " did not converge in ", opts.max_passes, " passes; keeping last iterate");
    }
  }

  auto commit = [&](std::vector<detail::Touched>& list, Side side) {
    auto& table = fs.table(side);
    for (auto& tch : list) {
      LatentState& state = table.states[tch.slot];
      table.mean_sum += tch.mean - state.mean;
      state.mean = tch.mean;
      state.cov = tch.cov;
      symmetrize(state.cov);
      state.last_event_time = t;
    }
  };
  commit(users, Side::user);
  commit(items, Side::item);

  result.ratings.reserve(rated.size());
  for (std::size_t r = 0; r < rated.size(); ++r) {
    result.ratings.push_back({users[rating_user[r]].slot, items[rating_item[r]].slot, rated[r]->level, mu[r], x_mean[r]});
  }
  result.entity_updates = users.size() + items.size();
  for (const auto& [side, slot] : born) {
    const auto& pos = side == Side::user ? user_pos : item_pos;
    if (!pos.contains(slot)) ++result.entity_updates;
  }

  if (opts.record_states) {
    auto record = [&](const std::vector<detail::Touched>& list, Side side) {
      for (const auto& tch : list) {
        EntityUpdate up{side, tch.slot, false, true, tch.prior, fs.table(side).states[tch.slot]};
        for (const auto& b : born) up.born = up.born || (b.first == side && b.second == tch.slot);
        result.updates.push_back(std::move(up));
      }
    };
    record(users, Side::user);
    record(items, Side::item);
    for (const auto& [side, slot] : born) {
      const auto& pos = side == Side::user ? user_pos : item_pos;
      if (pos.contains(slot)) continue;
      const auto& state = fs.table(side).states[slot];
      result.updates.push_back({side, slot, true, false, state, state});
    }
  }
  return result;
}

inline BatchResult process_batch(FilterState& fs, const EventLog& log, std::span<const Event> batch,
                                 const BatchOptions& opts = {}) {
  SlotBinding binding(fs, log);
  return process_batch(fs, log, batch, binding, opts);
}

// ---------------------------------------------------------------------------
// Prediction

inline double predict_likeness(const FilterState& fs, std::string_view user, std::string_view item, Time t) {
  const auto u = fs.users.slot(user);
  const auto i = fs.items.slot(item);
  if (fs.users.birth_times[u] > t || fs.items.birth_times[i] > t) {
    throw std::invalid_argument("prediction requested before entity birth");
  }
  return fs.users.states[u].mean.dot(fs.items.states[i].mean);
}

inline int predict_rating(const FilterState& fs, std::string_view user, std::string_view item, Time t) {
  return discretize(predict_likeness(fs, user, item, t), fs.scale);
}

// ---------------------------------------------------------------------------
// Streaming

struct StreamMetrics {
  std::size_t batches = 0;
  std::size_t events = 0;
  std::size_t ratings = 0;
  std::size_t births = 0;
  std::size_t entity_updates = 0;
  std::size_t passes = 0;
  std::size_t unconverged = 0;
  double seconds = 0.0;

  StreamMetrics& operator+=(const StreamMetrics& o) {
    batches += o.batches;
    events += o.events;
    ratings += o.ratings;
    births += o.births;
    entity_updates += o.entity_updates;
    passes += o.passes;
    unconverged += o.unconverged;
    seconds += o.seconds;
    return *this;
  }
};

using BatchObserver = std::function<void(const FilterState&, std::span<const Event>, const BatchResult&)>;

/// Replays a sorted log batch by batch; can stop before a given time and resume later.
class StreamCursor {
 public:
  StreamCursor(FilterState& fs, const EventLog& log) : fs_(&fs), log_(&log), binding_(fs, log) {}

  bool done() const { return pos_ >= log_->events.size(); }
  std::size_t position() const { return pos_; }
  Time next_time() const { return log_->events[pos_].time; }

  /// Processes every batch with time strictly less than `stop`.
  StreamMetrics advance_before(Time stop, const BatchOptions& opts = {}, const BatchObserver& observer = {}) {
    StreamMetrics m;
    const auto start = std::chrono::steady_clock::now();
    const auto& ev = log_->events;
    while (pos_ < ev.size() && ev[pos_].time < stop) {
      std::size_t end = pos_ + 1;
      while (end < ev.size() && ev[end].time == ev[pos_].time) ++end;
      if (pos_ > 0 && ev[pos_].time < ev[pos_ - 1].time) throw std::invalid_argument("event log is not sorted");
      const std::span<const Event> batch(ev.data() + pos_, end - pos_);
      const BatchResult r = process_batch(*fs_, *log_, batch, binding_, opts);
      ++m.batches;
      m.events += batch.size();
      m.ratings += r.ratings.size();
      m.births += r.births;
      m.entity_updates += r.entity_updates;
      m.passes += static_cast<std::size_t>(r.passes);
      if (!r.converged) ++m.unconverged;
      if (observer) observer(*fs_, batch, r);
      pos_ = end;
    }
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return m;
  }

  StreamMetrics advance_all(const BatchOptions& opts = {}, const BatchObserver& observer = {}) {
    return advance_before(std::numeric_limits<Time>::infinity(), opts, observer);
  }

 private:
  FilterState* fs_;
  const EventLog* log_;
  SlotBinding binding_;
  std::size_t pos_ = 0;
};

inline StreamMetrics run_stream(FilterState& fs, const EventLog& log, const BatchOptions& opts = {},
                                const BatchObserver& observer = {}) {
  StreamCursor cursor(fs, log);
  auto metrics = cursor.advance_all(opts, observer);
  if (log::enabled(log::Level::debug)) {
    log::debug("mean-sum audit: users ", audit_mean_sum(fs, Side::user), ", items ", audit_mean_sum(fs, Side::item));
  }
  return metrics;
}

// ---------------------------------------------------------------------------
// Reader/writer access

/// Single-writer wrapper: readers see the state either before or after a batch, never in between.
class SharedFilter {
 public:
  explicit SharedFilter(FilterState fs) : fs_(std::move(fs)) {}

  BatchResult apply(const EventLog& log, std::span<const Event> batch, const BatchOptions& opts = {}) {
    std::unique_lock lock(mutex_);
    return process_batch(fs_, log, batch, opts);
  }

  double predict_likeness(std::string_view user, std::string_view item, Time t) const {
    std::shared_lock lock(mutex_);
    return srec::predict_likeness(fs_, user, item, t);
  }

  FilterState snapshot() const {
    std::shared_lock lock(mutex_);
    return fs_;
  }

 private:
  mutable std::shared_mutex mutex_;
  FilterState fs_;
};

}  // namespace srec
