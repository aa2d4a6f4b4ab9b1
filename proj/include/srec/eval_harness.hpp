// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "srec/core_model.hpp"
#include "srec/log.hpp"
#include "srec/online_filter.hpp"
#include "srec/params_io.hpp"
#include "srec/probit.hpp"

namespace srec {

inline constexpr double kSecondsPerDay = 86400.0;
inline constexpr double kDaysPerYear = 365.25;

// ---------------------------------------------------------------------------
// MovieLens ingestion

struct MovieLensData {
  EventLog log;
  StarScale stars;  // center = mean star value over all ratings
  std::size_t ratings = 0;
  std::vector<std::size_t> malformed_lines;
};

/// Reads `userId,movieId,rating,timestamp`. Half-star data maps to levels 1..10,
/// integer-only data to 1..5. Rows are stably sorted by time and births inserted.
inline MovieLensData load_movielens(std::istream& is, const std::string& source = "<ratings>") {
  struct Row {
    std::string user, item;
    double stars;
    double time;
  };
  std::vector<Row> rows;
  std::vector<std::size_t> malformed;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(is, line)) throw std::runtime_error(source + ": empty ratings file");
  ++line_no;
  if (!detail::trim(line).starts_with("userId,movieId,rating,timestamp")) {
    throw std::runtime_error(source + ": expected header 'userId,movieId,rating,timestamp'");
  }
  while (std::getline(is, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cols = detail::split(detail::trim(line), ',');
    const auto stars = cols.size() == 4 ? detail::parse_number<double>(cols[2]) : std::nullopt;
    const auto ts = cols.size() == 4 ? detail::parse_number<double>(cols[3]) : std::nullopt;
    if (!stars || !ts || *ts < 0.0 || !(*stars > 0.0) || *stars > 5.0 || detail::trim(cols[0]).empty() ||
        detail::trim(cols[1]).empty() || std::abs(*stars * 2.0 - std::round(*stars * 2.0)) > 1e-9) {
      malformed.push_back(line_no);
      log::warn(source, ":", line_no, ": malformed row skipped");
      continue;
    }
    rows.push_back({std::string(detail::trim(cols[0])), std::string(detail::trim(cols[1])), *stars, *ts / kSecondsPerDay});
  }
  const std::size_t total = rows.size() + malformed.size();
  if (total == 0) throw std::runtime_error(source + ": no rating rows");
  if (static_cast<double>(malformed.size()) > 0.01 * static_cast<double>(total)) {
    throw std::runtime_error(source + ": " + std::to_string(malformed.size()) + " of " + std::to_string(total) +
                             " rows malformed (more than 1%)");
  }
  if (rows.empty()) throw std::runtime_error(source + ": no valid ratings");

  const bool half_star = std::any_of(rows.begin(), rows.end(), [](const Row& r) { return r.stars != std::floor(r.stars); });
  MovieLensData out;
  out.stars = half_star ? StarScale{10, 0.5, 0.5, 0.0} : StarScale{5, 1.0, 1.0, 0.0};
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.time < b.time; });
  EventLog raw;
  double sum = 0.0;
  for (const Row& r : rows) {
    raw.add_rating(r.time, r.user, r.item, out.stars.level_of_star(r.stars));
    sum += r.stars;
  }
  out.stars.center = sum / static_cast<double>(rows.size());
  out.log = auto_insert_births(raw);
  out.ratings = rows.size();
  out.malformed_lines = std::move(malformed);
  return out;
}

inline MovieLensData load_movielens(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  return load_movielens(is, path);
}

// ---------------------------------------------------------------------------
// Metrics

inline double rmse(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("rmse: length mismatch");
  if (pred.empty()) throw std::invalid_argument("rmse: empty input");
  double sum = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) sum += (pred[k] - truth[k]) * (pred[k] - truth[k]);
  return std::sqrt(sum / static_cast<double>(pred.size()));
}

/// Mean star value of the first `fraction` of ratings (by time).
inline double training_center(const EventLog& log, const StarScale& stars, double fraction = 1.0) {
  const std::size_t n = log.rating_count();
  const auto take = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n))));
  double sum = 0.0;
  std::size_t seen = 0;
  for (const Event& e : log.events) {
    if (e.kind != EventKind::rating) continue;
    if (seen == take) break;
    sum += stars.star_of_level(e.level);
    ++seen;
  }
  if (seen == 0) throw std::invalid_argument("log has no ratings");
  return sum / static_cast<double>(seen);
}

/// Events up to the last of the first floor(fraction * ratings) ratings; births after that rating are dropped.
inline EventLog prefix_by_ratings(const EventLog& log, double fraction) {
  const std::size_t n = log.rating_count();
  const auto take = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  EventLog out;
  out.users = log.users;
  out.items = log.items;
  std::size_t seen = 0;
  for (const Event& e : log.events) {
    if (e.kind == EventKind::rating) {
      if (seen == take) break;
      ++seen;
    }
    out.events.push_back(e);
  }
  while (!out.events.empty() && out.events.back().is_birth() && seen < n) out.events.pop_back();
  return out;
}

// ---------------------------------------------------------------------------
// Prequential evaluation

struct EvalProtocol {
  Time horizon = 7.0;
  double split_fraction = 0.5;
  int repeats = 10;
  std::uint64_t seed = 1;
  std::vector<Time> reference_times;  // explicit windows; sampled when empty
};

struct RepeatResult {
  Time reference_time = 0.0;
  std::size_t test_ratings = 0;
  double rmse = 0.0;
  double baseline_rmse = 0.0;
};

struct EvalResult {
  std::vector<RepeatResult> repeats;
  double rmse_mean = 0.0;
  double rmse_std = 0.0;
  double baseline_rmse_mean = 0.0;
  std::size_t skipped = 0;
  StreamMetrics stream;
};

/// Samples reference times uniformly in [start, end - horizon] with pairwise disjoint windows.
inline std::vector<Time> sample_reference_times(Time start, Time end, Time horizon, int repeats, std::uint64_t seed) {
  if (!(end - horizon >= start)) throw std::invalid_argument("log too short for the evaluation horizon");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pick(start, end - horizon);
  std::vector<Time> refs;
  for (int attempt = 0; attempt < 1000 * std::max(repeats, 1) && static_cast<int>(refs.size()) < repeats; ++attempt) {
    const Time r = pick(rng);
    const bool clash = std::any_of(refs.begin(), refs.end(), [&](Time o) { return std::abs(o - r) < horizon; });
    if (!clash) refs.push_back(r);
  }
  if (static_cast<int>(refs.size()) < repeats) {
    log::warn("only ", refs.size(), " disjoint evaluation windows fit; requested ", repeats);
  }
  std::sort(refs.begin(), refs.end());
  return refs;
}

/// Candidate span for reference times: from the rating at `split_fraction` to the last event.
inline std::pair<Time, Time> candidate_span(const EventLog& log, double split_fraction) {
  std::vector<Time> times;
  for (const Event& e : log.events)
    if (e.kind == EventKind::rating) times.push_back(e.time);
  if (times.empty()) throw std::invalid_argument("log has no ratings");
  const auto idx = std::min(times.size() - 1, static_cast<std::size_t>(split_fraction * static_cast<double>(times.size())));
  return {times[idx], log.events.back().time};
}

/// Streams events before each reference time and scores the ratings of the following window
/// whose user and item already exist.
inline EvalResult prequential_eval(const EventLog& log, const ParamsFile& pf, const EvalProtocol& protocol,
                                   const BatchOptions& opts = {}) {
  EvalResult result;
  if (log.empty()) throw std::invalid_argument("empty event log");
  std::vector<Time> refs = protocol.reference_times;
  if (refs.empty()) {
    const auto [start, end] = candidate_span(log, protocol.split_fraction);
    refs = sample_reference_times(start, end, protocol.horizon, protocol.repeats, protocol.seed);
  }
  std::sort(refs.begin(), refs.end());
  for (std::size_t k = 1; k < refs.size(); ++k) {
    if (refs[k] - refs[k - 1] < protocol.horizon) throw std::invalid_argument("evaluation windows overlap");
  }
  if (!refs.empty() && refs.back() + protocol.horizon > log.events.back().time) {
    log::warn("last evaluation window extends past the end of the log");
  }

  FilterState fs(pf.params, pf.scale.rating_scale());
  StreamCursor cursor(fs, log);
  for (const Time ref : refs) {
    result.stream += cursor.advance_before(ref, opts);
    std::vector<double> pred, base, truth;
    const auto first = std::lower_bound(log.events.begin(), log.events.end(), ref,
                                        [](const Event& e, Time t) { return e.time < t; });
    for (auto it = first; it != log.events.end() && it->time < ref + protocol.horizon; ++it) {
      if (it->kind != EventKind::rating) continue;
      const auto u = fs.users.find(log.users.name(it->user));
      const auto i = fs.items.find(log.items.name(it->item));
      if (!u || !i) continue;
      const double x = fs.users.states[*u].mean.dot(fs.items.states[*i].mean);
      pred.push_back(pf.scale.star_of_likeness(x));
      base.push_back(pf.scale.center);
      truth.push_back(pf.scale.star_of_level(it->level));
    }
    if (truth.empty()) {
      log::warn("no test ratings in window starting at t=", ref, "; skipping");
      ++result.skipped;
      continue;
    }
    result.repeats.push_back({ref, truth.size(), rmse(pred, truth), rmse(base, truth)});
  }
  if (!result.repeats.empty()) {
    const double n = static_cast<double>(result.repeats.size());
    double sum = 0.0, base = 0.0;
    for (const auto& r : result.repeats) {
      sum += r.rmse;
      base += r.baseline_rmse;
    }
    result.rmse_mean = sum / n;
    result.baseline_rmse_mean = base / n;
    double var = 0.0;
    for (const auto& r : result.repeats) var += (r.rmse - result.rmse_mean) * (r.rmse - result.rmse_mean);
    result.rmse_std = result.repeats.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  }
  return result;
}

inline nlohmann::json to_json(const EvalResult& r) {
  nlohmann::json j;
  j["rmse_mean"] = r.rmse_mean;
  j["rmse_std"] = r.rmse_std;
  j["baseline_rmse_mean"] = r.baseline_rmse_mean;
  j["skipped"] = r.skipped;
  j["repeats"] = nlohmann::json::array();
  for (const auto& rep : r.repeats) {
    j["repeats"].push_back({{"reference_time", rep.reference_time},
                            {"test_ratings", rep.test_ratings},
                            {"rmse", rep.rmse},
                            {"baseline_rmse", rep.baseline_rmse}});
  }
  return j;
}

// ---------------------------------------------------------------------------
// Correlation decay

struct CorrelationCurve {
  std::vector<Time> grid;       // days
  std::vector<double> values;   // mean squared posterior auto-correlation
  Time half_time = 0.0;         // 0.5 crossing of the averaged curve, days
  Time mean_entity_half_time = 0.0;
};

/// Squared auto-correlation tr(C) / (tr(C) + d * dt * sigma2) averaged over all entities,
/// with each covariance propagated to the filter's current time.
inline CorrelationCurve correlation_decay(const FilterState& fs, Side side, std::span<const Time> grid) {
  const auto& table = fs.table(side);
  if (table.size() == 0) throw std::invalid_argument("correlation decay needs at least one entity");
  const double sigma2 = fs.params.drift(side);
  if (!(sigma2 > 0.0)) throw std::invalid_argument("correlation decay needs a positive drift variance");
  const double d = fs.params.d;

  std::vector<double> traces;
  traces.reserve(table.size());
  for (const auto& s : table.states) traces.push_back(s.cov.trace() + d * sigma2 * (fs.now - s.last_event_time));

  auto curve_at = [&](Time dt) {
    double sum = 0.0;
    for (double c : traces) sum += c / (c + d * dt * sigma2);
    return sum / static_cast<double>(traces.size());
  };

  CorrelationCurve out;
  out.grid.assign(grid.begin(), grid.end());
  for (Time dt : grid) {
    if (dt < 0.0) throw std::invalid_argument("correlation grid must be non-negative");
    out.values.push_back(curve_at(dt));
  }
  double hi = 0.0, mean_half = 0.0;
  for (double c : traces) {
    const double h = c / (d * sigma2);
    hi = std::max(hi, h);
    mean_half += h;
  }
  out.mean_entity_half_time = mean_half / static_cast<double>(traces.size());
  double lo = 0.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (curve_at(mid) > 0.5 ? lo : hi) = mid;
  }
  out.half_time = 0.5 * (lo + hi);
  return out;
}

// ---------------------------------------------------------------------------
// Trajectory exports

struct RecordingPlan {
  std::vector<Time> sample_times;
  bool averages = true;  // per-dimension mean of all user / item posterior means
  std::vector<std::string> users;
  std::vector<std::string> items;
  std::vector<std::pair<std::string, std::string>> pairs;  // predicted likeness series
};

struct TrajectoryRow {
  Time time = 0.0;
  std::string kind;  // user_avg, item_avg, user, item, pair
  std::string entity;
  int dim = 0;
  double value = 0.0;
};

struct TrajectoryLog {
  bool enabled = false;
  std::vector<TrajectoryRow> rows;
};

/// Replays the log and samples posterior means at each requested instant (events at the
/// instant included). Entities not yet born at an instant contribute no row.
inline TrajectoryLog record_trajectories(const EventLog& log, const ModelParams& params, const RatingScale& scale,
                                         const RecordingPlan& plan, const BatchOptions& opts = {}) {
  TrajectoryLog out;
  out.enabled = true;
  std::vector<Time> samples = plan.sample_times;
  std::sort(samples.begin(), samples.end());
  FilterState fs(params, scale);
  StreamCursor cursor(fs, log);
  const int d = params.d;
  for (const Time s : samples) {
    cursor.advance_before(std::nextafter(s, std::numeric_limits<Time>::infinity()), opts);
    if (plan.averages) {
      for (Side side : {Side::user, Side::item}) {
        const auto& table = fs.table(side);
        if (table.size() == 0) continue;
        const Vector avg = table.mean_sum / static_cast<double>(table.size());
        for (int k = 0; k < d; ++k)
          out.rows.push_back({s, std::string(to_string(side)) + "_avg", "*", k, avg[k]});
      }
    }
    for (Side side : {Side::user, Side::item}) {
      const auto& ids = side == Side::user ? plan.users : plan.items;
      for (const auto& id : ids) {
        const auto slot = fs.table(side).find(id);
        if (!slot) continue;
        const auto& mean = fs.table(side).states[*slot].mean;
        for (int k = 0; k < d; ++k) out.rows.push_back({s, to_string(side), id, k, mean[k]});
      }
    }
    for (const auto& [user, item] : plan.pairs) {
      const auto u = fs.users.find(user);
      const auto i = fs.items.find(item);
      if (!u || !i) continue;
      out.rows.push_back({s, "pair", user + ":" + item, 0, fs.users.states[*u].mean.dot(fs.items.states[*i].mean)});
    }
  }
  return out;
}

inline void export_trajectories(const TrajectoryLog& tl, std::ostream& os) {
  if (!tl.enabled) throw std::logic_error("trajectory recording was not enabled");
  os << "time,kind,entity_or_pair,dim,value\n";
  for (const auto& r : tl.rows) {
    os << detail::format_double(r.time) << ',' << r.kind << ',' << r.entity << ',' << r.dim << ','
       << detail::format_double(r.value) << '\n';
  }
}

}  // namespace srec
