// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srec/core_model.hpp"
#include "srec/eval_harness.hpp"
#include "srec/log.hpp"
#include "srec/offline_em.hpp"
#include "srec/online_filter.hpp"
#include "srec/params_io.hpp"
#include "srec/snapshot.hpp"
#include "srec/synthetic.hpp"

// Subcommand bodies of the `srec` tool. Each takes fully parsed options and writes its
// human/machine readable summary to `out`.
namespace srec::cmd {

struct ParamOverrides {
  std::optional<double> sigma2_E, sigma2_U, sigma2_V, sigma2_U0, sigma2_V0;
  std::optional<double> birth_jitter;
  std::optional<int> d;
  std::optional<std::uint64_t> seed;
};

/// Params file (or defaults with a warning when absent) with flag overrides applied.
inline ParamsFile resolve_params(const std::string& path, const ParamOverrides& ov, const ParamsFile& defaults) {
  ParamsFile pf = defaults;
  if (!path.empty()) {
    if (std::filesystem::exists(path)) {
      pf = read_params(path, defaults);
    } else {
      log::warn("params file '", path, "' not found; using defaults");
    }
  }
  if (ov.sigma2_E) pf.params.sigma2_E = *ov.sigma2_E;
  if (ov.sigma2_U) pf.params.sigma2_U = *ov.sigma2_U;
  if (ov.sigma2_V) pf.params.sigma2_V = *ov.sigma2_V;
  if (ov.sigma2_U0) pf.params.sigma2_U0 = *ov.sigma2_U0;
  if (ov.sigma2_V0) pf.params.sigma2_V0 = *ov.sigma2_V0;
  if (ov.birth_jitter) pf.params.birth_jitter = *ov.birth_jitter;
  if (ov.d) pf.params.d = *ov.d;
  if (ov.seed) pf.params.birth_seed = *ov.seed;
  pf.params.validate();
  return pf;
}

/// Integer star scale 1..K with K the largest level present, centered on the mean rating.
inline StarScale scale_for_log(const EventLog& log) {
  int levels = 2;
  for (const Event& e : log.events)
    if (e.kind == EventKind::rating) levels = std::max(levels, e.level);
  StarScale scale{levels, 1.0, 1.0, 0.0};
  if (log.rating_count() > 0) scale.center = training_center(log, scale);
  return scale;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  return os;
}

// ---------------------------------------------------------------------------

struct IngestOptions {
  std::string input;
  std::string format = "movielens";
  std::string output;
  std::string params_out;  // optional params template carrying the star scale
};

inline nlohmann::json ingest(const IngestOptions& opt, std::ostream& out) {
  if (opt.format != "movielens") throw std::invalid_argument("unknown format '" + opt.format + "'");
  const MovieLensData data = load_movielens(opt.input);
  write_event_csv(data.log, opt.output);
  if (!opt.params_out.empty()) write_params({ModelParams{}, data.stars}, opt.params_out);
  nlohmann::json summary{{"users", data.log.users.size()},
                         {"items", data.log.items.size()},
                         {"ratings", data.ratings},
                         {"malformed_rows", data.malformed_lines.size()},
                         {"levels", data.stars.levels},
                         {"mean_rating", data.stars.center},
                         {"t_min_days", data.log.events.front().time},
                         {"t_max_days", data.log.events.back().time}};
  out << summary.dump(2) << '\n';
  return summary;
}

// ---------------------------------------------------------------------------

struct TrainOptions {
  std::string events;
  std::string params_in;
  std::string params_out;
  std::string trace_out;
  ParamOverrides overrides;
  double split_fraction = 1.0;  // train on this leading share of the ratings
  EmConfig em;
};

inline EmResult train(const TrainOptions& opt, std::ostream& out) {
  const EventLog full = read_event_csv(opt.events);
  ParamsFile defaults{ModelParams{}, scale_for_log(full)};
  ParamsFile pf = resolve_params(opt.params_in, opt.overrides, defaults);
  const EventLog log = opt.split_fraction < 1.0 ? prefix_by_ratings(full, opt.split_fraction) : full;
  pf.scale.center = training_center(log, pf.scale);

  const EmResult fit = em_fit(log, pf.params, pf.scale, opt.em);
  pf.params = fit.params;
  if (!opt.params_out.empty()) write_params(pf, opt.params_out);
  if (!opt.trace_out.empty()) {
    auto os = open_out(opt.trace_out);
    write_em_trace(fit.trace, os);
  }
  out << nlohmann::json{{"iterations", fit.trace.size()},
                        {"converged", fit.converged},
                        {"sigma2_E", fit.params.sigma2_E},
                        {"sigma2_U", fit.params.sigma2_U},
                        {"sigma2_V", fit.params.sigma2_V},
                        {"center", pf.scale.center},
                        {"train_rmse", fit.trace.empty() ? 0.0 : fit.trace.back().train_rmse}}
             .dump(2)
      << '\n';
  return fit;
}

// ---------------------------------------------------------------------------

struct StreamOptions {
  std::string events;
  std::string params;
  std::string snapshot_out;
  ParamOverrides overrides;
};

inline StreamMetrics stream(const StreamOptions& opt, std::ostream& out) {
  const EventLog log = read_event_csv(opt.events);
  const ParamsFile pf = resolve_params(opt.params, opt.overrides, {ModelParams{}, scale_for_log(log)});
  FilterState fs(pf.params, pf.scale.rating_scale());
  const StreamMetrics m = run_stream(fs, log);
  if (!opt.snapshot_out.empty()) write_snapshot(fs, opt.snapshot_out);
  out << nlohmann::json{{"batches", m.batches},
                        {"events", m.events},
                        {"ratings", m.ratings},
                        {"births", m.births},
                        {"entity_updates", m.entity_updates},
                        {"passes", m.passes},
                        {"unconverged_batches", m.unconverged},
                        {"seconds", m.seconds},
                        {"ratings_per_second", m.seconds > 0 ? static_cast<double>(m.ratings) / m.seconds : 0.0}}
             .dump(2)
      << '\n';
  return m;
}

// ---------------------------------------------------------------------------

struct EvalOptions {
  std::string events;
  std::string params;
  std::string metrics_out;
  ParamOverrides overrides;
  EvalProtocol protocol;
};

inline EvalResult eval(const EvalOptions& opt, std::ostream& out) {
  const EventLog log = read_event_csv(opt.events);
  const ParamsFile pf = resolve_params(opt.params, opt.overrides, {ModelParams{}, scale_for_log(log)});
  const EvalResult r = prequential_eval(log, pf, opt.protocol);
  const auto j = to_json(r);
  if (!opt.metrics_out.empty()) open_out(opt.metrics_out) << j.dump(2) << '\n';
  out << j.dump(2) << '\n';
  return r;
}

// ---------------------------------------------------------------------------

struct SimulateOptions {
  SimConfig config;
  std::string events_out;
  std::string truth_out;
  std::string params_out;
};

inline SimResult simulate(const SimulateOptions& opt, std::ostream& out) {
  const SimResult sim = generate(opt.config);
  write_event_csv(sim.log, opt.events_out);
  if (!opt.truth_out.empty()) {
    auto os = open_out(opt.truth_out);
    write_truth_csv(sim, os, opt.config.truth.d);
  }
  if (!opt.params_out.empty()) write_params({opt.config.truth, opt.config.stars}, opt.params_out);
  out << nlohmann::json{{"users", sim.log.users.size()},
                        {"items", sim.log.items.size()},
                        {"ratings", sim.log.rating_count()},
                        {"events", sim.log.size()}}
             .dump(2)
      << '\n';
  return sim;
}

// ---------------------------------------------------------------------------

struct CorrDecayOptions {
  std::string snapshot;  // either a snapshot ...
  std::string events;    // ... or events + params streamed to the end
  std::string params;
  ParamOverrides overrides;
  std::string output;
  double max_days = 20.0 * kDaysPerYear;
  int points = 201;
};

inline std::pair<CorrelationCurve, CorrelationCurve> corr_decay(const CorrDecayOptions& opt, std::ostream& out) {
  std::optional<FilterState> fs;
  if (!opt.snapshot.empty()) {
    fs.emplace(read_snapshot(opt.snapshot));
  } else {
    if (opt.events.empty()) throw std::invalid_argument("corr-decay needs --snapshot or --events");
    const EventLog log = read_event_csv(opt.events);
    const ParamsFile pf = resolve_params(opt.params, opt.overrides, {ModelParams{}, scale_for_log(log)});
    fs.emplace(pf.params, pf.scale.rating_scale());
    run_stream(*fs, log);
  }
  if (opt.points < 2) throw std::invalid_argument("corr-decay needs at least 2 grid points");
  std::vector<Time> grid;
  for (int k = 0; k < opt.points; ++k) grid.push_back(opt.max_days * k / (opt.points - 1));
  auto users = correlation_decay(*fs, Side::user, grid);
  auto items = correlation_decay(*fs, Side::item, grid);
  if (!opt.output.empty()) {
    auto os = open_out(opt.output);
    os << "delta_t_days,user,item\n";
    for (std::size_t k = 0; k < grid.size(); ++k) {
      os << detail::format_double(grid[k]) << ',' << detail::format_double(users.values[k]) << ','
         << detail::format_double(items.values[k]) << '\n';
    }
  }
  out << nlohmann::json{{"user_half_time_days", users.half_time},
                        {"item_half_time_days", items.half_time},
                        {"user_half_time_years", users.half_time / kDaysPerYear},
                        {"item_half_time_years", items.half_time / kDaysPerYear}}
             .dump(2)
      << '\n';
  return {std::move(users), std::move(items)};
}

// ---------------------------------------------------------------------------

struct TrajectoryOptions {
  std::string events;
  std::string params;
  ParamOverrides overrides;
  std::string output;
  int samples = 100;  // evenly spaced over the log's time span
  std::vector<std::string> users;
  std::vector<std::string> items;
  std::vector<std::string> pairs;  // "user:item"
};

inline TrajectoryLog trajectories(const TrajectoryOptions& opt, std::ostream& out) {
  const EventLog log = read_event_csv(opt.events);
  if (log.empty()) throw std::invalid_argument("empty event log");
  const ParamsFile pf = resolve_params(opt.params, opt.overrides, {ModelParams{}, scale_for_log(log)});
  if (opt.samples < 1) throw std::invalid_argument("need at least one sample instant");
  RecordingPlan plan;
  const Time t0 = log.events.front().time, t1 = log.events.back().time;
  for (int k = 0; k < opt.samples; ++k) {
    plan.sample_times.push_back(opt.samples == 1 ? t1 : t0 + (t1 - t0) * k / (opt.samples - 1));
  }
  plan.users = opt.users;
  plan.items = opt.items;
  for (const auto& p : opt.pairs) {
    const auto colon = p.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("pair '" + p + "' must be user:item");
    plan.pairs.emplace_back(p.substr(0, colon), p.substr(colon + 1));
  }
  TrajectoryLog tl = record_trajectories(log, pf.params, pf.scale.rating_scale(), plan);
  auto os = open_out(opt.output);
  export_trajectories(tl, os);
  out << nlohmann::json{{"rows", tl.rows.size()}, {"samples", opt.samples}}.dump(2) << '\n';
  return tl;
}

}  // namespace srec::cmd
