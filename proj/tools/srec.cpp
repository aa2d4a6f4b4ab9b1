// Apache License, Version 2.0, refer to LICENSE.txt

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#if __has_include(<CLI/CLI.hpp>)
#include <CLI/CLI.hpp>
#else
#include <CLI11.hpp>
#endif
#include <nlohmann/json.hpp>

#include "srec/commands.hpp"
#include "srec/log.hpp"

namespace {

void add_param_overrides(CLI::App* app, srec::cmd::ParamOverrides& ov) {
  auto positive = CLI::PositiveNumber;
  app->add_option("--sigma2-E", ov.sigma2_E, "Rating noise variance override")->check(positive);
  app->add_option("--sigma2-U", ov.sigma2_U, "User drift variance per day override")->check(positive);
  app->add_option("--sigma2-V", ov.sigma2_V, "Item drift variance per day override")->check(positive);
  app->add_option("--sigma2-U0", ov.sigma2_U0, "Newborn user variance override")->check(positive);
  app->add_option("--sigma2-V0", ov.sigma2_V0, "Newborn item variance override")->check(positive);
  app->add_option("--birth-jitter", ov.birth_jitter, "Std of the seeded offset on newborn prior means")
      ->check(CLI::NonNegativeNumber);
  app->add_option("-d,--dim", ov.d, "Latent dimension override")->check(CLI::PositiveNumber);
}

int report_error(const std::string& command, const std::string& message, int code) {
  std::cerr << nlohmann::json{{"error", message}, {"command", command}}.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"srec: streaming recommender with drifting latent factors"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Key/value (TOML/INI) config file; flags given on the command line win");

  unsigned threads = 1;
  std::optional<std::uint64_t> seed;
  int verbosity = 0;
  app.add_option("--threads", threads, "Maximum worker threads")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "Seed for every random draw");
  app.add_flag("-v,--verbose", verbosity, "Raise log verbosity (repeatable)");

  // ingest
  srec::cmd::IngestOptions ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Convert a raw ratings file into a canonical event log");
  c_ingest->add_option("--input", ingest.input, "Raw ratings file")->required()->check(CLI::ExistingFile);
  c_ingest->add_option("--format", ingest.format, "Input format")->check(CLI::IsMember({"movielens"}));
  c_ingest->add_option("--output", ingest.output, "Event log CSV to write")->required();
  c_ingest->add_option("--params-out", ingest.params_out, "Write a params file carrying the star scale");

  // train
  srec::cmd::TrainOptions train;
  auto* c_train = app.add_subcommand("train", "Fit noise and drift variances with variational EM");
  c_train->add_option("--events", train.events, "Event log CSV")->required()->check(CLI::ExistingFile);
  c_train->add_option("--params", train.params_in, "Initial params file (defaults when missing)");
  c_train->add_option("--params-out", train.params_out, "Fitted params file")->required();
  c_train->add_option("--trace-out", train.trace_out, "Per-iteration trace CSV");
  c_train->add_option("--split-fraction", train.split_fraction, "Train on this leading share of the ratings")
      ->check(CLI::Range(0.0, 1.0));
  c_train->add_option("--max-iterations", train.em.max_iterations, "EM iteration cap")->check(CLI::PositiveNumber);
  c_train->add_option("--tolerance", train.em.tolerance, "Stop when the max relative change drops below this")
      ->check(CLI::PositiveNumber);
  add_param_overrides(c_train, train.overrides);

  // stream
  srec::cmd::StreamOptions stream;
  auto* c_stream = app.add_subcommand("stream", "Run the online filter over an event log");
  c_stream->add_option("--events", stream.events, "Event log CSV")->required()->check(CLI::ExistingFile);
  c_stream->add_option("--params", stream.params, "Params file");
  c_stream->add_option("--snapshot-out", stream.snapshot_out, "Write the final filter state");
  add_param_overrides(c_stream, stream.overrides);

  // eval
  srec::cmd::EvalOptions eval;
  auto* c_eval = app.add_subcommand("eval", "Prequential evaluation over disjoint future windows");
  c_eval->add_option("--events", eval.events, "Event log CSV")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--params", eval.params, "Params file");
  c_eval->add_option("--metrics-out", eval.metrics_out, "Metrics JSON to write");
  c_eval->add_option("--horizon", eval.protocol.horizon, "Test window length in days")->check(CLI::PositiveNumber);
  c_eval->add_option("--split-fraction", eval.protocol.split_fraction, "Share of ratings before the first reference time")
      ->check(CLI::Range(0.0, 1.0));
  c_eval->add_option("--repeats", eval.protocol.repeats, "Number of reference times")->check(CLI::PositiveNumber);
  c_eval->add_option("--reference-times", eval.protocol.reference_times, "Explicit reference times in days");
  add_param_overrides(c_eval, eval.overrides);

  // simulate
  srec::cmd::SimulateOptions sim;
  auto& sc = sim.config;
  auto* c_sim = app.add_subcommand("simulate", "Sample a synthetic event log from the generative model");
  c_sim->add_option("--events-out", sim.events_out, "Event log CSV to write")->required();
  c_sim->add_option("--truth-out", sim.truth_out, "Ground-truth latent values CSV");
  c_sim->add_option("--params-out", sim.params_out, "Ground-truth params file");
  c_sim->add_option("--sigma2-E", sc.truth.sigma2_E, "Rating noise variance")->check(CLI::NonNegativeNumber);
  c_sim->add_option("--sigma2-U", sc.truth.sigma2_U, "User drift variance per day")->check(CLI::NonNegativeNumber);
  c_sim->add_option("--sigma2-V", sc.truth.sigma2_V, "Item drift variance per day")->check(CLI::NonNegativeNumber);
  c_sim->add_option("--sigma2-U0", sc.truth.sigma2_U0, "Newborn user variance")->check(CLI::PositiveNumber);
  c_sim->add_option("--sigma2-V0", sc.truth.sigma2_V0, "Newborn item variance")->check(CLI::PositiveNumber);
  c_sim->add_option("-d,--dim", sc.truth.d, "Latent dimension")->check(CLI::PositiveNumber);
  c_sim->add_option("--levels", sc.stars.levels, "Number of rating levels")->check(CLI::Range(2, 1000));
  c_sim->add_option("--first-star", sc.stars.first, "Star value of level 1");
  c_sim->add_option("--star-step", sc.stars.step, "Star increment per level")->check(CLI::PositiveNumber);
  c_sim->add_option("--center", sc.stars.center, "Star value of zero likeness");
  c_sim->add_option("--initial-users", sc.initial_users, "Users born at t = 0")->check(CLI::NonNegativeNumber);
  c_sim->add_option("--initial-items", sc.initial_items, "Items born at t = 0")->check(CLI::NonNegativeNumber);
  c_sim->add_option("--user-birth-rate", sc.user_birth_rate, "User births per day")->check(CLI::NonNegativeNumber);
  c_sim->add_option("--item-birth-rate", sc.item_birth_rate, "Item births per day")->check(CLI::NonNegativeNumber);
  c_sim->add_option("--rating-rate", sc.rating_rate, "Ratings per day per user")->check(CLI::PositiveNumber);
  c_sim->add_option("--horizon", sc.horizon, "Simulated days")->check(CLI::PositiveNumber);
  c_sim->add_option("--time-quantum", sc.time_quantum, "Round event times up to this grid")
      ->check(CLI::NonNegativeNumber);

  // analyze
  auto* c_analyze = app.add_subcommand("analyze", "Post-hoc analyses of a fitted model");
  c_analyze->require_subcommand(1);
  c_analyze->fallthrough();
  srec::cmd::CorrDecayOptions corr;
  auto* c_corr = c_analyze->add_subcommand("corr-decay", "Average latent autocorrelation versus time lag");
  c_corr->add_option("--snapshot", corr.snapshot, "Filter snapshot")->check(CLI::ExistingFile);
  c_corr->add_option("--events", corr.events, "Event log CSV streamed to the end")->check(CLI::ExistingFile);
  c_corr->add_option("--params", corr.params, "Params file used with --events");
  c_corr->add_option("--output", corr.output, "Curve CSV to write");
  c_corr->add_option("--max-days", corr.max_days, "Largest lag on the grid")->check(CLI::PositiveNumber);
  c_corr->add_option("--points", corr.points, "Grid points")->check(CLI::Range(2, 1000000));
  add_param_overrides(c_corr, corr.overrides);

  srec::cmd::TrajectoryOptions traj;
  auto* c_traj = c_analyze->add_subcommand("trajectories", "Posterior mean paths of averages, entities and pairs");
  c_traj->add_option("--events", traj.events, "Event log CSV")->required()->check(CLI::ExistingFile);
  c_traj->add_option("--params", traj.params, "Params file");
  c_traj->add_option("--output", traj.output, "Tidy CSV to write")->required();
  c_traj->add_option("--samples", traj.samples, "Evenly spaced sample instants")->check(CLI::PositiveNumber);
  c_traj->add_option("--user", traj.users, "User id to track (repeatable)");
  c_traj->add_option("--item", traj.items, "Item id to track (repeatable)");
  c_traj->add_option("--pair", traj.pairs, "user:item pair whose predicted likeness is tracked (repeatable)");
  add_param_overrides(c_traj, traj.overrides);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string command = "srec";
    for (const auto* sub : app.get_subcommands()) command = sub->get_name();
    return report_error(command, e.what(), e.get_exit_code() == 0 ? 2 : e.get_exit_code());
  }

  if (verbosity >= 2) {
    srec::log::set_threshold(srec::log::Level::debug);
  } else if (verbosity == 1) {
    srec::log::set_threshold(srec::log::Level::info);
  }
  train.em.smoothing.threads = threads;
  if (seed) {
    sc.seed = *seed;
    eval.protocol.seed = *seed;
    for (auto* ov : {&train.overrides, &stream.overrides, &eval.overrides, &corr.overrides, &traj.overrides}) ov->seed = seed;
  }

  std::string command = app.get_subcommands().front()->get_name();
  try {
    if (c_ingest->parsed()) {
      srec::cmd::ingest(ingest, std::cout);
    } else if (c_train->parsed()) {
      srec::cmd::train(train, std::cout);
    } else if (c_stream->parsed()) {
      srec::cmd::stream(stream, std::cout);
    } else if (c_eval->parsed()) {
      srec::cmd::eval(eval, std::cout);
    } else if (c_sim->parsed()) {
      srec::cmd::simulate(sim, std::cout);
    } else if (c_corr->parsed()) {
      command = "analyze corr-decay";
      srec::cmd::corr_decay(corr, std::cout);
    } else if (c_traj->parsed()) {
      command = "analyze trajectories";
      srec::cmd::trajectories(traj, std::cout);
    }
  } catch (const std::exception& e) {
    return report_error(command, e.what(), 1);
  }
  return 0;
}
