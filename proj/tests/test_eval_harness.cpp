// Apache License, Version 2.0, refer to LICENSE.txt

#include <sstream>

#include <gtest/gtest.h>

#include "srec/eval_harness.hpp"
#include "srec/synthetic.hpp"

namespace srec {
namespace {

TEST(MovieLens, HalfStarRowMapping) {
  std::stringstream ss("userId,movieId,rating,timestamp\n1,31,2.5,1260759144\n");
  const auto data = load_movielens(ss);
  EXPECT_EQ(data.stars.levels, 10);
  EXPECT_EQ(data.stars.first, 0.5);
  EXPECT_EQ(data.stars.step, 0.5);
  EXPECT_EQ(data.stars.center, 2.5);
  ASSERT_EQ(data.log.size(), 3u);
  const Event& r = data.log.events.back();
  EXPECT_EQ(r.kind, EventKind::rating);
  EXPECT_EQ(r.level, 5);
  EXPECT_NEAR(r.time, 14592.119722222222, 1e-9);
  EXPECT_EQ(data.log.users.name(r.user), "1");
  EXPECT_EQ(data.log.items.name(r.item), "31");
}

TEST(MovieLens, IntegerStarsUseFiveLevels) {
  std::stringstream ss("userId,movieId,rating,timestamp\n1,2,4,100\n1,3,5,200\n");
  const auto data = load_movielens(ss);
  EXPECT_EQ(data.stars.levels, 5);
  EXPECT_EQ(data.log.events.back().level, 5);
  EXPECT_DOUBLE_EQ(data.stars.center, 4.5);
}

TEST(MovieLens, SortsByTimeAndKeepsRerating) {
  std::stringstream ss(
      "userId,movieId,rating,timestamp\n"
      "1,10,3.0,864000\n"
      "2,10,4.5,86400\n"
      "1,10,1.0,1728000\n");
  const auto data = load_movielens(ss);
  EXPECT_TRUE(validate_log(data.log, 10).ok());
  std::vector<int> levels;
  std::vector<Time> times;
  for (const Event& e : data.log.events) {
    if (e.kind != EventKind::rating) continue;
    levels.push_back(e.level);
    times.push_back(e.time);
  }
  EXPECT_EQ(levels, (std::vector<int>{9, 6, 2}));
  EXPECT_EQ(times, (std::vector<Time>{1.0, 10.0, 20.0}));
  EXPECT_EQ(data.ratings, 3u);
}

TEST(MovieLens, MalformedRows) {
  std::string body = "userId,movieId,rating,timestamp\n";
  for (int k = 0; k < 200; ++k) body += "1," + std::to_string(k) + ",4.0," + std::to_string(k * 100) + "\n";
  std::stringstream few(body + "1,x,7.0,5\n");
  const auto data = load_movielens(few);
  EXPECT_EQ(data.malformed_lines, (std::vector<std::size_t>{202}));
  EXPECT_EQ(data.ratings, 200u);
  std::stringstream many(body + "bad\nbad\nbad\n");
  EXPECT_THROW(load_movielens(many), std::runtime_error);
  std::stringstream header("user,item\n1,2\n");
  EXPECT_THROW(load_movielens(header), std::runtime_error);
}

TEST(Metrics, RmseExamples) {
  const std::vector<double> zeros{0.0, 0.0}, truth{5.0, 0.0};
  EXPECT_NEAR(rmse(zeros, truth), 3.5355339059327378, 1e-15);
  const std::vector<double> a{0.0}, b{3.0};
  EXPECT_DOUBLE_EQ(rmse(a, b), 3.0);
  EXPECT_THROW(rmse(a, truth), std::invalid_argument);
  EXPECT_THROW(rmse(std::vector<double>{}, std::vector<double>{}), std::invalid_argument);
}

TEST(Metrics, TrainingCenterAndPrefix) {
  EventLog log;
  log.add_user_birth(0.0, "u");
  log.add_item_birth(0.0, "i");
  log.add_rating(1.0, "u", "i", 1);
  log.add_rating(2.0, "u", "i", 3);
  log.add_item_birth(2.5, "j");
  log.add_rating(3.0, "u", "j", 5);
  log.add_rating(4.0, "u", "j", 5);
  const StarScale stars{5, 1.0, 1.0, 0.0};
  EXPECT_DOUBLE_EQ(training_center(log, stars), 3.5);
  EXPECT_DOUBLE_EQ(training_center(log, stars, 0.5), 2.0);
  const auto prefix = prefix_by_ratings(log, 0.5);
  EXPECT_EQ(prefix.size(), 4u);
  EXPECT_EQ(prefix.rating_count(), 2u);
  EXPECT_EQ(prefix_by_ratings(log, 1.0).size(), log.size());
}

SimConfig eval_config() {
  SimConfig cfg;
  cfg.truth = {0.5, 1e-2, 5e-3, 1.0, 1.0, 2};
  cfg.stars = {5, 1.0, 1.0, 3.0};
  cfg.initial_users = 30;
  cfg.initial_items = 30;
  cfg.user_birth_rate = 0.3;
  cfg.item_birth_rate = 0.3;
  cfg.rating_rate = 0.5;
  cfg.horizon = 120.0;
  cfg.seed = 21;
  return cfg;
}

ParamsFile eval_params(const SimConfig& cfg) {
  ParamsFile pf;
  pf.params = cfg.truth;
  pf.params.birth_jitter = 0.3;
  pf.scale = cfg.stars;
  return pf;
}

TEST(Prequential, WindowsAreDisjoint) {
  const auto refs = sample_reference_times(0.0, 100.0, 7.0, 8, 3);
  ASSERT_EQ(refs.size(), 8u);
  for (std::size_t k = 0; k < refs.size(); ++k) {
    EXPECT_GE(refs[k], 0.0);
    EXPECT_LE(refs[k], 93.0);
    if (k > 0) {
      EXPECT_GE(refs[k] - refs[k - 1], 7.0);
    }
  }
  EXPECT_EQ(sample_reference_times(0.0, 100.0, 7.0, 8, 3), refs);
  EXPECT_THROW(sample_reference_times(0.0, 5.0, 7.0, 1, 3), std::invalid_argument);

  const auto sim = generate(eval_config());
  EvalProtocol overlap;
  overlap.reference_times = {50.0, 53.0};
  EXPECT_THROW(prequential_eval(sim.log, eval_params(eval_config()), overlap), std::invalid_argument);
}

TEST(Prequential, MatchesIndependentPrefixReplay) {
  const auto cfg = eval_config();
  const auto sim = generate(cfg);
  const auto pf = eval_params(cfg);
  EvalProtocol protocol;
  protocol.reference_times = {60.0, 90.0};
  const auto result = prequential_eval(sim.log, pf, protocol);
  ASSERT_EQ(result.repeats.size(), 2u);

  for (const auto& rep : result.repeats) {
    EventLog prefix;
    prefix.users = sim.log.users;
    prefix.items = sim.log.items;
    for (const Event& e : sim.log.events)
      if (e.time < rep.reference_time) prefix.events.push_back(e);
    FilterState fs(pf.params, pf.scale.rating_scale());
    run_stream(fs, prefix);
    double sum = 0.0;
    std::size_t n = 0;
    for (const Event& e : sim.log.events) {
      if (e.kind != EventKind::rating || e.time < rep.reference_time || e.time >= rep.reference_time + 7.0) continue;
      const auto u = fs.users.find(sim.log.users.name(e.user));
      const auto i = fs.items.find(sim.log.items.name(e.item));
      if (!u || !i) continue;
      const double star = std::clamp(3.0 + fs.users.states[*u].mean.dot(fs.items.states[*i].mean), 1.0, 5.0);
      sum += (star - e.level) * (star - e.level);
      ++n;
    }
    EXPECT_EQ(rep.test_ratings, n);
    EXPECT_NEAR(rep.rmse, std::sqrt(sum / static_cast<double>(n)), 1e-12);
  }
}

TEST(Prequential, FutureEventsDoNotLeak) {
  const auto cfg = eval_config();
  const auto sim = generate(cfg);
  EventLog altered = sim.log;
  for (Event& e : altered.events)
    if (e.kind == EventKind::rating && e.time >= 67.0) e.level = 6 - e.level;
  EvalProtocol protocol;
  protocol.reference_times = {60.0};
  const auto a = prequential_eval(sim.log, eval_params(cfg), protocol);
  const auto b = prequential_eval(altered, eval_params(cfg), protocol);
  EXPECT_EQ(a.repeats[0].rmse, b.repeats[0].rmse);
  EXPECT_EQ(a.repeats[0].baseline_rmse, b.repeats[0].baseline_rmse);
}

TEST(Prequential, JsonSummary) {
  const auto cfg = eval_config();
  const auto sim = generate(cfg);
  EvalProtocol protocol;
  protocol.repeats = 3;
  const auto result = prequential_eval(sim.log, eval_params(cfg), protocol);
  const auto j = to_json(result);
  EXPECT_EQ(j["repeats"].size(), result.repeats.size());
  EXPECT_GT(j["rmse_mean"].get<double>(), 0.0);
  EXPECT_LT(result.rmse_mean, result.baseline_rmse_mean);
}

TEST(CorrelationDecay, SingleEntityClosedForm) {
  ModelParams p;
  p.d = 2;
  p.sigma2_U = 0.01;
  p.birth_jitter = 0.0;
  FilterState fs(p, default_thresholds(5, -1.5, 1.0));
  birth_user(fs, "u", 0.0);
  fs.users.states[0].cov = 0.2 * Matrix::Identity(2, 2);
  const std::vector<Time> grid{0.0, 10.0, 20.0, 100.0};
  const auto curve = correlation_decay(fs, Side::user, grid);
  EXPECT_DOUBLE_EQ(curve.values[0], 1.0);
  EXPECT_NEAR(curve.values[2], 0.5, 1e-15);
  EXPECT_NEAR(curve.half_time, 20.0, 1e-9);
  EXPECT_NEAR(curve.mean_entity_half_time, 20.0, 1e-12);
  for (std::size_t k = 1; k < grid.size(); ++k) EXPECT_LT(curve.values[k], curve.values[k - 1]);
  const std::vector<Time> bad{-1.0};
  EXPECT_THROW(correlation_decay(fs, Side::user, bad), std::invalid_argument);
  EXPECT_THROW(correlation_decay(fs, Side::item, grid), std::invalid_argument);
}

TEST(CorrelationDecay, StaleEntitiesDecayFaster) {
  ModelParams p;
  p.d = 1;
  p.sigma2_U = 0.1;
  p.birth_jitter = 0.0;
  FilterState fs(p, default_thresholds(2, 0.0, 1.0));
  birth_user(fs, "a", 0.0);
  fs.users.states[0].cov(0, 0) = 1.0;
  fs.now = 10.0;
  const std::vector<Time> grid{0.0, 20.0};
  // Trace propagated to now: 1 + 0.1 * 10 = 2, so the half-time is 2 / 0.1.
  EXPECT_NEAR(correlation_decay(fs, Side::user, grid).half_time, 20.0, 1e-9);
}

TEST(Trajectories, ExportExamples) {
  EventLog log;
  log.add_user_birth(0.0, "u");
  log.add_item_birth(0.0, "i");
  log.add_rating(1.0, "u", "i", 5);
  log.add_item_birth(3.0, "j");
  ModelParams p;
  p.d = 2;
  p.birth_jitter = 0.5;
  RecordingPlan plan;
  plan.sample_times = {2.0, 0.5};
  plan.users = {"u", "ghost"};
  plan.items = {"j"};
  plan.pairs = {{"u", "i"}};
  const auto tl = record_trajectories(log, p, default_thresholds(5, -1.5, 1.0), plan);
  std::size_t avg = 0, users = 0, items = 0, pairs = 0;
  for (const auto& r : tl.rows) {
    if (r.kind.ends_with("_avg")) ++avg;
    if (r.kind == "user") ++users;
    if (r.kind == "item") ++items;
    if (r.kind == "pair") ++pairs;
  }
  EXPECT_EQ(avg, 8u);
  EXPECT_EQ(users, 4u);
  EXPECT_EQ(items, 0u);
  EXPECT_EQ(pairs, 2u);
  EXPECT_EQ(tl.rows.front().time, 0.5);
  ASSERT_EQ(tl.rows.back().kind, "pair");
  double before = 0.0;
  for (const auto& r : tl.rows)
    if (r.kind == "pair" && r.time == 0.5) before = r.value;
  // A top-level rating pulls the predicted likeness up.
  EXPECT_GT(tl.rows.back().value, before);

  std::stringstream ss;
  export_trajectories(tl, ss);
  std::string header;
  std::getline(ss, header);
  EXPECT_EQ(header, "time,kind,entity_or_pair,dim,value");
  std::stringstream none;
  EXPECT_THROW(export_trajectories(TrajectoryLog{}, none), std::logic_error);
}

}  // namespace
}  // namespace srec
