// Apache License, Version 2.0, refer to LICENSE.txt

#include <cmath>
#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "srec/synthetic.hpp"

namespace srec {
namespace {

SimConfig base(std::uint64_t seed) {
  SimConfig cfg;
  cfg.truth = {0.5, 1e-2, 5e-3, 1.0, 1.0, 2};
  cfg.stars = {5, 1.0, 1.0, 3.0};
  cfg.initial_users = 20;
  cfg.initial_items = 20;
  cfg.user_birth_rate = 0.5;
  cfg.item_birth_rate = 0.5;
  cfg.rating_rate = 1.0;
  cfg.horizon = 100.0;
  cfg.seed = seed;
  return cfg;
}

// Index of each rating's user and item truth points (pushed right after the rating).
struct RatedTruth {
  const Event* rating;
  const TruthPoint* user;
  const TruthPoint* item;
};

std::vector<RatedTruth> rated_truth(const SimResult& sim) {
  std::vector<RatedTruth> out;
  std::size_t tp = 0;
  for (const Event& e : sim.log.events) {
    if (e.kind == EventKind::rating) {
      out.push_back({&e, &sim.truth[tp], &sim.truth[tp + 1]});
      tp += 2;
    } else {
      ++tp;
    }
  }
  return out;
}

TEST(Generate, DeterministicPerSeed) {
  const auto a = generate(base(3)), b = generate(base(3)), c = generate(base(4));
  EXPECT_EQ(a.log, b.log);
  EXPECT_NE(a.log, c.log);
  ASSERT_EQ(a.truth.size(), b.truth.size());
  for (std::size_t k = 0; k < a.truth.size(); ++k) EXPECT_EQ(a.truth[k].value, b.truth[k].value);
}

TEST(Generate, LogIsValidAndSorted) {
  const auto sim = generate(base(5));
  const auto report = validate_log(sim.log, 5);
  EXPECT_TRUE(report.ok()) << (report.messages.empty() ? "" : report.messages.front());
  EXPECT_GT(sim.log.rating_count(), 1000u);
  EXPECT_EQ(sim.truth.size(), sim.log.size() + sim.log.rating_count());
}

TEST(Generate, TruthPointsAlignWithRatings) {
  const auto sim = generate(base(6));
  for (const auto& rt : rated_truth(sim)) {
    EXPECT_EQ(rt.user->side, Side::user);
    EXPECT_EQ(rt.item->side, Side::item);
    EXPECT_EQ(rt.user->entity, rt.rating->user);
    EXPECT_EQ(rt.item->entity, rt.rating->item);
    EXPECT_EQ(rt.user->time, rt.rating->time);
  }
}

TEST(Generate, ZeroDriftKeepsLatentsFixed) {
  auto cfg = base(7);
  cfg.truth.sigma2_U = 0.0;
  cfg.truth.sigma2_V = 0.0;
  const auto sim = generate(cfg);
  std::map<std::pair<int, std::uint32_t>, Vector> first;
  for (const auto& p : sim.truth) {
    const auto key = std::make_pair(static_cast<int>(p.side), p.entity);
    auto [it, fresh] = first.emplace(key, p.value);
    if (!fresh) {
      EXPECT_EQ(it->second, p.value);
    }
  }
}

TEST(Generate, NoiseFreeRatingsDiscretizeTheTruth) {
  auto cfg = base(8);
  cfg.truth.sigma2_E = 0.0;
  const auto sim = generate(cfg);
  const auto scale = cfg.stars.rating_scale();
  for (const auto& rt : rated_truth(sim)) {
    EXPECT_EQ(rt.rating->level, discretize(rt.user->value.dot(rt.item->value), scale));
  }
}

TEST(Generate, LevelFrequenciesMatchProbitProbabilities) {
  auto cfg = base(9);
  cfg.horizon = 200.0;
  const auto sim = generate(cfg);
  const auto scale = cfg.stars.rating_scale();
  const double se = std::sqrt(cfg.truth.sigma2_E);
  auto phi = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
  std::vector<double> expected(6, 0.0), var(6, 0.0), observed(6, 0.0);
  for (const auto& rt : rated_truth(sim)) {
    const double mu = rt.user->value.dot(rt.item->value);
    for (int k = 1; k <= 5; ++k) {
      const double hi = std::isinf(scale.upper(k)) ? 1.0 : phi((scale.upper(k) - mu) / se);
      const double lo = std::isinf(scale.lower(k)) ? 0.0 : phi((scale.lower(k) - mu) / se);
      const double p = hi - lo;
      expected[k] += p;
      var[k] += p * (1.0 - p);
    }
    observed[rt.rating->level] += 1.0;
  }
  for (int k = 1; k <= 5; ++k) {
    EXPECT_LT(std::abs(observed[k] - expected[k]), 3.0 * std::sqrt(var[k]) + 1.0) << "level " << k;
  }
}

TEST(Generate, BrownianIncrementsHaveDriftVariance) {
  auto cfg = base(10);
  cfg.truth.sigma2_U = 0.02;
  cfg.horizon = 200.0;
  const auto sim = generate(cfg);
  std::map<std::uint32_t, std::pair<Time, Vector>> last;
  double sum_z2 = 0.0;
  std::size_t n = 0;
  for (const auto& p : sim.truth) {
    if (p.side != Side::user) continue;
    auto it = last.find(p.entity);
    if (it != last.end() && p.time > it->second.first) {
      const double gap = p.time - it->second.first;
      const Vector dz = (p.value - it->second.second) / std::sqrt(cfg.truth.sigma2_U * gap);
      sum_z2 += dz.squaredNorm();
      n += static_cast<std::size_t>(dz.size());
    }
    last[p.entity] = {p.time, p.value};
  }
  ASSERT_GT(n, 1000u);
  const double mean_z2 = sum_z2 / static_cast<double>(n);
  EXPECT_LT(std::abs(mean_z2 - 1.0), 3.0 * std::sqrt(2.0 / static_cast<double>(n)));
}

TEST(Generate, TimeQuantumProducesSharedTimestamps) {
  auto cfg = base(11);
  cfg.time_quantum = 1.0;
  const auto sim = generate(cfg);
  for (const Event& e : sim.log.events) EXPECT_EQ(e.time, std::round(e.time));
  EXPECT_TRUE(validate_log(sim.log).ok());
}

TEST(Generate, RejectsBadConfig) {
  auto cfg = base(1);
  cfg.rating_rate = 0.0;
  EXPECT_THROW(generate(cfg), std::invalid_argument);
  cfg = base(1);
  cfg.truth.sigma2_E = -1.0;
  EXPECT_THROW(generate(cfg), std::invalid_argument);
}

TEST(TruthCsv, HeaderAndRows) {
  auto cfg = base(12);
  cfg.horizon = 2.0;
  const auto sim = generate(cfg);
  std::stringstream ss;
  write_truth_csv(sim, ss, 2);
  std::string line;
  std::getline(ss, line);
  EXPECT_EQ(line, "entity,kind,time,mean_0,mean_1");
  std::size_t rows = 0;
  while (std::getline(ss, line)) ++rows;
  EXPECT_EQ(rows, sim.truth.size());
}

}  // namespace
}  // namespace srec
