// Apache License, Version 2.0, refer to LICENSE.txt

#include <limits>
#include <sstream>

#include <gtest/gtest.h>

#include "srec/core_model.hpp"

namespace srec {
namespace {

TEST(ValidateLog, EmptyLogIsClean) {
  const auto report = validate_log(EventLog{});
  EXPECT_TRUE(report.ok());
  EXPECT_EQ(report.events, 0u);
}

TEST(ValidateLog, RatingWithoutBirthsCountsBothSides) {
  EventLog log;
  log.add_rating(1.0, "u", "i", 3);
  const auto report = validate_log(log);
  EXPECT_EQ(report.missing_births, 2u);
  EXPECT_FALSE(report.ok());
  EXPECT_EQ(report.messages.size(), 2u);
}

TEST(ValidateLog, BackwardsTimeIsOneViolation) {
  EventLog log;
  log.add_user_birth(0.0, "u");
  log.add_item_birth(0.0, "i");
  log.add_rating(1.0, "u", "i", 1);
  log.add_rating(3.0, "u", "i", 1);
  log.add_rating(2.0, "u", "i", 1);
  const auto report = validate_log(log);
  EXPECT_EQ(report.ordering_violations, 1u);
  EXPECT_EQ(report.missing_births, 0u);
}

TEST(ValidateLog, BirthAfterRatingIsMissing) {
  EventLog log;
  log.add_user_birth(0.0, "u");
  log.add_rating(1.0, "u", "i", 1);
  log.add_item_birth(2.0, "i");
  const auto report = validate_log(log);
  EXPECT_EQ(report.missing_births, 1u);
  EXPECT_EQ(report.ordering_violations, 0u);
}

TEST(ValidateLog, LevelRangeAndDuplicates) {
  EventLog log;
  log.add_user_birth(0.0, "u");
  log.add_user_birth(0.5, "u");
  log.add_item_birth(0.0, "i");
  log.add_rating(1.0, "u", "i", 0);
  log.add_rating(1.0, "u", "i", 6);
  log.add_rating(1.0, "u", "i", 5);
  const auto report = validate_log(log, 5);
  EXPECT_EQ(report.level_violations, 2u);
  EXPECT_EQ(report.duplicate_births, 1u);
  EXPECT_EQ(validate_log(log).level_violations, 0u);
}

TEST(AutoInsertBirths, InsertsAtFirstAppearance) {
  EventLog log;
  log.add_rating(2.0, "a", "x", 1);
  log.add_rating(5.0, "b", "x", 2);
  const auto fixed = auto_insert_births(log);
  ASSERT_EQ(fixed.size(), 5u);
  EXPECT_TRUE(validate_log(fixed).ok());
  EXPECT_EQ(fixed.events[0].kind, EventKind::user_birth);
  EXPECT_EQ(fixed.events[0].time, 2.0);
  EXPECT_EQ(fixed.events[1].kind, EventKind::item_birth);
  EXPECT_EQ(fixed.events[2].kind, EventKind::rating);
  EXPECT_EQ(fixed.events[3].kind, EventKind::user_birth);
  EXPECT_EQ(fixed.events[3].time, 5.0);
  EXPECT_EQ(fixed.rating_count(), 2u);
}

TEST(AutoInsertBirths, KeepsExistingBirthsAndIsIdempotent) {
  EventLog log;
  log.add_user_birth(0.0, "a");
  log.add_rating(1.0, "a", "x", 1);
  const auto once = auto_insert_births(log);
  EXPECT_EQ(once.size(), 3u);
  EXPECT_EQ(auto_insert_births(once), once);
}

TEST(RatingScale, IntervalsAreRightClosed) {
  const RatingScale scale({-1.0, 0.0, 1.0});
  EXPECT_EQ(scale.levels(), 4);
  EXPECT_EQ(scale.lower(1), -std::numeric_limits<double>::infinity());
  EXPECT_EQ(scale.upper(1), -1.0);
  EXPECT_EQ(scale.lower(4), 1.0);
  EXPECT_EQ(scale.upper(4), std::numeric_limits<double>::infinity());
  EXPECT_TRUE(scale.contains_level(4));
  EXPECT_FALSE(scale.contains_level(5));
}

TEST(RatingScale, RejectsBadThresholds) {
  EXPECT_THROW(RatingScale(std::vector<double>{}), std::invalid_argument);
  EXPECT_THROW(RatingScale({0.0, 0.0}), std::invalid_argument);
  EXPECT_THROW(RatingScale({1.0, 0.0}), std::invalid_argument);
  EXPECT_THROW(RatingScale({std::numeric_limits<double>::infinity()}), std::invalid_argument);
}

TEST(ModelParams, Validation) {
  ModelParams p;
  EXPECT_NO_THROW(p.validate());
  p.sigma2_U = 0.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = {};
  p.d = 0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = {};
  p.birth_jitter = -1.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(MatrixHelpers, SymmetryAndDefiniteness) {
  Matrix a(2, 2);
  a << 2.0, 1.0, 1.0, 2.0;
  EXPECT_TRUE(is_symmetric(a));
  EXPECT_TRUE(is_psd(a));
  EXPECT_NEAR(min_eigenvalue(a), 1.0, 1e-12);
  a(0, 1) = 3.0;
  EXPECT_FALSE(is_symmetric(a));
  Matrix b(2, 2);
  b << 1.0, 2.0, 2.0, 1.0;
  EXPECT_FALSE(is_psd(b));
}

TEST(EventCsv, RoundTrip) {
  EventLog log;
  log.add_user_birth(0.0, "alice");
  log.add_item_birth(0.0, "m 1");
  log.add_rating(0.1, "alice", "m 1", 4);
  log.add_rating(1.0 / 3.0, "alice", "m 1", 2);
  std::stringstream ss;
  write_event_csv(log, ss);
  const auto back = read_event_csv(ss);
  EXPECT_EQ(back, log);
}

TEST(EventCsv, RejectsMalformedInput) {
  std::stringstream no_header("0,rate,u,i,1\n");
  EXPECT_THROW(read_event_csv(no_header), std::runtime_error);
  std::stringstream bad_kind("time,kind,user,item,level\n0,oops,u,i,1\n");
  EXPECT_THROW(read_event_csv(bad_kind), std::runtime_error);
  std::stringstream negative("time,kind,user,item,level\n-1,ubirth,u,,\n");
  EXPECT_THROW(read_event_csv(negative), std::runtime_error);
}

}  // namespace
}  // namespace srec
