// SPDX-License-Identifier: Apache-2.0
#include <random>

#include <gtest/gtest.h>

#include "selfcheck/domain.hpp"

namespace selfcheck {
namespace {

ConfusionMatrix cm(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn, std::uint64_t tn) {
  return ConfusionMatrix{tp, tn, fp, fn};
}

TEST(Metrics, Precision) {
  EXPECT_DOUBLE_EQ(*precision(cm(3, 1, 1, 5)), 0.75);
  EXPECT_DOUBLE_EQ(*precision(cm(7, 0, 0, 0)), 1.0);
  EXPECT_FALSE(precision(cm(0, 0, 2, 2)).has_value());
}

TEST(Metrics, Recall) {
  EXPECT_DOUBLE_EQ(*recall(cm(3, 1, 1, 5)), 0.75);
  EXPECT_FALSE(recall(cm(0, 3, 0, 1)).has_value());
  EXPECT_DOUBLE_EQ(*recall(cm(4, 2, 0, 0)), 1.0);
}

TEST(Metrics, Specificity) {
  EXPECT_NEAR(*specificity(cm(3, 1, 1, 5)), 5.0 / 6.0, 1e-15);
  EXPECT_DOUBLE_EQ(*specificity(cm(1, 4, 0, 0)), 0.0);
  EXPECT_FALSE(specificity(cm(2, 0, 1, 0)).has_value());
}

TEST(Metrics, F1) {
  EXPECT_DOUBLE_EQ(*f1(cm(3, 1, 1, 5)), 0.75);
  EXPECT_DOUBLE_EQ(*f1(cm(5, 0, 0, 3)), 1.0);
  EXPECT_FALSE(f1(cm(0, 1, 1, 1)).has_value());
}

TEST(Metrics, Mcc) {
  EXPECT_NEAR(mcc(cm(3, 1, 1, 5)), 14.0 / 24.0, 1e-15);
  EXPECT_DOUBLE_EQ(mcc(cm(5, 0, 0, 5)), 1.0);
  EXPECT_DOUBLE_EQ(mcc(cm(5, 5, 0, 0)), 0.0);
  EXPECT_DOUBLE_EQ(mcc(ConfusionMatrix{}), 0.0);
}

TEST(Metrics, AllDefinedWhenEveryCountPositive) {
  std::mt19937 rng(1);
  std::uniform_int_distribution<std::uint64_t> d(1, 40);
  for (int i = 0; i < 500; ++i) {
    const auto m = cm(d(rng), d(rng), d(rng), d(rng));
    const auto r = compute_metrics(m);
    ASSERT_TRUE(r.precision && r.recall && r.specificity && r.f1 && r.mcc);
    const double direct = 2.0 * m.tp / (2.0 * m.tp + m.fp + m.fn);
    EXPECT_NEAR(*r.f1, direct, 1e-12);
  }
}

TEST(Metrics, MccSignFlipsWhenDiagonalsSwap) {
  std::mt19937 rng(2);
  std::uniform_int_distribution<std::uint64_t> d(0, 30);
  for (int i = 0; i < 500; ++i) {
    const auto a = cm(d(rng), d(rng), d(rng), d(rng));
    const ConfusionMatrix swapped{a.fp, a.fn, a.tp, a.tn};
    EXPECT_NEAR(mcc(swapped), -mcc(a), 1e-12);
  }
}

TEST(Metrics, ScaleInvariant) {
  std::mt19937 rng(3);
  std::uniform_int_distribution<std::uint64_t> d(0, 30);
  std::uniform_int_distribution<std::uint64_t> k(2, 9);
  for (int i = 0; i < 500; ++i) {
    const auto a = cm(d(rng), d(rng), d(rng), d(rng));
    const auto f = k(rng);
    const ConfusionMatrix b{a.tp * f, a.tn * f, a.fp * f, a.fn * f};
    const auto ra = compute_metrics(a);
    const auto rb = compute_metrics(b);
    for (auto [x, y] : {std::pair{ra.precision, rb.precision}, {ra.recall, rb.recall},
                        {ra.specificity, rb.specificity}, {ra.f1, rb.f1}, {ra.mcc, rb.mcc}}) {
      ASSERT_EQ(x.has_value(), y.has_value());
      if (x) {
        EXPECT_NEAR(*x, *y, 1e-12);
      }
    }
  }
}

// Metrics from counts agree with metrics computed by walking the raw
// (correct, flagged) records one by one.
TEST(Metrics, CountsMatchRecordWalk) {
  std::mt19937 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::pair<bool, bool>> records(std::uniform_int_distribution<int>(0, 60)(rng));
    for (auto& r : records) r = {rng() % 2 == 0, rng() % 3 == 0};
    ConfusionMatrix m;
    for (auto [correct, flagged] : records) {
      if (correct && !flagged) ++m.tp;
      if (!correct && flagged) ++m.tn;
      if (!correct && !flagged) ++m.fp;
      if (correct && flagged) ++m.fn;
    }
    int not_flagged = 0, correct_not_flagged = 0, correct = 0, incorrect = 0, incorrect_flagged = 0;
    for (auto [c, f] : records) {
      not_flagged += !f;
      correct_not_flagged += c && !f;
      correct += c;
      incorrect += !c;
      incorrect_flagged += !c && f;
    }
    if (not_flagged) {
      EXPECT_NEAR(*precision(m), double(correct_not_flagged) / not_flagged, 1e-12);
    } else {
      EXPECT_FALSE(precision(m));
    }
    if (correct) {
      EXPECT_NEAR(*recall(m), double(correct_not_flagged) / correct, 1e-12);
    } else {
      EXPECT_FALSE(recall(m));
    }
    if (incorrect) {
      EXPECT_NEAR(*specificity(m), double(incorrect_flagged) / incorrect, 1e-12);
    } else {
      EXPECT_FALSE(specificity(m));
    }
    EXPECT_EQ(m.total(), records.size());
  }
}

TEST(AgentSet, BasicSetAlgebra) {
  AgentSet s{AgentClass::pedestrian, AgentClass::vehicle, AgentClass::pedestrian};
  EXPECT_EQ(s.size(), 2u);
  EXPECT_TRUE(s.contains(AgentClass::vehicle));
  EXPECT_FALSE(s.contains(AgentClass::cyclist));
  EXPECT_EQ(s.to_string(), "{vehicle, pedestrian}");
  EXPECT_TRUE(AgentSet{}.is_subset_of(s));
  EXPECT_TRUE(AgentSet{AgentClass::vehicle}.is_subset_of(s));
  EXPECT_FALSE(s.is_subset_of(AgentSet{AgentClass::vehicle}));
  EXPECT_EQ(AgentSet::from_bits(0xff).size(), 3u);
}

TEST(Tags, ParseRoundTrip) {
  for (AgentClass c : kAllAgentClasses) EXPECT_EQ(parse_agent_class(to_string(c)), c);
  for (TimeOfDay t : kAllTimesOfDay) EXPECT_EQ(parse_time_of_day(to_string(t)), t);
  EXPECT_FALSE(parse_agent_class("tree"));
  EXPECT_FALSE(parse_time_of_day("noon"));
}

}  // namespace
}  // namespace selfcheck
