#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <tuple>

#include "acstate/latent_planner.hpp"

using namespace acstate;

namespace {

// 0 -> 1 -> 2 -> 3 chain with a back action.
LatentMDP chain4() {
  LatentMDP m(4, 2);
  for (int s = 0; s < 3; ++s) m.update_counts(s, 0, s + 1);
  for (int s = 1; s < 4; ++s) m.update_counts(s, 1, s - 1);
  return m;
}

}  // namespace

TEST(LatentMdp, RowsAreDistributions) {
  Rng rng(4);
  LatentMDP m(7, 3);
  for (int i = 0; i < 500; ++i) {
    m.update_counts(static_cast<int>(rng.uniform_index(7)), static_cast<int>(rng.uniform_index(3)),
                    static_cast<int>(rng.uniform_index(7)));
  }
  for (int s = 0; s < 7; ++s) {
    for (int a = 0; a < 3; ++a) {
      const auto p = m.estimate_transition(s, a);
      if (!p) continue;
      EXPECT_NEAR(std::accumulate(p->begin(), p->end(), 0.0), 1.0, 1e-12);
      for (double v : *p) EXPECT_GE(v, 0.0);
    }
  }
  EXPECT_EQ(m.total_updates(), 500u);
  EXPECT_FALSE(LatentMDP(3, 1).estimate_transition(0, 0).has_value());
  EXPECT_THROW(m.update_counts(0, 3, 0), ConfigError);
  EXPECT_THROW(m.update_counts(7, 0, 0), ConfigError);
}

TEST(FindGoal, ColdStartWithoutEdges) {
  LatentMDP m(5, 2);
  Rng rng(1);
  const auto g = m.findgoal(2, rng);
  EXPECT_TRUE(g.cold_start);
}

TEST(FindGoal, NeverPicksCurrentAndDeadlineHasSlack) {
  const auto m = chain4();
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const auto g = m.findgoal(1, rng);
    ASSERT_FALSE(g.cold_start);
    EXPECT_NE(g.goal, 1);
    EXPECT_EQ(g.deadline, g.depth + kGoalDeadlineSlack);
    EXPECT_EQ(g.depth, std::abs(g.goal - 1));
  }
}

TEST(FindGoal, FrequencyFollowsInverseVisits) {
  // star: 0 reaches 1 and 2 deterministically; 2 is visited three times as often
  LatentMDP m(3, 2);
  m.update_counts(0, 0, 1);
  for (int i = 0; i < 3; ++i) m.update_counts(0, 1, 2);
  Rng rng(7);
  int ones = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) ones += m.findgoal(0, rng).goal == 1 ? 1 : 0;
  EXPECT_NEAR(static_cast<double>(ones) / n, 0.75, 0.015);
}

TEST(SampledBfs, MatchesBfsOnDeterministicGraph) {
  const auto m = chain4();
  Rng rng(5);
  for (int s = 0; s < 4; ++s) EXPECT_EQ(m.sampled_bfs_depths(s, rng), m.bfs_depths(s));
  EXPECT_EQ(m.bfs_depths(0), (std::vector<int>{0, 1, 2, 3}));
}

TEST(CostToGo, DeterministicCostsAreDistances) {
  const auto m = chain4();
  const auto v = m.cost_to_go(3);
  for (int s = 0; s < 4; ++s) EXPECT_NEAR(v[static_cast<std::size_t>(s)], 3 - s, 1e-9);
  const auto p = m.plan(0, 3);
  EXPECT_EQ(p.action, 0);
  EXPECT_NEAR(p.cost, 3.0, 1e-9);
}

TEST(CostToGo, ExpectedHittingTimeWithSelfLoop) {
  LatentMDP m(2, 1);
  m.update_counts(0, 0, 0);
  m.update_counts(0, 0, 1);
  EXPECT_NEAR(m.cost_to_go(1)[0], 2.0, 1e-8);
}

TEST(CostToGo, RiskyActionIsPrunedFromProperSet) {
  // action 0 from 0 reaches the goal half the time and a trap otherwise;
  // action 1 takes two sure steps via 1
  LatentMDP m(4, 2);
  m.update_counts(0, 0, 3);
  m.update_counts(0, 0, 2);
  m.update_counts(0, 1, 1);
  m.update_counts(1, 0, 3);
  m.update_counts(2, 0, 2);
  const auto v = m.cost_to_go(3);
  EXPECT_TRUE(std::isinf(v[2]));
  EXPECT_NEAR(v[0], 2.0, 1e-9);
  EXPECT_EQ(m.plan(0, 3).action, 1);
}

TEST(Plan, UnreachableGoalThrows) {
  const auto m = chain4();
  LatentMDP cut(4, 2);
  cut.update_counts(0, 0, 1);
  EXPECT_THROW(cut.plan(2, 1), PlanningError);
  EXPECT_THROW(cut.plan(0, 3), PlanningError);
  EXPECT_THROW(m.plan(0, 3, std::vector<double>(2, 0.0)), ConfigError);
  EXPECT_EQ(m.plan(2, 2).cost, 0.0);
}

TEST(LatentMdp, NormalizedRowAndUndefinedRow) {
  LatentMDP m(3, 2);
  for (int i = 0; i < 3; ++i) m.update_counts(0, 1, 0);
  m.update_counts(0, 1, 1);
  const auto p = m.estimate_transition(0, 1);
  ASSERT_TRUE(p);
  EXPECT_EQ(*p, (std::vector<double>{0.75, 0.25, 0.0}));
  EXPECT_FALSE(m.estimate_transition(0, 0));
}

TEST(LatentMdp, ReplayMatchesHistogram) {
  Rng rng(9);
  std::vector<int> codes{static_cast<int>(rng.uniform_index(5))}, actions;
  for (int t = 0; t < 300; ++t) {
    actions.push_back(static_cast<int>(rng.uniform_index(2)));
    codes.push_back(static_cast<int>(rng.uniform_index(5)));
  }
  LatentMDP m(5, 2);
  EXPECT_EQ(m.total_updates(), 0u);
  m.update_counts(codes[0], actions[0], codes[1]);
  int nonzero = 0;
  for (int s = 0; s < 5; ++s) {
    for (int a = 0; a < 2; ++a) nonzero += static_cast<int>(m.row(s, a).size());
  }
  EXPECT_EQ(nonzero, 1);
  for (std::size_t t = 1; t < actions.size(); ++t) m.update_counts(codes[t], actions[t], codes[t + 1]);
  std::map<std::tuple<int, int, int>, std::uint64_t> hist;
  for (std::size_t t = 0; t < actions.size(); ++t) ++hist[{codes[t], actions[t], codes[t + 1]}];
  for (const auto& [k, c] : hist) EXPECT_EQ(m.count(std::get<0>(k), std::get<1>(k), std::get<2>(k)), c);
  const auto& v = m.visit_counts();
  EXPECT_EQ(std::accumulate(v.begin(), v.end(), std::uint64_t{0}), codes.size());
}

TEST(FindGoal, InverseVisitWeightsExcludingCurrent) {
  // visits [10, 10, 1], all mutually reachable
  LatentMDP m(3, 2);
  m.update_counts(0, 0, 1);
  m.update_counts(1, 0, 0);
  m.update_counts(0, 1, 2);
  m.update_counts(2, 0, 0);
  for (int i = 0; i < 9; ++i) m.update_counts(0, 0, 1);
  for (int i = 0; i < 7; ++i) m.update_counts(1, 0, 0);
  ASSERT_EQ(m.visit_counts(), (std::vector<std::uint64_t>{10, 10, 1}));
  Rng rng(3);
  const int n = 20000;
  int twos = 0;
  for (int i = 0; i < n; ++i) twos += m.findgoal(0, rng).goal == 2 ? 1 : 0;
  // 1 / (1/10 + 1) with the current code left out
  const double p = 10.0 / 11.0;
  EXPECT_NEAR(static_cast<double>(twos) / n, p, 3.0 * std::sqrt(p * (1 - p) / n));
}

TEST(FindGoal, StarExcludesUnreachedLeaves) {
  LatentMDP m(5, 2);
  m.update_counts(0, 0, 1);
  m.update_counts(0, 1, 2);
  m.update_counts(3, 0, 4);  // leaves 3 and 4 are not reachable from the centre
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const int g = m.findgoal(0, rng).goal;
    EXPECT_TRUE(g == 1 || g == 2) << g;
  }
}

TEST(Plan, ChainStepsTowardGoal) {
  LatentMDP m(3, 2);
  m.update_counts(0, 1, 1);
  m.update_counts(0, 0, 0);
  m.update_counts(1, 1, 2);
  m.update_counts(1, 0, 0);
  EXPECT_EQ(m.plan(0, 2).action, 1);
  EXPECT_NEAR(m.plan(0, 2).cost, 2.0, 1e-9);
}

TEST(Plan, MatchesExhaustivePolicySearch) {
  Rng rng(21);
  const int n = 4, A = 2, goal = 3;
  for (int trial = 0; trial < 20; ++trial) {
    LatentMDP m(n, A);
    for (int s = 0; s < n; ++s) {
      for (int a = 0; a < A; ++a) {
        const int draws = 1 + static_cast<int>(rng.uniform_index(3));
        for (int d = 0; d < draws; ++d) m.update_counts(s, a, static_cast<int>(rng.uniform_index(n)));
      }
    }
    // evaluate every stationary deterministic policy by long fixed-point iteration
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    best[goal] = 0.0;
    for (int code = 0; code < 8; ++code) {
      std::vector<double> v(n, 0.0);
      for (int it = 0; it < 20000; ++it) {
        std::vector<double> next(n, 0.0);
        for (int s = 0; s < n; ++s) {
          if (s == goal) continue;
          const int a = (code >> (s < goal ? s : s - 1)) & 1;
          const auto p = *m.estimate_transition(s, a);
          next[s] = 1.0;
          for (int t = 0; t < n; ++t) next[s] += p[t] * v[t];
        }
        v = next;
      }
      for (int s = 0; s < n; ++s) {
        if (v[s] < 1e3) best[s] = std::min(best[s], v[s]);
      }
    }
    const auto cost = m.cost_to_go(goal);
    for (int s = 0; s < n; ++s) {
      if (std::isinf(best[s])) {
        EXPECT_TRUE(std::isinf(cost[s])) << trial << " " << s;
      } else {
        EXPECT_NEAR(cost[s], best[s], 1e-6) << trial << " " << s;
      }
    }
  }
}
