#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <tuple>
#include <sstream>

#include "acstate/experiment.hpp"
#include "acstate/tabular_oracle.hpp"

using namespace acstate;

namespace {

Partition mod3() { return Partition::canonical({0, 1, 2, 0, 1, 2}); }

}  // namespace

TEST(Tabular, DiameterOfKnownTables) {
  EXPECT_EQ(tabular::toggle().diameter(), 1);
  EXPECT_EQ(tabular::cycle(6).diameter(), 3);
  EXPECT_EQ(tabular::robot_arm_grid().diameter(), 4);
  EXPECT_EQ(TabularExBMDP(2, 1, {0, 1}).diameter(), -1);
}

TEST(Tabular, RejectsBadTables) {
  EXPECT_THROW(TabularExBMDP(2, 2, {0, 1, 1}), ConfigError);
  EXPECT_THROW(TabularExBMDP(2, 2, {0, 1, 1, 2}), ConfigError);
  EXPECT_THROW(TabularExBMDP(2, 1, {0, 1}, {0.5, 0.4, 0.5, 0.5}), ConfigError);
}

TEST(ExactInverse, RowsSumToOne) {
  Rng rng(21);
  for (int i = 0; i < 50; ++i) {
    const auto inst = tabular::random_instance(rng);
    const int D = inst.mdp.diameter();
    for (int s = 0; s < inst.mdp.n_endo(); ++s) {
      for (int t = 0; t < inst.mdp.n_endo(); ++t) {
        for (int k = 1; k <= D; ++k) {
          const auto inv = exact_inverse(inst.mdp, inst.policy, s, t, k);
          if (!inv) continue;
          EXPECT_NEAR(std::accumulate(inv->begin(), inv->end(), 0.0), 1.0, 1e-10);
        }
      }
    }
  }
}

TEST(ExactInverse, UndefinedWhenUnreachable) {
  const auto m = tabular::cycle(6);
  const auto pol = PolicyTable::uniform(6, 2);
  EXPECT_FALSE(exact_inverse(m, pol, 0, 3, 1).has_value());
  const auto fwd = exact_inverse(m, pol, 0, 1, 1);
  ASSERT_TRUE(fwd);
  EXPECT_DOUBLE_EQ((*fwd)[1], 1.0);
  EXPECT_THROW(exact_inverse(m, pol, 0, 1, 0), ConfigError);
}

TEST(ProductInverse, EndogenousPolicyMatchesEndogenousInverse) {
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const auto inst = tabular::random_instance(rng);
    EXPECT_LE(product_inverse_invariance(inst.mdp, inst.policy, inst.mdp.diameter()), 1e-10);
  }
}

TEST(ProductInverse, ExoDependentPolicyBreaksInvariance) {
  const auto m = tabular::cycle(4, {0.5, 0.5, 0.5, 0.5});
  ProductPolicy p{4, 2, 2, {}};
  for (int s = 0; s < 4; ++s) {
    for (int e = 0; e < 2; ++e) {
      p.probs.push_back(e == 0 ? 0.9 : 0.2);
      p.probs.push_back(e == 0 ? 0.1 : 0.8);
    }
  }
  EXPECT_GT(product_inverse_invariance(m, p, 2), 1e-3);
}

TEST(CoarsestPartition, IdentityAtDiameterOnRandomInstances) {
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    const auto inst = tabular::random_instance(rng);
    const auto p = coarsest_consistent_partition(inst.mdp, inst.policy, inst.mdp.diameter());
    EXPECT_EQ(p.n_blocks, inst.mdp.n_endo()) << "instance " << i;
  }
}

TEST(CoarsestPartition, SkippingAnInnerHorizonIsCaught) {
  Rng rng(3);
  bool caught = false;
  for (int i = 0; i < 200 && !caught; ++i) {
    const auto inst = tabular::random_instance(rng);
    const auto p = coarsest_consistent_partition(inst.mdp, inst.policy, inst.mdp.diameter(), 2);
    caught = p.n_blocks != inst.mdp.n_endo();
  }
  EXPECT_TRUE(caught);
}

TEST(CoarsestPartition, EnumerationLimit) {
  const auto m = tabular::cycle(11);
  EXPECT_THROW(coarsest_consistent_partition(m, PolicyTable::uniform(11, 2), 1), SizeError);
}

TEST(Cycle, OneStepInverseMergesOppositeStates) {
  const auto m = tabular::cycle(6);
  const auto pol = PolicyTable::uniform(6, 2);
  EXPECT_TRUE(is_consistent(mod3(), ac_set_all(m, pol, 1)));
  EXPECT_FALSE(is_consistent(Partition::canonical({0, 1, 0, 1, 0, 1}), ac_set_all(m, pol, 1)));
  EXPECT_EQ(coarsest_consistent_partition(m, pol, 1), mod3());
}

TEST(Cycle, TwoActionCycleStaysMergedAtEveryHorizon) {
  // Rotation by three is an automorphism, and parity leaves some pairs
  // unreachable at exactly D steps.
  const auto m = tabular::cycle(6);
  const auto pol = PolicyTable::uniform(6, 2);
  EXPECT_FALSE(tabular::full_reach_at_diameter(m));
  for (int K = 2; K <= 4; ++K) EXPECT_TRUE(is_consistent(mod3(), ac_set_all(m, pol, K))) << K;
}

TEST(Cycle, StayActionSeparatesAtTwoSteps) {
  const auto m = lazy_cycle(6);
  const auto pol = PolicyTable::uniform(6, 3);
  EXPECT_TRUE(tabular::full_reach_at_diameter(m));
  EXPECT_EQ(coarsest_consistent_partition(m, pol, 1), mod3());
  for (int K = 2; K <= 3; ++K) {
    const auto r = is_consistent(mod3(), ac_set_all(m, pol, K));
    EXPECT_FALSE(r);
    ASSERT_TRUE(r.witness);
    EXPECT_GE(r.witness->horizon, 2);
  }
  EXPECT_EQ(coarsest_consistent_partition(m, pol, 3).n_blocks, 6);
}

TEST(ArmGrid, MiddleRowMergesAtOneStepOnly) {
  const auto m = tabular::robot_arm_grid();
  const auto pol = PolicyTable::uniform(9, 5);
  const auto k1 = coarsest_consistent_partition(m, pol, 1);
  EXPECT_EQ(k1.block(3), k1.block(4));
  EXPECT_EQ(k1.block(4), k1.block(5));
  EXPECT_EQ(k1.n_blocks, 7);
  EXPECT_EQ(coarsest_consistent_partition(m, pol, m.diameter()).n_blocks, 9);
}

TEST(AcSet, EntriesAreUniqueAndWithinHorizon) {
  const auto m = tabular::robot_arm_grid();
  const auto pol = PolicyTable::uniform(9, 5);
  const auto entries = ac_set(m, pol, 0, 3);
  std::set<std::tuple<int, int, int>> keys;
  for (const auto& e : entries) {
    EXPECT_TRUE(keys.insert({e.from, e.to, e.horizon}).second);
    EXPECT_GE(e.horizon, 1);
    EXPECT_LE(e.horizon, 3);
  }
  EXPECT_THROW(ac_set(m, pol, 0, 0), ConfigError);
}

TEST(Stationary, FixedPointOfPolicyChain) {
  Rng rng(2);
  const auto inst = tabular::random_instance(rng);
  const int n = inst.mdp.n_endo();
  const auto chain = policy_chain(inst.mdp, inst.policy);
  const auto mu = stationary_dist(chain, n);
  EXPECT_NEAR(std::accumulate(mu.begin(), mu.end(), 0.0), 1.0, 1e-12);
  for (int j = 0; j < n; ++j) {
    double next = 0.0;
    for (int i = 0; i < n; ++i) next += mu[static_cast<std::size_t>(i)] * chain[static_cast<std::size_t>(i * n + j)];
    EXPECT_NEAR(next, mu[static_cast<std::size_t>(j)], 1e-9);
  }
}

TEST(Serialization, RoundTrip) {
  Rng rng(17);
  const auto inst = tabular::random_instance(rng);
  std::stringstream ss;
  write_tabular(ss, inst.mdp);
  const auto back = read_tabular(ss);
  EXPECT_EQ(back.endo_table(), inst.mdp.endo_table());
  EXPECT_EQ(back.exo_table(), inst.mdp.exo_table());
  std::istringstream bad("endo 2 2\n0 0 1\n");
  EXPECT_THROW(read_tabular(bad), ConfigError);
}

TEST(RandomInstance, RespectsBounds) {
  Rng rng(99);
  for (int i = 0; i < 100; ++i) {
    const auto inst = tabular::random_instance(rng, 6, 4);
    EXPECT_LE(inst.mdp.n_endo(), 6);
    EXPECT_LE(inst.mdp.n_exo(), 4);
    EXPECT_TRUE(inst.mdp.n_actions() == 2 || inst.mdp.n_actions() == 3);
    EXPECT_TRUE(tabular::full_reach_at_diameter(inst.mdp));
    EXPECT_NO_THROW(inst.policy.validate());
  }
}

TEST(KStep, ThreeCycleTwoSteps) {
  const auto m = tabular::cycle(3);
  const auto pol = PolicyTable::uniform(3, 2);
  EXPECT_EQ(k_step_dist(m, pol, 1, 0), (Distribution{0.0, 1.0, 0.0}));
  const auto d = k_step_dist(m, pol, 0, 2);
  EXPECT_DOUBLE_EQ(d[0], 0.5);
  EXPECT_DOUBLE_EQ(d[1], 0.25);
  EXPECT_DOUBLE_EQ(d[2], 0.25);
}

TEST(KStep, SupportWithinReachableSet) {
  Rng rng(31);
  for (int i = 0; i < 30; ++i) {
    const auto inst = tabular::random_instance(rng);
    for (int k = 0; k <= 4; ++k) {
      const auto d = k_step_dist(inst.mdp, inst.policy, 0, k);
      const auto reach = reachable_set(inst.mdp, 0, k);
      for (int s = 0; s < inst.mdp.n_endo(); ++s) {
        if (d[static_cast<std::size_t>(s)] > 0.0) {
          EXPECT_TRUE(reach.count(s)) << s;
        }
      }
    }
  }
}

TEST(ExactInverse, ReturnToStartSplitsFirstAction) {
  const auto m = tabular::cycle(3);
  const auto inv = exact_inverse(m, PolicyTable::uniform(3, 2), 0, 0, 2);
  ASSERT_TRUE(inv);
  EXPECT_DOUBLE_EQ((*inv)[0], 0.5);
  EXPECT_DOUBLE_EQ((*inv)[1], 0.5);
}

TEST(ProductInverse, ConstantExoIsExact) {
  const auto m = tabular::cycle(5);
  EXPECT_EQ(product_inverse_invariance(m, PolicyTable::uniform(5, 2), 3), 0.0);
  const auto mixing = tabular::cycle(3, {0.3, 0.7, 0.6, 0.4});
  EXPECT_LT(product_inverse_invariance(mixing, PolicyTable::uniform(3, 2), 3), 1e-10);
}

TEST(Reachable, CycleHorizons) {
  const auto m = tabular::cycle(6);
  EXPECT_EQ(reachable_set(m, 0, 1), (std::set<int>{1, 5}));
  // s+3 and s-3 coincide on six states
  EXPECT_EQ(reachable_set(m, 0, 3), (std::set<int>{1, 3, 5}));
  const auto arm = tabular::robot_arm_grid();
  std::set<int> all;
  for (int s = 0; s < 9; ++s) all.insert(s);
  for (int s = 0; s < 9; ++s) EXPECT_EQ(reachable_set(arm, s, arm.diameter()), all);
}

TEST(AcSet, OneStepEntriesAndBruteForceCount) {
  const auto m = tabular::cycle(6);
  const auto pol = PolicyTable::uniform(6, 2);
  const auto one = ac_set(m, pol, 0, 1);
  ASSERT_EQ(one.size(), 2u);
  for (const auto& e : one) EXPECT_EQ(e.horizon, 1);
  // independent recount of (s', s'', h') for h = 2: h'=2 from 0 itself, h'=1
  // from each one-step successor of 0
  std::set<std::tuple<int, int, int>> keys;
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) keys.insert({0, m.next(m.next(0, a), b), 2});
    const int mid = m.next(0, a);
    for (int b = 0; b < 2; ++b) keys.insert({mid, m.next(mid, b), 1});
  }
  const auto count = keys.size();
  EXPECT_EQ(ac_set(m, pol, 0, 2).size(), count);
}

TEST(Consistency, FinestPartitionAlwaysConsistent) {
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const auto inst = tabular::random_instance(rng);
    EXPECT_TRUE(is_consistent(Partition::identity(inst.mdp.n_endo()), ac_set_all(inst.mdp, inst.policy, 3)));
  }
  EXPECT_EQ(coarsest_consistent_partition(TabularExBMDP(1, 1, {0}), PolicyTable::uniform(1, 1), 1).n_blocks, 1);
}

TEST(Stationary, KnownChains) {
  const auto walk = policy_chain(tabular::cycle(5), PolicyTable::uniform(5, 2));
  for (double p : stationary_dist(walk, 5)) EXPECT_NEAR(p, 0.2, 1e-10);
  const std::vector<double> absorbing{0.5, 0.5, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 1.0};
  const auto mu = stationary_dist(absorbing, 3);
  EXPECT_NEAR(mu[2], 1.0, 1e-10);
}

TEST(Stationary, MatchesLinearSolve) {
  Rng rng(12);
  const int n = 5;
  std::vector<double> P(n * n);
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < n; ++j) row += P[static_cast<std::size_t>(i * n + j)] = 0.05 + rng.uniform();
    for (int j = 0; j < n; ++j) P[static_cast<std::size_t>(i * n + j)] /= row;
  }
  // (I - P^T) mu = 0 with the last equation replaced by sum(mu) = 1
  std::vector<std::vector<double>> A(n, std::vector<double>(n + 1, 0.0));
  for (int i = 0; i < n - 1; ++i) {
    for (int j = 0; j < n; ++j) A[i][j] = (i == j ? 1.0 : 0.0) - P[static_cast<std::size_t>(j * n + i)];
  }
  for (int j = 0; j <= n; ++j) A[n - 1][j] = 1.0;
  for (int c = 0; c < n; ++c) {
    int piv = c;
    for (int r = c + 1; r < n; ++r) {
      if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
    }
    std::swap(A[c], A[piv]);
    for (int r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = A[r][c] / A[c][c];
      for (int k = c; k <= n; ++k) A[r][k] -= f * A[c][k];
    }
  }
  const auto mu = stationary_dist(P, n);
  for (int i = 0; i < n; ++i) EXPECT_NEAR(mu[static_cast<std::size_t>(i)], A[i][n] / A[i][i], 1e-10);
}
