#include <gtest/gtest.h>

#include <set>

#include "acstate/exbmdp_env.hpp"

using namespace acstate;

TEST(Multimaze, NineOpenMazesHave324Inputs) {
  const auto env = build_multimaze(layouts::open_grid(6, 6, 8, 1));
  EXPECT_EQ(env.obs_dim(), 324u);
  EXPECT_EQ(env.n_actions(), 4);
  EXPECT_EQ(env.n_endo(), 36);
  EXPECT_EQ(env.reachable_endo().size(), 36u);
  EXPECT_EQ(env.endo_diameter(), 10);
}

TEST(Multimaze, SingleCellSelfLoops) {
  const auto env = build_multimaze(layouts::open_grid(1, 1, 0, 0));
  EXPECT_EQ(env.obs_dim(), 1u);
  for (int a = 0; a < env.n_actions(); ++a) EXPECT_EQ(env.endo_next(0, a), 0);
}

TEST(Multimaze, FourRoomsReachableCountMatchesFreeCells) {
  const auto spec = layouts::four_rooms(0, 0, 3);
  const auto env = build_multimaze(spec);
  EXPECT_EQ(env.reachable_endo().size(), 81u - spec.blocked_cells.size());
  EXPECT_EQ(env.reachable_endo().size(), 68u);
}

TEST(Multimaze, DisconnectedMazeIsRejected) {
  auto spec = layouts::open_grid(3, 3, 0, 0);
  spec.blocked_cells = {1, 4, 7};  // middle column
  EXPECT_THROW(build_multimaze(spec), ConfigError);
}

TEST(Multimaze, WallsBlockMoves) {
  auto spec = layouts::open_grid(2, 1, 0, 0);
  spec.walls = {{0, 1}};
  EXPECT_THROW(build_multimaze(spec), ConfigError);
  spec = layouts::open_grid(2, 2, 0, 0);
  spec.walls = {{0, 1}};
  const auto env = build_multimaze(spec);
  for (int a = 0; a < env.n_actions(); ++a) EXPECT_NE(env.endo_next(0, a), 1);
  EXPECT_EQ(env.reachable_endo().size(), 4u);
}

TEST(EnvStep, BlockedMoveKeepsEndoButExoAdvances) {
  const auto env = build_multimaze(layouts::open_grid(6, 6, 3, 5));
  auto st = env.initial_state();
  ASSERT_EQ(st.endo, 0);
  bool exo_moved = false;
  for (int i = 0; i < 20; ++i) {
    auto [next, obs] = env.step(st, static_cast<int>(Move::up));
    EXPECT_EQ(next.endo, 0);
    exo_moved |= next.exo != st.exo;
    st = next;
  }
  EXPECT_TRUE(exo_moved);
}

TEST(EnvStep, ResetActionsJumpToStart) {
  const auto env = build_multimaze(layouts::four_rooms(2, 2, 0));
  ASSERT_EQ(env.n_actions(), 6);
  for (int s : env.reachable_endo()) {
    EXPECT_EQ(env.endo_next(s, 4), env.start());
    EXPECT_EQ(env.endo_next(s, 5), env.start());
  }
}

TEST(EnvStep, ReplayIsDeterministic) {
  const auto env = build_multimaze(layouts::open_grid(6, 6, 8, 11));
  Session a(env), b(env);
  Rng ra(4), rb(4);
  for (int t = 0; t < 200; ++t) {
    const int act_a = static_cast<int>(ra.uniform_index(4));
    const int act_b = static_cast<int>(rb.uniform_index(4));
    ASSERT_EQ(a.act(act_a), b.act(act_b));
    ASSERT_EQ(ground_exogenous(a), ground_exogenous(b));
  }
}

TEST(EnvStep, EndoIgnoresExoAndExoIgnoresActions) {
  const auto env = build_multimaze(layouts::open_grid(4, 4, 2, 9));
  auto st = env.initial_state();
  for (int t = 0; t < 50; ++t) {
    auto other = st;
    other.exo = {3, 7};
    for (int a = 0; a < 4; ++a) EXPECT_EQ(env.step(st, a).first.endo, env.step(other, a).first.endo);
    // same exo rng state, different actions -> same exo successor
    EXPECT_EQ(env.step(st, 0).first.exo, env.step(st, 3).first.exo);
    st = env.step(st, t % 4).first;
  }
}

TEST(Observation, OneHotPerBlockAndDisjoint) {
  const auto env = build_multimaze(layouts::open_grid(3, 3, 2, 2));
  std::set<std::vector<std::uint32_t>> seen;
  EnvState st = env.initial_state();
  for (int s = 0; s < 9; ++s) {
    for (int e1 = 0; e1 < 9; ++e1) {
      for (int e2 = 0; e2 < 9; ++e2) {
        st.endo = s;
        st.exo = {e1, e2};
        const auto obs = env.render(st);
        ASSERT_EQ(obs.hot.size(), 3u);
        for (std::size_t b = 0; b < 3; ++b) {
          EXPECT_GE(obs.hot[b], 9 * b);
          EXPECT_LT(obs.hot[b], 9 * (b + 1));
        }
        EXPECT_TRUE(seen.insert(obs.hot).second);
      }
    }
  }
}

TEST(Tabular, ExplicitTableWithChainDistractors) {
  ExoChain chain;
  chain.successors = {{0, 1}, {0, 1}};
  chain.probs = {{0.5, 0.5}, {0.1, 0.9}};
  chain.support = {0, 1};
  const auto env = build_tabular_environment(2, 2, {0, 1, 1, 0}, chain, 3, 7);
  EXPECT_EQ(env.obs_dim(), 2u + 3u * 2u);
  EXPECT_EQ(env.endo_next(0, 1), 1);
  EXPECT_FALSE(env.grid().has_value());
  EXPECT_THROW(build_tabular_environment(2, 2, {0, 1, 1}, chain, 1, 0), ConfigError);
}

TEST(Ground, RolloutSupportEqualsReachableSet) {
  const auto env = build_multimaze(layouts::open_grid(4, 4, 2, 3));
  Session s(env);
  Rng rng(3);
  std::set<int> seen{ground_endogenous(s)};
  for (int t = 0; t < 1000; ++t) {
    s.act(static_cast<int>(rng.uniform_index(4)));
    seen.insert(ground_endogenous(s));
  }
  const auto reach = env.reachable_endo();
  EXPECT_EQ(seen, std::set<int>(reach.begin(), reach.end()));
  EnvState st = env.initial_state();
  st.endo = 7;
  EXPECT_EQ(ground_endogenous(st), 7);
}
