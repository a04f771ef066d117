#include <gtest/gtest.h>

#include <sstream>

#include "acstate/eval_metrics.hpp"

using namespace acstate;

TEST(Purity, PerfectAndMixedCodes) {
  EXPECT_DOUBLE_EQ(purity(cooccurrence({0, 1, 2, 0}, {5, 3, 3, 5}, 3, 6)), 1.0);
  // code 0 holds ground 0 twice and ground 1 once
  EXPECT_DOUBLE_EQ(purity(cooccurrence({0, 0, 0, 1}, {0, 0, 1, 1}, 2, 2)), 0.75);
  EXPECT_THROW(cooccurrence({0}, {0, 1}, 1, 2), ConfigError);
  EXPECT_THROW(cooccurrence({2}, {0}, 2, 1), ConfigError);
  EXPECT_THROW(purity(cooccurrence({}, {}, 1, 1)), ConfigError);
}

TEST(Parsimony, GroundOverCodes) {
  EXPECT_DOUBLE_EQ(state_parsimony({0, 1, 2, 3}, {0, 0, 1, 1}), 0.5);
  EXPECT_DOUBLE_EQ(state_parsimony({0, 0, 0}, {0, 1, 2}), 3.0);
  EXPECT_THROW(state_parsimony({}, {}), ConfigError);
}

TEST(Coverage, CountsDistinctVisited) {
  const auto c = coverage({0, 0, 3, 4, 4}, 8, 10);
  EXPECT_EQ(c.visited, 3);
  EXPECT_DOUBLE_EQ(c.fraction, 3.0 / 8.0);
  EXPECT_EQ(c.visits[4], 2u);
  EXPECT_THROW(coverage({0}, 0, 1), ConfigError);
}

TEST(DynamicsError, ZeroWhenCodesMatchGround) {
  // ring of 4 states, action 0 forward, action 1 back, codes are a relabeling
  std::vector<int> ground{0}, actions;
  for (int t = 0; t < 60; ++t) {
    const int a = (t * 7 + t / 3) % 2;
    actions.push_back(a);
    ground.push_back((ground.back() + (a == 0 ? 1 : 3)) % 4);
  }
  std::vector<int> codes;
  for (int g : ground) codes.push_back(3 - g);
  LatentMDP mdp(4, 2);
  for (std::size_t t = 0; t < actions.size(); ++t) mdp.update_counts(codes[t], actions[t], codes[t + 1]);
  const auto e = dynamics_diff_error(codes, ground, actions, mdp, 4);
  EXPECT_NEAR(e.percent, 0.0, 1e-12);
  EXPECT_EQ(e.undefined_rows, 0);
  EXPECT_DOUBLE_EQ(e.majority_confidence, 1.0);
}

TEST(DynamicsError, MergedCodesAndMissingRows) {
  // two ground states collapsed to one code: predicting 0->1 and 1->0 as a coin flip
  const std::vector<int> ground{0, 1, 0, 1, 0};
  const std::vector<int> actions{0, 0, 0, 0};
  const std::vector<int> codes{0, 0, 0, 0, 0};
  LatentMDP mdp(1, 1);
  for (int t = 0; t < 4; ++t) mdp.update_counts(0, 0, 0);
  EXPECT_NEAR(dynamics_diff_error(codes, ground, actions, mdp, 2).percent, 50.0, 1e-9);

  LatentMDP empty(1, 1);
  const auto e = dynamics_diff_error(codes, ground, actions, empty, 2);
  EXPECT_EQ(e.undefined_rows, 2);
  EXPECT_NEAR(e.percent, 100.0, 1e-12);
  EXPECT_THROW(dynamics_diff_error(codes, ground, {0}, mdp, 2), ConfigError);
}

TEST(Pgm, HeaderAndScaling) {
  std::ostringstream os;
  write_pgm(os, {0.0, 1.0, 2.0, 4.0}, 2, 2);
  EXPECT_EQ(os.str(), "P2\n2 2\n255\n0 64\n128 255\n");
  std::ostringstream zeros;
  write_pgm(zeros, {0.0, 0.0}, 1, 2);
  EXPECT_EQ(zeros.str(), "P2\n2 1\n255\n0 0\n");
}

TEST(Matrix, WhitespaceRows) {
  std::ostringstream os;
  write_matrix(os, {1, 2, 3, 4, 5, 6}, 2, 3);
  EXPECT_EQ(os.str(), "1 2 3\n4 5 6\n");
}

TEST(Parsimony, CodeBudgetArithmetic) {
  std::vector<int> codes, ground;
  for (int i = 0; i < 80; ++i) {
    codes.push_back(i);
    ground.push_back(i % 68);
  }
  EXPECT_DOUBLE_EQ(state_parsimony(codes, ground), 0.85);
  EXPECT_DOUBLE_EQ(purity(cooccurrence({0, 0}, {0, 1}, 1, 2)), 0.5);
}

TEST(Coverage, OneStepBuffer) {
  EXPECT_DOUBLE_EQ(coverage({3, 3}, 10, 10).fraction, 0.1);
  EXPECT_DOUBLE_EQ(coverage({3, 4}, 10, 10).fraction, 0.2);
}

TEST(DynamicsError, PerfectEncoderRowsArePointMasses) {
  const auto env = build_multimaze(layouts::open_grid(4, 4, 2, 8));
  Session s(env);
  Rng rng(8);
  std::vector<int> ground{ground_endogenous(s)}, actions;
  for (int t = 0; t < 2000; ++t) {
    actions.push_back(static_cast<int>(rng.uniform_index(4)));
    s.act(actions.back());
    ground.push_back(ground_endogenous(s));
  }
  LatentMDP mdp(16, 4);
  for (std::size_t t = 0; t < actions.size(); ++t) mdp.update_counts(ground[t], actions[t], ground[t + 1]);
  for (int c = 0; c < 16; ++c) {
    for (int a = 0; a < 4; ++a) {
      if (const auto p = mdp.estimate_transition(c, a)) {
        EXPECT_EQ(*std::max_element(p->begin(), p->end()), 1.0);
      }
    }
  }
  EXPECT_EQ(dynamics_diff_error(ground, ground, actions, mdp, 16).percent, 0.0);
}
