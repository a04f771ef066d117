#pragma once

// Count-based tabular MDP over learned codes with low-count goal selection and
// expected-hitting-time planning.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "acstate/error.hpp"
#include "acstate/rng.hpp"

namespace acstate {

inline constexpr int kGoalDeadlineSlack = 2;
inline constexpr double kPlanTolerance = 1e-9;

struct GoalChoice {
  int goal = 0;
  int depth = 0;
  int deadline = 1;  // steps from now
  bool cold_start = false;
};

struct PlanResult {
  int action = 0;
  double cost = 0.0;  // expected steps to goal from the current code
};

class LatentMDP {
 public:
  struct Edge {
    int next;
    std::uint64_t count;
  };

  LatentMDP() = default;
  LatentMDP(int n_codes, int n_actions) : n_codes_(n_codes), n_actions_(n_actions) {
    if (n_codes < 1 || n_actions < 1) throw ConfigError("latent MDP needs at least one code and one action");
    rows_.resize(static_cast<std::size_t>(n_codes) * static_cast<std::size_t>(n_actions));
    visits_.assign(static_cast<std::size_t>(n_codes), 0);
  }

  int n_codes() const { return n_codes_; }
  int n_actions() const { return n_actions_; }
  std::uint64_t visit_count(int s) const { return visits_.at(static_cast<std::size_t>(s)); }
  const std::vector<std::uint64_t>& visit_counts() const { return visits_; }
  std::uint64_t total_updates() const { return updates_; }

  const std::vector<Edge>& row(int s, int a) const { return rows_[index(s, a)]; }

  std::uint64_t count(int s, int a, int s_next) const {
    for (const auto& e : row(s, a)) {
      if (e.next == s_next) return e.count;
    }
    return 0;
  }

  void update_counts(int s, int a, int s_next) {
    check_code(s);
    check_code(s_next);
    if (a < 0 || a >= n_actions_) throw ConfigError("latent MDP: action out of range");
    if (visits_[static_cast<std::size_t>(s)] == 0) visits_[static_cast<std::size_t>(s)] = 1;
    ++visits_[static_cast<std::size_t>(s_next)];
    ++updates_;
    auto& r = rows_[index(s, a)];
    for (auto& e : r) {
      if (e.next == s_next) {
        ++e.count;
        return;
      }
    }
    r.push_back({s_next, 1});
    std::sort(r.begin(), r.end(), [](const Edge& x, const Edge& y) { return x.next < y.next; });
  }

  /// Normalized counts; nullopt when (s, a) was never observed.
  std::optional<std::vector<double>> estimate_transition(int s, int a) const {
    const auto& r = row(s, a);
    if (r.empty()) return std::nullopt;
    std::uint64_t total = 0;
    for (const auto& e : r) total += e.count;
    std::vector<double> p(static_cast<std::size_t>(n_codes_), 0.0);
    for (const auto& e : r) p[static_cast<std::size_t>(e.next)] = static_cast<double>(e.count) / static_cast<double>(total);
    return p;
  }

  /// BFS depth of every code from start over positive-count edges (-1 if unreached).
  std::vector<int> bfs_depths(int start) const {
    check_code(start);
    std::vector<int> depth(static_cast<std::size_t>(n_codes_), -1);
    std::deque<int> queue{start};
    depth[static_cast<std::size_t>(start)] = 0;
    while (!queue.empty()) {
      const int s = queue.front();
      queue.pop_front();
      for (int a = 0; a < n_actions_; ++a) {
        for (const auto& e : row(s, a)) {
          if (depth[static_cast<std::size_t>(e.next)] < 0) {
            depth[static_cast<std::size_t>(e.next)] = depth[static_cast<std::size_t>(s)] + 1;
            queue.push_back(e.next);
          }
        }
      }
    }
    return depth;
  }

  /// BFS depths over one sampled successor per observed (code, action), so an
  /// edge is followed with its estimated probability (-1 if unreached).
  std::vector<int> sampled_bfs_depths(int start, Rng& rng) const {
    check_code(start);
    std::vector<int> depth(static_cast<std::size_t>(n_codes_), -1);
    std::deque<int> queue{start};
    depth[static_cast<std::size_t>(start)] = 0;
    while (!queue.empty()) {
      const int s = queue.front();
      queue.pop_front();
      for (int a = 0; a < n_actions_; ++a) {
        const auto& r = row(s, a);
        if (r.empty()) continue;
        std::uint64_t total = 0;
        for (const auto& e : r) total += e.count;
        auto u = static_cast<std::uint64_t>(rng.uniform_index(static_cast<std::size_t>(total)));
        int next = r.back().next;
        for (const auto& e : r) {
          if (u < e.count) {
            next = e.next;
            break;
          }
          u -= e.count;
        }
        if (depth[static_cast<std::size_t>(next)] < 0) {
          depth[static_cast<std::size_t>(next)] = depth[static_cast<std::size_t>(s)] + 1;
          queue.push_back(next);
        }
      }
    }
    return depth;
  }

  /// Goal sampled among codes other than current reached by a sampled BFS,
  /// with probability proportional to 1 / visit count.
  GoalChoice findgoal(int current, Rng& rng) const {
    const auto depth = sampled_bfs_depths(current, rng);
    std::vector<int> cand;
    std::vector<double> weight;
    for (int s = 0; s < n_codes_; ++s) {
      const auto v = visits_[static_cast<std::size_t>(s)];
      if (s == current || depth[static_cast<std::size_t>(s)] < 0 || v == 0) continue;
      cand.push_back(s);
      weight.push_back(1.0 / static_cast<double>(v));
    }
    if (cand.empty()) return {current, 0, 1, true};
    const double total = std::accumulate(weight.begin(), weight.end(), 0.0);
    double u = rng.uniform() * total;
    std::size_t pick = cand.size() - 1;
    for (std::size_t i = 0; i < cand.size(); ++i) {
      if (u < weight[i]) {
        pick = i;
        break;
      }
      u -= weight[i];
    }
    const int g = cand[pick];
    const int d = depth[static_cast<std::size_t>(g)];
    return {g, d, d + kGoalDeadlineSlack, false};
  }

  /// Expected-steps cost to goal for every code (infinity where the goal
  /// cannot be reached with probability one).
  std::vector<double> cost_to_go(int goal) const {
    check_code(goal);
    const auto n = static_cast<std::size_t>(n_codes_);
    const double inf = std::numeric_limits<double>::infinity();
    // Shrink to the set of codes with a proper policy: an action is allowed
    // only when its whole support stays inside the set.
    std::vector<char> proper(n, 1);
    std::vector<char> allowed(rows_.size(), 0);
    for (bool changed = true; changed;) {
      changed = false;
      for (int s = 0; s < n_codes_; ++s) {
        for (int a = 0; a < n_actions_; ++a) {
          const auto& r = row(s, a);
          allowed[index(s, a)] = !r.empty() && std::all_of(r.begin(), r.end(), [&](const Edge& e) {
            return proper[static_cast<std::size_t>(e.next)] != 0;
          });
        }
      }
      std::vector<char> reach(n, 0);
      reach[static_cast<std::size_t>(goal)] = 1;
      for (bool grew = true; grew;) {
        grew = false;
        for (int s = 0; s < n_codes_; ++s) {
          if (reach[static_cast<std::size_t>(s)] || !proper[static_cast<std::size_t>(s)]) continue;
          for (int a = 0; a < n_actions_ && !reach[static_cast<std::size_t>(s)]; ++a) {
            if (!allowed[index(s, a)]) continue;
            for (const auto& e : row(s, a)) {
              if (reach[static_cast<std::size_t>(e.next)]) {
                reach[static_cast<std::size_t>(s)] = 1;
                grew = true;
                break;
              }
            }
          }
        }
      }
      for (std::size_t s = 0; s < n; ++s) {
        if (proper[s] && !reach[s]) {
          proper[s] = 0;
          changed = true;
        }
      }
    }
    std::vector<double> v(n, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      if (!proper[s]) v[s] = inf;
    }
    for (int it = 0; it < 1000000; ++it) {
      double delta = 0.0;
      for (int s = 0; s < n_codes_; ++s) {
        if (s == goal || !proper[static_cast<std::size_t>(s)]) continue;
        const double q = best_q(s, v, allowed).second;
        delta = std::max(delta, std::abs(q - v[static_cast<std::size_t>(s)]));
        v[static_cast<std::size_t>(s)] = q;
      }
      if (delta < kPlanTolerance) break;
    }
    return v;
  }

  /// First action of the minimum expected-steps policy from current to goal.
  PlanResult plan(int current, int goal) const {
    check_code(current);
    if (current == goal) return {0, 0.0};
    return plan(current, goal, cost_to_go(goal));
  }

  /// Greedy action from current under a precomputed cost_to_go(goal), so one
  /// solve serves a whole closed-loop episode toward the goal.
  PlanResult plan(int current, int goal, const std::vector<double>& v) const {
    check_code(current);
    check_code(goal);
    if (current == goal) return {0, 0.0};
    if (v.size() != static_cast<std::size_t>(n_codes_)) throw ConfigError("cost vector size mismatch");
    if (!std::isfinite(v[static_cast<std::size_t>(current)])) {
      throw PlanningError("goal code " + std::to_string(goal) + " unreachable from " + std::to_string(current));
    }
    std::vector<char> allowed(rows_.size(), 0);
    for (int a = 0; a < n_actions_; ++a) {
      const auto& r = row(current, a);
      allowed[index(current, a)] = !r.empty() && std::all_of(r.begin(), r.end(), [&](const Edge& e) {
        return std::isfinite(v[static_cast<std::size_t>(e.next)]);
      });
    }
    const auto [a, q] = best_q(current, v, allowed);
    if (!std::isfinite(q)) {
      throw PlanningError("no action from " + std::to_string(current) + " keeps goal " + std::to_string(goal) + " reachable");
    }
    return {a, q};
  }

  /// One line per (s, a, s', count).
  void write_edges(std::ostream& os) const {
    os << "# source action target count\n";
    for (int s = 0; s < n_codes_; ++s) {
      for (int a = 0; a < n_actions_; ++a) {
        for (const auto& e : row(s, a)) os << s << ' ' << a << ' ' << e.next << ' ' << e.count << '\n';
      }
    }
  }

 private:
  std::size_t index(int s, int a) const {
    return static_cast<std::size_t>(s) * static_cast<std::size_t>(n_actions_) + static_cast<std::size_t>(a);
  }

  void check_code(int s) const {
    if (s < 0 || s >= n_codes_) throw ConfigError("latent MDP: code " + std::to_string(s) + " out of range");
  }

  std::pair<int, double> best_q(int s, const std::vector<double>& v, const std::vector<char>& allowed) const {
    int best_a = -1;
    double best = std::numeric_limits<double>::infinity();
    for (int a = 0; a < n_actions_; ++a) {
      if (!allowed[index(s, a)]) continue;
      const auto& r = row(s, a);
      std::uint64_t total = 0;
      for (const auto& e : r) total += e.count;
      double q = 1.0;
      for (const auto& e : r) q += static_cast<double>(e.count) / static_cast<double>(total) * v[static_cast<std::size_t>(e.next)];
      if (q < best - 1e-12) {
        best = q;
        best_a = a;
      }
    }
    return {best_a < 0 ? 0 : best_a, best};
  }

  int n_codes_ = 0;
  int n_actions_ = 0;
  std::vector<std::vector<Edge>> rows_;
  std::vector<std::uint64_t> visits_;
  std::uint64_t updates_ = 0;
};

}  // namespace acstate
