#pragma once

// Factorized gridworld environments: one controlled agent whose position is a
// deterministic function of (position, action), plus distractor agents that
// random-walk in their own mazes independently of the actions.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "acstate/error.hpp"
#include "acstate/rng.hpp"

namespace acstate {

/// Movement actions shared by every maze. Reset actions follow these ids.
enum class Move : int { up = 0, down = 1, left = 2, right = 3 };
inline constexpr int kMoveCount = 4;

/// An unordered pair of adjacent cells with a wall between them.
struct CellEdge {
  int a = 0;
  int b = 0;
};

struct MazeSpec {
  int grid_width = 6;
  int grid_height = 6;
  std::vector<CellEdge> walls;
  /// Cells that are not part of the maze at all.
  std::vector<int> blocked_cells;
  int n_exo_mazes = 8;
  int reset_actions = 0;
  std::uint64_t seed = 0;
};

/// Multi-hot observation stored by its hot indices. Every hot entry has value 1.
struct Observation {
  std::size_t dim = 0;
  std::vector<std::uint32_t> hot;

  std::vector<double> dense() const {
    std::vector<double> out(dim, 0.0);
    for (auto i : hot) out[i] = 1.0;
    return out;
  }

  friend bool operator==(const Observation&, const Observation&) = default;
};

struct EnvState {
  int endo = 0;
  std::vector<int> exo;
  Rng exo_rng;

  friend bool operator==(const EnvState&, const EnvState&) = default;
};

/// Markov chain driving one distractor agent. An empty probability row means
/// "uniform over successors".
struct ExoChain {
  std::vector<std::vector<int>> successors;
  std::vector<std::vector<double>> probs;
  /// States the agent may start in (uniformly).
  std::vector<int> support;

  int size() const { return static_cast<int>(successors.size()); }

  int sample_next(int e, Rng& rng) const {
    const auto& succ = successors[static_cast<std::size_t>(e)];
    if (probs.empty() || probs[static_cast<std::size_t>(e)].empty()) {
      return succ[rng.uniform_index(succ.size())];
    }
    const auto& p = probs[static_cast<std::size_t>(e)];
    double u = rng.uniform();
    for (std::size_t i = 0; i + 1 < succ.size(); ++i) {
      if (u < p[i]) return succ[i];
      u -= p[i];
    }
    return succ.back();
  }
};

struct GridShape {
  int width = 0;
  int height = 0;
};

class Environment {
 public:
  /// endo_next is row-major |S| x |A|. Every exo agent gets its own chain copy.
  Environment(int n_endo, int n_actions, std::vector<int> endo_next, int start,
              std::vector<ExoChain> exo_agents, std::optional<GridShape> grid = std::nullopt,
              std::uint64_t seed = 0)
      : n_endo_(n_endo),
        n_actions_(n_actions),
        endo_next_(std::move(endo_next)),
        start_(start),
        exo_(std::move(exo_agents)),
        grid_(grid),
        seed_(seed) {
    if (n_endo_ < 1 || n_actions_ < 1) throw ConfigError("environment needs at least one state and action");
    if (endo_next_.size() != static_cast<std::size_t>(n_endo_) * static_cast<std::size_t>(n_actions_)) {
      throw ConfigError("endogenous transition table has wrong size");
    }
    for (int s : endo_next_) {
      if (s < 0 || s >= n_endo_) throw ConfigError("endogenous transition target out of range");
    }
    if (start_ < 0 || start_ >= n_endo_) throw ConfigError("start state out of range");
    std::size_t offset = static_cast<std::size_t>(n_endo_);
    for (const auto& chain : exo_) {
      if (chain.support.empty()) throw ConfigError("exogenous chain has empty support");
      block_offset_.push_back(offset);
      offset += static_cast<std::size_t>(chain.size());
    }
    obs_dim_ = offset;
  }

  int n_endo() const { return n_endo_; }
  int n_actions() const { return n_actions_; }
  int n_exo_agents() const { return static_cast<int>(exo_.size()); }
  std::size_t obs_dim() const { return obs_dim_; }
  int start() const { return start_; }
  std::uint64_t seed() const { return seed_; }
  const std::optional<GridShape>& grid() const { return grid_; }
  const std::vector<int>& endo_table() const { return endo_next_; }

  int endo_next(int s, int a) const {
    return endo_next_[static_cast<std::size_t>(s) * static_cast<std::size_t>(n_actions_) +
                      static_cast<std::size_t>(a)];
  }

  /// Controlled agent at the start cell; distractors uniform over their support.
  EnvState initial_state() const {
    EnvState st;
    st.endo = start_;
    st.exo_rng = Rng(seed_, 0xe40);
    for (const auto& chain : exo_) {
      st.exo.push_back(chain.support[st.exo_rng.uniform_index(chain.support.size())]);
    }
    return st;
  }

  std::pair<EnvState, Observation> step(const EnvState& state, int action) const {
    if (action < 0 || action >= n_actions_) throw ConfigError("action out of range");
    EnvState next = state;
    next.endo = endo_next(state.endo, action);
    for (std::size_t i = 0; i < exo_.size(); ++i) {
      next.exo[i] = exo_[i].sample_next(state.exo[i], next.exo_rng);
    }
    Observation obs = render(next);
    return {std::move(next), std::move(obs)};
  }

  Observation render(const EnvState& state) const {
    Observation obs;
    obs.dim = obs_dim_;
    obs.hot.reserve(1 + exo_.size());
    obs.hot.push_back(static_cast<std::uint32_t>(state.endo));
    for (std::size_t i = 0; i < exo_.size(); ++i) {
      obs.hot.push_back(static_cast<std::uint32_t>(block_offset_[i] + static_cast<std::size_t>(state.exo[i])));
    }
    return obs;
  }

  /// Endogenous states reachable from start, sorted.
  std::vector<int> reachable_endo() const { return bfs_from(start_).second; }

  /// Longest shortest path among endogenous states reachable from start.
  int endo_diameter() const {
    const auto reach = reachable_endo();
    int diameter = 0;
    for (int s : reach) {
      const auto [dist, seen] = bfs_from(s);
      for (int t : reach) {
        if (dist[static_cast<std::size_t>(t)] < 0) return -1;
        diameter = std::max(diameter, dist[static_cast<std::size_t>(t)]);
      }
    }
    return diameter;
  }

 private:
  std::pair<std::vector<int>, std::vector<int>> bfs_from(int src) const {
    std::vector<int> dist(static_cast<std::size_t>(n_endo_), -1);
    std::deque<int> queue{src};
    dist[static_cast<std::size_t>(src)] = 0;
    while (!queue.empty()) {
      const int s = queue.front();
      queue.pop_front();
      for (int a = 0; a < n_actions_; ++a) {
        const int t = endo_next(s, a);
        if (dist[static_cast<std::size_t>(t)] < 0) {
          dist[static_cast<std::size_t>(t)] = dist[static_cast<std::size_t>(s)] + 1;
          queue.push_back(t);
        }
      }
    }
    std::vector<int> seen;
    for (int s = 0; s < n_endo_; ++s) {
      if (dist[static_cast<std::size_t>(s)] >= 0) seen.push_back(s);
    }
    return {std::move(dist), std::move(seen)};
  }

  int n_endo_;
  int n_actions_;
  std::vector<int> endo_next_;
  int start_;
  std::vector<ExoChain> exo_;
  std::vector<std::size_t> block_offset_;
  std::size_t obs_dim_ = 0;
  std::optional<GridShape> grid_;
  std::uint64_t seed_;
};

/// Evaluation-only access to the controlled agent's true cell.
inline int ground_endogenous(const EnvState& state) { return state.endo; }

/// A running episode: the learner sees observations only.
class Session {
 public:
  explicit Session(const Environment& env) : env_(&env), state_(env.initial_state()) {}

  Observation observe() const { return env_->render(state_); }

  Observation act(int action) {
    auto [next, obs] = env_->step(state_, action);
    state_ = std::move(next);
    return obs;
  }

  const Environment& environment() const { return *env_; }
  int n_actions() const { return env_->n_actions(); }

  friend int ground_endogenous(const Session& s) { return s.state_.endo; }
  friend std::vector<int> ground_exogenous(const Session& s) { return s.state_.exo; }

 private:
  const Environment* env_;
  EnvState state_;
};

namespace maze {

inline int cell(int x, int y, int width) { return y * width + x; }

struct Layout {
  int width;
  int height;
  std::set<std::pair<int, int>> walls;  // ordered (min, max) cell pairs
  std::vector<bool> blocked;

  bool open(int from, int to) const {
    if (blocked[static_cast<std::size_t>(to)]) return false;
    return walls.count({std::min(from, to), std::max(from, to)}) == 0;
  }

  /// Neighbor after a move, or -1 if it leaves the grid or hits a wall.
  int neighbor(int c, Move m) const {
    int x = c % width;
    int y = c / width;
    switch (m) {
      case Move::up: --y; break;
      case Move::down: ++y; break;
      case Move::left: --x; break;
      case Move::right: ++x; break;
    }
    if (x < 0 || y < 0 || x >= width || y >= height) return -1;
    const int n = cell(x, y, width);
    return open(c, n) ? n : -1;
  }
};

inline Layout make_layout(const MazeSpec& spec) {
  if (spec.grid_width < 1 || spec.grid_height < 1) throw ConfigError("maze dimensions must be positive");
  if (spec.n_exo_mazes < 0) throw ConfigError("n_exo_mazes must be >= 0");
  if (spec.reset_actions < 0) throw ConfigError("reset_actions must be >= 0");
  const int n = spec.grid_width * spec.grid_height;
  Layout layout{spec.grid_width, spec.grid_height, {}, std::vector<bool>(static_cast<std::size_t>(n), false)};
  for (int c : spec.blocked_cells) {
    if (c < 0 || c >= n) throw ConfigError("blocked cell out of range: " + std::to_string(c));
    layout.blocked[static_cast<std::size_t>(c)] = true;
  }
  for (const auto& w : spec.walls) {
    if (w.a < 0 || w.a >= n || w.b < 0 || w.b >= n) throw ConfigError("wall endpoint out of range");
    layout.walls.insert({std::min(w.a, w.b), std::max(w.a, w.b)});
  }
  return layout;
}

inline int first_free_cell(const Layout& layout) {
  for (std::size_t c = 0; c < layout.blocked.size(); ++c) {
    if (!layout.blocked[c]) return static_cast<int>(c);
  }
  throw ConfigError("maze has no free cell");
}

/// Uniform random walk over legal moves; an agent with no legal move stays.
inline ExoChain random_walk_chain(const Layout& layout) {
  ExoChain chain;
  const int n = layout.width * layout.height;
  chain.successors.resize(static_cast<std::size_t>(n));
  for (int c = 0; c < n; ++c) {
    auto& succ = chain.successors[static_cast<std::size_t>(c)];
    if (layout.blocked[static_cast<std::size_t>(c)]) {
      succ.push_back(c);
      continue;
    }
    chain.support.push_back(c);
    for (int m = 0; m < kMoveCount; ++m) {
      const int nb = layout.neighbor(c, static_cast<Move>(m));
      if (nb >= 0) succ.push_back(nb);
    }
    if (succ.empty()) succ.push_back(c);
  }
  return chain;
}

}  // namespace maze

/// Builds a multi-maze environment. Blocked moves are self-loops; every reset
/// action jumps to the top-left-most free cell. Distractor mazes share the
/// controlled maze's layout.
inline Environment build_multimaze(const MazeSpec& spec) {
  const auto layout = maze::make_layout(spec);
  const int n = spec.grid_width * spec.grid_height;
  const int n_actions = kMoveCount + spec.reset_actions;
  const int start = maze::first_free_cell(layout);

  std::vector<int> next(static_cast<std::size_t>(n) * static_cast<std::size_t>(n_actions));
  for (int c = 0; c < n; ++c) {
    for (int a = 0; a < n_actions; ++a) {
      int target = c;
      if (a >= kMoveCount) {
        target = start;
      } else if (!layout.blocked[static_cast<std::size_t>(c)]) {
        const int nb = layout.neighbor(c, static_cast<Move>(a));
        if (nb >= 0) target = nb;
      }
      next[static_cast<std::size_t>(c) * static_cast<std::size_t>(n_actions) + static_cast<std::size_t>(a)] = target;
    }
  }

  std::vector<ExoChain> exo(static_cast<std::size_t>(spec.n_exo_mazes), maze::random_walk_chain(layout));
  Environment env(n, n_actions, std::move(next), start, std::move(exo),
                  GridShape{spec.grid_width, spec.grid_height}, spec.seed);

  const auto reach = env.reachable_endo();
  const auto free_cells = static_cast<std::size_t>(std::count(layout.blocked.begin(), layout.blocked.end(), false));
  if (reach.size() != free_cells) {
    throw ConfigError("controllable maze is disconnected: " + std::to_string(reach.size()) + " of " +
                      std::to_string(free_cells) + " free cells reachable from start");
  }
  return env;
}

/// Dense row-stochastic matrix as an exo chain; support is every state.
inline ExoChain chain_from_matrix(const std::vector<double>& matrix, int n) {
  ExoChain chain;
  chain.successors.resize(static_cast<std::size_t>(n));
  chain.probs.resize(static_cast<std::size_t>(n));
  for (int e = 0; e < n; ++e) {
    chain.support.push_back(e);
    for (int f = 0; f < n; ++f) {
      const double p = matrix[static_cast<std::size_t>(e * n + f)];
      if (p > 0.0) {
        chain.successors[static_cast<std::size_t>(e)].push_back(f);
        chain.probs[static_cast<std::size_t>(e)].push_back(p);
      }
    }
    if (chain.successors[static_cast<std::size_t>(e)].empty()) throw ConfigError("exo chain row has no mass");
  }
  return chain;
}

/// Environment over an explicit endogenous table with copies of one exo chain
/// as distractors.
inline Environment build_tabular_environment(int n_endo, int n_actions, std::vector<int> endo_next,
                                             const ExoChain& exo, int n_exo_agents, std::uint64_t seed,
                                             int start = 0) {
  std::vector<ExoChain> agents(static_cast<std::size_t>(std::max(n_exo_agents, 0)), exo);
  return Environment(n_endo, n_actions, std::move(endo_next), start, std::move(agents), std::nullopt, seed);
}

namespace layouts {

/// 9x9 grid split into four rooms by a cross of blocked cells with one
/// doorway per wall segment: 68 free cells.
inline MazeSpec four_rooms(int n_exo_mazes, int reset_actions, std::uint64_t seed) {
  MazeSpec spec;
  spec.grid_width = 9;
  spec.grid_height = 9;
  spec.n_exo_mazes = n_exo_mazes;
  spec.reset_actions = reset_actions;
  spec.seed = seed;
  const std::set<std::pair<int, int>> doors{{4, 1}, {4, 7}, {1, 4}, {7, 4}};
  for (int y = 0; y < 9; ++y) {
    for (int x = 0; x < 9; ++x) {
      if ((x == 4 || y == 4) && doors.count({x, y}) == 0) spec.blocked_cells.push_back(maze::cell(x, y, 9));
    }
  }
  return spec;
}

/// Open 6x6 maze (the per-maze size of the nine-maze world).
inline MazeSpec open_grid(int width, int height, int n_exo_mazes, std::uint64_t seed) {
  MazeSpec spec;
  spec.grid_width = width;
  spec.grid_height = height;
  spec.n_exo_mazes = n_exo_mazes;
  spec.seed = seed;
  return spec;
}

}  // namespace layouts

}  // namespace acstate
