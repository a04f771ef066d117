#pragma once

// Ground-truth scoring of learned codes: co-occurrence, purity, parsimony,
// coverage and the dynamics difference error.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "acstate/error.hpp"
#include "acstate/exbmdp_env.hpp"
#include "acstate/latent_planner.hpp"

namespace acstate {

/// counts[code][ground], dense.
struct CooccurrenceTable {
  int n_codes = 0;
  int n_ground = 0;
  std::vector<std::uint64_t> counts;

  std::uint64_t at(int code, int ground) const {
    return counts[static_cast<std::size_t>(code) * static_cast<std::size_t>(n_ground) + static_cast<std::size_t>(ground)];
  }
  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
};

inline CooccurrenceTable cooccurrence(const std::vector<int>& codes, const std::vector<int>& ground, int n_codes,
                                      int n_ground) {
  if (codes.size() != ground.size()) throw ConfigError("codes and ground labels differ in length");
  CooccurrenceTable t{n_codes, n_ground,
                      std::vector<std::uint64_t>(static_cast<std::size_t>(n_codes) * static_cast<std::size_t>(n_ground), 0)};
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] < 0 || codes[i] >= n_codes || ground[i] < 0 || ground[i] >= n_ground) {
      throw ConfigError("co-occurrence index out of range");
    }
    ++t.counts[static_cast<std::size_t>(codes[i]) * static_cast<std::size_t>(n_ground) + static_cast<std::size_t>(ground[i])];
  }
  return t;
}

/// Fraction of observations whose code's majority ground state matches.
inline double purity(const CooccurrenceTable& t) {
  const auto total = t.total();
  if (total == 0) throw ConfigError("purity of an empty table");
  std::uint64_t hit = 0;
  for (int s = 0; s < t.n_codes; ++s) {
    std::uint64_t best = 0;
    for (int g = 0; g < t.n_ground; ++g) best = std::max(best, t.at(s, g));
    hit += best;
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

/// Distinct ground states observed / distinct codes used.
inline double state_parsimony(const std::vector<int>& codes, const std::vector<int>& ground) {
  const std::set<int> c(codes.begin(), codes.end());
  const std::set<int> g(ground.begin(), ground.end());
  if (c.empty()) throw ConfigError("parsimony of an empty buffer");
  return static_cast<double>(g.size()) / static_cast<double>(c.size());
}

struct Coverage {
  double fraction = 0.0;
  int visited = 0;
  int total = 0;
  /// Visit count per ground id (grid cell for mazes).
  std::vector<std::uint64_t> visits;
};

inline Coverage coverage(const std::vector<int>& ground, int total_ground, int n_ground_ids) {
  if (total_ground < 1) throw ConfigError("coverage needs a positive reachable count");
  Coverage c;
  c.total = total_ground;
  c.visits.assign(static_cast<std::size_t>(n_ground_ids), 0);
  for (int g : ground) ++c.visits.at(static_cast<std::size_t>(g));
  for (auto v : c.visits) c.visited += v > 0 ? 1 : 0;
  c.fraction = static_cast<double>(c.visited) / static_cast<double>(total_ground);
  return c;
}

struct DynamicsError {
  double percent = 0.0;
  int pairs = 0;           // observed (g, a) pairs in the mean
  int undefined_rows = 0;  // pairs whose latent row was never observed (scored as full error)
  /// Mean share of each ground state's observations falling in its majority code.
  double majority_confidence = 0.0;
};

/// Mean over observed (g, a) of half the L1 distance between the empirical
/// ground transition and the ground-translated latent transition, in percent.
inline DynamicsError dynamics_diff_error(const std::vector<int>& codes, const std::vector<int>& ground,
                                         const std::vector<int>& actions, const LatentMDP& mdp, int n_ground) {
  if (codes.size() != ground.size() || actions.size() + 1 != codes.size()) {
    throw ConfigError("dynamics error: inconsistent buffer lengths");
  }
  const int M = mdp.n_codes();
  const int A = mdp.n_actions();
  const auto cooc = cooccurrence(codes, ground, M, n_ground);
  // majority code of every ground state, ties to the lowest code
  std::vector<int> major(static_cast<std::size_t>(n_ground), -1);
  double conf = 0.0;
  int seen = 0;
  for (int g = 0; g < n_ground; ++g) {
    std::uint64_t best = 0, total = 0;
    for (int s = 0; s < M; ++s) {
      const auto c = cooc.at(s, g);
      total += c;
      if (c > best) {
        best = c;
        major[static_cast<std::size_t>(g)] = s;
      }
    }
    if (total > 0) {
      conf += static_cast<double>(best) / static_cast<double>(total);
      ++seen;
    }
  }
  // decoding table P(g | s)
  std::vector<double> decode(static_cast<std::size_t>(M) * static_cast<std::size_t>(n_ground), 0.0);
  for (int s = 0; s < M; ++s) {
    std::uint64_t total = 0;
    for (int g = 0; g < n_ground; ++g) total += cooc.at(s, g);
    if (total == 0) continue;
    for (int g = 0; g < n_ground; ++g) {
      decode[static_cast<std::size_t>(s * n_ground + g)] = static_cast<double>(cooc.at(s, g)) / static_cast<double>(total);
    }
  }
  // empirical ground transitions
  std::map<std::pair<int, int>, std::map<int, std::uint64_t>> truth;
  for (std::size_t t = 0; t < actions.size(); ++t) ++truth[{ground[t], actions[t]}][ground[t + 1]];

  DynamicsError out;
  out.majority_confidence = seen > 0 ? conf / seen : 0.0;
  double sum = 0.0;
  for (const auto& [key, next] : truth) {
    const auto [g, a] = key;
    if (a < 0 || a >= A) throw ConfigError("dynamics error: action out of range");
    std::uint64_t total = 0;
    for (const auto& kv : next) total += kv.second;
    std::vector<double> emp(static_cast<std::size_t>(n_ground), 0.0);
    for (const auto& [g2, c] : next) emp[static_cast<std::size_t>(g2)] = static_cast<double>(c) / static_cast<double>(total);
    std::vector<double> pred(static_cast<std::size_t>(n_ground), 0.0);
    const auto row = mdp.estimate_transition(major[static_cast<std::size_t>(g)], a);
    ++out.pairs;
    if (!row) {
      ++out.undefined_rows;
      sum += 1.0;
      continue;
    }
    for (int s2 = 0; s2 < M; ++s2) {
      const double p = (*row)[static_cast<std::size_t>(s2)];
      if (p == 0.0) continue;
      for (int g2 = 0; g2 < n_ground; ++g2) {
        pred[static_cast<std::size_t>(g2)] += p * decode[static_cast<std::size_t>(s2 * n_ground + g2)];
      }
    }
    double l1 = 0.0;
    for (int g2 = 0; g2 < n_ground; ++g2) l1 += std::abs(pred[static_cast<std::size_t>(g2)] - emp[static_cast<std::size_t>(g2)]);
    sum += 0.5 * l1;
  }
  out.percent = out.pairs > 0 ? 100.0 * sum / out.pairs : 0.0;
  return out;
}

/// Plain whitespace matrix, one row per line.
inline void write_matrix(std::ostream& os, const std::vector<double>& values, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) os << (c ? " " : "") << values[static_cast<std::size_t>(r * cols + c)];
    os << '\n';
  }
}

/// ASCII graymap (P2), brightest cell = largest value.
inline void write_pgm(std::ostream& os, const std::vector<double>& values, int rows, int cols) {
  const double hi = values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
  os << "P2\n" << cols << ' ' << rows << "\n255\n";
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double v = values[static_cast<std::size_t>(r * cols + c)];
      const int level = hi > 0.0 ? static_cast<int>(std::lround(255.0 * v / hi)) : 0;
      os << (c ? " " : "") << level;
    }
    os << '\n';
  }
}

}  // namespace acstate
