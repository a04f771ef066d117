#pragma once

// Exact computations on small tabular Ex-BMDPs: k-step distributions,
// Bayes-optimal multi-step inverse models, reachability, the AC(s, h)
// certificate sets, and exhaustive search for the coarsest partition that is
// consistent with them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "acstate/error.hpp"
#include "acstate/rng.hpp"

namespace acstate {

using Distribution = std::vector<double>;

class TabularExBMDP {
 public:
  /// endo_next is row-major |S| x |A|. An empty exo_chain means a single
  /// constant exogenous state.
  TabularExBMDP(int n_endo, int n_actions, std::vector<int> endo_next, std::vector<double> exo_chain = {})
      : n_endo_(n_endo), n_actions_(n_actions), endo_next_(std::move(endo_next)), exo_chain_(std::move(exo_chain)) {
    if (n_endo_ < 1 || n_actions_ < 1) throw ConfigError("tabular mdp needs |S| >= 1 and |A| >= 1");
    if (endo_next_.size() != static_cast<std::size_t>(n_endo_ * n_actions_)) {
      throw ConfigError("endo_next must have |S|*|A| entries");
    }
    for (int t : endo_next_) {
      if (t < 0 || t >= n_endo_) throw ConfigError("endo_next target out of range");
    }
    if (exo_chain_.empty()) exo_chain_ = {1.0};
    const auto e = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(exo_chain_.size()))));
    if (e * e != exo_chain_.size()) throw ConfigError("exo chain must be square");
    n_exo_ = static_cast<int>(e);
    for (int i = 0; i < n_exo_; ++i) {
      double row = 0.0;
      for (int j = 0; j < n_exo_; ++j) {
        const double p = exo(i, j);
        if (p < 0.0) throw ConfigError("exo chain has a negative entry");
        row += p;
      }
      if (std::abs(row - 1.0) > 1e-12) throw ConfigError("exo chain row " + std::to_string(i) + " does not sum to 1");
    }
    diameter_ = compute_diameter();
  }

  int n_endo() const { return n_endo_; }
  int n_actions() const { return n_actions_; }
  int n_exo() const { return n_exo_; }
  int next(int s, int a) const { return endo_next_[static_cast<std::size_t>(s * n_actions_ + a)]; }
  double exo(int e, int f) const { return exo_chain_[static_cast<std::size_t>(e * n_exo_ + f)]; }
  const std::vector<int>& endo_table() const { return endo_next_; }
  const std::vector<double>& exo_table() const { return exo_chain_; }

  /// Longest shortest path over all ordered pairs; -1 when not strongly connected.
  int diameter() const { return diameter_; }

  /// Shortest path lengths from s (-1 for unreachable).
  std::vector<int> distances_from(int s) const {
    std::vector<int> dist(static_cast<std::size_t>(n_endo_), -1);
    std::deque<int> queue{s};
    dist[static_cast<std::size_t>(s)] = 0;
    while (!queue.empty()) {
      const int u = queue.front();
      queue.pop_front();
      for (int a = 0; a < n_actions_; ++a) {
        const int v = next(u, a);
        if (dist[static_cast<std::size_t>(v)] < 0) {
          dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + 1;
          queue.push_back(v);
        }
      }
    }
    return dist;
  }

 private:
  int compute_diameter() const {
    int d = 0;
    for (int s = 0; s < n_endo_; ++s) {
      for (int x : distances_from(s)) {
        if (x < 0) return -1;
        d = std::max(d, x);
      }
    }
    return d;
  }

  int n_endo_;
  int n_actions_;
  int n_exo_ = 1;
  std::vector<int> endo_next_;
  std::vector<double> exo_chain_;
  int diameter_ = -1;
};

/// Endogenous policy pi(a | s), row-major |S| x |A|.
struct PolicyTable {
  int n_endo = 0;
  int n_actions = 0;
  std::vector<double> probs;

  double operator()(int s, int a) const { return probs[static_cast<std::size_t>(s * n_actions + a)]; }

  static PolicyTable uniform(int n_endo, int n_actions) {
    return {n_endo, n_actions,
            std::vector<double>(static_cast<std::size_t>(n_endo * n_actions), 1.0 / n_actions)};
  }

  double min_prob() const { return *std::min_element(probs.begin(), probs.end()); }

  void validate() const {
    if (probs.size() != static_cast<std::size_t>(n_endo * n_actions)) throw ConfigError("policy table has wrong size");
    for (int s = 0; s < n_endo; ++s) {
      double row = 0.0;
      for (int a = 0; a < n_actions; ++a) row += (*this)(s, a);
      if (std::abs(row - 1.0) > 1e-12) throw ConfigError("policy row does not sum to 1");
    }
  }
};

/// Policy over product states (s, e), row-major (s * E + e) x |A|. Only used to
/// build exo-dependent negative controls.
struct ProductPolicy {
  int n_endo = 0;
  int n_exo = 0;
  int n_actions = 0;
  std::vector<double> probs;

  double operator()(int s, int e, int a) const {
    return probs[static_cast<std::size_t>((s * n_exo + e) * n_actions + a)];
  }

  static ProductPolicy from_endogenous(const PolicyTable& p, int n_exo) {
    ProductPolicy out{p.n_endo, n_exo, p.n_actions, {}};
    for (int s = 0; s < p.n_endo; ++s) {
      for (int e = 0; e < n_exo; ++e) {
        for (int a = 0; a < p.n_actions; ++a) out.probs.push_back(p(s, a));
      }
    }
    return out;
  }
};

struct Partition {
  std::vector<int> block_of;
  int n_blocks = 0;

  /// Relabels blocks in order of first appearance.
  static Partition canonical(const std::vector<int>& labels) {
    Partition p;
    std::map<int, int> remap;
    for (int l : labels) {
      auto [it, inserted] = remap.try_emplace(l, static_cast<int>(remap.size()));
      p.block_of.push_back(it->second);
    }
    p.n_blocks = static_cast<int>(remap.size());
    return p;
  }

  static Partition identity(int n) {
    Partition p;
    for (int i = 0; i < n; ++i) p.block_of.push_back(i);
    p.n_blocks = n;
    return p;
  }

  int block(int s) const { return block_of[static_cast<std::size_t>(s)]; }

  std::vector<std::vector<int>> blocks() const {
    std::vector<std::vector<int>> out(static_cast<std::size_t>(n_blocks));
    for (std::size_t s = 0; s < block_of.size(); ++s) out[static_cast<std::size_t>(block_of[s])].push_back(static_cast<int>(s));
    return out;
  }

  friend bool operator==(const Partition&, const Partition&) = default;
};

inline std::string to_string(const Partition& p) {
  std::ostringstream os;
  const auto blocks = p.blocks();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    os << (b ? " " : "") << "{";
    for (std::size_t i = 0; i < blocks[b].size(); ++i) os << (i ? "," : "") << blocks[b][i];
    os << "}";
  }
  return os.str();
}

/// Exact state distribution k steps after s under the policy.
inline Distribution k_step_dist(const TabularExBMDP& mdp, const PolicyTable& policy, int s, int k) {
  Distribution dist(static_cast<std::size_t>(mdp.n_endo()), 0.0);
  dist[static_cast<std::size_t>(s)] = 1.0;
  for (int step = 0; step < k; ++step) {
    Distribution next(dist.size(), 0.0);
    for (int u = 0; u < mdp.n_endo(); ++u) {
      const double mass = dist[static_cast<std::size_t>(u)];
      if (mass == 0.0) continue;
      for (int a = 0; a < mdp.n_actions(); ++a) next[static_cast<std::size_t>(mdp.next(u, a))] += mass * policy(u, a);
    }
    dist = std::move(next);
  }
  return dist;
}

/// Posterior over the first action given that s_next is observed k steps after
/// s. nullopt when P(s_next | s, k) = 0 and the conditional is undefined.
inline std::optional<Distribution> exact_inverse(const TabularExBMDP& mdp, const PolicyTable& policy, int s,
                                                 int s_next, int k) {
  if (k < 1) throw ConfigError("exact_inverse needs k >= 1");
  Distribution post(static_cast<std::size_t>(mdp.n_actions()), 0.0);
  double total = 0.0;
  for (int a = 0; a < mdp.n_actions(); ++a) {
    const double prior = policy(s, a);
    if (prior == 0.0) continue;
    const double reach = k_step_dist(mdp, policy, mdp.next(s, a), k - 1)[static_cast<std::size_t>(s_next)];
    post[static_cast<std::size_t>(a)] = prior * reach;
    total += prior * reach;
  }
  if (total <= 0.0) return std::nullopt;
  for (auto& p : post) p /= total;
  return post;
}

/// States reachable from s by some action sequence of length exactly h
/// (h = 0 gives {s}).
inline std::set<int> reachable_set(const TabularExBMDP& mdp, int s, int h) {
  std::set<int> frontier{s};
  for (int step = 0; step < h; ++step) {
    std::set<int> next;
    for (int u : frontier) {
      for (int a = 0; a < mdp.n_actions(); ++a) next.insert(mdp.next(u, a));
    }
    frontier = std::move(next);
  }
  return frontier;
}

struct AcEntry {
  int from = 0;
  int to = 0;
  int horizon = 0;
  Distribution inverse;
};

/// AC(s, h): inverse models P(a | s', s'', h') with h' in [1, h],
/// s' in R(s, h - h') and s'' in R(s', h'). Entries are unique per
/// (s', s'', h'). skip_horizon drops one h' (verifier self-test only).
inline std::vector<AcEntry> ac_set(const TabularExBMDP& mdp, const PolicyTable& policy, int s, int h,
                                   std::optional<int> skip_horizon = std::nullopt) {
  if (h < 1) throw ConfigError("ac_set needs h >= 1");
  std::set<std::tuple<int, int, int>> keys;
  for (int hp = 1; hp <= h; ++hp) {
    if (skip_horizon && *skip_horizon == hp) continue;
    for (int mid : reachable_set(mdp, s, h - hp)) {
      for (int end : reachable_set(mdp, mid, hp)) keys.insert({mid, end, hp});
    }
  }
  std::vector<AcEntry> out;
  out.reserve(keys.size());
  for (const auto& [mid, end, hp] : keys) {
    auto inv = exact_inverse(mdp, policy, mid, end, hp);
    if (!inv) throw Error("AC entry with undefined inverse; the policy does not reach every reachable state");
    out.push_back({mid, end, hp, std::move(*inv)});
  }
  return out;
}

/// Union of AC(s, h) over all s, deduplicated.
inline std::vector<AcEntry> ac_set_all(const TabularExBMDP& mdp, const PolicyTable& policy, int h,
                                       std::optional<int> skip_horizon = std::nullopt) {
  std::map<std::tuple<int, int, int>, AcEntry> merged;
  for (int s = 0; s < mdp.n_endo(); ++s) {
    for (auto& e : ac_set(mdp, policy, s, h, skip_horizon)) merged.try_emplace({e.from, e.to, e.horizon}, std::move(e));
  }
  std::vector<AcEntry> out;
  out.reserve(merged.size());
  for (auto& [key, e] : merged) out.push_back(std::move(e));
  return out;
}

inline constexpr double kConsistencyTolerance = 1e-9;

struct ConsistencyWitness {
  int block_from = 0;
  int block_to = 0;
  int horizon = 0;
  int action = 0;
  AcEntry first;
  AcEntry second;
};

struct ConsistencyResult {
  bool consistent = true;
  std::optional<ConsistencyWitness> witness;
  explicit operator bool() const { return consistent; }
};

/// True iff every (block, block, h') cell receives a single inverse value.
inline ConsistencyResult is_consistent(const Partition& partition, const std::vector<AcEntry>& entries) {
  std::map<std::tuple<int, int, int>, std::size_t> first_seen;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const std::tuple<int, int, int> key{partition.block(e.from), partition.block(e.to), e.horizon};
    auto [it, inserted] = first_seen.try_emplace(key, i);
    if (inserted) continue;
    const auto& ref = entries[it->second];
    for (std::size_t a = 0; a < e.inverse.size(); ++a) {
      if (std::abs(ref.inverse[a] - e.inverse[a]) > kConsistencyTolerance) {
        return {false, ConsistencyWitness{std::get<0>(key), std::get<1>(key), e.horizon, static_cast<int>(a), ref, e}};
      }
    }
  }
  return {true, std::nullopt};
}

namespace detail {

/// Flat-array consistency test used inside the enumeration loop.
class FastConsistency {
 public:
  FastConsistency(const std::vector<AcEntry>& entries, int n_states, int max_h)
      : entries_(entries), n_states_(n_states), max_h_(max_h) {}

  bool operator()(const std::vector<int>& block_of, int n_blocks) {
    const auto cells = static_cast<std::size_t>(n_blocks * n_blocks * max_h_);
    slot_.assign(cells, -1);
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& e = entries_[i];
      const auto key = static_cast<std::size_t>(
          (block_of[static_cast<std::size_t>(e.from)] * n_blocks + block_of[static_cast<std::size_t>(e.to)]) * max_h_ +
          (e.horizon - 1));
      if (slot_[key] < 0) {
        slot_[key] = static_cast<long>(i);
        continue;
      }
      const auto& ref = entries_[static_cast<std::size_t>(slot_[key])];
      for (std::size_t a = 0; a < e.inverse.size(); ++a) {
        if (std::abs(ref.inverse[a] - e.inverse[a]) > kConsistencyTolerance) return false;
      }
    }
    return true;
  }

 private:
  const std::vector<AcEntry>& entries_;
  int n_states_;
  int max_h_;
  std::vector<long> slot_;
};

/// Visits restricted-growth strings with exactly n_blocks blocks in
/// lexicographic order; stops when visit returns true.
template <class Visit>
bool for_each_rgs(std::vector<int>& rgs, std::size_t pos, int used, int n_blocks, Visit& visit) {
  const auto n = rgs.size();
  if (pos == n) return used == n_blocks ? visit(rgs) : false;
  const auto remaining = static_cast<int>(n - pos);
  if (used + remaining < n_blocks) return false;
  const int hi = std::min(used, n_blocks - 1);
  for (int b = 0; b <= hi; ++b) {
    rgs[pos] = b;
    if (for_each_rgs(rgs, pos + 1, std::max(used, b + 1), n_blocks, visit)) return true;
  }
  return false;
}

}  // namespace detail

inline constexpr int kMaxEnumerationStates = 10;

/// Coarsest partition consistent with the union of AC(s, K) over all s. Ties
/// between partitions with the same block count go to the lexicographically
/// smallest labeling.
inline Partition coarsest_consistent_partition(const TabularExBMDP& mdp, const PolicyTable& policy, int K,
                                               std::optional<int> skip_horizon = std::nullopt) {
  const int n = mdp.n_endo();
  if (n > kMaxEnumerationStates) {
    throw SizeError("partition enumeration limited to " + std::to_string(kMaxEnumerationStates) + " states, got " +
                    std::to_string(n));
  }
  const auto entries = ac_set_all(mdp, policy, K, skip_horizon);
  detail::FastConsistency check(entries, n, K);
  std::vector<int> rgs(static_cast<std::size_t>(n), 0);
  for (int blocks = 1; blocks <= n; ++blocks) {
    Partition found;
    auto visit = [&](const std::vector<int>& labels) {
      if (!check(labels, blocks)) return false;
      found = Partition{labels, blocks};
      return true;
    };
    if (detail::for_each_rgs(rgs, 1, 1, blocks, visit)) return found;
  }
  return Partition::identity(n);
}

/// Smallest K in [1, k_cap] whose coarsest consistent partition is the identity.
inline std::optional<int> minimal_identifying_horizon(const TabularExBMDP& mdp, const PolicyTable& policy, int k_cap) {
  for (int k = 1; k <= k_cap; ++k) {
    if (coarsest_consistent_partition(mdp, policy, k).n_blocks == mdp.n_endo()) return k;
  }
  return std::nullopt;
}

/// Row-stochastic chain induced on endogenous states by the policy.
inline std::vector<double> policy_chain(const TabularExBMDP& mdp, const PolicyTable& policy) {
  const int n = mdp.n_endo();
  std::vector<double> chain(static_cast<std::size_t>(n * n), 0.0);
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < mdp.n_actions(); ++a) chain[static_cast<std::size_t>(s * n + mdp.next(s, a))] += policy(s, a);
  }
  return chain;
}

/// Stationary distribution of a row-stochastic n x n chain by power iteration
/// on the lazy chain (I + P) / 2, which has the same fixed points and no
/// periodic oscillation.
inline Distribution stationary_dist(const std::vector<double>& chain, int n, int max_iter = 1000000) {
  if (chain.size() != static_cast<std::size_t>(n * n)) throw ConfigError("chain must be n x n");
  Distribution mu(static_cast<std::size_t>(n), 1.0 / n);
  double residual = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Distribution moved(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) moved[static_cast<std::size_t>(j)] += mu[static_cast<std::size_t>(i)] * chain[static_cast<std::size_t>(i * n + j)];
    }
    residual = 0.0;
    for (int j = 0; j < n; ++j) residual += std::abs(moved[static_cast<std::size_t>(j)] - mu[static_cast<std::size_t>(j)]);
    if (residual < 1e-12) {
      double total = 0.0;
      for (double x : mu) total += x;
      for (auto& x : mu) x /= total;
      return mu;
    }
    for (int j = 0; j < n; ++j) mu[static_cast<std::size_t>(j)] = 0.5 * (mu[static_cast<std::size_t>(j)] + moved[static_cast<std::size_t>(j)]);
  }
  throw PeriodicityError("stationary distribution did not converge, residual " + std::to_string(residual), residual);
}

/// Max |P(a | (s,e), (s',e'), k) - P(a | s, s', k)| over all valid tuples and
/// k <= k_max, computed on the explicit product chain. With an exo-dependent
/// policy the endogenous reference is ill-defined, so the spread across
/// exogenous contexts for a fixed (s, s', k, a) is reported instead.
inline double product_inverse_invariance(const TabularExBMDP& mdp, const ProductPolicy& policy, int k_max,
                                         const PolicyTable* endo_policy = nullptr) {
  const int S = mdp.n_endo();
  const int E = mdp.n_exo();
  const int A = mdp.n_actions();
  const int Z = S * E;
  auto idx = [E](int s, int e) { return s * E + e; };

  // step[z] = distribution after one policy step from z
  auto advance = [&](const Distribution& d) {
    Distribution out(static_cast<std::size_t>(Z), 0.0);
    for (int s = 0; s < S; ++s) {
      for (int e = 0; e < E; ++e) {
        const double m = d[static_cast<std::size_t>(idx(s, e))];
        if (m == 0.0) continue;
        for (int a = 0; a < A; ++a) {
          const double pa = policy(s, e, a);
          if (pa == 0.0) continue;
          const int s2 = mdp.next(s, a);
          for (int f = 0; f < E; ++f) out[static_cast<std::size_t>(idx(s2, f))] += m * pa * mdp.exo(e, f);
        }
      }
    }
    return out;
  };

  double worst = 0.0;
  // spread[(s, s2, k, a)] -> (min, max) over exo contexts
  std::map<std::tuple<int, int, int, int>, std::pair<double, double>> spread;
  for (int s = 0; s < S; ++s) {
    for (int e = 0; e < E; ++e) {
      // after_first[a] = distribution over product states after taking a, then k-1 policy steps
      std::vector<Distribution> after(static_cast<std::size_t>(A));
      for (int a = 0; a < A; ++a) {
        Distribution d(static_cast<std::size_t>(Z), 0.0);
        for (int f = 0; f < E; ++f) d[static_cast<std::size_t>(idx(mdp.next(s, a), f))] = mdp.exo(e, f);
        after[static_cast<std::size_t>(a)] = std::move(d);
      }
      for (int k = 1; k <= k_max; ++k) {
        for (int s2 = 0; s2 < S; ++s2) {
          for (int e2 = 0; e2 < E; ++e2) {
            Distribution post(static_cast<std::size_t>(A), 0.0);
            double total = 0.0;
            for (int a = 0; a < A; ++a) {
              const double w = policy(s, e, a) * after[static_cast<std::size_t>(a)][static_cast<std::size_t>(idx(s2, e2))];
              post[static_cast<std::size_t>(a)] = w;
              total += w;
            }
            if (total <= 0.0) continue;
            for (auto& p : post) p /= total;
            std::optional<Distribution> ref;
            if (endo_policy) ref = exact_inverse(mdp, *endo_policy, s, s2, k);
            for (int a = 0; a < A; ++a) {
              const double v = post[static_cast<std::size_t>(a)];
              if (ref) worst = std::max(worst, std::abs(v - (*ref)[static_cast<std::size_t>(a)]));
              auto [it, inserted] = spread.try_emplace({s, s2, k, a}, v, v);
              if (!inserted) {
                it->second.first = std::min(it->second.first, v);
                it->second.second = std::max(it->second.second, v);
              }
            }
            // an endogenous inverse must exist whenever the product one does
            if (endo_policy && !ref) worst = std::max(worst, 1.0);
          }
        }
        for (auto& d : after) d = advance(d);
      }
    }
  }
  for (const auto& [key, range] : spread) worst = std::max(worst, range.second - range.first);
  return worst;
}

inline double product_inverse_invariance(const TabularExBMDP& mdp, const PolicyTable& policy, int k_max) {
  return product_inverse_invariance(mdp, ProductPolicy::from_endogenous(policy, mdp.n_exo()), k_max, &policy);
}

// ---------------------------------------------------------------------------
// Plain-text format:
//   endo <S> <A>
//   <s> <a> <next>      one line per (s, a)
//   exo <E>             optional
//   <E probabilities>   one row per line
// '#' starts a comment.

inline void write_tabular(std::ostream& os, const TabularExBMDP& mdp) {
  os << "endo " << mdp.n_endo() << ' ' << mdp.n_actions() << '\n';
  for (int s = 0; s < mdp.n_endo(); ++s) {
    for (int a = 0; a < mdp.n_actions(); ++a) os << s << ' ' << a << ' ' << mdp.next(s, a) << '\n';
  }
  if (mdp.n_exo() > 1) {
    os << "exo " << mdp.n_exo() << '\n';
    os.precision(17);
    for (int e = 0; e < mdp.n_exo(); ++e) {
      for (int f = 0; f < mdp.n_exo(); ++f) os << (f ? " " : "") << mdp.exo(e, f);
      os << '\n';
    }
  }
}

inline TabularExBMDP read_tabular(std::istream& is) {
  std::vector<std::string> lines;
  for (std::string line; std::getline(is, line);) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    lines.push_back(line);
  }
  std::size_t i = 0;
  auto fail = [&](const std::string& msg) -> ConfigError {
    return ConfigError("tabular format, line " + std::to_string(i + 1) + ": " + msg);
  };
  if (lines.empty()) throw ConfigError("tabular format: empty input");
  std::istringstream head(lines[i]);
  std::string tag;
  int S = 0;
  int A = 0;
  if (!(head >> tag >> S >> A) || tag != "endo" || S < 1 || A < 1) throw fail("expected 'endo <S> <A>'");
  std::vector<int> next(static_cast<std::size_t>(S * A), -1);
  for (int n = 0; n < S * A; ++n) {
    ++i;
    if (i >= lines.size()) throw fail("missing transition lines");
    std::istringstream row(lines[i]);
    int s = 0, a = 0, t = 0;
    if (!(row >> s >> a >> t) || s < 0 || s >= S || a < 0 || a >= A) throw fail("bad transition line");
    next[static_cast<std::size_t>(s * A + a)] = t;
  }
  if (std::find(next.begin(), next.end(), -1) != next.end()) throw fail("transition table incomplete");
  std::vector<double> exo;
  if (++i < lines.size()) {
    std::istringstream ex(lines[i]);
    int E = 0;
    if (!(ex >> tag >> E) || tag != "exo" || E < 1) throw fail("expected 'exo <E>'");
    for (int r = 0; r < E; ++r) {
      ++i;
      if (i >= lines.size()) throw fail("missing exo rows");
      std::istringstream row(lines[i]);
      for (int c = 0; c < E; ++c) {
        double p = 0.0;
        if (!(row >> p)) throw fail("bad exo row");
        exo.push_back(p);
      }
    }
  }
  return TabularExBMDP(S, A, std::move(next), std::move(exo));
}

namespace tabular {

/// n-cycle where action 0 steps back and action 1 steps forward.
inline TabularExBMDP cycle(int n, std::vector<double> exo = {}) {
  std::vector<int> next;
  for (int s = 0; s < n; ++s) {
    next.push_back((s + n - 1) % n);
    next.push_back((s + 1) % n);
  }
  return TabularExBMDP(n, 2, std::move(next), std::move(exo));
}

/// Two states; action 0 holds, action 1 flips.
inline TabularExBMDP toggle() { return TabularExBMDP(2, 2, {0, 1, 1, 0}); }

/// 3x3 arm grid with actions up, down, left, right, stay. Cells are x + 3y.
/// Walls separate the three middle-row cells from each other, so each of them
/// is entered and left only vertically and every one of them self-loops on
/// left, right and stay.
inline TabularExBMDP robot_arm_grid() {
  const std::set<std::pair<int, int>> walls{{3, 4}, {4, 5}};
  std::vector<int> next;
  for (int c = 0; c < 9; ++c) {
    const int x = c % 3;
    const int y = c / 3;
    auto go = [&](int dx, int dy) {
      const int nx = x + dx;
      const int ny = y + dy;
      if (nx < 0 || ny < 0 || nx > 2 || ny > 2) return c;
      const int n = nx + 3 * ny;
      return walls.count({std::min(c, n), std::max(c, n)}) ? c : n;
    };
    next.push_back(go(0, -1));
    next.push_back(go(0, 1));
    next.push_back(go(-1, 0));
    next.push_back(go(1, 0));
    next.push_back(c);
  }
  return TabularExBMDP(9, 5, std::move(next));
}

/// True when every state reaches every state in exactly diameter() steps.
inline bool full_reach_at_diameter(const TabularExBMDP& mdp) {
  const int d = mdp.diameter();
  if (d < 0) return false;
  for (int s = 0; s < mdp.n_endo(); ++s) {
    if (static_cast<int>(reachable_set(mdp, s, d).size()) != mdp.n_endo()) return false;
  }
  return true;
}

struct RandomInstance {
  TabularExBMDP mdp;
  PolicyTable policy;
};

/// Random deterministic Ex-BMDP with |S| in [2, max_states], |A| in {2, 3} and a
/// 2..max_exo state exogenous chain. Instances are resampled until every state
/// reaches every state in exactly D steps. Half of the instances use a
/// non-uniform endogenous policy whose action probabilities stay above 0.09.
inline RandomInstance random_instance(Rng& rng, int max_states = 6, int max_exo = 4) {
  for (;;) {
    const int S = rng.uniform_int(2, max_states);
    const int A = rng.uniform_int(2, 3);
    std::vector<int> next(static_cast<std::size_t>(S * A));
    for (auto& t : next) t = rng.uniform_int(0, S - 1);
    const int E = rng.uniform_int(2, max_exo);
    std::vector<double> exo(static_cast<std::size_t>(E * E));
    for (int e = 0; e < E; ++e) {
      double row = 0.0;
      for (int f = 0; f < E; ++f) row += (exo[static_cast<std::size_t>(e * E + f)] = 0.05 + rng.uniform());
      for (int f = 0; f < E; ++f) exo[static_cast<std::size_t>(e * E + f)] /= row;
      // renormalize so the row sum is exactly representable as 1 within 1e-12
      double fix = 1.0;
      for (int f = 0; f + 1 < E; ++f) fix -= exo[static_cast<std::size_t>(e * E + f)];
      exo[static_cast<std::size_t>(e * E + E - 1)] = fix;
    }
    TabularExBMDP mdp(S, A, std::move(next), std::move(exo));
    if (!full_reach_at_diameter(mdp)) continue;
    PolicyTable policy = PolicyTable::uniform(S, A);
    if (rng.uniform() < 0.5) {
      for (int s = 0; s < S; ++s) {
        double row = 0.0;
        for (int a = 0; a < A; ++a) row += (policy.probs[static_cast<std::size_t>(s * A + a)] = 0.1 * (1.0 + 4.0 * rng.uniform()));
        double fix = 1.0;
        for (int a = 0; a < A; ++a) {
          auto& p = policy.probs[static_cast<std::size_t>(s * A + a)];
          p /= row;
          if (a + 1 < A) fix -= p;
        }
        policy.probs[static_cast<std::size_t>(s * A + A - 1)] = fix;
      }
    }
    return {std::move(mdp), std::move(policy)};
  }
}

}  // namespace tabular

}  // namespace acstate
