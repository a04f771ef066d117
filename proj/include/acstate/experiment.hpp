#pragma once

// End-to-end runs (environment, data, training, evaluation, artifacts), the
// exact theory checks behind verify-theory, and run aggregation for report.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "acstate/acstate_learner.hpp"
#include "acstate/config.hpp"
#include "acstate/eval_metrics.hpp"
#include "acstate/exbmdp_env.hpp"
#include "acstate/latent_planner.hpp"
#include "acstate/tabular_oracle.hpp"

namespace acstate {

namespace fs = std::filesystem;

/// Lazy walk on a ring of n states: stay or step to either neighbour.
inline ExoChain ring_walk_chain(int n) {
  ExoChain chain;
  for (int e = 0; e < n; ++e) {
    std::set<int> succ{e, (e + 1) % n, (e + n - 1) % n};
    chain.successors.emplace_back(succ.begin(), succ.end());
    chain.support.push_back(e);
  }
  return chain;
}

inline TabularExBMDP tabular_table(const EnvironmentConfig& ec) {
  if (ec.table == "cycle") return tabular::cycle(ec.cycle_length);
  if (ec.table == "robot_arm") return tabular::robot_arm_grid();
  return tabular::toggle();
}

inline Environment build_environment(const EnvironmentConfig& ec, std::uint64_t seed) {
  ec.validate();
  if (ec.kind == "tabular") {
    const auto t = tabular_table(ec);
    return build_tabular_environment(t.n_endo(), t.n_actions(), t.endo_table(), ring_walk_chain(ec.exo_states),
                                     ec.exo_agents, seed);
  }
  MazeSpec spec = ec.layout == "four_rooms" ? layouts::four_rooms(ec.exo_agents, ec.reset_actions, seed)
                                            : layouts::open_grid(ec.width, ec.height, ec.exo_agents, seed);
  spec.reset_actions = ec.reset_actions;
  return build_multimaze(spec);
}

/// Final evaluation of one run.
struct RunReport {
  std::string method;
  std::string policy;
  std::uint64_t seed = 0;
  int steps = 0;
  int codes = 0;
  int reachable = 0;
  int visited = 0;
  double coverage = 0.0;
  double dynamics_error = 0.0;
  int undefined_rows = 0;
  double parsimony = 0.0;
  double purity = 0.0;
  int codes_used = 0;
  long goals = 0;
  long plan_failures = 0;
  long fallbacks = 0;
  int warnings = 0;
};

inline void write_report(std::ostream& os, const RunReport& r) {
  using config::format_double;
  os << "method " << r.method << '\n'
     << "policy " << r.policy << '\n'
     << "seed " << r.seed << '\n'
     << "steps " << r.steps << '\n'
     << "codes " << r.codes << '\n'
     << "reachable " << r.reachable << '\n'
     << "visited " << r.visited << '\n'
     << "coverage " << format_double(r.coverage) << '\n'
     << "dynamics_error " << format_double(r.dynamics_error) << '\n'
     << "undefined_rows " << r.undefined_rows << '\n'
     << "parsimony " << format_double(r.parsimony) << '\n'
     << "purity " << format_double(r.purity) << '\n'
     << "codes_used " << r.codes_used << '\n'
     << "goals " << r.goals << '\n'
     << "plan_failures " << r.plan_failures << '\n'
     << "fallbacks " << r.fallbacks << '\n'
     << "warnings " << r.warnings << '\n';
}

/// key -> value lines; '#' lines are skipped.
inline std::map<std::string, std::string> read_report(std::istream& is) {
  std::map<std::string, std::string> out;
  for (std::string line; std::getline(is, line);) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string k, v;
    if (ls >> k >> v) out[k] = v;
  }
  return out;
}

/// Everything a run produces in memory.
struct RunOutcome {
  ReplayBuffer buffer;
  nn::EncoderStack model;
  std::vector<int> codes;
  LatentMDP mdp;
  RunReport report;
  std::vector<nlohmann::ordered_json> progress;
  std::vector<std::string> warnings;
};

inline RunReport evaluate(const ExperimentConfig& cfg, const Environment& env, const ReplayBuffer& buf,
                          const std::vector<int>& codes, const LatentMDP& mdp) {
  const auto& ground = buf.ground->endo;
  RunReport r;
  r.method = to_string(cfg.method);
  r.policy = to_string(cfg.policy);
  r.seed = cfg.seed;
  r.steps = static_cast<int>(buf.data.size());
  r.codes = cfg.train.codes;
  const auto cov = coverage(ground, static_cast<int>(env.reachable_endo().size()), env.n_endo());
  r.reachable = cov.total;
  r.visited = cov.visited;
  r.coverage = cov.fraction;
  const auto de = dynamics_diff_error(codes, ground, buf.data.actions, mdp, env.n_endo());
  r.dynamics_error = de.percent;
  r.undefined_rows = de.undefined_rows;
  r.parsimony = state_parsimony(codes, ground);
  r.purity = purity(cooccurrence(codes, ground, cfg.train.codes, env.n_endo()));
  r.codes_used = count_distinct(codes);
  return r;
}

/// Runs one experiment without touching the file system. log receives one
/// line per progress record when set.
inline RunOutcome execute(const ExperimentConfig& in, std::ostream* log = nullptr) {
  ExperimentConfig cfg = in;
  cfg.train.seed = cfg.seed;
  cfg.validate();
  const auto env = build_environment(cfg.environment, cfg.seed);
  RunOutcome out;

  auto record = [&](const TrainProgress& p, const ReplayBuffer* buf) {
    nlohmann::ordered_json j;
    j["step"] = p.step;
    j["loss"] = p.loss.total;
    j["inverse"] = p.loss.inverse;
    j["kl"] = p.loss.kl;
    j["vq"] = p.loss.vq;
    j["accuracy"] = p.loss.accuracy;
    j["codes_used"] = p.codes_used;
    if (buf) {
      j["env_step"] = buf->data.size() - 1;
      j["visited"] = coverage(buf->ground->endo, static_cast<int>(env.reachable_endo().size()), env.n_endo()).visited;
    }
    if (log) *log << j.dump() << '\n';
    out.progress.push_back(std::move(j));
  };

  if (cfg.policy == PolicyKind::planning) {
    auto run = run_planning_acstate(
        env, cfg.train,
        [&](const TrainProgress& p, const nn::EncoderStack&, const ReplayBuffer& b) { record(p, &b); }, cfg.eval_every);
    out.buffer = std::move(run.buffer);
    out.model = std::move(run.trained.model);
    out.warnings = std::move(run.trained.warnings);
    out.report.goals = run.goals_selected;
    out.report.plan_failures = run.plan_failures;
    out.report.fallbacks = run.fallbacks;
  } else {
    Rng rng(cfg.seed, 1);
    out.buffer = collect_random(env, cfg.train.env_steps, rng, cfg.train.K);
    const ProgressFn progress = [&](const TrainProgress& p, const nn::EncoderStack&) { record(p, nullptr); };
    TrainResult r;
    switch (cfg.method) {
      case Method::acstate: r = train_acstate(out.buffer.data, cfg.train, env.n_actions(), progress, cfg.eval_every); break;
      case Method::onestep: r = train_one_step_inverse(out.buffer.data, cfg.train, env.n_actions(), progress, cfg.eval_every); break;
      case Method::autoencoder: r = train_autoencoder(out.buffer.data, cfg.train, env.n_actions(), progress, cfg.eval_every); break;
      case Method::contrastive: r = train_contrastive(out.buffer.data, cfg.train, env.n_actions(), progress, cfg.eval_every); break;
    }
    out.model = std::move(r.model);
    out.warnings = std::move(r.warnings);
  }
  out.codes = encode_codes(out.model, out.buffer.data.observations);
  out.mdp = build_latent_mdp(out.codes, out.buffer.data.actions, cfg.train.codes, env.n_actions());
  const auto planning = out.report;
  out.report = evaluate(cfg, env, out.buffer, out.codes, out.mdp);
  out.report.goals = planning.goals;
  out.report.plan_failures = planning.plan_failures;
  out.report.fallbacks = planning.fallbacks;
  out.report.warnings = static_cast<int>(out.warnings.size());
  return out;
}

/// Exclusive claim on an output directory for the lifetime of the object.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir) : path_(dir / ".lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("output_dir: cannot create " + dir.string() + ": " + ec.message());
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      if (errno == EEXIST) throw ConfigError("output_dir: " + dir.string() + " is locked by another run (" + path_.string() + ")");
      throw ConfigError("output_dir: " + dir.string() + " is not writable: " + std::strerror(errno));
    }
    const auto pid = std::to_string(::getpid()) + "\n";
    if (::write(fd_, pid.data(), pid.size()) < 0) {
      // the lock holds without the pid
    }
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;
  ~OutputLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }

 private:
  fs::path path_;
  int fd_ = -1;
};

namespace detail {

inline std::ofstream open_artifact(const fs::path& p, const std::string& header) {
  std::ofstream os(p);
  if (!os) throw ConfigError("output_dir: cannot write " + p.string());
  if (!header.empty()) os << header << '\n';
  return os;
}

template <class T>
std::string join(const std::vector<T>& v) {
  if (v.empty()) return "-";
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

/// P2 graymap with the header as the first comment line.
inline void write_heatmap(const fs::path& p, const std::string& header, const std::vector<double>& values, int rows,
                          int cols) {
  std::ostringstream pgm;
  write_pgm(pgm, values, rows, cols);
  const auto body = pgm.str();
  const auto nl = body.find('\n');
  auto os = open_artifact(p, "");
  os << body.substr(0, nl + 1) << header << '\n' << body.substr(nl + 1);
}

}  // namespace detail

/// Writes every artifact of a finished run into dir.
inline void write_artifacts(const fs::path& dir, const ExperimentConfig& cfg, const RunOutcome& out) {
  const auto header = config::header_line(config::hash(cfg));
  const auto env = build_environment(cfg.environment, cfg.seed);
  {
    auto os = detail::open_artifact(dir / "config.yaml", header);
    os << config::emit(cfg);
  }
  {
    auto os = detail::open_artifact(dir / "report.txt", header);
    write_report(os, out.report);
  }
  {
    auto os = detail::open_artifact(dir / "metrics.jsonl", header);
    for (const auto& j : out.progress) os << j.dump() << '\n';
  }
  {
    auto os = detail::open_artifact(dir / "trajectory.tsv", header);
    os << "# step\taction\tmarked\thorizon_cap\tendo\texo\tobservation(dim " << env.obs_dim() << ", hot indices)\n";
    const auto& d = out.buffer.data;
    const auto& g = *out.buffer.ground;
    for (std::size_t t = 0; t < d.size(); ++t) {
      os << t << '\t';
      if (t < d.actions.size()) {
        os << d.actions[t] << '\t' << (d.horizon_cap[t] > 0 ? 1 : 0) << '\t' << d.horizon_cap[t];
      } else {
        os << "-\t-\t-";
      }
      os << '\t' << g.endo[t] << '\t' << detail::join(g.exo[t]) << '\t' << detail::join(d.observations[t].hot) << '\n';
    }
  }
  {
    auto os = detail::open_artifact(dir / "checkpoint.txt", header);
    nn::save_checkpoint(os, out.model);
  }
  {
    auto os = detail::open_artifact(dir / "latent_graph.txt", header);
    out.mdp.write_edges(os);
  }
  const int n = env.n_endo();
  const auto co = cooccurrence(out.codes, out.buffer.ground->endo, cfg.train.codes, n);
  {
    auto os = detail::open_artifact(dir / "cooccurrence.txt", header);
    os << "# rows: codes, columns: ground endogenous states\n";
    std::vector<double> m(co.counts.begin(), co.counts.end());
    write_matrix(os, m, co.n_codes, co.n_ground);
  }
  const auto cov = coverage(out.buffer.ground->endo, static_cast<int>(env.reachable_endo().size()), n);
  std::vector<double> visits(cov.visits.begin(), cov.visits.end());
  std::vector<double> split(static_cast<std::size_t>(n), 0.0);
  for (int s = 0; s < n; ++s) {
    for (int c = 0; c < co.n_codes; ++c) split[static_cast<std::size_t>(s)] += co.at(c, s) > 0 ? 1.0 : 0.0;
  }
  const int rows = env.grid() ? env.grid()->height : 1;
  const int cols = env.grid() ? env.grid()->width : n;
  detail::write_heatmap(dir / "visits.pgm", header, visits, rows, cols);
  detail::write_heatmap(dir / "codes_per_state.pgm", header, split, rows, cols);
}

/// execute + write_artifacts under an output lock.
inline RunOutcome run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  const fs::path dir(cfg.output_dir);
  OutputLock lock(dir);
  auto out = execute(cfg, log);
  write_artifacts(dir, cfg, out);
  return out;
}

// ---------------------------------------------------------------------------
// verify-theory

inline constexpr double kInverseTolerance = 1e-10;

struct TheoryFinding {
  std::string name;
  bool pass = true;
  std::string detail;
  std::optional<TabularExBMDP> witness;
  std::optional<PolicyTable> witness_policy;
};

struct TheoryReport {
  std::vector<TheoryFinding> findings;
  int random_checked = 0;
  bool pass() const {
    return std::all_of(findings.begin(), findings.end(), [](const TheoryFinding& f) { return f.pass; });
  }
};

inline bool merges(const Partition& p, std::initializer_list<int> states) {
  const int b = p.block(*states.begin());
  return std::all_of(states.begin(), states.end(), [&](int s) { return p.block(s) == b; });
}

/// 6-cycle with back and forward moves plus a stay action, so every state
/// reaches every state in exactly D steps.
inline TabularExBMDP lazy_cycle(int n) {
  std::vector<int> next;
  for (int s = 0; s < n; ++s) {
    next.push_back((s + n - 1) % n);
    next.push_back((s + 1) % n);
    next.push_back(s);
  }
  return TabularExBMDP(n, 3, std::move(next));
}

/// Exact checks on n_random sampled Ex-BMDPs and the fixed counterexamples.
/// skip_horizon drops one h' from every AC set (verifier self-test).
inline TheoryReport verify_theory(int n_random, std::uint64_t seed, std::optional<int> skip_horizon = std::nullopt) {
  if (n_random < 1) throw ConfigError("--n: must be >= 1");
  TheoryReport rep;
  Rng rng(seed, 0x7e0);
  TheoryFinding random{"random instances", true, "", std::nullopt, std::nullopt};
  double worst_inverse = 0.0;
  for (int i = 0; i < n_random && random.pass; ++i) {
    auto inst = tabular::random_instance(rng, 6, 4);
    const int D = inst.mdp.diameter();
    const double inv = product_inverse_invariance(inst.mdp, inst.policy, D);
    worst_inverse = std::max(worst_inverse, inv);
    const auto part = coarsest_consistent_partition(inst.mdp, inst.policy, D, skip_horizon);
    ++rep.random_checked;
    if (inv > kInverseTolerance || part.n_blocks != inst.mdp.n_endo()) {
      random.pass = false;
      std::ostringstream os;
      os << "instance " << i << " (|S|=" << inst.mdp.n_endo() << ", |A|=" << inst.mdp.n_actions() << ", |E|=" << inst.mdp.n_exo()
         << ", D=" << D << "): product inverse gap " << inv << ", coarsest partition at K=D " << to_string(part);
      random.detail = os.str();
      random.witness = inst.mdp;
      random.witness_policy = inst.policy;
    }
  }
  if (random.pass) {
    std::ostringstream os;
    os << rep.random_checked << " instances: max product inverse gap " << worst_inverse
       << ", coarsest partition at K=D is the identity for all";
    random.detail = os.str();
  }
  rep.findings.push_back(std::move(random));

  auto fixed = [&](const std::string& name, const TabularExBMDP& mdp, auto expect_k1) {
    const auto policy = PolicyTable::uniform(mdp.n_endo(), mdp.n_actions());
    const int D = mdp.diameter();
    const auto k1 = coarsest_consistent_partition(mdp, policy, 1, skip_horizon);
    const auto kd = coarsest_consistent_partition(mdp, policy, D, skip_horizon);
    TheoryFinding f{name, expect_k1(k1) && kd.n_blocks == mdp.n_endo(), "", std::nullopt, std::nullopt};
    std::ostringstream os;
    os << "K=1 coarsest has " << k1.n_blocks << " blocks; K=" << D << " has " << kd.n_blocks << "  [K=1 " << to_string(k1)
       << "]";
    f.detail = os.str();
    if (!f.pass) {
      f.witness = mdp;
      f.witness_policy = policy;
    }
    rep.findings.push_back(std::move(f));
  };
  fixed("6-cycle with stay action", lazy_cycle(6), [](const Partition& p) {
    return p.n_blocks == 3 && merges(p, {0, 3}) && merges(p, {1, 4}) && merges(p, {2, 5});
  });
  fixed("3x3 arm grid", tabular::robot_arm_grid(), [](const Partition& p) { return merges(p, {3, 4, 5}); });

  // The two-action cycle is reported but not judged by the theorem: its
  // parity keeps odd and even states apart at every fixed horizon, so the
  // exact-D reachability assumption fails.
  {
    const auto mdp = tabular::cycle(6);
    const auto policy = PolicyTable::uniform(6, 2);
    const auto k1 = coarsest_consistent_partition(mdp, policy, 1, skip_horizon);
    const auto kd = coarsest_consistent_partition(mdp, policy, mdp.diameter(), skip_horizon);
    std::ostringstream os;
    os << "K=1 coarsest has " << k1.n_blocks << " blocks; K=" << mdp.diameter() << " has " << kd.n_blocks
       << " (assumption not met: full reach at D " << (tabular::full_reach_at_diameter(mdp) ? "holds" : "fails") << ")";
    rep.findings.push_back({"6-cycle, two actions", k1.n_blocks == 3, os.str(), std::nullopt, std::nullopt});
  }
  return rep;
}

inline void write_witness(std::ostream& os, const TabularExBMDP& mdp, const PolicyTable& policy) {
  write_tabular(os, mdp);
  os << "# policy rows (state: action probabilities)\n";
  os.precision(17);
  for (int s = 0; s < policy.n_endo; ++s) {
    os << "# " << s << ":";
    for (int a = 0; a < policy.n_actions; ++a) os << ' ' << policy(s, a);
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// report

struct RunRecord {
  std::string run;  // directory relative to the report root
  std::map<std::string, std::string> fields;
  std::vector<nlohmann::json> progress;
};

/// Every directory under root holding a report.txt, sorted by path.
inline std::vector<RunRecord> collect_runs(const fs::path& root) {
  std::vector<RunRecord> runs;
  if (!fs::is_directory(root)) return runs;
  std::vector<fs::path> found;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().filename() == "report.txt") found.push_back(e.path());
  }
  std::sort(found.begin(), found.end());
  for (const auto& p : found) {
    RunRecord r;
    r.run = fs::relative(p.parent_path(), root).generic_string();
    std::ifstream is(p);
    r.fields = read_report(is);
    std::ifstream ms(p.parent_path() / "metrics.jsonl");
    for (std::string line; std::getline(ms, line);) {
      if (!line.empty() && line[0] != '#') r.progress.push_back(nlohmann::json::parse(line));
    }
    runs.push_back(std::move(r));
  }
  return runs;
}

inline const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols{"method",  "policy",         "seed",      "steps",  "codes",
                                             "visited", "reachable",      "coverage",  "dynamics_error",
                                             "parsimony", "purity",       "codes_used"};
  return cols;
}

/// Writes runs.csv (one row per run), summary.csv (mean per method, policy
/// and code budget) and progress.csv (visited ground states over steps for
/// planning runs). Returns the summary as a printable table.
inline std::string write_summary(const fs::path& root, const std::vector<RunRecord>& runs) {
  std::string names;
  for (const auto& r : runs) names += r.run + '\n';
  const auto header = "# acstate " + std::string(kToolkitVersion) + " report " + config::fnv1a(names);
  const auto& cols = report_columns();
  {
    auto os = detail::open_artifact(root / "runs.csv", header);
    os << "run";
    for (const auto& c : cols) os << ',' << c;
    os << '\n';
    for (const auto& r : runs) {
      os << r.run;
      for (const auto& c : cols) os << ',' << (r.fields.count(c) ? r.fields.at(c) : "");
      os << '\n';
    }
  }
  struct Group {
    int n = 0;
    std::map<std::string, double> sum;
  };
  const std::vector<std::string> metrics{"coverage", "dynamics_error", "parsimony", "purity", "codes_used"};
  std::map<std::tuple<std::string, std::string, int>, Group> groups;
  for (const auto& r : runs) {
    auto get = [&](const std::string& k) { return r.fields.count(k) ? r.fields.at(k) : std::string(); };
    const int codes = get("codes").empty() ? 0 : std::stoi(get("codes"));
    auto& g = groups[{get("method"), get("policy"), codes}];
    ++g.n;
    for (const auto& m : metrics) g.sum[m] += get(m).empty() ? 0.0 : std::stod(get(m));
  }
  std::ostringstream table;
  {
    auto os = detail::open_artifact(root / "summary.csv", header);
    os << "method,policy,codes,runs";
    table << "method       policy    codes runs";
    for (const auto& m : metrics) {
      os << ',' << m;
      table << ' ' << std::string(std::max<std::size_t>(1, 15 - m.size()), ' ') << m;
    }
    os << '\n';
    table << '\n';
    for (const auto& [key, g] : groups) {
      const auto& [method, policy, codes] = key;
      os << method << ',' << policy << ',' << codes << ',' << g.n;
      char buf[64];
      std::snprintf(buf, sizeof buf, "%-12s %-9s %5d %4d", method.c_str(), policy.c_str(), codes, g.n);
      table << buf;
      for (const auto& m : metrics) {
        const double mean = g.sum.at(m) / g.n;
        os << ',' << config::format_double(mean);
        std::snprintf(buf, sizeof buf, " %15.4f", mean);
        table << buf;
      }
      os << '\n';
      table << '\n';
    }
  }
  {
    auto os = detail::open_artifact(root / "progress.csv", header);
    os << "run,method,seed,codes,env_step,visited,reachable\n";
    for (const auto& r : runs) {
      for (const auto& j : r.progress) {
        if (!j.contains("visited")) continue;
        os << r.run << ',' << r.fields.at("method") << ',' << r.fields.at("seed") << ',' << r.fields.at("codes") << ','
           << j.at("env_step").get<long>() << ',' << j.at("visited").get<int>() << ',' << r.fields.at("reachable") << '\n';
      }
    }
  }
  return table.str();
}

}  // namespace acstate
