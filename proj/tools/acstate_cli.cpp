#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "acstate/config_file.hpp"
#include "acstate/experiment.hpp"

namespace {

enum Exit { kOk = 0, kFalsified = 1, kUsage = 2, kNumeric = 3 };

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed, const std::string& out, bool quiet) {
  auto cfg = acstate::config::load_file(config_path);
  if (seed) cfg.seed = *seed;
  if (!out.empty()) cfg.output_dir = out;
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto run = acstate::run_experiment(cfg, quiet ? nullptr : &std::cout);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!quiet) {
    for (const auto& w : run.warnings) std::cerr << "warning: " << w << '\n';
    acstate::write_report(std::cout, run.report);
    std::cout << "# " << secs << " s, artifacts in " << cfg.output_dir << '\n';
  }
  return kOk;
}

int cmd_verify(int n, std::uint64_t seed, std::optional<int> skip, const std::string& out, bool quiet) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rep = acstate::verify_theory(n, seed, skip);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream text;
  for (const auto& f : rep.findings) text << (f.pass ? "ok   " : "FAIL ") << f.name << ": " << f.detail << '\n';
  std::ostringstream witness;
  for (const auto& f : rep.findings) {
    if (!f.witness) continue;
    witness << "# witness for " << f.name << '\n';
    acstate::write_witness(witness, *f.witness, *f.witness_policy);
  }
  if (!quiet || !rep.pass()) {
    std::cout << text.str();
    if (!rep.pass()) std::cout << witness.str();
    if (!quiet) std::cout << "# " << secs << " s\n";
  }
  if (!out.empty()) {
    namespace fs = std::filesystem;
    acstate::OutputLock lock(out);
    const auto tag = "verify-theory n " + std::to_string(n) + " seed " + std::to_string(seed) + " skip " +
                     (skip ? std::to_string(*skip) : std::string("none"));
    const auto header = "# acstate " + std::string(acstate::kToolkitVersion) + " config " + acstate::config::fnv1a(tag);
    std::ofstream os(fs::path(out) / "theory.txt");
    os << header << '\n' << text.str();
    if (!rep.pass()) {
      std::ofstream ws(fs::path(out) / "witness.txt");
      ws << header << '\n' << witness.str();
    }
  }
  return rep.pass() ? kOk : kFalsified;
}

int cmd_report(const std::string& dir, bool quiet) {
  const auto runs = acstate::collect_runs(dir);
  if (runs.empty()) {
    std::cerr << "report: no completed runs under '" << dir << "'\n";
    return kUsage;
  }
  const auto table = acstate::write_summary(dir, runs);
  if (!quiet) std::cout << table << "# " << runs.size() << " runs; runs.csv, summary.csv, progress.csv in " << dir << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Controllable latent state discovery toolkit"};
  app.set_version_flag("--version", std::string(acstate::kToolkitVersion));
  app.require_subcommand(1);

  std::string config_path, out;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  int n_random = 200;
  std::optional<int> skip;

  auto* run = app.add_subcommand("run", "Run one experiment from a config file");
  run->add_option("--config", config_path, "Config file")->required();
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--out", out, "Override output_dir");
  run->add_flag("--quiet", quiet, "Only errors on stderr");

  auto* verify = app.add_subcommand("verify-theory", "Exact identifiability checks on tabular Ex-BMDPs");
  verify->add_option("--n", n_random, "Random instances")->check(CLI::PositiveNumber);
  verify->add_option("--seed", seed, "Instance sampler seed");
  verify->add_option("--out", out, "Directory for theory.txt (and witness.txt)");
  verify->add_option("--inject-skip-horizon", skip, "Drop one inner horizon from every AC set (self-test)");
  verify->add_flag("--quiet", quiet, "Print only on failure");

  auto* report = app.add_subcommand("report", "Aggregate completed runs under a directory");
  report->add_option("dir", out, "Runs directory");
  report->add_option("--out", out, "Runs directory");
  report->add_flag("--quiet", quiet, "No table on stdout");

  app.add_subcommand("config-schema", "Print every config key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*run) return cmd_run(config_path, seed, out, quiet);
    if (*verify) return cmd_verify(n_random, seed.value_or(0), skip, out, quiet);
    if (*report) {
      if (out.empty()) {
        std::cerr << "report: a runs directory is required\n";
        return kUsage;
      }
      return cmd_report(out, quiet);
    }
    std::cout << acstate::config::schema();
    return kOk;
  } catch (const acstate::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const acstate::PeriodicityError& e) {
    std::cerr << "numeric failure: " << e.what() << " (residual " << e.residual() << ")\n";
    return kNumeric;
  } catch (const acstate::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const acstate::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
}
