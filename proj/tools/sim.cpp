// Copyright 2026 the trichord authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "trichord/harness.hpp"

namespace fs = std::filesystem;
using namespace trichord;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitMismatch = 2;

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("SIM_SEED");
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::stoull(v);
}

ExperimentConfig load_config(const std::string& path,
                             const std::optional<std::uint64_t>& cli_seed) {
  ExperimentConfig cfg = ExperimentConfig::load(path);
  if (cli_seed) {
    cfg.seed = *cli_seed;
  } else if (auto es = env_seed()) {
    // SIM_SEED applies when neither --seed nor the file pins one; a seed
    // line in the file wins over the environment.
    std::ifstream in(path);
    bool file_has_seed = false;
    std::string line;
    while (std::getline(in, line)) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(0, eq);
      key.erase(std::remove_if(key.begin(), key.end(),
                               [](unsigned char c) { return std::isspace(c); }),
                key.end());
      if (key == "seed") {
        file_has_seed = true;
        break;
      }
    }
    if (!file_has_seed) cfg.seed = *es;
  }
  return cfg;
}

int cmd_run(const std::string& config_path,
            const std::optional<std::uint64_t>& seed,
            const std::string& out_path, const std::string& log_path) {
  const ExperimentConfig cfg = load_config(config_path, seed);
  RunArtifacts art;
  const MetricsReport report = run_experiment(cfg, &art);

  std::string csv = MetricsReport::csv_header();
  csv += "\n";
  csv += report.csv_row(cfg);
  csv += "\n";
  if (out_path.empty()) {
    std::cout << csv;
  } else {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw config_error("cannot write CSV to " + out_path);
    out << csv;
  }
  if (!log_path.empty()) {
    std::ofstream log(log_path, std::ios::binary);
    if (!log) throw config_error("cannot write event log to " + log_path);
    log << art.event_log;
  }
  std::cerr << report.summary(cfg);
  if (cfg.churn.total_rate() > 0)
    std::cerr << "churn_events=" << art.churn_events
              << " topology_violations=" << art.violations << "\n";
  return kExitOk;
}

std::vector<std::string> collect_config_files(const std::string& path) {
  std::vector<std::string> files;
  if (fs::is_directory(path)) {
    for (const auto& e : fs::directory_iterator(path)) {
      if (!e.is_regular_file()) continue;
      const std::string ext = e.path().extension().string();
      if (ext == ".cfg" || ext == ".conf") files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
  } else if (fs::is_regular_file(path)) {
    files.push_back(path);
  }
  return files;
}

int cmd_sweep(const std::string& configs_path, const std::string& out_path) {
  const std::vector<std::string> files = collect_config_files(configs_path);
  if (files.empty())
    throw config_error("sweep: no config files found at " + configs_path);
  std::vector<ExperimentConfig> configs;
  for (const std::string& f : files) configs.push_back(ExperimentConfig::load(f));

  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw config_error("cannot write CSV to " + out_path);
  sweep(configs, out);
  std::cerr << "wrote " << configs.size() << " rows to " << out_path << "\n";
  return kExitOk;
}

int cmd_oracle_check(const std::string& config_path,
                     const std::optional<std::uint64_t>& seed,
                     std::uint64_t samples, bool exhaustive) {
  const ExperimentConfig cfg = load_config(config_path, seed);
  const OracleReport rep = oracle_check(cfg, samples, exhaustive);
  std::cout << "checked=" << rep.checked
            << " mismatches=" << rep.mismatches.size() << "\n";
  for (const std::string& m : rep.mismatches) std::cout << "MISMATCH " << m << "\n";
  return rep.ok() ? kExitOk : kExitMismatch;
}

int cmd_replay(const std::string& log_path) {
  std::ifstream in(log_path);
  if (!in) throw config_error("cannot open event log: " + log_path);
  const ReplayResult res = replay_log(in);
  std::cout << "events=" << res.events << " lookups=" << res.lookups
            << " lookup_mismatches=" << res.mismatches
            << " topology_violations=" << res.violations << "\n";
  for (const auto& [kind, n] : res.kind_counts)
    std::cout << "  " << kind << ": " << n << "\n";
  return res.ok() ? kExitOk : kExitMismatch;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "trichord: flat and three-layer hierarchical Chord overlay simulator"};
  app.require_subcommand(1);

  std::string config_path, out_path, log_path, configs_path;
  std::optional<std::uint64_t> seed;
  std::uint64_t samples = 10000;
  bool exhaustive = false;

  CLI::App* run = app.add_subcommand("run", "run one experiment");
  run->add_option("--config", config_path, "experiment config file")
      ->required();
  run->add_option("--seed", seed, "override the config seed");
  run->add_option("--out", out_path, "CSV output path (default: stdout)");
  run->add_option("--log", log_path, "write the event log to this path");

  CLI::App* sw = app.add_subcommand("sweep", "run a batch of experiments");
  sw->add_option("--configs", configs_path,
                 "config directory (*.cfg) or single file")
      ->required();
  sw->add_option("--out", out_path, "CSV output path")->required();

  CLI::App* oc = app.add_subcommand(
      "oracle-check", "cross-check lookups against god's-eye oracles");
  oc->add_option("--config", config_path, "experiment config file")
      ->required();
  oc->add_option("--samples", samples, "random (origin, key) samples");
  oc->add_flag("--exhaustive", exhaustive,
               "check every key id from every origin (needs m <= 8)");
  oc->add_option("--seed", seed, "override the config seed");

  CLI::App* rp = app.add_subcommand("replay", "re-execute an event log");
  rp->add_option("--log", log_path, "event log file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, seed, out_path, log_path);
    if (sw->parsed()) return cmd_sweep(configs_path, out_path);
    if (oc->parsed())
      return cmd_oracle_check(config_path, seed, samples, exhaustive);
    if (rp->parsed()) return cmd_replay(log_path);
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}
