// Copyright 2026 The Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// batchmoe: batch-aware expert selection experiments.
//
//   batchmoe run <config.json> [--seed S] [--output PREFIX]
//   batchmoe replay <trace.jsonl> <config.json> [--output PREFIX]
//   batchmoe analytic --n-experts 256 --k 8 --b-min 1 --b-max 64
//   batchmoe oracle-check --count 500 --max-n 12
//   batchmoe version
//
// Exit codes: 0 success, 1 validation error, 2 I/O error, 3 oracle mismatch.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "batchmoe/experiment.h"
#include "batchmoe/format.h"
#include "batchmoe/metrics.h"

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;
constexpr int kExitOracleMismatch = 3;

int Finish(const batchmoe::RunOutput& out) {
  std::cout << "wrote " << out.rows << " rows to " << out.csv_path << "\n"
            << "manifest " << out.manifest_path << "\n";
  if (out.oracle) {
    std::cout << out.oracle->Line() << "\n";
    if (out.oracle->optimal != out.oracle->checked) return kExitOracleMismatch;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Batch-aware MoE expert selection experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string trace_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output;

  auto* run = app.add_subcommand("run", "Run a config-driven sweep");
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--seed", seed, "Run a single seed instead of the config's list");
  run->add_option("--output", output, "Output file prefix");

  auto* replay = app.add_subcommand("replay", "Run selectors on a captured trace");
  replay->add_option("trace", trace_path, "Trace file (JSON Lines)")->required();
  replay->add_option("config", config_path, "Experiment config (JSON)")->required();
  replay->add_option("--output", output, "Output file prefix");

  batchmoe::AnalyticSpec analytic;
  auto* an = app.add_subcommand("analytic", "Expected activated experts vs batch size");
  an->add_option("--n-experts,-N", analytic.n_experts, "Number of experts");
  an->add_option("--k", analytic.k, "Experts per token");
  an->add_option("--b-min", analytic.b_min, "Smallest batch size");
  an->add_option("--b-max", analytic.b_max, "Largest batch size");
  an->add_option("--output", output, "Also write CSV + manifest under this prefix");

  batchmoe::OracleCheckSpec oracle;
  std::uint64_t oracle_seed = 0;
  auto* oc = app.add_subcommand("oracle-check", "Compare greedy against brute force");
  oc->add_option("--count", oracle.count, "Number of random instances");
  oc->add_option("--max-n", oracle.max_n, "Largest number of experts");
  oc->add_option("--max-tokens", oracle.max_tokens, "Largest number of tokens");
  oc->add_option("--max-m", oracle.max_m, "Largest budget");
  oc->add_option("--seed", oracle_seed, "Instance generator seed");
  oc->add_option("--output", output, "Also write CSV + manifest under this prefix");

  app.add_subcommand("version", "Print the version");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (app.got_subcommand("version")) {
      std::cout << "batchmoe " << batchmoe::kVersion << "\n";
      return 0;
    }
    if (app.got_subcommand(run)) {
      batchmoe::ExperimentConfig cfg = batchmoe::LoadExperimentConfig(config_path);
      if (seed) cfg.seeds = {*seed};
      if (output) cfg.output = *output;
      return Finish(batchmoe::RunExperiment(cfg));
    }
    if (app.got_subcommand(replay)) {
      batchmoe::ExperimentConfig cfg = batchmoe::LoadExperimentConfig(config_path);
      if (output) cfg.output = *output;
      return Finish(batchmoe::ReplayTrace(trace_path, cfg));
    }
    if (app.got_subcommand(an)) {
      batchmoe::ExperimentConfig cfg;
      cfg.mode = batchmoe::Mode::kAnalytic;
      cfg.analytic = analytic;
      batchmoe::ValidateExperimentConfig(cfg);
      std::cout << "B,expected\n";
      for (std::size_t b = analytic.b_min; b <= analytic.b_max; ++b) {
        std::cout << b << ","
                  << batchmoe::FormatDouble(batchmoe::ExpectedActivated(
                         analytic.n_experts, analytic.k, b))
                  << "\n";
      }
      if (output) {
        cfg.output = *output;
        batchmoe::RunExperiment(cfg);
      }
      return 0;
    }
    if (app.got_subcommand(oc)) {
      batchmoe::ExperimentConfig cfg;
      cfg.mode = batchmoe::Mode::kOracleCheck;
      cfg.oracle_check = oracle;
      cfg.seeds = {oracle_seed};
      batchmoe::ValidateExperimentConfig(cfg);
      if (output) {
        cfg.output = *output;
        return Finish(batchmoe::RunExperiment(cfg));
      }
      const auto summary = batchmoe::RunOracleCheck(oracle, oracle_seed);
      std::cout << summary.Line() << "\n";
      return summary.optimal == summary.checked ? 0 : kExitOracleMismatch;
    }
  } catch (const batchmoe::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const batchmoe::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  }
  return 0;
}
