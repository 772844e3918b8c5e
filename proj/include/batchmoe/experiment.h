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

//
// Config-driven experiment runner: sweeps selector budgets over seeded
// synthetic batches or replayed traces and writes CSV rows plus a manifest.
//

#ifndef BATCHMOE_EXPERIMENT_H_
#define BATCHMOE_EXPERIMENT_H_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "batchmoe/core.h"
#include "batchmoe/gating.h"

namespace batchmoe {

inline constexpr const char* kVersion = "0.1.0";

enum class Mode { kBatch, kSpeculative, kEp, kOverlap, kAnalytic, kOracleCheck };

std::string ModeName(Mode mode);

// One sweep point. Fields a mode needs must be present; the rest stay empty
// and show up as empty CSV cells.
struct SweepPoint {
  std::optional<std::size_t> k0;
  std::optional<std::size_t> m_l;
  std::optional<std::size_t> m_r;
  std::optional<std::size_t> m;
  std::optional<std::size_t> m_g;
  std::optional<double> tau;
};

struct BatchTemplate {
  std::size_t n_requests = 16;
  std::size_t spec_tokens = 0;
  std::vector<std::string> dataset_tags;
};

// Either a contiguous split over n_gpus, explicit contiguous block sizes, or
// a JSON Lines partition file.
struct PartitionSpec {
  std::size_t n_gpus = 0;
  std::vector<std::size_t> gpu_sizes;
  std::string file;
};

struct AnalyticSpec {
  std::size_t n_experts = 256;
  std::size_t k = 8;
  std::size_t b_min = 1;
  std::size_t b_max = 64;
};

struct OracleCheckSpec {
  std::size_t count = 500;
  std::size_t max_n = 12;
  std::size_t max_tokens = 6;
  std::size_t max_m = 6;
};

struct ExperimentConfig {
  Mode mode = Mode::kBatch;
  GeneratorConfig generator;
  BatchTemplate batch;
  std::size_t route_k = 4;
  std::vector<SweepPoint> budgets;
  PartitionSpec partition;
  std::size_t layers = 1;
  std::vector<std::uint64_t> seeds = {0};
  std::string output = "out/run";
  std::vector<std::size_t> overlap_k = {5, 10, 15, 30};
  AnalyticSpec analytic;
  OracleCheckSpec oracle_check;
  // runtime_us is wall time, so recording it makes output non-reproducible.
  bool record_timing = false;
};

// Unknown keys and ill-typed values raise ConfigError naming the field.
ExperimentConfig ParseExperimentConfig(const std::string& json_text);
ExperimentConfig LoadExperimentConfig(const std::string& path);
std::string ExperimentConfigToJson(const ExperimentConfig& config);

// Mode-specific checks; raises ConfigError naming the offending field.
// n_experts overrides the generator's N (used for replayed traces).
void ValidateExperimentConfig(const ExperimentConfig& config,
                              std::optional<std::size_t> n_experts = {});

struct OracleCheckSummary {
  std::size_t checked = 0;
  std::size_t optimal = 0;
  std::string Line() const;  // "<optimal>/<checked> optimal"
};

// Greedy-vs-brute-force comparison over spec.count random small instances.
OracleCheckSummary RunOracleCheck(const OracleCheckSpec& spec,
                                  std::uint64_t seed);

struct RunOutput {
  std::string csv_path;
  std::string manifest_path;
  std::size_t rows = 0;
  std::optional<OracleCheckSummary> oracle;
};

// Writes <output>.csv and <output>.manifest.json.
RunOutput RunExperiment(const ExperimentConfig& config);
RunOutput ReplayTrace(const std::string& trace_path,
                      const ExperimentConfig& config);

// Header of the selector CSV, fixed column order.
const std::vector<std::string>& SelectorCsvColumns();

// Recomputes the checksums listed in a manifest; false on any mismatch.
bool VerifyManifest(const std::string& manifest_path);

std::string Sha256Hex(const std::string& bytes);

}  // namespace batchmoe

#endif  // BATCHMOE_EXPERIMENT_H_
