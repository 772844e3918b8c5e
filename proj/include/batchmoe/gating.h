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
// Gating-score sources: a seeded hierarchical synthetic router and a
// JSON Lines trace reader for captured router scores.
//

#ifndef BATCHMOE_GATING_H_
#define BATCHMOE_GATING_H_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "batchmoe/core.h"

namespace batchmoe {

// Token logits are base + dataset + request + token components, each an
// independent zero-mean Gaussian vector drawn once per dataset tag, request
// id and token respectively. Rows are softmax(logits / temperature).
struct GeneratorConfig {
  std::size_t n_experts = 128;
  double temperature = 1.0;
  double sigma_dataset = 1.0;
  double sigma_request = 1.5;
  double sigma_token = 0.75;
  std::optional<std::vector<double>> base_logit_profile;
  std::uint64_t seed = 0;
};

// Throws ConfigError on a non-positive temperature, negative sigma or a
// profile whose length differs from n_experts.
void ValidateGeneratorConfig(const GeneratorConfig& cfg);

GatingMatrix GenerateGating(const GeneratorConfig& cfg, const BatchSpec& batch,
                            int layer = 0);

struct TraceRecord {
  int layer = 0;
  int request = 0;
  int token = 0;
  std::vector<double> scores;
};

struct Trace {
  std::map<int, GatingMatrix> layers;
  BatchSpec batch;
};

// One JSON object per line with fields layer, request, token, scores.
// Rows are ordered by (request, token); requests get dataset tag "trace".
Trace LoadTrace(const std::string& path);
Trace ParseTrace(const std::string& text);

std::string TraceRecordToJson(const TraceRecord& record);

}  // namespace batchmoe

#endif  // BATCHMOE_GATING_H_
