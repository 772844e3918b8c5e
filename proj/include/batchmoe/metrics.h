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

#ifndef BATCHMOE_METRICS_H_
#define BATCHMOE_METRICS_H_

#include <optional>
#include <string>

#include "batchmoe/core.h"

namespace batchmoe {

// Expected union size when each of b tokens picks k of n experts uniformly
// and independently: n * (1 - (1 - k/n)^b).
double ExpectedActivated(std::size_t n_experts, std::size_t k, std::size_t b);

struct ActivationReport {
  std::size_t activated = 0;
  std::size_t baseline_activated = 0;
  double reduction = 0.0;  // 1 - activated / baseline_activated
  double captured_mass = 0.0;
  double baseline_mass = 0.0;
  double mass_ratio = 0.0;  // captured_mass / baseline_mass
  std::optional<std::size_t> max_load;
  std::optional<std::size_t> baseline_max_load;
};

ActivationReport MakeActivationReport(const SelectionResult& result,
                                      const SelectionResult& baseline);

// Flat "key=value" lines; absent fields are omitted.
std::string ToKeyValue(const ActivationReport& report);

}  // namespace batchmoe

#endif  // BATCHMOE_METRICS_H_
