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

#include "batchmoe/metrics.h"

#include <cmath>
#include <sstream>

#include "batchmoe/format.h"
#include "batchmoe/select_ep.h"

namespace batchmoe {

double ExpectedActivated(std::size_t n_experts, std::size_t k, std::size_t b) {
  if (n_experts == 0 || k < 1 || k > n_experts) {
    throw ParameterError("expected activation needs 1 <= k <= N");
  }
  if (b < 1) throw ParameterError("expected activation needs B >= 1");
  if (k == n_experts) return static_cast<double>(n_experts);
  if (b == 1) return static_cast<double>(k);
  const double n = static_cast<double>(n_experts);
  const double miss = 1.0 - static_cast<double>(k) / n;
  return n * (1.0 - std::pow(miss, static_cast<double>(b)));
}

ActivationReport MakeActivationReport(const SelectionResult& result,
                                      const SelectionResult& baseline) {
  if (result.per_token_routes.size() != baseline.per_token_routes.size()) {
    throw ParameterError(
        "activation report needs results over the same gating matrix");
  }
  if (baseline.selected.empty()) {
    throw ParameterError("baseline selection is empty");
  }
  ActivationReport report;
  report.activated = result.selected.size();
  report.baseline_activated = baseline.selected.size();
  report.reduction = 1.0 - static_cast<double>(report.activated) /
                               static_cast<double>(report.baseline_activated);
  report.captured_mass = result.captured_mass;
  report.baseline_mass = baseline.captured_mass;
  report.mass_ratio = baseline.captured_mass > 0.0
                          ? result.captured_mass / baseline.captured_mass
                          : 1.0;
  auto max_of = [](const SelectionResult& r) -> std::optional<std::size_t> {
    if (!r.diagnostics.per_gpu_loads) return std::nullopt;
    return MaxLoad(*r.diagnostics.per_gpu_loads);
  };
  report.max_load = max_of(result);
  report.baseline_max_load = max_of(baseline);
  return report;
}

std::string ToKeyValue(const ActivationReport& report) {
  std::ostringstream out;
  out << "activated=" << report.activated << "\n"
      << "baseline_activated=" << report.baseline_activated << "\n"
      << "reduction=" << FormatDouble(report.reduction) << "\n"
      << "captured_mass=" << FormatDouble(report.captured_mass) << "\n"
      << "baseline_mass=" << FormatDouble(report.baseline_mass) << "\n"
      << "mass_ratio=" << FormatDouble(report.mass_ratio) << "\n";
  if (report.max_load) out << "max_load=" << *report.max_load << "\n";
  if (report.baseline_max_load) {
    out << "baseline_max_load=" << *report.baseline_max_load << "\n";
  }
  return out.str();
}

}  // namespace batchmoe
