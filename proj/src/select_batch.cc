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

#include "batchmoe/select_batch.h"

#include <algorithm>
#include <numeric>
#include <string>

namespace batchmoe {

namespace {

// Highest column sum outside s, lowest index on ties; -1 when s is full.
ExpertId BestOutside(const std::vector<double>& column_sums,
                     const ExpertSet& s) {
  ExpertId best = -1;
  for (ExpertId e = 0; e < static_cast<ExpertId>(column_sums.size()); ++e) {
    if (s.contains(e)) continue;
    if (best < 0 || column_sums[e] > column_sums[best]) best = e;
  }
  return best;
}

}  // namespace

ExpertSet GreedySelect(const GatingMatrix& g, const ExpertSet& init,
                       const GreedyStop& stop) {
  CheckExpertSet(g, init);
  const auto& sums = g.column_sums();
  ExpertSet s = init;

  if (const auto* card = std::get_if<CardinalityStop>(&stop)) {
    while (s.size() < card->m) {
      const ExpertId e = BestOutside(sums, s);
      if (e < 0) break;
      s.insert(e);
    }
    return s;
  }

  const double tau = std::get<MassThresholdStop>(stop).tau;
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw ParameterError("mass threshold tau must lie in [0, 1]");
  }
  const double target = tau * g.total_mass();
  while (ProxyObjective(g, s) < target) {
    const ExpertId e = BestOutside(sums, s);
    if (e < 0 || sums[e] <= 0.0) break;
    s.insert(e);
  }
  return s;
}

SelectionResult SelectBatchAware(const GatingMatrix& g,
                                 const SelectionBudget& budget) {
  if (budget.mass_threshold && budget.per_layer_budget > 0) {
    throw ParameterError(
        "set either per_layer_budget or mass_threshold, not both");
  }
  const ExpertSet warmup = WarmupSet(g, budget.warmup_k0);
  GreedyStop stop = CardinalityStop{budget.per_layer_budget};
  if (budget.mass_threshold) stop = MassThresholdStop{*budget.mass_threshold};
  ExpertSet s = GreedySelect(g, warmup, stop);
  if (s.empty()) {
    throw ParameterError(
        "selection is empty: use k0 >= 1 or a nonzero budget");
  }
  SelectionResult result = RefineRouting(g, s, budget.route_k);
  result.diagnostics.warmup_size = warmup.size();
  result.diagnostics.greedy_additions = s.size() - warmup.size();
  return result;
}

SelectionResult SelectDropLeastUsed(const GatingMatrix& g, std::size_t n_drop,
                                    std::size_t k) {
  if (n_drop >= g.n_experts()) {
    throw ParameterError("n_drop=" + std::to_string(n_drop) +
                         " must be below the number of experts " +
                         std::to_string(g.n_experts()));
  }
  const SelectionResult baseline = BaselineTopkRouting(g, k);
  std::vector<std::size_t> usage(g.n_experts(), 0);
  for (const auto& routes : baseline.per_token_routes) {
    for (const Route& r : routes) ++usage[r.expert];
  }
  // Least used first; among equals the highest index goes first.
  std::vector<ExpertId> order(g.n_experts());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](ExpertId a, ExpertId b) {
    if (usage[a] != usage[b]) return usage[a] < usage[b];
    return a > b;
  });
  ExpertSet survivors(order.begin() + static_cast<std::ptrdiff_t>(n_drop),
                      order.end());
  return RefineRouting(g, survivors, k);
}

}  // namespace batchmoe
