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
// Per-layer batch-aware selection: greedy over gating column sums with a
// warm-up floor, followed by refinement.
//

#ifndef BATCHMOE_SELECT_BATCH_H_
#define BATCHMOE_SELECT_BATCH_H_

#include <variant>

#include "batchmoe/core.h"

namespace batchmoe {

// Grow until |S| >= m.
struct CardinalityStop {
  std::size_t m = 0;
};
// Grow until proxy(S) >= tau * proxy(all experts).
struct MassThresholdStop {
  double tau = 1.0;
};
using GreedyStop = std::variant<CardinalityStop, MassThresholdStop>;

// Starting from init, repeatedly adds the unselected expert with the largest
// column sum (lowest index on ties). Because the proxy is modular this is
// exactly the marginal-gain greedy, and from an empty init the cardinality
// form returns the optimal top-m set. In threshold mode growth also stops
// once no remaining expert carries any mass.
ExpertSet GreedySelect(const GatingMatrix& g, const ExpertSet& init,
                       const GreedyStop& stop);

// Warm-up with each token's top-k0, greedy up to per_layer_budget (or to
// mass_threshold when set), then refine to route_k. Warm-up experts are never
// dropped, even if they already exceed the budget.
SelectionResult SelectBatchAware(const GatingMatrix& g,
                                 const SelectionBudget& budget);

// Comparison baseline: rank experts by how many tokens use them under plain
// top-k, drop the n_drop least used (highest index first on ties) and refine
// within the survivors.
SelectionResult SelectDropLeastUsed(const GatingMatrix& g, std::size_t n_drop,
                                    std::size_t k);

}  // namespace batchmoe

#endif  // BATCHMOE_SELECT_BATCH_H_
