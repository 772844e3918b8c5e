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
// Expert-parallel selection: experts live on G GPU groups and the slowest
// group sets layer latency, so selection fills GPUs round-robin.
//

#ifndef BATCHMOE_SELECT_EP_H_
#define BATCHMOE_SELECT_EP_H_

#include <string>
#include <vector>

#include "batchmoe/core.h"

namespace batchmoe {

// Load_g(S) = |S ∩ E_g| for every GPU g.
std::vector<std::size_t> GpuLoads(const ExpertSet& s,
                                  const ExpertPartition& part);
std::size_t MaxLoad(const std::vector<std::size_t>& loads);

// Round-robin greedy by levels. Round r = 1..m_g visits GPUs in ascending
// index and gives every GPU whose load is still below r its unselected expert
// with the highest column sum; GPUs with nothing left are skipped. The size
// check |S| >= m_g * G runs before every addition. From an empty init this is
// plain round-robin; in general MaxLoad(S) <= max(MaxLoad(init), m_g).
ExpertSet GpuAwareGreedy(const GatingMatrix& g, const ExpertPartition& part,
                         std::size_t m_g, const ExpertSet& init);

// Warm-up with per-token top-k0, GPU-aware greedy to per_gpu_budget, refine
// to route_k. Diagnostics carry per-GPU loads.
SelectionResult SelectEpAware(const GatingMatrix& g,
                              const ExpertPartition& part,
                              const SelectionBudget& budget);

// Partition file: JSON Lines of {"expert": e, "gpu": g}. Every expert in
// [0, N) must appear exactly once; G is one past the largest GPU index.
ExpertPartition LoadPartition(const std::string& path);
ExpertPartition ParsePartition(const std::string& text);

}  // namespace batchmoe

#endif  // BATCHMOE_SELECT_EP_H_
