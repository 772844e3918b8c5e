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

#include "batchmoe/select_ep.h"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace batchmoe {

std::vector<std::size_t> GpuLoads(const ExpertSet& s,
                                  const ExpertPartition& part) {
  std::vector<std::size_t> loads(part.n_gpus(), 0);
  for (ExpertId e : s) ++loads[part.gpu_of(e)];
  return loads;
}

std::size_t MaxLoad(const std::vector<std::size_t>& loads) {
  return loads.empty() ? 0 : *std::max_element(loads.begin(), loads.end());
}

namespace {

void CheckPartition(const GatingMatrix& g, const ExpertPartition& part) {
  if (part.n_experts() != g.n_experts()) {
    throw PartitionError("partition covers " +
                         std::to_string(part.n_experts()) +
                         " experts but the gating matrix has " +
                         std::to_string(g.n_experts()));
  }
}

}  // namespace

ExpertSet GpuAwareGreedy(const GatingMatrix& g, const ExpertPartition& part,
                         std::size_t m_g, const ExpertSet& init) {
  CheckPartition(g, part);
  for (ExpertId e : init) part.gpu_of(e);
  const auto& sums = g.column_sums();
  const std::size_t target = m_g * part.n_gpus();
  std::vector<std::size_t> loads = GpuLoads(init, part);
  ExpertSet s = init;
  // Round `level` tops every GPU below that load up by one expert.
  for (std::size_t level = 1; level <= m_g && s.size() < target; ++level) {
    for (std::size_t gpu = 0; gpu < part.n_gpus(); ++gpu) {
      if (s.size() >= target) break;
      if (loads[gpu] >= level) continue;
      ExpertId best = -1;
      for (ExpertId e : part.groups()[gpu]) {
        if (s.contains(e)) continue;
        if (best < 0 || sums[e] > sums[best]) best = e;
      }
      if (best < 0) continue;
      s.insert(best);
      ++loads[gpu];
    }
  }
  return s;
}

SelectionResult SelectEpAware(const GatingMatrix& g,
                              const ExpertPartition& part,
                              const SelectionBudget& budget) {
  CheckPartition(g, part);
  const ExpertSet warmup = WarmupSet(g, budget.warmup_k0);
  const ExpertSet s = GpuAwareGreedy(g, part, budget.per_gpu_budget, warmup);
  if (s.empty()) {
    throw ParameterError("selection is empty: use k0 >= 1 or m_g >= 1");
  }
  SelectionResult result = RefineRouting(g, s, budget.route_k);
  result.diagnostics.warmup_size = warmup.size();
  result.diagnostics.greedy_additions = s.size() - warmup.size();
  result.diagnostics.per_gpu_loads = GpuLoads(s, part);
  return result;
}

ExpertPartition ParsePartition(const std::string& text) {
  std::map<int, int> gpu_of;
  int max_gpu = -1;
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (raw.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "partition line " + std::to_string(line) + ": ";
    int expert = 0;
    int gpu = 0;
    try {
      const auto j = nlohmann::json::parse(raw);
      expert = j.at("expert").get<int>();
      gpu = j.at("gpu").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + e.what());
    }
    if (expert < 0 || gpu < 0) {
      throw PartitionError(where + "indices must be non-negative");
    }
    if (!gpu_of.emplace(expert, gpu).second) {
      throw PartitionError(where + "expert " + std::to_string(expert) +
                           " assigned twice");
    }
    max_gpu = std::max(max_gpu, gpu);
  }
  if (gpu_of.empty()) throw PartitionError("partition file has no entries");
  std::vector<int> assignment;
  for (const auto& [expert, gpu] : gpu_of) {
    if (expert != static_cast<int>(assignment.size())) {
      throw PartitionError("partition does not cover expert " +
                           std::to_string(assignment.size()));
    }
    assignment.push_back(gpu);
  }
  return ExpertPartition(static_cast<std::size_t>(max_gpu) + 1,
                         std::move(assignment));
}

ExpertPartition LoadPartition(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open partition file " + path);
  std::ostringstream buf;
  buf << file.rdbuf();
  return ParsePartition(buf.str());
}

}  // namespace batchmoe
