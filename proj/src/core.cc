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

#include "batchmoe/core.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace batchmoe {

GatingMatrix::GatingMatrix(std::size_t n_tokens, std::size_t n_experts,
                           std::vector<double> scores, int layer_id)
    : n_tokens_(n_tokens),
      n_experts_(n_experts),
      scores_(std::move(scores)),
      layer_id_(layer_id),
      column_sums_(n_experts, 0.0),
      total_mass_(0.0) {
  if (n_tokens_ == 0 || n_experts_ == 0) {
    throw ParameterError("gating matrix needs at least one token and expert");
  }
  if (scores_.size() != n_tokens_ * n_experts_) {
    throw ParameterError("gating matrix has " + std::to_string(scores_.size()) +
                         " scores, expected " +
                         std::to_string(n_tokens_ * n_experts_));
  }
  for (double v : scores_) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ParameterError("gating scores must be finite and non-negative");
    }
  }
  for (std::size_t i = 0; i < n_tokens_; ++i) {
    for (std::size_t j = 0; j < n_experts_; ++j) column_sums_[j] += at(i, j);
  }
  for (double c : column_sums_) total_mass_ += c;
}

std::vector<double> GatingMatrix::column_sums(
    std::span<const std::size_t> tokens) const {
  std::vector<double> sums(n_experts_, 0.0);
  for (std::size_t i : tokens) {
    if (i >= n_tokens_) throw ParameterError("token index out of range");
    for (std::size_t j = 0; j < n_experts_; ++j) sums[j] += at(i, j);
  }
  return sums;
}

std::size_t BatchSpec::total_tokens() const {
  std::size_t total = 0;
  for (const auto& r : requests) total += 1 + r.n_spec_tokens;
  return total;
}

std::vector<std::vector<std::size_t>> BatchSpec::token_groups() const {
  std::vector<std::vector<std::size_t>> groups;
  groups.reserve(requests.size());
  std::size_t next = 0;
  for (const auto& r : requests) {
    std::vector<std::size_t> rows(1 + r.n_spec_tokens);
    std::iota(rows.begin(), rows.end(), next);
    next += rows.size();
    groups.push_back(std::move(rows));
  }
  return groups;
}

std::vector<std::size_t> BatchSpec::token_owner() const {
  std::vector<std::size_t> owner;
  owner.reserve(total_tokens());
  for (std::size_t r = 0; r < requests.size(); ++r) {
    owner.insert(owner.end(), 1 + requests[r].n_spec_tokens, r);
  }
  return owner;
}

BatchSpec BatchSpec::Uniform(std::size_t n_requests, std::size_t n_spec_tokens,
                             const std::vector<std::string>& tags) {
  BatchSpec batch;
  for (std::size_t r = 0; r < n_requests; ++r) {
    batch.requests.push_back(
        {static_cast<int>(r), n_spec_tokens,
         tags.empty() ? std::string("default") : tags[r % tags.size()]});
  }
  return batch;
}

ExpertPartition::ExpertPartition(std::size_t n_gpus,
                                 std::vector<int> assignment)
    : n_gpus_(n_gpus), assignment_(std::move(assignment)), groups_(n_gpus) {
  if (n_gpus_ == 0) throw PartitionError("partition needs at least one GPU");
  if (assignment_.empty()) throw PartitionError("partition covers no experts");
  for (std::size_t e = 0; e < assignment_.size(); ++e) {
    const int gpu = assignment_[e];
    if (gpu < 0 || static_cast<std::size_t>(gpu) >= n_gpus_) {
      throw PartitionError("expert " + std::to_string(e) +
                           " assigned to GPU " + std::to_string(gpu) +
                           " outside [0, " + std::to_string(n_gpus_) + ")");
    }
    groups_[gpu].push_back(static_cast<ExpertId>(e));
  }
}

ExpertPartition ExpertPartition::Contiguous(std::size_t n_experts,
                                            std::size_t n_gpus) {
  if (n_gpus == 0 || n_gpus > n_experts) {
    throw PartitionError("contiguous partition needs 1 <= G <= N");
  }
  std::vector<int> assignment(n_experts);
  const std::size_t base = n_experts / n_gpus;
  const std::size_t extra = n_experts % n_gpus;
  std::size_t e = 0;
  for (std::size_t gpu = 0; gpu < n_gpus; ++gpu) {
    const std::size_t size = base + (gpu < extra ? 1 : 0);
    for (std::size_t i = 0; i < size; ++i) {
      assignment[e++] = static_cast<int>(gpu);
    }
  }
  return ExpertPartition(n_gpus, std::move(assignment));
}

int ExpertPartition::gpu_of(ExpertId expert) const {
  if (expert < 0 || static_cast<std::size_t>(expert) >= assignment_.size()) {
    throw PartitionError("expert " + std::to_string(expert) +
                         " is not covered by the partition");
  }
  return assignment_[expert];
}

namespace {

// Best-first order: higher score, then lower index.
struct ScoreOrder {
  std::span<const double> scores;
  bool operator()(ExpertId a, ExpertId b) const {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  }
};

std::vector<ExpertId> TopKOf(std::vector<ExpertId> candidates,
                             std::span<const double> scores, std::size_t k) {
  k = std::min(k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + k,
                    candidates.end(), ScoreOrder{scores});
  candidates.resize(k);
  return candidates;
}

}  // namespace

std::vector<ExpertId> TopK(std::span<const double> scores, std::size_t k) {
  std::vector<ExpertId> all(scores.size());
  std::iota(all.begin(), all.end(), 0);
  return TopKOf(std::move(all), scores, k);
}

std::vector<ExpertId> TopK(std::span<const double> scores, std::size_t k,
                           const ExpertSet& among) {
  return TopKOf(std::vector<ExpertId>(among.begin(), among.end()), scores, k);
}

ExpertSet WarmupSet(const GatingMatrix& g, std::size_t k0) {
  if (k0 > g.n_experts()) {
    throw ParameterError("warm-up k0=" + std::to_string(k0) +
                         " exceeds the number of experts " +
                         std::to_string(g.n_experts()));
  }
  ExpertSet warmup;
  if (k0 == 0) return warmup;
  for (std::size_t i = 0; i < g.n_tokens(); ++i) {
    for (ExpertId e : TopK(g.row(i), k0)) warmup.insert(e);
  }
  return warmup;
}

void CheckExpertSet(const GatingMatrix& g, const ExpertSet& s) {
  if (!s.empty() &&
      (*s.begin() < 0 ||
       static_cast<std::size_t>(*s.rbegin()) >= g.n_experts())) {
    throw ParameterError("expert set contains an index outside [0, " +
                         std::to_string(g.n_experts()) + ")");
  }
}

double ProxyObjective(const GatingMatrix& g, const ExpertSet& s) {
  CheckExpertSet(g, s);
  double total = 0.0;
  for (ExpertId e : s) total += g.column_sums()[e];
  return total;
}

double CapturedMass(const GatingMatrix& g, const ExpertSet& s) {
  if (s.empty()) return 0.0;
  if (g.total_mass() <= 0.0) return 1.0;
  return std::clamp(ProxyObjective(g, s) / g.total_mass(), 0.0, 1.0);
}

namespace {

std::vector<Route> Renormalized(std::span<const double> row,
                                const std::vector<ExpertId>& chosen) {
  double sum = 0.0;
  for (ExpertId e : chosen) sum += row[e];
  std::vector<Route> routes;
  routes.reserve(chosen.size());
  for (ExpertId e : chosen) {
    const double w =
        sum > 0.0 ? row[e] / sum : 1.0 / static_cast<double>(chosen.size());
    routes.push_back({e, w});
  }
  return routes;
}

void CheckRouteK(const GatingMatrix& g, std::size_t k) {
  if (k < 1 || k > g.n_experts()) {
    throw ParameterError("route k=" + std::to_string(k) +
                         " outside [1, " + std::to_string(g.n_experts()) +
                         "]");
  }
}

}  // namespace

SelectionResult BaselineTopkRouting(const GatingMatrix& g, std::size_t k) {
  CheckRouteK(g, k);
  SelectionResult result;
  result.per_token_routes.reserve(g.n_tokens());
  for (std::size_t i = 0; i < g.n_tokens(); ++i) {
    const auto chosen = TopK(g.row(i), k);
    result.selected.insert(chosen.begin(), chosen.end());
    result.per_token_routes.push_back(Renormalized(g.row(i), chosen));
  }
  result.captured_mass = CapturedMass(g, result.selected);
  return result;
}

SelectionResult RefineRouting(const GatingMatrix& g, const ExpertSet& s,
                              std::size_t k) {
  if (s.empty()) throw ParameterError("refinement needs a nonempty expert set");
  CheckExpertSet(g, s);
  CheckRouteK(g, k);
  SelectionResult result;
  result.selected = s;
  result.per_token_routes.reserve(g.n_tokens());
  for (std::size_t i = 0; i < g.n_tokens(); ++i) {
    result.per_token_routes.push_back(Renormalized(g.row(i), TopK(g.row(i), k, s)));
  }
  result.captured_mass = CapturedMass(g, s);
  return result;
}

}  // namespace batchmoe
