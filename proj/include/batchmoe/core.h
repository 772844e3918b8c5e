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
// Core routing types: gating matrices, batch structure, budgets and the
// top-k / refinement primitives every selector is built from.
//

#ifndef BATCHMOE_CORE_H_
#define BATCHMOE_CORE_H_

#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace batchmoe {

// Error hierarchy. Everything a caller can fix by changing its input derives
// from ValidationError; IoError covers files that cannot be read or written.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ParameterError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};
class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};
class ParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};
class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};
class PartitionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};
class SizeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using ExpertId = int;
// Ordered so iteration, printing and summation order are deterministic.
using ExpertSet = std::set<ExpertId>;

// Dense n_tokens x n_experts matrix of non-negative gating scores, row-major.
class GatingMatrix {
 public:
  GatingMatrix(std::size_t n_tokens, std::size_t n_experts,
               std::vector<double> scores, int layer_id = 0);

  std::size_t n_tokens() const { return n_tokens_; }
  std::size_t n_experts() const { return n_experts_; }
  int layer_id() const { return layer_id_; }

  double at(std::size_t token, std::size_t expert) const {
    return scores_[token * n_experts_ + expert];
  }
  std::span<const double> row(std::size_t token) const {
    return {scores_.data() + token * n_experts_, n_experts_};
  }
  const std::vector<double>& scores() const { return scores_; }

  // Per-expert score totals over all tokens.
  const std::vector<double>& column_sums() const { return column_sums_; }
  // Column sums restricted to a subset of token rows.
  std::vector<double> column_sums(std::span<const std::size_t> tokens) const;

  double total_mass() const { return total_mass_; }

  bool operator==(const GatingMatrix& other) const = default;

 private:
  std::size_t n_tokens_;
  std::size_t n_experts_;
  std::vector<double> scores_;
  int layer_id_;
  std::vector<double> column_sums_;
  double total_mass_;
};

struct RequestSpec {
  int request_id = 0;
  std::size_t n_spec_tokens = 0;  // each request owns 1 + n_spec_tokens rows
  std::string dataset_tag;

  bool operator==(const RequestSpec&) const = default;
};

// Rows of the paired gating matrix are laid out request by request, in order.
struct BatchSpec {
  std::vector<RequestSpec> requests;

  std::size_t total_tokens() const;
  // Row indices owned by each request, in request order.
  std::vector<std::vector<std::size_t>> token_groups() const;
  // Owning request position for every row.
  std::vector<std::size_t> token_owner() const;

  // n_requests requests with identical speculative length; dataset tags are
  // assigned round-robin from `tags` (a single "default" tag when empty).
  static BatchSpec Uniform(std::size_t n_requests, std::size_t n_spec_tokens,
                           const std::vector<std::string>& tags = {});

  bool operator==(const BatchSpec&) const = default;
};

struct SelectionBudget {
  std::size_t per_layer_budget = 0;  // m_l, 0 disables the greedy stage
  std::size_t warmup_k0 = 0;
  std::size_t per_request_budget = 0;  // m_r
  std::size_t batch_budget = 0;        // m, 0 disables the batch stage
  std::optional<double> mass_threshold;
  std::size_t per_gpu_budget = 0;  // m_g
  std::size_t route_k = 1;
};

struct Route {
  ExpertId expert;
  double weight;

  bool operator==(const Route&) const = default;
};

struct SelectionDiagnostics {
  std::size_t warmup_size = 0;
  std::size_t greedy_additions = 0;
  std::optional<std::vector<std::size_t>> per_gpu_loads;
};

struct SelectionResult {
  ExpertSet selected;
  std::vector<std::vector<Route>> per_token_routes;
  double captured_mass = 0.0;
  SelectionDiagnostics diagnostics;
};

// Disjoint assignment of every expert to one of n_gpus groups.
class ExpertPartition {
 public:
  ExpertPartition(std::size_t n_gpus, std::vector<int> assignment);

  // Contiguous blocks; the first n_experts % n_gpus groups get one extra.
  static ExpertPartition Contiguous(std::size_t n_experts, std::size_t n_gpus);

  std::size_t n_gpus() const { return n_gpus_; }
  std::size_t n_experts() const { return assignment_.size(); }
  int gpu_of(ExpertId expert) const;
  const std::vector<int>& assignment() const { return assignment_; }
  // Experts hosted by each GPU, ascending.
  const std::vector<std::vector<ExpertId>>& groups() const { return groups_; }

 private:
  std::size_t n_gpus_;
  std::vector<int> assignment_;
  std::vector<std::vector<ExpertId>> groups_;
};

// Indices of the k largest entries of `scores`, best first. Ties go to the
// lower index. When `among` is given only those indices are candidates.
std::vector<ExpertId> TopK(std::span<const double> scores, std::size_t k);
std::vector<ExpertId> TopK(std::span<const double> scores, std::size_t k,
                           const ExpertSet& among);

// Union over tokens of each token's top-k experts.
ExpertSet WarmupSet(const GatingMatrix& g, std::size_t k0);

// Sum over s of per-expert column sums; 0 for the empty set.
double ProxyObjective(const GatingMatrix& g, const ExpertSet& s);

// proxy(s) / proxy(all experts). A matrix with no mass at all reports 1 for
// any nonempty selection.
double CapturedMass(const GatingMatrix& g, const ExpertSet& s);

// Standard per-token top-k routing; selected is the union over tokens.
SelectionResult BaselineTopkRouting(const GatingMatrix& g, std::size_t k);

// Route every token to its top-min(k, |s|) experts within s, renormalizing
// weights over the chosen experts (uniform if they all score zero).
SelectionResult RefineRouting(const GatingMatrix& g, const ExpertSet& s,
                              std::size_t k);

// Throws ParameterError unless every member of s is a valid expert of g.
void CheckExpertSet(const GatingMatrix& g, const ExpertSet& s);

}  // namespace batchmoe

#endif  // BATCHMOE_CORE_H_
