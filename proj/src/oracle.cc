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

#include "batchmoe/oracle.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace batchmoe {

namespace {

std::vector<double> RawColumnSums(const GatingMatrix& g) {
  std::vector<double> sums(g.n_experts(), 0.0);
  for (std::size_t i = 0; i < g.n_tokens(); ++i) {
    const auto row = g.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) sums[j] += row[j];
  }
  return sums;
}

double ValueOf(const std::vector<double>& sums,
               const std::vector<ExpertId>& ids) {
  // Ascending index order, like any ordered set summation.
  std::vector<ExpertId> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  double v = 0.0;
  for (ExpertId e : sorted) v += sums[e];
  return v;
}

// Calls visit(indices) for every r-combination of pool in lexicographic order.
template <typename Visit>
void ForEachCombination(const std::vector<ExpertId>& pool, std::size_t r,
                        Visit&& visit) {
  const std::size_t n = pool.size();
  if (r > n) return;
  std::vector<std::size_t> idx(r);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<ExpertId> chosen(r);
  while (true) {
    for (std::size_t i = 0; i < r; ++i) chosen[i] = pool[idx[i]];
    visit(chosen);
    std::size_t i = r;
    while (i > 0 && idx[i - 1] == n - r + (i - 1)) --i;
    if (i == 0) return;
    ++idx[i - 1];
    for (std::size_t j = i; j < r; ++j) idx[j] = idx[j - 1] + 1;
  }
}

}  // namespace

std::uint64_t Binomial(std::uint64_t n, std::uint64_t r) {
  if (r > n) return 0;
  r = std::min(r, n - r);
  std::uint64_t c = 1;
  for (std::uint64_t i = 1; i <= r; ++i) {
    const std::uint64_t num = n - r + i;
    // c * num / i stays exact because c * num is divisible by i.
    if (c > std::numeric_limits<std::uint64_t>::max() / num) {
      return std::numeric_limits<std::uint64_t>::max();
    }
    c = c * num / i;
  }
  return c;
}

OracleAnswer BruteForceBestSubset(const GatingMatrix& g, std::size_t m) {
  const std::size_t n = g.n_experts();
  if (m > n) throw ParameterError("subset size exceeds the number of experts");
  if (Binomial(n, m) > kMaxOracleCandidates) {
    throw SizeError("C(" + std::to_string(n) + ", " + std::to_string(m) +
                    ") exceeds the 10^6 enumeration guard; use smaller N or m");
  }
  const std::vector<double> sums = RawColumnSums(g);
  std::vector<ExpertId> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  OracleAnswer best;
  bool have = false;
  ForEachCombination(pool, m, [&](const std::vector<ExpertId>& c) {
    const double v = ValueOf(sums, c);
    if (!have || v > best.value) {
      best.value = v;
      best.set = ExpertSet(c.begin(), c.end());
      have = true;
    }
  });
  return best;
}

OracleAnswer BruteForceBestBalanced(const GatingMatrix& g,
                                    const ExpertPartition& part,
                                    std::size_t m_g) {
  if (part.n_experts() != g.n_experts()) {
    throw PartitionError("partition does not match the gating matrix");
  }
  std::uint64_t candidates = 1;
  for (const auto& experts : part.groups()) {
    std::uint64_t options = 0;
    for (std::size_t r = 0; r <= std::min(m_g, experts.size()); ++r) {
      options += Binomial(experts.size(), r);
    }
    if (options != 0 && candidates > kMaxOracleCandidates / options) {
      throw SizeError(
          "balanced enumeration exceeds the 10^6 guard; use fewer experts per "
          "GPU or a smaller m_g");
    }
    candidates *= options;
  }

  // Every feasible choice per GPU, then their cartesian product.
  std::vector<std::vector<std::vector<ExpertId>>> choices;
  for (const auto& experts : part.groups()) {
    std::vector<std::vector<ExpertId>> local;
    for (std::size_t r = 0; r <= std::min(m_g, experts.size()); ++r) {
      ForEachCombination(experts, r, [&](const std::vector<ExpertId>& c) {
        local.push_back(c);
      });
    }
    choices.push_back(std::move(local));
  }
  const std::vector<double> sums = RawColumnSums(g);
  std::vector<std::size_t> pick(choices.size(), 0);
  OracleAnswer best;
  bool have = false;
  while (true) {
    std::vector<ExpertId> set;
    for (std::size_t gpu = 0; gpu < choices.size(); ++gpu) {
      const auto& c = choices[gpu][pick[gpu]];
      set.insert(set.end(), c.begin(), c.end());
    }
    const double v = ValueOf(sums, set);
    if (!have || v > best.value) {
      best.value = v;
      best.set = ExpertSet(set.begin(), set.end());
      have = true;
    }
    std::size_t gpu = 0;
    while (gpu < pick.size() && ++pick[gpu] == choices[gpu].size()) {
      pick[gpu++] = 0;
    }
    if (gpu == pick.size()) break;
  }
  return best;
}

OracleAnswer SeparableBestBalanced(const GatingMatrix& g,
                                   const ExpertPartition& part,
                                   std::size_t m_g) {
  if (part.n_experts() != g.n_experts()) {
    throw PartitionError("partition does not match the gating matrix");
  }
  const std::vector<double> sums = RawColumnSums(g);
  std::vector<ExpertId> chosen;
  for (auto experts : part.groups()) {
    std::stable_sort(experts.begin(), experts.end(),
                     [&](ExpertId a, ExpertId b) { return sums[a] > sums[b]; });
    const std::size_t take = std::min(m_g, experts.size());
    chosen.insert(chosen.end(), experts.begin(), experts.begin() + take);
  }
  return {ExpertSet(chosen.begin(), chosen.end()), ValueOf(sums, chosen)};
}

MonteCarloEstimate MonteCarloActivation(std::size_t n_experts, std::size_t k,
                                        std::size_t b, std::size_t trials,
                                        std::uint64_t seed) {
  if (n_experts == 0 || k < 1 || k > n_experts) {
    throw ParameterError("Monte Carlo activation needs 1 <= k <= N");
  }
  if (trials < 1) throw ParameterError("Monte Carlo needs at least one trial");
  std::mt19937_64 rng(seed);
  std::vector<ExpertId> perm(n_experts);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::size_t> seen(n_experts, 0);
  std::size_t stamp = 0;
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    ++stamp;
    std::size_t unique = 0;
    for (std::size_t token = 0; token < b; ++token) {
      // Partial Fisher-Yates: the first k slots become a uniform k-subset.
      for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n_experts - 1);
        std::swap(perm[i], perm[pick(rng)]);
        if (seen[perm[i]] != stamp) {
          seen[perm[i]] = stamp;
          ++unique;
        }
      }
    }
    sum += static_cast<double>(unique);
    sum_sq += static_cast<double>(unique) * static_cast<double>(unique);
  }
  const double n = static_cast<double>(trials);
  MonteCarloEstimate est;
  est.mean = sum / n;
  if (trials > 1) {
    const double var = std::max(0.0, (sum_sq - n * est.mean * est.mean) / (n - 1));
    est.std_error = std::sqrt(var / n);
  }
  return est;
}

}  // namespace batchmoe
