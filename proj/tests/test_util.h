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

#ifndef BATCHMOE_TESTS_TEST_UTIL_H_
#define BATCHMOE_TESTS_TEST_UTIL_H_

#include <cmath>
#include <random>
#include <vector>

#include "batchmoe/core.h"

namespace batchmoe::testing {

// Worked instance: 3 tokens x 4 experts. Column sums 1.2, 0.6, 0.5, 0.7.
inline GatingMatrix W1() {
  return GatingMatrix(3, 4,
                      {0.6, 0.3, 0.1, 0.0,  //
                       0.5, 0.1, 0.4, 0.0,  //
                       0.1, 0.2, 0.0, 0.7});
}

// Rows are softmax of standard normal logits.
inline GatingMatrix RandomGating(std::mt19937_64& rng, std::size_t n_tokens,
                                 std::size_t n_experts, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> scores;
  scores.reserve(n_tokens * n_experts);
  for (std::size_t i = 0; i < n_tokens; ++i) {
    std::vector<double> row(n_experts);
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp(normal(rng));
      sum += v;
    }
    for (double v : row) scores.push_back(v / sum);
  }
  return GatingMatrix(n_tokens, n_experts, std::move(scores));
}

inline std::size_t Uniform(std::mt19937_64& rng, std::size_t lo,
                           std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline ExpertSet RandomSubset(std::mt19937_64& rng, std::size_t n_experts,
                              double p = 0.5) {
  std::bernoulli_distribution keep(p);
  ExpertSet s;
  for (std::size_t e = 0; e < n_experts; ++e) {
    if (keep(rng)) s.insert(static_cast<ExpertId>(e));
  }
  return s;
}

inline std::vector<ExpertId> RoutedExperts(const SelectionResult& r,
                                           std::size_t token) {
  std::vector<ExpertId> out;
  for (const Route& route : r.per_token_routes[token]) {
    out.push_back(route.expert);
  }
  return out;
}

}  // namespace batchmoe::testing

#endif  // BATCHMOE_TESTS_TEST_UTIL_H_
