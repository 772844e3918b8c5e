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
// Exhaustive and Monte Carlo reference answers used to check the selectors
// and the closed-form activation model. Nothing here calls into the
// selectors; objective values are recomputed from the raw score rows.
//

#ifndef BATCHMOE_ORACLE_H_
#define BATCHMOE_ORACLE_H_

#include <cstdint>

#include "batchmoe/core.h"

namespace batchmoe {

// Enumeration guard for both exhaustive oracles.
inline constexpr std::uint64_t kMaxOracleCandidates = 1000000;

struct OracleAnswer {
  ExpertSet set;
  double value = 0.0;
};

// Best m-subset by proxy; ties go to the lexicographically smallest set.
// Throws SizeError when C(N, m) exceeds the guard.
OracleAnswer BruteForceBestSubset(const GatingMatrix& g, std::size_t m);

// Best subset with at most m_g experts on every GPU, by full enumeration of
// the per-GPU choices.
OracleAnswer BruteForceBestBalanced(const GatingMatrix& g,
                                    const ExpertPartition& part,
                                    std::size_t m_g);

// Same optimum via separability: the constraint is per GPU, so taking each
// GPU's top-m_g experts independently is optimal.
OracleAnswer SeparableBestBalanced(const GatingMatrix& g,
                                   const ExpertPartition& part,
                                   std::size_t m_g);

struct MonteCarloEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

// Union size of b independent uniform k-subsets of n experts, averaged over
// trials. Deterministic given seed.
MonteCarloEstimate MonteCarloActivation(std::size_t n_experts, std::size_t k,
                                        std::size_t b, std::size_t trials,
                                        std::uint64_t seed);

// C(n, r) saturated at UINT64_MAX.
std::uint64_t Binomial(std::uint64_t n, std::uint64_t r);

}  // namespace batchmoe

#endif  // BATCHMOE_ORACLE_H_
