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

#include <random>

#include "batchmoe/gating.h"
#include "batchmoe/oracle.h"
#include "doctest.h"
#include "test_util.h"

namespace batchmoe {
namespace {

using testing::RandomGating;
using testing::Uniform;
using testing::W1;

TEST_CASE("greedy on the worked instance") {
  const auto g = W1();
  CHECK(GreedySelect(g, {}, CardinalityStop{2}) == ExpertSet{0, 3});
  CHECK(BruteForceBestSubset(g, 2).set == ExpertSet{0, 3});
  CHECK(GreedySelect(g, {}, MassThresholdStop{1.0}) == ExpertSet{0, 1, 2, 3});
  CHECK(GreedySelect(g, {1}, CardinalityStop{2}) == ExpertSet{0, 1});
  CHECK(GreedySelect(g, {}, CardinalityStop{0}).empty());
  CHECK(GreedySelect(g, {1, 2, 3}, CardinalityStop{2}) == ExpertSet{1, 2, 3});
  CHECK(GreedySelect(g, {}, MassThresholdStop{0.0}).empty());
  // 1.2 / 3.0 = 0.4 reaches tau = 0.4 with e0 alone.
  CHECK(GreedySelect(g, {}, MassThresholdStop{0.4}) == ExpertSet{0});
  CHECK_THROWS_AS(GreedySelect(g, {}, MassThresholdStop{1.5}), ParameterError);
  CHECK_THROWS_AS(GreedySelect(g, {7}, CardinalityStop{1}), ParameterError);
}

TEST_CASE("threshold mode never adds massless experts") {
  const GatingMatrix g(2, 4, {0.5, 0.5, 0.0, 0.0, 0.2, 0.8, 0.0, 0.0});
  CHECK(GreedySelect(g, {}, MassThresholdStop{1.0}) == ExpertSet{0, 1});
  // Cardinality mode still fills the budget.
  CHECK(GreedySelect(g, {}, CardinalityStop{3}) == ExpertSet{0, 1, 2});
}

TEST_CASE("batch-aware selection on the worked instance") {
  SelectionBudget b;
  b.warmup_k0 = 1;
  b.per_layer_budget = 2;
  b.route_k = 2;
  const auto r = SelectBatchAware(W1(), b);
  CHECK(r.selected == ExpertSet{0, 3});
  CHECK(r.diagnostics.warmup_size == 2);
  CHECK(r.diagnostics.greedy_additions == 0);
  CHECK(BaselineTopkRouting(W1(), 2).selected.size() == 4);
}

TEST_CASE("warm-up overshoot keeps every warm-up expert") {
  SelectionBudget b;
  b.warmup_k0 = 2;
  b.per_layer_budget = 1;
  b.route_k = 2;
  const auto r = SelectBatchAware(W1(), b);
  CHECK(r.selected == ExpertSet{0, 1, 2, 3});
  CHECK(r.diagnostics.greedy_additions == 0);
}

TEST_CASE("no warm-up and full budget reproduces the baseline") {
  std::mt19937_64 rng(8);
  const auto g = RandomGating(rng, 10, 12);
  SelectionBudget b;
  b.per_layer_budget = 12;
  b.route_k = 3;
  CHECK(SelectBatchAware(g, b).per_token_routes ==
        BaselineTopkRouting(g, 3).per_token_routes);
}

TEST_CASE("batch-aware errors") {
  SelectionBudget b;
  b.warmup_k0 = 5;
  b.route_k = 1;
  CHECK_THROWS_AS(SelectBatchAware(W1(), b), ParameterError);
  b.warmup_k0 = 0;
  CHECK_THROWS_AS(SelectBatchAware(W1(), b), ParameterError);  // empty
  b.per_layer_budget = 2;
  b.mass_threshold = 0.5;
  CHECK_THROWS_AS(SelectBatchAware(W1(), b), ParameterError);
  b.per_layer_budget = 0;
  CHECK(SelectBatchAware(W1(), b).selected == ExpertSet{0, 3});
}

TEST_CASE("reference config activates fewer experts than the baseline") {
  GeneratorConfig cfg;
  SelectionBudget b;
  b.warmup_k0 = 1;
  b.per_layer_budget = 24;
  b.route_k = 4;
  double selected = 0.0;
  double baseline = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    cfg.seed = seed;
    const auto g = GenerateGating(cfg, BatchSpec::Uniform(16, 0));
    selected += static_cast<double>(SelectBatchAware(g, b).selected.size());
    baseline += static_cast<double>(BaselineTopkRouting(g, 4).selected.size());
  }
  MESSAGE("mean activated " << selected / 50 << " vs baseline " << baseline / 50);
  CHECK(selected < baseline);
}

TEST_CASE("drop-least-used baseline") {
  const auto g = W1();
  CHECK(SelectDropLeastUsed(g, 0, 2).per_token_routes ==
        BaselineTopkRouting(g, 2).per_token_routes);
  CHECK(SelectDropLeastUsed(g, 1, 2).selected == ExpertSet{0, 1, 2});
  // e0 and e1 tie at two uses; e1 (higher index) goes first.
  CHECK(SelectDropLeastUsed(g, 3, 2).selected == ExpertSet{0});
  CHECK_THROWS_AS(SelectDropLeastUsed(g, 4, 2), ParameterError);
}

TEST_CASE("property: greedy matches brute force") {
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = Uniform(rng, 1, 12);
    const auto g = RandomGating(rng, Uniform(rng, 1, 6), n);
    const std::size_t m = Uniform(rng, 0, std::min<std::size_t>(6, n));
    const auto greedy = GreedySelect(g, {}, CardinalityStop{m});
    CHECK(greedy.size() == m);
    CHECK(std::abs(ProxyObjective(g, greedy) - BruteForceBestSubset(g, m).value) <=
          1e-12);
  }
}

TEST_CASE("property: nesting, warm-up containment, threshold minimality") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = Uniform(rng, 2, 32);
    const auto g = RandomGating(rng, Uniform(rng, 1, 16), n, 1.5);
    const ExpertSet init = testing::RandomSubset(rng, n, 0.1);
    const std::size_t m = Uniform(rng, 0, n - 1);

    const auto smaller = GreedySelect(g, init, CardinalityStop{m});
    const auto larger = GreedySelect(g, init, CardinalityStop{m + 1});
    CHECK(std::includes(larger.begin(), larger.end(), smaller.begin(),
                        smaller.end()));

    SelectionBudget b;
    b.warmup_k0 = Uniform(rng, 0, std::min<std::size_t>(3, n));
    b.per_layer_budget = Uniform(rng, b.warmup_k0 == 0 ? 1 : 0, n);
    b.route_k = Uniform(rng, 1, n);
    const auto r = SelectBatchAware(g, b);
    for (std::size_t i = 0; i < g.n_tokens(); ++i) {
      for (ExpertId e : TopK(g.row(i), b.warmup_k0)) CHECK(r.selected.contains(e));
      for (const Route& route : r.per_token_routes[i]) {
        CHECK(r.selected.contains(route.expert));
      }
    }

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double tau = unit(rng);
    // Greedy order is fixed, so the prefix one shorter is "minus the last".
    auto full = GreedySelect(g, {}, MassThresholdStop{tau});
    CHECK(ProxyObjective(g, full) >= tau * g.total_mass() - 1e-12);
    if (!full.empty()) {
      auto previous = GreedySelect(g, {}, CardinalityStop{full.size() - 1});
      CHECK(ProxyObjective(g, previous) < tau * g.total_mass());
    }
  }
}

TEST_CASE("batch-aware captures more mass than dropping least-used experts") {
  GeneratorConfig cfg;
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    cfg.seed = seed;
    const auto g = GenerateGating(cfg, BatchSpec::Uniform(16, 0));
    const auto dropped = SelectDropLeastUsed(g, g.n_experts() - 24, 4);
    SelectionBudget b;
    b.warmup_k0 = 1;
    b.per_layer_budget = dropped.selected.size();
    b.route_k = 4;
    const auto ours = SelectBatchAware(g, b);
    REQUIRE(ours.selected.size() == dropped.selected.size());
    wins += ours.captured_mass >= dropped.captured_mass;
  }
  MESSAGE("batch-aware wins on " << wins << "/100");
  CHECK(wins >= 80);
}

}  // namespace
}  // namespace batchmoe
