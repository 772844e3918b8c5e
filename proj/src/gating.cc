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

#include "batchmoe/gating.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <string_view>
#include <tuple>
#include <unordered_map>

#include "json.hpp"

namespace batchmoe {

namespace {

std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t Mix(std::uint64_t h, std::uint64_t v) {
  return SplitMix64(h ^ SplitMix64(v));
}

std::uint64_t HashString(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Independent stream per (seed, component kind, key...), so draws for one
// token never depend on how many other tokens exist.
template <typename... Keys>
std::mt19937_64 Stream(std::uint64_t seed, std::string_view kind,
                       Keys... keys) {
  std::uint64_t h = Mix(SplitMix64(seed), HashString(kind));
  ((h = Mix(h, static_cast<std::uint64_t>(keys))), ...);
  return std::mt19937_64(h);
}

void AddGaussian(std::vector<double>& logits, std::mt19937_64 rng,
                 double sigma) {
  if (sigma == 0.0) return;
  std::normal_distribution<double> normal(0.0, sigma);
  for (double& v : logits) v += normal(rng);
}

}  // namespace

void ValidateGeneratorConfig(const GeneratorConfig& cfg) {
  if (cfg.n_experts == 0) throw ConfigError("generator n_experts must be >= 1");
  if (!(cfg.temperature > 0.0)) {
    throw ConfigError("generator temperature must be positive");
  }
  if (!(cfg.sigma_dataset >= 0.0) || !(cfg.sigma_request >= 0.0) ||
      !(cfg.sigma_token >= 0.0)) {
    throw ConfigError("generator sigmas must be non-negative");
  }
  if (cfg.base_logit_profile &&
      cfg.base_logit_profile->size() != cfg.n_experts) {
    throw ConfigError("base_logit_profile length must equal n_experts");
  }
}

GatingMatrix GenerateGating(const GeneratorConfig& cfg, const BatchSpec& batch,
                            int layer) {
  ValidateGeneratorConfig(cfg);
  if (batch.requests.empty()) throw ParameterError("batch has no requests");
  const std::size_t n = cfg.n_experts;

  std::unordered_map<std::string, std::vector<double>> dataset_logits;
  std::vector<double> scores;
  scores.reserve(batch.total_tokens() * n);
  std::vector<double> logits(n);
  for (const RequestSpec& req : batch.requests) {
    auto [it, fresh] = dataset_logits.try_emplace(req.dataset_tag);
    if (fresh) {
      it->second.assign(n, 0.0);
      AddGaussian(it->second,
                  Stream(cfg.seed, "dataset", HashString(req.dataset_tag)),
                  cfg.sigma_dataset);
    }
    std::vector<double> request_logits = it->second;
    if (cfg.base_logit_profile) {
      for (std::size_t j = 0; j < n; ++j) {
        request_logits[j] += (*cfg.base_logit_profile)[j];
      }
    }
    AddGaussian(request_logits, Stream(cfg.seed, "request", req.request_id),
                cfg.sigma_request);

    for (std::size_t t = 0; t <= req.n_spec_tokens; ++t) {
      logits = request_logits;
      AddGaussian(logits, Stream(cfg.seed, "token", layer, req.request_id, t),
                  cfg.sigma_token);
      double peak = logits[0];
      for (double v : logits) peak = std::max(peak, v);
      double sum = 0.0;
      for (double& v : logits) {
        v = std::exp((v - peak) / cfg.temperature);
        sum += v;
      }
      for (double v : logits) scores.push_back(v / sum);
    }
  }
  return GatingMatrix(batch.total_tokens(), n, std::move(scores), layer);
}

namespace {

constexpr double kRowSumTolerance = 1e-6;

[[noreturn]] void FailAt(std::size_t line, const std::string& what,
                         bool format) {
  const std::string msg = "trace line " + std::to_string(line) + ": " + what;
  if (format) throw FormatError(msg);
  throw ParseError(msg);
}

TraceRecord ParseRecord(const std::string& text, std::size_t line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    FailAt(line, std::string("malformed JSON (") + e.what() + ")", false);
  }
  if (!j.is_object()) FailAt(line, "expected a JSON object", false);
  TraceRecord rec;
  try {
    rec.layer = j.at("layer").get<int>();
    rec.request = j.at("request").get<int>();
    rec.token = j.at("token").get<int>();
    rec.scores = j.at("scores").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    FailAt(line, std::string("bad or missing field (") + e.what() + ")", false);
  }
  return rec;
}

}  // namespace

Trace ParseTrace(const std::string& text) {
  struct Row {
    std::size_t line;
    std::vector<double> scores;
  };
  // layer -> (request, token) -> row
  std::map<int, std::map<std::pair<int, int>, Row>> by_layer;
  std::optional<std::size_t> n_experts;

  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (raw.find_first_not_of(" \t\r") == std::string::npos) continue;
    TraceRecord rec = ParseRecord(raw, line);
    if (rec.scores.empty()) FailAt(line, "empty scores array", true);
    if (!n_experts) n_experts = rec.scores.size();
    if (rec.scores.size() != *n_experts) {
      FailAt(line,
             "has " + std::to_string(rec.scores.size()) +
                 " scores, earlier lines have " + std::to_string(*n_experts),
             true);
    }
    double sum = 0.0;
    for (double v : rec.scores) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        FailAt(line, "scores must be finite and non-negative", true);
      }
      sum += v;
    }
    if (!(sum > 0.0)) FailAt(line, "scores sum to zero", true);
    if (std::abs(sum - 1.0) > kRowSumTolerance) {
      for (double& v : rec.scores) v /= sum;
    }
    auto [it, fresh] = by_layer[rec.layer].try_emplace(
        {rec.request, rec.token}, Row{line, std::move(rec.scores)});
    if (!fresh) {
      FailAt(line,
             "duplicate (layer, request, token) first seen on line " +
                 std::to_string(it->second.line),
             true);
    }
  }
  if (by_layer.empty()) throw FormatError("trace contains no records");

  // Every layer must cover the same (request, token) keys.
  const auto& first = by_layer.begin()->second;
  for (const auto& [layer, rows] : by_layer) {
    bool same = rows.size() == first.size();
    for (auto a = rows.begin(), b = first.begin(); same && a != rows.end();
         ++a, ++b) {
      same = a->first == b->first;
    }
    if (!same) {
      throw FormatError("trace layer " + std::to_string(layer) +
                        " does not cover the same (request, token) rows as "
                        "layer " +
                        std::to_string(by_layer.begin()->first));
    }
  }

  Trace trace;
  for (const auto& [key, row] : first) {
    if (trace.batch.requests.empty() ||
        trace.batch.requests.back().request_id != key.first) {
      trace.batch.requests.push_back({key.first, 0, "trace"});
    } else {
      ++trace.batch.requests.back().n_spec_tokens;
    }
  }
  for (auto& [layer, rows] : by_layer) {
    std::vector<double> scores;
    scores.reserve(rows.size() * *n_experts);
    for (auto& [key, row] : rows) {
      scores.insert(scores.end(), row.scores.begin(), row.scores.end());
    }
    trace.layers.emplace(
        layer, GatingMatrix(rows.size(), *n_experts, std::move(scores), layer));
  }
  return trace;
}

Trace LoadTrace(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open trace file " + path);
  std::ostringstream buf;
  buf << file.rdbuf();
  return ParseTrace(buf.str());
}

std::string TraceRecordToJson(const TraceRecord& record) {
  nlohmann::json j = {{"layer", record.layer},
                      {"request", record.request},
                      {"token", record.token},
                      {"scores", record.scores}};
  return j.dump();
}

}  // namespace batchmoe
