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

#include "batchmoe/experiment.h"

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <unistd.h>

#include "doctest.h"

namespace batchmoe {
namespace {

namespace fs = std::filesystem;

std::string Slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void Spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::vector<std::string> Split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

// CSV rows as header -> cell maps.
std::vector<std::map<std::string, std::string>> ReadCsv(const std::string& path) {
  std::istringstream in(Slurp(path));
  std::string line;
  std::getline(in, line);
  const auto header = Split(line);
  std::vector<std::map<std::string, std::string>> rows;
  while (std::getline(in, line)) {
    const auto cells = Split(line);
    REQUIRE(cells.size() == header.size());
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size(); ++i) row[header[i]] = cells[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("batchmoe_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const {
    return (path / name).string();
  }
};

ExperimentConfig Parse(const std::string& text, const TempDir& dir) {
  ExperimentConfig cfg = ParseExperimentConfig(text);
  cfg.output = dir / "run";
  return cfg;
}

std::string ErrorOf(const std::string& text) {
  try {
    ValidateExperimentConfig(ParseExperimentConfig(text));
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST_CASE("config errors name the field") {
  CHECK(ErrorOf(R"({"mode": "batch", "budgets": [{"m_l": 4}]})").find("k0") !=
        std::string::npos);
  CHECK(ErrorOf(R"({"mode": "batch", "colour": 1})").find("colour") !=
        std::string::npos);
  CHECK(ErrorOf(R"({"mode": "warp"})").find("mode") != std::string::npos);
  CHECK(ErrorOf(R"({"mode": "ep", "budgets": [{"k0": 1, "m_g": 2}]})")
            .find("partition") != std::string::npos);
  CHECK(ErrorOf(R"({"mode": "batch", "route_k": 0, "budgets": [{"k0": 1, "m_l": 2}]})")
            .find("route_k") != std::string::npos);
  CHECK(ErrorOf(R"({"mode": "batch", "generator": {"temperature": "hot"}})")
            .find("temperature") != std::string::npos);
  CHECK(ErrorOf(R"({"mode": "speculative", "budgets": [{"k0": 1, "m_r": 2}]})")
            .find("m") != std::string::npos);
  CHECK_THROWS_AS(ParseExperimentConfig("{not json"), ConfigError);
  CHECK(ErrorOf(R"({"mode": "batch", "budgets": [{"k0": 1, "m_l": 4}]})").empty());
}

TEST_CASE("config round trips through JSON") {
  const auto cfg = ParseExperimentConfig(
      R"({"mode": "ep", "partition": {"n_gpus": 4}, "seeds": [3, 4],
          "budgets": [{"k0": 1, "m_g": 2}], "route_k": 2})");
  const auto again = ParseExperimentConfig(ExperimentConfigToJson(cfg));
  CHECK(again.mode == Mode::kEp);
  CHECK(again.partition.n_gpus == 4);
  CHECK(again.seeds == std::vector<std::uint64_t>{3, 4});
  CHECK(again.route_k == 2);
  CHECK(*again.budgets.at(0).m_g == 2);
}

TEST_CASE("batch mode rows") {
  TempDir dir;
  const auto cfg = Parse(R"({"mode": "batch", "seeds": [0, 1], "layers": 2,
      "generator": {"n_experts": 64}, "batch": {"n_requests": 8},
      "route_k": 4,
      "budgets": [{"k0": 1, "m_l": 16}, {"k0": 2, "m_l": 4}, {"k0": 1, "tau": 0.5}]})",
                         dir);
  const auto out = RunExperiment(cfg);
  CHECK(out.rows == 12);
  const auto rows = ReadCsv(out.csv_path);
  REQUIRE(rows.size() == 12);
  CHECK(rows[0].at("seed") == "0");
  CHECK(rows[0].at("layer") == "0");
  CHECK(rows[11].at("seed") == "1");
  for (const auto& row : rows) {
    CHECK(row.at("mode") == "batch");
    CHECK(row.at("N") == "64");
    CHECK(row.at("m_r").empty());
    CHECK(row.at("max_load").empty());
    CHECK(row.at("runtime_us").empty());
    CHECK(row.at("source") == "synthetic");
    const auto activated = std::stoul(row.at("activated"));
    CHECK(activated <= 64);
    CHECK(activated >= 1);
    CHECK(std::stod(row.at("captured_mass")) <= 1.0);
    if (row.at("tau").empty()) {
      CHECK(activated >= std::stoul(row.at("m_l")));
    } else {
      CHECK(std::stod(row.at("captured_mass")) >= 0.5);
    }
  }
  CHECK(VerifyManifest(out.manifest_path));
  CHECK(std::ifstream(out.csv_path).good());
}

TEST_CASE("speculative and ep modes") {
  TempDir dir;
  const auto spec = Parse(R"({"mode": "speculative",
      "batch": {"n_requests": 4, "spec_tokens": 3, "dataset_tags": ["a", "b"]},
      "budgets": [{"k0": 1, "m_r": 4, "m": 0}, {"k0": 1, "m_r": 4, "m": 40}]})",
                          dir);
  const auto spec_rows = ReadCsv(RunExperiment(spec).csv_path);
  REQUIRE(spec_rows.size() == 2);
  CHECK(spec_rows[0].at("L_s") == "3");
  CHECK(std::stoul(spec_rows[1].at("activated")) >= 40);

  TempDir dir2;
  const auto ep = Parse(R"({"mode": "ep", "generator": {"n_experts": 256},
      "batch": {"n_requests": 16}, "route_k": 8, "partition": {"n_gpus": 8},
      "budgets": [{"k0": 1, "m_g": 5}]})",
                        dir2);
  const auto ep_rows = ReadCsv(RunExperiment(ep).csv_path);
  REQUIRE(ep_rows.size() == 1);
  CHECK(ep_rows[0].at("G") == "8");
  CHECK(std::stoul(ep_rows[0].at("max_load")) <
        std::stoul(ep_rows[0].at("baseline_max_load")));
}

TEST_CASE("partition file drives ep mode") {
  TempDir dir;
  std::string lines;
  for (int e = 0; e < 16; ++e) {
    lines += "{\"expert\": " + std::to_string(e) + ", \"gpu\": " +
             std::to_string(e % 2) + "}\n";
  }
  Spit(dir / "part.jsonl", lines);
  auto cfg = Parse(R"({"mode": "ep", "generator": {"n_experts": 16},
      "batch": {"n_requests": 4}, "route_k": 2,
      "budgets": [{"k0": 1, "m_g": 3}]})",
                   dir);
  cfg.partition.file = dir / "part.jsonl";
  const auto rows = ReadCsv(RunExperiment(cfg).csv_path);
  CHECK(rows.at(0).at("G") == "2");
}

TEST_CASE("overlap mode orders populations") {
  TempDir dir;
  const auto cfg = Parse(R"({"mode": "overlap",
      "batch": {"n_requests": 32, "spec_tokens": 4,
                "dataset_tags": ["a", "b", "c", "d"]},
      "overlap": {"k_values": [10]}})",
                         dir);
  const auto rows = ReadCsv(RunExperiment(cfg).csv_path);
  REQUIRE(rows.size() == 3);
  std::map<std::string, double> mean;
  for (const auto& row : rows) mean[row.at("population")] = std::stod(row.at("mean_overlap"));
  CHECK(mean.at("same_request") > mean.at("same_dataset"));
  CHECK(mean.at("same_dataset") > mean.at("different_dataset"));
}

TEST_CASE("analytic and oracle-check modes") {
  TempDir dir;
  const auto an = Parse(R"({"mode": "analytic",
      "analytic": {"n_experts": 256, "k": 8, "b_min": 8, "b_max": 9}})",
                        dir);
  const auto rows = ReadCsv(RunExperiment(an).csv_path);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].at("B") == "8");
  CHECK(std::stod(rows[0].at("expected")) ==
        doctest::Approx(57.42083078599535).epsilon(1e-12));

  TempDir dir2;
  const auto oc = Parse(R"({"mode": "oracle-check"})", dir2);
  const auto out = RunExperiment(oc);
  REQUIRE(out.oracle.has_value());
  CHECK(out.oracle->Line() == "500/500 optimal");
  CHECK(RunOracleCheck({}, 0).Line() == "500/500 optimal");
}

TEST_CASE("replaying traces") {
  TempDir dir;
  Spit(dir / "one.jsonl",
       R"({"layer": 0, "request": 0, "token": 0, "scores": [0.1, 0.2, 0.3, 0.4]})"
       "\n");
  auto cfg = Parse(R"({"mode": "batch", "route_k": 1,
      "budgets": [{"k0": 1, "m_l": 1}, {"k0": 1, "m_l": 3}]})",
                   dir);
  const auto one = ReadCsv(ReplayTrace(dir / "one.jsonl", cfg).csv_path);
  REQUIRE(one.size() == 2);
  CHECK(one[0].at("source") == "trace");
  CHECK(one[0].at("N") == "4");
  CHECK(one[0].at("activated") == "1");

  // Two layers of one-hot rows.
  std::string text;
  for (int layer : {0, 1}) {
    for (int token = 0; token < 3; ++token) {
      std::vector<std::string> s(4, "0");
      s[(token + layer) % 4] = "1";
      text += "{\"layer\": " + std::to_string(layer) +
              ", \"request\": 0, \"token\": " + std::to_string(token) +
              ", \"scores\": [" + s[0] + "," + s[1] + "," + s[2] + "," + s[3] +
              "]}\n";
    }
  }
  Spit(dir / "two.jsonl", text);
  const auto two = ReadCsv(ReplayTrace(dir / "two.jsonl", cfg).csv_path);
  REQUIRE(two.size() == 4);
  CHECK(two[0].at("layer") == "0");
  CHECK(two[2].at("layer") == "1");
  for (const auto& row : two) CHECK(std::stod(row.at("captured_mass")) == 1.0);

  CHECK_THROWS_AS(ReplayTrace(dir / "missing.jsonl", cfg), IoError);
  auto wide = cfg;
  wide.route_k = 9;
  CHECK_THROWS_AS(ReplayTrace(dir / "one.jsonl", wide), ConfigError);
}

TEST_CASE("reruns are byte-identical and manifests detect tampering") {
  TempDir dir;
  const auto cfg = Parse(R"({"mode": "speculative", "seeds": [5, 6, 7],
      "batch": {"n_requests": 6, "spec_tokens": 2},
      "budgets": [{"k0": 1, "m_r": 3, "m": 20}]})",
                         dir);
  const auto first = RunExperiment(cfg);
  const std::string csv = Slurp(first.csv_path);
  const std::string manifest = Slurp(first.manifest_path);
  const auto second = RunExperiment(cfg);
  CHECK(Slurp(second.csv_path) == csv);
  CHECK(Slurp(second.manifest_path) == manifest);
  CHECK(VerifyManifest(first.manifest_path));
  Spit(first.csv_path, csv + "x");
  CHECK_FALSE(VerifyManifest(first.manifest_path));
}

TEST_CASE("unwritable output is an I/O error") {
  TempDir dir;
  Spit(dir / "file", "");
  auto cfg = Parse(R"({"mode": "analytic"})", dir);
  cfg.output = dir / "file/sub/run";
  CHECK_THROWS_AS(RunExperiment(cfg), IoError);
}

TEST_CASE("sha256 of known strings") {
  CHECK(Sha256Hex("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(Sha256Hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

}  // namespace
}  // namespace batchmoe
