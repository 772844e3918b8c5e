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

#include <openssl/evp.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "batchmoe/format.h"
#include "batchmoe/metrics.h"
#include "batchmoe/oracle.h"
#include "batchmoe/select_batch.h"
#include "batchmoe/select_ep.h"
#include "batchmoe/select_spec.h"
#include "json.hpp"

namespace batchmoe {

using nlohmann::json;

std::string ModeName(Mode mode) {
  switch (mode) {
    case Mode::kBatch:
      return "batch";
    case Mode::kSpeculative:
      return "speculative";
    case Mode::kEp:
      return "ep";
    case Mode::kOverlap:
      return "overlap";
    case Mode::kAnalytic:
      return "analytic";
    case Mode::kOracleCheck:
      return "oracle-check";
  }
  return "unknown";
}

namespace {

[[noreturn]] void FieldError(const std::string& field, const std::string& why) {
  throw ConfigError("config field '" + field + "': " + why);
}

// Typed access to one JSON object with a fixed set of allowed keys.
class Fields {
 public:
  Fields(const json& j, std::string path, std::set<std::string> allowed)
      : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) FieldError(Name(), "expected an object");
    for (const auto& [key, value] : j_.items()) {
      if (!allowed.contains(key)) FieldError(Name(key), "unknown field");
    }
  }

  bool Has(const std::string& key) const { return j_.contains(key); }
  const json& Raw(const std::string& key) const { return j_.at(key); }
  std::string Name(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  std::optional<std::size_t> Count(const std::string& key) const {
    if (!Has(key)) return std::nullopt;
    const json& v = j_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      FieldError(Name(key), "expected a non-negative integer");
    }
    return v.get<std::size_t>();
  }
  std::optional<double> Real(const std::string& key) const {
    if (!Has(key)) return std::nullopt;
    const json& v = j_.at(key);
    if (!v.is_number()) FieldError(Name(key), "expected a number");
    return v.get<double>();
  }
  std::optional<std::string> Text(const std::string& key) const {
    if (!Has(key)) return std::nullopt;
    const json& v = j_.at(key);
    if (!v.is_string()) FieldError(Name(key), "expected a string");
    return v.get<std::string>();
  }
  std::optional<bool> Flag(const std::string& key) const {
    if (!Has(key)) return std::nullopt;
    const json& v = j_.at(key);
    if (!v.is_boolean()) FieldError(Name(key), "expected true or false");
    return v.get<bool>();
  }
  template <typename T>
  std::optional<std::vector<T>> List(const std::string& key) const {
    if (!Has(key)) return std::nullopt;
    const json& v = j_.at(key);
    if (!v.is_array()) FieldError(Name(key), "expected an array");
    try {
      if constexpr (std::is_unsigned_v<T>) {
        for (const auto& item : v) {
          if (!item.is_number_integer() || item.get<long long>() < 0) {
            FieldError(Name(key), "expected non-negative integers");
          }
        }
      }
      return v.get<std::vector<T>>();
    } catch (const json::exception& e) {
      FieldError(Name(key), e.what());
    }
  }

 private:
  const json& j_;
  std::string path_;
};

Mode ParseMode(const std::string& name) {
  for (Mode m : {Mode::kBatch, Mode::kSpeculative, Mode::kEp, Mode::kOverlap,
                 Mode::kAnalytic, Mode::kOracleCheck}) {
    if (ModeName(m) == name) return m;
  }
  FieldError("mode", "unknown mode '" + name +
                         "' (batch, speculative, ep, overlap, analytic, "
                         "oracle-check)");
}

}  // namespace

ExperimentConfig ParseExperimentConfig(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  const Fields top(root, "",
                   {"mode", "generator", "batch", "route_k", "budgets",
                    "partition", "layers", "seeds", "output", "overlap",
                    "analytic", "oracle_check", "record_timing"});
  ExperimentConfig cfg;
  const auto mode = top.Text("mode");
  if (!mode) FieldError("mode", "required");
  cfg.mode = ParseMode(*mode);

  if (top.Has("generator")) {
    const Fields gen(top.Raw("generator"), "generator",
                     {"n_experts", "temperature", "sigma_dataset",
                      "sigma_request", "sigma_token", "base_logit_profile",
                      "seed"});
    auto& g = cfg.generator;
    g.n_experts = gen.Count("n_experts").value_or(g.n_experts);
    g.temperature = gen.Real("temperature").value_or(g.temperature);
    g.sigma_dataset = gen.Real("sigma_dataset").value_or(g.sigma_dataset);
    g.sigma_request = gen.Real("sigma_request").value_or(g.sigma_request);
    g.sigma_token = gen.Real("sigma_token").value_or(g.sigma_token);
    g.base_logit_profile = gen.List<double>("base_logit_profile");
    if (gen.Has("seed")) {
      g.seed = *gen.Count("seed");
      cfg.seeds = {g.seed};
    }
  }
  if (top.Has("batch")) {
    const Fields b(top.Raw("batch"), "batch",
                   {"n_requests", "spec_tokens", "dataset_tags"});
    cfg.batch.n_requests = b.Count("n_requests").value_or(cfg.batch.n_requests);
    cfg.batch.spec_tokens =
        b.Count("spec_tokens").value_or(cfg.batch.spec_tokens);
    cfg.batch.dataset_tags =
        b.List<std::string>("dataset_tags").value_or(cfg.batch.dataset_tags);
  }
  cfg.route_k = top.Count("route_k").value_or(cfg.route_k);
  if (top.Has("budgets")) {
    const json& list = top.Raw("budgets");
    if (!list.is_array()) FieldError("budgets", "expected an array");
    for (std::size_t i = 0; i < list.size(); ++i) {
      const Fields p(list[i], "budgets[" + std::to_string(i) + "]",
                     {"k0", "m_l", "m_r", "m", "m_g", "tau"});
      cfg.budgets.push_back({p.Count("k0"), p.Count("m_l"), p.Count("m_r"),
                             p.Count("m"), p.Count("m_g"), p.Real("tau")});
    }
  }
  if (top.Has("partition")) {
    const Fields p(top.Raw("partition"), "partition",
                   {"n_gpus", "gpu_sizes", "file"});
    cfg.partition.n_gpus = p.Count("n_gpus").value_or(0);
    cfg.partition.gpu_sizes =
        p.List<std::size_t>("gpu_sizes").value_or(std::vector<std::size_t>{});
    cfg.partition.file = p.Text("file").value_or("");
  }
  cfg.layers = top.Count("layers").value_or(cfg.layers);
  if (auto seeds = top.List<std::uint64_t>("seeds")) cfg.seeds = *seeds;
  cfg.output = top.Text("output").value_or(cfg.output);
  if (top.Has("overlap")) {
    const Fields o(top.Raw("overlap"), "overlap", {"k_values"});
    cfg.overlap_k = o.List<std::size_t>("k_values").value_or(cfg.overlap_k);
  }
  if (top.Has("analytic")) {
    const Fields a(top.Raw("analytic"), "analytic",
                   {"n_experts", "k", "b_min", "b_max"});
    auto& an = cfg.analytic;
    an.n_experts = a.Count("n_experts").value_or(an.n_experts);
    an.k = a.Count("k").value_or(an.k);
    an.b_min = a.Count("b_min").value_or(an.b_min);
    an.b_max = a.Count("b_max").value_or(an.b_max);
  }
  if (top.Has("oracle_check")) {
    const Fields o(top.Raw("oracle_check"), "oracle_check",
                   {"count", "max_n", "max_tokens", "max_m"});
    auto& oc = cfg.oracle_check;
    oc.count = o.Count("count").value_or(oc.count);
    oc.max_n = o.Count("max_n").value_or(oc.max_n);
    oc.max_tokens = o.Count("max_tokens").value_or(oc.max_tokens);
    oc.max_m = o.Count("max_m").value_or(oc.max_m);
  }
  cfg.record_timing = top.Flag("record_timing").value_or(false);
  return cfg;
}

ExperimentConfig LoadExperimentConfig(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open config file " + path);
  std::ostringstream buf;
  buf << file.rdbuf();
  return ParseExperimentConfig(buf.str());
}

namespace {

json ConfigJson(const ExperimentConfig& cfg) {
  json gen = {{"n_experts", cfg.generator.n_experts},
              {"temperature", cfg.generator.temperature},
              {"sigma_dataset", cfg.generator.sigma_dataset},
              {"sigma_request", cfg.generator.sigma_request},
              {"sigma_token", cfg.generator.sigma_token}};
  if (cfg.generator.base_logit_profile) {
    gen["base_logit_profile"] = *cfg.generator.base_logit_profile;
  }
  json budgets = json::array();
  for (const SweepPoint& p : cfg.budgets) {
    json point = json::object();
    if (p.k0) point["k0"] = *p.k0;
    if (p.m_l) point["m_l"] = *p.m_l;
    if (p.m_r) point["m_r"] = *p.m_r;
    if (p.m) point["m"] = *p.m;
    if (p.m_g) point["m_g"] = *p.m_g;
    if (p.tau) point["tau"] = *p.tau;
    budgets.push_back(point);
  }
  json partition = {{"n_gpus", cfg.partition.n_gpus},
                    {"gpu_sizes", cfg.partition.gpu_sizes}};
  if (!cfg.partition.file.empty()) partition["file"] = cfg.partition.file;
  return {
      {"mode", ModeName(cfg.mode)},
      {"generator", gen},
      {"batch",
       {{"n_requests", cfg.batch.n_requests},
        {"spec_tokens", cfg.batch.spec_tokens},
        {"dataset_tags", cfg.batch.dataset_tags}}},
      {"route_k", cfg.route_k},
      {"budgets", budgets},
      {"partition", partition},
      {"layers", cfg.layers},
      {"seeds", cfg.seeds},
      {"output", cfg.output},
      {"overlap", {{"k_values", cfg.overlap_k}}},
      {"analytic",
       {{"n_experts", cfg.analytic.n_experts},
        {"k", cfg.analytic.k},
        {"b_min", cfg.analytic.b_min},
        {"b_max", cfg.analytic.b_max}}},
      {"oracle_check",
       {{"count", cfg.oracle_check.count},
        {"max_n", cfg.oracle_check.max_n},
        {"max_tokens", cfg.oracle_check.max_tokens},
        {"max_m", cfg.oracle_check.max_m}}},
      {"record_timing", cfg.record_timing},
  };
}

}  // namespace

std::string ExperimentConfigToJson(const ExperimentConfig& config) {
  return ConfigJson(config).dump(2);
}

void ValidateExperimentConfig(const ExperimentConfig& cfg,
                              std::optional<std::size_t> n_experts) {
  if (cfg.output.empty()) FieldError("output", "must not be empty");
  if (cfg.mode == Mode::kAnalytic) {
    const auto& a = cfg.analytic;
    if (a.n_experts < 1) FieldError("analytic.n_experts", "must be >= 1");
    if (a.k < 1 || a.k > a.n_experts) {
      FieldError("analytic.k", "must lie in [1, n_experts]");
    }
    if (a.b_min < 1) FieldError("analytic.b_min", "must be >= 1");
    if (a.b_max < a.b_min) FieldError("analytic.b_max", "must be >= b_min");
    return;
  }
  if (cfg.seeds.empty()) FieldError("seeds", "must list at least one seed");
  if (cfg.mode == Mode::kOracleCheck) {
    const auto& o = cfg.oracle_check;
    if (o.count < 1) FieldError("oracle_check.count", "must be >= 1");
    if (o.max_n < 1 || o.max_n > 20) {
      FieldError("oracle_check.max_n", "must lie in [1, 20]");
    }
    if (o.max_tokens < 1) FieldError("oracle_check.max_tokens", "must be >= 1");
    return;
  }

  try {
    ValidateGeneratorConfig(cfg.generator);
  } catch (const ConfigError& e) {
    FieldError("generator", e.what());
  }
  const std::size_t n = n_experts.value_or(cfg.generator.n_experts);
  if (cfg.layers < 1) FieldError("layers", "must be >= 1");
  if (cfg.batch.n_requests < 1) FieldError("batch.n_requests", "must be >= 1");

  if (cfg.mode == Mode::kOverlap) {
    if (cfg.overlap_k.empty()) FieldError("overlap.k_values", "must not be empty");
    for (std::size_t k : cfg.overlap_k) {
      if (k < 1 || k > n) FieldError("overlap.k_values", "each k must lie in [1, N]");
    }
    return;
  }

  if (cfg.route_k < 1 || cfg.route_k > n) {
    FieldError("route_k", "must lie in [1, N=" + std::to_string(n) + "]");
  }
  if (cfg.budgets.empty()) FieldError("budgets", "must list at least one point");
  for (std::size_t i = 0; i < cfg.budgets.size(); ++i) {
    const SweepPoint& p = cfg.budgets[i];
    const std::string at = "budgets[" + std::to_string(i) + "]";
    auto require = [&](const auto& field, const char* name) {
      if (!field) FieldError(at + "." + name, "required in " + ModeName(cfg.mode) + " mode");
    };
    require(p.k0, "k0");
    if (*p.k0 > n) FieldError(at + ".k0", "exceeds N=" + std::to_string(n));
    switch (cfg.mode) {
      case Mode::kBatch:
        if (p.m_l.has_value() == p.tau.has_value()) {
          FieldError(at + ".m_l", "batch mode needs exactly one of m_l or tau");
        }
        if (p.tau && !(*p.tau >= 0.0 && *p.tau <= 1.0)) {
          FieldError(at + ".tau", "must lie in [0, 1]");
        }
        if (p.m_l && *p.m_l == 0 && *p.k0 == 0) {
          FieldError(at + ".m_l", "k0 = 0 and m_l = 0 select nothing");
        }
        break;
      case Mode::kSpeculative:
        require(p.m_r, "m_r");
        require(p.m, "m");
        if (*p.k0 == 0 && *p.m_r == 0 && *p.m == 0) {
          FieldError(at + ".m_r", "k0, m_r and m all zero select nothing");
        }
        break;
      case Mode::kEp:
        require(p.m_g, "m_g");
        if (*p.k0 == 0 && *p.m_g == 0) {
          FieldError(at + ".m_g", "k0 = 0 and m_g = 0 select nothing");
        }
        break;
      default:
        break;
    }
  }
  if (cfg.mode == Mode::kEp) {
    const auto& part = cfg.partition;
    const int sources = (part.n_gpus > 0) + !part.gpu_sizes.empty() +
                        !part.file.empty();
    if (sources != 1) {
      FieldError("partition", "ep mode needs exactly one of n_gpus, gpu_sizes or file");
    }
    if (part.n_gpus > n) FieldError("partition.n_gpus", "must not exceed N");
    if (!part.gpu_sizes.empty()) {
      std::size_t total = 0;
      for (std::size_t s : part.gpu_sizes) total += s;
      if (total != n) FieldError("partition.gpu_sizes", "must sum to N=" + std::to_string(n));
    }
  }
}

std::string OracleCheckSummary::Line() const {
  return std::to_string(optimal) + "/" + std::to_string(checked) + " optimal";
}

const std::vector<std::string>& SelectorCsvColumns() {
  static const std::vector<std::string> columns = {
      "mode",          "seed",        "layer",
      "n_requests",    "L_s",         "N",
      "k",             "k0",          "m_l",
      "m_r",           "m",           "m_g",
      "G",             "activated",   "baseline_activated",
      "reduction",     "captured_mass", "baseline_mass",
      "max_load",      "baseline_max_load", "runtime_us",
      "tau",           "source"};
  return columns;
}

std::string Sha256Hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(),
                 nullptr) != 1) {
    throw IoError("SHA-256 computation failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

namespace {

using Row = std::vector<std::string>;

std::string Cell(std::optional<std::size_t> v) {
  return v ? std::to_string(*v) : std::string();
}
std::string Cell(std::optional<double> v) {
  return v ? FormatDouble(*v) : std::string();
}

std::string JoinCsv(const std::vector<Row>& rows,
                    const std::vector<std::string>& header) {
  std::string out;
  auto append = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out.push_back(',');
      out += cells[i];
    }
    out.push_back('\n');
  };
  append(header);
  for (const Row& r : rows) append(r);
  return out;
}

void WriteFile(const std::filesystem::path& path, const std::string& bytes) {
  std::error_code ec;
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << bytes;
  out.close();
  if (!out) throw IoError("failed writing " + path.string());
}

std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

ExpertPartition BuildPartition(const PartitionSpec& spec,
                               std::size_t n_experts) {
  if (!spec.file.empty()) {
    ExpertPartition part = LoadPartition(spec.file);
    if (part.n_experts() != n_experts) {
      throw ConfigError("config field 'partition.file': covers " +
                        std::to_string(part.n_experts()) +
                        " experts, gating has " + std::to_string(n_experts));
    }
    return part;
  }
  if (!spec.gpu_sizes.empty()) {
    std::vector<int> assignment;
    for (std::size_t gpu = 0; gpu < spec.gpu_sizes.size(); ++gpu) {
      assignment.insert(assignment.end(), spec.gpu_sizes[gpu],
                        static_cast<int>(gpu));
    }
    return ExpertPartition(spec.gpu_sizes.size(), std::move(assignment));
  }
  return ExpertPartition::Contiguous(n_experts, spec.n_gpus);
}

SelectionBudget ToBudget(const SweepPoint& p, std::size_t route_k) {
  SelectionBudget b;
  b.warmup_k0 = p.k0.value_or(0);
  b.per_layer_budget = p.m_l.value_or(0);
  b.per_request_budget = p.m_r.value_or(0);
  b.batch_budget = p.m.value_or(0);
  b.per_gpu_budget = p.m_g.value_or(0);
  b.mass_threshold = p.tau;
  b.route_k = route_k;
  return b;
}

// Uniform speculative length, or empty when requests differ.
std::optional<std::size_t> UniformSpecLength(const BatchSpec& batch) {
  std::optional<std::size_t> len;
  for (const auto& r : batch.requests) {
    if (len && *len != r.n_spec_tokens) return std::nullopt;
    len = r.n_spec_tokens;
  }
  return len;
}

struct LayerInput {
  std::optional<std::uint64_t> seed;
  const GatingMatrix* gating;
  const BatchSpec* batch;
  std::string source;
};

std::vector<Row> SelectorRows(const ExperimentConfig& cfg,
                              const LayerInput& in) {
  const GatingMatrix& g = *in.gating;
  const SelectionResult baseline = BaselineTopkRouting(g, cfg.route_k);
  std::optional<ExpertPartition> part;
  std::optional<std::size_t> baseline_max;
  if (cfg.mode == Mode::kEp) {
    part = BuildPartition(cfg.partition, g.n_experts());
    baseline_max = MaxLoad(GpuLoads(baseline.selected, *part));
  }
  std::vector<Row> rows;
  for (const SweepPoint& p : cfg.budgets) {
    const SelectionBudget budget = ToBudget(p, cfg.route_k);
    const auto start = std::chrono::steady_clock::now();
    SelectionResult result;
    switch (cfg.mode) {
      case Mode::kBatch:
        result = SelectBatchAware(g, budget);
        break;
      case Mode::kSpeculative:
        result = SelectSpeculative(g, *in.batch, budget);
        break;
      case Mode::kEp:
        result = SelectEpAware(g, *part, budget);
        break;
      default:
        throw ConfigError("mode " + ModeName(cfg.mode) + " has no selector");
    }
    const auto elapsed = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::steady_clock::now() - start);
    const ActivationReport report = MakeActivationReport(result, baseline);
    const bool ep = cfg.mode == Mode::kEp;
    std::optional<std::size_t> runtime;
    if (cfg.record_timing) runtime = static_cast<std::size_t>(elapsed.count());
    rows.push_back({
        ModeName(cfg.mode),
        in.seed ? std::to_string(*in.seed) : std::string(),
        std::to_string(g.layer_id()),
        std::to_string(in.batch->requests.size()),
        Cell(UniformSpecLength(*in.batch)),
        std::to_string(g.n_experts()),
        std::to_string(cfg.route_k),
        Cell(p.k0),
        Cell(p.m_l),
        Cell(p.m_r),
        Cell(p.m),
        Cell(p.m_g),
        ep ? std::to_string(part->n_gpus()) : std::string(),
        std::to_string(report.activated),
        std::to_string(report.baseline_activated),
        FormatDouble(report.reduction),
        FormatDouble(report.captured_mass),
        FormatDouble(report.baseline_mass),
        Cell(report.max_load),
        Cell(baseline_max),
        Cell(runtime),
        Cell(p.tau),
        in.source,
    });
  }
  return rows;
}

const std::vector<std::string>& OverlapColumns() {
  static const std::vector<std::string> columns = {
      "mode", "seed", "layer", "k", "population", "mean_overlap", "n_pairs",
      "sampled", "source"};
  return columns;
}

std::vector<Row> OverlapRows(const ExperimentConfig& cfg,
                             const LayerInput& in) {
  const std::uint64_t seed = in.seed.value_or(0);
  std::vector<Row> rows;
  for (const OverlapRow& r :
       OverlapStatistics(*in.gating, *in.batch, cfg.overlap_k, seed)) {
    const std::pair<const char*, const OverlapStat*> pops[] = {
        {"same_request", &r.same_request},
        {"same_dataset", &r.same_dataset},
        {"different_dataset", &r.different_dataset}};
    for (const auto& [name, stat] : pops) {
      rows.push_back({ModeName(cfg.mode),
                      in.seed ? std::to_string(*in.seed) : std::string(),
                      std::to_string(in.gating->layer_id()),
                      std::to_string(r.k), name, Cell(stat->mean),
                      std::to_string(stat->n_pairs),
                      stat->sampled ? "1" : "0", in.source});
    }
  }
  return rows;
}

std::vector<Row> LayerRows(const ExperimentConfig& cfg, const LayerInput& in) {
  return cfg.mode == Mode::kOverlap ? OverlapRows(cfg, in)
                                    : SelectorRows(cfg, in);
}

const std::vector<std::string>& ColumnsFor(Mode mode) {
  static const std::vector<std::string> analytic = {"mode", "N", "k", "B",
                                                    "expected"};
  static const std::vector<std::string> oracle = {
      "mode", "instance", "N", "n_tokens", "m", "greedy_value",
      "oracle_value", "optimal"};
  switch (mode) {
    case Mode::kAnalytic:
      return analytic;
    case Mode::kOracleCheck:
      return oracle;
    case Mode::kOverlap:
      return OverlapColumns();
    default:
      return SelectorCsvColumns();
  }
}

std::vector<Row> AnalyticRows(const AnalyticSpec& a) {
  std::vector<Row> rows;
  for (std::size_t b = a.b_min; b <= a.b_max; ++b) {
    rows.push_back({"analytic", std::to_string(a.n_experts),
                    std::to_string(a.k), std::to_string(b),
                    FormatDouble(ExpectedActivated(a.n_experts, a.k, b))});
  }
  return rows;
}

constexpr double kOracleTolerance = 1e-12;

std::vector<Row> OracleRows(const OracleCheckSpec& spec, std::uint64_t seed,
                            OracleCheckSummary& summary) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Row> rows;
  for (std::size_t inst = 0; inst < spec.count; ++inst) {
    const std::size_t n =
        std::uniform_int_distribution<std::size_t>(1, spec.max_n)(rng);
    const std::size_t tokens =
        std::uniform_int_distribution<std::size_t>(1, spec.max_tokens)(rng);
    const std::size_t m = std::uniform_int_distribution<std::size_t>(
        0, std::min(spec.max_m, n))(rng);
    std::vector<double> scores;
    for (std::size_t i = 0; i < tokens; ++i) {
      std::vector<double> row(n);
      double sum = 0.0;
      for (double& v : row) {
        v = std::exp(normal(rng));
        sum += v;
      }
      for (double v : row) scores.push_back(v / sum);
    }
    const GatingMatrix g(tokens, n, std::move(scores));
    const double greedy =
        ProxyObjective(g, GreedySelect(g, {}, CardinalityStop{m}));
    const double best = BruteForceBestSubset(g, m).value;
    const bool optimal = std::abs(greedy - best) <= kOracleTolerance;
    ++summary.checked;
    summary.optimal += optimal;
    rows.push_back({"oracle-check", std::to_string(inst), std::to_string(n),
                    std::to_string(tokens), std::to_string(m),
                    FormatDouble(greedy), FormatDouble(best),
                    optimal ? "1" : "0"});
  }
  return rows;
}

RunOutput WriteOutputs(const ExperimentConfig& cfg,
                       const std::vector<Row>& rows, const json& extra) {
  RunOutput out;
  const std::filesystem::path prefix(cfg.output);
  const std::filesystem::path csv = prefix.string() + ".csv";
  const std::filesystem::path manifest = prefix.string() + ".manifest.json";
  const std::string csv_bytes = JoinCsv(rows, ColumnsFor(cfg.mode));
  WriteFile(csv, csv_bytes);

  json m = {{"tool", "batchmoe"},
            {"version", kVersion},
            {"config", ConfigJson(cfg)},
            {"rows", rows.size()},
            {"files",
             json::array({{{"name", csv.filename().string()},
                           {"bytes", csv_bytes.size()},
                           {"sha256", Sha256Hex(csv_bytes)}}})}};
  m.update(extra);
  WriteFile(manifest, m.dump(2) + "\n");
  out.csv_path = csv.string();
  out.manifest_path = manifest.string();
  out.rows = rows.size();
  return out;
}

}  // namespace

OracleCheckSummary RunOracleCheck(const OracleCheckSpec& spec,
                                  std::uint64_t seed) {
  OracleCheckSummary summary;
  OracleRows(spec, seed, summary);
  return summary;
}

RunOutput RunExperiment(const ExperimentConfig& cfg) {
  ValidateExperimentConfig(cfg);
  std::vector<Row> rows;
  json extra = {{"source", "synthetic"}};
  if (cfg.mode == Mode::kAnalytic) {
    rows = AnalyticRows(cfg.analytic);
    return WriteOutputs(cfg, rows, extra);
  }
  if (cfg.mode == Mode::kOracleCheck) {
    OracleCheckSummary summary;
    rows = OracleRows(cfg.oracle_check, cfg.seeds.front(), summary);
    extra["summary"] = summary.Line();
    RunOutput out = WriteOutputs(cfg, rows, extra);
    out.oracle = summary;
    return out;
  }

  const BatchSpec batch = BatchSpec::Uniform(
      cfg.batch.n_requests, cfg.batch.spec_tokens, cfg.batch.dataset_tags);
  // One task per seed; rows are joined in (seed, layer, sweep) order.
  std::vector<std::future<std::vector<Row>>> tasks;
  for (std::uint64_t seed : cfg.seeds) {
    tasks.push_back(std::async(std::launch::async, [&cfg, &batch, seed] {
      GeneratorConfig gen = cfg.generator;
      gen.seed = seed;
      std::vector<Row> seed_rows;
      for (std::size_t layer = 0; layer < cfg.layers; ++layer) {
        const GatingMatrix g =
            GenerateGating(gen, batch, static_cast<int>(layer));
        auto layer_rows = LayerRows(cfg, {seed, &g, &batch, "synthetic"});
        seed_rows.insert(seed_rows.end(), layer_rows.begin(), layer_rows.end());
      }
      return seed_rows;
    }));
  }
  for (auto& task : tasks) {
    auto seed_rows = task.get();
    rows.insert(rows.end(), seed_rows.begin(), seed_rows.end());
  }
  return WriteOutputs(cfg, rows, extra);
}

RunOutput ReplayTrace(const std::string& trace_path,
                      const ExperimentConfig& cfg) {
  if (cfg.mode == Mode::kAnalytic || cfg.mode == Mode::kOracleCheck) {
    FieldError("mode", "replay supports batch, speculative, ep and overlap");
  }
  const Trace trace = LoadTrace(trace_path);
  ValidateExperimentConfig(cfg, trace.layers.begin()->second.n_experts());
  std::vector<Row> rows;
  for (const auto& [layer, g] : trace.layers) {
    auto layer_rows = LayerRows(cfg, {std::nullopt, &g, &trace.batch, "trace"});
    rows.insert(rows.end(), layer_rows.begin(), layer_rows.end());
  }
  json extra = {{"source", "trace"},
                {"trace", std::filesystem::path(trace_path).filename().string()},
                {"trace_sha256", Sha256Hex(ReadFile(trace_path))}};
  return WriteOutputs(cfg, rows, extra);
}

bool VerifyManifest(const std::string& manifest_path) {
  const std::filesystem::path path(manifest_path);
  json m;
  try {
    m = json::parse(ReadFile(path));
  } catch (const json::exception& e) {
    throw FormatError("manifest " + manifest_path + " is not valid JSON");
  }
  for (const auto& f : m.at("files")) {
    const auto file = path.parent_path() / f.at("name").get<std::string>();
    if (!std::filesystem::exists(file)) return false;
    if (Sha256Hex(ReadFile(file)) != f.at("sha256").get<std::string>()) {
      return false;
    }
  }
  return true;
}

}  // namespace batchmoe
