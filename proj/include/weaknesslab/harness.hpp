#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "weaknesslab/data_io.hpp"
#include "weaknesslab/errors.hpp"
#include "weaknesslab/fcv.hpp"
#include "weaknesslab/format.hpp"
#include "weaknesslab/mlp.hpp"
#include "weaknesslab/regions.hpp"
#include "weaknesslab/reparam.hpp"
#include "weaknesslab/rng.hpp"
#include "weaknesslab/sharpness.hpp"
#include "weaknesslab/stats.hpp"

// Experiment orchestration: train pools of networks, measure every quantity,
// persist one JSON record per network (resumable), and aggregate correlation
// and cross-regime tables.
//
// Determinism contract: every output byte except wall-clock timings is a
// function of (config, data files). Per-network seeds are derived with
// mix64(master_seed, index), work items are independent, and aggregation is
// keyed by network index, so worker count cannot change results.

namespace weaknesslab {

using nlohmann::json;

struct MarginPolicy {
  enum class Kind { fixed, adaptive };
  Kind kind = Kind::fixed;
  double value = 1e-3;  // fixed margin; adaptive uses max_margin / 2
};

struct MeasureToggles {
  bool hessian = true;
  bool regions = true;
  bool pair_proxy = true;
  bool ea = true;
};

struct SyntheticSpec {
  std::size_t n_pool = 6000;
  std::size_t n_test = 2000;
  std::uint64_t seed = 9000;
  std::size_t gauss_dim = 16;
  std::size_t gauss_classes = 10;
};

struct ExperimentConfig {
  int version = 1;
  std::string dataset = "synthetic-digits";
  std::string data_dir;  // empty -> WEAKNESSLAB_DATA_DIR
  int h1 = 64, h2 = 8;
  std::size_t n_train = 250, n_probe = 100;
  int n_networks = 100;
  int batch_size = 64;
  double lr_min = 0.01, lr_max = 0.05;
  int max_epochs = 500;
  double target_train_accuracy = 1.0;
  MarginPolicy margin;
  std::string probe_source = "train_leftover";  // or "test_set"
  int hessian_probes = 50;
  std::uint64_t master_seed = 1;
  std::string output_dir;
  MeasureToggles measure;
  int workers = 0;  // 0 -> hardware concurrency
  SyntheticSpec synthetic;

  void validate() const {
    if (version != 1) throw ConfigError("config: unsupported version");
    if (n_networks < 1) throw ConfigError("config: n_networks must be >= 1");
    if (h1 < 1 || h2 < 1) throw ConfigError("config: widths must be positive");
    if (n_train == 0) throw ConfigError("config: n_train must be positive");
    if (batch_size < 1) throw ConfigError("config: batch_size must be positive");
    if (!(lr_min > 0.0) || lr_max < lr_min)
      throw ConfigError("config: learning-rate range invalid");
    if (max_epochs < 1) throw ConfigError("config: max_epochs must be positive");
    if (target_train_accuracy > 1.0)
      throw ConfigError("config: target_train_accuracy > 1");
    if (margin.kind == MarginPolicy::Kind::fixed && !(margin.value > 0.0))
      throw ConfigError("config: fixed margin must be > 0");
    if (probe_source != "train_leftover" && probe_source != "test_set")
      throw ConfigError("config: probe_source must be train_leftover or test_set");
    if (hessian_probes < 1) throw ConfigError("config: hessian_probes must be >= 1");
    if (output_dir.empty()) throw ConfigError("config: output_dir required");
    if (dataset != "mnist" && dataset != "fashion-mnist" &&
        dataset != "synthetic-digits" && dataset != "synthetic-gaussian")
      throw ConfigError("config: unknown dataset '" + dataset + "'");
  }
};

// --- config JSON (schema version 1) -----------------------------------------

inline json config_to_json(const ExperimentConfig& c) {
  json j;
  j["version"] = c.version;
  j["dataset"] = c.dataset;
  j["data_dir"] = c.data_dir;
  j["h1"] = c.h1;
  j["h2"] = c.h2;
  j["n_train"] = c.n_train;
  j["n_probe"] = c.n_probe;
  j["n_networks"] = c.n_networks;
  j["batch_size"] = c.batch_size;
  j["lr_range"] = {c.lr_min, c.lr_max};
  j["max_epochs"] = c.max_epochs;
  j["target_train_accuracy"] = c.target_train_accuracy;
  j["margin_policy"] = {
      {"kind", c.margin.kind == MarginPolicy::Kind::fixed ? "fixed" : "adaptive"},
      {"value", c.margin.value}};
  j["probe_source"] = c.probe_source;
  j["hessian_probes"] = c.hessian_probes;
  j["master_seed"] = c.master_seed;
  j["output_dir"] = c.output_dir;
  j["measure"] = {{"hessian", c.measure.hessian},
                  {"regions", c.measure.regions},
                  {"pair_proxy", c.measure.pair_proxy},
                  {"ea", c.measure.ea}};
  j["workers"] = c.workers;
  j["synthetic"] = {{"n_pool", c.synthetic.n_pool},
                    {"n_test", c.synthetic.n_test},
                    {"seed", c.synthetic.seed},
                    {"gauss_dim", c.synthetic.gauss_dim},
                    {"gauss_classes", c.synthetic.gauss_classes}};
  return j;
}

inline ExperimentConfig config_from_json(const json& j) {
  static const std::set<std::string> known = {
      "version",      "dataset",     "data_dir",       "h1",
      "h2",           "n_train",     "n_probe",        "n_networks",
      "batch_size",   "lr_range",    "max_epochs",     "target_train_accuracy",
      "margin_policy", "probe_source", "hessian_probes", "master_seed",
      "output_dir",   "measure",     "workers",        "synthetic"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("config: unknown key '" + it.key() + "'");
  ExperimentConfig c;
  try {
    c.version = j.value("version", 1);
    c.dataset = j.value("dataset", c.dataset);
    c.data_dir = j.value("data_dir", c.data_dir);
    c.h1 = j.value("h1", c.h1);
    c.h2 = j.value("h2", c.h2);
    c.n_train = j.value("n_train", c.n_train);
    c.n_probe = j.value("n_probe", c.n_probe);
    c.n_networks = j.value("n_networks", c.n_networks);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("lr_range")) {
      c.lr_min = j["lr_range"].at(0).get<double>();
      c.lr_max = j["lr_range"].at(1).get<double>();
    }
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.target_train_accuracy = j.value("target_train_accuracy", c.target_train_accuracy);
    if (j.contains("margin_policy")) {
      const json& m = j["margin_policy"];
      std::string kind = m.value("kind", "fixed");
      if (kind == "fixed")
        c.margin.kind = MarginPolicy::Kind::fixed;
      else if (kind == "adaptive")
        c.margin.kind = MarginPolicy::Kind::adaptive;
      else
        throw ConfigError("config: margin_policy.kind must be fixed or adaptive");
      c.margin.value = m.value("value", c.margin.value);
    }
    c.probe_source = j.value("probe_source", c.probe_source);
    c.hessian_probes = j.value("hessian_probes", c.hessian_probes);
    c.master_seed = j.value("master_seed", c.master_seed);
    c.output_dir = j.value("output_dir", c.output_dir);
    if (j.contains("measure")) {
      const json& m = j["measure"];
      c.measure.hessian = m.value("hessian", true);
      c.measure.regions = m.value("regions", true);
      c.measure.pair_proxy = m.value("pair_proxy", true);
      c.measure.ea = m.value("ea", true);
    }
    c.workers = j.value("workers", 0);
    if (j.contains("synthetic")) {
      const json& s = j["synthetic"];
      c.synthetic.n_pool = s.value("n_pool", c.synthetic.n_pool);
      c.synthetic.n_test = s.value("n_test", c.synthetic.n_test);
      c.synthetic.seed = s.value("seed", c.synthetic.seed);
      c.synthetic.gauss_dim = s.value("gauss_dim", c.synthetic.gauss_dim);
      c.synthetic.gauss_classes = s.value("gauss_classes", c.synthetic.gauss_classes);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return config_from_json(j);
}

// --- run records -------------------------------------------------------------

struct RunRecord {
  int net_index = 0;
  std::uint64_t seed = 0;
  double learning_rate = 0.0;
  std::string status = "ok";  // or "diverged"
  double achieved_train_accuracy = 0.0;
  int epochs = 0;
  double test_accuracy = 0.0;
  std::optional<double> hessian_trace;
  std::uint64_t hessian_probe_seed = 0;
  int hessian_n_probes = 0;
  std::optional<double> weight_l1, weight_l2;
  std::optional<long long> l1_count, l2_count, k_free;
  std::optional<long long> free_params, free_params_train_only;
  std::optional<double> region_weakness_log_val;
  std::optional<long long> pair_proxy_count;
  std::optional<double> pair_proxy_margin;
  long long lp_count = 0;
  std::optional<double> ea;
  bool ea_no_errors = false;
  // Timings are informational only and excluded from determinism checks.
  double train_seconds = 0.0, measure_seconds = 0.0, lp_seconds = 0.0;
};

namespace detail {

template <typename T>
inline json opt_json(const std::optional<T>& v) {
  if (v) return json(*v);
  return json(nullptr);
}

template <typename T>
inline std::optional<T> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<T>();
}

}  // namespace detail

inline json record_to_json(const RunRecord& r) {
  json j;
  j["schema_version"] = 1;
  j["net_index"] = r.net_index;
  j["seed"] = r.seed;
  j["learning_rate"] = r.learning_rate;
  j["status"] = r.status;
  j["achieved_train_accuracy"] = r.achieved_train_accuracy;
  j["epochs"] = r.epochs;
  j["test_accuracy"] = r.test_accuracy;
  j["hessian_trace"] = detail::opt_json(r.hessian_trace);
  j["hessian_probe_seed"] = r.hessian_probe_seed;
  j["hessian_n_probes"] = r.hessian_n_probes;
  j["weight_l1"] = detail::opt_json(r.weight_l1);
  j["weight_l2"] = detail::opt_json(r.weight_l2);
  j["l1_count"] = detail::opt_json(r.l1_count);
  j["l2_count"] = detail::opt_json(r.l2_count);
  j["k_free"] = detail::opt_json(r.k_free);
  j["free_params"] = detail::opt_json(r.free_params);
  j["free_params_train_only"] = detail::opt_json(r.free_params_train_only);
  j["region_weakness_log"] = detail::opt_json(r.region_weakness_log_val);
  j["pair_proxy"] = detail::opt_json(r.pair_proxy_count);
  j["pair_proxy_margin"] = detail::opt_json(r.pair_proxy_margin);
  j["lp_count"] = r.lp_count;
  j["ea"] = detail::opt_json(r.ea);
  j["ea_no_errors"] = r.ea_no_errors;
  j["timings"] = {{"train_seconds", r.train_seconds},
                  {"measure_seconds", r.measure_seconds},
                  {"lp_seconds", r.lp_seconds}};
  return j;
}

inline RunRecord record_from_json(const json& j) {
  RunRecord r;
  r.net_index = j.at("net_index").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.learning_rate = j.at("learning_rate").get<double>();
  r.status = j.at("status").get<std::string>();
  r.achieved_train_accuracy = j.at("achieved_train_accuracy").get<double>();
  r.epochs = j.at("epochs").get<int>();
  r.test_accuracy = j.at("test_accuracy").get<double>();
  r.hessian_trace = detail::opt_from<double>(j, "hessian_trace");
  r.hessian_probe_seed = j.value("hessian_probe_seed", 0ull);
  r.hessian_n_probes = j.value("hessian_n_probes", 0);
  r.weight_l1 = detail::opt_from<double>(j, "weight_l1");
  r.weight_l2 = detail::opt_from<double>(j, "weight_l2");
  r.l1_count = detail::opt_from<long long>(j, "l1_count");
  r.l2_count = detail::opt_from<long long>(j, "l2_count");
  r.k_free = detail::opt_from<long long>(j, "k_free");
  r.free_params = detail::opt_from<long long>(j, "free_params");
  r.free_params_train_only = detail::opt_from<long long>(j, "free_params_train_only");
  r.region_weakness_log_val = detail::opt_from<double>(j, "region_weakness_log");
  r.pair_proxy_count = detail::opt_from<long long>(j, "pair_proxy");
  r.pair_proxy_margin = detail::opt_from<double>(j, "pair_proxy_margin");
  r.lp_count = j.value("lp_count", 0ll);
  r.ea = detail::opt_from<double>(j, "ea");
  r.ea_no_errors = j.value("ea_no_errors", false);
  if (j.contains("timings")) {
    r.train_seconds = j["timings"].value("train_seconds", 0.0);
    r.measure_seconds = j["timings"].value("measure_seconds", 0.0);
    r.lp_seconds = j["timings"].value("lp_seconds", 0.0);
  }
  return r;
}

// --- pool context ------------------------------------------------------------

struct PoolContext {
  ExperimentConfig cfg;
  Dataset pool;   // training pool
  Dataset test;   // held-out test set
  Split split;
  Eigen::MatrixXd x_train, x_probe, x_test;
  std::vector<int> y_train, y_probe, y_test;
};

namespace detail {

constexpr std::uint64_t kSplitStream = 0x5711;
constexpr std::uint64_t kHessianStream = 0x4e55;
constexpr std::uint64_t kTestStream = 0x7e57;
constexpr std::uint64_t kLrStream = 3;

}  // namespace detail

inline PoolContext build_pool_context(const ExperimentConfig& cfg) {
  cfg.validate();
  PoolContext ctx;
  ctx.cfg = cfg;
  if (cfg.dataset == "mnist" || cfg.dataset == "fashion-mnist") {
    std::string dir = cfg.data_dir.empty() ? default_data_dir() : cfg.data_dir;
    if (dir.empty())
      throw DataError("dataset '" + cfg.dataset +
                      "' needs --data-dir or WEAKNESSLAB_DATA_DIR");
    auto [pool, test] = load_idx_pair(dir, cfg.dataset);
    ctx.pool = std::move(pool);
    ctx.test = std::move(test);
  } else if (cfg.dataset == "synthetic-digits") {
    // Test samples are held out by offsetting past the training pool within
    // the same generated task.
    ctx.pool = synthetic_digits(cfg.synthetic.n_pool, cfg.synthetic.seed);
    ctx.test = synthetic_digits(cfg.synthetic.n_test, cfg.synthetic.seed,
                                cfg.synthetic.n_pool);
    ctx.test.name = "synthetic-digits-test";
  } else {  // synthetic-gaussian
    ctx.pool = synthetic_gaussian(cfg.synthetic.n_pool, cfg.synthetic.gauss_dim,
                                  cfg.synthetic.gauss_classes, cfg.synthetic.seed);
    ctx.test = synthetic_gaussian(cfg.synthetic.n_test, cfg.synthetic.gauss_dim,
                                  cfg.synthetic.gauss_classes, cfg.synthetic.seed,
                                  0.05, cfg.synthetic.n_pool);
    ctx.test.name = "synthetic-gaussian-test";
  }

  std::size_t n_probe_from_pool =
      cfg.probe_source == "train_leftover" ? cfg.n_probe : 0;
  ctx.split = make_split(ctx.pool, cfg.n_train, n_probe_from_pool,
                         mix64(cfg.master_seed, detail::kSplitStream));
  ctx.split.test_indices.resize(static_cast<std::size_t>(ctx.test.n()));
  for (std::size_t i = 0; i < ctx.split.test_indices.size(); ++i)
    ctx.split.test_indices[i] = static_cast<std::uint32_t>(i);

  std::tie(ctx.x_train, ctx.y_train) = gather(ctx.pool, ctx.split.train_indices);
  std::tie(ctx.x_test, ctx.y_test) = gather(ctx.test, ctx.split.test_indices);
  if (cfg.probe_source == "train_leftover") {
    std::tie(ctx.x_probe, ctx.y_probe) = gather(ctx.pool, ctx.split.probe_indices);
  } else {
    if (cfg.n_probe > static_cast<std::size_t>(ctx.test.n()))
      throw ArgumentError("probe_source=test_set: n_probe exceeds test set");
    Split probe_split = make_split(ctx.test, cfg.n_probe, 0,
                                   mix64(cfg.master_seed, detail::kSplitStream));
    ctx.split.probe_indices = probe_split.train_indices;
    std::tie(ctx.x_probe, ctx.y_probe) = gather(ctx.test, ctx.split.probe_indices);
  }
  return ctx;
}

inline std::uint64_t net_seed(const ExperimentConfig& cfg, int net_index) {
  return mix64(cfg.master_seed, static_cast<std::uint64_t>(net_index));
}

inline double net_learning_rate(const ExperimentConfig& cfg, std::uint64_t seed) {
  SplitMix64 rng(seed);
  return rng.split(detail::kLrStream).next_uniform(cfg.lr_min, cfg.lr_max);
}

// Layer-2 feature map of the trained net over train and probe inputs.
inline FeatureMatrix features_of(const PoolContext& ctx, const MlpParams& p) {
  FeatureMatrix f;
  f.train_features = forward(p, ctx.x_train).post2;
  f.train_labels = ctx.y_train;
  f.probe_features = forward(p, ctx.x_probe).post2;
  f.n_classes = 10;
  return f;
}

// Fills every enabled measurement of one trained network (except ensemble
// agreement, which needs the whole pool and runs in a second pass).
inline void measure_network(const PoolContext& ctx, const MlpParams& params,
                            RunRecord& rec,
                            std::vector<std::set<int>>* pair_proxy_sets = nullptr) {
  const ExperimentConfig& cfg = ctx.cfg;
  auto t0 = std::chrono::steady_clock::now();
  rec.test_accuracy = accuracy(params, ctx.x_test, ctx.y_test);
  WeightNorms norms = weight_norms(params);
  rec.weight_l1 = norms.l1;
  rec.weight_l2 = norms.l2;
  if (cfg.measure.hessian) {
    rec.hessian_probe_seed = mix64(cfg.master_seed, detail::kHessianStream);
    rec.hessian_n_probes = cfg.hessian_probes;
    rec.hessian_trace = hessian_trace(params, ctx.x_train, ctx.y_train,
                                      cfg.hessian_probes, rec.hessian_probe_seed)
                            .value;
  }
  if (cfg.measure.regions) {
    rec.l1_count = static_cast<long long>(pattern_count(params, ctx.x_probe, 1));
    rec.l2_count = static_cast<long long>(pattern_count(params, ctx.x_probe, 2));
    RegionTable table = region_table(params, ctx.x_train, ctx.x_probe);
    std::size_t k = k_free(table);
    rec.k_free = static_cast<long long>(k);
    rec.free_params = free_parameters(table, cfg.h2);
    rec.free_params_train_only = free_parameters_train_only(table, cfg.h2);
    rec.region_weakness_log_val = region_weakness_log(k);
  }
  rec.measure_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (cfg.measure.pair_proxy) {
    FeatureMatrix f = features_of(ctx, params);
    PairProxyResult pp;
    double margin = cfg.margin.value;
    if (cfg.margin.kind == MarginPolicy::Kind::fixed) {
      pp = pair_proxy(f, margin);
    } else {
      std::tie(pp, margin) = pair_proxy_adaptive(f);
    }
    rec.pair_proxy_count = pp.total;
    rec.pair_proxy_margin = margin;
    rec.lp_count = pp.lp.n_lps;
    rec.lp_seconds = pp.lp.seconds;
    if (pair_proxy_sets) *pair_proxy_sets = std::move(pp.per_probe);
  }
}

// Trains and measures one network. Training divergence is recorded in the
// status field rather than thrown, so the pool can continue.
inline RunRecord run_one(const PoolContext& ctx, int net_index, MlpParams* params_out,
                         std::vector<std::set<int>>* pair_proxy_sets = nullptr) {
  const ExperimentConfig& cfg = ctx.cfg;
  RunRecord rec;
  rec.net_index = net_index;
  rec.seed = net_seed(cfg, net_index);
  rec.learning_rate = net_learning_rate(cfg, rec.seed);

  TrainConfig tc;
  tc.h1 = cfg.h1;
  tc.h2 = cfg.h2;
  tc.batch_size = cfg.batch_size;
  tc.learning_rate = rec.learning_rate;
  tc.max_epochs = cfg.max_epochs;
  tc.target_train_accuracy = cfg.target_train_accuracy;
  tc.seed = rec.seed;

  auto t0 = std::chrono::steady_clock::now();
  TrainResult tr;
  try {
    tr = train(tc, ctx.pool, ctx.split);
  } catch (const TrainingError& e) {
    rec.status = std::string("diverged: ") + e.what();
    return rec;
  }
  rec.train_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rec.achieved_train_accuracy = tr.log.achieved_train_accuracy;
  rec.epochs = tr.log.epochs_run;
  measure_network(ctx, tr.params, rec, pair_proxy_sets);
  if (params_out) *params_out = std::move(tr.params);
  return rec;
}

// --- persistence --------------------------------------------------------------

namespace detail {

inline void write_text_atomic(const std::filesystem::path& path,
                              const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << content;
  }
  std::filesystem::rename(tmp, path);
}

inline std::filesystem::path record_path(const std::string& run_dir, int i) {
  return std::filesystem::path(run_dir) / "records" / ("net_" + fmt_index(i) + ".json");
}

inline std::filesystem::path checkpoint_path(const std::string& run_dir, int i) {
  return std::filesystem::path(run_dir) / "checkpoints" / ("net_" + fmt_index(i) + ".ckpt");
}

inline std::filesystem::path pairproxy_path(const std::string& run_dir, int i) {
  return std::filesystem::path(run_dir) / "pairproxy" / ("net_" + fmt_index(i) + ".json");
}

inline std::optional<RunRecord> try_load_record(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    json j;
    in >> j;
    if (j.value("schema_version", 0) != 1) return std::nullopt;
    return record_from_json(j);
  } catch (...) {
    return std::nullopt;
  }
}

inline std::string pair_proxy_json(const std::vector<std::set<int>>& sets) {
  json j;
  for (std::size_t i = 0; i < sets.size(); ++i)
    j[std::to_string(i)] = std::vector<int>(sets[i].begin(), sets[i].end());
  return j.dump(2) + "\n";
}

}  // namespace detail

inline std::string records_csv_header() {
  return "net_index,seed,lr,status,achieved_train_accuracy,epochs,test_accuracy,"
         "hessian_trace,weight_l1,weight_l2,l1_count,l2_count,k_free,free_params,"
         "free_params_train_only,region_weakness_log,pair_proxy,pair_proxy_margin,ea";
}

inline std::string record_csv_row(const RunRecord& r) {
  auto opt_num = [](const auto& o) -> std::string {
    if (!o) return "";
    return fmt_double(static_cast<double>(*o));
  };
  auto opt_int = [](const std::optional<long long>& o) -> std::string {
    if (!o) return "";
    return std::to_string(*o);
  };
  std::ostringstream os;
  os << r.net_index << ',' << r.seed << ',' << fmt_double(r.learning_rate) << ','
     << (r.status == "ok" ? "ok" : "diverged") << ','
     << fmt_double(r.achieved_train_accuracy) << ',' << r.epochs << ','
     << fmt_double(r.test_accuracy) << ',' << opt_num(r.hessian_trace) << ','
     << opt_num(r.weight_l1) << ',' << opt_num(r.weight_l2) << ','
     << opt_int(r.l1_count) << ',' << opt_int(r.l2_count) << ','
     << opt_int(r.k_free) << ',' << opt_int(r.free_params) << ','
     << opt_int(r.free_params_train_only) << ','
     << opt_num(r.region_weakness_log_val) << ',' << opt_int(r.pair_proxy_count)
     << ',' << opt_num(r.pair_proxy_margin) << ',';
  if (r.ea)
    os << fmt_double(*r.ea);
  else if (r.ea_no_errors)
    os << "no_errors";
  return os.str();
}

inline std::string records_csv(const std::vector<RunRecord>& records) {
  std::ostringstream os;
  os << records_csv_header() << '\n';
  for (const RunRecord& r : records) os << record_csv_row(r) << '\n';
  return os.str();
}

// Trains the pool (resuming past any persisted records), recomputes ensemble
// agreement over the finished pool, and writes records plus the aggregate
// CSV under cfg.output_dir.
inline std::vector<RunRecord> run_pool(const ExperimentConfig& cfg,
                                       bool quiet = false) {
  namespace fs = std::filesystem;
  PoolContext ctx = build_pool_context(cfg);
  fs::create_directories(fs::path(cfg.output_dir) / "records");
  fs::create_directories(fs::path(cfg.output_dir) / "checkpoints");
  if (cfg.measure.pair_proxy)
    fs::create_directories(fs::path(cfg.output_dir) / "pairproxy");
  detail::write_text_atomic(fs::path(cfg.output_dir) / "config.json",
                            config_to_json(cfg).dump(2) + "\n");

  std::atomic<int> next{0};
  std::mutex log_mutex;
  std::exception_ptr first_error;

  auto worker = [&]() {
    while (true) {
      int i = next.fetch_add(1);
      if (i >= cfg.n_networks) return;
      {
        std::lock_guard<std::mutex> lock(log_mutex);
        if (first_error) return;
      }
      try {
        fs::path rec_path = detail::record_path(cfg.output_dir, i);
        fs::path ckpt_path = detail::checkpoint_path(cfg.output_dir, i);
        auto existing = detail::try_load_record(rec_path);
        if (existing &&
            (existing->status != "ok" || fs::exists(ckpt_path))) {
          continue;  // resume: already done
        }
        MlpParams params;
        std::vector<std::set<int>> pp_sets;
        RunRecord rec = run_one(ctx, i, &params,
                                cfg.measure.pair_proxy ? &pp_sets : nullptr);
        if (rec.status == "ok") {
          save_checkpoint(params, ckpt_path.string());
          if (cfg.measure.pair_proxy)
            detail::write_text_atomic(detail::pairproxy_path(cfg.output_dir, i),
                                      detail::pair_proxy_json(pp_sets));
        }
        detail::write_text_atomic(rec_path, record_to_json(rec).dump(2) + "\n");
        if (!quiet) {
          std::lock_guard<std::mutex> lock(log_mutex);
          std::fprintf(stderr, "[pool %s] net %d/%d done (%s)\n",
                       cfg.output_dir.c_str(), i + 1, cfg.n_networks,
                       rec.status.c_str());
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(log_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  int n_workers = cfg.workers > 0
                      ? cfg.workers
                      : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  n_workers = std::min(n_workers, cfg.n_networks);
  std::vector<std::thread> threads;
  for (int w = 0; w < n_workers; ++w) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);

  // Collect records in index order.
  std::vector<RunRecord> records;
  records.reserve(static_cast<std::size_t>(cfg.n_networks));
  for (int i = 0; i < cfg.n_networks; ++i) {
    auto rec = detail::try_load_record(detail::record_path(cfg.output_dir, i));
    if (!rec) throw DataError("missing record for net " + std::to_string(i));
    records.push_back(std::move(*rec));
  }

  // Ensemble agreement runs over the whole pool, from checkpoints, so the
  // result is identical whether or not the run was interrupted.
  if (cfg.measure.ea) {
    std::vector<std::vector<int>> preds(records.size());
    std::vector<char> ok(records.size(), 0);
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].status != "ok") continue;
      MlpParams p = load_checkpoint(
          detail::checkpoint_path(cfg.output_dir, static_cast<int>(i)).string());
      preds[i] = predict_batch(p, ctx.x_probe);
      ok[i] = 1;
    }
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (!ok[i]) continue;
      std::vector<std::vector<int>> peer_preds;
      for (std::size_t p = 0; p < records.size(); ++p)
        if (p != i && ok[p]) peer_preds.push_back(preds[p]);
      records[i].ea.reset();
      records[i].ea_no_errors = false;
      if (!peer_preds.empty()) {
        auto ea = ensemble_agreement_from_preds(preds[i], peer_preds, ctx.y_probe);
        if (ea)
          records[i].ea = *ea;
        else
          records[i].ea_no_errors = true;
      }
      detail::write_text_atomic(
          detail::record_path(cfg.output_dir, static_cast<int>(i)),
          record_to_json(records[i]).dump(2) + "\n");
    }
  }

  detail::write_text_atomic(std::filesystem::path(cfg.output_dir) / "records.csv",
                            records_csv(records));
  return records;
}

// --- correlation tables --------------------------------------------------------

struct MeasureColumn {
  std::string name;
  bool invariant = false;
  std::optional<double> (*get)(const RunRecord&);
};

inline const std::vector<MeasureColumn>& measure_columns() {
  static const std::vector<MeasureColumn> cols = {
      {"hessian_trace", false, [](const RunRecord& r) { return r.hessian_trace; }},
      {"weight_l1", false, [](const RunRecord& r) { return r.weight_l1; }},
      {"weight_l2", false, [](const RunRecord& r) { return r.weight_l2; }},
      {"l1_count", true,
       [](const RunRecord& r) -> std::optional<double> {
         if (!r.l1_count) return std::nullopt;
         return static_cast<double>(*r.l1_count);
       }},
      {"l2_count", true,
       [](const RunRecord& r) -> std::optional<double> {
         if (!r.l2_count) return std::nullopt;
         return static_cast<double>(*r.l2_count);
       }},
      {"k_free", true,
       [](const RunRecord& r) -> std::optional<double> {
         if (!r.k_free) return std::nullopt;
         return static_cast<double>(*r.k_free);
       }},
      {"free_params", true,
       [](const RunRecord& r) -> std::optional<double> {
         if (!r.free_params) return std::nullopt;
         return static_cast<double>(*r.free_params);
       }},
      {"free_params_train_only", true,
       [](const RunRecord& r) -> std::optional<double> {
         if (!r.free_params_train_only) return std::nullopt;
         return static_cast<double>(*r.free_params_train_only);
       }},
      {"pair_proxy", true,
       [](const RunRecord& r) -> std::optional<double> {
         if (!r.pair_proxy_count) return std::nullopt;
         return static_cast<double>(*r.pair_proxy_count);
       }},
      {"ea", true, [](const RunRecord& r) { return r.ea; }},
  };
  return cols;
}

struct MeasureCorrelation {
  std::string measure;
  bool invariant = false;
  CorrelationResult corr;
};

// Spearman of one measure column against test accuracy.
inline MeasureCorrelation correlate(const std::vector<RunRecord>& records,
                                    const std::string& measure_name,
                                    PValueMethod method = PValueMethod::t_approx,
                                    std::uint64_t seed = 0) {
  if (records.size() < 10)
    throw ArgumentError("correlate: need at least 10 records");
  const MeasureColumn* col = nullptr;
  for (const MeasureColumn& c : measure_columns())
    if (c.name == measure_name) col = &c;
  if (!col) throw ArgumentError("correlate: unknown measure " + measure_name);
  std::vector<double> xs, ys;
  for (const RunRecord& r : records) {
    if (r.status != "ok") continue;
    auto v = col->get(r);
    if (!v) continue;
    xs.push_back(*v);
    ys.push_back(r.test_accuracy);
  }
  MeasureCorrelation out;
  out.measure = measure_name;
  out.invariant = col->invariant;
  if (xs.size() >= 3) out.corr = spearman(xs, ys, method, seed);
  out.corr.n = static_cast<int>(xs.size());
  return out;
}

inline std::vector<MeasureCorrelation> correlate_all(
    const std::vector<RunRecord>& records) {
  std::vector<MeasureCorrelation> out;
  for (const MeasureColumn& c : measure_columns()) {
    MeasureCorrelation mc = correlate(records, c.name);
    out.push_back(std::move(mc));
  }
  return out;
}

inline std::string correlation_csv(const std::vector<MeasureCorrelation>& rows) {
  std::ostringstream os;
  os << "measure,rho,p_value,n,invariant\n";
  for (const MeasureCorrelation& m : rows) {
    os << m.measure << ',';
    if (m.corr.defined)
      os << fmt_double(m.corr.rho) << ',' << fmt_double(m.corr.p_value);
    else
      os << "undefined,undefined";
    os << ',' << m.corr.n << ',' << (m.invariant ? "yes" : "no") << '\n';
  }
  return os.str();
}

// --- cross-regime experiment ----------------------------------------------------

struct CrossRegimeRow {
  std::size_t n_train = 0;
  int nets_per_regime = 0;
  double small_mean_test_acc = 0.0;
  double large_mean_test_acc = 0.0;
  double delta_pp = 0.0;  // (large - small) in percentage points
  double welch_t = 0.0;
  double welch_p = 1.0;
  bool welch_defined = false;
  double small_mean_hessian = 0.0;
  double large_mean_hessian = 0.0;
};

inline CrossRegimeRow cross_regime(const ExperimentConfig& cfg_small,
                                   const ExperimentConfig& cfg_large,
                                   bool quiet = false) {
  if (cfg_small.n_train != cfg_large.n_train)
    throw ConfigError("cross_regime: regimes must share n_train");
  std::vector<RunRecord> small = run_pool(cfg_small, quiet);
  std::vector<RunRecord> large = run_pool(cfg_large, quiet);
  auto collect = [](const std::vector<RunRecord>& recs, auto getter) {
    std::vector<double> out;
    for (const RunRecord& r : recs)
      if (r.status == "ok") {
        auto v = getter(r);
        if (v) out.push_back(*v);
      }
    return out;
  };
  auto acc = [](const RunRecord& r) { return std::optional<double>(r.test_accuracy); };
  auto hess = [](const RunRecord& r) { return r.hessian_trace; };
  std::vector<double> acc_s = collect(small, acc), acc_l = collect(large, acc);
  std::vector<double> hes_s = collect(small, hess), hes_l = collect(large, hess);
  auto mean = [](const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double m = 0.0;
    for (double x : v) m += x;
    return m / static_cast<double>(v.size());
  };
  CrossRegimeRow row;
  row.n_train = cfg_small.n_train;
  row.nets_per_regime = cfg_small.n_networks;
  row.small_mean_test_acc = mean(acc_s);
  row.large_mean_test_acc = mean(acc_l);
  row.delta_pp = 100.0 * (row.large_mean_test_acc - row.small_mean_test_acc);
  if (acc_s.size() >= 2 && acc_l.size() >= 2) {
    WelchResult w = welch(acc_l, acc_s);
    row.welch_defined = w.defined;
    if (w.defined) {
      row.welch_t = w.t;
      row.welch_p = w.p;
    }
  }
  row.small_mean_hessian = mean(hes_s);
  row.large_mean_hessian = mean(hes_l);
  return row;
}

inline std::string cross_regime_csv_header() {
  return "n_train,nets_per_regime,small_mean_test_acc,large_mean_test_acc,delta_pp,"
         "welch_t,welch_p,small_mean_hessian,large_mean_hessian";
}

inline std::string cross_regime_csv_row(const CrossRegimeRow& r) {
  std::ostringstream os;
  os << r.n_train << ',' << r.nets_per_regime << ','
     << fmt_double(r.small_mean_test_acc) << ',' << fmt_double(r.large_mean_test_acc)
     << ',' << fmt_double(r.delta_pp) << ',';
  if (r.welch_defined)
    os << fmt_double(r.welch_t) << ',' << fmt_double(r.welch_p);
  else
    os << "undefined,undefined";
  os << ',' << fmt_double(r.small_mean_hessian) << ','
     << fmt_double(r.large_mean_hessian);
  return os.str();
}

// --- report ------------------------------------------------------------------

inline std::vector<RunRecord> load_records(const std::string& run_dir) {
  namespace fs = std::filesystem;
  fs::path dir = fs::path(run_dir) / "records";
  std::vector<fs::path> files;
  if (fs::exists(dir))
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<RunRecord> records;
  for (const fs::path& f : files) {
    auto rec = detail::try_load_record(f);
    if (rec) records.push_back(std::move(*rec));
  }
  return records;
}

// Emits records.csv, correlations.csv (when >= 10 records), summary.json,
// and per-measure scatter data under <run_dir>/plots/. All content is built
// before anything is written, so errors leave no partial files.
inline void report(const std::string& run_dir) {
  namespace fs = std::filesystem;
  std::vector<RunRecord> records = load_records(run_dir);
  if (records.empty()) throw DataError("report: no records in " + run_dir);

  std::string rec_csv = records_csv(records);
  std::vector<MeasureCorrelation> corrs;
  if (records.size() >= 10) corrs = correlate_all(records);

  json summary;
  summary["n_records"] = records.size();
  json jcorr = json::array();
  for (const MeasureCorrelation& m : corrs) {
    json j;
    j["measure"] = m.measure;
    j["invariant"] = m.invariant;
    j["defined"] = m.corr.defined;
    if (m.corr.defined) {
      j["rho"] = m.corr.rho;
      j["p_value"] = m.corr.p_value;
    }
    j["n"] = m.corr.n;
    jcorr.push_back(std::move(j));
  }
  summary["correlations"] = std::move(jcorr);
  double lp_seconds = 0.0;
  long long lp_count = 0;
  for (const RunRecord& r : records) {
    lp_seconds += r.lp_seconds;
    lp_count += r.lp_count;
  }
  summary["lp_total_seconds"] = lp_seconds;
  summary["lp_total_count"] = lp_count;

  std::vector<std::pair<std::string, std::string>> plot_files;
  for (const MeasureColumn& c : measure_columns()) {
    std::ostringstream os;
    os << c.name << ",test_accuracy\n";
    std::size_t n = 0;
    for (const RunRecord& r : records) {
      if (r.status != "ok") continue;
      auto v = c.get(r);
      if (!v) continue;
      os << fmt_double(*v) << ',' << fmt_double(r.test_accuracy) << '\n';
      ++n;
    }
    if (n > 0) plot_files.emplace_back(c.name + "_vs_test_acc.csv", os.str());
  }

  fs::create_directories(fs::path(run_dir) / "plots");
  detail::write_text_atomic(fs::path(run_dir) / "records.csv", rec_csv);
  if (!corrs.empty())
    detail::write_text_atomic(fs::path(run_dir) / "correlations.csv",
                              correlation_csv(corrs));
  detail::write_text_atomic(fs::path(run_dir) / "summary.json",
                            summary.dump(2) + "\n");
  for (const auto& [name, content] : plot_files)
    detail::write_text_atomic(fs::path(run_dir) / "plots" / name, content);
}

}  // namespace weaknesslab
