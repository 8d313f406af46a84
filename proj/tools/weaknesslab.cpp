// weaknesslab command-line interface.
//
// Subcommands: train-pool, measure, pairproxy, reparam-test, cross-regime,
// correlate, report, synth-data. Exit codes: 0 success, 2 config error,
// 3 data error, 4 numeric/solver failure.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "weaknesslab/data_io.hpp"
#include "weaknesslab/fcv.hpp"
#include "weaknesslab/harness.hpp"
#include "weaknesslab/mlp.hpp"
#include "weaknesslab/reparam.hpp"

namespace {

using namespace weaknesslab;

std::vector<double> parse_list(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

// Shared config flags. Flags override values from --config when both appear.
struct ConfigCli {
  std::string config_path;
  ExperimentConfig cfg;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON experiment config");
    app->add_option("--dataset", cfg.dataset,
                    "mnist | fashion-mnist | synthetic-digits | synthetic-gaussian");
    app->add_option("--data-dir", cfg.data_dir, "IDX data directory");
    app->add_option("--h1", cfg.h1, "first hidden width");
    app->add_option("--h2", cfg.h2, "second hidden width");
    app->add_option("--n-train", cfg.n_train, "training points per network");
    app->add_option("--n-probe", cfg.n_probe, "unseen probe points");
    app->add_option("--n-networks", cfg.n_networks, "pool size");
    app->add_option("--batch-size", cfg.batch_size, "SGD minibatch size");
    app->add_option("--lr-min", cfg.lr_min, "learning-rate range lower end");
    app->add_option("--lr-max", cfg.lr_max, "learning-rate range upper end");
    app->add_option("--max-epochs", cfg.max_epochs, "epoch cap");
    app->add_option("--margin", cfg.margin.value, "fixed LP margin");
    app->add_flag_callback(
        "--adaptive-margin",
        [this]() { cfg.margin.kind = MarginPolicy::Kind::adaptive; },
        "use max_margin/2 per network instead of the fixed margin");
    app->add_option("--probe-source", cfg.probe_source,
                    "train_leftover | test_set");
    app->add_option("--hessian-probes", cfg.hessian_probes,
                    "Hutchinson probe count");
    app->add_option("--master-seed", cfg.master_seed, "master seed");
    app->add_option("--output-dir", cfg.output_dir, "run directory");
    app->add_option("--workers", cfg.workers, "worker threads (0 = auto)");
    app->add_option("--synthetic-pool", cfg.synthetic.n_pool,
                    "synthetic pool size");
    app->add_option("--synthetic-test", cfg.synthetic.n_test,
                    "synthetic test size");
    app->add_option("--synthetic-seed", cfg.synthetic.seed,
                    "synthetic dataset seed");
  }

  // Re-parse so explicit flags win over the config file.
  ExperimentConfig resolve(CLI::App* app) {
    if (!config_path.empty()) {
      ExperimentConfig from_file = load_config(config_path);
      ExperimentConfig flag_defaults;  // to detect which flags were set
      auto keep = cfg;
      cfg = from_file;
      auto set_if = [app](const std::string& name, auto& dst, const auto& src) {
        if (app->count(name) > 0) dst = src;
      };
      set_if("--dataset", cfg.dataset, keep.dataset);
      set_if("--data-dir", cfg.data_dir, keep.data_dir);
      set_if("--h1", cfg.h1, keep.h1);
      set_if("--h2", cfg.h2, keep.h2);
      set_if("--n-train", cfg.n_train, keep.n_train);
      set_if("--n-probe", cfg.n_probe, keep.n_probe);
      set_if("--n-networks", cfg.n_networks, keep.n_networks);
      set_if("--batch-size", cfg.batch_size, keep.batch_size);
      set_if("--lr-min", cfg.lr_min, keep.lr_min);
      set_if("--lr-max", cfg.lr_max, keep.lr_max);
      set_if("--max-epochs", cfg.max_epochs, keep.max_epochs);
      set_if("--margin", cfg.margin.value, keep.margin.value);
      if (app->count("--adaptive-margin") > 0)
        cfg.margin.kind = MarginPolicy::Kind::adaptive;
      set_if("--probe-source", cfg.probe_source, keep.probe_source);
      set_if("--hessian-probes", cfg.hessian_probes, keep.hessian_probes);
      set_if("--master-seed", cfg.master_seed, keep.master_seed);
      set_if("--output-dir", cfg.output_dir, keep.output_dir);
      set_if("--workers", cfg.workers, keep.workers);
      set_if("--synthetic-pool", cfg.synthetic.n_pool, keep.synthetic.n_pool);
      set_if("--synthetic-test", cfg.synthetic.n_test, keep.synthetic.n_test);
      set_if("--synthetic-seed", cfg.synthetic.seed, keep.synthetic.seed);
    }
    cfg.validate();
    return cfg;
  }
};

int run_train_pool(ConfigCli& cc, CLI::App* app) {
  ExperimentConfig cfg = cc.resolve(app);
  std::vector<RunRecord> records = run_pool(cfg);
  std::printf("pool complete: %zu records in %s\n", records.size(),
              cfg.output_dir.c_str());
  return 0;
}

int run_measure(const std::string& run_dir) {
  ExperimentConfig cfg = load_config(
      (std::filesystem::path(run_dir) / "config.json").string());
  cfg.output_dir = run_dir;
  PoolContext ctx = build_pool_context(cfg);
  int updated = 0;
  for (int i = 0; i < cfg.n_networks; ++i) {
    auto rec = detail::try_load_record(detail::record_path(run_dir, i));
    if (!rec || rec->status != "ok") continue;
    MlpParams params =
        load_checkpoint(detail::checkpoint_path(run_dir, i).string());
    std::vector<std::set<int>> pp_sets;
    measure_network(ctx, params, *rec,
                    cfg.measure.pair_proxy ? &pp_sets : nullptr);
    if (cfg.measure.pair_proxy)
      detail::write_text_atomic(detail::pairproxy_path(run_dir, i),
                                detail::pair_proxy_json(pp_sets));
    detail::write_text_atomic(detail::record_path(run_dir, i),
                              record_to_json(*rec).dump(2) + "\n");
    ++updated;
  }
  std::printf("re-measured %d networks in %s\n", updated, run_dir.c_str());
  return 0;
}

int run_pairproxy(const std::string& run_dir, double margin, bool adaptive,
                  bool sweep) {
  ExperimentConfig cfg = load_config(
      (std::filesystem::path(run_dir) / "config.json").string());
  cfg.output_dir = run_dir;
  PoolContext ctx = build_pool_context(cfg);
  std::vector<double> margins;
  if (sweep)
    margins = {1e-4, 1e-3, 1e-2};
  else if (!adaptive)
    margins = {margin};
  for (int i = 0; i < cfg.n_networks; ++i) {
    auto rec = detail::try_load_record(detail::record_path(run_dir, i));
    if (!rec || rec->status != "ok") continue;
    MlpParams params =
        load_checkpoint(detail::checkpoint_path(run_dir, i).string());
    FeatureMatrix f = features_of(ctx, params);
    std::vector<double> use = margins;
    if (adaptive) use = {max_margin(f) / 2.0};
    for (double m : use) {
      PairProxyResult pp = pair_proxy(f, m);
      std::printf("net %d margin %g pair_proxy %lld (%lld LPs, %.2fs)\n", i, m,
                  pp.total, pp.lp.n_lps, pp.lp.seconds);
      if (!sweep) {
        rec->pair_proxy_count = pp.total;
        rec->pair_proxy_margin = m;
        rec->lp_count = pp.lp.n_lps;
        rec->lp_seconds = pp.lp.seconds;
        detail::write_text_atomic(detail::pairproxy_path(run_dir, i),
                                  detail::pair_proxy_json(pp.per_probe));
        detail::write_text_atomic(detail::record_path(run_dir, i),
                                  record_to_json(*rec).dump(2) + "\n");
      }
    }
  }
  return 0;
}

int run_reparam_test(const std::string& run_dir, int net, const std::string& betas,
                     const std::string& gammas, int eval_points,
                     std::string out_path) {
  ExperimentConfig cfg = load_config(
      (std::filesystem::path(run_dir) / "config.json").string());
  cfg.output_dir = run_dir;
  PoolContext ctx = build_pool_context(cfg);
  MlpParams params =
      load_checkpoint(detail::checkpoint_path(run_dir, net).string());

  std::vector<ReparamSpec> specs;
  for (double b : parse_list(betas))
    specs.push_back({ReparamSpec::Kind::beta, b});
  for (double g : parse_list(gammas))
    specs.push_back({ReparamSpec::Kind::gamma, g});

  Eigen::Index n_eval = std::min<Eigen::Index>(eval_points, ctx.x_test.rows());
  Eigen::MatrixXd eval_x = ctx.x_test.topRows(n_eval);
  std::vector<int> eval_y(ctx.y_test.begin(), ctx.y_test.begin() + n_eval);

  std::vector<MlpParams> peers;
  for (int i = 0; i < cfg.n_networks; ++i) {
    if (i == net) continue;
    auto rec = detail::try_load_record(detail::record_path(run_dir, i));
    if (!rec || rec->status != "ok") continue;
    peers.push_back(load_checkpoint(detail::checkpoint_path(run_dir, i).string()));
  }

  std::vector<InvarianceRow> rows = invariance_report(
      params, specs, eval_x, eval_y, ctx.x_train, ctx.y_train, peers,
      cfg.hessian_probes, mix64(cfg.master_seed, detail::kHessianStream));

  if (out_path.empty())
    out_path = (std::filesystem::path(run_dir) /
                ("reparam_net_" + fmt_index(net) + ".csv"))
                   .string();
  std::ostringstream os;
  write_invariance_csv(rows, os);
  detail::write_text_atomic(out_path, os.str());
  std::printf("%s", os.str().c_str());
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

int run_cross_regime(const std::string& cfg_small_path,
                     const std::string& cfg_large_path, std::string out_path) {
  ExperimentConfig cfg_small = load_config(cfg_small_path);
  ExperimentConfig cfg_large = load_config(cfg_large_path);
  CrossRegimeRow row = cross_regime(cfg_small, cfg_large);
  std::string csv = cross_regime_csv_header() + "\n" + cross_regime_csv_row(row) + "\n";
  if (!out_path.empty()) detail::write_text_atomic(out_path, csv);
  std::printf("%s", csv.c_str());
  return 0;
}

int run_correlate(const std::string& run_dir, std::string out_path) {
  std::vector<RunRecord> records = load_records(run_dir);
  if (records.empty()) throw DataError("no records in " + run_dir);
  std::vector<MeasureCorrelation> rows = correlate_all(records);
  std::string csv = correlation_csv(rows);
  if (out_path.empty())
    out_path = (std::filesystem::path(run_dir) / "correlations.csv").string();
  detail::write_text_atomic(out_path, csv);
  std::printf("%s", csv.c_str());
  return 0;
}

int run_synth_data(const std::string& out_dir, std::size_t n_train,
                   std::size_t n_test, std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::path base = fs::path(out_dir) / "synthetic-digits";
  fs::create_directories(base);
  Dataset train = synthetic_digits(n_train, seed);
  Dataset test = synthetic_digits(n_test, seed, n_train);
  save_idx(train, (base / "train-images-idx3-ubyte").string(),
           (base / "train-labels-idx1-ubyte").string());
  save_idx(test, (base / "t10k-images-idx3-ubyte").string(),
           (base / "t10k-labels-idx1-ubyte").string());
  std::printf("wrote %zu train / %zu test examples under %s\n", n_train, n_test,
              base.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weakness lab: trained-network weakness vs sharpness measurements"};
  app.require_subcommand(1);

  ConfigCli train_cc;
  CLI::App* train_cmd =
      app.add_subcommand("train-pool", "train and measure a pool of networks");
  train_cc.attach(train_cmd);

  std::string run_dir;
  CLI::App* measure_cmd =
      app.add_subcommand("measure", "recompute measurements from checkpoints");
  measure_cmd->add_option("--run-dir", run_dir, "run directory")->required();

  std::string pp_run_dir;
  double pp_margin = 1e-3;
  bool pp_adaptive = false, pp_sweep = false;
  CLI::App* pp_cmd =
      app.add_subcommand("pairproxy", "recompute pair proxies for a pool");
  pp_cmd->add_option("--run-dir", pp_run_dir, "run directory")->required();
  pp_cmd->add_option("--margin", pp_margin, "fixed LP margin");
  pp_cmd->add_flag("--adaptive", pp_adaptive, "use max_margin/2 per network");
  pp_cmd->add_flag("--sweep", pp_sweep,
                   "report margins {1e-4, 1e-3, 1e-2} without updating records");

  std::string rp_run_dir, rp_betas = "1,2,5,10,20", rp_gammas = "1,5,20", rp_out;
  int rp_net = 0, rp_eval = 1000;
  CLI::App* rp_cmd = app.add_subcommand(
      "reparam-test", "invariance report under layer-rescaling reparameterisations");
  rp_cmd->add_option("--run-dir", rp_run_dir, "run directory")->required();
  rp_cmd->add_option("--net", rp_net, "network index");
  rp_cmd->add_option("--betas", rp_betas, "comma-separated beta values");
  rp_cmd->add_option("--gammas", rp_gammas, "comma-separated gamma values");
  rp_cmd->add_option("--eval-points", rp_eval, "test points to evaluate");
  rp_cmd->add_option("--out", rp_out, "output CSV path");

  std::string cr_small, cr_large, cr_out;
  CLI::App* cr_cmd = app.add_subcommand(
      "cross-regime", "small-batch vs large-batch generalisation gap");
  cr_cmd->add_option("--config-small", cr_small, "small-batch config")->required();
  cr_cmd->add_option("--config-large", cr_large, "large-batch config")->required();
  cr_cmd->add_option("--out", cr_out, "output CSV path");

  std::string co_run_dir, co_out;
  CLI::App* co_cmd =
      app.add_subcommand("correlate", "Spearman table of measures vs test accuracy");
  co_cmd->add_option("--run-dir", co_run_dir, "run directory")->required();
  co_cmd->add_option("--out", co_out, "output CSV path");

  std::string rep_run_dir;
  CLI::App* rep_cmd =
      app.add_subcommand("report", "records.csv, correlations, summary, plot data");
  rep_cmd->add_option("--run-dir", rep_run_dir, "run directory")->required();

  std::string sd_out = "data";
  std::size_t sd_train = 6000, sd_test = 2000;
  std::uint64_t sd_seed = 9000;
  CLI::App* sd_cmd =
      app.add_subcommand("synth-data", "write the synthetic dataset as IDX files");
  sd_cmd->add_option("--out-dir", sd_out, "target directory");
  sd_cmd->add_option("--n-train", sd_train, "training pool size");
  sd_cmd->add_option("--n-test", sd_test, "test set size");
  sd_cmd->add_option("--seed", sd_seed, "dataset seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return run_train_pool(train_cc, train_cmd);
    if (measure_cmd->parsed()) return run_measure(run_dir);
    if (pp_cmd->parsed())
      return run_pairproxy(pp_run_dir, pp_margin, pp_adaptive, pp_sweep);
    if (rp_cmd->parsed())
      return run_reparam_test(rp_run_dir, rp_net, rp_betas, rp_gammas, rp_eval, rp_out);
    if (cr_cmd->parsed()) return run_cross_regime(cr_small, cr_large, cr_out);
    if (co_cmd->parsed()) return run_correlate(co_run_dir, co_out);
    if (rep_cmd->parsed()) {
      weaknesslab::report(rep_run_dir);
      std::printf("report written under %s\n", rep_run_dir.c_str());
      return 0;
    }
    if (sd_cmd->parsed()) return run_synth_data(sd_out, sd_train, sd_test, sd_seed);
  } catch (const weaknesslab::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const weaknesslab::ArgumentError& e) {
    std::fprintf(stderr, "argument error: %s\n", e.what());
    return 2;
  } catch (const weaknesslab::CapacityError& e) {
    std::fprintf(stderr, "capacity error: %s\n", e.what());
    return 2;
  } catch (const weaknesslab::FormatError& e) {
    std::fprintf(stderr, "data format error: %s\n", e.what());
    return 3;
  } catch (const weaknesslab::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const weaknesslab::Error& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 4;
  }
  return 0;
}
