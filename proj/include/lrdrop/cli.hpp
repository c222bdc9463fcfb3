#pragma once

// Subcommand dispatch: train, ablate, size-study, kpass, landscape,
// gradcheck. Every subcommand resolves its config (file plus --seed/--out
// overrides), writes a manifest.json snapshot into the output directory
// before doing any work, and writes nothing outside that directory.
//
// Exit codes: 0 success, 2 usage or config error, 3 numeric failure.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lrdrop/config.hpp"
#include "lrdrop/gradcheck.hpp"
#include "lrdrop/landscape.hpp"
#include "lrdrop/trainer.hpp"

namespace lrdrop::cli {

namespace detail {
inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path);
}

inline void write_manifest(const std::string& out_dir, const std::string& subcommand,
                           const ExperimentConfig& cfg) {
  std::filesystem::create_directories(out_dir);
  nlohmann::ordered_json doc;
  doc["subcommand"] = subcommand;
  doc["config"] = nlohmann::ordered_json::parse(serialize_config(cfg));
  write_text_file(out_dir + "/manifest.json", doc.dump(2) + "\n");
}
}  // namespace detail

// The fixed tiny-model problem behind the gradcheck subcommand: all loss
// terms active over two dropout-sampled passes of a padded sequence.
inline GradCheckResult run_gradcheck_problem(std::size_t n_samples = 256) {
  ModelConfig mc;
  mc.vocab_size = 11;
  mc.pad_id = 10;
  mc.max_len = 5;
  mc.hidden_size = 8;
  mc.num_heads = 2;
  mc.num_layers = 2;
  mc.ffn_size = 16;
  mc.num_classes = 2;
  mc.dropout_rate = 0.1;
  LossWeights w;
  w.alpha = w.beta = w.gamma = 0.5;
  const std::vector<int> tokens = {3, 1, 4, 1, 10};  // one pad position
  const std::size_t label = 1;

  const ParamMap params = init_params(mc, 42);
  auto build = [&](Tape& tape, const ParamMap& p) {
    ParamVars pv = bind_params(tape, p);
    RngStream pass_root = RngStream(777).fork("pass");
    std::vector<ForwardTrace> traces;
    for (std::size_t pass = 0; pass < 2; ++pass)
      traces.push_back(
          forward_pass(tape, pv, mc, tokens, true, pass_root.fork(pass), static_cast<int>(pass)));
    return total_objective(tape, traces, label, w);
  };
  LossFn loss_fn = [&](const ParamMap& p) {
    Tape tape;
    return build(tape, p).total.scalar();
  };
  Tape tape;
  Objective obj = build(tape, params);
  GradMap analytic = tape.backward(obj.total);
  return finite_diff_check(loss_fn, params, analytic, n_samples, RngStream(123));
}

namespace detail {

inline int handle_train(const ExperimentConfig& cfg) {
  write_manifest(cfg.out_dir, "train", cfg);
  const DataSplit split =
      split_dataset(generate_task(cfg.task, cfg.dataset_size, cfg.seq_len, cfg.data_seed));
  std::vector<RunResult> runs;
  std::printf("%-8s %-10s %-10s %-10s\n", "seed", "best_acc", "final_acc", "best_epoch");
  for (std::uint64_t seed : cfg.seeds) {
    RunResult r = run_training(cfg, seed, cfg.out_dir + "/seed" + std::to_string(seed), &split);
    std::printf("%-8llu %-10.4f %-10.4f %-10zu\n", static_cast<unsigned long long>(r.seed),
                r.best_test_acc, r.final_test_acc, r.best_epoch);
    runs.push_back(std::move(r));
  }
  auto csv = lrdrop::detail::open_csv(cfg.out_dir, "results.csv");
  csv << "seed,best_acc,final_acc,best_epoch\n";
  for (const RunResult& r : runs)
    csv << r.seed << ',' << lrdrop::detail::acc4(r.best_test_acc) << ','
        << lrdrop::detail::acc4(r.final_test_acc) << ',' << r.best_epoch << '\n';
  std::printf("mean best_acc %.4f  mean final_acc %.4f  (%zu seeds)\n",
              lrdrop::detail::mean_best(runs), lrdrop::detail::mean_final(runs), runs.size());
  return 0;
}

inline int handle_ablate(const ExperimentConfig& cfg) {
  write_manifest(cfg.out_dir, "ablate", cfg);
  const auto rows = run_ablation(cfg, cfg.out_dir);
  std::printf("%-10s %-10s %-10s %-10s\n", "variant", "mean_best", "std_best", "mean_final");
  for (const AblationRow& row : rows)
    std::printf("%-10s %-10.4f %-10.4f %-10.4f\n", row.variant.c_str(), row.mean_best,
                row.std_best, row.mean_final);
  return 0;
}

inline int handle_size_study(const ExperimentConfig& cfg) {
  write_manifest(cfg.out_dir, "size-study", cfg);
  const auto rows = run_size_study(cfg, cfg.out_dir);
  std::printf("%-8s %-10s %-10s %-10s %-10s %-10s\n", "size", "baseline", "lrdrop", "gap", "t",
              "p");
  for (const SizeStudyRow& row : rows)
    std::printf("%-8zu %-10.4f %-10.4f %-+10.4f %-10.4g %-10.4g\n", row.size,
                lrdrop::detail::mean_best(row.baseline), lrdrop::detail::mean_best(row.lrdrop),
                row.welch.mean_gap, row.welch.t, row.welch.p);
  return 0;
}

inline int handle_kpass(const ExperimentConfig& cfg) {
  write_manifest(cfg.out_dir, "kpass", cfg);
  const auto rows = run_kpass(cfg, cfg.out_dir);
  std::printf("%-4s %-10s %-10s %-10s\n", "k", "mean_best", "std_best", "mean_final");
  for (const KPassRow& row : rows)
    std::printf("%-4zu %-10.4f %-10.4f %-10.4f\n", row.k, row.mean_best, row.std_best,
                row.mean_final);
  return 0;
}

struct LandscapeArm {
  std::string name;
  SurfaceGrid grid;
  FlatnessMetrics metrics;
};

inline LandscapeArm slice_arm(const std::string& name, const ExperimentConfig& cfg,
                              const ParamMap& params, const ModelConfig& mcfg,
                              const std::vector<Example>& eval_set) {
  SurfaceLossFn loss_fn = [&](const ParamMap& p) { return evaluate(p, mcfg, eval_set).mean_ce; };
  const DirectionRule rule = cfg.direction_rule == "block_std" ? DirectionRule::kBlockStd
                                                               : DirectionRule::kBlockNorm;
  const DirectionPair dirs = sample_directions(params, cfg.seeds.front(), rule);
  LandscapeArm arm;
  arm.name = name;
  arm.grid = evaluate_surface(params, dirs, cfg.grid_range, cfg.grid_points, loss_fn);
  arm.metrics = flatness_metrics(arm.grid);
  return arm;
}

inline int handle_landscape(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
  write_manifest(cfg.out_dir, "landscape", cfg);
  const DataSplit split =
      split_dataset(generate_task(cfg.task, cfg.dataset_size, cfg.seq_len, cfg.data_seed));
  const ModelConfig mcfg = make_model_config(cfg, split.test);
  const std::vector<Example> eval_set =
      nested_subset(split.test, std::min(cfg.landscape_eval_size, split.test.size())).examples;

  std::vector<LandscapeArm> arms;
  if (!checkpoint_path.empty()) {
    ParamMap params = load_checkpoint(checkpoint_path);
    validate_params(mcfg, params);
    arms.push_back(slice_arm("checkpoint", cfg, params, mcfg, eval_set));
  } else if (cfg.compare_baseline) {
    const RunResult lrd = run_training(cfg, cfg.seeds.front(), "", &split);
    ExperimentConfig base = cfg;
    base.k = 1;
    base.hsr_on = base.mhar_on = base.or_on = false;
    const RunResult bl = run_training(base, base.seeds.front(), "", &split);
    arms.push_back(slice_arm("lrdrop", cfg, lrd.best_params, mcfg, eval_set));
    arms.push_back(slice_arm("baseline", cfg, bl.best_params, mcfg, eval_set));
  } else {
    const RunResult lrd = run_training(cfg, cfg.seeds.front(), "", &split);
    save_checkpoint(cfg.out_dir + "/center.ckpt", lrd.best_params);
    arms.push_back(slice_arm("lrdrop", cfg, lrd.best_params, mcfg, eval_set));
  }

  std::printf("%-12s %-14s %-14s %-14s %-14s\n", "arm", "center", "mean_rise", "max_rise",
              "radius_at_2x");
  for (const LandscapeArm& arm : arms)
    std::printf("%-12s %-14.6g %-14.6g %-14.6g %-14.6g\n", arm.name.c_str(), arm.grid.center,
                arm.metrics.mean_rise, arm.metrics.max_rise, arm.metrics.radius_at_2x);

  if (arms.size() == 1) {
    write_surface_csv(cfg.out_dir + "/surface.csv", arms[0].grid);
    write_metrics_json(cfg.out_dir + "/metrics.json", arms[0].grid, arms[0].metrics);
  } else {
    std::ofstream report(cfg.out_dir + "/flatness_report.csv", std::ios::binary);
    report << "arm,center,mean_rise,max_rise,radius_at_2x\n";
    for (const LandscapeArm& arm : arms) {
      write_surface_csv(cfg.out_dir + "/surface_" + arm.name + ".csv", arm.grid);
      write_metrics_json(cfg.out_dir + "/metrics_" + arm.name + ".json", arm.grid, arm.metrics);
      report << arm.name << ',' << lrdrop::detail::stat6(arm.grid.center) << ','
             << lrdrop::detail::stat6(arm.metrics.mean_rise) << ','
             << lrdrop::detail::stat6(arm.metrics.max_rise) << ','
             << lrdrop::detail::stat6(arm.metrics.radius_at_2x) << '\n';
    }
  }
  return 0;
}

inline int handle_gradcheck(const std::string& out_dir) {
  const GradCheckResult res = run_gradcheck_problem();
  const bool pass = res.max_rel_err < 1e-4;
  std::printf("gradcheck: max relative error %.3e over %zu coordinates (%s)\n", res.max_rel_err,
              res.n_checked, pass ? "pass" : "FAIL");
  std::filesystem::create_directories(out_dir);
  write_text_file(out_dir + "/manifest.json",
                  "{\n  \"subcommand\": \"gradcheck\",\n  \"hidden_size\": 8,\n"
                  "  \"num_layers\": 2,\n  \"num_heads\": 2,\n  \"seq_len\": 5,\n"
                  "  \"num_classes\": 2,\n  \"vocab_size\": 11,\n  \"ffn_size\": 16,\n"
                  "  \"dropout_rate\": 0.1,\n  \"alpha\": 0.5,\n  \"beta\": 0.5,\n"
                  "  \"gamma\": 0.5,\n  \"k\": 2,\n  \"param_seed\": 42\n}\n");
  write_text_file(out_dir + "/gradcheck.json",
                  "{\n  \"max_rel_err\": " + format_g17(res.max_rel_err) +
                      ",\n  \"n_checked\": " + std::to_string(res.n_checked) +
                      ",\n  \"worst_block\": \"" + res.worst_block +
                      "\",\n  \"analytic\": " + format_g17(res.worst_analytic) +
                      ",\n  \"numeric\": " + format_g17(res.worst_numeric) +
                      ",\n  \"pass\": " + (pass ? "true" : "false") + "\n}\n");
  return pass ? 0 : 3;
}

}  // namespace detail

inline int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"LR-Drop training, studies and loss-landscape slicing"};
  app.require_subcommand(1);

  std::string config_path, out_override, checkpoint_path;
  std::uint64_t seed_override = 0;
  bool have_seed = false, have_out = false;

  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* copt = sub->add_option("--config", config_path, "JSON config file");
    if (config_required) copt->required();
    sub->add_option("--seed", seed_override, "replace the config's seed list with one seed")
        ->each([&](const std::string&) { have_seed = true; });
    sub->add_option("--out", out_override, "output directory override")
        ->each([&](const std::string&) { have_out = true; });
  };

  CLI::App* train = app.add_subcommand("train", "train over the config's seeds");
  add_common(train, true);
  CLI::App* ablate = app.add_subcommand("ablate", "full vs single-term-removed variants");
  add_common(ablate, true);
  CLI::App* size_study = app.add_subcommand("size-study", "baseline vs LR-Drop across train sizes");
  add_common(size_study, true);
  CLI::App* kpass = app.add_subcommand("kpass", "k = 1, 2, 3 comparison");
  add_common(kpass, true);
  CLI::App* landscape = app.add_subcommand("landscape", "loss-surface slice around a minimum");
  add_common(landscape, true);
  landscape->add_option("--checkpoint", checkpoint_path, "slice around this checkpoint");
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient validation");
  gradcheck->add_option("--out", out_override, "output directory override")
      ->each([&](const std::string&) { have_out = true; });

  std::vector<std::string> argv_store;
  argv_store.reserve(args.size() + 1);
  argv_store.push_back("lrdrop");
  for (const std::string& a : args) argv_store.push_back(a);
  std::vector<char*> argv;
  for (std::string& s : argv_store) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gradcheck->parsed())
      return detail::handle_gradcheck(have_out ? out_override : std::string("out"));

    ExperimentConfig cfg = load_config_file(config_path);
    if (have_seed) cfg.seeds = {seed_override};
    if (have_out) cfg.out_dir = out_override;
    cfg.validate();

    if (train->parsed()) return detail::handle_train(cfg);
    if (ablate->parsed()) return detail::handle_ablate(cfg);
    if (size_study->parsed()) return detail::handle_size_study(cfg);
    if (kpass->parsed()) return detail::handle_kpass(cfg);
    if (landscape->parsed()) return detail::handle_landscape(cfg, checkpoint_path);
    std::fprintf(stderr, "error: no subcommand\n");
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}

}  // namespace lrdrop::cli
