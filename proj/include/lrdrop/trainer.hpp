#pragma once

// The k-pass training loop. Each step records every pass of every batch
// example on one tape, reduces the per-example objectives to a batch mean,
// backpropagates once and applies one Adam update. All randomness is forked
// from the run seed by (purpose, step, slot, pass), so a (config, seed) pair
// fixes the whole trajectory bit for bit.
//
// Study runners mirror the three experiment tables: ablation variants,
// train-set size sweep (baseline vs LR-Drop with a Welch test per size),
// and the k-pass comparison.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrdrop/config.hpp"
#include "lrdrop/data.hpp"
#include "lrdrop/losses.hpp"
#include "lrdrop/model.hpp"
#include "lrdrop/optim.hpp"
#include "lrdrop/stats.hpp"
#include "lrdrop/transformer.hpp"

namespace lrdrop {

struct TrainStepResult {
  LossBreakdown loss;     // batch means
  double grad_norm = 0.0; // pre-clip global norm
};

// One optimizer step over a batch. `step_rng` must be unique per step (the
// caller forks it from the run stream by step index); pass p of example slot
// s draws its dropout from step_rng.fork(s).fork(p).
inline TrainStepResult train_step(ParamMap& params, OptimizerState& opt,
                                  const ModelConfig& mcfg, const LossWeights& weights,
                                  std::size_t k, double clip_norm, const Dataset& data,
                                  const std::vector<std::size_t>& batch, RngStream step_rng) {
  if (k < 1) throw std::invalid_argument("train_step: k must be at least 1");
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  Tape tape;
  ParamVars pv = bind_params(tape, params);
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  Var batch_total;
  LossBreakdown mean;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const Example& ex = data.examples.at(batch[s]);
    RngStream slot_rng = step_rng.fork(s);
    std::vector<ForwardTrace> traces;
    traces.reserve(k);
    for (std::size_t p = 0; p < k; ++p)
      traces.push_back(forward_pass(tape, pv, mcfg, ex.tokens, true, slot_rng.fork(p),
                                    static_cast<int>(p)));
    Objective obj = total_objective(tape, traces, static_cast<std::size_t>(ex.label), weights);
    batch_total = s == 0 ? obj.total : tape.add(batch_total, obj.total);
    mean.ce += obj.breakdown.ce;
    mean.hsr += obj.breakdown.hsr;
    mean.mhar += obj.breakdown.mhar;
    mean.or_ += obj.breakdown.or_;
  }
  if (batch.size() > 1) batch_total = tape.scale(batch_total, inv_b);
  mean.ce *= inv_b;
  mean.hsr *= inv_b;
  mean.mhar *= inv_b;
  mean.or_ *= inv_b;
  // The reported total is the weighted combination of the mean terms, so the
  // identities between the logged fields hold exactly; it can differ from the
  // optimized node value only in the last bit of the mean reduction.
  mean.total = weighted_total(mean.ce, mean.hsr, mean.mhar, mean.or_, weights);
  if (!std::isfinite(batch_total.scalar()))
    throw NumericError("train_step: non-finite loss at step " + std::to_string(opt.step + 1));

  GradMap grads = tape.backward(batch_total);
  for (const auto& [name, g] : grads)
    if (!g.all_finite())
      throw NumericError("train_step: non-finite gradient for " + name + " at step " +
                         std::to_string(opt.step + 1));
  TrainStepResult res;
  res.grad_norm = clip_global_norm(grads, clip_norm);
  adam_step(params, grads, opt);
  res.loss = std::move(mean);
  return res;
}

struct EvalResult {
  double accuracy = 0.0;
  double mean_ce = 0.0;
};

// Dropout-free evaluation: argmax accuracy and mean cross-entropy.
inline EvalResult evaluate(const ParamMap& params, const ModelConfig& mcfg,
                           const std::vector<Example>& examples) {
  if (examples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  std::size_t correct = 0;
  double ce_sum = 0.0;
  for (const Example& ex : examples) {
    Tape tape;
    ParamVars pv = bind_params(tape, params);
    ForwardTrace trace = forward_pass(tape, pv, mcfg, ex.tokens, false, RngStream(0));
    const Tensor& logits = trace.logits.value();
    correct += argmax_flat(logits) == static_cast<std::size_t>(ex.label);
    ce_sum += cross_entropy(logits, static_cast<std::size_t>(ex.label));
  }
  EvalResult r;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(examples.size());
  r.mean_ce = ce_sum * (1.0 / static_cast<double>(examples.size()));
  return r;
}

struct RunResult {
  std::uint64_t seed = 0;
  std::vector<LossBreakdown> epoch_loss;  // per-epoch means over steps
  std::vector<double> epoch_test_acc;
  double final_test_acc = 0.0;
  double best_test_acc = 0.0;
  std::size_t best_epoch = 0;  // 1-based; 0 = initial parameters
  ExperimentConfig config;
  ParamMap best_params;
  ParamMap final_params;
};

namespace detail {
inline const DataSplit& resolve_split(const ExperimentConfig& cfg, const DataSplit* shared,
                                      DataSplit& own) {
  if (shared) return *shared;
  own = split_dataset(generate_task(cfg.task, cfg.dataset_size, cfg.seq_len, cfg.data_seed));
  return own;
}

inline Dataset resolve_train(const ExperimentConfig& cfg, const DataSplit& split) {
  if (cfg.train_size == 0) return split.train;
  if (cfg.train_size > split.train.size())
    throw std::invalid_argument("run_training: train_size exceeds the train split");
  return nested_subset(split.train, cfg.train_size);
}

inline std::string jsonl_line(std::size_t step, const LossBreakdown& b) {
  return "{\"step\":" + std::to_string(step) + ",\"ce\":" + format_g17(b.ce) +
         ",\"hsr\":" + format_g17(b.hsr) + ",\"mhar\":" + format_g17(b.mhar) +
         ",\"or\":" + format_g17(b.or_) + ",\"total\":" + format_g17(b.total) + "}\n";
}
}  // namespace detail

// One full training run. With a non-empty out_dir the run writes
// train_log.jsonl (one JSON object per step), model_best.ckpt and
// model_final.ckpt into it. `shared` lets studies reuse one generated
// dataset split across seeds.
inline RunResult run_training(const ExperimentConfig& cfg, std::uint64_t seed,
                              const std::string& out_dir, const DataSplit* shared = nullptr) {
  cfg.validate();
  DataSplit own;
  const DataSplit& split = detail::resolve_split(cfg, shared, own);
  const Dataset train = detail::resolve_train(cfg, split);
  const ModelConfig mcfg = make_model_config(cfg, train);
  const LossWeights weights = make_loss_weights(cfg);

  ParamMap params = init_params(mcfg, seed);
  OptimizerState opt(make_adam_config(cfg));
  opt.init(params);

  std::ofstream log;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    log.open(out_dir + "/train_log.jsonl", std::ios::binary);
    if (!log) throw std::runtime_error("run_training: cannot open train log in " + out_dir);
  }

  RunResult result;
  result.seed = seed;
  result.config = cfg;

  RngStream run_rng(seed);
  RngStream dropout_root = run_rng.fork("dropout");
  RngStream epoch_root = run_rng.fork("epoch");

  const EvalResult initial = evaluate(params, mcfg, split.test.examples);
  result.best_test_acc = initial.accuracy;
  result.best_epoch = 0;
  result.best_params = params;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto epoch_batches = batches(train.size(), cfg.batch_size, epoch_root.fork(epoch));
    LossBreakdown epoch_mean;
    for (const auto& batch : epoch_batches) {
      TrainStepResult step = train_step(params, opt, mcfg, weights, cfg.k, cfg.clip_norm, train,
                                        batch, dropout_root.fork(opt.step + 1));
      if (log) log << detail::jsonl_line(opt.step, step.loss);
      epoch_mean.ce += step.loss.ce;
      epoch_mean.hsr += step.loss.hsr;
      epoch_mean.mhar += step.loss.mhar;
      epoch_mean.or_ += step.loss.or_;
      epoch_mean.total += step.loss.total;
    }
    const double inv_steps = 1.0 / static_cast<double>(epoch_batches.size());
    epoch_mean.ce *= inv_steps;
    epoch_mean.hsr *= inv_steps;
    epoch_mean.mhar *= inv_steps;
    epoch_mean.or_ *= inv_steps;
    epoch_mean.total *= inv_steps;
    result.epoch_loss.push_back(epoch_mean);

    const EvalResult ev = evaluate(params, mcfg, split.test.examples);
    result.epoch_test_acc.push_back(ev.accuracy);
    if (ev.accuracy > result.best_test_acc) {
      result.best_test_acc = ev.accuracy;
      result.best_epoch = epoch;
      result.best_params = params;
    }
  }
  result.final_test_acc =
      cfg.epochs == 0 ? initial.accuracy : result.epoch_test_acc.back();
  result.final_params = std::move(params);

  if (!out_dir.empty()) {
    save_checkpoint(out_dir + "/model_best.ckpt", result.best_params);
    save_checkpoint(out_dir + "/model_final.ckpt", result.final_params);
  }
  return result;
}

// Welch test on the best test accuracies of two run groups.
inline WelchResult compare_runs(const std::vector<RunResult>& a, const std::vector<RunResult>& b) {
  if (a.size() < 2 || b.size() < 2)
    throw std::invalid_argument("compare_runs: each side needs at least 2 runs");
  std::vector<double> accs_a, accs_b;
  for (const RunResult& r : a) accs_a.push_back(r.best_test_acc);
  for (const RunResult& r : b) accs_b.push_back(r.best_test_acc);
  return welch_t_test(accs_a, accs_b);
}

namespace detail {
inline double mean_best(const std::vector<RunResult>& runs) {
  double s = 0.0;
  for (const RunResult& r : runs) s += r.best_test_acc;
  return s / static_cast<double>(runs.size());
}

inline double std_best(const std::vector<RunResult>& runs) {
  if (runs.size() < 2) return 0.0;
  std::vector<double> accs;
  for (const RunResult& r : runs) accs.push_back(r.best_test_acc);
  return std::sqrt(sample_variance(accs));
}

inline double mean_final(const std::vector<RunResult>& runs) {
  double s = 0.0;
  for (const RunResult& r : runs) s += r.final_test_acc;
  return s / static_cast<double>(runs.size());
}

inline std::string acc4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

inline std::string stat6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline std::ofstream open_csv(const std::string& out_dir, const std::string& name) {
  std::filesystem::create_directories(out_dir);
  std::ofstream f(out_dir + "/" + name, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + out_dir + "/" + name);
  return f;
}
}  // namespace detail

struct AblationRow {
  std::string variant;
  std::vector<RunResult> runs;
  double mean_best = 0.0;
  double std_best = 0.0;
  double mean_final = 0.0;
};

// Full objective plus the three single-term-removed variants, each over the
// config's seed set. Writes results.csv (aggregates) and runs.csv (per-seed)
// when out_dir is non-empty.
inline std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg,
                                             const std::string& out_dir) {
  cfg.validate();
  DataSplit own;
  const DataSplit& split = detail::resolve_split(cfg, nullptr, own);
  struct Variant {
    const char* name;
    bool hsr, mhar, or_;
  };
  const Variant variants[] = {{"full", true, true, true},
                              {"wo_hsr", false, true, true},
                              {"wo_mhar", true, false, true},
                              {"wo_or", true, true, false}};
  std::vector<AblationRow> rows;
  for (const Variant& v : variants) {
    ExperimentConfig vc = cfg;
    vc.hsr_on = cfg.hsr_on && v.hsr;
    vc.mhar_on = cfg.mhar_on && v.mhar;
    vc.or_on = cfg.or_on && v.or_;
    AblationRow row;
    row.variant = v.name;
    for (std::uint64_t seed : cfg.seeds) row.runs.push_back(run_training(vc, seed, "", &split));
    row.mean_best = detail::mean_best(row.runs);
    row.std_best = detail::std_best(row.runs);
    row.mean_final = detail::mean_final(row.runs);
    rows.push_back(std::move(row));
  }
  if (!out_dir.empty()) {
    auto results = detail::open_csv(out_dir, "results.csv");
    results << "variant,n_seeds,mean_best_acc,std_best_acc,mean_final_acc\n";
    for (const AblationRow& row : rows)
      results << row.variant << ',' << row.runs.size() << ',' << detail::acc4(row.mean_best)
              << ',' << detail::acc4(row.std_best) << ',' << detail::acc4(row.mean_final) << '\n';
    auto runs = detail::open_csv(out_dir, "runs.csv");
    runs << "variant,seed,best_acc,final_acc,best_epoch\n";
    for (const AblationRow& row : rows)
      for (const RunResult& r : row.runs)
        runs << row.variant << ',' << r.seed << ',' << detail::acc4(r.best_test_acc) << ','
             << detail::acc4(r.final_test_acc) << ',' << r.best_epoch << '\n';
  }
  return rows;
}

struct SizeStudyRow {
  std::size_t size = 0;
  std::vector<RunResult> baseline;  // k=1, regularizers off
  std::vector<RunResult> lrdrop;
  WelchResult welch;
};

// Baseline (k=1 dropout training) vs LR-Drop on nested training subsets.
inline std::vector<SizeStudyRow> run_size_study(const ExperimentConfig& cfg,
                                                const std::string& out_dir) {
  cfg.validate();
  DataSplit own;
  const DataSplit& split = detail::resolve_split(cfg, nullptr, own);
  for (std::size_t size : cfg.sizes)
    if (size > split.train.size())
      throw std::invalid_argument("run_size_study: size exceeds the training pool");

  std::vector<SizeStudyRow> rows;
  for (std::size_t size : cfg.sizes) {
    SizeStudyRow row;
    row.size = size;
    ExperimentConfig base = cfg;
    base.train_size = size;
    base.k = 1;
    base.hsr_on = base.mhar_on = base.or_on = false;
    ExperimentConfig lrd = cfg;
    lrd.train_size = size;
    for (std::uint64_t seed : cfg.seeds) {
      row.baseline.push_back(run_training(base, seed, "", &split));
      row.lrdrop.push_back(run_training(lrd, seed, "", &split));
    }
    row.welch = compare_runs(row.lrdrop, row.baseline);
    rows.push_back(std::move(row));
  }
  if (!out_dir.empty()) {
    auto results = detail::open_csv(out_dir, "results.csv");
    results << "size,n_seeds,baseline_mean,baseline_std,lrdrop_mean,lrdrop_std,gap,t,df,p\n";
    for (const SizeStudyRow& row : rows)
      results << row.size << ',' << cfg.seeds.size() << ','
              << detail::acc4(detail::mean_best(row.baseline)) << ','
              << detail::acc4(detail::std_best(row.baseline)) << ','
              << detail::acc4(detail::mean_best(row.lrdrop)) << ','
              << detail::acc4(detail::std_best(row.lrdrop)) << ','
              << detail::stat6(row.welch.mean_gap) << ',' << detail::stat6(row.welch.t) << ','
              << detail::stat6(row.welch.df) << ',' << detail::stat6(row.welch.p) << '\n';
    auto runs = detail::open_csv(out_dir, "runs.csv");
    runs << "size,variant,seed,best_acc,final_acc\n";
    for (const SizeStudyRow& row : rows) {
      for (const RunResult& r : row.baseline)
        runs << row.size << ",baseline," << r.seed << ',' << detail::acc4(r.best_test_acc) << ','
             << detail::acc4(r.final_test_acc) << '\n';
      for (const RunResult& r : row.lrdrop)
        runs << row.size << ",lrdrop," << r.seed << ',' << detail::acc4(r.best_test_acc) << ','
             << detail::acc4(r.final_test_acc) << '\n';
    }
  }
  return rows;
}

struct KPassRow {
  std::size_t k = 0;
  std::vector<RunResult> runs;
  double mean_best = 0.0;
  double std_best = 0.0;
  double mean_final = 0.0;
};

// k ∈ {1, 2, 3} comparison at otherwise identical settings.
inline std::vector<KPassRow> run_kpass(const ExperimentConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  DataSplit own;
  const DataSplit& split = detail::resolve_split(cfg, nullptr, own);
  std::vector<KPassRow> rows;
  for (std::size_t k : {std::size_t{1}, std::size_t{2}, std::size_t{3}}) {
    ExperimentConfig kc = cfg;
    kc.k = k;
    KPassRow row;
    row.k = k;
    for (std::uint64_t seed : cfg.seeds) row.runs.push_back(run_training(kc, seed, "", &split));
    row.mean_best = detail::mean_best(row.runs);
    row.std_best = detail::std_best(row.runs);
    row.mean_final = detail::mean_final(row.runs);
    rows.push_back(std::move(row));
  }
  if (!out_dir.empty()) {
    auto results = detail::open_csv(out_dir, "results.csv");
    results << "k,n_seeds,mean_best_acc,std_best_acc,mean_final_acc\n";
    for (const KPassRow& row : rows)
      results << row.k << ',' << row.runs.size() << ',' << detail::acc4(row.mean_best) << ','
              << detail::acc4(row.std_best) << ',' << detail::acc4(row.mean_final) << '\n';
    auto runs = detail::open_csv(out_dir, "runs.csv");
    runs << "k,seed,best_acc,final_acc\n";
    for (const KPassRow& row : rows)
      for (const RunResult& r : row.runs)
        runs << row.k << ',' << r.seed << ',' << detail::acc4(r.best_test_acc) << ','
             << detail::acc4(r.final_test_acc) << '\n';
  }
  return rows;
}

}  // namespace lrdrop
