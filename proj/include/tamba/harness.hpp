#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tamba/generator.hpp"
#include "tamba/metrics.hpp"
#include "tamba/objective.hpp"

namespace tamba {

struct OptimConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double plateau_factor = 0.1;    // lr multiplier on patience expiry
  int plateau_patience = 5;       // consecutive epochs without improvement
  double min_improvement = 1e-4;  // absolute validation-minADE decrease that counts

  friend bool operator==(const OptimConfig&, const OptimConfig&) = default;
};

// One training/evaluation run. Desk-scale defaults; full-scale training
// would raise these to batch 128 and 50 epochs on much larger corpora.
struct RunConfig {
  ModelConfig model;
  GeneratorSpec data;
  OptimConfig optim;
  LossConfig loss;
  int batch_size = 16;  // full scale: 128
  int epochs = 20;      // full scale: 50
  int n_train = 512;
  int n_val = 128;
  uint64_t seed = 0;
  std::string scenario_dir;  // when set, load scenarios from disk instead of
                             // generating; first n_train files train, next
                             // n_val validate

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Strict JSON codec: unknown keys, wrong types and out-of-range values all
// raise ConfigError. Missing keys keep their defaults.
RunConfig run_config_from_json(const std::string& text);
std::string run_config_to_json(const RunConfig& cfg);

// Decorrelated child seed for stream `stream`, element `index`.
uint64_t derive_seed(uint64_t seed, uint64_t stream, uint64_t index);

class Adam {
 public:
  explicit Adam(const OptimConfig& cfg) : cfg_(cfg) {}

  // One update from the gradients currently held by the store's tensors.
  // Missing gradients count as zero. Does not clear gradients.
  void step(ParamStore& params, double lr);
  int64_t steps() const { return t_; }

 private:
  OptimConfig cfg_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Validation-driven lr decay. Feed one metric per epoch; the lr only ever
// decreases, by exactly `factor`, when `patience` consecutive observations
// fail to improve on the best seen by at least `min_improvement`. The first
// observation sets the best and counts toward patience (so a metric that
// never moves cuts the lr on observation number `patience`).
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, int patience, double min_improvement);

  double lr() const { return lr_; }
  int cuts() const { return cuts_; }
  double best() const { return best_; }
  bool observe(double metric);  // true when this call cut the lr

 private:
  double lr_, factor_, min_improvement_;
  int patience_, bad_ = 0, cuts_ = 0;
  double best_ = 0.0;
  bool has_best_ = false;
};

struct TrainResult {
  std::vector<double> train_loss;   // per-epoch mean of batch totals
  std::vector<double> val_min_ade;  // per-epoch validation metric
  double best_val = 0.0;
  int best_epoch = 0;  // 1-based
  double baseline_min_ade = 0.0;  // constant-position predictor on validation
  double final_lr = 0.0;
  std::string checkpoint_path;  // best-validation weights
  std::string log_path;         // per-step CSV
};

// Minibatch optimization of the total loss with per-epoch validation,
// plateau lr decay and best-validation checkpointing. Writes best.ckpt,
// train_log.csv, train_summary.json and config.json into out_dir. A
// non-finite loss aborts with the epoch and step in the error message.
TrainResult train(const RunConfig& cfg, const std::string& out_dir);

using Predictor =
    std::function<PredictionSet(const Scenario& s, const std::string& target_id)>;

// Shared evaluation core: runs the predictor over every target, writes one
// prediction CSV per target plus report.json, and returns the batch metrics
// at each requested K. params_m / flops_g are carried into the report.
MetricReport evaluate_dataset(const Predictor& predict_fn,
                              const std::vector<Scenario>& data,
                              const std::vector<int>& ks, double params_m,
                              double flops_g, const std::string& out_dir);

// Loads the checkpoint into a model built from cfg.model (shape mismatch is
// a CheckpointError) and evaluates the validation split at K=6 and K=1.
MetricReport evaluate(const RunConfig& cfg, const std::string& checkpoint_path,
                      const std::string& out_dir);

// Trains every {tamba, mamba, attention} x {joint, independent} cell on the
// shared seed and data, evaluates each best checkpoint, and writes
// ablation.csv (6 rows: block, joint, minFDE_6, minADE_6, minFDE_1,
// minADE_1, params_M). Cell artifacts land in out_dir/cell_<kind>_<joint>.
void ablate(const RunConfig& cfg, const std::string& out_dir);

struct BenchRow {
  int64_t length = 0;
  std::string kind;       // "tamba" | "attention"
  double median_ns = 0;   // per forward
  uint64_t flops = 0;     // analytic forward cost
};

struct BenchReport {
  std::vector<BenchRow> rows;
  double slope_ssm = 0.0;        // log-log fit over all lengths
  double slope_attention = 0.0;  // log-log fit over lengths >= 512 when
                                 // available, else over all lengths
};

std::vector<int64_t> default_benchmark_lengths();  // 64, 128, ..., 4096

// Times one forward of a tamba block against an attention block at equal
// width over each length, single-threaded, with finite checks and gradient
// recording disabled in the timed region. Inner iterations auto-increase
// until a sample spans at least ~1 ms, medians are taken over `reps` >= 5
// samples. Writes benchmark.csv and benchmark_summary.json into out_dir.
BenchReport benchmark_scaling(const BlockConfig& cfg,
                              const std::vector<int64_t>& lengths, int reps,
                              const std::string& out_dir);

// Writes n scenario files (scenario_0000.json, ...) plus index.json into
// out_dir. Regeneration with the same (spec, n, seed) is byte-identical.
void generate_dataset(const GeneratorSpec& spec, int n, uint64_t seed,
                      const std::string& out_dir);

// Loads every file listed by out_dir/index.json, in manifest order.
std::vector<Scenario> load_dataset(const std::string& dir);

}  // namespace tamba
