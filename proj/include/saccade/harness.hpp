#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "saccade/checkpoint.hpp"
#include "saccade/config.hpp"
#include "saccade/cost.hpp"
#include "saccade/data.hpp"
#include "saccade/targets.hpp"

namespace saccade {

/// Where a run reads and writes. Relative paths inside a config are resolved
/// against `base_dir`.
struct RunContext {
  std::filesystem::path data_dir;
  std::filesystem::path base_dir = ".";
  /// JSON-lines history, appended and flushed once per epoch (optional).
  std::filesystem::path history_path;
  std::ostream* log = nullptr;

  std::filesystem::path resolve(const std::string& p) const;
};

std::string_view split_name(CifarSplit split);

/// One split of the configured dataset (shapes are generated, CIFAR-100 is
/// read from `data_dir`).
Dataset load_split(const ExperimentConfig& config, const RunContext& ctx, CifarSplit split);

// ------------------------------------------------------------ early stopping

struct HistoryEntry {
  int epoch = 0;
  double train_loss = 0.0;
  std::string metric;
  double val_metric = 0.0;
  std::int64_t steps = 0;  // optimizer steps taken so far
  bool improved = false;
};

Json to_json(const HistoryEntry& e);

struct EpochStats {
  double train_loss = 0.0;
  std::int64_t steps = 0;
};

struct LoopHooks {
  std::function<EpochStats(int epoch)> train_epoch;
  std::function<double(int epoch)> validate;
  /// Called when the validation metric reaches a new best (snapshot here).
  std::function<void(int epoch)> on_improved;
  std::function<void(const HistoryEntry&)> on_epoch;
  std::string metric = "val_accuracy";
};

struct LoopResult {
  int best_epoch = 0;
  double best_metric = 0.0;
  int epochs_run = 0;
  std::vector<HistoryEntry> history;
};

/// Epochs 1..max_epochs; stops once the validation metric has failed to
/// strictly improve for `patience` consecutive epochs.
LoopResult run_early_stopping(int max_epochs, int patience, const LoopHooks& hooks);

// ---------------------------------------------------------------- training

struct TrainResult {
  Checkpoint best;
  Checkpoint last;  // weights after the final epoch run
  LoopResult loop;
};

/// Trains the configured model and returns the best-validation checkpoint.
/// A sanvit checkpoint with the san source also carries the selector tensors
/// (prefixed "selector.") so that it is self-contained.
TrainResult train(const ExperimentConfig& config, const RunContext& ctx);

// -------------------------------------------------------------- evaluation

struct EvalMetrics {
  std::string model;
  std::string split;
  std::int64_t examples = 0;
  std::optional<double> accuracy;
  std::optional<SelectorMetrics> selector;
};

Json to_json(const EvalMetrics& m);

/// Top-1 accuracy (ViT and SAN-ViT) or SelectorMetrics (selector) of a
/// checkpoint on one split. Batch size does not change the result.
EvalMetrics evaluate(const Checkpoint& ckpt, const RunContext& ctx, CifarSplit split,
                     std::optional<int> batch_size = std::nullopt);
EvalMetrics evaluate(const Checkpoint& ckpt, const Dataset& data, const RunContext& ctx, CifarSplit split,
                     std::optional<int> batch_size = std::nullopt);

// ----------------------------------------------------------------- targets

/// Writes train/validation/test .sact files into `out_dir` from the
/// teacher named by `config.teacher_checkpoint`.
void build_targets(const ExperimentConfig& config, const RunContext& ctx, const std::filesystem::path& out_dir);
/// Builds the target files under `config.targets_dir` unless all exist.
void ensure_targets(const ExperimentConfig& config, const RunContext& ctx);
std::filesystem::path target_path(const std::filesystem::path& dir, CifarSplit split);
/// Saccade records in dataset order; every image must have one.
std::vector<SaccadeRecord> align_targets(const SaccadeFile& file, const Dataset& data, int num_patches, int k);

// ------------------------------------------------------------------- costs

/// Cost of the model a config describes. SAN-ViT with the san source is
/// costed as the full selector + student pipeline.
CostReport config_cost(const ExperimentConfig& config);
Json to_json(const CostReport& r);

// ---------------------------------------------------------------- heatmaps

/// Binary PGM bytes of g x g values min-max scaled to 0..255 (half-down
/// rounding, constant input gives zeros).
std::vector<std::uint8_t> encode_heatmap_pgm(const HeatMap& heat);
void emit_heatmap_pgm(const HeatMap& heat, const std::filesystem::path& path);
/// g x g PGM with 255 on the listed patches and 0 elsewhere.
void emit_mask_pgm(const std::vector<int>& indices, int grid, const std::filesystem::path& path);

// ----------------------------------------------------------------- compare

struct CompareRow {
  std::string name;
  std::string model;
  Count params = 0;
  Count flops = 0;
  Count transformer_flops = 0;
  Count attention_comparisons = 0;
  std::optional<double> accuracy;
  std::optional<double> overlap_at_k;
  std::optional<double> flop_ratio;         // flops / baseline flops
  std::optional<double> transformer_ratio;  // transformer flops / baseline
  int best_epoch = 0;
  int epochs_run = 0;
  CostReport cost;
};

struct CompareReport {
  std::string baseline;
  std::vector<CompareRow> rows;
  double reference_comparison_ratio = 0.0;  // 196^2 / 32^2
};

Json to_json(const CompareReport& r);
std::string format_table(const CompareReport& r);

/// Trains and evaluates every config in order under `out_dir/<name>/`,
/// building saccade targets on demand. Relative config paths resolve
/// against `out_dir`. Needs at least two configs.
CompareReport compare(const std::vector<ExperimentConfig>& configs, const RunContext& ctx,
                      const std::filesystem::path& out_dir);

struct RunOutcome {
  TrainResult train;
  EvalMetrics test;
};

/// Writes config.json, history.jsonl, checkpoint.sanw and metrics.json for
/// one run into `dir`.
RunOutcome run_experiment(const ExperimentConfig& config, const RunContext& ctx, const std::filesystem::path& dir);

}  // namespace saccade
