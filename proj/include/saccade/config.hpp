#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "saccade/rollout.hpp"
#include "saccade/sanvit.hpp"
#include "saccade/selector.hpp"
#include "saccade/vit.hpp"

namespace saccade {

using Json = nlohmann::ordered_json;

enum class DatasetKind { cifar100, shapes };
enum class ModelKind { teacher_vit, simple_vit, selector, sanvit };

std::string_view to_string(DatasetKind kind);
std::string_view to_string(ModelKind kind);
DatasetKind parse_dataset_kind(std::string_view text);
ModelKind parse_model_kind(std::string_view text);

struct OptimizerConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AugmentConfig {
  bool enabled = false;
  double scale_lo = 0.5;
  double scale_hi = 1.0;
  double flip_p = 0.5;
};

struct ShapesConfig {
  int train = 1000;
  int validation = 200;
  int test = 500;
  std::uint64_t seed = 7;
  int image_size = 64;
};

struct SanVitOptions {
  int k = 8;
  PeVariant pe_variant = PeVariant::sin_full_preslice;
  IndexSource index_source = IndexSource::san;
};

/// Everything a run depends on besides its input files. Relative paths are
/// resolved against a base directory chosen by the caller.
struct ExperimentConfig {
  std::string name = "run";
  DatasetKind dataset = DatasetKind::shapes;
  ModelKind model = ModelKind::teacher_vit;
  ViTConfig vit;
  SelectorConfig selector;
  SanVitOptions sanvit;
  OptimizerConfig optimizer;
  int batch_size = 32;
  int eval_batch_size = 64;
  int max_epochs = 30;
  int early_stop_patience = 10;
  std::uint64_t seed = 0;
  AugmentConfig augmentation;
  ShapesConfig shapes;
  int threads = 1;
  // Saccade targets: top-k size and head fusion used when building them.
  int target_k = 8;
  HeadFusion fusion = HeadFusion::mean;
  std::string teacher_checkpoint;
  std::string selector_checkpoint;
  std::string targets_dir;

  SanVitConfig sanvit_config() const;
  /// Cross-field checks (grid agreement, k bounds, augmentation rules).
  void validate() const;
};

Json to_json(const ViTConfig& c);
Json to_json(const SelectorConfig& c);
Json to_json(const ExperimentConfig& c);
ViTConfig vit_config_from_json(const Json& j);
SelectorConfig selector_config_from_json(const Json& j);
/// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig experiment_from_json(const Json& j);

ExperimentConfig load_experiment(const std::filesystem::path& path);
void save_experiment(const std::filesystem::path& path, const ExperimentConfig& config);

}  // namespace saccade
