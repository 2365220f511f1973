#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "saccade/params.hpp"
#include "saccade/transformer.hpp"

namespace saccade {

struct SelectorStage {
  int channels = 32;
  int blocks = 2;
};

/// Residual CNN that scores every student patch. Stages after the first
/// open with a stride-2 block (4x4 conv, 2x2 projection shortcut).
struct SelectorConfig {
  std::vector<SelectorStage> stages{{32, 2}, {64, 2}, {128, 2}};
  int input_size = 64;
  int channels = 3;
  int stem_kernel = 4;
  int stem_stride = 4;
  int stem_padding = 0;
  int num_patches = 64;  // N, must match the student's grid
  int k = 8;
  double pos_weight = 1.0;

  /// Spatial size at the output of every stage (the first keeps the stem's).
  std::vector<int> feature_sizes() const;
  void validate() const;
};

ParamSet selector_init(const SelectorConfig& config, Rng& rng);

/// images [B x C x H x W] (or [C x H x W]) -> raw logits [B x N] (or [N]).
template <typename T>
BasicTensor<T> selector_forward(const BasicTensor<T>& images, const BasicParamSet<T>& params,
                                const SelectorConfig& config);

/// Mean BCE over all N positions; positives weighted by config pos_weight.
template <typename T>
BasicTensor<T> selector_loss(const BasicTensor<T>& logits, const BasicTensor<T>& multi_hot, T pos_weight = T(1));

/// k highest-scoring patches in ascending index order.
std::vector<int> predict_topk(std::span<const float> logits, int k);

struct SelectorMetrics {
  double per_patch_accuracy = 0.0;
  std::optional<double> sensitivity;  // absent without positives
  std::optional<double> specificity;  // absent without negatives
  double overlap_at_k = 0.0;
};

/// Running confusion counts at threshold 0.5 (logit 0) plus top-k overlap.
class SelectionTally {
 public:
  void add(std::span<const float> logits, std::span<const std::uint8_t> gt_multi_hot, int k);
  SelectorMetrics metrics() const;
  std::int64_t images() const { return images_; }

 private:
  std::int64_t tp_ = 0, tn_ = 0, fp_ = 0, fn_ = 0;
  std::int64_t images_ = 0;
  double overlap_sum_ = 0.0;
};

SelectorMetrics selection_metrics(std::span<const float> logits, std::span<const std::uint8_t> gt_multi_hot, int k);

}  // namespace saccade
