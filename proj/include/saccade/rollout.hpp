#pragma once

#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "saccade/attention_stack.hpp"

namespace saccade {

using Matrix = Eigen::MatrixXd;

enum class HeadFusion { mean, max, min };

HeadFusion parse_head_fusion(std::string_view text);

/// Per-patch attention mass taken from the CLS row of a rollout, with the
/// CLS column dropped. `heat` is row-major over a grid x grid layout.
struct HeatMap {
  std::vector<double> heat;
  int grid = 0;

  double at(int row, int col) const { return heat[static_cast<std::size_t>(row) * grid + col]; }
};

/// Reduces the heads of every layer to one S x S matrix. Mean keeps rows
/// stochastic; max/min do not (the rollout re-normalizes).
std::vector<Matrix> fuse_heads(const AttentionStack& attn, HeadFusion mode = HeadFusion::mean);

/// R = norm(A_L + I) ... norm(A_1 + I) with row normalization; later layers
/// multiply on the left. Each fused layer is row-normalized before the
/// identity is mixed in, so a zero row is rejected.
Matrix attention_rollout(const std::vector<Matrix>& fused);

/// heat = R[0, 1:], reshaped to a square grid. S - 1 must be a perfect square.
HeatMap cls_heat(const Matrix& rollout);

/// Indices of the k largest values in ascending index order. Ties prefer the
/// lower index. Requires 1 <= k <= values.size().
std::vector<int> topk_indices(std::span<const double> values, int k);
std::vector<int> topk_indices(std::span<const float> values, int k);

/// fuse_heads(mean) -> attention_rollout -> cls_heat.
HeatMap rollout_heat(const AttentionStack& attn, HeadFusion mode = HeadFusion::mean);

}  // namespace saccade
