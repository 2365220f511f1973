#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "saccade/attention_stack.hpp"
#include "saccade/params.hpp"
#include "saccade/transformer.hpp"

namespace saccade {

enum class PeMode { sinusoidal, learned, none };

std::string_view to_string(PeMode mode);
PeMode parse_pe_mode(std::string_view text);

struct ViTConfig {
  int image_size = 64;
  int patch_size = 8;
  int channels = 3;
  int dim = 64;
  int depth = 2;
  int heads = 2;
  int mlp_ratio = 4;
  int num_classes = 3;
  PeMode pe_mode = PeMode::sinusoidal;
  double dropout = 0.0;

  int grid() const { return image_size / patch_size; }
  int num_patches() const { return grid() * grid(); }
  int seq_len() const { return num_patches() + 1; }
  int patch_dim() const { return channels * patch_size * patch_size; }
  EncoderShape encoder() const { return {dim, depth, heads, mlp_ratio, dropout}; }

  /// Throws std::invalid_argument naming the violated constraint.
  void validate() const;
};

/// Fresh parameters: N(0, 0.02^2) patch embedding, CLS, learned PE and head;
/// Glorot-uniform attention/MLP weights; zero biases; unit LayerNorm gains.
ParamSet vit_init(const ViTConfig& config, Rng& rng);

/// images [B x C x H x W] (or a single [C x H x W]) -> logits [B x classes]
/// (or [classes]).
template <typename T>
BasicTensor<T> vit_forward(const BasicTensor<T>& images, const BasicParamSet<T>& params,
                           const ViTConfig& config, const ForwardOptions& opts = {});

/// Single image convenience returning the logits and the attention stack.
std::pair<Tensor, AttentionStack> vit_forward_with_attention(const Tensor& image, const ParamSet& params,
                                                             const ViTConfig& config);

}  // namespace saccade
