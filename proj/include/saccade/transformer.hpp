#pragma once

#include <string>
#include <vector>

#include "saccade/attention_stack.hpp"
#include "saccade/params.hpp"
#include "saccade/rng.hpp"

namespace saccade {

/// Pre-norm encoder geometry shared by the teacher/baseline ViT and the
/// reduced-sequence student.
struct EncoderShape {
  int dim = 64;
  int depth = 2;
  int heads = 2;
  int mlp_ratio = 4;
  double dropout = 0.0;
};

/// Per-call knobs. `attention`, when set, receives one AttentionStack per
/// batch element. `dropout_rng` switches on training-mode dropout.
struct ForwardOptions {
  std::vector<AttentionStack>* attention = nullptr;
  Rng* dropout_rng = nullptr;
};

/// Adds `blocks.<l>.*` and the final `norm.*` parameters.
void init_encoder(ParamSet& params, const EncoderShape& shape, Rng& rng);

/// L pre-norm blocks (LN -> MHA -> residual -> LN -> MLP -> residual) over
/// x[B x S x D], followed by the final LayerNorm applied to the CLS row.
/// Returns [B x D].
template <typename T>
BasicTensor<T> encode_cls(const BasicParamSet<T>& params, const EncoderShape& shape,
                          BasicTensor<T> x, const ForwardOptions& opts);

/// Fixed sine/cosine table [S x D]; row 0 belongs to the CLS token.
/// Odd D is rejected.
Tensor sinusoidal_pe(int seq, int dim);

}  // namespace saccade
