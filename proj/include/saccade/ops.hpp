#pragma once

#include <span>
#include <vector>

#include "saccade/rng.hpp"
#include "saccade/tensor.hpp"

// Differentiable primitives. Every op records a tape entry when grad mode is
// on and at least one input requires grad. All ops are instantiated for
// float (training) and double (gradient checks).
namespace saccade {

// Elementwise. `b` may equal a's shape or a trailing suffix of it, in which
// case it is broadcast over the leading axes (biases, positional tables).
template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& a, T s);
template <typename T> BasicTensor<T> relu(const BasicTensor<T>& x);
/// tanh approximation.
template <typename T> BasicTensor<T> gelu(const BasicTensor<T>& x);
/// Inverted dropout; identity when p == 0.
template <typename T> BasicTensor<T> dropout(const BasicTensor<T>& x, double p, Rng& rng);

// Layout.
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);
template <typename T> BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<int>& axes);

// Linear algebra.
/// [m x k] . [k x n] -> [m x n]
template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// Batched product over the leading axis with optional transposes of the
/// trailing two axes: [B x m x k] . [B x k x n].
template <typename T>
BasicTensor<T> bmm(const BasicTensor<T>& a, const BasicTensor<T>& b, bool trans_a = false,
                   bool trans_b = false);
/// x[... x in] . w[in x out] + bias[out]; bias may be undefined.
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& bias);

// Normalization.
/// Softmax over the last axis, max-subtracted.
template <typename T> BasicTensor<T> softmax(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps = T(1e-5));

// Convolution.
struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
};
/// Cross-correlation, zero padding. x: [B x C x H x W] or [C x H x W];
/// w: [O x C x kh x kw]; bias: [O] or undefined.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& bias,
                      Conv2dOptions opts = {});
/// [B x C x H x W] -> [B x C]
template <typename T> BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);

// Sequence plumbing.
/// [B x 3 x H x W] -> [B x N x 3P^2] (or [3 x H x W] -> [N x 3P^2]); patches
/// row-major over the grid, each flattened channel, row, column.
template <typename T> BasicTensor<T> patchify(const BasicTensor<T>& images, int patch_size);
/// [B x N x D] with token [D] -> [B x (N+1) x D], token at position 0.
template <typename T>
BasicTensor<T> prepend_token(const BasicTensor<T>& x, const BasicTensor<T>& token);
/// Row gather along axis -2: [B x N x D] with B index lists of equal length
/// k -> [B x k x D]. Gradients scatter back to the selected rows only.
/// Duplicate or out-of-range indices are rejected.
template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& x, const std::vector<std::vector<int>>& indices);
/// 2-D convenience: [N x D] -> [k x D].
template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& x, std::span<const int> indices);
/// [B x S x D] -> [B x D] at sequence position `pos`.
template <typename T> BasicTensor<T> select_token(const BasicTensor<T>& x, int pos);

// Reductions and losses (all return shape [1]).
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& x);
/// Mean over rows of -log softmax(logits)[label]. logits: [B x C] or [C].
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels);
/// Mean binary cross-entropy on logits, stable form. `pos_weight` scales
/// the positive term.
template <typename T>
BasicTensor<T> bce_with_logits(const BasicTensor<T>& logits, const BasicTensor<T>& targets,
                               T pos_weight = T(1));

}  // namespace saccade
