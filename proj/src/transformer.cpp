#include "saccade/transformer.hpp"

#include <cmath>
#include <stdexcept>

#include "saccade/ops.hpp"

namespace saccade {

namespace {

std::string block_name(int layer, const char* leaf) {
  return "blocks." + std::to_string(layer) + "." + leaf;
}

template <typename T>
BasicTensor<T> split_heads(const BasicTensor<T>& x, int batch, int seq, int heads, int head_dim) {
  auto y = permute(reshape(x, Shape{batch, seq, heads, head_dim}), {0, 2, 1, 3});
  return reshape(y, Shape{batch * heads, seq, head_dim});
}

template <typename T>
BasicTensor<T> merge_heads(const BasicTensor<T>& x, int batch, int seq, int heads, int head_dim) {
  auto y = permute(reshape(x, Shape{batch, heads, seq, head_dim}), {0, 2, 1, 3});
  return reshape(y, Shape{batch, seq, heads * head_dim});
}

template <typename T>
void record_attention(const BasicTensor<T>& probs, int layer, int batch, int heads, int seq,
                      std::vector<AttentionStack>& sink, int depth) {
  if (sink.size() != static_cast<std::size_t>(batch)) {
    sink.assign(static_cast<std::size_t>(batch), AttentionStack(depth, heads, seq));
  }
  const std::size_t mat = static_cast<std::size_t>(seq) * seq;
  const T* src = probs.data().data();
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      float* dst = sink[static_cast<std::size_t>(b)].probs.data() +
                   sink[static_cast<std::size_t>(b)].offset(layer, h);
      const T* s = src + (static_cast<std::size_t>(b) * heads + h) * mat;
      for (std::size_t i = 0; i < mat; ++i) dst[i] = static_cast<float>(s[i]);
    }
  }
}

}  // namespace

void init_encoder(ParamSet& params, const EncoderShape& shape, Rng& rng) {
  const int d = shape.dim, hidden = shape.dim * shape.mlp_ratio;
  for (int l = 0; l < shape.depth; ++l) {
    params.add(block_name(l, "ln1.gamma"), init::ones({d}));
    params.add(block_name(l, "ln1.beta"), init::zeros({d}));
    for (const char* proj : {"attn.q", "attn.k", "attn.v", "attn.out"}) {
      params.add(block_name(l, (std::string(proj) + ".weight").c_str()), init::xavier_uniform(d, d, rng));
      params.add(block_name(l, (std::string(proj) + ".bias").c_str()), init::zeros({d}));
    }
    params.add(block_name(l, "ln2.gamma"), init::ones({d}));
    params.add(block_name(l, "ln2.beta"), init::zeros({d}));
    params.add(block_name(l, "mlp.fc1.weight"), init::xavier_uniform(d, hidden, rng));
    params.add(block_name(l, "mlp.fc1.bias"), init::zeros({hidden}));
    params.add(block_name(l, "mlp.fc2.weight"), init::xavier_uniform(hidden, d, rng));
    params.add(block_name(l, "mlp.fc2.bias"), init::zeros({d}));
  }
  params.add("norm.gamma", init::ones({d}));
  params.add("norm.beta", init::zeros({d}));
}

template <typename T>
BasicTensor<T> encode_cls(const BasicParamSet<T>& params, const EncoderShape& shape,
                          BasicTensor<T> x, const ForwardOptions& opts) {
  if (x.rank() != 3 || x.dim(2) != shape.dim) {
    throw ShapeError("encoder expects [B x S x " + std::to_string(shape.dim) + "], got " +
                     shape_str(x.shape()));
  }
  const int batch = x.dim(0), seq = x.dim(1), heads = shape.heads;
  const int head_dim = shape.dim / heads;
  const T inv_sqrt = T(1.0 / std::sqrt(static_cast<double>(head_dim)));
  const bool drop = opts.dropout_rng != nullptr && shape.dropout > 0.0;
  auto p = [&](int l, const char* leaf) -> const BasicTensor<T>& { return params.get(block_name(l, leaf)); };

  for (int l = 0; l < shape.depth; ++l) {
    auto h = layer_norm(x, p(l, "ln1.gamma"), p(l, "ln1.beta"));
    auto q = split_heads(linear(h, p(l, "attn.q.weight"), p(l, "attn.q.bias")), batch, seq, heads, head_dim);
    auto k = split_heads(linear(h, p(l, "attn.k.weight"), p(l, "attn.k.bias")), batch, seq, heads, head_dim);
    auto v = split_heads(linear(h, p(l, "attn.v.weight"), p(l, "attn.v.bias")), batch, seq, heads, head_dim);
    auto probs = softmax(scale(bmm(q, k, false, true), inv_sqrt));
    if (opts.attention) record_attention(probs, l, batch, heads, seq, *opts.attention, shape.depth);
    auto ctx = merge_heads(bmm(probs, v), batch, seq, heads, head_dim);
    auto attn_out = linear(ctx, p(l, "attn.out.weight"), p(l, "attn.out.bias"));
    if (drop) attn_out = dropout(attn_out, shape.dropout, *opts.dropout_rng);
    x = add(x, attn_out);

    auto m = layer_norm(x, p(l, "ln2.gamma"), p(l, "ln2.beta"));
    m = gelu(linear(m, p(l, "mlp.fc1.weight"), p(l, "mlp.fc1.bias")));
    m = linear(m, p(l, "mlp.fc2.weight"), p(l, "mlp.fc2.bias"));
    if (drop) m = dropout(m, shape.dropout, *opts.dropout_rng);
    x = add(x, m);
  }
  // LayerNorm is row-wise, so normalizing only the CLS row is exact.
  return layer_norm(select_token(x, 0), params.get("norm.gamma"), params.get("norm.beta"));
}

Tensor sinusoidal_pe(int seq, int dim) {
  if (dim % 2 != 0) throw ShapeError("sinusoidal_pe: embedding width must be even, got " + std::to_string(dim));
  if (seq < 1) throw ShapeError("sinusoidal_pe: sequence length must be positive");
  std::vector<float> v(static_cast<std::size_t>(seq) * dim);
  for (int pos = 0; pos < seq; ++pos) {
    for (int i = 0; i < dim / 2; ++i) {
      double angle = pos / std::pow(10000.0, (2.0 * i) / dim);
      v[static_cast<std::size_t>(pos) * dim + 2 * i] = static_cast<float>(std::sin(angle));
      v[static_cast<std::size_t>(pos) * dim + 2 * i + 1] = static_cast<float>(std::cos(angle));
    }
  }
  return Tensor(Shape{seq, dim}, std::move(v));
}

template BasicTensor<float> encode_cls(const BasicParamSet<float>&, const EncoderShape&, BasicTensor<float>,
                                       const ForwardOptions&);
template BasicTensor<double> encode_cls(const BasicParamSet<double>&, const EncoderShape&, BasicTensor<double>,
                                        const ForwardOptions&);

}  // namespace saccade
