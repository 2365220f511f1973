#include "saccade/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace saccade {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
using BackwardFn = std::function<void(Node<T>&)>;

template <typename T>
BasicTensor<T> make_result(Shape shape, Buffer<T> data,
                           std::initializer_list<const BasicTensor<T>*> inputs,
                           BackwardFn<T> fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool track = false;
  if (grad_enabled()) {
    for (const auto* in : inputs) track = track || (in->defined() && in->requires_grad());
  }
  if (track) {
    node->requires_grad = true;
    for (const auto* in : inputs) {
      if (in->defined()) node->parents.push_back(in->node_ptr());
    }
    node->backward = std::move(fn);
  }
  return BasicTensor<T>::from_node(std::move(node));
}

template <typename T>
Buffer<T>* grad_of(Node<T>& self, std::size_t i) {
  if (i >= self.parents.size()) return nullptr;
  Node<T>& p = *self.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

[[noreturn]] void shape_fail(const std::string& op, const std::string& what) {
  throw ShapeError(op + ": " + what);
}

bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.rbegin(), tail.rend(), full.rbegin());
}

}  // namespace

// ---------------------------------------------------------------- elementwise

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (!is_suffix(a.shape(), b.shape())) {
    shape_fail("add", "cannot broadcast " + shape_str(b.shape()) + " onto " + shape_str(a.shape()));
  }
  const std::size_t n = a.numel(), nb = b.numel();
  Buffer<T> out(n);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t i = 0; i < n; i += nb) {
    for (std::size_t j = 0; j < nb; ++j) out[i + j] = pa[i + j] + pb[j];
  }
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [n, nb](Node<T>& self) {
    const T* g = self.grad.data();
    if (auto* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i];
    }
    if (auto* gb = grad_of(self, 1)) {
      for (std::size_t i = 0; i < n; i += nb) {
        for (std::size_t j = 0; j < nb; ++j) (*gb)[j] += g[i + j];
      }
    }
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    shape_fail("mul", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t n = a.numel();
  Buffer<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [n](Node<T>& self) {
    const auto& da = self.parents[0]->data;
    const auto& db = self.parents[1]->data;
    if (auto* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) (*ga)[i] += self.grad[i] * db[i];
    }
    if (auto* gb = grad_of(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) (*gb)[i] += self.grad[i] * da[i];
    }
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T s) {
  Buffer<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  return make_result<T>(a.shape(), std::move(out), {&a}, [s](Node<T>& self) {
    auto* ga = grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * s;
  });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  Buffer<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  return make_result<T>(x.shape(), std::move(out), {&x}, [](Node<T>& self) {
    auto* gx = grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (self.data[i] > T(0)) (*gx)[i] += self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = T(0.044715);
  Buffer<T> out(x.numel());
  const T* px = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    T v = px[i];
    out[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v)));
  }
  return make_result<T>(x.shape(), std::move(out), {&x}, [](Node<T>& self) {
    const auto& in = self.parents[0]->data;
    auto* gx = grad_of(self, 0);
    for (std::size_t i = 0; i < in.size(); ++i) {
      T v = in[i];
      T t = std::tanh(c * (v + a * v * v * v));
      T d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * a * v * v);
      (*gx)[i] += self.grad[i] * d;
    }
  });
}

template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  const T keep_scale = T(1.0 / (1.0 - p));
  Buffer<T> mask(x.numel());
  for (auto& m : mask) m = rng.bernoulli(p) ? T(0) : keep_scale;
  Buffer<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * mask[i];
  return make_result<T>(x.shape(), std::move(out), {&x}, [mask = std::move(mask)](Node<T>& self) {
    auto* gx = grad_of(self, 0);
    for (std::size_t i = 0; i < mask.size(); ++i) (*gx)[i] += self.grad[i] * mask[i];
  });
}

// --------------------------------------------------------------------- layout

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    shape_fail("reshape", shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Buffer<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), {&x}, [](Node<T>& self) {
    auto* gx = grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i];
  });
}

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<int>& axes) {
  const int r = x.rank();
  if (static_cast<int>(axes.size()) != r) shape_fail("permute", "axis count mismatch");
  std::vector<bool> used(static_cast<std::size_t>(r), false);
  for (int a : axes) {
    if (a < 0 || a >= r || used[static_cast<std::size_t>(a)]) shape_fail("permute", "invalid axes");
    used[static_cast<std::size_t>(a)] = true;
  }
  const Shape& in_shape = x.shape();
  std::vector<std::size_t> in_strides(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i) {
    in_strides[static_cast<std::size_t>(i)] =
        in_strides[static_cast<std::size_t>(i + 1)] * static_cast<std::size_t>(in_shape[static_cast<std::size_t>(i + 1)]);
  }
  Shape out_shape(static_cast<std::size_t>(r));
  std::vector<std::size_t> step(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    out_shape[static_cast<std::size_t>(i)] = in_shape[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];
    step[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];
  }
  // Source offset for every output position, walked odometer-style.
  const std::size_t n = x.numel();
  std::vector<std::size_t> src(n);
  std::vector<int> counter(static_cast<std::size_t>(r), 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    src[i] = offset;
    for (int d = r - 1; d >= 0; --d) {
      auto du = static_cast<std::size_t>(d);
      offset += step[du];
      if (++counter[du] < out_shape[du]) break;
      offset -= step[du] * static_cast<std::size_t>(out_shape[du]);
      counter[du] = 0;
    }
  }
  Buffer<T> out(n);
  const T* px = x.data().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = px[src[i]];
  return make_result<T>(std::move(out_shape), std::move(out), {&x}, [src = std::move(src)](Node<T>& self) {
    auto* gx = grad_of(self, 0);
    for (std::size_t i = 0; i < src.size(); ++i) (*gx)[src[i]] += self.grad[i];
  });
}

// ------------------------------------------------------------- linear algebra

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_fail("matmul", "inner dimensions disagree: " + shape_str(a.shape()) + " . " +
                             shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Buffer<T> out(static_cast<std::size_t>(m) * static_cast<std::size_t>(n));
  MatMap<T>(out.data(), m, n).noalias() =
      CMatMap<T>(a.data().data(), m, k) * CMatMap<T>(b.data().data(), k, n);
  return make_result<T>(Shape{m, n}, std::move(out), {&a, &b}, [m, k, n](Node<T>& self) {
    CMatMap<T> g(self.grad.data(), m, n);
    CMatMap<T> am(self.parents[0]->data.data(), m, k);
    CMatMap<T> bm(self.parents[1]->data.data(), k, n);
    if (auto* ga = grad_of(self, 0)) MatMap<T>(ga->data(), m, k).noalias() += g * bm.transpose();
    if (auto* gb = grad_of(self, 1)) MatMap<T>(gb->data(), k, n).noalias() += am.transpose() * g;
  });
}

template <typename T>
BasicTensor<T> bmm(const BasicTensor<T>& a, const BasicTensor<T>& b, bool trans_a, bool trans_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
    shape_fail("bmm", "need matching [B x m x k] operands, got " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()));
  }
  const int batch = a.dim(0);
  const int ar = a.dim(1), ac = a.dim(2), br = b.dim(1), bc = b.dim(2);
  const int m = trans_a ? ac : ar, k = trans_a ? ar : ac;
  const int kb = trans_b ? bc : br, n = trans_b ? br : bc;
  if (k != kb) {
    shape_fail("bmm", "inner dimensions disagree: " + shape_str(a.shape()) + " . " +
                          shape_str(b.shape()));
  }
  const std::size_t sa = static_cast<std::size_t>(ar) * ac, sb = static_cast<std::size_t>(br) * bc,
                    sc = static_cast<std::size_t>(m) * n;
  Buffer<T> out(sc * static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) {
    CMatMap<T> am(a.data().data() + sa * i, ar, ac);
    CMatMap<T> bm(b.data().data() + sb * i, br, bc);
    MatMap<T> cm(out.data() + sc * i, m, n);
    if (!trans_a && !trans_b) cm.noalias() = am * bm;
    else if (!trans_a && trans_b) cm.noalias() = am * bm.transpose();
    else if (trans_a && !trans_b) cm.noalias() = am.transpose() * bm;
    else cm.noalias() = am.transpose() * bm.transpose();
  }
  return make_result<T>(Shape{batch, m, n}, std::move(out), {&a, &b},
                        [=](Node<T>& self) {
    auto* ga = grad_of(self, 0);
    auto* gb = grad_of(self, 1);
    for (int i = 0; i < batch; ++i) {
      CMatMap<T> g(self.grad.data() + sc * i, m, n);
      CMatMap<T> am(self.parents[0]->data.data() + sa * i, ar, ac);
      CMatMap<T> bm(self.parents[1]->data.data() + sb * i, br, bc);
      if (ga) {
        MatMap<T> dA(ga->data() + sa * i, ar, ac);
        // d op(A) = G . op(B)^T
        if (!trans_a && !trans_b) dA.noalias() += g * bm.transpose();
        else if (!trans_a && trans_b) dA.noalias() += g * bm;
        else if (trans_a && !trans_b) dA.noalias() += bm * g.transpose();
        else dA.noalias() += bm.transpose() * g.transpose();
      }
      if (gb) {
        MatMap<T> dB(gb->data() + sb * i, br, bc);
        // d op(B) = op(A)^T . G
        if (!trans_a && !trans_b) dB.noalias() += am.transpose() * g;
        else if (!trans_a && trans_b) dB.noalias() += g.transpose() * am;
        else if (trans_a && !trans_b) dB.noalias() += am * g;
        else dB.noalias() += g.transpose() * am.transpose();
      }
    }
  });
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& bias) {
  if (w.rank() != 2 || x.dim(-1) != w.dim(0)) {
    shape_fail("linear", "input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  }
  const int in = w.dim(0), outd = w.dim(1);
  if (bias.defined() && (bias.numel() != static_cast<std::size_t>(outd))) {
    shape_fail("linear", "bias " + shape_str(bias.shape()) + " vs width " + std::to_string(outd));
  }
  const int rows = static_cast<int>(x.numel() / static_cast<std::size_t>(in));
  Buffer<T> out(static_cast<std::size_t>(rows) * outd);
  MatMap<T> om(out.data(), rows, outd);
  om.noalias() = CMatMap<T>(x.data().data(), rows, in) * CMatMap<T>(w.data().data(), in, outd);
  if (bias.defined()) {
    om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(), outd);
  }
  Shape shape = x.shape();
  shape.back() = outd;
  const bool has_bias = bias.defined();
  return make_result<T>(std::move(shape), std::move(out), {&x, &w, &bias},
                        [rows, in, outd, has_bias](Node<T>& self) {
    CMatMap<T> g(self.grad.data(), rows, outd);
    CMatMap<T> xm(self.parents[0]->data.data(), rows, in);
    CMatMap<T> wm(self.parents[1]->data.data(), in, outd);
    if (auto* gx = grad_of(self, 0)) MatMap<T>(gx->data(), rows, in).noalias() += g * wm.transpose();
    if (auto* gw = grad_of(self, 1)) MatMap<T>(gw->data(), in, outd).noalias() += xm.transpose() * g;
    if (has_bias) {
      if (auto* gb = grad_of(self, 2)) {
        const T* gp = self.grad.data();
        for (Eigen::Index r = 0; r < rows; ++r) {
          for (Eigen::Index j = 0; j < outd; ++j) (*gb)[j] += gp[r * outd + j];
        }
      }
    }
  });
}

// -------------------------------------------------------------- normalization

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x) {
  const int n = x.dim(-1);
  const std::size_t rows = x.numel() / static_cast<std::size_t>(n);
  Buffer<T> out(x.numel());
  const T* px = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = px + r * n;
    T* o = out.data() + r * n;
    T mx = *std::max_element(in, in + n);
    T total = 0;
    for (int j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    T inv = T(1) / total;
    for (int j = 0; j < n; ++j) o[j] *= inv;
  }
  return make_result<T>(x.shape(), std::move(out), {&x}, [rows, n](Node<T>& self) {
    auto* gx = grad_of(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * n;
      const T* g = self.grad.data() + r * n;
      T dot = 0;
      for (int j = 0; j < n; ++j) dot += g[j] * y[j];
      T* d = gx->data() + r * n;
      for (int j = 0; j < n; ++j) d[j] += y[j] * (g[j] - dot);
    }
  });
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps) {
  const int d = x.dim(-1);
  if (gamma.numel() != static_cast<std::size_t>(d) || beta.numel() != static_cast<std::size_t>(d)) {
    shape_fail("layer_norm", "affine parameters must have length " + std::to_string(d));
  }
  const std::size_t rows = x.numel() / static_cast<std::size_t>(d);
  Buffer<T> out(x.numel()), xhat(x.numel()), rstd(rows);
  const T* px = x.data().data();
  const T* gm = gamma.data().data();
  const T* bt = beta.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = px + r * d;
    T mu = 0;
    for (int j = 0; j < d; ++j) mu += in[j];
    mu /= T(d);
    T var = 0;
    for (int j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= T(d);
    T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (int j = 0; j < d; ++j) {
      T h = (in[j] - mu) * rs;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gm[j] + bt[j];
    }
  }
  return make_result<T>(x.shape(), std::move(out), {&x, &gamma, &beta},
                        [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
    const T* gm = self.parents[1]->data.data();
    auto* gx = grad_of(self, 0);
    auto* gg = grad_of(self, 1);
    auto* gb = grad_of(self, 2);
    Buffer<T> dxhat(static_cast<std::size_t>(d));
    for (std::size_t r = 0; r < rows; ++r) {
      const T* g = self.grad.data() + r * d;
      const T* h = xhat.data() + r * d;
      if (gg) for (int j = 0; j < d; ++j) (*gg)[j] += g[j] * h[j];
      if (gb) for (int j = 0; j < d; ++j) (*gb)[j] += g[j];
      if (!gx) continue;
      T mean_d = 0, mean_dh = 0;
      for (int j = 0; j < d; ++j) {
        dxhat[j] = g[j] * gm[j];
        mean_d += dxhat[j];
        mean_dh += dxhat[j] * h[j];
      }
      mean_d /= T(d);
      mean_dh /= T(d);
      T* o = gx->data() + r * d;
      for (int j = 0; j < d; ++j) o[j] += rstd[r] * (dxhat[j] - mean_d - h[j] * mean_dh);
    }
  });
}

// ---------------------------------------------------------------- convolution

namespace {

struct ConvGeometry {
  int batch, cin, h, w, cout, kh, kw, stride, pad, ho, wo;
  std::size_t col_rows() const { return static_cast<std::size_t>(cin) * kh * kw; }
  std::size_t col_cols() const { return static_cast<std::size_t>(ho) * wo; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::size_t cols = g.col_cols();
  for (int c = 0; c < g.cin; ++c) {
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((static_cast<std::size_t>(c) * g.kh + ki) * g.kw + kj) * cols;
        for (int oy = 0; oy < g.ho; ++oy) {
          int iy = oy * g.stride + ki - g.pad;
          T* dst = row + static_cast<std::size_t>(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            int ix = ox * g.stride + kj - g.pad;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* x) {
  const std::size_t cols = g.col_cols();
  for (int c = 0; c < g.cin; ++c) {
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((static_cast<std::size_t>(c) * g.kh + ki) * g.kw + kj) * cols;
        for (int oy = 0; oy < g.ho; ++oy) {
          int iy = oy * g.stride + ki - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = row + static_cast<std::size_t>(oy) * g.wo;
          T* dst = x + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            int ix = ox * g.stride + kj - g.pad;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& bias,
                      Conv2dOptions opts) {
  if (x.rank() == 3) {
    auto y = conv2d(reshape(x, Shape{1, x.dim(0), x.dim(1), x.dim(2)}), w, bias, opts);
    return reshape(y, Shape{y.dim(1), y.dim(2), y.dim(3)});
  }
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1)) {
    shape_fail("conv2d", "input " + shape_str(x.shape()) + " vs kernel " + shape_str(w.shape()));
  }
  if (opts.stride < 1 || opts.padding < 0) shape_fail("conv2d", "invalid stride/padding");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3),
                 opts.stride, opts.padding, 0, 0};
  const int span_h = g.h + 2 * g.pad - g.kh, span_w = g.w + 2 * g.pad - g.kw;
  if (span_h < 0 || span_w < 0 || span_h % g.stride != 0 || span_w % g.stride != 0) {
    shape_fail("conv2d", "non-integral output size for input " + shape_str(x.shape()) +
                             ", kernel " + shape_str(w.shape()) + ", stride " +
                             std::to_string(g.stride) + ", padding " + std::to_string(g.pad));
  }
  g.ho = span_h / g.stride + 1;
  g.wo = span_w / g.stride + 1;
  if (bias.defined() && bias.numel() != static_cast<std::size_t>(g.cout)) {
    shape_fail("conv2d", "bias length must equal output channels");
  }

  const std::size_t in_sz = static_cast<std::size_t>(g.cin) * g.h * g.w;
  const std::size_t out_sz = static_cast<std::size_t>(g.cout) * g.col_cols();
  const std::size_t col_sz = g.col_rows() * g.col_cols();
  const bool keep_cols = grad_enabled() && (x.requires_grad() || w.requires_grad());
  Buffer<T> cols(keep_cols ? col_sz * g.batch : col_sz);
  Buffer<T> out(out_sz * g.batch);
  CMatMap<T> wm(w.data().data(), g.cout, static_cast<Eigen::Index>(g.col_rows()));
  for (int b = 0; b < g.batch; ++b) {
    T* col = cols.data() + (keep_cols ? col_sz * b : 0);
    im2col(x.data().data() + in_sz * b, g, col);
    MatMap<T> om(out.data() + out_sz * b, g.cout, static_cast<Eigen::Index>(g.col_cols()));
    om.noalias() = wm * CMatMap<T>(col, static_cast<Eigen::Index>(g.col_rows()),
                                   static_cast<Eigen::Index>(g.col_cols()));
    if (bias.defined()) {
      om.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.data().data(), g.cout);
    }
  }
  const bool has_bias = bias.defined();
  return make_result<T>(Shape{g.batch, g.cout, g.ho, g.wo}, std::move(out), {&x, &w, &bias},
                        [g, in_sz, out_sz, col_sz, has_bias, cols = std::move(cols)](Node<T>& self) {
    auto* gx = grad_of(self, 0);
    auto* gw = grad_of(self, 1);
    auto* gb = has_bias ? grad_of(self, 2) : nullptr;
    const auto rows = static_cast<Eigen::Index>(g.col_rows());
    const auto ncol = static_cast<Eigen::Index>(g.col_cols());
    CMatMap<T> wm(self.parents[1]->data.data(), g.cout, rows);
    Buffer<T> dcol(gx ? col_sz : 0);
    for (int b = 0; b < g.batch; ++b) {
      CMatMap<T> gm(self.grad.data() + out_sz * b, g.cout, ncol);
      if (gw) {
        CMatMap<T> col(cols.data() + col_sz * b, rows, ncol);
        MatMap<T>(gw->data(), g.cout, rows).noalias() += gm * col.transpose();
      }
      if (gb) {
        // Plain loop: Eigen's vectorized reductions peel by address, which
        // would make the summation order depend on buffer alignment.
        const T* gp = self.grad.data() + out_sz * b;
        for (int o = 0; o < g.cout; ++o) {
          T acc = 0;
          for (Eigen::Index j = 0; j < ncol; ++j) acc += gp[o * ncol + j];
          (*gb)[o] += acc;
        }
      }
      if (gx) {
        MatMap<T>(dcol.data(), rows, ncol).noalias() = wm.transpose() * gm;
        col2im_add(dcol.data(), g, gx->data() + in_sz * b);
      }
    }
  });
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  if (x.rank() != 4) shape_fail("global_avg_pool", "expected [B x C x H x W], got " + shape_str(x.shape()));
  const int b = x.dim(0), c = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Buffer<T> out(static_cast<std::size_t>(b) * c);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T* p = x.data().data() + i * hw;
    T s = 0;
    for (std::size_t j = 0; j < hw; ++j) s += p[j];
    out[i] = s / T(hw);
  }
  return make_result<T>(Shape{b, c}, std::move(out), {&x}, [hw](Node<T>& self) {
    auto* gx = grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      T v = self.grad[i] / T(hw);
      T* p = gx->data() + i * hw;
      for (std::size_t j = 0; j < hw; ++j) p[j] += v;
    }
  });
}

// ---------------------------------------------------------- sequence plumbing

namespace {

template <typename T>
BasicTensor<T> index_copy(const BasicTensor<T>& x, Shape shape, std::vector<std::size_t> src) {
  Buffer<T> out(src.size());
  const T* px = x.data().data();
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = px[src[i]];
  return make_result<T>(std::move(shape), std::move(out), {&x}, [src = std::move(src)](Node<T>& self) {
    auto* gx = grad_of(self, 0);
    for (std::size_t i = 0; i < src.size(); ++i) (*gx)[src[i]] += self.grad[i];
  });
}

}  // namespace

template <typename T>
BasicTensor<T> patchify(const BasicTensor<T>& images, int patch_size) {
  if (images.rank() == 3) {
    auto y = patchify(reshape(images, Shape{1, images.dim(0), images.dim(1), images.dim(2)}), patch_size);
    return reshape(y, Shape{y.dim(1), y.dim(2)});
  }
  if (images.rank() != 4) shape_fail("patchify", "expected [B x C x H x W], got " + shape_str(images.shape()));
  const int b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3), p = patch_size;
  if (p <= 0 || h % p != 0 || w % p != 0) {
    shape_fail("patchify", "image " + std::to_string(h) + "x" + std::to_string(w) +
                               " not divisible by patch size " + std::to_string(p));
  }
  const int gh = h / p, gw = w / p, n = gh * gw, pd = c * p * p;
  std::vector<std::size_t> src(static_cast<std::size_t>(b) * n * pd);
  std::size_t o = 0;
  for (int bi = 0; bi < b; ++bi) {
    for (int gy = 0; gy < gh; ++gy) {
      for (int gx = 0; gx < gw; ++gx) {
        for (int ci = 0; ci < c; ++ci) {
          for (int py = 0; py < p; ++py) {
            std::size_t base = ((static_cast<std::size_t>(bi) * c + ci) * h + gy * p + py) * w + gx * p;
            for (int px = 0; px < p; ++px) src[o++] = base + px;
          }
        }
      }
    }
  }
  return index_copy(images, Shape{b, n, pd}, std::move(src));
}

template <typename T>
BasicTensor<T> prepend_token(const BasicTensor<T>& x, const BasicTensor<T>& token) {
  if (x.rank() != 3 || token.numel() != static_cast<std::size_t>(x.dim(2))) {
    shape_fail("prepend_token", "sequence " + shape_str(x.shape()) + " vs token " + shape_str(token.shape()));
  }
  const int b = x.dim(0), n = x.dim(1), d = x.dim(2);
  const std::size_t du = static_cast<std::size_t>(d);
  Buffer<T> out(static_cast<std::size_t>(b) * (n + 1) * du);
  for (int bi = 0; bi < b; ++bi) {
    T* dst = out.data() + static_cast<std::size_t>(bi) * (n + 1) * du;
    std::copy(token.data().begin(), token.data().end(), dst);
    const T* src = x.data().data() + static_cast<std::size_t>(bi) * n * du;
    std::copy(src, src + n * du, dst + du);
  }
  return make_result<T>(Shape{b, n + 1, d}, std::move(out), {&x, &token}, [b, n, du](Node<T>& self) {
    auto* gx = grad_of(self, 0);
    auto* gt = grad_of(self, 1);
    for (int bi = 0; bi < b; ++bi) {
      const T* g = self.grad.data() + static_cast<std::size_t>(bi) * (n + 1) * du;
      if (gt) for (std::size_t j = 0; j < du; ++j) (*gt)[j] += g[j];
      if (gx) {
        T* dst = gx->data() + static_cast<std::size_t>(bi) * n * du;
        for (std::size_t j = 0; j < n * du; ++j) dst[j] += g[du + j];
      }
    }
  });
}

template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& x, const std::vector<std::vector<int>>& indices) {
  if (x.rank() != 3 || indices.size() != static_cast<std::size_t>(x.dim(0))) {
    shape_fail("gather_rows", "need one index list per batch row of " + shape_str(x.shape()));
  }
  const int b = x.dim(0), n = x.dim(1), d = x.dim(2);
  const int k = indices.empty() ? 0 : static_cast<int>(indices[0].size());
  if (k < 1) shape_fail("gather_rows", "empty index list");
  std::vector<std::size_t> src;
  src.reserve(static_cast<std::size_t>(b) * k * d);
  std::vector<char> seen(static_cast<std::size_t>(n));
  for (int bi = 0; bi < b; ++bi) {
    const auto& idx = indices[static_cast<std::size_t>(bi)];
    if (static_cast<int>(idx.size()) != k) shape_fail("gather_rows", "ragged index lists");
    std::fill(seen.begin(), seen.end(), 0);
    for (int i : idx) {
      if (i < 0 || i >= n) {
        throw std::out_of_range("gather_rows: index " + std::to_string(i) + " outside [0, " +
                                std::to_string(n) + ")");
      }
      if (seen[static_cast<std::size_t>(i)]++) {
        throw std::invalid_argument("gather_rows: duplicate index " + std::to_string(i));
      }
      std::size_t base = (static_cast<std::size_t>(bi) * n + i) * d;
      for (int j = 0; j < d; ++j) src.push_back(base + j);
    }
  }
  return index_copy(x, Shape{b, k, d}, std::move(src));
}

template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& x, std::span<const int> indices) {
  if (x.rank() != 2) shape_fail("gather_rows", "expected [N x D], got " + shape_str(x.shape()));
  auto y = gather_rows(reshape(x, Shape{1, x.dim(0), x.dim(1)}),
                       std::vector<std::vector<int>>{{indices.begin(), indices.end()}});
  return reshape(y, Shape{y.dim(1), y.dim(2)});
}

template <typename T>
BasicTensor<T> select_token(const BasicTensor<T>& x, int pos) {
  if (x.rank() != 3 || pos < 0 || pos >= x.dim(1)) {
    shape_fail("select_token", "position " + std::to_string(pos) + " in " + shape_str(x.shape()));
  }
  const int b = x.dim(0), s = x.dim(1), d = x.dim(2);
  std::vector<std::size_t> src;
  src.reserve(static_cast<std::size_t>(b) * d);
  for (int bi = 0; bi < b; ++bi) {
    std::size_t base = (static_cast<std::size_t>(bi) * s + pos) * d;
    for (int j = 0; j < d; ++j) src.push_back(base + j);
  }
  return index_copy(x, Shape{b, d}, std::move(src));
}

// ---------------------------------------------------------------- reductions

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  return make_result<T>(Shape{1}, Buffer<T>{s}, {&x}, [](Node<T>& self) {
    auto* gx = grad_of(self, 0);
    for (auto& v : *gx) v += self.grad[0];
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  return scale(sum(x), T(1) / T(x.numel()));
}

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  const int c = logits.dim(-1);
  const int rows = static_cast<int>(logits.numel() / static_cast<std::size_t>(c));
  if (logits.rank() > 2 || static_cast<int>(labels.size()) != rows) {
    shape_fail("cross_entropy", "logits " + shape_str(logits.shape()) + " vs " +
                                    std::to_string(labels.size()) + " labels");
  }
  Buffer<T> probs(logits.numel());
  T loss = 0;
  for (int r = 0; r < rows; ++r) {
    int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= c) {
      throw std::out_of_range("cross_entropy: class " + std::to_string(y) + " outside [0, " +
                              std::to_string(c) + ")");
    }
    const T* z = logits.data().data() + static_cast<std::size_t>(r) * c;
    T* p = probs.data() + static_cast<std::size_t>(r) * c;
    T mx = *std::max_element(z, z + c);
    T total = 0;
    for (int j = 0; j < c; ++j) {
      p[j] = std::exp(z[j] - mx);
      total += p[j];
    }
    for (int j = 0; j < c; ++j) p[j] /= total;
    loss += mx + std::log(total) - z[y];
  }
  loss /= T(rows);
  std::vector<int> ys(labels.begin(), labels.end());
  return make_result<T>(Shape{1}, Buffer<T>{loss}, {&logits},
                        [rows, c, probs = std::move(probs), ys = std::move(ys)](Node<T>& self) {
    auto* gz = grad_of(self, 0);
    const T g = self.grad[0] / T(rows);
    for (int r = 0; r < rows; ++r) {
      for (int j = 0; j < c; ++j) {
        std::size_t i = static_cast<std::size_t>(r) * c + j;
        (*gz)[i] += g * (probs[i] - (j == ys[static_cast<std::size_t>(r)] ? T(1) : T(0)));
      }
    }
  });
}

namespace {
template <typename T>
T softplus(T u) {
  return std::max(u, T(0)) + std::log1p(std::exp(-std::abs(u)));
}
template <typename T>
T sigmoid(T z) {
  if (z >= 0) return T(1) / (T(1) + std::exp(-z));
  T e = std::exp(z);
  return e / (T(1) + e);
}
}  // namespace

template <typename T>
BasicTensor<T> bce_with_logits(const BasicTensor<T>& logits, const BasicTensor<T>& targets, T pos_weight) {
  if (logits.numel() != targets.numel()) {
    shape_fail("bce_with_logits", shape_str(logits.shape()) + " vs " + shape_str(targets.shape()));
  }
  const std::size_t n = logits.numel();
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    T z = logits.data()[i], y = targets.data()[i];
    loss += pos_weight * y * softplus(-z) + (T(1) - y) * softplus(z);
  }
  loss /= T(n);
  return make_result<T>(Shape{1}, Buffer<T>{loss}, {&logits, &targets}, [n, pos_weight](Node<T>& self) {
    auto* gz = grad_of(self, 0);
    if (!gz) return;
    const auto& z = self.parents[0]->data;
    const auto& y = self.parents[1]->data;
    const T g = self.grad[0] / T(n);
    for (std::size_t i = 0; i < n; ++i) {
      T s = sigmoid(z[i]);
      (*gz)[i] += g * (s * (T(1) - y[i] + pos_weight * y[i]) - pos_weight * y[i]);
    }
  });
}

// ------------------------------------------------------------- instantiation

#define SACCADE_INSTANTIATE_OPS(T)                                                               \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                       \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                           \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                                           \
  template BasicTensor<T> dropout(const BasicTensor<T>&, double, Rng&);                          \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                 \
  template BasicTensor<T> permute(const BasicTensor<T>&, const std::vector<int>&);               \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template BasicTensor<T> bmm(const BasicTensor<T>&, const BasicTensor<T>&, bool, bool);         \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                 const BasicTensor<T>&);                                         \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                        \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                     const BasicTensor<T>&, T);                                  \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                 const BasicTensor<T>&, Conv2dOptions);                          \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                                \
  template BasicTensor<T> patchify(const BasicTensor<T>&, int);                                  \
  template BasicTensor<T> prepend_token(const BasicTensor<T>&, const BasicTensor<T>&);           \
  template BasicTensor<T> gather_rows(const BasicTensor<T>&, const std::vector<std::vector<int>>&); \
  template BasicTensor<T> gather_rows(const BasicTensor<T>&, std::span<const int>);              \
  template BasicTensor<T> select_token(const BasicTensor<T>&, int);                              \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                            \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                           \
  template BasicTensor<T> cross_entropy(const BasicTensor<T>&, std::span<const int>);            \
  template BasicTensor<T> bce_with_logits(const BasicTensor<T>&, const BasicTensor<T>&, T);

SACCADE_INSTANTIATE_OPS(float)
SACCADE_INSTANTIATE_OPS(double)

}  // namespace saccade
