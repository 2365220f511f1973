#pragma once

// Independent reference implementations used by the tests. Nothing here
// calls into the library's kernels; everything is plain loops in double.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "saccade/rng.hpp"
#include "saccade/tensor.hpp"

namespace oracle {

using saccade::Rng;
using saccade::Shape;
using saccade::Tensor;
using saccade::Tensor64;

inline Tensor64 random64(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::vector<double> v(saccade::shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor64(std::move(shape), v, grad);
}

inline Tensor random32(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = false) {
  std::vector<float> v(saccade::shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor(std::move(shape), v, grad);
}

/// ||analytic - numeric|| / (||analytic|| + ||numeric||). The denominator is
/// floored at 1e-5 so that gradients which are zero by symmetry (the key
/// bias under softmax shift invariance) compare as rounding noise.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& n) {
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nn), 1e-5);
}

/// Central finite differences of a scalar function of several inputs,
/// compared with the tape's gradients. Returns the worst relative error
/// over the inputs.
inline double gradient_check(std::vector<Tensor64> inputs, const std::function<Tensor64(std::vector<Tensor64>&)>& f,
                             double h = 1e-6) {
  for (auto& x : inputs) x.zero_grad();
  Tensor64 loss = f(inputs);
  loss.backward();
  double worst = 0.0;
  for (auto& x : inputs) {
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) analytic.assign(x.grad().begin(), x.grad().end());
    std::vector<double> numeric(x.numel());
    auto data = x.mutable_data();
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double keep = data[i];
      data[i] = keep + h;
      const double up = f(inputs).item();
      data[i] = keep - h;
      const double down = f(inputs).item();
      data[i] = keep;
      numeric[i] = (up - down) / (2 * h);
    }
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, int m, int k, int n) {
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0;
      for (int t = 0; t < k; ++t) s += a[i * k + t] * b[t * n + j];
      c[i * n + j] = s;
    }
  return c;
}

/// Six-loop cross-correlation with zero padding, one image.
inline std::vector<double> conv2d(const std::vector<double>& x, int c, int h, int w, const std::vector<double>& k,
                                  int o, int kh, int kw, const std::vector<double>& bias, int stride, int pad,
                                  int& oh, int& ow) {
  oh = (h + 2 * pad - kh) / stride + 1;
  ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(o) * oh * ow, 0.0);
  for (int oc = 0; oc < o; ++oc)
    for (int y = 0; y < oh; ++y)
      for (int xo = 0; xo < ow; ++xo) {
        double s = bias.empty() ? 0.0 : bias[oc];
        for (int ic = 0; ic < c; ++ic)
          for (int dy = 0; dy < kh; ++dy)
            for (int dx = 0; dx < kw; ++dx) {
              const int iy = y * stride - pad + dy, ix = xo * stride - pad + dx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              s += x[(ic * h + iy) * w + ix] * k[((oc * c + ic) * kh + dy) * kw + dx];
            }
        out[(oc * oh + y) * ow + xo] = s;
      }
  return out;
}

/// Product of row-normalized (A + I) factors, later layers on the left.
inline std::vector<std::vector<double>> rollout(const std::vector<std::vector<std::vector<double>>>& layers) {
  const std::size_t s = layers.front().size();
  std::vector<std::vector<double>> r(s, std::vector<double>(s, 0.0));
  for (std::size_t i = 0; i < s; ++i) r[i][i] = 1.0;
  for (const auto& a : layers) {
    std::vector<std::vector<double>> m(s, std::vector<double>(s));
    for (std::size_t i = 0; i < s; ++i) {
      double total = 0;
      for (std::size_t j = 0; j < s; ++j) {
        m[i][j] = a[i][j] + (i == j ? 1.0 : 0.0);
        total += m[i][j];
      }
      for (std::size_t j = 0; j < s; ++j) m[i][j] /= total;
    }
    std::vector<std::vector<double>> next(s, std::vector<double>(s, 0.0));
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < s; ++j)
        for (std::size_t t = 0; t < s; ++t) next[i][j] += m[i][t] * r[t][j];
    r = std::move(next);
  }
  return r;
}

}  // namespace oracle
