#include "saccade/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace saccade {

HeadFusion parse_head_fusion(std::string_view text) {
  if (text == "mean") return HeadFusion::mean;
  if (text == "max") return HeadFusion::max;
  if (text == "min") return HeadFusion::min;
  throw std::invalid_argument("unknown head fusion '" + std::string(text) + "'");
}

std::vector<Matrix> fuse_heads(const AttentionStack& attn, HeadFusion mode) {
  attn.validate();
  const int s = attn.seq;
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(attn.layers));
  for (int l = 0; l < attn.layers; ++l) {
    Matrix m(s, s);
    for (int i = 0; i < s; ++i) {
      for (int j = 0; j < s; ++j) {
        double acc = attn.at(l, 0, i, j);
        for (int h = 1; h < attn.heads; ++h) {
          double v = attn.at(l, h, i, j);
          switch (mode) {
            case HeadFusion::mean: acc += v; break;
            case HeadFusion::max: acc = std::max(acc, v); break;
            case HeadFusion::min: acc = std::min(acc, v); break;
          }
        }
        m(i, j) = mode == HeadFusion::mean ? acc / attn.heads : acc;
      }
    }
    out.push_back(std::move(m));
  }
  return out;
}

Matrix attention_rollout(const std::vector<Matrix>& fused) {
  if (fused.empty()) throw std::invalid_argument("attention_rollout: no layers");
  const auto s = fused.front().rows();
  Matrix result = Matrix::Identity(s, s);
  for (std::size_t l = 0; l < fused.size(); ++l) {
    const Matrix& a = fused[l];
    if (a.rows() != s || a.cols() != s) {
      throw std::invalid_argument("attention_rollout: layer " + std::to_string(l) + " is not " +
                                  std::to_string(s) + "x" + std::to_string(s));
    }
    // Max/min fusion leaves rows off the simplex; bring them back first.
    Matrix mixed = a;
    for (Eigen::Index i = 0; i < s; ++i) {
      double total = mixed.row(i).sum();
      if (!(total > 0.0)) {
        throw std::invalid_argument("attention_rollout: row " + std::to_string(i) + " of layer " +
                                    std::to_string(l) + " sums to zero and cannot be normalized");
      }
      mixed.row(i) /= total;
    }
    mixed += Matrix::Identity(s, s);
    for (Eigen::Index i = 0; i < s; ++i) mixed.row(i) /= mixed.row(i).sum();
    result = mixed * result;
  }
  return result;
}

HeatMap cls_heat(const Matrix& rollout) {
  const auto s = rollout.rows();
  if (rollout.cols() != s || s < 2) throw std::invalid_argument("cls_heat: rollout must be square with S >= 2");
  const auto n = static_cast<int>(s - 1);
  const int grid = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  if (grid * grid != n) {
    throw std::invalid_argument("cls_heat: " + std::to_string(n) + " patches do not form a square grid");
  }
  HeatMap out;
  out.grid = grid;
  out.heat.resize(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) out.heat[static_cast<std::size_t>(j)] = rollout(0, j + 1);
  return out;
}

namespace {

template <typename V>
std::vector<int> topk_impl(std::span<const V> values, int k) {
  const int n = static_cast<int>(values.size());
  if (k < 1 || k > n) {
    throw std::out_of_range("topk: k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
    auto va = values[static_cast<std::size_t>(a)], vb = values[static_cast<std::size_t>(b)];
    return va != vb ? va > vb : a < b;
  });
  order.resize(static_cast<std::size_t>(k));
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace

std::vector<int> topk_indices(std::span<const double> values, int k) { return topk_impl(values, k); }
std::vector<int> topk_indices(std::span<const float> values, int k) { return topk_impl(values, k); }

HeatMap rollout_heat(const AttentionStack& attn, HeadFusion mode) {
  return cls_heat(attention_rollout(fuse_heads(attn, mode)));
}

}  // namespace saccade
