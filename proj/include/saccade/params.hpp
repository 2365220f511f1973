#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "saccade/rng.hpp"
#include "saccade/tensor.hpp"

namespace saccade {

/// Ordered, named collection of trainable tensors. Insertion order is the
/// serialization order.
template <typename T>
class BasicParamSet {
 public:
  BasicTensor<T>& add(std::string name, BasicTensor<T> tensor);
  BasicTensor<T>& get(std::string_view name);
  const BasicTensor<T>& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::vector<std::pair<std::string, BasicTensor<T>>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, BasicTensor<T>>>& entries() const { return entries_; }
  std::vector<BasicTensor<T>> tensors() const;
  std::size_t size() const { return entries_.size(); }

  /// Total trainable scalars.
  std::int64_t scalar_count() const;
  void zero_grad();
  /// Deep copy; the result shares no storage with this set.
  BasicParamSet clone() const;

 private:
  std::vector<std::pair<std::string, BasicTensor<T>>> entries_;
};

using ParamSet = BasicParamSet<float>;
using ParamSet64 = BasicParamSet<double>;

template <typename To, typename From>
BasicParamSet<To> cast_params(const BasicParamSet<From>& params) {
  BasicParamSet<To> out;
  for (const auto& [name, t] : params.entries()) out.add(name, cast<To>(t, true));
  return out;
}

namespace init {
/// Trainable tensor drawn from N(0, stddev^2).
Tensor normal(Shape shape, double stddev, Rng& rng);
/// Glorot-uniform for a [fan_in x fan_out] weight.
Tensor xavier_uniform(int fan_in, int fan_out, Rng& rng);
/// He-normal for a conv kernel [O x C x kh x kw], times `gain`.
Tensor he_normal_conv(int out_ch, int in_ch, int kh, int kw, Rng& rng, double gain = 1.0);
Tensor zeros(Shape shape);
Tensor ones(Shape shape);
}  // namespace init

}  // namespace saccade
