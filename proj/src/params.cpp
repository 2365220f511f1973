#include "saccade/params.hpp"

#include <cmath>
#include <stdexcept>

namespace saccade {

template <typename T>
BasicTensor<T>& BasicParamSet<T>::add(std::string name, BasicTensor<T> tensor) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  tensor.set_requires_grad(true);
  entries_.emplace_back(std::move(name), std::move(tensor));
  return entries_.back().second;
}

template <typename T>
BasicTensor<T>& BasicParamSet<T>::get(std::string_view name) {
  for (auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

template <typename T>
const BasicTensor<T>& BasicParamSet<T>::get(std::string_view name) const {
  return const_cast<BasicParamSet*>(this)->get(name);
}

template <typename T>
bool BasicParamSet<T>::contains(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.first == name) return true;
  }
  return false;
}

template <typename T>
std::vector<BasicTensor<T>> BasicParamSet<T>::tensors() const {
  std::vector<BasicTensor<T>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

template <typename T>
std::int64_t BasicParamSet<T>::scalar_count() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::int64_t>(e.second.numel());
  return n;
}

template <typename T>
void BasicParamSet<T>::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

template <typename T>
BasicParamSet<T> BasicParamSet<T>::clone() const {
  BasicParamSet out;
  for (const auto& [n, t] : entries_) out.add(n, t.clone());
  return out;
}

template class BasicParamSet<float>;
template class BasicParamSet<double>;

namespace init {

Tensor normal(Shape shape, double stddev, Rng& rng) {
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.normal(0.0, stddev));
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor xavier_uniform(int fan_in, int fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<float> v(static_cast<std::size_t>(fan_in) * fan_out);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
  return Tensor(Shape{fan_in, fan_out}, std::move(v), true);
}

Tensor he_normal_conv(int out_ch, int in_ch, int kh, int kw, Rng& rng, double gain) {
  const double stddev = gain * std::sqrt(2.0 / (in_ch * kh * kw));
  return normal(Shape{out_ch, in_ch, kh, kw}, stddev, rng);
}

Tensor zeros(Shape shape) { return Tensor::zeros(std::move(shape), true); }
Tensor ones(Shape shape) { return Tensor::full(std::move(shape), 1.0f, true); }

}  // namespace init
}  // namespace saccade
