#include "saccade/optim.hpp"

#include <cmath>
#include <string>

namespace saccade {

template <typename T>
void adam_step(std::span<BasicTensor<T>> params, AdamState<T>& state) {
  if (state.m.empty() && state.v.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), T(0));
      state.v.emplace_back(p.numel(), T(0));
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                     " tensors but " + std::to_string(params.size()) + " were given");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel() || state.v[i].size() != params[i].numel()) {
      throw ShapeError("adam_step: moment buffer " + std::to_string(i) + " does not match " +
                       shape_str(params[i].shape()));
    }
  }

  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const T b1 = T(state.beta1), b2 = T(state.beta2);
  const T step_size = T(state.lr / bc1);
  const T inv_sqrt_bc2 = T(1.0 / std::sqrt(bc2));
  const T eps = T(state.eps);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.has_grad()) continue;
    auto w = p.mutable_data();
    auto g = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      w[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + eps);
    }
  }
}

template void adam_step(std::span<BasicTensor<float>>, AdamState<float>&);
template void adam_step(std::span<BasicTensor<double>>, AdamState<double>&);

}  // namespace saccade
