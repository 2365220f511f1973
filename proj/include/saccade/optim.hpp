#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "saccade/tensor.hpp"

namespace saccade {

template <typename T>
struct AdamState {
  std::int64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of every parameter from its grad buffer
/// (parameters without a grad are treated as zero-gradient). Moment buffers
/// are created on the first call and must keep matching the parameter
/// shapes afterwards.
template <typename T>
void adam_step(std::span<BasicTensor<T>> params, AdamState<T>& state);

}  // namespace saccade
