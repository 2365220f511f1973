#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace saccade {

/// Post-softmax attention probabilities of one forward pass for one image,
/// laid out layer x head x query x key.
struct AttentionStack {
  int layers = 0;
  int heads = 0;
  int seq = 0;
  std::vector<float> probs;

  AttentionStack() = default;
  AttentionStack(int l, int h, int s)
      : layers(l), heads(h), seq(s),
        probs(static_cast<std::size_t>(l) * h * s * s, 0.0f) {}

  std::size_t offset(int l, int h) const {
    return (static_cast<std::size_t>(l) * heads + h) * seq * seq;
  }
  float at(int l, int h, int i, int j) const {
    return probs[offset(l, h) + static_cast<std::size_t>(i) * seq + j];
  }
  float& at(int l, int h, int i, int j) {
    return probs[offset(l, h) + static_cast<std::size_t>(i) * seq + j];
  }
  std::span<const float> head(int l, int h) const {
    return {probs.data() + offset(l, h), static_cast<std::size_t>(seq) * seq};
  }
  void validate() const {
    if (layers < 1 || heads < 1 || seq < 1 ||
        probs.size() != static_cast<std::size_t>(layers) * heads * seq * seq) {
      throw std::invalid_argument("AttentionStack: probs size does not match L x H x S x S");
    }
  }
};

}  // namespace saccade
