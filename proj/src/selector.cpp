#include "saccade/selector.hpp"

#include <stdexcept>
#include <string>

#include "saccade/ops.hpp"
#include "saccade/rollout.hpp"

namespace saccade {

namespace {

std::string block_prefix(std::size_t stage, int block) {
  return "stages." + std::to_string(stage) + "." + std::to_string(block) + ".";
}

// The second conv of each residual branch starts small so the untrained
// network stays close to its shortcut path (no normalization layers).
constexpr double kBranchGain = 0.1;

}  // namespace

std::vector<int> SelectorConfig::feature_sizes() const {
  std::vector<int> sizes;
  int s = input_size;
  auto step = [](int in, int kernel, int stride, int pad) -> int {
    int span = in + 2 * pad - kernel;
    if (span < 0 || span % stride != 0) return -1;
    return span / stride + 1;
  };
  s = step(s, stem_kernel, stem_stride, stem_padding);
  sizes.push_back(s);
  for (std::size_t i = 1; i < stages.size() && s > 0; ++i) {
    s = (s % 2 == 0) ? s / 2 : -1;
    sizes.push_back(s);
  }
  return sizes;
}

void SelectorConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("SelectorConfig: " + m); };
  if (stages.empty()) fail("at least one stage is required");
  for (const auto& st : stages) {
    if (st.channels < 1 || st.blocks < 1) fail("stage channels and blocks must be positive");
  }
  if (input_size < 1 || channels < 1) fail("input_size and channels must be positive");
  if (stem_kernel < 1 || stem_stride < 1 || stem_padding < 0) fail("invalid stem geometry");
  for (int s : feature_sizes()) {
    if (s < 1) fail("input_size " + std::to_string(input_size) + " does not divide cleanly through the stem and stages");
  }
  if (num_patches < 1) fail("num_patches must be positive");
  if (k < 1 || k > num_patches) fail("k must lie in [1, num_patches]");
  if (pos_weight <= 0.0) fail("pos_weight must be positive");
}

ParamSet selector_init(const SelectorConfig& config, Rng& rng) {
  config.validate();
  ParamSet params;
  const int c0 = config.stages.front().channels;
  params.add("stem.weight", init::he_normal_conv(c0, config.channels, config.stem_kernel, config.stem_kernel, rng));
  params.add("stem.bias", init::zeros({c0}));
  int in = c0;
  for (std::size_t s = 0; s < config.stages.size(); ++s) {
    const int out = config.stages[s].channels;
    for (int b = 0; b < config.stages[s].blocks; ++b) {
      const bool down = (b == 0 && s > 0);
      const std::string pre = block_prefix(s, b);
      const int k1 = down ? 4 : 3;
      params.add(pre + "conv1.weight", init::he_normal_conv(out, in, k1, k1, rng));
      params.add(pre + "conv1.bias", init::zeros({out}));
      params.add(pre + "conv2.weight", init::he_normal_conv(out, out, 3, 3, rng, kBranchGain));
      params.add(pre + "conv2.bias", init::zeros({out}));
      if (down || in != out) {
        const int kp = down ? 2 : 1;
        params.add(pre + "proj.weight", init::he_normal_conv(out, in, kp, kp, rng));
        params.add(pre + "proj.bias", init::zeros({out}));
      }
      in = out;
    }
  }
  params.add("head.weight", init::xavier_uniform(in, config.num_patches, rng));
  params.add("head.bias", init::zeros({config.num_patches}));
  return params;
}

template <typename T>
BasicTensor<T> selector_forward(const BasicTensor<T>& images, const BasicParamSet<T>& params,
                                const SelectorConfig& config) {
  config.validate();
  if (images.rank() == 3) {
    auto out = selector_forward(reshape(images, Shape{1, images.dim(0), images.dim(1), images.dim(2)}), params, config);
    return reshape(out, Shape{config.num_patches});
  }
  if (images.rank() != 4 || images.dim(1) != config.channels || images.dim(2) != config.input_size ||
      images.dim(3) != config.input_size) {
    throw ShapeError("selector_forward: images " + shape_str(images.shape()) + " do not match input_size " +
                     std::to_string(config.input_size));
  }
  auto x = relu(conv2d(images, params.get("stem.weight"), params.get("stem.bias"),
                       {config.stem_stride, config.stem_padding}));
  for (std::size_t s = 0; s < config.stages.size(); ++s) {
    for (int b = 0; b < config.stages[s].blocks; ++b) {
      const bool down = (b == 0 && s > 0);
      const std::string pre = block_prefix(s, b);
      Conv2dOptions first = down ? Conv2dOptions{2, 1} : Conv2dOptions{1, 1};
      auto y = relu(conv2d(x, params.get(pre + "conv1.weight"), params.get(pre + "conv1.bias"), first));
      y = conv2d(y, params.get(pre + "conv2.weight"), params.get(pre + "conv2.bias"), {1, 1});
      BasicTensor<T> shortcut = x;
      if (params.contains(pre + "proj.weight")) {
        shortcut = conv2d(x, params.get(pre + "proj.weight"), params.get(pre + "proj.bias"),
                          down ? Conv2dOptions{2, 0} : Conv2dOptions{1, 0});
      }
      x = relu(add(y, shortcut));
    }
  }
  return linear(global_avg_pool(x), params.get("head.weight"), params.get("head.bias"));
}

template <typename T>
BasicTensor<T> selector_loss(const BasicTensor<T>& logits, const BasicTensor<T>& multi_hot, T pos_weight) {
  return bce_with_logits(logits, multi_hot, pos_weight);
}

std::vector<int> predict_topk(std::span<const float> logits, int k) { return topk_indices(logits, k); }

void SelectionTally::add(std::span<const float> logits, std::span<const std::uint8_t> gt, int k) {
  if (logits.size() != gt.size()) {
    throw ShapeError("selection_metrics: " + std::to_string(logits.size()) + " logits vs " +
                     std::to_string(gt.size()) + " targets");
  }
  std::int64_t positives = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool pred = logits[i] > 0.0f;  // sigmoid > 0.5
    const bool truth = gt[i] != 0;
    positives += truth;
    tp_ += pred && truth;
    tn_ += !pred && !truth;
    fp_ += pred && !truth;
    fn_ += !pred && truth;
  }
  auto chosen = predict_topk(logits, k);
  int hits = 0;
  for (int i : chosen) hits += gt[static_cast<std::size_t>(i)] != 0;
  overlap_sum_ += static_cast<double>(hits) / k;
  images_ += 1;
}

SelectorMetrics SelectionTally::metrics() const {
  SelectorMetrics m;
  const std::int64_t total = tp_ + tn_ + fp_ + fn_;
  if (total > 0) m.per_patch_accuracy = static_cast<double>(tp_ + tn_) / static_cast<double>(total);
  if (tp_ + fn_ > 0) m.sensitivity = static_cast<double>(tp_) / static_cast<double>(tp_ + fn_);
  if (tn_ + fp_ > 0) m.specificity = static_cast<double>(tn_) / static_cast<double>(tn_ + fp_);
  if (images_ > 0) m.overlap_at_k = overlap_sum_ / static_cast<double>(images_);
  return m;
}

SelectorMetrics selection_metrics(std::span<const float> logits, std::span<const std::uint8_t> gt, int k) {
  SelectionTally tally;
  tally.add(logits, gt, k);
  return tally.metrics();
}

template BasicTensor<float> selector_forward(const BasicTensor<float>&, const BasicParamSet<float>&,
                                             const SelectorConfig&);
template BasicTensor<double> selector_forward(const BasicTensor<double>&, const BasicParamSet<double>&,
                                              const SelectorConfig&);
template BasicTensor<float> selector_loss(const BasicTensor<float>&, const BasicTensor<float>&, float);
template BasicTensor<double> selector_loss(const BasicTensor<double>&, const BasicTensor<double>&, double);

}  // namespace saccade
