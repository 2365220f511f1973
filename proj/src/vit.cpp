#include "saccade/vit.hpp"

#include <stdexcept>

#include "saccade/ops.hpp"

namespace saccade {

std::string_view to_string(PeMode mode) {
  switch (mode) {
    case PeMode::sinusoidal: return "sinusoidal";
    case PeMode::learned: return "learned";
    case PeMode::none: return "none";
  }
  return "?";
}

PeMode parse_pe_mode(std::string_view text) {
  if (text == "sinusoidal") return PeMode::sinusoidal;
  if (text == "learned") return PeMode::learned;
  if (text == "none") return PeMode::none;
  throw std::invalid_argument("unknown pe_mode '" + std::string(text) + "'");
}

void ViTConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("ViTConfig: " + m); };
  if (image_size < 1 || patch_size < 1) fail("image_size and patch_size must be positive");
  if (image_size % patch_size != 0) {
    fail("image_size " + std::to_string(image_size) + " not divisible by patch_size " +
         std::to_string(patch_size));
  }
  if (channels < 1 || dim < 1 || depth < 1 || heads < 1 || mlp_ratio < 1 || num_classes < 1) {
    fail("channels, dim, depth, heads, mlp_ratio and num_classes must be positive");
  }
  if (dim % heads != 0) fail("dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
  if (pe_mode == PeMode::sinusoidal && dim % 2 != 0) fail("sinusoidal PE needs an even dim");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
}

ParamSet vit_init(const ViTConfig& config, Rng& rng) {
  config.validate();
  ParamSet params;
  params.add("patch_embed.weight", init::normal({config.patch_dim(), config.dim}, 0.02, rng));
  params.add("patch_embed.bias", init::zeros({config.dim}));
  params.add("cls", init::normal({config.dim}, 0.02, rng));
  if (config.pe_mode == PeMode::learned) {
    params.add("pos", init::normal({config.seq_len(), config.dim}, 0.02, rng));
  }
  init_encoder(params, config.encoder(), rng);
  params.add("head.weight", init::normal({config.dim, config.num_classes}, 0.02, rng));
  params.add("head.bias", init::zeros({config.num_classes}));
  return params;
}

template <typename T>
BasicTensor<T> vit_forward(const BasicTensor<T>& images, const BasicParamSet<T>& params,
                           const ViTConfig& config, const ForwardOptions& opts) {
  config.validate();
  if (images.rank() == 3) {
    auto batched = reshape(images, Shape{1, images.dim(0), images.dim(1), images.dim(2)});
    auto logits = vit_forward(batched, params, config, opts);
    return reshape(logits, Shape{config.num_classes});
  }
  if (images.rank() != 4 || images.dim(1) != config.channels || images.dim(2) != config.image_size ||
      images.dim(3) != config.image_size) {
    throw ShapeError("vit_forward: images " + shape_str(images.shape()) + " do not match a " +
                     std::to_string(config.channels) + "x" + std::to_string(config.image_size) + "x" +
                     std::to_string(config.image_size) + " config");
  }
  auto tokens = linear(patchify(images, config.patch_size), params.get("patch_embed.weight"),
                       params.get("patch_embed.bias"));
  auto x = prepend_token(tokens, params.get("cls"));
  if (config.pe_mode == PeMode::sinusoidal) {
    x = add(x, cast<T>(sinusoidal_pe(config.seq_len(), config.dim)));
  } else if (config.pe_mode == PeMode::learned) {
    x = add(x, params.get("pos"));
  }
  auto cls = encode_cls(params, config.encoder(), x, opts);
  return linear(cls, params.get("head.weight"), params.get("head.bias"));
}

std::pair<Tensor, AttentionStack> vit_forward_with_attention(const Tensor& image, const ParamSet& params,
                                                             const ViTConfig& config) {
  NoGradGuard no_grad;
  std::vector<AttentionStack> stacks;
  ForwardOptions opts;
  opts.attention = &stacks;
  auto logits = vit_forward(image, params, config, opts);
  return {logits, std::move(stacks.at(0))};
}

template BasicTensor<float> vit_forward(const BasicTensor<float>&, const BasicParamSet<float>&,
                                        const ViTConfig&, const ForwardOptions&);
template BasicTensor<double> vit_forward(const BasicTensor<double>&, const BasicParamSet<double>&,
                                         const ViTConfig&, const ForwardOptions&);

}  // namespace saccade
