#include "saccade/sanvit.hpp"

#include <stdexcept>
#include <string>

#include "saccade/ops.hpp"

namespace saccade {

std::string_view to_string(PeVariant v) {
  switch (v) {
    case PeVariant::sin_full_preslice: return "sin_full_preslice";
    case PeVariant::learned_postslice: return "learned_postslice";
    case PeVariant::none: return "none";
  }
  return "?";
}

std::string_view to_string(IndexSource s) {
  return s == IndexSource::san ? "san" : "ground_truth";
}

PeVariant parse_pe_variant(std::string_view text) {
  if (text == "sin_full_preslice") return PeVariant::sin_full_preslice;
  if (text == "learned_postslice") return PeVariant::learned_postslice;
  if (text == "none") return PeVariant::none;
  throw std::invalid_argument("unknown pe_variant '" + std::string(text) + "'");
}

IndexSource parse_index_source(std::string_view text) {
  if (text == "san") return IndexSource::san;
  if (text == "ground_truth") return IndexSource::ground_truth;
  throw std::invalid_argument("unknown index_source '" + std::string(text) + "'");
}

void SanVitConfig::validate() const {
  base.validate();
  if (k < 1 || k > base.num_patches()) {
    throw std::invalid_argument("SanVitConfig: k=" + std::to_string(k) + " outside [1, " +
                                std::to_string(base.num_patches()) + "]");
  }
  if (pe_variant == PeVariant::sin_full_preslice && base.dim % 2 != 0) {
    throw std::invalid_argument("SanVitConfig: sinusoidal PE needs an even dim");
  }
}

ParamSet sanvit_init(const SanVitConfig& config, Rng& rng) {
  config.validate();
  const ViTConfig& b = config.base;
  ParamSet params;
  params.add("patch_embed.weight", init::normal({b.patch_dim(), b.dim}, 0.02, rng));
  params.add("patch_embed.bias", init::zeros({b.dim}));
  params.add("cls", init::normal({b.dim}, 0.02, rng));
  if (config.pe_variant == PeVariant::learned_postslice) {
    params.add("pos", init::normal({config.seq_len(), b.dim}, 0.02, rng));
  }
  init_encoder(params, b.encoder(), rng);
  params.add("head.weight", init::normal({b.dim, b.num_classes}, 0.02, rng));
  params.add("head.bias", init::zeros({b.num_classes}));
  return params;
}

template <typename T>
BasicTensor<T> sanvit_forward(const BasicTensor<T>& images, const std::vector<std::vector<int>>& indices,
                              const BasicParamSet<T>& params, const SanVitConfig& config, const ForwardOptions& opts) {
  config.validate();
  const ViTConfig& b = config.base;
  if (images.rank() == 3) {
    auto batched = reshape(images, Shape{1, images.dim(0), images.dim(1), images.dim(2)});
    return reshape(sanvit_forward(batched, indices, params, config, opts), Shape{b.num_classes});
  }
  if (images.rank() != 4 || images.dim(1) != b.channels || images.dim(2) != b.image_size ||
      images.dim(3) != b.image_size) {
    throw ShapeError("sanvit_forward: images " + shape_str(images.shape()) + " do not match the config");
  }
  if (indices.size() != static_cast<std::size_t>(images.dim(0))) {
    throw std::invalid_argument("sanvit_forward: " + std::to_string(indices.size()) + " index lists for " +
                                std::to_string(images.dim(0)) + " images");
  }
  for (const auto& list : indices) {
    if (static_cast<int>(list.size()) != config.k) {
      throw std::invalid_argument("sanvit_forward: index list of length " + std::to_string(list.size()) +
                                  ", config k=" + std::to_string(config.k));
    }
  }

  auto tokens = linear(patchify(images, b.patch_size), params.get("patch_embed.weight"), params.get("patch_embed.bias"));
  BasicTensor<T> cls = params.get("cls");
  if (config.pe_variant == PeVariant::sin_full_preslice) {
    // Same table and same additions as the full ViT: CLS gets row 0,
    // patch i gets row i + 1.
    Tensor pe = sinusoidal_pe(b.seq_len(), b.dim);
    std::vector<float> rows(pe.data().begin() + b.dim, pe.data().end());
    tokens = add(tokens, cast<T>(Tensor(Shape{b.num_patches(), b.dim}, std::move(rows))));
    std::vector<float> row0(pe.data().begin(), pe.data().begin() + b.dim);
    cls = add(cls, cast<T>(Tensor(Shape{b.dim}, std::move(row0))));
  }
  auto x = prepend_token(gather_rows(tokens, indices), cls);
  if (config.pe_variant == PeVariant::learned_postslice) x = add(x, params.get("pos"));
  auto out = encode_cls(params, b.encoder(), x, opts);
  return linear(out, params.get("head.weight"), params.get("head.bias"));
}

std::vector<std::vector<int>> selector_indices(const Tensor& images, const ParamSet& selector_params,
                                               const SelectorConfig& selector_config, int k) {
  NoGradGuard no_grad;
  auto logits = selector_forward(images, selector_params, selector_config);
  const int n = selector_config.num_patches;
  std::vector<std::vector<int>> out;
  const auto all = logits.data();
  for (std::size_t b = 0; b < all.size() / static_cast<std::size_t>(n); ++b) {
    out.push_back(predict_topk(all.subspan(b * n, static_cast<std::size_t>(n)), k));
  }
  return out;
}

std::vector<int> resolve_indices(const ImageRecord& image, const SanVitConfig& config,
                                 const ParamSet* selector_params, const SelectorConfig* selector_config,
                                 const SaccadeRecord* record) {
  if (config.index_source == IndexSource::ground_truth) {
    if (record == nullptr) throw std::invalid_argument("resolve_indices: ground_truth source needs a saccade record");
    if (record->image_id != image.id) {
      throw std::invalid_argument("resolve_indices: record for image " + std::to_string(record->image_id) +
                                  " given for image " + std::to_string(image.id));
    }
    if (static_cast<int>(record->indices.size()) != config.k) {
      throw std::invalid_argument("resolve_indices: stored record has a different k");
    }
    return record->indices;
  }
  if (selector_params == nullptr || selector_config == nullptr) {
    throw std::invalid_argument("resolve_indices: san source needs selector parameters");
  }
  if (selector_config->num_patches != config.base.num_patches()) {
    throw std::invalid_argument("resolve_indices: selector scores " + std::to_string(selector_config->num_patches) +
                                " patches, student grid has " + std::to_string(config.base.num_patches()));
  }
  return selector_indices(reshape(image_tensor(image), Shape{1, image.channels, image.size, image.size}),
                          *selector_params, *selector_config, config.k)
      .front();
}

template BasicTensor<float> sanvit_forward(const BasicTensor<float>&, const std::vector<std::vector<int>>&,
                                           const BasicParamSet<float>&, const SanVitConfig&, const ForwardOptions&);
template BasicTensor<double> sanvit_forward(const BasicTensor<double>&, const std::vector<std::vector<int>>&,
                                            const BasicParamSet<double>&, const SanVitConfig&, const ForwardOptions&);

}  // namespace saccade
