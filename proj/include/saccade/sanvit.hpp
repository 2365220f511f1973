#pragma once

#include <string_view>
#include <vector>

#include "saccade/data.hpp"
#include "saccade/params.hpp"
#include "saccade/selector.hpp"
#include "saccade/targets.hpp"
#include "saccade/vit.hpp"

namespace saccade {

/// Where positional information enters the student.
///  - sin_full_preslice: sinusoidal table over the full grid, added before
///    the patches are gathered (CLS takes row 0).
///  - learned_postslice: learned (k+1)-slot table added after gathering.
///  - none: no positional signal; the selected patches form a set.
enum class PeVariant { sin_full_preslice, learned_postslice, none };
enum class IndexSource { san, ground_truth };

std::string_view to_string(PeVariant v);
std::string_view to_string(IndexSource s);
PeVariant parse_pe_variant(std::string_view text);
IndexSource parse_index_source(std::string_view text);

struct SanVitConfig {
  ViTConfig base;  // N, D, L, H, classes; base.pe_mode is not used
  int k = 8;
  PeVariant pe_variant = PeVariant::sin_full_preslice;
  IndexSource index_source = IndexSource::san;

  int seq_len() const { return k + 1; }
  void validate() const;
};

ParamSet sanvit_init(const SanVitConfig& config, Rng& rng);

/// Embeds all N patches, keeps the k listed per image (any order, no
/// duplicates) and classifies from a (k+1)-token sequence.
/// images [B x C x H x W] with B index lists, or [C x H x W] with one.
template <typename T>
BasicTensor<T> sanvit_forward(const BasicTensor<T>& images, const std::vector<std::vector<int>>& indices,
                              const BasicParamSet<T>& params, const SanVitConfig& config,
                              const ForwardOptions& opts = {});

/// Patch indices for one image: the selector's top-k (san) or the stored
/// teacher targets (ground_truth). The source's inputs must be supplied.
std::vector<int> resolve_indices(const ImageRecord& image, const SanVitConfig& config,
                                 const ParamSet* selector_params, const SelectorConfig* selector_config,
                                 const SaccadeRecord* record);

/// Batched selector top-k for [B x C x H x W].
std::vector<std::vector<int>> selector_indices(const Tensor& images, const ParamSet& selector_params,
                                               const SelectorConfig& selector_config, int k);

}  // namespace saccade
