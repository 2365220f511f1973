#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "saccade/sanvit.hpp"
#include "saccade/selector.hpp"
#include "saccade/vit.hpp"

namespace saccade {

using Count = std::int64_t;
using Breakdown = std::vector<std::pair<std::string, Count>>;

/// Parameter and FLOP accounting for one model. Totals are the exact sums
/// of their components.
struct CostReport {
  std::string model;
  Count params_total = 0;
  Breakdown params_by_component;
  Count flops_total = 0;
  Breakdown flops_by_component;
  Count attention_comparisons = 0;
  std::string notes;

  Count component_flops(const std::string& name) const;
  Count component_params(const std::string& name) const;
};

/// The FLOP convention stamped into every report.
extern const char* const kFlopConvention;

/// Query-key score entries in one attention map: seq^2.
Count attention_comparisons(Count seq);

/// 2mkn for an [m x k] . [k x n] product.
Count matmul_flops(Count m, Count k, Count n);
Count linear_params(Count in, Count out, bool bias = true);
Count conv_params(Count out_ch, Count in_ch, Count kh, Count kw, bool bias = true);

CostReport count_params(const ViTConfig& config);
CostReport count_params(const SelectorConfig& config);
CostReport count_params(const SanVitConfig& config);

/// Per-image forward FLOPs. `seq_len_override` replaces S = N + 1 in the
/// encoder terms.
CostReport count_flops(const ViTConfig& config, std::optional<int> seq_len_override = std::nullopt);
CostReport count_flops(const SelectorConfig& config);
/// Student alone: every patch is embedded, the encoder runs at S = k + 1.
CostReport count_flops(const SanVitConfig& config);

/// Params and FLOPs together.
CostReport cost_report(const ViTConfig& config);
CostReport cost_report(const SelectorConfig& config);
CostReport cost_report(const SanVitConfig& config);
/// Full pipeline: selector CNN + student, components prefixed
/// "selector." and "student.".
CostReport pipeline_cost(const SanVitConfig& student, const SelectorConfig& selector);

/// Encoder-layer FLOPs (attention + MLP over all layers), the quantity the
/// reduced sequence shrinks.
Count transformer_flops(const CostReport& report);

}  // namespace saccade
