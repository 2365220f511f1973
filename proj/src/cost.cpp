#include "saccade/cost.hpp"

#include <numeric>

namespace saccade {

const char* const kFlopConvention =
    "1 multiply-accumulate = 2 FLOPs; only matmuls and convolutions are counted "
    "(norms, softmax, activations, bias adds excluded); per image, forward pass";

namespace {

Count sum_of(const Breakdown& parts) {
  Count total = 0;
  for (const auto& p : parts) total += p.second;
  return total;
}

void finish(CostReport& r) {
  r.params_total = sum_of(r.params_by_component);
  r.flops_total = sum_of(r.flops_by_component);
}

struct EncoderParams {
  Count attention, mlp, norms, final_norm;
};

EncoderParams encoder_params(const EncoderShape& e) {
  const Count d = e.dim, hidden = static_cast<Count>(e.dim) * e.mlp_ratio;
  EncoderParams p{};
  p.attention = e.depth * 4 * linear_params(d, d);
  p.mlp = e.depth * (linear_params(d, hidden) + linear_params(hidden, d));
  p.norms = e.depth * 4 * d;
  p.final_norm = 2 * d;
  return p;
}

void add_encoder_flops(Breakdown& out, const EncoderShape& e, Count seq, const std::string& prefix) {
  const Count d = e.dim, hidden = static_cast<Count>(e.dim) * e.mlp_ratio, l = e.depth;
  out.emplace_back(prefix + "encoder.qkv", l * 3 * matmul_flops(seq, d, d));
  out.emplace_back(prefix + "encoder.scores", l * matmul_flops(seq, d, seq));
  out.emplace_back(prefix + "encoder.context", l * matmul_flops(seq, seq, d));
  out.emplace_back(prefix + "encoder.out_proj", l * matmul_flops(seq, d, d));
  out.emplace_back(prefix + "encoder.mlp", l * (matmul_flops(seq, d, hidden) + matmul_flops(seq, hidden, d)));
}

struct ConvShape {
  std::string component;
  Count out_ch, in_ch, kh, kw, out_h, out_w;
};

// Every convolution of the selector, in execution order, plus the final width.
std::vector<ConvShape> selector_convs(const SelectorConfig& c, Count& final_channels) {
  c.validate();
  std::vector<ConvShape> convs;
  auto sizes = c.feature_sizes();
  Count in = c.stages.front().channels;
  convs.push_back({"stem", in, c.channels, c.stem_kernel, c.stem_kernel, sizes[0], sizes[0]});
  for (std::size_t s = 0; s < c.stages.size(); ++s) {
    const Count out = c.stages[s].channels, hw = sizes[s];
    const std::string name = "stage" + std::to_string(s);
    for (int b = 0; b < c.stages[s].blocks; ++b) {
      const bool down = (b == 0 && s > 0);
      convs.push_back({name, out, in, down ? 4 : 3, down ? 4 : 3, hw, hw});
      convs.push_back({name, out, out, 3, 3, hw, hw});
      if (down || in != out) convs.push_back({name, out, in, down ? 2 : 1, down ? 2 : 1, hw, hw});
      in = out;
    }
  }
  final_channels = in;
  return convs;
}

void accumulate(Breakdown& parts, const std::string& name, Count value) {
  for (auto& p : parts) {
    if (p.first == name) {
      p.second += value;
      return;
    }
  }
  parts.emplace_back(name, value);
}

Breakdown prefixed(const Breakdown& parts, const std::string& prefix) {
  Breakdown out;
  for (const auto& p : parts) out.emplace_back(prefix + p.first, p.second);
  return out;
}

}  // namespace

Count CostReport::component_flops(const std::string& name) const {
  for (const auto& p : flops_by_component) {
    if (p.first == name) return p.second;
  }
  return 0;
}

Count CostReport::component_params(const std::string& name) const {
  for (const auto& p : params_by_component) {
    if (p.first == name) return p.second;
  }
  return 0;
}

Count attention_comparisons(Count seq) {
  if (seq < 1) throw std::invalid_argument("attention_comparisons: seq must be >= 1");
  return seq * seq;
}

Count matmul_flops(Count m, Count k, Count n) { return 2 * m * k * n; }
Count linear_params(Count in, Count out, bool bias) { return in * out + (bias ? out : 0); }
Count conv_params(Count out_ch, Count in_ch, Count kh, Count kw, bool bias) {
  return out_ch * (in_ch * kh * kw + (bias ? 1 : 0));
}

// ---------------------------------------------------------------- parameters

CostReport count_params(const ViTConfig& c) {
  c.validate();
  CostReport r;
  r.model = "vit";
  const Count d = c.dim;
  auto enc = encoder_params(c.encoder());
  r.params_by_component = {{"patch_embed", linear_params(c.patch_dim(), d)}, {"cls", d}};
  if (c.pe_mode == PeMode::learned) r.params_by_component.emplace_back("pos", static_cast<Count>(c.seq_len()) * d);
  r.params_by_component.insert(r.params_by_component.end(), {{"encoder.attention", enc.attention},
                                                             {"encoder.mlp", enc.mlp},
                                                             {"encoder.norms", enc.norms},
                                                             {"norm", enc.final_norm},
                                                             {"head", linear_params(d, c.num_classes)}});
  r.attention_comparisons = attention_comparisons(c.num_patches());
  r.notes = kFlopConvention;
  finish(r);
  return r;
}

CostReport count_params(const SanVitConfig& c) {
  c.validate();
  const ViTConfig& b = c.base;
  CostReport r;
  r.model = "sanvit";
  const Count d = b.dim;
  auto enc = encoder_params(b.encoder());
  r.params_by_component = {{"patch_embed", linear_params(b.patch_dim(), d)}, {"cls", d}};
  if (c.pe_variant == PeVariant::learned_postslice) {
    r.params_by_component.emplace_back("pos", static_cast<Count>(c.seq_len()) * d);
  }
  r.params_by_component.insert(r.params_by_component.end(), {{"encoder.attention", enc.attention},
                                                             {"encoder.mlp", enc.mlp},
                                                             {"encoder.norms", enc.norms},
                                                             {"norm", enc.final_norm},
                                                             {"head", linear_params(d, b.num_classes)}});
  r.attention_comparisons = attention_comparisons(c.k);
  r.notes = kFlopConvention;
  finish(r);
  return r;
}

CostReport count_params(const SelectorConfig& c) {
  CostReport r;
  r.model = "selector";
  Count final_channels = 0;
  for (const auto& conv : selector_convs(c, final_channels)) {
    accumulate(r.params_by_component, conv.component, conv_params(conv.out_ch, conv.in_ch, conv.kh, conv.kw));
  }
  r.params_by_component.emplace_back("head", linear_params(final_channels, c.num_patches));
  r.notes = kFlopConvention;
  finish(r);
  return r;
}

// --------------------------------------------------------------------- FLOPs

CostReport count_flops(const ViTConfig& c, std::optional<int> seq_len_override) {
  c.validate();
  const Count seq = seq_len_override.value_or(c.seq_len());
  if (seq < 1) throw std::invalid_argument("count_flops: sequence length must be >= 1");
  CostReport r;
  r.model = "vit";
  r.flops_by_component.emplace_back("patch_embed", matmul_flops(c.num_patches(), c.patch_dim(), c.dim));
  add_encoder_flops(r.flops_by_component, c.encoder(), seq, "");
  r.flops_by_component.emplace_back("head", matmul_flops(1, c.dim, c.num_classes));
  r.attention_comparisons = attention_comparisons(seq - 1);
  r.notes = kFlopConvention;
  finish(r);
  return r;
}

CostReport count_flops(const SanVitConfig& c) {
  c.validate();
  const ViTConfig& b = c.base;
  CostReport r;
  r.model = "sanvit";
  r.flops_by_component.emplace_back("patch_embed", matmul_flops(b.num_patches(), b.patch_dim(), b.dim));
  add_encoder_flops(r.flops_by_component, b.encoder(), c.seq_len(), "");
  r.flops_by_component.emplace_back("head", matmul_flops(1, b.dim, b.num_classes));
  r.attention_comparisons = attention_comparisons(c.k);
  r.notes = kFlopConvention;
  finish(r);
  return r;
}

CostReport count_flops(const SelectorConfig& c) {
  CostReport r;
  r.model = "selector";
  Count final_channels = 0;
  for (const auto& conv : selector_convs(c, final_channels)) {
    accumulate(r.flops_by_component, conv.component,
               2 * conv.out_ch * conv.in_ch * conv.kh * conv.kw * conv.out_h * conv.out_w);
  }
  r.flops_by_component.emplace_back("head", matmul_flops(1, final_channels, c.num_patches));
  r.notes = kFlopConvention;
  finish(r);
  return r;
}

// ------------------------------------------------------------------ combined

namespace {
CostReport merge(CostReport params, const CostReport& flops) {
  params.flops_by_component = flops.flops_by_component;
  params.flops_total = flops.flops_total;
  if (flops.attention_comparisons) params.attention_comparisons = flops.attention_comparisons;
  return params;
}
}  // namespace

CostReport cost_report(const ViTConfig& c) { return merge(count_params(c), count_flops(c)); }
CostReport cost_report(const SelectorConfig& c) { return merge(count_params(c), count_flops(c)); }
CostReport cost_report(const SanVitConfig& c) { return merge(count_params(c), count_flops(c)); }

CostReport pipeline_cost(const SanVitConfig& student, const SelectorConfig& selector) {
  auto s = cost_report(selector);
  auto v = cost_report(student);
  CostReport r;
  r.model = "sanvit+selector";
  r.params_by_component = prefixed(s.params_by_component, "selector.");
  auto vp = prefixed(v.params_by_component, "student.");
  r.params_by_component.insert(r.params_by_component.end(), vp.begin(), vp.end());
  r.flops_by_component = prefixed(s.flops_by_component, "selector.");
  auto vf = prefixed(v.flops_by_component, "student.");
  r.flops_by_component.insert(r.flops_by_component.end(), vf.begin(), vf.end());
  r.attention_comparisons = v.attention_comparisons;
  r.notes = kFlopConvention;
  finish(r);
  return r;
}

Count transformer_flops(const CostReport& report) {
  Count total = 0;
  for (const auto& [name, value] : report.flops_by_component) {
    if (name.find("encoder.") != std::string::npos) total += value;
  }
  return total;
}

}  // namespace saccade
