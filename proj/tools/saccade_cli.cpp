#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "saccade/config.hpp"
#include "saccade/cost.hpp"
#include "saccade/harness.hpp"
#include "saccade/rollout.hpp"
#include "saccade/vit.hpp"

namespace fs = std::filesystem;
using namespace saccade;

namespace {

struct Common {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c, bool needs_config = true) {
  auto* opt = cmd->add_option("--config", c.config, "Experiment config (JSON)");
  if (needs_config) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("--data", c.data, "Dataset directory (CIFAR-100 binaries)");
  cmd->add_option("--out", c.out, "Output path");
  cmd->add_option("--seed", c.seed, "Override the config seed");
}

RunContext context(const Common& c) {
  RunContext ctx;
  ctx.data_dir = c.data;
  ctx.base_dir = fs::current_path();
  ctx.log = &std::cerr;
  return ctx;
}

ExperimentConfig config_of(const Common& c) {
  auto cfg = load_experiment(c.config);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

CifarSplit parse_split(const std::string& s) {
  if (s == "train") return CifarSplit::train;
  if (s == "validation") return CifarSplit::validation;
  if (s == "test") return CifarSplit::test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

void write_json(const std::string& path, const Json& j) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
}

void train_command(const Common& c, std::initializer_list<ModelKind> allowed, const char* what) {
  auto cfg = config_of(c);
  bool ok = false;
  for (auto k : allowed) ok = ok || cfg.model == k;
  if (!ok) throw std::invalid_argument(std::string(what) + " cannot train model '" + std::string(to_string(cfg.model)) + "'");
  const fs::path dir = c.out.empty() ? fs::path("runs") / cfg.name : fs::path(c.out);
  auto ctx = context(c);
  if (cfg.model == ModelKind::selector ||
      (cfg.model == ModelKind::sanvit && cfg.sanvit.index_source == IndexSource::ground_truth)) {
    ensure_targets(cfg, ctx);
  }
  auto run = run_experiment(cfg, ctx, dir);
  std::cout << to_json(run.test).dump(2) << '\n';
}

/// Binary PPM (P6, maxval 255) to a CHW record in [0, 1].
ImageRecord read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w < 1 || w != h || maxval != 255) {
    throw std::runtime_error(path.string() + ": expected a square binary PPM (P6) with maxval 255");
  }
  in.get();
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw std::runtime_error(path.string() + ": truncated pixel data");
  ImageRecord img;
  img.size = w;
  img.channels = 3;
  img.pixels.resize(raw.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = raw[(static_cast<std::size_t>(y) * w + x) * 3 + ch] / 255.0f;
    }
  }
  return img;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Saccade attention pipeline: teacher ViT, rollout targets, patch selector, reduced student"};
  app.require_subcommand(1);

  Common teacher, targets, selector, student, eval, roll, cost, cmp;

  auto* t = app.add_subcommand("train-teacher", "Train a full-attention ViT (teacher or baseline)");
  add_common(t, teacher);

  auto* b = app.add_subcommand("build-targets", "Write top-k saccade targets from a teacher checkpoint");
  add_common(b, targets);

  auto* s = app.add_subcommand("train-selector", "Train the CNN patch selector on saccade targets");
  add_common(s, selector);

  auto* st = app.add_subcommand("train-student", "Train the reduced-attention student ViT");
  add_common(st, student);

  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  add_common(e, eval, false);
  std::string eval_ckpt, eval_split = "test";
  std::optional<int> eval_batch;
  e->add_option("--checkpoint", eval_ckpt, "Checkpoint to evaluate")->required()->check(CLI::ExistingFile);
  e->add_option("--split", eval_split, "train | validation | test");
  e->add_option("--batch-size", eval_batch, "Evaluation batch size");

  auto* r = app.add_subcommand("rollout", "Attention-rollout heatmap and top-k mask for one image");
  add_common(r, roll, false);
  std::string roll_ckpt, roll_image, roll_split = "test", roll_fusion = "mean";
  int roll_index = 0;
  std::optional<int> roll_k;
  r->add_option("--checkpoint", roll_ckpt, "Teacher ViT checkpoint")->required()->check(CLI::ExistingFile);
  r->add_option("--image", roll_image, "Square binary PPM image")->check(CLI::ExistingFile);
  r->add_option("--index", roll_index, "Image position in the split (when --image is absent)");
  r->add_option("--split", roll_split, "train | validation | test");
  r->add_option("--k", roll_k, "Number of patches in the mask (default: target_k)");
  r->add_option("--fusion", roll_fusion, "Head fusion: mean | max | min");

  auto* c = app.add_subcommand("cost", "Parameter and FLOP report for a config");
  add_common(c, cost);

  auto* m = app.add_subcommand("compare", "Train, evaluate and tabulate a list of configs");
  add_common(m, cmp);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*t) train_command(teacher, {ModelKind::teacher_vit, ModelKind::simple_vit}, "train-teacher");
    if (*s) train_command(selector, {ModelKind::selector}, "train-selector");
    if (*st) train_command(student, {ModelKind::sanvit}, "train-student");

    if (*b) {
      auto cfg = config_of(targets);
      const fs::path dir = !targets.out.empty() ? fs::path(targets.out)
                           : !cfg.targets_dir.empty() ? fs::path(cfg.targets_dir)
                                                      : fs::path("targets");
      build_targets(cfg, context(targets), dir);
      std::cout << "wrote " << dir.string() << '\n';
    }

    if (*e) {
      Checkpoint ckpt = load_checkpoint(eval_ckpt);
      auto ctx = context(eval);
      auto metrics = evaluate(ckpt, ctx, parse_split(eval_split), eval_batch);
      write_json(eval.out, to_json(metrics));
    }

    if (*r) {
      Checkpoint ckpt = load_checkpoint(roll_ckpt);
      auto cfg = experiment_from_json(ckpt.config);
      if (cfg.model != ModelKind::teacher_vit && cfg.model != ModelKind::simple_vit) {
        throw std::invalid_argument(roll_ckpt + " is not a ViT checkpoint");
      }
      ImageRecord img;
      if (!roll_image.empty()) {
        img = read_ppm(roll_image);
      } else {
        Dataset data = load_split(cfg, context(roll), parse_split(roll_split));
        if (roll_index < 0 || roll_index >= static_cast<int>(data.size())) {
          throw std::out_of_range("--index " + std::to_string(roll_index) + " outside the split");
        }
        img = data.records[static_cast<std::size_t>(roll_index)];
      }
      if (img.size != cfg.vit.image_size) {
        throw std::invalid_argument("image is " + std::to_string(img.size) + " px, the teacher expects " +
                                    std::to_string(cfg.vit.image_size));
      }
      auto [logits, stack] = vit_forward_with_attention(image_tensor(img), ckpt.params, cfg.vit);
      HeatMap heat = rollout_heat(stack, parse_head_fusion(roll_fusion));
      auto indices = topk_indices(heat.heat, roll_k.value_or(cfg.target_k));
      const fs::path dir = roll.out.empty() ? fs::path("rollout") : fs::path(roll.out);
      fs::create_directories(dir);
      emit_heatmap_pgm(heat, dir / "heatmap.pgm");
      emit_mask_pgm(indices, heat.grid, dir / "mask.pgm");
      int predicted = 0;
      for (int k = 1; k < logits.numel(); ++k) {
        if (logits.data()[k] > logits.data()[predicted]) predicted = k;
      }
      Json j{{"image_id", img.id}, {"label", img.label}, {"predicted", predicted}, {"grid", heat.grid},
             {"indices", indices}, {"heat", heat.heat}};
      write_json((dir / "rollout.json").string(), j);
      std::cout << "wrote " << dir.string() << '\n';
    }

    if (*c) {
      auto cfg = config_of(cost);
      auto report = config_cost(cfg);
      Json j = to_json(report);
      if (cfg.model == ModelKind::sanvit) {
        ViTConfig full = cfg.vit;
        auto base = cost_report(full);
        j["baseline_vit"] = to_json(base);
        j["flop_ratio_vs_full_vit"] = static_cast<double>(report.flops_total) / static_cast<double>(base.flops_total);
        j["transformer_flop_ratio"] =
            static_cast<double>(transformer_flops(report)) / static_cast<double>(transformer_flops(base));
        j["attention_comparison_ratio"] = static_cast<double>(base.attention_comparisons) /
                                          static_cast<double>(report.attention_comparisons);
      }
      write_json(cost.out, j);
    }

    if (*m) {
      std::ifstream in(cmp.config);
      Json list = Json::parse(in);
      const Json& runs = list.is_array() ? list : list.at("runs");
      std::vector<ExperimentConfig> configs;
      const fs::path list_dir = fs::path(cmp.config).parent_path();
      for (const auto& entry : runs) {
        ExperimentConfig cfg = entry.is_string() ? load_experiment(list_dir / entry.get<std::string>())
                                                 : experiment_from_json(entry);
        if (cmp.seed) cfg.seed = *cmp.seed;
        configs.push_back(std::move(cfg));
      }
      const fs::path dir = cmp.out.empty() ? fs::path("compare") : fs::path(cmp.out);
      auto report = compare(configs, context(cmp), dir);
      std::cout << format_table(report);
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 0;
}
