#include "saccade/config.hpp"

#include <fstream>
#include <initializer_list>
#include <stdexcept>

namespace saccade {

std::string_view to_string(DatasetKind kind) { return kind == DatasetKind::cifar100 ? "cifar100" : "shapes"; }

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::teacher_vit: return "teacher_vit";
    case ModelKind::simple_vit: return "simple_vit";
    case ModelKind::selector: return "selector";
    case ModelKind::sanvit: return "sanvit";
  }
  return "?";
}

DatasetKind parse_dataset_kind(std::string_view text) {
  if (text == "cifar100") return DatasetKind::cifar100;
  if (text == "shapes") return DatasetKind::shapes;
  throw std::invalid_argument("unknown dataset '" + std::string(text) + "'");
}

ModelKind parse_model_kind(std::string_view text) {
  if (text == "teacher_vit") return ModelKind::teacher_vit;
  if (text == "simple_vit") return ModelKind::simple_vit;
  if (text == "selector") return ModelKind::selector;
  if (text == "sanvit") return ModelKind::sanvit;
  throw std::invalid_argument("unknown model '" + std::string(text) + "'");
}

namespace {

std::string_view fusion_name(HeadFusion f) {
  switch (f) {
    case HeadFusion::mean: return "mean";
    case HeadFusion::max: return "max";
    case HeadFusion::min: return "min";
  }
  return "?";
}

void only_keys(const Json& j, std::string_view where, std::initializer_list<std::string_view> keys) {
  if (!j.is_object()) throw std::invalid_argument(std::string(where) + ": expected a JSON object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (auto k : keys) known = known || item.key() == k;
    if (!known) throw std::invalid_argument(std::string(where) + ": unknown key '" + item.key() + "'");
  }
}

template <typename V>
void read(const Json& j, const char* key, V& out) {
  if (j.contains(key)) {
    try {
      j.at(key).get_to(out);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(std::string("config key '") + key + "': " + e.what());
    }
  }
}

}  // namespace

SanVitConfig ExperimentConfig::sanvit_config() const {
  SanVitConfig c;
  c.base = vit;
  c.k = sanvit.k;
  c.pe_variant = sanvit.pe_variant;
  c.index_source = sanvit.index_source;
  return c;
}

void ExperimentConfig::validate() const {
  auto fail = [&](const std::string& m) { throw std::invalid_argument("experiment '" + name + "': " + m); };
  if (name.empty()) fail("name must not be empty");
  if (batch_size < 1 || eval_batch_size < 1) fail("batch sizes must be positive");
  if (max_epochs < 1) fail("max_epochs must be >= 1");
  if (early_stop_patience < 1) fail("early_stop_patience must be >= 1");
  if (threads != 1) fail("only threads = 1 is supported");
  if (optimizer.lr <= 0.0 || optimizer.eps <= 0.0 || optimizer.beta1 < 0.0 || optimizer.beta1 >= 1.0 ||
      optimizer.beta2 < 0.0 || optimizer.beta2 >= 1.0) {
    fail("invalid optimizer settings");
  }
  if (augmentation.scale_lo <= 0.0 || augmentation.scale_lo > augmentation.scale_hi || augmentation.scale_hi > 1.0) {
    fail("augmentation scale range must satisfy 0 < lo <= hi <= 1");
  }
  if (augmentation.flip_p < 0.0 || augmentation.flip_p > 1.0) fail("flip_p must be in [0, 1]");
  if (dataset == DatasetKind::shapes) {
    if (shapes.train < 1 || shapes.validation < 1 || shapes.test < 1) fail("shapes split sizes must be positive");
  }
  vit.validate();
  switch (model) {
    case ModelKind::teacher_vit:
    case ModelKind::simple_vit: break;
    case ModelKind::selector:
      selector.validate();
      if (selector.num_patches != vit.num_patches()) {
        fail("selector scores " + std::to_string(selector.num_patches) + " patches, the ViT grid has " +
             std::to_string(vit.num_patches()));
      }
      if (selector.input_size != vit.image_size) fail("selector input_size differs from the image size");
      if (selector.k != target_k) fail("selector k differs from target_k");
      if (augmentation.enabled) fail("selector training uses fixed targets; augmentation must be off");
      break;
    case ModelKind::sanvit:
      sanvit_config().validate();
      if (sanvit.index_source == IndexSource::san) {
        selector.validate();
        if (selector.num_patches != vit.num_patches()) fail("selector and student grids differ");
        if (selector.input_size != vit.image_size) fail("selector input_size differs from the image size");
      } else {
        if (augmentation.enabled) fail("ground_truth indices are tied to un-augmented images; augmentation must be off");
        if (sanvit.k != target_k) fail("ground_truth source needs sanvit.k == target_k");
      }
      break;
  }
  if (target_k < 1 || target_k > vit.num_patches()) fail("target_k outside [1, N]");
}

// ---------------------------------------------------------------------- JSON

Json to_json(const ViTConfig& c) {
  return Json{{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"channels", c.channels},
              {"dim", c.dim},               {"depth", c.depth},           {"heads", c.heads},
              {"mlp_ratio", c.mlp_ratio},   {"num_classes", c.num_classes}, {"pe_mode", to_string(c.pe_mode)},
              {"dropout", c.dropout}};
}

Json to_json(const SelectorConfig& c) {
  Json stages = Json::array();
  for (const auto& s : c.stages) stages.push_back(Json{{"channels", s.channels}, {"blocks", s.blocks}});
  return Json{{"stages", stages},
              {"input_size", c.input_size},
              {"channels", c.channels},
              {"stem_kernel", c.stem_kernel},
              {"stem_stride", c.stem_stride},
              {"stem_padding", c.stem_padding},
              {"num_patches", c.num_patches},
              {"k", c.k},
              {"pos_weight", c.pos_weight}};
}

Json to_json(const ExperimentConfig& c) {
  return Json{
      {"name", c.name},
      {"dataset", to_string(c.dataset)},
      {"model", to_string(c.model)},
      {"vit", to_json(c.vit)},
      {"selector", to_json(c.selector)},
      {"sanvit",
       {{"k", c.sanvit.k},
        {"pe_variant", to_string(c.sanvit.pe_variant)},
        {"index_source", to_string(c.sanvit.index_source)}}},
      {"optimizer",
       {{"lr", c.optimizer.lr}, {"beta1", c.optimizer.beta1}, {"beta2", c.optimizer.beta2}, {"eps", c.optimizer.eps}}},
      {"batch_size", c.batch_size},
      {"eval_batch_size", c.eval_batch_size},
      {"max_epochs", c.max_epochs},
      {"early_stop_patience", c.early_stop_patience},
      {"seed", c.seed},
      {"augmentation",
       {{"enabled", c.augmentation.enabled},
        {"scale_lo", c.augmentation.scale_lo},
        {"scale_hi", c.augmentation.scale_hi},
        {"flip_p", c.augmentation.flip_p}}},
      {"shapes",
       {{"train", c.shapes.train},
        {"validation", c.shapes.validation},
        {"test", c.shapes.test},
        {"seed", c.shapes.seed},
        {"image_size", c.shapes.image_size}}},
      {"threads", c.threads},
      {"target_k", c.target_k},
      {"fusion", fusion_name(c.fusion)},
      {"teacher_checkpoint", c.teacher_checkpoint},
      {"selector_checkpoint", c.selector_checkpoint},
      {"targets_dir", c.targets_dir},
  };
}

ViTConfig vit_config_from_json(const Json& j) {
  only_keys(j, "vit", {"image_size", "patch_size", "channels", "dim", "depth", "heads", "mlp_ratio", "num_classes",
                       "pe_mode", "dropout"});
  ViTConfig c;
  read(j, "image_size", c.image_size);
  read(j, "patch_size", c.patch_size);
  read(j, "channels", c.channels);
  read(j, "dim", c.dim);
  read(j, "depth", c.depth);
  read(j, "heads", c.heads);
  read(j, "mlp_ratio", c.mlp_ratio);
  read(j, "num_classes", c.num_classes);
  read(j, "dropout", c.dropout);
  if (j.contains("pe_mode")) c.pe_mode = parse_pe_mode(j.at("pe_mode").get<std::string>());
  return c;
}

SelectorConfig selector_config_from_json(const Json& j) {
  only_keys(j, "selector", {"stages", "input_size", "channels", "stem_kernel", "stem_stride", "stem_padding",
                            "num_patches", "k", "pos_weight"});
  SelectorConfig c;
  if (j.contains("stages")) {
    c.stages.clear();
    for (const auto& s : j.at("stages")) {
      only_keys(s, "selector.stages[]", {"channels", "blocks"});
      SelectorStage st;
      read(s, "channels", st.channels);
      read(s, "blocks", st.blocks);
      c.stages.push_back(st);
    }
  }
  read(j, "input_size", c.input_size);
  read(j, "channels", c.channels);
  read(j, "stem_kernel", c.stem_kernel);
  read(j, "stem_stride", c.stem_stride);
  read(j, "stem_padding", c.stem_padding);
  read(j, "num_patches", c.num_patches);
  read(j, "k", c.k);
  read(j, "pos_weight", c.pos_weight);
  return c;
}

ExperimentConfig experiment_from_json(const Json& j) {
  only_keys(j, "experiment",
            {"name", "dataset", "model", "vit", "selector", "sanvit", "optimizer", "batch_size", "eval_batch_size",
             "max_epochs", "early_stop_patience", "seed", "augmentation", "shapes", "threads", "target_k", "fusion",
             "teacher_checkpoint", "selector_checkpoint", "targets_dir"});
  ExperimentConfig c;
  read(j, "name", c.name);
  if (j.contains("dataset")) c.dataset = parse_dataset_kind(j.at("dataset").get<std::string>());
  if (j.contains("model")) c.model = parse_model_kind(j.at("model").get<std::string>());
  if (j.contains("vit")) c.vit = vit_config_from_json(j.at("vit"));
  if (j.contains("selector")) c.selector = selector_config_from_json(j.at("selector"));
  if (j.contains("sanvit")) {
    const Json& s = j.at("sanvit");
    only_keys(s, "sanvit", {"k", "pe_variant", "index_source"});
    read(s, "k", c.sanvit.k);
    if (s.contains("pe_variant")) c.sanvit.pe_variant = parse_pe_variant(s.at("pe_variant").get<std::string>());
    if (s.contains("index_source")) c.sanvit.index_source = parse_index_source(s.at("index_source").get<std::string>());
  }
  if (j.contains("optimizer")) {
    const Json& o = j.at("optimizer");
    only_keys(o, "optimizer", {"lr", "beta1", "beta2", "eps"});
    read(o, "lr", c.optimizer.lr);
    read(o, "beta1", c.optimizer.beta1);
    read(o, "beta2", c.optimizer.beta2);
    read(o, "eps", c.optimizer.eps);
  }
  read(j, "batch_size", c.batch_size);
  read(j, "eval_batch_size", c.eval_batch_size);
  read(j, "max_epochs", c.max_epochs);
  read(j, "early_stop_patience", c.early_stop_patience);
  read(j, "seed", c.seed);
  if (j.contains("augmentation")) {
    const Json& a = j.at("augmentation");
    only_keys(a, "augmentation", {"enabled", "scale_lo", "scale_hi", "flip_p"});
    read(a, "enabled", c.augmentation.enabled);
    read(a, "scale_lo", c.augmentation.scale_lo);
    read(a, "scale_hi", c.augmentation.scale_hi);
    read(a, "flip_p", c.augmentation.flip_p);
  }
  if (j.contains("shapes")) {
    const Json& s = j.at("shapes");
    only_keys(s, "shapes", {"train", "validation", "test", "seed", "image_size"});
    read(s, "train", c.shapes.train);
    read(s, "validation", c.shapes.validation);
    read(s, "test", c.shapes.test);
    read(s, "seed", c.shapes.seed);
    read(s, "image_size", c.shapes.image_size);
  }
  read(j, "threads", c.threads);
  read(j, "target_k", c.target_k);
  if (j.contains("fusion")) c.fusion = parse_head_fusion(j.at("fusion").get<std::string>());
  read(j, "teacher_checkpoint", c.teacher_checkpoint);
  read(j, "selector_checkpoint", c.selector_checkpoint);
  read(j, "targets_dir", c.targets_dir);
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  try {
    return experiment_from_json(j);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

void save_experiment(const std::filesystem::path& path, const ExperimentConfig& config) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(config).dump(2) << '\n';
}

}  // namespace saccade
