#include "saccade/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "saccade/ops.hpp"
#include "saccade/optim.hpp"
#include "saccade/sanvit.hpp"
#include "saccade/selector.hpp"
#include "saccade/vit.hpp"

namespace saccade {

namespace fs = std::filesystem;

fs::path RunContext::resolve(const std::string& p) const {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

std::string_view split_name(CifarSplit split) {
  switch (split) {
    case CifarSplit::train: return "train";
    case CifarSplit::validation: return "validation";
    case CifarSplit::test: return "test";
  }
  return "?";
}

Dataset load_split(const ExperimentConfig& config, const RunContext& ctx, CifarSplit split) {
  if (config.dataset == DatasetKind::cifar100) {
    if (ctx.data_dir.empty()) throw std::invalid_argument("cifar100 needs a data directory (--data)");
    return read_cifar100(ctx.data_dir, split);
  }
  const auto& s = config.shapes;
  const int n = split == CifarSplit::train ? s.train : split == CifarSplit::validation ? s.validation : s.test;
  return gen_shapes(n, s.seed * 3 + static_cast<std::uint64_t>(split), s.image_size);
}

namespace {

void check_dataset(const ExperimentConfig& config, const Dataset& data, std::string_view split) {
  auto fail = [&](const std::string& m) {
    throw std::invalid_argument("experiment '" + config.name + "', " + std::string(split) + " split: " + m);
  };
  if (data.size() == 0) fail("dataset is empty");
  if (data.image_size != config.vit.image_size) {
    fail("images are " + std::to_string(data.image_size) + " px, the model expects " +
         std::to_string(config.vit.image_size));
  }
  if (data.records.front().channels != config.vit.channels) fail("channel count differs from the model");
  if (config.model != ModelKind::selector && data.num_classes != config.vit.num_classes) {
    fail("dataset has " + std::to_string(data.num_classes) + " classes, the model head has " +
         std::to_string(config.vit.num_classes));
  }
}

}  // namespace

// ------------------------------------------------------------ early stopping

Json to_json(const HistoryEntry& e) {
  return Json{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {e.metric, e.val_metric},
              {"steps", e.steps}, {"improved", e.improved}};
}

LoopResult run_early_stopping(int max_epochs, int patience, const LoopHooks& hooks) {
  if (max_epochs < 1 || patience < 1) throw std::invalid_argument("run_early_stopping: max_epochs and patience >= 1");
  LoopResult result;
  int stale = 0;
  for (int epoch = 1; epoch <= max_epochs; ++epoch) {
    EpochStats stats = hooks.train_epoch(epoch);
    const double metric = hooks.validate(epoch);
    HistoryEntry entry{epoch, stats.train_loss, hooks.metric, metric, stats.steps, false};
    if (result.best_epoch == 0 || metric > result.best_metric) {
      entry.improved = true;
      result.best_epoch = epoch;
      result.best_metric = metric;
      stale = 0;
      if (hooks.on_improved) hooks.on_improved(epoch);
    } else {
      ++stale;
    }
    result.history.push_back(entry);
    result.epochs_run = epoch;
    if (hooks.on_epoch) hooks.on_epoch(entry);
    if (stale >= patience) break;
  }
  return result;
}

// ---------------------------------------------------------------- training

namespace {

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

template <typename F>
void for_batches(std::size_t n, int batch, F&& f) {
  std::vector<std::size_t> which;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch)) {
    which.clear();
    for (std::size_t i = start; i < std::min(n, start + static_cast<std::size_t>(batch)); ++i) which.push_back(i);
    f(std::span<const std::size_t>(which));
  }
}

int argmax_row(std::span<const float> row) {
  int best = 0;
  for (int c = 1; c < static_cast<int>(row.size()); ++c) {
    if (row[c] > row[best]) best = c;
  }
  return best;
}

std::int64_t count_correct(const Tensor& logits, const std::vector<ImageRecord>& records,
                           std::span<const std::size_t> which) {
  const int c = logits.dim(1);
  std::int64_t correct = 0;
  for (std::size_t b = 0; b < which.size(); ++b) {
    auto row = logits.data().subspan(b * c, static_cast<std::size_t>(c));
    correct += argmax_row(row) == records[which[b]].label;
  }
  return correct;
}

/// Draws the shuffled order and the optimizer steps of one epoch. `loss_of`
/// maps dataset positions to a scalar loss.
template <typename LossFn>
EpochStats sgd_epoch(std::size_t n, int batch, Rng& shuffle_rng, ParamSet& params, std::vector<Tensor>& tensors,
                     AdamState<float>& opt, LossFn&& loss_of) {
  auto order = iota_n(n);
  shuffle_rng.shuffle(order.begin(), order.end());
  double loss_sum = 0.0;
  std::vector<std::size_t> which;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch)) {
    which.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                 order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + static_cast<std::size_t>(batch))));
    params.zero_grad();
    Tensor loss = loss_of(std::span<const std::size_t>(which));
    loss.backward();
    adam_step(std::span<Tensor>(tensors), opt);
    loss_sum += static_cast<double>(loss.item()) * static_cast<double>(which.size());
  }
  return {loss_sum / static_cast<double>(n), opt.step};
}

AdamState<float> make_adam(const OptimizerConfig& o) {
  AdamState<float> s;
  s.lr = o.lr;
  s.beta1 = o.beta1;
  s.beta2 = o.beta2;
  s.eps = o.eps;
  return s;
}

std::vector<ImageRecord> augmented(const std::vector<ImageRecord>& records, std::span<const std::size_t> which,
                                   const AugmentConfig& aug, int size, Rng& rng) {
  std::vector<ImageRecord> out;
  out.reserve(which.size());
  CropOptions crop;
  crop.scale_lo = aug.scale_lo;
  crop.scale_hi = aug.scale_hi;
  for (auto i : which) out.push_back(hflip(random_resized_crop(records[i], rng, size, crop), rng, aug.flip_p));
  return out;
}

Tensor multi_hot_batch(const std::vector<SaccadeRecord>& targets, std::span<const std::size_t> which, int n) {
  std::vector<float> y(which.size() * static_cast<std::size_t>(n));
  for (std::size_t b = 0; b < which.size(); ++b) {
    const auto& mh = targets[which[b]].multi_hot;
    for (int j = 0; j < n; ++j) y[b * n + j] = mh[static_cast<std::size_t>(j)];
  }
  return Tensor(Shape{static_cast<int>(which.size()), n}, std::move(y));
}

SaccadeFile read_targets(const ExperimentConfig& config, const RunContext& ctx, CifarSplit split) {
  if (config.targets_dir.empty()) throw std::invalid_argument("experiment '" + config.name + "' needs targets_dir");
  return read_saccade_file(target_path(ctx.resolve(config.targets_dir), split));
}

void log_epoch(const RunContext& ctx, const std::string& name, const HistoryEntry& e) {
  if (!ctx.log) return;
  *ctx.log << name << " epoch " << e.epoch << " loss " << std::setprecision(5) << e.train_loss << ' ' << e.metric
           << ' ' << e.val_metric << (e.improved ? " *" : "") << '\n';
  ctx.log->flush();
}

struct SelectorModel {
  ParamSet params;
  SelectorConfig config;
};

SelectorModel split_selector(const Checkpoint& ckpt, ParamSet* student) {
  SelectorModel sel;
  const std::string prefix = "selector.";
  for (const auto& [name, t] : ckpt.params.entries()) {
    if (name.rfind(prefix, 0) == 0) {
      sel.params.add(name.substr(prefix.size()), t.clone());
    } else if (student) {
      student->add(name, t.clone());
    }
  }
  sel.config = selector_config_from_json(ckpt.config.at("selector"));
  return sel;
}

SelectorModel load_selector(const ExperimentConfig& config, const RunContext& ctx) {
  if (config.selector_checkpoint.empty()) {
    throw std::invalid_argument("experiment '" + config.name + "': san index source needs selector_checkpoint");
  }
  Checkpoint ckpt = load_checkpoint(ctx.resolve(config.selector_checkpoint));
  auto producer = experiment_from_json(ckpt.config);
  if (producer.model != ModelKind::selector) {
    throw std::invalid_argument(config.selector_checkpoint + " was not produced by a selector run");
  }
  SelectorModel sel{std::move(ckpt.params), producer.selector};
  Rng scratch(0);
  check_compatible(selector_init(sel.config, scratch), sel.params, config.selector_checkpoint);
  if (sel.config.num_patches != config.vit.num_patches() || sel.config.input_size != config.vit.image_size) {
    throw std::invalid_argument("selector in " + config.selector_checkpoint + " scores a " +
                                std::to_string(sel.config.num_patches) + "-patch grid at " +
                                std::to_string(sel.config.input_size) + " px; the student needs " +
                                std::to_string(config.vit.num_patches()) + " at " +
                                std::to_string(config.vit.image_size));
  }
  return sel;
}

std::vector<std::vector<int>> all_selector_indices(const SelectorModel& sel, const Dataset& data, int k, int batch) {
  std::vector<std::vector<int>> out;
  out.reserve(data.size());
  for_batches(data.size(), batch, [&](std::span<const std::size_t> which) {
    for (auto& v : selector_indices(make_batch(data.records, which), sel.params, sel.config, k)) {
      out.push_back(std::move(v));
    }
  });
  return out;
}

std::vector<std::vector<int>> record_indices(const std::vector<SaccadeRecord>& records) {
  std::vector<std::vector<int>> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.indices);
  return out;
}

std::vector<std::vector<int>> pick(const std::vector<std::vector<int>>& all, std::span<const std::size_t> which) {
  std::vector<std::vector<int>> out;
  out.reserve(which.size());
  for (auto i : which) out.push_back(all[i]);
  return out;
}

double vit_accuracy(const ParamSet& params, const ViTConfig& vc, const Dataset& data, int batch) {
  NoGradGuard no_grad;
  std::int64_t correct = 0;
  for_batches(data.size(), batch, [&](std::span<const std::size_t> which) {
    correct += count_correct(vit_forward(make_batch(data.records, which), params, vc), data.records, which);
  });
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double sanvit_accuracy(const ParamSet& params, const SanVitConfig& sc, const Dataset& data,
                       const std::vector<std::vector<int>>& indices, int batch) {
  NoGradGuard no_grad;
  std::int64_t correct = 0;
  for_batches(data.size(), batch, [&](std::span<const std::size_t> which) {
    auto logits = sanvit_forward(make_batch(data.records, which), pick(indices, which), params, sc);
    correct += count_correct(logits, data.records, which);
  });
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

SelectorMetrics selector_eval(const ParamSet& params, const SelectorConfig& sc, const Dataset& data,
                              const std::vector<SaccadeRecord>& targets, int batch) {
  NoGradGuard no_grad;
  SelectionTally tally;
  const auto n = static_cast<std::size_t>(sc.num_patches);
  for_batches(data.size(), batch, [&](std::span<const std::size_t> which) {
    auto logits = selector_forward(make_batch(data.records, which), params, sc);
    for (std::size_t b = 0; b < which.size(); ++b) {
      tally.add(logits.data().subspan(b * n, n), targets[which[b]].multi_hot, sc.k);
    }
  });
  return tally.metrics();
}

}  // namespace

TrainResult train(const ExperimentConfig& config, const RunContext& ctx) {
  config.validate();
  Dataset train_set = load_split(config, ctx, CifarSplit::train);
  Dataset val_set = load_split(config, ctx, CifarSplit::validation);
  check_dataset(config, train_set, "train");
  check_dataset(config, val_set, "validation");

  Rng master(config.seed);
  Rng init_rng = master.fork();
  Rng shuffle_rng = master.fork();
  Rng aug_rng = master.fork();
  Rng dropout_rng = master.fork();

  std::ofstream history;
  if (!ctx.history_path.empty()) {
    history.open(ctx.history_path, std::ios::trunc);
    if (!history) throw std::runtime_error("cannot write history " + ctx.history_path.string());
  }

  ExperimentConfig stored = config;
  ParamSet params;
  std::function<Tensor(std::span<const std::size_t>)> loss_of;
  std::function<double()> validate;
  std::string metric = "val_accuracy";
  std::optional<SelectorModel> selector;

  std::vector<SaccadeRecord> train_targets, val_targets;
  std::vector<std::vector<int>> train_idx, val_idx;
  const bool augment = config.augmentation.enabled;
  const int size = config.vit.image_size;

  auto batch_images = [&](std::span<const std::size_t> which) {
    if (!augment) return make_batch(train_set.records, which);
    auto recs = augmented(train_set.records, which, config.augmentation, size, aug_rng);
    return make_batch(recs, iota_n(recs.size()));
  };
  auto labels_of = [&](std::span<const std::size_t> which) {
    std::vector<int> labels;
    for (auto i : which) labels.push_back(train_set.records[i].label);
    return labels;
  };
  ForwardOptions train_opts;
  if (config.vit.dropout > 0.0) train_opts.dropout_rng = &dropout_rng;

  switch (config.model) {
    case ModelKind::teacher_vit:
    case ModelKind::simple_vit: {
      params = vit_init(config.vit, init_rng);
      loss_of = [&](std::span<const std::size_t> which) {
        auto labels = labels_of(which);
        return cross_entropy(vit_forward(batch_images(which), params, config.vit, train_opts),
                             std::span<const int>(labels));
      };
      validate = [&] { return vit_accuracy(params, config.vit, val_set, config.eval_batch_size); };
      break;
    }
    case ModelKind::selector: {
      const int n = config.selector.num_patches;
      train_targets = align_targets(read_targets(config, ctx, CifarSplit::train), train_set, n, config.target_k);
      val_targets = align_targets(read_targets(config, ctx, CifarSplit::validation), val_set, n, config.target_k);
      params = selector_init(config.selector, init_rng);
      const auto pw = static_cast<float>(config.selector.pos_weight);
      loss_of = [&, n, pw](std::span<const std::size_t> which) {
        auto logits = selector_forward(make_batch(train_set.records, which), params, config.selector);
        return selector_loss(logits, multi_hot_batch(train_targets, which, n), pw);
      };
      validate = [&] {
        return selector_eval(params, config.selector, val_set, val_targets, config.eval_batch_size).overlap_at_k;
      };
      metric = "val_overlap_at_k";
      break;
    }
    case ModelKind::sanvit: {
      const SanVitConfig sc = config.sanvit_config();
      params = sanvit_init(sc, init_rng);
      if (config.sanvit.index_source == IndexSource::san) {
        selector = load_selector(config, ctx);
        stored.selector = selector->config;
        if (!augment) train_idx = all_selector_indices(*selector, train_set, sc.k, config.eval_batch_size);
        val_idx = all_selector_indices(*selector, val_set, sc.k, config.eval_batch_size);
      } else {
        const int n = config.vit.num_patches();
        train_idx = record_indices(align_targets(read_targets(config, ctx, CifarSplit::train), train_set, n, sc.k));
        val_idx = record_indices(align_targets(read_targets(config, ctx, CifarSplit::validation), val_set, n, sc.k));
      }
      loss_of = [&, sc](std::span<const std::size_t> which) {
        auto labels = labels_of(which);
        Tensor images;
        std::vector<std::vector<int>> idx;
        if (augment) {
          images = batch_images(which);
          idx = selector_indices(images, selector->params, selector->config, sc.k);
        } else {
          images = make_batch(train_set.records, which);
          idx = pick(train_idx, which);
        }
        return cross_entropy(sanvit_forward(images, idx, params, sc, train_opts), std::span<const int>(labels));
      };
      validate = [&, sc] { return sanvit_accuracy(params, sc, val_set, val_idx, config.eval_batch_size); };
      break;
    }
  }

  std::vector<Tensor> tensors = params.tensors();
  AdamState<float> opt = make_adam(config.optimizer);
  ParamSet best;

  LoopHooks hooks;
  hooks.metric = metric;
  hooks.train_epoch = [&](int) {
    return sgd_epoch(train_set.size(), config.batch_size, shuffle_rng, params, tensors, opt, loss_of);
  };
  hooks.validate = [&](int) { return validate(); };
  hooks.on_improved = [&](int) { best = params.clone(); };
  hooks.on_epoch = [&](const HistoryEntry& e) {
    if (history.is_open()) {
      history << to_json(e).dump() << '\n';
      history.flush();
    }
    log_epoch(ctx, config.name, e);
  };

  TrainResult result;
  result.loop = run_early_stopping(config.max_epochs, config.early_stop_patience, hooks);
  auto package = [&](const ParamSet& own) {
    Checkpoint c;
    c.config = to_json(stored);
    for (const auto& [name, t] : own.entries()) c.params.add(name, t.clone());
    if (selector) {
      for (const auto& [name, t] : selector->params.entries()) c.params.add("selector." + name, t.clone());
    }
    return c;
  };
  result.best = package(best);
  result.last = package(params);
  return result;
}

// -------------------------------------------------------------- evaluation

Json to_json(const EvalMetrics& m) {
  Json j{{"model", m.model}, {"split", m.split}, {"examples", m.examples}};
  j["accuracy"] = m.accuracy ? Json(*m.accuracy) : Json(nullptr);
  if (m.selector) {
    const auto& s = *m.selector;
    j["selector"] = Json{{"per_patch_accuracy", s.per_patch_accuracy},
                         {"sensitivity", s.sensitivity ? Json(*s.sensitivity) : Json(nullptr)},
                         {"specificity", s.specificity ? Json(*s.specificity) : Json(nullptr)},
                         {"overlap_at_k", s.overlap_at_k}};
  }
  return j;
}

EvalMetrics evaluate(const Checkpoint& ckpt, const RunContext& ctx, CifarSplit split, std::optional<int> batch_size) {
  auto config = experiment_from_json(ckpt.config);
  return evaluate(ckpt, load_split(config, ctx, split), ctx, split, batch_size);
}

EvalMetrics evaluate(const Checkpoint& ckpt, const Dataset& data, const RunContext& ctx, CifarSplit split,
                     std::optional<int> batch_size) {
  const ExperimentConfig config = experiment_from_json(ckpt.config);
  config.validate();
  check_dataset(config, data, split_name(split));
  const int batch = batch_size.value_or(config.eval_batch_size);
  if (batch < 1) throw std::invalid_argument("evaluate: batch size must be positive");
  EvalMetrics m;
  m.model = std::string(to_string(config.model));
  m.split = std::string(split_name(split));
  m.examples = static_cast<std::int64_t>(data.size());
  Rng scratch(0);
  switch (config.model) {
    case ModelKind::teacher_vit:
    case ModelKind::simple_vit: {
      check_compatible(vit_init(config.vit, scratch), ckpt.params, "evaluate");
      m.accuracy = vit_accuracy(ckpt.params, config.vit, data, batch);
      break;
    }
    case ModelKind::selector: {
      check_compatible(selector_init(config.selector, scratch), ckpt.params, "evaluate");
      auto targets = align_targets(read_targets(config, ctx, split), data, config.selector.num_patches, config.target_k);
      m.selector = selector_eval(ckpt.params, config.selector, data, targets, batch);
      break;
    }
    case ModelKind::sanvit: {
      const SanVitConfig sc = config.sanvit_config();
      std::vector<std::vector<int>> idx;
      ParamSet student;
      if (sc.index_source == IndexSource::san) {
        SelectorModel sel = split_selector(ckpt, &student);
        check_compatible(selector_init(sel.config, scratch), sel.params, "evaluate (selector part)");
        idx = all_selector_indices(sel, data, sc.k, batch);
      } else {
        for (const auto& [name, t] : ckpt.params.entries()) student.add(name, t.clone());
        idx = record_indices(align_targets(read_targets(config, ctx, split), data, config.vit.num_patches(), sc.k));
      }
      check_compatible(sanvit_init(sc, scratch), student, "evaluate");
      m.accuracy = sanvit_accuracy(student, sc, data, idx, batch);
      break;
    }
  }
  return m;
}

// ----------------------------------------------------------------- targets

fs::path target_path(const fs::path& dir, CifarSplit split) {
  return dir / (std::string(split_name(split)) + ".sact");
}

std::vector<SaccadeRecord> align_targets(const SaccadeFile& file, const Dataset& data, int num_patches, int k) {
  if (file.num_patches != num_patches || file.k != k) {
    throw std::invalid_argument("saccade targets have N=" + std::to_string(file.num_patches) + ", k=" +
                                std::to_string(file.k) + "; expected N=" + std::to_string(num_patches) +
                                ", k=" + std::to_string(k));
  }
  std::unordered_map<std::uint32_t, const SaccadeRecord*> by_id;
  for (const auto& r : file.records) by_id.emplace(r.image_id, &r);
  std::vector<SaccadeRecord> out;
  out.reserve(data.size());
  for (const auto& img : data.records) {
    auto it = by_id.find(img.id);
    if (it == by_id.end()) throw std::invalid_argument("no saccade target for image " + std::to_string(img.id));
    if (it->second->label != img.label) {
      throw std::invalid_argument("saccade target for image " + std::to_string(img.id) + " has label " +
                                  std::to_string(it->second->label) + ", dataset says " + std::to_string(img.label));
    }
    out.push_back(*it->second);
  }
  return out;
}

void build_targets(const ExperimentConfig& config, const RunContext& ctx, const fs::path& out_dir) {
  if (config.teacher_checkpoint.empty()) {
    throw std::invalid_argument("experiment '" + config.name + "': building targets needs teacher_checkpoint");
  }
  Checkpoint teacher = load_checkpoint(ctx.resolve(config.teacher_checkpoint));
  auto producer = experiment_from_json(teacher.config);
  if (producer.model != ModelKind::teacher_vit && producer.model != ModelKind::simple_vit) {
    throw std::invalid_argument(config.teacher_checkpoint + " is not a ViT checkpoint");
  }
  Rng scratch(0);
  check_compatible(vit_init(producer.vit, scratch), teacher.params, config.teacher_checkpoint);
  fs::create_directories(out_dir);
  for (auto split : {CifarSplit::train, CifarSplit::validation, CifarSplit::test}) {
    Dataset data = load_split(config, ctx, split);
    SaccadeFile file;
    file.num_patches = producer.vit.num_patches();
    file.k = config.target_k;
    file.records = build_saccade_targets(teacher.params, producer.vit, data, config.target_k, config.fusion,
                                         config.eval_batch_size);
    write_saccade_file(target_path(out_dir, split), file);
    if (ctx.log) *ctx.log << "targets: " << split_name(split) << ' ' << file.records.size() << " records\n";
  }
}

void ensure_targets(const ExperimentConfig& config, const RunContext& ctx) {
  if (config.targets_dir.empty()) throw std::invalid_argument("experiment '" + config.name + "' needs targets_dir");
  const fs::path dir = ctx.resolve(config.targets_dir);
  bool all = true;
  for (auto split : {CifarSplit::train, CifarSplit::validation, CifarSplit::test}) {
    all = all && fs::exists(target_path(dir, split));
  }
  if (!all) build_targets(config, ctx, dir);
}

// ------------------------------------------------------------------- costs

CostReport config_cost(const ExperimentConfig& config) {
  switch (config.model) {
    case ModelKind::teacher_vit:
    case ModelKind::simple_vit: return cost_report(config.vit);
    case ModelKind::selector: return cost_report(config.selector);
    case ModelKind::sanvit:
      if (config.sanvit.index_source == IndexSource::san) return pipeline_cost(config.sanvit_config(), config.selector);
      return cost_report(config.sanvit_config());
  }
  throw std::logic_error("config_cost: unknown model");
}

Json to_json(const CostReport& r) {
  auto breakdown = [](const Breakdown& b) {
    Json j = Json::object();
    for (const auto& [k, v] : b) j[k] = v;
    return j;
  };
  return Json{{"model", r.model},
              {"params_total", r.params_total},
              {"params_by_component", breakdown(r.params_by_component)},
              {"flops_total", r.flops_total},
              {"flops_by_component", breakdown(r.flops_by_component)},
              {"transformer_flops", transformer_flops(r)},
              {"attention_comparisons", r.attention_comparisons},
              {"notes", r.notes}};
}

// ---------------------------------------------------------------- heatmaps

namespace {

std::vector<std::uint8_t> pgm_header(int w, int h) {
  std::string head = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  return {head.begin(), head.end()};
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

std::vector<std::uint8_t> encode_heatmap_pgm(const HeatMap& heat) {
  const auto cells = static_cast<std::size_t>(heat.grid) * static_cast<std::size_t>(heat.grid);
  if (heat.grid < 1 || heat.heat.size() != cells) throw std::invalid_argument("heatmap: values do not fill the grid");
  for (double v : heat.heat) {
    if (!std::isfinite(v)) throw std::invalid_argument("heatmap: non-finite value");
  }
  auto out = pgm_header(heat.grid, heat.grid);
  const auto [lo_it, hi_it] = std::minmax_element(heat.heat.begin(), heat.heat.end());
  const double lo = *lo_it, hi = *hi_it;
  for (double v : heat.heat) {
    std::uint8_t b = 0;
    if (hi > lo) {
      const double scaled = (v - lo) / (hi - lo) * 255.0;
      b = static_cast<std::uint8_t>(std::clamp(std::ceil(scaled - 0.5), 0.0, 255.0));
    }
    out.push_back(b);
  }
  return out;
}

void emit_heatmap_pgm(const HeatMap& heat, const fs::path& path) { write_bytes(path, encode_heatmap_pgm(heat)); }

void emit_mask_pgm(const std::vector<int>& indices, int grid, const fs::path& path) {
  if (grid < 1) throw std::invalid_argument("mask: grid must be positive");
  auto out = pgm_header(grid, grid);
  const std::size_t header = out.size();
  out.resize(header + static_cast<std::size_t>(grid) * grid, 0);
  for (int i : indices) {
    if (i < 0 || i >= grid * grid) throw std::out_of_range("mask: index " + std::to_string(i) + " outside the grid");
    out[header + static_cast<std::size_t>(i)] = 255;
  }
  write_bytes(path, out);
}

// ----------------------------------------------------------------- compare

RunOutcome run_experiment(const ExperimentConfig& config, const RunContext& ctx, const fs::path& dir) {
  fs::create_directories(dir);
  save_experiment(dir / "config.json", config);
  RunContext run_ctx = ctx;
  run_ctx.history_path = dir / "history.jsonl";
  RunOutcome out;
  out.train = train(config, run_ctx);
  save_checkpoint(dir / "checkpoint.sanw", out.train.best);
  out.test = evaluate(out.train.best, run_ctx, CifarSplit::test);
  Json metrics = to_json(out.test);
  metrics["best_epoch"] = out.train.loop.best_epoch;
  metrics["best_" + out.train.loop.history.front().metric] = out.train.loop.best_metric;
  metrics["epochs_run"] = out.train.loop.epochs_run;
  metrics["steps"] = out.train.loop.history.back().steps;
  std::ofstream(dir / "metrics.json", std::ios::trunc) << metrics.dump(2) << '\n';
  return out;
}

CompareReport compare(const std::vector<ExperimentConfig>& configs, const RunContext& ctx, const fs::path& out_dir) {
  if (configs.size() < 2) throw std::invalid_argument("compare needs at least two configs");
  std::map<std::string, int> seen;
  for (const auto& c : configs) {
    if (seen[c.name]++) throw std::invalid_argument("compare: duplicate run name '" + c.name + "'");
  }
  fs::create_directories(out_dir);
  RunContext run_ctx = ctx;
  run_ctx.base_dir = out_dir;

  CompareReport report;
  report.reference_comparison_ratio =
      static_cast<double>(attention_comparisons(196)) / static_cast<double>(attention_comparisons(32));
  for (const auto& config : configs) {
    try {
      config.validate();
      const bool needs_targets = config.model == ModelKind::selector ||
                                 (config.model == ModelKind::sanvit &&
                                  config.sanvit.index_source == IndexSource::ground_truth);
      if (needs_targets) ensure_targets(config, run_ctx);
      RunOutcome run = run_experiment(config, run_ctx, out_dir / config.name);
      CompareRow row;
      row.name = config.name;
      row.model = std::string(to_string(config.model));
      row.cost = config_cost(experiment_from_json(run.train.best.config));
      row.params = row.cost.params_total;
      row.flops = row.cost.flops_total;
      row.transformer_flops = transformer_flops(row.cost);
      row.attention_comparisons = row.cost.attention_comparisons;
      row.accuracy = run.test.accuracy;
      if (run.test.selector) row.overlap_at_k = run.test.selector->overlap_at_k;
      row.best_epoch = run.train.loop.best_epoch;
      row.epochs_run = run.train.loop.epochs_run;
      report.rows.push_back(std::move(row));
    } catch (const std::exception& e) {
      throw std::runtime_error("compare: run '" + config.name + "' (" + std::string(to_string(config.model)) +
                               ") failed: " + e.what());
    }
  }
  const CompareRow* base = nullptr;
  for (auto kind : {"simple_vit", "teacher_vit"}) {
    for (const auto& r : report.rows) {
      if (!base && r.model == kind) base = &r;
    }
  }
  if (base) {
    report.baseline = base->name;
    for (auto& r : report.rows) {
      if (r.model == "selector") continue;
      r.flop_ratio = static_cast<double>(r.flops) / static_cast<double>(base->flops);
      if (base->transformer_flops > 0) {
        r.transformer_ratio = static_cast<double>(r.transformer_flops) / static_cast<double>(base->transformer_flops);
      }
    }
  }
  std::ofstream(out_dir / "report.json", std::ios::trunc) << to_json(report).dump(2) << '\n';
  std::ofstream(out_dir / "report.txt", std::ios::trunc) << format_table(report);
  return report;
}

Json to_json(const CompareReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
  Json rows = Json::array();
  for (const auto& row : r.rows) {
    rows.push_back(Json{{"name", row.name},
                        {"model", row.model},
                        {"params", row.params},
                        {"flops", row.flops},
                        {"transformer_flops", row.transformer_flops},
                        {"attention_comparisons", row.attention_comparisons},
                        {"accuracy", opt(row.accuracy)},
                        {"overlap_at_k", opt(row.overlap_at_k)},
                        {"flop_ratio", opt(row.flop_ratio)},
                        {"transformer_flop_ratio", opt(row.transformer_ratio)},
                        {"best_epoch", row.best_epoch},
                        {"epochs_run", row.epochs_run},
                        {"cost", to_json(row.cost)}});
  }
  return Json{{"baseline", r.baseline},
              {"flop_convention", kFlopConvention},
              {"reference_comparison_ratio", r.reference_comparison_ratio},
              {"rows", rows}};
}

std::string format_table(const CompareReport& r) {
  const std::vector<std::string> head = {"run",         "model", "params",   "GFLOPs",      "xfmr GFLOPs",
                                         "FLOP ratio", "xfmr ratio", "attn cmp", "accuracy", "overlap@k"};
  std::vector<std::vector<std::string>> cells;
  auto fixed = [](double v, int digits) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
  };
  auto opt = [&](const std::optional<double>& v, int digits) { return v ? fixed(*v, digits) : std::string("-"); };
  for (const auto& row : r.rows) {
    cells.push_back({row.name, row.model, std::to_string(row.params), fixed(row.flops / 1e9, 4),
                     fixed(row.transformer_flops / 1e9, 4), opt(row.flop_ratio, 3), opt(row.transformer_ratio, 3),
                     std::to_string(row.attention_comparisons),
                     row.accuracy ? fixed(*row.accuracy * 100.0, 2) + "%" : "-", opt(row.overlap_at_k, 3)});
  }
  std::vector<std::size_t> width(head.size());
  for (std::size_t c = 0; c < head.size(); ++c) {
    width[c] = head[c].size();
    for (const auto& row : cells) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out << "  ";
      if (c < 2) {
        out << std::left << std::setw(static_cast<int>(width[c])) << row[c];
      } else {
        out << std::right << std::setw(static_cast<int>(width[c])) << row[c];
      }
    }
    out << '\n';
  };
  line(head);
  std::size_t total = 0;
  for (auto w : width) total += w;
  out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
  for (const auto& row : cells) line(row);
  out << "\nbaseline: " << (r.baseline.empty() ? "(none)" : r.baseline) << '\n';
  out << "FLOPs: " << kFlopConvention << '\n';
  out << "attention comparisons 196^2 / 32^2 = " << fixed(r.reference_comparison_ratio, 4) << '\n';
  return out.str();
}

}  // namespace saccade
