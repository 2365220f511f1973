#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "saccade/checkpoint.hpp"
#include "saccade/config.hpp"
#include "saccade/harness.hpp"

using namespace saccade;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("saccade_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 32 px shapes, 4 x 4 grid: small enough for a few seconds of training.
ExperimentConfig tiny_run(const std::string& name, ModelKind model = ModelKind::teacher_vit) {
  ExperimentConfig c;
  c.name = name;
  c.model = model;
  c.vit.image_size = 32;
  c.vit.patch_size = 8;
  c.vit.dim = 16;
  c.vit.depth = 1;
  c.vit.heads = 2;
  c.vit.num_classes = 3;
  c.selector.stages = {{8, 1}, {16, 1}};
  c.selector.input_size = 32;
  c.selector.num_patches = 16;
  c.selector.k = 4;
  c.target_k = 4;
  c.sanvit.k = 4;
  c.shapes = {64, 32, 32, 3, 32};
  c.optimizer.lr = 3e-3;
  c.batch_size = 16;
  c.max_epochs = 3;
  c.early_stop_patience = 3;
  c.seed = 11;
  return c;
}

}  // namespace

TEST_SUITE("early stopping") {
  TEST_CASE("patience 1 with a metric that drops after epoch 1 stops at epoch 2, keeps epoch 1") {
    int trained = 0, snapshot = -1;
    LoopHooks hooks;
    hooks.train_epoch = [&](int) {
      ++trained;
      return EpochStats{1.0, trained * 10};
    };
    hooks.validate = [](int epoch) { return epoch == 1 ? 0.5 : 0.4; };
    hooks.on_improved = [&](int epoch) { snapshot = epoch; };
    auto r = run_early_stopping(50, 1, hooks);
    CHECK(r.epochs_run == 2);
    CHECK(trained == 2);
    CHECK(r.best_epoch == 1);
    CHECK(snapshot == 1);
    CHECK(r.best_metric == 0.5);
    CHECK(r.history.size() == 2);
    CHECK(r.history[0].improved);
    CHECK_FALSE(r.history[1].improved);
  }

  TEST_CASE("ties do not count as improvement; max_epochs caps the loop") {
    LoopHooks hooks;
    hooks.train_epoch = [](int) { return EpochStats{}; };
    std::vector<double> metric{0.1, 0.3, 0.3, 0.3, 0.2, 0.9};
    hooks.validate = [&](int e) { return metric[static_cast<std::size_t>(e - 1)]; };
    auto r = run_early_stopping(6, 3, hooks);
    CHECK(r.best_epoch == 2);
    CHECK(r.epochs_run == 5);
    auto capped = run_early_stopping(2, 10, hooks);
    CHECK(capped.epochs_run == 2);
  }

  TEST_CASE("history entries are single-line JSON without timestamps") {
    HistoryEntry e{3, 0.25, "val_accuracy", 0.75, 96, true};
    auto j = to_json(e);
    CHECK(j.dump().find('\n') == std::string::npos);
    CHECK(j.at("val_accuracy") == 0.75);
    CHECK(j.at("steps") == 96);
    CHECK(j.size() == 5);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("round trip is bit exact, including special floats and the config") {
    Checkpoint c;
    c.params.add("a", Tensor(Shape{2, 3}, std::vector<float>{0.0f, -0.0f, 1e-42f,
                                                               std::numeric_limits<float>::infinity(),
                                                               std::numeric_limits<float>::max(), -3.5f}));
    c.params.add("blocks.0.b", Tensor(Shape{1}, std::vector<float>{7}));
    c.params.add("c", Tensor(Shape{2, 1, 2, 1}, std::vector<float>{1, 2, 3, 4}));
    c.config = to_json(tiny_run("ck"));
    auto bytes = encode_checkpoint(c);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SANW");
    auto back = decode_checkpoint(bytes);
    REQUIRE(back.params.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& [na, ta] = c.params.entries()[i];
      const auto& [nb, tb] = back.params.entries()[i];
      CHECK(na == nb);
      CHECK(ta.shape() == tb.shape());
      CHECK(std::memcmp(ta.data().data(), tb.data().data(), ta.numel() * sizeof(float)) == 0);
    }
    CHECK(back.config == c.config);
    CHECK(encode_checkpoint(back) == bytes);

    auto dir = temp_dir("ckpt");
    save_checkpoint(dir / "x.sanw", c);
    CHECK(encode_checkpoint(load_checkpoint(dir / "x.sanw")) == bytes);
  }

  TEST_CASE("empty parameter set round trips") {
    Checkpoint c;
    c.config = Json::object();
    auto bytes = encode_checkpoint(c);
    CHECK(bytes.size() == 4 + 2 + 4 + 4 + 2);
    CHECK(decode_checkpoint(bytes).params.size() == 0);
  }

  TEST_CASE("corruption is rejected") {
    Checkpoint c;
    c.params.add("w", Tensor::full({3}, 1.0f));
    c.config = Json{{"name", "x"}};
    auto bytes = encode_checkpoint(c);
    auto bad = bytes;
    bad[1] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
    auto truncated = bytes;
    truncated.resize(truncated.size() - 3);
    CHECK_THROWS_AS(decode_checkpoint(truncated), FormatError);
    auto trailing = bytes;
    trailing.push_back(1);
    CHECK_THROWS_AS(decode_checkpoint(trailing), FormatError);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/x.sanw"), std::runtime_error);
  }

  TEST_CASE("compatibility check names the mismatch") {
    ParamSet a, b;
    a.add("w", Tensor::zeros({2, 2}));
    b.add("w", Tensor::zeros({2, 3}));
    try {
      check_compatible(a, b, "model.sanw");
      FAIL("expected rejection");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("w") != std::string::npos);
    }
    CHECK_NOTHROW(check_compatible(a, a, "same"));
  }
}

TEST_SUITE("config") {
  TEST_CASE("JSON round trip is field for field") {
    auto c = tiny_run("rt", ModelKind::sanvit);
    c.sanvit.pe_variant = PeVariant::learned_postslice;
    c.sanvit.index_source = IndexSource::ground_truth;
    c.fusion = HeadFusion::max;
    c.teacher_checkpoint = "t/checkpoint.sanw";
    c.targets_dir = "targets";
    auto j = to_json(c);
    CHECK(to_json(experiment_from_json(j)) == j);
    auto dir = temp_dir("cfg");
    save_experiment(dir / "c.json", c);
    CHECK(to_json(load_experiment(dir / "c.json")) == j);
  }

  TEST_CASE("unknown keys and bad values are rejected") {
    auto j = to_json(tiny_run("x"));
    j["learning_rate"] = 0.1;
    CHECK_THROWS(experiment_from_json(j));
    auto k = to_json(tiny_run("x"));
    k["model"] = "resnet";
    CHECK_THROWS(experiment_from_json(k));
    auto v = to_json(tiny_run("x"));
    v["vit"]["bogus"] = 1;
    CHECK_THROWS(experiment_from_json(v));
  }

  TEST_CASE("cross-field validation") {
    auto c = tiny_run("v");
    CHECK_NOTHROW(c.validate());
    c.threads = 2;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    auto g = tiny_run("g", ModelKind::sanvit);
    g.sanvit.index_source = IndexSource::ground_truth;
    g.augmentation.enabled = true;
    CHECK_THROWS_AS(g.validate(), std::invalid_argument);
    auto s = tiny_run("s", ModelKind::selector);
    s.selector.num_patches = 64;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  }

  TEST_CASE("shipped configs load and validate") {
    for (const auto& entry : fs::directory_iterator(fs::path(SACCADE_SOURCE_DIR) / "configs")) {
      auto j = Json::parse(slurp(entry.path()));
      if (j.contains("runs")) continue;
      INFO(entry.path().string());
      CHECK_NOTHROW(load_experiment(entry.path()).validate());
    }
  }
}

TEST_SUITE("heatmap") {
  TEST_CASE("normalization example and degenerate input") {
    auto bytes = encode_heatmap_pgm(HeatMap{{0, 1, 0.5, 1}, 2});
    const std::string header = "P5\n2 2\n255\n";
    REQUIRE(bytes.size() == header.size() + 4);
    CHECK(std::string(bytes.begin(), bytes.begin() + static_cast<long>(header.size())) == header);
    CHECK(std::vector<int>(bytes.end() - 4, bytes.end()) == std::vector<int>{0, 255, 127, 255});
    auto flat = encode_heatmap_pgm(HeatMap{std::vector<double>(9, 0.3), 3});
    CHECK(flat.size() == std::string("P5\n3 3\n255\n").size() + 9);
    for (std::size_t i = flat.size() - 9; i < flat.size(); ++i) CHECK(flat[i] == 0);
    CHECK_THROWS_AS(encode_heatmap_pgm(HeatMap{{0, 1, 2}, 2}), std::invalid_argument);
    CHECK_THROWS_AS(encode_heatmap_pgm(HeatMap{{0, 1, NAN, 1}, 2}), std::invalid_argument);
  }

  TEST_CASE("files are written with the path in errors") {
    auto dir = temp_dir("pgm");
    emit_heatmap_pgm(HeatMap{{0, 1, 0.5, 1}, 2}, dir / "h.pgm");
    CHECK(fs::file_size(dir / "h.pgm") == 11 + 4);
    emit_mask_pgm({1, 3}, 2, dir / "m.pgm");
    auto m = slurp(dir / "m.pgm");
    CHECK(static_cast<unsigned char>(m[11]) == 0);
    CHECK(static_cast<unsigned char>(m[12]) == 255);
    CHECK(static_cast<unsigned char>(m[14]) == 255);
    CHECK_THROWS_AS(emit_mask_pgm({4}, 2, dir / "bad.pgm"), std::out_of_range);
    try {
      emit_heatmap_pgm(HeatMap{{0, 1, 0.5, 1}, 2}, dir / "missing" / "h.pgm");
      FAIL("expected an I/O error");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("missing") != std::string::npos);
    }
  }
}

TEST_SUITE("training") {
  TEST_CASE("dataset and model mismatch is rejected before training") {
    auto c = tiny_run("mismatch");
    c.shapes.image_size = 64;
    RunContext ctx;
    CHECK_THROWS_WITH_AS(train(c, ctx), doctest::Contains("px"), std::invalid_argument);
    auto k = tiny_run("classes");
    k.vit.num_classes = 5;
    CHECK_THROWS_AS(train(k, ctx), std::invalid_argument);
  }

  TEST_CASE("same config and seed give identical history files") {
    auto dir = temp_dir("determinism");
    auto c = tiny_run("det");
    RunContext a, b;
    a.history_path = dir / "a.jsonl";
    b.history_path = dir / "b.jsonl";
    auto ra = train(c, a);
    auto rb = train(c, b);
    CHECK(slurp(a.history_path) == slurp(b.history_path));
    CHECK(encode_checkpoint(ra.best) == encode_checkpoint(rb.best));
    std::istringstream lines(slurp(a.history_path));
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) {
      auto j = Json::parse(line);
      CHECK(j.at("epoch") == ++n);
      CHECK(j.contains("val_accuracy"));
    }
    CHECK(n == ra.loop.epochs_run);
  }

  TEST_CASE("returned checkpoint is the best validation epoch") {
    auto c = tiny_run("best");
    c.max_epochs = 5;
    RunContext ctx;
    auto r = train(c, ctx);
    auto m = evaluate(r.best, ctx, CifarSplit::validation);
    CHECK(*m.accuracy == doctest::Approx(r.loop.best_metric).epsilon(1e-12));
    double best = 0;
    for (const auto& e : r.loop.history) best = std::max(best, e.val_metric);
    CHECK(r.loop.best_metric == best);
  }

  TEST_CASE("evaluation does not depend on the batch size") {
    auto c = tiny_run("batch");
    c.max_epochs = 2;
    RunContext ctx;
    auto r = train(c, ctx);
    auto ref = evaluate(r.best, ctx, CifarSplit::test, 64);
    for (int bs : {1, 5, 13}) CHECK(*evaluate(r.best, ctx, CifarSplit::test, bs).accuracy == *ref.accuracy);
    CHECK(ref.examples == 32);
  }

  TEST_CASE("tiny ViT memorizes 64 images") {
    auto c = tiny_run("overfit");
    c.vit.dim = 32;
    c.vit.depth = 2;
    c.max_epochs = 30;
    c.early_stop_patience = 30;
    RunContext ctx;
    auto data = load_split(c, ctx, CifarSplit::train);
    auto r = train(c, ctx);
    CHECK(r.loop.epochs_run == 30);
    CHECK(*evaluate(r.last, data, ctx, CifarSplit::train).accuracy == 1.0);
    CHECK(*evaluate(r.best, ctx, CifarSplit::validation).accuracy == r.loop.best_metric);
  }
}

TEST_SUITE("compare") {
  TEST_CASE("needs two configs with unique names") {
    RunContext ctx;
    auto dir = temp_dir("cmp_reject");
    CHECK_THROWS_AS(compare({tiny_run("a")}, ctx, dir), std::invalid_argument);
    CHECK_THROWS_AS(compare({tiny_run("a"), tiny_run("a")}, ctx, dir), std::invalid_argument);
  }

  TEST_CASE("a failing member aborts with its identity") {
    RunContext ctx;
    auto dir = temp_dir("cmp_fail");
    auto broken = tiny_run("student", ModelKind::sanvit);
    broken.selector_checkpoint = "nowhere/checkpoint.sanw";
    auto base = tiny_run("base", ModelKind::simple_vit);
    base.max_epochs = 1;
    CHECK_THROWS_WITH(compare({base, broken}, ctx, dir), doctest::Contains("run 'student' (sanvit)"));
  }

  TEST_CASE("full pipeline schema, ratios and join integrity") {
    RunContext ctx;
    auto dir = temp_dir("cmp_full");
    auto teacher = tiny_run("teacher");
    auto selector = tiny_run("selector", ModelKind::selector);
    selector.teacher_checkpoint = "teacher/checkpoint.sanw";
    selector.targets_dir = "targets";
    auto base = tiny_run("simple", ModelKind::simple_vit);
    auto student = tiny_run("student", ModelKind::sanvit);
    student.selector_checkpoint = "selector/checkpoint.sanw";
    for (auto* c : {&teacher, &selector, &base, &student}) c->max_epochs = 2;
    auto report = compare({teacher, selector, base, student}, ctx, dir);

    CHECK(report.baseline == "simple");
    REQUIRE(report.rows.size() == 4);
    CHECK(report.reference_comparison_ratio == 37.515625);
    const auto& sel = report.rows[1];
    CHECK(sel.overlap_at_k.has_value());
    CHECK_FALSE(sel.accuracy.has_value());
    CHECK_FALSE(sel.flop_ratio.has_value());
    const auto& stu = report.rows[3];
    REQUIRE(stu.flop_ratio.has_value());
    CHECK(*stu.flop_ratio == doctest::Approx(static_cast<double>(stu.flops) / report.rows[2].flops));
    CHECK(*stu.transformer_ratio < 1.0);
    CHECK(stu.attention_comparisons == 16);
    CHECK(stu.cost.component_params("selector.stem") > 0);

    for (const auto& name : {"teacher", "selector", "simple", "student"}) {
      for (const auto& f : {"config.json", "history.jsonl", "checkpoint.sanw", "metrics.json"}) {
        CHECK(fs::exists(dir / name / f));
      }
    }
    for (const auto& f : {"train.sact", "validation.sact", "test.sact"}) CHECK(fs::exists(dir / "targets" / f));

    auto json = Json::parse(slurp(dir / "report.json"));
    CHECK(json.at("rows").size() == 4);
    CHECK(json.at("flop_convention") == kFlopConvention);
    for (std::size_t i = 0; i < 4; ++i) {
      const auto& row = report.rows[i];
      auto metrics = Json::parse(slurp(dir / row.name / "metrics.json"));
      CHECK(json["rows"][i]["name"] == row.name);
      CHECK(json["rows"][i]["params"] == row.params);
      if (row.accuracy) {
        CHECK(metrics.at("accuracy") == *row.accuracy);
      } else {
        CHECK(metrics.at("selector").at("overlap_at_k") == *row.overlap_at_k);
      }
      CHECK(metrics.at("best_epoch") == row.best_epoch);
    }
    auto text = slurp(dir / "report.txt");
    for (const auto& name : {"teacher", "selector", "simple", "student"}) CHECK(text.find(name) != std::string::npos);
    CHECK(text == format_table(report));

    // The student checkpoint carries its selector and evaluates standalone.
    auto ckpt = load_checkpoint(dir / "student" / "checkpoint.sanw");
    CHECK(ckpt.params.contains("selector.stem.weight"));
    auto again = evaluate(ckpt, ctx, CifarSplit::test);
    CHECK(*again.accuracy == *stu.accuracy);
  }
}
