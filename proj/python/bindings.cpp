#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "saccade/checkpoint.hpp"
#include "saccade/cost.hpp"
#include "saccade/data.hpp"
#include "saccade/harness.hpp"
#include "saccade/rollout.hpp"
#include "saccade/targets.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace saccade;

namespace {

// JSON crosses the boundary as text; the Python layer converts to dicts.
std::string dump(const Json& j) { return j.dump(); }

py::array_t<double> to_array(const Matrix& m) {
  py::array_t<double> out({m.rows(), m.cols()});
  auto view = out.mutable_unchecked<2>();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) view(i, j) = m(i, j);
  return out;
}

AttentionStack to_stack(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 4 || a.shape(2) != a.shape(3)) {
    throw std::invalid_argument("attention stack must have shape [layers, heads, seq, seq]");
  }
  AttentionStack st(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), st.probs.begin());
  return st;
}

py::array_t<double> heat_array(const HeatMap& h) {
  py::array_t<double> out({h.grid, h.grid});
  std::copy(h.heat.begin(), h.heat.end(), out.mutable_data());
  return out;
}

RunContext context(const fs::path& data_dir, const fs::path& base_dir) {
  RunContext ctx;
  ctx.data_dir = data_dir;
  ctx.base_dir = base_dir;
  return ctx;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core: rollout, costs, file formats and the training harness.";

  m.def("attention_comparisons", &attention_comparisons, py::arg("seq"));

  m.def(
      "config_cost",
      [](const std::string& config_json) { return dump(to_json(config_cost(experiment_from_json(Json::parse(config_json))))); },
      py::arg("config_json"));

  m.def(
      "normalize_config",
      [](const std::string& config_json) {
        auto c = experiment_from_json(Json::parse(config_json));
        c.validate();
        return dump(to_json(c));
      },
      py::arg("config_json"));

  m.def(
      "rollout",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& stack, const std::string& fusion) {
        return to_array(attention_rollout(fuse_heads(to_stack(stack), parse_head_fusion(fusion))));
      },
      py::arg("stack"), py::arg("fusion") = "mean");

  m.def(
      "rollout_heat",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& stack, const std::string& fusion) {
        return heat_array(rollout_heat(to_stack(stack), parse_head_fusion(fusion)));
      },
      py::arg("stack"), py::arg("fusion") = "mean");

  m.def(
      "topk_indices",
      [](const std::vector<double>& values, int k) { return topk_indices(std::span<const double>(values), k); },
      py::arg("values"), py::arg("k"));

  m.def(
      "gen_shapes",
      [](int n, std::uint64_t seed, int image_size) {
        auto data = gen_shapes(n, seed, image_size);
        py::array_t<float> images({n, 3, image_size, image_size});
        py::array_t<int> labels(n);
        float* dst = images.mutable_data();
        for (int i = 0; i < n; ++i) {
          const auto& px = data.records[i].pixels;
          std::copy(px.begin(), px.end(), dst + static_cast<std::size_t>(i) * px.size());
          labels.mutable_data()[i] = data.records[i].label;
        }
        return py::make_tuple(images, labels);
      },
      py::arg("n"), py::arg("seed"), py::arg("image_size") = 64);

  m.def(
      "read_saccade_file",
      [](const fs::path& path) {
        auto f = read_saccade_file(path);
        py::list records;
        for (const auto& r : f.records) records.append(py::make_tuple(r.image_id, r.label, r.indices));
        return py::make_tuple(f.num_patches, f.k, records);
      },
      py::arg("path"));

  m.def(
      "write_saccade_file",
      [](const fs::path& path, int num_patches, int k,
         const std::vector<std::tuple<std::uint32_t, int, std::vector<int>>>& records) {
        SaccadeFile f{num_patches, k, {}};
        for (const auto& [id, label, idx] : records) f.records.push_back(SaccadeRecord::make(id, label, idx, num_patches));
        write_saccade_file(path, f);
      },
      py::arg("path"), py::arg("num_patches"), py::arg("k"), py::arg("records"));

  m.def(
      "load_checkpoint",
      [](const fs::path& path) {
        auto c = load_checkpoint(path);
        py::dict tensors;
        for (const auto& [name, t] : c.params.entries()) {
          std::vector<py::ssize_t> dims(t.shape().begin(), t.shape().end());
          py::array_t<float> a(dims);
          std::copy(t.data().begin(), t.data().end(), a.mutable_data());
          tensors[py::str(name)] = a;
        }
        return py::make_tuple(tensors, dump(c.config));
      },
      py::arg("path"));

  m.def(
      "run_experiment",
      [](const std::string& config_json, const fs::path& out_dir, const fs::path& data_dir) {
        auto config = experiment_from_json(Json::parse(config_json));
        py::gil_scoped_release release;
        auto outcome = run_experiment(config, context(data_dir, out_dir), out_dir);
        return dump(to_json(outcome.test));
      },
      py::arg("config_json"), py::arg("out_dir"), py::arg("data_dir") = fs::path());

  m.def(
      "compare",
      [](const std::vector<std::string>& configs_json, const fs::path& out_dir, const fs::path& data_dir) {
        std::vector<ExperimentConfig> configs;
        for (const auto& text : configs_json) configs.push_back(experiment_from_json(Json::parse(text)));
        py::gil_scoped_release release;
        return dump(to_json(compare(configs, context(data_dir, out_dir), out_dir)));
      },
      py::arg("configs_json"), py::arg("out_dir"), py::arg("data_dir") = fs::path());
}
