#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ctta/commands.hpp"
#include "ctta/dual_head.hpp"
#include "ctta/fdc_loss.hpp"

namespace py = pybind11;
using namespace ctta;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using ImageArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor<double> to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<double>(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

template <typename T>
py::array_t<T> to_array(const Tensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<T> out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

Tensor<float> to_images(const ImageArray& a) {
  if (a.ndim() != 4) throw ConfigError("images must be [N, 3, H, W]");
  Shape shape(a.shape(), a.shape() + 4);
  return Tensor<float>(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

std::vector<Override> to_overrides(const std::vector<std::string>& assignments) {
  std::vector<Override> out;
  for (const auto& a : assignments) out.push_back(parse_override(a));
  return out;
}

py::dict table_dict(const SummaryTable& t) {
  py::dict rows;
  for (const auto& r : t.rows) {
    py::dict row;
    for (std::size_t i = 0; i < t.columns.size(); ++i) row[py::str(t.columns[i])] = r.errors[i];
    row["mean"] = r.mean;
    rows[py::str(r.method)] = row;
  }
  return rows;
}

}  // namespace

PYBIND11_MODULE(_ctta, m) {
  m.doc() = "Continual test-time adaptation core";

  auto base = py::register_exception<Error>(m, "CttaError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  py::class_<ConfidenceState>(m, "ConfidenceState")
      .def(py::init([](std::size_t c) { return ConfidenceState::initial(c); }), py::arg("num_classes"))
      .def_readwrite("mu", &ConfidenceState::mu)
      .def_readwrite("sigma2", &ConfidenceState::sigma2)
      .def_readwrite("class_mean", &ConfidenceState::class_mean)
      .def_readwrite("step", &ConfidenceState::step);

  m.def("batch_stats", [](const Array& y) {
    auto s = batch_stats(to_tensor(y));
    return py::make_tuple(s.mean, s.variance);
  });
  m.def(
      "ema_update",
      [](const ConfidenceState& state, const Array& y, double momentum) {
        auto t = to_tensor(y);
        return ema_update(state, batch_stats(t), t.dim(0), batch_class_mean(t), momentum);
      },
      py::arg("state"), py::arg("probs"), py::arg("momentum") = 0.999);
  m.def(
      "uniform_align",
      [](const Array& y, const std::vector<double>& class_mean) { return to_array(uniform_align(to_tensor(y), class_mean)); },
      py::arg("probs"), py::arg("class_mean"));
  m.def("gaussian_weight", &gaussian_weight, py::arg("q"), py::arg("mu"), py::arg("sigma2"), py::arg("lambda_max") = 1.0);
  m.def(
      "sample_weight",
      [](const Array& y, const ConfidenceState& state, double lambda_max) {
        SclConfig cfg;
        cfg.lambda_max = lambda_max;
        return sample_weight(to_tensor(y), state, cfg);
      },
      py::arg("probs"), py::arg("state"), py::arg("lambda_max") = 1.0);
  m.def(
      "cross_entropy",
      [](const Array& target, const Array& pred) {
        return cross_entropy(ag::Var<double>(to_tensor(target)), ag::Var<double>(to_tensor(pred))).item();
      },
      py::arg("target"), py::arg("prediction"));
  m.def(
      "combine",
      [](const Array& ps, const Array& pd) {
        return to_array(combine(ag::Var<double>(to_tensor(ps)), ag::Var<double>(to_tensor(pd))).value());
      },
      py::arg("semantic"), py::arg("domain"));
  m.def("error_rate", &error_rate, py::arg("predictions"), py::arg("labels"));

  m.def("benchmark_corruptions", &benchmark_corruptions);
  m.def("synthetic_corruptions", &synthetic_corruptions);
  m.def(
      "synthesize_corruption",
      [](const ImageArray& images, const std::string& name, int severity, std::uint64_t seed) {
        return to_array(synthesize_corruption(to_images(images), name, severity, seed));
      },
      py::arg("images"), py::arg("name"), py::arg("severity") = 5, py::arg("seed") = 0);
  m.def(
      "make_toy_dataset",
      [](std::size_t n, std::size_t size, std::size_t classes, std::uint64_t seed) {
        ToyDatasetOptions o;
        o.num_samples = n;
        o.image_size = size;
        o.num_classes = classes;
        o.seed = seed;
        auto d = make_toy_dataset(o);
        return py::make_tuple(to_array(d.images), d.labels);
      },
      py::arg("num_samples") = 100, py::arg("image_size") = 16, py::arg("num_classes") = 10, py::arg("seed") = 0);

  m.def(
      "logits",
      [](const std::filesystem::path& checkpoint, const ImageArray& images, bool batch_stats) {
        auto bb = backbone_from_checkpoint<float>(Checkpoint::load(checkpoint));
        bb.set_norm_mode(batch_stats ? NormMode::batch_stats : NormMode::source_stats);
        ag::NoGradGuard guard;
        return to_array(bb.logits(as_input<float>(to_images(images))).value());
      },
      py::arg("checkpoint"), py::arg("images"), py::arg("batch_stats") = false,
      "Source-model logits for [N, 3, H, W] images in [0, 1].");
  m.def(
      "pretrain",
      [](const std::filesystem::path& config, const std::vector<std::string>& set) {
        auto ckpt = cmd_pretrain(load_config(config, to_overrides(set)));
        return std::stod(ckpt.meta_value("clean_accuracy"));
      },
      py::arg("config"), py::arg("set") = std::vector<std::string>{},
      "Train the source model; returns clean accuracy in [0, 1].");
  m.def(
      "adapt",
      [](const std::filesystem::path& config, const std::vector<std::string>& set) {
        return table_dict(cmd_adapt(load_config(config, to_overrides(set))));
      },
      py::arg("config"), py::arg("set") = std::vector<std::string>{},
      "Run the online stream; returns {method: {column: error %, 'mean': error %}}.");
  m.def(
      "ablate",
      [](const std::filesystem::path& config, const std::vector<std::string>& set) {
        return table_dict(cmd_ablate(load_config(config, to_overrides(set))));
      },
      py::arg("config"), py::arg("set") = std::vector<std::string>{});
  m.def("report", [](const std::filesystem::path& dir) { return cmd_report(dir); }, py::arg("dir"));
}
