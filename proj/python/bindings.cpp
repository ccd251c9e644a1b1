#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "adpgcn/checkpoint.hpp"
#include "adpgcn/cli.hpp"
#include "adpgcn/data.hpp"
#include "adpgcn/errors.hpp"
#include "adpgcn/evaluation.hpp"
#include "adpgcn/forecaster.hpp"
#include "adpgcn/graph_conv.hpp"

namespace py = pybind11;
using namespace adpgcn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

graph::GraphConvParams conv_params(const std::vector<Array>& weights) {
  graph::GraphConvParams p;
  for (const auto& w : weights) p.weights.push_back(to_tensor(w));
  return p;
}

data::ForecastBatch batch_of(const Array& x_enc, const Array& marks_enc, const Array& x_dec_known,
                             const Array& marks_dec) {
  data::ForecastBatch b;
  b.x_enc = to_tensor(x_enc);
  b.marks_enc = to_tensor(marks_enc);
  b.x_dec_known = to_tensor(x_dec_known);
  b.marks_dec = to_tensor(marks_dec);
  return b;
}

ModelConfig model_config(const py::dict& overrides) {
  ModelConfig c;
  for (const auto& [k, v] : overrides) {
    const auto key = py::str(k).cast<std::string>();
    const auto value = py::str(v).cast<std::string>();
    if (!apply_key(c, key, value == "True" ? "true" : value == "False" ? "false" : value))
      throw ConfigError(key, "unknown setting");
  }
  c = c.resolved();
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_adpgcn, m) {
  m.doc() = "Adaptive-adjacency graph convolution forecaster";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);

  m.def("materialize_adjacency",
        [](const Array& source, const Array& target) {
          return to_array(graph::materialize_adjacency({to_tensor(source), to_tensor(target)}));
        },
        py::arg("source"), py::arg("target"), "softmax_rows(relu(source @ target.T))");
  m.def("diffusion_conv",
        [](const Array& transition, const Array& x, const std::vector<Array>& weights) {
          return to_array(graph::diffusion_conv(to_tensor(transition), to_tensor(x), conv_params(weights)));
        },
        py::arg("transition"), py::arg("x"), py::arg("weights"));
  m.def("adaptive_graph_conv",
        [](const Array& source, const Array& target, const Array& x, const std::vector<Array>& weights) {
          return to_array(graph::adaptive_graph_conv({to_tensor(source), to_tensor(target)}, to_tensor(x),
                                                     conv_params(weights)));
        },
        py::arg("source"), py::arg("target"), py::arg("x"), py::arg("weights"));
  m.def("mse", [](const Array& y, const Array& y_hat) { return eval::mse(to_tensor(y), to_tensor(y_hat)); });
  m.def("mae", [](const Array& y, const Array& y_hat) { return eval::mae(to_tensor(y), to_tensor(y_hat)); });

  m.def("synthesize",
        [](std::size_t n, std::size_t length, const std::vector<std::tuple<std::size_t, std::size_t, std::size_t, double>>& couplings,
           double noise, double ar, std::uint64_t seed) {
          data::SynthSpec spec;
          spec.n_nodes = n;
          spec.length = length;
          spec.noise_std = noise;
          spec.ar_coefficient = ar;
          spec.seed = seed;
          for (const auto& [s, d, l, w] : couplings) spec.couplings.push_back({s, d, l, w});
          const auto out = data::synthesize_coupled(spec);
          return py::make_tuple(out.series.timestamps, to_array(out.series.values), out.series.column_names);
        },
        py::arg("n"), py::arg("length"), py::arg("couplings") = py::list(), py::arg("noise") = 0.1,
        py::arg("ar") = 0.5, py::arg("seed") = 0);

  py::class_<model::Forecaster>(m, "Forecaster")
      .def(py::init([](const py::dict& config) { return model::Forecaster(model_config(config)); }),
           py::arg("config") = py::dict())
      .def_static("load", [](const std::string& path) { return build_model(load_checkpoint(path)); })
      .def("predict",
           [](model::Forecaster& f, const Array& x_enc, const Array& marks_enc, const Array& x_dec_known,
              const Array& marks_dec) {
             f.set_training(false);
             NoGradGuard guard;
             return to_array(f.forward(batch_of(x_enc, marks_enc, x_dec_known, marks_dec)));
           },
           py::arg("x_enc"), py::arg("marks_enc"), py::arg("x_dec_known"), py::arg("marks_dec"))
      .def("adjacency",
           [](const model::Forecaster& f) -> py::object {
             const auto a = f.learned_adjacency();
             return a ? py::object(to_array(*a)) : py::none();
           })
      .def("parameter_names",
           [](const model::Forecaster& f) {
             std::vector<std::string> names;
             for (const auto& [name, t] : f.named_parameters()) names.push_back(name);
             return names;
           })
      .def_property_readonly("parameter_count", &model::Forecaster::parameter_count)
      .def_property_readonly("has_gcn", &model::Forecaster::has_gcn);

  m.def("run_cli",
        [](const std::vector<std::string>& args) {
          std::ostringstream out, err;
          const int code = cli::run(args, out, err);
          return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs a CLI subcommand; returns (exit_code, stdout, stderr).");
}
