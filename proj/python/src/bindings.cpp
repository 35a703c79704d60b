// Python bindings: numpy in, numpy out.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "las/io.hpp"
#include "las/macs.hpp"
#include "las/metrics.hpp"
#include "las/network.hpp"
#include "las/synthetic.hpp"
#include "las/training.hpp"

namespace py = pybind11;
using namespace las;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.vec().begin(), t.vec().end(), out.mutable_data());
  return out;
}

py::dict sample_dict(const StereoSample& s) {
  py::dict d;
  d["left"] = to_array(s.left);
  d["right"] = to_array(s.right);
  d["gt"] = to_array(s.gt);
  d["valid"] = to_array(s.valid);
  d["occluded"] = to_array(s.occluded);
  d["id"] = s.id;
  return d;
}

NetworkConfig resolve(const py::object& config) {
  if (py::isinstance<NetworkConfig>(config)) return config.cast<NetworkConfig>();
  return io::network_config_arg(config.cast<std::string>());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Lightweight stereo matching network";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  auto io_error = py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<CorruptFileError>(m, "CorruptFileError", io_error.ptr());
  py::register_exception<VersionError>(m, "VersionError", io_error.ptr());

  py::class_<NetworkConfig>(m, "NetworkConfig")
      .def(py::init([](const std::string& name) { return io::network_config_arg(name); }), py::arg("preset") = "micro",
           "Preset name ('micro', 'paper-like') or config file path.")
      .def_readwrite("d_max", &NetworkConfig::d_max)
      .def_readwrite("fused_channels", &NetworkConfig::fused_channels)
      .def_property(
          "agg_variant", [](const NetworkConfig& c) { return to_string(c.agg_variant); },
          [](NetworkConfig& c, const std::string& v) { c.agg_variant = agg_variant_from_string(v); })
      .def_property_readonly("preset", [](const NetworkConfig& c) { return to_string(c.preset); })
      .def_property_readonly("levels", &NetworkConfig::levels)
      .def_property_readonly("three_d_width", &NetworkConfig::resolved_three_d_width)
      .def("validate", &NetworkConfig::validate);

  py::class_<WeightStore>(m, "WeightStore")
      .def_static(
          "initialize", [](const py::object& cfg, uint64_t seed) { return WeightStore::initialize(resolve(cfg), seed); },
          py::arg("config") = "micro", py::arg("seed") = 0)
      .def_static(
          "load", [](const std::string& path, const py::object& cfg) { return io::load_weights(path, resolve(cfg)); },
          py::arg("path"), py::arg("config") = "micro")
      .def("save", [](const WeightStore& w, const std::string& path) { io::save_weights(path, w); })
      .def("names",
           [](const WeightStore& w) {
             std::vector<std::string> out;
             for (const auto& [name, e] : w.entries()) out.push_back(name);
             return out;
           })
      .def("__getitem__", [](const WeightStore& w, const std::string& name) { return to_array(w.at(name)); })
      .def("__len__", &WeightStore::size)
      .def("parameter_count", &WeightStore::parameter_count, py::arg("trainable_only") = true);

  m.def(
      "forward",
      [](const FloatArray& left, const FloatArray& right, const WeightStore& w, const py::object& cfg) {
        const NetworkConfig net = resolve(cfg);
        const Tensor l = to_tensor(left), r = to_tensor(right);
        Tensor disp;
        {
          py::gil_scoped_release release;
          disp = forward(l, r, w, net).disparity.values;
        }
        return to_array(disp);
      },
      py::arg("left"), py::arg("right"), py::arg("weights"), py::arg("config") = "micro",
      "Disparity [H,W] in pixels for images [3,H,W] in [0,1].");

  m.def(
      "macs",
      [](const py::object& cfg, int64_t height, int64_t width) {
        const NetworkConfig net = resolve(cfg);
        const int64_t h = (height + 31) / 32 * 32, w = (width + 31) / 32 * 32;
        MacsLedger ledger;
        {
          MacsScope scope(ledger, true);
          forward(Tensor({3, h, w}), Tensor({3, h, w}), WeightStore::initialize(net, 0), net);
        }
        py::dict out;
        for (const auto& [section, total] : ledger.by_section()) out[py::str(section)] = total;
        out["total"] = ledger.total();
        return out;
      },
      py::arg("config"), py::arg("height"), py::arg("width"),
      "Multiply-accumulates of one forward pass, by section. Sizes are padded to multiples of 32.");

  m.def(
      "gen_synthetic",
      [](int64_t count, int64_t height, int64_t width, double dmin, double dmax, const std::string& texture,
         int64_t objects, uint64_t seed) {
        SceneSpec s;
        s.count = count;
        s.height = height;
        s.width = width;
        s.disparity_min = dmin;
        s.disparity_max = dmax;
        s.texture = texture_from_string(texture);
        s.object_count = objects;
        s.seed = seed;
        py::list out;
        for (const StereoSample& x : gen_synthetic_dataset(s)) out.append(sample_dict(x));
        return out;
      },
      py::arg("count") = 1, py::arg("height") = 64, py::arg("width") = 128, py::arg("disparity_min") = 4.0,
      py::arg("disparity_max") = 40.0, py::arg("texture") = "noise", py::arg("object_count") = 3, py::arg("seed") = 0);

  m.def(
      "epe", [](const FloatArray& p, const FloatArray& g, const FloatArray& k) {
        return epe(to_tensor(p), to_tensor(g), to_tensor(k));
      },
      py::arg("pred"), py::arg("gt"), py::arg("mask"));
  m.def(
      "d1", [](const FloatArray& p, const FloatArray& g, const FloatArray& k) {
        return d1(to_tensor(p), to_tensor(g), to_tensor(k));
      },
      py::arg("pred"), py::arg("gt"), py::arg("mask"));
  m.def(
      "bad_x", [](const FloatArray& p, const FloatArray& g, const FloatArray& k, double x) {
        return bad_x(to_tensor(p), to_tensor(g), to_tensor(k), x);
      },
      py::arg("pred"), py::arg("gt"), py::arg("mask"), py::arg("threshold"));

  m.def("read_pfm", [](const std::string& path) { return to_array(io::read_pfm(path)); });
  m.def("write_pfm", [](const std::string& path, const FloatArray& a) { io::write_pfm(path, to_tensor(a)); });
  m.def("read_png", [](const std::string& path) { return to_array(io::read_png(path)); });
  m.def("write_png", [](const std::string& path, const FloatArray& a) { io::write_png(path, to_tensor(a)); });
}
