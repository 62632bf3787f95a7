#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "gar/error.hpp"
#include "gar/harness.hpp"
#include "gar/posenc.hpp"
#include "gar/transformer.hpp"

namespace py = pybind11;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

gar::Tensor to_tensor(const Array& a) {
  if (a.ndim() == 1) {
    return gar::Tensor({static_cast<std::size_t>(a.shape(0))}, std::vector<double>(a.data(), a.data() + a.size()));
  }
  if (a.ndim() != 2) throw gar::DimensionError("expected a 1-d or 2-d array");
  return gar::Tensor({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))},
                     std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const gar::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

gar::RunConfig make_config(const std::map<std::string, std::string>& entries) {
  gar::RunConfig cfg;
  for (const auto& [k, v] : entries) cfg.set(k, v);
  return cfg;
}

py::dict summary_dict(const gar::EvalReport& rep) {
  py::dict d;
  d["scenes"] = rep.scenes;
  d["actors"] = rep.actors;
  d["group_accuracy"] = rep.group_accuracy;
  d["action_accuracy"] = rep.action_accuracy;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Actor-transformer group activity recognition core";

  py::register_exception<gar::Error>(m, "GarError", PyExc_RuntimeError);

  m.def(
      "attention",
      [](const Array& q, const Array& k, const Array& v) {
        gar::Graph g;
        gar::Tensor weights;
        gar::Var out = gar::attention(g.constant(to_tensor(q)), g.constant(to_tensor(k)),
                                      g.constant(to_tensor(v)), &weights);
        return py::make_tuple(to_array(out.value()), to_array(weights));
      },
      py::arg("q"), py::arg("k"), py::arg("v"), "Scaled dot-product attention; returns (output, weights).");

  m.def(
      "pe_2d",
      [](double x, double y, std::size_t d_model, double scale) {
        return to_array(gar::pe_2d({x, y}, d_model, scale));
      },
      py::arg("x"), py::arg("y"), py::arg("d_model"), py::arg("scale") = gar::kDefaultPositionScale);

  py::class_<gar::ActorScene>(m, "ActorScene")
      .def_readonly("id", &gar::ActorScene::id)
      .def_readonly("actions", &gar::ActorScene::actions)
      .def_readonly("activity", &gar::ActorScene::activity)
      .def_readonly("key_actor", &gar::ActorScene::key_actor)
      .def_property_readonly("centers",
                             [](const gar::ActorScene& s) {
                               std::vector<std::pair<double, double>> out;
                               for (const auto& c : s.centers) out.emplace_back(c.x, c.y);
                               return out;
                             })
      .def_property_readonly("features", [](const gar::ActorScene& s) {
        py::list out;
        for (const auto& f : s.features) out.append(to_array(f));
        return out;
      });

  py::class_<gar::Dataset>(m, "Dataset")
      .def("__len__", &gar::Dataset::size)
      .def("__getitem__", [](const gar::Dataset& d, std::size_t i) { return d.scenes.at(i); })
      .def("save", [](const gar::Dataset& d, const std::filesystem::path& p) { gar::save_dataset(d, p); });

  m.def("load_dataset", &gar::load_dataset, py::arg("path"));

  m.def(
      "generate",
      [](const std::map<std::string, std::string>& config, const std::filesystem::path& out) {
        auto splits = gar::cmd_generate(make_config(config), out);
        return py::make_tuple(std::move(splits.train), std::move(splits.test));
      },
      py::arg("config"), py::arg("out"), "Writes train.txt and test.txt; returns (train, test).");

  m.def(
      "train",
      [](const std::map<std::string, std::string>& config, const std::filesystem::path& out) {
        const auto result = gar::cmd_train(make_config(config), out);
        std::vector<double> losses;
        for (const auto& r : result.curve) losses.push_back(r.total);
        return losses;
      },
      py::arg("config"), py::arg("out"), "Trains, writes checkpoint.txt and loss.csv; returns total losses.");

  m.def(
      "evaluate",
      [](const std::filesystem::path& checkpoint, const gar::Dataset& data, const std::filesystem::path& out) {
        return summary_dict(gar::cmd_evaluate(checkpoint, data, out));
      },
      py::arg("checkpoint"), py::arg("data"), py::arg("out"));

  m.def("known_config_keys", &gar::RunConfig::known_keys);
}
