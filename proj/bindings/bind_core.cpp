#include "cgt/graph.hpp"
#include "cgt/pcmci.hpp"
#include "cgt/series.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;

void bind_core(py::module_& m) {
  py::register_exception<cgt::Error>(m, "CgtError");

  py::class_<cgt::SeriesFrame>(m, "SeriesFrame")
      .def(py::init([](const cgt::Mat& values, std::vector<std::string> names) {
             cgt::SeriesFrame f;
             f.values = values;
             if (names.empty())
               for (int j = 0; j < values.cols(); ++j) names.push_back("ch" + std::to_string(j));
             f.channel_names = std::move(names);
             return f;
           }),
           py::arg("values"), py::arg("channel_names") = std::vector<std::string>{})
      .def_readwrite("values", &cgt::SeriesFrame::values)
      .def_readwrite("channel_names", &cgt::SeriesFrame::channel_names)
      .def_property_readonly("length", &cgt::SeriesFrame::length)
      .def_property_readonly("dims", &cgt::SeriesFrame::dims);

  m.def("load_series", &cgt::load_series, py::arg("path"), py::arg("has_header"));
  m.def("save_series", &cgt::save_series, py::arg("frame"), py::arg("path"),
        py::arg("with_header") = true);

  py::class_<cgt::ScalerParams>(m, "ScalerParams")
      .def_readwrite("min", &cgt::ScalerParams::min)
      .def_readwrite("max", &cgt::ScalerParams::max)
      .def_readwrite("epsilon", &cgt::ScalerParams::epsilon);
  m.def("fit_minmax", &cgt::fit_minmax);
  m.def("apply_minmax", &cgt::apply_minmax);
  m.def("invert_minmax", &cgt::invert_minmax);

  m.def(
      "build_lag_matrix",
      [](const cgt::SeriesFrame& f, int t, int window, int tau_max) {
        return cgt::build_lag_matrix(f, t, window, tau_max).X;
      },
      py::arg("frame"), py::arg("t"), py::arg("window"), py::arg("tau_max"));

  py::class_<cgt::LaggedEdge>(m, "LaggedEdge")
      .def(py::init([](int source, int lag, int target) {
             return cgt::LaggedEdge{source, lag, target, std::nullopt, std::nullopt};
           }),
           py::arg("source"), py::arg("lag"), py::arg("target"))
      .def_readwrite("source", &cgt::LaggedEdge::source)
      .def_readwrite("lag", &cgt::LaggedEdge::lag)
      .def_readwrite("target", &cgt::LaggedEdge::target)
      .def_readwrite("strength", &cgt::LaggedEdge::strength)
      .def_readwrite("p_value", &cgt::LaggedEdge::p_value);

  py::class_<cgt::CausalGraphPrior>(m, "CausalGraphPrior")
      .def(py::init([](int dims, int tau_max) {
             cgt::CausalGraphPrior g;
             g.dims = dims;
             g.tau_max = tau_max;
             return g;
           }),
           py::arg("dims"), py::arg("tau_max"))
      .def_readwrite("dims", &cgt::CausalGraphPrior::dims)
      .def_readwrite("tau_max", &cgt::CausalGraphPrior::tau_max)
      .def_readwrite("edges", &cgt::CausalGraphPrior::edges)
      .def("has_edge", &cgt::CausalGraphPrior::has_edge)
      .def("add_edge", &cgt::CausalGraphPrior::add_edge);

  m.def(
      "load_edge_list",
      [](const std::string& path, int dims, int tau_max) {
        return cgt::load_edge_list(path, dims, tau_max).graph;
      },
      py::arg("path"), py::arg("dims"), py::arg("tau_max"));
  m.def("save_edge_list", &cgt::save_edge_list);
  m.def(
      "parent_mask",
      [](const cgt::CausalGraphPrior& g, int target) { return cgt::parent_mask(g, target).pi; },
      py::arg("graph"), py::arg("target"));

  m.def(
      "discover_pcmci_lite",
      [](const cgt::SeriesFrame& train, int tau_max, double alpha_level, int max_cond) {
        return cgt::discover_pcmci_lite(train, tau_max, alpha_level, max_cond);
      },
      py::arg("train"), py::arg("tau_max"), py::arg("alpha_level") = 0.01,
      py::arg("max_cond") = 3);
}
