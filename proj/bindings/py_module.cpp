#include <pybind11/pybind11.h>

namespace py = pybind11;

void bind_core(py::module_& m);

PYBIND11_MODULE(_cgt, m) {
  m.doc() = "Causally guided transformer anomaly detection core";
  bind_core(m);
}
