// bindings added with the python package
#include <pybind11/pybind11.h>
PYBIND11_MODULE(_psafe, m) { m.doc() = "placeholder"; }
