#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "tembed/config.hpp"
#include "tembed/conv.hpp"
#include "tembed/diagnostics.hpp"
#include "tembed/errors.hpp"
#include "tembed/norm.hpp"
#include "tembed/tasks.hpp"

namespace py = pybind11;
using namespace tembed;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor tensor_from(const Array& a) {
  if (a.ndim() != 4)
    throw ConfigError("expected a 4-d (n, c, h, w) array, got " +
                      std::to_string(a.ndim()) + "-d");
  Tensor t(Shape{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                 static_cast<int>(a.shape(2)), static_cast<int>(a.shape(3))});
  std::copy(a.data(), a.data() + t.size(), t.data());
  return t;
}

Array array_from(const Tensor& t) {
  Shape s = t.shape();
  Array a({s.n, s.c, s.h, s.w});
  std::copy(t.data(), t.data() + t.size(), a.mutable_data());
  return a;
}

RunConfig config_from_text(const std::string& text) {
  return parse_run_config(nlohmann::json::parse(text));
}

TeacherField teacher_for(const RunConfig& cfg) {
  TeacherField t = make_teacher(cfg.task.teacher, cfg.block.channels,
                                cfg.block.height, cfg.block.width,
                                kTeacherSeed);
  t.kappa = cfg.task.kappa;
  return t;
}

// Mirrors the CLI `solve --testcase block:` wiring, including the state draw.
std::string solve_block_json(const std::string& cfg_text) {
  RunConfig cfg = config_from_text(cfg_text);
  Block block = Block::build(cfg.block);
  if (!block.preserves_shape())
    throw ConfigError(
        "solve: the block must preserve its input shape to act as a field");
  Tensor state(block.input_shape(1));
  Rng rng = Rng(cfg.seed).fork("solve_state");
  rng.fill_normal(state);
  SolveResult res = solve_block_field(block, state, 0.0, 1.0, cfg.solver);
  return solve_result_to_json(res).dump();
}

std::string train_json(const std::string& cfg_text) {
  RunConfig cfg = config_from_text(cfg_text);
  Block block = Block::build(cfg.block);
  TeacherField teacher = teacher_for(cfg);
  TrainResult res =
      cfg.task.name == "trajectory"
          ? train_trajectory(block, teacher, cfg.task.snapshots, cfg.train)
          : train_field_regression(block, teacher, cfg.train);
  return train_result_to_json(res).dump();
}

std::string diagnose_json(const std::string& cfg_text) {
  RunConfig cfg = config_from_text(cfg_text);
  Block block = Block::build(cfg.block);
  return diagnostics_report_to_json(diagnose(block, cfg.diagnostics)).dump();
}

std::string resolve_config_json(const std::string& cfg_text) {
  return resolved_run_config(config_from_text(cfg_text)).dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() =
      "Timestep-embedding laboratory: normalized conv blocks with timestep "
      "mechanisms, time-awareness diagnostics, training tasks, and an "
      "adaptive ODE solver";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError",
                                       PyExc_ArithmeticError);
  py::register_exception<DivergenceError>(m, "DivergenceError",
                                          PyExc_RuntimeError);
  py::register_exception<StiffnessError>(m, "StiffnessError",
                                         PyExc_RuntimeError);

  m.def(
      "conv2d",
      [](const Array& x, const Array& kernel, std::optional<Array> bias,
         const std::string& padding) {
        Tensor xt = tensor_from(x), kt = tensor_from(kernel);
        std::optional<Tensor> bt;
        if (bias) {
          if (bias->ndim() != 1)
            throw ConfigError("bias must be a 1-d (c_out,) array");
          Tensor b(Shape{1, static_cast<int>(bias->shape(0)), 1, 1});
          std::copy(bias->data(), bias->data() + b.size(), b.data());
          bt = std::move(b);
        }
        return array_from(conv2d(xt, kt, bt ? &*bt : nullptr,
                                 padding_from_name(padding)));
      },
      py::arg("x"), py::arg("kernel"), py::arg("bias") = std::nullopt,
      py::arg("padding") = "valid",
      "2-d cross-correlation of (n,c,h,w) by (c_out,c_in,k,k)");

  m.def(
      "normalize",
      [](const Array& x, const std::string& kind, int groups, double eps) {
        Tensor xt = tensor_from(x);
        NormSpec spec{norm_kind_from_name(kind), groups, eps, false};
        validate_norm(spec, xt.shape().c);
        return array_from(norm_forward(xt, spec, nullptr, nullptr, nullptr));
      },
      py::arg("x"), py::arg("kind") = "instance", py::arg("groups") = 1,
      py::arg("eps") = 1e-5,
      "Mean-std standardization over batch/layer/instance/group units");

  py::class_<Block>(m, "Block",
                    "A two-stage normalized conv block built from the "
                    "`block` section of a run-config JSON document")
      .def(py::init([](const std::string& cfg_text) {
             return Block::build(config_from_text(cfg_text).block);
           }),
           py::arg("config_json"))
      .def(
          "forward",
          [](const Block& b, const Array& x, double t) {
            return array_from(b.eval(tensor_from(x), t));
          },
          py::arg("x"), py::arg("t"))
      .def_property_readonly(
          "channels", [](const Block& b) { return b.config().channels; })
      .def_property_readonly(
          "pipeline",
          [](const Block& b) { return pipeline_name(b.config().pipeline); })
      .def_property_readonly("preserves_shape", &Block::preserves_shape)
      .def("input_shape",
           [](const Block& b, int batch) {
             Shape s = b.input_shape(batch);
             return py::make_tuple(s.n, s.c, s.h, s.w);
           })
      .def("output_shape",
           [](const Block& b, int batch) {
             Shape s = b.output_shape(batch);
             return py::make_tuple(s.n, s.c, s.h, s.w);
           })
      .def("has_channel_embedding", &Block::has_channel_embedding,
           py::arg("stage"))
      .def(
          "channel_embedding",
          [](const Block& b, double t, int stage) {
            return array_from(b.channel_embedding(t, stage));
          },
          py::arg("t"), py::arg("stage"))
      .def("param_names", [](const Block& b) {
        std::vector<std::string> names;
        for (const Parameter& p : b.params()) names.push_back(p.name);
        return names;
      });

  m.def("diagnose_json", &diagnose_json, py::arg("config_json"),
        "Time-awareness diagnostics; returns the report as JSON text");
  m.def("train_json", &train_json, py::arg("config_json"),
        "Train the configured block on its task; returns summary JSON text");
  m.def("solve_block_json", &solve_block_json, py::arg("config_json"),
        "Integrate the configured block as an ODE field over [0, 1] from a "
        "seeded state; returns the solve result as JSON text");
  m.def("resolve_config_json", &resolve_config_json, py::arg("config_json"),
        "Validate a run config and return it with every default filled in");

  m.def(
      "solve_fixture",
      [](const std::string& name, double rtol, double atol) {
        OdeField field;
        std::vector<double> y0;
        if (name == "exp") {
          field = [](double, std::span<const double> y, std::span<double> dy) {
            dy[0] = y[0];
          };
          y0 = {1.0};
        } else if (name == "oscillator") {
          field = [](double, std::span<const double> y, std::span<double> dy) {
            constexpr double two_pi = 6.283185307179586476925286766559;
            dy[0] = two_pi * y[1];
            dy[1] = -two_pi * y[0];
          };
          y0 = {1.0, 0.0};
        } else {
          throw ConfigError("solve_fixture: unknown fixture '" + name +
                            "' (expected exp or oscillator)");
        }
        SolverConfig scfg;
        scfg.rtol = rtol;
        scfg.atol = atol;
        return solve_result_to_json(dopri5_solve(field, y0, 0.0, 1.0, scfg))
            .dump();
      },
      py::arg("name"), py::arg("rtol") = 1e-6, py::arg("atol") = 1e-6,
      "Adaptive solve of a named analytic field over [0, 1]; JSON text");
}
