// Python bindings for the trajectory prediction core. The surface mirrors
// the CLI verbs plus the scan primitive; structured data crosses the
// boundary as JSON text and numpy arrays, never as bound structs.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>
#include <sstream>
#include <string>

#include "tamba/harness.hpp"
#include "tamba/metrics.hpp"
#include "tamba/model.hpp"

namespace py = pybind11;
using namespace tamba;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Tensor tensor_from(const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
                   const char* name) {
  py::buffer_info info = a.request();
  Shape shape(info.shape.begin(), info.shape.end());
  std::vector<double> data(static_cast<const double*>(info.ptr),
                           static_cast<const double*>(info.ptr) + info.size);
  if (shape.empty()) throw DimensionError(std::string(name) + " must not be scalar");
  return Tensor::from_vec(std::move(shape), std::move(data));
}

py::array_t<double> array_from(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

TambaModel restore(const RunConfig& cfg, const std::string& checkpoint) {
  TambaModel m = make_model(cfg.model, derive_seed(cfg.seed, 0, 0));
  load_checkpoint(m.params, checkpoint);
  return m;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "trajectory prediction core: scenario generation, training, "
            "evaluation and the selective-scan primitive";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);

  m.def("default_config", [] { return run_config_to_json(RunConfig{}); },
        "Full run configuration with every field at its default, as JSON.");

  m.def("derive_seed", &derive_seed, py::arg("seed"), py::arg("stream"),
        py::arg("index"),
        "Decorrelated child seed for a named stream and element index.");

  m.def(
      "generate_scenario",
      [](const std::string& config_json, uint64_t index) {
        RunConfig cfg = run_config_from_json(config_json);
        Scenario s = generate_synthetic(derive_seed(cfg.seed, 4, index), cfg.data);
        return scenario_to_json(s);
      },
      py::arg("config_json"), py::arg("index") = 0,
      "One synthetic scenario from the config's generator spec, as JSON.");

  m.def(
      "generate_dataset",
      [](const std::string& config_json, int n, const std::string& out_dir) {
        RunConfig cfg = run_config_from_json(config_json);
        generate_dataset(cfg.data, n, cfg.seed, out_dir);
      },
      py::arg("config_json"), py::arg("n"), py::arg("out_dir"),
      py::call_guard<py::gil_scoped_release>(),
      "Write n scenario files plus index.json into out_dir.");

  m.def(
      "validate_scenario",
      [](const std::string& scenario_json) {
        parse_scenario(scenario_json);
      },
      py::arg("scenario_json"),
      "Raise ValidationError unless the JSON is a well-formed scenario.");

  m.def(
      "train",
      [](const std::string& config_json, const std::string& out_dir) {
        RunConfig cfg = run_config_from_json(config_json);
        py::gil_scoped_release nogil;
        train(cfg, out_dir);
        return slurp(out_dir + "/train_summary.json");
      },
      py::arg("config_json"), py::arg("out_dir"),
      "Run the full training loop; returns the summary JSON.");

  m.def(
      "evaluate",
      [](const std::string& config_json, const std::string& checkpoint,
         const std::string& out_dir) {
        RunConfig cfg = run_config_from_json(config_json);
        py::gil_scoped_release nogil;
        MetricReport rep = evaluate(cfg, checkpoint, out_dir);
        return metric_report_json(rep);
      },
      py::arg("config_json"), py::arg("checkpoint"), py::arg("out_dir"),
      "Evaluate a checkpoint on the validation split; returns the report JSON.");

  m.def(
      "predict",
      [](const std::string& config_json, const std::string& checkpoint,
         const std::string& scenario_json, const std::string& target_id) {
        RunConfig cfg = run_config_from_json(config_json);
        Scenario s = parse_scenario(scenario_json);
        py::gil_scoped_release nogil;
        TambaModel model = restore(cfg, checkpoint);
        return prediction_summary_json(predict(model, s, target_id));
      },
      py::arg("config_json"), py::arg("checkpoint"), py::arg("scenario_json"),
      py::arg("target_id"),
      "World-frame multimodal prediction for one target, as JSON.");

  m.def(
      "selective_scan",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& B,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& C,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& D,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& u,
         const py::object& h0) {
        Tensor at = tensor_from(a, "a"), Bt = tensor_from(B, "B");
        Tensor Ct = tensor_from(C, "C"), Dt = tensor_from(D, "D");
        Tensor ut = tensor_from(u, "u");
        Tensor h = h0.is_none()
                       ? Tensor::zeros({at.cols()})
                       : tensor_from(py::cast<py::array_t<double>>(h0), "h0");
        return array_from(selective_scan(at, Bt, Ct, Dt, ut, h));
      },
      py::arg("a"), py::arg("B"), py::arg("C"), py::arg("D"), py::arg("u"),
      py::arg("h0") = py::none(),
      "y_t = C_t h_t + D_t u_t with h_{t+1} = a_t * h_t + B_t u_t; h0 "
      "defaults to zeros.");
}
