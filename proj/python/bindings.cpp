#include "st3d/error.hpp"
#include "st3d/experiment.hpp"
#include "st3d/graph.hpp"
#include "st3d/imputation.hpp"
#include "st3d/io.hpp"
#include "st3d/metrics.hpp"
#include "st3d/synthetic.hpp"
#include "st3d/types.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <vector>

namespace py = pybind11;
using namespace st3d;

namespace {

std::span<const double> as_span(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

Mask to_mask(const std::vector<bool>& m) { return Mask(m.begin(), m.end()); }

// Edge list as parallel columns, which is what numpy callers want.
py::dict graph_dict(const SpatialGraph& g) {
  std::vector<std::size_t> src, dst;
  std::vector<double> weight;
  std::vector<std::string> kind;
  for (const Edge& e : g.edges) {
    src.push_back(e.src);
    dst.push_back(e.dst);
    weight.push_back(e.weight);
    kind.emplace_back(to_string(e.kind));
  }
  py::dict d;
  d["node_count"] = g.node_count;
  d["src"] = src;
  d["dst"] = dst;
  d["weight"] = weight;
  d["kind"] = kind;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-layer spatial transcriptomics imputation";

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<UsageError>(m, "UsageError", error.ptr());
  auto data_error = py::register_exception<DataError>(m, "DataError", error.ptr());
  py::register_exception<FormatError>(m, "FormatError", data_error.ptr());
  py::register_exception<GeometryError>(m, "GeometryError", data_error.ptr());
  py::register_exception<DegenerateFeatureError>(m, "DegenerateFeatureError", data_error.ptr());
  py::register_exception<TrainingDivergedError>(m, "TrainingDivergedError", error.ptr());

  m.def(
      "circle_iou",
      [](double x1, double y1, double r1, double x2, double y2, double r2) {
        return circle_iou({{x1, y1}, r1}, {{x2, y2}, r2});
      },
      py::arg("x1"), py::arg("y1"), py::arg("r1"), py::arg("x2"), py::arg("y2"), py::arg("r2"));
  m.def(
      "cosine_similarity", [](const Vector& u, const Vector& v) { return cosine_similarity(as_span(u), as_span(v)); },
      py::arg("u"), py::arg("v"));
  m.def(
      "cross_layer_weight",
      [](double x1, double y1, double r1, const Vector& f1, double x2, double y2, double r2, const Vector& f2) {
        return cross_layer_weight({{x1, y1}, r1, 0, as_span(f1)}, {{x2, y2}, r2, 1, as_span(f2)});
      },
      py::arg("x1"), py::arg("y1"), py::arg("r1"), py::arg("f1"), py::arg("x2"), py::arg("y2"), py::arg("r2"),
      py::arg("f2"));

  py::class_<SyntheticSpec>(m, "SyntheticSpec")
      .def(py::init<>())
      .def_readwrite("layers", &SyntheticSpec::layers)
      .def_readwrite("spots_per_layer", &SyntheticSpec::spots_per_layer)
      .def_readwrite("genes", &SyntheticSpec::genes)
      .def_readwrite("length_scale", &SyntheticSpec::length_scale)
      .def_readwrite("rho", &SyntheticSpec::rho)
      .def_readwrite("jitter", &SyntheticSpec::jitter)
      .def_readwrite("seed", &SyntheticSpec::seed)
      .def_readwrite("feature_dim", &SyntheticSpec::feature_dim)
      .def_readwrite("feature_noise", &SyntheticSpec::feature_noise)
      .def_readwrite("spacing", &SyntheticSpec::spacing)
      .def_readwrite("sample_id", &SyntheticSpec::sample_id);

  py::class_<SampleStack>(m, "SampleStack")
      .def_readonly("sample_id", &SampleStack::sample_id)
      .def_property_readonly("spot_count", &SampleStack::spot_count)
      .def_property_readonly("spot_ids", &SampleStack::spot_ids)
      .def_property_readonly("row_layers", &SampleStack::row_layers)
      .def_property_readonly("known_mask", &SampleStack::known_mask)
      .def_property_readonly("gene_names", [](const SampleStack& s) { return s.expression.gene_names; })
      .def_property_readonly("expression", [](const SampleStack& s) { return s.expression.values; })
      .def_property_readonly("features", [](const SampleStack& s) { return s.features.values; })
      .def_property_readonly("aligned_centers",
                             [](const SampleStack& s) {
                               Matrix c(static_cast<Eigen::Index>(s.spot_count()), 2);
                               Eigen::Index i = 0;
                               for (const SpotRef& r : s.spot_refs()) {
                                 const Point2 p = s.aligned_center(r);
                                 c(i, 0) = p.x;
                                 c(i, 1) = p.y;
                                 ++i;
                               }
                               return c;
                             })
      .def("validate", [](const SampleStack& s) {
        std::vector<std::string> out;
        for (const Violation& v : validate_stack(s)) out.push_back(v.message);
        return out;
      });

  m.def("generate_synthetic", &generate_synthetic, py::arg("spec"));
  m.def("cross_layer_expression_correlation", &cross_layer_expression_correlation, py::arg("stack"));

  m.def(
      "build_3d_graph",
      [](const SampleStack& s, std::size_t k_intra, std::size_t k_cross) {
        return graph_dict(build_3d_graph(s, k_intra, k_cross));
      },
      py::arg("stack"), py::arg("k_intra") = kDefaultIntraK, py::arg("k_cross") = kDefaultCrossK);
  m.def(
      "build_2d_graph", [](const SampleStack& s, std::size_t k) { return graph_dict(build_2d_graph(s, k)); },
      py::arg("stack"), py::arg("k") = kDefault2dK);

  m.def(
      "propagate",
      [](const SampleStack& s, const std::vector<bool>& known, int iterations) {
        PropagationConfig cfg;
        cfg.iterations = iterations;
        const ImputationResult r = propagate_labels(build_3d_graph(s), s.expression, to_mask(known), cfg);
        std::vector<std::string> prov;
        for (Provenance p : r.provenance) prov.emplace_back(to_string(p));
        return py::make_tuple(r.predictions.values, prov);
      },
      py::arg("stack"), py::arg("known"), py::arg("iterations") = 10,
      "Propagates the known rows of the stack's own expression over its 3D graph.");

  m.def(
      "metric_pcc", [](const Matrix& p, const Matrix& t) { return metric_pcc(p, t).value; }, py::arg("pred"),
      py::arg("truth"));
  m.def("metric_mse", &metric_mse, py::arg("pred"), py::arg("truth"));
  m.def("metric_mae", &metric_mae, py::arg("pred"), py::arg("truth"));

  m.def("load_dataset", &io::load_dataset, py::arg("manifest"));
  m.def(
      "save_dataset", [](const std::vector<SampleStack>& s, const std::filesystem::path& dir) {
        return io::save_dataset(s, dir);
      },
      py::arg("stacks"), py::arg("dir"));

  m.def(
      "run_experiment",
      [](const std::vector<SampleStack>& samples, const std::string& method, double known_ratio, int n_folds,
         std::uint64_t seed, int steps, int jobs) {
        ExperimentConfig cfg;
        cfg.method = method_from_string(method);
        cfg.known_ratio = known_ratio;
        cfg.n_folds = n_folds;
        cfg.seed = seed;
        cfg.train.steps = steps;
        cfg.jobs = jobs;
        RunReport report;
        {
          py::gil_scoped_release release;
          report = run_experiment(samples, cfg);
        }
        return report_json(report);
      },
      py::arg("samples"), py::arg("method") = "asign3d", py::arg("known_ratio") = 0.2, py::arg("n_folds") = 4,
      py::arg("seed") = 0, py::arg("steps") = TrainConfig::toy().steps, py::arg("jobs") = 1,
      "Runs a cross-validated experiment and returns report.json as a string.");
}
