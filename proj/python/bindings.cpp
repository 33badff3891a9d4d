#include <map>
#include <optional>
#include <sstream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hilctc/classify.hpp"
#include "hilctc/cluster.hpp"
#include "hilctc/dataset.hpp"
#include "hilctc/error.hpp"
#include "hilctc/experiment.hpp"
#include "hilctc/hil.hpp"
#include "hilctc/metrics.hpp"
#include "hilctc/reduce.hpp"
#include "hilctc/report.hpp"

namespace py = pybind11;
using namespace hilctc;
using nlohmann::json;

namespace {

std::unique_ptr<bool[]> flags(const std::vector<bool>& y) {
  std::unique_ptr<bool[]> out(new bool[y.size()]);
  std::copy(y.begin(), y.end(), out.get());
  return out;
}

SvmConfig svm_config(double C, std::optional<double> gamma, bool balanced, bool probability, std::uint64_t seed) {
  SvmConfig cfg;
  cfg.C = C;
  cfg.gamma = gamma;
  cfg.class_weight = balanced ? ClassWeight::Balanced : ClassWeight::None;
  cfg.probability = probability;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Cluster-guided human-in-the-loop refinement of a CTC classifier";

  static py::exception<Error> error(m, "HilctcError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(error.ptr(), (std::string(to_string(e.kind())) + ": " + e.what()).c_str());
    }
  });

  // dimensionality reduction and clustering
  py::class_<PcaModel>(m, "PcaModel")
      .def_readonly("mean", &PcaModel::mean)
      .def_readonly("components", &PcaModel::components)
      .def_readonly("explained_variance", &PcaModel::explained_variance)
      .def("transform", [](const PcaModel& p, const Eigen::MatrixXd& X) { return pca_transform(p, X); });
  m.def("pca_fit", &pca_fit, py::arg("X"), py::arg("k"));

  m.def(
      "project_2d",
      [](const Eigen::MatrixXd& X, std::uint64_t seed, int n_neighbors, double min_dist, int n_epochs) {
        ProjectionParams p;
        p.n_neighbors = n_neighbors;
        p.min_dist = min_dist;
        p.n_epochs = n_epochs;
        return project_2d(X, p, seed).coords;
      },
      py::arg("X"), py::arg("seed"), py::arg("n_neighbors") = 15, py::arg("min_dist") = 0.1, py::arg("n_epochs") = 200);

  m.def(
      "hdbscan",
      [](const Eigen::MatrixXd& X, int min_cluster_size, std::optional<int> min_samples) {
        return hdbscan_fit(X, min_cluster_size, min_samples.value_or(min_cluster_size)).labels;
      },
      py::arg("X"), py::arg("min_cluster_size"), py::arg("min_samples") = py::none());

  // classifier
  py::class_<SvmModel>(m, "SvmModel")
      .def_readonly("gamma", &SvmModel::gamma)
      .def_readonly("intercept", &SvmModel::intercept)
      .def_readonly("support_vectors", &SvmModel::support_vectors)
      .def_readonly("dual_coefs", &SvmModel::dual_coefs)
      .def("decision_function", [](const SvmModel& s, const Eigen::MatrixXd& X) { return decision_values(s, X); })
      .def("predict_proba", [](const SvmModel& s, const Eigen::MatrixXd& X) { return predict_proba(s, X); })
      .def("predict", [](const SvmModel& s, const Eigen::MatrixXd& X, double t) { return predict_positive(s, X, t); },
           py::arg("X"), py::arg("threshold") = 0.5)
      .def("dual_objective", [](const SvmModel& s) { return dual_objective(s); })
      .def("to_json", [](const SvmModel& s) { return json(s).dump(); });

  m.def(
      "svm_fit",
      [](const Eigen::MatrixXd& X, const std::vector<bool>& y, double C, std::optional<double> gamma, bool balanced,
         bool probability, std::uint64_t seed) {
        const auto buf = flags(y);
        return svm_fit(X, std::span<const bool>(buf.get(), y.size()), svm_config(C, gamma, balanced, probability, seed));
      },
      py::arg("X"), py::arg("y"), py::arg("C") = 1.0, py::arg("gamma") = py::none(), py::arg("balanced") = true,
      py::arg("probability") = true, py::arg("seed") = 0);

  // metrics
  m.def("f1_score", py::overload_cast<double, double>(&f1_score), py::arg("precision"), py::arg("recall"));
  m.def("positive_predictive_value", &positive_predictive_value, py::arg("suggested"), py::arg("confirmed"));
  m.def(
      "confusion",
      [](const std::vector<bool>& pred, const std::vector<bool>& truth) {
        std::vector<Label> p, t;
        for (bool b : pred) p.push_back(b ? Label::Ctc : Label::NonCtc);
        for (bool b : truth) t.push_back(b ? Label::Ctc : Label::NonCtc);
        const auto c = confusion(p, t);
        return std::map<std::string, long>{{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
      },
      py::arg("predicted"), py::arg("truth"));

  // sampling
  m.def("sampling_frequencies", &sampling_frequencies, py::arg("scores"));
  m.def("allocate_budget", &allocate_budget, py::arg("frequencies"), py::arg("budget"), py::arg("pool_sizes"));

  // data and whole experiments; configs and reports travel as JSON text
  m.def(
      "parse_config",
      [](const std::string& experiment_config) {
        return config_json(parse_experiment_config(json::parse(experiment_config))).dump();
      },
      py::arg("config_json"));
  m.def(
      "synthetic_manifest",
      [](const std::string& experiment_config) {
        const auto cfg = parse_experiment_config(json::parse(experiment_config));
        if (!cfg.synthetic) fail(ErrorKind::InvalidSpec, "/synthetic: required");
        std::ostringstream out;
        write_manifest(out, generate_synthetic(*cfg.synthetic));
        return out.str();
      },
      py::arg("config_json"));
  m.def(
      "run_experiment",
      [](const std::string& experiment_config, std::optional<std::uint64_t> seed) {
        const auto cfg = parse_experiment_config(json::parse(experiment_config));
        const std::uint64_t s = seed ? *seed : cfg.seed.value_or(0);
        py::gil_scoped_release release;
        return render_report(run_experiment(cfg, prepare_experiment(cfg, s), s), cfg);
      },
      py::arg("config_json"), py::arg("seed") = py::none());
  m.def(
      "report_csv",
      [](const std::string& report) {
        std::ostringstream out;
        write_report_csv(out, json::parse(report));
        return out.str();
      },
      py::arg("report_json"));
}
