#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "feat/config.hpp"
#include "feat/egc.hpp"
#include "feat/errors.hpp"
#include "feat/geometry.hpp"
#include "feat/harness.hpp"
#include "feat/model.hpp"
#include "feat/replay.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

// JSON text is the bridge for configs and summaries; Python callers get dicts.
py::object to_python(const json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

json from_python(const py::object& obj) {
  return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

feat::SubspaceProjectors projectors_for(const feat::EtfPrototypes& etf, const std::vector<int>& head,
                                        const std::vector<int>& tail) {
  return feat::build_projectors(etf, head, tail);
}

feat::EtfPrototypes etf_from(const Eigen::MatrixXd& prototypes) {
  feat::EtfPrototypes etf;
  etf.class_count = static_cast<int>(prototypes.cols());
  etf.feature_dim = static_cast<int>(prototypes.rows());
  etf.prototypes = prototypes;
  return etf;
}

}  // namespace

PYBIND11_MODULE(_feat, m) {
  m.doc() = "Federated class-incremental learning with ETF prototypes";

  // registered base first: translators run newest first, so ConfigError wins for config failures
  const auto& base = py::register_exception<feat::Error>(m, "FeatError", PyExc_RuntimeError);
  py::register_exception<feat::ConfigError>(m, "ConfigError", base.ptr());

  m.def(
      "build_etf",
      [](int classes, int dim, std::uint64_t seed) { return feat::build_etf(classes, dim, seed).prototypes; },
      py::arg("classes"), py::arg("dim"), py::arg("seed"),
      "Simplex ETF prototypes as a dim x classes array.");

  m.def(
      "gram_deviation", [](const Eigen::MatrixXd& prototypes) { return feat::gram_deviation(etf_from(prototypes)); },
      py::arg("prototypes"));

  m.def(
      "build_projectors",
      [](const Eigen::MatrixXd& prototypes, const std::vector<int>& head, const std::vector<int>& tail) {
        const feat::SubspaceProjectors p = projectors_for(etf_from(prototypes), head, tail);
        return py::dict(py::arg("head") = p.head, py::arg("tail") = p.tail,
                        py::arg("head_rank_norm") = p.head_rank_norm, py::arg("tail_rank_norm") = p.tail_rank_norm);
      },
      py::arg("prototypes"), py::arg("head"), py::arg("tail"));

  m.def(
      "subspace_energies",
      [](const Eigen::MatrixXd& prototypes, const std::vector<int>& head, const std::vector<int>& tail,
         const Eigen::VectorXd& x) {
        const feat::SubspaceEnergies e =
            feat::subspace_energies(projectors_for(etf_from(prototypes), head, tail), x);
        return py::make_tuple(e.head, e.tail);
      },
      py::arg("prototypes"), py::arg("head"), py::arg("tail"), py::arg("x"),
      "Rank-normalized (head, tail) energies of a unit feature.");

  m.def(
      "classification_loss",
      [](const Eigen::MatrixXd& features, const std::vector<int>& labels, const Eigen::MatrixXd& prototypes) {
        const feat::LossResult r = feat::classification_loss({features, labels}, etf_from(prototypes));
        return py::make_tuple(r.value, r.feature_grad);
      },
      py::arg("features"), py::arg("labels"), py::arg("prototypes"));

  m.def(
      "gsa_loss",
      [](const Eigen::MatrixXd& features, const std::vector<int>& labels, const Eigen::MatrixXd& prototypes,
         double temperature) {
        const feat::LossResult r =
            feat::gsa_loss({features, labels}, etf_from(prototypes), {temperature, 1.0});
        return py::make_tuple(r.value, r.feature_grad);
      },
      py::arg("features"), py::arg("labels"), py::arg("prototypes"), py::arg("temperature") = 0.5);

  m.def(
      "confidence_gate",
      [](double head_energy, double tail_energy, double prior_head, double epsilon) {
        return feat::confidence_gate(head_energy, tail_energy, {prior_head, 0.0, 1}, epsilon);
      },
      py::arg("head_energy"), py::arg("tail_energy"), py::arg("prior_head"), py::arg("epsilon") = 1e-8);

  m.def(
      "correct_feature",
      [](const Eigen::VectorXd& x, const Eigen::MatrixXd& prototypes, const std::vector<int>& head,
         const std::vector<int>& tail, double gate) {
        return feat::correct_feature(x, projectors_for(etf_from(prototypes), head, tail), gate).corrected;
      },
      py::arg("x"), py::arg("prototypes"), py::arg("head"), py::arg("tail"), py::arg("gate"));

  m.def(
      "dirichlet_counts",
      [](const std::vector<int>& labels, int classes, int clients, double beta, std::uint64_t seed) {
        feat::Dataset d = feat::empty_dataset(1);
        d.inputs = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), 1);
        d.labels = labels;
        for (std::size_t i = 0; i < labels.size(); ++i) d.ids.push_back(i);
        return feat::partition_counts(feat::dirichlet_partition(d, clients, beta, seed), classes);
      },
      py::arg("labels"), py::arg("classes"), py::arg("clients"), py::arg("beta"), py::arg("seed"),
      "Per-client per-class counts of a Dirichlet split.");

  m.def("default_config", [] { return to_python(feat::config_to_json(feat::ExperimentConfig{})); });

  m.def(
      "ablation_tag", [](const py::object& cfg) { return feat::ablation_tag(feat::config_from_json(from_python(cfg))); },
      py::arg("config"));

  m.def(
      "run_experiment",
      [](const py::object& cfg, bool with_metrics) {
        const feat::ExperimentConfig c = feat::config_from_json(from_python(cfg));
        std::ostringstream metrics;
        feat::RunHooks hooks;
        if (with_metrics) hooks.metrics = &metrics;
        feat::ExperimentSummary s;
        {
          py::gil_scoped_release release;
          s = feat::run_experiment(c, hooks);
        }
        py::dict out = to_python(s.to_json());
        if (with_metrics) out["metrics_jsonl"] = metrics.str();
        return out;
      },
      py::arg("config"), py::arg("with_metrics") = false,
      "Runs an experiment from a config dict (missing keys keep defaults) and returns the summary.");
}
