#include "evgen/cli.hpp"
#include "evgen/dataio.hpp"
#include "evgen/eval.hpp"
#include "evgen/gmm.hpp"
#include "evgen/scgan.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace evgen;

namespace {

dataio::LoadCurveDataset raw(const Matrix& curves) {
  if (curves.cols() != kSlots) throw InputError("expected curves with 96 columns");
  dataio::LoadCurveDataset d;
  d.curves = curves;
  return d;
}

scgan::ConditionKind kind_of(const std::string& name) { return scgan::condition_kind_from_string(name); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "EV charging load curve generation";

  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);

  m.def(
      "example_curves",
      [](int modes, int n, std::uint64_t seed) {
        return dataio::synth_population(dataio::example_population(modes, n, seed)).data.curves;
      },
      py::arg("modes"), py::arg("n"), py::arg("seed") = 0,
      "Synthetic workplace charging population, kW, shape (n, 96).");

  m.def(
      "ks_distance",
      [](const Matrix& real, const Matrix& synth) {
        return eval::ks_distance(eval::empirical_cdf(real), eval::empirical_cdf(synth));
      },
      py::arg("real"), py::arg("synth"), "Sup distance between the pooled load ECDFs.");

  m.def(
      "log_spectral_distance",
      [](const Matrix& real, const Matrix& synth) {
        return eval::log_spectral_distance(eval::psd(raw(real).curves), eval::psd(raw(synth).curves));
      },
      py::arg("real"), py::arg("synth"), "RMS dB difference of the mean periodograms.");

  m.def(
      "psd",
      [](const Matrix& curves) {
        const auto p = eval::psd(raw(curves).curves);
        return py::make_tuple(p.frequencies, p.density);
      },
      py::arg("curves"), "Mean one-sided periodogram: (cycles per day, density).");

  m.def(
      "sc_loss",
      [](const Matrix& x, const Matrix& c, const std::string& kind) {
        return scgan::sc_loss(x, c, kind_of(kind));
      },
      py::arg("x"), py::arg("c"), py::arg("kind") = "continuous");
  m.def(
      "sc_loss_naive",
      [](const Matrix& x, const Matrix& c, const std::string& kind) {
        return scgan::sc_loss_naive(x, c, kind_of(kind));
      },
      py::arg("x"), py::arg("c"), py::arg("kind") = "continuous");

  m.def(
      "sample_latent",
      [](Eigen::Index n, const std::string& kind, std::uint64_t seed, int categories) {
        return scgan::sample_latent(n, kind_of(kind), seed, categories).codes();
      },
      py::arg("n"), py::arg("kind") = "continuous", py::arg("seed") = 0,
      py::arg("categories") = scgan::kConditionDims, "Latent codes [z, c], shape (n, 88).");

  py::class_<gmm::FitResult>(m, "GmmFit")
      .def_property_readonly("weights", [](const gmm::FitResult& f) { return Vector(f.params.weights); })
      .def_property_readonly("means",
                             [](const gmm::FitResult& f) {
                               Matrix out(f.params.clusters(), 3);
                               for (int k = 0; k < f.params.clusters(); ++k)
                                 out.row(k) = f.params.means[static_cast<std::size_t>(k)].transpose();
                               return out;
                             })
      .def_property_readonly("covariances",
                             [](const gmm::FitResult& f) {
                               std::vector<Eigen::Matrix3d> out = f.params.covariances;
                               return out;
                             })
      .def_readonly("iterations", &gmm::FitResult::iterations)
      .def_readonly("converged", &gmm::FitResult::converged)
      .def_readonly("log_likelihood_trace", &gmm::FitResult::log_likelihood_trace);

  m.def(
      "fit_gmm",
      [](const Matrix& curves, int clusters, std::uint64_t seed, double tol, int max_iter) {
        gmm::EmConfig cfg;
        cfg.clusters = clusters;
        cfg.seed = seed;
        cfg.tol = tol;
        cfg.max_iter = max_iter;
        const auto triples = gmm::extract_triples(raw(curves)).triples;
        py::gil_scoped_release release;
        return gmm::em_fit(triples, cfg);
      },
      py::arg("curves"), py::arg("clusters"), py::arg("seed") = 0, py::arg("tol") = 1e-6,
      py::arg("max_iter") = 50000, "EM fit on the (start, duration, power) triples of raw curves.");

  m.def(
      "gmm_generate",
      [](const gmm::FitResult& fit, int n, std::uint64_t seed) {
        return gmm::gmm_generate(fit.params, n, seed).curves;
      },
      py::arg("fit"), py::arg("n"), py::arg("seed") = 0);

  py::class_<scgan::GanModel>(m, "GanModel")
      .def_property_readonly("kind", [](const scgan::GanModel& g) { return scgan::to_string(g.kind); })
      .def_readonly("categories", &scgan::GanModel::categories)
      .def_readonly("epochs_trained", &scgan::GanModel::epochs_trained)
      .def(
          "generate",
          [](const scgan::GanModel& g, Eigen::Index n, std::uint64_t seed) {
            return scgan::generate(g, scgan::sample_latent(n, g.kind, seed, g.categories)).data.curves;
          },
          py::arg("n"), py::arg("seed") = 0, "Curves in kW, shape (n, 96).");

  m.def(
      "load_gan", [](const std::filesystem::path& path) { return scgan::load_model(path); },
      py::arg("path"));

  m.def(
      "cli_run", [](const std::vector<std::string>& args) { return cli::run(args); }, py::arg("args"),
      "Runs the command-line tool in-process and returns its exit code.");
}
