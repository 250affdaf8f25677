#include "evgen/eval.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace evgen::eval {

double CdfCurve::operator()(double x) const {
  const auto it = std::upper_bound(support.begin(), support.end(), x);
  if (it == support.begin()) return 0.0;
  return probabilities[static_cast<std::size_t>(it - support.begin()) - 1];
}

CdfCurve empirical_cdf(std::vector<double> values) {
  if (values.empty()) throw InputError("empirical_cdf: no values");
  std::sort(values.begin(), values.end());
  CdfCurve cdf;
  const double n = static_cast<double>(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i + 1 < values.size() && values[i + 1] == values[i]) continue;
    cdf.support.push_back(values[i]);
    cdf.probabilities.push_back(static_cast<double>(i + 1) / n);
  }
  cdf.probabilities.back() = 1.0;
  return cdf;
}

CdfCurve empirical_cdf(const Matrix& curves) {
  if (curves.size() == 0) throw InputError("empirical_cdf: empty input");
  return empirical_cdf(std::vector<double>(curves.data(), curves.data() + curves.size()));
}

PsdCurve psd(const Matrix& curves) {
  if (curves.rows() == 0) throw InputError("psd: empty input");
  if (curves.cols() != kSlots) throw InputError("psd: curves must have 96 columns");
  static const auto tables = [] {
    std::pair<Matrix, Matrix> cs{Matrix(kSlots, kPsdBins), Matrix(kSlots, kPsdBins)};
    for (int t = 0; t < kSlots; ++t) {
      for (int k = 0; k < kPsdBins; ++k) {
        // Reduce the phase index first so the tables are exact at multiples of pi/2.
        const double angle = 2.0 * std::numbers::pi * ((t * k) % kSlots) / kSlots;
        cs.first(t, k) = std::cos(angle);
        cs.second(t, k) = -std::sin(angle);
      }
    }
    return cs;
  }();
  const Matrix re = curves * tables.first;
  const Matrix im = curves * tables.second;
  Eigen::RowVectorXd power =
      (re.array().square() + im.array().square()).colwise().mean() / (kSlots * kSlots);
  // One-sided: every bin except DC and Nyquist stands for a +/- frequency pair.
  power.segment(1, kPsdBins - 2) *= 2.0;
  PsdCurve out;
  out.density.assign(power.data(), power.data() + power.size());
  out.frequencies.resize(kPsdBins);
  for (int k = 0; k < kPsdBins; ++k) out.frequencies[k] = k;
  return out;
}

double ks_distance(const CdfCurve& a, const CdfCurve& b) {
  std::vector<double> grid;
  grid.reserve(a.support.size() + b.support.size());
  std::merge(a.support.begin(), a.support.end(), b.support.begin(), b.support.end(),
             std::back_inserter(grid));
  double sup = 0.0;
  for (const double x : grid) sup = std::max(sup, std::abs(a(x) - b(x)));
  return sup;
}

double log_spectral_distance(const PsdCurve& a, const PsdCurve& b) {
  if (a.density.size() != b.density.size() || a.frequencies != b.frequencies)
    throw InputError("log_spectral_distance: frequency grids differ");
  if (a.density.empty()) throw InputError("log_spectral_distance: empty spectra");
  double acc = 0.0;
  for (std::size_t k = 0; k < a.density.size(); ++k) {
    const double db =
        10.0 * std::log10((a.density[k] + kSpectralFloor) / (b.density[k] + kSpectralFloor));
    acc += db * db;
  }
  return std::sqrt(acc / static_cast<double>(a.density.size()));
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw InputError("quantile: no values");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * std::clamp(q, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

SummaryStats summary_stats(const Matrix& curves) {
  if (curves.rows() == 0) throw InputError("summary_stats: empty input");
  SummaryStats s;
  std::vector<double> column(static_cast<std::size_t>(curves.rows()));
  for (Eigen::Index k = 0; k < curves.cols(); ++k) {
    for (Eigen::Index i = 0; i < curves.rows(); ++i) column[static_cast<std::size_t>(i)] = curves(i, k);
    s.mean.push_back(curves.col(k).mean());
    s.p10.push_back(quantile(column, 0.10));
    s.p90.push_back(quantile(column, 0.90));
  }
  return s;
}

namespace {

std::string units_of(const dataio::LoadCurveDataset& d) {
  if (!d.normalized()) return "kW";
  return "normalized(scale=" + dataio::format_double(d.normalization->scale) + ")";
}

}  // namespace

EvalReport compare(const dataio::LoadCurveDataset& real, const dataio::LoadCurveDataset& synth,
                   const std::string& real_name, const std::string& synthetic_name) {
  if (real.size() == 0 || synth.size() == 0) throw InputError("compare: empty dataset");
  if (units_of(real) != units_of(synth))
    throw InputError("compare: unit mismatch (" + units_of(real) + " vs " + units_of(synth) + ")");
  EvalReport r;
  r.real_name = real_name;
  r.synthetic_name = synthetic_name;
  r.real_count = real.size();
  r.synthetic_count = synth.size();
  r.units = units_of(real);
  r.real_cdf = empirical_cdf(real.curves);
  r.synthetic_cdf = empirical_cdf(synth.curves);
  r.real_psd = psd(real.curves);
  r.synthetic_psd = psd(synth.curves);
  r.real_stats = summary_stats(real.curves);
  r.synthetic_stats = summary_stats(synth.curves);
  r.ks_distance = ks_distance(r.real_cdf, r.synthetic_cdf);
  r.log_spectral_distance = log_spectral_distance(r.synthetic_psd, r.real_psd);
  return r;
}

namespace {

using nlohmann::json;

json stats_json(const SummaryStats& s) {
  return {{"mean", s.mean}, {"p10", s.p10}, {"p90", s.p90}};
}

SummaryStats stats_from(const json& j) {
  return {j.at("mean").get<std::vector<double>>(), j.at("p10").get<std::vector<double>>(),
          j.at("p90").get<std::vector<double>>()};
}

}  // namespace

void save_report(std::ostream& out, const EvalReport& r) {
  const json j{
      {"format", "evgen-report"},
      {"version", 1},
      {"psd_normalization", "one-sided periodogram of 96 samples; bins of one curve sum to mean(x^2); averaged over curves"},
      {"real_name", r.real_name},
      {"synthetic_name", r.synthetic_name},
      {"real_count", r.real_count},
      {"synthetic_count", r.synthetic_count},
      {"units", r.units},
      {"ks_distance", r.ks_distance},
      {"log_spectral_distance_db", r.log_spectral_distance},
      {"real_cdf", {{"support", r.real_cdf.support}, {"probability", r.real_cdf.probabilities}}},
      {"synthetic_cdf",
       {{"support", r.synthetic_cdf.support}, {"probability", r.synthetic_cdf.probabilities}}},
      {"real_psd", {{"frequency", r.real_psd.frequencies}, {"density", r.real_psd.density}}},
      {"synthetic_psd",
       {{"frequency", r.synthetic_psd.frequencies}, {"density", r.synthetic_psd.density}}},
      {"real_intervals", stats_json(r.real_stats)},
      {"synthetic_intervals", stats_json(r.synthetic_stats)},
      {"config_echo", r.config_echo}};
  out << j.dump() << '\n';
}

void save_report(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write report " + path.string());
  save_report(out, report);
}

EvalReport load_report(std::istream& in) {
  try {
    json j;
    in >> j;
    if (j.at("format") != "evgen-report") throw InputError("not an evaluation report");
    EvalReport r;
    r.real_name = j.at("real_name").get<std::string>();
    r.synthetic_name = j.at("synthetic_name").get<std::string>();
    r.real_count = j.at("real_count").get<Eigen::Index>();
    r.synthetic_count = j.at("synthetic_count").get<Eigen::Index>();
    r.units = j.at("units").get<std::string>();
    r.ks_distance = j.at("ks_distance").get<double>();
    r.log_spectral_distance = j.at("log_spectral_distance_db").get<double>();
    r.real_cdf = {j.at("real_cdf").at("support").get<std::vector<double>>(),
                  j.at("real_cdf").at("probability").get<std::vector<double>>()};
    r.synthetic_cdf = {j.at("synthetic_cdf").at("support").get<std::vector<double>>(),
                       j.at("synthetic_cdf").at("probability").get<std::vector<double>>()};
    r.real_psd = {j.at("real_psd").at("frequency").get<std::vector<double>>(),
                  j.at("real_psd").at("density").get<std::vector<double>>()};
    r.synthetic_psd = {j.at("synthetic_psd").at("frequency").get<std::vector<double>>(),
                       j.at("synthetic_psd").at("density").get<std::vector<double>>()};
    r.real_stats = stats_from(j.at("real_intervals"));
    r.synthetic_stats = stats_from(j.at("synthetic_intervals"));
    r.config_echo = j.at("config_echo").get<std::string>();
    return r;
  } catch (const json::exception& e) {
    throw InputError(std::string("report: ") + e.what());
  }
}

EvalReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open report " + path.string());
  return load_report(in);
}

std::vector<SweepResult> gmm_cluster_sweep(const dataio::LoadCurveDataset& real,
                                           const std::vector<int>& cluster_counts,
                                           const gmm::EmConfig& cfg, int n_synthetic) {
  const dataio::LoadCurveDataset raw = dataio::denormalize(real);
  const auto triples = gmm::extract_triples(raw).triples;
  std::vector<SweepResult> out;
  for (const int k : cluster_counts) {
    gmm::EmConfig run = cfg;
    run.clusters = k;
    const std::string label = "K=" + std::to_string(k);
    try {
      SweepResult r;
      r.clusters = k;
      r.fit = gmm::em_fit(triples, run);
      const auto synth = gmm::gmm_generate(r.fit.params, n_synthetic, cfg.seed + 1);
      r.report = compare(raw, synth, "real", "gmm " + label);
      out.push_back(std::move(r));
    } catch (const DivergenceError& e) {
      throw DivergenceError(label + ": " + e.what(), e.checkpoint());
    } catch (const InputError& e) {
      throw InputError(label + ": " + e.what());
    }
  }
  return out;
}

}  // namespace evgen::eval
