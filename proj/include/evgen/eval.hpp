#pragma once

#include "evgen/common.hpp"
#include "evgen/dataio.hpp"
#include "evgen/gmm.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace evgen::eval {

/// Right-continuous step function: F(x) = probabilities[i] for
/// support[i] <= x < support[i + 1].
struct CdfCurve {
  std::vector<double> support;        // strictly increasing
  std::vector<double> probabilities;  // non-decreasing, last == 1

  double operator()(double x) const;
  bool operator==(const CdfCurve&) const = default;
};

/// One-sided periodogram of a 96-sample day, averaged over curves.
/// Normalized so that the bins of one curve sum to mean(x^2).
struct PsdCurve {
  std::vector<double> frequencies;  // cycles/day, 0..48
  std::vector<double> density;

  bool operator==(const PsdCurve&) const = default;
};

inline constexpr int kPsdBins = kSlots / 2 + 1;
inline constexpr double kSpectralFloor = 1e-12;

/// Per-interval mean and 10th / 90th percentiles.
struct SummaryStats {
  std::vector<double> mean;
  std::vector<double> p10;
  std::vector<double> p90;

  bool operator==(const SummaryStats&) const = default;
};

/// ECDF pooled over every scalar value of every curve.
CdfCurve empirical_cdf(const Matrix& curves);
CdfCurve empirical_cdf(std::vector<double> values);

PsdCurve psd(const Matrix& curves);

/// Sup-norm distance between two CDFs over their merged support.
double ks_distance(const CdfCurve& a, const CdfCurve& b);

/// RMS over bins of 10*log10((a + floor) / (b + floor)), in dB.
double log_spectral_distance(const PsdCurve& a, const PsdCurve& b);

/// Linear interpolation between order statistics (type 7), q in [0, 1].
double quantile(std::vector<double> values, double q);

SummaryStats summary_stats(const Matrix& curves);

struct EvalReport {
  std::string real_name;
  std::string synthetic_name;
  Eigen::Index real_count = 0;
  Eigen::Index synthetic_count = 0;
  std::string units;  // "kW" or "normalized(scale=...)"
  CdfCurve real_cdf;
  CdfCurve synthetic_cdf;
  PsdCurve real_psd;
  PsdCurve synthetic_psd;
  SummaryStats real_stats;
  SummaryStats synthetic_stats;
  double ks_distance = 0.0;
  double log_spectral_distance = 0.0;
  /// Free-form provenance (config echo); round-tripped verbatim.
  std::string config_echo;

  bool operator==(const EvalReport&) const = default;
};

/// Both datasets must share units: both raw, or both normalized with the same scale.
EvalReport compare(const dataio::LoadCurveDataset& real, const dataio::LoadCurveDataset& synth,
                   const std::string& real_name = "real",
                   const std::string& synthetic_name = "synthetic");

void save_report(std::ostream& out, const EvalReport& report);
void save_report(const std::filesystem::path& path, const EvalReport& report);
EvalReport load_report(std::istream& in);
EvalReport load_report(const std::filesystem::path& path);

/// Writes cdf.svg, psd.svg and intervals.svg into `dir`.
void write_plots(const std::filesystem::path& dir, const EvalReport& report);

/// One mean / 90th-percentile pair of tracks per swept condition value.
void write_sweep_plot(const std::filesystem::path& path, int var_index,
                      const std::vector<std::pair<double, SummaryStats>>& entries);

struct SweepResult {
  int clusters = 0;
  EvalReport report;
  gmm::FitResult fit;
};

/// Fits one GMM per cluster count on the triples of `real` (raw units) and
/// compares `n_synthetic` generated curves against `real`.
std::vector<SweepResult> gmm_cluster_sweep(const dataio::LoadCurveDataset& real,
                                           const std::vector<int>& cluster_counts,
                                           const gmm::EmConfig& cfg, int n_synthetic);

}  // namespace evgen::eval
