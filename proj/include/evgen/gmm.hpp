#pragma once

#include "evgen/common.hpp"
#include "evgen/dataio.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace evgen::gmm {

/// Charging session summarized as (start hour, duration hours, average kW).
struct SessionTriple {
  double start = 0.0;
  double duration = 0.0;
  double avg_power = 0.0;

  Eigen::Vector3d as_vector() const { return {start, duration, avg_power}; }
};

using Triples = std::vector<SessionTriple>;

struct ExtractResult {
  Triples triples;
  std::size_t skipped = 0;  // all-zero curves
};

/// Reads (start, duration, avg power) off raw curves: first nonzero slot,
/// count of nonzero slots, mean of nonzero slots. Normalized input is
/// denormalized first.
ExtractResult extract_triples(const dataio::LoadCurveDataset& d);

/// Rectangular load for a triple, prorated on partial edge slots, truncated at slot 95.
dataio::LoadCurve triple_to_curve(const SessionTriple& t);

struct GmmParams {
  Vector weights;                                  // K
  std::vector<Eigen::Vector3d> means;              // K
  std::vector<Eigen::Matrix3d> covariances;        // K, symmetric positive-definite
  double covariance_floor = 0.0;

  int clusters() const { return static_cast<int>(weights.size()); }
};

/// Responsibilities and per-sample log-likelihood log p(x_n).
struct Responsibilities {
  Matrix gamma;             // N x K, rows sum to 1
  Vector point_log_likelihood;

  /// Mean log-likelihood per sample.
  double mean_log_likelihood() const { return point_log_likelihood.mean(); }
};

struct EmConfig {
  int clusters = 1000;
  double tol = 1e-6;
  int max_iter = 50000;
  /// Eigenvalue floor relative to trace(global covariance) / 3.
  double covariance_floor_scale = 1e-6;
  std::string init = "kmeans++";
  std::uint64_t seed = 0;
};

struct FitResult {
  GmmParams params;
  /// Mean log-likelihood per sample after each E-step.
  std::vector<double> log_likelihood_trace;
  int iterations = 0;
  bool converged = false;
  int reinitialized_clusters = 0;
};

Eigen::Matrix3d sample_covariance(const Triples& data);

/// Absolute eigenvalue floor derived from the data spread.
double covariance_floor_for(const Triples& data, double scale);

/// Computed in log-space. Throws InputError naming the first cluster whose
/// covariance is not positive-definite.
Responsibilities e_step(const GmmParams& params, const Triples& data);

struct MStepResult {
  GmmParams params;
  int reinitialized_clusters = 0;
};

/// Closed-form weights, means and eigenvalue-floored covariances. A cluster
/// with no responsibility mass is moved onto the worst-explained sample.
MStepResult m_step(const Responsibilities& r, const Triples& data, double floor);

/// Seeded k-means++ style starting point.
GmmParams initialize(const Triples& data, const EmConfig& cfg, double floor);

/// Alternates E and M steps until the mean log-likelihood changes by less than
/// `tol` or `max_iter` is reached. Throws InputError if N < K and
/// DivergenceError on a non-finite likelihood.
FitResult em_fit(const Triples& data, const EmConfig& cfg);

struct SampleResult {
  Triples triples;
  std::size_t clamped = 0;  // samples with at least one coordinate clamped
};

/// Mixture draws clamped to start in [0, 24), duration in [0.25, 24], power >= 0.
SampleResult gmm_sample(const GmmParams& params, int n, std::uint64_t seed);

/// Samples `n` triples and renders them as curves (raw kW).
dataio::LoadCurveDataset gmm_generate(const GmmParams& params, int n, std::uint64_t seed);

struct GmmModelFile {
  GmmParams params;
  int iterations = 0;
  double final_log_likelihood = 0.0;
  bool converged = false;
  EmConfig config;
};

void save_model(std::ostream& out, const GmmModelFile& model);
void save_model(const std::filesystem::path& path, const GmmModelFile& model);
GmmModelFile load_model(std::istream& in);
GmmModelFile load_model(const std::filesystem::path& path);

}  // namespace evgen::gmm
