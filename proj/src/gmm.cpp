#include "evgen/gmm.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace evgen::gmm {

using dataio::LoadCurve;
using dataio::LoadCurveDataset;

ExtractResult extract_triples(const LoadCurveDataset& d) {
  const LoadCurveDataset raw = dataio::denormalize(d);
  ExtractResult out;
  out.triples.reserve(static_cast<std::size_t>(raw.size()));
  for (Eigen::Index i = 0; i < raw.size(); ++i) {
    int first = -1;
    int count = 0;
    double sum = 0.0;
    for (int k = 0; k < kSlots; ++k) {
      const double v = raw.curves(i, k);
      if (v > 0.0) {
        if (first < 0) first = k;
        ++count;
        sum += v;
      }
    }
    if (count == 0) {
      ++out.skipped;
      continue;
    }
    out.triples.push_back({first * kSlotHours, count * kSlotHours, sum / count});
  }
  if (out.skipped > 0) spdlog::warn("extract_triples: skipped {} all-zero curves", out.skipped);
  return out;
}

LoadCurve triple_to_curve(const SessionTriple& t) {
  return dataio::rectangular_curve(t.start, t.duration, t.avg_power);
}

Eigen::Matrix3d sample_covariance(const Triples& data) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& t : data) mean += t.as_vector();
  mean /= static_cast<double>(data.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& t : data) {
    const Eigen::Vector3d d = t.as_vector() - mean;
    cov.noalias() += d * d.transpose();
  }
  return cov / static_cast<double>(data.size());
}

double covariance_floor_for(const Triples& data, double scale) {
  if (data.empty()) throw InputError("covariance_floor_for: no data");
  const double spread = sample_covariance(data).trace() / 3.0;
  // Identical samples have no spread to scale against.
  return spread > 0.0 ? scale * spread : std::max(scale, 1e-12);
}

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

Eigen::Matrix3d floor_eigenvalues(const Eigen::Matrix3d& cov, double floor) {
  const Eigen::Matrix3d sym = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(sym);
  Eigen::Vector3d values = eig.eigenvalues().cwiseMax(floor);
  Eigen::Matrix3d out = eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

}  // namespace

Responsibilities e_step(const GmmParams& params, const Triples& data) {
  const int k_count = params.clusters();
  const auto n = static_cast<Eigen::Index>(data.size());
  if (k_count < 1) throw InputError("e_step: no clusters");
  Responsibilities r;
  r.gamma.resize(n, k_count);
  for (int k = 0; k < k_count; ++k) {
    Eigen::LLT<Eigen::Matrix3d> llt(params.covariances[k]);
    const Eigen::Matrix3d lower = llt.matrixL();
    if (llt.info() != Eigen::Success || !(lower.diagonal().array() > 0.0).all())
      throw InputError("e_step: covariance of cluster " + std::to_string(k) +
                       " is not positive-definite");
    const double log_det = 2.0 * lower.diagonal().array().log().sum();
    const double log_weight = std::log(params.weights[k]);
    const double constant = log_weight - 0.5 * (3.0 * kLog2Pi + log_det);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Vector3d diff = data[static_cast<std::size_t>(i)].as_vector() - params.means[k];
      const Eigen::Vector3d y = lower.triangularView<Eigen::Lower>().solve(diff);
      r.gamma(i, k) = constant - 0.5 * y.squaredNorm();
    }
  }
  r.point_log_likelihood.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto row = r.gamma.row(i);
    const double peak = row.maxCoeff();
    if (!std::isfinite(peak)) {
      r.point_log_likelihood[i] = peak;
      row.setConstant(1.0 / k_count);
      continue;
    }
    row = (row.array() - peak).exp();
    const double total = row.sum();
    row /= total;
    r.point_log_likelihood[i] = peak + std::log(total);
  }
  return r;
}

MStepResult m_step(const Responsibilities& r, const Triples& data, double floor) {
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto k_count = static_cast<int>(r.gamma.cols());
  if (r.gamma.rows() != n) throw InputError("m_step: responsibilities do not match data");

  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> x(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) = data[static_cast<std::size_t>(i)].as_vector();

  MStepResult out;
  GmmParams& p = out.params;
  p.covariance_floor = floor;
  p.weights.resize(k_count);
  p.means.resize(k_count);
  p.covariances.resize(k_count);

  const Vector mass = r.gamma.colwise().sum().transpose();
  // Worst-explained samples first, for repairing empty clusters.
  std::vector<Eigen::Index> worst;
  const double empty_mass = 1e-10;
  for (int k = 0; k < k_count; ++k) {
    if (mass[k] > empty_mass) {
      const Vector g = r.gamma.col(k);
      const Eigen::Vector3d mean = (x.transpose() * g) / mass[k];
      Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
      for (Eigen::Index i = 0; i < n; ++i) {
        if (g[i] == 0.0) continue;
        const Eigen::Vector3d d = x.row(i).transpose() - mean;
        cov.noalias() += g[i] * (d * d.transpose());
      }
      p.means[k] = mean;
      p.covariances[k] = floor_eigenvalues(cov / mass[k], floor);
      p.weights[k] = mass[k] / static_cast<double>(n);
      continue;
    }
    if (worst.empty()) {
      worst.resize(static_cast<std::size_t>(n));
      std::iota(worst.begin(), worst.end(), Eigen::Index{0});
      std::stable_sort(worst.begin(), worst.end(), [&](Eigen::Index a, Eigen::Index b) {
        return r.point_log_likelihood[a] < r.point_log_likelihood[b];
      });
    }
    const Eigen::Index pick =
        worst[static_cast<std::size_t>(out.reinitialized_clusters) % worst.size()];
    p.means[k] = x.row(pick).transpose();
    p.covariances[k] = floor_eigenvalues(sample_covariance(data), floor);
    p.weights[k] = 1.0 / static_cast<double>(n);
    ++out.reinitialized_clusters;
  }
  p.weights /= p.weights.sum();
  return out;
}

GmmParams initialize(const Triples& data, const EmConfig& cfg, double floor) {
  const auto n = static_cast<Eigen::Index>(data.size());
  const int k_count = cfg.clusters;
  if (cfg.init != "kmeans++" && cfg.init != "random")
    throw InputError("unknown GMM init scheme '" + cfg.init + "'");
  Rng rng(cfg.seed);

  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> x(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) = data[static_cast<std::size_t>(i)].as_vector();
  // Seeding distances are measured in per-coordinate standardized units.
  const Eigen::Vector3d spread = sample_covariance(data).diagonal().cwiseSqrt();
  const Eigen::Vector3d inv_spread =
      spread.unaryExpr([](double s) { return s > 0.0 ? 1.0 / s : 1.0; });
  const auto z = (x * inv_spread.asDiagonal()).eval();

  std::vector<Eigen::Index> centers;
  centers.push_back(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
  Vector nearest = (z.rowwise() - z.row(centers[0])).rowwise().squaredNorm();
  std::vector<Eigen::Index> assignment(static_cast<std::size_t>(n), 0);
  while (static_cast<int>(centers.size()) < k_count) {
    const double total = nearest.sum();
    Eigen::Index pick = 0;
    if (cfg.init == "kmeans++" && total > 0.0) {
      double u = rng.uniform() * total;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        u -= nearest[i];
        if (u < 0.0 && nearest[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    const int label = static_cast<int>(centers.size());
    centers.push_back(pick);
    const Vector d = (z.rowwise() - z.row(pick)).rowwise().squaredNorm();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (d[i] < nearest[i]) {
        nearest[i] = d[i];
        assignment[static_cast<std::size_t>(i)] = label;
      }
    }
  }

  // Hard assignment to the nearest seed, then one closed-form M step.
  Responsibilities hard;
  hard.gamma.setZero(n, k_count);
  hard.point_log_likelihood = -nearest;
  for (Eigen::Index i = 0; i < n; ++i) hard.gamma(i, assignment[static_cast<std::size_t>(i)]) = 1.0;
  GmmParams p = m_step(hard, data, floor).params;
  // Seeds own at least their own point, so every cluster starts with mass.
  for (int k = 0; k < k_count; ++k) {
    if (hard.gamma.col(k).sum() < 2.0) {
      p.covariances[k] = floor_eigenvalues(
          sample_covariance(data) / std::pow(static_cast<double>(k_count), 2.0 / 3.0), floor);
    }
  }
  return p;
}

FitResult em_fit(const Triples& data, const EmConfig& cfg) {
  if (cfg.clusters < 1) throw InputError("em_fit: cluster count must be >= 1");
  if (!(cfg.tol > 0.0)) throw InputError("em_fit: tol must be positive");
  if (cfg.max_iter < 1) throw InputError("em_fit: max_iter must be >= 1");
  if (data.size() < static_cast<std::size_t>(cfg.clusters))
    throw InputError("em_fit: " + std::to_string(data.size()) + " samples for " +
                     std::to_string(cfg.clusters) + " clusters");
  const double floor = covariance_floor_for(data, cfg.covariance_floor_scale);

  FitResult fit;
  fit.params = initialize(data, cfg, floor);
  double previous = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < cfg.max_iter; ++it) {
    const Responsibilities r = e_step(fit.params, data);
    const double ll = r.mean_log_likelihood();
    if (!std::isfinite(ll))
      throw DivergenceError("em_fit: non-finite log-likelihood at iteration " + std::to_string(it));
    fit.log_likelihood_trace.push_back(ll);
    if (it > 0 && std::abs(ll - previous) < cfg.tol) {
      fit.converged = true;
      break;
    }
    previous = ll;
    auto step = m_step(r, data, floor);
    fit.params = std::move(step.params);
    fit.reinitialized_clusters += step.reinitialized_clusters;
    fit.iterations = it + 1;
  }
  spdlog::info("em_fit: K={} iterations={} mean LL={:.8g} converged={}", cfg.clusters,
               fit.iterations, fit.log_likelihood_trace.back(), fit.converged);
  return fit;
}

SampleResult gmm_sample(const GmmParams& params, int n, std::uint64_t seed) {
  if (n < 1) throw InputError("gmm_sample: n must be >= 1");
  const int k_count = params.clusters();
  std::vector<double> cumulative(static_cast<std::size_t>(k_count));
  std::partial_sum(params.weights.data(), params.weights.data() + k_count, cumulative.begin());
  std::vector<Eigen::Matrix3d> factors;
  factors.reserve(static_cast<std::size_t>(k_count));
  for (int k = 0; k < k_count; ++k) {
    Eigen::LLT<Eigen::Matrix3d> llt(params.covariances[k]);
    if (llt.info() != Eigen::Success)
      throw InputError("gmm_sample: covariance of cluster " + std::to_string(k) +
                       " is not positive-definite");
    factors.emplace_back(llt.matrixL());
  }

  Rng rng(seed);
  SampleResult out;
  out.triples.reserve(static_cast<std::size_t>(n));
  const double latest_start = std::nextafter(24.0, 0.0);
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform() * cumulative.back();
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    const auto k = std::min<std::ptrdiff_t>(it - cumulative.begin(), k_count - 1);
    const Eigen::Vector3d e{rng.normal(), rng.normal(), rng.normal()};
    const Eigen::Vector3d v = params.means[k] + factors[k] * e;
    SessionTriple t{std::clamp(v[0], 0.0, latest_start), std::clamp(v[1], kSlotHours, 24.0),
                    std::max(v[2], 0.0)};
    if (t.start != v[0] || t.duration != v[1] || t.avg_power != v[2]) ++out.clamped;
    out.triples.push_back(t);
  }
  if (out.clamped > 0) {
    spdlog::debug("gmm_sample: clamped {} of {} samples ({:.3g}%)", out.clamped, n,
                  100.0 * static_cast<double>(out.clamped) / n);
  }
  return out;
}

LoadCurveDataset gmm_generate(const GmmParams& params, int n, std::uint64_t seed) {
  const auto sample = gmm_sample(params, n, seed);
  LoadCurveDataset out;
  out.curves.resize(n, kSlots);
  for (int i = 0; i < n; ++i) {
    const LoadCurve c = triple_to_curve(sample.triples[static_cast<std::size_t>(i)]);
    for (int k = 0; k < kSlots; ++k) out.curves(i, k) = c[k];
  }
  return out;
}

namespace {

constexpr int kModelVersion = 1;

}  // namespace

void save_model(std::ostream& out, const GmmModelFile& model) {
  using nlohmann::json;
  const GmmParams& p = model.params;
  json j;
  j["format"] = "evgen-gmm";
  j["version"] = kModelVersion;
  j["clusters"] = p.clusters();
  j["weights"] = std::vector<double>(p.weights.data(), p.weights.data() + p.weights.size());
  json means = json::array();
  json covs = json::array();
  for (int k = 0; k < p.clusters(); ++k) {
    means.push_back({p.means[k][0], p.means[k][1], p.means[k][2]});
    json c = json::array();
    for (int r = 0; r < 3; ++r)
      for (int col = 0; col < 3; ++col) c.push_back(p.covariances[k](r, col));
    covs.push_back(std::move(c));
  }
  j["means"] = std::move(means);
  j["covariances"] = std::move(covs);
  j["covariance_floor"] = p.covariance_floor;
  j["fit"] = {{"iterations", model.iterations},
              {"final_log_likelihood", model.final_log_likelihood},
              {"converged", model.converged}};
  j["config"] = {{"clusters", model.config.clusters},
                 {"tol", model.config.tol},
                 {"max_iter", model.config.max_iter},
                 {"covariance_floor_scale", model.config.covariance_floor_scale},
                 {"init", model.config.init},
                 {"seed", model.config.seed}};
  out << j.dump(1) << '\n';
}

void save_model(const std::filesystem::path& path, const GmmModelFile& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write GMM model " + path.string());
  save_model(out, model);
}

GmmModelFile load_model(std::istream& in) {
  using nlohmann::json;
  json j;
  try {
    in >> j;
    if (j.at("format") != "evgen-gmm") throw InputError("not a GMM model file");
    if (j.at("version").get<int>() != kModelVersion)
      throw InputError("unsupported GMM model version");
    GmmModelFile m;
    const int k_count = j.at("clusters").get<int>();
    const auto weights = j.at("weights").get<std::vector<double>>();
    if (static_cast<int>(weights.size()) != k_count || j.at("means").size() != weights.size() ||
        j.at("covariances").size() != weights.size())
      throw InputError("GMM model: array lengths disagree with cluster count");
    m.params.weights = Eigen::Map<const Vector>(weights.data(), k_count);
    for (int k = 0; k < k_count; ++k) {
      const auto mu = j["means"][k].get<std::vector<double>>();
      const auto cov = j["covariances"][k].get<std::vector<double>>();
      if (mu.size() != 3 || cov.size() != 9) throw InputError("GMM model: bad cluster shape");
      m.params.means.emplace_back(mu[0], mu[1], mu[2]);
      m.params.covariances.push_back(Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(cov.data()));
    }
    m.params.covariance_floor = j.at("covariance_floor").get<double>();
    const auto& fit = j.at("fit");
    m.iterations = fit.at("iterations").get<int>();
    m.final_log_likelihood = fit.at("final_log_likelihood").get<double>();
    m.converged = fit.at("converged").get<bool>();
    const auto& c = j.at("config");
    m.config.clusters = c.at("clusters").get<int>();
    m.config.tol = c.at("tol").get<double>();
    m.config.max_iter = c.at("max_iter").get<int>();
    m.config.covariance_floor_scale = c.at("covariance_floor_scale").get<double>();
    m.config.init = c.at("init").get<std::string>();
    m.config.seed = c.at("seed").get<std::uint64_t>();
    return m;
  } catch (const json::exception& e) {
    throw InputError(std::string("GMM model: ") + e.what());
  }
}

GmmModelFile load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open GMM model " + path.string());
  return load_model(in);
}

}  // namespace evgen::gmm
