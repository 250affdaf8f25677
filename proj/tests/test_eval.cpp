#include "evgen/eval.hpp"

#include "fixtures.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

using namespace evgen;
using namespace evgen::eval;

namespace {

Matrix random_curves(Eigen::Index n, Rng& rng, double scale = 1.0) {
  Matrix m(n, kSlots);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.uniform();
  return m;
}

dataio::LoadCurveDataset dataset(Matrix curves) {
  dataio::LoadCurveDataset d;
  d.curves = std::move(curves);
  return d;
}

}  // namespace

TEST_CASE("ECDF of point masses and two-point mixes") {
  const auto point = empirical_cdf(Matrix::Constant(3, kSlots, 2.5));
  CHECK(point.support == std::vector<double>{2.5});
  CHECK(point(2.5) == 1.0);
  CHECK(point(2.4999) == 0.0);

  std::vector<double> two(200, 0.0);
  std::fill(two.begin() + 100, two.end(), 1.0);
  const auto mix = empirical_cdf(two);
  CHECK(mix(0.0) == 0.5);
  CHECK(mix(0.5) == 0.5);
  CHECK(mix(1.0) == 1.0);
  CHECK(mix(-1.0) == 0.0);

  CHECK_THROWS_AS(empirical_cdf(std::vector<double>{}), InputError);
  CHECK_THROWS_AS(empirical_cdf(Matrix(0, kSlots)), InputError);
}

TEST_CASE("ECDF is a non-decreasing step function ending at 1") {
  Rng rng(3);
  Matrix curves = random_curves(40, rng);
  curves.topRows(10).setZero();  // ties
  const auto cdf = empirical_cdf(curves);
  CHECK(cdf.probabilities.back() == 1.0);
  CHECK(std::is_sorted(cdf.probabilities.begin(), cdf.probabilities.end()));
  CHECK(std::adjacent_find(cdf.support.begin(), cdf.support.end(), std::greater_equal<>()) ==
        cdf.support.end());
  CHECK(cdf(0.0) == doctest::Approx(0.25));
  // Right-continuity: the value at a jump is the value just after it.
  const double x = cdf.support[5];
  CHECK(cdf(x) == cdf(std::nextafter(x, 2.0)));
  CHECK(cdf(x) > cdf(std::nextafter(x, -1.0)));
}

TEST_CASE("ECDF of uniform draws is within the DKW band") {
  // P(sup |F_n - F| > 0.01) <= 2 exp(-2 n 0.01^2) ~ 4e-9 at n = 1e5.
  Rng rng(99);
  std::vector<double> v(100000);
  for (auto& x : v) x = rng.uniform();
  const auto cdf = empirical_cdf(v);
  double sup = 0.0;
  for (std::size_t i = 0; i < cdf.support.size(); ++i) {
    const double x = cdf.support[i];
    const double before = i == 0 ? 0.0 : cdf.probabilities[i - 1];
    sup = std::max({sup, std::abs(cdf.probabilities[i] - x), std::abs(before - x)});
  }
  CHECK(sup < 0.01);
}

TEST_CASE("periodogram normalization, DC, single tone and white noise") {
  Rng rng(5);
  const Matrix curves = random_curves(7, rng, 3.0);
  const auto p = psd(curves);
  REQUIRE(p.density.size() == 49);
  CHECK(p.frequencies.front() == 0.0);
  CHECK(p.frequencies.back() == 48.0);
  double total = 0.0;
  for (const double d : p.density) {
    CHECK(d >= 0.0);
    total += d;
  }
  const double mean_square = curves.array().square().mean();
  CHECK(std::abs(total - mean_square) <= 1e-9 * mean_square);

  const auto dc = psd(Matrix::Constant(4, kSlots, 2.0));
  CHECK(dc.density[0] == doctest::Approx(4.0));
  double rest = 0.0;
  for (std::size_t k = 1; k < dc.density.size(); ++k) rest += dc.density[k];
  CHECK(rest < 1e-12 * dc.density[0]);

  Matrix tone(2, kSlots);
  for (int t = 0; t < kSlots; ++t) {
    tone(0, t) = std::sin(2.0 * std::numbers::pi * 4.0 * t / kSlots);
    tone(1, t) = std::cos(2.0 * std::numbers::pi * 4.0 * t / kSlots + 0.3);
  }
  const auto tp = psd(tone);
  const auto peak = std::max_element(tp.density.begin(), tp.density.end()) - tp.density.begin();
  CHECK(peak == 4);
  CHECK(tp.density[4] == doctest::Approx(0.5));  // mean square of a unit sinusoid

  // Gaussian noise: one-sided bins carry 2 sigma^2 / 96, DC and Nyquist half that.
  Matrix noise(10000, kSlots);
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = rng.normal();
  const auto np = psd(noise);
  for (int k = 1; k < 48; ++k) CHECK(np.density[k] == doctest::Approx(2.0 / 96).epsilon(0.10));
  CHECK(np.density[48] == doctest::Approx(1.0 / 96).epsilon(0.10));

  CHECK_THROWS_AS(psd(Matrix(0, kSlots)), InputError);
  CHECK_THROWS_AS(psd(Matrix::Zero(2, 10)), InputError);
}

TEST_CASE("KS distance examples and metric properties") {
  const auto zero = empirical_cdf(std::vector<double>{0.0});
  const auto one = empirical_cdf(std::vector<double>{1.0});
  const auto half = empirical_cdf(std::vector<double>{0.5});
  const auto mix = empirical_cdf(std::vector<double>{0.0, 1.0});
  CHECK(ks_distance(zero, one) == 1.0);
  CHECK(ks_distance(half, mix) == 0.5);
  CHECK(ks_distance(mix, mix) == 0.0);

  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = empirical_cdf(random_curves(3, rng));
    const auto b = empirical_cdf(random_curves(2, rng, 1.3));
    const auto c = empirical_cdf(random_curves(4, rng, 0.8));
    CHECK(ks_distance(a, b) == ks_distance(b, a));
    CHECK(ks_distance(a, c) <= ks_distance(a, b) + ks_distance(b, c) + 1e-15);
    CHECK(ks_distance(a, b) > 0.0);
    CHECK(ks_distance(a, b) <= 1.0);
  }
}

TEST_CASE("log-spectral distance") {
  PsdCurve a{{0, 1, 2}, {1.0, 2.0, 4.0}};
  PsdCurve b = a;
  CHECK(log_spectral_distance(a, b) == 0.0);
  for (auto& d : b.density) d *= 10.0;
  CHECK(log_spectral_distance(b, a) == doctest::Approx(10.0).epsilon(1e-12));

  const PsdCurve c{{0, 1, 2}, {1.0, 0.5, 8.0}};
  const double expect =
      std::sqrt((0.0 + std::pow(10 * std::log10((2.0 + 1e-12) / (0.5 + 1e-12)), 2) +
                 std::pow(10 * std::log10((4.0 + 1e-12) / (8.0 + 1e-12)), 2)) /
                3.0);
  CHECK(log_spectral_distance(a, c) == doctest::Approx(expect).epsilon(1e-14));

  const PsdCurve zeros{{0, 1, 2}, {0.0, 0.0, 0.0}};
  CHECK(std::isfinite(log_spectral_distance(a, zeros)));
  CHECK_THROWS_AS(log_spectral_distance(a, PsdCurve{{0, 1}, {1.0, 1.0}}), InputError);
}

TEST_CASE("quantiles and summary statistics") {
  CHECK(quantile({3.0, 1.0, 2.0}, 0.5) == 2.0);
  CHECK(quantile({1.0, 2.0, 3.0, 4.0}, 0.1) == doctest::Approx(1.3));
  CHECK(quantile({5.0}, 0.9) == 5.0);
  CHECK_THROWS_AS(quantile({}, 0.5), InputError);

  Rng rng(2);
  const Matrix single = random_curves(1, rng);
  const auto s1 = summary_stats(single);
  REQUIRE(s1.mean.size() == 96);
  for (int t = 0; t < 96; ++t) {
    CHECK(s1.mean[t] == single(0, t));
    CHECK(s1.p10[t] == single(0, t));
    CHECK(s1.p90[t] == single(0, t));
  }
  const auto flat = summary_stats(Matrix::Constant(5, kSlots, 1.5));
  for (int t = 0; t < 96; ++t) CHECK(flat.p90[t] - flat.p10[t] == 0.0);

  // 11 rows with values 0..10 (shuffled per column): p10 = 1, p90 = 9, mean 5.
  Matrix ladder(11, kSlots);
  for (int t = 0; t < kSlots; ++t)
    for (int i = 0; i < 11; ++i) ladder(i, t) = (i * (t + 3)) % 11;
  const auto ls = summary_stats(ladder);
  for (int t = 0; t < 96; ++t) {
    if ((t + 3) % 11 == 0) continue;  // column is all zeros
    CHECK(ls.p10[t] == doctest::Approx(1.0));
    CHECK(ls.p90[t] == doctest::Approx(9.0));
    CHECK(ls.mean[t] == doctest::Approx(5.0));
  }
}

TEST_CASE("compare: self comparison, reordering and unit checks") {
  Rng rng(8);
  const auto real = dataset(random_curves(30, rng, 5.0));
  const auto self = compare(real, real);
  CHECK(self.ks_distance == 0.0);
  CHECK(self.log_spectral_distance == 0.0);
  CHECK(self.units == "kW");
  CHECK(self.real_stats.mean.size() == 96);

  const auto synth = dataset(random_curves(20, rng, 4.0));
  const auto r = compare(real, synth);
  CHECK(r.ks_distance > 0.0);
  Matrix reversed = synth.curves.colwise().reverse();
  const auto r2 = compare(real, dataset(reversed));
  CHECK(r2.ks_distance == r.ks_distance);
  CHECK(r2.log_spectral_distance == doctest::Approx(r.log_spectral_distance).epsilon(1e-12));

  const auto norm = dataio::normalize(real);
  CHECK_THROWS_AS(compare(real, norm), InputError);
  CHECK_THROWS_AS(compare(real, dataset(Matrix(0, kSlots))), InputError);
  CHECK(compare(norm, norm).units.rfind("normalized", 0) == 0);
}

TEST_CASE("report round trip and plots") {
  Rng rng(1);
  auto r = compare(dataset(random_curves(12, rng, 3.0)), dataset(random_curves(9, rng, 3.3)), "a", "b");
  r.config_echo = "seed = \"4\"\n[evaluate]\nreal = \"x.csv\"\n";
  std::stringstream ss;
  save_report(ss, r);
  CHECK(load_report(ss) == r);

  std::istringstream wrong(R"({"format": "evgen-gan"})");
  CHECK_THROWS_AS(load_report(wrong), InputError);

  const auto dir = std::filesystem::temp_directory_path() / "evgen_test_plots";
  std::filesystem::remove_all(dir);
  write_plots(dir, r);
  for (const char* name : {"cdf.svg", "psd.svg", "intervals.svg"}) {
    std::ifstream in(dir / name);
    std::string head;
    std::getline(in, head);
    CHECK(head.find("<svg") != std::string::npos);
  }
  write_sweep_plot(dir / "sweep.svg", 2, {{0.0, r.real_stats}, {1.5, r.synthetic_stats}});
  CHECK(std::filesystem::file_size(dir / "sweep.svg") > 0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("GMM cluster sweep on a three-mode population") {
  const auto pop = evgen::testing::rectangular_three_mode(1500, 21);
  gmm::EmConfig cfg;
  cfg.seed = 3;
  cfg.tol = 1e-6;
  cfg.max_iter = 500;
  const auto sweep = gmm_cluster_sweep(pop.data, {1, 3}, cfg, 1500);
  REQUIRE(sweep.size() == 2);
  CHECK(sweep[0].clusters == 1);
  CHECK(sweep[0].fit.params.weights.size() == 1);
  CHECK(sweep[1].report.ks_distance <= sweep[0].report.ks_distance);
  CHECK(sweep[1].report.synthetic_name == "gmm K=3");

  // Same inputs, same output.
  const auto again = gmm_cluster_sweep(pop.data, {3}, cfg, 1500);
  CHECK(again[0].report == sweep[1].report);

  // A normalized input is compared in raw units.
  const auto from_norm = gmm_cluster_sweep(dataio::normalize(pop.data), {3}, cfg, 1500);
  CHECK(from_norm[0].report.units == "kW");

  try {
    gmm_cluster_sweep(dataio::synth_population(dataio::example_population(1, 5, 1)).data, {50}, cfg, 10);
    FAIL("expected an error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("K=50") != std::string::npos);
  }
}
