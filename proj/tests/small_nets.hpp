#pragma once

#include "evgen/nn.hpp"
#include "evgen/scgan.hpp"

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

// Reduced networks with the same layer kinds as the full models, small
// enough for finite differencing over every parameter.
namespace evgen::testing {

inline nn::LayerSpec layer(nn::LayerKind kind, int units = 0, std::vector<int> target = {}) {
  nn::LayerSpec s;
  s.kind = kind;
  s.name = nn::to_string(kind) + std::to_string(units);
  s.units = units;
  if (kind == nn::LayerKind::Dense || kind == nn::LayerKind::Conv1d) s.leaky_slope = 0.2;
  s.target = std::move(target);
  return s;
}

// 88 -> 24, 730 parameters.
inline nn::NetworkSpec small_generator_spec() {
  using nn::LayerKind;
  nn::NetworkSpec spec;
  spec.input = {scgan::kLatentDims};
  spec.layers = {layer(LayerKind::Dense, 8), layer(LayerKind::Reshape, 0, {1, 8}),
                 layer(LayerKind::Conv1d, 3), layer(LayerKind::Reshape, 0, {24})};
  return spec;
}

// 24 -> 1, 275 parameters.
inline nn::NetworkSpec small_critic_spec() {
  using nn::LayerKind;
  nn::NetworkSpec spec;
  spec.input = {24};
  spec.layers = {layer(LayerKind::Reshape, 0, {1, 24}), layer(LayerKind::Conv1d, 4),
                 layer(LayerKind::MaxPool),             layer(LayerKind::Conv1d, 2),
                 layer(LayerKind::Reshape, 0, {24}),    layer(LayerKind::Dense, 8),
                 layer(LayerKind::Dense, 1)};
  return spec;
}

// Activation pattern of a piecewise-linear network at `x`: every LeakyReLU
// branch and every pooling winner. Central differences are only meaningful
// when the pattern is the same on both sides of the stencil.
inline std::vector<std::uint8_t> activation_pattern(const nn::Network& net, const Matrix& x) {
  nn::Tape tape;
  net.forward(x, tape);
  std::vector<std::uint8_t> out;
  for (const auto& chunk : tape.chunks)
    for (const auto& cache : chunk) {
      for (Eigen::Index i = 0; i < cache.slope.size(); ++i)
        out.push_back(cache.slope.data()[i] == 1.0 ? 1 : 0);
      out.insert(out.end(), cache.choice.begin(), cache.choice.end());
    }
  return out;
}

// Patterns of every point the critic loss evaluates: real, fake and the
// interpolates drawn from `seed` (one uniform per row).
inline std::vector<std::uint8_t> critic_loss_pattern(const nn::Network& critic, const Matrix& real,
                                                     const Matrix& fake, std::uint64_t seed) {
  Rng rng(seed);
  Matrix all(3 * real.rows(), real.cols());
  all << real, fake, Matrix::Zero(real.rows(), real.cols());
  for (Eigen::Index i = 0; i < real.rows(); ++i) {
    const double u = rng.uniform();
    all.row(2 * real.rows() + i) = u * real.row(i) + (1.0 - u) * fake.row(i);
  }
  return activation_pattern(critic, all);
}

inline std::vector<std::uint8_t> generator_loss_pattern(const nn::Network& generator,
                                                        const nn::Network& critic,
                                                        const Matrix& codes) {
  auto out = activation_pattern(generator, codes);
  const auto second = activation_pattern(critic, generator.forward(codes));
  out.insert(out.end(), second.begin(), second.end());
  return out;
}

struct GradCheck {
  double worst_relative = 0.0;  // per entry, max(|a|, |fd|, floor) as denominator
  double norm_relative = 0.0;   // ||a - fd|| / max(||a||, ||fd||)
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // stencil crossed a kink
};

// Central differences of `f` over every entry of `params`, compared with
// `analytic`. `pattern` (optional) fingerprints the piecewise-linear region;
// entries whose stencil leaves the region are skipped.
inline GradCheck check_gradient(std::span<double> params, const std::vector<double>& analytic,
                                const std::function<double()>& f, double step = 1e-3,
                                const std::function<std::vector<std::uint8_t>()>& pattern = {},
                                double floor = 1e-6) {
  GradCheck out;
  const auto base = pattern ? pattern() : std::vector<std::uint8_t>{};
  double diff2 = 0.0, a2 = 0.0, fd2 = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double keep = params[k];
    params[k] = keep + step;
    const double up = f();
    const bool up_same = !pattern || pattern() == base;
    params[k] = keep - step;
    const double down = f();
    const bool down_same = !pattern || pattern() == base;
    params[k] = keep;
    if (!up_same || !down_same) {
      ++out.skipped;
      continue;
    }
    const double fd = (up - down) / (2 * step);
    const double rel =
        std::abs(fd - analytic[k]) / std::max({std::abs(fd), std::abs(analytic[k]), floor});
    if (rel > out.worst_relative) {
      out.worst_relative = rel;
      out.worst_index = k;
    }
    diff2 += (fd - analytic[k]) * (fd - analytic[k]);
    a2 += analytic[k] * analytic[k];
    fd2 += fd * fd;
    ++out.checked;
  }
  out.norm_relative = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(fd2), floor});
  return out;
}

}  // namespace evgen::testing
