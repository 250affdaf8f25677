#include "evgen/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace evgen::nn {

int Shape::size() const {
  return std::accumulate(dims.begin(), dims.end(), 1, std::multiplies<>());
}

std::string Shape::str() const {
  std::ostringstream os;
  os << "(N";
  for (const int d : dims) os << ", " << d;
  os << ')';
  return os.str();
}

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv1d: return "conv1d";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Reshape: return "reshape";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& name) {
  if (name == "dense") return LayerKind::Dense;
  if (name == "conv1d") return LayerKind::Conv1d;
  if (name == "maxpool") return LayerKind::MaxPool;
  if (name == "reshape") return LayerKind::Reshape;
  throw InputError("unknown layer kind '" + name + "'");
}

namespace {

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;

// (N, L * C) channels-last -> (N * L, K * C) patches with replicate padding.
Matrix im2col(const Matrix& x, int channels, int length, int kernel) {
  const Eigen::Index n = x.rows();
  const int pad = kernel / 2;
  Matrix cols(n * length, static_cast<Eigen::Index>(kernel) * channels);
  for (Eigen::Index s = 0; s < n; ++s) {
    const double* src = x.row(s).data();
    for (int t = 0; t < length; ++t) {
      double* dst = cols.row(s * length + t).data();
      for (int j = 0; j < kernel; ++j) {
        const int from = std::clamp(t + j - pad, 0, length - 1);
        std::copy_n(src + static_cast<std::ptrdiff_t>(from) * channels, channels,
                    dst + static_cast<std::ptrdiff_t>(j) * channels);
      }
    }
  }
  return cols;
}

Matrix col2im(const Matrix& cols, Eigen::Index n, int channels, int length, int kernel) {
  const int pad = kernel / 2;
  Matrix x = Matrix::Zero(n, static_cast<Eigen::Index>(length) * channels);
  for (Eigen::Index s = 0; s < n; ++s) {
    double* dst = x.row(s).data();
    for (int t = 0; t < length; ++t) {
      const double* src = cols.row(s * length + t).data();
      for (int j = 0; j < kernel; ++j) {
        const int to = std::clamp(t + j - pad, 0, length - 1);
        double* d = dst + static_cast<std::ptrdiff_t>(to) * channels;
        const double* c = src + static_cast<std::ptrdiff_t>(j) * channels;
        for (int ch = 0; ch < channels; ++ch) d[ch] += c[ch];
      }
    }
  }
  return x;
}

void apply_activation(Matrix& y, const std::optional<double>& slope, LayerCache* cache) {
  if (!slope) return;
  const double a = *slope;
  double* v = y.data();
  const Eigen::Index n = y.size();
  if (cache) {
    cache->slope.resize(y.rows(), y.cols());
    double* d = cache->slope.data();
    for (Eigen::Index i = 0; i < n; ++i) {
      d[i] = v[i] > 0.0 ? 1.0 : a;
      v[i] *= d[i];
    }
  } else {
    for (Eigen::Index i = 0; i < n; ++i) v[i] = v[i] > 0.0 ? v[i] : a * v[i];
  }
}

void mask_in_place(Matrix& g, const std::optional<double>& slope, const LayerCache& cache) {
  if (slope) g.array() *= cache.slope.array();
}

struct ForwardVisitor {
  std::span<const double> params;
  const Matrix& x;
  LayerCache* cache;

  Matrix operator()(const Dense& d) const {
    const ConstMap w(params.data() + d.offset, d.out, d.in);
    const Eigen::Map<const Eigen::RowVectorXd> b(params.data() + d.offset + d.out * d.in, d.out);
    Matrix y = x * w.transpose();
    y.rowwise() += b;
    if (cache) cache->input = x;
    apply_activation(y, d.slope, cache);
    return y;
  }

  Matrix operator()(const Conv1d& c) const {
    const ConstMap w(params.data() + c.offset, c.out_channels, c.kernel * c.in_channels);
    const Eigen::Map<const Eigen::RowVectorXd> b(
        params.data() + c.offset + c.out_channels * c.kernel * c.in_channels, c.out_channels);
    Matrix cols = im2col(x, c.in_channels, c.length, c.kernel);
    Matrix y_cols = cols * w.transpose();
    y_cols.rowwise() += b;
    if (cache) cache->cols = std::move(cols);
    // (N * L, C_out) and (N, L * C_out) share the same row-major layout.
    y_cols.resize(x.rows(), static_cast<Eigen::Index>(c.length) * c.out_channels);
    apply_activation(y_cols, c.slope, cache);
    return y_cols;
  }

  Matrix operator()(const MaxPool& p) const {
    const int out_len = p.length / p.pool;
    Matrix y(x.rows(), static_cast<Eigen::Index>(out_len) * p.channels);
    if (cache) cache->choice.assign(static_cast<std::size_t>(y.size()), 0);
    for (Eigen::Index s = 0; s < x.rows(); ++s) {
      for (int t = 0; t < out_len; ++t) {
        for (int ch = 0; ch < p.channels; ++ch) {
          int best = 0;
          double v = x(s, static_cast<Eigen::Index>(t) * p.pool * p.channels + ch);
          for (int j = 1; j < p.pool; ++j) {
            const double cand = x(s, (static_cast<Eigen::Index>(t) * p.pool + j) * p.channels + ch);
            if (cand > v) {
              v = cand;
              best = j;
            }
          }
          const Eigen::Index o = static_cast<Eigen::Index>(t) * p.channels + ch;
          y(s, o) = v;
          if (cache) cache->choice[static_cast<std::size_t>(s * y.cols() + o)] = static_cast<std::uint8_t>(best);
        }
      }
    }
    return y;
  }

  Matrix operator()(const Reshape&) const { return x; }
};

Matrix pool_scatter(const MaxPool& p, const LayerCache& cache, const Matrix& g) {
  const int out_len = p.length / p.pool;
  Matrix gx = Matrix::Zero(g.rows(), static_cast<Eigen::Index>(p.length) * p.channels);
  for (Eigen::Index s = 0; s < g.rows(); ++s) {
    for (int t = 0; t < out_len; ++t) {
      for (int ch = 0; ch < p.channels; ++ch) {
        const Eigen::Index o = static_cast<Eigen::Index>(t) * p.channels + ch;
        const int j = cache.choice[static_cast<std::size_t>(s * g.cols() + o)];
        gx(s, (static_cast<Eigen::Index>(t) * p.pool + j) * p.channels + ch) += g(s, o);
      }
    }
  }
  return gx;
}

Matrix pool_gather(const MaxPool& p, const LayerCache& cache, const Matrix& x) {
  const int out_len = p.length / p.pool;
  Matrix y(x.rows(), static_cast<Eigen::Index>(out_len) * p.channels);
  for (Eigen::Index s = 0; s < x.rows(); ++s) {
    for (int t = 0; t < out_len; ++t) {
      for (int ch = 0; ch < p.channels; ++ch) {
        const Eigen::Index o = static_cast<Eigen::Index>(t) * p.channels + ch;
        const int j = cache.choice[static_cast<std::size_t>(s * y.cols() + o)];
        y(s, o) = x(s, (static_cast<Eigen::Index>(t) * p.pool + j) * p.channels + ch);
      }
    }
  }
  return y;
}

// Shared reverse pass for the layer map (bias = true) and its linearization
// (bias = false). `input` / `cols` are whatever the matching forward consumed.
struct BackwardVisitor {
  std::span<const double> params;
  std::span<double> grads;
  const LayerCache& cache;
  Matrix& grad_out;  // consumed
  bool bias;
  bool want_input;

  Matrix operator()(const Dense& d) const {
    const Matrix& input = bias ? cache.input : cache.tangent_input;
    Matrix& g = grad_out;
    mask_in_place(g, d.slope, cache);
    if (!grads.empty()) {
      MutMap gw(grads.data() + d.offset, d.out, d.in);
      gw.noalias() += g.transpose() * input;
      if (bias) {
        Eigen::Map<Eigen::RowVectorXd> gb(grads.data() + d.offset + d.out * d.in, d.out);
        gb += g.colwise().sum();
      }
    }
    if (!want_input) return {};
    const ConstMap w(params.data() + d.offset, d.out, d.in);
    return g * w;
  }

  Matrix operator()(const Conv1d& c) const {
    const Matrix& cols = bias ? cache.cols : cache.tangent_cols;
    Matrix& g = grad_out;
    mask_in_place(g, c.slope, cache);
    const ConstMap g_cols(g.data(), g.rows() * c.length, c.out_channels);
    const Eigen::Index width = static_cast<Eigen::Index>(c.kernel) * c.in_channels;
    if (!grads.empty()) {
      MutMap gw(grads.data() + c.offset, c.out_channels, width);
      gw.noalias() += g_cols.transpose() * cols;
      if (bias) {
        Eigen::Map<Eigen::RowVectorXd> gb(grads.data() + c.offset + c.out_channels * width,
                                          c.out_channels);
        gb += g_cols.colwise().sum();
      }
    }
    if (!want_input) return {};
    const ConstMap w(params.data() + c.offset, c.out_channels, width);
    const Matrix d_cols = g_cols * w;
    return col2im(d_cols, g.rows(), c.in_channels, c.length, c.kernel);
  }

  Matrix operator()(const MaxPool& p) const { return pool_scatter(p, cache, grad_out); }

  Matrix operator()(const Reshape&) const { return grad_out; }
};

}  // namespace

Network Network::build(const NetworkSpec& spec, std::uint64_t seed) {
  Network net;
  net.spec_ = spec;
  net.input_shape_ = Shape{spec.input};
  if (spec.input.empty() || net.input_shape_.size() <= 0)
    throw InputError("network input shape must be non-empty");
  if (spec.layers.empty()) throw InputError("network has no layers");
  Shape current = net.input_shape_;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& ls = spec.layers[i];
    const std::string where = "layer " + std::to_string(i) + " '" + ls.name + "' (" +
                              to_string(ls.kind) + "): ";
    switch (ls.kind) {
      case LayerKind::Dense: {
        if (current.dims.size() != 1)
          throw InputError(where + "expects a flat input, got " + current.str());
        if (ls.units < 1) throw InputError(where + "units must be positive");
        Dense d{current.dims[0], ls.units, ls.leaky_slope, offset};
        offset += d.parameter_count();
        net.layers_.emplace_back(d);
        current = Shape{{ls.units}};
        break;
      }
      case LayerKind::Conv1d: {
        if (current.dims.size() != 2)
          throw InputError(where + "expects a (channels, length) input, got " + current.str());
        if (ls.units < 1) throw InputError(where + "filters must be positive");
        if (ls.kernel < 1 || ls.kernel % 2 == 0)
          throw InputError(where + "kernel size must be odd for length-preserving padding");
        Conv1d c{current.dims[0], ls.units, current.dims[1], ls.kernel, ls.leaky_slope, offset};
        offset += c.parameter_count();
        net.layers_.emplace_back(c);
        current = Shape{{ls.units, current.dims[1]}};
        break;
      }
      case LayerKind::MaxPool: {
        if (current.dims.size() != 2)
          throw InputError(where + "expects a (channels, length) input, got " + current.str());
        if (ls.pool < 1 || current.dims[1] % ls.pool != 0)
          throw InputError(where + "length " + std::to_string(current.dims[1]) +
                           " is not divisible by pool size " + std::to_string(ls.pool));
        net.layers_.emplace_back(MaxPool{current.dims[0], current.dims[1], ls.pool});
        current = Shape{{current.dims[0], current.dims[1] / ls.pool}};
        break;
      }
      case LayerKind::Reshape: {
        Shape target{ls.target};
        if (ls.target.empty() || target.size() != current.size())
          throw InputError(where + "cannot reshape " + current.str() + " to " + target.str());
        // Channels-last storage makes (C, L) -> (C*L) a pure relabelling, but
        // (F) -> (C, L) with C > 1 would silently transpose.
        if (target.dims.size() == 2 && current.dims.size() == 1 && target.dims[0] != 1)
          throw InputError(where + "expanding a flat input needs a single channel");
        net.layers_.emplace_back(Reshape{});
        current = target;
        break;
      }
    }
    net.shapes_.push_back(current);
  }

  net.params_.assign(offset, 0.0);
  Rng rng(seed);
  for (const Layer& layer : net.layers_) {
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, Dense> || std::is_same_v<T, Conv1d>) {
            int fan_in = 0;
            if constexpr (std::is_same_v<T, Dense>) fan_in = l.in;
            else fan_in = l.in_channels * l.kernel;
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (std::size_t k = 0; k < l.parameter_count(); ++k)
              net.params_[l.offset + k] = rng.uniform(-bound, bound);
          }
        },
        layer);
  }
  return net;
}

namespace {

// Runs `chunk(first, rows)` over consecutive row ranges and stacks the results.
template <class F>
Matrix over_chunks(Eigen::Index n, F&& chunk) {
  Matrix out;
  for (Eigen::Index first = 0; first < n; first += kChunkRows) {
    const Eigen::Index rows = std::min(kChunkRows, n - first);
    Matrix part = chunk(first, rows);
    if (part.size() == 0) continue;
    if (out.size() == 0) out.resize(n, part.cols());
    out.middleRows(first, rows) = part;
  }
  return out;
}

}  // namespace

Matrix Network::forward_chunk(Matrix x, std::vector<LayerCache>* caches) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    LayerCache* cache = caches ? &(*caches)[i] : nullptr;
    x = std::visit(ForwardVisitor{params_, x, cache}, layers_[i]);
  }
  return x;
}

Matrix Network::backward_chunk(const std::vector<LayerCache>& caches, Matrix g,
                               std::span<double> grads, bool bias, bool want_input_grad) const {
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const bool want = want_input_grad || i > 0;
    g = std::visit(BackwardVisitor{params_, grads, caches[i], g, bias, want}, layers_[i]);
  }
  return g;
}

Matrix Network::tangent_forward_chunk(std::vector<LayerCache>& caches, Matrix t) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    LayerCache& cache = caches[i];
    t = std::visit(
        [&](const auto& l) -> Matrix {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, Dense>) {
            const ConstMap w(params_.data() + l.offset, l.out, l.in);
            cache.tangent_input = t;
            Matrix y = t * w.transpose();
            mask_in_place(y, l.slope, cache);
            return y;
          } else if constexpr (std::is_same_v<T, Conv1d>) {
            const ConstMap w(params_.data() + l.offset, l.out_channels, l.kernel * l.in_channels);
            cache.tangent_cols = im2col(t, l.in_channels, l.length, l.kernel);
            Matrix y_cols = cache.tangent_cols * w.transpose();
            y_cols.resize(t.rows(), static_cast<Eigen::Index>(l.length) * l.out_channels);
            mask_in_place(y_cols, l.slope, cache);
            return y_cols;
          } else if constexpr (std::is_same_v<T, MaxPool>) {
            return pool_gather(l, cache, t);
          } else {
            return t;
          }
        },
        layers_[i]);
  }
  return t;
}

Matrix Network::forward(const Matrix& x) const {
  if (x.cols() != input_shape_.size())
    throw InputError("network input has " + std::to_string(x.cols()) + " columns, expected " +
                     std::to_string(input_shape_.size()));
  return over_chunks(x.rows(), [&](Eigen::Index first, Eigen::Index rows) {
    return forward_chunk(x.middleRows(first, rows), nullptr);
  });
}

Matrix Network::forward(const Matrix& x, Tape& tape) const {
  if (x.cols() != input_shape_.size())
    throw InputError("network input has " + std::to_string(x.cols()) + " columns, expected " +
                     std::to_string(input_shape_.size()));
  tape.batch = x.rows();
  tape.chunks.assign(static_cast<std::size_t>((x.rows() + kChunkRows - 1) / kChunkRows),
                     std::vector<LayerCache>(layers_.size()));
  return over_chunks(x.rows(), [&](Eigen::Index first, Eigen::Index rows) {
    return forward_chunk(x.middleRows(first, rows),
                         &tape.chunks[static_cast<std::size_t>(first / kChunkRows)]);
  });
}

namespace {

// Eigen picks kernels by the alignment of the destination, so gradients are
// accumulated in an aligned scratch buffer and then added to the caller's.
// Otherwise the rounding would depend on where the caller's buffer lives.
template <typename F>
Matrix with_aligned_grads(std::span<double> grads, F&& body) {
  if (grads.empty()) return body(std::span<double>{});
  std::vector<double, Eigen::aligned_allocator<double>> scratch(grads.size(), 0.0);
  Matrix out = body(std::span<double>(scratch));
  for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += scratch[i];
  return out;
}

}  // namespace

Matrix Network::backward(const Tape& tape, const Matrix& grad_out, std::span<double> grad_params,
                         bool want_input_grad) const {
  if (!grad_params.empty() && grad_params.size() != params_.size())
    throw std::invalid_argument("backward: gradient buffer has wrong size");
  if (grad_out.rows() != tape.batch)
    throw std::invalid_argument("backward: tape does not match this batch");
  return with_aligned_grads(grad_params, [&](std::span<double> grads) {
    return over_chunks(grad_out.rows(), [&](Eigen::Index first, Eigen::Index rows) {
      return backward_chunk(tape.chunks[static_cast<std::size_t>(first / kChunkRows)],
                            grad_out.middleRows(first, rows), grads, true, want_input_grad);
    });
  });
}

Matrix Network::tangent_forward(Tape& tape, const Matrix& tangent_in) const {
  if (tangent_in.rows() != tape.batch || tape.chunks.empty() ||
      tape.chunks.front().size() != layers_.size())
    throw std::invalid_argument("tangent_forward: tape does not match this batch");
  return over_chunks(tangent_in.rows(), [&](Eigen::Index first, Eigen::Index rows) {
    return tangent_forward_chunk(tape.chunks[static_cast<std::size_t>(first / kChunkRows)],
                                 tangent_in.middleRows(first, rows));
  });
}

Matrix Network::tangent_backward(const Tape& tape, const Matrix& grad_tangent_out,
                                 std::span<double> grad_params, bool want_input_grad) const {
  if (!grad_params.empty() && grad_params.size() != params_.size())
    throw std::invalid_argument("tangent_backward: gradient buffer has wrong size");
  if (grad_tangent_out.rows() != tape.batch)
    throw std::invalid_argument("tangent_backward: tape does not match this batch");
  return with_aligned_grads(grad_params, [&](std::span<double> grads) {
    return over_chunks(grad_tangent_out.rows(), [&](Eigen::Index first, Eigen::Index rows) {
      return backward_chunk(tape.chunks[static_cast<std::size_t>(first / kChunkRows)],
                            grad_tangent_out.middleRows(first, rows), grads, false,
                            want_input_grad);
    });
  });
}

Adam::Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw std::invalid_argument("Adam::step: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

}  // namespace evgen::nn
