#pragma once

#include "evgen/common.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

// Small feed-forward networks over batches stored one sample per row.
//
// Channel tensors (C, L) are stored channels-last within a row: element
// (c, t) lives at column t * C + c. Besides the usual forward/backward pair,
// every layer implements the pass of its linearization around the recorded
// forward (tangent_forward) and the reverse of that pass (tangent_backward).
// The networks here are piecewise linear, so the linearization is the
// layer without its bias under the recorded activation pattern; that is what
// makes the gradient of an input-gradient penalty computable exactly.
namespace evgen::nn {

/// Per-sample shape, batch dimension excluded: {F} or {C, L}.
struct Shape {
  std::vector<int> dims;

  int size() const;
  std::string str() const;
  bool operator==(const Shape&) const = default;
};

enum class LayerKind { Dense, Conv1d, MaxPool, Reshape };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  std::string name;
  int units = 0;   // Dense units or Conv1d filters
  int kernel = 5;  // Conv1d, odd
  int pool = 2;    // MaxPool
  std::optional<double> leaky_slope;  // fused LeakyReLU after Dense/Conv1d
  std::vector<int> target;            // Reshape
};

struct NetworkSpec {
  std::vector<int> input;
  std::vector<LayerSpec> layers;
};

struct LayerCache {
  Matrix input;          // Dense
  Matrix cols;           // Conv1d, im2col of the input
  Matrix slope;          // activation derivative, Dense/Conv1d with LeakyReLU
  std::vector<std::uint8_t> choice;  // MaxPool winners
  Matrix tangent_input;  // Dense
  Matrix tangent_cols;   // Conv1d
};

/// Batches are processed in row chunks of this size so that the im2col
/// buffers of one chunk stay in cache.
inline constexpr Eigen::Index kChunkRows = 32;

struct Tape {
  std::vector<std::vector<LayerCache>> chunks;  // chunk -> layer
  Eigen::Index batch = 0;
};

struct Dense {
  int in = 0;
  int out = 0;
  std::optional<double> slope;
  std::size_t offset = 0;

  std::size_t parameter_count() const { return static_cast<std::size_t>(out) * (in + 1); }
};

struct Conv1d {
  int in_channels = 0;
  int out_channels = 0;
  int length = 0;
  int kernel = 5;
  std::optional<double> slope;
  std::size_t offset = 0;

  std::size_t parameter_count() const {
    return static_cast<std::size_t>(out_channels) * (kernel * in_channels + 1);
  }
};

struct MaxPool {
  int channels = 0;
  int length = 0;  // input length
  int pool = 2;
};

struct Reshape {};

using Layer = std::variant<Dense, Conv1d, MaxPool, Reshape>;

class Network {
 public:
  Network() = default;

  /// Validates shapes layer by layer (InputError names the offending layer)
  /// and draws weights and biases from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static Network build(const NetworkSpec& spec, std::uint64_t seed);

  const NetworkSpec& spec() const { return spec_; }
  const Shape& input_shape() const { return input_shape_; }
  /// Output shape after each layer, in order.
  const std::vector<Shape>& layer_shapes() const { return shapes_; }
  const Shape& output_shape() const { return shapes_.back(); }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

  Matrix forward(const Matrix& x) const;
  Matrix forward(const Matrix& x, Tape& tape) const;

  /// Backpropagates `grad_out` through the recorded forward pass. Parameter
  /// gradients are accumulated into `grad_params` unless it is empty. Returns
  /// the input gradient (empty matrix when `want_input_grad` is false).
  Matrix backward(const Tape& tape, const Matrix& grad_out, std::span<double> grad_params,
                  bool want_input_grad = true) const;

  /// Jacobian-vector product at the recorded forward pass, per sample.
  Matrix tangent_forward(Tape& tape, const Matrix& tangent_in) const;

  /// Reverse of tangent_forward: accumulates d<grad_tangent_out, J v>/d(params).
  Matrix tangent_backward(const Tape& tape, const Matrix& grad_tangent_out,
                          std::span<double> grad_params, bool want_input_grad = false) const;

 private:
  Matrix forward_chunk(Matrix x, std::vector<LayerCache>* caches) const;
  Matrix backward_chunk(const std::vector<LayerCache>& caches, Matrix g, std::span<double> grads,
                        bool bias, bool want_input_grad) const;
  Matrix tangent_forward_chunk(std::vector<LayerCache>& caches, Matrix t) const;

  NetworkSpec spec_;
  Shape input_shape_;
  std::vector<Shape> shapes_;
  std::vector<Layer> layers_;
  // 64-byte aligned so that the vectorized kernels take the same path for
  // every copy of a network.
  std::vector<double, Eigen::aligned_allocator<double>> params_;
};

/// ADAM with bias correction.
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, double lr, double beta1, double beta2, double eps = 1e-8);

  void step(std::span<double> params, std::span<const double> grads);

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  long steps() const { return t_; }

 private:
  double lr_ = 1e-4;
  double beta1_ = 0.5;
  double beta2_ = 0.9;
  double eps_ = 1e-8;
  long t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

}  // namespace evgen::nn
