#pragma once

#include "evgen/common.hpp"
#include "evgen/dataio.hpp"
#include "evgen/eval.hpp"
#include "evgen/nn.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace evgen::scgan {

inline constexpr int kNoiseDims = 80;
inline constexpr int kConditionDims = 8;
inline constexpr int kLatentDims = kNoiseDims + kConditionDims;
inline constexpr double kLeakySlope = 0.2;
/// Pairwise distances below this are clamped before the 1/d term.
inline constexpr double kDistanceFloor = 1e-8;

enum class ConditionKind { Continuous, Discrete };

std::string to_string(ConditionKind kind);
ConditionKind condition_kind_from_string(const std::string& name);

/// Dense(150) -> (1,150) -> Conv1d 32/16/8/1 -> (150) -> Dense 125/100/96, LeakyReLU(0.2) throughout.
nn::NetworkSpec generator_spec();
/// (1,96) -> Conv1d 32, pool -> Conv1d 16, pool -> Conv1d 8 -> (192) -> Dense 50/15/1.
nn::NetworkSpec critic_spec();

/// Builds a generator; the spec must map (N, 88) to (N, 96).
nn::Network build_generator(const nn::NetworkSpec& spec, std::uint64_t seed);
/// Builds a critic; the spec must map (N, 96) to (N, 1).
nn::Network build_critic(const nn::NetworkSpec& spec, std::uint64_t seed);

struct LatentBatch {
  Matrix z;  // n x 80, unif(0,1)
  Matrix c;  // n x 8, unif(0,1) or one-hot
  ConditionKind kind = ConditionKind::Continuous;

  Eigen::Index size() const { return z.rows(); }
  /// [z, c], n x 88.
  Matrix codes() const;
};

/// Discrete codes are one-hot over the first `categories` of the 8 slots.
LatentBatch sample_latent(Eigen::Index n, ConditionKind kind, Rng& rng,
                          int categories = kConditionDims);
LatentBatch sample_latent(Eigen::Index n, ConditionKind kind, std::uint64_t seed,
                          int categories = kConditionDims);

/// Similarity constraint over all ordered pairs i != j, averaged by N(N-1).
/// Continuous codes average the per-dimension terms. Vectorized; fills
/// `grad_x` (N x 96) with dSC/dx when non-null.
double sc_loss(const Matrix& x, const Matrix& c, ConditionKind kind, Matrix* grad_x = nullptr);

/// Same contract as sc_loss, evaluated pair by pair with explicit loops.
double sc_loss_naive(const Matrix& x, const Matrix& c, ConditionKind kind);

/// mean_n (||grad_x D(x_hat_n)|| - 1)^2 at x_hat = u * real + (1 - u) * fake,
/// one u ~ unif(0,1) per sample.
double gradient_penalty(const nn::Network& critic, const Matrix& real, const Matrix& fake,
                        std::uint64_t seed);

struct CriticLoss {
  double total = 0.0;
  double wasserstein = 0.0;  // mean D(real) - mean D(fake)
  double gradient_penalty = 0.0;
};

/// mean D(fake) - mean D(real) + lambda_gp * GP. Accumulates the parameter
/// gradient into `grad` when it is non-empty.
CriticLoss critic_loss(const nn::Network& critic, const Matrix& real, const Matrix& fake,
                       double lambda_gp, std::uint64_t seed, std::span<double> grad = {});

struct GeneratorLoss {
  double total = 0.0;
  double adversarial = 0.0;  // -mean D(fake)
  double sc = 0.0;
};

/// -mean D(fake) + lambda_sc * SC(fake, c). Fills dL/dfake when non-null.
GeneratorLoss generator_loss(const nn::Network& critic, const Matrix& fake, const Matrix& c,
                             double lambda_sc, ConditionKind kind, Matrix* grad_fake = nullptr);

/// generator_loss at G(codes), with the generator parameter gradient
/// accumulated into `grad`.
GeneratorLoss generator_loss(const nn::Network& generator, const nn::Network& critic,
                             const LatentBatch& latent, double lambda_sc, std::span<double> grad);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
};

/// Halve the learning rate when the Wasserstein estimate has not reached a
/// new minimum for `patience` epochs, counting from epoch patience + 1.
/// patience == 0 disables scheduling.
struct PlateauConfig {
  int patience = 50;
  double factor = 0.5;
  double min_lr = 1e-7;
};

struct TrainConfig {
  int batch_size = 256;
  double lambda_gp = 10.0;
  double lambda_sc = 0.1;
  int n_critic = 5;
  AdamConfig adam;
  PlateauConfig plateau;
  int epochs = 1;
  ConditionKind kind = ConditionKind::Continuous;
  int categories = kConditionDims;
  std::uint64_t seed = 0;
  int checkpoint_every = 50;
  /// Checkpoints are written only when set.
  std::filesystem::path checkpoint_dir;
  /// Generated curves used to score the best-KS checkpoint.
  int eval_samples = 512;
};

struct TraceRow {
  int epoch = 0;
  double critic_loss = 0.0;
  double wasserstein_estimate = 0.0;
  double gp_term = 0.0;
  double sc_term = 0.0;
  double lr = 0.0;

  bool operator==(const TraceRow&) const = default;
};

struct GanModel {
  nn::Network generator;
  nn::Network critic;
  ConditionKind kind = ConditionKind::Continuous;
  int categories = kConditionDims;
  dataio::NormalizationStats normalization;
  TrainConfig config;
  int epochs_trained = 0;
  std::vector<TraceRow> trace;
};

/// Called after every epoch with the latest trace row.
using EpochCallback = std::function<void(const GanModel&, const TraceRow&)>;

/// Alternates n_critic critic updates with one generator update; an epoch is
/// floor(N / batch_size) generator updates. Throws DivergenceError (carrying
/// the last checkpoint path) on a non-finite loss.
GanModel train(const dataio::LoadCurveDataset& train_set, const TrainConfig& cfg,
               const EpochCallback& on_epoch = {});

struct GenerateResult {
  dataio::LoadCurveDataset data;  // raw kW
  double clamp_rate = 0.0;        // fraction of outputs floored at 0
};

/// Generator forward pass, denormalized, negatives floored at 0. Continuous
/// codes may lie outside [0, 1].
GenerateResult generate(const GanModel& model, const LatentBatch& codes);

/// Curves for one discrete category (fresh z, fixed one-hot c).
GenerateResult generate_category(const GanModel& model, int category, int n, std::uint64_t seed);

struct SweepEntry {
  double value = 0.0;
  eval::SummaryStats stats;
};

/// For each value, fixes c[var_index] and summarizes `n_per_value` curves.
std::vector<SweepEntry> condition_sweep(const GanModel& model, int var_index,
                                        const std::vector<double>& values, int n_per_value,
                                        std::uint64_t seed);

void save_model(std::ostream& out, const GanModel& model);
void save_model(const std::filesystem::path& path, const GanModel& model);
GanModel load_model(std::istream& in);
GanModel load_model(const std::filesystem::path& path);

/// CSV `epoch,critic_loss,wasserstein_estimate,gp_term,sc_term,lr`.
void write_trace(std::ostream& out, const std::vector<TraceRow>& trace);

}  // namespace evgen::scgan
