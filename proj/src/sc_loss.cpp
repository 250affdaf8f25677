#include "evgen/scgan.hpp"

#include <cmath>
#include <limits>

namespace evgen::scgan {

namespace {

void check_pair_inputs(const Matrix& x, const Matrix& c, const char* who) {
  if (x.rows() < 2) throw InputError(std::string(who) + ": need at least 2 samples");
  if (c.rows() != x.rows())
    throw InputError(std::string(who) + ": condition rows do not match samples");
  if (!x.allFinite() || !c.allFinite())
    throw InputError(std::string(who) + ": non-finite input");
}

// N x N buffers reused across calls. Fresh half-megabyte temporaries on
// every call cost more in page faults than the arithmetic.
struct PairBuffers {
  Matrix gram;    // lower triangle: x_i . x_j, then distances
  Matrix near;    // discrete codes: <c_i, c_j>
  Matrix weight;  // strictly lower: dSC/dd_ij / d_ij
};

PairBuffers& pair_buffers() {
  thread_local PairBuffers buffers;
  return buffers;
}

}  // namespace

// Every term is symmetric in (i, j), so only pairs j < i are formed, one
// row i at a time with the row's pairs as one vector expression.
double sc_loss(const Matrix& x, const Matrix& c, ConditionKind kind, Matrix* grad_x) {
  check_pair_inputs(x, c, "sc_loss");
  const Eigen::Index n = x.rows();
  const double norm = 2.0 / (static_cast<double>(n) * static_cast<double>(n - 1));
  PairBuffers& buf = pair_buffers();

  buf.gram.setZero(n, n);
  buf.gram.selfadjointView<Eigen::Lower>().rankUpdate(x);
  const Eigen::RowVectorXd sq = buf.gram.diagonal().transpose();
  const Matrix ct = c.transpose();
  if (kind == ConditionKind::Discrete) buf.near.noalias() = c * ct;
  if (grad_x) buf.weight.setZero(n, n);
  const double inv_dims = 1.0 / static_cast<double>(c.cols());
  Eigen::RowVectorXd near_row(n);

  double total = 0.0;
  for (Eigen::Index i = 1; i < n; ++i) {
    auto d = buf.gram.row(i).head(i).array();
    const auto sq_j = sq.head(i).array();
    d = (sq[i] + sq_j - 2.0 * d).max(0.0);
    // Near-coincident pairs lose everything to cancellation; redo them from differences.
    if ((d <= 1e-6 * (sq[i] + sq_j)).any()) {
      for (Eigen::Index j = 0; j < i; ++j)
        if (d[j] <= 1e-6 * (sq[i] + sq[j])) d[j] = (x.row(i) - x.row(j)).squaredNorm();
    }
    d = d.sqrt();

    auto near = near_row.head(i).array();
    if (kind == ConditionKind::Discrete) {
      near = buf.near.row(i).head(i).array();
    } else {
      near.setConstant(1.0);
      for (Eigen::Index m = 0; m < ct.rows(); ++m)
        near -= inv_dims * (ct.row(m).head(i).array() - ct(m, i)).abs();
    }
    const auto floored = d.max(kDistanceFloor);
    total += (near * floored + (1.0 - near) / floored).sum();
    if (grad_x) {
      // Zero where the floor is active.
      buf.weight.row(i).head(i) =
          (d > kDistanceFloor).select((near - (1.0 - near) / floored.square()) / floored * norm, 0.0);
    }
  }

  if (grad_x) {
    // grad_i = sum_j W_ij (x_i - x_j) with W = L + L^T.
    const Matrix& lower = buf.weight;
    const Vector row_sum = lower.rowwise().sum() + lower.colwise().sum().transpose();
    *grad_x = row_sum.asDiagonal() * x;
    grad_x->noalias() -= lower.triangularView<Eigen::StrictlyLower>() * x;
    grad_x->noalias() -= lower.transpose().triangularView<Eigen::StrictlyUpper>() * x;
  }
  return norm * total;
}

double sc_loss_naive(const Matrix& x, const Matrix& c, ConditionKind kind) {
  check_pair_inputs(x, c, "sc_loss_naive");
  const Eigen::Index n = x.rows();
  const Eigen::Index features = x.cols();
  const Eigen::Index dims = c.cols();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      double sq = 0.0;
      for (Eigen::Index k = 0; k < features; ++k) {
        const double diff = x(i, k) - x(j, k);
        sq += diff * diff;
      }
      const double d = std::max(std::sqrt(sq), kDistanceFloor);
      if (kind == ConditionKind::Continuous) {
        double pair = 0.0;
        for (Eigen::Index m = 0; m < dims; ++m) {
          const double gap = std::abs(c(i, m) - c(j, m));
          pair += (1.0 - gap) * d + gap / d;
        }
        total += pair / static_cast<double>(dims);
      } else {
        double inner = 0.0;
        for (Eigen::Index m = 0; m < dims; ++m) inner += c(i, m) * c(j, m);
        total += inner * d + (1.0 - inner) / d;
      }
    }
  }
  return total / (static_cast<double>(n) * static_cast<double>(n - 1));
}

namespace {

struct PenaltyPass {
  double value = 0.0;
  Matrix input_grads;  // per-sample grad_x D at the interpolates
};

Matrix interpolate(const Matrix& real, const Matrix& fake, std::uint64_t seed) {
  if (real.rows() != fake.rows() || real.cols() != fake.cols())
    throw InputError("gradient_penalty: real and fake batches differ in shape");
  Rng rng(seed);
  Matrix mixed(real.rows(), real.cols());
  for (Eigen::Index i = 0; i < real.rows(); ++i) {
    const double u = rng.uniform();
    mixed.row(i) = u * real.row(i) + (1.0 - u) * fake.row(i);
  }
  return mixed;
}

PenaltyPass penalty_pass(const nn::Network& critic, const Matrix& mixed, nn::Tape& tape) {
  const Matrix scores = critic.forward(mixed, tape);
  PenaltyPass pass;
  pass.input_grads = critic.backward(tape, Matrix::Ones(scores.rows(), 1), {});
  const Vector norms = pass.input_grads.rowwise().norm();
  pass.value = (norms.array() - 1.0).square().mean();
  return pass;
}

}  // namespace

double gradient_penalty(const nn::Network& critic, const Matrix& real, const Matrix& fake,
                        std::uint64_t seed) {
  nn::Tape tape;
  return penalty_pass(critic, interpolate(real, fake, seed), tape).value;
}

CriticLoss critic_loss(const nn::Network& critic, const Matrix& real, const Matrix& fake,
                       double lambda_gp, std::uint64_t seed, std::span<double> grad) {
  const Eigen::Index n = real.rows();
  if (n < 1 || fake.rows() != n) throw InputError("critic_loss: batch sizes differ");
  const bool with_grad = !grad.empty();
  const double inv_n = 1.0 / static_cast<double>(n);

  nn::Tape tape_real;
  nn::Tape tape_fake;
  const Matrix d_real = critic.forward(real, tape_real);
  const Matrix d_fake = critic.forward(fake, tape_fake);

  CriticLoss loss;
  loss.wasserstein = d_real.mean() - d_fake.mean();
  if (!std::isfinite(loss.wasserstein))
    throw DivergenceError("critic_loss: non-finite Wasserstein term");
  if (with_grad) {
    critic.backward(tape_real, Matrix::Constant(n, 1, -inv_n), grad, false);
    critic.backward(tape_fake, Matrix::Constant(n, 1, inv_n), grad, false);
  }

  if (lambda_gp != 0.0 || !with_grad) {
    nn::Tape tape_mixed;
    const PenaltyPass pass = penalty_pass(critic, interpolate(real, fake, seed), tape_mixed);
    loss.gradient_penalty = pass.value;
    if (!std::isfinite(pass.value))
      throw DivergenceError("critic_loss: non-finite gradient penalty");
    if (with_grad && lambda_gp != 0.0) {
      // d/dtheta sum_n v_n . grad_x D(x_n) with v_n = dGP/dg_n held fixed,
      // i.e. the reverse of the Jacobian-vector product J(x_n) v_n.
      const Vector norms = pass.input_grads.rowwise().norm();
      Matrix v(n, pass.input_grads.cols());
      for (Eigen::Index i = 0; i < n; ++i) {
        const double scale =
            norms[i] > 0.0 ? lambda_gp * 2.0 * inv_n * (norms[i] - 1.0) / norms[i] : 0.0;
        v.row(i) = scale * pass.input_grads.row(i);
      }
      critic.tangent_forward(tape_mixed, v);
      critic.tangent_backward(tape_mixed, Matrix::Ones(n, 1), grad);
    }
  }
  loss.total = -loss.wasserstein + lambda_gp * loss.gradient_penalty;
  return loss;
}

GeneratorLoss generator_loss(const nn::Network& critic, const Matrix& fake, const Matrix& c,
                             double lambda_sc, ConditionKind kind, Matrix* grad_fake) {
  const Eigen::Index n = fake.rows();
  nn::Tape tape;
  const Matrix scores = critic.forward(fake, tape);
  GeneratorLoss loss;
  loss.adversarial = -scores.mean();
  if (!std::isfinite(loss.adversarial))
    throw DivergenceError("generator_loss: non-finite adversarial term");
  Matrix sc_grad;
  loss.sc = sc_loss(fake, c, kind, grad_fake ? &sc_grad : nullptr);
  if (!std::isfinite(loss.sc)) throw DivergenceError("generator_loss: non-finite SC term");
  loss.total = loss.adversarial + lambda_sc * loss.sc;
  if (grad_fake) {
    *grad_fake = critic.backward(tape, Matrix::Constant(n, 1, -1.0 / static_cast<double>(n)), {});
    *grad_fake += lambda_sc * sc_grad;
  }
  return loss;
}

GeneratorLoss generator_loss(const nn::Network& generator, const nn::Network& critic,
                             const LatentBatch& latent, double lambda_sc, std::span<double> grad) {
  nn::Tape tape;
  const Matrix fake = generator.forward(latent.codes(), tape);
  Matrix grad_fake;
  const GeneratorLoss loss =
      generator_loss(critic, fake, latent.c, lambda_sc, latent.kind, grad.empty() ? nullptr : &grad_fake);
  if (!grad.empty()) generator.backward(tape, grad_fake, grad, false);
  return loss;
}

}  // namespace evgen::scgan
