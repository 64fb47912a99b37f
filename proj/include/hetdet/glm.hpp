#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>

#include "hetdet/errors.hpp"

// Per-block M-estimation: squared-error and logistic losses, a damped Newton
// solver, and the sandwich covariance estimator. Everything is templated on
// the scalar and written against Eigen expressions.

namespace hetdet {

template <typename Scalar = double>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar = double>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

enum class ModelKind { linear, logistic };

inline const char* model_name(ModelKind kind) {
  return kind == ModelKind::linear ? "linear" : "logistic";
}

template <typename Scalar = double>
struct BlockData {
  std::int64_t block_id = 0;
  MatrixX<Scalar> design;    // n x p, one observation per row
  VectorX<Scalar> response;  // length n

  Eigen::Index rows() const { return design.rows(); }
  Eigen::Index dims() const { return design.cols(); }
};

template <typename Scalar = double>
struct LocalFit {
  std::int64_t block_id = 0;
  VectorX<Scalar> theta_hat;
  MatrixX<Scalar> cov_hat;    // sandwich covariance of sqrt(n)(theta_hat - theta*)
  VectorX<Scalar> sigma_hat;  // sqrt of the cov_hat diagonal
  Eigen::Index n_used = 0;
  bool converged = false;
  int iterations = 0;
  bool degenerate = false;    // some sandwich diagonal is not positive (perfect fit)
};

namespace detail {

template <typename Scalar>
Scalar sigmoid(Scalar eta) {
  if (eta >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-eta));
  const Scalar e = std::exp(eta);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Scalar softplus(Scalar eta) {
  const Scalar hi = eta > Scalar(0) ? eta : Scalar(0);
  return hi + std::log1p(std::exp(-std::abs(eta)));
}

}  // namespace detail

// Per-observation loss m(theta; x, y). The block objective is the average of
// these over the block; gradients and Hessians below follow that convention.
template <typename Scalar = double>
struct LossModel {
  ModelKind kind = ModelKind::linear;

  Scalar value(const Eigen::Ref<const VectorX<Scalar>>& x, Scalar y,
               const Eigen::Ref<const VectorX<Scalar>>& theta) const {
    const Scalar eta = x.dot(theta);
    if (kind == ModelKind::linear) {
      const Scalar r = y - eta;
      return Scalar(0.5) * r * r;
    }
    return detail::softplus(eta) - y * eta;
  }

  VectorX<Scalar> gradient(const Eigen::Ref<const VectorX<Scalar>>& x, Scalar y,
                           const Eigen::Ref<const VectorX<Scalar>>& theta) const {
    const Scalar eta = x.dot(theta);
    const Scalar u = kind == ModelKind::linear ? eta - y
                                               : detail::sigmoid(eta) - y;
    return u * x;
  }

  MatrixX<Scalar> hessian(const Eigen::Ref<const VectorX<Scalar>>& x, Scalar /*y*/,
                          const Eigen::Ref<const VectorX<Scalar>>& theta) const {
    Scalar w = Scalar(1);
    if (kind == ModelKind::logistic) {
      const Scalar s = detail::sigmoid(x.dot(theta));
      w = s * (Scalar(1) - s);
    }
    return w * (x * x.transpose());
  }
};

inline LossModel<double> linear_loss() { return {ModelKind::linear}; }
inline LossModel<double> logistic_loss() { return {ModelKind::logistic}; }

// average loss over the block
template <typename Scalar>
Scalar block_loss(const BlockData<Scalar>& data, const LossModel<Scalar>& model,
                  const VectorX<Scalar>& theta) {
  const auto eta = (data.design * theta).array();
  const auto y = data.response.array();
  if (model.kind == ModelKind::linear)
    return Scalar(0.5) * (y - eta).square().mean();
  return (eta.max(Scalar(0)) + (-eta.abs()).exp().log1p() - y * eta).mean();
}

namespace detail {

// residual-scale factor u_i with gradient contribution u_i x_i
template <typename Scalar>
VectorX<Scalar> score_residual(const BlockData<Scalar>& data,
                               const LossModel<Scalar>& model,
                               const VectorX<Scalar>& theta) {
  VectorX<Scalar> eta = data.design * theta;
  if (model.kind == ModelKind::linear) return eta - data.response;
  return eta.unaryExpr([](Scalar e) { return sigmoid(e); }) - data.response;
}

}  // namespace detail

// averaged gradient of the block loss
template <typename Scalar>
VectorX<Scalar> block_score(const BlockData<Scalar>& data,
                            const LossModel<Scalar>& model,
                            const VectorX<Scalar>& theta) {
  const VectorX<Scalar> u = detail::score_residual(data, model, theta);
  return data.design.transpose() * u / Scalar(data.rows());
}

// averaged Hessian of the block loss (the "bread")
template <typename Scalar>
MatrixX<Scalar> block_hessian(const BlockData<Scalar>& data,
                              const LossModel<Scalar>& model,
                              const VectorX<Scalar>& theta) {
  const Scalar n = Scalar(data.rows());
  if (model.kind == ModelKind::linear)
    return data.design.transpose() * data.design / n;
  VectorX<Scalar> w = (data.design * theta).unaryExpr([](Scalar e) {
    const Scalar s = detail::sigmoid(e);
    return s * (Scalar(1) - s);
  });
  return data.design.transpose() * w.asDiagonal() * data.design / n;
}

// averaged outer product of per-observation gradients (the "meat")
template <typename Scalar>
MatrixX<Scalar> block_score_outer(const BlockData<Scalar>& data,
                                  const LossModel<Scalar>& model,
                                  const VectorX<Scalar>& theta) {
  const VectorX<Scalar> u = detail::score_residual(data, model, theta);
  const VectorX<Scalar> u2 = u.array().square().matrix();
  return data.design.transpose() * u2.asDiagonal() * data.design /
         Scalar(data.rows());
}

namespace detail {

template <typename Scalar>
void check_finite(const BlockData<Scalar>& data) {
  if (!data.design.allFinite() || !data.response.allFinite())
    throw NonFiniteInput("block " + std::to_string(data.block_id) +
                         ": design or response contains a non-finite value");
}

template <typename Scalar>
void check_shape(const BlockData<Scalar>& data) {
  if (data.rows() == 0)
    throw EmptyBlock("block " + std::to_string(data.block_id) +
                     " has no observations");
  if (data.dims() == 0)
    throw SchemaMismatch("block " + std::to_string(data.block_id) +
                         " has no feature columns");
  if (data.response.size() != data.rows())
    throw SchemaMismatch("block " + std::to_string(data.block_id) +
                         ": response length " +
                         std::to_string(data.response.size()) +
                         " does not match design rows " +
                         std::to_string(data.rows()));
}

}  // namespace detail

// A^{-1} B A^{-1} with A the averaged Hessian and B the averaged gradient
// outer product, both at theta. This is the covariance of sqrt(n) times the
// estimation error; divide by n for the covariance of theta_hat itself.
template <typename Scalar>
MatrixX<Scalar> sandwich_variance(const BlockData<Scalar>& data,
                                  const LossModel<Scalar>& model,
                                  const VectorX<Scalar>& theta) {
  detail::check_shape(data);
  detail::check_finite(data);
  if (theta.size() != data.dims())
    throw SchemaMismatch("block " + std::to_string(data.block_id) +
                         ": theta length does not match design columns");
  if (!theta.allFinite())
    throw NonFiniteInput("block " + std::to_string(data.block_id) +
                         ": theta contains a non-finite value");

  const MatrixX<Scalar> bread = block_hessian(data, model, theta);
  const MatrixX<Scalar> meat = block_score_outer(data, model, theta);

  Eigen::LDLT<MatrixX<Scalar>> ldlt(bread);
  const auto d = ldlt.vectorD();
  const Scalar dmax = d.cwiseAbs().maxCoeff();
  if (ldlt.info() != Eigen::Success || !(dmax > Scalar(0)) ||
      d.minCoeff() <= dmax * Scalar(1e-14))
    throw SingularHessian("block " + std::to_string(data.block_id) +
                          ": averaged Hessian is numerically singular");

  MatrixX<Scalar> v = ldlt.solve(ldlt.solve(meat).transpose());
  v = ((v + v.transpose()) / Scalar(2)).eval();
  return v;
}

struct SolverSettings {
  double tol = 1e-10;       // on ||score|| relative to 1 + ||score at zero||
  int max_iterations = 100;
  int max_halvings = 50;
};

// Damped Newton from theta = 0. Linear models are solved exactly in one
// least-squares step. The returned fit carries the sandwich covariance.
template <typename Scalar = double>
LocalFit<Scalar> fit_block(const BlockData<Scalar>& data,
                           const LossModel<Scalar>& model,
                           const SolverSettings& settings = {}) {
  detail::check_shape(data);
  detail::check_finite(data);
  const Eigen::Index n = data.rows();
  const Eigen::Index p = data.dims();
  const std::string tag = "block " + std::to_string(data.block_id);

  if (n < p)
    throw RankDeficientDesign(tag + ": fewer observations (" +
                              std::to_string(n) + ") than parameters (" +
                              std::to_string(p) + ")");

  // numeric rank via column-pivoted QR; pivots below 1e-10 times the largest
  // column norm count as zero
  Eigen::ColPivHouseholderQR<MatrixX<Scalar>> qr(data.design);
  qr.setThreshold(Scalar(1e-10));
  if (qr.rank() < p)
    throw RankDeficientDesign(tag + ": design has numeric rank " +
                              std::to_string(qr.rank()) + " < " +
                              std::to_string(p));

  LocalFit<Scalar> fit;
  fit.block_id = data.block_id;
  fit.n_used = n;

  VectorX<Scalar> theta = VectorX<Scalar>::Zero(p);
  if (model.kind == ModelKind::linear) {
    theta = qr.solve(data.response);
    fit.iterations = 1;
  } else {
    const Scalar scale = Scalar(1) + block_score(data, model, theta).norm();
    Scalar loss = block_loss(data, model, theta);
    bool converged = false;
    int it = 0;
    for (; it < settings.max_iterations; ++it) {
      const VectorX<Scalar> g = block_score(data, model, theta);
      if (g.norm() <= settings.tol * scale) {
        converged = true;
        break;
      }
      const MatrixX<Scalar> h = block_hessian(data, model, theta);
      Eigen::LDLT<MatrixX<Scalar>> ldlt(h);
      if (ldlt.info() != Eigen::Success ||
          !(ldlt.vectorD().minCoeff() > Scalar(0)))
        throw NonConvergence(tag +
                             ": Hessian not positive definite at iterate " +
                             std::to_string(it));
      const VectorX<Scalar> delta = ldlt.solve(g);
      // accept the longest step that does not increase the average loss
      Scalar t = Scalar(1);
      bool accepted = false;
      for (int h2 = 0; h2 <= settings.max_halvings; ++h2, t /= Scalar(2)) {
        const VectorX<Scalar> cand = theta - t * delta;
        const Scalar cand_loss = block_loss(data, model, cand);
        if (cand_loss <= loss) {
          theta = cand;
          loss = cand_loss;
          accepted = true;
          break;
        }
      }
      if (!accepted)
        throw NonConvergence(tag + ": line search exhausted " +
                             std::to_string(settings.max_halvings) +
                             " halvings at iterate " + std::to_string(it));
    }
    if (!converged)
      throw NonConvergence(tag + ": no convergence in " +
                           std::to_string(settings.max_iterations) +
                           " Newton iterations");
    fit.iterations = it;

    // Separated responses push the optimum to infinity while the score still
    // meets the tolerance; catch that by checking the fitted probabilities.
    const VectorX<Scalar> resid =
        detail::score_residual(data, model, theta);
    if (resid.cwiseAbs().maxCoeff() < Scalar(1e-6))
      throw NonConvergence(tag +
                           ": fitted probabilities saturated (separated "
                           "responses); estimate diverges");
  }

  fit.converged = true;
  fit.theta_hat = theta;
  fit.cov_hat = sandwich_variance(data, model, theta);
  fit.sigma_hat = fit.cov_hat.diagonal().cwiseMax(Scalar(0)).cwiseSqrt();
  fit.degenerate = !(fit.cov_hat.diagonal().array() > Scalar(0)).all();
  return fit;
}

}  // namespace hetdet
