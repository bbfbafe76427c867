#pragma once

// Binary logistic regression on dense Eigen matrices (one example per row,
// labels in {0, 1}). The intercept is never penalized.
//
//   L2:  sum_i logloss_i + (l2 / 2) * ||w||^2           Newton, to ||grad|| < tol
//   L1:  (1/n) sum_i logloss_i + l1 * ||w||_1           IRLS + coordinate descent

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "percept/error.hpp"

namespace percept::logistic {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
struct Model {
  Vector<Scalar> weights;
  Scalar intercept = 0;
  int iterations = 0;
  Scalar gradient_norm = 0;
  bool converged = false;
};

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

/// log(1 + exp(x)) without overflow.
template <typename Scalar>
Scalar softplus(Scalar x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// Parameters are packed as [w; b].
template <typename DX, typename DY, typename DT>
typename DX::Scalar l2_objective(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y,
                                 const Eigen::MatrixBase<DT>& theta, typename DX::Scalar l2) {
  using Scalar = typename DX::Scalar;
  const Eigen::Index p = x.cols();
  const Vector<Scalar> eta = (x * theta.head(p)).array() + theta(p);
  Scalar f = 0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) f += softplus(eta(i)) - static_cast<Scalar>(y(i)) * eta(i);
  return f + l2 / 2 * theta.head(p).squaredNorm();
}

template <typename DX, typename DY, typename DT>
Vector<typename DX::Scalar> l2_gradient(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y,
                                        const Eigen::MatrixBase<DT>& theta, typename DX::Scalar l2) {
  using Scalar = typename DX::Scalar;
  const Eigen::Index p = x.cols();
  const Vector<Scalar> eta = (x * theta.head(p)).array() + theta(p);
  Vector<Scalar> resid(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) resid(i) = sigmoid(eta(i)) - static_cast<Scalar>(y(i));
  Vector<Scalar> g(p + 1);
  g.head(p) = x.transpose() * resid + l2 * theta.head(p);
  g(p) = resid.sum();
  return g;
}

template <typename DX, typename DY>
Model<typename DX::Scalar> fit_l2(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y,
                                  typename DX::Scalar l2, typename DX::Scalar tol = 1e-8, int max_iter = 100) {
  using Scalar = typename DX::Scalar;
  if (x.rows() != y.size()) throw InvalidInput("logistic: rows and labels differ");
  if (!(l2 >= 0)) throw InvalidInput("logistic: l2 must be non-negative");
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();

  Matrix<Scalar> xa(n, p + 1);
  xa << x, Vector<Scalar>::Ones(n);
  Vector<Scalar> theta = Vector<Scalar>::Zero(p + 1);
  Model<Scalar> m;
  Scalar f = l2_objective(x, y, theta, l2);
  for (int iter = 0; iter < max_iter; ++iter) {
    const Vector<Scalar> g = l2_gradient(x, y, theta, l2);
    m.gradient_norm = g.norm();
    m.iterations = iter;
    if (m.gradient_norm < tol) {
      m.converged = true;
      break;
    }
    const Vector<Scalar> eta = xa * theta;
    Vector<Scalar> d(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Scalar s = sigmoid(eta(i));
      d(i) = s * (1 - s);
    }
    Matrix<Scalar> h = xa.transpose() * d.asDiagonal() * xa;
    h.diagonal().head(p).array() += l2;
    // Tiny ridge keeps the unpenalized intercept direction invertible.
    h.diagonal().array() += std::numeric_limits<Scalar>::epsilon() * (1 + h.diagonal().cwiseAbs().maxCoeff());
    const Vector<Scalar> step = h.ldlt().solve(g);

    Scalar t = 1;
    for (int ls = 0; ls < 60; ++ls) {
      const Vector<Scalar> next = theta - t * step;
      const Scalar fn = l2_objective(x, y, next, l2);
      if (fn <= f) {
        theta = next;
        f = fn;
        break;
      }
      t /= 2;
    }
    if (t < Scalar(1e-15)) break;
  }
  if (!m.converged) {
    m.gradient_norm = l2_gradient(x, y, theta, l2).norm();
    m.converged = m.gradient_norm < tol;
  }
  m.weights = theta.head(p);
  m.intercept = theta(p);
  return m;
}

template <typename DX, typename DY>
typename DX::Scalar l1_objective(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y,
                                 const Model<typename DX::Scalar>& m, typename DX::Scalar l1) {
  using Scalar = typename DX::Scalar;
  const Vector<Scalar> eta = (x * m.weights).array() + m.intercept;
  Scalar f = 0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) f += softplus(eta(i)) - static_cast<Scalar>(y(i)) * eta(i);
  return f / static_cast<Scalar>(x.rows()) + l1 * m.weights.template lpNorm<1>();
}

/// L1-penalized fit. Coefficients exactly zero are the screened-out features.
template <typename DX, typename DY>
Model<typename DX::Scalar> fit_l1(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y,
                                  typename DX::Scalar l1, typename DX::Scalar tol = 1e-10, int max_outer = 200) {
  using Scalar = typename DX::Scalar;
  if (x.rows() != y.size()) throw InvalidInput("logistic: rows and labels differ");
  if (!(l1 >= 0)) throw InvalidInput("logistic: l1 must be non-negative");
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);

  Model<Scalar> m;
  m.weights = Vector<Scalar>::Zero(p);
  Scalar f = l1_objective(x, y, m, l1);

  for (int outer = 0; outer < max_outer; ++outer) {
    m.iterations = outer + 1;
    // Quadratic model of the mean log-loss around the current fit.
    const Vector<Scalar> eta = (x * m.weights).array() + m.intercept;
    Vector<Scalar> wts(n), z(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Scalar s = sigmoid(eta(i));
      wts(i) = std::max(s * (1 - s), Scalar(1e-5));
      z(i) = eta(i) + (static_cast<Scalar>(y(i)) - s) / wts(i);
    }
    wts *= inv_n;

    Model<Scalar> cand = m;
    Vector<Scalar> r = z - ((x * cand.weights).array() + cand.intercept).matrix();  // working residual
    const Vector<Scalar> col_curv = (x.array().square().colwise() * wts.array()).colwise().sum().transpose();
    for (int sweep = 0; sweep < 1000; ++sweep) {
      Scalar max_change = 0;
      const Scalar b_step = wts.dot(r) / wts.sum();
      cand.intercept += b_step;
      r.array() -= b_step;
      max_change = std::max(max_change, std::abs(b_step));
      for (Eigen::Index j = 0; j < p; ++j) {
        if (col_curv(j) <= 0) continue;
        const Scalar old = cand.weights(j);
        const Scalar rho = (x.col(j).array() * wts.array() * r.array()).sum() + col_curv(j) * old;
        const Scalar mag = std::max(std::abs(rho) - l1, Scalar(0));
        const Scalar next = mag == 0 ? Scalar(0) : std::copysign(mag, rho) / col_curv(j);
        if (next != old) {
          r -= (next - old) * x.col(j);
          cand.weights(j) = next;
          max_change = std::max(max_change, std::abs(next - old));
        }
      }
      if (max_change < tol) break;
    }

    // Accept the step only if it decreases the penalized objective; otherwise halve it.
    Scalar t = 1;
    Model<Scalar> trial = cand;
    Scalar ft = l1_objective(x, y, trial, l1);
    while (ft > f + std::numeric_limits<Scalar>::epsilon() * std::abs(f) && t > Scalar(1e-10)) {
      t /= 2;
      trial.weights = m.weights + t * (cand.weights - m.weights);
      trial.intercept = m.intercept + t * (cand.intercept - m.intercept);
      ft = l1_objective(x, y, trial, l1);
    }
    const Scalar change = std::max((trial.weights - m.weights).cwiseAbs().maxCoeff(), std::abs(trial.intercept - m.intercept));
    m.weights = trial.weights;
    m.intercept = trial.intercept;
    const Scalar df = f - ft;
    f = std::min(f, ft);
    if (change < tol || df < tol * tol) {
      m.converged = true;
      break;
    }
  }
  return m;
}

/// Column means and standard deviations of a training matrix; zero deviations become 1.
template <typename Scalar>
struct Standardizer {
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mean;
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> scale;

  template <typename Derived>
  static Standardizer fit(const Eigen::MatrixBase<Derived>& x) {
    Standardizer s;
    s.mean = x.colwise().mean();
    const Matrix<Scalar> centered = x.rowwise() - s.mean;
    s.scale = (centered.array().square().colwise().sum() / static_cast<Scalar>(std::max<Eigen::Index>(1, x.rows()))).sqrt();
    for (Eigen::Index j = 0; j < s.scale.size(); ++j)
      if (!(s.scale(j) > 0)) s.scale(j) = 1;
    return s;
  }

  template <typename Derived>
  Matrix<Scalar> apply(const Eigen::MatrixBase<Derived>& x) const {
    return ((x.rowwise() - mean).array().rowwise() / scale.array()).matrix();
  }
};

}  // namespace percept::logistic
