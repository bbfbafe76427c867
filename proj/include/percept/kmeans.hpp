#pragma once

// Lloyd's k-means with k-means++ seeding, templated on the scalar type of the
// input matrix (one observation per row).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "percept/error.hpp"
#include "percept/rng.hpp"

namespace percept {

template <typename Scalar>
struct ClusterModel {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  int k = 0;
  Matrix centroids;  // k x d
  std::uint64_t seed = 0;
  std::vector<int> assignments;
  /// Within-cluster sum of squares after each assignment step.
  std::vector<Scalar> wcss_history;
  int iterations = 0;
  bool converged = false;

  Scalar wcss() const { return wcss_history.empty() ? Scalar(0) : wcss_history.back(); }
};

struct KMeansOptions {
  int max_iter = 300;
  double tol = 1e-6;
};

/// Number of distinct rows.
template <typename Derived>
Eigen::Index count_distinct_rows(const Eigen::MatrixBase<Derived>& x) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) idx[static_cast<std::size_t>(i)] = i;
  auto row_less = [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (x(a, j) < x(b, j)) return true;
      if (x(b, j) < x(a, j)) return false;
    }
    return false;
  };
  std::sort(idx.begin(), idx.end(), row_less);
  Eigen::Index distinct = idx.empty() ? 0 : 1;
  for (std::size_t i = 1; i < idx.size(); ++i)
    if (row_less(idx[i - 1], idx[i])) ++distinct;
  return distinct;
}

namespace detail {

template <typename Derived, typename Scalar>
Scalar assign_nearest(const Eigen::MatrixBase<Derived>& x, const typename ClusterModel<Scalar>::Matrix& centroids,
                      std::vector<int>& assignment, std::vector<Scalar>& dist2) {
  Scalar total(0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    int best = 0;
    Scalar best_d = std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      const Scalar d = (x.row(i) - centroids.row(c)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    assignment[static_cast<std::size_t>(i)] = best;
    dist2[static_cast<std::size_t>(i)] = best_d;
    total += best_d;
  }
  return total;
}

}  // namespace detail

template <typename Derived>
ClusterModel<typename Derived::Scalar> kmeans(const Eigen::MatrixBase<Derived>& x, int k, std::uint64_t seed,
                                              const KMeansOptions& opts = {}) {
  using Scalar = typename Derived::Scalar;
  using Matrix = typename ClusterModel<Scalar>::Matrix;

  if (k < 1) throw InvalidInput("k must be at least 1");
  if (x.rows() == 0) throw InvalidInput("cannot cluster an empty corpus");
  if (k > count_distinct_rows(x))
    throw InvalidInput("k = " + std::to_string(k) + " exceeds the number of distinct feature vectors");

  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  Rng rng(derive_seed(seed, "kmeans++"));

  // k-means++ seeding.
  Matrix centroids(k, d);
  std::vector<Scalar> dist2(static_cast<std::size_t>(n), std::numeric_limits<Scalar>::infinity());
  centroids.row(0) = x.row(static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(n))));
  for (int c = 1; c < k; ++c) {
    double total = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& di = dist2[static_cast<std::size_t>(i)];
      di = std::min(di, Scalar((x.row(i) - centroids.row(c - 1)).squaredNorm()));
      total += static_cast<double>(di);
    }
    double target = uniform01(rng) * total;
    Eigen::Index pick = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double di = static_cast<double>(dist2[static_cast<std::size_t>(i)]);
      if (di <= 0) continue;
      pick = i;
      if (target < di) break;
      target -= di;
    }
    centroids.row(c) = x.row(pick);
  }

  // Scale for the relative shift criterion: RMS distance to the global mean.
  const auto mean = x.colwise().mean().eval();
  const double spread = std::sqrt(static_cast<double>((x.rowwise() - mean).squaredNorm()) / static_cast<double>(n));
  const double shift_tol = opts.tol * std::max(spread, std::numeric_limits<double>::min());

  ClusterModel<Scalar> model;
  model.k = k;
  model.seed = seed;
  model.assignments.assign(static_cast<std::size_t>(n), 0);

  for (int iter = 0; iter < opts.max_iter; ++iter) {
    model.wcss_history.push_back(detail::assign_nearest<Derived, Scalar>(x, centroids, model.assignments, dist2));
    model.iterations = iter + 1;

    Matrix next = Matrix::Zero(k, d);
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = model.assignments[static_cast<std::size_t>(i)];
      next.row(c) += x.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        next.row(c) /= static_cast<Scalar>(counts[static_cast<std::size_t>(c)]);
        continue;
      }
      // Empty cluster: move it onto the point currently worst served.
      Eigen::Index far = 0;
      for (Eigen::Index i = 1; i < n; ++i)
        if (dist2[static_cast<std::size_t>(i)] > dist2[static_cast<std::size_t>(far)]) far = i;
      next.row(c) = x.row(far);
      dist2[static_cast<std::size_t>(far)] = 0;
    }

    const double shift = static_cast<double>((next - centroids).rowwise().norm().maxCoeff());
    centroids = std::move(next);
    if (shift < shift_tol) {
      model.converged = true;
      break;
    }
  }

  // Final assignment against the final centroids.
  const Scalar final_wcss = detail::assign_nearest<Derived, Scalar>(x, centroids, model.assignments, dist2);
  model.wcss_history.push_back(final_wcss);
  model.centroids = std::move(centroids);
  return model;
}

}  // namespace percept
