#pragma once

// Random-intercept logistic model for repeated-pair votes:
//
//   P(y = 1 | cell c) = logistic(beta0 + u_c),   u_c ~ N(0, sigma_u^2)
//
// where y = 1 means the pair's second image was chosen and a cell is an image
// pair, or an (image pair, rater group) combination. The marginal likelihood
// integrates each u_c out by adaptive Gauss-Hermite quadrature.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "percept/qa.hpp"
#include "percept/votes.hpp"

namespace percept::mlm {

struct Cell {
  std::string pair_id;  // "<first>|<second>", first < second
  std::string group;    // empty in the baseline model
  std::size_t n = 0;    // votes
  std::size_t k = 0;    // votes for the second image
};

struct Options {
  int nodes = 21;
  double rel_tol = 1e-8;
  int max_iter = 200;
  /// Variance of the Gaussian penalty on beta0 and sigma_u used when the
  /// unpenalized fit runs away (separation).
  double penalty_variance = 100.0;
  /// |beta0| or sigma_u beyond this is treated as divergence.
  double divergence_bound = 15.0;
};

struct Effect {
  std::string pair_id;
  std::string group;
  std::size_t n = 0;
  std::size_t k = 0;
  double estimate = 0.0;  // posterior mean of u_c
  double se = 0.0;        // posterior standard deviation
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  bool separated = false;  // unanimous cell
};

struct Fit {
  double beta0 = 0.0;
  double sigma_u = 0.0;
  double log_likelihood = 0.0;
  std::vector<Effect> effects;  // same order as the input cells; CIs at 95%
  bool converged = false;
  bool separation = false;  // some cell is unanimous
  bool penalized = false;   // penalty was needed to keep the fit finite
  int iterations = 0;
};

/// Gauss-Hermite rule for weight exp(-x^2): nodes ascending.
struct GaussHermite {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};
GaussHermite gauss_hermite(int n);

struct Evaluation {
  double value = 0.0;
  Eigen::Vector2d gradient = Eigen::Vector2d::Zero();  // d/d beta0, d/d sigma_u
};

/// Marginal log-likelihood and its gradient at (beta0, sigma_u).
Evaluation marginal_loglik(std::span<const Cell> cells, double beta0, double sigma_u, const Options& options = {});

Fit fit(std::span<const Cell> cells, const Options& options = {});

/// z quantile for a two-sided interval at `level`.
double z_value(double level);

/// Cells whose interval estimate +- z(level) * se excludes zero, largest |estimate| first.
std::vector<Effect> significant_effects(const Fit& fit, double level = 0.95);

/// Cells from left/right votes: one per unordered pair (grouping absent) or per
/// (pair, group level). Raters without that demographic are dropped. Only
/// pairs with at least min_votes votes are kept.
std::vector<Cell> build_cells(std::span<const Vote> votes, std::span<const Rater> sessions,
                              std::optional<qa::Grouping> grouping, std::size_t min_votes = 2);

/// CSV `pair_id,group,estimate,se,ci_lo,ci_hi,significant`.
std::string format_effects(const Fit& fit, double level = 0.95);

}  // namespace percept::mlm
