#include "percept/mlm.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <unordered_map>

#include <Eigen/Dense>

#include "percept/csv.hpp"
#include "percept/error.hpp"

namespace percept::mlm {

namespace {

double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Log of the integrand in the standardized effect z (u = sigma_u * z).
double log_joint(const Cell& c, double beta0, double sigma, double z) {
  const double eta = beta0 + sigma * z;
  return static_cast<double>(c.k) * log_sigmoid(eta) + static_cast<double>(c.n - c.k) * log_sigmoid(-eta) -
         0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi);
}

struct CellQuadrature {
  double log_integral = 0.0;
  double d_beta0 = 0.0;
  double d_sigma = 0.0;
  double z_mean = 0.0;
  double z_var = 0.0;
};

/// Adaptive Gauss-Hermite: centre the rule on the mode of the integrand and
/// scale it by the curvature there.
CellQuadrature integrate_cell(const Cell& c, double beta0, double sigma, const GaussHermite& rule) {
  const double n = static_cast<double>(c.n);
  const double k = static_cast<double>(c.k);

  double z = 0.0;
  for (int it = 0; it < 100; ++it) {
    const double s = sigmoid(beta0 + sigma * z);
    const double grad = sigma * (k - n * s) - z;
    const double hess = -sigma * sigma * n * s * (1.0 - s) - 1.0;
    double step = -grad / hess;
    const double f0 = log_joint(c, beta0, sigma, z);
    while (log_joint(c, beta0, sigma, z + step) < f0 - 1e-14 * std::abs(f0) && std::abs(step) > 1e-300) step *= 0.5;
    z += step;
    if (std::abs(step) < 1e-12 * (1.0 + std::abs(z))) break;
  }
  const double s_mode = sigmoid(beta0 + sigma * z);
  const double scale = 1.0 / std::sqrt(sigma * sigma * n * s_mode * (1.0 - s_mode) + 1.0);

  const Eigen::Index m = rule.nodes.size();
  Eigen::VectorXd log_terms(m), zs(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double x = rule.nodes(i);
    zs(i) = z + std::numbers::sqrt2 * scale * x;
    log_terms(i) = std::log(rule.weights(i)) + x * x + log_joint(c, beta0, sigma, zs(i));
  }
  const double top = log_terms.maxCoeff();
  const Eigen::VectorXd w = (log_terms.array() - top).exp().matrix();
  const double total = w.sum();

  CellQuadrature q;
  q.log_integral = top + std::log(total) + std::log(std::numbers::sqrt2 * scale);
  double mean = 0, second = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double p = w(i) / total;
    const double score = k - n * sigmoid(beta0 + sigma * zs(i));
    q.d_beta0 += p * score;
    q.d_sigma += p * score * zs(i);
    mean += p * zs(i);
    second += p * zs(i) * zs(i);
  }
  q.z_mean = mean;
  q.z_var = std::max(0.0, second - mean * mean);
  return q;
}

double penalty(const Eigen::Vector2d& theta, double variance) { return -theta.squaredNorm() / (2.0 * variance); }

}  // namespace

GaussHermite gauss_hermite(int n) {
  if (n < 1) throw InvalidInput("Gauss-Hermite rule needs at least one node");
  // Golub-Welsch for starting points, then Newton on the orthonormal
  // Hermite recurrence for full-precision nodes and weights.
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) jacobi(i, i - 1) = jacobi(i - 1, i) = std::sqrt(i / 2.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);

  GaussHermite rule;
  rule.nodes = eig.eigenvalues();
  rule.weights.resize(n);
  const double pim4 = std::pow(std::numbers::pi, -0.25);
  for (int i = 0; i < n; ++i) {
    double x = rule.nodes(i);
    double pp = 0;
    for (int it = 0; it < 50; ++it) {
      double p1 = pim4, p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = x * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double dx = p1 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15 * (1.0 + std::abs(x))) break;
    }
    rule.nodes(i) = x;
    rule.weights(i) = 2.0 / (pp * pp);
  }
  return rule;
}

namespace {

const GaussHermite& cached_rule(int n) {
  thread_local std::map<int, GaussHermite> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, gauss_hermite(n)).first;
  return it->second;
}

}  // namespace

Evaluation marginal_loglik(std::span<const Cell> cells, double beta0, double sigma_u, const Options& options) {
  const auto& rule = cached_rule(options.nodes);
  Evaluation e;
  for (const auto& c : cells) {
    const auto q = integrate_cell(c, beta0, sigma_u, rule);
    e.value += q.log_integral;
    e.gradient(0) += q.d_beta0;
    e.gradient(1) += q.d_sigma;
  }
  return e;
}

namespace {

struct Objective {
  std::span<const Cell> cells;
  const Options& options;
  bool penalized;

  Evaluation operator()(const Eigen::Vector2d& theta) const {
    auto e = marginal_loglik(cells, theta(0), theta(1), options);
    if (penalized) {
      e.value += penalty(theta, options.penalty_variance);
      e.gradient -= theta / options.penalty_variance;
    }
    return e;
  }
};

struct OptimumResult {
  Eigen::Vector2d theta;
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
};

/// Damped Newton ascent on (beta0, sigma_u) with a finite-difference Hessian
/// of the analytic gradient. The likelihood is even in sigma_u, so the
/// iterate is folded back onto sigma_u >= 0.
OptimumResult maximize(const Objective& f, Eigen::Vector2d theta, int max_iter, double rel_tol, double bound) {
  OptimumResult r;
  auto cur = f(theta);
  int quiet = 0;
  for (int iter = 0; iter < max_iter; ++iter) {
    r.iterations = iter + 1;
    Eigen::Matrix2d hess;
    for (int j = 0; j < 2; ++j) {
      const double h = 1e-5 * std::max(1.0, std::abs(theta(j)));
      Eigen::Vector2d tp = theta, tm = theta;
      tp(j) += h;
      tm(j) -= h;
      hess.col(j) = (f(tp).gradient - f(tm).gradient) / (2.0 * h);
    }
    hess = (0.5 * (hess + hess.transpose())).eval();

    Eigen::Vector2d step;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(hess);
    if (eig.eigenvalues().maxCoeff() < 0) {
      step = -hess.ldlt().solve(cur.gradient);
    } else {
      step = cur.gradient / std::max(1.0, cur.gradient.norm());
    }

    double t = 1.0;
    Eigen::Vector2d next;
    Evaluation trial;
    bool improved = false;
    for (int ls = 0; ls < 60; ++ls) {
      next = theta + t * step;
      next(1) = std::abs(next(1));
      trial = f(next);
      if (std::isfinite(trial.value) && trial.value >= cur.value - 1e-12 * std::abs(cur.value)) {
        improved = true;
        break;
      }
      t *= 0.5;
    }
    if (!improved) {
      r.converged = cur.gradient.norm() < 1e-6 * (1.0 + std::abs(cur.value));
      break;
    }
    const double change = std::abs(trial.value - cur.value) / std::max(std::abs(cur.value), 1e-300);
    theta = next;
    cur = trial;
    if (std::abs(theta(0)) > bound || theta(1) > bound) break;
    quiet = change < rel_tol ? quiet + 1 : 0;
    if (quiet >= 2 || cur.gradient.norm() < 1e-10) {
      r.converged = true;
      break;
    }
  }
  r.theta = theta;
  r.value = cur.value;
  return r;
}

}  // namespace

double z_value(double level) {
  if (!(level > 0 && level < 1)) throw InvalidInput("confidence level must be in (0, 1)");
  // Invert the normal CDF by bisection on erfc; ample for interval widths.
  const double target = (1.0 - level) / 2.0;  // upper tail
  double lo = 0.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (0.5 * std::erfc(mid / std::numbers::sqrt2) > target)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

Fit fit(std::span<const Cell> cells, const Options& options) {
  std::size_t usable = 0;
  std::size_t total_n = 0, total_k = 0;
  for (const auto& c : cells) {
    if (c.k > c.n) throw InvalidInput("cell " + c.pair_id + " has more successes than votes");
    if (c.n >= 2) ++usable;
    total_n += c.n;
    total_k += c.k;
  }
  if (usable < 2) throw InvalidInput("multilevel model needs at least two cells with two or more votes");

  Fit out;
  for (const auto& c : cells) out.separation = out.separation || c.k == 0 || c.k == c.n;

  const double pooled = (static_cast<double>(total_k) + 0.5) / (static_cast<double>(total_n) + 1.0);
  const Eigen::Vector2d start(std::log(pooled / (1.0 - pooled)), 1.0);

  Objective plain{cells, options, false};
  auto opt = maximize(plain, start, options.max_iter, options.rel_tol, options.divergence_bound);
  if (!opt.converged || std::abs(opt.theta(0)) > options.divergence_bound || opt.theta(1) > options.divergence_bound) {
    Objective pen{cells, options, true};
    opt = maximize(pen, start, options.max_iter, options.rel_tol, 1e6);
    out.penalized = true;
  }

  out.beta0 = opt.theta(0);
  out.sigma_u = opt.theta(1);
  out.converged = opt.converged;
  out.iterations = opt.iterations;
  out.log_likelihood = marginal_loglik(cells, out.beta0, out.sigma_u, options).value;

  const auto& rule = cached_rule(options.nodes);
  const double z = z_value(0.95);
  for (const auto& c : cells) {
    const auto q = integrate_cell(c, out.beta0, out.sigma_u, rule);
    Effect e;
    e.pair_id = c.pair_id;
    e.group = c.group;
    e.n = c.n;
    e.k = c.k;
    e.estimate = out.sigma_u * q.z_mean;
    e.se = out.sigma_u * std::sqrt(q.z_var);
    e.ci_lo = e.estimate - z * e.se;
    e.ci_hi = e.estimate + z * e.se;
    e.separated = c.k == 0 || c.k == c.n;
    out.effects.push_back(std::move(e));
  }
  return out;
}

std::vector<Effect> significant_effects(const Fit& fit, double level) {
  const double z = z_value(level);
  std::vector<Effect> out;
  for (auto e : fit.effects) {
    e.ci_lo = e.estimate - z * e.se;
    e.ci_hi = e.estimate + z * e.se;
    if (e.ci_lo > 0 || e.ci_hi < 0) out.push_back(std::move(e));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Effect& a, const Effect& b) { return std::abs(a.estimate) > std::abs(b.estimate); });
  return out;
}

std::vector<Cell> build_cells(std::span<const Vote> votes, std::span<const Rater> sessions,
                              std::optional<qa::Grouping> grouping, std::size_t min_votes) {
  std::unordered_map<std::string, std::string> level_of;
  if (grouping)
    for (const auto& r : sessions)
      if (auto level = qa::group_level(r, *grouping)) level_of[r.session_id] = *level;

  std::map<std::pair<std::string, std::string>, Cell> cells;
  std::map<std::string, std::size_t> pair_votes;
  for (const auto& v : votes) {
    if (!is_decisive(v.choice)) continue;
    std::string level;
    if (grouping) {
      auto it = level_of.find(v.session_id);
      if (it == level_of.end()) continue;
      level = it->second;
    }
    const bool ordered = v.left_image < v.right_image;
    const std::string& first = ordered ? v.left_image : v.right_image;
    const std::string& second = ordered ? v.right_image : v.left_image;
    const std::string pair_id = first + "|" + second;
    auto& c = cells[{pair_id, level}];
    c.pair_id = pair_id;
    c.group = level;
    ++c.n;
    if (v.chosen() == second) ++c.k;
    ++pair_votes[pair_id];
  }
  std::vector<Cell> out;
  for (auto& [key, c] : cells)
    if (pair_votes[c.pair_id] >= min_votes) out.push_back(std::move(c));
  return out;
}

std::string format_effects(const Fit& fit, double level) {
  const double z = z_value(level);
  std::string out = "pair_id,group,estimate,se,ci_lo,ci_hi,significant\n";
  for (const auto& e : fit.effects) {
    const double lo = e.estimate - z * e.se;
    const double hi = e.estimate + z * e.se;
    out += e.pair_id + ',' + e.group + ',' + csv::format_fixed(e.estimate, 6) + ',' + csv::format_fixed(e.se, 6) + ',' +
           csv::format_fixed(lo, 6) + ',' + csv::format_fixed(hi, 6) + ',' + ((lo > 0 || hi < 0) ? "1" : "0") + '\n';
  }
  return out;
}

}  // namespace percept::mlm
