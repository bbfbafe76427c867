#pragma once

// Independent numerical references used by several suites.

#include <cmath>
#include <utility>
#include <vector>

namespace oracle {

/// Gauss-Legendre rule on [-1, 1] by Newton iteration on P_n.
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int n) {
  std::vector<double> x(static_cast<std::size_t>(n)), w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double dp = 0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1, p1 = z;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (z * p1 - p0) / (z * z - 1);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    x[static_cast<std::size_t>(i)] = z;
    w[static_cast<std::size_t>(i)] = 2 / ((1 - z * z) * dp * dp);
  }
  return {x, w};
}

/// Integrates f over [a, b] with `panels` composite Gauss-Legendre panels.
template <typename F>
double integrate(F&& f, double a, double b, int panels = 400, int order = 16) {
  static const auto rule = gauss_legendre(order);
  const double h = (b - a) / panels;
  double total = 0;
  for (int p = 0; p < panels; ++p) {
    const double mid = a + (p + 0.5) * h;
    for (std::size_t i = 0; i < rule.first.size(); ++i) total += rule.second[i] * f(mid + 0.5 * h * rule.first[i]);
  }
  return total * 0.5 * h;
}

/// Mean and variance of X ~ N(m, s^2) conditioned on X > 0, by quadrature.
inline std::pair<double, double> truncated_moments(double m, double s) {
  // Scale the integrand by its maximum on [0, inf) so the quadrature works in
  // the far tail, and stop where the density is negligible.
  const double peak = std::max(m, 0.0);
  const double decay = m >= 0 ? s : std::min(s, s * s / -m);
  const double upper = peak + 40 * decay;
  auto density = [&](double x) {
    const double z = (x - m) / s, z0 = (peak - m) / s;
    return std::exp(-0.5 * (z * z - z0 * z0));
  };
  const double z0 = integrate(density, 0, upper);
  const double z1 = integrate([&](double x) { return (x - peak) * density(x); }, 0, upper);
  const double z2 = integrate([&](double x) { return (x - peak) * (x - peak) * density(x); }, 0, upper);
  const double mean_shift = z1 / z0;
  return {peak + mean_shift, z2 / z0 - mean_shift * mean_shift};
}

struct Belief {
  double mu, sigma;
};

/// Exact two-player win posterior moments. Skills are jointly Gaussian with the
/// performance difference D; conditioning on D > 0 only changes D's moments.
inline std::pair<Belief, Belief> trueskill_win(Belief w, Belief l, double beta, double tau) {
  const double vw = w.sigma * w.sigma + tau * tau, vl = l.sigma * l.sigma + tau * tau;
  const double m = w.mu - l.mu;
  const double c2 = 2 * beta * beta + vw + vl;
  const auto [dm, dv] = truncated_moments(m, std::sqrt(c2));
  auto post = [&](double mu, double v, double sign) {
    const double k = sign * v / c2;  // regression of the skill on D
    return Belief{mu + k * (dm - m), std::sqrt(v - k * k * c2 + k * k * dv)};
  };
  return {post(w.mu, vw, 1), post(l.mu, vl, -1)};
}

}  // namespace oracle
