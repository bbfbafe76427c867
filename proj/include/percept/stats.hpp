#pragma once

#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "percept/error.hpp"

namespace percept::stats {

/// Pearson correlation of two equally sized vectors; NaN when either has zero variance.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar pearson(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.size() != b.size()) throw InvalidInput("pearson: size mismatch");
  if (a.size() < 2) throw InvalidInput("pearson: need at least two observations");
  const auto da = (a.array() - a.mean()).matrix().eval();
  const auto db = (b.array() - b.mean()).matrix().eval();
  const Scalar saa = da.squaredNorm();
  const Scalar sbb = db.squaredNorm();
  if (!(saa > 0) || !(sbb > 0)) return std::numeric_limits<Scalar>::quiet_NaN();
  return da.dot(db) / std::sqrt(saa * sbb);
}

/// Kendall's tau-b, O(n^2).
template <typename DerivedA, typename DerivedB>
double kendall_tau(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  if (a.size() != b.size()) throw InvalidInput("kendall_tau: size mismatch");
  const Eigen::Index n = a.size();
  double concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double da = static_cast<double>(a(i) - a(j));
      const double db = static_cast<double>(b(i) - b(j));
      if (da == 0 && db == 0) continue;
      if (da == 0) {
        ++ties_a;
      } else if (db == 0) {
        ++ties_b;
      } else if ((da > 0) == (db > 0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const double denom = std::sqrt((concordant + discordant + ties_a) * (concordant + discordant + ties_b));
  return denom > 0 ? (concordant - discordant) / denom : std::numeric_limits<double>::quiet_NaN();
}

using ScoreTable = std::map<std::string, double>;

struct NamedScores {
  std::string name;
  ScoreTable scores;
};

struct CorrelationMatrix {
  std::vector<std::string> names;
  Eigen::MatrixXd r;                      // NaN where undefined
  Eigen::MatrixXi common;                 // shared id counts
  std::vector<std::pair<int, int>> undefined;  // (i, j), i <= j, zero-variance entries
};

/// Pairwise Pearson r over the shared image ids of each pair of tables.
/// Every pair of tables must share at least 3 ids.
CorrelationMatrix pearson_corr(const std::vector<NamedScores>& tables);

/// CSV `image_id,<value column>`; the value column is `score` unless named.
ScoreTable read_score_table(const std::filesystem::path& path, const std::string& column = "score");

std::string format_correlations(const CorrelationMatrix& m);

}  // namespace percept::stats
