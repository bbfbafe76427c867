#include "percept/stats.hpp"

#include "percept/csv.hpp"

namespace percept::stats {

CorrelationMatrix pearson_corr(const std::vector<NamedScores>& tables) {
  if (tables.size() < 2) throw InvalidInput("need at least two score tables");
  const auto k = static_cast<Eigen::Index>(tables.size());
  CorrelationMatrix m;
  m.r = Eigen::MatrixXd::Constant(k, k, std::numeric_limits<double>::quiet_NaN());
  m.common = Eigen::MatrixXi::Zero(k, k);
  for (const auto& t : tables) m.names.push_back(t.name);

  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = i; j < k; ++j) {
      const auto& a = tables[static_cast<std::size_t>(i)].scores;
      const auto& b = tables[static_cast<std::size_t>(j)].scores;
      std::vector<double> xs, ys;
      for (const auto& [id, x] : a) {
        auto it = b.find(id);
        if (it == b.end()) continue;
        xs.push_back(x);
        ys.push_back(it->second);
      }
      if (xs.size() < 3)
        throw InvalidInput("tables '" + m.names[static_cast<std::size_t>(i)] + "' and '" +
                           m.names[static_cast<std::size_t>(j)] + "' share fewer than 3 image ids");
      const Eigen::Map<const Eigen::VectorXd> x(xs.data(), static_cast<Eigen::Index>(xs.size()));
      const Eigen::Map<const Eigen::VectorXd> y(ys.data(), static_cast<Eigen::Index>(ys.size()));
      double r = pearson(x, y);
      if (std::isnan(r)) {
        m.undefined.emplace_back(static_cast<int>(i), static_cast<int>(j));
      } else if (i == j) {
        r = 1.0;
      }
      m.r(i, j) = m.r(j, i) = r;
      m.common(i, j) = m.common(j, i) = static_cast<int>(xs.size());
    }
  }
  return m;
}

ScoreTable read_score_table(const std::filesystem::path& path, const std::string& column) {
  const auto table = csv::read(path);
  const auto c_id = table.column("image_id");
  const auto c_v = table.column(column);
  ScoreTable out;
  for (const auto& row : table.rows) {
    if (row.fields.size() != table.header.size()) throw ParseError(path.string() + ": wrong number of fields", row.line);
    if (!out.emplace(row.fields[c_id], csv::to_double(row.fields[c_v], row.line)).second)
      throw ParseError(path.string() + ": duplicate image_id '" + row.fields[c_id] + "'", row.line);
  }
  return out;
}

std::string format_correlations(const CorrelationMatrix& m) {
  std::string out = "table";
  for (const auto& n : m.names) out += ',' + n;
  out += '\n';
  for (Eigen::Index i = 0; i < m.r.rows(); ++i) {
    out += m.names[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < m.r.cols(); ++j)
      out += ',' + (std::isnan(m.r(i, j)) ? std::string("NA") : csv::format_fixed(m.r(i, j), 6));
    out += '\n';
  }
  return out;
}

}  // namespace percept::stats
