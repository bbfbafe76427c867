#include "percept/interpret.hpp"

#include <algorithm>
#include <numeric>

#include <nlohmann/json.hpp>

#include "percept/csv.hpp"
#include "percept/error.hpp"
#include "percept/logistic.hpp"
#include "percept/ranking.hpp"
#include "percept/rng.hpp"

namespace percept::interpret {

namespace {

constexpr double kZeroCoefficient = 1e-8;

void labelled_rows(const FeatureTable& features, const std::map<std::string, Label>& labels, Eigen::MatrixXd& x,
                   Eigen::VectorXi& y, std::vector<std::string>& keys) {
  std::vector<std::size_t> rows;
  for (const auto& [id, label] : labels) {
    rows.push_back(features.row_of(id));
    keys.push_back(id);
  }
  x.resize(static_cast<Eigen::Index>(rows.size()), features.values.cols());
  y.resize(static_cast<Eigen::Index>(rows.size()));
  std::size_t i = 0;
  for (const auto& [id, label] : labels) {
    x.row(static_cast<Eigen::Index>(i)) = features.values.row(static_cast<Eigen::Index>(rows[i]));
    y(static_cast<Eigen::Index>(i)) = label == Label::top ? 1 : 0;
    ++i;
  }
}

}  // namespace

std::size_t FeatureTable::row_of(const std::string& image_id) const {
  // image_ids are kept sorted by read_feature_table; fall back to a scan otherwise.
  auto it = std::lower_bound(image_ids.begin(), image_ids.end(), image_id);
  if (it != image_ids.end() && *it == image_id) return static_cast<std::size_t>(it - image_ids.begin());
  auto lin = std::find(image_ids.begin(), image_ids.end(), image_id);
  if (lin == image_ids.end()) throw InvalidInput("no features for image '" + image_id + "'");
  return static_cast<std::size_t>(lin - image_ids.begin());
}

void FeatureTable::validate() const {
  if (kinds.size() != names.size() || static_cast<Eigen::Index>(names.size()) != values.cols() ||
      static_cast<Eigen::Index>(image_ids.size()) != values.rows())
    throw InvalidInput("feature table dimensions disagree");
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    const auto kind = kinds[static_cast<std::size_t>(j)];
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
      const double v = values(i, j);
      if (!std::isfinite(v)) throw InvalidInput("non-finite value in feature '" + names[static_cast<std::size_t>(j)] + "'");
      if (kind == FeatureKind::fraction && (v < 0 || v > 1))
        throw InvalidInput("fraction feature '" + names[static_cast<std::size_t>(j)] + "' outside [0, 1]");
      if (kind == FeatureKind::count && v < 0)
        throw InvalidInput("count feature '" + names[static_cast<std::size_t>(j)] + "' is negative");
    }
  }
}

FeatureTable FeatureTable::select_columns(std::span<const std::size_t> columns) const {
  FeatureTable t;
  t.image_ids = image_ids;
  t.values.resize(values.rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t c = 0; c < columns.size(); ++c) {
    t.names.push_back(names.at(columns[c]));
    t.kinds.push_back(kinds.at(columns[c]));
    t.values.col(static_cast<Eigen::Index>(c)) = values.col(static_cast<Eigen::Index>(columns[c]));
  }
  return t;
}

FeatureTable read_feature_table(const std::filesystem::path& path, const std::filesystem::path& sidecar) {
  const auto table = csv::read(path);
  if (table.header.empty() || table.header[0] != "image_id")
    throw ParseError(path.string() + ": first column must be image_id", 1);

  FeatureTable t;
  t.names.assign(table.header.begin() + 1, table.header.end());
  t.kinds.assign(t.names.size(), FeatureKind::count);
  if (!sidecar.empty()) {
    const auto meta = csv::read(sidecar);
    const auto c_name = meta.column("feature");
    const auto c_kind = meta.column("kind");
    std::map<std::string, FeatureKind> kind_of;
    for (const auto& row : meta.rows) {
      if (row.fields.size() != meta.header.size()) throw ParseError(sidecar.string() + ": wrong number of fields", row.line);
      const auto& k = row.fields[c_kind];
      if (k != "fraction" && k != "count") throw ParseError(sidecar.string() + ": kind must be fraction or count", row.line);
      kind_of[row.fields[c_name]] = k == "fraction" ? FeatureKind::fraction : FeatureKind::count;
    }
    for (std::size_t j = 0; j < t.names.size(); ++j) {
      auto it = kind_of.find(t.names[j]);
      if (it == kind_of.end()) throw ParseError(sidecar.string() + ": no kind for feature '" + t.names[j] + "'");
      t.kinds[j] = it->second;
    }
  }

  std::vector<std::size_t> order(table.rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (const auto& row : table.rows)
    if (row.fields.size() != table.header.size()) throw ParseError(path.string() + ": wrong number of fields", row.line);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return table.rows[a].fields[0] < table.rows[b].fields[0]; });

  t.values.resize(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(t.names.size()));
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto& row = table.rows[order[r]];
    if (r > 0 && row.fields[0] == t.image_ids.back())
      throw ParseError(path.string() + ": duplicate image_id '" + row.fields[0] + "'", row.line);
    t.image_ids.push_back(row.fields[0]);
    for (std::size_t j = 0; j < t.names.size(); ++j)
      t.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = csv::to_double(row.fields[j + 1], row.line);
  }
  t.validate();
  return t;
}

std::map<std::string, Label> label_extremes(const std::map<std::string, double>& scaled_scores) {
  if (scaled_scores.size() < 20) throw InvalidInput("labelling extremes needs at least 20 images");
  std::vector<double> values;
  for (const auto& [id, s] : scaled_scores) values.push_back(s);
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (!(*hi > *lo)) throw InvalidInput("degenerate score spread: every score is identical");

  const auto buckets = ranking::decile_buckets(values);
  std::map<std::string, Label> labels;
  std::size_t i = 0;
  for (const auto& [id, s] : scaled_scores) {
    const int b = buckets.bucket[i++];
    if (b == 0) labels[id] = Label::bottom;
    if (b == 9) labels[id] = Label::top;
  }
  return labels;
}

CvResult cross_validate(const Eigen::MatrixXd& x, const Eigen::VectorXi& y, std::span<const std::string> keys,
                        int folds, double l2, std::uint64_t seed) {
  const Eigen::Index n = x.rows();
  if (y.size() != n || static_cast<Eigen::Index>(keys.size()) != n) throw InvalidInput("cross_validate: size mismatch");
  if (folds < 2) throw InvalidInput("need at least 2 folds");

  // Canonical order by key, then a seeded shuffle within each class.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return keys[static_cast<std::size_t>(a)] < keys[static_cast<std::size_t>(b)];
  });
  std::array<std::vector<Eigen::Index>, 2> by_class;
  for (auto i : order) by_class[static_cast<std::size_t>(y(i) != 0)].push_back(i);

  CvResult out;
  out.n_bottom = by_class[0].size();
  out.n_top = by_class[1].size();
  if (by_class[0].empty() || by_class[1].empty()) throw InvalidInput("cross-validation needs both classes");
  if (by_class[0].size() < 2 || by_class[1].size() < 2)
    throw InvalidInput("each class needs at least 2 examples so every training fold sees both");

  std::vector<int> fold_of(static_cast<std::size_t>(n), 0);
  for (std::size_t c = 0; c < 2; ++c) {
    Rng rng(derive_seed(seed, "cv-fold", c));
    auto members = by_class[c];
    shuffle(members.begin(), members.end(), rng);
    for (std::size_t i = 0; i < members.size(); ++i)
      fold_of[static_cast<std::size_t>(members[i])] = static_cast<int>(i % static_cast<std::size_t>(folds));
  }

  for (int f = 0; f < folds; ++f) {
    std::vector<Eigen::Index> train, test;
    for (auto i : order) (fold_of[static_cast<std::size_t>(i)] == f ? test : train).push_back(i);
    if (test.empty()) continue;
    const Eigen::MatrixXd xtr = x(train, Eigen::all);
    const Eigen::VectorXi ytr = y(train);
    const auto scaler = logistic::Standardizer<double>::fit(xtr);
    const auto model = logistic::fit_l2(scaler.apply(xtr), ytr, l2);
    const Eigen::MatrixXd xte = scaler.apply(x(test, Eigen::all));
    const Eigen::VectorXd eta = (xte * model.weights).array() + model.intercept;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i)
      if ((eta(static_cast<Eigen::Index>(i)) > 0) == (y(test[i]) != 0)) ++correct;
    out.fold_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(test.size()));
  }
  out.mean_accuracy = std::accumulate(out.fold_accuracy.begin(), out.fold_accuracy.end(), 0.0) /
                      static_cast<double>(out.fold_accuracy.size());

  const auto scaler = logistic::Standardizer<double>::fit(x);
  const auto full = logistic::fit_l2(scaler.apply(x), y, l2);
  out.coefficients = full.weights;
  out.intercept = full.intercept;
  return out;
}

CvResult fit_logistic_cv(const FeatureTable& features, const std::map<std::string, Label>& labels, int folds, double l2,
                         std::uint64_t seed) {
  Eigen::MatrixXd x;
  Eigen::VectorXi y;
  std::vector<std::string> keys;
  labelled_rows(features, labels, x, y, keys);
  auto r = cross_validate(x, y, keys, folds, l2, seed);
  r.feature_names = features.names;
  return r;
}

Selection select_columns_l1(const Eigen::MatrixXd& x, const Eigen::VectorXi& y, double l1_strength) {
  if (y.size() == 0 || y.minCoeff() == y.maxCoeff()) throw InvalidInput("feature selection needs both classes");
  const auto scaler = logistic::Standardizer<double>::fit(x);
  const auto model = logistic::fit_l1(scaler.apply(x), y, l1_strength);
  Selection s;
  s.coefficients = model.weights;
  for (Eigen::Index j = 0; j < model.weights.size(); ++j)
    if (std::abs(model.weights(j)) > kZeroCoefficient) s.columns.push_back(static_cast<std::size_t>(j));
  if (s.columns.empty())
    throw InvalidInput("L1 screen removed every feature; use a weaker l1 strength than " + std::to_string(l1_strength));
  return s;
}

Selection select_features(const FeatureTable& features, const std::map<std::string, Label>& labels,
                          double l1_strength) {
  Eigen::MatrixXd x;
  Eigen::VectorXi y;
  std::vector<std::string> keys;
  labelled_rows(features, labels, x, y, keys);
  auto s = select_columns_l1(x, y, l1_strength);
  for (auto c : s.columns) s.names.push_back(features.names[c]);
  return s;
}

std::string format_coefficients(const CvResult& result, std::span<const FeatureKind> kinds) {
  const auto p = static_cast<std::size_t>(result.coefficients.size());
  std::vector<std::size_t> by_mag(p);
  std::iota(by_mag.begin(), by_mag.end(), std::size_t{0});
  std::stable_sort(by_mag.begin(), by_mag.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(result.coefficients(static_cast<Eigen::Index>(a))) >
           std::abs(result.coefficients(static_cast<Eigen::Index>(b)));
  });
  std::vector<std::size_t> rank(p);
  for (std::size_t r = 0; r < p; ++r) rank[by_mag[r]] = r + 1;

  std::string out = kinds.empty() ? "feature,coef,abs_rank\n" : "feature,coef,abs_rank,kind\n";
  for (std::size_t j = 0; j < p; ++j) {
    out += result.feature_names.at(j) + ',' + csv::format_fixed(result.coefficients(static_cast<Eigen::Index>(j)), 6) +
           ',' + std::to_string(rank[j]);
    if (!kinds.empty()) out += kinds[j] == FeatureKind::fraction ? ",fraction" : ",count";
    out += '\n';
  }
  return out;
}

nlohmann::json cv_report(const CvResult& result) {
  return nlohmann::json{{"folds", result.fold_accuracy.size()},
                        {"fold_accuracy", result.fold_accuracy},
                        {"mean_accuracy", result.mean_accuracy},
                        {"n_top", result.n_top},
                        {"n_bottom", result.n_bottom},
                        {"intercept", result.intercept}};
}

}  // namespace percept::interpret
