#pragma once

// Which scene features separate the top and bottom score deciles: an L1 screen
// followed by a cross-validated L2 logistic model on standardized features.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

namespace percept::interpret {

inline constexpr int kDefaultFolds = 5;
inline constexpr double kDefaultL2 = 1.0;

enum class FeatureKind { fraction, count };

struct FeatureTable {
  std::vector<std::string> names;
  std::vector<FeatureKind> kinds;
  std::vector<std::string> image_ids;
  Eigen::MatrixXd values;  // image x feature

  std::size_t row_of(const std::string& image_id) const;
  /// Throws InvalidInput on fractions outside [0, 1] or negative counts.
  void validate() const;
  FeatureTable select_columns(std::span<const std::size_t> columns) const;
};

/// CSV `image_id,<name_1>,...,<name_p>` plus a sidecar CSV `feature,kind` with
/// kind in {fraction, count}. Without a sidecar every column is a count.
FeatureTable read_feature_table(const std::filesystem::path& path, const std::filesystem::path& sidecar = {});

enum class Label { bottom = 0, top = 1 };

/// Images in the lowest decile are bottom, highest are top; the rest are left out.
std::map<std::string, Label> label_extremes(const std::map<std::string, double>& scaled_scores);

struct CvResult {
  std::vector<std::string> feature_names;
  Eigen::VectorXd coefficients;  // standardized scale, full-data fit
  double intercept = 0.0;
  std::vector<double> fold_accuracy;
  double mean_accuracy = 0.0;
  std::size_t n_top = 0;
  std::size_t n_bottom = 0;
};

/// Stratified k-fold cross-validation of an L2 logistic model. Folds are
/// assigned from `keys` order, so results do not depend on row order.
CvResult cross_validate(const Eigen::MatrixXd& x, const Eigen::VectorXi& y, std::span<const std::string> keys,
                        int folds = kDefaultFolds, double l2 = kDefaultL2, std::uint64_t seed = 0);

/// cross_validate() on the labelled rows of a feature table.
CvResult fit_logistic_cv(const FeatureTable& features, const std::map<std::string, Label>& labels,
                         int folds = kDefaultFolds, double l2 = kDefaultL2, std::uint64_t seed = 0);

struct Selection {
  std::vector<std::size_t> columns;
  std::vector<std::string> names;
  Eigen::VectorXd coefficients;  // full L1 fit, standardized scale
};

/// Features with a nonzero coefficient in an L1 logistic fit on standardized
/// features. Throws when nothing survives.
Selection select_features(const FeatureTable& features, const std::map<std::string, Label>& labels,
                          double l1_strength);

/// Same, on a raw matrix.
Selection select_columns_l1(const Eigen::MatrixXd& x, const Eigen::VectorXi& y, double l1_strength);

/// CSV `feature,coef,abs_rank` (rank 1 = largest |coef|).
std::string format_coefficients(const CvResult& result, std::span<const FeatureKind> kinds = {});
nlohmann::json cv_report(const CvResult& result);

}  // namespace percept::interpret
