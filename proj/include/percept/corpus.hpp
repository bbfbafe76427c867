#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "percept/geo.hpp"
#include "percept/kmeans.hpp"

namespace percept {

inline constexpr int kDefaultClusters = 8;
inline constexpr std::size_t kDefaultSurveySize = 25000;

struct ImageRecord {
  std::string image_id;
  geo::GeoPoint location;
  int year = 0;
  std::optional<int> cluster;
};

/// Immutable set of images with one feature vector each (row i of features()).
class Corpus {
public:
  Corpus() = default;
  Corpus(std::vector<ImageRecord> records, Eigen::MatrixXd features);

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  /// Feature dimension; absent for an empty corpus.
  std::optional<Eigen::Index> dimension() const;

  const std::vector<ImageRecord>& records() const { return records_; }
  const Eigen::MatrixXd& features() const { return features_; }
  std::optional<std::size_t> find(const std::string& image_id) const;

  /// Copy with cluster ids attached (assignments parallel to records()).
  Corpus with_clusters(std::span<const int> assignments) const;

private:
  std::vector<ImageRecord> records_;
  Eigen::MatrixXd features_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// CSV `image_id,lat,lon,year,f0,...,f{d-1}`.
Corpus ingest_features(const std::filesystem::path& path);

/// Per-cluster quotas proportional to cluster sizes, rounded by largest remainder
/// (ties to the lower cluster index).
std::vector<std::size_t> proportional_quotas(std::span<const std::size_t> sizes, std::size_t n);

/// Stratified draw of n distinct images: proportional quotas, uniform without
/// replacement inside each cluster. Returned in corpus order.
std::vector<std::string> stratified_sample(const Corpus& corpus, std::span<const int> assignments, std::size_t n,
                                           std::uint64_t seed);

/// CSV `image_id,cluster`.
std::string format_assignments(const Corpus& corpus, std::span<const int> assignments);

struct ClusterAssignment {
  std::string image_id;
  int cluster = 0;
};
std::vector<ClusterAssignment> read_assignments(const std::filesystem::path& path);

}  // namespace percept
