#pragma once

// Output-Area aggregation of per-image scores and GeoJSON export for choropleths.
// Point-in-polygon is planar on (lon, lat), which is adequate at OA scale.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "percept/geo.hpp"

namespace percept::geomap {

using Ring = std::vector<geo::GeoPoint>;

/// One polygon part: outer ring followed by any holes.
using Part = std::vector<Ring>;

struct OutputArea {
  std::string oa_id;
  std::vector<Part> parts;

  /// Throws InvalidInput naming the oa_id when a ring is open or too short.
  void validate() const;
  /// Even-odd rule over every ring of every part; points on an edge are inside.
  bool contains(const geo::GeoPoint& p) const;
};

struct AreaAggregate {
  std::string oa_id;
  std::optional<double> mean_score;  // absent when n_images == 0
  std::size_t n_images = 0;
  std::optional<int> decile;         // 1..10, absent when n_images == 0

  friend bool operator==(const AreaAggregate&, const AreaAggregate&) = default;
};

struct CountSummary {
  std::size_t areas = 0;
  std::size_t areas_with_images = 0;
  std::size_t assigned_images = 0;
  std::size_t min = 0;
  std::size_t max = 0;
  double median = 0.0;  // over areas with at least one image
  double mean = 0.0;
};

/// Spatial lookup over a fixed set of areas.
class AreaIndex {
public:
  explicit AreaIndex(std::vector<OutputArea> areas);

  /// The lowest oa_id whose polygon contains `p`.
  std::optional<std::string> locate(const geo::GeoPoint& p) const;
  const std::vector<OutputArea>& areas() const { return areas_; }

private:
  struct Box {
    double min_lon, min_lat, max_lon, max_lat;
  };
  std::size_t cell_of(double lon, double lat) const;

  std::vector<OutputArea> areas_;  // sorted by oa_id
  std::vector<Box> boxes_;
  Box extent_{};
  std::size_t grid_ = 1;
  std::vector<std::vector<std::size_t>> cells_;
};

std::map<std::string, std::string> assign_points(const std::map<std::string, geo::GeoPoint>& images,
                                                 const AreaIndex& index);

/// One aggregate per area (areas without images included, mean absent).
std::vector<AreaAggregate> aggregate(const std::map<std::string, double>& scores,
                                     const std::map<std::string, std::string>& assignment,
                                     const std::vector<OutputArea>& areas);

CountSummary summarize_counts(const std::vector<AreaAggregate>& aggregates);

/// Rank-based deciles over areas with images; ties in mean broken by oa_id.
void assign_deciles(std::vector<AreaAggregate>& aggregates);

std::vector<OutputArea> read_areas(const std::filesystem::path& path);
std::vector<OutputArea> parse_areas(const std::string& geojson);

/// FeatureCollection with properties {oa_id, mean_score, n_images, decile};
/// every real number is written with 6 decimals.
std::string format_geojson(const std::vector<AreaAggregate>& aggregates, const std::vector<OutputArea>& areas);
void export_geojson(const std::vector<AreaAggregate>& aggregates, const std::vector<OutputArea>& areas,
                    const std::filesystem::path& path);
std::vector<AreaAggregate> read_aggregates(const std::string& geojson);

/// CSV `oa_id,mean_score,n_images,decile`, empty fields where absent.
std::string format_aggregates_csv(const std::vector<AreaAggregate>& aggregates);

}  // namespace percept::geomap
