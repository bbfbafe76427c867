#pragma once

// Street-view sampling geometry: grid generation, road snapping and
// camera headings. All distances are haversine metres on a spherical Earth.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace percept::geo {

inline constexpr double kEarthRadiusM = 6371008.8;
inline constexpr double kDefaultSpacingM = 20.0;
inline constexpr double kDefaultSnapDistanceM = 15.0;

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;

  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

/// Throws InvalidInput unless lat is in [-90, 90] and lon in [-180, 180].
void validate(const GeoPoint& p);

struct RoadPoint {
  std::string id;
  GeoPoint point;
  double bearing = 0.0;  // degrees in [0, 360)
};

struct Headings {
  double a = 0.0;
  double b = 0.0;
};

struct PlannedLocation {
  RoadPoint road;
  GeoPoint image_point;  // the snapped candidate
  Headings headings;
};

struct SamplePlan {
  std::vector<PlannedLocation> locations;
  double spacing_m = kDefaultSpacingM;
};

struct Snap {
  std::size_t candidate = 0;  // index into the candidate list
  GeoPoint point;
  double distance_m = 0.0;
};

double haversine_m(const GeoPoint& a, const GeoPoint& b);

/// Initial great-circle bearing from a to b in degrees [0, 360).
double initial_bearing_deg(const GeoPoint& a, const GeoPoint& b);

/// Unit vector on the sphere (x towards lon 0 on the equator, z north).
Eigen::Vector3d to_unit_vector(const GeoPoint& p);

/// Axis-aligned lat/lon grid covering [sw, ne] inclusively, spaced spacing_m
/// apart in a local equirectangular frame taken at the box's mid-latitude.
/// Row-major from the south-west corner.
std::vector<GeoPoint> generate_grid(const GeoPoint& sw, const GeoPoint& ne, double spacing_m);

/// Static 3-d tree over candidate points. Queries return the exact haversine
/// nearest neighbour; ties go to the lowest candidate index.
class CandidateIndex {
public:
  explicit CandidateIndex(std::span<const GeoPoint> candidates);

  std::optional<Snap> nearest(const GeoPoint& query, double max_dist_m) const;
  std::size_t size() const { return points_.size(); }

private:
  struct Node {
    Eigen::Vector3d lo;
    Eigen::Vector3d hi;
    std::size_t begin = 0;
    std::size_t end = 0;
    int left = -1;
    int right = -1;
  };

  int build(std::size_t begin, std::size_t end);
  void search(int node, const GeoPoint& q, const Eigen::Vector3d& qv, double max_dist_m,
              std::optional<Snap>& best) const;

  std::vector<GeoPoint> points_;
  std::vector<Eigen::Vector3d> unit_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

/// For each road point, the nearest candidate within max_dist_m (if any).
std::map<std::string, Snap> snap_to_roads(std::span<const GeoPoint> candidates,
                                          std::span<const RoadPoint> roads,
                                          double max_dist_m = kDefaultSnapDistanceM);

/// ((bearing + 90) mod 360, (bearing + 270) mod 360). Bearing must be in [0, 360).
Headings perpendicular_headings(double bearing);

struct DedupeResult {
  std::set<std::string> images;
  double coverage = 0.0;
};

/// Unique images over road points, and the fraction of road points that have one.
DedupeResult dedupe_images(const std::map<std::string, std::optional<std::string>>& assignments);

/// Fills in missing bearings from neighbouring road points (file order).
/// Interior points use the segment between their two neighbours; endpoints
/// use their single neighbour.
void fill_bearings(std::vector<RoadPoint>& roads, const std::vector<bool>& has_bearing);

/// Snaps a grid over the roads' bounding box and attaches headings.
SamplePlan build_sample_plan(std::span<const RoadPoint> roads, double spacing_m = kDefaultSpacingM,
                             double max_dist_m = kDefaultSnapDistanceM);

/// CSV `id,lat,lon[,bearing]`; empty bearing cells are derived.
std::vector<RoadPoint> read_roads(const std::filesystem::path& path);

/// CSV `road_id,lat,lon,heading_a,heading_b`.
std::string format_sample_plan(const SamplePlan& plan);

}  // namespace percept::geo
