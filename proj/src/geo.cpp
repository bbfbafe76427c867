#include "percept/geo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "percept/csv.hpp"
#include "percept/error.hpp"

namespace percept::geo {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr std::size_t kLeafSize = 8;
// Allowed disagreement between the chord bound and the haversine value.
constexpr double kBoundSlackM = 1e-6;

double wrap_degrees(double d) {
  d = std::fmod(d, 360.0);
  if (d < 0) d += 360.0;
  if (d >= 360.0) d -= 360.0;
  return d;
}

double chord_to_arc_m(double chord) { return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, chord / 2.0)); }

}  // namespace

void validate(const GeoPoint& p) {
  if (!(p.lat >= -90.0 && p.lat <= 90.0) || !(p.lon >= -180.0 && p.lon <= 180.0))
    throw InvalidInput("coordinate out of range: (" + std::to_string(p.lat) + ", " + std::to_string(p.lon) + ")");
}

double haversine_m(const GeoPoint& a, const GeoPoint& b) {
  const double dlat = (b.lat - a.lat) * kDeg;
  const double dlon = (b.lon - a.lon) * kDeg;
  const double s1 = std::sin(dlat / 2.0);
  const double s2 = std::sin(dlon / 2.0);
  const double h = s1 * s1 + std::cos(a.lat * kDeg) * std::cos(b.lat * kDeg) * s2 * s2;
  return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(h)));
}

double initial_bearing_deg(const GeoPoint& a, const GeoPoint& b) {
  const double phi1 = a.lat * kDeg;
  const double phi2 = b.lat * kDeg;
  const double dlon = (b.lon - a.lon) * kDeg;
  const double y = std::sin(dlon) * std::cos(phi2);
  const double x = std::cos(phi1) * std::sin(phi2) - std::sin(phi1) * std::cos(phi2) * std::cos(dlon);
  return wrap_degrees(std::atan2(y, x) / kDeg);
}

Eigen::Vector3d to_unit_vector(const GeoPoint& p) {
  const double phi = p.lat * kDeg;
  const double lam = p.lon * kDeg;
  return {std::cos(phi) * std::cos(lam), std::cos(phi) * std::sin(lam), std::sin(phi)};
}

std::vector<GeoPoint> generate_grid(const GeoPoint& sw, const GeoPoint& ne, double spacing_m) {
  validate(sw);
  validate(ne);
  if (!(spacing_m > 0.0) || !std::isfinite(spacing_m)) throw InvalidInput("grid spacing must be positive");
  if (sw.lat > ne.lat || sw.lon > ne.lon) throw InvalidInput("bounding box corners must be (south-west, north-east)");

  const double m_per_deg_lat = kEarthRadiusM * kDeg;
  const double mid_lat = 0.5 * (sw.lat + ne.lat);
  const double m_per_deg_lon = m_per_deg_lat * std::cos(mid_lat * kDeg);
  const double dlat = spacing_m / m_per_deg_lat;
  const double dlon = m_per_deg_lon > 0 ? spacing_m / m_per_deg_lon : 360.0;

  // Relative slack so that an extent of n*spacing, up to conversion round-off, yields n+1 points.
  auto count = [&](double extent_m) {
    return static_cast<std::size_t>(std::floor(extent_m / spacing_m * (1.0 + 1e-6) + 1e-9)) + 1;
  };
  const std::size_t rows = count((ne.lat - sw.lat) * m_per_deg_lat);
  const std::size_t cols = count((ne.lon - sw.lon) * m_per_deg_lon);
  if (static_cast<double>(rows) * static_cast<double>(cols) > 5e7)
    throw InvalidInput("grid too large: " + std::to_string(rows) + " x " + std::to_string(cols));

  std::vector<GeoPoint> out;
  out.reserve(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double lat = std::min(ne.lat, sw.lat + static_cast<double>(r) * dlat);
    for (std::size_t c = 0; c < cols; ++c)
      out.push_back({lat, std::min(ne.lon, sw.lon + static_cast<double>(c) * dlon)});
  }
  return out;
}

CandidateIndex::CandidateIndex(std::span<const GeoPoint> candidates)
    : points_(candidates.begin(), candidates.end()) {
  unit_.reserve(points_.size());
  for (const auto& p : points_) unit_.push_back(to_unit_vector(p));
  order_.resize(points_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (!points_.empty()) build(0, points_.size());
}

int CandidateIndex::build(std::size_t begin, std::size_t end) {
  Node node;
  node.begin = begin;
  node.end = end;
  node.lo = unit_[order_[begin]];
  node.hi = node.lo;
  for (std::size_t i = begin; i < end; ++i) {
    node.lo = node.lo.cwiseMin(unit_[order_[i]]);
    node.hi = node.hi.cwiseMax(unit_[order_[i]]);
  }
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  if (end - begin <= kLeafSize) return id;

  Eigen::Index axis = 0;
  (node.hi - node.lo).maxCoeff(&axis);
  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                   order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end),
                   [&](std::size_t a, std::size_t b) { return unit_[a][axis] < unit_[b][axis]; });
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[static_cast<std::size_t>(id)].left = left;
  nodes_[static_cast<std::size_t>(id)].right = right;
  return id;
}

void CandidateIndex::search(int node_id, const GeoPoint& q, const Eigen::Vector3d& qv, double max_dist_m,
                            std::optional<Snap>& best) const {
  const Node& node = nodes_[static_cast<std::size_t>(node_id)];
  const Eigen::Vector3d closest = qv.cwiseMax(node.lo).cwiseMin(node.hi);
  const double bound = chord_to_arc_m((qv - closest).norm()) - kBoundSlackM;
  if (bound > max_dist_m) return;
  if (best && bound > best->distance_m) return;

  if (node.left < 0) {
    for (std::size_t i = node.begin; i < node.end; ++i) {
      const std::size_t idx = order_[i];
      const double d = haversine_m(q, points_[idx]);
      if (d > max_dist_m) continue;
      if (!best || d < best->distance_m || (d == best->distance_m && idx < best->candidate))
        best = Snap{idx, points_[idx], d};
    }
    return;
  }
  // Descend into the nearer child first.
  const Node& l = nodes_[static_cast<std::size_t>(node.left)];
  const Node& r = nodes_[static_cast<std::size_t>(node.right)];
  const double dl = (qv - qv.cwiseMax(l.lo).cwiseMin(l.hi)).squaredNorm();
  const double dr = (qv - qv.cwiseMax(r.lo).cwiseMin(r.hi)).squaredNorm();
  if (dl <= dr) {
    search(node.left, q, qv, max_dist_m, best);
    search(node.right, q, qv, max_dist_m, best);
  } else {
    search(node.right, q, qv, max_dist_m, best);
    search(node.left, q, qv, max_dist_m, best);
  }
}

std::optional<Snap> CandidateIndex::nearest(const GeoPoint& query, double max_dist_m) const {
  std::optional<Snap> best;
  if (nodes_.empty() || max_dist_m < 0) return best;
  search(0, query, to_unit_vector(query), max_dist_m, best);
  return best;
}

std::map<std::string, Snap> snap_to_roads(std::span<const GeoPoint> candidates, std::span<const RoadPoint> roads,
                                          double max_dist_m) {
  if (roads.empty()) throw InvalidInput("snap_to_roads needs at least one road point");
  const CandidateIndex index(candidates);
  std::map<std::string, Snap> out;
  for (const auto& road : roads) {
    if (auto hit = index.nearest(road.point, max_dist_m)) out.emplace(road.id, *hit);
  }
  return out;
}

Headings perpendicular_headings(double bearing) {
  if (!(bearing >= 0.0 && bearing < 360.0)) throw InvalidInput("bearing must be in [0, 360): " + std::to_string(bearing));
  return {wrap_degrees(bearing + 90.0), wrap_degrees(bearing + 270.0)};
}

DedupeResult dedupe_images(const std::map<std::string, std::optional<std::string>>& assignments) {
  DedupeResult r;
  std::size_t assigned = 0;
  for (const auto& [road, image] : assignments) {
    if (!image) continue;
    ++assigned;
    r.images.insert(*image);
  }
  r.coverage = assignments.empty() ? 0.0 : static_cast<double>(assigned) / static_cast<double>(assignments.size());
  return r;
}

void fill_bearings(std::vector<RoadPoint>& roads, const std::vector<bool>& has_bearing) {
  const std::size_t n = roads.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (has_bearing[i]) continue;
    if (n == 1) {
      roads[i].bearing = 0.0;
    } else if (i == 0) {
      roads[i].bearing = initial_bearing_deg(roads[0].point, roads[1].point);
    } else if (i + 1 == n) {
      roads[i].bearing = initial_bearing_deg(roads[n - 2].point, roads[n - 1].point);
    } else {
      roads[i].bearing = initial_bearing_deg(roads[i - 1].point, roads[i + 1].point);
    }
  }
}

SamplePlan build_sample_plan(std::span<const RoadPoint> roads, double spacing_m, double max_dist_m) {
  if (roads.empty()) throw InvalidInput("no road points");
  GeoPoint sw = roads.front().point;
  GeoPoint ne = sw;
  for (const auto& r : roads) {
    sw.lat = std::min(sw.lat, r.point.lat);
    sw.lon = std::min(sw.lon, r.point.lon);
    ne.lat = std::max(ne.lat, r.point.lat);
    ne.lon = std::max(ne.lon, r.point.lon);
  }
  const auto grid = generate_grid(sw, ne, spacing_m);
  const auto snaps = snap_to_roads(grid, roads, max_dist_m);

  SamplePlan plan;
  plan.spacing_m = spacing_m;
  for (const auto& road : roads) {
    auto it = snaps.find(road.id);
    if (it == snaps.end()) continue;
    plan.locations.push_back({road, it->second.point, perpendicular_headings(road.bearing)});
  }
  return plan;
}

std::vector<RoadPoint> read_roads(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const auto c_id = table.column("id");
  const auto c_lat = table.column("lat");
  const auto c_lon = table.column("lon");
  const bool with_bearing = table.has_column("bearing");
  const auto c_bearing = with_bearing ? table.column("bearing") : 0;

  std::vector<RoadPoint> roads;
  std::vector<bool> has_bearing;
  std::set<std::string> seen;
  for (const auto& row : table.rows) {
    if (row.fields.size() != table.header.size() && !(with_bearing && row.fields.size() + 1 == table.header.size()))
      throw ParseError("wrong number of fields", row.line);
    RoadPoint r;
    r.id = row.fields[c_id];
    if (!seen.insert(r.id).second) throw ParseError("duplicate road id '" + r.id + "'", row.line);
    r.point = {csv::to_double(row.fields[c_lat], row.line), csv::to_double(row.fields[c_lon], row.line)};
    try {
      validate(r.point);
    } catch (const InvalidInput& e) {
      throw ParseError(e.what(), row.line);
    }
    bool have = false;
    if (with_bearing && c_bearing < row.fields.size() && !row.fields[c_bearing].empty()) {
      r.bearing = wrap_degrees(csv::to_double(row.fields[c_bearing], row.line));
      have = true;
    }
    roads.push_back(std::move(r));
    has_bearing.push_back(have);
  }
  fill_bearings(roads, has_bearing);
  return roads;
}

std::string format_sample_plan(const SamplePlan& plan) {
  std::string out = "road_id,lat,lon,heading_a,heading_b\n";
  for (const auto& loc : plan.locations) {
    out += loc.road.id;
    out += ',' + csv::format_fixed(loc.image_point.lat, 7) + ',' + csv::format_fixed(loc.image_point.lon, 7);
    out += ',' + csv::format_double(loc.headings.a) + ',' + csv::format_double(loc.headings.b) + '\n';
  }
  return out;
}

}  // namespace percept::geo
