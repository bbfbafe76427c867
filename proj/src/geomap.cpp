#include "percept/geomap.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "percept/csv.hpp"
#include "percept/error.hpp"

namespace percept::geomap {

namespace {

using nlohmann::json;

bool on_segment(const geo::GeoPoint& p, const geo::GeoPoint& a, const geo::GeoPoint& b) {
  const double cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
  const double scale = std::max({std::abs(b.lon - a.lon), std::abs(b.lat - a.lat), 1e-300});
  if (std::abs(cross) > 1e-12 * scale) return false;
  return p.lon >= std::min(a.lon, b.lon) && p.lon <= std::max(a.lon, b.lon) && p.lat >= std::min(a.lat, b.lat) &&
         p.lat <= std::max(a.lat, b.lat);
}

std::string fixed6(double v) { return csv::format_fixed(v, 6); }

Ring parse_ring(const json& coords, const std::string& oa_id) {
  if (!coords.is_array()) throw InvalidInput("area '" + oa_id + "': ring is not an array");
  Ring ring;
  for (const auto& c : coords) {
    if (!c.is_array() || c.size() < 2 || !c[0].is_number() || !c[1].is_number())
      throw InvalidInput("area '" + oa_id + "': malformed coordinate");
    ring.push_back({c[1].get<double>(), c[0].get<double>()});
  }
  return ring;
}

Part parse_polygon(const json& rings, const std::string& oa_id) {
  if (!rings.is_array() || rings.empty()) throw InvalidInput("area '" + oa_id + "': polygon has no rings");
  Part part;
  for (const auto& r : rings) part.push_back(parse_ring(r, oa_id));
  return part;
}

std::string id_of(const json& feature) {
  const auto props = feature.find("properties");
  if (props == feature.end() || !props->is_object()) throw InvalidInput("feature without properties");
  const auto id = props->find("oa_id");
  if (id == props->end()) throw InvalidInput("feature without an oa_id property");
  if (id->is_string()) return id->get<std::string>();
  if (id->is_number_integer()) return std::to_string(id->get<long long>());
  throw InvalidInput("oa_id must be a string or integer");
}

const json& features_of(const json& doc) {
  if (!doc.is_object() || doc.value("type", "") != "FeatureCollection" || !doc.contains("features") ||
      !doc["features"].is_array())
    throw ParseError("expected a GeoJSON FeatureCollection");
  return doc["features"];
}

json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid GeoJSON: ") + e.what());
  }
}

}  // namespace

void OutputArea::validate() const {
  if (parts.empty()) throw InvalidInput("area '" + oa_id + "' has no polygon");
  for (const auto& part : parts) {
    if (part.empty()) throw InvalidInput("area '" + oa_id + "' has an empty polygon part");
    for (const auto& ring : part) {
      if (ring.size() < 4) throw InvalidInput("area '" + oa_id + "' has a ring with fewer than 4 vertices");
      if (!(ring.front() == ring.back())) throw InvalidInput("area '" + oa_id + "' has an unclosed ring");
      for (const auto& p : ring)
        if (!std::isfinite(p.lat) || !std::isfinite(p.lon))
          throw InvalidInput("area '" + oa_id + "' has a non-finite vertex");
    }
  }
}

bool OutputArea::contains(const geo::GeoPoint& p) const {
  bool inside = false;
  for (const auto& part : parts)
    for (const auto& ring : part)
      for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
        const auto& a = ring[i];
        const auto& b = ring[j];
        if (on_segment(p, a, b)) return true;
        if ((a.lat > p.lat) != (b.lat > p.lat)) {
          const double x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
          if (p.lon < x) inside = !inside;
        }
      }
  return inside;
}

AreaIndex::AreaIndex(std::vector<OutputArea> areas) : areas_(std::move(areas)) {
  std::sort(areas_.begin(), areas_.end(), [](const auto& a, const auto& b) { return a.oa_id < b.oa_id; });
  for (std::size_t i = 0; i + 1 < areas_.size(); ++i)
    if (areas_[i].oa_id == areas_[i + 1].oa_id) throw InvalidInput("duplicate oa_id '" + areas_[i].oa_id + "'");

  extent_ = {INFINITY, INFINITY, -INFINITY, -INFINITY};
  for (const auto& area : areas_) {
    area.validate();
    Box b{INFINITY, INFINITY, -INFINITY, -INFINITY};
    for (const auto& part : area.parts)
      for (const auto& ring : part)
        for (const auto& p : ring) {
          b.min_lon = std::min(b.min_lon, p.lon);
          b.min_lat = std::min(b.min_lat, p.lat);
          b.max_lon = std::max(b.max_lon, p.lon);
          b.max_lat = std::max(b.max_lat, p.lat);
        }
    boxes_.push_back(b);
    extent_.min_lon = std::min(extent_.min_lon, b.min_lon);
    extent_.min_lat = std::min(extent_.min_lat, b.min_lat);
    extent_.max_lon = std::max(extent_.max_lon, b.max_lon);
    extent_.max_lat = std::max(extent_.max_lat, b.max_lat);
  }
  if (areas_.empty()) return;

  grid_ = std::clamp<std::size_t>(static_cast<std::size_t>(std::sqrt(static_cast<double>(areas_.size()))), 1, 256);
  cells_.assign(grid_ * grid_, {});
  const auto span_lon = std::max(extent_.max_lon - extent_.min_lon, 1e-12);
  const auto span_lat = std::max(extent_.max_lat - extent_.min_lat, 1e-12);
  auto clamp_cell = [&](double t) {
    return std::min(grid_ - 1, static_cast<std::size_t>(std::max(0.0, std::floor(t * static_cast<double>(grid_)))));
  };
  for (std::size_t i = 0; i < boxes_.size(); ++i) {
    const auto& b = boxes_[i];
    const auto x0 = clamp_cell((b.min_lon - extent_.min_lon) / span_lon);
    const auto x1 = clamp_cell((b.max_lon - extent_.min_lon) / span_lon);
    const auto y0 = clamp_cell((b.min_lat - extent_.min_lat) / span_lat);
    const auto y1 = clamp_cell((b.max_lat - extent_.min_lat) / span_lat);
    for (auto y = y0; y <= y1; ++y)
      for (auto x = x0; x <= x1; ++x) cells_[y * grid_ + x].push_back(i);
  }
}

std::size_t AreaIndex::cell_of(double lon, double lat) const {
  const auto span_lon = std::max(extent_.max_lon - extent_.min_lon, 1e-12);
  const auto span_lat = std::max(extent_.max_lat - extent_.min_lat, 1e-12);
  auto clamp_cell = [&](double t) {
    return std::min(grid_ - 1, static_cast<std::size_t>(std::max(0.0, std::floor(t * static_cast<double>(grid_)))));
  };
  return clamp_cell((lat - extent_.min_lat) / span_lat) * grid_ + clamp_cell((lon - extent_.min_lon) / span_lon);
}

std::optional<std::string> AreaIndex::locate(const geo::GeoPoint& p) const {
  if (areas_.empty() || p.lon < extent_.min_lon || p.lon > extent_.max_lon || p.lat < extent_.min_lat ||
      p.lat > extent_.max_lat)
    return std::nullopt;
  // Cell lists are in index order, which is oa_id order.
  for (auto i : cells_[cell_of(p.lon, p.lat)]) {
    const auto& b = boxes_[i];
    if (p.lon < b.min_lon || p.lon > b.max_lon || p.lat < b.min_lat || p.lat > b.max_lat) continue;
    if (areas_[i].contains(p)) return areas_[i].oa_id;
  }
  return std::nullopt;
}

std::map<std::string, std::string> assign_points(const std::map<std::string, geo::GeoPoint>& images,
                                                 const AreaIndex& index) {
  std::map<std::string, std::string> out;
  for (const auto& [id, p] : images)
    if (auto oa = index.locate(p)) out.emplace(id, std::move(*oa));
  return out;
}

std::vector<AreaAggregate> aggregate(const std::map<std::string, double>& scores,
                                     const std::map<std::string, std::string>& assignment,
                                     const std::vector<OutputArea>& areas) {
  std::map<std::string, std::pair<double, std::size_t>> sums;
  for (const auto& area : areas) sums.emplace(area.oa_id, std::pair{0.0, std::size_t{0}});
  for (const auto& [image, oa] : assignment) {
    auto s = scores.find(image);
    if (s == scores.end()) continue;
    auto it = sums.find(oa);
    if (it == sums.end()) throw InvalidInput("image '" + image + "' assigned to unknown area '" + oa + "'");
    it->second.first += s->second;
    ++it->second.second;
  }
  std::vector<AreaAggregate> out;
  for (const auto& [oa, acc] : sums) {
    AreaAggregate a{oa, std::nullopt, acc.second, std::nullopt};
    if (acc.second > 0) a.mean_score = acc.first / static_cast<double>(acc.second);
    out.push_back(std::move(a));
  }
  return out;
}

CountSummary summarize_counts(const std::vector<AreaAggregate>& aggregates) {
  CountSummary s;
  s.areas = aggregates.size();
  std::vector<std::size_t> counts;
  for (const auto& a : aggregates) {
    s.assigned_images += a.n_images;
    if (a.n_images > 0) counts.push_back(a.n_images);
  }
  s.areas_with_images = counts.size();
  if (counts.empty()) return s;
  std::sort(counts.begin(), counts.end());
  s.min = counts.front();
  s.max = counts.back();
  const auto n = counts.size();
  s.median = n % 2 ? static_cast<double>(counts[n / 2])
                   : 0.5 * static_cast<double>(counts[n / 2 - 1] + counts[n / 2]);
  s.mean = static_cast<double>(s.assigned_images) / static_cast<double>(n);
  return s;
}

void assign_deciles(std::vector<AreaAggregate>& aggregates) {
  std::vector<AreaAggregate*> scored;
  for (auto& a : aggregates) {
    a.decile.reset();
    if (a.n_images > 0) scored.push_back(&a);
  }
  if (scored.size() < 10)
    throw InvalidInput(fmt::format("deciles need at least 10 areas with images, got {}", scored.size()));
  std::sort(scored.begin(), scored.end(), [](const AreaAggregate* a, const AreaAggregate* b) {
    if (*a->mean_score != *b->mean_score) return *a->mean_score < *b->mean_score;
    return a->oa_id < b->oa_id;
  });
  const auto n = scored.size();
  for (std::size_t r = 0; r < n; ++r) scored[r]->decile = static_cast<int>(r * 10 / n) + 1;
}

std::vector<OutputArea> parse_areas(const std::string& geojson) {
  const auto doc = parse_json(geojson);
  std::vector<OutputArea> areas;
  for (const auto& f : features_of(doc)) {
    OutputArea area{id_of(f), {}};
    const auto geom = f.find("geometry");
    if (geom == f.end() || !geom->is_object()) throw InvalidInput("area '" + area.oa_id + "' has no geometry");
    const auto type = geom->value("type", "");
    const auto& coords = (*geom)["coordinates"];
    if (type == "Polygon") {
      area.parts.push_back(parse_polygon(coords, area.oa_id));
    } else if (type == "MultiPolygon") {
      if (!coords.is_array()) throw InvalidInput("area '" + area.oa_id + "': malformed MultiPolygon");
      for (const auto& poly : coords) area.parts.push_back(parse_polygon(poly, area.oa_id));
    } else {
      throw InvalidInput("area '" + area.oa_id + "' has unsupported geometry type '" + type + "'");
    }
    area.validate();
    areas.push_back(std::move(area));
  }
  return areas;
}

std::vector<OutputArea> read_areas(const std::filesystem::path& path) { return parse_areas(csv::read_file(path)); }

std::string format_geojson(const std::vector<AreaAggregate>& aggregates, const std::vector<OutputArea>& areas) {
  std::map<std::string, const OutputArea*> by_id;
  for (const auto& a : areas) by_id[a.oa_id] = &a;

  std::string out = "{\"type\":\"FeatureCollection\",\"features\":[";
  bool first = true;
  for (const auto& agg : aggregates) {
    auto it = by_id.find(agg.oa_id);
    if (it == by_id.end()) throw InvalidInput("no boundary for area '" + agg.oa_id + "'");
    const auto& area = *it->second;
    out += first ? "\n" : ",\n";
    first = false;
    out += "{\"type\":\"Feature\",\"properties\":{\"oa_id\":" + json(agg.oa_id).dump();
    out += ",\"mean_score\":" + (agg.mean_score ? fixed6(*agg.mean_score) : std::string("null"));
    out += ",\"n_images\":" + std::to_string(agg.n_images);
    out += ",\"decile\":" + (agg.decile ? std::to_string(*agg.decile) : std::string("null"));
    out += area.parts.size() == 1 ? "},\"geometry\":{\"type\":\"Polygon\",\"coordinates\":"
                                  : "},\"geometry\":{\"type\":\"MultiPolygon\",\"coordinates\":[";
    for (std::size_t pi = 0; pi < area.parts.size(); ++pi) {
      if (pi) out += ',';
      out += '[';
      for (std::size_t ri = 0; ri < area.parts[pi].size(); ++ri) {
        if (ri) out += ',';
        out += '[';
        const auto& ring = area.parts[pi][ri];
        for (std::size_t k = 0; k < ring.size(); ++k) {
          if (k) out += ',';
          out += '[' + fixed6(ring[k].lon) + ',' + fixed6(ring[k].lat) + ']';
        }
        out += ']';
      }
      out += ']';
    }
    out += area.parts.size() == 1 ? "}}" : "]}}";
  }
  out += "\n]}\n";
  return out;
}

void export_geojson(const std::vector<AreaAggregate>& aggregates, const std::vector<OutputArea>& areas,
                    const std::filesystem::path& path) {
  csv::write_file_atomic(path, format_geojson(aggregates, areas));
}

std::vector<AreaAggregate> read_aggregates(const std::string& geojson) {
  const auto doc = parse_json(geojson);
  std::vector<AreaAggregate> out;
  for (const auto& f : features_of(doc)) {
    AreaAggregate a;
    a.oa_id = id_of(f);
    const auto& p = f["properties"];
    if (p.contains("mean_score") && !p["mean_score"].is_null()) a.mean_score = p["mean_score"].get<double>();
    a.n_images = p.value("n_images", std::size_t{0});
    if (p.contains("decile") && !p["decile"].is_null()) a.decile = p["decile"].get<int>();
    out.push_back(std::move(a));
  }
  return out;
}

std::string format_aggregates_csv(const std::vector<AreaAggregate>& aggregates) {
  std::string out = "oa_id,mean_score,n_images,decile\n";
  for (const auto& a : aggregates)
    out += fmt::format("{},{},{},{}\n", a.oa_id, a.mean_score ? fixed6(*a.mean_score) : "", a.n_images,
                       a.decile ? std::to_string(*a.decile) : "");
  return out;
}

}  // namespace percept::geomap
