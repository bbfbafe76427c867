// Writes the bundled 200-image synthetic city used by `percept run all`.
// Votes come from simulated raters driving the real survey service, with a
// few one-sided raters and double-submitted duplicates planted on top.

#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <unistd.h>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "percept/csv.hpp"
#include "percept/event_store.hpp"
#include "percept/geo.hpp"
#include "percept/pipeline.hpp"
#include "percept/rng.hpp"
#include "percept/scheduler.hpp"
#include "percept/survey_service.hpp"
#include "percept/votes.hpp"

namespace fs = std::filesystem;
using namespace percept;
using nlohmann::json;

namespace {

constexpr std::uint64_t kSeed = 2024;
constexpr int kImages = 200;
constexpr int kVisualTypes = 8;
constexpr int kDims = 16;
constexpr double kSouth = 51.5000, kNorth = 51.5090, kWest = -0.1300, kEast = -0.1160;
constexpr int kGrid = 5;  // areas per side

struct Image {
  std::string id;
  geo::GeoPoint at;
  int type = 0;
  std::array<double, 4> fractions{};  // greenery, sky, building, road
  int cars = 0;
  int people = 0;
  double quality = 0.0;
};

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

int poisson(Rng& rng, double mean) {
  const double limit = std::exp(-mean);
  int k = 0;
  for (double p = uniform01(rng); p > limit; p *= uniform01(rng)) ++k;
  return k;
}

std::vector<Image> make_images(Rng& rng) {
  std::vector<Image> images;
  for (int i = 0; i < kImages; ++i) {
    Image im;
    im.id = fmt::format("img{:04d}", i + 1);
    im.at = {uniform(rng, kSouth + 1e-5, kNorth - 1e-5), uniform(rng, kWest + 1e-5, kEast - 1e-5)};
    im.type = static_cast<int>(uniform_index(rng, kVisualTypes));
    std::array<double, 5> raw{};
    double total = 0;
    for (auto& r : raw) total += (r = -std::log(1.0 - uniform01(rng)));
    for (int j = 0; j < 4; ++j) im.fractions[static_cast<std::size_t>(j)] = raw[static_cast<std::size_t>(j)] / total;
    im.cars = poisson(rng, 4.0);
    im.people = poisson(rng, 2.0);
    im.quality = 6.0 * im.fractions[0] - 0.45 * im.cars + 0.2 * im.people + 0.4 * standard_normal(rng);
    images.push_back(im);
  }
  return images;
}

std::string features_csv(const std::vector<Image>& images, Rng& rng) {
  std::array<std::array<double, kDims>, kVisualTypes> centers{};
  for (auto& c : centers)
    for (auto& v : c) v = 3.0 * standard_normal(rng);
  std::string out = "image_id,lat,lon,year";
  for (int j = 0; j < kDims; ++j) out += fmt::format(",f{}", j);
  out += '\n';
  for (const auto& im : images) {
    out += fmt::format("{},{},{},{}", im.id, csv::format_fixed(im.at.lat, 7), csv::format_fixed(im.at.lon, 7),
                       2014 + static_cast<int>(uniform_index(rng, 3)));
    for (int j = 0; j < kDims; ++j)
      out += ',' + csv::format_fixed(centers[static_cast<std::size_t>(im.type)][static_cast<std::size_t>(j)] +
                                         0.6 * standard_normal(rng), 5);
    out += '\n';
  }
  return out;
}

std::string segmentation_csv(const std::vector<Image>& images) {
  std::string out = "image_id,greenery,sky,building,road,cars,people\n";
  for (const auto& im : images)
    out += fmt::format("{},{},{},{},{},{},{}\n", im.id, csv::format_fixed(im.fractions[0], 5),
                       csv::format_fixed(im.fractions[1], 5), csv::format_fixed(im.fractions[2], 5),
                       csv::format_fixed(im.fractions[3], 5), im.cars, im.people);
  return out;
}

std::string roads_csv() {
  // Six east-west streets with known bearing, four north-south streets without.
  std::string out = "id,lat,lon,bearing\n";
  const double m_per_deg_lat = 111195.0;
  const double m_per_deg_lon = m_per_deg_lat * std::cos((kSouth + kNorth) / 2 * M_PI / 180.0);
  int id = 0;
  for (int s = 0; s < 6; ++s) {
    const double lat = kSouth + (s + 0.5) * (kNorth - kSouth) / 6;
    for (double lon = kWest; lon <= kEast; lon += 20.0 / m_per_deg_lon)
      out += fmt::format("r{:04d},{},{},90\n", ++id, csv::format_fixed(lat, 7), csv::format_fixed(lon, 7));
  }
  for (int s = 0; s < 4; ++s) {
    const double lon = kWest + (s + 0.5) * (kEast - kWest) / 4;
    for (double lat = kSouth; lat <= kNorth; lat += 20.0 / m_per_deg_lat)
      out += fmt::format("r{:04d},{},{},\n", ++id, csv::format_fixed(lat, 7), csv::format_fixed(lon, 7));
  }
  return out;
}

json square(double s, double w, double n, double e) {
  return json::array({json::array({json::array({w, s}), json::array({e, s}), json::array({e, n}), json::array({w, n}),
                                   json::array({w, s})})});
}

std::string areas_geojson() {
  json features = json::array();
  const double dlat = (kNorth - kSouth) / kGrid, dlon = (kEast - kWest) / kGrid;
  int id = 0;
  for (int r = 0; r < kGrid; ++r)
    for (int c = 0; c < kGrid; ++c) {
      const double s = kSouth + r * dlat, w = kWest + c * dlon;
      features.push_back({{"type", "Feature"},
                          {"properties", {{"oa_id", fmt::format("OA{:03d}", ++id)}}},
                          {"geometry", {{"type", "Polygon"}, {"coordinates", square(s, w, s + dlat, w + dlon)}}}});
    }
  // A two-part area just outside the surveyed extent: exported with no images.
  json parts = json::array({square(kNorth + 0.0005, kWest, kNorth + 0.0015, kWest + dlon),
                            square(kNorth + 0.0005, kWest + 2 * dlon, kNorth + 0.0015, kWest + 3 * dlon)});
  features.push_back({{"type", "Feature"},
                      {"properties", {{"oa_id", fmt::format("OA{:03d}", ++id)}}},
                      {"geometry", {{"type", "MultiPolygon"}, {"coordinates", parts}}}});
  return json{{"type", "FeatureCollection"}, {"features", features}}.dump(1) + "\n";
}

json pipeline_config() {
  return {{"seed", 7},
          {"paths",
           {{"roads", "roads.csv"},
            {"features", "features.csv"},
            {"areas", "areas.geojson"},
            {"votes", "votes.csv"},
            {"sessions", "sessions.csv"},
            {"segmentation", "segmentation.csv"},
            {"segmentation_kinds", "segmentation_kinds.csv"}}},
          {"cluster", {{"k", kVisualTypes}, {"survey_size", kImages}}},
          {"scheduler", {{"target_within_fraction", 0.2}, {"repeat_rate", 0.1}, {"repeated_pairs", 6}}},
          {"mlm", {{"grouping", "source"}}},
          {"interpret", {{"folds", 5}, {"l2", 1.0}, {"l1", 0.02}}},
          {"map", {{"score_column", "scaled"}}}};
}

Demographics random_demographics(Rng& rng) {
  Demographics d;
  d.location = bernoulli(rng, 0.6) ? Location::london : Location::not_london;
  d.gender = std::array{Gender::female, Gender::male, Gender::other}[uniform_index(rng, 3)];
  d.activity = bernoulli(rng, 0.5) ? Activity::high : Activity::low;
  d.source = bernoulli(rng, 0.7) ? Source::amt : Source::network;
  return d;
}

void simulate(SurveyService& service, const std::map<std::string, double>& quality, TimestampMs& now, Rng& rng) {
  constexpr int kRaters = 90;
  constexpr int kOneSided = 3;
  for (int r = 0; r < kRaters + kOneSided; ++r) {
    const bool one_sided = r >= kRaters;
    const auto session = service.create_session(bernoulli(rng, 0.85) ? std::optional(random_demographics(rng)) : std::nullopt);
    const int games = one_sided ? 20 : 15 + static_cast<int>(uniform_index(rng, 21));
    for (int g = 0; g < games; ++g) {
      now += 3000 + static_cast<TimestampMs>(uniform_index(rng, 9000));
      const auto response = service.get_pair(session);
      const auto* offer = std::get_if<PairOffer>(&response);
      if (!offer) break;
      Choice choice;
      const double u = uniform01(rng);
      if (one_sided) {
        choice = Choice::left;
      } else if (u < 0.03) {
        choice = Choice::not_comparable;
      } else if (u < 0.05) {
        choice = Choice::not_shown;
      } else {
        const double diff = quality.at(offer->left.image_id) - quality.at(offer->right.image_id);
        choice = bernoulli(rng, 1.0 / (1.0 + std::exp(-diff))) ? Choice::left : Choice::right;
      }
      service.post_vote(session, offer->pair_token, choice, now - 150);
    }
    now += 60000;
  }
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path dir = argc > 1 ? argv[1] : "fixtures";
  fs::create_directories(dir);
  Rng rng(kSeed);

  const auto images = make_images(rng);
  csv::write_file_atomic(dir / "features.csv", features_csv(images, rng));
  csv::write_file_atomic(dir / "segmentation.csv", segmentation_csv(images));
  csv::write_file_atomic(dir / "segmentation_kinds.csv",
                         "feature,kind\ngreenery,fraction\nsky,fraction\nbuilding,fraction\nroad,fraction\n"
                         "cars,count\npeople,count\n");
  csv::write_file_atomic(dir / "roads.csv", roads_csv());
  csv::write_file_atomic(dir / "areas.geojson", areas_geojson());
  csv::write_file_atomic(dir / "config.json", pipeline_config().dump(2) + "\n");

  // Survey design exactly as the cluster stage produces it.
  const fs::path work = fs::temp_directory_path() / fmt::format("percept-fixture-{}", ::getpid());
  auto config = pipeline::load_config(dir / "config.json");
  pipeline::run(pipeline::Stage::cluster, config, work);
  auto sched = load_scheduler_config(work / "scheduler.conf");
  fs::remove_all(work);

  std::map<std::string, double> quality;
  for (const auto& im : images) quality[im.id] = im.quality;

  TimestampMs now = 1'500'000'000'000;
  int next_session = 0;
  ServiceOptions options;
  options.clock = [&now] { return now; };
  options.new_id = [&next_session] { return fmt::format("s{:04d}", ++next_session); };
  SurveyService service(std::make_shared<const PairScheduler>(std::move(sched.images), std::move(sched.config)),
                        std::make_unique<MemoryEventStore>(), options);
  simulate(service, quality, now, rng);

  auto votes = service.votes();
  std::vector<Vote> duplicates;
  while (duplicates.size() < 12) {
    const auto& v = votes[uniform_index(rng, votes.size())];
    if (!is_decisive(v.choice) || v.session_id >= "s0091") continue;
    Vote d = v;
    d.vote_id = votes.size() + duplicates.size() + 1;
    d.server_ts = v.server_ts + 2000 + static_cast<TimestampMs>(uniform_index(rng, 20000));
    d.client_ts = d.server_ts - 150;
    duplicates.push_back(d);
  }
  votes.insert(votes.end(), duplicates.begin(), duplicates.end());
  csv::write_file_atomic(dir / "votes.csv", format_votes(votes));
  csv::write_file_atomic(dir / "sessions.csv", format_sessions(service.sessions()));

  std::string truth = "image_id,quality\n";
  for (const auto& im : images) truth += im.id + ',' + csv::format_fixed(im.quality, 6) + '\n';
  csv::write_file_atomic(dir / "latent_quality.csv", truth);
  std::cout << fmt::format("wrote {} votes from {} sessions to {}\n", votes.size(), service.sessions().size(),
                           dir.string());
  return 0;
}
