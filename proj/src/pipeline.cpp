#include "percept/pipeline.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "percept/corpus.hpp"
#include "percept/csv.hpp"
#include "percept/error.hpp"
#include "percept/geo.hpp"
#include "percept/geomap.hpp"
#include "percept/interpret.hpp"
#include "percept/kmeans.hpp"
#include "percept/mlm.hpp"
#include "percept/qa.hpp"
#include "percept/ranking.hpp"
#include "percept/rng.hpp"
#include "percept/scheduler.hpp"
#include "percept/stats.hpp"
#include "percept/votes.hpp"

namespace percept::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kStageNames[] = {"sample", "cluster", "serve", "qa", "rank", "mlm", "interpret", "map", "all"};

void check_keys(const json& section, std::string_view name, std::initializer_list<std::string_view> allowed) {
  if (!section.is_object()) throw InvalidInput(fmt::format("config section '{}' must be an object", name));
  for (const auto& [key, value] : section.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw InvalidInput(fmt::format("unknown key '{}' in config section '{}'", key, name));
}

void require(const fs::path& p, Stage producer) {
  if (p.empty() || !fs::exists(p)) throw MissingPrerequisite(producer, p);
}

void require_input(const fs::path& p, std::string_view what) {
  if (p.empty()) throw InvalidInput(fmt::format("config does not set paths.{}", what));
  if (!fs::exists(p)) throw IoError(fmt::format("paths.{} does not exist: {}", what, p.string()));
}

class Manifest {
public:
  Manifest(Stage stage, std::uint64_t seed, json parameters)
      : doc_{{"stage", std::string(to_string(stage))}, {"seed", seed}, {"parameters", std::move(parameters)}} {
    doc_["inputs"] = json::object();
    doc_["outputs"] = json::object();
  }

  void input(const std::string& role, const fs::path& p) {
    doc_["inputs"][role] = {{"file", p.filename().string()}, {"fnv1a64", file_digest(p)}};
  }

  void output(const fs::path& p, std::string_view contents) {
    csv::write_file_atomic(p, contents);
    doc_["outputs"][p.filename().string()] = fmt::format("{:016x}", fnv1a64(contents));
    written_.push_back(p);
  }

  std::vector<fs::path> finish(const fs::path& out, Stage stage) {
    const auto path = out / fmt::format("manifest_{}.json", to_string(stage));
    csv::write_file_atomic(path, doc_.dump(2) + "\n");
    written_.push_back(path);
    return written_;
  }

private:
  json doc_;
  std::vector<fs::path> written_;
};

fs::path votes_path(const PipelineConfig& c, const fs::path& out) {
  return c.paths.votes.empty() ? out / "votes.csv" : c.paths.votes;
}

fs::path sessions_path(const PipelineConfig& c, const fs::path& out) {
  return c.paths.sessions.empty() ? out / "sessions.csv" : c.paths.sessions;
}

StageReport run_sample(const PipelineConfig& c, const fs::path& out) {
  check_keys(c.sample, "sample", {"spacing_m", "max_dist_m"});
  require_input(c.paths.roads, "roads");
  const double spacing = c.sample.value("spacing_m", geo::kDefaultSpacingM);
  const double max_dist = c.sample.value("max_dist_m", geo::kDefaultSnapDistanceM);

  Manifest m(Stage::sample, c.seed, {{"spacing_m", spacing}, {"max_dist_m", max_dist}});
  m.input("roads", c.paths.roads);
  const auto roads = geo::read_roads(c.paths.roads);
  const auto plan = geo::build_sample_plan(roads, spacing, max_dist);

  std::map<std::string, std::optional<std::string>> by_road;
  for (const auto& r : roads) by_road[r.id] = std::nullopt;
  for (const auto& loc : plan.locations)
    by_road[loc.road.id] = csv::format_fixed(loc.image_point.lat, 7) + ":" + csv::format_fixed(loc.image_point.lon, 7);
  const auto dedup = geo::dedupe_images(by_road);

  m.output(out / "sample_plan.csv", geo::format_sample_plan(plan));
  json summary{{"road_points", roads.size()},
               {"locations", plan.locations.size()},
               {"unique_images", dedup.images.size()},
               {"coverage", dedup.coverage}};
  return {Stage::sample, m.finish(out, Stage::sample), summary};
}

StageReport run_cluster(const PipelineConfig& c, const fs::path& out) {
  check_keys(c.cluster, "cluster", {"k", "survey_size", "max_iter"});
  check_keys(c.scheduler, "scheduler", {"target_within_fraction", "repeat_rate", "repeated_pairs"});
  require_input(c.paths.features, "features");
  const int k = c.cluster.value("k", kDefaultClusters);
  const auto survey_size = c.cluster.value("survey_size", kDefaultSurveySize);
  const double target = c.scheduler.value("target_within_fraction", kDefaultWithinFraction);
  const double repeat_rate = c.scheduler.value("repeat_rate", kDefaultRepeatRate);
  const auto repeated = c.scheduler.value("repeated_pairs", kDefaultRepeatedPairs);
  KMeansOptions opts;
  opts.max_iter = c.cluster.value("max_iter", opts.max_iter);

  Manifest m(Stage::cluster, c.seed, {{"cluster", c.cluster}, {"scheduler", c.scheduler}});
  m.input("features", c.paths.features);
  const auto corpus = ingest_features(c.paths.features);
  const auto model = kmeans(corpus.features(), k, derive_seed(c.seed, "cluster"), opts);
  m.output(out / "assignments.csv", format_assignments(corpus, model.assignments));

  const auto n = std::min(survey_size, corpus.size());
  const auto chosen = stratified_sample(corpus, model.assignments, n, c.seed);
  std::vector<SurveyImage> images;
  std::string survey = "image_id,cluster\n";
  for (const auto& id : chosen) {
    const int cl = model.assignments[*corpus.find(id)];
    images.push_back({id, cl});
    survey += fmt::format("{},{}\n", id, cl);
  }
  m.output(out / "survey_images.csv", survey);

  std::string pairs = "left_id,right_id\n";
  for (const auto& [l, r] : designate_repeated_pairs(images, repeated, c.seed)) pairs += l + ',' + r + '\n';
  m.output(out / "repeated_pairs.csv", pairs);

  std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
  for (const auto& img : images) ++sizes[static_cast<std::size_t>(img.cluster)];
  const double alpha = calibrate_alpha(sizes, target);
  m.output(out / "scheduler.conf", fmt::format("alpha = auto\ntarget_within_fraction = {}\nrepeat_rate = {}\nseed = {}\n"
                                               "survey_images = survey_images.csv\nrepeated_pairs = repeated_pairs.csv\n",
                                               target, repeat_rate, c.seed));
  json summary{{"images", corpus.size()},     {"k", k},
               {"iterations", model.iterations}, {"converged", model.converged},
               {"wcss", model.wcss()},        {"survey_images", images.size()},
               {"survey_cluster_sizes", sizes}, {"alpha", alpha}};
  return {Stage::cluster, m.finish(out, Stage::cluster), summary};
}

std::size_t survey_image_count(const fs::path& out) {
  const auto p = out / "survey_images.csv";
  require(p, Stage::cluster);
  return read_survey_images(p).size();
}

StageReport run_qa(const PipelineConfig& c, const fs::path& out) {
  check_keys(c.qa, "qa", {"one_sided_threshold", "one_sided_min_games", "duplicate_window_s", "agreement_min_games"});
  qa::Options opts;
  opts.one_sided_threshold = c.qa.value("one_sided_threshold", opts.one_sided_threshold);
  opts.one_sided_min_games = c.qa.value("one_sided_min_games", opts.one_sided_min_games);
  opts.duplicate_window_s = c.qa.value("duplicate_window_s", opts.duplicate_window_s);
  const auto agreement_min = c.qa.value("agreement_min_games", qa::kAgreementMinGames);

  const auto vp = votes_path(c, out);
  const auto sp = sessions_path(c, out);
  require(vp, Stage::serve);
  require(sp, Stage::serve);
  const auto n_images = survey_image_count(out);

  Manifest m(Stage::qa, c.seed, c.qa);
  m.input("votes", vp);
  m.input("sessions", sp);
  m.input("survey_images", out / "survey_images.csv");
  const auto raw = read_votes(vp);
  const auto sessions = read_sessions(sp);
  const auto usable = qa::filter_usable(raw, opts);
  const auto report = qa::report(raw, sessions, usable, n_images, agreement_min);
  m.output(out / "usable_votes.csv", format_votes(usable.votes));
  m.output(out / "qa_report.json", report.dump(2) + "\n");
  return {Stage::qa, m.finish(out, Stage::qa), report};
}

StageReport run_rank(const PipelineConfig& c, const fs::path& out) {
  check_keys(c.rank, "rank", {"beta", "tau"});
  ranking::RankingParams params;
  params.beta = c.rank.value("beta", params.beta);
  params.tau = c.rank.value("tau", params.tau);
  params.validate();

  const auto up = out / "usable_votes.csv";
  require(up, Stage::qa);
  const auto sp = out / "survey_images.csv";
  require(sp, Stage::cluster);

  Manifest m(Stage::rank, c.seed, {{"mu0", params.mu0}, {"sigma0", params.sigma0}, {"beta", params.beta}, {"tau", params.tau}});
  m.input("usable_votes", up);
  m.input("survey_images", sp);
  std::vector<std::string> ids;
  for (const auto& img : read_survey_images(sp)) ids.push_back(img.image_id);
  const auto votes = read_votes(up);
  const auto ranks = ranking::rank_all(votes, ids, params);
  const auto scaled = ranking::scale_scores(ranks.scores);
  const auto weights = ranking::decile_weights(scaled.scaled);
  m.output(out / "scores.csv", ranking::format_scores(ranks, scaled, weights));
  json summary{{"images", ranks.scores.size()},
               {"games", ranks.games},
               {"games_multiplier", qa::games_multiplier(votes, ids.size())},
               {"mean_sigma", ranks.mean_sigma},
               {"deciles_collapsed", weights.collapsed}};
  return {Stage::rank, m.finish(out, Stage::rank), summary};
}

StageReport run_mlm(const PipelineConfig& c, const fs::path& out) {
  check_keys(c.mlm, "mlm", {"grouping", "min_votes", "level"});
  std::optional<qa::Grouping> grouping;
  if (c.mlm.contains("grouping") && !c.mlm["grouping"].is_null())
    grouping = qa::parse_grouping(c.mlm["grouping"].get<std::string>());
  const auto min_votes = c.mlm.value("min_votes", std::size_t{2});
  const double level = c.mlm.value("level", 0.95);

  const auto up = out / "usable_votes.csv";
  require(up, Stage::qa);
  const auto sp = sessions_path(c, out);
  require(sp, Stage::serve);

  Manifest m(Stage::mlm, c.seed, c.mlm);
  m.input("usable_votes", up);
  m.input("sessions", sp);
  const auto votes = read_votes(up);
  const auto sessions = read_sessions(sp);
  const auto cells = mlm::build_cells(votes, sessions, grouping, min_votes);
  if (cells.empty()) throw InvalidInput(fmt::format("no image pair has at least {} usable votes", min_votes));
  const auto fit = mlm::fit(cells);
  const auto significant = mlm::significant_effects(fit, level);
  m.output(out / "mlm_effects.csv", mlm::format_effects(fit, level));
  json summary{{"grouping", grouping ? json(std::string(qa::to_string(*grouping))) : json(nullptr)},
               {"cells", cells.size()},
               {"beta0", fit.beta0},
               {"sigma_u", fit.sigma_u},
               {"log_likelihood", fit.log_likelihood},
               {"converged", fit.converged},
               {"penalized", fit.penalized},
               {"separation", fit.separation},
               {"significant", significant.size()}};
  m.output(out / "mlm_fit.json", summary.dump(2) + "\n");
  return {Stage::mlm, m.finish(out, Stage::mlm), summary};
}

StageReport run_interpret(const PipelineConfig& c, const fs::path& out) {
  check_keys(c.interpret, "interpret", {"folds", "l2", "l1"});
  const int folds = c.interpret.value("folds", interpret::kDefaultFolds);
  const double l2 = c.interpret.value("l2", interpret::kDefaultL2);
  const std::optional<double> l1 =
      c.interpret.contains("l1") ? std::optional(c.interpret["l1"].get<double>()) : std::nullopt;
  require_input(c.paths.segmentation, "segmentation");
  const auto scores_path = out / "scores.csv";
  require(scores_path, Stage::rank);

  Manifest m(Stage::interpret, c.seed, c.interpret);
  m.input("scores", scores_path);
  m.input("segmentation", c.paths.segmentation);
  if (!c.paths.segmentation_kinds.empty()) m.input("segmentation_kinds", c.paths.segmentation_kinds);
  auto features = interpret::read_feature_table(c.paths.segmentation, c.paths.segmentation_kinds);

  // Restrict to images that have both a score and features.
  std::map<std::string, double> scaled;
  for (const auto& [id, s] : stats::read_score_table(scores_path, "scaled"))
    if (std::binary_search(features.image_ids.begin(), features.image_ids.end(), id)) scaled.emplace(id, s);
  const auto labels = interpret::label_extremes(scaled);

  json report;
  if (l1) {
    const auto sel = interpret::select_features(features, labels, *l1);
    report["l1"] = *l1;
    report["selected_features"] = sel.names;
    features = features.select_columns(sel.columns);
  }
  const auto cv = interpret::fit_logistic_cv(features, labels, folds, l2, c.seed);
  report.update(interpret::cv_report(cv));
  report["l2"] = l2;
  m.output(out / "coefficients.csv", interpret::format_coefficients(cv, features.kinds));
  m.output(out / "cv_report.json", report.dump(2) + "\n");
  return {Stage::interpret, m.finish(out, Stage::interpret), report};
}

StageReport run_map(const PipelineConfig& c, const fs::path& out) {
  check_keys(c.map, "map", {"score_column"});
  const auto column = c.map.value("score_column", std::string("scaled"));
  require_input(c.paths.areas, "areas");
  require_input(c.paths.features, "features");
  const auto scores_path = out / "scores.csv";
  require(scores_path, Stage::rank);

  Manifest m(Stage::map, c.seed, c.map);
  m.input("scores", scores_path);
  m.input("areas", c.paths.areas);
  m.input("features", c.paths.features);
  const auto scores = stats::read_score_table(scores_path, column);
  const auto corpus = ingest_features(c.paths.features);
  std::map<std::string, geo::GeoPoint> points;
  for (const auto& r : corpus.records())
    if (scores.contains(r.image_id)) points.emplace(r.image_id, r.location);

  const geomap::AreaIndex index(geomap::read_areas(c.paths.areas));
  const auto assignment = geomap::assign_points(points, index);
  auto aggregates = geomap::aggregate(scores, assignment, index.areas());
  geomap::assign_deciles(aggregates);
  const auto counts = geomap::summarize_counts(aggregates);

  m.output(out / "oa_scores.geojson", geomap::format_geojson(aggregates, index.areas()));
  m.output(out / "oa_scores.csv", geomap::format_aggregates_csv(aggregates));
  json summary{{"images_scored", points.size()},
               {"images_assigned", counts.assigned_images},
               {"areas", counts.areas},
               {"areas_with_images", counts.areas_with_images},
               {"images_per_area_min", counts.min},
               {"images_per_area_median", counts.median},
               {"images_per_area_max", counts.max},
               {"images_per_area_mean", counts.mean}};
  m.output(out / "map_summary.json", summary.dump(2) + "\n");
  return {Stage::map, m.finish(out, Stage::map), summary};
}

fs::path resolve(const fs::path& base, const json& doc, const char* key) {
  if (!doc.contains(key) || doc[key].is_null()) return {};
  fs::path p = doc[key].get<std::string>();
  return p.is_absolute() ? p : base / p;
}

}  // namespace

Stage parse_stage(std::string_view text) {
  for (std::size_t i = 0; i < std::size(kStageNames); ++i)
    if (kStageNames[i] == text) return static_cast<Stage>(i);
  throw InvalidInput(fmt::format("unknown stage '{}'", text));
}

std::string_view to_string(Stage s) { return kStageNames[static_cast<std::size_t>(s)]; }

MissingPrerequisite::MissingPrerequisite(Stage stage, const fs::path& artifact)
    : std::runtime_error(fmt::format("missing {}; run the '{}' stage first", artifact.filename().string(),
                                     to_string(stage))),
      stage_(stage) {}

std::string file_digest(const fs::path& path) { return fmt::format("{:016x}", fnv1a64(csv::read_file(path))); }

PipelineConfig parse_config(const json& doc, const fs::path& base_dir) {
  check_keys(doc, "top level",
             {"paths", "seed", "sample", "cluster", "scheduler", "qa", "rank", "mlm", "interpret", "map"});
  PipelineConfig c;
  if (doc.contains("paths")) {
    const auto& p = doc["paths"];
    check_keys(p, "paths",
               {"roads", "features", "areas", "votes", "sessions", "segmentation", "segmentation_kinds", "store"});
    c.paths.roads = resolve(base_dir, p, "roads");
    c.paths.features = resolve(base_dir, p, "features");
    c.paths.areas = resolve(base_dir, p, "areas");
    c.paths.votes = resolve(base_dir, p, "votes");
    c.paths.sessions = resolve(base_dir, p, "sessions");
    c.paths.segmentation = resolve(base_dir, p, "segmentation");
    c.paths.segmentation_kinds = resolve(base_dir, p, "segmentation_kinds");
    c.paths.store = resolve(base_dir, p, "store");
  }
  c.seed = doc.value("seed", std::uint64_t{0});
  auto section = [&](const char* key) { return doc.contains(key) ? doc[key] : json::object(); };
  c.sample = section("sample");
  c.cluster = section("cluster");
  c.scheduler = section("scheduler");
  c.qa = section("qa");
  c.rank = section("rank");
  c.mlm = section("mlm");
  c.interpret = section("interpret");
  c.map = section("map");
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(csv::read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return parse_config(doc, path.parent_path());
}

std::vector<StageReport> run(Stage stage, const PipelineConfig& config, const fs::path& out) {
  fs::create_directories(out);
  switch (stage) {
    case Stage::sample: return {run_sample(config, out)};
    case Stage::cluster: return {run_cluster(config, out)};
    case Stage::qa: return {run_qa(config, out)};
    case Stage::rank: return {run_rank(config, out)};
    case Stage::mlm: return {run_mlm(config, out)};
    case Stage::interpret: return {run_interpret(config, out)};
    case Stage::map: return {run_map(config, out)};
    case Stage::serve: throw InvalidInput("the serve stage is long-running; start it with `percept serve`");
    case Stage::all: break;
  }
  std::vector<StageReport> reports;
  for (auto s : {Stage::sample, Stage::cluster, Stage::qa, Stage::rank, Stage::mlm, Stage::interpret, Stage::map})
    reports.push_back(run(s, config, out).front());
  return reports;
}

}  // namespace percept::pipeline
