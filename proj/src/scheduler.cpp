#include "percept/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "percept/csv.hpp"
#include "percept/error.hpp"
#include "percept/rng.hpp"

namespace percept {

namespace {

constexpr int kRejectionTries = 64;

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput(std::string(name) + " must be in [0, 1]");
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string_view to_string(PairKind kind) { return kind == PairKind::fresh ? "fresh" : "repeated"; }

PairKind parse_pair_kind(std::string_view text) {
  if (text == "fresh") return PairKind::fresh;
  if (text == "repeated") return PairKind::repeated;
  throw ParseError("unknown pair kind '" + std::string(text) + "'");
}

double within_cluster_baseline(std::span<const std::size_t> cluster_sizes) {
  double total = 0;
  for (auto s : cluster_sizes) total += static_cast<double>(s);
  if (total <= 0) throw InvalidInput("cluster sizes sum to zero");
  double sum_sq = 0;
  for (auto s : cluster_sizes) {
    const double p = static_cast<double>(s) / total;
    sum_sq += p * p;
  }
  return sum_sq;
}

double calibrate_alpha(std::span<const std::size_t> cluster_sizes, double target) {
  check_probability(target, "target within-cluster fraction");
  const double baseline = within_cluster_baseline(cluster_sizes);
  constexpr double kEps = 1e-12;
  if (target < baseline - kEps)
    throw InvalidInput("target within-cluster fraction " + std::to_string(target) +
                       " is below the uniform-pairing baseline " + std::to_string(baseline));
  if (1.0 - baseline < kEps) return 1.0;
  return std::clamp((target - baseline) / (1.0 - baseline), 0.0, 1.0);
}

std::vector<ImagePair> designate_repeated_pairs(std::span<const SurveyImage> images, std::size_t count,
                                                std::uint64_t seed) {
  const std::size_t n = images.size();
  if (n < 2) throw InvalidInput("need at least two images to designate pairs");
  const double max_pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  if (static_cast<double>(count) > max_pairs) throw InvalidInput("more repeated pairs requested than exist");
  Rng rng(derive_seed(seed, "repeated-pairs"));
  std::set<std::pair<std::size_t, std::size_t>> chosen;
  std::vector<ImagePair> out;
  while (out.size() < count) {
    auto a = static_cast<std::size_t>(uniform_index(rng, n));
    auto b = static_cast<std::size_t>(uniform_index(rng, n));
    if (a == b) continue;
    if (!chosen.insert({std::min(a, b), std::max(a, b)}).second) continue;
    out.emplace_back(images[a].image_id, images[b].image_id);
  }
  return out;
}

PairScheduler::PairScheduler(std::vector<SurveyImage> images, SchedulerConfig config)
    : images_(std::move(images)), config_(std::move(config)) {
  check_probability(config_.alpha, "alpha");
  check_probability(config_.repeat_rate, "repeat_rate");
  if (images_.size() < 2) throw InvalidInput("the survey set needs at least two images");
  if (images_.size() >= (std::size_t{1} << 32)) throw InvalidInput("too many images");
  int k = 0;
  for (std::size_t i = 0; i < images_.size(); ++i) {
    if (images_[i].cluster < 0) throw InvalidInput("negative cluster id for " + images_[i].image_id);
    if (!index_.emplace(images_[i].image_id, i).second)
      throw InvalidInput("duplicate survey image '" + images_[i].image_id + "'");
    k = std::max(k, images_[i].cluster + 1);
  }
  members_.resize(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < images_.size(); ++i) members_[static_cast<std::size_t>(images_[i].cluster)].push_back(i);

  std::set<std::uint64_t> keys;
  for (const auto& [l, r] : config_.repeated_pairs) {
    auto li = index_.find(l);
    auto ri = index_.find(r);
    if (li == index_.end() || ri == index_.end())
      throw InvalidInput("repeated pair references unknown image: " + l + "," + r);
    if (li->second == ri->second) throw InvalidInput("repeated pair has identical members: " + l);
    if (!keys.insert(key(li->second, ri->second)).second) continue;
    repeated_.emplace_back(li->second, ri->second);
  }
}

std::vector<std::size_t> PairScheduler::cluster_sizes() const {
  std::vector<std::size_t> sizes;
  for (const auto& m : members_) sizes.push_back(m.size());
  return sizes;
}

std::optional<int> PairScheduler::cluster_of(const std::string& image_id) const {
  auto it = index_.find(image_id);
  if (it == index_.end()) return std::nullopt;
  return images_[it->second].cluster;
}

std::uint64_t PairScheduler::key(std::size_t a, std::size_t b) const {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint64_t>(b);
}

PairScheduler::Session PairScheduler::open_session(std::string session_id) const {
  Session s;
  s.session_id = std::move(session_id);
  s.within_seen.assign(members_.size(), 0);
  return s;
}

void PairScheduler::record(Session& s, std::size_t a, std::size_t b) const {
  if (!s.seen.insert(key(a, b)).second) return;
  if (images_[a].cluster == images_[b].cluster) ++s.within_seen[static_cast<std::size_t>(images_[a].cluster)];
  for (std::size_t r = 0; r < repeated_.size(); ++r)
    if (key(repeated_[r].first, repeated_[r].second) == key(a, b)) s.repeated_served.insert(r);
}

void PairScheduler::mark_seen(Session& session, const std::string& left, const std::string& right) const {
  auto li = index_.find(left);
  auto ri = index_.find(right);
  if (li == index_.end() || ri == index_.end()) throw InvalidInput("unknown image in pair " + left + "," + right);
  if (session.within_seen.size() != members_.size()) session.within_seen.assign(members_.size(), 0);
  record(session, li->second, ri->second);
}

std::optional<std::pair<std::size_t, std::size_t>> PairScheduler::draw_within(Session& s, std::size_t cluster,
                                                                              Rng& rng) const {
  const auto& m = members_[cluster];
  for (int t = 0; t < kRejectionTries; ++t) {
    const auto a = m[uniform_index(rng, m.size())];
    const auto b = m[uniform_index(rng, m.size())];
    if (a != b && !s.seen.contains(key(a, b))) return std::pair{a, b};
  }
  std::vector<std::pair<std::size_t, std::size_t>> open;
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = i + 1; j < m.size(); ++j)
      if (!s.seen.contains(key(m[i], m[j]))) open.emplace_back(m[i], m[j]);
  if (open.empty()) return std::nullopt;
  return open[uniform_index(rng, open.size())];
}

std::optional<ScheduledPair> PairScheduler::next_pair(Session& s) const {
  if (s.within_seen.size() != members_.size()) s.within_seen.assign(members_.size(), 0);
  const std::size_t n = images_.size();
  const std::uint64_t total_pairs = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  if (s.seen.size() >= total_pairs) return std::nullopt;
  Rng rng(derive_seed(config_.seed, s.session_id, s.requests++));

  std::optional<std::pair<std::size_t, std::size_t>> pick;
  PairKind kind = PairKind::fresh;

  if (!repeated_.empty() && bernoulli(rng, config_.repeat_rate)) {
    std::vector<std::size_t> open;
    for (std::size_t r = 0; r < repeated_.size(); ++r)
      if (!s.repeated_served.contains(r) && !s.seen.contains(key(repeated_[r].first, repeated_[r].second)))
        open.push_back(r);
    if (!open.empty()) {
      pick = repeated_[open[uniform_index(rng, open.size())]];
      kind = PairKind::repeated;
    }
  }

  if (!pick && bernoulli(rng, config_.alpha)) {
    std::vector<std::size_t> open;
    for (std::size_t c = 0; c < members_.size(); ++c) {
      const std::uint64_t m = members_[c].size();
      if (m >= 2 && s.within_seen[c] < m * (m - 1) / 2) open.push_back(c);
    }
    if (!open.empty()) pick = draw_within(s, open[uniform_index(rng, open.size())], rng);
  }

  if (!pick) {
    for (int t = 0; t < kRejectionTries && !pick; ++t) {
      const auto a = static_cast<std::size_t>(uniform_index(rng, n));
      const auto b = static_cast<std::size_t>(uniform_index(rng, n));
      if (a != b && !s.seen.contains(key(a, b))) pick = std::pair{a, b};
    }
    if (!pick) {
      std::vector<std::pair<std::size_t, std::size_t>> open;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
          if (!s.seen.contains(key(i, j))) open.emplace_back(i, j);
      pick = open[uniform_index(rng, open.size())];
    }
  }

  auto [a, b] = *pick;
  if (bernoulli(rng, 0.5)) std::swap(a, b);
  record(s, a, b);
  return ScheduledPair{images_[a].image_id, images_[b].image_id, kind};
}

std::vector<ImagePair> read_pairs(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const auto c_l = table.column("left_id");
  const auto c_r = table.column("right_id");
  std::vector<ImagePair> out;
  for (const auto& row : table.rows) {
    if (row.fields.size() != table.header.size()) throw ParseError("wrong number of fields", row.line);
    if (row.fields[c_l] == row.fields[c_r]) throw ParseError("pair has identical members", row.line);
    out.emplace_back(row.fields[c_l], row.fields[c_r]);
  }
  return out;
}

std::vector<SurveyImage> read_survey_images(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const auto c_id = table.column("image_id");
  const auto c_cluster = table.column("cluster");
  std::vector<SurveyImage> out;
  for (const auto& row : table.rows) {
    if (row.fields.size() != table.header.size()) throw ParseError("wrong number of fields", row.line);
    out.push_back({row.fields[c_id], static_cast<int>(csv::to_int(row.fields[c_cluster], row.line))});
  }
  return out;
}

SchedulerFile load_scheduler_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scheduler config " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", lineno);
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }

  static const std::set<std::string> known{"alpha",          "target_within_fraction", "repeat_rate", "seed",
                                           "survey_images",  "repeated_pairs",         "repeated_pair_count"};
  for (const auto& [k, v] : kv)
    if (!known.contains(k)) throw ParseError("unknown scheduler config key '" + k + "'");

  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) { return std::filesystem::path(p).is_absolute() ? std::filesystem::path(p) : base / p; };
  auto number = [&](const std::string& k) { return csv::to_double(kv.at(k), 0); };

  SchedulerFile f;
  if (kv.contains("seed")) f.config.seed = static_cast<std::uint64_t>(csv::to_int(kv["seed"], 0));
  if (kv.contains("repeat_rate")) f.config.repeat_rate = number("repeat_rate");
  if (!kv.contains("survey_images")) throw ParseError("scheduler config needs survey_images");
  f.images = read_survey_images(resolve(kv["survey_images"]));

  std::vector<std::size_t> sizes;
  for (const auto& img : f.images) {
    if (img.cluster < 0) throw ParseError("negative cluster id");
    if (sizes.size() <= static_cast<std::size_t>(img.cluster)) sizes.resize(static_cast<std::size_t>(img.cluster) + 1, 0);
    ++sizes[static_cast<std::size_t>(img.cluster)];
  }
  const std::string alpha = kv.contains("alpha") ? kv["alpha"] : "auto";
  if (alpha == "auto") {
    f.target_within_fraction =
        kv.contains("target_within_fraction") ? number("target_within_fraction") : kDefaultWithinFraction;
    f.config.alpha = calibrate_alpha(sizes, *f.target_within_fraction);
  } else {
    f.config.alpha = csv::to_double(alpha, 0);
  }

  if (kv.contains("repeated_pairs")) {
    f.config.repeated_pairs = read_pairs(resolve(kv["repeated_pairs"]));
  } else {
    const auto count = kv.contains("repeated_pair_count")
                           ? static_cast<std::size_t>(csv::to_int(kv["repeated_pair_count"], 0))
                           : kDefaultRepeatedPairs;
    f.config.repeated_pairs = designate_repeated_pairs(f.images, count, f.config.seed);
  }
  return f;
}

}  // namespace percept
