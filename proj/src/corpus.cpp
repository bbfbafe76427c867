#include "percept/corpus.hpp"

#include <algorithm>
#include <numeric>

#include "percept/csv.hpp"
#include "percept/error.hpp"
#include "percept/rng.hpp"

namespace percept {

Corpus::Corpus(std::vector<ImageRecord> records, Eigen::MatrixXd features)
    : records_(std::move(records)), features_(std::move(features)) {
  if (static_cast<Eigen::Index>(records_.size()) != features_.rows())
    throw InvalidInput("feature matrix rows must match record count");
  for (std::size_t i = 0; i < records_.size(); ++i)
    if (!index_.emplace(records_[i].image_id, i).second)
      throw InvalidInput("duplicate image_id '" + records_[i].image_id + "'");
}

std::optional<Eigen::Index> Corpus::dimension() const {
  if (records_.empty()) return std::nullopt;
  return features_.cols();
}

std::optional<std::size_t> Corpus::find(const std::string& image_id) const {
  auto it = index_.find(image_id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Corpus Corpus::with_clusters(std::span<const int> assignments) const {
  if (assignments.size() != records_.size()) throw InvalidInput("assignment count must match corpus size");
  auto records = records_;
  for (std::size_t i = 0; i < records.size(); ++i) records[i].cluster = assignments[i];
  return Corpus(std::move(records), features_);
}

Corpus ingest_features(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  constexpr std::size_t kFixed = 4;
  if (table.header.size() < kFixed || table.header[0] != "image_id" || table.header[1] != "lat" ||
      table.header[2] != "lon" || table.header[3] != "year")
    throw ParseError(path.string() + ": header must start with image_id,lat,lon,year", 1);

  const std::size_t d = table.header.size() - kFixed;
  std::vector<ImageRecord> records;
  records.reserve(table.rows.size());
  Eigen::MatrixXd features(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(d));
  std::unordered_map<std::string, std::size_t> seen;

  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    if (row.fields.size() != table.header.size())
      throw ParseError(path.string() + ": expected " + std::to_string(d) + " feature values, got " +
                           std::to_string(row.fields.size() < kFixed ? 0 : row.fields.size() - kFixed),
                       row.line);
    ImageRecord rec;
    rec.image_id = row.fields[0];
    if (!seen.emplace(rec.image_id, r).second)
      throw ParseError(path.string() + ": duplicate image_id '" + rec.image_id + "'", row.line);
    rec.location = {csv::to_double(row.fields[1], row.line), csv::to_double(row.fields[2], row.line)};
    rec.year = static_cast<int>(csv::to_int(row.fields[3], row.line));
    for (std::size_t j = 0; j < d; ++j)
      features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) =
          csv::to_double(row.fields[kFixed + j], row.line);
    records.push_back(std::move(rec));
  }
  return Corpus(std::move(records), std::move(features));
}

std::vector<std::size_t> proportional_quotas(std::span<const std::size_t> sizes, std::size_t n) {
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (n > total) throw InvalidInput("sample size exceeds population");
  std::vector<std::size_t> quota(sizes.size(), 0);
  if (total == 0) return quota;

  // Exact integer arithmetic: quota_c = floor(n*size_c/total), remainder n*size_c mod total.
  std::vector<std::pair<unsigned __int128, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    const auto num = static_cast<unsigned __int128>(n) * sizes[c];
    quota[c] = static_cast<std::size_t>(num / total);
    assigned += quota[c];
    remainders.emplace_back(num % total, c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++quota[remainders[i].second];
  return quota;
}

std::vector<std::string> stratified_sample(const Corpus& corpus, std::span<const int> assignments, std::size_t n,
                                           std::uint64_t seed) {
  if (assignments.size() != corpus.size()) throw InvalidInput("assignment count must match corpus size");
  if (n > corpus.size())
    throw InvalidInput("sample size " + std::to_string(n) + " exceeds corpus size " + std::to_string(corpus.size()));

  int k = 0;
  for (int a : assignments) {
    if (a < 0) throw InvalidInput("negative cluster id");
    k = std::max(k, a + 1);
  }
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < assignments.size(); ++i) members[static_cast<std::size_t>(assignments[i])].push_back(i);

  std::vector<std::size_t> sizes;
  for (const auto& m : members) sizes.push_back(m.size());
  const auto quota = proportional_quotas(sizes, n);

  std::vector<std::size_t> chosen;
  chosen.reserve(n);
  for (std::size_t c = 0; c < members.size(); ++c) {
    auto pool = members[c];
    Rng rng(derive_seed(seed, "stratum", c));
    shuffle(pool.begin(), pool.end(), rng);
    chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(quota[c]));
  }
  std::sort(chosen.begin(), chosen.end());

  std::vector<std::string> ids;
  ids.reserve(chosen.size());
  for (auto i : chosen) ids.push_back(corpus.records()[i].image_id);
  return ids;
}

std::string format_assignments(const Corpus& corpus, std::span<const int> assignments) {
  std::string out = "image_id,cluster\n";
  for (std::size_t i = 0; i < corpus.size(); ++i)
    out += corpus.records()[i].image_id + ',' + std::to_string(assignments[i]) + '\n';
  return out;
}

std::vector<ClusterAssignment> read_assignments(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const auto c_id = table.column("image_id");
  const auto c_cluster = table.column("cluster");
  std::vector<ClusterAssignment> out;
  for (const auto& row : table.rows) {
    if (row.fields.size() != table.header.size()) throw ParseError("wrong number of fields", row.line);
    out.push_back({row.fields[c_id], static_cast<int>(csv::to_int(row.fields[c_cluster], row.line))});
  }
  return out;
}

}  // namespace percept
