#include "percept/ranking.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>

#include "percept/csv.hpp"
#include "percept/error.hpp"

namespace percept::ranking {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014327;  // 1/sqrt(2*pi)
constexpr double kTailCutoff = -8.0;

double normal_pdf(double t) { return kInvSqrt2Pi * std::exp(-0.5 * t * t); }
double normal_cdf(double t) { return 0.5 * std::erfc(-t / std::numbers::sqrt2); }

/// Mills ratio (1 - Phi(x)) / phi(x) for large positive x, by its continued
/// fraction 1/(x + 1/(x + 2/(x + 3/(x + ...)))).
double mills_ratio(double x) {
  double tail = x;
  for (int k = 80; k >= 1; --k) tail = x + k / tail;
  return 1.0 / tail;
}

bool finite(const SkillScore& s) { return std::isfinite(s.mu) && std::isfinite(s.sigma); }

}  // namespace

void RankingParams::validate() const {
  if (!std::isfinite(mu0) || !(sigma0 > 0) || !std::isfinite(sigma0)) throw InvalidInput("invalid prior");
  if (!(beta > 0) || !std::isfinite(beta)) throw InvalidInput("beta must be positive");
  if (!(tau >= 0) || !std::isfinite(tau)) throw InvalidInput("tau must be non-negative");
}

double v_win(double t) {
  if (t < kTailCutoff) return 1.0 / mills_ratio(-t);
  return normal_pdf(t) / normal_cdf(t);
}

double w_win(double t) {
  const double v = v_win(t);
  return v * (v + t);
}

std::pair<SkillScore, SkillScore> update(const SkillScore& winner, const SkillScore& loser,
                                         const RankingParams& params) {
  if (!finite(winner) || !finite(loser)) throw InvalidInput("non-finite skill belief");
  if (!(winner.sigma > 0) || !(loser.sigma > 0)) throw InvalidInput("skill sigma must be positive");
  params.validate();

  const double var_w = winner.sigma * winner.sigma + params.tau * params.tau;
  const double var_l = loser.sigma * loser.sigma + params.tau * params.tau;
  const double c2 = 2.0 * params.beta * params.beta + var_w + var_l;
  const double c = std::sqrt(c2);
  const double t = (winner.mu - loser.mu) / c;
  const double v = v_win(t);
  const double w = w_win(t);

  SkillScore w_post{winner.mu + var_w / c * v, std::sqrt(var_w * (1.0 - var_w / c2 * w))};
  SkillScore l_post{loser.mu - var_l / c * v, std::sqrt(var_l * (1.0 - var_l / c2 * w))};
  return {w_post, l_post};
}

RankResult rank_all(std::span<const Vote> votes, std::span<const std::string> images, const RankingParams& params) {
  params.validate();
  RankResult r;
  for (const auto& id : images) r.scores.emplace(id, SkillScore{params.mu0, params.sigma0});

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < votes.size(); ++i) {
    const auto& v = votes[i];
    if (!is_decisive(v.choice)) continue;
    if (!r.scores.contains(v.left_image)) throw InvalidInput("vote references unknown image '" + v.left_image + "'");
    if (!r.scores.contains(v.right_image)) throw InvalidInput("vote references unknown image '" + v.right_image + "'");
    order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = votes[a];
    const auto& y = votes[b];
    return x.server_ts != y.server_ts ? x.server_ts < y.server_ts : x.vote_id < y.vote_id;
  });

  for (auto i : order) {
    const auto& v = votes[i];
    const bool left_won = v.choice == Choice::left;
    auto& win = r.scores.at(left_won ? v.left_image : v.right_image);
    auto& lose = r.scores.at(left_won ? v.right_image : v.left_image);
    std::tie(win, lose) = update(win, lose, params);
    ++r.games;
  }

  if (!r.scores.empty()) {
    double shift = 0;
    for (const auto& [id, s] : r.scores) shift += s.sigma - params.sigma0;
    r.mean_sigma = params.sigma0 + shift / static_cast<double>(r.scores.size());
  }
  return r;
}

ScaledScores scale_scores(const std::map<std::string, SkillScore>& scores) {
  if (scores.empty()) throw InvalidInput("no scores to scale");
  ScaledScores out;
  out.mu_min = out.mu_max = scores.begin()->second.mu;
  for (const auto& [id, s] : scores) {
    out.mu_min = std::min(out.mu_min, s.mu);
    out.mu_max = std::max(out.mu_max, s.mu);
  }
  const double range = out.mu_max - out.mu_min;
  if (!(range > 0)) throw InvalidInput("cannot scale scores: every mu is identical");
  for (const auto& [id, s] : scores) out.scaled[id] = std::clamp(10.0 * (s.mu - out.mu_min) / range, 0.0, 10.0);
  return out;
}

DecileBuckets decile_buckets(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 10) throw InvalidInput("decile bucketing needs at least 10 values");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());

  DecileBuckets out;
  out.distinct_values = 1;
  for (std::size_t i = 1; i < n; ++i)
    if (sorted[i] != sorted[i - 1]) ++out.distinct_values;
  out.collapsed = out.distinct_values < 10;

  std::array<double, 9> thresholds{};
  for (std::size_t k = 1; k <= 9; ++k) thresholds[k - 1] = sorted[(k * n + 9) / 10];

  out.bucket.reserve(n);
  for (double x : values) {
    const auto above = std::upper_bound(thresholds.begin(), thresholds.end(), x) - thresholds.begin();
    out.bucket.push_back(static_cast<int>(above));
  }
  return out;
}

DecileWeights decile_weights(const std::map<std::string, double>& scaled) {
  std::vector<double> values;
  values.reserve(scaled.size());
  for (const auto& [id, s] : scaled) values.push_back(s);
  const auto buckets = decile_buckets(values);

  std::array<std::size_t, 10> counts{};
  for (int b : buckets.bucket) ++counts[static_cast<std::size_t>(b)];

  DecileWeights out;
  out.collapsed = buckets.collapsed;
  const double n = static_cast<double>(values.size());
  std::size_t i = 0;
  for (const auto& [id, s] : scaled) {
    const int b = buckets.bucket[i++];
    out.decile[id] = b + 1;
    out.weight[id] = n / (10.0 * static_cast<double>(counts[static_cast<std::size_t>(b)]));
  }
  return out;
}

std::string format_scores(const RankResult& ranks, const ScaledScores& scaled, const DecileWeights& weights) {
  std::string out = "image_id,mu,sigma,scaled,decile,weight\n";
  for (const auto& [id, s] : ranks.scores) {
    out += id + ',' + csv::format_double(s.mu) + ',' + csv::format_double(s.sigma) + ',' +
           csv::format_double(scaled.scaled.at(id)) + ',' + std::to_string(weights.decile.at(id)) + ',' +
           csv::format_double(weights.weight.at(id)) + '\n';
  }
  return out;
}

}  // namespace percept::ranking
