#pragma once

// Per-image perception scores from pairwise games. Each image carries a
// Gaussian skill belief updated by two-player TrueSkill (no draws).

#include <map>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "percept/votes.hpp"

namespace percept::ranking {

inline constexpr double kMu0 = 25.0;
inline constexpr double kSigma0 = 25.0 / 3.0;

struct SkillScore {
  double mu = kMu0;
  double sigma = kSigma0;
};

struct RankingParams {
  double mu0 = kMu0;
  double sigma0 = kSigma0;
  double beta = kSigma0 / 2.0;  // performance noise
  double tau = 0.0;             // dynamics noise, added to the prior variance before each game
  double epsilon = 0.0;         // draw margin; draws are not modelled

  void validate() const;
};

/// Additive mean correction phi(t)/Phi(t) for a win with margin t.
double v_win(double t);
/// Multiplicative variance correction v(t) * (v(t) + t).
double w_win(double t);

/// Posterior beliefs (winner, loser) after one decisive game.
std::pair<SkillScore, SkillScore> update(const SkillScore& winner, const SkillScore& loser,
                                         const RankingParams& params = {});

struct RankResult {
  std::map<std::string, SkillScore> scores;
  double mean_sigma = 0.0;
  std::size_t games = 0;
};

/// Starts every image at (mu0, sigma0) and applies left/right votes in
/// (server_ts, vote_id) order. Other vote categories are ignored.
RankResult rank_all(std::span<const Vote> votes, std::span<const std::string> images, const RankingParams& params = {});

/// Min-max map of mu onto [0, 10].
struct ScaledScores {
  std::map<std::string, double> scaled;
  double mu_min = 0.0;
  double mu_max = 0.0;

  double to_mu(double scaled_value) const { return mu_min + scaled_value / 10.0 * (mu_max - mu_min); }
};

ScaledScores scale_scores(const std::map<std::string, SkillScore>& scores);

/// Equal-frequency buckets 0..9 by value. Thresholds are the order statistics
/// at ceil(k*N/10), k = 1..9, and bucket k is lower-closed, so ties share a
/// bucket and some buckets may be empty.
struct DecileBuckets {
  std::vector<int> bucket;  // parallel to the input
  std::size_t distinct_values = 0;
  bool collapsed = false;  // fewer than 10 distinct values
};

DecileBuckets decile_buckets(std::span<const double> values);

struct DecileWeights {
  std::map<std::string, int> decile;  // 1..10
  std::map<std::string, double> weight;
  bool collapsed = false;
};

/// weight = N / (10 * size of the image's decile), so every non-empty decile
/// carries the same total weight.
DecileWeights decile_weights(const std::map<std::string, double>& scaled);

/// CSV `image_id,mu,sigma,scaled,decile,weight`.
std::string format_scores(const RankResult& ranks, const ScaledScores& scaled, const DecileWeights& weights);

}  // namespace percept::ranking
