#pragma once

#include <array>
#include <string>
#include <vector>

#include "sigcast/counterfactual.hpp"
#include "sigcast/timeline.hpp"

namespace sigcast {

// Root mean squared error over aligned per-post trajectories
// (posts x steps x dimensions).
double rmse(const std::vector<std::vector<std::array<double, kEngagementDims>>>& pred,
            const std::vector<std::vector<std::array<double, kEngagementDims>>>& truth);

// likes + shares + 3*comments + emoji
double composite_score(const std::array<double, kEngagementDims>& e);
double composite_score(const EngagementVector& e);

// Fraction of entries <= own value; ties share the count.
std::vector<double> percentile_rank(const std::vector<double>& scores);

struct RankStats {
  double spearman = 0.0;
  double kendall_w = 0.0;
  double ccc = 0.0;
};

// Spearman rho, Kendall's W for the two rankings, and the concordance
// correlation coefficient. Ties get average ranks. Throws when both inputs
// have zero variance (CCC undefined).
RankStats rank_stats(const std::vector<double>& a, const std::vector<double>& b);

// Average ranks (1-based, ties averaged).
std::vector<double> average_ranks(const std::vector<double>& v);

// cell (i,j) counts items in decile i of a and decile j of b
std::vector<std::vector<int>> decile_matrix(const std::vector<double>& a,
                                            const std::vector<double>& b);

// Mean composite engagement gain of a source's posts from the observed
// signal versus a fully suppressed one.
double influence_score(const JointModel& model, const std::vector<const Post*>& source_posts,
                       const SignalTimeline& signal, const ObservationWindow& win,
                       const NormStats& norm);

struct SourceScore {
  std::string user_ref;
  double raw = 0.0;         // mean composite causal effect
  double percentile = 0.0;  // rank-normalized over sources
  int n_posts = 0;
};

// Scores for every source appearing in `posts`, in first-appearance order.
std::vector<SourceScore> influence_scores(const JointModel& model,
                                          const std::vector<Post>& posts,
                                          const SignalTimeline& signal,
                                          const ObservationWindow& win,
                                          const NormStats& norm, int threads = 1);

}  // namespace sigcast
