#include "sigcast/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sigcast/parallel.hpp"
#include "sigcast/training.hpp"

namespace sigcast {

double rmse(const std::vector<std::vector<std::array<double, kEngagementDims>>>& pred,
            const std::vector<std::vector<std::array<double, kEngagementDims>>>& truth) {
  if (pred.size() != truth.size()) throw ShapeError("rmse: post counts differ");
  double sq = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < pred.size(); ++p) {
    if (pred[p].size() != truth[p].size()) {
      throw ShapeError("rmse: grid mismatch at post " + std::to_string(p));
    }
    for (std::size_t k = 0; k < pred[p].size(); ++k) {
      for (int d = 0; d < kEngagementDims; ++d) {
        const double diff = pred[p][k][static_cast<std::size_t>(d)] -
                            truth[p][k][static_cast<std::size_t>(d)];
        sq += diff * diff;
        ++n;
      }
    }
  }
  return n == 0 ? 0.0 : std::sqrt(sq / static_cast<double>(n));
}

double composite_score(const std::array<double, kEngagementDims>& e) {
  return e[0] + e[1] + 3.0 * e[2] + e[3];
}

double composite_score(const EngagementVector& e) {
  return composite_score(std::array<double, kEngagementDims>{
      static_cast<double>(e.counts[0]), static_cast<double>(e.counts[1]),
      static_cast<double>(e.counts[2]), static_cast<double>(e.counts[3])});
}

std::vector<double> percentile_rank(const std::vector<double>& scores) {
  if (scores.empty()) throw ShapeError("percentile_rank: empty input");
  const std::size_t n = scores.size();
  std::vector<double> sorted(scores);
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    // number of entries <= scores[i]
    const auto le = std::upper_bound(sorted.begin(), sorted.end(), scores[i]) -
                    sorted.begin();
    out[i] = static_cast<double>(le) / static_cast<double>(n);
  }
  return out;
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return v[a] < v[b] || (v[a] == v[b] && a < b);
  });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// population moments
void moments(const std::vector<double>& a, const std::vector<double>& b, double& var_a,
             double& var_b, double& cov) {
  const double ma = mean_of(a), mb = mean_of(b);
  var_a = var_b = cov = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    var_a += (a[i] - ma) * (a[i] - ma);
    var_b += (b[i] - mb) * (b[i] - mb);
    cov += (a[i] - ma) * (b[i] - mb);
  }
  var_a /= static_cast<double>(a.size());
  var_b /= static_cast<double>(a.size());
  cov /= static_cast<double>(a.size());
}

}  // namespace

RankStats rank_stats(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("rank_stats: length mismatch");
  if (a.size() < 3) throw ShapeError("rank_stats: need at least 3 items");
  const std::size_t n = a.size();

  RankStats out;

  // Spearman: Pearson correlation of average ranks
  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  double var_ra, var_rb, cov_r;
  moments(ra, rb, var_ra, var_rb, cov_r);
  if (var_ra > 0.0 && var_rb > 0.0) {
    out.spearman = cov_r / std::sqrt(var_ra * var_rb);
  }

  // Kendall's W over the m=2 rankings, with the tie correction
  {
    const double m = 2.0;
    std::vector<double> rsum(n);
    for (std::size_t i = 0; i < n; ++i) rsum[i] = ra[i] + rb[i];
    const double mean_r = mean_of(rsum);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (rsum[i] - mean_r) * (rsum[i] - mean_r);
    auto tie_term = [](const std::vector<double>& v) {
      std::vector<double> sorted(v);
      std::sort(sorted.begin(), sorted.end());
      double t = 0.0;
      std::size_t i = 0;
      while (i < sorted.size()) {
        std::size_t j = i;
        while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
        const double run = static_cast<double>(j - i + 1);
        t += run * run * run - run;
        i = j + 1;
      }
      return t;
    };
    const double nn = static_cast<double>(n);
    const double denom = m * m * (nn * nn * nn - nn) - m * (tie_term(a) + tie_term(b));
    out.kendall_w = denom > 0.0 ? 12.0 * s / denom : 1.0;
  }

  // Concordance correlation on the raw values
  double var_a, var_b, cov;
  moments(a, b, var_a, var_b, cov);
  const double ma = mean_of(a), mb = mean_of(b);
  const double denom = var_a + var_b + (ma - mb) * (ma - mb);
  if (denom <= 0.0) {
    throw InvariantError("ccc undefined: both inputs have zero variance and equal means");
  }
  out.ccc = 2.0 * cov / denom;
  return out;
}

std::vector<std::vector<int>> decile_matrix(const std::vector<double>& a,
                                            const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("decile_matrix: length mismatch");
  if (a.size() < 10) throw ShapeError("decile_matrix: need at least 10 items");
  const std::size_t n = a.size();

  auto deciles = [n](const std::vector<double>& v) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) {
      return v[x] < v[y] || (v[x] == v[y] && x < y);
    });
    std::vector<int> d(n);
    for (std::size_t pos = 0; pos < n; ++pos) {
      d[idx[pos]] = static_cast<int>(pos * 10 / n);
    }
    return d;
  };
  const std::vector<int> da = deciles(a);
  const std::vector<int> db = deciles(b);
  std::vector<std::vector<int>> cell(10, std::vector<int>(10, 0));
  for (std::size_t i = 0; i < n; ++i) {
    cell[static_cast<std::size_t>(da[i])][static_cast<std::size_t>(db[i])]++;
  }
  return cell;
}

double influence_score(const JointModel& model, const std::vector<const Post*>& source_posts,
                       const SignalTimeline& signal, const ObservationWindow& win,
                       const NormStats& norm) {
  if (source_posts.empty()) throw ConfigError("influence_score: source has no posts");
  // causal treatment = the observed signal versus a fully suppressed one
  const CounterfactualSpec zeroed = CounterfactualSpec::exposure(0.0, 0);
  double acc = 0.0;
  for (const Post* p : source_posts) {
    const auto delta = cf_effect(model, *p, signal, zeroed, win, norm);
    // delta is (zeroed - observed); the signal's contribution is its negation
    std::array<double, kEngagementDims> gain{};
    for (int d = 0; d < kEngagementDims; ++d)
      gain[static_cast<std::size_t>(d)] = -delta[static_cast<std::size_t>(d)];
    acc += composite_score(gain);
  }
  return acc / static_cast<double>(source_posts.size());
}

std::vector<SourceScore> influence_scores(const JointModel& model,
                                          const std::vector<Post>& posts,
                                          const SignalTimeline& signal,
                                          const ObservationWindow& win,
                                          const NormStats& norm, int threads) {
  std::vector<std::string> order;
  std::vector<std::vector<const Post*>> groups;
  for (const Post& p : posts) {
    auto it = std::find(order.begin(), order.end(), p.user_ref);
    if (it == order.end()) {
      order.push_back(p.user_ref);
      groups.emplace_back();
      it = order.end() - 1;
    }
    groups[static_cast<std::size_t>(it - order.begin())].push_back(&p);
  }

  std::vector<SourceScore> out(order.size());
  parallel_for(order.size(), threads, [&](std::size_t s) {
    out[s].user_ref = order[s];
    out[s].n_posts = static_cast<int>(groups[s].size());
    out[s].raw = influence_score(model, groups[s], signal, win, norm);
  });
  std::vector<double> raws(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) raws[i] = out[i].raw;
  const std::vector<double> pct = percentile_rank(raws);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].percentile = pct[i];
  return out;
}

}  // namespace sigcast
