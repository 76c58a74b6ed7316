#include "rxtree/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "rxtree/error.hpp"

namespace rxtree {

namespace {

std::vector<std::size_t> order_by_score(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  return order;
}

}  // namespace

double auc_roc(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) {
    throw InvalidArgument("auc_roc: labels and scores differ in length");
  }
  const auto positives = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const double negatives = static_cast<double>(labels.size()) - positives;
  if (positives == 0.0 || negatives == 0.0) {
    throw InvalidArgument("auc_roc: needs both positive and negative labels");
  }
  // Rank-sum with midranks for ties.
  const auto order = order_by_score(scores);
  double positive_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) positive_rank_sum += midrank;
    }
    i = j + 1;
  }
  const double u = positive_rank_sum - positives * (positives + 1.0) / 2.0;
  return u / (positives * negatives);
}

std::vector<CalibrationBucket> calibration_curve(std::span<const int> labels,
                                                 std::span<const double> scores,
                                                 std::size_t n_buckets,
                                                 double trim) {
  if (labels.size() != scores.size()) {
    throw InvalidArgument("calibration_curve: labels and scores differ in length");
  }
  if (n_buckets < 1) throw InvalidArgument("calibration_curve: n_buckets < 1");
  if (!(trim >= 0.0 && trim < 0.5)) {
    throw InvalidArgument("calibration_curve: trim must lie in [0, 0.5)");
  }
  const auto order = order_by_score(scores);
  const auto cut = static_cast<std::size_t>(static_cast<double>(order.size()) * trim / 2.0);
  const std::size_t begin = cut;
  const std::size_t end = order.size() - cut;
  const std::size_t kept = end - begin;
  const std::size_t buckets = std::min(n_buckets, kept);

  std::vector<CalibrationBucket> out;
  for (std::size_t b = 0; b < buckets; ++b) {
    const std::size_t lo = begin + b * kept / buckets;
    const std::size_t hi = begin + (b + 1) * kept / buckets;
    CalibrationBucket bucket;
    bucket.count = hi - lo;
    double score_sum = 0.0, events = 0.0;
    for (std::size_t k = lo; k < hi; ++k) {
      score_sum += scores[order[k]];
      events += labels[order[k]];
    }
    bucket.mean_score = score_sum / static_cast<double>(bucket.count);
    bucket.observed_rate = events / static_cast<double>(bucket.count);
    out.push_back(bucket);
  }
  return out;
}

}  // namespace rxtree
