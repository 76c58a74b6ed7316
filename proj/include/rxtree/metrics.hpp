#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace rxtree {

// Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(equal).
// Throws InvalidArgument unless both classes are present.
double auc_roc(std::span<const int> labels, std::span<const double> scores);

struct CalibrationBucket {
  double mean_score = 0.0;
  double observed_rate = 0.0;
  std::size_t count = 0;
};

// Drops floor(n * trim / 2) samples from each tail of the score
// distribution, then splits the rest into equal-count buckets by score.
// With fewer samples than buckets every bucket holds one sample.
std::vector<CalibrationBucket> calibration_curve(std::span<const int> labels,
                                                 std::span<const double> scores,
                                                 std::size_t n_buckets,
                                                 double trim);

}  // namespace rxtree
