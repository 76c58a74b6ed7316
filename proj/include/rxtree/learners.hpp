#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rxtree/data.hpp"

namespace rxtree {

struct TreeLearnerConfig {
  // 0 yields a single-leaf tree.
  int max_depth = 3;
  std::size_t min_samples_leaf = 10;
  std::size_t n_candidate_thresholds = 32;

  void validate() const;
  bool operator==(const TreeLearnerConfig&) const = default;
};

enum class EnsembleKind { bagged, boosted };

std::string_view to_string(EnsembleKind kind);

struct EnsembleConfig {
  EnsembleKind kind = EnsembleKind::boosted;
  int n_estimators = 100;
  double learning_rate = 0.1;  // boosted only
  double subsample = 1.0;
  TreeLearnerConfig base;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const EnsembleConfig&) const = default;
};

// Candidate split points per feature, fixed from the training rows of a fit.
// Numeric and binary features use midpoints of sorted unique values (thinned
// evenly to at most n_candidate_thresholds); categorical features split one
// level against the rest.
class FeatureBins {
 public:
  FeatureBins(const FeatureMatrix& x, std::span<const std::size_t> rows,
              std::size_t max_thresholds);

  std::size_t features() const { return thresholds_.size(); }
  bool categorical(std::size_t j) const { return categorical_[j]; }
  // Number of bins of feature j (thresholds + 1, or level count).
  std::size_t bin_count(std::size_t j) const;
  const std::vector<double>& thresholds(std::size_t j) const {
    return thresholds_[j];
  }
  std::uint16_t bin(std::size_t row, std::size_t j) const {
    return codes_[row * thresholds_.size() + j];
  }

 private:
  std::vector<bool> categorical_;
  std::vector<std::size_t> levels_;
  std::vector<std::vector<double>> thresholds_;
  std::vector<std::uint16_t> codes_;  // row-major over all matrix rows
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  // Numeric: go left iff x < threshold. Categorical: left iff x == level.
  double threshold = 0.0;
  bool categorical = false;
  int left = -1;
  int right = -1;
  double value = 0.0;
  double gain = 0.0;  // squared-error reduction of the split
  std::size_t count = 0;

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

// Least-squares regression tree.
class RegressionTree {
 public:
  RegressionTree() = default;
  explicit RegressionTree(std::vector<TreeNode> nodes);

  double predict(std::span<const double> x) const;
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  std::size_t split_count() const;
  void scale_leaves(double factor);

  bool operator==(const RegressionTree&) const = default;

 private:
  std::vector<TreeNode> nodes_;
};

// Fits a tree to targets[r] for r in rows (targets is indexed by matrix row).
RegressionTree fit_regression_tree(const FeatureBins& bins,
                                   std::span<const std::size_t> rows,
                                   std::span<const double> targets,
                                   const TreeLearnerConfig& config);

class ProbabilisticClassifier {
 public:
  ProbabilisticClassifier() = default;

  // Degenerate model emitting a fixed probability.
  static ProbabilisticClassifier constant(double probability,
                                          std::size_t n_features);

  double predict_proba(std::span<const double> x) const;
  // Rejects incomplete vectors; imputation belongs upstream.
  double predict_proba(std::span<const FeatureValue> x) const;
  std::vector<double> predict_proba(const FeatureMatrix& x) const;

  // Impurity-decrease totals normalized to sum to 1, all zero without splits.
  const std::vector<double>& feature_importance() const { return importance_; }

  EnsembleKind kind() const { return kind_; }
  bool is_constant() const { return constant_.has_value(); }
  const std::vector<RegressionTree>& trees() const { return trees_; }

  std::string to_json() const;
  static ProbabilisticClassifier from_json(std::string_view text);

  bool operator==(const ProbabilisticClassifier&) const = default;

 private:
  friend ProbabilisticClassifier fit_classifier(const FeatureMatrix&,
                                                std::span<const int>,
                                                std::span<const std::size_t>,
                                                const EnsembleConfig&);

  EnsembleKind kind_ = EnsembleKind::boosted;
  EnsembleConfig config_;
  double base_score_ = 0.0;  // boosted: initial log-odds
  std::vector<RegressionTree> trees_;
  std::optional<double> constant_;
  std::vector<double> importance_;
};

ProbabilisticClassifier fit_classifier(const FeatureMatrix& x,
                                       std::span<const int> labels,
                                       std::span<const std::size_t> rows,
                                       const EnsembleConfig& config);
ProbabilisticClassifier fit_classifier(const FeatureMatrix& x,
                                       std::span<const int> labels,
                                       const EnsembleConfig& config);

// Bagged least-squares ensemble (used for forest imputation of numerics).
class TreeRegressor {
 public:
  double predict(std::span<const double> x) const;
  const std::vector<RegressionTree>& trees() const { return trees_; }

 private:
  friend TreeRegressor fit_bagged_regressor(const FeatureMatrix&,
                                            std::span<const double>,
                                            std::span<const std::size_t>,
                                            const EnsembleConfig&);
  std::vector<RegressionTree> trees_;
};

TreeRegressor fit_bagged_regressor(const FeatureMatrix& x,
                                   std::span<const double> targets,
                                   std::span<const std::size_t> rows,
                                   const EnsembleConfig& config);

struct CrossValidationResult {
  std::size_t best_index = 0;
  std::vector<double> mean_auc;  // one per grid entry
};

// Stratified k-fold selection by mean out-of-fold AUC. Folds whose held-out
// part has a single class score 0.5. Ties go to the earliest grid entry.
CrossValidationResult cross_validate(const FeatureMatrix& x,
                                     std::span<const int> labels,
                                     std::span<const std::size_t> rows,
                                     std::span<const EnsembleConfig> grid,
                                     std::size_t folds, std::uint64_t seed);

EnsembleConfig cross_validated_select(const FeatureMatrix& x,
                                      std::span<const int> labels,
                                      std::span<const EnsembleConfig> grid,
                                      std::size_t folds, std::uint64_t seed);

// depth {2,3} x estimators {50,100} x learning rate {0.1,0.3}, boosted, with
// at least 50 rows per leaf.
std::vector<EnsembleConfig> default_classifier_grid(std::uint64_t seed);

// Stratified fold id per position of `rows`.
std::vector<std::size_t> stratified_folds(std::span<const int> labels,
                                          std::span<const std::size_t> rows,
                                          std::size_t folds,
                                          std::uint64_t seed);

double log_loss(std::span<const int> labels, std::span<const double> probs);

}  // namespace rxtree
