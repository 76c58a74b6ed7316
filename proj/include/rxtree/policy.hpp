#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rxtree/data.hpp"
#include "rxtree/reward.hpp"

namespace rxtree {

// Historical statistics of one treatment inside a leaf.
struct LeafTreatmentStats {
  std::size_t count = 0;                  // recipients of the treatment
  std::optional<double> historical_rate;  // empty when count == 0
  std::optional<double> mean_estimated;   // mean outcome-model estimate

  bool operator==(const LeafTreatmentStats&) const = default;
};

struct PolicyNode {
  bool leaf = true;

  // Split nodes. Numeric: left iff value < threshold (ties go right).
  // Categorical: left iff the level index is in `levels`.
  std::size_t feature = 0;
  bool categorical = false;
  double threshold = 0.0;
  std::vector<std::size_t> levels;
  std::size_t left = 0;
  std::size_t right = 0;

  // Leaf nodes.
  std::size_t prescription = 0;
  std::size_t n_train = 0;
  std::vector<LeafTreatmentStats> stats;  // empty or one per treatment

  static PolicyNode make_leaf(std::size_t prescription, std::size_t n_train = 0);
  static PolicyNode make_numeric(std::size_t feature, double threshold,
                                 std::size_t left, std::size_t right);
  static PolicyNode make_categorical(std::size_t feature,
                                     std::vector<std::size_t> levels,
                                     std::size_t left, std::size_t right);

  bool operator==(const PolicyNode&) const = default;
};

// Binary prescription tree over a feature schema. Immutable once built.
class PolicyTree {
 public:
  // Validates indices, reachability from the root and absence of cycles.
  PolicyTree(FeatureSchema schema, TreatmentSet treatments,
             std::vector<PolicyNode> nodes, std::size_t root);

  static PolicyTree constant(FeatureSchema schema, TreatmentSet treatments,
                             std::size_t prescription, std::size_t n_train = 0);

  const FeatureSchema& schema() const { return schema_; }
  const TreatmentSet& treatments() const { return treatments_; }
  const std::vector<PolicyNode>& nodes() const { return nodes_; }
  const PolicyNode& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t root() const { return root_; }

  // Leaf reached by a complete feature vector in this tree's schema.
  std::size_t leaf_of(std::span<const double> x) const;
  bool goes_left(const PolicyNode& split, double value) const;

  std::size_t depth() const;
  std::size_t internal_count() const;
  // Leaf ids in depth-first, left-to-right order.
  std::vector<std::size_t> leaves() const;
  // Schema indices of features used by at least one split, ascending.
  std::vector<std::size_t> used_features() const;

  // Re-expresses the tree over `target`, matching features by name. Throws
  // TreeFormatError naming every feature that is absent or incompatible.
  PolicyTree bind(const FeatureSchema& target) const;

  // Copy with leaf counts and statistics recomputed from `cohort`; `estimates`
  // (n x n_t outcome-model predictions aligned to the cohort) fills
  // mean_estimated when given.
  PolicyTree with_leaf_stats(const Cohort& cohort,
                             const Matrix* estimates = nullptr) const;
  // Copy with leaf prescriptions set to the reward-minimizing treatment over
  // the cohort rows routed to each leaf (ties by treatment order).
  PolicyTree with_prescriptions(const Cohort& cohort, const RewardMatrix& reward) const;

  // Structural identity key: splits and prescriptions from the root down,
  // independent of node numbering and leaf statistics.
  std::string structure_key() const;

  bool operator==(const PolicyTree&) const = default;

 private:
  FeatureSchema schema_;
  TreatmentSet treatments_;
  std::vector<PolicyNode> nodes_;
  std::size_t root_ = 0;
};

struct Prescription {
  std::size_t treatment = 0;
  std::size_t leaf = 0;
  std::vector<LeafTreatmentStats> stats;
};

// Throws InvalidArgument when any value the tree could inspect is missing.
Prescription prescribe(const PolicyTree& tree, std::span<const FeatureValue> x);
Prescription prescribe(const PolicyTree& tree, std::span<const double> x);

// Leaf id per cohort record; binds the tree to the cohort schema if needed.
std::vector<std::size_t> route(const PolicyTree& tree, const Cohort& cohort);
std::vector<std::size_t> prescriptions(const PolicyTree& tree, const Cohort& cohort);

// Sum over records of reward(i, tree(x_i)).
double policy_objective(const PolicyTree& tree, const Cohort& cohort,
                        const RewardMatrix& reward);

inline constexpr int kTreeFormatVersion = 1;

// Versioned JSON document consumed by the calculator. Only features used by
// splits appear in the embedded schema.
std::string export_tree(const PolicyTree& tree);
PolicyTree import_tree(std::string_view document);

}  // namespace rxtree
