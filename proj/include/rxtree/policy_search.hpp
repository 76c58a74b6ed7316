#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rxtree/data.hpp"
#include "rxtree/matrix.hpp"
#include "rxtree/policy.hpp"
#include "rxtree/reward.hpp"

namespace rxtree {

struct OptConfig {
  std::size_t max_depth = 8;
  std::size_t min_samples_leaf = 50;
  // Penalty per internal node, in units of mean |reward|. Sorted, contains 0.
  std::vector<double> complexity_grid = {0.0, 2.0, 4.0, 8.0, 16.0, 32.0};
  double validation_fraction = 0.15;
  std::size_t n_restarts = 10;
  std::size_t max_passes = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ComplexityResult {
  double lambda = 0.0;
  double train_objective = 0.0;  // penalized, on the search rows
  std::optional<double> validation_objective;
  std::size_t internal_nodes = 0;
  std::size_t best_restart = 0;
};

struct PolicyFit {
  PolicyTree tree;
  double lambda = 0.0;
  std::vector<ComplexityResult> grid;
  std::size_t search_rows = 0;
  std::size_t validation_rows = 0;
  std::vector<std::string> warnings;
};

// Grid of λ values, each searched from n_restarts seeded greedy trees by
// coordinate descent on the non-withheld rows. λ is chosen by the withheld
// rows' objective (ties go to the larger λ); with a single-entry grid no rows
// are withheld. Leaf prescriptions and statistics are then refit on all of
// `train`. `estimates` (n x n_t outcome predictions) fills mean_estimated.
PolicyFit fit_policy_tree(const Cohort& train, const RewardMatrix& reward,
                          const OptConfig& config, const Matrix* estimates = nullptr);

struct DescentSettings {
  std::size_t max_depth = 8;
  std::size_t min_samples_leaf = 50;
  double lambda = 0.0;
  std::size_t max_passes = 100;
  std::uint64_t seed = 0;
};

struct DescentResult {
  PolicyTree tree;
  double objective = 0.0;  // penalized
  std::vector<double> trace;  // penalized objective at the start and after each move
  std::size_t passes = 0;
};

// Penalized objective: sum_i reward(i, tree(x_i)) + λ * internal * mean|reward|.
double penalized_objective(const PolicyTree& tree, const Cohort& cohort,
                           const RewardMatrix& reward, double lambda);

// Greedy best-first tree: repeatedly splits the leaf with the largest
// penalized gain. `feature_fraction` < 1 samples a random feature subset per
// split search.
PolicyTree greedy_policy_tree(const Cohort& cohort, const RewardMatrix& reward,
                              const DescentSettings& settings,
                              double feature_fraction = 1.0);

// Local search from `start`, which must satisfy the depth and min-leaf limits.
// Each pass visits the live nodes in random order and applies the best
// strictly improving move among: collapse to a leaf, promote either child,
// re-split keeping both children, replace by the best single split.
DescentResult coordinate_descent(const Cohort& cohort, const RewardMatrix& reward,
                                 const PolicyTree& start, const DescentSettings& settings);

// Globally optimal tree of depth <= max_depth (at most 2) over node-local
// midpoint thresholds and single-level categorical splits. Refuses instances
// above 500 rows or 8 features.
PolicyTree exhaustive_policy_search(const Cohort& train, const RewardMatrix& reward,
                                    std::size_t max_depth, std::size_t min_samples_leaf,
                                    double lambda = 0.0);

}  // namespace rxtree
