#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rxtree/data.hpp"
#include "rxtree/matrix.hpp"
#include "rxtree/policy.hpp"
#include "rxtree/reward.hpp"

namespace rxtree {

enum class Distribution { normal, uniform, bernoulli, categorical };

std::string_view to_string(Distribution d);
Distribution parse_distribution(std::string_view text);

struct FeatureGenerator {
  Feature feature;
  Distribution distribution = Distribution::normal;
  double mean = 0.0;  // normal
  double sd = 1.0;
  double low = 0.0;   // uniform
  double high = 1.0;
  double probability = 0.5;           // bernoulli
  std::vector<double> level_weights;  // categorical, one per level
  std::optional<double> clamp_low;    // normal and uniform draws
  std::optional<double> clamp_high;
  std::optional<int> decimals;  // rounding applied before anything reads the value
  double missing_rate = 0.0;    // observed cell blanked; truth keeps the value
};

// Numeric and binary: x < value or x >= value. Categorical: level membership.
struct Condition {
  enum class Op { less, at_least, in };
  std::string feature;
  Op op = Op::less;
  double value = 0.0;
  std::vector<std::string> levels;
};

struct Region {
  std::vector<Condition> conditions;  // conjunction; empty matches everything
  double probability = 0.0;
};

struct AssignmentTerm {
  std::string feature;
  double weight = 0.0;
  double center = 0.0;
};

// Multinomial logit against the first treatment: score_t = intercept +
// sum weight * (x - center), score_0 = 0.
struct ArmAssignment {
  double intercept = 0.0;
  std::vector<AssignmentTerm> terms;
};

struct SyntheticSpec {
  std::vector<FeatureGenerator> features;
  std::vector<std::string> treatments;
  // outcome[t]: regions partitioning the feature space with P(y = 1 | T = t).
  std::vector<std::vector<Region>> outcome;
  std::vector<ArmAssignment> assignment;  // one per treatment after the first
  std::size_t n = 1000;
  std::uint64_t seed = 0;

  void validate() const;
  FeatureSchema schema() const;
  TreatmentSet treatment_set() const;
};

// Per-record truth for a complete feature vector in schema order.
std::vector<double> true_outcome_probabilities(const SyntheticSpec& spec,
                                               std::span<const double> x);
std::vector<double> true_propensities(const SyntheticSpec& spec, std::span<const double> x);

struct SyntheticTruth {
  Matrix propensity;           // n x n_t
  Matrix outcome_probability;  // n x n_t
  std::vector<std::size_t> optimal;  // per-record argmin arm, ties by order
  double optimal_value = 0.0;        // mean of the per-record minimum
  double historical_value = 0.0;     // mean probability of the received arm
};

struct SyntheticCohort {
  Cohort cohort;    // observed, may contain missing cells
  Cohort complete;  // same records before missingness
  SyntheticTruth truth;
};

SyntheticCohort generate(const SyntheticSpec& spec);

// Reward matrix holding the true arm probabilities.
RewardMatrix oracle_rewards(const SyntheticCohort& data);

// Mean true probability of the arms a tree prescribes, routing on the
// complete features.
double true_policy_value(const PolicyTree& tree, const SyntheticCohort& data);

// 100 * (historical - value) / historical on the truth of `data`.
double true_improvement(const PolicyTree& tree, const SyntheticCohort& data);

// Binary conduction_defect confounder plus four informative numerics echoing
// the published tree, two arms (Sapien, Evolut) and three noise features.
SyntheticSpec tavr_like_preset(std::size_t n, std::uint64_t seed);

// Tree prescribing the per-region optimal arm, with sibling leaves sharing a
// prescription merged.
PolicyTree oracle_policy_tree(const SyntheticSpec& spec);

std::string spec_json(const SyntheticSpec& spec);
SyntheticSpec parse_spec_json(std::string_view text);
std::string truth_json(const SyntheticCohort& data);

}  // namespace rxtree
