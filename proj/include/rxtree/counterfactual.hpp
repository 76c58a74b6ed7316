#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "rxtree/data.hpp"
#include "rxtree/learners.hpp"
#include "rxtree/matrix.hpp"
#include "rxtree/policy.hpp"
#include "rxtree/reward.hpp"

namespace rxtree {

// n x n_t outcome-model estimates in [0, 1], columns in treatment order.
struct OutcomePredictions {
  Matrix values;
};

// n x n_t treatment probabilities; rows sum to 1 and every entry is at least
// clip_floor.
struct PropensityEstimates {
  Matrix values;
  double clip_floor = 0.05;
};

enum class OutcomeMode { per_treatment, single_with_treatment_feature };

std::string_view to_string(OutcomeMode mode);
OutcomeMode parse_outcome_mode(std::string_view text);

struct CounterfactualConfig {
  OutcomeMode outcome_mode = OutcomeMode::per_treatment;
  double clip_floor = 0.05;
  std::vector<EnsembleConfig> outcome_grid;     // empty: default grid
  std::vector<EnsembleConfig> propensity_grid;  // empty: default grid
  std::size_t cv_folds = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct OutcomeModels {
  OutcomeMode mode = OutcomeMode::per_treatment;
  // One model per treatment, or a single model taking the treatment as an
  // extra trailing categorical feature.
  std::vector<ProbabilisticClassifier> models;
  std::vector<EnsembleConfig> selected;
  std::vector<std::vector<double>> cv_auc;
};

struct OutcomeFit {
  OutcomeModels models;
  OutcomePredictions predictions;
};

struct PropensityFit {
  // n_t == 2: one model for P(T = second treatment). n_t > 2: one-vs-rest.
  std::vector<ProbabilisticClassifier> models;
  std::vector<EnsembleConfig> selected;
  PropensityEstimates estimates;
};

OutcomeFit fit_outcome_estimators(const Cohort& cohort, const CounterfactualConfig& config);
OutcomePredictions predict_outcomes(const OutcomeModels& models, const Cohort& cohort);

PropensityFit fit_propensity(const Cohort& cohort, const CounterfactualConfig& config);
PropensityEstimates predict_propensity(const PropensityFit& fit, const Cohort& cohort);

// Projects each row onto {p : sum p = 1, p >= floor}: entries below the floor
// are raised to it and the rest rescaled, repeated until stable.
PropensityEstimates clip_propensities(Matrix raw, double clip_floor);

// reward(i, t) = yhat(i, t) + [T_i = t] (y_i - yhat(i, t)) / p(i, t).
RewardMatrix doubly_robust(const Cohort& cohort, const OutcomePredictions& yhat,
                           const PropensityEstimates& propensity);

struct CounterfactualFit {
  OutcomeFit outcomes;
  PropensityFit propensity;
  RewardMatrix rewards;
};

CounterfactualFit estimate_counterfactuals(const Cohort& cohort,
                                           const CounterfactualConfig& config);

struct LeafArmRates {
  std::size_t recipients = 0;
  std::optional<double> estimated_rate;   // mean estimate over leaf members
  std::optional<double> historical_rate;  // among recipients; empty if none
};

struct LeafReconciliation {
  std::size_t leaf = 0;
  std::size_t members = 0;
  std::vector<LeafArmRates> arms;
};

// Estimated vs. historical outcome rate per leaf and treatment. `estimates`
// is an n x n_t matrix aligned to the cohort (outcome predictions or rewards).
std::vector<LeafReconciliation> leaf_rate_reconciliation(const Matrix& estimates,
                                                         const PolicyTree& tree,
                                                         const Cohort& cohort);

}  // namespace rxtree
