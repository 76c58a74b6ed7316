#include "rxtree/counterfactual.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rxtree/error.hpp"
#include "rxtree/random.hpp"

namespace rxtree {

std::string_view to_string(OutcomeMode mode) {
  return mode == OutcomeMode::per_treatment ? "per_treatment"
                                            : "single_with_treatment_feature";
}

OutcomeMode parse_outcome_mode(std::string_view text) {
  if (text == "per_treatment") return OutcomeMode::per_treatment;
  if (text == "single_with_treatment_feature" || text == "single") {
    return OutcomeMode::single_with_treatment_feature;
  }
  throw InvalidArgument("unknown outcome mode '" + std::string(text) + "'");
}

void CounterfactualConfig::validate() const {
  if (!(clip_floor > 0.0 && clip_floor < 0.5)) {
    throw InvalidArgument("counterfactual: clip_floor must lie in (0, 0.5)");
  }
  if (cv_folds < 2) throw InvalidArgument("counterfactual: cv_folds must be >= 2");
  for (const auto& c : outcome_grid) c.validate();
  for (const auto& c : propensity_grid) c.validate();
}

namespace {

std::vector<EnsembleConfig> seeded_grid(const std::vector<EnsembleConfig>& grid,
                                        std::uint64_t seed) {
  std::vector<EnsembleConfig> out =
      grid.empty() ? default_classifier_grid(seed) : grid;
  for (auto& c : out) c.seed = seed;
  return out;
}

struct SelectedModel {
  ProbabilisticClassifier model;
  EnsembleConfig config;
  std::vector<double> cv_auc;
};

// CV-select on `rows`, then refit the winner on all of them.
SelectedModel select_and_fit(const FeatureMatrix& x, std::span<const int> labels,
                             std::span<const std::size_t> rows,
                             const std::vector<EnsembleConfig>& grid,
                             std::size_t folds, std::uint64_t seed) {
  std::size_t positives = 0;
  for (auto r : rows) positives += static_cast<std::size_t>(labels[r]);
  const std::size_t negatives = rows.size() - positives;
  SelectedModel out;
  std::size_t best = 0;
  if (grid.size() > 1 && positives >= folds && negatives >= folds) {
    const auto cv = cross_validate(x, labels, rows, grid, folds, seed);
    best = cv.best_index;
    out.cv_auc = cv.mean_auc;
  }
  out.config = grid[best];
  if (rows.size() < 2) {
    const double rate = rows.empty() ? 0.0 : static_cast<double>(labels[rows[0]]);
    out.model = ProbabilisticClassifier::constant(rate, x.cols());
  } else {
    out.model = fit_classifier(x, labels, rows, out.config);
  }
  return out;
}

FeatureMatrix with_treatment_column(const FeatureMatrix& x, std::size_t treatments) {
  FeatureMatrix out;
  out.values = Matrix(x.rows(), x.cols() + 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto src = x.values.row(r);
    auto dst = out.values.row(r);
    std::copy(src.begin(), src.end(), dst.begin());
  }
  out.kinds = x.kinds;
  out.kinds.push_back(FeatureKind::categorical);
  out.level_counts = x.level_counts;
  out.level_counts.push_back(treatments);
  return out;
}

std::vector<int> outcomes(const Cohort& cohort) {
  std::vector<int> y(cohort.size());
  for (std::size_t i = 0; i < cohort.size(); ++i) y[i] = cohort[i].outcome;
  return y;
}

}  // namespace

OutcomeFit fit_outcome_estimators(const Cohort& cohort, const CounterfactualConfig& config) {
  config.validate();
  const std::size_t k = cohort.treatments().size();
  const auto counts = cohort.treatment_counts();
  for (std::size_t t = 0; t < k; ++t) {
    if (counts[t] == 0) {
      throw InvalidArgument("fit_outcome_estimators: treatment arm '" +
                            cohort.treatments().name(t) + "' is empty");
    }
  }
  const FeatureMatrix x = feature_matrix(cohort);
  const auto y = outcomes(cohort);

  OutcomeFit fit;
  fit.models.mode = config.outcome_mode;
  if (config.outcome_mode == OutcomeMode::per_treatment) {
    for (std::size_t t = 0; t < k; ++t) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < cohort.size(); ++i) {
        if (cohort[i].treatment == t) rows.push_back(i);
      }
      const std::uint64_t seed = derive_seed(config.seed, 100 + t);
      auto selected = select_and_fit(x, y, rows, seeded_grid(config.outcome_grid, seed),
                                     config.cv_folds, seed);
      fit.models.models.push_back(std::move(selected.model));
      fit.models.selected.push_back(selected.config);
      fit.models.cv_auc.push_back(std::move(selected.cv_auc));
    }
  } else {
    FeatureMatrix xt = with_treatment_column(x, k);
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      xt.values(i, x.cols()) = static_cast<double>(cohort[i].treatment);
    }
    std::vector<std::size_t> rows(cohort.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    const std::uint64_t seed = derive_seed(config.seed, 99);
    auto selected = select_and_fit(xt, y, rows, seeded_grid(config.outcome_grid, seed),
                                   config.cv_folds, seed);
    fit.models.models.push_back(std::move(selected.model));
    fit.models.selected.push_back(selected.config);
    fit.models.cv_auc.push_back(std::move(selected.cv_auc));
  }
  fit.predictions = predict_outcomes(fit.models, cohort);
  return fit;
}

OutcomePredictions predict_outcomes(const OutcomeModels& models, const Cohort& cohort) {
  const std::size_t k = cohort.treatments().size();
  const FeatureMatrix x = feature_matrix(cohort);
  OutcomePredictions out{Matrix(cohort.size(), k)};
  if (models.mode == OutcomeMode::per_treatment) {
    if (models.models.size() != k) {
      throw InvalidArgument("predict_outcomes: model count differs from treatment count");
    }
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      for (std::size_t t = 0; t < k; ++t) {
        out.values(i, t) = models.models[t].predict_proba(x.values.row(i));
      }
    }
    return out;
  }
  std::vector<double> row(x.cols() + 1);
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    auto src = x.values.row(i);
    std::copy(src.begin(), src.end(), row.begin());
    for (std::size_t t = 0; t < k; ++t) {
      row.back() = static_cast<double>(t);
      out.values(i, t) = models.models.front().predict_proba(std::span<const double>(row));
    }
  }
  return out;
}

PropensityEstimates clip_propensities(Matrix raw, double clip_floor) {
  const std::size_t k = raw.cols();
  if (!(clip_floor > 0.0) || clip_floor * static_cast<double>(k) > 1.0) {
    throw InvalidArgument("clip_propensities: floor incompatible with treatment count");
  }
  for (std::size_t i = 0; i < raw.rows(); ++i) {
    auto p = raw.row(i);
    double total = 0.0;
    for (double& v : p) {
      v = std::max(v, 0.0);
      total += v;
    }
    for (double& v : p) v = total > 0.0 ? v / total : 1.0 / static_cast<double>(k);

    std::vector<bool> pinned(k, false);
    for (std::size_t iter = 0; iter < k; ++iter) {
      bool changed = false;
      for (std::size_t t = 0; t < k; ++t) {
        if (!pinned[t] && p[t] < clip_floor) {
          pinned[t] = true;
          changed = true;
        }
      }
      if (!changed) break;
      double free_mass = 0.0;
      std::size_t pinned_count = 0;
      for (std::size_t t = 0; t < k; ++t) {
        if (pinned[t]) {
          ++pinned_count;
        } else {
          free_mass += p[t];
        }
      }
      const double target = 1.0 - static_cast<double>(pinned_count) * clip_floor;
      for (std::size_t t = 0; t < k; ++t) {
        if (pinned[t]) {
          p[t] = clip_floor;
        } else {
          p[t] = free_mass > 0.0 ? p[t] * target / free_mass
                                 : target / static_cast<double>(k - pinned_count);
        }
      }
    }
  }
  return {std::move(raw), clip_floor};
}

PropensityFit fit_propensity(const Cohort& cohort, const CounterfactualConfig& config) {
  config.validate();
  const std::size_t k = cohort.treatments().size();
  const auto counts = cohort.treatment_counts();
  const auto present = std::count_if(counts.begin(), counts.end(),
                                     [](std::size_t c) { return c > 0; });
  if (present < 2) {
    throw InvalidArgument("fit_propensity: cohort contains a single treatment");
  }
  const FeatureMatrix x = feature_matrix(cohort);
  std::vector<std::size_t> rows(cohort.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});

  PropensityFit fit;
  const std::size_t models = k == 2 ? 1 : k;
  for (std::size_t m = 0; m < models; ++m) {
    const std::size_t target = k == 2 ? 1 : m;
    std::vector<int> labels(cohort.size());
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      labels[i] = cohort[i].treatment == target ? 1 : 0;
    }
    const std::uint64_t seed = derive_seed(config.seed, 200 + m);
    auto selected = select_and_fit(x, labels, rows,
                                   seeded_grid(config.propensity_grid, seed),
                                   config.cv_folds, seed);
    fit.models.push_back(std::move(selected.model));
    fit.selected.push_back(selected.config);
  }
  fit.estimates.clip_floor = config.clip_floor;
  fit.estimates = predict_propensity(fit, cohort);
  return fit;
}

PropensityEstimates predict_propensity(const PropensityFit& fit, const Cohort& cohort) {
  const std::size_t k = cohort.treatments().size();
  const FeatureMatrix x = feature_matrix(cohort);
  Matrix raw(cohort.size(), k);
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto row = x.values.row(i);
    if (k == 2) {
      const double p = fit.models.front().predict_proba(row);
      raw(i, 0) = 1.0 - p;
      raw(i, 1) = p;
    } else {
      for (std::size_t t = 0; t < k; ++t) raw(i, t) = fit.models[t].predict_proba(row);
    }
  }
  return clip_propensities(std::move(raw), fit.estimates.clip_floor);
}

RewardMatrix doubly_robust(const Cohort& cohort, const OutcomePredictions& yhat,
                           const PropensityEstimates& propensity) {
  const std::size_t n = cohort.size();
  const std::size_t k = cohort.treatments().size();
  if (yhat.values.rows() != n || yhat.values.cols() != k ||
      propensity.values.rows() != n || propensity.values.cols() != k) {
    throw InvalidArgument("doubly_robust: matrix dimensions do not match the cohort");
  }
  Matrix gamma(n, k);
  std::vector<std::string> ids;
  ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rec = cohort[i];
    ids.push_back(rec.id);
    for (std::size_t t = 0; t < k; ++t) {
      const double estimate = yhat.values(i, t);
      gamma(i, t) = estimate;
      if (rec.treatment == t) {
        const double p = propensity.values(i, t);
        if (!(p > 0.0)) {
          throw InvalidArgument("doubly_robust: non-positive propensity for record " +
                                rec.id);
        }
        gamma(i, t) += (static_cast<double>(rec.outcome) - estimate) / p;
      }
    }
  }
  return RewardMatrix(std::move(ids), cohort.treatments(), std::move(gamma),
                      RewardProvenance::doubly_robust);
}

CounterfactualFit estimate_counterfactuals(const Cohort& cohort,
                                           const CounterfactualConfig& config) {
  auto outcomes_fit = fit_outcome_estimators(cohort, config);
  auto propensity_fit = fit_propensity(cohort, config);
  auto rewards = doubly_robust(cohort, outcomes_fit.predictions, propensity_fit.estimates);
  return {std::move(outcomes_fit), std::move(propensity_fit), std::move(rewards)};
}

std::vector<LeafReconciliation> leaf_rate_reconciliation(const Matrix& estimates,
                                                         const PolicyTree& tree,
                                                         const Cohort& cohort) {
  const std::size_t k = cohort.treatments().size();
  if (estimates.rows() != cohort.size() || estimates.cols() != k) {
    throw InvalidArgument("leaf_rate_reconciliation: estimates do not match the cohort");
  }
  const auto leaf_of = route(tree, cohort);
  const auto leaves = tree.leaves();
  std::vector<std::size_t> slot(tree.nodes().size(), 0);
  for (std::size_t s = 0; s < leaves.size(); ++s) slot[leaves[s]] = s;

  std::vector<LeafReconciliation> out(leaves.size());
  std::vector<std::vector<double>> est_sum(leaves.size(), std::vector<double>(k, 0.0));
  std::vector<std::vector<double>> events(leaves.size(), std::vector<double>(k, 0.0));
  for (std::size_t s = 0; s < leaves.size(); ++s) {
    out[s].leaf = leaves[s];
    out[s].arms.resize(k);
  }
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const std::size_t s = slot[leaf_of[i]];
    ++out[s].members;
    const auto t = cohort[i].treatment;
    ++out[s].arms[t].recipients;
    events[s][t] += cohort[i].outcome;
    for (std::size_t a = 0; a < k; ++a) est_sum[s][a] += estimates(i, a);
  }
  for (std::size_t s = 0; s < leaves.size(); ++s) {
    for (std::size_t a = 0; a < k; ++a) {
      auto& arm = out[s].arms[a];
      if (out[s].members > 0) {
        arm.estimated_rate = est_sum[s][a] / static_cast<double>(out[s].members);
      }
      if (arm.recipients > 0) {
        arm.historical_rate = events[s][a] / static_cast<double>(arm.recipients);
      }
    }
  }
  return out;
}

}  // namespace rxtree
