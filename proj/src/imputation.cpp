#include <algorithm>

#include "rxtree/data.hpp"
#include "rxtree/error.hpp"
#include "rxtree/learners.hpp"
#include "rxtree/random.hpp"

namespace rxtree::detail {

namespace {

constexpr std::size_t kMinForestRows = 10;

EnsembleConfig forest_config(std::size_t feature) {
  EnsembleConfig config;
  config.kind = EnsembleKind::bagged;
  config.n_estimators = 30;
  config.subsample = 1.0;
  config.base.max_depth = 6;
  config.base.min_samples_leaf = 5;
  config.seed = derive_seed(0x1f2e3d4c, feature);
  return config;
}

// Predictor matrix holding every feature except `target`.
FeatureMatrix predictors(const Cohort& complete, std::size_t target) {
  const FeatureMatrix full = feature_matrix(complete);
  FeatureMatrix out;
  out.values = Matrix(full.rows(), full.cols() - 1);
  for (std::size_t j = 0, k = 0; j < full.cols(); ++j) {
    if (j == target) continue;
    out.kinds.push_back(full.kinds[j]);
    out.level_counts.push_back(full.level_counts[j]);
    for (std::size_t r = 0; r < full.rows(); ++r) out.values(r, k) = full.values(r, j);
    ++k;
  }
  return out;
}

}  // namespace

Cohort impute_forest(const Cohort& cohort, const Cohort& fit_on) {
  const auto& schema = cohort.schema();
  // Predictors of the forests are themselves mean-imputed from fit_on.
  const Cohort fit_filled = impute(fit_on, ImputationMethod::mean, fit_on);
  const Cohort target_filled = impute(cohort, ImputationMethod::mean, fit_on);

  std::vector<PatientRecord> records = cohort.records();
  for (std::size_t j = 0; j < schema.size(); ++j) {
    std::vector<std::size_t> missing;
    for (std::size_t r = 0; r < cohort.size(); ++r) {
      if (!cohort[r].features[j]) missing.push_back(r);
    }
    if (missing.empty()) continue;

    std::vector<std::size_t> observed;
    for (std::size_t r = 0; r < fit_on.size(); ++r) {
      if (fit_on[r].features[j]) observed.push_back(r);
    }
    if (observed.size() < kMinForestRows) {
      throw ImputationError("impute: feature '" + schema[j].name + "' has " +
                            std::to_string(observed.size()) +
                            " observed values; forest imputation needs " +
                            std::to_string(kMinForestRows));
    }
    if (schema.size() == 1) {
      // Nothing to predict from; the forest degenerates to the mean/mode.
      const Cohort filled = impute(cohort, ImputationMethod::mean, fit_on);
      for (auto r : missing) records[r].features[j] = filled[r].features[j];
      continue;
    }

    const FeatureMatrix train_x = predictors(fit_filled, j);
    const FeatureMatrix query_x = predictors(target_filled, j);
    const EnsembleConfig config = forest_config(j);
    const Feature& f = schema[j];

    if (f.kind == FeatureKind::numeric) {
      std::vector<double> targets(fit_on.size(), 0.0);
      for (auto r : observed) targets[r] = *fit_on[r].features[j];
      const auto model = fit_bagged_regressor(train_x, targets, observed, config);
      for (auto r : missing) records[r].features[j] = model.predict(query_x.values.row(r));
      continue;
    }

    // Binary and categorical: one-vs-rest probability per level, argmax.
    const std::size_t levels = f.kind == FeatureKind::binary ? 2 : f.levels.size();
    std::vector<ProbabilisticClassifier> models;
    for (std::size_t level = 0; level < levels; ++level) {
      std::vector<int> labels(fit_on.size(), 0);
      for (auto r : observed) {
        labels[r] = *fit_on[r].features[j] == static_cast<double>(level) ? 1 : 0;
      }
      models.push_back(fit_classifier(train_x, labels, observed, config));
      if (levels == 2) break;
    }
    for (auto r : missing) {
      const auto x = query_x.values.row(r);
      std::size_t best = 0;
      if (levels == 2) {
        best = models[0].predict_proba(x) >= 0.5 ? 0 : 1;
      } else {
        double best_p = -1.0;
        for (std::size_t level = 0; level < levels; ++level) {
          const double p = models[level].predict_proba(x);
          if (p > best_p) {
            best_p = p;
            best = level;
          }
        }
      }
      records[r].features[j] = static_cast<double>(best);
    }
  }
  return Cohort(schema, cohort.treatments(), std::move(records));
}

}  // namespace rxtree::detail
