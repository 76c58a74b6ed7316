#include "rxtree/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "rxtree/error.hpp"
#include "rxtree/metrics.hpp"
#include "rxtree/random.hpp"

namespace rxtree {

using nlohmann::json;

void TreeLearnerConfig::validate() const {
  if (max_depth < 0 || max_depth > 32) {
    throw InvalidArgument("tree learner: max_depth must lie in [0, 32]");
  }
  if (min_samples_leaf < 1) {
    throw InvalidArgument("tree learner: min_samples_leaf must be >= 1");
  }
  if (n_candidate_thresholds < 1 || n_candidate_thresholds > 65000) {
    throw InvalidArgument(
        "tree learner: n_candidate_thresholds must lie in [1, 65000]");
  }
}

std::string_view to_string(EnsembleKind kind) {
  return kind == EnsembleKind::bagged ? "bagged" : "boosted";
}

void EnsembleConfig::validate() const {
  base.validate();
  if (n_estimators < 1) throw InvalidArgument("ensemble: n_estimators < 1");
  if (!(subsample > 0.0 && subsample <= 1.0)) {
    throw InvalidArgument("ensemble: subsample must lie in (0, 1]");
  }
  if (kind == EnsembleKind::boosted &&
      !(learning_rate > 0.0 && learning_rate <= 1.0)) {
    throw InvalidArgument("ensemble: learning_rate must lie in (0, 1]");
  }
}

// ---------------------------------------------------------------------------
// Binning

FeatureBins::FeatureBins(const FeatureMatrix& x,
                         std::span<const std::size_t> rows,
                         std::size_t max_thresholds) {
  const std::size_t p = x.cols();
  categorical_.resize(p);
  levels_.resize(p);
  thresholds_.resize(p);
  for (std::size_t j = 0; j < p; ++j) {
    categorical_[j] = x.kinds[j] == FeatureKind::categorical;
    levels_[j] = x.level_counts[j];
    if (categorical_[j]) continue;
    std::vector<double> values;
    values.reserve(rows.size());
    for (auto r : rows) values.push_back(x.values(r, j));
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    std::vector<double> mids;
    for (std::size_t i = 1; i < values.size(); ++i) {
      mids.push_back(0.5 * (values[i - 1] + values[i]));
    }
    if (mids.size() > max_thresholds) {
      std::vector<double> thinned;
      thinned.reserve(max_thresholds);
      for (std::size_t k = 0; k < max_thresholds; ++k) {
        const std::size_t idx = (2 * k + 1) * mids.size() / (2 * max_thresholds);
        thinned.push_back(mids[idx]);
      }
      thinned.erase(std::unique(thinned.begin(), thinned.end()), thinned.end());
      mids = std::move(thinned);
    }
    thresholds_[j] = std::move(mids);
  }

  codes_.resize(x.rows() * p);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < p; ++j) {
      const double v = x.values(r, j);
      std::size_t code = 0;
      if (categorical_[j]) {
        code = static_cast<std::size_t>(v);
      } else {
        const auto& t = thresholds_[j];
        code = static_cast<std::size_t>(
            std::upper_bound(t.begin(), t.end(), v) - t.begin());
      }
      codes_[r * p + j] = static_cast<std::uint16_t>(code);
    }
  }
}

std::size_t FeatureBins::bin_count(std::size_t j) const {
  return categorical_[j] ? levels_[j] : thresholds_[j].size() + 1;
}

// ---------------------------------------------------------------------------
// Regression tree

RegressionTree::RegressionTree(std::vector<TreeNode> nodes)
    : nodes_(std::move(nodes)) {
  if (nodes_.empty()) throw InvalidArgument("regression tree: no nodes");
  const int n = static_cast<int>(nodes_.size());
  for (const auto& node : nodes_) {
    if (!node.is_leaf() && (node.left <= 0 || node.left >= n ||
                            node.right <= 0 || node.right >= n)) {
      throw InvalidArgument("regression tree: dangling child index");
    }
  }
}

double RegressionTree::predict(std::span<const double> x) const {
  std::size_t i = 0;
  while (!nodes_[i].is_leaf()) {
    const TreeNode& node = nodes_[i];
    const double v = x[static_cast<std::size_t>(node.feature)];
    const bool left = node.categorical ? v == node.threshold : v < node.threshold;
    i = static_cast<std::size_t>(left ? node.left : node.right);
  }
  return nodes_[i].value;
}

std::size_t RegressionTree::split_count() const {
  return static_cast<std::size_t>(std::count_if(
      nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return !n.is_leaf(); }));
}

void RegressionTree::scale_leaves(double factor) {
  for (auto& node : nodes_) {
    if (node.is_leaf()) node.value *= factor;
  }
}

namespace {

struct SplitChoice {
  int feature = -1;
  std::size_t bin = 0;  // numeric: left iff code <= bin; categorical: code == bin
  double gain = 0.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const FeatureBins& bins, std::span<const double> targets,
              const TreeLearnerConfig& config)
      : bins_(bins), targets_(targets), config_(config) {}

  std::vector<TreeNode> build(std::vector<std::size_t> rows) {
    nodes_.clear();
    grow(std::move(rows), 0);
    return std::move(nodes_);
  }

 private:
  int grow(std::vector<std::size_t> rows, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    double total = 0.0;
    for (auto r : rows) total += targets_[r];
    nodes_[id].count = rows.size();
    nodes_[id].value = rows.empty() ? 0.0 : total / static_cast<double>(rows.size());
    if (depth >= config_.max_depth ||
        rows.size() < 2 * config_.min_samples_leaf) {
      return id;
    }
    const SplitChoice best = find_split(rows, total);
    if (best.feature < 0) return id;

    const auto j = static_cast<std::size_t>(best.feature);
    const bool cat = bins_.categorical(j);
    std::vector<std::size_t> left_rows, right_rows;
    for (auto r : rows) {
      const std::size_t code = bins_.bin(r, j);
      const bool left = cat ? code == best.bin : code <= best.bin;
      (left ? left_rows : right_rows).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();

    nodes_[id].feature = best.feature;
    nodes_[id].categorical = cat;
    nodes_[id].threshold = cat ? static_cast<double>(best.bin)
                               : bins_.thresholds(j)[best.bin];
    nodes_[id].gain = best.gain;
    const int left = grow(std::move(left_rows), depth + 1);
    const int right = grow(std::move(right_rows), depth + 1);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  SplitChoice find_split(const std::vector<std::size_t>& rows, double total) {
    const double n = static_cast<double>(rows.size());
    const double parent = total * total / n;
    const std::size_t min_leaf = config_.min_samples_leaf;
    SplitChoice best;
    for (std::size_t j = 0; j < bins_.features(); ++j) {
      const std::size_t nb = bins_.bin_count(j);
      if (nb < 2) continue;
      sums_.assign(nb, 0.0);
      counts_.assign(nb, 0);
      for (auto r : rows) {
        const std::size_t code = bins_.bin(r, j);
        sums_[code] += targets_[r];
        ++counts_[code];
      }
      auto consider = [&](std::size_t bin, double left_sum, std::size_t left_n) {
        const std::size_t right_n = rows.size() - left_n;
        if (left_n < min_leaf || right_n < min_leaf) return;
        const double right_sum = total - left_sum;
        const double gain = left_sum * left_sum / static_cast<double>(left_n) +
                            right_sum * right_sum / static_cast<double>(right_n) -
                            parent;
        if (gain > best.gain + 1e-12 * (1.0 + std::abs(parent))) {
          best = {static_cast<int>(j), bin, gain};
        }
      };
      if (bins_.categorical(j)) {
        for (std::size_t b = 0; b < nb; ++b) consider(b, sums_[b], counts_[b]);
      } else {
        double left_sum = 0.0;
        std::size_t left_n = 0;
        for (std::size_t b = 0; b + 1 < nb; ++b) {
          left_sum += sums_[b];
          left_n += counts_[b];
          consider(b, left_sum, left_n);
        }
      }
    }
    return best;
  }

  const FeatureBins& bins_;
  std::span<const double> targets_;
  const TreeLearnerConfig& config_;
  std::vector<TreeNode> nodes_;
  std::vector<double> sums_;
  std::vector<std::size_t> counts_;
};

}  // namespace

RegressionTree fit_regression_tree(const FeatureBins& bins,
                                   std::span<const std::size_t> rows,
                                   std::span<const double> targets,
                                   const TreeLearnerConfig& config) {
  config.validate();
  TreeBuilder builder(bins, targets, config);
  return RegressionTree(builder.build({rows.begin(), rows.end()}));
}

// ---------------------------------------------------------------------------
// Ensembles

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

// Sample for one bagged tree: a bootstrap draw, except that a one-tree
// ensemble uses the rows themselves (subsampled without replacement).
std::vector<std::size_t> bagging_sample(std::span<const std::size_t> rows,
                                        const EnsembleConfig& config,
                                        Rng& rng) {
  const auto size = std::max<std::size_t>(
      1, static_cast<std::size_t>(
             std::llround(config.subsample * static_cast<double>(rows.size()))));
  std::vector<std::size_t> sample;
  sample.reserve(size);
  if (config.n_estimators == 1) {
    if (size == rows.size()) return {rows.begin(), rows.end()};
    auto order = permutation(rows.size(), rng);
    for (std::size_t i = 0; i < size; ++i) sample.push_back(rows[order[i]]);
    std::sort(sample.begin(), sample.end());
    return sample;
  }
  for (std::size_t i = 0; i < size; ++i) sample.push_back(rows[rng.index(rows.size())]);
  return sample;
}

std::vector<double> normalized_importance(const std::vector<RegressionTree>& trees,
                                          std::size_t n_features) {
  std::vector<double> importance(n_features, 0.0);
  for (const auto& tree : trees) {
    for (const auto& node : tree.nodes()) {
      if (!node.is_leaf()) importance[static_cast<std::size_t>(node.feature)] += node.gain;
    }
  }
  const double total = std::accumulate(importance.begin(), importance.end(), 0.0);
  if (total > 0.0) {
    for (auto& v : importance) v /= total;
  }
  return importance;
}

}  // namespace

ProbabilisticClassifier ProbabilisticClassifier::constant(double probability,
                                                          std::size_t n_features) {
  ProbabilisticClassifier model;
  model.constant_ = std::clamp(probability, 0.0, 1.0);
  model.importance_.assign(n_features, 0.0);
  return model;
}

double ProbabilisticClassifier::predict_proba(std::span<const double> x) const {
  for (double v : x) {
    if (std::isnan(v)) throw InvalidArgument("predict_proba: missing value");
  }
  if (constant_) return *constant_;
  if (kind_ == EnsembleKind::boosted) {
    double z = base_score_;
    for (const auto& tree : trees_) z += tree.predict(x);
    return sigmoid(z);
  }
  double total = 0.0;
  for (const auto& tree : trees_) total += tree.predict(x);
  return std::clamp(total / static_cast<double>(trees_.size()), 0.0, 1.0);
}

double ProbabilisticClassifier::predict_proba(std::span<const FeatureValue> x) const {
  std::vector<double> dense(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (!x[j]) {
      throw InvalidArgument("predict_proba: feature " + std::to_string(j) +
                            " is missing; impute before predicting");
    }
    dense[j] = *x[j];
  }
  return predict_proba(std::span<const double>(dense));
}

std::vector<double> ProbabilisticClassifier::predict_proba(const FeatureMatrix& x) const {
  std::vector<double> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) out[r] = predict_proba(x.values.row(r));
  return out;
}

ProbabilisticClassifier fit_classifier(const FeatureMatrix& x,
                                       std::span<const int> labels,
                                       std::span<const std::size_t> rows,
                                       const EnsembleConfig& config) {
  config.validate();
  if (labels.size() != x.rows()) {
    throw InvalidArgument("fit_classifier: label count differs from row count");
  }
  if (rows.size() < 2) throw InvalidArgument("fit_classifier: needs >= 2 rows");

  double positives = 0.0;
  for (auto r : rows) positives += labels[r];
  const double rate = positives / static_cast<double>(rows.size());
  if (positives == 0.0 || positives == static_cast<double>(rows.size())) {
    return ProbabilisticClassifier::constant(rate, x.cols());
  }

  ProbabilisticClassifier model;
  model.kind_ = config.kind;
  model.config_ = config;
  const FeatureBins bins(x, rows, config.base.n_candidate_thresholds);
  Rng rng(config.seed);
  std::vector<double> targets(x.rows(), 0.0);

  if (config.kind == EnsembleKind::bagged) {
    for (auto r : rows) targets[r] = labels[r];
    for (int m = 0; m < config.n_estimators; ++m) {
      const auto sample = bagging_sample(rows, config, rng);
      model.trees_.push_back(fit_regression_tree(bins, sample, targets, config.base));
    }
  } else {
    // Stagewise least-squares fits to the logistic-loss gradient.
    model.base_score_ = std::log(rate / (1.0 - rate));
    std::vector<double> score(x.rows(), model.base_score_);
    const auto sample_size = std::max<std::size_t>(
        1, static_cast<std::size_t>(
               std::llround(config.subsample * static_cast<double>(rows.size()))));
    std::vector<std::size_t> sample(rows.begin(), rows.end());
    for (int m = 0; m < config.n_estimators; ++m) {
      for (auto r : rows) targets[r] = labels[r] - sigmoid(score[r]);
      if (sample_size < rows.size()) {
        auto order = permutation(rows.size(), rng);
        sample.resize(sample_size);
        for (std::size_t i = 0; i < sample_size; ++i) sample[i] = rows[order[i]];
        std::sort(sample.begin(), sample.end());
      }
      RegressionTree tree = fit_regression_tree(bins, sample, targets, config.base);
      tree.scale_leaves(config.learning_rate);
      for (auto r : rows) score[r] += tree.predict(x.values.row(r));
      model.trees_.push_back(std::move(tree));
    }
  }
  model.importance_ = normalized_importance(model.trees_, x.cols());
  return model;
}

ProbabilisticClassifier fit_classifier(const FeatureMatrix& x,
                                       std::span<const int> labels,
                                       const EnsembleConfig& config) {
  const auto rows = all_rows(x.rows());
  return fit_classifier(x, labels, rows, config);
}

double TreeRegressor::predict(std::span<const double> x) const {
  double total = 0.0;
  for (const auto& tree : trees_) total += tree.predict(x);
  return total / static_cast<double>(trees_.size());
}

TreeRegressor fit_bagged_regressor(const FeatureMatrix& x,
                                   std::span<const double> targets,
                                   std::span<const std::size_t> rows,
                                   const EnsembleConfig& config) {
  config.validate();
  if (rows.empty()) throw InvalidArgument("fit_bagged_regressor: no rows");
  const FeatureBins bins(x, rows, config.base.n_candidate_thresholds);
  Rng rng(config.seed);
  TreeRegressor model;
  for (int m = 0; m < config.n_estimators; ++m) {
    const auto sample = bagging_sample(rows, config, rng);
    model.trees_.push_back(fit_regression_tree(bins, sample, targets, config.base));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Cross-validation

std::vector<std::size_t> stratified_folds(std::span<const int> labels,
                                          std::span<const std::size_t> rows,
                                          std::size_t folds,
                                          std::uint64_t seed) {
  std::vector<std::size_t> fold(rows.size(), 0);
  Rng rng(seed);
  std::size_t next = 0;
  for (int cls = 0; cls <= 1; ++cls) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (labels[rows[i]] == cls) members.push_back(i);
    }
    rng.shuffle(members);
    // Continue the round-robin across classes so fold sizes stay balanced.
    for (auto i : members) fold[i] = next++ % folds;
  }
  return fold;
}

CrossValidationResult cross_validate(const FeatureMatrix& x,
                                     std::span<const int> labels,
                                     std::span<const std::size_t> rows,
                                     std::span<const EnsembleConfig> grid,
                                     std::size_t folds, std::uint64_t seed) {
  if (grid.empty()) throw InvalidArgument("cross_validate: empty grid");
  if (folds < 2) throw InvalidArgument("cross_validate: k must be >= 2");
  if (rows.size() < folds) throw InvalidArgument("cross_validate: n < k");

  const auto fold = stratified_folds(labels, rows, folds, seed);
  CrossValidationResult result;
  result.mean_auc.assign(grid.size(), 0.0);
  if (grid.size() == 1) return result;

  for (std::size_t k = 0; k < folds; ++k) {
    std::vector<std::size_t> train, held;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      (fold[i] == k ? held : train).push_back(rows[i]);
    }
    std::vector<int> held_labels;
    for (auto r : held) held_labels.push_back(labels[r]);
    const bool both = std::count(held_labels.begin(), held_labels.end(), 1) > 0 &&
                      std::count(held_labels.begin(), held_labels.end(), 0) > 0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
      double auc = 0.5;
      if (both && train.size() >= 2) {
        const auto model = fit_classifier(x, labels, train, grid[g]);
        std::vector<double> scores;
        scores.reserve(held.size());
        for (auto r : held) scores.push_back(model.predict_proba(x.values.row(r)));
        auc = auc_roc(held_labels, scores);
      }
      result.mean_auc[g] += auc / static_cast<double>(folds);
    }
  }
  for (std::size_t g = 1; g < grid.size(); ++g) {
    if (result.mean_auc[g] > result.mean_auc[result.best_index]) result.best_index = g;
  }
  return result;
}

EnsembleConfig cross_validated_select(const FeatureMatrix& x,
                                      std::span<const int> labels,
                                      std::span<const EnsembleConfig> grid,
                                      std::size_t folds, std::uint64_t seed) {
  const auto rows = all_rows(x.rows());
  return grid[cross_validate(x, labels, rows, grid, folds, seed).best_index];
}

std::vector<EnsembleConfig> default_classifier_grid(std::uint64_t seed) {
  std::vector<EnsembleConfig> grid;
  for (int depth : {2, 3}) {
    for (int estimators : {50, 100}) {
      for (double rate : {0.1, 0.3}) {
        EnsembleConfig c;
        c.kind = EnsembleKind::boosted;
        c.n_estimators = estimators;
        c.learning_rate = rate;
        c.base.max_depth = depth;
        c.base.min_samples_leaf = 50;
        c.seed = seed;
        grid.push_back(c);
      }
    }
  }
  return grid;
}

double log_loss(std::span<const int> labels, std::span<const double> probs) {
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = std::clamp(probs[i], 1e-15, 1.0 - 1e-15);
    total -= labels[i] ? std::log(p) : std::log(1.0 - p);
  }
  return total / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json tree_json(const RegressionTree& tree) {
  json nodes = json::array();
  for (const auto& n : tree.nodes()) {
    json item = {{"value", n.value}, {"count", n.count}};
    if (!n.is_leaf()) {
      item["feature"] = n.feature;
      item["threshold"] = n.threshold;
      item["categorical"] = n.categorical;
      item["left"] = n.left;
      item["right"] = n.right;
      item["gain"] = n.gain;
    }
    nodes.push_back(std::move(item));
  }
  return nodes;
}

RegressionTree tree_from_json(const json& nodes) {
  std::vector<TreeNode> out;
  for (const auto& item : nodes) {
    TreeNode n;
    n.value = item.at("value").get<double>();
    n.count = item.at("count").get<std::size_t>();
    if (item.contains("feature")) {
      n.feature = item.at("feature").get<int>();
      n.threshold = item.at("threshold").get<double>();
      n.categorical = item.at("categorical").get<bool>();
      n.left = item.at("left").get<int>();
      n.right = item.at("right").get<int>();
      n.gain = item.at("gain").get<double>();
    }
    out.push_back(n);
  }
  return RegressionTree(std::move(out));
}

}  // namespace

std::string ProbabilisticClassifier::to_json() const {
  json doc;
  if (constant_) {
    doc = {{"kind", "constant"}, {"probability", *constant_}};
  } else {
    json trees = json::array();
    for (const auto& t : trees_) trees.push_back(tree_json(t));
    doc = {{"kind", std::string(to_string(kind_))},
           {"base_score", base_score_},
           {"config",
            {{"n_estimators", config_.n_estimators},
             {"learning_rate", config_.learning_rate},
             {"subsample", config_.subsample},
             {"max_depth", config_.base.max_depth},
             {"min_samples_leaf", config_.base.min_samples_leaf},
             {"n_candidate_thresholds", config_.base.n_candidate_thresholds},
             {"seed", config_.seed}}},
           {"trees", std::move(trees)}};
  }
  doc["importance"] = importance_;
  return doc.dump();
}

ProbabilisticClassifier ProbabilisticClassifier::from_json(std::string_view text) {
  try {
    const json doc = json::parse(text);
    ProbabilisticClassifier model;
    model.importance_ = doc.at("importance").get<std::vector<double>>();
    const auto kind = doc.at("kind").get<std::string>();
    if (kind == "constant") {
      model.constant_ = doc.at("probability").get<double>();
      return model;
    }
    model.kind_ = kind == "bagged" ? EnsembleKind::bagged : EnsembleKind::boosted;
    model.base_score_ = doc.at("base_score").get<double>();
    const json& c = doc.at("config");
    model.config_.kind = model.kind_;
    model.config_.n_estimators = c.at("n_estimators").get<int>();
    model.config_.learning_rate = c.at("learning_rate").get<double>();
    model.config_.subsample = c.at("subsample").get<double>();
    model.config_.base.max_depth = c.at("max_depth").get<int>();
    model.config_.base.min_samples_leaf = c.at("min_samples_leaf").get<std::size_t>();
    model.config_.base.n_candidate_thresholds =
        c.at("n_candidate_thresholds").get<std::size_t>();
    model.config_.seed = c.at("seed").get<std::uint64_t>();
    for (const auto& t : doc.at("trees")) model.trees_.push_back(tree_from_json(t));
    return model;
  } catch (const json::exception& e) {
    throw LoadError(std::string("classifier json: ") + e.what());
  }
}

}  // namespace rxtree
