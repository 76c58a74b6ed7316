#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

#include <CLI11.hpp>
#include <json.hpp>

#include "artifacts.hpp"
#include "rxtree/error.hpp"
#include "rxtree/metrics.hpp"
#include "rxtree/random.hpp"
#include "rxtree/report.hpp"
#include "rxtree/synth.hpp"

namespace rxtree::cli {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

struct LoadedCohort {
  CohortConfig config;
  Cohort cohort;
};

LoadedCohort load_input(const CohortInput& input) {
  CohortConfig config = load_cohort_config(input.schema);
  if (!fs::exists(input.data)) throw LoadError("cohort file not found: " + input.data.string());
  Cohort cohort = load_cohort(input.data, config.schema, config.treatments);
  return {std::move(config), std::move(cohort)};
}

std::string optional_text(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

ordered_json optional_json(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

ordered_json grid_json(const std::vector<EnsembleConfig>& grid) {
  if (grid.empty()) return "default";
  ordered_json out = ordered_json::array();
  for (const auto& c : grid) {
    out.push_back({{"kind", std::string(to_string(c.kind))},
                   {"n_estimators", c.n_estimators},
                   {"learning_rate", c.learning_rate},
                   {"subsample", c.subsample},
                   {"max_depth", c.base.max_depth},
                   {"min_samples_leaf", c.base.min_samples_leaf}});
  }
  return out;
}

ordered_json pipeline_json(const PipelineConfig& c) {
  ordered_json cf;
  cf["outcome_mode"] = std::string(to_string(c.counterfactual.outcome_mode));
  cf["clip_floor"] = c.counterfactual.clip_floor;
  cf["cv_folds"] = c.counterfactual.cv_folds;
  cf["outcome_grid"] = grid_json(c.counterfactual.outcome_grid);
  cf["propensity_grid"] = grid_json(c.counterfactual.propensity_grid);
  ordered_json opt;
  opt["max_depth"] = c.opt.max_depth;
  opt["min_samples_leaf"] = c.opt.min_samples_leaf;
  opt["complexity_grid"] = c.opt.complexity_grid;
  opt["validation_fraction"] = c.opt.validation_fraction;
  opt["n_restarts"] = c.opt.n_restarts;
  opt["max_passes"] = c.opt.max_passes;
  ordered_json out;
  out["train_fraction"] = c.train_fraction;
  out["imputation"] = std::string(to_string(c.imputation));
  out["counterfactual"] = std::move(cf);
  out["opt"] = std::move(opt);
  return out;
}

ordered_json pipeline_seeds(std::uint64_t seed) {
  return {{"run", seed},
          {"split", derive_seed(seed, 1)},
          {"counterfactual_train", derive_seed(seed, 2)},
          {"counterfactual_test", derive_seed(seed, 3)},
          {"opt", derive_seed(seed, 4)}};
}

// Column scores for calibration and AUC: outcome estimates among recipients
// of arm t, or propensity of arm t against treatment indicators.
struct ScoredModel {
  std::string name;
  std::vector<int> labels;
  std::vector<double> scores;
  std::optional<double> cv_auc;
};

std::vector<ScoredModel> scored_models(const PipelineRun& run) {
  const Cohort& test = run.test;
  const TreatmentSet& arms = test.treatments();
  const OutcomePredictions yhat = predict_outcomes(run.train_fit.outcomes.models, test);
  const PropensityEstimates prop = predict_propensity(run.train_fit.propensity, test);
  std::vector<ScoredModel> out;
  for (std::size_t t = 0; t < arms.size(); ++t) {
    ScoredModel m{"outcome:" + arms.name(t), {}, {}, std::nullopt};
    for (std::size_t i = 0; i < test.size(); ++i) {
      if (test[i].treatment != t) continue;
      m.labels.push_back(test[i].outcome);
      m.scores.push_back(yhat.values(i, t));
    }
    const auto& models = run.train_fit.outcomes.models;
    const std::size_t k = models.mode == OutcomeMode::per_treatment ? t : 0;
    if (k < models.cv_auc.size() && !models.cv_auc[k].empty()) {
      m.cv_auc = *std::max_element(models.cv_auc[k].begin(), models.cv_auc[k].end());
    }
    out.push_back(std::move(m));
  }
  for (std::size_t t = 0; t < arms.size(); ++t) {
    ScoredModel m{"propensity:" + arms.name(t), {}, {}, std::nullopt};
    for (std::size_t i = 0; i < test.size(); ++i) {
      m.labels.push_back(test[i].treatment == t ? 1 : 0);
      m.scores.push_back(prop.values(i, t));
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::optional<double> safe_auc(const ScoredModel& m) {
  const bool pos = std::find(m.labels.begin(), m.labels.end(), 1) != m.labels.end();
  const bool neg = std::find(m.labels.begin(), m.labels.end(), 0) != m.labels.end();
  if (!pos || !neg) return std::nullopt;
  return auc_roc(m.labels, m.scores);
}

std::string calibration_csv(const std::vector<ScoredModel>& models, std::size_t buckets) {
  CsvWriter writer({"model", "bucket", "mean_score", "observed_rate", "count"});
  for (const auto& m : models) {
    if (m.labels.empty()) continue;
    const auto curve = calibration_curve(m.labels, m.scores, buckets, 0.0);
    for (std::size_t b = 0; b < curve.size(); ++b) {
      writer.add({m.name, std::to_string(b), format_double(curve[b].mean_score),
                  format_double(curve[b].observed_rate), std::to_string(curve[b].count)});
    }
  }
  return writer.str();
}

std::string auc_csv(const std::vector<ScoredModel>& models) {
  CsvWriter writer({"model", "cv_auc", "test_auc", "test_n"});
  for (const auto& m : models) {
    writer.add({m.name, optional_text(m.cv_auc), optional_text(safe_auc(m)),
                std::to_string(m.labels.size())});
  }
  return writer.str();
}

std::string importance_csv(const CounterfactualFit& fit, const FeatureSchema& schema,
                           const TreatmentSet& arms) {
  CsvWriter writer({"model", "feature", "importance"});
  auto emit = [&](const std::string& name, const ProbabilisticClassifier& model) {
    const auto& imp = model.feature_importance();
    for (std::size_t j = 0; j < imp.size(); ++j) {
      const std::string feature = j < schema.size() ? schema[j].name : std::string("treatment");
      writer.add({name, feature, format_double(imp[j])});
    }
  };
  const auto& outcomes = fit.outcomes.models;
  if (outcomes.mode == OutcomeMode::per_treatment) {
    for (std::size_t t = 0; t < outcomes.models.size(); ++t) {
      emit("outcome:" + arms.name(t), outcomes.models[t]);
    }
  } else if (!outcomes.models.empty()) {
    emit("outcome:single", outcomes.models.front());
  }
  const auto& prop = fit.propensity.models;
  if (prop.size() == 1 && arms.size() == 2) {
    emit("propensity:" + arms.name(1), prop.front());
  } else {
    for (std::size_t t = 0; t < prop.size(); ++t) emit("propensity:" + arms.name(t), prop[t]);
  }
  return writer.str();
}

std::string complexity_csv(const PolicyFit& fit) {
  CsvWriter writer(
      {"lambda", "train_objective", "validation_objective", "internal_nodes", "best_restart", "chosen"});
  for (const auto& g : fit.grid) {
    writer.add({format_double(g.lambda), format_double(g.train_objective),
                optional_text(g.validation_objective), std::to_string(g.internal_nodes),
                std::to_string(g.best_restart), g.lambda == fit.lambda ? "1" : "0"});
  }
  return writer.str();
}

std::string bootstrap_summary_csv(const BootstrapResult& result, double level) {
  CsvWriter writer({"method", "draws", "excluded", "mean", "lower", "upper", "level"});
  auto add = [&](const char* name, const BootstrapSummary& s) {
    writer.add({name, std::to_string(s.draws.size()), std::to_string(s.excluded),
                optional_text(s.mean), optional_text(s.lower), optional_text(s.upper),
                format_double(level)});
  };
  add("node_analysis", result.node_analysis);
  add("counterfactual", result.counterfactual);
  return writer.str();
}

std::string split_rows_csv(const std::vector<SplitReport>& splits) {
  CsvWriter writer({"split", "seed", "lambda", "internal_nodes", "depth", "train_node_analysis",
                    "train_counterfactual", "test_node_analysis", "test_counterfactual",
                    "structure"});
  for (const auto& s : splits) {
    writer.add({std::to_string(s.split), std::to_string(s.seed), format_double(s.lambda),
                std::to_string(s.tree.internal_count()), std::to_string(s.tree.depth()),
                optional_text(s.train_node.percent_improvement),
                optional_text(s.train_counterfactual.percent_improvement),
                optional_text(s.test_node.percent_improvement),
                optional_text(s.test_counterfactual.percent_improvement),
                s.tree.structure_key()});
  }
  return writer.str();
}

void note(std::ostream& log, bool verbose, const std::string& text) {
  if (verbose) log << text << "\n";
}

std::string level_list(const Feature& f, const std::vector<std::size_t>& levels) {
  std::string out = "{";
  for (std::size_t k = 0; k < levels.size(); ++k) {
    if (k) out += ", ";
    out += f.levels[levels[k]];
  }
  return out + "}";
}

void render(const PolicyTree& tree, std::size_t id, int depth, std::string& out) {
  const PolicyNode& n = tree.node(id);
  const std::string indent(static_cast<std::size_t>(depth) * 2, ' ');
  if (n.leaf) {
    out += indent + "[" + std::to_string(id) + "] -> " + tree.treatments().name(n.prescription) +
           " (n=" + std::to_string(n.n_train) + ")\n";
    return;
  }
  const Feature& f = tree.schema()[n.feature];
  const std::string test = n.categorical ? f.name + " in " + level_list(f, n.levels)
                                         : f.name + " < " + format_double(n.threshold);
  out += indent + "[" + std::to_string(id) + "] " + test + "\n";
  render(tree, n.left, depth + 1, out);
  out += indent + "[" + std::to_string(id) + "] else\n";
  render(tree, n.right, depth + 1, out);
}

}  // namespace

std::string tree_text(const PolicyTree& tree) {
  std::string out;
  render(tree, tree.root(), 0, out);
  return out;
}

// ---------------------------------------------------------------------------
// pipeline

void cmd_pipeline(const PipelineOptions& options, std::ostream& log) {
  BootstrapConfig boot{options.bootstrap_iterations, options.bootstrap_fraction,
                       options.bootstrap_with_replacement, derive_seed(options.config.seed, 5)};
  boot.validate();
  options.config.counterfactual.validate();
  options.config.opt.validate();
  if (options.calibration_buckets < 1) throw InvalidArgument("calibration buckets must be >= 1");

  LoadedCohort in = load_input(options.input);
  ArtifactDir dir(options.out);
  note(log, options.verbose, "fitting pipeline on " + std::to_string(in.cohort.size()) + " records");
  const PipelineRun run = run_pipeline(in.cohort, options.config);
  for (const auto& w : run.policy.warnings) log << "warning: " << w << "\n";

  const TreatmentSet& arms = in.config.treatments;
  dir.write("tree.json", export_tree(run.policy.tree));
  dir.write("tree.txt", tree_text(run.policy.tree));
  dir.write("complexity.csv", complexity_csv(run.policy));

  dir.write("node_analysis_train.txt", node_analysis_table(run.train_node, arms, "Train"));
  dir.write("node_analysis_train.csv", node_analysis_csv(run.train_node, arms));
  dir.write("node_analysis_test.txt", node_analysis_table(run.test_node, arms, "Test"));
  dir.write("node_analysis_test.csv", node_analysis_csv(run.test_node, arms));

  const auto rec_train = leaf_rate_reconciliation(run.train_fit.outcomes.predictions.values,
                                                  run.policy.tree, run.train);
  const auto rec_test = leaf_rate_reconciliation(run.test_fit.outcomes.predictions.values,
                                                 run.policy.tree, run.test);
  dir.write("reconciliation_train.txt", reconciliation_table(rec_train, arms, "Train"));
  dir.write("reconciliation_train.csv", reconciliation_csv(rec_train, arms));
  dir.write("reconciliation_test.txt", reconciliation_table(rec_test, arms, "Test"));
  dir.write("reconciliation_test.csv", reconciliation_csv(rec_test, arms));

  const std::vector<LabeledReport> reports{{"Train", &run.train_node},
                                           {"Train", &run.train_counterfactual},
                                           {"Test", &run.test_node},
                                           {"Test", &run.test_counterfactual}};
  dir.write("improvement.txt", improvement_table(reports));
  dir.write("improvement.csv", improvement_csv(reports));

  note(log, options.verbose, "bootstrapping test improvement");
  const BootstrapResult b = bootstrap_improvement(run.policy.tree, run.test, run.test_fit.rewards, boot);
  dir.write("bootstrap_draws.csv", bootstrap_csv(b));
  dir.write("bootstrap_summary.csv", bootstrap_summary_csv(b, 0.95));

  const auto scored = scored_models(run);
  dir.write("calibration.csv", calibration_csv(scored, options.calibration_buckets));
  dir.write("auc.csv", auc_csv(scored));
  dir.write("feature_importance.csv", importance_csv(run.train_fit, in.config.schema, arms));
  dir.write("rewards_train.csv", reward_csv(run.train_fit.rewards));
  dir.write("rewards_test.csv", reward_csv(run.test_fit.rewards));

  ordered_json m = manifest_header("pipeline");
  m["inputs"] = {{"data", options.input.data.generic_string()},
                 {"schema", options.input.schema.generic_string()},
                 {"records", in.cohort.size()}};
  m["config"] = pipeline_json(options.config);
  m["config"]["bootstrap"] = {{"iterations", boot.iterations},
                              {"sample_fraction", boot.sample_fraction},
                              {"with_replacement", boot.with_replacement}};
  m["config"]["calibration_buckets"] = options.calibration_buckets;
  m["seeds"] = pipeline_seeds(options.config.seed);
  m["seeds"]["bootstrap"] = boot.seed;
  m["result"] = {{"lambda", run.policy.lambda},
                 {"internal_nodes", run.policy.tree.internal_count()},
                 {"train_rows", run.train.size()},
                 {"test_rows", run.test.size()},
                 {"warnings", run.policy.warnings}};
  dir.commit(std::move(m));
  note(log, options.verbose, "wrote " + options.out.string());
}

// ---------------------------------------------------------------------------
// select

void cmd_select(const SelectOptions& options, std::ostream& log) {
  options.config.pipeline.counterfactual.validate();
  options.config.pipeline.opt.validate();
  if (options.config.n_splits < 1) throw InvalidArgument("--splits must be >= 1");
  if (options.config.top_k < 1) throw InvalidArgument("--top-k must be >= 1");

  LoadedCohort in = load_input(options.input);
  ArtifactDir dir(options.out);
  note(log, options.verbose, "running " + std::to_string(options.config.n_splits) + " splits");
  const SelectionResult result = model_selection(in.cohort, options.config);
  const TreatmentSet& arms = in.config.treatments;

  dir.write("splits.csv", split_rows_csv(result.splits));
  CsvWriter ranking({"rank", "candidate", "splits", "best_split", "lambda", "internal_nodes",
                     "train_node_analysis", "train_counterfactual", "test_node_analysis",
                     "test_counterfactual"});
  ordered_json seeds = ordered_json::array();
  for (const auto& s : result.splits) seeds.push_back({{"split", s.split}, {"seed", s.seed}});

  for (std::size_t r = 0; r < result.candidates.size(); ++r) {
    const Candidate& c = result.candidates[r];
    const SplitReport& best = c.reports.front();
    std::string name = std::to_string(r + 1);
    name = "candidate_" + std::string(name.size() < 2 ? 2 - name.size() : 0, '0') + name;
    const fs::path sub = fs::path("candidates") / name;
    dir.write(sub / "tree.json", export_tree(best.tree));
    dir.write(sub / "tree.txt", tree_text(best.tree));
    dir.write(sub / "splits.csv", split_rows_csv(c.reports));
    dir.write(sub / "node_analysis_train.txt", node_analysis_table(best.train_node, arms, "Train"));
    dir.write(sub / "node_analysis_test.txt", node_analysis_table(best.test_node, arms, "Test"));
    const std::vector<LabeledReport> reports{{"Train", &best.train_node},
                                             {"Train", &best.train_counterfactual},
                                             {"Test", &best.test_node},
                                             {"Test", &best.test_counterfactual}};
    dir.write(sub / "improvement.csv", improvement_csv(reports));
    ranking.add({std::to_string(r + 1), name, std::to_string(c.reports.size()),
                 std::to_string(best.split), format_double(best.lambda),
                 std::to_string(best.tree.internal_count()),
                 optional_text(best.train_node.percent_improvement),
                 optional_text(best.train_counterfactual.percent_improvement),
                 optional_text(best.test_node.percent_improvement),
                 optional_text(best.test_counterfactual.percent_improvement)});
  }
  dir.write("ranking.csv", ranking.str());

  ordered_json m = manifest_header("select");
  m["inputs"] = {{"data", options.input.data.generic_string()},
                 {"schema", options.input.schema.generic_string()},
                 {"records", in.cohort.size()}};
  m["config"] = pipeline_json(options.config.pipeline);
  m["config"]["n_splits"] = options.config.n_splits;
  m["config"]["top_k"] = options.config.top_k;
  m["seeds"] = {{"base", options.config.pipeline.seed}, {"splits", seeds}};
  m["result"] = {{"candidates", result.candidates.size()}};
  dir.commit(std::move(m));
  note(log, options.verbose, "wrote " + options.out.string());
}

// ---------------------------------------------------------------------------
// synth

void cmd_synth(const SynthOptions& options, std::ostream& log) {
  SyntheticSpec spec;
  if (options.spec) {
    spec = parse_spec_json(read_text_file(*options.spec));
    spec.n = options.n;
    spec.seed = options.seed;
  } else if (options.preset == "tavr_like") {
    spec = tavr_like_preset(options.n, options.seed);
  } else {
    throw InvalidArgument("unknown preset '" + options.preset + "' (available: tavr_like)");
  }
  spec.validate();
  ArtifactDir dir(options.out);
  const SyntheticCohort data = generate(spec);
  dir.write("cohort.csv", cohort_csv(data.cohort));
  dir.write("complete.csv", cohort_csv(data.complete));
  dir.write("schema.json", cohort_config_json({spec.schema(), spec.treatment_set()}));
  dir.write("spec.json", spec_json(spec));
  dir.write("truth.json", truth_json(data));
  const PolicyTree oracle = oracle_policy_tree(spec).with_leaf_stats(data.complete);
  dir.write("oracle_tree.json", export_tree(oracle));
  dir.write("oracle_tree.txt", tree_text(oracle));

  ordered_json m = manifest_header("synth");
  m["config"] = {{"source", options.spec ? options.spec->generic_string() : options.preset},
                 {"n", spec.n}};
  m["seeds"] = {{"generate", spec.seed}};
  m["result"] = {{"outcome_rate", data.cohort.outcome_rate()},
                 {"historical_value", data.truth.historical_value},
                 {"optimal_value", data.truth.optimal_value},
                 {"missing_cells", data.cohort.missing_count()}};
  dir.commit(std::move(m));
  log << "wrote " << spec.n << " records to " << options.out.string() << "\n";
}

// ---------------------------------------------------------------------------
// evaluate

void cmd_evaluate(const EvaluateOptions& options, std::ostream& log) {
  const PolicyTree imported = import_tree(read_text_file(options.tree));
  LoadedCohort in = load_input(options.input);
  if (imported.treatments() != in.config.treatments) {
    throw TreeFormatError("tree treatments do not match the cohort's treatment set");
  }
  const PolicyTree tree = imported.bind(in.config.schema);
  Cohort cohort = in.cohort.missing_count() > 0
                      ? impute(in.cohort, options.imputation, in.cohort)
                      : in.cohort;
  if (in.cohort.missing_count() > 0) {
    log << "imputed " << in.cohort.missing_count() << " missing cells ("
        << to_string(options.imputation) << ")\n";
  }

  ArtifactDir dir(options.out);
  const TreatmentSet& arms = in.config.treatments;
  const EvaluationReport na = node_analysis(tree, cohort);
  dir.write("node_analysis.txt", node_analysis_table(na, arms, "Cohort"));
  dir.write("node_analysis.csv", node_analysis_csv(na, arms));
  std::vector<LabeledReport> reports{{"Cohort", &na}};
  std::optional<EvaluationReport> ce;
  std::optional<RewardMatrix> rewards;
  if (options.rewards) {
    rewards = load_reward_csv(*options.rewards, arms, RewardProvenance::doubly_robust);
    rewards->check_aligned(cohort);
    ce = counterfactual_evaluation(tree, cohort, *rewards);
    reports.push_back({"Cohort", &*ce});
  }
  dir.write("improvement.txt", improvement_table(reports));
  dir.write("improvement.csv", improvement_csv(reports));

  ordered_json m = manifest_header("evaluate");
  m["inputs"] = {{"tree", options.tree.generic_string()},
                 {"data", options.input.data.generic_string()},
                 {"schema", options.input.schema.generic_string()},
                 {"rewards", options.rewards ? ordered_json(options.rewards->generic_string())
                                             : ordered_json(nullptr)},
                 {"records", cohort.size()}};
  m["config"] = {{"imputation", std::string(to_string(options.imputation))},
                 {"bootstrap_iterations", options.bootstrap_iterations}};
  m["seeds"] = {{"run", options.seed}};
  if (options.bootstrap_iterations > 0) {
    if (!rewards) throw InvalidArgument("--bootstrap requires --rewards");
    BootstrapConfig boot;
    boot.iterations = options.bootstrap_iterations;
    boot.seed = derive_seed(options.seed, 5);
    const BootstrapResult b = bootstrap_improvement(tree, cohort, *rewards, boot);
    dir.write("bootstrap_draws.csv", bootstrap_csv(b));
    dir.write("bootstrap_summary.csv", bootstrap_summary_csv(b, 0.95));
    m["seeds"]["bootstrap"] = boot.seed;
  }
  dir.commit(std::move(m));
  log << "evaluated " << cohort.size() << " records\n";
}

// ---------------------------------------------------------------------------
// export-calculator

namespace {

struct FeatureRange {
  double low = 0.0;
  double high = 1.0;
};

FeatureRange sampling_range(const PolicyTree& tree, std::size_t j) {
  const Feature& f = tree.schema()[j];
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& n : tree.nodes()) {
    if (n.leaf || n.feature != j || n.categorical) continue;
    lo = std::min(lo, n.threshold);
    hi = std::max(hi, n.threshold);
  }
  if (!std::isfinite(lo)) lo = hi = 0.0;
  const double pad = std::max(1.0, 0.5 * (hi - lo));
  FeatureRange r{f.min.value_or(lo - pad), f.max.value_or(hi + pad)};
  if (r.high < r.low) std::swap(r.low, r.high);
  return r;
}

ordered_json input_value(const Feature& f, double v) {
  if (f.kind == FeatureKind::categorical) return f.levels[static_cast<std::size_t>(v)];
  return v;
}

ordered_json parity_case(const PolicyTree& tree, const std::vector<double>& x,
                         const std::string& kind) {
  ordered_json inputs = ordered_json::object();
  for (std::size_t j = 0; j < tree.schema().size(); ++j) {
    inputs[tree.schema()[j].name] = input_value(tree.schema()[j], x[j]);
  }
  ordered_json path = ordered_json::array();
  std::size_t id = tree.root();
  while (!tree.node(id).leaf) {
    path.push_back(id);
    const PolicyNode& n = tree.node(id);
    id = tree.goes_left(n, x[n.feature]) ? n.left : n.right;
  }
  path.push_back(id);
  const Prescription p = prescribe(tree, std::span<const double>(x));
  ordered_json stats = ordered_json::array();
  for (std::size_t t = 0; t < p.stats.size(); ++t) {
    stats.push_back({{"treatment", tree.treatments().name(t)},
                     {"count", p.stats[t].count},
                     {"historical_rate", optional_json(p.stats[t].historical_rate)},
                     {"mean_estimated", optional_json(p.stats[t].mean_estimated)}});
  }
  return {{"case", kind},
          {"inputs", std::move(inputs)},
          {"leaf", p.leaf},
          {"path", std::move(path)},
          {"prescription", tree.treatments().name(p.treatment)},
          {"stats", std::move(stats)}};
}

}  // namespace

std::string parity_json(const PolicyTree& tree, std::size_t samples, std::uint64_t seed) {
  const FeatureSchema& schema = tree.schema();
  Rng rng(seed);
  std::vector<FeatureRange> ranges;
  for (std::size_t j = 0; j < schema.size(); ++j) ranges.push_back(sampling_range(tree, j));
  auto draw = [&] {
    std::vector<double> x(schema.size());
    for (std::size_t j = 0; j < schema.size(); ++j) {
      const Feature& f = schema[j];
      switch (f.kind) {
        case FeatureKind::binary:
          x[j] = rng.bernoulli(0.5) ? 1.0 : 0.0;
          break;
        case FeatureKind::categorical:
          x[j] = static_cast<double>(rng.index(f.levels.size()));
          break;
        case FeatureKind::numeric: {
          const double u = ranges[j].low + (ranges[j].high - ranges[j].low) * rng.uniform();
          x[j] = std::round(u * 100.0) / 100.0;
          break;
        }
      }
    }
    return x;
  };

  ordered_json cases = ordered_json::array();
  for (std::size_t s = 0; s < samples; ++s) cases.push_back(parity_case(tree, draw(), "random"));
  for (const auto& n : tree.nodes()) {
    if (n.leaf) continue;
    const Feature& f = schema[n.feature];
    if (n.categorical) {
      for (std::size_t l = 0; l < f.levels.size(); ++l) {
        auto x = draw();
        x[n.feature] = static_cast<double>(l);
        cases.push_back(parity_case(tree, x, "boundary"));
      }
      continue;
    }
    if (f.kind == FeatureKind::binary) {
      for (double v : {0.0, 1.0}) {
        auto x = draw();
        x[n.feature] = v;
        cases.push_back(parity_case(tree, x, "boundary"));
      }
      continue;
    }
    auto at = draw();
    at[n.feature] = n.threshold;
    cases.push_back(parity_case(tree, at, "boundary"));
    auto below = draw();
    below[n.feature] = std::nextafter(n.threshold, -std::numeric_limits<double>::infinity());
    cases.push_back(parity_case(tree, below, "boundary"));
  }

  ordered_json doc;
  doc["format"] = "rxtree-calculator-parity";
  doc["version"] = 1;
  doc["tree_version"] = kTreeFormatVersion;
  doc["seed"] = seed;
  doc["cases"] = std::move(cases);
  return doc.dump(2) + "\n";
}

void cmd_export_calculator(const ExportOptions& options, std::ostream& log) {
  const std::string document = read_text_file(options.tree);
  const PolicyTree tree = import_tree(document);
  if (options.bundle && !fs::is_directory(*options.bundle)) {
    throw LoadError("calculator bundle directory not found: " + options.bundle->string());
  }
  ArtifactDir dir(options.out);
  dir.write("tree.json", document);
  dir.write("parity.json", parity_json(tree, options.parity_samples, options.seed));
  std::vector<std::string> bundled;
  if (options.bundle) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(*options.bundle)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      const fs::path rel = fs::relative(file, *options.bundle);
      if (rel == "tree.json" || rel == "parity.json" || rel == "manifest.json") continue;
      dir.copy_file(file, rel);
      bundled.push_back(rel.generic_string());
    }
  } else {
    log << "warning: no --bundle given; exporting tree and parity file only\n";
  }
  ordered_json m = manifest_header("export-calculator");
  m["inputs"] = {{"tree", options.tree.generic_string()},
                 {"bundle", options.bundle ? ordered_json(options.bundle->generic_string())
                                           : ordered_json(nullptr)}};
  m["config"] = {{"parity_samples", options.parity_samples}, {"bundle_files", bundled}};
  m["seeds"] = {{"parity", options.seed}};
  dir.commit(std::move(m));
  log << "exported calculator to " << options.out.string() << "\n";
}

// ---------------------------------------------------------------------------
// argument parsing

namespace {

void add_cohort_flags(CLI::App* cmd, CohortInput& input) {
  cmd->add_option("--data", input.data, "Cohort CSV")->required();
  cmd->add_option("--schema", input.schema, "Schema and treatment sidecar JSON")->required();
}

void add_pipeline_flags(CLI::App* cmd, PipelineConfig& c, std::string& imputation,
                        std::string& outcome_mode) {
  cmd->add_option("--train-fraction", c.train_fraction, "Fraction of records used for training")
      ->capture_default_str();
  cmd->add_option("--imputation", imputation, "mean | conditional_mean | forest")
      ->capture_default_str();
  cmd->add_option("--outcome-mode", outcome_mode, "per_treatment | single_with_treatment_feature")
      ->capture_default_str();
  auto& cf = c.counterfactual;
  cmd->add_option("--clip-floor", cf.clip_floor, "Minimum propensity per treatment")
      ->capture_default_str();
  cmd->add_option("--cv-folds", cf.cv_folds, "Cross-validation folds for learner selection")
      ->capture_default_str();
  auto& opt = c.opt;
  cmd->add_option("--max-depth", opt.max_depth, "Maximum policy tree depth")->capture_default_str();
  cmd->add_option("--min-leaf", opt.min_samples_leaf, "Minimum records per leaf")
      ->capture_default_str();
  cmd->add_option("--complexity-grid", opt.complexity_grid,
                  "Complexity penalties, comma separated, ascending, including 0")
      ->delimiter(',')
      ->capture_default_str();
  cmd->add_option("--validation-fraction", opt.validation_fraction,
                  "Share of training rows withheld to choose the penalty")
      ->capture_default_str();
  cmd->add_option("--restarts", opt.n_restarts, "Initial trees per penalty")->capture_default_str();
  cmd->add_option("--max-passes", opt.max_passes, "Coordinate descent pass limit")
      ->capture_default_str();
}

void apply_names(PipelineConfig& c, const std::string& imputation, const std::string& mode) {
  c.imputation = parse_imputation_method(imputation);
  c.counterfactual.outcome_mode = parse_outcome_mode(mode);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Prescriptive policy trees from observational cohorts", "rxtree"};
  app.set_version_flag("--version", std::string(RXTREE_VERSION));
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Seed for every random choice")->capture_default_str();

  PipelineOptions pipeline;
  std::string p_imputation = "mean", p_mode = "per_treatment";
  auto* p = app.add_subcommand("pipeline", "Fit rewards and a policy tree, then evaluate it");
  add_cohort_flags(p, pipeline.input);
  p->add_option("--out", pipeline.out, "Output directory")->required();
  add_pipeline_flags(p, pipeline.config, p_imputation, p_mode);
  p->add_option("--bootstrap", pipeline.bootstrap_iterations, "Bootstrap iterations")
      ->capture_default_str();
  p->add_option("--bootstrap-fraction", pipeline.bootstrap_fraction, "Resample size as a fraction")
      ->capture_default_str();
  p->add_flag("!--bootstrap-without-replacement", pipeline.bootstrap_with_replacement,
              "Subsample instead of resampling with replacement");
  p->add_option("--calibration-buckets", pipeline.calibration_buckets, "Calibration bins")
      ->capture_default_str();
  p->add_flag("-v,--verbose", pipeline.verbose, "Progress messages");

  SelectOptions select;
  std::string s_imputation = "mean", s_mode = "per_treatment";
  auto* s = app.add_subcommand("select", "Repeat the pipeline over splits and rank the trees");
  add_cohort_flags(s, select.input);
  s->add_option("--out", select.out, "Output directory")->required();
  add_pipeline_flags(s, select.config.pipeline, s_imputation, s_mode);
  s->add_option("--splits", select.config.n_splits, "Number of train/test splits")
      ->capture_default_str();
  s->add_option("--top-k", select.config.top_k, "Candidates kept after ranking")
      ->capture_default_str();
  s->add_flag("-v,--verbose", select.verbose, "Progress messages");

  SynthOptions synth;
  std::string spec_path;
  auto* y = app.add_subcommand("synth", "Generate a synthetic cohort with known truth");
  y->add_option("--preset", synth.preset, "Built-in generator")->capture_default_str();
  y->add_option("--spec", spec_path, "Generator spec JSON (overrides --preset)");
  y->add_option("--n", synth.n, "Number of records")->capture_default_str();
  y->add_option("--out", synth.out, "Output directory")->required();

  EvaluateOptions evaluate;
  std::string e_rewards, e_imputation = "mean";
  auto* e = app.add_subcommand("evaluate", "Evaluate a saved tree on a cohort");
  e->add_option("--tree", evaluate.tree, "Tree JSON")->required();
  add_cohort_flags(e, evaluate.input);
  e->add_option("--rewards", e_rewards, "Reward matrix CSV for counterfactual evaluation");
  e->add_option("--imputation", e_imputation, "Imputation for missing cells")->capture_default_str();
  e->add_option("--bootstrap", evaluate.bootstrap_iterations, "Bootstrap iterations (needs --rewards)")
      ->capture_default_str();
  e->add_option("--out", evaluate.out, "Output directory")->required();

  ExportOptions exporter;
  std::string x_bundle;
  auto* x = app.add_subcommand("export-calculator", "Package a tree for the calculator");
  x->add_option("--tree", exporter.tree, "Tree JSON")->required();
  x->add_option("--bundle", x_bundle, "Directory of static calculator files to copy");
  x->add_option("--parity-samples", exporter.parity_samples, "Random golden cases")
      ->capture_default_str();
  x->add_option("--out", exporter.out, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*p) {
      pipeline.config.seed = seed;
      apply_names(pipeline.config, p_imputation, p_mode);
      cmd_pipeline(pipeline, err);
    } else if (*s) {
      select.config.pipeline.seed = seed;
      apply_names(select.config.pipeline, s_imputation, s_mode);
      cmd_select(select, err);
    } else if (*y) {
      synth.seed = seed;
      if (!spec_path.empty()) synth.spec = spec_path;
      cmd_synth(synth, err);
    } else if (*e) {
      evaluate.seed = seed;
      evaluate.imputation = parse_imputation_method(e_imputation);
      if (!e_rewards.empty()) evaluate.rewards = e_rewards;
      cmd_evaluate(evaluate, err);
    } else if (*x) {
      exporter.seed = seed;
      if (!x_bundle.empty()) exporter.bundle = x_bundle;
      cmd_export_calculator(exporter, err);
    }
  } catch (const Error& ex) {
    err << "error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    err << "internal error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace rxtree::cli
