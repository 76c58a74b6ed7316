// Acceptance suite: one PASS/FAIL line per headline criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "commands.hpp"
#include "rxtree/counterfactual.hpp"
#include "rxtree/eval.hpp"
#include "rxtree/policy_search.hpp"
#include "rxtree/random.hpp"
#include "rxtree/report.hpp"
#include "rxtree/synth.hpp"

using namespace rxtree;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(const char* name, double budget_seconds, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome r;
  try {
    r = body();
  } catch (const std::exception& e) {
    r = {false, std::string("exception: ") + e.what()};
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = secs <= budget_seconds;
  const bool ok = r.pass && in_time;
  if (!ok) ++failures;
  std::printf("%s  %-32s %s [%.1fs / %.0fs budget]\n", ok ? "PASS" : "FAIL", name,
              r.detail.c_str(), secs, budget_seconds);
  std::fflush(stdout);
}

std::string fmt(const char* pattern, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c, d);
  return buf;
}

// Factual and counterfactual collapse of the reward on random instances.
Outcome dr_identities() {
  Rng rng(11);
  const FeatureSchema schema({{"x", FeatureKind::numeric, {}, {}, {}, {}}});
  const TreatmentSet arms({"A", "B", "C"});
  std::size_t factual = 0, counterfactual = 0, instances = 1000;
  for (std::size_t k = 0; k < instances; ++k) {
    const std::size_t n = 1 + rng.index(20);
    std::vector<PatientRecord> records;
    Matrix yhat(n, 3), p(n, 3);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t t = rng.index(3);
      records.push_back({"r" + std::to_string(i), {rng.uniform()}, t, rng.bernoulli(0.4) ? 1 : 0});
      for (std::size_t a = 0; a < 3; ++a) {
        yhat(i, a) = rng.uniform();
        p(i, a) = a == t ? 1.0 : 0.0;
      }
    }
    const Cohort cohort(schema, arms, records);
    const RewardMatrix g = doubly_robust(cohort, {yhat}, {p, 0.0});
    bool f_ok = true, c_ok = true;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t a = 0; a < 3; ++a) {
        if (a == records[i].treatment) {
          f_ok = f_ok && g(i, a) == static_cast<double>(records[i].outcome);
        } else {
          c_ok = c_ok && g(i, a) == yhat(i, a);
        }
      }
    }
    factual += f_ok;
    counterfactual += c_ok;
  }
  return {factual == instances && counterfactual == instances,
          "factual " + std::to_string(factual) + "/1000, counterfactual " +
              std::to_string(counterfactual) + "/1000 exact"};
}

// Mean reward per arm against the cohort's mean true potential outcome, with
// one nuisance model true and the other a constant. Every seed must be within
// tolerance.
Outcome double_robustness() {
  const std::size_t seeds = 30, n = 20000;
  double bias[2][2] = {{0, 0}, {0, 0}};  // [case][arm], averaged over seeds
  double worst[2] = {0, 0};
  double naive = 0;
  for (std::size_t s = 0; s < seeds; ++s) {
    const SyntheticCohort data = generate(tavr_like_preset(n, 5000 + s));
    const Matrix& truth_p = data.truth.propensity;
    const Matrix& truth_y = data.truth.outcome_probability;
    const double rate = data.cohort.outcome_rate();
    const Matrix const_y(n, 2, rate);
    // Constant models in the learners' degenerate sense: the observed class rate.
    const std::vector<std::size_t> counts = data.cohort.treatment_counts();
    Matrix const_p(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t t = 0; t < 2; ++t) {
        const_p(i, t) = static_cast<double>(counts[t]) / static_cast<double>(n);
      }
    }
    const RewardMatrix cases[2] = {doubly_robust(data.cohort, {const_y}, {truth_p, 0.0}),
                                   doubly_robust(data.cohort, {truth_y}, {const_p, 0.0})};
    const RewardMatrix both_wrong = doubly_robust(data.cohort, {const_y}, {const_p, 0.0});
    for (std::size_t t = 0; t < 2; ++t) {
      double target = 0;
      std::vector<double> mean(2, 0.0);
      double wrong = 0;
      for (std::size_t i = 0; i < n; ++i) {
        target += truth_y(i, t);
        for (int c = 0; c < 2; ++c) mean[c] += cases[c](i, t);
        wrong += both_wrong(i, t);
      }
      for (int c = 0; c < 2; ++c) {
        const double d = (mean[c] - target) / static_cast<double>(n);
        bias[c][t] += d / static_cast<double>(seeds);
        worst[c] = std::max(worst[c], std::abs(d));
      }
      naive = std::max(naive, std::abs(wrong - target) / static_cast<double>(n));
    }
  }
  double max_bias = 0;
  for (auto& c : bias) for (double b : c) max_bias = std::max(max_bias, std::abs(b));
  return {std::max(worst[0], worst[1]) <= 0.01,
          fmt("per-seed max |mean dev| true p %.4f, true yhat %.4f; seed-averaged %.4f; "
              "both wrong %.4f",
              worst[0], worst[1], max_bias, naive)};
}

struct Instance {
  Cohort cohort;
  RewardMatrix reward;
};

Instance random_instance(Rng& rng, std::size_t n, std::size_t features) {
  std::vector<Feature> f;
  for (std::size_t j = 0; j < features; ++j) {
    f.push_back({"x" + std::to_string(j), FeatureKind::numeric, {}, {}, {}, {}});
  }
  const TreatmentSet arms({"A", "B"});
  std::vector<PatientRecord> records;
  std::vector<std::string> ids;
  Matrix g(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<FeatureValue> x;
    for (std::size_t j = 0; j < features; ++j) x.push_back(std::round(rng.uniform() * 1000) / 1000);
    ids.push_back("r" + std::to_string(i));
    records.push_back({ids.back(), x, rng.index(2), 0});
    g(i, 0) = rng.uniform();
    g(i, 1) = rng.uniform();
  }
  return {Cohort(FeatureSchema(f), arms, records),
          RewardMatrix(ids, arms, g, RewardProvenance::oracle)};
}

Outcome small_instance_optimality() {
  Rng rng(29);
  std::size_t depth1 = 0, depth2 = 0;
  double worst2 = 1.0;
  const std::size_t instances = 50, min_leaf = 10;
  for (std::size_t k = 0; k < instances; ++k) {
    const Instance instance = random_instance(rng, 200, 4);
    const Cohort& cohort = instance.cohort;
    const RewardMatrix* reward = &instance.reward;
    const double obj0 = policy_objective(exhaustive_policy_search(cohort, *reward, 0, min_leaf),
                                         cohort, *reward);
    OptConfig opt;
    opt.min_samples_leaf = min_leaf;
    opt.complexity_grid = {0.0};
    opt.seed = k;

    opt.max_depth = 1;
    const double cd1 = policy_objective(fit_policy_tree(cohort, *reward, opt).tree, cohort, *reward);
    const double ex1 = policy_objective(exhaustive_policy_search(cohort, *reward, 1, min_leaf),
                                        cohort, *reward);
    if (std::abs(cd1 - ex1) <= 1e-9 * std::max(1.0, std::abs(ex1))) ++depth1;

    opt.max_depth = 2;
    const double cd2 = policy_objective(fit_policy_tree(cohort, *reward, opt).tree, cohort, *reward);
    const double ex2 = policy_objective(exhaustive_policy_search(cohort, *reward, 2, min_leaf),
                                        cohort, *reward);
    const double gain = obj0 - ex2;
    const double ratio = gain > 0 ? (obj0 - cd2) / gain : 1.0;
    worst2 = std::min(worst2, ratio);
    if (ratio >= 0.99) ++depth2;
  }
  return {depth1 == instances && depth2 >= 45,
          "depth-1 exact " + std::to_string(depth1) + "/50, depth-2 >=99% " +
              std::to_string(depth2) + "/50" + fmt(" (worst ratio %.4f)", worst2)};
}

Outcome end_to_end_recovery() {
  const SyntheticCohort population = generate(tavr_like_preset(100000, 424242));
  const PolicyTree oracle = oracle_policy_tree(tavr_like_preset(200, 0));
  const double oracle_gain = true_improvement(oracle, population);
  std::size_t root_hits = 0;
  double ratio_sum = 0, worst = 1e9;
  const std::size_t seeds = 20;
  for (std::size_t s = 0; s < seeds; ++s) {
    const SyntheticCohort data = generate(tavr_like_preset(2000, s));
    PipelineConfig pc;
    pc.seed = s;
    const PipelineRun run = run_pipeline(data.cohort, pc);
    const PolicyTree& tree = run.policy.tree;
    const PolicyNode& root = tree.node(tree.root());
    if (!root.leaf && tree.schema()[root.feature].name == "conduction_defect") ++root_hits;
    const double ratio = true_improvement(tree, population) / oracle_gain;
    ratio_sum += ratio;
    worst = std::min(worst, ratio);
  }
  const double mean_ratio = ratio_sum / static_cast<double>(seeds);
  return {root_hits >= 16 && mean_ratio >= 0.5,
          "root=conduction_defect " + std::to_string(root_hits) +
              "/20, " + fmt("mean share of oracle improvement %.3f (worst %.3f, oracle %.2f%%)",
                            mean_ratio, worst, oracle_gain)};
}

// Oracle tree on ten n=20000 cohorts. Counterfactual value must be within 0.01
// of the population truth on every cohort; the node-analysis gap is judged by
// its mean absolute value, since single-cohort gaps carry outcome noise.
Outcome evaluation_agreement() {
  const SyntheticSpec shape = tavr_like_preset(200, 0);
  const PolicyTree tree = oracle_policy_tree(shape);
  const SyntheticCohort population = generate(tavr_like_preset(200000, 777));
  const double truth = true_policy_value(tree, population);
  const std::size_t seeds = 10;
  double worst_value = 0, mean_gap = 0, mean_abs_gap = 0, worst_gap = 0;
  std::size_t within = 0;
  for (std::size_t s = 0; s < seeds; ++s) {
    const SyntheticCohort data = generate(tavr_like_preset(20000, 9000 + s));
    const Cohort& cohort = data.complete;
    const EvaluationReport ce = counterfactual_evaluation(tree, cohort, oracle_rewards(data));
    const EvaluationReport na = node_analysis(tree, cohort);
    worst_value = std::max(worst_value, std::abs(ce.policy_rate - truth));
    const double gap = *na.percent_improvement - *ce.percent_improvement;
    mean_gap += gap / static_cast<double>(seeds);
    mean_abs_gap += std::abs(gap) / static_cast<double>(seeds);
    worst_gap = std::max(worst_gap, std::abs(gap));
    within += std::abs(gap) <= 1.5;
  }
  return {worst_value <= 0.01 && mean_abs_gap <= 1.5,
          fmt("CE vs truth worst %.4f; NA-CE improvement gap mean abs %.2fpp (signed %+.2f), worst %.2fpp",
              worst_value, mean_abs_gap, mean_gap, worst_gap) +
              " (" + std::to_string(within) + "/10 seeds within 1.5pp)"};
}

// Two-region generator with a 20% true improvement for the fixed stump.
SyntheticSpec calibration_spec(std::size_t n, std::uint64_t seed) {
  SyntheticSpec spec;
  FeatureGenerator g;
  g.feature = {"risk_group", FeatureKind::binary, {}, {}, {}, {}};
  g.distribution = Distribution::bernoulli;
  g.probability = 0.5;
  spec.features = {g};
  spec.treatments = {"A", "B"};
  const Condition low{"risk_group", Condition::Op::less, 0.5, {}};
  const Condition high{"risk_group", Condition::Op::at_least, 0.5, {}};
  spec.outcome = {{{{low}, 0.105}, {{high}, 0.25}}, {{{low}, 0.18}, {{high}, 0.16}}};
  spec.assignment = {{0.0, {{"risk_group", 0.8, 0.5}}}};
  spec.n = n;
  spec.seed = seed;
  return spec;
}

Outcome bootstrap_calibration() {
  const SyntheticSpec shape = calibration_spec(200, 0);
  const PolicyTree tree = oracle_policy_tree(shape);
  const SyntheticCohort population = generate(calibration_spec(400000, 31337));
  const double truth = true_improvement(tree, population);
  const std::size_t trials = 200;
  std::size_t covered = 0, covered_na = 0;
  for (std::size_t k = 0; k < trials; ++k) {
    const SyntheticCohort data = generate(calibration_spec(2000, 100 + k));
    const RewardMatrix reward = doubly_robust(data.cohort, {data.truth.outcome_probability},
                                              {data.truth.propensity, 0.0});
    BootstrapConfig config;
    config.iterations = 200;
    config.seed = k;
    const BootstrapResult b = bootstrap_improvement(tree, data.complete, reward, config);
    covered += *b.counterfactual.lower <= truth && truth <= *b.counterfactual.upper;
    covered_na += *b.node_analysis.lower <= truth && truth <= *b.node_analysis.upper;
  }
  const double rate = static_cast<double>(covered) / static_cast<double>(trials);
  return {rate >= 0.90 && rate <= 0.98,
          fmt("counterfactual coverage %.3f of 200 (node analysis %.3f), true improvement %.2f%%",
              rate, static_cast<double>(covered_na) / static_cast<double>(trials), truth)};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "rxtree_acceptance_determinism";
  fs::remove_all(root);
  std::ostringstream log;
  cli::SynthOptions synth;
  synth.n = 2000;
  synth.seed = 17;
  synth.out = root / "synth";
  cli::cmd_synth(synth, log);
  auto run_once = [&](const char* name) {
    cli::PipelineOptions p;
    p.input = {root / "synth" / "cohort.csv", root / "synth" / "schema.json"};
    p.out = root / name;
    p.config.seed = 17;
    p.bootstrap_iterations = 200;
    cli::cmd_pipeline(p, log);
  };
  run_once("a");
  run_once("b");
  std::size_t files = 0, identical = 0;
  for (const auto& entry : fs::directory_iterator(root / "a")) {
    ++files;
    const fs::path other = root / "b" / entry.path().filename();
    if (fs::exists(other) && read_text_file(entry.path()) == read_text_file(other)) ++identical;
  }
  fs::remove_all(root);
  return {files > 0 && identical == files,
          std::to_string(identical) + "/" + std::to_string(files) + " artifacts byte-identical"};
}

Outcome format_fixture() {
  struct Leaf {
    std::size_t s_total, s_events, e_total, e_events, prescription;
  };
  const Leaf leaves[] = {{40, 1, 22, 5, 0},  {70, 20, 23, 3, 1}, {66, 25, 15, 4, 1},
                         {67, 9, 29, 1, 1},  {32, 5, 19, 2, 1},  {391, 27, 116, 19, 0}};
  const FeatureSchema schema({{"node", FeatureKind::numeric, {}, {}, {}, {}}});
  const TreatmentSet arms({"Sapien", "Evolut"});
  std::vector<PatientRecord> records;
  for (std::size_t l = 0; l < 6; ++l) {
    auto add = [&](std::size_t arm, std::size_t total, std::size_t events) {
      for (std::size_t i = 0; i < total; ++i) {
        records.push_back({"n" + std::to_string(l) + "_" + std::to_string(arm) + "_" +
                               std::to_string(i),
                           {static_cast<double>(l)}, arm, i < events ? 1 : 0});
      }
    };
    add(0, leaves[l].s_total, leaves[l].s_events);
    add(1, leaves[l].e_total, leaves[l].e_events);
  }
  const Cohort cohort(schema, arms, records);
  // Splits 0..4 test node < l + 0.5; leaf of level l is node 5 + l.
  std::vector<PolicyNode> nodes;
  for (std::size_t l = 0; l < 5; ++l) {
    nodes.push_back(PolicyNode::make_numeric(0, static_cast<double>(l) + 0.5, 5 + l,
                                             l < 4 ? l + 1 : 10));
  }
  for (const Leaf& leaf : leaves) nodes.push_back(PolicyNode::make_leaf(leaf.prescription));
  const PolicyTree tree(schema, arms, nodes, 0);
  const EvaluationReport r = node_analysis(tree, cohort);
  const double h = 100 * r.historical_rate, p = 100 * r.policy_rate, imp = *r.percent_improvement;
  const bool ok = std::abs(std::round(h * 10) / 10 - 13.6) < 1e-9 &&
                  std::abs(p - 8.87) <= 0.01 && std::abs(imp - 34.74) <= 0.01;
  return {ok, fmt("historical %.2f%%, policy %.3f%%, improvement %.3f%% (n=%.0f)", h, p, imp,
                  static_cast<double>(r.n))};
}

}  // namespace

int main() {
  criterion("doubly-robust-identities", 1, dr_identities);
  criterion("double-robustness", 120, double_robustness);
  criterion("small-instance-optimality", 300, small_instance_optimality);
  criterion("end-to-end-recovery", 900, end_to_end_recovery);
  criterion("evaluation-agreement", 120, evaluation_agreement);
  criterion("bootstrap-calibration", 1200, bootstrap_calibration);
  criterion("determinism", 120, determinism);
  criterion("format-fixture", 1, format_fixture);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
