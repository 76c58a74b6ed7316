#include <gtest/gtest.h>

#include <numeric>

#include "helpers.hpp"
#include "rxtree/error.hpp"
#include "rxtree/eval.hpp"
#include "rxtree/synth.hpp"

namespace rxtree {
namespace {

using testing::make_cohort;
using testing::reward_for;
using testing::Row;

// Rows carrying treatment t with `events` of `count` outcomes set; x records
// the treatment index so trees can split on who received what.
void add_arm(std::vector<Row>& rows, std::size_t t, std::size_t count, std::size_t events) {
  for (std::size_t i = 0; i < count; ++i) {
    rows.push_back({{static_cast<double>(t)}, t, i < events ? 1 : 0});
  }
}

Cohort arms_cohort(const std::vector<Row>& rows) {
  return make_cohort(FeatureSchema({testing::numeric("x")}), TreatmentSet({"Sapien", "Evolut"}),
                     rows);
}

std::size_t line_count_of(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

PolicyTree constant(const Cohort& c, std::size_t t) {
  return PolicyTree::constant(c.schema(), c.treatments(), t);
}

// Prescribes to each record the treatment it actually received.
PolicyTree identity_tree(const Cohort& c) {
  return PolicyTree(c.schema(), c.treatments(),
                    {PolicyNode::make_numeric(0, 0.5, 1, 2), PolicyNode::make_leaf(0),
                     PolicyNode::make_leaf(1)},
                    0);
}

TEST(PercentImprovement, Formula) {
  EXPECT_NEAR(*percent_improvement(0.10, 0.08), 20.0, 1e-12);
  EXPECT_NEAR(*percent_improvement(0.10, 0.12), -20.0, 1e-12);
  EXPECT_FALSE(percent_improvement(0.0, 0.0).has_value());
}

TEST(NodeAnalysis, SingleLeafUsesPrescribedArmRate) {
  std::vector<Row> rows;
  add_arm(rows, 0, 40, 1);
  add_arm(rows, 1, 22, 5);
  const Cohort c = arms_cohort(rows);
  const EvaluationReport r = node_analysis(constant(c, 0), c);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].members, 62u);
  EXPECT_EQ(r.rows[0].counts, (std::vector<std::size_t>{40, 22}));
  EXPECT_DOUBLE_EQ(*r.rows[0].rates[0], 0.025);
  EXPECT_NEAR(*r.rows[0].rates[1], 5.0 / 22.0, 1e-15);
  EXPECT_FALSE(r.rows[0].fallback);
  EXPECT_DOUBLE_EQ(r.policy_rate, 0.025);
  EXPECT_NEAR(r.historical_rate, 6.0 / 62.0, 1e-15);
  EXPECT_NEAR(*r.percent_improvement, 100.0 * (6.0 - 1.55) / 6.0, 1e-9);
}

TEST(NodeAnalysis, EmptyPrescribedArmFallsBackToLeafRate) {
  std::vector<Row> rows;
  add_arm(rows, 0, 10, 3);
  const Cohort c = arms_cohort(rows);
  const EvaluationReport r = node_analysis(constant(c, 1), c);
  EXPECT_TRUE(r.rows[0].fallback);
  EXPECT_FALSE(r.rows[0].rates[1].has_value());
  EXPECT_DOUBLE_EQ(r.rows[0].policy_rate, 0.3);
  EXPECT_NEAR(*r.percent_improvement, 0.0, 1e-12);
  const std::string table = node_analysis_table(r, c.treatments(), "Train");
  EXPECT_NE(table.find("30.00*"), std::string::npos) << table;
  EXPECT_NE(table.find("* prescribed treatment has no recipients"), std::string::npos);
  EXPECT_NE(table.find("NA"), std::string::npos);
}

TEST(NodeAnalysis, MembersWeightLeafRates) {
  // Leaf x < 0.5 holds the Sapien rows, prescribes Evolut: fallback to 4/20.
  // Leaf x >= 0.5 holds the Evolut rows, prescribes Sapien: fallback to 3/30.
  std::vector<Row> rows;
  add_arm(rows, 0, 20, 4);
  add_arm(rows, 1, 30, 3);
  const Cohort c = arms_cohort(rows);
  const PolicyTree swapped(c.schema(), c.treatments(),
                           {PolicyNode::make_numeric(0, 0.5, 1, 2), PolicyNode::make_leaf(1),
                            PolicyNode::make_leaf(0)},
                           0);
  const EvaluationReport r = node_analysis(swapped, c);
  EXPECT_NEAR(r.policy_rate, (20 * 0.2 + 30 * 0.1) / 50.0, 1e-15);
  EXPECT_EQ(r.rows.size(), 2u);
  EXPECT_EQ(r.rows[0].leaf, 1u);
  EXPECT_EQ(r.rows[1].leaf, 2u);
}

TEST(NodeAnalysis, IdentityPolicyHasZeroImprovement) {
  Rng rng(1);
  std::vector<Row> rows;
  add_arm(rows, 0, 137, 19);
  add_arm(rows, 1, 88, 31);
  const Cohort c = arms_cohort(rows);
  const EvaluationReport r = node_analysis(identity_tree(c), c);
  EXPECT_NEAR(*r.percent_improvement, 0.0, 1e-12);
  EXPECT_THROW(node_analysis(identity_tree(c), c.subset(std::vector<std::size_t>{})),
               InvalidArgument);
}

TEST(NodeAnalysis, MajorityArmLeavesReproduceRecipientRates) {
  Rng rng(20);
  for (int k = 0; k < 20; ++k) {
    auto inst = testing::random_instance(rng, 300, 2);
    const Cohort& c = inst.cohort;
    const PolicyTree shape(c.schema(), c.treatments(),
                           {PolicyNode::make_numeric(0, rng.uniform(), 1, 2),
                            PolicyNode::make_leaf(0),
                            PolicyNode::make_numeric(1, rng.uniform(), 3, 4),
                            PolicyNode::make_leaf(0), PolicyNode::make_leaf(0)},
                           0);
    // Prescribe each leaf's most-received arm, then compare rates by hand.
    const auto leaf_of = route(shape, c);
    std::vector<PolicyNode> nodes = shape.nodes();
    for (std::size_t leaf : shape.leaves()) {
      std::size_t counts[2] = {0, 0};
      for (std::size_t i = 0; i < c.size(); ++i) counts[c[i].treatment] += leaf_of[i] == leaf;
      nodes[leaf].prescription = counts[1] > counts[0] ? 1 : 0;
    }
    const PolicyTree tree(c.schema(), c.treatments(), nodes, 0);
    for (const NodeAnalysisRow& row : node_analysis(tree, c).rows) {
      if (row.members == 0) continue;
      std::size_t recipients = 0, events = 0;
      for (std::size_t i = 0; i < c.size(); ++i) {
        if (leaf_of[i] != row.leaf || c[i].treatment != row.prescription) continue;
        ++recipients;
        events += c[i].outcome;
      }
      ASSERT_GT(recipients, 0u);
      EXPECT_FALSE(row.fallback);
      EXPECT_EQ(row.policy_rate, static_cast<double>(events) / static_cast<double>(recipients));
    }
  }
}

TEST(Counterfactual, FactualRewardsCollapseToHistorical) {
  std::vector<Row> rows;
  add_arm(rows, 0, 50, 7);
  add_arm(rows, 1, 70, 20);
  const Cohort c = arms_cohort(rows);
  Rng rng(2);
  Matrix g(c.size(), 2);
  for (std::size_t i = 0; i < c.size(); ++i) {
    g(i, c[i].treatment) = c[i].outcome;
    g(i, 1 - c[i].treatment) = rng.uniform();
  }
  const EvaluationReport r = counterfactual_evaluation(identity_tree(c), c, reward_for(c, g));
  EXPECT_EQ(r.method, EvaluationMethod::counterfactual);
  EXPECT_NEAR(r.policy_rate, r.historical_rate, 1e-15);
  EXPECT_NEAR(*r.percent_improvement, 0.0, 1e-12);
}

TEST(Counterfactual, OracleRewardsGiveTruePolicyValue) {
  SyntheticSpec spec = tavr_like_preset(3000, 3);
  const SyntheticCohort data = generate(spec);
  const PolicyTree tree = oracle_policy_tree(spec).bind(data.cohort.schema());
  const EvaluationReport r =
      counterfactual_evaluation(tree, data.complete, oracle_rewards(data));
  const auto chosen = prescriptions(tree, data.complete);
  double sum = 0.0;
  for (std::size_t i = 0; i < chosen.size(); ++i) sum += data.truth.outcome_probability(i, chosen[i]);
  EXPECT_NEAR(r.policy_rate, sum / 3000.0, 1e-12);
  EXPECT_NEAR(r.policy_rate, true_policy_value(tree, data), 1e-12);
}

TEST(Counterfactual, MisalignedRewardRejected) {
  const Cohort c = testing::line_cohort({0, 1}, testing::two_arms());
  const Cohort other = testing::line_cohort({0}, testing::two_arms());
  EXPECT_THROW(counterfactual_evaluation(constant(c, 0), c, reward_for(other, Matrix(1, 2))),
               InvalidArgument);
}

struct BootstrapFixture {
  Cohort cohort;
  RewardMatrix reward;
  PolicyTree tree;
};

BootstrapFixture bootstrap_fixture() {
  SyntheticSpec spec = tavr_like_preset(800, 4);
  SyntheticCohort data = generate(spec);
  PolicyTree tree = oracle_policy_tree(spec).bind(data.complete.schema());
  RewardMatrix reward = oracle_rewards(data);
  return {data.complete, reward, tree};
}

TEST(Bootstrap, SingleFullDrawWithoutReplacementIsThePointEstimate) {
  const auto f = bootstrap_fixture();
  const BootstrapResult b = bootstrap_improvement(f.tree, f.cohort, f.reward, {1, 1.0, false, 9});
  ASSERT_EQ(b.node_analysis.draws.size(), 1u);
  EXPECT_NEAR(*b.node_analysis.draws[0], *node_analysis(f.tree, f.cohort).percent_improvement, 1e-9);
  EXPECT_NEAR(*b.counterfactual.draws[0],
              *counterfactual_evaluation(f.tree, f.cohort, f.reward).percent_improvement, 1e-9);
  EXPECT_EQ(*b.counterfactual.lower, *b.counterfactual.upper);
}

TEST(Bootstrap, SeedDeterminesDraws) {
  const auto f = bootstrap_fixture();
  const BootstrapConfig config{50, 0.95, true, 10};
  const BootstrapResult a = bootstrap_improvement(f.tree, f.cohort, f.reward, config);
  const BootstrapResult b = bootstrap_improvement(f.tree, f.cohort, f.reward, config);
  EXPECT_EQ(a.counterfactual.draws, b.counterfactual.draws);
  EXPECT_EQ(a.node_analysis.draws, b.node_analysis.draws);
  BootstrapConfig other = config;
  other.seed = 11;
  EXPECT_NE(bootstrap_improvement(f.tree, f.cohort, f.reward, other).counterfactual.draws,
            a.counterfactual.draws);
}

TEST(Bootstrap, IntervalBracketsTheDrawsMean) {
  const auto f = bootstrap_fixture();
  const BootstrapResult b = bootstrap_improvement(f.tree, f.cohort, f.reward, {200, 0.95, true, 12});
  for (const BootstrapSummary* s : {&b.node_analysis, &b.counterfactual}) {
    EXPECT_EQ(s->excluded, 0u);
    EXPECT_LE(*s->lower, *s->mean);
    EXPECT_LE(*s->mean, *s->upper);
    EXPECT_LT(*s->lower, *s->upper);
  }
}

TEST(Bootstrap, DrawsWithoutEventsAreExcluded) {
  std::vector<Row> rows;
  add_arm(rows, 0, 30, 0);
  add_arm(rows, 1, 30, 0);
  const Cohort c = arms_cohort(rows);
  const RewardMatrix g = reward_for(c, Matrix(60, 2, 0.1));
  const BootstrapResult b = bootstrap_improvement(constant(c, 0), c, g, {20, 0.5, true, 13});
  EXPECT_EQ(b.counterfactual.excluded, 20u);
  EXPECT_FALSE(b.counterfactual.mean.has_value());
  EXPECT_FALSE(b.node_analysis.lower.has_value());
  const std::string csv = bootstrap_csv(b);
  EXPECT_NE(csv.find("\n0,,\n"), std::string::npos) << csv;
}

TEST(Bootstrap, ConfigValidation) {
  EXPECT_THROW((BootstrapConfig{0, 0.95, true, 0}).validate(), InvalidArgument);
  EXPECT_THROW((BootstrapConfig{10, 0.0, true, 0}).validate(), InvalidArgument);
  EXPECT_THROW((BootstrapConfig{10, 1.5, true, 0}).validate(), InvalidArgument);
  EXPECT_NO_THROW((BootstrapConfig{10, 1.0, false, 0}).validate());
}

TEST(Percentile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(percentile({4, 1, 3, 2}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(percentile({4, 1, 3, 2}, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(percentile({4, 1, 3, 2}, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(percentile({0, 10}, 0.025), 0.25);
  EXPECT_DOUBLE_EQ(percentile({7}, 0.975), 7.0);
  EXPECT_THROW(percentile({}, 0.5), InvalidArgument);
}

PolicyTree random_stump(const Cohort& c, Rng& rng) {
  const std::size_t f = rng.index(c.schema().size());
  const std::size_t l = rng.index(2);
  return PolicyTree(c.schema(), c.treatments(),
                    {PolicyNode::make_numeric(f, rng.uniform(), 1, 2), PolicyNode::make_leaf(l),
                     PolicyNode::make_leaf(rng.index(2))},
                    0);
}

TEST(Concordance, Properties) {
  Rng rng(14);
  auto inst = testing::random_instance(rng, 200, 3);
  const Cohort& c = inst.cohort;
  auto perm = permutation(c.size(), rng);
  const Cohort shuffled = c.subset(perm);
  for (int k = 0; k < 30; ++k) {
    const PolicyTree a = random_stump(c, rng);
    const PolicyTree b = random_stump(c, rng);
    EXPECT_EQ(concordance(a, a, c), 1.0);
    const double ab = concordance(a, b, c);
    EXPECT_EQ(ab, concordance(b, a, c));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
    EXPECT_DOUBLE_EQ(ab, concordance(a, b, shuffled));
  }
  EXPECT_EQ(concordance(constant(c, 0), constant(c, 1), c), 0.0);
  const Cohort three = testing::line_cohort({0}, TreatmentSet({"A", "B", "C"}));
  EXPECT_THROW(concordance(constant(c, 0), constant(three, 0), c), InvalidArgument);
}

TEST(Subgroups, NoEdgesIsTheWholeCohort) {
  Rng rng(15);
  auto inst = testing::random_instance(rng, 150, 2);
  const PolicyTree t = random_stump(inst.cohort, rng);
  const auto groups = subgroup_evaluation(t, inst.cohort, inst.reward, {"f0", {}});
  ASSERT_EQ(groups.size(), 1u);
  EXPECT_EQ(groups[0].label, "all");
  EXPECT_EQ(groups[0].members, 150u);
  const EvaluationReport whole = counterfactual_evaluation(t, inst.cohort, inst.reward);
  EXPECT_DOUBLE_EQ(groups[0].report->policy_rate, whole.policy_rate);
  EXPECT_DOUBLE_EQ(groups[0].report->historical_rate, whole.historical_rate);
}

TEST(Subgroups, BinsPartitionAndEmptyBinsAreFlagged) {
  const Cohort c = testing::line_cohort({0.1, 0.5, 0.5, 0.9}, testing::two_arms());
  const RewardMatrix g = reward_for(c, Matrix(4, 2, 0.2));
  const auto groups = subgroup_evaluation(constant(c, 0), c, g, {"x", {0.5, 2.0}});
  ASSERT_EQ(groups.size(), 3u);
  EXPECT_EQ(groups[0].label, "< 0.5");
  EXPECT_EQ(groups[0].members, 1u);
  EXPECT_EQ(groups[1].label, "[0.5, 2)");
  EXPECT_EQ(groups[1].members, 3u);  // edge value belongs to the upper bin
  EXPECT_EQ(groups[2].members, 0u);
  EXPECT_FALSE(groups[2].report.has_value());
  EXPECT_THROW(subgroup_evaluation(constant(c, 0), c, g, {"age", {}}), InvalidArgument);
  EXPECT_THROW(subgroup_evaluation(constant(c, 0), c, g, {"x", {1.0, 1.0}}), InvalidArgument);
}

TEST(Subgroups, FiveAgeBands) {
  const SyntheticCohort data = generate(tavr_like_preset(1000, 19));
  const PolicyTree t = oracle_policy_tree(tavr_like_preset(1000, 19));
  const auto groups = subgroup_evaluation(t, data.complete, oracle_rewards(data),
                                          {"age", {70.0, 78.0, 84.0, 90.0}});
  ASSERT_EQ(groups.size(), 5u);
  std::size_t total = 0;
  for (const auto& g : groups) total += g.members;
  EXPECT_EQ(total, 1000u);
  EXPECT_EQ(groups[4].label, ">= 90");
  const std::string csv = subgroup_csv(groups);
  EXPECT_EQ(line_count_of(csv), 6u);
}

PipelineConfig small_pipeline() {
  PipelineConfig p;
  EnsembleConfig e;
  e.n_estimators = 20;
  e.base.max_depth = 2;
  e.base.min_samples_leaf = 20;
  p.counterfactual.outcome_grid = {e};
  p.counterfactual.propensity_grid = {e};
  p.opt.max_depth = 3;
  p.opt.min_samples_leaf = 30;
  p.opt.n_restarts = 2;
  p.opt.complexity_grid = {0.0, 4.0};
  return p;
}

TEST(Pipeline, ReportsCoverTheirSplits) {
  const SyntheticCohort data = generate(tavr_like_preset(500, 16));
  PipelineConfig config = small_pipeline();
  config.seed = 5;
  const PipelineRun run = run_pipeline(data.cohort, config);
  EXPECT_EQ(run.train.size(), 250u);
  EXPECT_EQ(run.test.size(), 250u);
  EXPECT_EQ(run.train_node.n, 250u);
  EXPECT_EQ(run.test_counterfactual.n, 250u);
  EXPECT_EQ(run.train_fit.rewards.rows(), 250u);
  const PipelineRun again = run_pipeline(data.cohort, config);
  EXPECT_EQ(export_tree(run.policy.tree), export_tree(again.policy.tree));
  EXPECT_EQ(run.test_fit.rewards, again.test_fit.rewards);
}

TEST(ModelSelection, SingleSplit) {
  const SyntheticCohort data = generate(tavr_like_preset(400, 17));
  SelectionConfig config{1, 5, small_pipeline()};
  const SelectionResult r = model_selection(data.cohort, config);
  ASSERT_EQ(r.splits.size(), 1u);
  ASSERT_EQ(r.candidates.size(), 1u);
  EXPECT_EQ(r.candidates[0].reports.size(), 1u);
  EXPECT_EQ(r.splits[0].seed, derive_seed(0, 1000));
}

TEST(ModelSelection, CandidatesUniqueRankedAndTruncated) {
  const SyntheticCohort data = generate(tavr_like_preset(400, 18));
  SelectionConfig config{4, 30, small_pipeline()};
  const SelectionResult r = model_selection(data.cohort, config);
  ASSERT_EQ(r.splits.size(), 4u);
  std::size_t reports = 0;
  for (std::size_t k = 0; k < r.candidates.size(); ++k) {
    const Candidate& c = r.candidates[k];
    reports += c.reports.size();
    EXPECT_EQ(c.key, c.tree.structure_key());
    for (const auto& rep : c.reports) EXPECT_EQ(rep.tree.structure_key(), c.key);
    for (std::size_t j = k + 1; j < r.candidates.size(); ++j) EXPECT_NE(c.key, r.candidates[j].key);
    if (k > 0) {
      const auto prev = r.candidates[k - 1].reports[0].test_node.percent_improvement;
      const auto cur = c.reports[0].test_node.percent_improvement;
      if (prev && cur) EXPECT_GE(*prev, *cur);
    }
  }
  EXPECT_EQ(reports, 4u);
  config.top_k = 1;
  EXPECT_EQ(model_selection(data.cohort, config).candidates.size(), 1u);
  config.n_splits = 0;
  EXPECT_THROW(model_selection(data.cohort, config), InvalidArgument);
}

TEST(Reports, CsvLayouts) {
  std::vector<Row> rows;
  add_arm(rows, 0, 40, 1);
  add_arm(rows, 1, 22, 5);
  const Cohort c = arms_cohort(rows);
  const EvaluationReport r = node_analysis(constant(c, 0), c);
  const std::string csv = node_analysis_csv(r, c.treatments());
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "node,prescription,members,count_Sapien,rate_Sapien,count_Evolut,rate_Evolut,"
            "policy_rate,fallback");
  const std::string table = improvement_table({{"Train", &r}});
  EXPECT_NE(table.find("74.17"), std::string::npos) << table;
}

}  // namespace
}  // namespace rxtree
