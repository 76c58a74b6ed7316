#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rxtree/counterfactual.hpp"
#include "rxtree/data.hpp"
#include "rxtree/policy.hpp"
#include "rxtree/policy_search.hpp"
#include "rxtree/reward.hpp"

namespace rxtree {

enum class EvaluationMethod { node_analysis, counterfactual };

std::string_view to_string(EvaluationMethod method);

struct NodeAnalysisRow {
  std::size_t leaf = 0;
  std::size_t prescription = 0;
  std::size_t members = 0;
  std::vector<std::size_t> counts;            // recipients per treatment
  std::vector<std::optional<double>> rates;   // empty when the count is 0
  double policy_rate = 0.0;
  // The prescribed arm had no recipients; policy_rate is the leaf's rate.
  bool fallback = false;
};

struct EvaluationReport {
  EvaluationMethod method = EvaluationMethod::node_analysis;
  std::size_t n = 0;
  double historical_rate = 0.0;
  double policy_rate = 0.0;
  std::optional<double> percent_improvement;  // empty when historical_rate == 0
  std::vector<NodeAnalysisRow> rows;          // node_analysis only
};

// 100 * (historical - policy) / historical, empty when historical is 0.
std::optional<double> percent_improvement(double historical, double policy);

EvaluationReport node_analysis(const PolicyTree& tree, const Cohort& cohort);
EvaluationReport counterfactual_evaluation(const PolicyTree& tree, const Cohort& cohort,
                                           const RewardMatrix& reward);

struct BootstrapConfig {
  std::size_t iterations = 1000;
  double sample_fraction = 0.95;
  bool with_replacement = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct BootstrapSummary {
  std::vector<std::optional<double>> draws;  // percent improvement per draw
  std::size_t excluded = 0;                  // draws with no historical events
  std::optional<double> mean;
  std::optional<double> lower;  // 2.5th percentile
  std::optional<double> upper;  // 97.5th percentile
};

struct BootstrapResult {
  BootstrapSummary node_analysis;
  BootstrapSummary counterfactual;
};

BootstrapResult bootstrap_improvement(const PolicyTree& tree, const Cohort& cohort,
                                      const RewardMatrix& reward, const BootstrapConfig& config);

// Linear-interpolation percentile of `values` (q in [0, 1]).
double percentile(std::vector<double> values, double q);

// Fraction of records on which both trees prescribe the same treatment.
double concordance(const PolicyTree& a, const PolicyTree& b, const Cohort& cohort);

struct SubgroupSpec {
  std::string feature;
  // Interior cut points, strictly ascending: bins (-inf, e0), [e0, e1), ...,
  // [ek, +inf). No edges gives one bin.
  std::vector<double> edges;
};

struct SubgroupResult {
  std::string label;
  std::size_t members = 0;
  std::optional<EvaluationReport> report;  // empty for an empty bin
};

std::vector<SubgroupResult> subgroup_evaluation(const PolicyTree& tree, const Cohort& cohort,
                                                const RewardMatrix& reward,
                                                const SubgroupSpec& grouping);

// One pass of the training pipeline: split, impute with train statistics,
// fit train and test rewards independently, fit the policy tree on train.
struct PipelineConfig {
  double train_fraction = 0.5;
  ImputationMethod imputation = ImputationMethod::mean;
  CounterfactualConfig counterfactual;
  OptConfig opt;
  std::uint64_t seed = 0;
};

struct PipelineRun {
  std::uint64_t seed = 0;
  CohortSplit split;
  Cohort train;  // imputed
  Cohort test;   // imputed with train statistics
  CounterfactualFit train_fit;
  CounterfactualFit test_fit;
  PolicyFit policy;
  EvaluationReport train_node;
  EvaluationReport train_counterfactual;
  EvaluationReport test_node;
  EvaluationReport test_counterfactual;
};

PipelineRun run_pipeline(const Cohort& cohort, const PipelineConfig& config);

struct SelectionConfig {
  std::size_t n_splits = 20;
  std::size_t top_k = 30;
  PipelineConfig pipeline;  // pipeline.seed is the base seed
};

struct SplitReport {
  std::size_t split = 0;
  std::uint64_t seed = 0;
  PolicyTree tree;
  double lambda = 0.0;
  EvaluationReport train_node;
  EvaluationReport train_counterfactual;
  EvaluationReport test_node;
  EvaluationReport test_counterfactual;
};

struct Candidate {
  std::string key;  // PolicyTree::structure_key
  PolicyTree tree;
  std::vector<SplitReport> reports;  // every split producing this structure
};

struct SelectionResult {
  std::vector<SplitReport> splits;      // in split order
  std::vector<Candidate> candidates;    // unique, best test improvement first
};

// Splits are ranked by test node-analysis improvement (undefined last, ties
// by split index); structurally identical trees collapse into the candidate
// of their best split; the first top_k candidates are kept.
SelectionResult model_selection(const Cohort& cohort, const SelectionConfig& config);

// Report layouts. `label` names the cohort (e.g. "Train").
std::string node_analysis_table(const EvaluationReport& report, const TreatmentSet& treatments,
                                std::string_view label);
std::string node_analysis_csv(const EvaluationReport& report, const TreatmentSet& treatments);
std::string reconciliation_table(const std::vector<LeafReconciliation>& rows,
                                 const TreatmentSet& treatments, std::string_view label);
std::string reconciliation_csv(const std::vector<LeafReconciliation>& rows,
                               const TreatmentSet& treatments);

struct LabeledReport {
  std::string label;
  const EvaluationReport* report = nullptr;
};

std::string improvement_table(const std::vector<LabeledReport>& reports);
std::string improvement_csv(const std::vector<LabeledReport>& reports);
std::string bootstrap_csv(const BootstrapResult& result);
std::string subgroup_csv(const std::vector<SubgroupResult>& groups);

}  // namespace rxtree
