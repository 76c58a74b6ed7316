#include "rxtree/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rxtree/error.hpp"
#include "rxtree/random.hpp"
#include "rxtree/report.hpp"

namespace rxtree {

std::string_view to_string(EvaluationMethod method) {
  return method == EvaluationMethod::node_analysis ? "node_analysis" : "counterfactual";
}

std::optional<double> percent_improvement(double historical, double policy) {
  if (!(historical > 0.0)) return std::nullopt;
  return 100.0 * (historical - policy) / historical;
}

namespace {

struct Routed {
  std::vector<std::size_t> leaves;        // leaf ids, depth-first
  std::vector<std::size_t> prescription;  // per slot
  std::vector<std::size_t> slot;          // per record
  std::vector<std::size_t> treatment;     // per record, prescribed
};

Routed route_slots(const PolicyTree& tree, const Cohort& cohort) {
  Routed out;
  out.leaves = tree.leaves();
  std::vector<std::size_t> slot_of(tree.nodes().size(), 0);
  for (std::size_t s = 0; s < out.leaves.size(); ++s) {
    slot_of[out.leaves[s]] = s;
    out.prescription.push_back(tree.node(out.leaves[s]).prescription);
  }
  const auto leaf = route(tree, cohort);
  for (auto l : leaf) {
    out.slot.push_back(slot_of[l]);
    out.treatment.push_back(tree.node(l).prescription);
  }
  return out;
}

// Node analysis over a multiset of record indices.
EvaluationReport node_core(const Routed& routed, const Cohort& cohort,
                           std::span<const std::size_t> rows) {
  const std::size_t k = cohort.treatments().size();
  const std::size_t m = routed.leaves.size();
  std::vector<std::size_t> members(m, 0);
  std::vector<std::size_t> counts(m * k, 0);
  std::vector<std::size_t> events(m * k, 0);
  std::size_t total_events = 0;
  for (auto i : rows) {
    const auto& rec = cohort[i];
    const std::size_t s = routed.slot[i];
    ++members[s];
    ++counts[s * k + rec.treatment];
    events[s * k + rec.treatment] += static_cast<std::size_t>(rec.outcome);
    total_events += static_cast<std::size_t>(rec.outcome);
  }
  EvaluationReport report;
  report.method = EvaluationMethod::node_analysis;
  report.n = rows.size();
  const double n = static_cast<double>(rows.size());
  report.historical_rate = static_cast<double>(total_events) / n;
  double policy_events = 0.0;
  for (std::size_t s = 0; s < m; ++s) {
    NodeAnalysisRow row;
    row.leaf = routed.leaves[s];
    row.prescription = routed.prescription[s];
    row.members = members[s];
    std::size_t leaf_events = 0;
    for (std::size_t t = 0; t < k; ++t) {
      const std::size_t c = counts[s * k + t];
      row.counts.push_back(c);
      leaf_events += events[s * k + t];
      row.rates.push_back(c > 0 ? std::optional<double>(static_cast<double>(events[s * k + t]) /
                                                        static_cast<double>(c))
                                : std::nullopt);
    }
    if (row.rates[row.prescription]) {
      row.policy_rate = *row.rates[row.prescription];
    } else {
      row.fallback = members[s] > 0;
      row.policy_rate = members[s] > 0 ? static_cast<double>(leaf_events) /
                                             static_cast<double>(members[s])
                                       : 0.0;
    }
    policy_events += row.policy_rate * static_cast<double>(members[s]);
    report.rows.push_back(std::move(row));
  }
  report.policy_rate = policy_events / n;
  report.percent_improvement = percent_improvement(report.historical_rate, report.policy_rate);
  return report;
}

EvaluationReport counterfactual_core(const Routed& routed, const Cohort& cohort,
                                     const RewardMatrix& reward,
                                     std::span<const std::size_t> rows) {
  double policy = 0.0;
  std::size_t events = 0;
  for (auto i : rows) {
    policy += reward(i, routed.treatment[i]);
    events += static_cast<std::size_t>(cohort[i].outcome);
  }
  EvaluationReport report;
  report.method = EvaluationMethod::counterfactual;
  report.n = rows.size();
  const double n = static_cast<double>(rows.size());
  report.historical_rate = static_cast<double>(events) / n;
  report.policy_rate = policy / n;
  report.percent_improvement = percent_improvement(report.historical_rate, report.policy_rate);
  return report;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

BootstrapSummary summarize(std::vector<std::optional<double>> draws) {
  BootstrapSummary s;
  std::vector<double> defined;
  for (const auto& d : draws) {
    if (d) {
      defined.push_back(*d);
    } else {
      ++s.excluded;
    }
  }
  s.draws = std::move(draws);
  if (!defined.empty()) {
    s.mean = std::accumulate(defined.begin(), defined.end(), 0.0) /
             static_cast<double>(defined.size());
    s.lower = percentile(defined, 0.025);
    s.upper = percentile(defined, 0.975);
  }
  return s;
}

}  // namespace

EvaluationReport node_analysis(const PolicyTree& tree, const Cohort& cohort) {
  if (cohort.size() == 0) throw InvalidArgument("node_analysis: empty cohort");
  const Routed routed = route_slots(tree, cohort);
  return node_core(routed, cohort, all_rows(cohort.size()));
}

EvaluationReport counterfactual_evaluation(const PolicyTree& tree, const Cohort& cohort,
                                           const RewardMatrix& reward) {
  reward.check_aligned(cohort);
  const Routed routed = route_slots(tree, cohort);
  return counterfactual_core(routed, cohort, reward, all_rows(cohort.size()));
}

void BootstrapConfig::validate() const {
  if (iterations < 1) throw InvalidArgument("bootstrap: iterations must be >= 1");
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0)) {
    throw InvalidArgument("bootstrap: sample_fraction must lie in (0, 1]");
  }
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw InvalidArgument("percentile: no values");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

BootstrapResult bootstrap_improvement(const PolicyTree& tree, const Cohort& cohort,
                                      const RewardMatrix& reward, const BootstrapConfig& config) {
  config.validate();
  if (cohort.size() == 0) throw InvalidArgument("bootstrap: empty cohort");
  reward.check_aligned(cohort);
  const Routed routed = route_slots(tree, cohort);
  const std::size_t n = cohort.size();
  const auto m = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(config.sample_fraction * static_cast<double>(n))));
  Rng rng(config.seed);
  std::vector<std::optional<double>> node_draws;
  std::vector<std::optional<double>> cf_draws;
  std::vector<std::size_t> rows(m);
  for (std::size_t b = 0; b < config.iterations; ++b) {
    if (config.with_replacement) {
      for (auto& r : rows) r = rng.index(n);
    } else {
      const auto perm = permutation(n, rng);
      std::copy(perm.begin(), perm.begin() + static_cast<long>(m), rows.begin());
    }
    node_draws.push_back(node_core(routed, cohort, rows).percent_improvement);
    cf_draws.push_back(counterfactual_core(routed, cohort, reward, rows).percent_improvement);
  }
  return {summarize(std::move(node_draws)), summarize(std::move(cf_draws))};
}

double concordance(const PolicyTree& a, const PolicyTree& b, const Cohort& cohort) {
  if (cohort.size() == 0) throw InvalidArgument("concordance: empty cohort");
  if (!(a.treatments() == b.treatments())) {
    throw InvalidArgument("concordance: trees prescribe different treatment sets");
  }
  const auto pa = prescriptions(a, cohort);
  const auto pb = prescriptions(b, cohort);
  std::size_t same = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) same += pa[i] == pb[i];
  return static_cast<double>(same) / static_cast<double>(pa.size());
}

std::vector<SubgroupResult> subgroup_evaluation(const PolicyTree& tree, const Cohort& cohort,
                                                const RewardMatrix& reward,
                                                const SubgroupSpec& grouping) {
  reward.check_aligned(cohort);
  const auto j = cohort.schema().find(grouping.feature);
  if (!j) {
    throw InvalidArgument("subgroup_evaluation: unknown feature '" + grouping.feature + "'");
  }
  if (cohort.schema()[*j].kind == FeatureKind::categorical) {
    throw InvalidArgument("subgroup_evaluation: '" + grouping.feature + "' is not numeric");
  }
  const auto& edges = grouping.edges;
  for (std::size_t e = 1; e < edges.size(); ++e) {
    if (!(edges[e] > edges[e - 1])) {
      throw InvalidArgument("subgroup_evaluation: edges must be strictly increasing");
    }
  }
  std::vector<std::vector<std::size_t>> bins(edges.size() + 1);
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& v = cohort[i].features[*j];
    if (!v) {
      throw InvalidArgument("subgroup_evaluation: record " + cohort[i].id + " is missing '" +
                            grouping.feature + "'");
    }
    const auto b = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), *v) -
                                            edges.begin());
    bins[b].push_back(i);
  }
  std::vector<SubgroupResult> out;
  for (std::size_t b = 0; b < bins.size(); ++b) {
    SubgroupResult g;
    if (edges.empty()) {
      g.label = "all";
    } else if (b == 0) {
      g.label = "< " + format_double(edges.front());
    } else if (b == edges.size()) {
      g.label = ">= " + format_double(edges.back());
    } else {
      g.label = "[" + format_double(edges[b - 1]) + ", " + format_double(edges[b]) + ")";
    }
    g.members = bins[b].size();
    if (!bins[b].empty()) {
      g.report = counterfactual_evaluation(tree, cohort.subset(bins[b]),
                                           reward.select_rows(bins[b]));
    }
    out.push_back(std::move(g));
  }
  return out;
}

PipelineRun run_pipeline(const Cohort& cohort, const PipelineConfig& config) {
  CohortSplit parts = split(cohort, {config.train_fraction, derive_seed(config.seed, 1)});
  Cohort train = impute(parts.train, config.imputation, parts.train);
  Cohort test = impute(parts.test, config.imputation, parts.train);
  CounterfactualConfig cf_train = config.counterfactual;
  cf_train.seed = derive_seed(config.seed, 2);
  CounterfactualConfig cf_test = config.counterfactual;
  cf_test.seed = derive_seed(config.seed, 3);
  CounterfactualFit train_fit = estimate_counterfactuals(train, cf_train);
  CounterfactualFit test_fit = estimate_counterfactuals(test, cf_test);
  OptConfig opt = config.opt;
  opt.seed = derive_seed(config.seed, 4);
  PolicyFit policy = fit_policy_tree(train, train_fit.rewards, opt,
                                     &train_fit.outcomes.predictions.values);
  EvaluationReport train_node = node_analysis(policy.tree, train);
  EvaluationReport train_cf = counterfactual_evaluation(policy.tree, train, train_fit.rewards);
  EvaluationReport test_node = node_analysis(policy.tree, test);
  EvaluationReport test_cf = counterfactual_evaluation(policy.tree, test, test_fit.rewards);
  return {config.seed,
          std::move(parts),
          std::move(train),
          std::move(test),
          std::move(train_fit),
          std::move(test_fit),
          std::move(policy),
          std::move(train_node),
          std::move(train_cf),
          std::move(test_node),
          std::move(test_cf)};
}

SelectionResult model_selection(const Cohort& cohort, const SelectionConfig& config) {
  if (config.n_splits < 1) throw InvalidArgument("model_selection: n_splits must be >= 1");
  if (config.top_k < 1) throw InvalidArgument("model_selection: top_k must be >= 1");
  SelectionResult result;
  for (std::size_t s = 0; s < config.n_splits; ++s) {
    PipelineConfig pc = config.pipeline;
    pc.seed = derive_seed(config.pipeline.seed, 1000 + s);
    PipelineRun run = run_pipeline(cohort, pc);
    result.splits.push_back({s, pc.seed, run.policy.tree, run.policy.lambda, run.train_node,
                             run.train_counterfactual, run.test_node, run.test_counterfactual});
  }
  std::vector<std::size_t> order(result.splits.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto score = [&](std::size_t s) {
    const auto& v = result.splits[s].test_node.percent_improvement;
    return v ? *v : -std::numeric_limits<double>::infinity();
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score(a) > score(b); });
  for (auto s : order) {
    const SplitReport& report = result.splits[s];
    const std::string key = report.tree.structure_key();
    auto it = std::find_if(result.candidates.begin(), result.candidates.end(),
                           [&](const Candidate& c) { return c.key == key; });
    if (it != result.candidates.end()) {
      it->reports.push_back(report);
    } else {
      result.candidates.push_back({key, report.tree, {report}});
    }
  }
  if (result.candidates.size() > config.top_k) {
    result.candidates.erase(result.candidates.begin() + static_cast<long>(config.top_k),
                            result.candidates.end());
  }
  return result;
}

// ---------------------------------------------------------------------------
// Report layouts

namespace {

std::string pct(double fraction) { return fixed(100.0 * fraction, 2); }

std::string pct_or_na(const std::optional<double>& fraction) {
  return fraction ? pct(*fraction) : "NA";
}

std::string improvement_or_na(const std::optional<double>& v) {
  return v ? fixed(*v, 2) : "NA";
}

}  // namespace

std::string node_analysis_table(const EvaluationReport& report, const TreatmentSet& treatments,
                                std::string_view label) {
  CsvRow header{"Node", "Prescribed Treatment"};
  for (const auto& t : treatments.names()) {
    header.push_back("No. " + t);
    header.push_back("Historical " + t + " Rate (%)");
  }
  header.push_back("Policy Rate (%)");
  TextTable table(std::move(header));
  for (const auto& row : report.rows) {
    CsvRow cells{std::to_string(row.leaf), treatments.name(row.prescription)};
    for (std::size_t t = 0; t < treatments.size(); ++t) {
      cells.push_back(std::to_string(row.counts[t]));
      cells.push_back(pct_or_na(row.rates[t]));
    }
    cells.push_back(pct(row.policy_rate) + (row.fallback ? "*" : ""));
    table.add(std::move(cells));
  }
  std::string out = std::string(label) + " N=" + std::to_string(report.n) + "\n" + table.str();
  bool any_fallback = false;
  for (const auto& row : report.rows) any_fallback = any_fallback || row.fallback;
  if (any_fallback) {
    out += "* prescribed treatment has no recipients in this node; node rate used\n";
  }
  return out;
}

std::string node_analysis_csv(const EvaluationReport& report, const TreatmentSet& treatments) {
  CsvRow header{"node", "prescription", "members"};
  for (const auto& t : treatments.names()) {
    header.push_back("count_" + t);
    header.push_back("rate_" + t);
  }
  header.push_back("policy_rate");
  header.push_back("fallback");
  CsvWriter writer(std::move(header));
  for (const auto& row : report.rows) {
    CsvRow cells{std::to_string(row.leaf), treatments.name(row.prescription),
                 std::to_string(row.members)};
    for (std::size_t t = 0; t < treatments.size(); ++t) {
      cells.push_back(std::to_string(row.counts[t]));
      cells.push_back(row.rates[t] ? format_double(*row.rates[t]) : "");
    }
    cells.push_back(format_double(row.policy_rate));
    cells.push_back(row.fallback ? "1" : "0");
    writer.add(std::move(cells));
  }
  return writer.str();
}

std::string reconciliation_table(const std::vector<LeafReconciliation>& rows,
                                 const TreatmentSet& treatments, std::string_view label) {
  CsvRow header{"Node"};
  for (const auto& t : treatments.names()) header.push_back("Estimated " + t + " Rate (%)");
  for (const auto& t : treatments.names()) header.push_back("Historical " + t + " Rate (%)");
  TextTable table(std::move(header));
  std::size_t n = 0;
  for (const auto& row : rows) {
    n += row.members;
    CsvRow cells{std::to_string(row.leaf)};
    for (const auto& arm : row.arms) cells.push_back(pct_or_na(arm.estimated_rate));
    for (const auto& arm : row.arms) cells.push_back(pct_or_na(arm.historical_rate));
    table.add(std::move(cells));
  }
  return std::string(label) + " N=" + std::to_string(n) + "\n" + table.str();
}

std::string reconciliation_csv(const std::vector<LeafReconciliation>& rows,
                               const TreatmentSet& treatments) {
  CsvRow header{"node", "members"};
  for (const auto& t : treatments.names()) {
    header.push_back("recipients_" + t);
    header.push_back("estimated_" + t);
    header.push_back("historical_" + t);
  }
  CsvWriter writer(std::move(header));
  for (const auto& row : rows) {
    CsvRow cells{std::to_string(row.leaf), std::to_string(row.members)};
    for (const auto& arm : row.arms) {
      cells.push_back(std::to_string(arm.recipients));
      cells.push_back(arm.estimated_rate ? format_double(*arm.estimated_rate) : "");
      cells.push_back(arm.historical_rate ? format_double(*arm.historical_rate) : "");
    }
    writer.add(std::move(cells));
  }
  return writer.str();
}

std::string improvement_table(const std::vector<LabeledReport>& reports) {
  TextTable table({"Cohort", "Method", "N", "Historical Rate (%)", "Policy Rate (%)",
                   "Percent Improvement"});
  for (const auto& r : reports) {
    table.add({r.label, std::string(to_string(r.report->method)), std::to_string(r.report->n),
               pct(r.report->historical_rate), pct(r.report->policy_rate),
               improvement_or_na(r.report->percent_improvement)});
  }
  return table.str();
}

std::string improvement_csv(const std::vector<LabeledReport>& reports) {
  CsvWriter writer({"cohort", "method", "n", "historical_rate", "policy_rate",
                    "percent_improvement"});
  for (const auto& r : reports) {
    writer.add({r.label, std::string(to_string(r.report->method)), std::to_string(r.report->n),
                format_double(r.report->historical_rate), format_double(r.report->policy_rate),
                r.report->percent_improvement ? format_double(*r.report->percent_improvement)
                                              : ""});
  }
  return writer.str();
}

std::string bootstrap_csv(const BootstrapResult& result) {
  CsvWriter writer({"draw", "node_analysis", "counterfactual"});
  for (std::size_t b = 0; b < result.node_analysis.draws.size(); ++b) {
    const auto& na = result.node_analysis.draws[b];
    const auto& cf = result.counterfactual.draws[b];
    writer.add({std::to_string(b), na ? format_double(*na) : "", cf ? format_double(*cf) : ""});
  }
  return writer.str();
}

std::string subgroup_csv(const std::vector<SubgroupResult>& groups) {
  CsvWriter writer({"group", "members", "historical_rate", "policy_rate",
                    "percent_improvement", "empty"});
  for (const auto& g : groups) {
    if (!g.report) {
      writer.add({g.label, "0", "", "", "", "1"});
      continue;
    }
    writer.add({g.label, std::to_string(g.members), format_double(g.report->historical_rate),
                format_double(g.report->policy_rate),
                g.report->percent_improvement ? format_double(*g.report->percent_improvement)
                                              : "",
                "0"});
  }
  return writer.str();
}

}  // namespace rxtree
