#include "rxtree/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include <json.hpp>

#include "rxtree/error.hpp"
#include "rxtree/random.hpp"

namespace rxtree {

using ordered_json = nlohmann::ordered_json;

std::string_view to_string(Distribution d) {
  switch (d) {
    case Distribution::normal: return "normal";
    case Distribution::uniform: return "uniform";
    case Distribution::bernoulli: return "bernoulli";
    case Distribution::categorical: return "categorical";
  }
  return "normal";
}

Distribution parse_distribution(std::string_view text) {
  if (text == "normal") return Distribution::normal;
  if (text == "uniform") return Distribution::uniform;
  if (text == "bernoulli") return Distribution::bernoulli;
  if (text == "categorical") return Distribution::categorical;
  throw InvalidArgument("unknown distribution '" + std::string(text) + "'");
}

namespace {

struct ResolvedCondition {
  std::size_t feature = 0;
  Condition::Op op = Condition::Op::less;
  double value = 0.0;
  std::vector<std::size_t> levels;  // sorted
};

ResolvedCondition resolve(const Condition& c, const FeatureSchema& schema) {
  const auto j = schema.find(c.feature);
  if (!j) throw InvalidArgument("synthetic spec: unknown feature '" + c.feature + "'");
  const Feature& f = schema[*j];
  ResolvedCondition out{*j, c.op, c.value, {}};
  if (c.op == Condition::Op::in) {
    if (f.kind != FeatureKind::categorical) {
      throw InvalidArgument("synthetic spec: level condition on non-categorical '" +
                            c.feature + "'");
    }
    for (const auto& level : c.levels) {
      auto it = std::find(f.levels.begin(), f.levels.end(), level);
      if (it == f.levels.end()) {
        throw InvalidArgument("synthetic spec: unknown level '" + level + "' of '" +
                              c.feature + "'");
      }
      out.levels.push_back(static_cast<std::size_t>(it - f.levels.begin()));
    }
    std::sort(out.levels.begin(), out.levels.end());
  } else if (f.kind == FeatureKind::categorical) {
    throw InvalidArgument("synthetic spec: threshold condition on categorical '" +
                          c.feature + "'");
  }
  return out;
}

bool holds(const ResolvedCondition& c, std::span<const double> x) {
  const double v = x[c.feature];
  switch (c.op) {
    case Condition::Op::less: return v < c.value;
    case Condition::Op::at_least: return v >= c.value;
    case Condition::Op::in:
      return std::binary_search(c.levels.begin(), c.levels.end(),
                                static_cast<std::size_t>(v));
  }
  return false;
}

struct Resolved {
  FeatureSchema schema;
  std::vector<std::vector<std::vector<ResolvedCondition>>> regions;  // [t][r]
  std::vector<std::vector<double>> probability;                     // [t][r]
  std::vector<double> intercepts;
  std::vector<std::vector<std::pair<std::size_t, std::pair<double, double>>>> terms;
};

Resolved resolve(const SyntheticSpec& spec) {
  Resolved out;
  out.schema = spec.schema();
  for (const auto& arm : spec.outcome) {
    std::vector<std::vector<ResolvedCondition>> regions;
    std::vector<double> probs;
    for (const auto& region : arm) {
      std::vector<ResolvedCondition> conds;
      for (const auto& c : region.conditions) conds.push_back(resolve(c, out.schema));
      regions.push_back(std::move(conds));
      probs.push_back(region.probability);
    }
    out.regions.push_back(std::move(regions));
    out.probability.push_back(std::move(probs));
  }
  for (const auto& arm : spec.assignment) {
    out.intercepts.push_back(arm.intercept);
    std::vector<std::pair<std::size_t, std::pair<double, double>>> terms;
    for (const auto& term : arm.terms) {
      const auto j = out.schema.find(term.feature);
      if (!j) {
        throw InvalidArgument("synthetic spec: unknown assignment feature '" +
                              term.feature + "'");
      }
      terms.push_back({*j, {term.weight, term.center}});
    }
    out.terms.push_back(std::move(terms));
  }
  return out;
}

std::vector<double> outcome_probs(const Resolved& r, std::span<const double> x) {
  std::vector<double> out;
  for (std::size_t t = 0; t < r.regions.size(); ++t) {
    std::optional<double> p;
    for (std::size_t k = 0; k < r.regions[t].size(); ++k) {
      const auto& conds = r.regions[t][k];
      if (std::all_of(conds.begin(), conds.end(),
                      [&](const ResolvedCondition& c) { return holds(c, x); })) {
        if (p) throw InvalidArgument("synthetic spec: outcome regions overlap");
        p = r.probability[t][k];
      }
    }
    if (!p) throw InvalidArgument("synthetic spec: outcome regions leave a gap");
    out.push_back(*p);
  }
  return out;
}

std::vector<double> propensities(const Resolved& r, std::span<const double> x) {
  std::vector<double> score(r.intercepts.size() + 1, 0.0);
  for (std::size_t t = 0; t < r.intercepts.size(); ++t) {
    double s = r.intercepts[t];
    for (const auto& [j, wc] : r.terms[t]) s += wc.first * (x[j] - wc.second);
    score[t + 1] = s;
  }
  const double top = *std::max_element(score.begin(), score.end());
  double total = 0.0;
  for (double& s : score) {
    s = std::exp(s - top);
    total += s;
  }
  for (double& s : score) s /= total;
  return score;
}

double round_to(double v, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(v * scale) / scale;
}

double draw(const FeatureGenerator& g, Rng& rng) {
  double v = 0.0;
  switch (g.distribution) {
    case Distribution::normal:
      v = g.mean + g.sd * rng.normal();
      break;
    case Distribution::uniform:
      v = g.low + (g.high - g.low) * rng.uniform();
      break;
    case Distribution::bernoulli:
      return rng.bernoulli(g.probability) ? 1.0 : 0.0;
    case Distribution::categorical: {
      double total = 0.0;
      for (double w : g.level_weights) total += w;
      double u = rng.uniform() * total;
      for (std::size_t l = 0; l < g.level_weights.size(); ++l) {
        if (u < g.level_weights[l]) return static_cast<double>(l);
        u -= g.level_weights[l];
      }
      return static_cast<double>(g.level_weights.size() - 1);
    }
  }
  if (g.clamp_low) v = std::max(v, *g.clamp_low);
  if (g.clamp_high) v = std::min(v, *g.clamp_high);
  if (g.decimals) v = round_to(v, *g.decimals);
  return v;
}

std::string record_id(std::size_t i, std::size_t n) {
  const int width = static_cast<int>(std::to_string(n).size());
  char buf[32];
  std::snprintf(buf, sizeof buf, "P%0*zu", width, i + 1);
  return buf;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (features.empty()) throw InvalidArgument("synthetic spec: no features");
  if (n < 1) throw InvalidArgument("synthetic spec: n must be >= 1");
  const FeatureSchema s = schema();
  const TreatmentSet ts = treatment_set();
  for (const auto& g : features) {
    const FeatureKind kind = g.feature.kind;
    const bool ok = (g.distribution == Distribution::bernoulli && kind == FeatureKind::binary) ||
                    (g.distribution == Distribution::categorical &&
                     kind == FeatureKind::categorical) ||
                    ((g.distribution == Distribution::normal ||
                      g.distribution == Distribution::uniform) &&
                     kind == FeatureKind::numeric);
    if (!ok) {
      throw InvalidArgument("synthetic spec: distribution " +
                            std::string(to_string(g.distribution)) +
                            " does not fit kind of '" + g.feature.name + "'");
    }
    if (g.distribution == Distribution::categorical &&
        g.level_weights.size() != g.feature.levels.size()) {
      throw InvalidArgument("synthetic spec: '" + g.feature.name +
                            "' needs one weight per level");
    }
    if (!(g.probability >= 0.0 && g.probability <= 1.0) ||
        !(g.missing_rate >= 0.0 && g.missing_rate < 1.0) || !(g.sd >= 0.0)) {
      throw InvalidArgument("synthetic spec: invalid parameters for '" + g.feature.name + "'");
    }
  }
  if (outcome.size() != ts.size()) {
    throw InvalidArgument("synthetic spec: need one outcome region list per treatment");
  }
  for (const auto& arm : outcome) {
    if (arm.empty()) throw InvalidArgument("synthetic spec: treatment without regions");
    for (const auto& region : arm) {
      if (!(region.probability >= 0.0 && region.probability <= 1.0)) {
        throw InvalidArgument("synthetic spec: region probability outside [0, 1]");
      }
    }
  }
  if (assignment.size() != ts.size() - 1) {
    throw InvalidArgument("synthetic spec: need one assignment model per non-reference arm");
  }
  resolve(*this);
}

FeatureSchema SyntheticSpec::schema() const {
  std::vector<Feature> f;
  for (const auto& g : features) f.push_back(g.feature);
  return FeatureSchema(std::move(f));
}

TreatmentSet SyntheticSpec::treatment_set() const { return TreatmentSet(treatments); }

std::vector<double> true_outcome_probabilities(const SyntheticSpec& spec,
                                               std::span<const double> x) {
  return outcome_probs(resolve(spec), x);
}

std::vector<double> true_propensities(const SyntheticSpec& spec, std::span<const double> x) {
  return propensities(resolve(spec), x);
}

SyntheticCohort generate(const SyntheticSpec& spec) {
  spec.validate();
  const Resolved r = resolve(spec);
  const TreatmentSet ts = spec.treatment_set();
  const std::size_t k = ts.size();
  const std::size_t p = spec.features.size();
  Rng feature_rng(derive_seed(spec.seed, 1));
  Rng assign_rng(derive_seed(spec.seed, 2));
  Rng outcome_rng(derive_seed(spec.seed, 3));
  Rng missing_rng(derive_seed(spec.seed, 4));

  SyntheticTruth truth;
  truth.propensity = Matrix(spec.n, k);
  truth.outcome_probability = Matrix(spec.n, k);
  std::vector<PatientRecord> observed;
  std::vector<PatientRecord> complete;
  std::vector<double> x(p);
  double optimal_total = 0.0;
  double historical_total = 0.0;
  for (std::size_t i = 0; i < spec.n; ++i) {
    for (std::size_t j = 0; j < p; ++j) x[j] = draw(spec.features[j], feature_rng);
    const auto prop = propensities(r, x);
    const auto probs = outcome_probs(r, x);
    double u = assign_rng.uniform();
    std::size_t t = k - 1;
    for (std::size_t a = 0; a < k; ++a) {
      if (u < prop[a]) {
        t = a;
        break;
      }
      u -= prop[a];
    }
    const int y = outcome_rng.bernoulli(probs[t]) ? 1 : 0;
    for (std::size_t a = 0; a < k; ++a) {
      truth.propensity(i, a) = prop[a];
      truth.outcome_probability(i, a) = probs[a];
    }
    const auto best = std::min_element(probs.begin(), probs.end());
    truth.optimal.push_back(static_cast<std::size_t>(best - probs.begin()));
    optimal_total += *best;
    historical_total += probs[t];

    PatientRecord rec{record_id(i, spec.n), {}, t, y};
    rec.features.assign(x.begin(), x.end());
    complete.push_back(rec);
    for (std::size_t j = 0; j < p; ++j) {
      if (spec.features[j].missing_rate > 0.0 &&
          missing_rng.bernoulli(spec.features[j].missing_rate)) {
        rec.features[j].reset();
      }
    }
    observed.push_back(std::move(rec));
  }
  truth.optimal_value = optimal_total / static_cast<double>(spec.n);
  truth.historical_value = historical_total / static_cast<double>(spec.n);
  return {Cohort(r.schema, ts, std::move(observed)), Cohort(r.schema, ts, std::move(complete)),
          std::move(truth)};
}

RewardMatrix oracle_rewards(const SyntheticCohort& data) {
  std::vector<std::string> ids;
  for (const auto& rec : data.cohort.records()) ids.push_back(rec.id);
  return RewardMatrix(std::move(ids), data.cohort.treatments(), data.truth.outcome_probability,
                      RewardProvenance::oracle);
}

double true_policy_value(const PolicyTree& tree, const SyntheticCohort& data) {
  const auto arms = prescriptions(tree, data.complete);
  double total = 0.0;
  for (std::size_t i = 0; i < arms.size(); ++i) {
    total += data.truth.outcome_probability(i, arms[i]);
  }
  return total / static_cast<double>(arms.size());
}

double true_improvement(const PolicyTree& tree, const SyntheticCohort& data) {
  const double h = data.truth.historical_value;
  return 100.0 * (h - true_policy_value(tree, data)) / h;
}

SyntheticSpec tavr_like_preset(std::size_t n, std::uint64_t seed) {
  if (n < 200) throw InvalidArgument("tavr_like_preset: n must be >= 200");
  auto numeric = [](std::string name, std::string unit, double mean, double sd, double lo,
                    double hi, int decimals, double missing) {
    FeatureGenerator g;
    g.feature = {std::move(name), FeatureKind::numeric, {}, std::move(unit), lo, hi};
    g.distribution = Distribution::normal;
    g.mean = mean;
    g.sd = sd;
    g.clamp_low = lo;
    g.clamp_high = hi;
    g.decimals = decimals;
    g.missing_rate = missing;
    return g;
  };
  auto binary = [](std::string name, double p) {
    FeatureGenerator g;
    g.feature = {std::move(name), FeatureKind::binary, {}, std::nullopt, std::nullopt,
                 std::nullopt};
    g.distribution = Distribution::bernoulli;
    g.probability = p;
    return g;
  };

  SyntheticSpec spec;
  spec.n = n;
  spec.seed = seed;
  spec.treatments = {"Sapien", "Evolut"};
  spec.features = {
      numeric("age", "years", 81.0, 7.0, 50.0, 100.0, 0, 0.0),
      binary("female", 0.45),
      numeric("weight", "kg", 78.0, 17.0, 40.0, 160.0, 1, 0.02),
      numeric("lvef", "%", 57.0, 10.0, 15.0, 80.0, 0, 0.03),
      binary("conduction_defect", 0.40),
      numeric("minor_annulus_diameter", "mm", 21.0, 2.0, 15.0, 28.0, 1, 0.0),
      numeric("peak_gradient", "mmHg", 65.0, 18.0, 10.0, 150.0, 0, 0.0),
      numeric("lvidd", "cm", 4.6, 0.6, 3.0, 7.0, 2, 0.0),
  };
  using Op = Condition::Op;
  const Condition cd1{"conduction_defect", Op::at_least, 0.5, {}};
  const Condition cd0{"conduction_defect", Op::less, 0.5, {}};
  const Condition small{"minor_annulus_diameter", Op::less, 21.0, {}};
  const Condition large{"minor_annulus_diameter", Op::at_least, 21.0, {}};
  const Condition low_gradient{"peak_gradient", Op::less, 55.0, {}};
  const Condition high_gradient{"peak_gradient", Op::at_least, 55.0, {}};
  const Condition narrow{"lvidd", Op::less, 4.4, {}};
  const Condition wide{"lvidd", Op::at_least, 4.4, {}};
  auto regions = [&](double a, double b, double c, double d, double e) {
    return std::vector<Region>{{{cd1, small}, a},
                               {{cd1, large}, b},
                               {{cd0, low_gradient}, c},
                               {{cd0, high_gradient, narrow}, d},
                               {{cd0, high_gradient, wide}, e}};
  };
  spec.outcome = {regions(0.40, 0.34, 0.03, 0.15, 0.05),
                  regions(0.05, 0.07, 0.15, 0.05, 0.16)};
  spec.assignment = {{-0.85,
                      {{"conduction_defect", 0.8, 0.0},
                       {"minor_annulus_diameter", -0.2, 21.0},
                       {"weight", 0.01, 78.0},
                       {"age", 0.02, 81.0}}}};
  return spec;
}

namespace {

struct Box {
  std::vector<double> lo;
  std::vector<double> hi;
  std::vector<std::vector<bool>> allowed;  // categorical levels still possible
};

// 1 implied, -1 impossible, 0 undecided.
int status(const ResolvedCondition& c, const Box& box) {
  const std::size_t j = c.feature;
  switch (c.op) {
    case Condition::Op::less:
      if (box.hi[j] <= c.value) return 1;
      if (box.lo[j] >= c.value) return -1;
      return 0;
    case Condition::Op::at_least:
      if (box.lo[j] >= c.value) return 1;
      if (box.hi[j] <= c.value) return -1;
      return 0;
    case Condition::Op::in: {
      bool any_in = false;
      bool any_out = false;
      for (std::size_t l = 0; l < box.allowed[j].size(); ++l) {
        if (!box.allowed[j][l]) continue;
        (std::binary_search(c.levels.begin(), c.levels.end(), l) ? any_in : any_out) = true;
      }
      if (!any_in) return -1;
      return any_out ? 0 : 1;
    }
  }
  return 0;
}

}  // namespace

PolicyTree oracle_policy_tree(const SyntheticSpec& spec) {
  spec.validate();
  const Resolved r = resolve(spec);
  const std::size_t p = r.schema.size();
  const std::size_t k = r.regions.size();
  Box root;
  root.lo.assign(p, -std::numeric_limits<double>::infinity());
  root.hi.assign(p, std::numeric_limits<double>::infinity());
  root.allowed.resize(p);
  for (std::size_t j = 0; j < p; ++j) root.allowed[j].assign(r.schema[j].levels.size(), true);

  std::vector<PolicyNode> nodes;
  auto build = [&](auto&& self, const Box& box) -> std::size_t {
    const ResolvedCondition* pending = nullptr;
    std::vector<double> probs(k, 0.0);
    for (std::size_t t = 0; t < k && !pending; ++t) {
      std::size_t live = 0;
      const ResolvedCondition* arm_open = nullptr;
      for (std::size_t g = 0; g < r.regions[t].size(); ++g) {
        bool possible = true;
        const ResolvedCondition* open = nullptr;
        for (const auto& c : r.regions[t][g]) {
          const int s = status(c, box);
          if (s < 0) possible = false;
          if (s == 0 && !open) open = &c;
        }
        if (!possible) continue;
        ++live;
        probs[t] = r.probability[t][g];
        if (open && !arm_open) arm_open = open;
      }
      if (live == 0) throw InvalidArgument("oracle_policy_tree: regions leave a gap");
      // A single live region must cover the whole box, so its open
      // conditions need no split.
      if (live > 1) pending = arm_open;
    }
    const std::size_t id = nodes.size();
    nodes.emplace_back();
    if (!pending) {
      const auto best = std::min_element(probs.begin(), probs.end());
      nodes[id] = PolicyNode::make_leaf(static_cast<std::size_t>(best - probs.begin()));
      return id;
    }
    const ResolvedCondition c = *pending;
    Box left = box;
    Box right = box;
    if (c.op == Condition::Op::in) {
      for (std::size_t l = 0; l < box.allowed[c.feature].size(); ++l) {
        const bool member = std::binary_search(c.levels.begin(), c.levels.end(), l);
        (member ? right : left).allowed[c.feature][l] = false;
      }
    } else {
      left.hi[c.feature] = std::min(box.hi[c.feature], c.value);
      right.lo[c.feature] = std::max(box.lo[c.feature], c.value);
    }
    const std::size_t l = self(self, left);
    const std::size_t rr = self(self, right);
    if (nodes[l].leaf && nodes[rr].leaf && nodes[l].prescription == nodes[rr].prescription) {
      const std::size_t prescription = nodes[l].prescription;
      nodes.resize(id + 1);
      nodes[id] = PolicyNode::make_leaf(prescription);
      return id;
    }
    if (c.op == Condition::Op::in) {
      nodes[id] = PolicyNode::make_categorical(c.feature, c.levels, l, rr);
    } else {
      nodes[id] = PolicyNode::make_numeric(c.feature, c.value, l, rr);
    }
    return id;
  };
  build(build, root);
  return PolicyTree(r.schema, spec.treatment_set(), std::move(nodes), 0);
}

// ---------------------------------------------------------------------------
// JSON

namespace {

std::string_view op_name(Condition::Op op) {
  switch (op) {
    case Condition::Op::less: return "less";
    case Condition::Op::at_least: return "at_least";
    case Condition::Op::in: return "in";
  }
  return "less";
}

Condition::Op parse_op(const std::string& text) {
  if (text == "less") return Condition::Op::less;
  if (text == "at_least") return Condition::Op::at_least;
  if (text == "in") return Condition::Op::in;
  throw LoadError("synthetic spec: unknown condition op '" + text + "'");
}

template <typename T>
void put_optional(ordered_json& item, const char* key, const std::optional<T>& v) {
  if (v) item[key] = *v;
}

template <typename T>
std::optional<T> get_optional(const ordered_json& item, const char* key) {
  if (!item.contains(key) || item.at(key).is_null()) return std::nullopt;
  return item.at(key).get<T>();
}

}  // namespace

std::string spec_json(const SyntheticSpec& spec) {
  ordered_json features = ordered_json::array();
  for (const auto& g : spec.features) {
    ordered_json item;
    item["name"] = g.feature.name;
    item["kind"] = std::string(to_string(g.feature.kind));
    if (g.feature.kind == FeatureKind::categorical) item["levels"] = g.feature.levels;
    put_optional(item, "unit", g.feature.unit);
    put_optional(item, "min", g.feature.min);
    put_optional(item, "max", g.feature.max);
    item["distribution"] = std::string(to_string(g.distribution));
    switch (g.distribution) {
      case Distribution::normal:
        item["mean"] = g.mean;
        item["sd"] = g.sd;
        break;
      case Distribution::uniform:
        item["low"] = g.low;
        item["high"] = g.high;
        break;
      case Distribution::bernoulli:
        item["probability"] = g.probability;
        break;
      case Distribution::categorical:
        item["level_weights"] = g.level_weights;
        break;
    }
    put_optional(item, "clamp_low", g.clamp_low);
    put_optional(item, "clamp_high", g.clamp_high);
    put_optional(item, "decimals", g.decimals);
    item["missing_rate"] = g.missing_rate;
    features.push_back(std::move(item));
  }
  ordered_json outcome = ordered_json::array();
  for (const auto& arm : spec.outcome) {
    ordered_json regions = ordered_json::array();
    for (const auto& region : arm) {
      ordered_json conds = ordered_json::array();
      for (const auto& c : region.conditions) {
        ordered_json item{{"feature", c.feature}, {"op", std::string(op_name(c.op))}};
        if (c.op == Condition::Op::in) {
          item["levels"] = c.levels;
        } else {
          item["value"] = c.value;
        }
        conds.push_back(std::move(item));
      }
      regions.push_back({{"conditions", std::move(conds)}, {"probability", region.probability}});
    }
    outcome.push_back(std::move(regions));
  }
  ordered_json assignment = ordered_json::array();
  for (const auto& arm : spec.assignment) {
    ordered_json terms = ordered_json::array();
    for (const auto& t : arm.terms) {
      terms.push_back({{"feature", t.feature}, {"weight", t.weight}, {"center", t.center}});
    }
    assignment.push_back({{"intercept", arm.intercept}, {"terms", std::move(terms)}});
  }
  ordered_json doc{{"n", spec.n},
                   {"seed", spec.seed},
                   {"treatments", spec.treatments},
                   {"features", std::move(features)},
                   {"outcome", std::move(outcome)},
                   {"assignment", std::move(assignment)}};
  return doc.dump(2) + "\n";
}

SyntheticSpec parse_spec_json(std::string_view text) {
  SyntheticSpec spec;
  try {
    const auto doc = ordered_json::parse(text);
    spec.n = doc.at("n").get<std::size_t>();
    spec.seed = doc.at("seed").get<std::uint64_t>();
    spec.treatments = doc.at("treatments").get<std::vector<std::string>>();
    for (const auto& item : doc.at("features")) {
      FeatureGenerator g;
      g.feature.name = item.at("name").get<std::string>();
      g.feature.kind = parse_feature_kind(item.at("kind").get<std::string>());
      if (item.contains("levels")) {
        g.feature.levels = item.at("levels").get<std::vector<std::string>>();
      }
      g.feature.unit = get_optional<std::string>(item, "unit");
      g.feature.min = get_optional<double>(item, "min");
      g.feature.max = get_optional<double>(item, "max");
      g.distribution = parse_distribution(item.at("distribution").get<std::string>());
      g.mean = item.value("mean", 0.0);
      g.sd = item.value("sd", 1.0);
      g.low = item.value("low", 0.0);
      g.high = item.value("high", 1.0);
      g.probability = item.value("probability", 0.5);
      if (item.contains("level_weights")) {
        g.level_weights = item.at("level_weights").get<std::vector<double>>();
      }
      g.clamp_low = get_optional<double>(item, "clamp_low");
      g.clamp_high = get_optional<double>(item, "clamp_high");
      g.decimals = get_optional<int>(item, "decimals");
      g.missing_rate = item.value("missing_rate", 0.0);
      spec.features.push_back(std::move(g));
    }
    for (const auto& arm : doc.at("outcome")) {
      std::vector<Region> regions;
      for (const auto& region : arm) {
        Region out;
        out.probability = region.at("probability").get<double>();
        for (const auto& c : region.at("conditions")) {
          Condition cond;
          cond.feature = c.at("feature").get<std::string>();
          cond.op = parse_op(c.at("op").get<std::string>());
          if (cond.op == Condition::Op::in) {
            cond.levels = c.at("levels").get<std::vector<std::string>>();
          } else {
            cond.value = c.at("value").get<double>();
          }
          out.conditions.push_back(std::move(cond));
        }
        regions.push_back(std::move(out));
      }
      spec.outcome.push_back(std::move(regions));
    }
    for (const auto& arm : doc.at("assignment")) {
      ArmAssignment a;
      a.intercept = arm.at("intercept").get<double>();
      for (const auto& t : arm.at("terms")) {
        a.terms.push_back({t.at("feature").get<std::string>(), t.at("weight").get<double>(),
                           t.value("center", 0.0)});
      }
      spec.assignment.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("synthetic spec: ") + e.what());
  }
  try {
    spec.validate();
  } catch (const InvalidArgument& e) {
    throw LoadError(e.what());
  }
  return spec;
}

std::string truth_json(const SyntheticCohort& data) {
  const auto& ts = data.cohort.treatments();
  ordered_json records = ordered_json::array();
  for (std::size_t i = 0; i < data.cohort.size(); ++i) {
    ordered_json propensity = ordered_json::object();
    ordered_json probability = ordered_json::object();
    for (std::size_t t = 0; t < ts.size(); ++t) {
      propensity[ts.name(t)] = data.truth.propensity(i, t);
      probability[ts.name(t)] = data.truth.outcome_probability(i, t);
    }
    records.push_back({{"id", data.cohort[i].id},
                       {"propensity", std::move(propensity)},
                       {"outcome_probability", std::move(probability)},
                       {"optimal", ts.name(data.truth.optimal[i])}});
  }
  ordered_json doc{{"treatments", ts.names()},
                   {"optimal_value", data.truth.optimal_value},
                   {"historical_value", data.truth.historical_value},
                   {"records", std::move(records)}};
  return doc.dump(2) + "\n";
}

}  // namespace rxtree
