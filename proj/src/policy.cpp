#include "rxtree/policy.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <json.hpp>

#include "rxtree/error.hpp"

namespace rxtree {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

PolicyNode PolicyNode::make_leaf(std::size_t prescription, std::size_t n_train) {
  PolicyNode n;
  n.leaf = true;
  n.prescription = prescription;
  n.n_train = n_train;
  return n;
}

PolicyNode PolicyNode::make_numeric(std::size_t feature, double threshold,
                                    std::size_t left, std::size_t right) {
  PolicyNode n;
  n.leaf = false;
  n.feature = feature;
  n.threshold = threshold;
  n.left = left;
  n.right = right;
  return n;
}

PolicyNode PolicyNode::make_categorical(std::size_t feature,
                                        std::vector<std::size_t> levels,
                                        std::size_t left, std::size_t right) {
  PolicyNode n;
  n.leaf = false;
  n.categorical = true;
  n.feature = feature;
  std::sort(levels.begin(), levels.end());
  n.levels = std::move(levels);
  n.left = left;
  n.right = right;
  return n;
}

PolicyTree::PolicyTree(FeatureSchema schema, TreatmentSet treatments,
                       std::vector<PolicyNode> nodes, std::size_t root)
    : schema_(std::move(schema)),
      treatments_(std::move(treatments)),
      nodes_(std::move(nodes)),
      root_(root) {
  if (nodes_.empty()) throw TreeFormatError("policy tree: no nodes");
  if (root_ >= nodes_.size()) throw TreeFormatError("policy tree: root out of range");
  std::vector<int> seen(nodes_.size(), 0);
  std::vector<std::size_t> stack{root_};
  while (!stack.empty()) {
    const std::size_t id = stack.back();
    stack.pop_back();
    if (seen[id]++) {
      throw TreeFormatError("policy tree: node " + std::to_string(id) +
                            " is reachable twice");
    }
    const PolicyNode& n = nodes_[id];
    if (n.leaf) {
      if (n.prescription >= treatments_.size()) {
        throw TreeFormatError("policy tree: leaf " + std::to_string(id) +
                              " prescribes an unknown treatment");
      }
      if (!n.stats.empty() && n.stats.size() != treatments_.size()) {
        throw TreeFormatError("policy tree: leaf " + std::to_string(id) +
                              " has stats for the wrong number of treatments");
      }
      continue;
    }
    if (n.left >= nodes_.size() || n.right >= nodes_.size()) {
      throw TreeFormatError("policy tree: node " + std::to_string(id) +
                            " has a dangling child index");
    }
    if (n.feature >= schema_.size()) {
      throw TreeFormatError("policy tree: node " + std::to_string(id) +
                            " splits on an unknown feature");
    }
    const Feature& f = schema_[n.feature];
    if (n.categorical) {
      if (f.kind != FeatureKind::categorical) {
        throw TreeFormatError("policy tree: level split on non-categorical '" +
                              f.name + "'");
      }
      const bool valid = !n.levels.empty() && n.levels.size() < f.levels.size() &&
                         std::is_sorted(n.levels.begin(), n.levels.end()) &&
                         std::adjacent_find(n.levels.begin(), n.levels.end()) ==
                             n.levels.end() &&
                         n.levels.back() < f.levels.size();
      if (!valid) {
        throw TreeFormatError("policy tree: invalid level subset on '" + f.name + "'");
      }
    } else {
      if (f.kind == FeatureKind::categorical) {
        throw TreeFormatError("policy tree: threshold split on categorical '" +
                              f.name + "'");
      }
      if (!std::isfinite(n.threshold)) {
        throw TreeFormatError("policy tree: non-finite threshold on '" + f.name + "'");
      }
    }
    stack.push_back(n.right);
    stack.push_back(n.left);
  }
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (!seen[id]) {
      throw TreeFormatError("policy tree: node " + std::to_string(id) +
                            " is not reachable from the root");
    }
  }
}

PolicyTree PolicyTree::constant(FeatureSchema schema, TreatmentSet treatments,
                                std::size_t prescription, std::size_t n_train) {
  return PolicyTree(std::move(schema), std::move(treatments),
                    {PolicyNode::make_leaf(prescription, n_train)}, 0);
}

bool PolicyTree::goes_left(const PolicyNode& split, double value) const {
  if (split.categorical) {
    return std::binary_search(split.levels.begin(), split.levels.end(),
                              static_cast<std::size_t>(value));
  }
  return value < split.threshold;
}

std::size_t PolicyTree::leaf_of(std::span<const double> x) const {
  std::size_t id = root_;
  while (!nodes_[id].leaf) {
    const PolicyNode& n = nodes_[id];
    id = goes_left(n, x[n.feature]) ? n.left : n.right;
  }
  return id;
}

std::size_t PolicyTree::depth() const {
  std::size_t best = 0;
  std::vector<std::pair<std::size_t, std::size_t>> stack{{root_, 0}};
  while (!stack.empty()) {
    auto [id, d] = stack.back();
    stack.pop_back();
    const PolicyNode& n = nodes_[id];
    if (n.leaf) {
      best = std::max(best, d);
    } else {
      stack.push_back({n.left, d + 1});
      stack.push_back({n.right, d + 1});
    }
  }
  return best;
}

std::size_t PolicyTree::internal_count() const {
  return static_cast<std::size_t>(std::count_if(
      nodes_.begin(), nodes_.end(), [](const PolicyNode& n) { return !n.leaf; }));
}

std::vector<std::size_t> PolicyTree::leaves() const {
  std::vector<std::size_t> out;
  std::vector<std::size_t> stack{root_};
  while (!stack.empty()) {
    const std::size_t id = stack.back();
    stack.pop_back();
    const PolicyNode& n = nodes_[id];
    if (n.leaf) {
      out.push_back(id);
    } else {
      stack.push_back(n.right);
      stack.push_back(n.left);
    }
  }
  return out;
}

std::vector<std::size_t> PolicyTree::used_features() const {
  std::set<std::size_t> used;
  for (const auto& n : nodes_) {
    if (!n.leaf) used.insert(n.feature);
  }
  return {used.begin(), used.end()};
}

PolicyTree PolicyTree::bind(const FeatureSchema& target) const {
  if (schema_ == target) return *this;
  std::vector<std::string> problems;
  std::map<std::size_t, std::size_t> feature_map;
  std::map<std::size_t, std::vector<std::size_t>> level_map;
  for (auto j : used_features()) {
    const Feature& f = schema_[j];
    const auto k = target.find(f.name);
    if (!k) {
      problems.push_back("'" + f.name + "' is absent");
      continue;
    }
    const Feature& g = target[*k];
    const bool numeric_like = f.kind != FeatureKind::categorical &&
                              g.kind != FeatureKind::categorical;
    if (f.kind != g.kind && !numeric_like) {
      problems.push_back("'" + f.name + "' has kind " + std::string(to_string(g.kind)) +
                         ", tree expects " + std::string(to_string(f.kind)));
      continue;
    }
    feature_map[j] = *k;
    if (f.kind == FeatureKind::categorical) {
      std::vector<std::size_t> levels;
      for (const auto& level : f.levels) {
        auto it = std::find(g.levels.begin(), g.levels.end(), level);
        levels.push_back(it == g.levels.end()
                             ? g.levels.size()
                             : static_cast<std::size_t>(it - g.levels.begin()));
      }
      level_map[j] = std::move(levels);
    }
  }
  if (!problems.empty()) {
    std::string message = "tree features do not match the cohort schema:";
    for (const auto& p : problems) message += " " + p + ";";
    message.pop_back();
    throw TreeFormatError(message);
  }
  std::vector<PolicyNode> nodes = nodes_;
  for (auto& n : nodes) {
    if (n.leaf) continue;
    if (n.categorical) {
      const auto& map = level_map[n.feature];
      std::vector<std::size_t> levels;
      for (auto l : n.levels) {
        if (map[l] >= target[feature_map[n.feature]].levels.size()) {
          throw TreeFormatError("tree level '" + schema_[n.feature].levels[l] +
                                "' of '" + schema_[n.feature].name +
                                "' is unknown to the cohort schema");
        }
        levels.push_back(map[l]);
      }
      std::sort(levels.begin(), levels.end());
      n.levels = std::move(levels);
    }
    n.feature = feature_map[n.feature];
  }
  return PolicyTree(target, treatments_, std::move(nodes), root_);
}

PolicyTree PolicyTree::with_leaf_stats(const Cohort& cohort, const Matrix* estimates) const {
  const auto leaf = route(*this, cohort);
  const std::size_t k = treatments_.size();
  std::vector<PolicyNode> nodes = nodes_;
  std::vector<std::vector<double>> events(nodes.size(), std::vector<double>(k, 0.0));
  std::vector<std::vector<double>> estimated(nodes.size(), std::vector<double>(k, 0.0));
  std::vector<std::size_t> members(nodes.size(), 0);
  for (auto& n : nodes) {
    if (!n.leaf) continue;
    n.n_train = 0;
    n.stats.assign(k, {});
  }
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    PolicyNode& n = nodes[leaf[i]];
    ++n.n_train;
    ++members[leaf[i]];
    auto& s = n.stats[cohort[i].treatment];
    ++s.count;
    events[leaf[i]][cohort[i].treatment] += cohort[i].outcome;
    if (estimates) {
      for (std::size_t t = 0; t < k; ++t) estimated[leaf[i]][t] += (*estimates)(i, t);
    }
  }
  for (std::size_t id = 0; id < nodes.size(); ++id) {
    PolicyNode& n = nodes[id];
    if (!n.leaf) continue;
    for (std::size_t t = 0; t < k; ++t) {
      auto& s = n.stats[t];
      if (s.count > 0) s.historical_rate = events[id][t] / static_cast<double>(s.count);
      if (estimates && members[id] > 0) {
        s.mean_estimated = estimated[id][t] / static_cast<double>(members[id]);
      }
    }
  }
  return PolicyTree(schema_, treatments_, std::move(nodes), root_);
}

PolicyTree PolicyTree::with_prescriptions(const Cohort& cohort,
                                          const RewardMatrix& reward) const {
  reward.check_aligned(cohort);
  const auto leaf = route(*this, cohort);
  const std::size_t k = treatments_.size();
  std::vector<std::vector<double>> sums(nodes_.size(), std::vector<double>(k, 0.0));
  std::vector<std::size_t> members(nodes_.size(), 0);
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    ++members[leaf[i]];
    for (std::size_t t = 0; t < k; ++t) sums[leaf[i]][t] += reward(i, t);
  }
  std::vector<PolicyNode> nodes = nodes_;
  for (std::size_t id = 0; id < nodes.size(); ++id) {
    if (!nodes[id].leaf || members[id] == 0) continue;
    const auto& s = sums[id];
    nodes[id].prescription =
        static_cast<std::size_t>(std::min_element(s.begin(), s.end()) - s.begin());
  }
  return PolicyTree(schema_, treatments_, std::move(nodes), root_);
}

std::string PolicyTree::structure_key() const {
  std::string key;
  auto visit = [&](auto&& self, std::size_t id) -> void {
    const PolicyNode& n = nodes_[id];
    if (n.leaf) {
      key += "L(" + treatments_.name(n.prescription) + ")";
      return;
    }
    key += "S(" + schema_[n.feature].name;
    if (n.categorical) {
      for (auto l : n.levels) key += "|" + schema_[n.feature].levels[l];
    } else {
      key += "<" + format_double(n.threshold);
    }
    key += ")[";
    self(self, n.left);
    key += "][";
    self(self, n.right);
    key += "]";
  };
  visit(visit, root_);
  return key;
}

// ---------------------------------------------------------------------------

Prescription prescribe(const PolicyTree& tree, std::span<const FeatureValue> x) {
  if (x.size() != tree.schema().size()) {
    throw InvalidArgument("prescribe: expected " + std::to_string(tree.schema().size()) +
                          " features, got " + std::to_string(x.size()));
  }
  std::size_t id = tree.root();
  while (!tree.node(id).leaf) {
    const PolicyNode& n = tree.node(id);
    const auto& v = x[n.feature];
    if (!v) {
      throw InvalidArgument("prescribe: '" + tree.schema()[n.feature].name +
                            "' is missing; impute the record before prescribing");
    }
    if (!tree.schema().admits(n.feature, *v)) {
      throw InvalidArgument("prescribe: invalid value for '" +
                            tree.schema()[n.feature].name + "'");
    }
    id = tree.goes_left(n, *v) ? n.left : n.right;
  }
  const PolicyNode& leaf = tree.node(id);
  return {leaf.prescription, id, leaf.stats};
}

Prescription prescribe(const PolicyTree& tree, std::span<const double> x) {
  std::vector<FeatureValue> values(x.begin(), x.end());
  for (auto& v : values) {
    if (v && std::isnan(*v)) v.reset();
  }
  return prescribe(tree, std::span<const FeatureValue>(values));
}

std::vector<std::size_t> route(const PolicyTree& tree, const Cohort& cohort) {
  const PolicyTree bound = tree.bind(cohort.schema());
  std::vector<std::size_t> out(cohort.size());
  std::vector<double> x(cohort.schema().size(), 0.0);
  const auto used = bound.used_features();
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& rec = cohort[i];
    for (auto j : used) {
      if (!rec.features[j]) {
        throw InvalidArgument("route: record " + rec.id + " is missing '" +
                              cohort.schema()[j].name + "'; impute first");
      }
      x[j] = *rec.features[j];
    }
    out[i] = bound.leaf_of(x);
  }
  return out;
}

std::vector<std::size_t> prescriptions(const PolicyTree& tree, const Cohort& cohort) {
  auto leaf = route(tree, cohort);
  for (auto& l : leaf) l = tree.node(l).prescription;
  return leaf;
}

double policy_objective(const PolicyTree& tree, const Cohort& cohort,
                        const RewardMatrix& reward) {
  reward.check_aligned(cohort);
  const auto treatment = prescriptions(tree, cohort);
  double total = 0.0;
  for (std::size_t i = 0; i < cohort.size(); ++i) total += reward(i, treatment[i]);
  return total;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

ordered_json optional_number(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

std::optional<double> read_optional(const json& item, const char* key) {
  if (!item.contains(key) || item.at(key).is_null()) return std::nullopt;
  return item.at(key).get<double>();
}

}  // namespace

std::string export_tree(const PolicyTree& tree) {
  const auto used = tree.used_features();
  std::map<std::size_t, std::size_t> remap;
  ordered_json schema = ordered_json::array();
  for (auto j : used) {
    remap[j] = remap.size();
    const Feature& f = tree.schema()[j];
    ordered_json item;
    item["name"] = f.name;
    item["kind"] = std::string(to_string(f.kind));
    if (f.kind == FeatureKind::categorical) item["levels"] = f.levels;
    if (f.unit) item["unit"] = *f.unit;
    if (f.min) item["min"] = *f.min;
    if (f.max) item["max"] = *f.max;
    schema.push_back(std::move(item));
  }

  ordered_json nodes = ordered_json::array();
  for (std::size_t id = 0; id < tree.nodes().size(); ++id) {
    const PolicyNode& n = tree.nodes()[id];
    ordered_json item;
    item["id"] = id;
    if (n.leaf) {
      item["kind"] = "leaf";
      item["prescription"] = tree.treatments().name(n.prescription);
      item["n_train"] = n.n_train;
      ordered_json stats = ordered_json::array();
      for (std::size_t t = 0; t < n.stats.size(); ++t) {
        ordered_json s;
        s["treatment"] = tree.treatments().name(t);
        s["count"] = n.stats[t].count;
        s["historical_rate"] = optional_number(n.stats[t].historical_rate);
        s["mean_estimated"] = optional_number(n.stats[t].mean_estimated);
        stats.push_back(std::move(s));
      }
      item["stats"] = std::move(stats);
    } else {
      const Feature& f = tree.schema()[n.feature];
      item["kind"] = "split";
      item["feature"] = f.name;
      if (n.categorical) {
        std::vector<std::string> levels;
        for (auto l : n.levels) levels.push_back(f.levels[l]);
        item["levels"] = levels;
      } else {
        item["threshold"] = n.threshold;
      }
      item["left"] = n.left;
      item["right"] = n.right;
    }
    nodes.push_back(std::move(item));
  }

  ordered_json doc;
  doc["format"] = "rxtree-policy-tree";
  doc["version"] = kTreeFormatVersion;
  doc["routing"] = {{"numeric", "left if value < threshold, otherwise right"},
                    {"categorical", "left if level is listed in levels, otherwise right"}};
  doc["schema"] = std::move(schema);
  doc["treatments"] = tree.treatments().names();
  doc["root"] = tree.root();
  doc["nodes"] = std::move(nodes);
  return doc.dump(2) + "\n";
}

PolicyTree import_tree(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::exception& e) {
    throw TreeFormatError(std::string("tree json: ") + e.what());
  }
  try {
    if (!doc.contains("version") || doc.at("version").get<int>() != kTreeFormatVersion) {
      throw TreeFormatError("tree json: unsupported format version (expected " +
                            std::to_string(kTreeFormatVersion) + ")");
    }
    std::vector<Feature> features;
    for (const auto& item : doc.at("schema")) {
      Feature f;
      f.name = item.at("name").get<std::string>();
      f.kind = parse_feature_kind(item.at("kind").get<std::string>());
      if (item.contains("levels")) f.levels = item.at("levels").get<std::vector<std::string>>();
      if (item.contains("unit")) f.unit = item.at("unit").get<std::string>();
      f.min = read_optional(item, "min");
      f.max = read_optional(item, "max");
      features.push_back(std::move(f));
    }
    FeatureSchema schema(std::move(features));
    TreatmentSet treatments(doc.at("treatments").get<std::vector<std::string>>());

    const auto& items = doc.at("nodes");
    std::map<std::size_t, std::size_t> index_of_id;
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto id = items[i].at("id").get<std::size_t>();
      if (!index_of_id.emplace(id, i).second) {
        throw TreeFormatError("tree json: duplicate node id " + std::to_string(id));
      }
    }
    auto child = [&](const json& item, const char* key) {
      if (!item.contains(key)) {
        throw TreeFormatError("tree json: split node " +
                              std::to_string(item.at("id").get<std::size_t>()) +
                              " lacks '" + key + "'");
      }
      const auto id = item.at(key).get<std::size_t>();
      auto it = index_of_id.find(id);
      if (it == index_of_id.end()) {
        throw TreeFormatError("tree json: dangling child id " + std::to_string(id));
      }
      return it->second;
    };

    std::vector<PolicyNode> nodes;
    for (const auto& item : items) {
      const auto kind = item.at("kind").get<std::string>();
      if (kind == "leaf") {
        PolicyNode n = PolicyNode::make_leaf(
            treatments.index_of(item.at("prescription").get<std::string>()),
            item.value("n_train", std::size_t{0}));
        if (item.contains("stats")) {
          for (const auto& s : item.at("stats")) {
            LeafTreatmentStats stat;
            stat.count = s.at("count").get<std::size_t>();
            stat.historical_rate = read_optional(s, "historical_rate");
            stat.mean_estimated = read_optional(s, "mean_estimated");
            if (treatments.index_of(s.at("treatment").get<std::string>()) != n.stats.size()) {
              throw TreeFormatError("tree json: leaf stats out of treatment order");
            }
            n.stats.push_back(stat);
          }
        }
        nodes.push_back(std::move(n));
      } else if (kind == "split") {
        const auto name = item.at("feature").get<std::string>();
        const auto feature = schema.find(name);
        if (!feature) throw TreeFormatError("tree json: unknown feature '" + name + "'");
        const std::size_t left = child(item, "left");
        const std::size_t right = child(item, "right");
        if (item.contains("levels")) {
          const Feature& f = schema[*feature];
          std::vector<std::size_t> levels;
          for (const auto& level : item.at("levels").get<std::vector<std::string>>()) {
            auto it = std::find(f.levels.begin(), f.levels.end(), level);
            if (it == f.levels.end()) {
              throw TreeFormatError("tree json: unknown level '" + level + "' of '" +
                                    name + "'");
            }
            levels.push_back(static_cast<std::size_t>(it - f.levels.begin()));
          }
          nodes.push_back(PolicyNode::make_categorical(*feature, std::move(levels), left, right));
        } else {
          nodes.push_back(PolicyNode::make_numeric(
              *feature, item.at("threshold").get<double>(), left, right));
        }
      } else {
        throw TreeFormatError("tree json: unknown node kind '" + kind + "'");
      }
    }
    const auto root_id = doc.at("root").get<std::size_t>();
    auto root = index_of_id.find(root_id);
    if (root == index_of_id.end()) throw TreeFormatError("tree json: root id not found");
    return PolicyTree(std::move(schema), std::move(treatments), std::move(nodes),
                      root->second);
  } catch (const json::exception& e) {
    throw TreeFormatError(std::string("tree json: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw TreeFormatError(std::string("tree json: ") + e.what());
  }
}

}  // namespace rxtree
