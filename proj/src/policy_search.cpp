#include "rxtree/policy_search.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "rxtree/error.hpp"
#include "rxtree/random.hpp"

namespace rxtree {

void OptConfig::validate() const {
  if (max_depth < 1 || max_depth > 32) {
    throw InvalidArgument("opt config: max_depth must lie in [1, 32]");
  }
  if (min_samples_leaf < 1) throw InvalidArgument("opt config: min_samples_leaf must be >= 1");
  if (complexity_grid.empty() ||
      std::find(complexity_grid.begin(), complexity_grid.end(), 0.0) ==
          complexity_grid.end()) {
    throw InvalidArgument("opt config: complexity_grid must contain 0");
  }
  for (std::size_t i = 0; i < complexity_grid.size(); ++i) {
    if (!(complexity_grid[i] >= 0.0) || !std::isfinite(complexity_grid[i]) ||
        (i > 0 && !(complexity_grid[i] > complexity_grid[i - 1]))) {
      throw InvalidArgument(
          "opt config: complexity_grid must be non-negative and strictly ascending");
    }
  }
  if (!(validation_fraction > 0.0 && validation_fraction < 0.5)) {
    throw InvalidArgument("opt config: validation_fraction must lie in (0, 0.5)");
  }
  if (n_restarts < 1) throw InvalidArgument("opt config: n_restarts must be >= 1");
  if (max_passes < 1) throw InvalidArgument("opt config: max_passes must be >= 1");
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Threshold strictly above `lo` and at most `hi` (lo < hi).
double midpoint(double lo, double hi) {
  const double mid = lo + (hi - lo) * 0.5;
  return mid > lo ? mid : hi;
}

double tolerance(double value) { return 1e-10 * std::max(1.0, std::abs(value)); }

// Root thresholds per feature tried by the lookahead move.
constexpr std::size_t kLookaheadCandidates = 128;

struct Problem {
  std::size_t n = 0;
  std::size_t p = 0;
  std::size_t k = 0;
  Matrix x;
  Matrix gamma;
  std::vector<bool> categorical;
  std::vector<std::size_t> levels;
  std::vector<std::vector<std::uint32_t>> order;  // rows sorted by feature value
  std::size_t min_leaf = 1;
  std::size_t max_depth = 1;
  double scale = 0.0;  // mean |reward|

  Problem(const Cohort& cohort, const RewardMatrix& reward) {
    reward.check_aligned(cohort);
    FeatureMatrix fm = feature_matrix(cohort);
    n = fm.rows();
    p = fm.cols();
    k = reward.treatment_count();
    x = std::move(fm.values);
    gamma = reward.values();
    for (std::size_t j = 0; j < p; ++j) {
      categorical.push_back(fm.kinds[j] == FeatureKind::categorical);
      levels.push_back(fm.level_counts[j]);
    }
    order.resize(p);
    for (std::size_t j = 0; j < p; ++j) {
      auto& o = order[j];
      o.resize(n);
      std::iota(o.begin(), o.end(), 0u);
      std::stable_sort(o.begin(), o.end(),
                       [&](std::uint32_t a, std::uint32_t b) { return x(a, j) < x(b, j); });
    }
    scale = reward.mean_abs();
  }
};

struct WNode {
  bool leaf = true;
  bool alive = true;
  std::size_t feature = 0;
  bool categorical = false;
  double threshold = 0.0;
  std::vector<std::size_t> levels;
  int left = -1;
  int right = -1;
  std::size_t prescription = 0;
};

struct WTree {
  std::vector<WNode> nodes;
  int root = 0;
};

struct Split {
  double cost = kInf;  // leaf costs only, penalty excluded
  std::size_t feature = 0;
  bool categorical = false;
  double threshold = 0.0;
  std::size_t level = 0;

  bool found() const { return cost < kInf; }
};

class Search {
 public:
  Search(const Problem& problem, double lambda)
      : pb_(problem),
        penalty_(lambda * problem.scale),
        mark_(problem.n, 0),
        side_a_(problem.n, 0),
        side_b_(problem.n, 0) {}

  double penalty() const { return penalty_; }

  bool goes_left(const WNode& node, std::uint32_t row) const {
    const double v = pb_.x(row, node.feature);
    if (node.categorical) {
      return std::binary_search(node.levels.begin(), node.levels.end(),
                                static_cast<std::size_t>(v));
    }
    return v < node.threshold;
  }

  // Minimum over treatments of the summed rewards of `rows`, with its argmin.
  std::pair<double, std::size_t> leaf_cost(std::span<const std::uint32_t> rows) const {
    std::vector<double> sums(pb_.k, 0.0);
    for (auto r : rows) {
      for (std::size_t t = 0; t < pb_.k; ++t) sums[t] += pb_.gamma(r, t);
    }
    const auto it = std::min_element(sums.begin(), sums.end());
    return {*it, static_cast<std::size_t>(it - sums.begin())};
  }

  void assign(const WTree& tree) {
    members_.assign(tree.nodes.size(), {});
    depth_.assign(tree.nodes.size(), 0);
    std::vector<std::uint32_t> all(pb_.n);
    std::iota(all.begin(), all.end(), 0u);
    partition(tree, tree.root, std::move(all), 0);
  }

  const std::vector<std::uint32_t>& members(int id) const { return members_[id]; }
  std::size_t depth(int id) const { return depth_[id]; }

  void relabel(WTree& tree) const {
    for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
      auto& node = tree.nodes[id];
      if (node.alive && node.leaf && !members_[id].empty()) {
        node.prescription = leaf_cost(members_[id]).second;
      }
    }
  }

  std::size_t internal_count(const WTree& tree, int id) const {
    const WNode& node = tree.nodes[id];
    if (node.leaf) return 0;
    return 1 + internal_count(tree, node.left) + internal_count(tree, node.right);
  }

  // Relabelled leaf costs plus penalty, using the current assignment.
  double subtree_cost(const WTree& tree, int id) const {
    const WNode& node = tree.nodes[id];
    if (node.leaf) return leaf_cost(members_[id]).first;
    return penalty_ + subtree_cost(tree, node.left) + subtree_cost(tree, node.right);
  }

  // Local leaf index reached by `row` inside the subtree at `id`; leaves
  // enumerates that subtree's leaves.
  std::size_t local_leaf(const WTree& tree, int id, std::uint32_t row,
                         const std::vector<int>& leaves) const {
    while (!tree.nodes[id].leaf) {
      const WNode& node = tree.nodes[id];
      id = goes_left(node, row) ? node.left : node.right;
    }
    return static_cast<std::size_t>(std::find(leaves.begin(), leaves.end(), id) -
                                    leaves.begin());
  }

  static void collect_leaves(const WTree& tree, int id, std::vector<int>& out) {
    const WNode& node = tree.nodes[id];
    if (node.leaf) {
      out.push_back(id);
      return;
    }
    collect_leaves(tree, node.left, out);
    collect_leaves(tree, node.right, out);
  }

  // Cost of sending every row of `rows` through one side's leaves (ids in
  // `side`); kInf if any leaf ends up below the minimum size.
  double routed_cost(std::span<const std::uint32_t> rows, const std::vector<std::size_t>& side,
                     std::size_t leaves) const {
    std::vector<double> sums(leaves * pb_.k, 0.0);
    std::vector<std::size_t> counts(leaves, 0);
    for (auto r : rows) {
      const std::size_t l = side[r];
      ++counts[l];
      for (std::size_t t = 0; t < pb_.k; ++t) sums[l * pb_.k + t] += pb_.gamma(r, t);
    }
    double total = 0.0;
    for (std::size_t l = 0; l < leaves; ++l) {
      if (counts[l] < pb_.min_leaf) return kInf;
      total += *std::min_element(sums.begin() + l * pb_.k, sums.begin() + (l + 1) * pb_.k);
    }
    return total;
  }

  // Best split of `rows` whose left side continues into a subtree with
  // `leaves_a` leaves (row -> side_a_) and right side into `leaves_b` leaves
  // (row -> side_b_). Every leaf must keep at least min_leaf rows.
  Split best_split(std::span<const std::uint32_t> rows, std::size_t leaves_a,
                   std::size_t leaves_b, std::span<const std::size_t> features) {
    Split best;
    if (rows.size() < 2 * pb_.min_leaf) return best;
    const std::size_t k = pb_.k;
    const std::size_t m = leaves_a + leaves_b;
    sums_.assign(m * k, 0.0);
    counts_.assign(m, 0);
    mins_.assign(m, 0.0);
    for (auto r : rows) mark_[r] = 1;

    auto reset = [&]() {
      std::fill(sums_.begin(), sums_.end(), 0.0);
      std::fill(counts_.begin(), counts_.end(), 0);
      for (auto r : rows) {
        const std::size_t l = leaves_a + side_b_[r];
        ++counts_[l];
        for (std::size_t t = 0; t < k; ++t) sums_[l * k + t] += pb_.gamma(r, t);
      }
      total_ = 0.0;
      bad_ = 0;
      for (std::size_t l = 0; l < m; ++l) {
        mins_[l] = *std::min_element(sums_.begin() + l * k, sums_.begin() + (l + 1) * k);
        total_ += mins_[l];
        if (counts_[l] < pb_.min_leaf) ++bad_;
      }
    };
    auto update = [&](std::size_t l, std::uint32_t r, double sign) {
      const bool was_bad = counts_[l] < pb_.min_leaf;
      counts_[l] = sign > 0 ? counts_[l] + 1 : counts_[l] - 1;
      for (std::size_t t = 0; t < k; ++t) sums_[l * k + t] += sign * pb_.gamma(r, t);
      const double mn = *std::min_element(sums_.begin() + l * k, sums_.begin() + (l + 1) * k);
      total_ += mn - mins_[l];
      mins_[l] = mn;
      const bool is_bad = counts_[l] < pb_.min_leaf;
      if (was_bad != is_bad) bad_ += is_bad ? 1 : -1;
    };
    auto move_left = [&](std::uint32_t r) {
      update(leaves_a + side_b_[r], r, -1.0);
      update(side_a_[r], r, 1.0);
    };

    for (auto j : features) {
      if (pb_.categorical[j]) {
        if (pb_.levels[j] < 2) continue;
        std::vector<std::vector<std::uint32_t>> by_level(pb_.levels[j]);
        for (auto r : rows) by_level[static_cast<std::size_t>(pb_.x(r, j))].push_back(r);
        for (std::size_t level = 0; level < by_level.size(); ++level) {
          if (by_level[level].empty() || by_level[level].size() == rows.size()) continue;
          reset();
          for (auto r : by_level[level]) move_left(r);
          if (bad_ == 0 && total_ < best.cost) {
            best = {total_, j, true, 0.0, level};
          }
        }
        continue;
      }
      reset();
      bool first = true;
      double prev = 0.0;
      for (auto r : pb_.order[j]) {
        if (!mark_[r]) continue;
        const double v = pb_.x(r, j);
        if (!first && v > prev && bad_ == 0 && total_ < best.cost) {
          best = {total_, j, false, midpoint(prev, v), 0};
        }
        move_left(r);
        prev = v;
        first = false;
      }
    }
    for (auto r : rows) mark_[r] = 0;
    return best;
  }

  Split best_stump(std::span<const std::uint32_t> rows, std::span<const std::size_t> features) {
    for (auto r : rows) {
      side_a_[r] = 0;
      side_b_[r] = 0;
    }
    return best_split(rows, 1, 1, features);
  }

  // Best replacement of the subtree over `rows` by a split whose children are
  // each a leaf or a best stump. Root thresholds are thinned to at most
  // `max_candidates` per feature; children use every midpoint.
  struct Lookahead {
    double cost = kInf;  // penalties included
    Split root;
    std::array<Split, 2> child;  // not found: the child stays a leaf
  };

  Lookahead best_lookahead(std::span<const std::uint32_t> rows, std::size_t max_candidates) {
    Lookahead best;
    const std::size_t m = rows.size();
    if (m < 2 * pb_.min_leaf) return best;
    for (auto r : rows) mark_[r] = 1;
    sorted_.assign(pb_.p, {});
    for (std::size_t j = 0; j < pb_.p; ++j) {
      if (pb_.categorical[j]) continue;
      sorted_[j].reserve(m);
      for (auto r : pb_.order[j]) {
        if (mark_[r]) sorted_[j].push_back(r);
      }
    }
    for (auto r : rows) mark_[r] = 0;

    auto consider = [&](const Split& root) {
      Lookahead c = side_stumps(rows);
      if (c.cost < best.cost) {
        c.root = root;
        best = c;
      }
    };
    for (std::size_t j = 0; j < pb_.p; ++j) {
      if (pb_.categorical[j]) {
        std::vector<std::size_t> count(pb_.levels[j], 0);
        for (auto r : rows) ++count[static_cast<std::size_t>(pb_.x(r, j))];
        for (std::size_t level = 0; level < count.size(); ++level) {
          if (count[level] < pb_.min_leaf || m - count[level] < pb_.min_leaf) continue;
          for (auto r : rows) side_a_[r] = static_cast<std::size_t>(pb_.x(r, j)) == level ? 0 : 1;
          consider({0.0, j, true, 0.0, level});
        }
        continue;
      }
      const auto& sr = sorted_[j];
      std::vector<std::size_t> cuts;  // left side = sr[0, cut)
      for (std::size_t i = pb_.min_leaf; i + pb_.min_leaf <= m; ++i) {
        if (pb_.x(sr[i - 1], j) < pb_.x(sr[i], j)) cuts.push_back(i);
      }
      if (cuts.size() > max_candidates) {
        std::vector<std::size_t> thin;
        for (std::size_t q = 0; q < max_candidates; ++q) {
          thin.push_back(cuts[q * (cuts.size() - 1) / (max_candidates - 1)]);
        }
        cuts = std::move(thin);
      }
      for (auto cut : cuts) {
        for (std::size_t i = 0; i < m; ++i) side_a_[sr[i]] = i < cut ? 0 : 1;
        consider({0.0, j, false, midpoint(pb_.x(sr[cut - 1], j), pb_.x(sr[cut], j)), 0});
      }
    }
    return best;
  }

  std::vector<std::size_t>& side_a() { return side_a_; }
  std::vector<std::size_t>& side_b() { return side_b_; }

 private:
  // Children of a candidate split given by side_a_ (0 left, 1 right): leaf
  // cost and best stump of each side in one sweep per feature.
  Lookahead side_stumps(std::span<const std::uint32_t> rows) {
    const std::size_t k = pb_.k;
    std::array<std::vector<double>, 2> total{std::vector<double>(k, 0.0),
                                             std::vector<double>(k, 0.0)};
    std::array<std::size_t, 2> count{0, 0};
    for (auto r : rows) {
      const std::size_t sd = side_a_[r];
      ++count[sd];
      for (std::size_t t = 0; t < k; ++t) total[sd][t] += pb_.gamma(r, t);
    }
    Lookahead out;
    std::array<double, 2> leaf{};
    std::array<double, 2> best{};
    for (int sd = 0; sd < 2; ++sd) {
      leaf[sd] = *std::min_element(total[sd].begin(), total[sd].end());
      best[sd] = leaf[sd];
    }
    auto split_cost = [&](const std::vector<double>& prefix, int sd) {
      double a = kInf, b = kInf;
      for (std::size_t t = 0; t < k; ++t) {
        a = std::min(a, prefix[t]);
        b = std::min(b, total[sd][t] - prefix[t]);
      }
      return a + b + penalty_;
    };
    std::array<std::vector<double>, 2> prefix{std::vector<double>(k), std::vector<double>(k)};
    for (std::size_t j = 0; j < pb_.p; ++j) {
      if (pb_.categorical[j]) {
        for (int sd = 0; sd < 2; ++sd) {
          std::vector<std::vector<double>> sums(pb_.levels[j], std::vector<double>(k, 0.0));
          std::vector<std::size_t> n_level(pb_.levels[j], 0);
          for (auto r : rows) {
            if (static_cast<int>(side_a_[r]) != sd) continue;
            const auto level = static_cast<std::size_t>(pb_.x(r, j));
            ++n_level[level];
            for (std::size_t t = 0; t < k; ++t) sums[level][t] += pb_.gamma(r, t);
          }
          for (std::size_t level = 0; level < sums.size(); ++level) {
            if (n_level[level] < pb_.min_leaf || count[sd] - n_level[level] < pb_.min_leaf) {
              continue;
            }
            const double c = split_cost(sums[level], sd);
            if (c < best[sd]) {
              best[sd] = c;
              out.child[sd] = {c, j, true, 0.0, level};
            }
          }
        }
        continue;
      }
      std::array<std::size_t, 2> seen{0, 0};
      std::array<double, 2> prev{0.0, 0.0};
      std::fill(prefix[0].begin(), prefix[0].end(), 0.0);
      std::fill(prefix[1].begin(), prefix[1].end(), 0.0);
      for (auto r : sorted_[j]) {
        const std::size_t sd = side_a_[r];
        const double v = pb_.x(r, j);
        if (seen[sd] >= pb_.min_leaf && count[sd] - seen[sd] >= pb_.min_leaf && v > prev[sd]) {
          const double c = split_cost(prefix[sd], static_cast<int>(sd));
          if (c < best[sd]) {
            best[sd] = c;
            out.child[sd] = {c, j, false, midpoint(prev[sd], v), 0};
          }
        }
        ++seen[sd];
        prev[sd] = v;
        for (std::size_t t = 0; t < k; ++t) prefix[sd][t] += pb_.gamma(r, t);
      }
    }
    out.cost = penalty_ + best[0] + best[1];
    return out;
  }

  void partition(const WTree& tree, int id, std::vector<std::uint32_t> rows, std::size_t d) {
    depth_[id] = d;
    const WNode& node = tree.nodes[id];
    if (!node.leaf) {
      std::vector<std::uint32_t> left;
      std::vector<std::uint32_t> right;
      for (auto r : rows) (goes_left(node, r) ? left : right).push_back(r);
      partition(tree, node.left, std::move(left), d + 1);
      partition(tree, node.right, std::move(right), d + 1);
    }
    members_[id] = std::move(rows);
  }

  const Problem& pb_;
  double penalty_;
  std::vector<std::vector<std::uint32_t>> members_;
  std::vector<std::size_t> depth_;
  std::vector<char> mark_;
  std::vector<std::size_t> side_a_;
  std::vector<std::size_t> side_b_;
  std::vector<double> sums_;
  std::vector<std::size_t> counts_;
  std::vector<double> mins_;
  std::vector<std::vector<std::uint32_t>> sorted_;
  double total_ = 0.0;
  long bad_ = 0;
};

void kill(WTree& tree, int id) {
  WNode& node = tree.nodes[id];
  node.alive = false;
  if (!node.leaf) {
    kill(tree, node.left);
    kill(tree, node.right);
  }
}

int add_leaf(WTree& tree) {
  tree.nodes.push_back(WNode{});
  return static_cast<int>(tree.nodes.size()) - 1;
}

void apply_split(WNode& node, const Split& s) {
  node.leaf = false;
  node.feature = s.feature;
  node.categorical = s.categorical;
  node.threshold = s.categorical ? 0.0 : s.threshold;
  node.levels = s.categorical ? std::vector<std::size_t>{s.level} : std::vector<std::size_t>{};
}

void make_stump(WTree& tree, int id, const Split& s) {
  const WNode& node = tree.nodes[id];
  if (!node.leaf) {
    kill(tree, node.left);
    kill(tree, node.right);
  }
  const int l = add_leaf(tree);
  const int r = add_leaf(tree);
  WNode& target = tree.nodes[id];
  apply_split(target, s);
  target.left = l;
  target.right = r;
}

WTree from_policy(const PolicyTree& tree) {
  WTree out;
  for (const auto& n : tree.nodes()) {
    WNode w;
    w.leaf = n.leaf;
    w.feature = n.feature;
    w.categorical = n.categorical;
    w.threshold = n.threshold;
    w.levels = n.levels;
    w.left = static_cast<int>(n.left);
    w.right = static_cast<int>(n.right);
    w.prescription = n.prescription;
    out.nodes.push_back(std::move(w));
  }
  out.root = static_cast<int>(tree.root());
  return out;
}

PolicyTree to_policy(const WTree& tree, const Search& search, const Cohort& cohort) {
  std::vector<int> preorder;
  auto visit = [&](auto&& self, int id) -> void {
    preorder.push_back(id);
    const WNode& n = tree.nodes[id];
    if (!n.leaf) {
      self(self, n.left);
      self(self, n.right);
    }
  };
  visit(visit, tree.root);
  std::vector<std::size_t> new_id(tree.nodes.size(), 0);
  for (std::size_t i = 0; i < preorder.size(); ++i) new_id[preorder[i]] = i;
  std::vector<PolicyNode> nodes;
  for (int id : preorder) {
    const WNode& n = tree.nodes[id];
    if (n.leaf) {
      nodes.push_back(PolicyNode::make_leaf(n.prescription, search.members(id).size()));
    } else if (n.categorical) {
      nodes.push_back(PolicyNode::make_categorical(n.feature, n.levels, new_id[n.left],
                                                   new_id[n.right]));
    } else {
      nodes.push_back(PolicyNode::make_numeric(n.feature, n.threshold, new_id[n.left],
                                               new_id[n.right]));
    }
  }
  return PolicyTree(cohort.schema(), cohort.treatments(), std::move(nodes), 0);
}

std::vector<std::size_t> all_features(std::size_t p) {
  std::vector<std::size_t> f(p);
  std::iota(f.begin(), f.end(), std::size_t{0});
  return f;
}

WTree greedy(Search& search, const Problem& pb, double feature_fraction, Rng& rng) {
  WTree tree;
  tree.nodes.push_back(WNode{});
  search.assign(tree);
  search.relabel(tree);
  const auto features = all_features(pb.p);
  const std::size_t subset =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(feature_fraction * pb.p)));

  struct Candidate {
    Split split;
    double gain = -kInf;
  };
  std::vector<Candidate> frontier;
  auto evaluate = [&](int id) {
    if (frontier.size() <= static_cast<std::size_t>(id)) frontier.resize(id + 1);
    Candidate c;
    const auto& rows = search.members(id);
    if (search.depth(id) < pb.max_depth) {
      std::vector<std::size_t> f = features;
      if (subset < pb.p) {
        rng.shuffle(f);
        f.resize(subset);
        std::sort(f.begin(), f.end());
      }
      c.split = search.best_stump(rows, f);
      if (c.split.found()) {
        c.gain = search.leaf_cost(rows).first - (c.split.cost + search.penalty());
      }
    }
    frontier[id] = c;
  };
  evaluate(tree.root);
  while (true) {
    int best = -1;
    for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
      if (!tree.nodes[id].leaf || id >= frontier.size()) continue;
      const auto& c = frontier[id];
      const double tol = tolerance(search.leaf_cost(search.members(id)).first);
      if (c.gain > tol && (best < 0 || c.gain > frontier[best].gain)) {
        best = static_cast<int>(id);
      }
    }
    if (best < 0) break;
    make_stump(tree, best, frontier[best].split);
    frontier[best].gain = -kInf;
    search.assign(tree);
    search.relabel(tree);
    evaluate(tree.nodes[best].left);
    evaluate(tree.nodes[best].right);
  }
  return tree;
}

struct DescentOutcome {
  WTree tree;
  double objective = 0.0;
  std::vector<double> trace;
  std::size_t passes = 0;
};

DescentOutcome descend(Search& search, const Problem& pb, WTree tree, std::size_t max_passes,
                       Rng& rng) {
  search.assign(tree);
  search.relabel(tree);
  DescentOutcome out;
  double objective = search.subtree_cost(tree, tree.root);
  out.trace.push_back(objective);
  const auto features = all_features(pb.p);

  for (std::size_t pass = 0; pass < max_passes; ++pass) {
    ++out.passes;
    std::vector<int> visit;
    for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
      if (tree.nodes[id].alive) visit.push_back(static_cast<int>(id));
    }
    rng.shuffle(visit);
    bool improved = false;
    for (int v : visit) {
      if (!tree.nodes[v].alive) continue;
      const auto rows = search.members(v);
      const WNode node = tree.nodes[v];
      const double current = search.subtree_cost(tree, v);

      enum class Move { none, leaf, promote_left, promote_right, resplit, stump, lookahead };
      Move move = Move::none;
      double best = current - tolerance(current);
      Split split;

      const double as_leaf = search.leaf_cost(rows).first;
      if (as_leaf < best) {
        best = as_leaf;
        move = Move::leaf;
      }
      if (!node.leaf) {
        std::vector<int> leaves_a;
        std::vector<int> leaves_b;
        Search::collect_leaves(tree, node.left, leaves_a);
        Search::collect_leaves(tree, node.right, leaves_b);
        auto& side_a = search.side_a();
        auto& side_b = search.side_b();
        for (auto r : rows) {
          side_a[r] = search.local_leaf(tree, node.left, r, leaves_a);
          side_b[r] = search.local_leaf(tree, node.right, r, leaves_b);
        }
        const double internal_a = static_cast<double>(search.internal_count(tree, node.left));
        const double internal_b = static_cast<double>(search.internal_count(tree, node.right));
        const double promote_left =
            search.routed_cost(rows, side_a, leaves_a.size()) + search.penalty() * internal_a;
        if (promote_left < best) {
          best = promote_left;
          move = Move::promote_left;
        }
        const double promote_right =
            search.routed_cost(rows, side_b, leaves_b.size()) + search.penalty() * internal_b;
        if (promote_right < best) {
          best = promote_right;
          move = Move::promote_right;
        }
        const Split s = search.best_split(rows, leaves_a.size(), leaves_b.size(), features);
        const double resplit = s.cost + search.penalty() * (1.0 + internal_a + internal_b);
        if (s.found() && resplit < best) {
          best = resplit;
          move = Move::resplit;
          split = s;
        }
      }
      if (search.depth(v) < pb.max_depth) {
        const Split s = search.best_stump(rows, features);
        const double stump = s.cost + search.penalty();
        if (s.found() && stump < best) {
          best = stump;
          move = Move::stump;
          split = s;
        }
      }
      Search::Lookahead look;
      if (search.depth(v) + 2 <= pb.max_depth) {
        look = search.best_lookahead(rows, kLookaheadCandidates);
        if (look.cost < best) {
          best = look.cost;
          move = Move::lookahead;
        }
      }
      if (move == Move::none) continue;

      WNode& target = tree.nodes[v];
      switch (move) {
        case Move::leaf:
          kill(tree, target.left);
          kill(tree, target.right);
          target.leaf = true;
          target.left = target.right = -1;
          break;
        case Move::promote_left:
        case Move::promote_right: {
          const int keep = move == Move::promote_left ? node.left : node.right;
          const int drop = move == Move::promote_left ? node.right : node.left;
          kill(tree, drop);
          WNode promoted = tree.nodes[keep];
          tree.nodes[keep].alive = false;
          tree.nodes[v] = promoted;
          break;
        }
        case Move::resplit: {
          const int l = target.left;
          const int r = target.right;
          apply_split(target, split);
          target.left = l;
          target.right = r;
          break;
        }
        case Move::stump:
          make_stump(tree, v, split);
          break;
        case Move::lookahead:
          make_stump(tree, v, look.root);
          for (int side = 0; side < 2; ++side) {
            const int child = side == 0 ? tree.nodes[v].left : tree.nodes[v].right;
            if (look.child[side].found()) make_stump(tree, child, look.child[side]);
          }
          break;
        case Move::none:
          break;
      }
      search.assign(tree);
      search.relabel(tree);
      objective = search.subtree_cost(tree, tree.root);
      out.trace.push_back(objective);
      improved = true;
    }
    if (!improved) break;
  }
  out.tree = std::move(tree);
  out.objective = objective;
  return out;
}

void check_start(const WTree& tree, const Search& search, const Problem& pb) {
  for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
    const WNode& n = tree.nodes[id];
    if (!n.alive) continue;
    if (search.depth(static_cast<int>(id)) > pb.max_depth) {
      throw InvalidArgument("coordinate_descent: start tree exceeds max_depth");
    }
    if (n.leaf && search.members(static_cast<int>(id)).size() < pb.min_leaf &&
        !(static_cast<int>(id) == tree.root)) {
      throw InvalidArgument("coordinate_descent: start tree has a leaf below min_samples_leaf");
    }
  }
}

}  // namespace

double penalized_objective(const PolicyTree& tree, const Cohort& cohort,
                           const RewardMatrix& reward, double lambda) {
  return policy_objective(tree, cohort, reward) +
         lambda * static_cast<double>(tree.internal_count()) * reward.mean_abs();
}

PolicyTree greedy_policy_tree(const Cohort& cohort, const RewardMatrix& reward,
                              const DescentSettings& settings, double feature_fraction) {
  if (!(feature_fraction > 0.0 && feature_fraction <= 1.0)) {
    throw InvalidArgument("greedy_policy_tree: feature_fraction must lie in (0, 1]");
  }
  Problem pb(cohort, reward);
  pb.min_leaf = std::max<std::size_t>(1, settings.min_samples_leaf);
  pb.max_depth = settings.max_depth;
  Search search(pb, settings.lambda);
  Rng rng(settings.seed);
  WTree tree = greedy(search, pb, feature_fraction, rng);
  search.assign(tree);
  return to_policy(tree, search, cohort);
}

DescentResult coordinate_descent(const Cohort& cohort, const RewardMatrix& reward,
                                 const PolicyTree& start, const DescentSettings& settings) {
  Problem pb(cohort, reward);
  pb.min_leaf = std::max<std::size_t>(1, settings.min_samples_leaf);
  pb.max_depth = settings.max_depth;
  Search search(pb, settings.lambda);
  WTree tree = from_policy(start.bind(cohort.schema()));
  search.assign(tree);
  check_start(tree, search, pb);
  Rng rng(settings.seed);
  auto outcome = descend(search, pb, std::move(tree), settings.max_passes, rng);
  search.assign(outcome.tree);
  return {to_policy(outcome.tree, search, cohort), outcome.objective,
          std::move(outcome.trace), outcome.passes};
}

PolicyFit fit_policy_tree(const Cohort& train, const RewardMatrix& reward,
                          const OptConfig& config, const Matrix* estimates) {
  config.validate();
  reward.check_aligned(train);
  const std::size_t n = train.size();

  if (n < config.min_samples_leaf) {
    Problem pb(train, reward);
    std::size_t best = 0;
    double best_sum = kInf;
    for (std::size_t t = 0; t < pb.k; ++t) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += pb.gamma(i, t);
      if (s < best_sum) {
        best_sum = s;
        best = t;
      }
    }
    auto tree = PolicyTree::constant(train.schema(), train.treatments(), best, n)
                    .with_leaf_stats(train, estimates);
    PolicyFit fit{std::move(tree), 0.0, {}, n, 0, {}};
    fit.warnings.push_back("training cohort has " + std::to_string(n) +
                           " rows, fewer than min_samples_leaf = " +
                           std::to_string(config.min_samples_leaf) +
                           "; returning a single-leaf tree");
    return fit;
  }

  std::vector<std::size_t> search_rows(n);
  std::iota(search_rows.begin(), search_rows.end(), std::size_t{0});
  std::vector<std::size_t> validation_rows;
  std::vector<std::string> warnings;
  if (config.complexity_grid.size() > 1) {
    const auto n_val = static_cast<std::size_t>(
        std::llround(static_cast<double>(n) * config.validation_fraction));
    if (n_val >= 1 && n - n_val >= config.min_samples_leaf) {
      Rng rng(derive_seed(config.seed, 0));
      const auto perm = permutation(n, rng);
      validation_rows.assign(perm.begin(), perm.begin() + static_cast<long>(n_val));
      search_rows.assign(perm.begin() + static_cast<long>(n_val), perm.end());
      std::sort(validation_rows.begin(), validation_rows.end());
      std::sort(search_rows.begin(), search_rows.end());
    } else {
      warnings.push_back("too few rows to withhold a validation set; using lambda = 0");
    }
  }

  const Cohort search_cohort = train.subset(search_rows);
  const RewardMatrix search_reward = reward.select_rows(search_rows);
  Problem pb(search_cohort, search_reward);
  pb.min_leaf = config.min_samples_leaf;
  pb.max_depth = config.max_depth;

  std::vector<ComplexityResult> grid;
  std::vector<PolicyTree> trees;
  for (std::size_t g = 0; g < config.complexity_grid.size(); ++g) {
    const double lambda = config.complexity_grid[g];
    if (config.complexity_grid.size() > 1 && validation_rows.empty() && lambda != 0.0) {
      continue;
    }
    Search search(pb, lambda);
    std::optional<DescentOutcome> best;
    std::size_t best_restart = 0;
    for (std::size_t r = 0; r < config.n_restarts; ++r) {
      Rng rng(derive_seed(derive_seed(config.seed, 1 + g), r));
      WTree start = greedy(search, pb, r == 0 ? 1.0 : 0.5, rng);
      auto outcome = descend(search, pb, std::move(start), config.max_passes, rng);
      if (!best || outcome.objective < best->objective - tolerance(best->objective)) {
        best = std::move(outcome);
        best_restart = r;
      }
    }
    search.assign(best->tree);
    PolicyTree tree = to_policy(best->tree, search, search_cohort);
    ComplexityResult result;
    result.lambda = lambda;
    result.train_objective = best->objective;
    result.internal_nodes = tree.internal_count();
    result.best_restart = best_restart;
    if (!validation_rows.empty()) {
      const Cohort val = train.subset(validation_rows);
      result.validation_objective =
          policy_objective(tree, val, reward.select_rows(validation_rows));
    }
    grid.push_back(result);
    trees.push_back(std::move(tree));
  }

  std::size_t chosen = 0;
  for (std::size_t g = 1; g < grid.size(); ++g) {
    if (!grid[g].validation_objective) continue;
    const double best = *grid[chosen].validation_objective;
    if (*grid[g].validation_objective <= best + tolerance(best)) chosen = g;
  }

  PolicyTree final_tree = trees[chosen]
                              .with_prescriptions(train, reward)
                              .with_leaf_stats(train, estimates);
  return {std::move(final_tree), grid[chosen].lambda, std::move(grid),
          search_rows.size(), validation_rows.size(), std::move(warnings)};
}

PolicyTree exhaustive_policy_search(const Cohort& train, const RewardMatrix& reward,
                                    std::size_t max_depth, std::size_t min_samples_leaf,
                                    double lambda) {
  if (max_depth > 2) throw InvalidArgument("exhaustive_policy_search: max_depth must be <= 2");
  if (train.size() > 500 || train.schema().size() > 8) {
    throw InvalidArgument(
        "exhaustive_policy_search: instance too large (limit 500 rows, 8 features)");
  }
  const Problem pb(train, reward);
  const std::size_t k = pb.k;
  const std::size_t min_leaf = std::max<std::size_t>(1, min_samples_leaf);
  const double penalty = lambda * pb.scale;

  struct Rule {
    std::size_t feature = 0;
    bool categorical = false;
    double threshold = 0.0;
    std::size_t level = 0;
  };
  auto left_of = [&](const Rule& rule, std::size_t r) {
    const double v = pb.x(r, rule.feature);
    return rule.categorical ? static_cast<std::size_t>(v) == rule.level : v < rule.threshold;
  };
  // All admissible single splits of `rows` (both sides >= min_leaf).
  auto candidates = [&](const std::vector<std::size_t>& rows) {
    std::vector<Rule> out;
    for (std::size_t j = 0; j < pb.p; ++j) {
      if (pb.categorical[j]) {
        for (std::size_t level = 0; level < pb.levels[j]; ++level) {
          std::size_t left = 0;
          for (auto r : rows) left += static_cast<std::size_t>(pb.x(r, j)) == level;
          if (left >= min_leaf && rows.size() - left >= min_leaf) {
            out.push_back({j, true, 0.0, level});
          }
        }
        continue;
      }
      std::vector<double> values;
      for (auto r : rows) values.push_back(pb.x(r, j));
      std::sort(values.begin(), values.end());
      for (std::size_t q = 1; q < values.size(); ++q) {
        if (values[q] > values[q - 1] && q >= min_leaf && values.size() - q >= min_leaf) {
          out.push_back({j, false, midpoint(values[q - 1], values[q]), 0});
        }
      }
    }
    return out;
  };
  auto leaf = [&](const std::vector<std::size_t>& rows) {
    std::vector<double> sums(k, 0.0);
    for (auto r : rows) {
      for (std::size_t t = 0; t < k; ++t) sums[t] += pb.gamma(r, t);
    }
    const auto it = std::min_element(sums.begin(), sums.end());
    return std::pair{*it, static_cast<std::size_t>(it - sums.begin())};
  };
  auto divide = [&](const std::vector<std::size_t>& rows, const Rule& rule) {
    std::pair<std::vector<std::size_t>, std::vector<std::size_t>> parts;
    for (auto r : rows) (left_of(rule, r) ? parts.first : parts.second).push_back(r);
    return parts;
  };

  struct Plan {
    double cost = kInf;
    std::optional<Rule> rule;
    std::vector<Plan> children;
  };
  // Best leaf-or-single-split plan by a sorted prefix-sum sweep per feature.
  auto best_depth1 = [&](const std::vector<std::size_t>& rows) -> Plan {
    Plan best;
    best.cost = leaf(rows).first;
    std::vector<double> total(k, 0.0);
    for (auto r : rows) {
      for (std::size_t t = 0; t < k; ++t) total[t] += pb.gamma(r, t);
    }
    auto side_min = [&](const std::vector<double>& sums) {
      return *std::min_element(sums.begin(), sums.end());
    };
    for (std::size_t j = 0; j < pb.p; ++j) {
      if (pb.categorical[j]) {
        for (std::size_t level = 0; level < pb.levels[j]; ++level) {
          std::vector<double> left(k, 0.0);
          std::size_t count = 0;
          for (auto r : rows) {
            if (static_cast<std::size_t>(pb.x(r, j)) != level) continue;
            ++count;
            for (std::size_t t = 0; t < k; ++t) left[t] += pb.gamma(r, t);
          }
          if (count < min_leaf || rows.size() - count < min_leaf) continue;
          std::vector<double> right(k);
          for (std::size_t t = 0; t < k; ++t) right[t] = total[t] - left[t];
          const double cost = penalty + side_min(left) + side_min(right);
          if (cost < best.cost - tolerance(best.cost)) {
            best.cost = cost;
            best.rule = Rule{j, true, 0.0, level};
          }
        }
        continue;
      }
      std::vector<std::size_t> sorted = rows;
      std::sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) {
        return pb.x(a, j) < pb.x(b, j);
      });
      std::vector<double> left(k, 0.0);
      std::vector<double> right(k);
      for (std::size_t q = 1; q < sorted.size(); ++q) {
        for (std::size_t t = 0; t < k; ++t) left[t] += pb.gamma(sorted[q - 1], t);
        const double lo = pb.x(sorted[q - 1], j);
        const double hi = pb.x(sorted[q], j);
        if (!(hi > lo) || q < min_leaf || sorted.size() - q < min_leaf) continue;
        for (std::size_t t = 0; t < k; ++t) right[t] = total[t] - left[t];
        const double cost = penalty + side_min(left) + side_min(right);
        if (cost < best.cost - tolerance(best.cost)) {
          best.cost = cost;
          best.rule = Rule{j, false, midpoint(lo, hi), 0};
        }
      }
    }
    if (best.rule) best.children = {Plan{}, Plan{}};
    return best;
  };
  auto best_plan = [&](const std::vector<std::size_t>& rows, std::size_t depth) -> Plan {
    if (depth == 0) {
      Plan p;
      p.cost = leaf(rows).first;
      return p;
    }
    Plan best = best_depth1(rows);
    if (depth == 1) return best;
    for (const Rule& rule : candidates(rows)) {
      const auto [l, r] = divide(rows, rule);
      Plan left = best_depth1(l);
      Plan right = best_depth1(r);
      const double cost = penalty + left.cost + right.cost;
      if (cost < best.cost - tolerance(best.cost)) {
        best.cost = cost;
        best.rule = rule;
        best.children = {std::move(left), std::move(right)};
      }
    }
    return best;
  };
  std::vector<std::size_t> all(pb.n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const Plan plan = best_plan(all, max_depth);

  std::vector<PolicyNode> nodes;
  auto emit = [&](auto&& self, const Plan& p, const std::vector<std::size_t>& rows)
      -> std::size_t {
    const std::size_t id = nodes.size();
    nodes.emplace_back();
    if (!p.rule) {
      nodes[id] = PolicyNode::make_leaf(leaf(rows).second, rows.size());
      return id;
    }
    const auto [l, r] = divide(rows, *p.rule);
    const std::size_t left = self(self, p.children[0], l);
    const std::size_t right = self(self, p.children[1], r);
    nodes[id] = p.rule->categorical
                    ? PolicyNode::make_categorical(p.rule->feature, {p.rule->level}, left, right)
                    : PolicyNode::make_numeric(p.rule->feature, p.rule->threshold, left, right);
    return id;
  };
  emit(emit, plan, all);
  return PolicyTree(train.schema(), train.treatments(), std::move(nodes), 0);
}

}  // namespace rxtree
