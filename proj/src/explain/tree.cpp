#include "gridlens/explain/tree.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace gridlens::explain {

namespace {

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

double sse(double sum, double sumsq, double n) { return std::max(0.0, sumsq - sum * sum / n); }

}  // namespace

void to_json(nlohmann::json& j, const TreeParams& p) { j = {{"max_depth", p.max_depth}, {"min_leaf", p.min_leaf}}; }

void from_json(const nlohmann::json& j, TreeParams& p) {
  p.max_depth = j.value("max_depth", p.max_depth);
  p.min_leaf = j.value("min_leaf", p.min_leaf);
}

std::string to_string(TreeTarget t) { return t == TreeTarget::CriticValue ? "critic_value" : "we_probability"; }

TreeTarget tree_target_from_string(const std::string& s) {
  if (s == "critic_value") return TreeTarget::CriticValue;
  if (s == "we_probability") return TreeTarget::WeProbability;
  throw std::invalid_argument("unknown tree target: " + s);
}

RegressionTree RegressionTree::fit(const Eigen::MatrixXd& inputs, std::span<const double> targets,
                                   const TreeParams& params, std::vector<std::string> feature_names,
                                   TreeTarget target) {
  const auto n = static_cast<int>(inputs.rows());
  const auto d = static_cast<int>(inputs.cols());
  if (n == 0 || targets.empty()) throw std::invalid_argument("cannot fit a tree on empty input");
  if (static_cast<std::size_t>(n) != targets.size()) throw std::invalid_argument("inputs and targets differ in length");
  if (params.min_leaf < 1 || params.max_depth < 0) throw std::invalid_argument("invalid tree parameters");
  if (n < params.min_leaf) throw std::invalid_argument("fewer samples than min_leaf");
  if (feature_names.empty()) {
    for (int f = 0; f < d; ++f) feature_names.push_back("x" + std::to_string(f));
  }
  if (static_cast<int>(feature_names.size()) != d) throw std::invalid_argument("feature name count mismatch");

  RegressionTree tree;
  tree.params_ = params;
  tree.target_ = target;
  tree.feature_names_ = std::move(feature_names);
  for (int f = 0; f < d; ++f) {
    tree.feature_min_.push_back(inputs.col(f).minCoeff());
    tree.feature_max_.push_back(inputs.col(f).maxCoeff());
  }
  tree.target_min_ = *std::min_element(targets.begin(), targets.end());
  tree.target_max_ = *std::max_element(targets.begin(), targets.end());

  auto summarize = [&](const std::vector<int>& idx) {
    LeafSummary s;
    s.histogram.assign(LeafSummary::kHistogramBins, 0);
    double sum = 0.0;
    s.min = std::numeric_limits<double>::infinity();
    s.max = -std::numeric_limits<double>::infinity();
    for (int i : idx) {
      const double y = targets[i];
      sum += y;
      s.min = std::min(s.min, y);
      s.max = std::max(s.max, y);
      int bin = 0;
      if (tree.target_max_ > tree.target_min_) {
        bin = static_cast<int>((y - tree.target_min_) / (tree.target_max_ - tree.target_min_) * LeafSummary::kHistogramBins);
        bin = std::clamp(bin, 0, LeafSummary::kHistogramBins - 1);
      }
      ++s.histogram[bin];
    }
    s.mean = sum / static_cast<double>(idx.size());
    double var = 0.0;
    for (int i : idx) var += (targets[i] - s.mean) * (targets[i] - s.mean);
    s.stddev = std::sqrt(var / static_cast<double>(idx.size()));
    return s;
  };

  auto best_split = [&](const std::vector<int>& idx) {
    const auto m = static_cast<double>(idx.size());
    double sum = 0.0;
    double sumsq = 0.0;
    for (int i : idx) {
      sum += targets[i];
      sumsq += targets[i] * targets[i];
    }
    const double parent = sse(sum, sumsq, m);
    const double tol = 1e-12 * std::max(1.0, parent);
    Split best;
    std::vector<int> order = idx;
    for (int f = 0; f < d; ++f) {
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double xa = inputs(a, f);
        const double xb = inputs(b, f);
        return xa < xb || (xa == xb && a < b);
      });
      double ls = 0.0;
      double lsq = 0.0;
      for (std::size_t k = 0; k + 1 < order.size(); ++k) {
        const double y = targets[order[k]];
        ls += y;
        lsq += y * y;
        const auto nl = static_cast<int>(k + 1);
        const auto nr = static_cast<int>(order.size()) - nl;
        if (nl < params.min_leaf) continue;
        if (nr < params.min_leaf) break;
        const double xl = inputs(order[k], f);
        const double xr = inputs(order[k + 1], f);
        if (!(xl < xr)) continue;
        const double gain = parent - sse(ls, lsq, nl) - sse(sum - ls, sumsq - lsq, nr);
        if (gain > best.gain + tol) {
          double thr = 0.5 * (xl + xr);
          if (thr >= xr) thr = xl;
          best = {f, thr, gain};
        }
      }
    }
    return best;
  };

  std::function<int(std::vector<int>, int)> grow = [&](std::vector<int> idx, int depth) {
    const int id = static_cast<int>(tree.nodes_.size());
    tree.nodes_.emplace_back();
    TreeNode node;
    node.samples = static_cast<int>(idx.size());
    double sum = 0.0;
    node.value_min = std::numeric_limits<double>::infinity();
    node.value_max = -std::numeric_limits<double>::infinity();
    for (int i : idx) {
      sum += targets[i];
      node.value_min = std::min(node.value_min, targets[i]);
      node.value_max = std::max(node.value_max, targets[i]);
    }
    node.value = sum / static_cast<double>(idx.size());

    Split split;
    if (depth < params.max_depth && node.samples >= 2 * params.min_leaf) split = best_split(idx);
    if (split.feature < 0) {
      node.leaf = true;
      node.summary = summarize(idx);
      tree.nodes_[id] = node;
      return id;
    }
    std::vector<int> left;
    std::vector<int> right;
    for (int i : idx) (inputs(i, split.feature) <= split.threshold ? left : right).push_back(i);
    node.leaf = false;
    node.feature = split.feature;
    node.threshold = split.threshold;
    tree.nodes_[id] = node;
    const int l = grow(std::move(left), depth + 1);
    const int r = grow(std::move(right), depth + 1);
    tree.nodes_[id].left = l;
    tree.nodes_[id].right = r;
    return id;
  };

  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  grow(std::move(all), 0);
  return tree;
}

int RegressionTree::leaf_of(std::span<const double> x) const {
  if (nodes_.empty()) throw std::logic_error("tree has no nodes");
  int id = 0;
  while (!nodes_[id].leaf) {
    const auto& node = nodes_[id];
    if (static_cast<std::size_t>(node.feature) >= x.size()) throw std::invalid_argument("instance is missing split features");
    id = x[node.feature] <= node.threshold ? node.left : node.right;
  }
  return id;
}

double RegressionTree::predict(std::span<const double> x) const { return nodes_[leaf_of(x)].value; }

double RegressionTree::r_squared(const Eigen::MatrixXd& inputs, std::span<const double> targets) const {
  const double mean = std::accumulate(targets.begin(), targets.end(), 0.0) / static_cast<double>(targets.size());
  double ss_res = 0.0;
  double ss_tot = 0.0;
  std::vector<double> row(static_cast<std::size_t>(inputs.cols()));
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    for (Eigen::Index f = 0; f < inputs.cols(); ++f) row[f] = inputs(i, f);
    const double e = targets[i] - predict(row);
    ss_res += e * e;
    ss_tot += (targets[i] - mean) * (targets[i] - mean);
  }
  return ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
}

int RegressionTree::depth() const {
  std::function<int(int)> walk = [&](int id) -> int {
    const auto& node = nodes_[id];
    return node.leaf ? 0 : 1 + std::max(walk(node.left), walk(node.right));
  };
  return nodes_.empty() ? 0 : walk(0);
}

void to_json(nlohmann::json& j, const RegressionTree& t) {
  nlohmann::json nodes = nlohmann::json::array();
  for (std::size_t id = 0; id < t.nodes_.size(); ++id) {
    const auto& n = t.nodes_[id];
    nlohmann::json node = {{"id", id},
                           {"leaf", n.leaf},
                           {"samples", n.samples},
                           {"value", n.value},
                           {"value_min", n.value_min},
                           {"value_max", n.value_max}};
    if (n.leaf) {
      node["summary"] = {{"min", n.summary.min},
                         {"max", n.summary.max},
                         {"mean", n.summary.mean},
                         {"stddev", n.summary.stddev},
                         {"histogram", n.summary.histogram}};
    } else {
      node["feature"] = n.feature;
      node["feature_name"] = t.feature_names_[n.feature];
      node["threshold"] = n.threshold;
      node["left"] = n.left;
      node["right"] = n.right;
    }
    nodes.push_back(std::move(node));
  }
  j = {{"target", to_string(t.target_)},
       {"params", t.params_},
       {"feature_names", t.feature_names_},
       {"feature_min", t.feature_min_},
       {"feature_max", t.feature_max_},
       {"target_range", {t.target_min_, t.target_max_}},
       {"nodes", std::move(nodes)}};
}

void from_json(const nlohmann::json& j, RegressionTree& t) {
  t.target_ = tree_target_from_string(j.at("target").get<std::string>());
  j.at("params").get_to(t.params_);
  j.at("feature_names").get_to(t.feature_names_);
  j.at("feature_min").get_to(t.feature_min_);
  j.at("feature_max").get_to(t.feature_max_);
  t.target_min_ = j.at("target_range").at(0).get<double>();
  t.target_max_ = j.at("target_range").at(1).get<double>();
  t.nodes_.clear();
  for (const auto& jn : j.at("nodes")) {
    TreeNode n;
    n.leaf = jn.at("leaf").get<bool>();
    n.samples = jn.at("samples").get<int>();
    n.value = jn.at("value").get<double>();
    n.value_min = jn.at("value_min").get<double>();
    n.value_max = jn.at("value_max").get<double>();
    if (n.leaf) {
      const auto& s = jn.at("summary");
      n.summary.min = s.at("min").get<double>();
      n.summary.max = s.at("max").get<double>();
      n.summary.mean = s.at("mean").get<double>();
      n.summary.stddev = s.at("stddev").get<double>();
      s.at("histogram").get_to(n.summary.histogram);
    } else {
      n.feature = jn.at("feature").get<int>();
      n.threshold = jn.at("threshold").get<double>();
      n.left = jn.at("left").get<int>();
      n.right = jn.at("right").get<int>();
    }
    t.nodes_.push_back(std::move(n));
  }
}

bool Interval::contains(double x) const {
  const bool above = lo_closed ? x >= lo : x > lo;
  const bool below = hi_closed ? x <= hi : x < hi;
  return above && below;
}

bool Interval::within(const Interval& outer) const {
  const bool lo_ok = lo > outer.lo || (lo == outer.lo && (outer.lo_closed || !lo_closed));
  const bool hi_ok = hi < outer.hi || (hi == outer.hi && (outer.hi_closed || !hi_closed));
  return lo_ok && hi_ok;
}

void to_json(nlohmann::json& j, const Interval& i) {
  j = {{"lo", i.lo}, {"hi", i.hi}, {"lo_closed", i.lo_closed}, {"hi_closed", i.hi_closed}};
}

void to_json(nlohmann::json& j, const Judgment& jd) {
  j = {{"feature", jd.feature},
       {"feature_name", jd.feature_name},
       {"interval", jd.interval},
       {"instance_value", jd.instance_value},
       {"node", jd.node}};
}

void to_json(nlohmann::json& j, const DecisionPath& p) {
  j = {{"judgments", p.judgments},
       {"leaf", p.leaf},
       {"target", to_string(p.target)},
       {"value", p.value},
       {"samples", p.samples},
       {"summary",
        {{"min", p.summary.min},
         {"max", p.summary.max},
         {"mean", p.summary.mean},
         {"stddev", p.summary.stddev},
         {"histogram", p.summary.histogram}}}};
  if (p.action_distribution) {
    j["action_distribution"] = {{"N-S", (*p.action_distribution)[0]}, {"W-E", (*p.action_distribution)[1]}};
  } else {
    j["action_distribution"] = nullptr;
  }
}

DecisionPath extract_decision_path(const RegressionTree& tree, std::span<const double> instance) {
  const auto& nodes = tree.nodes();
  if (nodes.empty()) throw std::logic_error("tree has no nodes");
  std::vector<std::optional<Interval>> bounds(tree.feature_names().size());
  DecisionPath path;
  path.target = tree.target();
  int id = 0;
  while (!nodes[id].leaf) {
    const int here = id;
    const auto& node = nodes[id];
    const auto f = static_cast<std::size_t>(node.feature);
    if (f >= instance.size()) throw std::invalid_argument("instance is missing split features");
    const double x = instance[f];
    if (!bounds[f]) {
      bounds[f] = Interval{std::min(tree.feature_min()[f], x), std::max(tree.feature_max()[f], x), true, true};
    }
    Interval& iv = *bounds[f];
    if (x <= node.threshold) {
      if (node.threshold < iv.hi || (node.threshold == iv.hi && !iv.hi_closed)) {
        iv.hi = node.threshold;
        iv.hi_closed = true;
      }
      id = node.left;
    } else {
      if (node.threshold >= iv.lo) {
        iv.lo = node.threshold;
        iv.lo_closed = false;
      }
      id = node.right;
    }
    path.judgments.push_back({node.feature, tree.feature_names()[f], iv, x, here});
  }
  const auto& leaf = nodes[id];
  path.leaf = id;
  path.value = leaf.value;
  path.samples = leaf.samples;
  path.summary = leaf.summary;
  if (tree.target() == TreeTarget::WeProbability) {
    const double we = std::clamp(leaf.value, 0.0, 1.0);
    path.action_distribution = std::array<double, 2>{1.0 - we, we};
  }
  return path;
}

}  // namespace gridlens::explain
