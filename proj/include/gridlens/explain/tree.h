#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace gridlens::explain {

struct TreeParams {
  int max_depth = 6;
  int min_leaf = 20;

  bool operator==(const TreeParams&) const = default;
};

void to_json(nlohmann::json& j, const TreeParams& p);
void from_json(const nlohmann::json& j, TreeParams& p);

/// Summary of the training targets that reached a leaf. The histogram uses
/// kHistogramBins equal bins over the tree-wide target range, so leaves compare.
struct LeafSummary {
  static constexpr int kHistogramBins = 10;
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<int> histogram;

  bool operator==(const LeafSummary&) const = default;
};

struct TreeNode {
  bool leaf = true;
  int feature = -1;
  double threshold = 0.0;  // x <= threshold goes left
  int left = -1;
  int right = -1;
  int samples = 0;
  double value = 0.0;  // mean target of the samples reaching this node
  double value_min = 0.0;
  double value_max = 0.0;
  LeafSummary summary;  // filled for leaves only

  bool operator==(const TreeNode&) const = default;
};

enum class TreeTarget { CriticValue, WeProbability };

/// CART regression tree stored as a flat node array; node 0 is the root.
class RegressionTree {
 public:
  /// Greedy variance-reduction fit. Ties go to the lowest feature index, then
  /// the lowest threshold.
  static RegressionTree fit(const Eigen::MatrixXd& inputs, std::span<const double> targets, const TreeParams& params,
                            std::vector<std::string> feature_names = {}, TreeTarget target = TreeTarget::CriticValue);

  double predict(std::span<const double> x) const;
  int leaf_of(std::span<const double> x) const;
  /// In-sample coefficient of determination.
  double r_squared(const Eigen::MatrixXd& inputs, std::span<const double> targets) const;
  int depth() const;

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  const std::vector<std::string>& feature_names() const { return feature_names_; }
  const std::vector<double>& feature_min() const { return feature_min_; }
  const std::vector<double>& feature_max() const { return feature_max_; }
  TreeTarget target() const { return target_; }
  const TreeParams& params() const { return params_; }
  double target_min() const { return target_min_; }
  double target_max() const { return target_max_; }

  bool operator==(const RegressionTree&) const = default;

  friend void to_json(nlohmann::json& j, const RegressionTree& t);
  friend void from_json(const nlohmann::json& j, RegressionTree& t);

 private:
  std::vector<TreeNode> nodes_;
  std::vector<std::string> feature_names_;
  std::vector<double> feature_min_;
  std::vector<double> feature_max_;
  double target_min_ = 0.0;
  double target_max_ = 0.0;
  TreeTarget target_ = TreeTarget::CriticValue;
  TreeParams params_;
};

std::string to_string(TreeTarget t);
TreeTarget tree_target_from_string(const std::string& s);

/// Half-open or closed bounds on one feature.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool lo_closed = true;
  bool hi_closed = true;

  bool contains(double x) const;
  bool within(const Interval& outer) const;
  bool operator==(const Interval&) const = default;
};

struct Judgment {
  int feature = 0;
  std::string feature_name;
  Interval interval;  // intersection of all splits on this feature so far
  double instance_value = 0.0;
  int node = 0;

  bool operator==(const Judgment&) const = default;
};

struct DecisionPath {
  std::vector<Judgment> judgments;
  int leaf = 0;
  TreeTarget target = TreeTarget::CriticValue;
  double value = 0.0;
  int samples = 0;
  LeafSummary summary;
  /// N-S / W-E split for actor trees.
  std::optional<std::array<double, 2>> action_distribution;

  bool operator==(const DecisionPath&) const = default;
};

void to_json(nlohmann::json& j, const Interval& i);
void to_json(nlohmann::json& j, const Judgment& jd);
void to_json(nlohmann::json& j, const DecisionPath& p);

/// Root-to-leaf walk. Each judgment carries the feature's interval intersected
/// over every split so far, starting from the observed training range widened
/// to include the instance.
DecisionPath extract_decision_path(const RegressionTree& tree, std::span<const double> instance);

}  // namespace gridlens::explain
