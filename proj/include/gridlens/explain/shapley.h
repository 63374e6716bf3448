#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace gridlens::explain {

/// Evaluates a model on every row of a feature matrix.
using BatchModel = std::function<Eigen::VectorXd(const Eigen::MatrixXd&)>;

inline constexpr int kMaxExactFeatures = 15;

struct ShapAttribution {
  std::string target;  // e.g. "critic A1", "actor A1"
  std::vector<std::string> feature_names;
  std::vector<double> values;
  double baseline = 0.0;  // model output at the background point
  double output = 0.0;    // model output at the instance
  bool exact = true;

  /// |baseline + sum(values) - output|
  double efficiency_gap() const;
};

void to_json(nlohmann::json& j, const ShapAttribution& a);
void from_json(const nlohmann::json& j, ShapAttribution& a);

/// Classic Shapley values by enumerating all 2^n coalitions. Features outside a
/// coalition take their background value. Throws for more than kMaxExactFeatures.
ShapAttribution exact_shapley(const BatchModel& model, std::span<const double> instance,
                              std::span<const double> background);

/// Permutation-sampling estimate over n_samples random feature orderings.
/// Deterministic for a fixed seed; residual efficiency error is spread in
/// proportion to |value|.
ShapAttribution sampled_shapley(const BatchModel& model, std::span<const double> instance,
                                std::span<const double> background, int n_samples, std::uint64_t seed);

}  // namespace gridlens::explain
