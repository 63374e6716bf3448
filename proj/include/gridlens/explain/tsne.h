#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace gridlens::explain {

struct TsneParams {
  double perplexity = 30.0;
  int iterations = 1000;
  std::uint64_t seed = 0;
  double learning_rate = 200.0;
  double early_exaggeration = 12.0;
  int exaggeration_iterations = 250;

  bool operator==(const TsneParams&) const = default;
};

void to_json(nlohmann::json& j, const TsneParams& p);
void from_json(const nlohmann::json& j, TsneParams& p);

struct Embedding {
  Eigen::MatrixXd coords;           // n x 2
  double kl = 0.0;                  // final KL(P || Q)
  std::vector<double> kl_history;   // per iteration over the final 100 (post-exaggeration)
  bool jittered = false;            // input was degenerate
};

/// Exact t-SNE (O(n^2) affinities and gradients). Identical input rows share
/// their initial position and therefore their final position. When every row is
/// identical a tiny seeded jitter is added so affinities are defined.
Embedding tsne_project(const Eigen::MatrixXd& points, const TsneParams& params);

/// Mean silhouette coefficient of the rows under Euclidean distance. Points in
/// singleton clusters contribute 0.
double silhouette_score(const Eigen::MatrixXd& points, const std::vector<int>& labels);

/// Per-column z-score; zero-variance columns map to 0.
Eigen::MatrixXd zscore_columns(const Eigen::MatrixXd& x);

}  // namespace gridlens::explain
