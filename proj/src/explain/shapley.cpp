#include "gridlens/explain/shapley.h"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "gridlens/mlp.h"

namespace gridlens::explain {

namespace {

void check_shapes(std::span<const double> instance, std::span<const double> background) {
  if (instance.size() != background.size()) throw std::invalid_argument("instance and background sizes differ");
  if (instance.empty()) throw std::invalid_argument("no features to attribute");
}

Eigen::VectorXd evaluate(const BatchModel& model, const Eigen::MatrixXd& rows) {
  Eigen::VectorXd out = model(rows);
  if (out.size() != rows.rows()) throw std::runtime_error("model returned the wrong number of outputs");
  return out;
}

}  // namespace

double ShapAttribution::efficiency_gap() const {
  return std::abs(baseline + std::accumulate(values.begin(), values.end(), 0.0) - output);
}

void to_json(nlohmann::json& j, const ShapAttribution& a) {
  j = {{"target", a.target},
       {"feature_names", a.feature_names},
       {"values", a.values},
       {"baseline", a.baseline},
       {"output", a.output},
       {"exact", a.exact}};
}

void from_json(const nlohmann::json& j, ShapAttribution& a) {
  a.target = j.value("target", std::string());
  a.feature_names = j.value("feature_names", std::vector<std::string>{});
  j.at("values").get_to(a.values);
  j.at("baseline").get_to(a.baseline);
  j.at("output").get_to(a.output);
  a.exact = j.value("exact", true);
}

ShapAttribution exact_shapley(const BatchModel& model, std::span<const double> instance,
                              std::span<const double> background) {
  check_shapes(instance, background);
  const int n = static_cast<int>(instance.size());
  if (n > kMaxExactFeatures) {
    throw std::invalid_argument("exact Shapley supports at most " + std::to_string(kMaxExactFeatures) +
                                " features; use sampled_shapley for " + std::to_string(n));
  }
  const std::size_t coalitions = std::size_t{1} << n;
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(coalitions), n);
  for (std::size_t mask = 0; mask < coalitions; ++mask) {
    for (int f = 0; f < n; ++f) {
      rows(static_cast<Eigen::Index>(mask), f) = (mask >> f) & 1U ? instance[f] : background[f];
    }
  }
  const Eigen::VectorXd v = evaluate(model, rows);

  // weight[s] = s! (n - s - 1)! / n!
  std::vector<double> weight(n);
  for (int s = 0; s < n; ++s) {
    weight[s] = std::exp(std::lgamma(s + 1.0) + std::lgamma(n - s) - std::lgamma(n + 1.0));
  }

  ShapAttribution out;
  out.values.assign(n, 0.0);
  for (std::size_t mask = 0; mask < coalitions; ++mask) {
    const int size = std::popcount(mask);
    for (int f = 0; f < n; ++f) {
      if ((mask >> f) & 1U) continue;
      const std::size_t with = mask | (std::size_t{1} << f);
      out.values[f] += weight[size] * (v(static_cast<Eigen::Index>(with)) - v(static_cast<Eigen::Index>(mask)));
    }
  }
  out.baseline = v(0);
  out.output = v(static_cast<Eigen::Index>(coalitions - 1));
  out.exact = true;
  return out;
}

ShapAttribution sampled_shapley(const BatchModel& model, std::span<const double> instance,
                                std::span<const double> background, int n_samples, std::uint64_t seed) {
  check_shapes(instance, background);
  if (n_samples < 100) throw std::invalid_argument("sampled Shapley needs at least 100 permutations");
  const int n = static_cast<int>(instance.size());
  Rng rng(seed);

  ShapAttribution out;
  out.values.assign(n, 0.0);
  out.exact = false;
  {
    Eigen::MatrixXd ends(2, n);
    for (int f = 0; f < n; ++f) {
      ends(0, f) = background[f];
      ends(1, f) = instance[f];
    }
    const Eigen::VectorXd v = evaluate(model, ends);
    out.baseline = v(0);
    out.output = v(1);
  }

  constexpr int kChunk = 64;
  std::vector<int> order(n);
  for (int done = 0; done < n_samples; done += kChunk) {
    const int count = std::min(kChunk, n_samples - done);
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(count) * n, n);
    std::vector<std::vector<int>> orders;
    for (int p = 0; p < count; ++p) {
      std::iota(order.begin(), order.end(), 0);
      for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.index(static_cast<std::size_t>(i) + 1)]);
      Eigen::RowVectorXd x(n);
      for (int f = 0; f < n; ++f) x(f) = background[f];
      for (int k = 0; k < n; ++k) {
        x(order[k]) = instance[order[k]];
        rows.row(static_cast<Eigen::Index>(p) * n + k) = x;
      }
      orders.push_back(order);
    }
    const Eigen::VectorXd v = evaluate(model, rows);
    for (int p = 0; p < count; ++p) {
      double prev = out.baseline;
      for (int k = 0; k < n; ++k) {
        const double cur = v(static_cast<Eigen::Index>(p) * n + k);
        out.values[orders[p][k]] += cur - prev;
        prev = cur;
      }
    }
  }
  for (double& value : out.values) value /= n_samples;

  const double residual = out.output - out.baseline - std::accumulate(out.values.begin(), out.values.end(), 0.0);
  double mass = 0.0;
  for (double value : out.values) mass += std::abs(value);
  if (mass > 0.0) {
    for (double& value : out.values) value += residual * std::abs(value) / mass;
  }
  return out;
}

}  // namespace gridlens::explain
