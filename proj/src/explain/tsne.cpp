#include "gridlens/explain/tsne.h"

#include <cmath>
#include <limits>
#include <map>
#include <utility>
#include <vector>
#include <stdexcept>

#include "gridlens/mlp.h"

namespace gridlens::explain {

namespace {

constexpr int kKlWindow = 100;

double normal(Rng& rng) {
  const double u1 = rng.uniform();
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::acos(-1.0) * u2);
}

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x) {
  const Eigen::VectorXd norms = x.rowwise().squaredNorm();
  Eigen::MatrixXd d = (-2.0 * x * x.transpose()).colwise() + norms;
  d.rowwise() += norms.transpose();
  d = d.cwiseMax(0.0);
  d.diagonal().setZero();
  return d;
}

// Row-conditional affinities with per-point bandwidth matched to the perplexity.
Eigen::MatrixXd conditional_affinities(const Eigen::MatrixXd& d2, double perplexity) {
  const auto n = d2.rows();
  const double target = std::log(perplexity);
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd row(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0;
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 200; ++iter) {
      double sum = 0.0;
      double weighted = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        row(j) = j == i ? 0.0 : std::exp(-beta * d2(i, j));
        sum += row(j);
        weighted += row(j) * d2(i, j);
      }
      if (sum <= 0.0) {
        hi = beta;
        beta = (lo + hi) / 2.0;
        continue;
      }
      const double entropy = std::log(sum) + beta * weighted / sum;
      const double diff = entropy - target;
      row /= sum;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0.0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : (lo + hi) / 2.0;
      } else {
        hi = beta;
        beta = (lo + hi) / 2.0;
      }
    }
    p.row(i) = row.transpose();
  }
  return p;
}

double kl_divergence(const Eigen::MatrixXd& p, const Eigen::MatrixXd& q) {
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      if (i != j && p(i, j) > 0.0) kl += p(i, j) * std::log(p(i, j) / std::max(q(i, j), 1e-300));
    }
  }
  return kl;
}

}  // namespace

void to_json(nlohmann::json& j, const TsneParams& p) {
  j = {{"perplexity", p.perplexity},
       {"iterations", p.iterations},
       {"seed", p.seed},
       {"learning_rate", p.learning_rate},
       {"early_exaggeration", p.early_exaggeration},
       {"exaggeration_iterations", p.exaggeration_iterations}};
}

void from_json(const nlohmann::json& j, TsneParams& p) {
  p.perplexity = j.value("perplexity", p.perplexity);
  p.iterations = j.value("iterations", p.iterations);
  p.seed = j.value("seed", p.seed);
  p.learning_rate = j.value("learning_rate", p.learning_rate);
  p.early_exaggeration = j.value("early_exaggeration", p.early_exaggeration);
  p.exaggeration_iterations = j.value("exaggeration_iterations", p.exaggeration_iterations);
}

Embedding tsne_project(const Eigen::MatrixXd& points, const TsneParams& params) {
  const auto n = points.rows();
  if (n < 5) throw std::invalid_argument("t-SNE needs at least 5 points");
  if (!(params.perplexity > 0.0) || params.perplexity >= static_cast<double>(n) / 3.0) {
    throw std::invalid_argument("perplexity must be positive and below point count / 3");
  }
  if (params.iterations < 1 || params.learning_rate <= 0.0) throw std::invalid_argument("invalid t-SNE parameters");
  if (!points.allFinite()) throw std::invalid_argument("t-SNE input must be finite");

  Rng rng(params.seed);
  Embedding out;
  Eigen::MatrixXd x = points;
  Eigen::MatrixXd d2 = squared_distances(x);
  if (d2.maxCoeff() == 0.0) {
    out.jittered = true;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index k = 0; k < x.cols(); ++k) x(i, k) += 1e-6 * normal(rng);
    }
    d2 = squared_distances(x);
  }

  Eigen::MatrixXd p = conditional_affinities(d2, params.perplexity);
  p = (p + p.transpose().eval()) / (2.0 * static_cast<double>(n));
  p = p.cwiseMax(1e-12);
  p.diagonal().setZero();
  p /= p.sum();

  // Duplicate rows have identical gradients; they are tied to their first
  // occurrence so rounding differences cannot pull them apart.
  Eigen::MatrixXd y(n, 2);
  std::vector<std::pair<Eigen::Index, Eigen::Index>> ties;
  std::map<std::vector<double>, Eigen::Index> first;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> key(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index k = 0; k < x.cols(); ++k) key[k] = x(i, k);
    const auto [it, fresh] = first.emplace(std::move(key), i);
    if (fresh) {
      y(i, 0) = 1e-4 * normal(rng);
      y(i, 1) = 1e-4 * normal(rng);
    } else {
      y.row(i) = y.row(it->second);
      ties.emplace_back(i, it->second);
    }
  }
  auto tie = [&](Eigen::MatrixXd& m) {
    for (const auto& [dup, rep] : ties) m.row(dup) = m.row(rep);
  };

  Eigen::MatrixXd update = Eigen::MatrixXd::Zero(n, 2);
  Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(n, 2);
  auto kernel = [&](const Eigen::MatrixXd& at) {
    Eigen::MatrixXd num = (1.0 + squared_distances(at).array()).inverse().matrix();
    num.diagonal().setZero();
    return num;
  };
  auto kl_at = [&](const Eigen::MatrixXd& k) { return kl_divergence(p, k / k.sum()); };
  auto gradient = [&](const Eigen::MatrixXd& k, double scale) {
    const Eigen::MatrixXd w = ((scale * p - k / k.sum()).array() * k.array()).matrix();
    const Eigen::VectorXd wsum = w.rowwise().sum();
    return Eigen::MatrixXd(4.0 * (wsum.asDiagonal() * y - w * y));
  };

  // The final window (after exaggeration) is a monotone descent: momentum is
  // dropped and each step is halved until KL does not increase.
  const int polish_from = std::max(params.exaggeration_iterations, params.iterations - kKlWindow);
  Eigen::MatrixXd num = kernel(y);
  double step = params.learning_rate;
  double kl = 0.0;
  for (int iter = 0; iter < params.iterations; ++iter) {
    const bool exaggerating = iter < params.exaggeration_iterations;
    const Eigen::MatrixXd grad = gradient(num, exaggerating ? params.early_exaggeration : 1.0);

    if (iter >= polish_from) {
      if (iter == polish_from) kl = kl_at(num);
      const Eigen::MatrixXd dir = gains.cwiseProduct(grad);
      step = std::min(params.learning_rate, step * 2.0);
      for (int halvings = 0; halvings < 60; ++halvings, step /= 2.0) {
        Eigen::MatrixXd cand = y - step * dir;
        tie(cand);
        cand.rowwise() -= cand.colwise().mean();
        const Eigen::MatrixXd cand_num = kernel(cand);
        const double cand_kl = kl_at(cand_num);
        if (cand_kl <= kl) {
          y = std::move(cand);
          num = cand_num;
          kl = cand_kl;
          break;
        }
      }
      out.kl_history.push_back(kl);
      continue;
    }

    const double momentum = exaggerating ? 0.5 : 0.8;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int k = 0; k < 2; ++k) {
        const bool same_sign = (grad(i, k) > 0.0) == (update(i, k) > 0.0);
        gains(i, k) = same_sign ? std::max(gains(i, k) * 0.8, 0.01) : gains(i, k) + 0.2;
      }
    }
    tie(gains);
    update = momentum * update - params.learning_rate * gains.cwiseProduct(grad);
    tie(update);
    y += update;
    y.rowwise() -= y.colwise().mean();
    num = kernel(y);
  }
  if (out.kl_history.empty()) out.kl_history.push_back(kl_at(num));
  out.coords = y;
  out.kl = out.kl_history.back();
  if (!out.coords.allFinite()) throw std::runtime_error("t-SNE diverged");
  return out;
}

double silhouette_score(const Eigen::MatrixXd& points, const std::vector<int>& labels) {
  const auto n = points.rows();
  if (static_cast<std::size_t>(n) != labels.size()) throw std::invalid_argument("label count mismatch");
  if (n < 2) throw std::invalid_argument("silhouette needs at least 2 points");
  std::map<int, int> sizes;
  for (int l : labels) ++sizes[l];
  if (sizes.size() < 2) throw std::invalid_argument("silhouette needs at least 2 clusters");
  const Eigen::MatrixXd d = squared_distances(points).cwiseSqrt();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (sizes[labels[i]] == 1) continue;
    std::map<int, double> sum;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) sum[labels[j]] += d(i, j);
    }
    const double a = sum[labels[i]] / (sizes[labels[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [label, s] : sum) {
      if (label != labels[i]) b = std::min(b, s / sizes[label]);
    }
    const double m = std::max(a, b);
    total += m > 0.0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(n);
}

Eigen::MatrixXd zscore_columns(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd z = x;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double mean = x.col(c).mean();
    const double sd = std::sqrt((x.col(c).array() - mean).square().mean());
    if (sd > 0.0) {
      z.col(c) = ((x.col(c).array() - mean) / sd).matrix();
    } else {
      z.col(c).setZero();
    }
  }
  return z;
}

}  // namespace gridlens::explain
