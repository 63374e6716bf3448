#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

namespace gridlens {

/// Deterministic 64-bit generator with platform-independent real draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}
  std::uint64_t next();
  /// Uniform in the open interval (0, 1).
  double uniform();
  std::size_t index(std::size_t n);
  double gumbel();

 private:
  std::uint64_t state_;
};

struct MlpGrad {
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::RowVectorXd> b;

  double norm() const;
  void scale(double s);
  void add(const MlpGrad& other);
};

/// Fully connected network with ReLU hidden layers and a linear output.
/// Rows of the input matrix are samples.
class Mlp {
 public:
  struct Tape {
    std::vector<Eigen::MatrixXd> activations;  // [0] = scaled input, then post-ReLU hidden outputs
  };

  Mlp() = default;
  Mlp(std::vector<int> sizes, Rng& rng, double output_init_scale = 1.0);

  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  const std::vector<int>& sizes() const { return sizes_; }

  /// Fixed per-feature multiplier applied before the first layer; not trained.
  void set_input_scale(Eigen::RowVectorXd scale);
  const Eigen::RowVectorXd& input_scale() const { return input_scale_; }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Tape* tape = nullptr) const;

  /// Gradients of a scalar loss given dLoss/dOutput. Optionally also dLoss/dInput (raw, unscaled input).
  MlpGrad backward(const Tape& tape, const Eigen::MatrixXd& grad_out, Eigen::MatrixXd* grad_input = nullptr) const;

  MlpGrad zero_grad() const;
  void apply_sgd(const MlpGrad& g, double lr);

  std::size_t parameter_count() const;
  std::vector<double> flatten() const;
  void unflatten(const std::vector<double>& params);
  bool all_finite() const;

  void write(std::ostream& out) const;
  static Mlp read(std::istream& in);

  std::vector<Eigen::MatrixXd> weights;       // in x out
  std::vector<Eigen::RowVectorXd> biases;

  bool operator==(const Mlp& other) const;

 private:
  std::vector<int> sizes_;
  Eigen::RowVectorXd input_scale_;
};

struct AdamState {
  MlpGrad m;
  MlpGrad v;
  long t = 0;
};

void adam_step(Mlp& net, AdamState& state, const MlpGrad& g, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

/// Single-precision, inference-only copy of an Mlp with the input scale folded
/// into the first layer. Used for bulk attribution sweeps.
class InferenceMlp {
 public:
  explicit InferenceMlp(const Mlp& net);
  /// Rows are samples; returns the network output in double precision.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;

 private:
  std::vector<Eigen::MatrixXf> weights_;
  std::vector<Eigen::RowVectorXf> biases_;
};

/// Row-wise softmax.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

}  // namespace gridlens
