#include "gridlens/mlp.h"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace gridlens {

std::uint64_t Rng::next() {
  std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::uniform() {
  // 53 random bits, shifted by half an ulp so 0 is never returned.
  return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53;
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::index of empty range");
  return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

double Rng::gumbel() { return -std::log(-std::log(uniform())); }

double MlpGrad::norm() const {
  double s = 0.0;
  for (const auto& m : w) s += m.squaredNorm();
  for (const auto& v : b) s += v.squaredNorm();
  return std::sqrt(s);
}

void MlpGrad::scale(double s) {
  for (auto& m : w) m *= s;
  for (auto& v : b) v *= s;
}

void MlpGrad::add(const MlpGrad& other) {
  for (std::size_t k = 0; k < w.size(); ++k) {
    w[k] += other.w[k];
    b[k] += other.b[k];
  }
}

Mlp::Mlp(std::vector<int> sizes, Rng& rng, double output_init_scale) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw std::invalid_argument("an MLP needs at least an input and an output size");
  for (int s : sizes_) {
    if (s <= 0) throw std::invalid_argument("layer sizes must be positive");
  }
  for (std::size_t k = 0; k + 1 < sizes_.size(); ++k) {
    const int in = sizes_[k];
    const int out = sizes_[k + 1];
    double bound = 1.0 / std::sqrt(static_cast<double>(in));
    if (k + 2 == sizes_.size()) bound *= output_init_scale;
    Eigen::MatrixXd w(in, out);
    for (int r = 0; r < in; ++r) {
      for (int c = 0; c < out; ++c) w(r, c) = (2.0 * rng.uniform() - 1.0) * bound;
    }
    Eigen::RowVectorXd b(out);
    for (int c = 0; c < out; ++c) b(c) = (2.0 * rng.uniform() - 1.0) * bound;
    weights.push_back(std::move(w));
    biases.push_back(std::move(b));
  }
  input_scale_ = Eigen::RowVectorXd::Ones(sizes_.front());
}

void Mlp::set_input_scale(Eigen::RowVectorXd scale) {
  if (scale.size() != input_dim()) throw std::invalid_argument("input scale has wrong dimension");
  input_scale_ = std::move(scale);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, Tape* tape) const {
  if (x.cols() != input_dim()) {
    throw std::invalid_argument("input has " + std::to_string(x.cols()) + " features, network expects " +
                                std::to_string(input_dim()));
  }
  Eigen::MatrixXd h = x.array().rowwise() * input_scale_.array();
  if (tape) tape->activations.assign(1, h);
  const std::size_t layers = weights.size();
  for (std::size_t k = 0; k < layers; ++k) {
    Eigen::MatrixXd z = h * weights[k];
    z.rowwise() += biases[k];
    if (k + 1 < layers) {
      h = z.cwiseMax(0.0);
      if (tape) tape->activations.push_back(h);
    } else {
      h = std::move(z);
    }
  }
  return h;
}

MlpGrad Mlp::backward(const Tape& tape, const Eigen::MatrixXd& grad_out, Eigen::MatrixXd* grad_input) const {
  const std::size_t layers = weights.size();
  MlpGrad g;
  g.w.resize(layers);
  g.b.resize(layers);
  Eigen::MatrixXd delta = grad_out;
  for (std::size_t k = layers; k-- > 0;) {
    const Eigen::MatrixXd& a = tape.activations[k];
    g.w[k] = a.transpose() * delta;
    g.b[k] = delta.colwise().sum();
    if (k == 0 && !grad_input) break;
    Eigen::MatrixXd back = delta * weights[k].transpose();
    if (k > 0) {
      delta = (a.array() > 0.0).select(back, 0.0);
    } else {
      *grad_input = back.array().rowwise() * input_scale_.array();
    }
  }
  return g;
}

MlpGrad Mlp::zero_grad() const {
  MlpGrad g;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    g.w.push_back(Eigen::MatrixXd::Zero(weights[k].rows(), weights[k].cols()));
    g.b.push_back(Eigen::RowVectorXd::Zero(biases[k].size()));
  }
  return g;
}

void Mlp::apply_sgd(const MlpGrad& g, double lr) {
  for (std::size_t k = 0; k < weights.size(); ++k) {
    weights[k] -= lr * g.w[k];
    biases[k] -= lr * g.b[k];
  }
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) n += weights[k].size() + biases[k].size();
  return n;
}

std::vector<double> Mlp::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (std::size_t k = 0; k < weights.size(); ++k) {
    for (Eigen::Index i = 0; i < weights[k].size(); ++i) out.push_back(weights[k].data()[i]);
    for (Eigen::Index i = 0; i < biases[k].size(); ++i) out.push_back(biases[k].data()[i]);
  }
  return out;
}

void Mlp::unflatten(const std::vector<double>& params) {
  if (params.size() != parameter_count()) throw std::invalid_argument("parameter vector has wrong length");
  std::size_t pos = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    for (Eigen::Index i = 0; i < weights[k].size(); ++i) weights[k].data()[i] = params[pos++];
    for (Eigen::Index i = 0; i < biases[k].size(); ++i) biases[k].data()[i] = params[pos++];
  }
}

bool Mlp::all_finite() const {
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (!weights[k].allFinite() || !biases[k].allFinite()) return false;
  }
  return true;
}

bool Mlp::operator==(const Mlp& other) const {
  return sizes_ == other.sizes_ && flatten() == other.flatten() &&
         input_scale_.size() == other.input_scale_.size() && input_scale_ == other.input_scale_;
}

namespace {

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("truncated network parameters");
  return v;
}

}  // namespace

void Mlp::write(std::ostream& out) const {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(sizes_.size()));
  for (int s : sizes_) put<std::uint32_t>(out, static_cast<std::uint32_t>(s));
  for (Eigen::Index i = 0; i < input_scale_.size(); ++i) put<double>(out, input_scale_(i));
  for (double p : flatten()) put<double>(out, p);
}

Mlp Mlp::read(std::istream& in) {
  Mlp net;
  const auto n = get<std::uint32_t>(in);
  if (n < 2 || n > 64) throw std::runtime_error("corrupt network header");
  for (std::uint32_t k = 0; k < n; ++k) net.sizes_.push_back(static_cast<int>(get<std::uint32_t>(in)));
  for (std::size_t k = 0; k + 1 < net.sizes_.size(); ++k) {
    net.weights.emplace_back(Eigen::MatrixXd::Zero(net.sizes_[k], net.sizes_[k + 1]));
    net.biases.emplace_back(Eigen::RowVectorXd::Zero(net.sizes_[k + 1]));
  }
  net.input_scale_.resize(net.sizes_.front());
  for (Eigen::Index i = 0; i < net.input_scale_.size(); ++i) net.input_scale_(i) = get<double>(in);
  std::vector<double> params(net.parameter_count());
  for (double& p : params) p = get<double>(in);
  net.unflatten(params);
  return net;
}

void adam_step(Mlp& net, AdamState& state, const MlpGrad& g, double lr, double beta1, double beta2, double eps) {
  if (state.m.w.empty()) {
    state.m = net.zero_grad();
    state.v = net.zero_grad();
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < net.weights.size(); ++k) {
    state.m.w[k] = beta1 * state.m.w[k] + (1.0 - beta1) * g.w[k];
    state.v.w[k] = beta2 * state.v.w[k] + (1.0 - beta2) * g.w[k].cwiseProduct(g.w[k]);
    state.m.b[k] = beta1 * state.m.b[k] + (1.0 - beta1) * g.b[k];
    state.v.b[k] = beta2 * state.v.b[k] + (1.0 - beta2) * g.b[k].cwiseProduct(g.b[k]);
    net.weights[k].array() -= lr * (state.m.w[k].array() / c1) / ((state.v.w[k].array() / c2).sqrt() + eps);
    net.biases[k].array() -= lr * (state.m.b[k].array() / c1) / ((state.v.b[k].array() / c2).sqrt() + eps);
  }
}

InferenceMlp::InferenceMlp(const Mlp& net) {
  for (std::size_t k = 0; k < net.weights.size(); ++k) {
    Eigen::MatrixXd w = net.weights[k];
    if (k == 0) w = net.input_scale().transpose().asDiagonal() * w;
    weights_.push_back(w.cast<float>());
    biases_.push_back(net.biases[k].cast<float>());
  }
}

Eigen::MatrixXd InferenceMlp::forward(const Eigen::MatrixXd& x) const {
  if (weights_.empty() || x.cols() != weights_.front().rows()) {
    throw std::invalid_argument("input width does not match the network");
  }
  Eigen::MatrixXf h = x.cast<float>();
  for (std::size_t k = 0; k < weights_.size(); ++k) {
    Eigen::MatrixXf z = h * weights_[k];
    z.rowwise() += biases_[k];
    h = k + 1 < weights_.size() ? Eigen::MatrixXf(z.cwiseMax(0.0f)) : std::move(z);
  }
  return h.cast<double>();
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(r).array() - m).exp();
    out.row(r) = e / e.sum();
  }
  return out;
}

}  // namespace gridlens
