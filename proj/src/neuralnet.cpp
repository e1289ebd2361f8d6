#include "mgrid/neuralnet.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace mgrid {

Mlp::Mlp(int input_dim, const std::vector<int>& hidden, int output_dim, Rng& rng) {
  if (input_dim <= 0 || output_dim <= 0)
    throw Error(ErrorCode::invalid_argument, "network dims must be positive");
  std::vector<int> dims;
  dims.push_back(input_dim);
  for (int h : hidden) {
    if (h <= 0) throw Error(ErrorCode::invalid_argument, "hidden dims must be positive");
    dims.push_back(h);
  }
  dims.push_back(output_dim);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const int fan_in = dims[i];
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Eigen::MatrixXd w(dims[i + 1], dims[i]);
    for (int r = 0; r < w.rows(); ++r)
      for (int c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-scale, scale);
    weights_.push_back(std::move(w));
    biases_.push_back(Eigen::VectorXd::Zero(dims[i + 1]));
  }
}

int Mlp::input_dim() const {
  return weights_.empty() ? 0 : static_cast<int>(weights_.front().cols());
}

int Mlp::output_dim() const {
  return weights_.empty() ? 0 : static_cast<int>(weights_.back().rows());
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& input) const {
  Tape tape;
  return forward(input, tape);
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& input, Tape& tape) const {
  if (weights_.empty()) throw Error(ErrorCode::invalid_argument, "forward on empty network");
  if (input.size() != weights_.front().cols())
    throw Error(ErrorCode::invalid_argument,
                "input dim " + std::to_string(input.size()) + " != " +
                    std::to_string(weights_.front().cols()));
  tape.input = input;
  tape.pre.clear();
  tape.post.clear();
  Eigen::VectorXd x = input;
  const int last = layer_count() - 1;
  for (int i = 0; i <= last; ++i) {
    Eigen::VectorXd z = weights_[i] * x + biases_[i];
    tape.pre.push_back(z);
    if (i < last) z = z.cwiseMax(0.0);  // ReLU on hidden layers, linear output
    tape.post.push_back(z);
    x = z;
  }
  return x;
}

void Mlp::Gradients::add(const Gradients& other) {
  for (std::size_t i = 0; i < dw.size(); ++i) {
    dw[i] += other.dw[i];
    db[i] += other.db[i];
  }
}

void Mlp::Gradients::scale(double s) {
  for (std::size_t i = 0; i < dw.size(); ++i) {
    dw[i] *= s;
    db[i] *= s;
  }
}

Mlp::Gradients Mlp::zero_gradients() const {
  Gradients g;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    g.dw.push_back(Eigen::MatrixXd::Zero(weights_[i].rows(), weights_[i].cols()));
    g.db.push_back(Eigen::VectorXd::Zero(biases_[i].size()));
  }
  return g;
}

Mlp::Gradients Mlp::backward(const Tape& tape, const Eigen::VectorXd& upstream) const {
  if (upstream.size() != output_dim())
    throw Error(ErrorCode::invalid_argument, "upstream gradient dim mismatch");
  Gradients g = zero_gradients();
  const int last = layer_count() - 1;
  Eigen::VectorXd delta = upstream;  // dLoss/d(pre-activation of output layer): output is linear
  for (int i = last; i >= 0; --i) {
    if (i < last) {
      // ReLU gate
      for (int r = 0; r < delta.size(); ++r)
        if (tape.pre[i](r) <= 0.0) delta(r) = 0.0;
    }
    const Eigen::VectorXd& layer_in = (i == 0) ? tape.input : tape.post[i - 1];
    g.dw[i] = delta * layer_in.transpose();
    g.db[i] = delta;
    if (i > 0) delta = weights_[i].transpose() * delta;
  }
  return g;
}

bool Mlp::all_finite() const {
  for (const auto& w : weights_)
    if (!w.allFinite()) return false;
  for (const auto& b : biases_)
    if (!b.allFinite()) return false;
  return true;
}

bool Mlp::same_shape(const Mlp& other) const {
  if (layer_count() != other.layer_count()) return false;
  for (int i = 0; i < layer_count(); ++i)
    if (weights_[i].rows() != other.weights_[i].rows() ||
        weights_[i].cols() != other.weights_[i].cols())
      return false;
  return true;
}

std::string Mlp::to_json() const {
  nlohmann::json j;
  j["format"] = "mgrid-mlp";
  j["version"] = 1;
  j["layers"] = nlohmann::json::array();
  for (int i = 0; i < layer_count(); ++i) {
    nlohmann::json jl;
    jl["in"] = weights_[i].cols();
    jl["out"] = weights_[i].rows();
    jl["activation"] = (i == layer_count() - 1) ? "linear" : "relu";
    nlohmann::json w = nlohmann::json::array();
    for (int r = 0; r < weights_[i].rows(); ++r)
      for (int c = 0; c < weights_[i].cols(); ++c) w.push_back(weights_[i](r, c));
    jl["w"] = std::move(w);
    nlohmann::json b = nlohmann::json::array();
    for (int r = 0; r < biases_[i].size(); ++r) b.push_back(biases_[i](r));
    jl["b"] = std::move(b);
    j["layers"].push_back(std::move(jl));
  }
  return j.dump();
}

Mlp Mlp::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, std::string("bad checkpoint: ") + e.what());
  }
  if (j.value("format", "") != "mgrid-mlp" || j.value("version", 0) != 1)
    throw Error(ErrorCode::config, "unrecognized checkpoint format");
  Mlp net;
  for (const auto& jl : j.at("layers")) {
    const int in = jl.at("in").get<int>();
    const int out = jl.at("out").get<int>();
    const auto& w = jl.at("w");
    const auto& b = jl.at("b");
    if (static_cast<int>(w.size()) != in * out || static_cast<int>(b.size()) != out)
      throw Error(ErrorCode::config, "checkpoint layer size mismatch");
    Eigen::MatrixXd wm(out, in);
    int idx = 0;
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) wm(r, c) = w[idx++].get<double>();
    Eigen::VectorXd bv(out);
    for (int r = 0; r < out; ++r) bv(r) = b[r].get<double>();
    net.weights_.push_back(std::move(wm));
    net.biases_.push_back(std::move(bv));
  }
  if (net.weights_.empty()) throw Error(ErrorCode::config, "checkpoint has no layers");
  for (std::size_t i = 0; i + 1 < net.weights_.size(); ++i)
    if (net.weights_[i + 1].cols() != net.weights_[i].rows())
      throw Error(ErrorCode::config, "checkpoint layer shapes do not chain");
  if (!net.all_finite()) throw Error(ErrorCode::config, "checkpoint holds non-finite values");
  return net;
}

void Mlp::save_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write checkpoint: " + path);
  out << to_json();
  if (!out) throw Error(ErrorCode::io, "short write on checkpoint: " + path);
}

Mlp Mlp::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot read checkpoint: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json(text);
}

double mse_loss(std::span<const double> predicted, std::span<const double> target) {
  if (predicted.size() != target.size())
    throw Error(ErrorCode::invalid_argument, "mse_loss length mismatch");
  if (predicted.empty()) throw Error(ErrorCode::invalid_argument, "mse_loss on empty vectors");
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double d = predicted[i] - target[i];
    sum += d * d;
  }
  return sum / static_cast<double>(predicted.size());
}

AdamState AdamState::for_network(const Mlp& net, double lr) {
  AdamState s;
  s.lr = lr;
  for (int i = 0; i < net.layer_count(); ++i) {
    s.m_w.push_back(Eigen::MatrixXd::Zero(net.weight(i).rows(), net.weight(i).cols()));
    s.v_w.push_back(Eigen::MatrixXd::Zero(net.weight(i).rows(), net.weight(i).cols()));
    s.m_b.push_back(Eigen::VectorXd::Zero(net.bias(i).size()));
    s.v_b.push_back(Eigen::VectorXd::Zero(net.bias(i).size()));
  }
  return s;
}

void adam_step(Mlp& net, const Mlp::Gradients& grads, AdamState& state) {
  if (static_cast<int>(state.m_w.size()) != net.layer_count())
    throw Error(ErrorCode::invalid_argument, "optimizer state does not match network");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (int i = 0; i < net.layer_count(); ++i) {
    state.m_w[i] = state.beta1 * state.m_w[i] + (1.0 - state.beta1) * grads.dw[i];
    state.v_w[i] = state.beta2 * state.v_w[i] + (1.0 - state.beta2) * grads.dw[i].cwiseAbs2();
    state.m_b[i] = state.beta1 * state.m_b[i] + (1.0 - state.beta1) * grads.db[i];
    state.v_b[i] = state.beta2 * state.v_b[i] + (1.0 - state.beta2) * grads.db[i].cwiseAbs2();

    net.weight_mutable(i) -=
        (state.lr * (state.m_w[i] / bc1).array() /
         ((state.v_w[i] / bc2).cwiseSqrt().array() + state.eps))
            .matrix();
    net.bias_mutable(i) -= (state.lr * (state.m_b[i] / bc1).array() /
                            ((state.v_b[i] / bc2).cwiseSqrt().array() + state.eps))
                               .matrix();
  }
  if (!net.all_finite())
    throw Error(ErrorCode::numeric, "network parameters became non-finite during training");
}

}  // namespace mgrid
