#ifndef MGRID_NEURALNET_HPP
#define MGRID_NEURALNET_HPP

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "mgrid/common.hpp"

namespace mgrid {

/// Fully connected network: affine + ReLU hidden layers, linear output.
/// Weights are plain values; copying gives an independent network.
class Mlp {
 public:
  Mlp() = default;
  /// Uniform init scaled by 1/sqrt(fan_in), biases zero.
  Mlp(int input_dim, const std::vector<int>& hidden, int output_dim, Rng& rng);

  int input_dim() const;
  int output_dim() const;
  int layer_count() const { return static_cast<int>(weights_.size()); }
  const Eigen::MatrixXd& weight(int layer) const { return weights_[layer]; }
  const Eigen::VectorXd& bias(int layer) const { return biases_[layer]; }
  Eigen::MatrixXd& weight_mutable(int layer) { return weights_[layer]; }
  Eigen::VectorXd& bias_mutable(int layer) { return biases_[layer]; }

  Eigen::VectorXd forward(const Eigen::VectorXd& input) const;

  /// Forward pass retaining the per-layer intermediates needed by backward.
  struct Tape {
    Eigen::VectorXd input;
    std::vector<Eigen::VectorXd> pre;   // pre-activation per layer
    std::vector<Eigen::VectorXd> post;  // post-activation per layer
  };
  Eigen::VectorXd forward(const Eigen::VectorXd& input, Tape& tape) const;

  struct Gradients {
    std::vector<Eigen::MatrixXd> dw;
    std::vector<Eigen::VectorXd> db;

    void add(const Gradients& other);
    void scale(double s);
  };
  Gradients zero_gradients() const;

  /// Reverse-mode gradients of the tape's forward pass given dLoss/dOutput.
  Gradients backward(const Tape& tape, const Eigen::VectorXd& upstream) const;

  /// Deep copy; mutating the clone never touches the original.
  Mlp clone() const { return *this; }

  bool all_finite() const;
  bool same_shape(const Mlp& other) const;

  /// Checkpoint round-trips are value-exact.
  std::string to_json() const;
  static Mlp from_json(const std::string& text);
  void save_file(const std::string& path) const;
  static Mlp load_file(const std::string& path);

 private:
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
};

double mse_loss(std::span<const double> predicted, std::span<const double> target);

/// Adam with bias-corrected moments. Step state is owned by the caller so a
/// frozen clone of the network never advances the optimizer.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<Eigen::MatrixXd> m_w, v_w;
  std::vector<Eigen::VectorXd> m_b, v_b;

  static AdamState for_network(const Mlp& net, double lr = 1e-3);
};

void adam_step(Mlp& net, const Mlp::Gradients& grads, AdamState& state);

}  // namespace mgrid

#endif
