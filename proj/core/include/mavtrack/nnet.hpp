#pragma once

#include <iosfwd>
#include <vector>

#include "mavtrack/common.hpp"

namespace mavtrack {

enum class Activation { kReLU, kLinear };

struct Layer {
  Eigen::MatrixXd W;  // out x in
  Eigen::VectorXd b;  // out
  Activation act = Activation::kLinear;
};

/// Activations retained by a cached forward pass; consumed by backward().
struct ForwardCache {
  Eigen::MatrixXd input;               // in x batch
  std::vector<Eigen::MatrixXd> pre;    // pre-activation per layer
  std::vector<Eigen::MatrixXd> post;   // post-activation per layer
};

/// Parameter-shaped gradient accumulator.
struct Gradients {
  std::vector<Eigen::MatrixXd> dW;
  std::vector<Eigen::VectorXd> db;

  void set_zero();
  bool finite() const;
};

/// Dense feed-forward network. Batches are stored column-wise (one sample
/// per column) to match Eigen's native layout.
class Mlp {
 public:
  Mlp() = default;

  /// sizes = {in, h1, ..., out}; hidden layers use `hidden`, the last layer
  /// uses `output`.
  Mlp(const std::vector<int>& sizes, Activation hidden, Activation output);

  int input_dim() const;
  int output_dim() const;
  int layer_count() const { return static_cast<int>(layers_.size()); }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  std::size_t param_count() const;

  /// Uniform fan-in initialization (+-1/sqrt(fan_in) for weights and
  /// biases); the last layer's weights and biases are scaled by
  /// `final_scale`.
  void init(Rng& rng, double final_scale = 1.0);

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, ForwardCache& cache) const;
  Eigen::VectorXd forward_one(const Eigen::VectorXd& x) const;

  /// Reverse-mode pass. `out_grad` is d(loss)/d(output), same shape as the
  /// forward output. Parameter gradients are summed over the batch into
  /// `grads` (which is resized and zeroed); returns d(loss)/d(input).
  Eigen::MatrixXd backward(const ForwardCache& cache,
                           const Eigen::MatrixXd& out_grad,
                           Gradients& grads) const;

  Gradients zero_gradients() const;

 private:
  std::vector<Layer> layers_;
};

/// Adam with bias correction. Rejects non-finite gradient batches instead of
/// poisoning the parameters; rejections are counted as faults.
class Adam {
 public:
  Adam() = default;
  Adam(const Mlp& net, double lr);

  /// Applies one update; returns false (and counts a fault) if any gradient
  /// entry is non-finite, leaving parameters and moments untouched.
  bool step(Mlp& net, const Gradients& grads);

  double lr() const { return lr_; }
  std::int64_t steps() const { return t_; }
  std::int64_t faults() const { return faults_; }

  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void save(std::ostream& out) const;
  void load(std::istream& in, const Mlp& net);

 private:
  double lr_ = 3e-4;
  std::int64_t t_ = 0;
  std::int64_t faults_ = 0;
  std::vector<Eigen::MatrixXd> mW_, vW_;
  std::vector<Eigen::VectorXd> mb_, vb_;
};

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;

struct SquashedSample {
  Eigen::VectorXd action;   // bounds-scaled, strictly inside (-bounds, bounds)
  Eigen::VectorXd z;        // pre-squash Gaussian draw mean + std * xi
  Eigen::VectorXd xi;       // standard normal noise used
  Eigen::VectorXd log_std;  // clamped log standard deviations
  double log_prob = 0.0;
};

/// Draws a = bounds .* tanh(mean + exp(clamp(log_std)) .* xi) and returns the
/// log density of `a`, including the tanh change of variables and the bound
/// scaling.
SquashedSample squashed_gaussian_sample(const Eigen::VectorXd& mean,
                                        const Eigen::VectorXd& log_std,
                                        Rng& rng,
                                        const Eigen::VectorXd& bounds);

/// Deterministic head: a = bounds .* tanh(mean).
Eigen::VectorXd squashed_mean_action(const Eigen::VectorXd& mean,
                                     const Eigen::VectorXd& bounds);

/// Binary round-trip with a versioned header (magic, version, layer count,
/// per-layer dims and activation), little-endian doubles.
void save_mlp(std::ostream& out, const Mlp& net);
Mlp load_mlp(std::istream& in);

}  // namespace mavtrack
