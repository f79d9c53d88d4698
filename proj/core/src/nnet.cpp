#include "mavtrack/nnet.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

namespace mavtrack {

namespace {

constexpr char kMagic[4] = {'M', 'V', 'N', 'T'};
constexpr std::uint32_t kVersion = 1;

double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

// log(1 - tanh(z)^2), stable for large |z|.
double log_one_minus_tanh_sq(double z) {
  return 2.0 * (std::log(2.0) - z - softplus(-2.0 * z));
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) {
    throw ConfigError("truncated network file");
  }
  return v;
}

void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
}

void read_matrix(std::istream& in, Eigen::MatrixXd& m) {
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!in) {
    throw ConfigError("truncated network file");
  }
}

void write_vector(std::ostream& out, const Eigen::VectorXd& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(sizeof(double) * v.size()));
}

void read_vector(std::istream& in, Eigen::VectorXd& v) {
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(sizeof(double) * v.size()));
  if (!in) {
    throw ConfigError("truncated network file");
  }
}

}  // namespace

void Gradients::set_zero() {
  for (auto& m : dW) {
    m.setZero();
  }
  for (auto& v : db) {
    v.setZero();
  }
}

bool Gradients::finite() const {
  for (const auto& m : dW) {
    if (!m.allFinite()) {
      return false;
    }
  }
  for (const auto& v : db) {
    if (!v.allFinite()) {
      return false;
    }
  }
  return true;
}

Mlp::Mlp(const std::vector<int>& sizes, Activation hidden, Activation output) {
  if (sizes.size() < 2) {
    throw ConfigError("network needs at least one layer");
  }
  for (int s : sizes) {
    if (s < 1) {
      throw ConfigError("layer sizes must be positive");
    }
  }
  layers_.resize(sizes.size() - 1);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].W = Eigen::MatrixXd::Zero(sizes[l + 1], sizes[l]);
    layers_[l].b = Eigen::VectorXd::Zero(sizes[l + 1]);
    layers_[l].act = l + 1 == layers_.size() ? output : hidden;
  }
}

int Mlp::input_dim() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.front().W.cols());
}

int Mlp::output_dim() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.back().W.rows());
}

std::size_t Mlp::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) {
    n += static_cast<std::size_t>(l.W.size()) +
         static_cast<std::size_t>(l.b.size());
  }
  return n;
}

void Mlp::init(Rng& rng, double final_scale) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layers_[l].W.cols()));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < layers_[l].W.size(); ++i) {
      layers_[l].W.data()[i] = u(rng);
    }
    for (Eigen::Index i = 0; i < layers_[l].b.size(); ++i) {
      layers_[l].b(i) = u(rng);
    }
    if (l + 1 == layers_.size()) {
      layers_[l].W *= final_scale;
      layers_[l].b *= final_scale;
    }
  }
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x) const {
  if (x.rows() != input_dim()) {
    throw ConfigError("network input size mismatch");
  }
  Eigen::MatrixXd a = x;
  for (const auto& l : layers_) {
    Eigen::MatrixXd z = (l.W * a).colwise() + l.b;
    a = l.act == Activation::kReLU ? z.cwiseMax(0.0).eval() : std::move(z);
  }
  return a;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x,
                             ForwardCache& cache) const {
  if (x.rows() != input_dim()) {
    throw ConfigError("network input size mismatch");
  }
  cache.input = x;
  cache.pre.resize(layers_.size());
  cache.post.resize(layers_.size());
  const Eigen::MatrixXd* a = &cache.input;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    cache.pre[l] = (layers_[l].W * (*a)).colwise() + layers_[l].b;
    cache.post[l] = layers_[l].act == Activation::kReLU
                        ? cache.pre[l].cwiseMax(0.0).eval()
                        : cache.pre[l];
    a = &cache.post[l];
  }
  return cache.post.back();
}

Eigen::VectorXd Mlp::forward_one(const Eigen::VectorXd& x) const {
  return forward(Eigen::MatrixXd(x)).col(0);
}

Gradients Mlp::zero_gradients() const {
  Gradients g;
  g.dW.resize(layers_.size());
  g.db.resize(layers_.size());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    g.dW[l] = Eigen::MatrixXd::Zero(layers_[l].W.rows(), layers_[l].W.cols());
    g.db[l] = Eigen::VectorXd::Zero(layers_[l].b.size());
  }
  return g;
}

Eigen::MatrixXd Mlp::backward(const ForwardCache& cache,
                              const Eigen::MatrixXd& out_grad,
                              Gradients& grads) const {
  if (cache.pre.size() != layers_.size() ||
      out_grad.rows() != output_dim() ||
      out_grad.cols() != cache.input.cols()) {
    throw ConfigError("backward called with a mismatched cache");
  }
  grads = zero_gradients();
  Eigen::MatrixXd delta = out_grad;
  for (int l = layer_count() - 1; l >= 0; --l) {
    if (layers_[l].act == Activation::kReLU) {
      delta = delta.cwiseProduct(
          (cache.pre[l].array() > 0.0).cast<double>().matrix());
    }
    const Eigen::MatrixXd& prev = l == 0 ? cache.input : cache.post[l - 1];
    grads.dW[l] = delta * prev.transpose();
    grads.db[l] = delta.rowwise().sum();
    delta = layers_[l].W.transpose() * delta;
  }
  return delta;
}

Adam::Adam(const Mlp& net, double lr) : lr_(lr) {
  for (const auto& l : net.layers()) {
    mW_.push_back(Eigen::MatrixXd::Zero(l.W.rows(), l.W.cols()));
    vW_.push_back(Eigen::MatrixXd::Zero(l.W.rows(), l.W.cols()));
    mb_.push_back(Eigen::VectorXd::Zero(l.b.size()));
    vb_.push_back(Eigen::VectorXd::Zero(l.b.size()));
  }
}

bool Adam::step(Mlp& net, const Gradients& grads) {
  if (!grads.finite()) {
    ++faults_;
    return false;
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    mW_[l] = beta1 * mW_[l] + (1.0 - beta1) * grads.dW[l];
    vW_[l].array() =
        beta2 * vW_[l].array() + (1.0 - beta2) * grads.dW[l].array().square();
    layers[l].W.array() -=
        lr_ * (mW_[l].array() / bc1) / ((vW_[l].array() / bc2).sqrt() + eps);

    mb_[l] = beta1 * mb_[l] + (1.0 - beta1) * grads.db[l];
    vb_[l].array() =
        beta2 * vb_[l].array() + (1.0 - beta2) * grads.db[l].array().square();
    layers[l].b.array() -=
        lr_ * (mb_[l].array() / bc1) / ((vb_[l].array() / bc2).sqrt() + eps);
  }
  return true;
}

void Adam::save(std::ostream& out) const {
  write_pod(out, t_);
  write_pod(out, faults_);
  write_pod(out, lr_);
  write_pod(out, beta1);
  write_pod(out, beta2);
  write_pod(out, eps);
  for (std::size_t l = 0; l < mW_.size(); ++l) {
    write_matrix(out, mW_[l]);
    write_matrix(out, vW_[l]);
    write_vector(out, mb_[l]);
    write_vector(out, vb_[l]);
  }
}

void Adam::load(std::istream& in, const Mlp& net) {
  *this = Adam(net, lr_);
  t_ = read_pod<std::int64_t>(in);
  faults_ = read_pod<std::int64_t>(in);
  lr_ = read_pod<double>(in);
  beta1 = read_pod<double>(in);
  beta2 = read_pod<double>(in);
  eps = read_pod<double>(in);
  for (std::size_t l = 0; l < mW_.size(); ++l) {
    read_matrix(in, mW_[l]);
    read_matrix(in, vW_[l]);
    read_vector(in, mb_[l]);
    read_vector(in, vb_[l]);
  }
}

SquashedSample squashed_gaussian_sample(const Eigen::VectorXd& mean,
                                        const Eigen::VectorXd& log_std,
                                        Rng& rng,
                                        const Eigen::VectorXd& bounds) {
  if (mean.size() != log_std.size() || mean.size() != bounds.size()) {
    throw ConfigError("policy head size mismatch");
  }
  const Eigen::Index n = mean.size();
  SquashedSample s;
  s.action.resize(n);
  s.z.resize(n);
  s.xi.resize(n);
  s.log_std.resize(n);
  std::normal_distribution<double> normal(0.0, 1.0);
  double logp = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double l = std::clamp(log_std(i), kLogStdMin, kLogStdMax);
    const double sigma = std::exp(l);
    const double xi = normal(rng);
    const double z = mean(i) + sigma * xi;
    const double t = std::tanh(z);
    s.log_std(i) = l;
    s.xi(i) = xi;
    s.z(i) = z;
    s.action(i) = bounds(i) * t;
    logp += -0.5 * xi * xi - 0.5 * std::log(2.0 * EIGEN_PI) - l;
    logp -= log_one_minus_tanh_sq(z);
    logp -= std::log(bounds(i));
  }
  s.log_prob = logp;
  return s;
}

Eigen::VectorXd squashed_mean_action(const Eigen::VectorXd& mean,
                                     const Eigen::VectorXd& bounds) {
  return bounds.array() * mean.array().tanh();
}

void save_mlp(std::ostream& out, const Mlp& net) {
  out.write(kMagic, 4);
  write_pod(out, kVersion);
  write_pod(out, static_cast<std::uint32_t>(net.layer_count()));
  for (const auto& l : net.layers()) {
    write_pod(out, static_cast<std::uint32_t>(l.W.cols()));
    write_pod(out, static_cast<std::uint32_t>(l.W.rows()));
    write_pod(out, static_cast<std::uint32_t>(l.act));
  }
  for (const auto& l : net.layers()) {
    write_matrix(out, l.W);
    write_vector(out, l.b);
  }
}

Mlp load_mlp(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw ConfigError("not a network file (bad magic)");
  }
  if (read_pod<std::uint32_t>(in) != kVersion) {
    throw ConfigError("unsupported network file version");
  }
  const auto n_layers = read_pod<std::uint32_t>(in);
  if (n_layers == 0 || n_layers > 64) {
    throw ConfigError("implausible layer count in network file");
  }
  std::vector<int> sizes;
  std::vector<Activation> acts;
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    const auto in_dim = read_pod<std::uint32_t>(in);
    const auto out_dim = read_pod<std::uint32_t>(in);
    const auto act = read_pod<std::uint32_t>(in);
    if (in_dim == 0 || out_dim == 0 || act > 1) {
      throw ConfigError("corrupt layer header in network file");
    }
    if (l == 0) {
      sizes.push_back(static_cast<int>(in_dim));
    } else if (sizes.back() != static_cast<int>(in_dim)) {
      throw ConfigError("inconsistent layer chain in network file");
    }
    sizes.push_back(static_cast<int>(out_dim));
    acts.push_back(static_cast<Activation>(act));
  }
  Mlp net(sizes, Activation::kReLU, Activation::kLinear);
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    net.layers()[l].act = acts[l];
    read_matrix(in, net.layers()[l].W);
    read_vector(in, net.layers()[l].b);
  }
  return net;
}

}  // namespace mavtrack
