#pragma once

// One-hidden-layer MLPs with hand-derived gradients, three output heads
// (masked softmax, scalar, sigmoid) and an ADAM optimizer. Batches are stored
// column-wise: an input batch is (input_size x batch).

#include "q20/types.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace q20::nn {

enum class Head : std::uint8_t { MaskedSoftmax, Scalar, Sigmoid };

inline std::string_view to_string(Head h) {
  switch (h) {
    case Head::MaskedSoftmax: return "masked_softmax";
    case Head::Scalar: return "scalar";
    case Head::Sigmoid: return "sigmoid";
  }
  return "scalar";
}

inline Head parse_head(std::string_view s) {
  if (s == "masked_softmax") return Head::MaskedSoftmax;
  if (s == "scalar") return Head::Scalar;
  if (s == "sigmoid") return Head::Sigmoid;
  throw std::invalid_argument("unknown head '" + std::string(s) + "'");
}

template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Weights of x -> relu(w1^T x + b1) -> w2^T h + b2 -> head.
/// w1 is (input x hidden), w2 is (hidden x output). Gradients use the same type.
template <typename Scalar>
struct Mlp {
  Head head = Head::Scalar;
  MatrixT<Scalar> w1;
  VectorT<Scalar> b1;
  MatrixT<Scalar> w2;
  VectorT<Scalar> b2;
  std::uint64_t seed = 0;

  int input_size() const { return static_cast<int>(w1.rows()); }
  int hidden_size() const { return static_cast<int>(w1.cols()); }
  int output_size() const { return static_cast<int>(w2.cols()); }

  static Mlp zeros_like(const Mlp& o) {
    Mlp z;
    z.head = o.head;
    z.seed = o.seed;
    z.w1 = MatrixT<Scalar>::Zero(o.w1.rows(), o.w1.cols());
    z.b1 = VectorT<Scalar>::Zero(o.b1.size());
    z.w2 = MatrixT<Scalar>::Zero(o.w2.rows(), o.w2.cols());
    z.b2 = VectorT<Scalar>::Zero(o.b2.size());
    return z;
  }

  bool shape_matches(const Mlp& o) const {
    return w1.rows() == o.w1.rows() && w1.cols() == o.w1.cols() && b1.size() == o.b1.size() &&
           w2.rows() == o.w2.rows() && w2.cols() == o.w2.cols() && b2.size() == o.b2.size();
  }

  bool all_finite() const {
    return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite();
  }

  std::size_t parameter_count() const {
    return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + b2.size());
  }

  /// Flat view of every parameter, in (w1, b1, w2, b2) column-major order.
  Scalar& flat(std::size_t k) {
    for (auto [data, size] : {std::pair{w1.data(), w1.size()}, std::pair{b1.data(), b1.size()},
                              std::pair{w2.data(), w2.size()}, std::pair{b2.data(), b2.size()}}) {
      if (k < static_cast<std::size_t>(size)) return data[k];
      k -= static_cast<std::size_t>(size);
    }
    throw std::out_of_range("flat parameter index");
  }
  Scalar flat(std::size_t k) const { return const_cast<Mlp&>(*this).flat(k); }

  bool operator==(const Mlp& o) const {
    return head == o.head && seed == o.seed && shape_matches(o) && w1 == o.w1 && b1 == o.b1 &&
           w2 == o.w2 && b2 == o.b2;
  }
};

/// Seeded init: weights uniform in [-sqrt(3 / fan_in), sqrt(3 / fan_in)], biases zero.
template <typename Scalar>
Mlp<Scalar> init_params(int input, int hidden, int output, Head head, std::uint64_t seed) {
  if (input <= 0 || hidden <= 0 || output <= 0)
    throw std::invalid_argument("MLP dimensions must be positive");
  if (head != Head::MaskedSoftmax && output != 1)
    throw std::invalid_argument("scalar and sigmoid heads have exactly one output");
  Mlp<Scalar> p;
  p.head = head;
  p.seed = seed;
  Rng rng(seed);
  auto fill = [&rng](MatrixT<Scalar>& w, int fan_in) {
    const double bound = std::sqrt(3.0 / fan_in);
    for (Eigen::Index k = 0; k < w.size(); ++k)
      w.data()[k] = static_cast<Scalar>((2.0 * uniform01(rng) - 1.0) * bound);
  };
  p.w1.resize(input, hidden);
  fill(p.w1, input);
  p.b1 = VectorT<Scalar>::Zero(hidden);
  p.w2.resize(hidden, output);
  fill(p.w2, hidden);
  p.b2 = VectorT<Scalar>::Zero(output);
  return p;
}

/// Activations kept from a forward pass for backward().
template <typename Scalar>
struct ForwardCache {
  MatrixT<Scalar> input;   // in x B
  MatrixT<Scalar> hidden;  // hidden x B, post-ReLU
  MatrixT<Scalar> logits;  // out x B
};

template <typename Scalar, typename Derived>
ForwardCache<Scalar> forward(const Mlp<Scalar>& p, const Eigen::MatrixBase<Derived>& input) {
  if (input.rows() != p.input_size())
    throw std::invalid_argument("feature length " + std::to_string(input.rows()) +
                                " does not match network input " +
                                std::to_string(p.input_size()));
  ForwardCache<Scalar> c;
  c.input = input.template cast<Scalar>();
  c.hidden.noalias() = p.w1.transpose() * c.input;
  c.hidden.colwise() += p.b1;
  c.hidden = c.hidden.cwiseMax(Scalar(0));
  c.logits.noalias() = p.w2.transpose() * c.hidden;
  c.logits.colwise() += p.b2;
  return c;
}

/// Softmax over the entries where `allowed` is nonzero; the rest get exactly 0.
/// Max-subtracted, so finite for large logits. Throws if nothing is allowed.
template <typename DerivedZ, typename DerivedA>
auto masked_softmax(const Eigen::MatrixBase<DerivedZ>& logits,
                    const Eigen::MatrixBase<DerivedA>& allowed) {
  using Scalar = typename DerivedZ::Scalar;
  VectorT<Scalar> out = VectorT<Scalar>::Zero(logits.size());
  Scalar max = -std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index k = 0; k < logits.size(); ++k)
    if (allowed(k) != 0 && logits(k) > max) max = logits(k);
  if (max == -std::numeric_limits<Scalar>::infinity())
    throw std::logic_error("masked softmax with every entry masked");
  Scalar sum = 0;
  for (Eigen::Index k = 0; k < logits.size(); ++k)
    if (allowed(k) != 0) {
      out(k) = std::exp(logits(k) - max);
      sum += out(k);
    }
  out /= sum;
  return out;
}

/// 1 for unasked questions, 0 for asked ones.
template <typename Scalar>
VectorT<Scalar> allowed_vector(const AskedMask& mask) {
  VectorT<Scalar> a(mask.size());
  for (int j = 0; j < mask.size(); ++j) a(j) = mask.asked(j) ? Scalar(0) : Scalar(1);
  return a;
}

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  return z >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-z)) : std::exp(z) / (Scalar(1) + std::exp(z));
}

/// pi(. | state) with asked questions masked out.
template <typename Scalar, typename Derived>
VectorT<Scalar> forward_policy(const Mlp<Scalar>& p, const Eigen::MatrixBase<Derived>& state,
                               const AskedMask& mask) {
  if (p.head != Head::MaskedSoftmax) throw std::invalid_argument("not a policy network");
  if (mask.size() != p.output_size()) throw std::invalid_argument("mask length != action count");
  const auto c = forward(p, state);
  return masked_softmax(c.logits.col(0), allowed_vector<Scalar>(mask));
}

template <typename Scalar, typename Derived>
Scalar forward_value(const Mlp<Scalar>& p, const Eigen::MatrixBase<Derived>& state) {
  if (p.head != Head::Scalar) throw std::invalid_argument("not a value network");
  return forward(p, state).logits(0, 0);
}

template <typename Scalar, typename Derived>
Scalar forward_reward(const Mlp<Scalar>& p, const Eigen::MatrixBase<Derived>& features) {
  if (p.head != Head::Sigmoid) throw std::invalid_argument("not a reward network");
  return sigmoid(forward(p, features).logits(0, 0));
}

/// Gradient of all parameters given dLoss/dlogits (out x B).
template <typename Scalar>
Mlp<Scalar> backward(const Mlp<Scalar>& p, const ForwardCache<Scalar>& c,
                     const MatrixT<Scalar>& dlogits) {
  Mlp<Scalar> g;
  g.head = p.head;
  g.seed = p.seed;
  g.w2.noalias() = c.hidden * dlogits.transpose();
  g.b2 = dlogits.rowwise().sum();
  MatrixT<Scalar> dhidden = p.w2 * dlogits;
  dhidden = (c.hidden.array() > Scalar(0)).select(dhidden, Scalar(0));
  g.w1.noalias() = c.input * dhidden.transpose();
  g.b1 = dhidden.rowwise().sum();
  return g;
}

template <typename Scalar>
struct LossAndGrad {
  Scalar loss = 0;
  Mlp<Scalar> grad;
};

/// L = -mean_b advantage_b * log pi(action_b | x_b), softmax masked by `allowed`
/// (out x B, nonzero = selectable).
template <typename Scalar>
LossAndGrad<Scalar> policy_loss(const Mlp<Scalar>& p, const std::type_identity_t<MatrixT<Scalar>>& input,
                                const std::vector<int>& actions,
                                const std::type_identity_t<MatrixT<Scalar>>& allowed,
                                const std::type_identity_t<VectorT<Scalar>>& advantages) {
  const auto batch = input.cols();
  const auto c = forward(p, input);
  MatrixT<Scalar> dlogits = MatrixT<Scalar>::Zero(c.logits.rows(), batch);
  Scalar loss = 0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const VectorT<Scalar> pi = masked_softmax(c.logits.col(b), allowed.col(b));
    const int a = actions[b];
    if (allowed(a, b) == 0) throw std::logic_error("policy loss on a masked action");
    // log pi(a) from the logits; pi(a) itself may underflow for stale replay actions.
    Scalar max = -std::numeric_limits<Scalar>::infinity();
    Scalar sum = 0;
    for (Eigen::Index k = 0; k < c.logits.rows(); ++k)
      if (allowed(k, b) != 0) max = std::max(max, c.logits(k, b));
    for (Eigen::Index k = 0; k < c.logits.rows(); ++k)
      if (allowed(k, b) != 0) sum += std::exp(c.logits(k, b) - max);
    loss -= advantages(b) * (c.logits(a, b) - max - std::log(sum));
    const Scalar w = advantages(b) / static_cast<Scalar>(batch);
    dlogits.col(b) = w * pi;
    dlogits(a, b) -= w;
  }
  return {loss / static_cast<Scalar>(batch), backward(p, c, dlogits)};
}

/// L = mean_b (V(x_b) - target_b)^2
template <typename Scalar>
LossAndGrad<Scalar> value_loss(const Mlp<Scalar>& p, const std::type_identity_t<MatrixT<Scalar>>& input,
                               const std::type_identity_t<VectorT<Scalar>>& targets) {
  const auto batch = static_cast<Scalar>(input.cols());
  const auto c = forward(p, input);
  const VectorT<Scalar> err = c.logits.row(0).transpose() - targets;
  MatrixT<Scalar> dlogits = (Scalar(2) / batch) * err.transpose();
  return {err.squaredNorm() / batch, backward(p, c, dlogits)};
}

/// L = mean_b (sigmoid(z(x_b)) - target_b)^2
template <typename Scalar>
LossAndGrad<Scalar> reward_loss(const Mlp<Scalar>& p, const std::type_identity_t<MatrixT<Scalar>>& input,
                                const std::type_identity_t<VectorT<Scalar>>& targets) {
  const auto batch = static_cast<Scalar>(input.cols());
  const auto c = forward(p, input);
  VectorT<Scalar> out = c.logits.row(0).transpose().unaryExpr([](Scalar z) { return sigmoid(z); });
  const VectorT<Scalar> err = out - targets;
  MatrixT<Scalar> dlogits(1, input.cols());
  for (Eigen::Index b = 0; b < input.cols(); ++b)
    dlogits(0, b) = Scalar(2) / batch * err(b) * out(b) * (Scalar(1) - out(b));
  return {err.squaredNorm() / batch, backward(p, c, dlogits)};
}

template <typename Scalar>
struct AdamState {
  Mlp<Scalar> m;
  Mlp<Scalar> v;
  std::int64_t t = 0;
  Scalar lr = Scalar(1e-3);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar eps = Scalar(1e-8);

  static AdamState fresh(const Mlp<Scalar>& params, Scalar lr) {
    AdamState s;
    s.m = Mlp<Scalar>::zeros_like(params);
    s.v = Mlp<Scalar>::zeros_like(params);
    s.lr = lr;
    return s;
  }
};

/// Bias-corrected ADAM. Throws std::domain_error on non-finite gradients
/// (params and state are left untouched).
template <typename Scalar>
void adam_step(Mlp<Scalar>& params, const Mlp<Scalar>& grads, AdamState<Scalar>& opt) {
  if (!params.shape_matches(grads) || !params.shape_matches(opt.m))
    throw std::invalid_argument("ADAM shape mismatch");
  if (!grads.all_finite()) throw std::domain_error("non-finite gradient");
  ++opt.t;
  const Scalar c1 = Scalar(1) - std::pow(opt.beta1, static_cast<Scalar>(opt.t));
  const Scalar c2 = Scalar(1) - std::pow(opt.beta2, static_cast<Scalar>(opt.t));
  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = opt.beta1 * m + (Scalar(1) - opt.beta1) * g;
    v = opt.beta2 * v.array() + (Scalar(1) - opt.beta2) * g.array().square();
    p.array() -= opt.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + opt.eps);
  };
  update(params.w1, grads.w1, opt.m.w1, opt.v.w1);
  update(params.b1, grads.b1, opt.m.b1, opt.v.b1);
  update(params.w2, grads.w2, opt.m.w2, opt.v.w2);
  update(params.b2, grads.b2, opt.m.b2, opt.v.b2);
}

// ---------------------------------------------------------------------------
// Checkpoints: text header plus hexadecimal floats, so round trips are bit-exact.
//
//   q20mlp v1
//   head <masked_softmax|scalar|sigmoid>
//   scalar <double|float>
//   dims <input> <hidden> <output>
//   seed <seed>
//   w1 <rows> <cols>
//   <one line per row>
//   b1 <size> ...

namespace detail {

template <typename Scalar>
constexpr std::string_view scalar_name() {
  return std::is_same_v<Scalar, float> ? "float" : "double";
}

template <typename Scalar>
std::string hex(Scalar v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::hex);
  return std::string(buf, end);
}

template <typename Scalar>
Scalar unhex(const std::string& s) {
  Scalar v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, std::chars_format::hex);
  if (ec != std::errc() || p != s.data() + s.size())
    throw std::runtime_error("checkpoint: bad number '" + s + "'");
  return v;
}

template <typename Scalar, typename M>
void write_block(std::ostream& out, const char* name, const M& block) {
  out << name << ' ' << block.rows() << ' ' << block.cols() << '\n';
  for (Eigen::Index r = 0; r < block.rows(); ++r) {
    for (Eigen::Index c = 0; c < block.cols(); ++c) out << (c ? " " : "") << hex<Scalar>(block(r, c));
    out << '\n';
  }
}

template <typename Scalar, typename M>
void read_block(std::istream& in, const char* name, M& block) {
  std::string tag;
  Eigen::Index rows = 0, cols = 0;
  if (!(in >> tag >> rows >> cols) || tag != name)
    throw std::runtime_error(std::string("checkpoint: expected block ") + name);
  if (rows < 0 || cols < 0 || (M::ColsAtCompileTime == 1 && cols != 1))
    throw std::runtime_error(std::string("checkpoint: bad shape for ") + name);
  block.resize(rows, cols);
  std::string tok;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!(in >> tok)) throw std::runtime_error("checkpoint: truncated block");
      block(r, c) = unhex<Scalar>(tok);
    }
}

}  // namespace detail

template <typename Scalar>
void write_checkpoint(std::ostream& out, const Mlp<Scalar>& p) {
  out << "q20mlp v1\n"
      << "head " << to_string(p.head) << '\n'
      << "scalar " << detail::scalar_name<Scalar>() << '\n'
      << "dims " << p.input_size() << ' ' << p.hidden_size() << ' ' << p.output_size() << '\n'
      << "seed " << p.seed << '\n';
  detail::write_block<Scalar>(out, "w1", p.w1);
  detail::write_block<Scalar>(out, "b1", p.b1);
  detail::write_block<Scalar>(out, "w2", p.w2);
  detail::write_block<Scalar>(out, "b2", p.b2);
}

template <typename Scalar>
Mlp<Scalar> read_checkpoint(std::istream& in) {
  std::string magic, version, key, value;
  if (!(in >> magic >> version) || magic != "q20mlp" || version != "v1")
    throw std::runtime_error("checkpoint: bad magic");
  Mlp<Scalar> p;
  if (!(in >> key >> value) || key != "head") throw std::runtime_error("checkpoint: missing head");
  p.head = parse_head(value);
  if (!(in >> key >> value) || key != "scalar" || value != detail::scalar_name<Scalar>())
    throw std::runtime_error("checkpoint: scalar type mismatch");
  int input = 0, hidden = 0, output = 0;
  if (!(in >> key >> input >> hidden >> output) || key != "dims")
    throw std::runtime_error("checkpoint: missing dims");
  if (!(in >> key >> p.seed) || key != "seed") throw std::runtime_error("checkpoint: missing seed");
  detail::read_block<Scalar>(in, "w1", p.w1);
  detail::read_block<Scalar>(in, "b1", p.b1);
  detail::read_block<Scalar>(in, "w2", p.w2);
  detail::read_block<Scalar>(in, "b2", p.b2);
  if (p.input_size() != input || p.hidden_size() != hidden || p.output_size() != output ||
      p.b1.size() != hidden || p.b2.size() != output || p.w2.rows() != hidden)
    throw std::runtime_error("checkpoint: block shapes disagree with dims");
  return p;
}

template <typename Scalar>
void save_checkpoint(const Mlp<Scalar>& p, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_checkpoint(out, p);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

template <typename Scalar>
Mlp<Scalar> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_checkpoint<Scalar>(in);
}

}  // namespace q20::nn
