#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "epopr/random.hpp"

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices of doubles, and the handful of layers the actor and critics need.
namespace epopr::nn {

struct Node;

// Handle to a node of the computation graph. Copies share the node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(std::size_t rows, std::size_t cols,
                         std::vector<double> values);
  static Tensor zeros(std::size_t rows, std::size_t cols);
  static Tensor scalar(double v);
  // A leaf that accumulates gradients across backward() calls.
  static Tensor parameter(std::size_t rows, std::size_t cols,
                          std::vector<double> values);
  static Tensor row(std::span<const double> values);

  bool defined() const { return node_ != nullptr; }
  std::size_t rows() const;
  std::size_t cols() const;
  std::vector<std::size_t> shape() const { return {rows(), cols()}; }
  std::size_t size() const { return rows() * cols(); }

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double at(std::size_t r, std::size_t c) const;
  double item() const;  // 1x1 only

  bool requires_grad() const;
  // Empty span until a backward pass reaches this node.
  std::span<const double> grad() const;
  void zero_grad();

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  friend Tensor make_result(std::size_t, std::size_t, std::vector<double>,
                            std::vector<Tensor>,
                            std::function<void(Node&)>);
  std::shared_ptr<Node> node_;
};

// While alive, operations record no graph (pure evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Elementwise / structural operations. Shapes are checked; mismatches throw
// Error(kDimensionMismatch).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_row(const Tensor& a, const Tensor& row);  // broadcast 1xC over rows
Tensor repeat_rows(const Tensor& row, std::size_t n);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor square(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       double eps = 1e-5);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor element(const Tensor& a, std::size_t r, std::size_t c);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor add_n(std::span<const Tensor> terms);  // same shapes
Tensor detach(const Tensor& a);

// Reverse sweep from a 1x1 loss; throws kNonScalarLoss otherwise.
void backward(const Tensor& loss);

using ParamList = std::vector<Tensor>;

void zero_grad(const ParamList& params);
// params <- params - lr * grad. Parameters without a gradient are skipped.
void sgd_step(const ParamList& params, double lr);
// target <- tau * online + (1 - tau) * target.
void polyak_update(const ParamList& target, const ParamList& online, double tau);
// Deep copy of parameter values into fresh parameter leaves.
ParamList clone_params(const ParamList& params);
void copy_params(const ParamList& dst, const ParamList& src);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(ParamList params, double lr, AdamConfig cfg = {});
  void step();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  std::uint64_t steps() const { return t_; }

 private:
  ParamList params_;
  double lr_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

// Dense layer y = x W + b with W of shape in x out.
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out) const;
  std::size_t in_dim() const { return weight_.rows(); }
  std::size_t out_dim() const { return weight_.cols(); }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

 private:
  Tensor weight_, bias_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim);
  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out) const;

 private:
  Tensor gamma_, beta_;
};

class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(std::size_t model_dim, std::size_t n_heads, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out) const;

 private:
  std::size_t n_heads_ = 1;
  Linear q_, k_, v_, o_;
};

struct EncoderConfig {
  std::size_t input_dim = 10;
  std::size_t model_dim = 32;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t feedforward_dim = 64;
};

void validate(const EncoderConfig& cfg);

struct EncodedSet {
  Tensor cls;     // 1 x model_dim
  Tensor tokens;  // n x model_dim, same order as the input rows
};

// Transformer encoder over an unordered set of tokens with a learned [CLS]
// summary token. No positional encoding, so it is permutation-equivariant.
class SetEncoder {
 public:
  SetEncoder() = default;
  SetEncoder(const EncoderConfig& cfg, Rng& rng);

  // tokens: n x input_dim with n >= 1.
  EncodedSet encode(const Tensor& tokens) const;
  void collect(ParamList& out) const;
  const EncoderConfig& config() const { return cfg_; }

 private:
  struct Block {
    LayerNorm ln1, ln2;
    MultiHeadSelfAttention attn;
    Linear ff1, ff2;
  };
  EncoderConfig cfg_;
  Linear embed_;
  Tensor cls_;
  std::vector<Block> blocks_;
  LayerNorm final_ln_;
};

// Fully connected network with tanh hidden activations and a linear output.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<std::size_t> dims, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out) const;

 private:
  std::vector<Linear> layers_;
};

// Parameter checkpoint section "NN1": shape-tagged arrays.
void save_params(const ParamList& params, std::ostream& os);
// Loads into existing parameters; shapes must match exactly.
void load_params(const ParamList& params, std::istream& is);

}  // namespace epopr::nn
