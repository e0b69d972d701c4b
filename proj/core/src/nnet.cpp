#include "epopr/nnet.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <string>

#include "epopr/binary_io.hpp"
#include "epopr/error.hpp"

namespace epopr::nn {

struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  std::uint64_t mark = 0;

  std::vector<double>& g() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

Tensor make_result(std::size_t rows, std::size_t cols, std::vector<double> value,
                   std::vector<Tensor> inputs, std::function<void(Node&)> bw);

namespace {

thread_local bool t_grad_enabled = true;
std::uint64_t g_mark = 0;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MMap = Eigen::Map<RowMat>;


MMap view(std::vector<double>& v, std::size_t r, std::size_t c) {
  return MMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

[[noreturn]] void mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw Error(Errc::kDimensionMismatch,
              std::string(op) + ": " + std::to_string(a.rows()) + "x" +
                  std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                  std::to_string(b.cols()));
}

void require(const Tensor& t, const char* op) {
  if (!t.defined()) throw Error(Errc::kPrecondition, std::string(op) + ": undefined tensor");
}

void same_shape(const char* op, const Tensor& a, const Tensor& b) {
  require(a, op);
  require(b, op);
  if (a.rows() != b.rows() || a.cols() != b.cols()) mismatch(op, a, b);
}

Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

template <class F, class D>
Tensor unary(const Tensor& a, F f, D dfdx) {
  require(a, "unary");
  std::vector<double> out(a.size());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  return make_result(a.rows(), a.cols(), std::move(out), {a}, [dfdx](Node& n) {
    Node& p = parent(n, 0);
    if (!p.requires_grad) return;
    auto& pg = p.g();
    for (std::size_t i = 0; i < pg.size(); ++i) {
      pg[i] += n.grad[i] * dfdx(p.value[i], n.value[i]);
    }
  });
}

}  // namespace

Tensor make_result(std::size_t rows, std::size_t cols, std::vector<double> value,
                   std::vector<Tensor> inputs, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(value);
  n->is_leaf = false;
  if (t_grad_enabled) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.node()->requires_grad;
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(inputs.size());
      for (const auto& t : inputs) n->parents.push_back(t.shared());
      n->backward = std::move(bw);
    }
  }
  return Tensor(std::move(n));
}

Tensor Tensor::constant(std::size_t rows, std::size_t cols, std::vector<double> values) {
  if (values.size() != rows * cols) {
    throw Error(Errc::kDimensionMismatch, "constant: value count does not match shape");
  }
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(values);
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) {
  return constant(rows, cols, std::vector<double>(rows * cols, 0.0));
}

Tensor Tensor::scalar(double v) { return constant(1, 1, {v}); }

Tensor Tensor::parameter(std::size_t rows, std::size_t cols, std::vector<double> values) {
  Tensor t = constant(rows, cols, std::move(values));
  t.node_->requires_grad = true;
  return t;
}

Tensor Tensor::row(std::span<const double> values) {
  return constant(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

std::size_t Tensor::rows() const { return node_ ? node_->rows : 0; }
std::size_t Tensor::cols() const { return node_ ? node_->cols : 0; }

std::span<const double> Tensor::values() const {
  if (!node_) return {};
  return node_->value;
}

std::span<double> Tensor::mutable_values() {
  if (!node_) return {};
  return node_->value;
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (r >= rows() || c >= cols()) {
    throw Error(Errc::kDimensionMismatch, "at: index out of range");
  }
  return node_->value[r * node_->cols + c];
}

double Tensor::item() const {
  if (rows() != 1 || cols() != 1) {
    throw Error(Errc::kDimensionMismatch, "item: tensor is not 1x1");
  }
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::span<const double> Tensor::grad() const {
  if (!node_) return {};
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a, "matmul");
  require(b, "matmul");
  if (a.cols() != b.rows()) mismatch("matmul", a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n);
  view(out, m, n).noalias() = view(a.node()->value, m, k) * view(b.node()->value, k, n);
  return make_result(m, n, std::move(out), {a, b}, [m, k, n](Node& c) {
    Node& pa = parent(c, 0);
    Node& pb = parent(c, 1);
    const auto dc = view(c.grad, m, n);
    if (pa.requires_grad) {
      view(pa.g(), m, k).noalias() += dc * view(pb.value, k, n).transpose();
    }
    if (pb.requires_grad) {
      view(pb.g(), k, n).noalias() += view(pa.value, m, k).transpose() * dc;
    }
  });
}

Tensor transpose(const Tensor& a) {
  require(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  view(out, c, r) = view(a.node()->value, r, c).transpose();
  return make_result(c, r, std::move(out), {a}, [r, c](Node& n) {
    Node& p = parent(n, 0);
    if (p.requires_grad) view(p.g(), r, c) += view(n.grad, c, r).transpose();
  });
}

namespace {

template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  same_shape(op, a, b);
  std::vector<double> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
  return make_result(a.rows(), a.cols(), std::move(out), {a, b}, [da, db](Node& n) {
    Node& pa = parent(n, 0);
    Node& pb = parent(n, 1);
    if (pa.requires_grad) {
      auto& g = pa.g();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * da(pa.value[i], pb.value[i]);
    }
    if (pb.requires_grad) {
      auto& g = pb.g();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * db(pa.value[i], pb.value[i]);
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  // Ties route the gradient to the first argument.
  return binary(
      "minimum", a, b, [](double x, double y) { return std::min(x, y); },
      [](double x, double y) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require(a, "add_row");
  require(row, "add_row");
  if (row.rows() != 1 || row.cols() != a.cols()) mismatch("add_row", a, row);
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto rv = row.values();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += rv[j];
  }
  return make_result(r, c, std::move(out), {a, row}, [r, c](Node& n) {
    Node& pa = parent(n, 0);
    Node& pb = parent(n, 1);
    if (pa.requires_grad) {
      auto& g = pa.g();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.g();
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) g[j] += n.grad[i * c + j];
      }
    }
  });
}

Tensor repeat_rows(const Tensor& row, std::size_t n_rows) {
  require(row, "repeat_rows");
  if (row.rows() != 1) {
    throw Error(Errc::kDimensionMismatch, "repeat_rows: input must have one row");
  }
  const std::size_t c = row.cols();
  std::vector<double> out;
  out.reserve(n_rows * c);
  for (std::size_t i = 0; i < n_rows; ++i) {
    out.insert(out.end(), row.values().begin(), row.values().end());
  }
  return make_result(n_rows, c, std::move(out), {row}, [n_rows, c](Node& n) {
    Node& p = parent(n, 0);
    if (!p.requires_grad) return;
    auto& g = p.g();
    for (std::size_t i = 0; i < n_rows; ++i) {
      for (std::size_t j = 0; j < c; ++j) g[j] += n.grad[i * c + j];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  return unary(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); },
      [](double x, double) {
        const double u = c * (x + k * x * x * x);
        const double t = std::tanh(u);
        const double du = c * (1.0 + 3.0 * k * x * x);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Tensor softmax_rows(const Tensor& a) {
  require(a, "softmax_rows");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  const auto av = a.values();
  for (std::size_t i = 0; i < r; ++i) {
    const double* x = av.data() + i * c;
    double* y = out.data() + i * c;
    const double m = *std::max_element(x, x + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (y[j] = std::exp(x[j] - m));
    for (std::size_t j = 0; j < c; ++j) y[j] /= z;
  }
  return make_result(r, c, std::move(out), {a}, [r, c](Node& n) {
    Node& p = parent(n, 0);
    if (!p.requires_grad) return;
    auto& g = p.g();
    for (std::size_t i = 0; i < r; ++i) {
      const double* y = n.value.data() + i * c;
      const double* dy = n.grad.data() + i * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[j] * (dy[j] - dot);
    }
  });
}

Tensor log_softmax_rows(const Tensor& a) {
  require(a, "log_softmax_rows");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  const auto av = a.values();
  for (std::size_t i = 0; i < r; ++i) {
    const double* x = av.data() + i * c;
    const double m = *std::max_element(x, x + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(x[j] - m);
    const double lz = m + std::log(z);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[j] - lz;
  }
  return make_result(r, c, std::move(out), {a}, [r, c](Node& n) {
    Node& p = parent(n, 0);
    if (!p.requires_grad) return;
    auto& g = p.g();
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += n.grad[i * c + j];
      for (std::size_t j = 0; j < c; ++j) {
        g[i * c + j] += n.grad[i * c + j] - std::exp(n.value[i * c + j]) * s;
      }
    }
  });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       double eps) {
  require(x, "layer_norm");
  if (gamma.rows() != 1 || gamma.cols() != x.cols()) mismatch("layer_norm", x, gamma);
  if (beta.rows() != 1 || beta.cols() != x.cols()) mismatch("layer_norm", x, beta);
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(r * c);
  auto xhat = std::make_shared<std::vector<double>>(r * c);
  auto inv_sd = std::make_shared<std::vector<double>>(r);
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xv[i * c + j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xv[i * c + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_sd)[i] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xv[i * c + j] - mu) * is;
      (*xhat)[i * c + j] = h;
      out[i * c + j] = gv[j] * h + bv[j];
    }
  }
  return make_result(r, c, std::move(out), {x, gamma, beta}, [r, c, xhat, inv_sd](Node& n) {
    Node& px = parent(n, 0);
    Node& pg = parent(n, 1);
    Node& pb = parent(n, 2);
    const auto& dy = n.grad;
    if (pg.requires_grad) {
      auto& g = pg.g();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += dy[i * c + j] * (*xhat)[i * c + j];
    }
    if (pb.requires_grad) {
      auto& g = pb.g();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += dy[i * c + j];
    }
    if (px.requires_grad) {
      auto& g = px.g();
      const double inv_c = 1.0 / static_cast<double>(c);
      for (std::size_t i = 0; i < r; ++i) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          const double dh = dy[i * c + j] * pg.value[j];
          m1 += dh;
          m2 += dh * (*xhat)[i * c + j];
        }
        m1 *= inv_c;
        m2 *= inv_c;
        for (std::size_t j = 0; j < c; ++j) {
          const double dh = dy[i * c + j] * pg.value[j];
          g[i * c + j] += (*inv_sd)[i] * (dh - m1 - (*xhat)[i * c + j] * m2);
        }
      }
    }
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require(a, "concat_cols");
  require(b, "concat_cols");
  if (a.rows() != b.rows()) mismatch("concat_cols", a, b);
  const std::size_t r = a.rows(), ca = a.cols(), cb = b.cols(), c = ca + cb;
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(a.values().data() + i * ca, ca, out.data() + i * c);
    std::copy_n(b.values().data() + i * cb, cb, out.data() + i * c + ca);
  }
  return make_result(r, c, std::move(out), {a, b}, [r, ca, cb, c](Node& n) {
    Node& pa = parent(n, 0);
    Node& pb = parent(n, 1);
    if (pa.requires_grad) {
      auto& g = pa.g();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < ca; ++j) g[i * ca + j] += n.grad[i * c + j];
    }
    if (pb.requires_grad) {
      auto& g = pb.g();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < cb; ++j) g[i * cb + j] += n.grad[i * c + ca + j];
    }
  });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require(a, "concat_rows");
  require(b, "concat_rows");
  if (a.cols() != b.cols()) mismatch("concat_rows", a, b);
  const std::size_t na = a.size();
  std::vector<double> out(a.values().begin(), a.values().end());
  out.insert(out.end(), b.values().begin(), b.values().end());
  return make_result(a.rows() + b.rows(), a.cols(), std::move(out), {a, b}, [na](Node& n) {
    Node& pa = parent(n, 0);
    Node& pb = parent(n, 1);
    if (pa.requires_grad) {
      auto& g = pa.g();
      for (std::size_t i = 0; i < na; ++i) g[i] += n.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.g();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[na + i];
    }
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require(a, "slice_rows");
  if (begin > end || end > a.rows()) {
    throw Error(Errc::kDimensionMismatch, "slice_rows: range out of bounds");
  }
  const std::size_t c = a.cols();
  std::vector<double> out(a.values().begin() + static_cast<std::ptrdiff_t>(begin * c),
                          a.values().begin() + static_cast<std::ptrdiff_t>(end * c));
  return make_result(end - begin, c, std::move(out), {a}, [begin, c](Node& n) {
    Node& p = parent(n, 0);
    if (!p.requires_grad) return;
    auto& g = p.g();
    for (std::size_t i = 0; i < n.grad.size(); ++i) g[begin * c + i] += n.grad[i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require(a, "slice_cols");
  if (begin > end || end > a.cols()) {
    throw Error(Errc::kDimensionMismatch, "slice_cols: range out of bounds");
  }
  const std::size_t r = a.rows(), c = a.cols(), w = end - begin;
  std::vector<double> out(r * w);
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(a.values().data() + i * c + begin, w, out.data() + i * w);
  }
  return make_result(r, w, std::move(out), {a}, [r, c, w, begin](Node& n) {
    Node& p = parent(n, 0);
    if (!p.requires_grad) return;
    auto& g = p.g();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * c + begin + j] += n.grad[i * w + j];
  });
}

Tensor element(const Tensor& a, std::size_t r, std::size_t c) {
  const double v = a.at(r, c);
  const std::size_t idx = r * a.cols() + c;
  return make_result(1, 1, {v}, {a}, [idx](Node& n) {
    Node& p = parent(n, 0);
    if (p.requires_grad) p.g()[idx] += n.grad[0];
  });
}

Tensor sum(const Tensor& a) {
  require(a, "sum");
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_result(1, 1, {s}, {a}, [](Node& n) {
    Node& p = parent(n, 0);
    if (!p.requires_grad) return;
    for (auto& g : p.g()) g += n.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  require(a, "mean");
  if (a.size() == 0) throw Error(Errc::kEmptyInput, "mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor add_n(std::span<const Tensor> terms) {
  if (terms.empty()) throw Error(Errc::kEmptyInput, "add_n: no terms");
  const Tensor& first = terms.front();
  for (const auto& t : terms) same_shape("add_n", first, t);
  std::vector<double> out(first.size(), 0.0);
  for (const auto& t : terms) {
    const auto v = t.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
  }
  return make_result(first.rows(), first.cols(), std::move(out),
                     std::vector<Tensor>(terms.begin(), terms.end()), [](Node& n) {
                       for (auto& p : n.parents) {
                         if (!p->requires_grad) continue;
                         auto& g = p->g();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
                       }
                     });
}

Tensor detach(const Tensor& a) {
  require(a, "detach");
  return Tensor::constant(a.rows(), a.cols(),
                          std::vector<double>(a.values().begin(), a.values().end()));
}

void backward(const Tensor& loss) {
  require(loss, "backward");
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw Error(Errc::kNonScalarLoss, "backward needs a 1x1 loss, got " +
                                          std::to_string(loss.rows()) + "x" +
                                          std::to_string(loss.cols()));
  }
  Node* root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  const std::uint64_t mark = ++g_mark;
  std::vector<Node*> order;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  root->mark = mark;
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && p->mark != mark) {
        p->mark = mark;
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root->g()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf || !n->backward) continue;
    if (n->grad.empty()) continue;  // unreachable from the loss by value
    n->backward(*n);
  }
}

void zero_grad(const ParamList& params) {
  for (auto p : params) p.zero_grad();
}

void sgd_step(const ParamList& params, double lr) {
  for (auto p : params) {
    const auto g = p.grad();
    if (g.empty()) continue;
    auto v = p.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
  }
}

void polyak_update(const ParamList& target, const ParamList& online, double tau) {
  if (target.size() != online.size()) {
    throw Error(Errc::kDimensionMismatch, "polyak_update: parameter count differs");
  }
  for (std::size_t k = 0; k < target.size(); ++k) {
    Tensor t = target[k];
    if (t.rows() != online[k].rows() || t.cols() != online[k].cols()) {
      mismatch("polyak_update", t, online[k]);
    }
    auto tv = t.mutable_values();
    const auto ov = online[k].values();
    for (std::size_t i = 0; i < tv.size(); ++i) tv[i] = tau * ov[i] + (1.0 - tau) * tv[i];
  }
}

ParamList clone_params(const ParamList& params) {
  ParamList out;
  out.reserve(params.size());
  for (const auto& p : params) {
    out.push_back(Tensor::parameter(p.rows(), p.cols(),
                                    std::vector<double>(p.values().begin(), p.values().end())));
  }
  return out;
}

void copy_params(const ParamList& dst, const ParamList& src) { polyak_update(dst, src, 1.0); }

Adam::Adam(ParamList params, double lr, AdamConfig cfg)
    : params_(std::move(params)), lr_(lr), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto g = params_[k].grad();
    if (g.empty()) continue;
    auto w = params_[k].mutable_values();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
    }
  }
}

namespace {

Tensor uniform_param(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = bound * (2.0 * uniform01(rng) - 1.0);
  return Tensor::parameter(rows, cols, std::move(v));
}

}  // namespace

Linear::Linear(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = uniform_param(in, out, bound, rng);
  bias_ = uniform_param(1, out, bound, rng);
}

Tensor Linear::forward(const Tensor& x) const { return add_row(matmul(x, weight_), bias_); }

void Linear::collect(ParamList& out) const {
  out.push_back(weight_);
  out.push_back(bias_);
}

LayerNorm::LayerNorm(std::size_t dim)
    : gamma_(Tensor::parameter(1, dim, std::vector<double>(dim, 1.0))),
      beta_(Tensor::parameter(1, dim, std::vector<double>(dim, 0.0))) {}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm_rows(x, gamma_, beta_); }

void LayerNorm::collect(ParamList& out) const {
  out.push_back(gamma_);
  out.push_back(beta_);
}

MultiHeadSelfAttention::MultiHeadSelfAttention(std::size_t model_dim, std::size_t n_heads,
                                               Rng& rng)
    : n_heads_(n_heads),
      q_(model_dim, model_dim, rng),
      k_(model_dim, model_dim, rng),
      v_(model_dim, model_dim, rng),
      o_(model_dim, model_dim, rng) {}

Tensor MultiHeadSelfAttention::forward(const Tensor& x) const {
  const std::size_t d = x.cols();
  const std::size_t dh = d / n_heads_;
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor q = q_.forward(x);
  const Tensor k = k_.forward(x);
  const Tensor v = v_.forward(x);
  Tensor heads;
  for (std::size_t h = 0; h < n_heads_; ++h) {
    const Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    const Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    const Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    const Tensor att = softmax_rows(scale(matmul(qh, transpose(kh)), s));
    const Tensor oh = matmul(att, vh);
    heads = heads.defined() ? concat_cols(heads, oh) : oh;
  }
  return o_.forward(heads);
}

void MultiHeadSelfAttention::collect(ParamList& out) const {
  q_.collect(out);
  k_.collect(out);
  v_.collect(out);
  o_.collect(out);
}

void validate(const EncoderConfig& cfg) {
  auto bad = [](const std::string& m) { throw Error(Errc::kInvalidConfig, m); };
  if (cfg.input_dim == 0) bad("encoder input_dim must be positive");
  if (cfg.model_dim == 0) bad("encoder model_dim must be positive");
  if (cfg.n_heads == 0) bad("encoder n_heads must be positive");
  if (cfg.model_dim % cfg.n_heads != 0) bad("encoder model_dim must be divisible by n_heads");
  if (cfg.feedforward_dim == 0) bad("encoder feedforward_dim must be positive");
}

SetEncoder::SetEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  validate(cfg);
  embed_ = Linear(cfg.input_dim, cfg.model_dim, rng);
  cls_ = uniform_param(1, cfg.model_dim, 1.0 / std::sqrt(static_cast<double>(cfg.model_dim)),
                       rng);
  blocks_.reserve(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    Block b;
    b.ln1 = LayerNorm(cfg.model_dim);
    b.attn = MultiHeadSelfAttention(cfg.model_dim, cfg.n_heads, rng);
    b.ln2 = LayerNorm(cfg.model_dim);
    b.ff1 = Linear(cfg.model_dim, cfg.feedforward_dim, rng);
    b.ff2 = Linear(cfg.feedforward_dim, cfg.model_dim, rng);
    blocks_.push_back(std::move(b));
  }
  final_ln_ = LayerNorm(cfg.model_dim);
}

EncodedSet SetEncoder::encode(const Tensor& tokens) const {
  if (tokens.rows() == 0) throw Error(Errc::kEmptyCandidates, "encode: empty token set");
  if (tokens.cols() != cfg_.input_dim) {
    throw Error(Errc::kDimensionMismatch,
                "encode: expected token width " + std::to_string(cfg_.input_dim) +
                    ", got " + std::to_string(tokens.cols()));
  }
  Tensor x = concat_rows(cls_, embed_.forward(tokens));
  for (const auto& b : blocks_) {
    x = add(x, b.attn.forward(b.ln1.forward(x)));
    x = add(x, b.ff2.forward(gelu(b.ff1.forward(b.ln2.forward(x)))));
  }
  x = final_ln_.forward(x);
  return {slice_rows(x, 0, 1), slice_rows(x, 1, x.rows())};
}

void SetEncoder::collect(ParamList& out) const {
  embed_.collect(out);
  out.push_back(cls_);
  for (const auto& b : blocks_) {
    b.ln1.collect(out);
    b.attn.collect(out);
    b.ln2.collect(out);
    b.ff1.collect(out);
    b.ff2.collect(out);
  }
  final_ln_.collect(out);
}

Mlp::Mlp(std::vector<std::size_t> dims, Rng& rng) {
  if (dims.size() < 2) throw Error(Errc::kInvalidConfig, "mlp needs at least two widths");
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    if (dims[i] == 0 || dims[i + 1] == 0) {
      throw Error(Errc::kInvalidConfig, "mlp widths must be positive");
    }
    layers_.emplace_back(dims[i], dims[i + 1], rng);
  }
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h);
    if (i + 1 < layers_.size()) h = nn::tanh(h);
  }
  return h;
}

void Mlp::collect(ParamList& out) const {
  for (const auto& l : layers_) l.collect(out);
}

void save_params(const ParamList& params, std::ostream& os) {
  io::BinaryWriter w(os);
  w.magic("NN1");
  w.u32(1);
  w.u64(params.size());
  for (const auto& p : params) {
    w.u64(p.rows());
    w.u64(p.cols());
    w.f64s(std::vector<double>(p.values().begin(), p.values().end()));
  }
  if (!os) throw Error(Errc::kIo, "failed writing NN1 section");
}

void load_params(const ParamList& params, std::istream& is) {
  io::BinaryReader r(is);
  r.expect_magic("NN1");
  if (const auto v = r.u32(); v != 1) {
    throw Error(Errc::kFormat, "unsupported NN1 version " + std::to_string(v));
  }
  const auto n = r.u64();
  if (n != params.size()) {
    throw Error(Errc::kFormat, "NN1 holds " + std::to_string(n) + " arrays, expected " +
                                   std::to_string(params.size()));
  }
  // Read everything before touching the parameters so a bad file leaves
  // them unchanged.
  std::vector<std::vector<double>> staged;
  staged.reserve(n);
  for (std::uint64_t k = 0; k < n; ++k) {
    const auto rows = r.u64();
    const auto cols = r.u64();
    if (rows != params[k].rows() || cols != params[k].cols()) {
      throw Error(Errc::kFormat, "NN1 array " + std::to_string(k) + " has shape " +
                                     std::to_string(rows) + "x" + std::to_string(cols));
    }
    auto vals = r.f64s();
    if (vals.size() != rows * cols) throw Error(Errc::kFormat, "NN1 array size mismatch");
    staged.push_back(std::move(vals));
  }
  for (std::uint64_t k = 0; k < n; ++k) {
    Tensor t = params[k];
    std::copy(staged[k].begin(), staged[k].end(), t.mutable_values().begin());
  }
}

}  // namespace epopr::nn
