#include "windsr/autodiff.h"

#include <Eigen/Dense>
#include <algorithm>
#include <numeric>
#include <unordered_set>

#include "windsr/error.h"

namespace windsr::autodiff {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXd>;
using MapVec = Eigen::Map<Eigen::VectorXd>;

thread_local bool g_grad_enabled = true;

MapMat as_matrix(Tensor& t, int rows, int cols) { return MapMat(t.data(), rows, cols); }
ConstMapMat as_matrix(const Tensor& t, int rows, int cols) {
  return ConstMapMat(t.data(), rows, cols);
}

// Creates the result node. Inputs and the backward closure are kept only when
// gradients are enabled and some input requires them.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled)
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

void check(bool cond, const std::string& what) { require(cond, ErrorKind::kShape, what); }

void check_rank(const Var& v, std::size_t rank, const char* op) {
  check(v.defined() && v.value().rank() == rank,
        std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
            (v.defined() ? shape_string(v.shape()) : "undefined"));
}

}  // namespace

// --- Tensor ----------------------------------------------------------------

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    require(d >= 0, ErrorKind::kShape, "negative dimension in " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  require(data_.size() == element_count(shape_), ErrorKind::kShape,
          "tensor data does not match shape " + shape_string(shape_));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  require(element_count(shape) == size(), ErrorKind::kShape,
          "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

Tensor& Node::ensure_grad() {
  if (grad.shape() != value.shape()) grad = Tensor(value.shape());
  return grad;
}

void Var::zero_grad() {
  if (node_) node_->ensure_grad().fill(0.0);
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& root) {
  require(root.defined() && root.value().size() == 1, ErrorKind::kShape,
          "backward needs a scalar root");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    n->ensure_grad();
    if (n->backward) n->grad.fill(0.0);
  }
  root.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

// --- elementwise -----------------------------------------------------------

Var add(const Var& a, const Var& b) {
  check(a.shape() == b.shape(), "add: shape mismatch " + shape_string(a.shape()) + " vs " +
                                    shape_string(b.shape()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  return make_result(std::move(out), {a}, [s](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return make_result(std::move(out), {a}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    const auto& x = self.inputs[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) g[i] += self.grad[i];
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_result(std::move(out), {a}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// --- convolution -----------------------------------------------------------

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  check_rank(x, 3, "conv2d input");
  check_rank(weight, 4, "conv2d weight");
  check_rank(bias, 1, "conv2d bias");
  const int cin = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const int cout = weight.shape()[0], k = weight.shape()[2];
  check(weight.shape()[1] == cin && weight.shape()[3] == k,
        "conv2d: weight " + shape_string(weight.shape()) + " does not fit input " +
            shape_string(x.shape()));
  check(bias.shape()[0] == cout, "conv2d: bias size mismatch");
  require(stride >= 1 && pad >= 0, ErrorKind::kConfig, "conv2d: invalid stride/pad");
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (w + 2 * pad - k) / stride + 1;
  check(ho >= 1 && wo >= 1, "conv2d: input " + shape_string(x.shape()) + " too small");

  const int patch = cin * k * k;
  const int positions = ho * wo;
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);

  Tensor cols;
  if (!pointwise) {
    cols = Tensor({patch, positions});
    const double* src = x.value().data();
    double* dst = cols.data();
    for (int c = 0; c < cin; ++c)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          double* row = dst + static_cast<std::size_t>((c * k + ky) * k + kx) * positions;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - pad + ky;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride - pad + kx;
              row[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                      ? src[(static_cast<std::size_t>(c) * h + iy) * w + ix]
                                      : 0.0;
            }
          }
        }
  }
  const Tensor& colref = pointwise ? x.value() : cols;

  Tensor out({cout, ho, wo});
  {
    auto o = as_matrix(out, cout, positions);
    o.noalias() = as_matrix(weight.value(), cout, patch) * as_matrix(colref, patch, positions);
    o.colwise() += ConstMapVec(bias.value().data(), cout);
  }

  return make_result(
      std::move(out), {x, weight, bias},
      [=, cols = std::move(cols)](Node& self) {
        const auto g = as_matrix(self.grad, cout, positions);
        Node& xn = *self.inputs[0];
        Node& wn = *self.inputs[1];
        Node& bn = *self.inputs[2];
        const Tensor& colv = pointwise ? xn.value : cols;
        if (wn.requires_grad)
          as_matrix(wn.ensure_grad(), cout, patch).noalias() +=
              g * as_matrix(colv, patch, positions).transpose();
        if (bn.requires_grad) MapVec(bn.ensure_grad().data(), cout) += g.rowwise().sum();
        if (!xn.requires_grad) return;
        if (pointwise) {
          as_matrix(xn.ensure_grad(), patch, positions).noalias() +=
              as_matrix(wn.value, cout, patch).transpose() * g;
          return;
        }
        RowMat dcols = as_matrix(wn.value, cout, patch).transpose() * g;
        double* dx = xn.ensure_grad().data();
        for (int c = 0; c < cin; ++c)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const double* row = dcols.data() +
                                  static_cast<std::size_t>((c * k + ky) * k + kx) * positions;
              for (int oy = 0; oy < ho; ++oy) {
                const int iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= h) continue;
                for (int ox = 0; ox < wo; ++ox) {
                  const int ix = ox * stride - pad + kx;
                  if (ix < 0 || ix >= w) continue;
                  dx[(static_cast<std::size_t>(c) * h + iy) * w + ix] += row[oy * wo + ox];
                }
              }
            }
      });
}

// --- dense -----------------------------------------------------------------

Var linear(const Var& x, const Var& weight, const Var& bias) {
  check_rank(x, 2, "linear input");
  check_rank(weight, 2, "linear weight");
  const int n = x.shape()[0], d = x.shape()[1], o = weight.shape()[0];
  check(weight.shape()[1] == d, "linear: input width " + std::to_string(d) +
                                    " does not match weight " + shape_string(weight.shape()));
  const bool has_bias = bias.defined();
  if (has_bias) check(bias.value().size() == static_cast<std::size_t>(o), "linear: bias size");

  Tensor out({n, o});
  {
    auto m = as_matrix(out, n, o);
    m.noalias() = as_matrix(x.value(), n, d) * as_matrix(weight.value(), o, d).transpose();
    if (has_bias) m.rowwise() += ConstMapVec(bias.value().data(), o).transpose();
  }
  std::vector<Var> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result(std::move(out), std::move(inputs), [n, d, o, has_bias](Node& self) {
    const auto g = as_matrix(self.grad, n, o);
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    if (xn.requires_grad)
      as_matrix(xn.ensure_grad(), n, d).noalias() += g * as_matrix(wn.value, o, d);
    if (wn.requires_grad)
      as_matrix(wn.ensure_grad(), o, d).noalias() += g.transpose() * as_matrix(xn.value, n, d);
    if (has_bias && self.inputs[2]->requires_grad)
      MapVec(self.inputs[2]->ensure_grad().data(), o) += g.colwise().sum().transpose();
  });
}

Var add_row(const Var& h, const Var& v) {
  check_rank(h, 2, "add_row");
  const int n = h.shape()[0], o = h.shape()[1];
  check(v.value().size() == static_cast<std::size_t>(o), "add_row: row width mismatch");
  Tensor out = h.value();
  as_matrix(out, n, o).rowwise() += ConstMapVec(v.value().data(), o).transpose();
  return make_result(std::move(out), {h, v}, [n, o](Node& self) {
    const auto g = as_matrix(self.grad, n, o);
    if (self.inputs[0]->requires_grad)
      as_matrix(self.inputs[0]->ensure_grad(), n, o) += g;
    if (self.inputs[1]->requires_grad)
      MapVec(self.inputs[1]->ensure_grad().data(), o) += g.colwise().sum().transpose();
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  check(!parts.empty(), "concat_cols: no inputs");
  const int n = parts[0].shape().at(0);
  std::vector<int> widths;
  int total = 0;
  for (const auto& p : parts) {
    check_rank(p, 2, "concat_cols");
    check(p.shape()[0] == n, "concat_cols: row count mismatch");
    widths.push_back(p.shape()[1]);
    total += p.shape()[1];
  }
  Tensor out({n, total});
  int offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    as_matrix(out, n, total).middleCols(offset, widths[i]) =
        as_matrix(parts[i].value(), n, widths[i]);
    offset += widths[i];
  }
  return make_result(std::move(out), parts, [n, total, widths](Node& self) {
    int off = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (self.inputs[i]->requires_grad)
        as_matrix(self.inputs[i]->ensure_grad(), n, widths[i]) +=
            as_matrix(self.grad, n, total).middleCols(off, widths[i]);
      off += widths[i];
    }
  });
}

// --- spatial gathers ---------------------------------------------------------

Var gather_cells(const Var& feature, std::span<const int> flat_index) {
  check_rank(feature, 3, "gather_cells");
  const int c = feature.shape()[0];
  const int hw = feature.shape()[1] * feature.shape()[2];
  check(hw > 0 && c > 0, "gather_cells: empty feature grid");
  const int n = static_cast<int>(flat_index.size());
  std::vector<int> index(flat_index.begin(), flat_index.end());
  Tensor out({n, c});
  const double* f = feature.value().data();
  for (int i = 0; i < n; ++i) {
    check(index[i] >= 0 && index[i] < hw, "gather_cells: index out of range");
    for (int ch = 0; ch < c; ++ch) out[static_cast<std::size_t>(i) * c + ch] = f[ch * hw + index[i]];
  }
  return make_result(std::move(out), {feature}, [c, hw, n, index = std::move(index)](Node& self) {
    double* g = self.inputs[0]->ensure_grad().data();
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch)
        g[ch * hw + index[i]] += self.grad[static_cast<std::size_t>(i) * c + ch];
  });
}

Var unfold3x3(const Var& x) {
  check_rank(x, 3, "unfold3x3");
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  Tensor out({9 * c, h, w});
  const double* src = x.value().data();
  for (int ch = 0; ch < c; ++ch)
    for (int k = 0; k < 9; ++k) {
      const int dy = k / 3 - 1, dx = k % 3 - 1;
      double* dst = out.data() + static_cast<std::size_t>(ch * 9 + k) * h * w;
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          const int sy = y + dy, sx = xx + dx;
          dst[y * w + xx] = (sy >= 0 && sy < h && sx >= 0 && sx < w)
                                ? src[(static_cast<std::size_t>(ch) * h + sy) * w + sx]
                                : 0.0;
        }
    }
  return make_result(std::move(out), {x}, [c, h, w](Node& self) {
    double* g = self.inputs[0]->ensure_grad().data();
    for (int ch = 0; ch < c; ++ch)
      for (int k = 0; k < 9; ++k) {
        const int dy = k / 3 - 1, dx = k % 3 - 1;
        const double* src = self.grad.data() + static_cast<std::size_t>(ch * 9 + k) * h * w;
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) {
            const int sy = y + dy, sx = xx + dx;
            if (sy >= 0 && sy < h && sx >= 0 && sx < w)
              g[(static_cast<std::size_t>(ch) * h + sy) * w + sx] += src[y * w + xx];
          }
      }
  });
}

Var global_avg_pool(const Var& x) {
  check_rank(x, 3, "global_avg_pool");
  const int c = x.shape()[0];
  const int hw = x.shape()[1] * x.shape()[2];
  Tensor out({1, c});
  for (int ch = 0; ch < c; ++ch) {
    const double* p = x.value().data() + static_cast<std::size_t>(ch) * hw;
    out[ch] = std::accumulate(p, p + hw, 0.0) / hw;
  }
  return make_result(std::move(out), {x}, [c, hw](Node& self) {
    double* g = self.inputs[0]->ensure_grad().data();
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < hw; ++i) g[static_cast<std::size_t>(ch) * hw + i] += self.grad[ch] / hw;
  });
}

Var ensemble_combine(const Var& pred, std::span<const double> weights, int groups) {
  check_rank(pred, 2, "ensemble_combine");
  check(pred.shape()[1] == 1, "ensemble_combine: predictions must be a column");
  const int total = pred.shape()[0];
  check(groups > 0 && total % groups == 0, "ensemble_combine: rows not divisible by groups");
  check(weights.size() == static_cast<std::size_t>(total), "ensemble_combine: weight count");
  const int n = total / groups;
  std::vector<double> w(weights.begin(), weights.end());
  Tensor out({n, 1});
  for (int k = 0; k < groups; ++k)
    for (int i = 0; i < n; ++i) out[i] += w[k * n + i] * pred.value()[k * n + i];
  return make_result(std::move(out), {pred}, [n, groups, w = std::move(w)](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (int k = 0; k < groups; ++k)
      for (int i = 0; i < n; ++i) g[k * n + i] += w[k * n + i] * self.grad[i];
  });
}

// --- losses ----------------------------------------------------------------

Var mse(const Var& a, std::span<const double> target) {
  check(a.value().size() == target.size(),
        "mse: prediction count " + std::to_string(a.value().size()) + " vs target count " +
            std::to_string(target.size()));
  check(!target.empty(), "mse: empty input");
  const auto n = static_cast<double>(target.size());
  std::vector<double> t(target.begin(), target.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double d = a.value()[i] - t[i];
    acc += d * d;
  }
  return make_result(Tensor({1}, {acc / n}), {a}, [n, t = std::move(t)](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    const auto& x = self.inputs[0]->value;
    const double s = 2.0 * self.grad[0] / n;
    for (std::size_t i = 0; i < t.size(); ++i) g[i] += s * (x[i] - t[i]);
  });
}

Var mse(const Var& a, const Var& b) {
  check(a.shape() == b.shape(), "mse: shape mismatch " + shape_string(a.shape()) + " vs " +
                                    shape_string(b.shape()));
  check(a.value().size() > 0, "mse: empty input");
  const auto n = static_cast<double>(a.value().size());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) {
    const double d = a.value()[i] - b.value()[i];
    acc += d * d;
  }
  return make_result(Tensor({1}, {acc / n}), {a, b}, [n](Node& self) {
    const auto& x = self.inputs[0]->value;
    const auto& y = self.inputs[1]->value;
    const double s = 2.0 * self.grad[0] / n;
    if (self.inputs[0]->requires_grad) {
      auto& g = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * (x[i] - y[i]);
    }
    if (self.inputs[1]->requires_grad) {
      auto& g = self.inputs[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= s * (x[i] - y[i]);
    }
  });
}

}  // namespace windsr::autodiff
