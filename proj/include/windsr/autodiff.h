#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major tensors.
// Graphs are built eagerly; calling backward() on a scalar walks them in
// reverse topological order. Leaves created with requires_grad accumulate
// gradients until zero_grad().

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace windsr::autodiff {

using Shape = std::vector<int>;

// Vectorized kernels may round differently depending on buffer alignment, so
// all tensor storage starts on a 64-byte boundary.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const noexcept { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  void fill(double v);
  Tensor reshaped(Shape shape) const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  Storage data_;
};

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Tensor& ensure_grad();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& grad() { return node_->ensure_grad(); }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return node_ != nullptr; }
  const std::shared_ptr<Node>& node() const { return node_; }

  void zero_grad();

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var leaf(Tensor value, bool requires_grad = true);

// Seeds d(root)/d(root) = 1; root must hold a single element.
void backward(const Var& root);

// While alive, ops on this thread record no backward closures.
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

// --- ops -------------------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& a);
Var reshape(const Var& a, Shape shape);

// x [Cin,H,W], weight [Cout,Cin,k,k], bias [Cout] -> [Cout,Hout,Wout]
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
// x [N,D], weight [O,D], bias [O] (optional) -> [N,O]
Var linear(const Var& x, const Var& weight, const Var& bias = Var());
// h [N,O] + v [1,O] broadcast over rows
Var add_row(const Var& h, const Var& v);
// Column-wise concatenation of [N,Di] blocks.
Var concat_cols(const std::vector<Var>& parts);
// feature [C,H,W]; picks flat spatial indices -> [N,C]
Var gather_cells(const Var& feature, std::span<const int> flat_index);
// 3x3 neighbourhood unfolding with zero padding: [C,H,W] -> [9C,H,W]
Var unfold3x3(const Var& x);
// [C,H,W] -> [1,C]
Var global_avg_pool(const Var& x);
// pred [K*N,1] with constant weights [K*N] -> [N,1]: out[n] = sum_k w[kN+n] pred[kN+n]
Var ensemble_combine(const Var& pred, std::span<const double> weights, int groups);

// mean((a - target)^2) with a constant target of equal size -> [1]
Var mse(const Var& a, std::span<const double> target);
// mean((a - b)^2) -> [1]
Var mse(const Var& a, const Var& b);

}  // namespace windsr::autodiff
