#pragma once

// Minimal reverse-mode automatic differentiation over dense 64-bit arrays.
//
// A Tensor is a cheap handle onto shared storage. Operations executed while
// gradient recording is enabled attach a Node to their result; backward()
// walks the resulting DAG once in reverse topological order, accumulates
// gradients into every tensor that requires them and then releases the
// graph. Parameters live outside the graph (see ParamStore) and survive it.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace representor::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Fixed variance floor for layer normalization.
inline constexpr double kLayerNormEps = 1e-6;

struct TensorImpl;

struct Node {
  std::string_view op;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  // Reads out.grad and accumulates into the parents' grads.
  std::function<void(TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node> node;

  std::vector<double>& grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  // Negative axes count from the back.
  std::size_t dim(int axis) const;
  std::size_t size() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad();

  std::string_view op() const;
  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& shared() const { return impl_; }

  // Deep copy of the values without graph or gradient.
  Tensor detach() const;

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Disables graph recording on this thread for the guard's lifetime.
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

// Boolean mask broadcastable against a tensor: every mask dimension equals
// the corresponding tensor dimension or is 1. Positions where keep == 0 are
// overwritten by masked_fill.
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> keep;
};

// a[..., m, k] x b[k, n] or a[..., m, k] x b[..., k, n] with identical
// leading dimensions. With transpose_b, b is stored as [..., n, k].
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

// Elementwise; b may also be a trailing-suffix shape broadcast over a.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor transpose(const Tensor& a, std::size_t axis0, std::size_t axis1);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);

Tensor masked_fill(const Tensor& a, const Mask& mask, double fill);
Tensor softmax(const Tensor& a, int axis = -1);
Tensor log_softmax(const Tensor& a, int axis = -1);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// sum_i a_i * w_i with constant weights; terms with w_i == 0 are skipped so
// -inf entries under zero weight do not poison the result.
Tensor weighted_sum(const Tensor& a, std::span<const double> weights);

// Normalizes over the last dimension; gain and bias have shape [last].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = kLayerNormEps);

// Gathers rows of table[V, d]; result has shape [ids.size(), d].
Tensor embedding_lookup(const Tensor& table, std::span<const std::int32_t> ids);

// Inverted dropout. p == 0 returns the input unchanged.
Tensor dropout(const Tensor& a, double p, std::mt19937_64& rng);

// Populates grad on every requires_grad tensor reachable from the scalar
// loss, then detaches the graph.
void backward(const Tensor& loss);

}  // namespace representor::ad
