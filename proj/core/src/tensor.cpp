#include "representor/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include <Eigen/Core>
#include <fmt/format.h>

#include "representor/errors.hpp"

namespace representor::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local bool g_grad_enabled = true;

using ImplPtr = std::shared_ptr<TensorImpl>;

// Wraps freshly computed values; attaches a node only when recording is on
// and some parent participates in differentiation.
Tensor make_result(Shape shape, std::vector<double> values, std::string_view op,
                   std::vector<ImplPtr> parents, std::function<void(TensorImpl&)> bw) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  bool track = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) track = track || p->requires_grad;
  }
  if (track) {
    impl->requires_grad = true;
    auto node = std::make_shared<Node>();
    node->op = op;
    node->parents = std::move(parents);
    node->backward = std::move(bw);
    impl->node = std::move(node);
  }
  return Tensor(std::move(impl));
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError(fmt::format("axis {} out of range for rank {}", axis, rank));
  }
  return static_cast<std::size_t>(a);
}

// (outer, axis, inner) factorization for reductions along one axis.
struct AxisSplit {
  std::size_t outer = 1, length = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, "x")); }

std::vector<double>& TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(values.size(), 0.0);
  return grad;
}

// ---------------------------------------------------------------------------
// Tensor handle

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  std::vector<double> values(numel(shape), value);
  return from_values(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape));
  }
  if (numel(shape) != values.size()) {
    throw DimensionError(fmt::format("shape {} needs {} values, got {}", shape_string(shape), numel(shape),
                                     values.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_values({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(int axis) const { return impl_->shape[normalize_axis(axis, rank())]; }

std::size_t Tensor::size() const { return impl_->values.size(); }

std::span<const double> Tensor::values() const { return impl_->values; }

std::span<double> Tensor::mutable_values() { return impl_->values; }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_string(shape()));
  return impl_->values[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw DimensionError("index rank mismatch");
  const auto strides = strides_of(shape());
  std::size_t flat = 0, i = 0;
  for (std::size_t v : index) {
    if (v >= shape()[i]) throw IndexError("tensor index out of range");
    flat += v * strides[i++];
  }
  return impl_->values[flat];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool flag) { impl_->requires_grad = flag; }

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::mutable_grad() { return impl_->grad_buffer(); }

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::clear_grad() {
  impl_->grad.clear();
  impl_->grad.shrink_to_fit();
}

std::string_view Tensor::op() const { return impl_->node ? impl_->node->op : std::string_view("leaf"); }

Tensor Tensor::detach() const { return from_values(shape(), impl_->values, false); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError(fmt::format("matmul needs rank >= 2 operands, got {} and {}", shape_string(a.shape()),
                                     shape_string(b.shape())));
  }
  const std::size_t m = a.dim(-2), k = a.dim(-1);
  const std::size_t bk = transpose_b ? b.dim(-1) : b.dim(-2);
  const std::size_t n = transpose_b ? b.dim(-2) : b.dim(-1);
  const bool shared_b = b.rank() == 2;
  bool lead_ok = k == bk;
  if (!shared_b) {
    lead_ok = lead_ok && a.rank() == b.rank() &&
              std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin());
  }
  if (!lead_ok) {
    throw DimensionError(fmt::format("matmul shape mismatch: {} x {}{}", shape_string(a.shape()),
                                     shape_string(b.shape()), transpose_b ? "^T" : ""));
  }
  const std::size_t batch = numel(a.shape()) / (m * k);
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  std::vector<double> out(batch * m * n);

  const double* pa = a.values().data();
  const double* pb = b.values().data();
  const auto em = static_cast<Eigen::Index>(m), ek = static_cast<Eigen::Index>(k), en = static_cast<Eigen::Index>(n);
  if (shared_b) {
    const auto rows = static_cast<Eigen::Index>(batch * m);
    ConstMap A(pa, rows, ek);
    MutMap C(out.data(), rows, en);
    if (transpose_b) {
      C.noalias() = A * ConstMap(pb, en, ek).transpose();
    } else {
      C.noalias() = A * ConstMap(pb, ek, en);
    }
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      ConstMap A(pa + i * m * k, em, ek);
      MutMap C(out.data() + i * m * n, em, en);
      if (transpose_b) {
        C.noalias() = A * ConstMap(pb + i * n * k, en, ek).transpose();
      } else {
        C.noalias() = A * ConstMap(pb + i * k * n, ek, en);
      }
    }
  }

  auto ai = a.shared(), bi = b.shared();
  return make_result(std::move(out_shape), std::move(out), "matmul", {ai, bi},
                     [ai, bi, batch, m, k, n, transpose_b, shared_b](TensorImpl& o) {
                       const auto em = static_cast<Eigen::Index>(m), ek = static_cast<Eigen::Index>(k),
                                  en = static_cast<Eigen::Index>(n);
                       const double* go = o.grad.data();
                       const double* pa = ai->values.data();
                       const double* pb = bi->values.data();
                       if (shared_b) {
                         const auto rows = static_cast<Eigen::Index>(batch * m);
                         ConstMap G(go, rows, en);
                         ConstMap A(pa, rows, ek);
                         if (ai->requires_grad) {
                           MutMap dA(ai->grad_buffer().data(), rows, ek);
                           if (transpose_b) {
                             dA.noalias() += G * ConstMap(pb, en, ek);
                           } else {
                             dA.noalias() += G * ConstMap(pb, ek, en).transpose();
                           }
                         }
                         if (bi->requires_grad) {
                           if (transpose_b) {
                             MutMap dB(bi->grad_buffer().data(), en, ek);
                             dB.noalias() += G.transpose() * A;
                           } else {
                             MutMap dB(bi->grad_buffer().data(), ek, en);
                             dB.noalias() += A.transpose() * G;
                           }
                         }
                         return;
                       }
                       for (std::size_t i = 0; i < batch; ++i) {
                         ConstMap G(go + i * m * n, em, en);
                         ConstMap A(pa + i * m * k, em, ek);
                         if (ai->requires_grad) {
                           MutMap dA(ai->grad_buffer().data() + i * m * k, em, ek);
                           if (transpose_b) {
                             dA.noalias() += G * ConstMap(pb + i * n * k, en, ek);
                           } else {
                             dA.noalias() += G * ConstMap(pb + i * k * n, ek, en).transpose();
                           }
                         }
                         if (bi->requires_grad) {
                           if (transpose_b) {
                             MutMap dB(bi->grad_buffer().data() + i * n * k, en, ek);
                             dB.noalias() += G.transpose() * A;
                           } else {
                             MutMap dB(bi->grad_buffer().data() + i * k * n, ek, en);
                             dB.noalias() += A.transpose() * G;
                           }
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  if (!is_suffix(b.shape(), a.shape())) {
    throw DimensionError(fmt::format("add: {} does not broadcast onto {}", shape_string(b.shape()),
                                     shape_string(a.shape())));
  }
  const auto av = a.values();
  const auto bv = b.values();
  const std::size_t inner = bv.size();
  std::vector<double> out(av.begin(), av.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % inner];
  auto ai = a.shared(), bi = b.shared();
  return make_result(a.shape(), std::move(out), "add", {ai, bi}, [ai, bi, inner](TensorImpl& o) {
    if (ai->requires_grad) {
      auto& g = ai->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (bi->requires_grad) {
      auto& g = bi->grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i % inner] += o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(fmt::format("mul shape mismatch: {} vs {}", shape_string(a.shape()), shape_string(b.shape())));
  }
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto ai = a.shared(), bi = b.shared();
  return make_result(a.shape(), std::move(out), "mul", {ai, bi}, [ai, bi](TensorImpl& o) {
    if (ai->requires_grad) {
      auto& g = ai->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bi->values[i];
    }
    if (bi->requires_grad) {
      auto& g = bi->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * ai->values[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= factor;
  auto ai = a.shared();
  return make_result(a.shape(), std::move(out), "scale", {ai}, [ai, factor](TensorImpl& o) {
    auto& g = ai->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * factor;
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  auto ai = a.shared();
  return make_result(a.shape(), std::move(out), "relu", {ai}, [ai](TensorImpl& o) {
    auto& g = ai->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (ai->values[i] > 0.0) g[i] += o.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Layout

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError(fmt::format("cannot reshape {} to {}", shape_string(a.shape()), shape_string(shape)));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  auto ai = a.shared();
  return make_result(std::move(shape), std::move(out), "reshape", {ai}, [ai](TensorImpl& o) {
    auto& g = ai->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const std::size_t r = a.rank();
  if (axes.size() != r) throw DimensionError("permute: axis list length differs from rank");
  std::vector<bool> seen(r, false);
  for (std::size_t ax : axes) {
    if (ax >= r || seen[ax]) throw DimensionError("permute: axes must be a permutation");
    seen[ax] = true;
  }
  const auto in_strides = strides_of(a.shape());
  Shape out_shape(r);
  std::vector<std::size_t> src_strides(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = a.shape()[axes[i]];
    src_strides[i] = in_strides[axes[i]];
  }
  // gather[i] = source flat index of output flat index i
  const std::size_t total = a.size();
  auto gather = std::make_shared<std::vector<std::size_t>>(total);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < total; ++i) {
    (*gather)[i] = src;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      src += src_strides[d];
      if (idx[d] < out_shape[d]) break;
      src -= src_strides[d] * idx[d];
      idx[d] = 0;
    }
  }
  std::vector<double> out(total);
  const auto av = a.values();
  for (std::size_t i = 0; i < total; ++i) out[i] = av[(*gather)[i]];
  auto ai = a.shared();
  return make_result(std::move(out_shape), std::move(out), "permute", {ai}, [ai, gather](TensorImpl& o) {
    auto& g = ai->grad_buffer();
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[(*gather)[i]] += o.grad[i];
  });
}

Tensor transpose(const Tensor& a, std::size_t axis0, std::size_t axis1) {
  std::vector<std::size_t> axes(a.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  if (axis0 >= a.rank() || axis1 >= a.rank()) throw DimensionError("transpose: axis out of range");
  std::swap(axes[axis0], axes[axis1]);
  return permute(a, axes);
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      throw DimensionError(fmt::format("concat: {} incompatible with {}", shape_string(s), shape_string(first)));
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit outer_split = split_axis(out_shape, axis);
  const std::size_t outer = outer_split.outer, inner = outer_split.inner;
  std::vector<double> out(numel(out_shape));
  std::vector<ImplPtr> parents;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t len = p.shape()[axis];
    const auto pv = p.values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * len * inner), len * inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * out_shape[axis] + offset) * inner));
    }
    parents.push_back(p.shared());
    offsets.push_back(offset);
    offset += len;
  }
  const std::size_t total_len = out_shape[axis];
  auto captured = parents;
  return make_result(std::move(out_shape), std::move(out), "concat", std::move(parents),
                     [captured, offsets, axis, outer, inner, total_len](TensorImpl& o) {
                       for (std::size_t j = 0; j < captured.size(); ++j) {
                         const auto& p = captured[j];
                         if (!p->requires_grad) continue;
                         const std::size_t len = p->shape[axis];
                         auto& g = p->grad_buffer();
                         for (std::size_t b = 0; b < outer; ++b) {
                           const double* src = o.grad.data() + (b * total_len + offsets[j]) * inner;
                           double* dst = g.data() + b * len * inner;
                           for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= a.rank()) throw DimensionError("slice: axis out of range");
  if (length == 0 || start + length > a.shape()[axis]) {
    throw IndexError(fmt::format("slice [{}, {}) out of range for extent {}", start, start + length, a.shape()[axis]));
  }
  const AxisSplit s = split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  std::vector<double> out(s.outer * length * s.inner);
  const auto av = a.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>((o * s.length + start) * s.inner), length * s.inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * length * s.inner));
  }
  auto ai = a.shared();
  return make_result(std::move(out_shape), std::move(out), "slice", {ai}, [ai, s, start, length](TensorImpl& o) {
    auto& g = ai->grad_buffer();
    for (std::size_t b = 0; b < s.outer; ++b) {
      const double* src = o.grad.data() + b * length * s.inner;
      double* dst = g.data() + (b * s.length + start) * s.inner;
      for (std::size_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Masking and normalization

Tensor masked_fill(const Tensor& a, const Mask& mask, double fill) {
  const Shape& shape = a.shape();
  bool ok = mask.shape.size() == shape.size() && mask.keep.size() == numel(mask.shape);
  for (std::size_t i = 0; ok && i < shape.size(); ++i) ok = mask.shape[i] == shape[i] || mask.shape[i] == 1;
  if (!ok) {
    throw DimensionError(fmt::format("mask {} does not broadcast onto {}", shape_string(mask.shape),
                                     shape_string(shape)));
  }
  const std::size_t r = shape.size();
  const auto mstrides_full = strides_of(mask.shape);
  std::vector<std::size_t> mstrides(r);
  for (std::size_t i = 0; i < r; ++i) mstrides[i] = mask.shape[i] == 1 ? 0 : mstrides_full[i];

  auto keep = std::make_shared<std::vector<std::uint8_t>>(a.size());
  std::vector<std::size_t> idx(r, 0);
  std::size_t mi = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    (*keep)[i] = mask.keep[mi];
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      mi += mstrides[d];
      if (idx[d] < shape[d]) break;
      mi -= mstrides[d] * idx[d];
      idx[d] = 0;
    }
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(*keep)[i]) out[i] = fill;
  }
  auto ai = a.shared();
  return make_result(shape, std::move(out), "masked_fill", {ai}, [ai, keep](TensorImpl& o) {
    auto& g = ai->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if ((*keep)[i]) g[i] += o.grad[i];
    }
  });
}

Tensor softmax(const Tensor& a, int axis) {
  const std::size_t ax = normalize_axis(axis, a.rank());
  const AxisSplit s = split_axis(a.shape(), ax);
  const auto av = a.values();
  std::vector<double> out(a.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.length * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.length; ++j) mx = std::max(mx, av[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.length; ++j) {
        const double e = std::exp(av[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.length; ++j) out[base + j * s.inner] /= total;
    }
  }
  auto ai = a.shared();
  return make_result(a.shape(), std::move(out), "softmax", {ai}, [ai, s](TensorImpl& o) {
    auto& g = ai->grad_buffer();
    for (std::size_t b = 0; b < s.outer; ++b) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = b * s.length * s.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.length; ++j) {
          const std::size_t k = base + j * s.inner;
          dot += o.grad[k] * o.values[k];
        }
        for (std::size_t j = 0; j < s.length; ++j) {
          const std::size_t k = base + j * s.inner;
          g[k] += o.values[k] * (o.grad[k] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& a, int axis) {
  const std::size_t ax = normalize_axis(axis, a.rank());
  const AxisSplit s = split_axis(a.shape(), ax);
  const auto av = a.values();
  std::vector<double> out(a.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.length * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.length; ++j) mx = std::max(mx, av[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.length; ++j) total += std::exp(av[base + j * s.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t j = 0; j < s.length; ++j) out[base + j * s.inner] = av[base + j * s.inner] - lse;
    }
  }
  auto ai = a.shared();
  return make_result(a.shape(), std::move(out), "log_softmax", {ai}, [ai, s](TensorImpl& o) {
    auto& g = ai->grad_buffer();
    for (std::size_t b = 0; b < s.outer; ++b) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = b * s.length * s.inner + in;
        double total = 0.0;
        for (std::size_t j = 0; j < s.length; ++j) total += o.grad[base + j * s.inner];
        for (std::size_t j = 0; j < s.length; ++j) {
          const std::size_t k = base + j * s.inner;
          g[k] += o.grad[k] - std::exp(o.values[k]) * total;
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.dim(-1);
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError(fmt::format("layer_norm: gain {} / bias {} do not match last dim {}",
                                     shape_string(gain.shape()), shape_string(bias.shape()), d));
  }
  const std::size_t rows = x.size() / d;
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  std::vector<double> out(x.size());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = gv[j] * h + bv[j];
    }
  }
  auto xi = x.shared(), gi = gain.shared(), bi = bias.shared();
  return make_result(x.shape(), std::move(out), "layer_norm", {xi, gi, bi},
                     [xi, gi, bi, xhat, inv_std, rows, d](TensorImpl& o) {
                       const double* g = o.grad.data();
                       if (gi->requires_grad) {
                         auto& dg = gi->grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < d; ++j) dg[j] += g[r * d + j] * (*xhat)[r * d + j];
                       }
                       if (bi->requires_grad) {
                         auto& db = bi->grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < d; ++j) db[j] += g[r * d + j];
                       }
                       if (!xi->requires_grad) return;
                       auto& dx = xi->grad_buffer();
                       const double inv_d = 1.0 / static_cast<double>(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double mean_dh = 0.0, mean_dh_h = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           const double dh = g[r * d + j] * gi->values[j];
                           mean_dh += dh;
                           mean_dh_h += dh * (*xhat)[r * d + j];
                         }
                         mean_dh *= inv_d;
                         mean_dh_h *= inv_d;
                         for (std::size_t j = 0; j < d; ++j) {
                           const double dh = g[r * d + j] * gi->values[j];
                           dx[r * d + j] += (*inv_std)[r] * (dh - mean_dh - (*xhat)[r * d + j] * mean_dh_h);
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  auto ai = a.shared();
  return make_result({1}, {total}, "sum", {ai}, [ai](TensorImpl& o) {
    auto& g = ai->grad_buffer();
    for (double& v : g) v += o.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.size());
  double total = 0.0;
  for (double v : a.values()) total += v;
  auto ai = a.shared();
  return make_result({1}, {total / n}, "mean", {ai}, [ai, n](TensorImpl& o) {
    auto& g = ai->grad_buffer();
    for (double& v : g) v += o.grad[0] / n;
  });
}

Tensor weighted_sum(const Tensor& a, std::span<const double> weights) {
  if (weights.size() != a.size()) {
    throw DimensionError(fmt::format("weighted_sum: {} weights for tensor {}", weights.size(), shape_string(a.shape())));
  }
  const auto av = a.values();
  double total = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (weights[i] != 0.0) total += weights[i] * av[i];
  }
  auto ai = a.shared();
  auto w = std::make_shared<std::vector<double>>(weights.begin(), weights.end());
  return make_result({1}, {total}, "weighted_sum", {ai}, [ai, w](TensorImpl& o) {
    auto& g = ai->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[0] * (*w)[i];
  });
}

// ---------------------------------------------------------------------------
// Embedding and dropout

Tensor embedding_lookup(const Tensor& table, std::span<const std::int32_t> ids) {
  if (table.rank() != 2) throw DimensionError("embedding table must be rank 2, got " + shape_string(table.shape()));
  if (ids.empty()) throw ContractError("embedding_lookup with no ids");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  const auto tv = table.values();
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw IndexError(fmt::format("embedding id {} outside [0, {})", ids[i], rows));
    }
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ids[i]) * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  auto ti = table.shared();
  auto idv = std::make_shared<std::vector<std::int32_t>>(ids.begin(), ids.end());
  return make_result({ids.size(), d}, std::move(out), "embedding_lookup", {ti}, [ti, idv, d](TensorImpl& o) {
    auto& g = ti->grad_buffer();
    for (std::size_t i = 0; i < idv->size(); ++i) {
      double* dst = g.data() + static_cast<std::size_t>((*idv)[i]) * d;
      const double* src = o.grad.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

Tensor dropout(const Tensor& a, double p, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError(fmt::format("dropout probability {} outside [0, 1)", p));
  if (p == 0.0) return a;
  std::bernoulli_distribution keep_dist(1.0 - p);
  const double kept_scale = 1.0 / (1.0 - p);
  auto factors = std::make_shared<std::vector<double>>(a.size());
  for (double& f : *factors) f = keep_dist(rng) ? kept_scale : 0.0;
  std::vector<double> out(a.size());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * (*factors)[i];
  auto ai = a.shared();
  return make_result(a.shape(), std::move(out), "dropout", {ai}, [ai, factors](TensorImpl& o) {
    auto& g = ai->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * (*factors)[i];
  });
}

// ---------------------------------------------------------------------------
// Reverse pass

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward requires a scalar loss, got " +
                        (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  }
  // Iterative post-order DFS gives a topological order of the graph.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(loss.impl(), 0);
  visited.insert(loss.impl());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    if (t->node && next < t->node->parents.size()) {
      TensorImpl* p = t->node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
      continue;
    }
    order.push_back(t);
    stack.pop_back();
  }

  TensorImpl* root = loss.impl();
  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* t = *it;
    if (t->node && !t->grad.empty()) t->node->backward(*t);
  }
  for (TensorImpl* t : order) t->node.reset();
}

}  // namespace representor::ad
