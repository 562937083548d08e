#pragma once

// Reverse-mode autodiff over dense row-major tensors. The graph is rebuilt on
// every forward pass: each op output carries a node holding its inputs and a
// local gradient rule, and backward() linearizes the graph into a Tape before
// walking it once in reverse. Scalar type is a template parameter; training
// runs in float, gradient checks in double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "medcap/errors.hpp"

namespace medcap {

// Stand-in for -inf when masking attention logits; avoids NaN from
// (-inf) - (-inf) during softmax max-subtraction.
template <typename S>
constexpr S kMaskNeg = S(-1e9);

inline thread_local bool g_grad_enabled = true;

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
  ~NoGradGuard() { g_grad_enabled = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

template <typename S>
class Tensor {
 public:
  struct Data;

  struct Node {
    std::vector<std::shared_ptr<Data>> parents;
    std::function<void(Data&)> backprop;  // accumulates into parents' grads
  };

  struct Data {
    std::vector<int> shape;
    std::vector<S> value;
    std::vector<S> grad;  // sized lazily on first accumulation
    bool trainable = false;
    bool requires_grad = false;
    std::unique_ptr<Node> node;  // null for leaves

    void ensure_grad() {
      if (grad.size() != value.size()) grad.assign(value.size(), S(0));
    }
  };

  Tensor() = default;

  static Tensor zeros(std::vector<int> shape) {
    return from_raw(std::move(shape), {}, true);
  }
  static Tensor full(std::vector<int> shape, S v) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.d_->value.begin(), t.d_->value.end(), v);
    return t;
  }
  static Tensor from(std::vector<int> shape, std::vector<S> vals) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    if (n != vals.size())
      throw ShapeError("tensor: " + std::to_string(vals.size()) +
                       " values do not fill shape " + shape_str(shape));
    Tensor t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = std::move(shape);
    t.d_->value = std::move(vals);
    return t;
  }
  static Tensor scalar(S v) { return from({1}, {v}); }

  bool defined() const { return static_cast<bool>(d_); }
  const std::vector<int>& shape() const { return d_->shape; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  int dim(int i) const { return d_->shape[static_cast<std::size_t>(i)]; }
  std::size_t numel() const { return d_->value.size(); }

  std::vector<S>& value() { return d_->value; }
  const std::vector<S>& value() const { return d_->value; }
  std::vector<S>& grad() {
    d_->ensure_grad();
    return d_->grad;
  }
  const std::vector<S>& grad() const {
    d_->ensure_grad();
    return d_->grad;
  }

  S item() const {
    if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not scalar");
    return d_->value[0];
  }

  S at(int r, int c) const {
    return d_->value[static_cast<std::size_t>(r) * dim(1) + c];
  }

  bool trainable() const { return d_->trainable; }
  void set_trainable(bool flag) {
    d_->trainable = flag;
    d_->requires_grad = flag;  // frozen leaves drop out of the tape
  }
  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool flag) { d_->requires_grad = flag; }
  void zero_grad() { d_->grad.clear(); }

  bool is_leaf() const { return d_->node == nullptr; }
  std::shared_ptr<Data> data_ptr() const { return d_; }

  static Tensor wrap(std::shared_ptr<Data> d) {
    Tensor t;
    t.d_ = std::move(d);
    return t;
  }

 private:
  static Tensor from_raw(std::vector<int> shape, std::vector<S> vals, bool fill_zero) {
    Tensor t;
    t.d_ = std::make_shared<Data>();
    std::size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw ShapeError("tensor: non-positive dimension in " + shape_str(shape));
      n *= static_cast<std::size_t>(d);
    }
    t.d_->shape = std::move(shape);
    if (fill_zero)
      t.d_->value.assign(n, S(0));
    else
      t.d_->value = std::move(vals);
    return t;
  }

  std::shared_ptr<Data> d_;
};

namespace detail {

// C[m x n] += A[m x k] * B[k x n]
template <typename S>
void gemm_nn(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* ai = a + static_cast<std::size_t>(i) * k;
    S* ci = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const S av = ai[p];
      const S* bp = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
template <typename S>
void gemm_nt(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* ai = a + static_cast<std::size_t>(i) * k;
    S* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const S* bj = b + static_cast<std::size_t>(j) * k;
      S acc = S(0);
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n]
template <typename S>
void gemm_tn(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    const S* ap = a + static_cast<std::size_t>(p) * m;
    const S* bp = b + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const S av = ap[i];
      S* ci = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

template <typename S>
Tensor<S> make_op(std::vector<int> shape, std::vector<S> value,
                  std::vector<Tensor<S>> inputs,
                  std::function<void(typename Tensor<S>::Data&)> backprop) {
  Tensor<S> out = Tensor<S>::from(std::move(shape), std::move(value));
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& t : inputs)
      if (t.requires_grad()) needs = true;
  }
  if (needs) {
    auto d = out.data_ptr();
    d->requires_grad = true;
    d->node = std::make_unique<typename Tensor<S>::Node>();
    d->node->parents.reserve(inputs.size());
    for (const auto& t : inputs) d->node->parents.push_back(t.data_ptr());
    d->node->backprop = std::move(backprop);
  }
  return out;
}

template <typename S>
void check_rank2(const Tensor<S>& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

}  // namespace detail

// Attention / fill mask: entries with masked != 0 are replaced by a constant.
struct AttnMask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> masked;

  static AttnMask none(int rows, int cols) {
    AttnMask m;
    m.rows = rows;
    m.cols = cols;
    m.masked.assign(static_cast<std::size_t>(rows) * cols, 0);
    return m;
  }
  std::uint8_t at(int r, int c) const {
    return masked[static_cast<std::size_t>(r) * cols + c];
  }
  void set(int r, int c, bool on) {
    masked[static_cast<std::size_t>(r) * cols + c] = on ? 1 : 0;
  }
};

// ---- ops ----

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_rank2(a, "matmul");
  detail::check_rank2(b, "matmul");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  std::vector<S> out(static_cast<std::size_t>(m) * n, S(0));
  detail::gemm_nn(a.value().data(), b.value().data(), out.data(), m, k, n);
  auto pa = a.data_ptr();
  auto pb = b.data_ptr();
  return detail::make_op<S>(
      {m, n}, std::move(out), {a, b},
      [pa, pb, m, k, n](typename Tensor<S>::Data& o) {
        if (pa->requires_grad) {
          pa->ensure_grad();
          detail::gemm_nt(o.grad.data(), pb->value.data(), pa->grad.data(), m, n, k);
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          detail::gemm_tn(pa->value.data(), o.grad.data(), pb->grad.data(), k, m, n);
        }
      });
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<S> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  auto pa = a.data_ptr();
  auto pb = b.data_ptr();
  return detail::make_op<S>(a.shape(), std::move(out), {a, b},
                            [pa, pb](typename Tensor<S>::Data& o) {
                              if (pa->requires_grad) {
                                pa->ensure_grad();
                                for (std::size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i];
                              }
                              if (pb->requires_grad) {
                                pb->ensure_grad();
                                for (std::size_t i = 0; i < o.grad.size(); ++i) pb->grad[i] += o.grad[i];
                              }
                            });
}

// x[R x C] + bias[C], broadcast over rows (trailing-dimension affine case).
template <typename S>
Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& bias) {
  detail::check_rank2(x, "add_bias");
  if (bias.rank() != 1 || bias.dim(0) != x.dim(1))
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match columns of " +
                     shape_str(x.shape()));
  const int r = x.dim(0), c = x.dim(1);
  std::vector<S> out(x.numel());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out[static_cast<std::size_t>(i) * c + j] = x.value()[static_cast<std::size_t>(i) * c + j] + bias.value()[j];
  auto px = x.data_ptr();
  auto pb = bias.data_ptr();
  return detail::make_op<S>(x.shape(), std::move(out), {x, bias},
                            [px, pb, r, c](typename Tensor<S>::Data& o) {
                              if (px->requires_grad) {
                                px->ensure_grad();
                                for (std::size_t i = 0; i < o.grad.size(); ++i) px->grad[i] += o.grad[i];
                              }
                              if (pb->requires_grad) {
                                pb->ensure_grad();
                                for (int i = 0; i < r; ++i)
                                  for (int j = 0; j < c; ++j)
                                    pb->grad[j] += o.grad[static_cast<std::size_t>(i) * c + j];
                              }
                            });
}

template <typename S>
Tensor<S> multiply(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("multiply: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  std::vector<S> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  auto pa = a.data_ptr();
  auto pb = b.data_ptr();
  return detail::make_op<S>(a.shape(), std::move(out), {a, b},
                            [pa, pb](typename Tensor<S>::Data& o) {
                              if (pa->requires_grad) {
                                pa->ensure_grad();
                                for (std::size_t i = 0; i < o.grad.size(); ++i)
                                  pa->grad[i] += o.grad[i] * pb->value[i];
                              }
                              if (pb->requires_grad) {
                                pb->ensure_grad();
                                for (std::size_t i = 0; i < o.grad.size(); ++i)
                                  pb->grad[i] += o.grad[i] * pa->value[i];
                              }
                            });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S factor) {
  std::vector<S> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * factor;
  auto pa = a.data_ptr();
  return detail::make_op<S>(a.shape(), std::move(out), {a},
                            [pa, factor](typename Tensor<S>::Data& o) {
                              if (!pa->requires_grad) return;
                              pa->ensure_grad();
                              for (std::size_t i = 0; i < o.grad.size(); ++i)
                                pa->grad[i] += o.grad[i] * factor;
                            });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
  detail::check_rank2(a, "transpose");
  const int r = a.dim(0), c = a.dim(1);
  std::vector<S> out(a.numel());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out[static_cast<std::size_t>(j) * r + i] = a.value()[static_cast<std::size_t>(i) * c + j];
  auto pa = a.data_ptr();
  return detail::make_op<S>({c, r}, std::move(out), {a},
                            [pa, r, c](typename Tensor<S>::Data& o) {
                              if (!pa->requires_grad) return;
                              pa->ensure_grad();
                              for (int i = 0; i < r; ++i)
                                for (int j = 0; j < c; ++j)
                                  pa->grad[static_cast<std::size_t>(i) * c + j] +=
                                      o.grad[static_cast<std::size_t>(j) * r + i];
                            });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, std::vector<int> new_shape) {
  std::size_t n = 1;
  for (int d : new_shape) n *= static_cast<std::size_t>(d);
  if (n != a.numel())
    throw ShapeError("reshape: " + shape_str(a.shape()) + " cannot become " + shape_str(new_shape));
  auto pa = a.data_ptr();
  return detail::make_op<S>(std::move(new_shape), a.value(), {a},
                            [pa](typename Tensor<S>::Data& o) {
                              if (!pa->requires_grad) return;
                              pa->ensure_grad();
                              for (std::size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i];
                            });
}

// Concatenate rank-2 tensors along axis 0 or 1. Gradient splits back by part.
template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no parts");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  for (const auto& p : parts) detail::check_rank2(p, "concat");
  const int other = axis == 0 ? 1 : 0;
  const int fixed = parts[0].dim(other);
  int total = 0;
  for (const auto& p : parts) {
    if (p.dim(other) != fixed)
      throw ShapeError("concat: non-axis dimension mismatch, " + shape_str(parts[0].shape()) +
                       " vs " + shape_str(p.shape()));
    total += p.dim(axis);
  }
  std::vector<int> oshape = axis == 0 ? std::vector<int>{total, fixed} : std::vector<int>{fixed, total};
  std::vector<S> out(static_cast<std::size_t>(total) * fixed);
  std::vector<int> lens;
  lens.reserve(parts.size());
  if (axis == 0) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      std::copy(p.value().begin(), p.value().end(), out.begin() + static_cast<std::ptrdiff_t>(off));
      off += p.numel();
      lens.push_back(p.dim(0));
    }
  } else {
    const int rows = fixed;
    int coff = 0;
    for (const auto& p : parts) {
      const int pc = p.dim(1);
      for (int i = 0; i < rows; ++i)
        std::copy(p.value().begin() + static_cast<std::ptrdiff_t>(i) * pc,
                  p.value().begin() + static_cast<std::ptrdiff_t>(i + 1) * pc,
                  out.begin() + static_cast<std::ptrdiff_t>(i) * total + coff);
      coff += pc;
      lens.push_back(pc);
    }
  }
  std::vector<std::shared_ptr<typename Tensor<S>::Data>> ptrs;
  for (const auto& p : parts) ptrs.push_back(p.data_ptr());
  return detail::make_op<S>(
      std::move(oshape), std::move(out), parts,
      [ptrs, lens, axis, fixed, total](typename Tensor<S>::Data& o) {
        if (axis == 0) {
          std::size_t off = 0;
          for (std::size_t pi = 0; pi < ptrs.size(); ++pi) {
            auto& p = ptrs[pi];
            const std::size_t n = static_cast<std::size_t>(lens[pi]) * fixed;
            if (p->requires_grad) {
              p->ensure_grad();
              for (std::size_t i = 0; i < n; ++i) p->grad[i] += o.grad[off + i];
            }
            off += n;
          }
        } else {
          int coff = 0;
          for (std::size_t pi = 0; pi < ptrs.size(); ++pi) {
            auto& p = ptrs[pi];
            const int pc = lens[pi];
            if (p->requires_grad) {
              p->ensure_grad();
              for (int i = 0; i < fixed; ++i)
                for (int j = 0; j < pc; ++j)
                  p->grad[static_cast<std::size_t>(i) * pc + j] +=
                      o.grad[static_cast<std::size_t>(i) * total + coff + j];
            }
            coff += pc;
          }
        }
      });
}

// Contiguous sub-block along one axis of a rank-2 tensor.
template <typename S>
Tensor<S> slice(const Tensor<S>& a, int axis, int start, int len) {
  detail::check_rank2(a, "slice");
  if (axis != 0 && axis != 1) throw ShapeError("slice: axis must be 0 or 1");
  const int r = a.dim(0), c = a.dim(1);
  const int extent = axis == 0 ? r : c;
  if (start < 0 || len <= 0 || start + len > extent)
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") out of bounds for " + shape_str(a.shape()));
  std::vector<int> oshape = axis == 0 ? std::vector<int>{len, c} : std::vector<int>{r, len};
  std::vector<S> out(static_cast<std::size_t>(oshape[0]) * oshape[1]);
  if (axis == 0) {
    std::copy(a.value().begin() + static_cast<std::ptrdiff_t>(start) * c,
              a.value().begin() + static_cast<std::ptrdiff_t>(start + len) * c, out.begin());
  } else {
    for (int i = 0; i < r; ++i)
      std::copy(a.value().begin() + static_cast<std::ptrdiff_t>(i) * c + start,
                a.value().begin() + static_cast<std::ptrdiff_t>(i) * c + start + len,
                out.begin() + static_cast<std::ptrdiff_t>(i) * len);
  }
  auto pa = a.data_ptr();
  return detail::make_op<S>(std::move(oshape), std::move(out), {a},
                            [pa, axis, start, len, r, c](typename Tensor<S>::Data& o) {
                              if (!pa->requires_grad) return;
                              pa->ensure_grad();
                              if (axis == 0) {
                                for (std::size_t i = 0; i < o.grad.size(); ++i)
                                  pa->grad[static_cast<std::size_t>(start) * c + i] += o.grad[i];
                              } else {
                                for (int i = 0; i < r; ++i)
                                  for (int j = 0; j < len; ++j)
                                    pa->grad[static_cast<std::size_t>(i) * c + start + j] +=
                                        o.grad[static_cast<std::size_t>(i) * len + j];
                              }
                            });
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  std::vector<S> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = static_cast<double>(x.value()[i]);
    out[i] = static_cast<S>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
  }
  auto px = x.data_ptr();
  return detail::make_op<S>(
      x.shape(), std::move(out), {x},
      [px](typename Tensor<S>::Data& o) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
          const double v = static_cast<double>(px->value[i]);
          const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
          const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
          px->grad[i] += o.grad[i] * static_cast<S>(cdf + v * pdf);
        }
      });
}

// table[V x d], ids -> [n x d]. Gradient scatters rows back into the table.
template <typename S>
Tensor<S> embedding_lookup(const Tensor<S>& table, const std::vector<int>& ids) {
  detail::check_rank2(table, "embedding_lookup");
  const int v = table.dim(0), d = table.dim(1);
  if (ids.empty()) throw ShapeError("embedding_lookup: empty id list");
  for (int id : ids)
    if (id < 0 || id >= v)
      throw VocabError("embedding_lookup: token id " + std::to_string(id) +
                       " outside vocabulary of size " + std::to_string(v));
  const int n = static_cast<int>(ids.size());
  std::vector<S> out(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i)
    std::copy(table.value().begin() + static_cast<std::ptrdiff_t>(ids[i]) * d,
              table.value().begin() + static_cast<std::ptrdiff_t>(ids[i] + 1) * d,
              out.begin() + static_cast<std::ptrdiff_t>(i) * d);
  auto pt = table.data_ptr();
  return detail::make_op<S>({n, d}, std::move(out), {table},
                            [pt, ids, d](typename Tensor<S>::Data& o) {
                              if (!pt->requires_grad) return;
                              pt->ensure_grad();
                              for (std::size_t i = 0; i < ids.size(); ++i)
                                for (int j = 0; j < d; ++j)
                                  pt->grad[static_cast<std::size_t>(ids[i]) * d + j] +=
                                      o.grad[i * d + j];
                            });
}

// Entries with mask != 0 become `fill`; gradient is zero there.
template <typename S>
Tensor<S> mask_fill(const Tensor<S>& x, const AttnMask& mask, S fill) {
  detail::check_rank2(x, "mask_fill");
  if (mask.rows != x.dim(0) || mask.cols != x.dim(1))
    throw ShapeError("mask_fill: mask " + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                     " does not match " + shape_str(x.shape()));
  std::vector<S> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask.masked[i] ? fill : x.value()[i];
  auto px = x.data_ptr();
  auto masked = mask.masked;
  return detail::make_op<S>(x.shape(), std::move(out), {x},
                            [px, masked](typename Tensor<S>::Data& o) {
                              if (!px->requires_grad) return;
                              px->ensure_grad();
                              for (std::size_t i = 0; i < o.grad.size(); ++i)
                                if (!masked[i]) px->grad[i] += o.grad[i];
                            });
}

// Softmax over the trailing dimension with max-subtraction. Rows whose maximum
// is at or below the masking constant are degenerate (everything masked).
template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& x) {
  if (x.rank() < 1) throw ShapeError("softmax_rows: rank-0 input");
  const int n = x.dim(x.rank() - 1);
  const std::size_t rows = x.numel() / static_cast<std::size_t>(n);
  std::vector<S> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const S* xi = x.value().data() + r * n;
    S* oi = out.data() + r * n;
    S mx = xi[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    if (!(mx > kMaskNeg<S>))
      throw NumericError("softmax_rows: degenerate row " + std::to_string(r) +
                         " (all entries masked)");
    S sum = S(0);
    for (int j = 0; j < n; ++j) {
      oi[j] = std::exp(xi[j] - mx);
      sum += oi[j];
    }
    for (int j = 0; j < n; ++j) oi[j] /= sum;
  }
  auto px = x.data_ptr();
  return detail::make_op<S>(
      x.shape(), std::move(out), {x},
      [px, n, rows](typename Tensor<S>::Data& o) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          const S* p = o.value.data() + r * n;
          const S* g = o.grad.data() + r * n;
          S dot = S(0);
          for (int j = 0; j < n; ++j) dot += p[j] * g[j];
          for (int j = 0; j < n; ++j)
            px->grad[r * n + j] += p[j] * (g[j] - dot);
        }
      });
}

// Per-row standardization then affine: gain * (x - mu) / sqrt(var + eps) + bias.
// Variance is the biased (1/d) estimate.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias, S eps) {
  detail::check_rank2(x, "layer_norm");
  const int r = x.dim(0), d = x.dim(1);
  if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d)
    throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(d) + "]");
  std::vector<S> out(x.numel());
  std::vector<S> inv_std(r), mean(r);
  for (int i = 0; i < r; ++i) {
    const S* xi = x.value().data() + static_cast<std::size_t>(i) * d;
    S mu = S(0);
    for (int j = 0; j < d; ++j) mu += xi[j];
    mu /= S(d);
    S var = S(0);
    for (int j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= S(d);
    const S istd = S(1) / std::sqrt(var + eps);
    mean[i] = mu;
    inv_std[i] = istd;
    S* oi = out.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) oi[j] = gain.value()[j] * (xi[j] - mu) * istd + bias.value()[j];
  }
  auto px = x.data_ptr();
  auto pg = gain.data_ptr();
  auto pb = bias.data_ptr();
  return detail::make_op<S>(
      x.shape(), std::move(out), {x, gain, bias},
      [px, pg, pb, r, d, mean, inv_std](typename Tensor<S>::Data& o) {
        for (int i = 0; i < r; ++i) {
          const S* xi = px->value.data() + static_cast<std::size_t>(i) * d;
          const S* gi = o.grad.data() + static_cast<std::size_t>(i) * d;
          const S mu = mean[i], istd = inv_std[i];
          if (pg->requires_grad || pb->requires_grad) {
            if (pg->requires_grad) pg->ensure_grad();
            if (pb->requires_grad) pb->ensure_grad();
            for (int j = 0; j < d; ++j) {
              const S xhat = (xi[j] - mu) * istd;
              if (pg->requires_grad) pg->grad[j] += gi[j] * xhat;
              if (pb->requires_grad) pb->grad[j] += gi[j];
            }
          }
          if (px->requires_grad) {
            px->ensure_grad();
            S sum_dxhat = S(0), sum_dxhat_xhat = S(0);
            for (int j = 0; j < d; ++j) {
              const S dxhat = gi[j] * pg->value[j];
              const S xhat = (xi[j] - mu) * istd;
              sum_dxhat += dxhat;
              sum_dxhat_xhat += dxhat * xhat;
            }
            for (int j = 0; j < d; ++j) {
              const S dxhat = gi[j] * pg->value[j];
              const S xhat = (xi[j] - mu) * istd;
              px->grad[static_cast<std::size_t>(i) * d + j] +=
                  istd * (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) / S(d));
            }
          }
        }
      });
}

// Per-row cross entropy: out[t] = logsumexp(logits[t]) - logits[t][target[t]].
template <typename S>
Tensor<S> cross_entropy_rows(const Tensor<S>& logits, const std::vector<int>& targets) {
  detail::check_rank2(logits, "cross_entropy_rows");
  const int t = logits.dim(0), v = logits.dim(1);
  if (static_cast<int>(targets.size()) != t)
    throw ShapeError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(t) + " rows");
  for (int id : targets)
    if (id < 0 || id >= v)
      throw VocabError("cross_entropy_rows: target id " + std::to_string(id) +
                       " outside vocabulary of size " + std::to_string(v));
  std::vector<S> out(t);
  for (int i = 0; i < t; ++i) {
    const S* li = logits.value().data() + static_cast<std::size_t>(i) * v;
    S mx = li[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, li[j]);
    S sum = S(0);
    for (int j = 0; j < v; ++j) sum += std::exp(li[j] - mx);
    out[i] = mx + std::log(sum) - li[targets[i]];
  }
  auto pl = logits.data_ptr();
  return detail::make_op<S>(
      {t}, std::move(out), {logits},
      [pl, targets, t, v](typename Tensor<S>::Data& o) {
        if (!pl->requires_grad) return;
        pl->ensure_grad();
        for (int i = 0; i < t; ++i) {
          const S* li = pl->value.data() + static_cast<std::size_t>(i) * v;
          S mx = li[0];
          for (int j = 1; j < v; ++j) mx = std::max(mx, li[j]);
          S sum = S(0);
          for (int j = 0; j < v; ++j) sum += std::exp(li[j] - mx);
          const S g = o.grad[i];
          for (int j = 0; j < v; ++j) {
            S p = std::exp(li[j] - mx) / sum;
            if (j == targets[i]) p -= S(1);
            pl->grad[static_cast<std::size_t>(i) * v + j] += g * p;
          }
        }
      });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  S acc = S(0);
  for (S v : x.value()) acc += v;
  auto px = x.data_ptr();
  return detail::make_op<S>({1}, {acc}, {x},
                            [px](typename Tensor<S>::Data& o) {
                              if (!px->requires_grad) return;
                              px->ensure_grad();
                              for (std::size_t i = 0; i < px->grad.size(); ++i)
                                px->grad[i] += o.grad[0];
                            });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  return scale(sum(x), S(1) / static_cast<S>(x.numel()));
}

// Linearized graph: topological order, inputs before consumers. Rebuilt from
// the root on every backward call.
template <typename S>
struct Tape {
  std::vector<typename Tensor<S>::Data*> order;

  static Tape build(const Tensor<S>& root) {
    using Data = typename Tensor<S>::Data;
    Tape tape;
    std::unordered_set<Data*> visited;
    std::vector<std::pair<Data*, std::size_t>> stack;
    Data* r = root.data_ptr().get();
    visited.insert(r);
    stack.emplace_back(r, 0);
    while (!stack.empty()) {
      auto& [d, idx] = stack.back();
      if (d->node && idx < d->node->parents.size()) {
        Data* p = d->node->parents[idx++].get();
        if (p->requires_grad && !visited.count(p)) {
          visited.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        tape.order.push_back(d);
        stack.pop_back();
      }
    }
    return tape;
  }
};

// Seeds d(loss)/d(loss) = 1 and walks the tape once in reverse. Every tensor
// on the path ends up with its gradient accumulated; trainability only gates
// optimizer updates, not gradient flow.
template <typename S>
void backward(const Tensor<S>& loss) {
  if (!loss.defined()) throw TapeError("backward: undefined tensor");
  if (loss.numel() != 1)
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (loss.is_leaf())
    throw TapeError("backward: tensor is detached (not recorded on the tape)");
  auto tape = Tape<S>::build(loss);
  auto root = loss.data_ptr();
  root->ensure_grad();
  root->grad[0] = S(1);
  for (auto it = tape.order.rbegin(); it != tape.order.rend(); ++it) {
    auto* d = *it;
    if (d->node) {
      d->ensure_grad();
      d->node->backprop(*d);
    }
  }
}

}  // namespace medcap
