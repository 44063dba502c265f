#include "lfuse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <string>

#include "lfuse/kernels.hpp"

namespace lfuse {
namespace {

template <typename T>
const kernels::KernelTable<T>& kt() {
  return kernels::table<T>();
}

template <typename T>
Tape<T>& tape_of(Var<T> a) {
  if (!a.valid()) throw ContractError("op applied to an unbound Var");
  return *a.tape();
}

template <typename T>
void require_rank2(const char* op, const Tensor<T>& t) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         shape_string(t.shape()));
  }
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  kt<T>().axpy(T(1), src.ptr(), dst.ptr(), src.numel());
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis, const char* op) {
  const int rank = static_cast<int>(shape.size());
  const int ax = axis < 0 ? rank + axis : axis;
  if (ax < 0 || ax >= rank) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for " + shape_string(shape));
  }
  AxisSplit s;
  for (int i = 0; i < ax; ++i) s.outer *= shape[i];
  s.extent = shape[ax];
  for (int i = ax + 1; i < rank; ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_rank2("matmul", av);
  require_rank2("matmul", bv);
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree: " +
                         shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  Tensor<T> out({m, n});
  kt<T>().gemm_nn(m, n, k, av.ptr(), bv.ptr(), out.ptr());
  return tape_of(a).record("matmul", std::move(out), {a, b},
                           [a, b, m, n, k](const Tensor<T>& g) {
                             Tape<T>& tape = *a.tape();
                             if (a.requires_grad()) {
                               kt<T>().gemm_nt(m, k, n, g.ptr(), b.value().ptr(),
                                               tape.grad_slot(a).ptr());
                             }
                             if (b.requires_grad()) {
                               kt<T>().gemm_tn(k, n, m, a.value().ptr(), g.ptr(),
                                               tape.grad_slot(b).ptr());
                             }
                           });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_rank2("matmul_nt", av);
  require_rank2("matmul_nt", bv);
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(0);
  if (bv.dim(1) != k) {
    throw DimensionError("matmul_nt: inner dimensions disagree: " +
                         shape_string(av.shape()) + " x " +
                         shape_string(bv.shape()) + "^T");
  }
  Tensor<T> out({m, n});
  kt<T>().gemm_nt(m, n, k, av.ptr(), bv.ptr(), out.ptr());
  return tape_of(a).record("matmul_nt", std::move(out), {a, b},
                           [a, b, m, n, k](const Tensor<T>& g) {
                             Tape<T>& tape = *a.tape();
                             if (a.requires_grad()) {
                               kt<T>().gemm_nn(m, k, n, g.ptr(), b.value().ptr(),
                                               tape.grad_slot(a).ptr());
                             }
                             if (b.requires_grad()) {
                               kt<T>().gemm_tn(n, k, m, g.ptr(), a.value().ptr(),
                                               tape.grad_slot(b).ptr());
                             }
                           });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape("add", a.value(), b.value());
  Tensor<T> out = a.value();
  add_into(out, b.value());
  return tape_of(a).record("add", std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
    Tape<T>& tape = *a.tape();
    if (a.requires_grad()) add_into(tape.grad_slot(a), g);
    if (b.requires_grad()) add_into(tape.grad_slot(b), g);
  });
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> bias) {
  const Tensor<T>& av = a.value();
  const std::size_t cols = av.cols();
  if (bias.value().numel() != cols) {
    throw DimensionError("add_row: bias " + shape_string(bias.shape()) +
                         " does not match row width of " + shape_string(av.shape()));
  }
  Tensor<T> out = av;
  const T* bp = bias.value().ptr();
  for (std::size_t r = 0; r < av.rows(); ++r) {
    kt<T>().axpy(T(1), bp, out.ptr() + r * cols, cols);
  }
  return tape_of(a).record("add_row", std::move(out), {a, bias},
                           [a, bias, cols](const Tensor<T>& g) {
                             Tape<T>& tape = *a.tape();
                             if (a.requires_grad()) add_into(tape.grad_slot(a), g);
                             if (bias.requires_grad()) {
                               T* db = tape.grad_slot(bias).ptr();
                               for (std::size_t r = 0; r < g.numel() / cols; ++r) {
                                 kt<T>().axpy(T(1), g.ptr() + r * cols, db, cols);
                               }
                             }
                           });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape("mul", a.value(), b.value());
  Tensor<T> out = a.value();
  const T* bp = b.value().ptr();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bp[i];
  return tape_of(a).record("mul", std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
    Tape<T>& tape = *a.tape();
    if (a.requires_grad()) {
      Tensor<T>& da = tape.grad_slot(a);
      for (std::size_t i = 0; i < g.numel(); ++i) da[i] += g[i] * b.value()[i];
    }
    if (b.requires_grad()) {
      Tensor<T>& db = tape.grad_slot(b);
      for (std::size_t i = 0; i < g.numel(); ++i) db[i] += g[i] * a.value()[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  for (T& x : out.data()) x *= factor;
  return tape_of(a).record("scale", std::move(out), {a}, [a, factor](const Tensor<T>& g) {
    kt<T>().axpy(factor, g.ptr(), a.tape()->grad_slot(a).ptr(), g.numel());
  });
}

template <typename T>
Var<T> shift(Var<T> a, T offset) {
  Tensor<T> out = a.value();
  for (T& x : out.data()) x += offset;
  return tape_of(a).record("shift", std::move(out), {a}, [a](const Tensor<T>& g) {
    add_into(a.tape()->grad_slot(a), g);
  });
}

template <typename T>
Var<T> scale_by(Var<T> a, Var<T> s) {
  if (s.value().numel() != 1) {
    throw DimensionError("scale_by: scale must have one element, got " +
                         shape_string(s.shape()));
  }
  const T factor = s.value()[0];
  Tensor<T> out = a.value();
  for (T& x : out.data()) x *= factor;
  return tape_of(a).record("scale_by", std::move(out), {a, s}, [a, s](const Tensor<T>& g) {
    Tape<T>& tape = *a.tape();
    if (a.requires_grad()) {
      kt<T>().axpy(s.value()[0], g.ptr(), tape.grad_slot(a).ptr(), g.numel());
    }
    if (s.requires_grad()) {
      tape.grad_slot(s)[0] += kt<T>().dot(g.ptr(), a.value().ptr(), g.numel());
    }
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T acc = 0;
  for (T x : a.value().data()) acc += x;
  return tape_of(a).record("sum", Tensor<T>::scalar(acc), {a}, [a](const Tensor<T>& g) {
    Tensor<T>& da = a.tape()->grad_slot(a);
    for (T& x : da.data()) x += g[0];
  });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  for (const Var<T>& p : parts) {
    if (p.value().cols() != cols) {
      throw DimensionError("concat_rows: width mismatch " +
                           shape_string(parts[0].shape()) + " vs " +
                           shape_string(p.shape()));
    }
    rows += p.value().rows();
  }
  std::vector<T> data;
  data.reserve(rows * cols);
  for (const Var<T>& p : parts) {
    const auto d = p.value().data();
    data.insert(data.end(), d.begin(), d.end());
  }
  std::vector<Var<T>> inputs(parts.begin(), parts.end());
  Tape<T>& tape = tape_of(parts[0]);
  return tape.record("concat_rows", Tensor<T>({rows, cols}, std::move(data)),
                     std::span<const Var<T>>(inputs),
                     [inputs](const Tensor<T>& g) {
                       std::size_t offset = 0;
                       for (const Var<T>& p : inputs) {
                         const std::size_t n = p.value().numel();
                         if (p.requires_grad()) {
                           kt<T>().axpy(T(1), g.ptr() + offset,
                                        p.tape()->grad_slot(p).ptr(), n);
                         }
                         offset += n;
                       }
                     });
}

template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end) {
  const Tensor<T>& av = a.value();
  const std::size_t cols = av.cols();
  if (begin >= end || end > av.rows()) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") invalid for " +
                         shape_string(av.shape()));
  }
  std::vector<T> data(av.ptr() + begin * cols, av.ptr() + end * cols);
  return tape_of(a).record("slice_rows", Tensor<T>({end - begin, cols}, std::move(data)),
                           {a}, [a, begin, cols](const Tensor<T>& g) {
                             kt<T>().axpy(T(1), g.ptr(),
                                          a.tape()->grad_slot(a).ptr() + begin * cols,
                                          g.numel());
                           });
}

template <typename T>
Var<T> gather_rows(Var<T> a, std::span<const std::size_t> rows) {
  const Tensor<T>& av = a.value();
  const std::size_t cols = av.cols();
  if (rows.empty()) throw ContractError("gather_rows: no rows requested");
  std::vector<T> data;
  data.reserve(rows.size() * cols);
  for (std::size_t r : rows) {
    if (r >= av.rows()) {
      throw IndexError("gather_rows: row " + std::to_string(r) + " out of range for " +
                       shape_string(av.shape()));
    }
    data.insert(data.end(), av.ptr() + r * cols, av.ptr() + (r + 1) * cols);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return tape_of(a).record("gather_rows", Tensor<T>({idx.size(), cols}, std::move(data)),
                           {a}, [a, idx, cols](const Tensor<T>& g) {
                             T* da = a.tape()->grad_slot(a).ptr();
                             for (std::size_t i = 0; i < idx.size(); ++i) {
                               kt<T>().axpy(T(1), g.ptr() + i * cols,
                                            da + idx[i] * cols, cols);
                             }
                           });
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t rows = parts[0].value().rows();
  std::size_t cols = 0;
  for (const Var<T>& p : parts) {
    if (p.value().rows() != rows) {
      throw DimensionError("concat_cols: row count mismatch " +
                           shape_string(parts[0].shape()) + " vs " +
                           shape_string(p.shape()));
    }
    cols += p.value().cols();
  }
  Tensor<T> out({rows, cols});
  std::size_t offset = 0;
  for (const Var<T>& p : parts) {
    const std::size_t w = p.value().cols();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(p.value().ptr() + r * w, w, out.ptr() + r * cols + offset);
    }
    offset += w;
  }
  std::vector<Var<T>> inputs(parts.begin(), parts.end());
  return tape_of(parts[0]).record(
      "concat_cols", std::move(out), std::span<const Var<T>>(inputs),
      [inputs, rows, cols](const Tensor<T>& g) {
        std::size_t offset = 0;
        for (const Var<T>& p : inputs) {
          const std::size_t w = p.value().cols();
          if (p.requires_grad()) {
            T* dp = p.tape()->grad_slot(p).ptr();
            for (std::size_t r = 0; r < rows; ++r) {
              kt<T>().axpy(T(1), g.ptr() + r * cols + offset, dp + r * w, w);
            }
          }
          offset += w;
        }
      });
}

template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end) {
  const Tensor<T>& av = a.value();
  require_rank2("slice_cols", av);
  const std::size_t rows = av.dim(0), cols = av.dim(1);
  if (begin >= end || end > cols) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") invalid for " +
                         shape_string(av.shape()));
  }
  const std::size_t w = end - begin;
  Tensor<T> out({rows, w});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.ptr() + r * cols + begin, w, out.ptr() + r * w);
  }
  return tape_of(a).record("slice_cols", std::move(out), {a},
                           [a, rows, cols, begin, w](const Tensor<T>& g) {
                             T* da = a.tape()->grad_slot(a).ptr();
                             for (std::size_t r = 0; r < rows; ++r) {
                               kt<T>().axpy(T(1), g.ptr() + r * w,
                                            da + r * cols + begin, w);
                             }
                           });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return tape_of(a).record("reshape", std::move(out), {a}, [a](const Tensor<T>& g) {
    add_into(a.tape()->grad_slot(a), g);
  });
}

template <typename T>
Tensor<T> softmax_values(const Tensor<T>& v, int axis) {
  const AxisSplit s = split_axis(v.shape(), axis, "softmax");
  Tensor<T> out(v.shape());
  const T* in = v.ptr();
  T* o = out.ptr();
  std::vector<T> sorted;
  for (std::size_t outer = 0; outer < s.outer; ++outer) {
    for (std::size_t inner = 0; inner < s.inner; ++inner) {
      const std::size_t base = outer * s.extent * s.inner + inner;
      T mx = in[base];
      for (std::size_t j = 1; j < s.extent; ++j) mx = std::max(mx, in[base + j * s.inner]);
      sorted.resize(s.extent);
      for (std::size_t j = 0; j < s.extent; ++j) {
        const T e = std::exp(in[base + j * s.inner] - mx);
        o[base + j * s.inner] = e;
        sorted[j] = e;
      }
      // Summing in sorted order makes the normaliser, and so the output,
      // exactly equivariant under permutations of the axis.
      std::sort(sorted.begin(), sorted.end());
      T total = 0;
      for (T e : sorted) total += e;
      for (std::size_t j = 0; j < s.extent; ++j) o[base + j * s.inner] /= total;
    }
  }
  return out;
}

template <typename T>
Var<T> softmax(Var<T> a, int axis) {
  const AxisSplit s = split_axis(a.value().shape(), axis, "softmax");
  auto y = std::make_shared<const Tensor<T>>(softmax_values(a.value(), axis));
  const Var<T> inputs[] = {a};
  return tape_of(a).record("softmax", y, inputs, [a, y, s](const Tensor<T>& g) {
    const T* yv = y->ptr();
    T* da = a.tape()->grad_slot(a).ptr();
    for (std::size_t outer = 0; outer < s.outer; ++outer) {
      for (std::size_t inner = 0; inner < s.inner; ++inner) {
        const std::size_t base = outer * s.extent * s.inner + inner;
        T dotp = 0;
        for (std::size_t j = 0; j < s.extent; ++j) {
          const std::size_t i = base + j * s.inner;
          dotp += g[i] * yv[i];
        }
        for (std::size_t j = 0; j < s.extent; ++j) {
          const std::size_t i = base + j * s.inner;
          da[i] += yv[i] * (g[i] - dotp);
        }
      }
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
  const Tensor<T>& xv = x.value();
  const std::size_t n = xv.cols(), rows = xv.rows();
  if (gain.value().numel() != n || bias.value().numel() != n) {
    throw DimensionError("layer_norm: gain/bias " + shape_string(gain.shape()) +
                         "/" + shape_string(bias.shape()) + " vs input " +
                         shape_string(xv.shape()));
  }
  Tensor<T> out(xv.shape());
  std::vector<T> xhat(xv.numel());
  std::vector<T> inv_std(rows);
  const T* gp = gain.value().ptr();
  const T* bp = bias.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.ptr() + r * n;
    T mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<T>(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(n);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (row[j] - mean) * is;
      xhat[r * n + j] = h;
      out[r * n + j] = h * gp[j] + bp[j];
    }
  }
  return tape_of(x).record(
      "layer_norm", std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), n,
       rows](const Tensor<T>& g) {
        Tape<T>& tape = *x.tape();
        if (gain.requires_grad()) {
          T* dg = tape.grad_slot(gain).ptr();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) dg[j] += g[r * n + j] * xhat[r * n + j];
        }
        if (bias.requires_grad()) {
          T* db = tape.grad_slot(bias).ptr();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) db[j] += g[r * n + j];
        }
        if (x.requires_grad()) {
          T* dx = tape.grad_slot(x).ptr();
          const T* gp = gain.value().ptr();
          std::vector<T> dh(n);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_dh = 0, mean_dh_h = 0;
            for (std::size_t j = 0; j < n; ++j) {
              dh[j] = g[r * n + j] * gp[j];
              mean_dh += dh[j];
              mean_dh_h += dh[j] * xhat[r * n + j];
            }
            mean_dh /= static_cast<T>(n);
            mean_dh_h /= static_cast<T>(n);
            for (std::size_t j = 0; j < n; ++j) {
              dx[r * n + j] +=
                  inv_std[r] * (dh[j] - mean_dh - xhat[r * n + j] * mean_dh_h);
            }
          }
        }
      });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  Tensor<T> out = x.value();
  for (T& v : out.data()) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  return tape_of(x).record("gelu", std::move(out), {x}, [x](const Tensor<T>& g) {
    constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    constexpr T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
    Tensor<T>& dx = x.tape()->grad_slot(x);
    const T* xv = x.value().ptr();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const T v = xv[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      dx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Var<T> embedding(Var<T> table, std::span<const std::int32_t> ids) {
  const Tensor<T>& tv = table.value();
  require_rank2("embedding", tv);
  if (ids.empty()) throw ContractError("embedding: empty id list");
  const std::size_t vocab = tv.dim(0), width = tv.dim(1);
  Tensor<T> out({ids.size(), width});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError("embedding: id " + std::to_string(ids[i]) +
                       " out of range for vocabulary of " + std::to_string(vocab));
    }
    std::copy_n(tv.ptr() + ids[i] * width, width, out.ptr() + i * width);
  }
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  return tape_of(table).record("embedding", std::move(out), {table},
                               [table, idv, width](const Tensor<T>& g) {
                                 T* dt = table.tape()->grad_slot(table).ptr();
                                 for (std::size_t i = 0; i < idv.size(); ++i) {
                                   kt<T>().axpy(T(1), g.ptr() + i * width,
                                                dt + idv[i] * width, width);
                                 }
                               });
}

template <typename T>
std::vector<T> row_nll(const Tensor<T>& logits, std::span<const std::int32_t> targets) {
  const std::size_t vocab = logits.cols();
  const std::size_t rows = logits.rows();
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_string(logits.shape()));
  }
  std::vector<T> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::int32_t t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw IndexError("cross_entropy: target " + std::to_string(t) +
                       " out of range for vocabulary of " + std::to_string(vocab));
    }
    const T* row = logits.ptr() + r * vocab;
    const T mx = *std::max_element(row, row + vocab);
    T total = 0;
    for (std::size_t j = 0; j < vocab; ++j) total += std::exp(row[j] - mx);
    out[r] = std::log(total) + mx - row[t];
  }
  return out;
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int32_t> targets,
                     Reduction reduction) {
  const std::vector<T> losses = row_nll(logits.value(), targets);
  T total = 0;
  for (T l : losses) total += l;
  const T norm = reduction == Reduction::kMean ? T(1) / static_cast<T>(losses.size()) : T(1);
  std::vector<std::int32_t> tv(targets.begin(), targets.end());
  return tape_of(logits).record(
      "cross_entropy", Tensor<T>::scalar(total * norm), {logits},
      [logits, tv, norm](const Tensor<T>& g) {
        const Tensor<T> probs = softmax_values(logits.value(), -1);
        const std::size_t vocab = probs.cols();
        T* dl = logits.tape()->grad_slot(logits).ptr();
        const T scale = g[0] * norm;
        for (std::size_t r = 0; r < tv.size(); ++r) {
          for (std::size_t j = 0; j < vocab; ++j) {
            dl[r * vocab + j] += scale * probs[r * vocab + j];
          }
          dl[r * vocab + tv[r]] -= scale;
        }
      });
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads, std::size_t group,
                 bool causal) {
  const Tensor<T>& qv = q.value();
  require_rank2("attention", qv);
  require_same_shape("attention", qv, k.value());
  require_same_shape("attention", qv, v.value());
  const std::size_t rows = qv.dim(0), width = qv.dim(1);
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(width) +
                      " not divisible by " + std::to_string(heads) + " heads");
  }
  if (group == 0 || rows % group != 0) {
    throw DimensionError("attention: " + std::to_string(rows) +
                         " rows not divisible into groups of " + std::to_string(group));
  }
  const std::size_t dh = width / heads;
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(dh));
  const auto& K = kt<T>();
  // probs[((grp * heads + h) * group + i) * group + j]
  std::vector<T> probs(rows * group * heads, T(0));
  Tensor<T> out({rows, width});
  const T* qp = qv.ptr();
  const T* kp = k.value().ptr();
  const T* vp = v.value().ptr();
  for (std::size_t s = 0; s < rows; s += group) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t o = h * dh;
      for (std::size_t i = 0; i < group; ++i) {
        T* p = probs.data() + (((s / group) * heads + h) * group + i) * group;
        const std::size_t span = causal ? i + 1 : group;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < span; ++j) {
          p[j] = K.dot(qp + (s + i) * width + o, kp + (s + j) * width + o, dh) * inv_scale;
          mx = std::max(mx, p[j]);
        }
        T total = 0;
        for (std::size_t j = 0; j < span; ++j) {
          p[j] = std::exp(p[j] - mx);
          total += p[j];
        }
        for (std::size_t j = 0; j < span; ++j) {
          p[j] /= total;
          K.axpy(p[j], vp + (s + j) * width + o, out.ptr() + (s + i) * width + o, dh);
        }
      }
    }
  }
  return tape_of(q).record(
      "attention", std::move(out), {q, k, v},
      [q, k, v, probs = std::move(probs), heads, group, causal, dh, width, rows,
       inv_scale](const Tensor<T>& g) {
        Tape<T>& tape = *q.tape();
        const auto& K = kt<T>();
        T* dq = q.requires_grad() ? tape.grad_slot(q).ptr() : nullptr;
        T* dk = k.requires_grad() ? tape.grad_slot(k).ptr() : nullptr;
        T* dv = v.requires_grad() ? tape.grad_slot(v).ptr() : nullptr;
        const T* qp = q.value().ptr();
        const T* kp = k.value().ptr();
        const T* vp = v.value().ptr();
        std::vector<T> ds(group);
        for (std::size_t s = 0; s < rows; s += group) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t o = h * dh;
            for (std::size_t i = 0; i < group; ++i) {
              const T* p = probs.data() + (((s / group) * heads + h) * group + i) * group;
              const std::size_t span = causal ? i + 1 : group;
              const T* gi = g.ptr() + (s + i) * width + o;
              T c = 0;
              for (std::size_t j = 0; j < span; ++j) {
                ds[j] = K.dot(gi, vp + (s + j) * width + o, dh);
                c += p[j] * ds[j];
                if (dv) K.axpy(p[j], gi, dv + (s + j) * width + o, dh);
              }
              for (std::size_t j = 0; j < span; ++j) {
                const T sj = p[j] * (ds[j] - c) * inv_scale;
                if (dq) K.axpy(sj, kp + (s + j) * width + o, dq + (s + i) * width + o, dh);
                if (dk) K.axpy(sj, qp + (s + i) * width + o, dk + (s + j) * width + o, dh);
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> weighted_layer_sum(Var<T> stack, Var<T> weights) {
  const Tensor<T>& sv = stack.value();
  if (sv.rank() != 3) {
    throw DimensionError("weighted_layer_sum: stack must be [T x L x d], got " +
                         shape_string(sv.shape()));
  }
  const std::size_t tokens = sv.dim(0), layers = sv.dim(1), width = sv.dim(2);
  const std::size_t wn = weights.value().numel();
  const bool shared = wn == layers;
  if (!shared && wn != tokens * layers) {
    throw DimensionError("weighted_layer_sum: weights " + shape_string(weights.shape()) +
                         " do not match stack " + shape_string(sv.shape()));
  }
  const auto& K = kt<T>();
  Tensor<T> out({tokens, width});
  const T* wp = weights.value().ptr();
  for (std::size_t t = 0; t < tokens; ++t) {
    const T* wrow = shared ? wp : wp + t * layers;
    for (std::size_t l = 0; l < layers; ++l) {
      K.axpy(wrow[l], sv.ptr() + (t * layers + l) * width, out.ptr() + t * width, width);
    }
  }
  return tape_of(stack).record(
      "weighted_layer_sum", std::move(out), {stack, weights},
      [stack, weights, tokens, layers, width, shared](const Tensor<T>& g) {
        Tape<T>& tape = *stack.tape();
        const auto& K = kt<T>();
        const T* sp = stack.value().ptr();
        if (weights.requires_grad()) {
          T* dw = tape.grad_slot(weights).ptr();
          for (std::size_t t = 0; t < tokens; ++t) {
            T* drow = shared ? dw : dw + t * layers;
            for (std::size_t l = 0; l < layers; ++l) {
              drow[l] += K.dot(g.ptr() + t * width, sp + (t * layers + l) * width, width);
            }
          }
        }
        if (stack.requires_grad()) {
          T* ds = tape.grad_slot(stack).ptr();
          const T* wp = weights.value().ptr();
          for (std::size_t t = 0; t < tokens; ++t) {
            const T* wrow = shared ? wp : wp + t * layers;
            for (std::size_t l = 0; l < layers; ++l) {
              K.axpy(wrow[l], g.ptr() + t * width, ds + (t * layers + l) * width, width);
            }
          }
        }
      });
}

#define LFUSE_INSTANTIATE_OPS(T)                                                     \
  template Var<T> matmul(Var<T>, Var<T>);                                            \
  template Var<T> matmul_nt(Var<T>, Var<T>);                                         \
  template Var<T> add(Var<T>, Var<T>);                                               \
  template Var<T> add_row(Var<T>, Var<T>);                                           \
  template Var<T> mul(Var<T>, Var<T>);                                               \
  template Var<T> scale(Var<T>, T);                                                  \
  template Var<T> shift(Var<T>, T);                                                  \
  template Var<T> scale_by(Var<T>, Var<T>);                                          \
  template Var<T> sum(Var<T>);                                                       \
  template Var<T> concat_rows(std::span<const Var<T>>);                              \
  template Var<T> slice_rows(Var<T>, std::size_t, std::size_t);                      \
  template Var<T> gather_rows(Var<T>, std::span<const std::size_t>);                 \
  template Var<T> concat_cols(std::span<const Var<T>>);                              \
  template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);                      \
  template Var<T> reshape(Var<T>, Shape);                                            \
  template Var<T> softmax(Var<T>, int);                                              \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                             \
  template Var<T> gelu(Var<T>);                                                      \
  template Var<T> embedding(Var<T>, std::span<const std::int32_t>);                  \
  template Var<T> cross_entropy(Var<T>, std::span<const std::int32_t>, Reduction);   \
  template Var<T> attention(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t, bool); \
  template Var<T> weighted_layer_sum(Var<T>, Var<T>);                                \
  template Tensor<T> softmax_values(const Tensor<T>&, int);                          \
  template std::vector<T> row_nll(const Tensor<T>&, std::span<const std::int32_t>);

LFUSE_INSTANTIATE_OPS(float)
LFUSE_INSTANTIATE_OPS(double)

}  // namespace lfuse
