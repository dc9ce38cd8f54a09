#include "ctcnat/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "ctcnat/errors.hpp"

namespace ctcnat {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

// Finite stand-in for -inf inside masked attention scores; exp() of it
// after max shift is exactly 0.
constexpr double kMaskedScore = -1e30;

CMapMat as_matrix(std::span<const double> data, std::size_t rows, std::size_t cols) {
  return CMapMat(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MapMat as_matrix(std::span<double> data, std::size_t rows, std::size_t cols) {
  return MapMat(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

GradTape* tape_for(std::initializer_list<const Tensor*> inputs) {
  GradTape* tape = GradTape::current();
  if (tape == nullptr) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

void check_finite(const Tensor& out, const char* op) {
  for (double v : out.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
  }
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

// Splits a shape around an axis into (outer, n, inner) extents.
struct AxisView {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace

double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) return kLogZero;
  const double m = *std::max_element(xs.begin(), xs.end());
  if (m == kLogZero) return kLogZero;
  if (std::isinf(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

double log_add(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros({m, n});
  as_matrix(out.mutable_data(), m, n).noalias() = as_matrix(a.data(), m, k) * as_matrix(b.data(), k, n);
  check_finite(out, "matmul");
  if (GradTape* tape = tape_for({&a, &b})) {
    tape->record({a, b}, out, [a, b, out, m, k, n](GradTape& t) {
      auto gc = as_matrix(t.gradient(out), m, n);
      if (a.requires_grad()) {
        as_matrix(t.grad_buffer(a), m, k).noalias() += gc * as_matrix(b.data(), k, n).transpose();
      }
      if (b.requires_grad()) {
        as_matrix(t.grad_buffer(b), k, n).noalias() += as_matrix(a.data(), m, k).transpose() * gc;
      }
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner dimensions disagree for " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()) + "ᵀ");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out = Tensor::zeros({m, n});
  as_matrix(out.mutable_data(), m, n).noalias() =
      as_matrix(a.data(), m, k) * as_matrix(b.data(), n, k).transpose();
  check_finite(out, "matmul_nt");
  if (GradTape* tape = tape_for({&a, &b})) {
    tape->record({a, b}, out, [a, b, out, m, k, n](GradTape& t) {
      auto gc = as_matrix(t.gradient(out), m, n);
      if (a.requires_grad()) {
        as_matrix(t.grad_buffer(a), m, k).noalias() += gc * as_matrix(b.data(), n, k);
      }
      if (b.requires_grad()) {
        as_matrix(t.grad_buffer(b), n, k).noalias() += gc.transpose() * as_matrix(a.data(), m, k);
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros({n, m});
  as_matrix(out.mutable_data(), n, m) = as_matrix(a.data(), m, n).transpose();
  if (GradTape* tape = tape_for({&a})) {
    tape->record({a}, out, [a, out, m, n](GradTape& t) {
      as_matrix(t.grad_buffer(a), m, n) += as_matrix(t.gradient(out), n, m).transpose();
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> v(a.size());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] + y[i];
  Tensor out(a.shape(), std::move(v));
  check_finite(out, "add");
  if (GradTape* tape = tape_for({&a, &b})) {
    tape->record({a, b}, out, [a, b, out](GradTape& t) {
      auto g = t.gradient(out);
      for (const Tensor* in : {&a, &b}) {
        if (!in->requires_grad()) continue;
        auto dst = t.grad_buffer(*in);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> v(a.size());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] * y[i];
  Tensor out(a.shape(), std::move(v));
  check_finite(out, "mul");
  if (GradTape* tape = tape_for({&a, &b})) {
    tape->record({a, b}, out, [a, b, out](GradTape& t) {
      auto g = t.gradient(out);
      if (a.requires_grad()) {
        auto dst = t.grad_buffer(a);
        auto y = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * y[i];
      }
      if (b.requires_grad()) {
        auto dst = t.grad_buffer(b);
        auto x = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * x[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> v(a.data().begin(), a.data().end());
  for (double& x : v) x *= factor;
  Tensor out(a.shape(), std::move(v));
  check_finite(out, "scale");
  if (GradTape* tape = tape_for({&a})) {
    tape->record({a}, out, [a, out, factor](GradTape& t) {
      auto g = t.gradient(out);
      auto dst = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * factor;
    });
  }
  return out;
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_row_bias");
  if (bias.size() != x.cols()) {
    throw DimensionError("add_row_bias: bias " + shape_string(bias.shape()) + " does not match " +
                         shape_string(x.shape()));
  }
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> v(x.data().begin(), x.data().end());
  auto b = bias.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] += b[j];
  }
  Tensor out(x.shape(), std::move(v));
  check_finite(out, "add_row_bias");
  if (GradTape* tape = tape_for({&x, &bias})) {
    tape->record({x, bias}, out, [x, bias, out, m, n](GradTape& t) {
      auto g = t.gradient(out);
      if (x.requires_grad()) {
        auto dst = t.grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto dst = t.grad_buffer(bias);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) dst[j] += g[i * n + j];
        }
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  std::vector<double> v(x.data().begin(), x.data().end());
  for (double& e : v) e = e > 0.0 ? e : 0.0;
  Tensor out(x.shape(), std::move(v));
  if (GradTape* tape = tape_for({&x})) {
    tape->record({x}, out, [x, out](GradTape& t) {
      auto g = t.gradient(out);
      auto in = x.data();
      auto dst = t.grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (in[i] > 0.0) dst[i] += g[i];
      }
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_string(x.shape()));
  }
  const AxisView v = axis_view(x.shape(), axis);
  auto in = x.data();
  std::vector<double> y(in.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.n * v.inner + i;
      double m = in[base];
      for (std::size_t j = 1; j < v.n; ++j) m = std::max(m, in[base + j * v.inner]);
      double s = 0.0;
      for (std::size_t j = 0; j < v.n; ++j) {
        const double e = std::exp(in[base + j * v.inner] - m);
        y[base + j * v.inner] = e;
        s += e;
      }
      for (std::size_t j = 0; j < v.n; ++j) y[base + j * v.inner] /= s;
    }
  }
  Tensor out(x.shape(), std::move(y));
  check_finite(out, "softmax");
  if (GradTape* tape = tape_for({&x})) {
    tape->record({x}, out, [x, out, v](GradTape& t) {
      auto g = t.gradient(out);
      auto y = out.data();
      auto dst = t.grad_buffer(x);
      for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t i = 0; i < v.inner; ++i) {
          const std::size_t base = o * v.n * v.inner + i;
          double dot = 0.0;
          for (std::size_t j = 0; j < v.n; ++j) dot += y[base + j * v.inner] * g[base + j * v.inner];
          for (std::size_t j = 0; j < v.n; ++j) {
            const std::size_t p = base + j * v.inner;
            dst[p] += y[p] * (g[p] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor log_softmax(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  auto in = x.data();
  std::vector<double> y(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double lse = log_sum_exp(in.subspan(r * n, n));
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] = in[r * n + j] - lse;
  }
  Tensor out(x.shape(), std::move(y));
  check_finite(out, "log_softmax");
  if (GradTape* tape = tape_for({&x})) {
    tape->record({x}, out, [x, out, rows, n](GradTape& t) {
      auto g = t.gradient(out);
      auto y = out.data();
      auto dst = t.grad_buffer(x);
      for (std::size_t r = 0; r < rows; ++r) {
        double gs = 0.0;
        for (std::size_t j = 0; j < n; ++j) gs += g[r * n + j];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t p = r * n + j;
          dst[p] += g[p] - std::exp(y[p]) * gs;
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon) {
  const std::size_t d = x.shape().back();
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_string(gain.shape()) + "/" +
                         shape_string(bias.shape()) + " do not match last dimension of " +
                         shape_string(x.shape()));
  }
  const std::size_t rows = x.size() / d;
  auto in = x.data();
  auto gv = gain.data();
  auto bv = bias.data();
  std::vector<double> y(in.size());
  std::vector<double> xhat(in.size());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + epsilon);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * rstd[r];
      xhat[r * d + j] = h;
      y[r * d + j] = h * gv[j] + bv[j];
    }
  }
  Tensor out(x.shape(), std::move(y));
  check_finite(out, "layer_norm");
  if (GradTape* tape = tape_for({&x, &gain, &bias})) {
    tape->record({x, gain, bias}, out,
                 [x, gain, bias, out, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](GradTape& t) {
                   auto g = t.gradient(out);
                   auto gv = gain.data();
                   if (gain.requires_grad()) {
                     auto dst = t.grad_buffer(gain);
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t j = 0; j < d; ++j) dst[j] += g[r * d + j] * xhat[r * d + j];
                   }
                   if (bias.requires_grad()) {
                     auto dst = t.grad_buffer(bias);
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t j = 0; j < d; ++j) dst[j] += g[r * d + j];
                   }
                   if (x.requires_grad()) {
                     auto dst = t.grad_buffer(x);
                     const double inv_d = 1.0 / static_cast<double>(d);
                     for (std::size_t r = 0; r < rows; ++r) {
                       double mean_dh = 0.0, mean_dh_h = 0.0;
                       for (std::size_t j = 0; j < d; ++j) {
                         const double dh = g[r * d + j] * gv[j];
                         mean_dh += dh;
                         mean_dh_h += dh * xhat[r * d + j];
                       }
                       mean_dh *= inv_d;
                       mean_dh_h *= inv_d;
                       for (std::size_t j = 0; j < d; ++j) {
                         const double dh = g[r * d + j] * gv[j];
                         dst[r * d + j] += rstd[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
                       }
                     }
                   }
                 });
  }
  return out;
}

Tensor mask_future(const Tensor& scores) {
  require_matrix(scores, "mask_future");
  const std::size_t m = scores.rows(), n = scores.cols();
  std::vector<double> v(scores.data().begin(), scores.data().end());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) v[i * n + j] = kMaskedScore;
  }
  Tensor out(scores.shape(), std::move(v));
  if (GradTape* tape = tape_for({&scores})) {
    tape->record({scores}, out, [scores, out, m, n](GradTape& t) {
      auto g = t.gradient(out);
      auto dst = t.grad_buffer(scores);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j <= i && j < n; ++j) dst[i * n + j] += g[i * n + j];
      }
    });
  }
  return out;
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_matrix(table, "embedding");
  if (ids.empty()) throw DimensionError("embedding: empty id sequence");
  const std::size_t vocab = table.rows(), d = table.cols();
  std::vector<int> idx(ids.begin(), ids.end());
  std::vector<double> v(idx.size() * d);
  auto src = table.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab) {
      throw DimensionError("embedding: id " + std::to_string(idx[i]) + " outside table of " +
                           std::to_string(vocab) + " rows");
    }
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(idx[i] * d), d, v.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  Tensor out({idx.size(), d}, std::move(v));
  if (GradTape* tape = tape_for({&table})) {
    tape->record({table}, out, [table, out, d, idx = std::move(idx)](GradTape& t) {
      auto g = t.gradient(out);
      auto dst = t.grad_buffer(table);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) dst[static_cast<std::size_t>(idx[i]) * d + j] += g[i * d + j];
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  if (GradTape* tape = tape_for({&x})) {
    tape->record({x}, out, [x, out](GradTape& t) {
      auto g = t.gradient(out);
      auto dst = t.grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_cols");
  const std::size_t m = x.rows(), n = x.cols();
  if (count == 0 || begin + count > n) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_string(x.shape()));
  }
  std::vector<double> v(m * count);
  auto src = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(i * n + begin), count,
                v.begin() + static_cast<std::ptrdiff_t>(i * count));
  }
  Tensor out({m, count}, std::move(v));
  if (GradTape* tape = tape_for({&x})) {
    tape->record({x}, out, [x, out, m, n, begin, count](GradTape& t) {
      auto g = t.gradient(out);
      auto dst = t.grad_buffer(x);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) dst[i * n + begin + j] += g[i * count + j];
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (count == 0 || begin + count > m) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_string(x.shape()));
  }
  auto src = x.data().subspan(begin * n, count * n);
  Tensor out({count, n}, std::vector<double>(src.begin(), src.end()));
  if (GradTape* tape = tape_for({&x})) {
    tape->record({x}, out, [x, out, n, begin](GradTape& t) {
      auto g = t.gradient(out);
      auto dst = t.grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) dst[begin * n + i] += g[i];
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) throw DimensionError("concat_cols: row counts differ");
    n += p.cols();
  }
  std::vector<double> v(m * n);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.cols();
    auto src = p.data();
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(i * c), c,
                  v.begin() + static_cast<std::ptrdiff_t>(i * n + offset));
    }
    offset += c;
  }
  Tensor out({m, n}, std::move(v));
  GradTape* tape = GradTape::current();
  const bool any = std::any_of(parts.begin(), parts.end(), [](const Tensor& p) { return p.requires_grad(); });
  if (tape != nullptr && any) {
    tape->record(parts, out, [parts, out, m, n](GradTape& t) {
      auto g = t.gradient(out);
      std::size_t offset = 0;
      for (const auto& p : parts) {
        const std::size_t c = p.cols();
        if (p.requires_grad()) {
          auto dst = t.grad_buffer(p);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j) dst[i * c + j] += g[i * n + offset + j];
        }
        offset += c;
      }
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) throw DimensionError("concat_rows: column counts differ");
    m += p.rows();
  }
  std::vector<double> v;
  v.reserve(m * n);
  for (const auto& p : parts) v.insert(v.end(), p.data().begin(), p.data().end());
  Tensor out({m, n}, std::move(v));
  GradTape* tape = GradTape::current();
  const bool any = std::any_of(parts.begin(), parts.end(), [](const Tensor& p) { return p.requires_grad(); });
  if (tape != nullptr && any) {
    tape->record(parts, out, [parts, out](GradTape& t) {
      auto g = t.gradient(out);
      std::size_t offset = 0;
      for (const auto& p : parts) {
        if (p.requires_grad()) {
          auto dst = t.grad_buffer(p);
          for (std::size_t i = 0; i < p.size(); ++i) dst[i] += g[offset + i];
        }
        offset += p.size();
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out({1}, {s});
  check_finite(out, "sum");
  if (GradTape* tape = tape_for({&x})) {
    tape->record({x}, out, [x, out](GradTape& t) {
      const double g = t.gradient(out)[0];
      auto dst = t.grad_buffer(x);
      for (double& d : dst) d += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor nll_loss(const Tensor& log_probs, std::span<const int> targets) {
  require_matrix(log_probs, "nll_loss");
  const std::size_t m = log_probs.rows(), n = log_probs.cols();
  if (targets.size() != m) {
    throw DimensionError("nll_loss: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(m) + " rows");
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (tgt[i] < 0 || static_cast<std::size_t>(tgt[i]) >= n) {
      throw DimensionError("nll_loss: target " + std::to_string(tgt[i]) + " outside " + std::to_string(n) +
                           " columns");
    }
    s -= log_probs.data()[i * n + static_cast<std::size_t>(tgt[i])];
  }
  Tensor out({1}, {s});
  check_finite(out, "nll_loss");
  if (GradTape* tape = tape_for({&log_probs})) {
    tape->record({log_probs}, out, [log_probs, out, n, tgt = std::move(tgt)](GradTape& t) {
      const double g = t.gradient(out)[0];
      auto dst = t.grad_buffer(log_probs);
      for (std::size_t i = 0; i < tgt.size(); ++i) dst[i * n + static_cast<std::size_t>(tgt[i])] -= g;
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw OptionError("dropout rate must be below 1");
  std::bernoulli_distribution keep(1.0 - rate);
  std::vector<double> mask(x.size());
  const double kept = 1.0 / (1.0 - rate);
  for (double& v : mask) v = keep(rng) ? kept : 0.0;
  return mul(x, Tensor(x.shape(), std::move(mask)));
}

}  // namespace ctcnat
