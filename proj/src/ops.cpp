#include "recog/ops.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "kernels.hpp"

namespace recog {

namespace {

std::size_t rows_of(const Tensor& x) { return x.dim(0); }
std::size_t row_width(const Tensor& x) { return x.numel() / x.dim(0); }

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw DimensionError(fmt::format("{}: expected rank {}, got shape {}", op, rank,
                                     shape_str(x.shape())));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(fmt::format("{}: shape mismatch {} vs {}", op, shape_str(a.shape()),
                                     shape_str(b.shape())));
  }
}

template <typename Forward, typename Derivative>
Tensor unary(const Tensor& x, Forward f, Derivative df) {
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  Tensor y(x.shape(), std::move(out));
  if (needs_grad({&x})) {
    record_op(y, [x, y, df] {
      auto g = y.mutable_grad();
      auto xv = x.data();
      auto yv = y.data();
      std::vector<double> dx(x.numel());
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = g[i] * df(xv[i], yv[i]);
      accumulate_grad(x, dx);
    });
  }
  return y;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError(fmt::format("matmul: inner dimensions disagree, {} x {}",
                                     shape_str(a.shape()), shape_str(b.shape())));
  }
  std::vector<double> out(m * n, 0.0);
  const double* av = a.data().data();
  const double* bv = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) kernels::axpy(row, av[i * k + p], bv + p * n, n);
  }
  Tensor y({m, n}, std::move(out));
  if (needs_grad({&a, &b})) {
    record_op(y, [a, b, y, m, k, n] {
      const double* g = y.mutable_grad().data();
      const double* av = a.data().data();
      const double* bv = b.data().data();
      if (a.requires_grad()) {
        std::vector<double> da(m * k);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) da[i * k + p] = kernels::dot(g + i * n, bv + p * n, n);
        accumulate_grad(a, da);
      }
      if (b.requires_grad()) {
        std::vector<double> db(k * n, 0.0);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) kernels::axpy(db.data() + p * n, av[i * k + p], g + i * n, n);
        accumulate_grad(b, db);
      }
    });
  }
  return y;
}

Tensor affine_rows(const Tensor& x, const Tensor& w, std::size_t row_begin, std::size_t rows, const Tensor& bias) {
  require_rank(x, 2, "affine");
  require_rank(w, 2, "affine");
  const std::size_t m = x.dim(0), k = x.dim(1), n = rows;
  if (w.dim(1) != k) {
    throw DimensionError(fmt::format("affine: input {} does not match weight {}",
                                     shape_str(x.shape()), shape_str(w.shape())));
  }
  if (n == 0 || row_begin + n > w.dim(0)) {
    throw DimensionError(fmt::format("affine: rows [{}, {}) outside weight {}", row_begin, row_begin + n,
                                     shape_str(w.shape())));
  }
  if (bias.defined() && (bias.numel() != n)) {
    throw DimensionError(fmt::format("affine: bias {} does not match {} weight rows",
                                     shape_str(bias.shape()), n));
  }
  std::vector<double> out(m * n);
  const double* xv = x.data().data();
  const double* wv = w.data().data() + row_begin * k;
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    std::size_t o = 0;
    for (; o + 4 <= n; o += 4) kernels::dot4(xv + i * k, wv + o * k, k, row + o);
    for (; o < n; ++o) row[o] = kernels::dot(xv + i * k, wv + o * k, k);
    if (bias.defined()) {
      for (std::size_t q = 0; q < n; ++q) row[q] += bias[q];
    }
  }
  Tensor y({m, n}, std::move(out));
  if (needs_grad({&x, &w, &bias})) {
    record_op(y, [x, w, bias, y, m, k, n, row_begin] {
      const double* g = y.mutable_grad().data();
      const double* xv = x.data().data();
      const double* wv = w.data().data() + row_begin * k;
      if (x.requires_grad()) {
        double* dx = x.mutable_grad().data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t o = 0; o < n; ++o) kernels::axpy(dx + i * k, g[i * n + o], wv + o * k, k);
      }
      if (w.requires_grad()) {
        double* dw = w.mutable_grad().data() + row_begin * k;
        for (std::size_t o = 0; o < n; ++o)
          for (std::size_t i = 0; i < m; ++i) kernels::axpy(dw + o * k, g[i * n + o], xv + i * k, k);
      }
      if (bias.defined() && bias.requires_grad()) {
        double* db = bias.mutable_grad().data();
        for (std::size_t i = 0; i < m; ++i) kernels::axpy(db, 1.0, g + i * n, n);
      }
    });
  }
  return y;
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank(w, 2, "affine");
  return affine_rows(x, w, 0, w.dim(0), bias);
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.data().begin(), a.data().end());
  kernels::axpy(out.data(), 1.0, b.data().data(), out.size());
  Tensor y(a.shape(), std::move(out));
  if (needs_grad({&a, &b})) {
    record_op(y, [a, b, y] {
      auto g = y.mutable_grad();
      accumulate_grad(a, g);
      accumulate_grad(b, g);
    });
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.data().begin(), a.data().end());
  kernels::axpy(out.data(), -1.0, b.data().data(), out.size());
  Tensor y(a.shape(), std::move(out));
  if (needs_grad({&a, &b})) {
    record_op(y, [a, b, y] {
      auto g = y.mutable_grad();
      accumulate_grad(a, g);
      if (b.requires_grad()) {
        std::vector<double> neg(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
        accumulate_grad(b, neg);
      }
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Tensor y(a.shape(), std::move(out));
  if (needs_grad({&a, &b})) {
    record_op(y, [a, b, y] {
      auto g = y.mutable_grad();
      std::vector<double> d(g.size());
      if (a.requires_grad()) {
        auto bv = b.data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * bv[i];
        accumulate_grad(a, d);
      }
      if (b.requires_grad()) {
        auto av = a.data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * av[i];
        accumulate_grad(b, d);
      }
    });
  }
  return y;
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) {
    throw ContractError(fmt::format("leaky_relu: slope {} outside (0, 1)", slope));
  }
  return unary(
      x, [slope](double v) { return v >= 0.0 ? v : slope * v; },
      [slope](double v, double) { return v >= 0.0 ? 1.0 : slope; });
}

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(m * n);
  auto xv = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * n;
    const double peak = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(row[j] - peak);
      z += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  Tensor y(x.shape(), std::move(out));
  if (needs_grad({&x})) {
    record_op(y, [x, y, m, n] {
      auto g = y.mutable_grad();
      auto yv = y.data();
      std::vector<double> dx(m * n);
      for (std::size_t i = 0; i < m; ++i) {
        const double inner = kernels::dot(g.data() + i * n, yv.data() + i * n, n);
        for (std::size_t j = 0; j < n; ++j) dx[i * n + j] = yv[i * n + j] * (g[i * n + j] - inner);
      }
      accumulate_grad(x, dx);
    });
  }
  return y;
}

namespace {
void check_segments(std::span<const std::size_t> ids, std::size_t rows, std::size_t n_segments,
                    const char* op) {
  if (ids.size() != rows) {
    throw DimensionError(fmt::format("{}: {} segment ids for {} rows", op, ids.size(), rows));
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= n_segments) {
      throw std::out_of_range(
          fmt::format("{}: segment id {} at row {} is outside [0, {})", op, ids[i], i, n_segments));
    }
  }
}
}  // namespace

Tensor segment_softmax(const Tensor& values, std::span<const std::size_t> segment_ids,
                       std::size_t n_segments) {
  if (values.rank() != 1 && !(values.rank() == 2 && values.dim(1) == 1)) {
    throw DimensionError("segment_softmax: expected a vector, got " + shape_str(values.shape()));
  }
  const std::size_t e = values.numel();
  check_segments(segment_ids, e, n_segments, "segment_softmax");
  auto v = values.data();
  std::vector<double> peak(n_segments, -INFINITY);
  for (std::size_t i = 0; i < e; ++i) peak[segment_ids[i]] = std::max(peak[segment_ids[i]], v[i]);
  std::vector<double> out(e), z(n_segments, 0.0);
  for (std::size_t i = 0; i < e; ++i) {
    out[i] = std::exp(v[i] - peak[segment_ids[i]]);
    z[segment_ids[i]] += out[i];
  }
  for (std::size_t i = 0; i < e; ++i) out[i] /= z[segment_ids[i]];
  Tensor y(values.shape(), std::move(out));
  if (needs_grad({&values})) {
    std::vector<std::size_t> ids(segment_ids.begin(), segment_ids.end());
    record_op(y, [values, y, ids = std::move(ids), n_segments] {
      auto g = y.mutable_grad();
      auto yv = y.data();
      std::vector<double> inner(n_segments, 0.0);
      for (std::size_t i = 0; i < ids.size(); ++i) inner[ids[i]] += g[i] * yv[i];
      std::vector<double> dx(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) dx[i] = yv[i] * (g[i] - inner[ids[i]]);
      accumulate_grad(values, dx);
    });
  }
  return y;
}

Tensor segment_sum(const Tensor& values, std::span<const std::size_t> segment_ids,
                   std::size_t n_segments) {
  const std::size_t rows = rows_of(values), width = row_width(values);
  check_segments(segment_ids, rows, n_segments, "segment_sum");
  std::vector<double> out(n_segments * width, 0.0);
  const double* v = values.data().data();
  for (std::size_t i = 0; i < rows; ++i) {
    kernels::axpy(out.data() + segment_ids[i] * width, 1.0, v + i * width, width);
  }
  Shape shape = values.shape();
  shape[0] = n_segments;
  Tensor y(std::move(shape), std::move(out));
  if (needs_grad({&values})) {
    std::vector<std::size_t> ids(segment_ids.begin(), segment_ids.end());
    record_op(y, [values, y, ids = std::move(ids), width] {
      const double* g = y.mutable_grad().data();
      std::vector<double> dv(ids.size() * width);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        std::copy_n(g + ids[i] * width, width, dv.data() + i * width);
      }
      accumulate_grad(values, dv);
    });
  }
  return y;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
  const std::size_t rows = rows_of(x), width = row_width(x);
  if (indices.empty()) throw DimensionError("gather_rows: empty index list");
  std::vector<double> out(indices.size() * width);
  const double* xv = x.data().data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows) {
      throw std::out_of_range(fmt::format("gather_rows: index {} outside [0, {})", indices[i], rows));
    }
    std::copy_n(xv + indices[i] * width, width, out.data() + i * width);
  }
  Shape shape = x.shape();
  shape[0] = indices.size();
  Tensor y(std::move(shape), std::move(out));
  if (needs_grad({&x})) {
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    record_op(y, [x, y, idx = std::move(idx), width] {
      const double* g = y.mutable_grad().data();
      std::vector<double> dx(x.numel(), 0.0);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        kernels::axpy(dx.data() + idx[i] * width, 1.0, g + i * width, width);
      }
      accumulate_grad(x, dx);
    });
  }
  return y;
}

Tensor scale_rows(const Tensor& x, const Tensor& w) {
  const std::size_t rows = rows_of(x), width = row_width(x);
  if (w.numel() != rows) {
    throw DimensionError(fmt::format("scale_rows: {} weights for {} rows", w.numel(), rows));
  }
  std::vector<double> out(x.numel());
  const double* xv = x.data().data();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < width; ++j) out[i * width + j] = xv[i * width + j] * w[i];
  Tensor y(x.shape(), std::move(out));
  if (needs_grad({&x, &w})) {
    record_op(y, [x, w, y, rows, width] {
      const double* g = y.mutable_grad().data();
      if (x.requires_grad()) {
        std::vector<double> dx(x.numel());
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < width; ++j) dx[i * width + j] = g[i * width + j] * w[i];
        accumulate_grad(x, dx);
      }
      if (w.requires_grad()) {
        std::vector<double> dw(rows);
        const double* xv = x.data().data();
        for (std::size_t i = 0; i < rows; ++i) dw[i] = kernels::dot(g + i * width, xv + i * width, width);
        accumulate_grad(w, dw);
      }
    });
  }
  return y;
}

Tensor row_norms(const Tensor& x) {
  const std::size_t rows = rows_of(x), width = row_width(x);
  std::vector<double> out(rows);
  const double* xv = x.data().data();
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < width; ++j) s += xv[i * width + j] * xv[i * width + j];
    out[i] = std::sqrt(s);
  }
  Tensor y({rows}, std::move(out));
  if (needs_grad({&x})) {
    record_op(y, [x, y, rows, width] {
      auto g = y.mutable_grad();
      auto yv = y.data();
      const double* xv = x.data().data();
      std::vector<double> dx(x.numel(), 0.0);
      for (std::size_t i = 0; i < rows; ++i) {
        if (yv[i] == 0.0) continue;
        for (std::size_t j = 0; j < width; ++j) dx[i * width + j] = g[i] * xv[i * width + j] / yv[i];
      }
      accumulate_grad(x, dx);
    });
  }
  return y;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t n = 0;
  for (const Tensor& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != m) {
      throw DimensionError(fmt::format("concat_cols: row mismatch {} vs {}", shape_str(parts[0].shape()),
                                       shape_str(p.shape())));
    }
    widths.push_back(p.dim(1));
    n += p.dim(1);
  }
  std::vector<double> out(m * n);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const double* pv = parts[k].data().data();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(pv + i * widths[k], widths[k], out.data() + i * n + offset);
    offset += widths[k];
  }
  Tensor y({m, n}, std::move(out));
  if (needs_grad(parts)) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    record_op(y, [inputs = std::move(inputs), widths = std::move(widths), y, m, n] {
      const double* g = y.mutable_grad().data();
      std::size_t offset = 0;
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (inputs[k].requires_grad()) {
          std::vector<double> d(m * widths[k]);
          for (std::size_t i = 0; i < m; ++i) std::copy_n(g + i * n + offset, widths[k], d.data() + i * widths[k]);
          accumulate_grad(inputs[k], d);
        }
        offset += widths[k];
      }
    });
  }
  return y;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Shape shape = parts[0].shape();
  const std::size_t width = row_width(parts[0]);
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1)) {
      throw DimensionError(fmt::format("concat_rows: trailing shape mismatch {} vs {}", shape_str(shape),
                                       shape_str(p.shape())));
    }
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(rows * width);
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  shape[0] = rows;
  Tensor y(std::move(shape), std::move(out));
  if (needs_grad(parts)) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    record_op(y, [inputs = std::move(inputs), y] {
      auto g = y.mutable_grad();
      std::size_t offset = 0;
      for (const Tensor& p : inputs) {
        accumulate_grad(p, g.subspan(offset, p.numel()));
        offset += p.numel();
      }
    });
  }
  return y;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank(x, 2, "slice_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (count == 0 || begin + count > n) {
    throw DimensionError(fmt::format("slice_cols: [{}, {}) outside {}", begin, begin + count, shape_str(x.shape())));
  }
  std::vector<double> out(m * count);
  const double* xv = x.data().data();
  for (std::size_t i = 0; i < m; ++i) std::copy_n(xv + i * n + begin, count, out.data() + i * count);
  Tensor y({m, count}, std::move(out));
  if (needs_grad({&x})) {
    record_op(y, [x, y, m, n, begin, count] {
      const double* g = y.mutable_grad().data();
      std::vector<double> dx(m * n, 0.0);
      for (std::size_t i = 0; i < m; ++i) std::copy_n(g + i * count, count, dx.data() + i * n + begin);
      accumulate_grad(x, dx);
    });
  }
  return y;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  const std::size_t rows = rows_of(x), width = row_width(x);
  if (count == 0 || begin + count > rows) {
    throw DimensionError(fmt::format("slice_rows: [{}, {}) outside {}", begin, begin + count, shape_str(x.shape())));
  }
  auto xv = x.data();
  std::vector<double> out(xv.begin() + begin * width, xv.begin() + (begin + count) * width);
  Shape shape = x.shape();
  shape[0] = count;
  Tensor y(std::move(shape), std::move(out));
  if (needs_grad({&x})) {
    record_op(y, [x, y, begin, width] {
      auto g = y.mutable_grad();
      std::vector<double> dx(x.numel(), 0.0);
      std::copy(g.begin(), g.end(), dx.begin() + begin * width);
      accumulate_grad(x, dx);
    });
  }
  return y;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError(fmt::format("reshape: {} to {}", shape_str(x.shape()), shape_str(shape)));
  }
  Tensor y(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  if (needs_grad({&x})) {
    record_op(y, [x, y] { accumulate_grad(x, y.mutable_grad()); });
  }
  return y;
}

Tensor sum(const Tensor& x) {
  Tensor y = Tensor::scalar(kernels::total(x.data().data(), x.numel()));
  if (needs_grad({&x})) {
    record_op(y, [x, y] {
      std::vector<double> dx(x.numel(), y.mutable_grad()[0]);
      accumulate_grad(x, dx);
    });
  }
  return y;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

}  // namespace recog
