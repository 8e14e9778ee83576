#include "grt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace grt {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// C[m,n] += A[m,k] * B[k,n], row-major. The k-loop order is fixed per output
// row, so a row's result depends only on that row of A and on B.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m,
              std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

[[noreturn]] void dim_error(const std::string& op, const Shape& a,
                            const Shape& b) {
  throw std::invalid_argument(op + ": incompatible shapes " +
                              shape_to_string(a) + " and " +
                              shape_to_string(b));
}

void require(bool cond, const std::string& message) {
  if (!cond) throw std::invalid_argument(message);
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

const Shape& Tensor::shape() const { return tape_->shape(id_); }
std::size_t Tensor::size() const { return tape_->values(id_).size(); }
std::span<const double> Tensor::values() const { return tape_->values(id_); }
std::span<const double> Tensor::grad() const { return tape_->grad(id_); }

double Tensor::operator()(std::size_t i) const { return values()[i]; }

double Tensor::operator()(std::size_t i, std::size_t j) const {
  const Shape& s = shape();
  return values()[i * s[s.size() - 1] + j];
}

double Tensor::operator()(std::size_t i, std::size_t j, std::size_t k) const {
  const Shape& s = shape();
  return values()[(i * s[1] + j) * s[2] + k];
}

Tensor Tape::make_node(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != values.size()) {
    throw std::invalid_argument("tensor storage does not match shape " +
                                shape_to_string(shape));
  }
  Node node;
  node.shape = std::move(shape);
  node.storage = std::move(values);
  node.data = node.storage.data();
  node.n = node.storage.size();
  nodes_.push_back(std::move(node));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::leaf(Shape shape, std::vector<double> values) {
  return make_node(std::move(shape), std::move(values));
}

Tensor Tape::leaf_view(Shape shape, const double* data) {
  Node node;
  node.shape = std::move(shape);
  node.data = data;
  node.n = shape_numel(node.shape);
  nodes_.push_back(std::move(node));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::constant(Shape shape, double fill) {
  std::size_t n = shape_numel(shape);
  return make_node(std::move(shape), std::vector<double>(n, fill));
}

Tensor Tape::scalar(double value) { return leaf({1}, {value}); }

double* Tape::grad_buf(int id) {
  Node& node = nodes_[id];
  if (node.grad.size() != node.n) node.grad.assign(node.n, 0.0);
  return node.grad.data();
}

void Tape::record(int output, std::function<void()> backprop) {
  steps_.push_back({output, std::move(backprop)});
}

std::span<const double> Tape::values(int id) const {
  const Node& node = nodes_[id];
  return {node.data, node.n};
}

std::span<const double> Tape::grad(int id) const {
  const Node& node = nodes_[id];
  return {node.grad.data(), node.grad.size()};
}

const Shape& Tape::shape(int id) const { return nodes_[id].shape; }

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    dim_error("matmul", sa, sb);
  }
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  std::vector<double> out(m * n, 0.0);
  gemm_acc(data(a.id()), data(b.id()), out.data(), m, k, n);
  Tensor c = make_node({m, n}, std::move(out));
  record(c.id(), [this, ai = a.id(), bi = b.id(), ci = c.id(), m, k, n] {
    const double* dc = grad_buf(ci);
    gemm_nt_acc(dc, data(bi), grad_buf(ai), m, n, k);  // dA += dC * B^T
    gemm_tn_acc(data(ai), dc, grad_buf(bi), m, k, n);  // dB += A^T * dC
  });
  return c;
}

Tensor Tape::matmul_nt(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[1]) {
    dim_error("matmul_nt", sa, sb);
  }
  const std::size_t m = sa[0], k = sa[1], n = sb[0];
  std::vector<double> out(m * n, 0.0);
  gemm_nt_acc(data(a.id()), data(b.id()), out.data(), m, k, n);
  Tensor c = make_node({m, n}, std::move(out));
  record(c.id(), [this, ai = a.id(), bi = b.id(), ci = c.id(), m, k, n] {
    const double* dc = grad_buf(ci);
    gemm_acc(dc, data(bi), grad_buf(ai), m, n, k);     // dA += dC * B
    gemm_tn_acc(dc, data(ai), grad_buf(bi), m, n, k);  // dB += dC^T * A
  });
  return c;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) dim_error("add", a.shape(), b.shape());
  std::span<const double> va = a.values(), vb = b.values();
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  Tensor c = make_node(a.shape(), std::move(out));
  record(c.id(), [this, ai = a.id(), bi = b.id(), ci = c.id()] {
    const double* dc = grad_buf(ci);
    double* da = grad_buf(ai);
    double* db = grad_buf(bi);
    const std::size_t n = nodes_[ci].n;
    for (std::size_t i = 0; i < n; ++i) {
      da[i] += dc[i];
      db[i] += dc[i];
    }
  });
  return c;
}

Tensor Tape::scale(const Tensor& a, double factor) {
  std::span<const double> va = a.values();
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * factor;
  Tensor c = make_node(a.shape(), std::move(out));
  record(c.id(), [this, ai = a.id(), ci = c.id(), factor] {
    const double* dc = grad_buf(ci);
    double* da = grad_buf(ai);
    const std::size_t n = nodes_[ci].n;
    for (std::size_t i = 0; i < n; ++i) da[i] += dc[i] * factor;
  });
  return c;
}

Tensor Tape::add_row_bias(const Tensor& a, const Tensor& bias) {
  const Shape& sa = a.shape();
  const Shape& sb = bias.shape();
  if (sa.size() != 2 || sb.size() != 1 || sa[1] != sb[0]) {
    dim_error("add_row_bias", sa, sb);
  }
  const std::size_t m = sa[0], n = sa[1];
  std::span<const double> va = a.values(), vb = bias.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = va[i * n + j] + vb[j];
  Tensor c = make_node(sa, std::move(out));
  record(c.id(), [this, ai = a.id(), bi = bias.id(), ci = c.id(), m, n] {
    const double* dc = grad_buf(ci);
    double* da = grad_buf(ai);
    double* db = grad_buf(bi);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        da[i * n + j] += dc[i * n + j];
        db[j] += dc[i * n + j];
      }
  });
  return c;
}

Tensor Tape::add_scalar(const Tensor& a, const Tensor& s) {
  require(s.size() == 1, "add_scalar: s must be a [1] tensor");
  std::span<const double> va = a.values();
  const double sv = s.values()[0];
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + sv;
  Tensor c = make_node(a.shape(), std::move(out));
  record(c.id(), [this, ai = a.id(), si = s.id(), ci = c.id()] {
    const double* dc = grad_buf(ci);
    double* da = grad_buf(ai);
    double* ds = grad_buf(si);
    const std::size_t n = nodes_[ci].n;
    for (std::size_t i = 0; i < n; ++i) {
      da[i] += dc[i];
      ds[0] += dc[i];
    }
  });
  return c;
}

Tensor Tape::row_softmax(const Tensor& a) {
  return masked_row_softmax(a, {});
}

Tensor Tape::masked_row_softmax(const Tensor& a,
                                const std::vector<std::uint8_t>& allowed) {
  const Shape& sa = a.shape();
  require(sa.size() == 2, "row_softmax: expected a rank-2 tensor, got " +
                              shape_to_string(sa));
  const std::size_t m = sa[0], n = sa[1];
  require(allowed.empty() || allowed.size() == m * n,
          "masked_row_softmax: mask size does not match tensor");
  std::span<const double> va = a.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = va.data() + i * n;
    const std::uint8_t* arow = allowed.empty() ? nullptr : &allowed[i * n];
    double mx = -HUGE_VAL;
    for (std::size_t j = 0; j < n; ++j)
      if (!arow || arow[j]) mx = std::max(mx, row[j]);
    if (mx == -HUGE_VAL) continue;  // fully masked row stays zero
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (!arow || arow[j]) denom += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < n; ++j)
      if (!arow || arow[j]) out[i * n + j] = std::exp(row[j] - mx) / denom;
  }
  Tensor c = make_node(sa, std::move(out));
  record(c.id(), [this, ai = a.id(), ci = c.id(), m, n] {
    const double* dc = grad_buf(ci);
    const double* p = data(ci);
    double* da = grad_buf(ai);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += dc[i * n + j] * p[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        da[i * n + j] += p[i * n + j] * (dc[i * n + j] - dot);
    }
  });
  return c;
}

Tensor Tape::layer_norm(const Tensor& a, const Tensor& gain,
                        const Tensor& bias, double eps) {
  const Shape& sa = a.shape();
  require(sa.size() == 2 && sa[1] >= 1,
          "layer_norm: expected a rank-2 tensor with >=1 columns, got " +
              shape_to_string(sa));
  if (gain.shape() != Shape{sa[1]}) dim_error("layer_norm gain", sa, gain.shape());
  if (bias.shape() != Shape{sa[1]}) dim_error("layer_norm bias", sa, bias.shape());
  const std::size_t m = sa[0], n = sa[1];
  std::span<const double> va = a.values(), vg = gain.values(),
                          vb = bias.values();
  std::vector<double> out(m * n);
  std::vector<double> xhat(m * n);
  std::vector<double> inv_sigma(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = va.data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (row[j] - mean) * is;
      out[i * n + j] = vg[j] * xhat[i * n + j] + vb[j];
    }
  }
  Tensor c = make_node(sa, std::move(out));
  record(c.id(), [this, ai = a.id(), gi = gain.id(), bi = bias.id(),
                  ci = c.id(), m, n, xhat = std::move(xhat),
                  inv_sigma = std::move(inv_sigma)] {
    const double* dc = grad_buf(ci);
    std::span<const double> vg = values(gi);
    double* da = grad_buf(ai);
    double* dg = grad_buf(gi);
    double* db = grad_buf(bi);
    for (std::size_t i = 0; i < m; ++i) {
      double mean_gdy = 0.0, mean_gdy_xhat = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double gdy = vg[j] * dc[i * n + j];
        mean_gdy += gdy;
        mean_gdy_xhat += gdy * xhat[i * n + j];
      }
      mean_gdy /= static_cast<double>(n);
      mean_gdy_xhat /= static_cast<double>(n);
      for (std::size_t j = 0; j < n; ++j) {
        const double gdy = vg[j] * dc[i * n + j];
        da[i * n + j] += inv_sigma[i] * (gdy - mean_gdy -
                                         xhat[i * n + j] * mean_gdy_xhat);
        dg[j] += dc[i * n + j] * xhat[i * n + j];
        db[j] += dc[i * n + j];
      }
    }
  });
  return c;
}

Tensor Tape::gelu(const Tensor& a) {
  std::span<const double> va = a.values();
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * va[i] * (1.0 + std::erf(va[i] * kInvSqrt2));
  }
  Tensor c = make_node(a.shape(), std::move(out));
  record(c.id(), [this, ai = a.id(), ci = c.id()] {
    const double* dc = grad_buf(ci);
    std::span<const double> va = values(ai);
    double* da = grad_buf(ai);
    for (std::size_t i = 0; i < va.size(); ++i) {
      const double x = va[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      da[i] += dc[i] * (cdf + x * pdf);
    }
  });
  return c;
}

Tensor Tape::sigmoid(const Tensor& a) {
  std::span<const double> va = a.values();
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 1.0 / (1.0 + std::exp(-va[i]));
  }
  Tensor c = make_node(a.shape(), std::move(out));
  record(c.id(), [this, ai = a.id(), ci = c.id()] {
    const double* dc = grad_buf(ci);
    const double* s = data(ci);
    double* da = grad_buf(ai);
    const std::size_t n = nodes_[ci].n;
    for (std::size_t i = 0; i < n; ++i) da[i] += dc[i] * s[i] * (1.0 - s[i]);
  });
  return c;
}

Tensor Tape::concat_last_dim(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size() || sa.empty()) dim_error("concat_last_dim", sa, sb);
  for (std::size_t i = 0; i + 1 < sa.size(); ++i)
    if (sa[i] != sb[i]) dim_error("concat_last_dim", sa, sb);
  const std::size_t p = sa.back(), q = sb.back();
  std::size_t lead = 1;
  for (std::size_t i = 0; i + 1 < sa.size(); ++i) lead *= sa[i];
  Shape sc = sa;
  sc.back() = p + q;
  std::span<const double> va = a.values(), vb = b.values();
  std::vector<double> out(lead * (p + q));
  for (std::size_t r = 0; r < lead; ++r) {
    std::copy_n(va.data() + r * p, p, out.data() + r * (p + q));
    std::copy_n(vb.data() + r * q, q, out.data() + r * (p + q) + p);
  }
  Tensor c = make_node(std::move(sc), std::move(out));
  record(c.id(), [this, ai = a.id(), bi = b.id(), ci = c.id(), lead, p, q] {
    const double* dc = grad_buf(ci);
    double* da = grad_buf(ai);
    double* db = grad_buf(bi);
    for (std::size_t r = 0; r < lead; ++r) {
      for (std::size_t j = 0; j < p; ++j) da[r * p + j] += dc[r * (p + q) + j];
      for (std::size_t j = 0; j < q; ++j)
        db[r * q + j] += dc[r * (p + q) + p + j];
    }
  });
  return c;
}

Tensor Tape::reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size()) dim_error("reshape", a.shape(), shape);
  std::span<const double> va = a.values();
  Tensor c = make_node(std::move(shape), {va.begin(), va.end()});
  record(c.id(), [this, ai = a.id(), ci = c.id()] {
    const double* dc = grad_buf(ci);
    double* da = grad_buf(ai);
    const std::size_t n = nodes_[ci].n;
    for (std::size_t i = 0; i < n; ++i) da[i] += dc[i];
  });
  return c;
}

Tensor Tape::slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  const Shape& sa = a.shape();
  require(sa.size() == 2, "slice_rows: expected a rank-2 tensor");
  require(begin <= end && end <= sa[0], "slice_rows: range out of bounds");
  const std::size_t n = sa[1];
  std::span<const double> va = a.values();
  std::vector<double> out(va.begin() + begin * n, va.begin() + end * n);
  Tensor c = make_node({end - begin, n}, std::move(out));
  record(c.id(), [this, ai = a.id(), ci = c.id(), begin, n,
                  rows = end - begin] {
    const double* dc = grad_buf(ci);
    double* da = grad_buf(ai);
    for (std::size_t i = 0; i < rows * n; ++i) da[begin * n + i] += dc[i];
  });
  return c;
}

Tensor Tape::slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  const Shape& sa = a.shape();
  require(sa.size() == 2, "slice_cols: expected a rank-2 tensor");
  require(begin <= end && end <= sa[1], "slice_cols: range out of bounds");
  const std::size_t m = sa[0], n = sa[1], w = end - begin;
  std::span<const double> va = a.values();
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(va.data() + i * n + begin, w, out.data() + i * w);
  Tensor c = make_node({m, w}, std::move(out));
  record(c.id(), [this, ai = a.id(), ci = c.id(), begin, m, n, w] {
    const double* dc = grad_buf(ci);
    double* da = grad_buf(ai);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j)
        da[i * n + begin + j] += dc[i * w + j];
  });
  return c;
}

Tensor Tape::vstack(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "vstack: no tensors given");
  const std::size_t n = parts[0].shape().size() == 2 ? parts[0].shape()[1] : 0;
  std::size_t m = 0;
  for (const Tensor& t : parts) {
    const Shape& s = t.shape();
    if (s.size() != 2 || s[1] != n) dim_error("vstack", parts[0].shape(), s);
    m += s[0];
  }
  std::vector<double> out;
  out.reserve(m * n);
  for (const Tensor& t : parts) {
    std::span<const double> v = t.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  std::vector<int> ids;
  std::vector<std::size_t> row_counts;
  for (const Tensor& t : parts) {
    ids.push_back(t.id());
    row_counts.push_back(t.shape()[0]);
  }
  Tensor c = make_node({m, n}, std::move(out));
  record(c.id(), [this, ids = std::move(ids), row_counts = std::move(row_counts),
                  ci = c.id(), n] {
    const double* dc = grad_buf(ci);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      double* dp = grad_buf(ids[p]);
      const std::size_t count = row_counts[p] * n;
      for (std::size_t i = 0; i < count; ++i) dp[i] += dc[offset + i];
      offset += count;
    }
  });
  return c;
}

Tensor Tape::gather_rows(const Tensor& table,
                         const std::vector<std::size_t>& rows) {
  const Shape& st = table.shape();
  require(st.size() == 2, "gather_rows: expected a rank-2 table");
  for (std::size_t r : rows) {
    require(r < st[0], "gather_rows: index " + std::to_string(r) +
                           " out of range for table " + shape_to_string(st));
  }
  const std::size_t n = st[1];
  std::span<const double> vt = table.values();
  std::vector<double> out(rows.size() * n);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(vt.data() + rows[i] * n, n, out.data() + i * n);
  Tensor c = make_node({rows.size(), n}, std::move(out));
  record(c.id(), [this, ti = table.id(), ci = c.id(), rows, n] {
    const double* dc = grad_buf(ci);
    double* dt = grad_buf(ti);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < n; ++j)
        dt[rows[i] * n + j] += dc[i * n + j];
  });
  return c;
}

Tensor Tape::tile_rows(const Tensor& x, std::size_t copies) {
  const Shape& sx = x.shape();
  require(sx.size() == 2, "tile_rows: expected a rank-2 tensor");
  const std::size_t m = sx[0], d = sx[1];
  std::span<const double> vx = x.values();
  std::vector<double> out(copies * m * d);
  for (std::size_t i = 0; i < copies; ++i)
    std::copy_n(vx.data(), m * d, out.data() + i * m * d);
  Tensor c = make_node({copies, m, d}, std::move(out));
  record(c.id(), [this, xi = x.id(), ci = c.id(), copies, m, d] {
    const double* dc = grad_buf(ci);
    double* dx = grad_buf(xi);
    for (std::size_t i = 0; i < copies; ++i)
      for (std::size_t r = 0; r < m * d; ++r) dx[r] += dc[i * m * d + r];
  });
  return c;
}

Tensor Tape::pairwise_dot(const Tensor& q, const Tensor& k3) {
  const Shape& sq = q.shape();
  const Shape& sk = k3.shape();
  if (sq.size() != 2 || sk.size() != 3 || sq[0] != sk[0] || sq[1] != sk[2]) {
    dim_error("pairwise_dot", sq, sk);
  }
  const std::size_t n = sq[0], m = sk[1], d = sq[1];
  std::span<const double> vq = q.values(), vk = k3.values();
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* qi = vq.data() + i * d;
    for (std::size_t j = 0; j < m; ++j) {
      const double* kij = vk.data() + (i * m + j) * d;
      double s = 0.0;
      for (std::size_t t = 0; t < d; ++t) s += qi[t] * kij[t];
      out[i * m + j] = s;
    }
  }
  Tensor c = make_node({n, m}, std::move(out));
  record(c.id(), [this, qi_ = q.id(), ki_ = k3.id(), ci = c.id(), n, m, d] {
    const double* dc = grad_buf(ci);
    std::span<const double> vq = values(qi_), vk = values(ki_);
    double* dq = grad_buf(qi_);
    double* dk = grad_buf(ki_);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double g = dc[i * m + j];
        const double* kij = vk.data() + (i * m + j) * d;
        const double* qi = vq.data() + i * d;
        for (std::size_t t = 0; t < d; ++t) {
          dq[i * d + t] += g * kij[t];
          dk[(i * m + j) * d + t] += g * qi[t];
        }
      }
  });
  return c;
}

Tensor Tape::rows_weighted_sum(const Tensor& w, const Tensor& v3) {
  const Shape& sw = w.shape();
  const Shape& sv = v3.shape();
  if (sw.size() != 2 || sv.size() != 3 || sw[0] != sv[0] || sw[1] != sv[1]) {
    dim_error("rows_weighted_sum", sw, sv);
  }
  const std::size_t n = sw[0], m = sw[1], d = sv[2];
  std::span<const double> vw = w.values(), vv = v3.values();
  std::vector<double> out(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double wij = vw[i * m + j];
      const double* vij = vv.data() + (i * m + j) * d;
      for (std::size_t t = 0; t < d; ++t) out[i * d + t] += wij * vij[t];
    }
  Tensor c = make_node({n, d}, std::move(out));
  record(c.id(), [this, wi = w.id(), vi = v3.id(), ci = c.id(), n, m, d] {
    const double* dc = grad_buf(ci);
    std::span<const double> vw = values(wi), vv = values(vi);
    double* dw = grad_buf(wi);
    double* dv = grad_buf(vi);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double* vij = vv.data() + (i * m + j) * d;
        double s = 0.0;
        for (std::size_t t = 0; t < d; ++t) {
          s += dc[i * d + t] * vij[t];
          dv[(i * m + j) * d + t] += vw[i * m + j] * dc[i * d + t];
        }
        dw[i * m + j] += s;
      }
  });
  return c;
}

Tensor Tape::scale_rows(const Tensor& a, const std::vector<double>& factors) {
  const Shape& sa = a.shape();
  require(sa.size() == 2, "scale_rows: expected a rank-2 tensor");
  require(factors.size() == sa[0], "scale_rows: factor count != row count");
  const std::size_t m = sa[0], n = sa[1];
  std::span<const double> va = a.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = va[i * n + j] * factors[i];
  Tensor c = make_node(sa, std::move(out));
  record(c.id(), [this, ai = a.id(), ci = c.id(), factors, m, n] {
    const double* dc = grad_buf(ci);
    double* da = grad_buf(ai);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) da[i * n + j] += dc[i * n + j] * factors[i];
  });
  return c;
}

Tensor Tape::sum(const Tensor& a) {
  std::span<const double> va = a.values();
  double s = 0.0;
  for (double v : va) s += v;
  Tensor c = make_node({1}, {s});
  record(c.id(), [this, ai = a.id(), ci = c.id()] {
    const double g = grad_buf(ci)[0];
    double* da = grad_buf(ai);
    const std::size_t n = nodes_[ai].n;
    for (std::size_t i = 0; i < n; ++i) da[i] += g;
  });
  return c;
}

Tensor Tape::binary_cross_entropy(const Tensor& p,
                                  std::span<const double> targets,
                                  double clip) {
  if (targets.size() != p.size()) {
    dim_error("binary_cross_entropy", p.shape(),
              {targets.size()});
  }
  std::span<const double> vp = p.values();
  std::vector<double> out(vp.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double ph = std::clamp(vp[i], clip, 1.0 - clip);
    out[i] = -(targets[i] * std::log(ph) +
               (1.0 - targets[i]) * std::log(1.0 - ph));
  }
  Tensor c = make_node(p.shape(), std::move(out));
  std::vector<double> tcopy(targets.begin(), targets.end());
  record(c.id(), [this, pi = p.id(), ci = c.id(), clip,
                  tcopy = std::move(tcopy)] {
    const double* dc = grad_buf(ci);
    std::span<const double> vp = values(pi);
    double* dp = grad_buf(pi);
    for (std::size_t i = 0; i < vp.size(); ++i) {
      if (vp[i] <= clip || vp[i] >= 1.0 - clip) continue;  // clamped flat
      dp[i] += dc[i] * (vp[i] - tcopy[i]) / (vp[i] * (1.0 - vp[i]));
    }
  });
  return c;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.valid() || loss.tape() != this) {
    throw std::invalid_argument("backward: loss does not belong to this tape");
  }
  if (loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_to_string(loss.shape()));
  }
  for (Node& node : nodes_) {
    if (!node.grad.empty()) std::fill(node.grad.begin(), node.grad.end(), 0.0);
  }
  grad_buf(loss.id())[0] = 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
    it->backprop();
  }
}

}  // namespace grt
