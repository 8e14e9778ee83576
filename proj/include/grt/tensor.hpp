#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace grt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

class Tape;

// Handle to a node on a Tape. Values are immutable once the node is
// created; gradients become readable after Tape::backward.
class Tensor {
 public:
  Tensor() = default;

  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }

  const Shape& shape() const;
  std::size_t size() const;
  std::span<const double> values() const;
  std::span<const double> grad() const;

  double operator()(std::size_t i) const;
  double operator()(std::size_t i, std::size_t j) const;
  double operator()(std::size_t i, std::size_t j, std::size_t k) const;

 private:
  friend class Tape;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Records a forward computation at operation granularity and replays the
// backward rules in reverse order. Single-threaded; distinct tapes are
// independent.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves. leaf_view keeps a non-owning pointer; the storage must outlive
  // the tape.
  Tensor leaf(Shape shape, std::vector<double> values);
  Tensor leaf_view(Shape shape, const double* data);
  Tensor constant(Shape shape, double fill);
  Tensor scalar(double value);

  // a[m,k] * b[k,n] -> [m,n]
  Tensor matmul(const Tensor& a, const Tensor& b);
  // a[m,k] * b[n,k]^T -> [m,n]
  Tensor matmul_nt(const Tensor& a, const Tensor& b);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double factor);
  // a[m,n] + bias[n] broadcast over rows
  Tensor add_row_bias(const Tensor& a, const Tensor& bias);
  // a + s broadcast everywhere; s is a [1] tensor
  Tensor add_scalar(const Tensor& a, const Tensor& s);
  // Row-max-subtracted softmax over the last dim of a [m,n] tensor.
  Tensor row_softmax(const Tensor& a);
  // allowed is m*n row-major; 1 = position participates. Rows with no
  // allowed position come out all-zero.
  Tensor masked_row_softmax(const Tensor& a,
                            const std::vector<std::uint8_t>& allowed);
  Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                    double eps = 1e-5);
  Tensor gelu(const Tensor& a);
  Tensor sigmoid(const Tensor& a);
  // Concatenate along the last dimension; leading dims must agree.
  Tensor concat_last_dim(const Tensor& a, const Tensor& b);
  Tensor reshape(const Tensor& a, Shape shape);
  Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
  Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
  // Stack rank-2 tensors with equal column counts.
  Tensor vstack(const std::vector<Tensor>& parts);
  Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& rows);
  // x[m,d] -> [copies,m,d], out[i] = x
  Tensor tile_rows(const Tensor& x, std::size_t copies);
  // q[n,d], k3[n,m,d] -> [n,m], out[i][j] = q[i] . k3[i][j]
  Tensor pairwise_dot(const Tensor& q, const Tensor& k3);
  // w[n,m], v3[n,m,d] -> [n,d], out[i] = sum_j w[i][j] v3[i][j]
  Tensor rows_weighted_sum(const Tensor& w, const Tensor& v3);
  // Multiply each row of a [m,n] tensor by a constant per-row factor.
  Tensor scale_rows(const Tensor& a, const std::vector<double>& factors);
  Tensor sum(const Tensor& a);
  // Elementwise binary cross-entropy against constant targets; predictions
  // are clamped to [clip, 1-clip] before the logs.
  Tensor binary_cross_entropy(const Tensor& p, std::span<const double> targets,
                              double clip = 1e-7);

  // Populates gradients for every node reachable from loss. loss must be
  // scalar.
  void backward(const Tensor& loss);

  std::span<const double> values(int id) const;
  std::span<const double> grad(int id) const;
  const Shape& shape(int id) const;
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t op_count() const { return steps_.size(); }

 private:
  struct Node {
    Shape shape;
    std::vector<double> storage;  // empty for views
    const double* data = nullptr;
    std::size_t n = 0;
    std::vector<double> grad;
  };
  struct Step {
    int output;
    std::function<void()> backprop;
  };

  Tensor make_node(Shape shape, std::vector<double> values);
  double* grad_buf(int id);
  const double* data(int id) const { return nodes_[id].data; }
  void record(int output, std::function<void()> backprop);

  std::vector<Node> nodes_;
  std::vector<Step> steps_;
};

}  // namespace grt
