#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "latentguard/mat.hpp"

namespace lg {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // allocated by backward(), same size as values
  bool requires_grad = false;
  bool leaf = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into the parents' grad buffers.
  std::function<void(Node&)> backward_fn;
};

}  // namespace detail

// Reverse-mode autodiff tensor over 64-bit floats. Rank 1 and 2 only, which is
// everything the fixed guard architecture needs. Every operation validates its
// operand shapes and checks its output for NaN/Inf (a hard error).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor from_mat(const Mat<double>& m, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t numel() const { return std::int64_t(node_->values.size()); }
  std::int64_t rank() const { return std::int64_t(node_->shape.size()); }
  std::int64_t rows() const;
  std::int64_t cols() const;
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }

  const std::vector<double>& values() const { return node_->values; }
  double scalar() const;  // rank-agnostic single-element read

  // Gradient of the last backward() pass. Throws if none was computed.
  const std::vector<double>& grad() const;
  bool has_grad() const { return !node_->grad.empty(); }

  // In-place access for optimizer updates and finite-difference probes.
  // Restricted to leaves: interior node values are owned by the graph.
  std::vector<double>& leaf_values();

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // (m,k) x (k,n) -> (m,n)
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // (m,k) x (n,k)^T -> (m,n)
Tensor add(const Tensor& a, const Tensor& b);        // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor add_rowvec(const Tensor& m, const Tensor& v);  // broadcast v over rows
Tensor scale(const Tensor& a, double s);
Tensor softmax_rows(const Tensor& a);
Tensor l2_normalize(const Tensor& a);             // x / max(||x||_2, 1e-12)
Tensor mean_rows(const Tensor& a);                // (m,n) -> (n)
Tensor mean_all(const Tensor& a);                 // -> scalar (1)
Tensor sum_all(const Tensor& a);                  // -> scalar (1)
Tensor dot(const Tensor& a, const Tensor& b);     // rank-1, same length -> (1)
Tensor logsumexp(const Tensor& a);                // rank-1 -> (1)
Tensor concat_cols(std::span<const Tensor> parts);     // (m,c_i) -> (m, sum c_i)
Tensor concat_scalars(std::span<const Tensor> parts);  // k scalars -> (k)

// Runs reverse-mode accumulation from a scalar loss. Gradients are zeroed and
// recomputed from scratch on every call, so repeated calls are idempotent.
void backward(const Tensor& loss);

}  // namespace lg
