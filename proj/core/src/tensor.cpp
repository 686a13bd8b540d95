#include "latentguard/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace lg {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ")";
  return os.str();
}

namespace {

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

void validate_shape(const Shape& s) {
  if (s.empty() || s.size() > 2)
    throw std::invalid_argument("tensor rank must be 1 or 2, got shape " + shape_str(s));
  for (auto d : s)
    if (d <= 0) throw std::invalid_argument("tensor extents must be positive, got shape " + shape_str(s));
}

void check_finite(const std::vector<double>& v, const char* where) {
  for (double x : v)
    if (!std::isfinite(x)) throw std::runtime_error(std::string("non-finite value produced by ") + where);
}

using NodePtr = std::shared_ptr<detail::Node>;

NodePtr make_node(Shape shape, std::vector<double> values, std::vector<NodePtr> parents,
                  std::function<void(detail::Node&)> backward_fn, const char* where) {
  check_finite(values, where);
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return n;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw std::invalid_argument(std::string(op) + " expects a rank-2 tensor, got shape " + shape_str(t.shape()));
}

void require_rank1(const Tensor& t, const char* op) {
  if (t.rank() != 1)
    throw std::invalid_argument(std::string(op) + " expects a rank-1 tensor, got shape " + shape_str(t.shape()));
}

// grad buffer of a parent, allocated on first touch within a backward pass
std::vector<double>& pgrad(detail::Node& p) {
  if (p.grad.empty()) p.grad.assign(p.values.size(), 0.0);
  return p.grad;
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  validate_shape(shape);
  std::vector<double> data(std::size_t(shape_numel(shape)), value);
  return from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  validate_shape(shape);
  if (std::int64_t(data.size()) != shape_numel(shape))
    throw std::invalid_argument("data size " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  check_finite(data, "tensor construction");
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->values = std::move(data);
  n->requires_grad = requires_grad;
  n->leaf = true;
  return Tensor(std::move(n));
}

Tensor Tensor::from_mat(const Mat<double>& m, bool requires_grad) {
  return from_data({m.rows, m.cols}, m.a, requires_grad);
}

std::int64_t Tensor::rows() const {
  if (rank() != 2) throw std::invalid_argument("rows() on rank-" + std::to_string(rank()) + " tensor");
  return node_->shape[0];
}

std::int64_t Tensor::cols() const {
  if (rank() != 2) throw std::invalid_argument("cols() on rank-" + std::to_string(rank()) + " tensor");
  return node_->shape[1];
}

double Tensor::scalar() const {
  if (numel() != 1) throw std::invalid_argument("scalar() on tensor of shape " + shape_str(shape()));
  return node_->values[0];
}

const std::vector<double>& Tensor::grad() const {
  if (node_->grad.empty()) throw std::runtime_error("no gradient computed for this tensor");
  return node_->grad;
}

std::vector<double>& Tensor::leaf_values() {
  if (!node_->leaf) throw std::invalid_argument("in-place value access is restricted to leaf tensors");
  return node_->values;
}

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::int64_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2)
    throw std::invalid_argument("matmul dimension mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(std::size_t(m * n), 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = av.data() + i * k;
    double* orow = out.data() + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const double aip = arow[p];
      const double* brow = bv.data() + p * n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  auto an = a.node();
  auto bn = b.node();
  auto node = make_node(
      {m, n}, std::move(out), {an, bn},
      [an = an.get(), bn = bn.get(), m, k, n](detail::Node& self) {
        const auto& g = self.grad;
        if (an->requires_grad) {
          auto& ga = pgrad(*an);  // dA += G * B^T
          for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t p = 0; p < k; ++p) {
              double acc = 0.0;
              const double* grow = g.data() + i * n;
              const double* brow = bn->values.data() + p * n;
              for (std::int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              ga[std::size_t(i * k + p)] += acc;
            }
        }
        if (bn->requires_grad) {
          auto& gb = pgrad(*bn);  // dB += A^T * G
          for (std::int64_t i = 0; i < m; ++i) {
            const double* arow = an->values.data() + i * k;
            const double* grow = g.data() + i * n;
            for (std::int64_t p = 0; p < k; ++p) {
              const double aip = arow[p];
              double* brow = gb.data() + p * n;
              for (std::int64_t j = 0; j < n; ++j) brow[j] += aip * grow[j];
            }
          }
        }
      },
      "matmul");
  return Tensor(std::move(node));
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const std::int64_t m = a.rows(), k = a.cols(), n = b.rows();
  if (k != b.cols())
    throw std::invalid_argument("matmul_nt dimension mismatch: " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()) + "^T");
  std::vector<double> out(std::size_t(m * n), 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      const double* arow = av.data() + i * k;
      const double* brow = bv.data() + j * k;
      for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      out[std::size_t(i * n + j)] = acc;
    }
  auto an = a.node();
  auto bn = b.node();
  auto node = make_node(
      {m, n}, std::move(out), {an, bn},
      [an = an.get(), bn = bn.get(), m, k, n](detail::Node& self) {
        const auto& g = self.grad;
        if (an->requires_grad) {
          auto& ga = pgrad(*an);  // dA += G * B
          for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) {
              const double gij = g[std::size_t(i * n + j)];
              const double* brow = bn->values.data() + j * k;
              double* arow = ga.data() + i * k;
              for (std::int64_t p = 0; p < k; ++p) arow[p] += gij * brow[p];
            }
        }
        if (bn->requires_grad) {
          auto& gb = pgrad(*bn);  // dB += G^T * A
          for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) {
              const double gij = g[std::size_t(i * n + j)];
              const double* arow = an->values.data() + i * k;
              double* brow = gb.data() + j * k;
              for (std::int64_t p = 0; p < k; ++p) brow[p] += gij * arow[p];
            }
        }
      },
      "matmul_nt");
  return Tensor(std::move(node));
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  auto an = a.node();
  auto bn = b.node();
  auto node = make_node(
      a.shape(), std::move(out), {an, bn},
      [an = an.get(), bn = bn.get()](detail::Node& self) {
        if (an->requires_grad) {
          auto& ga = pgrad(*an);
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
        }
        if (bn->requires_grad) {
          auto& gb = pgrad(*bn);
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i];
        }
      },
      "add");
  return Tensor(std::move(node));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("sub shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  auto an = a.node();
  auto bn = b.node();
  auto node = make_node(
      a.shape(), std::move(out), {an, bn},
      [an = an.get(), bn = bn.get()](detail::Node& self) {
        if (an->requires_grad) {
          auto& ga = pgrad(*an);
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
        }
        if (bn->requires_grad) {
          auto& gb = pgrad(*bn);
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
        }
      },
      "sub");
  return Tensor(std::move(node));
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  require_rank2(m, "add_rowvec");
  require_rank1(v, "add_rowvec");
  const std::int64_t r = m.rows(), c = m.cols();
  if (v.numel() != c)
    throw std::invalid_argument("add_rowvec width mismatch: " + shape_str(m.shape()) + " vs " + shape_str(v.shape()));
  std::vector<double> out(m.values());
  const auto& vv = v.values();
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j) out[std::size_t(i * c + j)] += vv[std::size_t(j)];
  auto mn = m.node();
  auto vn = v.node();
  auto node = make_node(
      {r, c}, std::move(out), {mn, vn},
      [mn = mn.get(), vn = vn.get(), r, c](detail::Node& self) {
        if (mn->requires_grad) {
          auto& gm = pgrad(*mn);
          for (std::size_t i = 0; i < gm.size(); ++i) gm[i] += self.grad[i];
        }
        if (vn->requires_grad) {
          auto& gv = pgrad(*vn);
          for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < c; ++j) gv[std::size_t(j)] += self.grad[std::size_t(i * c + j)];
        }
      },
      "add_rowvec");
  return Tensor(std::move(node));
}

Tensor scale(const Tensor& a, double s) {
  if (!std::isfinite(s)) throw std::invalid_argument("scale factor must be finite");
  std::vector<double> out(a.values());
  for (auto& x : out) x *= s;
  auto an = a.node();
  auto node = make_node(
      a.shape(), std::move(out), {an},
      [an = an.get(), s](detail::Node& self) {
        auto& ga = pgrad(*an);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * self.grad[i];
      },
      "scale");
  return Tensor(std::move(node));
}

Tensor softmax_rows(const Tensor& a) {
  require_rank2(a, "softmax_rows");
  const std::int64_t r = a.rows(), c = a.cols();
  std::vector<double> out(a.values());
  for (std::int64_t i = 0; i < r; ++i) {
    double* row = out.data() + i * c;
    double mx = row[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::int64_t j = 0; j < c; ++j) row[j] /= sum;
  }
  auto an = a.node();
  auto node = make_node(
      {r, c}, std::move(out), {an},
      [an = an.get(), r, c](detail::Node& self) {
        auto& ga = pgrad(*an);
        for (std::int64_t i = 0; i < r; ++i) {
          const double* y = self.values.data() + i * c;
          const double* g = self.grad.data() + i * c;
          double dotgy = 0.0;
          for (std::int64_t j = 0; j < c; ++j) dotgy += g[j] * y[j];
          double* out = ga.data() + i * c;
          for (std::int64_t j = 0; j < c; ++j) out[j] += y[j] * (g[j] - dotgy);
        }
      },
      "softmax_rows");
  return Tensor(std::move(node));
}

Tensor l2_normalize(const Tensor& a) {
  constexpr double kEps = 1e-12;
  double sq = 0.0;
  for (double x : a.values()) sq += x * x;
  const double norm = std::sqrt(sq);
  const double denom = std::max(norm, kEps);
  std::vector<double> out(a.values());
  for (auto& x : out) x /= denom;
  auto an = a.node();
  auto node = make_node(
      a.shape(), std::move(out), {an},
      [an = an.get(), norm, denom](detail::Node& self) {
        auto& ga = pgrad(*an);
        if (norm > kEps) {
          // d(x/||x||) = (g - y (y.g)) / ||x||
          double gy = 0.0;
          for (std::size_t i = 0; i < ga.size(); ++i) gy += self.grad[i] * self.values[i];
          for (std::size_t i = 0; i < ga.size(); ++i)
            ga[i] += (self.grad[i] - self.values[i] * gy) / norm;
        } else {
          // clamped region: y = x / eps is linear
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] / denom;
        }
      },
      "l2_normalize");
  return Tensor(std::move(node));
}

Tensor mean_rows(const Tensor& a) {
  require_rank2(a, "mean_rows");
  const std::int64_t r = a.rows(), c = a.cols();
  std::vector<double> out(std::size_t(c), 0.0);
  const auto& av = a.values();
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j) out[std::size_t(j)] += av[std::size_t(i * c + j)];
  for (auto& x : out) x /= double(r);
  auto an = a.node();
  auto node = make_node(
      {c}, std::move(out), {an},
      [an = an.get(), r, c](detail::Node& self) {
        auto& ga = pgrad(*an);
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < c; ++j)
            ga[std::size_t(i * c + j)] += self.grad[std::size_t(j)] / double(r);
      },
      "mean_rows");
  return Tensor(std::move(node));
}

Tensor mean_all(const Tensor& a) {
  const double n = double(a.numel());
  double acc = 0.0;
  for (double x : a.values()) acc += x;
  auto an = a.node();
  auto node = make_node(
      {1}, {acc / n}, {an},
      [an = an.get(), n](detail::Node& self) {
        auto& ga = pgrad(*an);
        const double g = self.grad[0] / n;
        for (auto& x : ga) x += g;
      },
      "mean_all");
  return Tensor(std::move(node));
}

Tensor sum_all(const Tensor& a) {
  double acc = 0.0;
  for (double x : a.values()) acc += x;
  auto an = a.node();
  auto node = make_node(
      {1}, {acc}, {an},
      [an = an.get()](detail::Node& self) {
        auto& ga = pgrad(*an);
        for (auto& x : ga) x += self.grad[0];
      },
      "sum_all");
  return Tensor(std::move(node));
}

Tensor dot(const Tensor& a, const Tensor& b) {
  require_rank1(a, "dot");
  require_rank1(b, "dot");
  if (a.numel() != b.numel())
    throw std::invalid_argument("dot length mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double acc = 0.0;
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
  auto an = a.node();
  auto bn = b.node();
  auto node = make_node(
      {1}, {acc}, {an, bn},
      [an = an.get(), bn = bn.get()](detail::Node& self) {
        const double g = self.grad[0];
        if (an->requires_grad) {
          auto& ga = pgrad(*an);
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * bn->values[i];
        }
        if (bn->requires_grad) {
          auto& gb = pgrad(*bn);
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * an->values[i];
        }
      },
      "dot");
  return Tensor(std::move(node));
}

Tensor logsumexp(const Tensor& a) {
  require_rank1(a, "logsumexp");
  const auto& av = a.values();
  double mx = av[0];
  for (double x : av) mx = std::max(mx, x);
  double sum = 0.0;
  for (double x : av) sum += std::exp(x - mx);
  const double lse = mx + std::log(sum);
  auto an = a.node();
  auto node = make_node(
      {1}, {lse}, {an},
      [an = an.get(), mx, sum](detail::Node& self) {
        auto& ga = pgrad(*an);
        const double g = self.grad[0];
        for (std::size_t i = 0; i < ga.size(); ++i)
          ga[i] += g * std::exp(an->values[i] - mx) / sum;
      },
      "logsumexp");
  return Tensor(std::move(node));
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols needs at least one part");
  const std::int64_t r = parts[0].rows();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.rows() != r)
      throw std::invalid_argument("concat_cols row mismatch: " + shape_str(parts[0].shape()) + " vs " +
                                  shape_str(p.shape()));
    total += p.cols();
  }
  std::vector<double> out(std::size_t(r * total));
  std::vector<NodePtr> parents;
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const auto& pv = p.values();
    const std::int64_t c = p.cols();
    for (std::int64_t i = 0; i < r; ++i)
      std::copy(pv.begin() + i * c, pv.begin() + (i + 1) * c, out.begin() + i * total + off);
    off += c;
    parents.push_back(p.node());
  }
  auto node = make_node(
      {r, total}, std::move(out), std::move(parents),
      [offsets, r, total](detail::Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
          auto& p = *self.parents[k];
          if (!p.requires_grad) continue;
          auto& gp = pgrad(p);
          const std::int64_t c = p.shape[1];
          for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < c; ++j)
              gp[std::size_t(i * c + j)] += self.grad[std::size_t(i * total + offsets[k] + j)];
        }
      },
      "concat_cols");
  return Tensor(std::move(node));
}

Tensor concat_scalars(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_scalars needs at least one part");
  std::vector<double> out;
  std::vector<NodePtr> parents;
  out.reserve(parts.size());
  for (const auto& p : parts) {
    if (p.numel() != 1)
      throw std::invalid_argument("concat_scalars parts must be scalars, got shape " + shape_str(p.shape()));
    out.push_back(p.values()[0]);
    parents.push_back(p.node());
  }
  auto node = make_node(
      {std::int64_t(parts.size())}, std::move(out), std::move(parents),
      [](detail::Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
          auto& p = *self.parents[k];
          if (!p.requires_grad) continue;
          pgrad(p)[0] += self.grad[k];
        }
      },
      "concat_scalars");
  return Tensor(std::move(node));
}

// ---- backward --------------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw std::invalid_argument("backward expects a defined scalar loss");
  if (!loss.requires_grad())
    throw std::invalid_argument("backward on a graph with no trainable leaves");

  // Deterministic topological order: iterative DFS, parents visited in
  // construction order, node emitted after all parents.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  struct Frame {
    detail::Node* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get(), 0});
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      detail::Node* p = f.node->parents[f.next_parent++].get();
      if (!visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  // Fresh gradients every pass: repeated calls give bit-identical results.
  for (auto* n : order)
    if (n->requires_grad) n->grad.assign(n->values.size(), 0.0);
  loss.node()->grad[0] = 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn && n->requires_grad) n->backward_fn(*n);
  }

  for (auto* n : order)
    if (n->requires_grad) check_finite(n->grad, "backward");
}

}  // namespace lg
