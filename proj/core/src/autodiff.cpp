#include "gnndiff/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "gnndiff/error.hpp"
#include "gnndiff/kernels.hpp"

namespace gnndiff::ad {

void Node::accumulate_grad(Tensor g) {
  if (grad.empty()) {
    if (g.shape() != value.shape())
      throw DimensionError("gradient " + shape_str(g.shape()) + " for value " + shape_str(value.shape()));
    grad = std::move(g);
  } else {
    grad.add_inplace(g);
  }
}

namespace {

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p && p->requires_grad; });
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return n;
}

bool wants(const Var& p) { return p && p->requires_grad; }

void require_rank(const Var& v, std::size_t rank, const char* op, const char* operand) {
  if (!v) throw ContractError(std::string(op) + ": operand '" + operand + "' is null");
  if (v->value.rank() != rank)
    throw DimensionError(std::string(op) + ": operand '" + operand + "' has shape " + shape_str(v->value.shape()) +
                         ", expected rank " + std::to_string(rank));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a->value.shape() != b->value.shape())
    throw DimensionError(std::string(op) + ": operand 'b' shape " + shape_str(b->value.shape()) +
                         " does not match operand 'a' shape " + shape_str(a->value.shape()));
}

Tensor scalar(float v) { return Tensor({1}, std::vector<float>{v}); }

}  // namespace

Var parameter(Tensor value, std::string name) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->name = std::move(name);
  return n;
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

void backward(const Var& loss) {
  if (!loss || loss->value.numel() != 1)
    throw ContractError("backward requires a single-element loss, got shape " +
                        (loss ? shape_str(loss->value.shape()) : std::string("null")));
  if (!loss->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.get(), 0}};
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss->accumulate_grad(Tensor(loss->value.shape(), 1.0f));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) {
      n->backward_fn(*n);
      if (!n->is_leaf()) n->grad = Tensor{};
    }
  }
}

std::vector<Tensor> gradients(const Var& loss, std::span<const Var> params) {
  zero_grad(params);
  backward(loss);
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p->grad.empty() ? Tensor::zeros(p->value.shape()) : p->grad);
  return out;
}

void zero_grad(std::span<const Var> params) {
  for (const auto& p : params) p->grad = Tensor{};
}

// ---- linear algebra --------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul", "a");
  require_rank(b, 2, "matmul", "b");
  const std::size_t m = a->value.rows(), k = a->value.cols(), n = b->value.cols();
  if (b->value.rows() != k)
    throw DimensionError("matmul: operand 'b' shape " + shape_str(b->value.shape()) + " incompatible with 'a' shape " +
                         shape_str(a->value.shape()));
  Tensor out({m, n});
  kernels::gemm(false, false, m, n, k, a->value.data(), b->value.data(), out.data(), false);
  return make_node(std::move(out), {a, b}, [m, n, k](Node& self) {
    const Var& A = self.parents[0];
    const Var& B = self.parents[1];
    if (wants(A)) {
      Tensor ga({m, k});
      kernels::gemm(false, true, m, k, n, self.grad.data(), B->value.data(), ga.data(), false);
      A->accumulate_grad(std::move(ga));
    }
    if (wants(B)) {
      Tensor gb({k, n});
      kernels::gemm(true, false, k, n, m, A->value.data(), self.grad.data(), gb.data(), false);
      B->accumulate_grad(std::move(gb));
    }
  });
}

Var spmm(std::shared_ptr<const SparseMatrix> a, const Var& b) {
  if (!a) throw ContractError("spmm: sparse operand 'a' is null");
  require_rank(b, 2, "spmm", "b");
  if (b->value.rows() != a->cols())
    throw DimensionError("spmm: operand 'b' shape " + shape_str(b->value.shape()) + " incompatible with sparse " +
                         std::to_string(a->rows()) + "x" + std::to_string(a->cols()));
  Tensor out = a->multiply(b->value);
  return make_node(std::move(out), {b}, [a](Node& self) {
    self.parents[0]->accumulate_grad(a->transpose_multiply(self.grad));
  });
}

// ---- elementwise -----------------------------------------------------------

Var add(const Var& a, const Var& b) {
  if (!a || !b) throw ContractError("add: null operand");
  if (a->value.shape() == b->value.shape()) {
    Tensor out = a->value;
    out.add_inplace(b->value);
    return make_node(std::move(out), {a, b}, [](Node& self) {
      if (wants(self.parents[0])) self.parents[0]->accumulate_grad(self.grad);
      if (wants(self.parents[1])) self.parents[1]->accumulate_grad(self.grad);
    });
  }
  // Row-vector bias broadcast.
  require_rank(a, 2, "add", "a");
  const std::size_t m = a->value.rows(), n = a->value.cols();
  const bool bias_ok = b->value.numel() == n &&
                       (b->value.rank() == 1 || (b->value.rank() == 2 && b->value.dim(0) == 1));
  if (!bias_ok)
    throw DimensionError("add: operand 'b' shape " + shape_str(b->value.shape()) + " neither matches " +
                         shape_str(a->value.shape()) + " nor broadcasts as a row bias");
  Tensor out = a->value;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b->value[j];
  return make_node(std::move(out), {a, b}, [m, n](Node& self) {
    if (wants(self.parents[0])) self.parents[0]->accumulate_grad(self.grad);
    if (wants(self.parents[1])) {
      Tensor gb(self.parents[1]->value.shape());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[i * n + j];
      self.parents[1]->accumulate_grad(std::move(gb));
    }
  });
}

Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0f)); }

Var mul(const Var& a, const Var& b) {
  if (!a || !b) throw ContractError("mul: null operand");
  require_same_shape(a, b, "mul");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    const Var& A = self.parents[0];
    const Var& B = self.parents[1];
    if (wants(A)) {
      Tensor g = self.grad;
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= B->value[i];
      A->accumulate_grad(std::move(g));
    }
    if (wants(B)) {
      Tensor g = self.grad;
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= A->value[i];
      B->accumulate_grad(std::move(g));
    }
  });
}

Var scale(const Var& a, float s) {
  if (!a) throw ContractError("scale: null operand");
  Tensor out = a->value;
  for (auto& v : out.storage()) v *= s;
  return make_node(std::move(out), {a}, [s](Node& self) {
    Tensor g = self.grad;
    for (auto& v : g.storage()) v *= s;
    self.parents[0]->accumulate_grad(std::move(g));
  });
}

// ---- shape ------------------------------------------------------------------

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  const std::size_t m = [&] {
    require_rank(parts[0], 2, "concat_cols", "parts[0]");
    return parts[0]->value.rows();
  }();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    require_rank(parts[p], 2, "concat_cols", "parts");
    if (parts[p]->value.rows() != m)
      throw DimensionError("concat_cols: operand " + std::to_string(p) + " has " +
                           std::to_string(parts[p]->value.rows()) + " rows, expected " + std::to_string(m));
    widths.push_back(parts[p]->value.cols());
    total += widths.back();
  }
  Tensor out({m, total});
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& v = parts[p]->value;
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(v.data() + i * widths[p], widths[p], out.data() + i * total + off);
    off += widths[p];
  }
  return make_node(std::move(out), parts, [m, total, widths](Node& self) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      if (wants(self.parents[p])) {
        Tensor g({m, widths[p]});
        for (std::size_t i = 0; i < m; ++i)
          std::copy_n(self.grad.data() + i * total + off, widths[p], g.data() + i * widths[p]);
        self.parents[p]->accumulate_grad(std::move(g));
      }
      off += widths[p];
    }
  });
}

Var slice_cols(const Var& a, std::size_t start, std::size_t len) {
  require_rank(a, 2, "slice_cols", "a");
  const std::size_t m = a->value.rows(), n = a->value.cols();
  if (len == 0 || start + len > n)
    throw DimensionError("slice_cols: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") outside " + std::to_string(n) + " columns");
  Tensor out({m, len});
  for (std::size_t i = 0; i < m; ++i) std::copy_n(a->value.data() + i * n + start, len, out.data() + i * len);
  return make_node(std::move(out), {a}, [m, n, start, len](Node& self) {
    Tensor g({m, n});
    for (std::size_t i = 0; i < m; ++i) std::copy_n(self.grad.data() + i * len, len, g.data() + i * n + start);
    self.parents[0]->accumulate_grad(std::move(g));
  });
}

Var reshape(const Var& a, Shape shape) {
  if (!a) throw ContractError("reshape: null operand");
  Tensor out = a->value.reshaped(std::move(shape));
  return make_node(std::move(out), {a}, [](Node& self) {
    self.parents[0]->accumulate_grad(self.grad.reshaped(self.parents[0]->value.shape()));
  });
}

// ---- activations -----------------------------------------------------------

Var relu(const Var& a) { return leaky_relu(a, 0.0f); }

Var leaky_relu(const Var& a, float slope) {
  if (!a) throw ContractError("leaky_relu: null operand");
  Tensor out = a->value;
  for (auto& v : out.storage())
    if (v < 0.0f) v *= slope;
  return make_node(std::move(out), {a}, [slope](Node& self) {
    const auto& x = self.parents[0]->value;
    Tensor g = self.grad;
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (x[i] < 0.0f) g[i] *= slope;
    self.parents[0]->accumulate_grad(std::move(g));
  });
}

Var sigmoid(const Var& a) {
  if (!a) throw ContractError("sigmoid: null operand");
  Tensor out = a->value;
  for (auto& v : out.storage()) v = 1.0f / (1.0f + std::exp(-v));
  return make_node(out, {a}, [y = out](Node& self) {
    Tensor g = self.grad;
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= y[i] * (1.0f - y[i]);
    self.parents[0]->accumulate_grad(std::move(g));
  });
}

Var dropout(const Var& a, float p, Rng& rng, bool training) {
  if (!a) throw ContractError("dropout: null operand");
  if (p < 0.0f || p >= 1.0f) throw ContractError("dropout: rate must lie in [0,1)");
  if (!training || p == 0.0f) return a;
  const float keep_scale = 1.0f / (1.0f - p);
  std::bernoulli_distribution keep(1.0 - p);
  Tensor mask(a->value.shape());
  for (auto& m : mask.storage()) m = keep(rng) ? keep_scale : 0.0f;
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
  return make_node(std::move(out), {a}, [mask = std::move(mask)](Node& self) {
    Tensor g = self.grad;
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= mask[i];
    self.parents[0]->accumulate_grad(std::move(g));
  });
}

std::shared_ptr<const SparseMatrix> dropout_values(std::shared_ptr<const SparseMatrix> a, float p, Rng& rng,
                                                   bool training) {
  if (p < 0.0f || p >= 1.0f) throw ContractError("dropout: rate must lie in [0,1)");
  if (!training || p == 0.0f) return a;
  const float keep_scale = 1.0f / (1.0f - p);
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<float> values(a->values().begin(), a->values().end());
  for (auto& v : values) v = keep(rng) ? v * keep_scale : 0.0f;
  return std::make_shared<const SparseMatrix>(a->with_values(std::move(values)));
}

// ---- reductions and losses -------------------------------------------------

Var softmax_rows(const Var& a) {
  require_rank(a, 2, "softmax_rows", "a");
  const std::size_t m = a->value.rows(), n = a->value.cols();
  Tensor out = a->value;
  for (std::size_t i = 0; i < m; ++i) {
    float* row = out.data() + i * n;
    const float mx = *std::max_element(row, row + n);
    float s = 0.0f;
    for (std::size_t j = 0; j < n; ++j) s += (row[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) row[j] /= s;
  }
  return make_node(out, {a}, [y = out, m, n](Node& self) {
    Tensor g({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      float dot = 0.0f;
      for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] = y[i * n + j] * (self.grad[i * n + j] - dot);
    }
    self.parents[0]->accumulate_grad(std::move(g));
  });
}

Var cross_entropy(const Var& logits, std::span<const int> labels, std::span<const std::uint32_t> rows) {
  require_rank(logits, 2, "cross_entropy", "logits");
  const std::size_t m = logits->value.rows(), n = logits->value.cols();
  if (labels.size() != m)
    throw DimensionError("cross_entropy: operand 'labels' has " + std::to_string(labels.size()) + " entries, expected " +
                         std::to_string(m));
  if (rows.empty()) throw ContractError("cross_entropy: empty row mask");
  // Probabilities of the selected rows, kept for the backward pass.
  Tensor probs({rows.size(), n});
  double total = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::size_t i = rows[r];
    if (i >= m) throw DimensionError("cross_entropy: row index out of range");
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= n) throw DimensionError("cross_entropy: label out of range");
    const float* row = logits->value.data() + i * n;
    const float mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(static_cast<double>(row[j] - mx));
    const double lse = std::log(s) + mx;
    total += lse - row[y];
    for (std::size_t j = 0; j < n; ++j) probs[r * n + j] = static_cast<float>(std::exp(row[j] - lse));
  }
  const float inv = 1.0f / static_cast<float>(rows.size());
  std::vector<std::uint32_t> row_copy(rows.begin(), rows.end());
  std::vector<int> label_copy(labels.begin(), labels.end());
  return make_node(scalar(static_cast<float>(total / rows.size())), {logits},
                   [probs = std::move(probs), row_copy = std::move(row_copy), label_copy = std::move(label_copy), m, n,
                    inv](Node& self) {
                     Tensor g({m, n});
                     const float up = self.grad[0] * inv;
                     for (std::size_t r = 0; r < row_copy.size(); ++r) {
                       const std::size_t i = row_copy[r];
                       for (std::size_t j = 0; j < n; ++j) g[i * n + j] += up * probs[r * n + j];
                       g[i * n + static_cast<std::size_t>(label_copy[i])] -= up;
                     }
                     self.parents[0]->accumulate_grad(std::move(g));
                   });
}

Var bce_with_logits(const Var& logits, std::span<const float> targets) {
  if (!logits) throw ContractError("bce_with_logits: null operand");
  const std::size_t m = logits->value.numel();
  if (targets.size() != m)
    throw DimensionError("bce_with_logits: operand 'targets' has " + std::to_string(targets.size()) +
                         " entries, expected " + std::to_string(m));
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double x = logits->value[i];
    // log(1 + exp(-|x|)) + max(x, 0) - x*y
    total += std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  std::vector<float> t(targets.begin(), targets.end());
  return make_node(scalar(static_cast<float>(total / m)), {logits}, [t = std::move(t), m](Node& self) {
    const auto& x = self.parents[0]->value;
    Tensor g(x.shape());
    const float up = self.grad[0] / static_cast<float>(m);
    for (std::size_t i = 0; i < m; ++i) g[i] = up * (1.0f / (1.0f + std::exp(-x[i])) - t[i]);
    self.parents[0]->accumulate_grad(std::move(g));
  });
}

Var mse(const Var& a, const Var& b) {
  if (!a || !b) throw ContractError("mse: null operand");
  require_same_shape(a, b, "mse");
  const std::size_t n = a->value.numel();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a->value[i]) - b->value[i];
    total += d * d;
  }
  return make_node(scalar(static_cast<float>(total / n)), {a, b}, [n](Node& self) {
    const auto& A = self.parents[0];
    const auto& B = self.parents[1];
    const float up = 2.0f * self.grad[0] / static_cast<float>(n);
    Tensor g(A->value.shape());
    for (std::size_t i = 0; i < n; ++i) g[i] = up * (A->value[i] - B->value[i]);
    if (wants(B)) {
      Tensor gb = g;
      for (auto& v : gb.storage()) v = -v;
      B->accumulate_grad(std::move(gb));
    }
    if (wants(A)) A->accumulate_grad(std::move(g));
  });
}

Var sum(const Var& a) {
  if (!a) throw ContractError("sum: null operand");
  double total = 0.0;
  for (float v : a->value.storage()) total += v;
  return make_node(scalar(static_cast<float>(total)), {a}, [](Node& self) {
    self.parents[0]->accumulate_grad(Tensor(self.parents[0]->value.shape(), self.grad[0]));
  });
}

Var mean_rows(const Var& a) {
  require_rank(a, 2, "mean_rows", "a");
  const std::size_t m = a->value.rows(), n = a->value.cols();
  Tensor out({1, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += a->value[i * n + j];
  for (auto& v : out.storage()) v /= static_cast<float>(m);
  return make_node(std::move(out), {a}, [m, n](Node& self) {
    Tensor g({m, n});
    const float inv = 1.0f / static_cast<float>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] = self.grad[j] * inv;
    self.parents[0]->accumulate_grad(std::move(g));
  });
}

Var gather_rows(const Var& a, std::span<const std::uint32_t> index) {
  require_rank(a, 2, "gather_rows", "a");
  const std::size_t m = a->value.rows(), n = a->value.cols();
  if (index.empty()) throw ContractError("gather_rows: empty index");
  Tensor out({index.size(), n});
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= m) throw DimensionError("gather_rows: row " + std::to_string(index[r]) + " out of range");
    std::copy_n(a->value.data() + index[r] * n, n, out.data() + r * n);
  }
  std::vector<std::uint32_t> idx(index.begin(), index.end());
  return make_node(std::move(out), {a}, [idx = std::move(idx), m, n](Node& self) {
    Tensor g({m, n});
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) g[idx[r] * n + j] += self.grad[r * n + j];
    self.parents[0]->accumulate_grad(std::move(g));
  });
}

Var row_dot(const Var& a, const Var& b) {
  require_rank(a, 2, "row_dot", "a");
  require_rank(b, 2, "row_dot", "b");
  require_same_shape(a, b, "row_dot");
  const std::size_t m = a->value.rows(), n = a->value.cols();
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    float s = 0.0f;
    for (std::size_t j = 0; j < n; ++j) s += a->value[i * n + j] * b->value[i * n + j];
    out[i] = s;
  }
  return make_node(std::move(out), {a, b}, [m, n](Node& self) {
    const auto& A = self.parents[0];
    const auto& B = self.parents[1];
    if (wants(A)) {
      Tensor g({m, n});
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] = self.grad[i] * B->value[i * n + j];
      A->accumulate_grad(std::move(g));
    }
    if (wants(B)) {
      Tensor g({m, n});
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] = self.grad[i] * A->value[i * n + j];
      B->accumulate_grad(std::move(g));
    }
  });
}

// ---- convolutional blocks --------------------------------------------------

namespace {

struct Conv3 {
  std::size_t batch, channels, length;
};

Conv3 as_batched(const Tensor& x, const char* op) {
  if (x.rank() == 3) return {x.dim(0), x.dim(1), x.dim(2)};
  if (x.rank() == 2) return {1, x.dim(0), x.dim(1)};
  throw DimensionError(std::string(op) + ": operand 'input' has shape " + shape_str(x.shape()) +
                       ", expected [B,C,L] or [C,L]");
}

// cols[(c*k + m), b*lo + j] = x[b, c, j*stride + m]
void im2col(const float* x, const Conv3& s, std::size_t k, std::size_t stride, std::size_t lo, float* cols) {
  const std::size_t width = s.batch * lo;
  for (std::size_t c = 0; c < s.channels; ++c)
    for (std::size_t m = 0; m < k; ++m) {
      float* dst = cols + (c * k + m) * width;
      for (std::size_t b = 0; b < s.batch; ++b) {
        const float* src = x + (b * s.channels + c) * s.length + m;
        for (std::size_t j = 0; j < lo; ++j) dst[b * lo + j] = src[j * stride];
      }
    }
}

void col2im(const float* cols, const Conv3& s, std::size_t k, std::size_t stride, std::size_t lo, float* x) {
  const std::size_t width = s.batch * lo;
  for (std::size_t c = 0; c < s.channels; ++c)
    for (std::size_t m = 0; m < k; ++m) {
      const float* src = cols + (c * k + m) * width;
      for (std::size_t b = 0; b < s.batch; ++b) {
        float* dst = x + (b * s.channels + c) * s.length + m;
        for (std::size_t j = 0; j < lo; ++j) dst[j * stride] += src[b * lo + j];
      }
    }
}

// [O, B*L] <-> [B, O, L]
void channel_major_to_batched(const float* src, std::size_t batch, std::size_t channels, std::size_t length,
                              float* dst) {
  for (std::size_t o = 0; o < channels; ++o)
    for (std::size_t b = 0; b < batch; ++b)
      std::copy_n(src + o * batch * length + b * length, length, dst + (b * channels + o) * length);
}

void batched_to_channel_major(const float* src, std::size_t batch, std::size_t channels, std::size_t length,
                              float* dst) {
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < channels; ++o)
      std::copy_n(src + (b * channels + o) * length, length, dst + o * batch * length + b * length);
}

void add_channel_bias(Tensor& out, const Tensor& bias, std::size_t batch, std::size_t channels, std::size_t length) {
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < channels; ++o) {
      float* row = out.data() + (b * channels + o) * length;
      for (std::size_t j = 0; j < length; ++j) row[j] += bias[o];
    }
}

Tensor channel_bias_grad(const Tensor& g, std::size_t batch, std::size_t channels, std::size_t length) {
  Tensor gb({channels});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < channels; ++o) {
      const float* row = g.data() + (b * channels + o) * length;
      float s = 0.0f;
      for (std::size_t j = 0; j < length; ++j) s += row[j];
      gb[o] += s;
    }
  return gb;
}

Shape conv_out_shape(const Tensor& x, std::size_t batch, std::size_t channels, std::size_t length) {
  if (x.rank() == 2) return {channels, length};
  return {batch, channels, length};
}

void check_bias(const Var& bias, std::size_t channels, const char* op) {
  if (bias && (bias->value.rank() != 1 || bias->value.dim(0) != channels))
    throw DimensionError(std::string(op) + ": operand 'bias' has shape " + shape_str(bias->value.shape()) +
                         ", expected [" + std::to_string(channels) + "]");
}

}  // namespace

Var conv1d(const Var& input, const Var& kernels, const Var& bias, std::size_t stride) {
  if (!input || !kernels) throw ContractError("conv1d: null operand");
  if (stride == 0) throw ContractError("conv1d: stride must be positive");
  const Conv3 s = as_batched(input->value, "conv1d");
  require_rank(kernels, 3, "conv1d", "kernels");
  const std::size_t out_ch = kernels->value.dim(0), k = kernels->value.dim(2);
  if (kernels->value.dim(1) != s.channels)
    throw DimensionError("conv1d: operand 'kernels' shape " + shape_str(kernels->value.shape()) + " expects " +
                         std::to_string(kernels->value.dim(1)) + " input channels, input has " +
                         std::to_string(s.channels));
  if (s.length < k)
    throw DimensionError("conv1d: operand 'input' length " + std::to_string(s.length) + " shorter than kernel " +
                         std::to_string(k));
  check_bias(bias, out_ch, "conv1d");
  const std::size_t lo = (s.length - k) / stride + 1;
  const std::size_t ck = s.channels * k, width = s.batch * lo;

  std::vector<float> cols(ck * width);
  im2col(input->value.data(), s, k, stride, lo, cols.data());
  std::vector<float> out_mat(out_ch * width);
  kernels::gemm(false, false, out_ch, width, ck, kernels->value.data(), cols.data(), out_mat.data(), false);
  Tensor out(conv_out_shape(input->value, s.batch, out_ch, lo));
  channel_major_to_batched(out_mat.data(), s.batch, out_ch, lo, out.data());
  if (bias) add_channel_bias(out, bias->value, s.batch, out_ch, lo);

  std::vector<Var> parents{input, kernels};
  if (bias) parents.push_back(bias);
  return make_node(std::move(out), std::move(parents),
                   [s, k, stride, lo, out_ch, ck, width, cols = std::move(cols)](Node& self) {
                     std::vector<float> g_mat(out_ch * width);
                     batched_to_channel_major(self.grad.data(), s.batch, out_ch, lo, g_mat.data());
                     const Var& X = self.parents[0];
                     const Var& W = self.parents[1];
                     if (wants(W)) {
                       Tensor gw(W->value.shape());
                       kernels::gemm(false, true, out_ch, ck, width, g_mat.data(), cols.data(), gw.data(), false);
                       W->accumulate_grad(std::move(gw));
                     }
                     if (wants(X)) {
                       std::vector<float> g_cols(ck * width);
                       kernels::gemm(true, false, ck, width, out_ch, W->value.data(), g_mat.data(), g_cols.data(),
                                     false);
                       Tensor gx(X->value.shape());
                       col2im(g_cols.data(), s, k, stride, lo, gx.data());
                       X->accumulate_grad(std::move(gx));
                     }
                     if (self.parents.size() > 2 && wants(self.parents[2]))
                       self.parents[2]->accumulate_grad(channel_bias_grad(self.grad, s.batch, out_ch, lo));
                   });
}

Var conv_transpose1d(const Var& input, const Var& kernels, const Var& bias, std::size_t stride) {
  if (!input || !kernels) throw ContractError("conv_transpose1d: null operand");
  if (stride == 0) throw ContractError("conv_transpose1d: stride must be positive");
  const Conv3 s = as_batched(input->value, "conv_transpose1d");
  require_rank(kernels, 3, "conv_transpose1d", "kernels");
  if (kernels->value.dim(0) != s.channels)
    throw DimensionError("conv_transpose1d: operand 'kernels' shape " + shape_str(kernels->value.shape()) +
                         " expects " + std::to_string(kernels->value.dim(0)) + " input channels, input has " +
                         std::to_string(s.channels));
  const std::size_t out_ch = kernels->value.dim(1), k = kernels->value.dim(2);
  check_bias(bias, out_ch, "conv_transpose1d");
  const std::size_t lout = (s.length - 1) * stride + k;
  const std::size_t ok = out_ch * k, width = s.batch * s.length;
  const Conv3 os{s.batch, out_ch, lout};

  std::vector<float> x_mat(s.channels * width);
  batched_to_channel_major(input->value.data(), s.batch, s.channels, s.length, x_mat.data());
  // cols[o*k+m, b*L+j] = sum_c W[c, o*k+m] x[c, b*L+j]
  std::vector<float> cols(ok * width);
  kernels::gemm(true, false, ok, width, s.channels, kernels->value.data(), x_mat.data(), cols.data(), false);
  Tensor out(conv_out_shape(input->value, s.batch, out_ch, lout));
  col2im(cols.data(), os, k, stride, s.length, out.data());
  if (bias) add_channel_bias(out, bias->value, s.batch, out_ch, lout);

  std::vector<Var> parents{input, kernels};
  if (bias) parents.push_back(bias);
  return make_node(std::move(out), std::move(parents),
                   [s, os, k, stride, ok, width, x_mat = std::move(x_mat)](Node& self) {
                     std::vector<float> g_cols(ok * width);
                     im2col(self.grad.data(), os, k, stride, s.length, g_cols.data());
                     const Var& X = self.parents[0];
                     const Var& W = self.parents[1];
                     if (wants(W)) {
                       Tensor gw(W->value.shape());
                       kernels::gemm(false, true, s.channels, ok, width, x_mat.data(), g_cols.data(), gw.data(),
                                     false);
                       W->accumulate_grad(std::move(gw));
                     }
                     if (wants(X)) {
                       std::vector<float> gx_mat(s.channels * width);
                       kernels::gemm(false, false, s.channels, width, ok, W->value.data(), g_cols.data(),
                                     gx_mat.data(), false);
                       Tensor gx(X->value.shape());
                       channel_major_to_batched(gx_mat.data(), s.batch, s.channels, s.length, gx.data());
                       X->accumulate_grad(std::move(gx));
                     }
                     if (self.parents.size() > 2 && wants(self.parents[2]))
                       self.parents[2]->accumulate_grad(channel_bias_grad(self.grad, os.batch, os.channels,
                                                                          os.length));
                   });
}

Var instance_norm1d(const Var& input, const Var& gamma, const Var& beta, float eps) {
  if (!input || !gamma || !beta) throw ContractError("instance_norm1d: null operand");
  const Conv3 s = as_batched(input->value, "instance_norm1d");
  for (const auto* p : {&gamma, &beta})
    if ((*p)->value.rank() != 1 || (*p)->value.dim(0) != s.channels)
      throw DimensionError("instance_norm1d: affine operand shape " + shape_str((*p)->value.shape()) + ", expected [" +
                           std::to_string(s.channels) + "]");
  const std::size_t L = s.length, groups = s.batch * s.channels;
  Tensor normalized(input->value.shape());
  std::vector<float> inv_std(groups);
  Tensor out(input->value.shape());
  for (std::size_t g = 0; g < groups; ++g) {
    const float* x = input->value.data() + g * L;
    double mean = 0.0;
    for (std::size_t j = 0; j < L; ++j) mean += x[j];
    mean /= static_cast<double>(L);
    double var = 0.0;
    for (std::size_t j = 0; j < L; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= static_cast<double>(L);
    inv_std[g] = static_cast<float>(1.0 / std::sqrt(var + eps));
    const std::size_t c = g % s.channels;
    for (std::size_t j = 0; j < L; ++j) {
      const float xh = static_cast<float>((x[j] - mean) * inv_std[g]);
      normalized[g * L + j] = xh;
      out[g * L + j] = gamma->value[c] * xh + beta->value[c];
    }
  }
  return make_node(std::move(out), {input, gamma, beta},
                   [s, L, groups, normalized = std::move(normalized), inv_std = std::move(inv_std)](Node& self) {
                     const Var& X = self.parents[0];
                     const Var& G = self.parents[1];
                     const Var& B = self.parents[2];
                     Tensor gg({s.channels}), gb({s.channels});
                     Tensor gx = wants(X) ? Tensor(X->value.shape()) : Tensor{};
                     for (std::size_t g = 0; g < groups; ++g) {
                       const std::size_t c = g % s.channels;
                       const float* dy = self.grad.data() + g * L;
                       const float* xh = normalized.data() + g * L;
                       double sum_dy = 0.0, sum_dy_xh = 0.0;
                       for (std::size_t j = 0; j < L; ++j) {
                         sum_dy += dy[j];
                         sum_dy_xh += dy[j] * xh[j];
                       }
                       gg[c] += static_cast<float>(sum_dy_xh);
                       gb[c] += static_cast<float>(sum_dy);
                       if (!gx.empty()) {
                         const float gam = G->value[c];
                         const float mean_dy = static_cast<float>(sum_dy / L);
                         const float mean_dy_xh = static_cast<float>(sum_dy_xh / L);
                         for (std::size_t j = 0; j < L; ++j)
                           gx[g * L + j] = gam * inv_std[g] * (dy[j] - mean_dy - xh[j] * mean_dy_xh);
                       }
                     }
                     if (wants(G)) G->accumulate_grad(std::move(gg));
                     if (wants(B)) B->accumulate_grad(std::move(gb));
                     if (!gx.empty()) X->accumulate_grad(std::move(gx));
                   });
}

}  // namespace gnndiff::ad
