#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// Every op returns a new graph node holding its forward value. Calling
// backward() on a scalar node walks the graph in reverse topological order and
// accumulates gradients into every node that requires them. Parameters are
// long-lived leaves; intermediate nodes die with the last Var referencing them.
//
// A single graph is not thread-safe. Independent graphs may be built and
// differentiated concurrently.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gnndiff/sparse.hpp"
#include "gnndiff/tensor.hpp"

namespace gnndiff::ad {

using Rng = std::mt19937_64;

struct Node {
  Tensor value;
  /// Empty until a backward pass reaches this node.
  Tensor grad;
  bool requires_grad = false;
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate_grad(Tensor g);
  bool is_leaf() const noexcept { return parents.empty(); }
};

using Var = std::shared_ptr<Node>;

/// Trainable leaf.
Var parameter(Tensor value, std::string name = {});
/// Leaf that never receives gradients.
Var constant(Tensor value);

/// Backpropagates from a single-element loss. Throws ContractError otherwise.
void backward(const Var& loss);

/// Gradients of `loss` w.r.t. each of `params`, in order. Clears existing grads first.
std::vector<Tensor> gradients(const Var& loss, std::span<const Var> params);

void zero_grad(std::span<const Var> params);

// ---- op catalogue ----------------------------------------------------------

/// [m,k] x [k,n]
Var matmul(const Var& a, const Var& b);
/// Constant sparse [m,k] x dense [k,n]. Gradient flows to `b` only.
Var spmm(std::shared_ptr<const SparseMatrix> a, const Var& b);

/// Elementwise sum. `b` may also be a bias of shape [n] or [1,n] broadcast over the rows of `a`.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float s);

/// Concatenate rank-2 operands with equal row counts along the feature axis.
Var concat_cols(const std::vector<Var>& parts);
/// Columns [start, start+len) of a rank-2 operand.
Var slice_cols(const Var& a, std::size_t start, std::size_t len);
Var reshape(const Var& a, Shape shape);

Var relu(const Var& a);
inline constexpr float kLeakySlope = 0.01f;
Var leaky_relu(const Var& a, float slope = kLeakySlope);
Var sigmoid(const Var& a);

/// Inverted dropout: kept entries are scaled by 1/(1-p). Identity when !training or p == 0.
Var dropout(const Var& a, float p, Rng& rng, bool training);
/// Inverted dropout applied to the stored values of a constant sparse operand.
std::shared_ptr<const SparseMatrix> dropout_values(std::shared_ptr<const SparseMatrix> a, float p, Rng& rng,
                                                   bool training);

Var softmax_rows(const Var& a);
/// Mean softmax cross-entropy of `logits` rows listed in `rows` against integer `labels` (one per row of logits).
Var cross_entropy(const Var& logits, std::span<const int> labels, std::span<const std::uint32_t> rows);
/// Mean binary cross-entropy with logits; `logits` holds one score per element.
Var bce_with_logits(const Var& logits, std::span<const float> targets);
/// Mean squared error over all elements.
Var mse(const Var& a, const Var& b);
Var sum(const Var& a);
/// Mean over rows: [m,n] -> [1,n].
Var mean_rows(const Var& a);

Var gather_rows(const Var& a, std::span<const std::uint32_t> index);
/// Row-wise inner product of two [m,n] operands -> [m].
Var row_dot(const Var& a, const Var& b);

/// 1-D convolution without padding. input [B,C,L] (or [C,L]), kernels [O,C,k], optional bias [O].
/// Output [B,O,(L-k)/stride+1] (rank follows the input).
Var conv1d(const Var& input, const Var& kernels, const Var& bias, std::size_t stride);
/// Adjoint of conv1d. input [B,C,L], kernels [C,O,k], optional bias [O]. Output [B,O,(L-1)*stride+k].
Var conv_transpose1d(const Var& input, const Var& kernels, const Var& bias, std::size_t stride);
/// Per-(instance, channel) normalization over the length axis with affine [C] parameters.
inline constexpr float kInstanceNormEps = 1e-5f;
Var instance_norm1d(const Var& input, const Var& gamma, const Var& beta, float eps = kInstanceNormEps);

}  // namespace gnndiff::ad
