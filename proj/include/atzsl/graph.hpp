#pragma once

#include <cstddef>
#include <vector>

#include "atzsl/tensor.hpp"

namespace atzsl {

// Handle to a node of a Graph. Only meaningful for the graph that issued it.
struct Var {
  std::size_t id = 0;
};

enum class OpKind {
  kLeaf,
  kMatMul,
  kAddBias,
  kAdd,
  kSub,
  kMul,
  kScale,
  kRelu,
  kConcat,
  kSliceRows,
  kPairwiseSum,
  kPairwiseProduct,
  kReshape,
  kSum,
  kSoftmaxCrossEntropy,
};

const char* op_name(OpKind kind);

// d(loss)/d(node) for every node of a graph, indexed by Var.
class GradientMap {
 public:
  explicit GradientMap(std::vector<Tensor> grads) : grads_(std::move(grads)) {}
  const Tensor& operator[](Var v) const { return grads_.at(v.id); }
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  std::vector<Tensor> grads_;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so every node's
// inputs precede it; backward() walks the tape in exact reverse order.
//
// One graph per forward/backward pair. Not thread-safe; independent graphs may
// live on different threads.
class Graph {
 public:
  // Differentiable leaf.
  Var input(Tensor value);
  // Leaf excluded from differentiation; its gradient (and that of anything
  // computed only from constants) is reported as zero.
  Var constant(Tensor value);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  const std::vector<std::size_t>& inputs(Var v) const { return nodes_.at(v.id).inputs; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // [m x k] * [k x n]
  Var matmul(Var a, Var b);
  // a: [m x n] or [n]; bias: [n], added to every row.
  Var add_bias(Var a, Var bias);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  // Gradient is 0 at exactly 0.
  Var relu(Var a);
  // Rank-1: a followed by b. Rank-2: per-row concatenation along the feature axis.
  Var concat(Var a, Var b);
  // Rows [begin, end) of a rank-2 tensor.
  Var slice_rows(Var a, std::size_t begin, std::size_t end);
  // a: [B x h], b: [C x h] -> [B*C x h] with row i*C + j equal to a_i + b_j.
  Var pairwise_sum(Var a, Var b);
  // Same layout as pairwise_sum with the elementwise product a_i * b_j.
  Var pairwise_product(Var a, Var b);
  Var reshape(Var a, Shape shape);
  // Sum of all entries, scalar-shaped.
  Var sum(Var a);
  // scores: [B x C]; returns [B] with -log softmax(scores_b / temperature)[labels_b].
  Var softmax_cross_entropy(Var scores, std::vector<std::size_t> labels, double temperature);

  // Requires a scalar-shaped (one element) loss node.
  GradientMap backward(Var loss) const;

 private:
  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor value;
    std::vector<double> aux;       // scale factor, temperature, cached softmax
    std::vector<std::size_t> iaux; // labels, slice offsets
    bool tracked = false;
  };

  Var push(OpKind kind, std::vector<std::size_t> inputs, Tensor value, std::vector<double> aux = {},
           std::vector<std::size_t> iaux = {});
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
};

// Plain (untaped) kernels shared with the rest of the library.
namespace kernels {
// out[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n);
// out[m x k] += a[m x n] * b[k x n]^T
void gemm_nt(const double* a, const double* b, double* out, std::size_t m, std::size_t n, std::size_t k);
// out[k x n] += a[m x k]^T * b[m x n]
void gemm_tn(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n);
}  // namespace kernels

}  // namespace atzsl
