#include "atzsl/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "atzsl/errors.hpp"

namespace atzsl {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAddBias: return "add_bias";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kRelu: return "relu";
    case OpKind::kConcat: return "concat";
    case OpKind::kSliceRows: return "slice_rows";
    case OpKind::kPairwiseSum: return "pairwise_sum";
    case OpKind::kPairwiseProduct: return "pairwise_product";
    case OpKind::kReshape: return "reshape";
    case OpKind::kSum: return "sum";
    case OpKind::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
  }
  return "?";
}

namespace kernels {

void gemm_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* o = out + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ai[p];
      if (s == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += s * bp[j];
    }
  }
}

void gemm_nt(const double* a, const double* b, double* out, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * n;
    double* o = out + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += ai[j] * bp[j];
      o[p] += acc;
    }
  }
}

void gemm_tn(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ai[p];
      if (s == 0.0) continue;
      double* o = out + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += s * bi[j];
    }
  }
}

}  // namespace kernels

namespace {

std::string mismatch(const char* op, const Tensor& a, const Tensor& b) {
  return std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape());
}

void accumulate(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

const Graph::Node& Graph::node(Var v) const {
  if (v.id >= nodes_.size()) throw std::out_of_range("graph node " + std::to_string(v.id) + " does not exist");
  return nodes_[v.id];
}

Var Graph::push(OpKind kind, std::vector<std::size_t> inputs, Tensor value, std::vector<double> aux,
                std::vector<std::size_t> iaux) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op_name(kind));
  }
  bool tracked = false;
  for (std::size_t i : inputs) tracked = tracked || nodes_[i].tracked;
  nodes_.push_back(Node{kind, std::move(inputs), std::move(value), std::move(aux), std::move(iaux), tracked});
  return Var{nodes_.size() - 1};
}

Var Graph::input(Tensor value) {
  Var v = push(OpKind::kLeaf, {}, std::move(value));
  nodes_.back().tracked = true;
  return v;
}

Var Graph::constant(Tensor value) { return push(OpKind::kLeaf, {}, std::move(value)); }

Var Graph::matmul(Var a, Var b) {
  const Tensor& x = node(a).value;
  const Tensor& y = node(b).value;
  if (x.rank() != 2 || y.rank() != 2 || x.shape()[1] != y.shape()[0]) throw DimensionError(mismatch("matmul", x, y));
  const std::size_t m = x.shape()[0], k = x.shape()[1], n = y.shape()[1];
  Tensor out(Shape{m, n});
  kernels::gemm_nn(x.data().data(), y.data().data(), out.data().data(), m, k, n);
  return push(OpKind::kMatMul, {a.id, b.id}, std::move(out));
}

Var Graph::add_bias(Var a, Var bias) {
  const Tensor& x = node(a).value;
  const Tensor& b = node(bias).value;
  if (b.rank() != 1 || x.rank() < 1 || x.shape().back() != b.size()) throw DimensionError(mismatch("add_bias", x, b));
  Tensor out = x;
  const std::size_t n = b.size();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += b[i % n];
  return push(OpKind::kAddBias, {a.id, bias.id}, std::move(out));
}

Var Graph::add(Var a, Var b) {
  const Tensor& x = node(a).value;
  const Tensor& y = node(b).value;
  if (x.shape() != y.shape()) throw DimensionError(mismatch("add", x, y));
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  return push(OpKind::kAdd, {a.id, b.id}, std::move(out));
}

Var Graph::sub(Var a, Var b) {
  const Tensor& x = node(a).value;
  const Tensor& y = node(b).value;
  if (x.shape() != y.shape()) throw DimensionError(mismatch("sub", x, y));
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  return push(OpKind::kSub, {a.id, b.id}, std::move(out));
}

Var Graph::mul(Var a, Var b) {
  const Tensor& x = node(a).value;
  const Tensor& y = node(b).value;
  if (x.shape() != y.shape()) throw DimensionError(mismatch("mul", x, y));
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  return push(OpKind::kMul, {a.id, b.id}, std::move(out));
}

Var Graph::scale(Var a, double factor) {
  Tensor out = node(a).value;
  for (double& v : out.data()) v *= factor;
  return push(OpKind::kScale, {a.id}, std::move(out), {factor});
}

Var Graph::relu(Var a) {
  Tensor out = node(a).value;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return push(OpKind::kRelu, {a.id}, std::move(out));
}

Var Graph::concat(Var a, Var b) {
  const Tensor& x = node(a).value;
  const Tensor& y = node(b).value;
  if (x.rank() == 1 && y.rank() == 1) {
    std::vector<double> values(x.values());
    values.insert(values.end(), y.values().begin(), y.values().end());
    return push(OpKind::kConcat, {a.id, b.id}, Tensor::vector(std::move(values)));
  }
  if (x.rank() != 2 || y.rank() != 2 || x.shape()[0] != y.shape()[0]) throw DimensionError(mismatch("concat", x, y));
  const std::size_t rows = x.shape()[0], ca = x.shape()[1], cb = y.shape()[1];
  Tensor out(Shape{rows, ca + cb});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(x.row(r).begin(), x.row(r).end(), out.row(r).begin());
    std::copy(y.row(r).begin(), y.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(ca));
  }
  return push(OpKind::kConcat, {a.id, b.id}, std::move(out));
}

Var Graph::slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = node(a).value;
  if (x.rank() != 2 || begin > end || end > x.shape()[0]) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for shape " + shape_string(x.shape()));
  }
  const std::size_t c = x.shape()[1];
  const auto first = x.values().begin() + static_cast<std::ptrdiff_t>(begin * c);
  const auto last = x.values().begin() + static_cast<std::ptrdiff_t>(end * c);
  Tensor out(Shape{end - begin, c}, std::vector<double>(first, last));
  return push(OpKind::kSliceRows, {a.id}, std::move(out), {}, {begin});
}

Var Graph::pairwise_sum(Var a, Var b) {
  const Tensor& x = node(a).value;
  const Tensor& y = node(b).value;
  if (x.rank() != 2 || y.rank() != 2 || x.shape()[1] != y.shape()[1]) throw DimensionError(mismatch("pairwise_sum", x, y));
  const std::size_t B = x.shape()[0], C = y.shape()[0], h = x.shape()[1];
  Tensor out(Shape{B * C, h});
  for (std::size_t i = 0; i < B; ++i) {
    const auto xi = x.row(i);
    for (std::size_t j = 0; j < C; ++j) {
      const auto yj = y.row(j);
      auto o = out.row(i * C + j);
      for (std::size_t k = 0; k < h; ++k) o[k] = xi[k] + yj[k];
    }
  }
  return push(OpKind::kPairwiseSum, {a.id, b.id}, std::move(out));
}

Var Graph::pairwise_product(Var a, Var b) {
  const Tensor& x = node(a).value;
  const Tensor& y = node(b).value;
  if (x.rank() != 2 || y.rank() != 2 || x.shape()[1] != y.shape()[1]) {
    throw DimensionError(mismatch("pairwise_product", x, y));
  }
  const std::size_t B = x.shape()[0], C = y.shape()[0], h = x.shape()[1];
  Tensor out(Shape{B * C, h});
  for (std::size_t i = 0; i < B; ++i) {
    const auto xi = x.row(i);
    for (std::size_t j = 0; j < C; ++j) {
      const auto yj = y.row(j);
      auto o = out.row(i * C + j);
      for (std::size_t k = 0; k < h; ++k) o[k] = xi[k] * yj[k];
    }
  }
  return push(OpKind::kPairwiseProduct, {a.id, b.id}, std::move(out));
}

Var Graph::reshape(Var a, Shape shape) {
  const Tensor& x = node(a).value;
  if (shape_numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  return push(OpKind::kReshape, {a.id}, x.reshaped(std::move(shape)));
}

Var Graph::sum(Var a) {
  double acc = 0.0;
  for (double v : node(a).value.data()) acc += v;
  return push(OpKind::kSum, {a.id}, Tensor::scalar(acc));
}

Var Graph::softmax_cross_entropy(Var scores, std::vector<std::size_t> labels, double temperature) {
  if (!(temperature > 0.0)) throw NumericError("softmax_cross_entropy: temperature must be positive");
  const Tensor& s = node(scores).value;
  if (s.rank() != 2 || s.shape()[0] != labels.size()) {
    throw DimensionError("softmax_cross_entropy: scores " + shape_string(s.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t B = s.shape()[0], C = s.shape()[1];
  std::vector<double> probs(B * C);
  Tensor out(Shape{B});
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] >= C) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(labels[b]) + " with " +
                              std::to_string(C) + " classes");
    }
    const auto row = s.row(b);
    double mx = row[0] / temperature;
    for (double v : row) mx = std::max(mx, v / temperature);
    double z = 0.0;
    for (std::size_t j = 0; j < C; ++j) {
      probs[b * C + j] = std::exp(row[j] / temperature - mx);
      z += probs[b * C + j];
    }
    for (std::size_t j = 0; j < C; ++j) probs[b * C + j] /= z;
    out[b] = mx + std::log(z) - row[labels[b]] / temperature;
  }
  probs.push_back(temperature);
  return push(OpKind::kSoftmaxCrossEntropy, {scores.id}, std::move(out), std::move(probs), std::move(labels));
}

GradientMap Graph::backward(Var loss) const {
  if (node(loss).value.size() != 1) {
    throw DimensionError("backward: loss node has shape " + shape_string(node(loss).value.shape()) +
                         ", expected a scalar");
  }
  std::vector<Tensor> grads;
  grads.reserve(nodes_.size());
  for (const Node& n : nodes_) grads.emplace_back(n.value.shape());
  grads[loss.id][0] = 1.0;

  for (std::size_t idx = loss.id + 1; idx-- > 0;) {
    const Node& n = nodes_[idx];
    if (!n.tracked) continue;
    const Tensor& g = grads[idx];
    switch (n.kind) {
      case OpKind::kLeaf:
        break;
      case OpKind::kMatMul: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        const Tensor& b = nodes_[n.inputs[1]].value;
        const std::size_t m = a.shape()[0], k = a.shape()[1], c = b.shape()[1];
        if (nodes_[n.inputs[0]].tracked) {
          kernels::gemm_nt(g.data().data(), b.data().data(), grads[n.inputs[0]].data().data(), m, c, k);
        }
        if (nodes_[n.inputs[1]].tracked) {
          kernels::gemm_tn(a.data().data(), g.data().data(), grads[n.inputs[1]].data().data(), m, k, c);
        }
        break;
      }
      case OpKind::kAddBias: {
        accumulate(grads[n.inputs[0]], g);
        Tensor& gb = grads[n.inputs[1]];
        const std::size_t w = gb.size();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % w] += g[i];
        break;
      }
      case OpKind::kAdd:
        accumulate(grads[n.inputs[0]], g);
        accumulate(grads[n.inputs[1]], g);
        break;
      case OpKind::kSub: {
        accumulate(grads[n.inputs[0]], g);
        Tensor& gb = grads[n.inputs[1]];
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        break;
      }
      case OpKind::kMul: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        const Tensor& b = nodes_[n.inputs[1]].value;
        Tensor& ga = grads[n.inputs[0]];
        Tensor& gb = grads[n.inputs[1]];
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * b[i];
          gb[i] += g[i] * a[i];
        }
        break;
      }
      case OpKind::kScale: {
        Tensor& ga = grads[n.inputs[0]];
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.aux[0];
        break;
      }
      case OpKind::kRelu: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        Tensor& ga = grads[n.inputs[0]];
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (a[i] > 0.0) ga[i] += g[i];
        }
        break;
      }
      case OpKind::kConcat: {
        Tensor& ga = grads[n.inputs[0]];
        Tensor& gb = grads[n.inputs[1]];
        if (n.value.rank() == 1) {
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[ga.size() + i];
        } else {
          const std::size_t rows = g.shape()[0], ca = ga.shape()[1], cb = gb.shape()[1];
          for (std::size_t r = 0; r < rows; ++r) {
            const auto gr = g.row(r);
            for (std::size_t c = 0; c < ca; ++c) ga.at(r, c) += gr[c];
            for (std::size_t c = 0; c < cb; ++c) gb.at(r, c) += gr[ca + c];
          }
        }
        break;
      }
      case OpKind::kSliceRows: {
        Tensor& ga = grads[n.inputs[0]];
        const std::size_t offset = n.iaux[0] * ga.shape()[1];
        for (std::size_t i = 0; i < g.size(); ++i) ga[offset + i] += g[i];
        break;
      }
      case OpKind::kPairwiseSum:
      case OpKind::kPairwiseProduct: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        const Tensor& b = nodes_[n.inputs[1]].value;
        Tensor& ga = grads[n.inputs[0]];
        Tensor& gb = grads[n.inputs[1]];
        const std::size_t B = a.shape()[0], C = b.shape()[0], h = a.shape()[1];
        const bool product = n.kind == OpKind::kPairwiseProduct;
        for (std::size_t i = 0; i < B; ++i) {
          auto gai = ga.row(i);
          const auto ai = a.row(i);
          for (std::size_t j = 0; j < C; ++j) {
            const auto gij = g.row(i * C + j);
            auto gbj = gb.row(j);
            if (product) {
              const auto bj = b.row(j);
              for (std::size_t k = 0; k < h; ++k) {
                gai[k] += gij[k] * bj[k];
                gbj[k] += gij[k] * ai[k];
              }
            } else {
              for (std::size_t k = 0; k < h; ++k) {
                gai[k] += gij[k];
                gbj[k] += gij[k];
              }
            }
          }
        }
        break;
      }
      case OpKind::kReshape:
        accumulate(grads[n.inputs[0]], g);
        break;
      case OpKind::kSum: {
        Tensor& ga = grads[n.inputs[0]];
        for (double& v : ga.data()) v += g[0];
        break;
      }
      case OpKind::kSoftmaxCrossEntropy: {
        Tensor& gs = grads[n.inputs[0]];
        const std::size_t B = gs.shape()[0], C = gs.shape()[1];
        const double temperature = n.aux.back();
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t j = 0; j < C; ++j) {
            const double target = j == n.iaux[b] ? 1.0 : 0.0;
            gs.at(b, j) += g[b] * (n.aux[b * C + j] - target) / temperature;
          }
        }
        break;
      }
    }
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].tracked) std::fill(grads[i].data().begin(), grads[i].data().end(), 0.0);
  }
  return GradientMap(std::move(grads));
}

}  // namespace atzsl
