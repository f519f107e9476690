#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "atzsl/graph.hpp"
#include "atzsl/tensor.hpp"

namespace atzsl {

// How the sample and prototype embeddings are joined before the relation head.
// kProduct is the elementwise-product ablation.
enum class Combine { kConcat, kProduct };

std::string to_string(Combine combine);
Combine parse_combine(const std::string& text);

struct NetConfig {
  std::size_t input_dim = 0;      // feature-vector length
  std::size_t prototype_dim = 0;  // attribute-vector length
  std::vector<std::size_t> feature_hidden{512};
  std::size_t attr_hidden = 300;
  std::size_t embed_dim = 512;
  std::size_t relation_hidden = 400;
  double temperature = 1.0;
  Combine combine = Combine::kConcat;

  void validate() const;
  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

// Fully connected layer y = x * weight + bias, weight shaped [in x out].
struct Dense {
  Tensor weight;
  Tensor bias;
  friend bool operator==(const Dense&, const Dense&) = default;
};

enum class Module { kFeature, kAttribute, kRelation };

// Feature extractor (feature), attribute embedder (attribute) and relation
// head (relation). Every layer of the two embedders is followed by ReLU; the
// relation head is Dense -> ReLU -> Dense with a single output unit.
struct RelationNet {
  NetConfig config;
  std::vector<Dense> feature;
  std::vector<Dense> attribute;
  std::vector<Dense> relation;

  // Flat parameter list: each layer contributes weight then bias, modules in
  // the order feature, attribute, relation.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::vector<Module> parameter_modules() const;

  void validate() const;
  friend bool operator==(const RelationNet&, const RelationNet&) = default;
};

// Glorot-uniform weights, zero biases. Deterministic per seed.
RelationNet init_params(const NetConfig& config, std::uint64_t seed);

// Class prototypes, one row per class, in class_ids order.
struct PrototypeSet {
  Tensor matrix;  // [classes x q]
  std::vector<int> class_ids;

  std::size_t size() const noexcept { return class_ids.size(); }
  std::size_t dim() const { return matrix.rank() == 2 ? matrix.shape()[1] : 0; }
  std::optional<std::size_t> index_of(int class_id) const;
  PrototypeSet subset(const std::vector<int>& ids) const;

  // Row count, id uniqueness and optional domain bounds.
  void validate(std::optional<std::pair<double, double>> bounds = std::nullopt) const;
  friend bool operator==(const PrototypeSet&, const PrototypeSet&) = default;
};

// Concatenation of two sets with disjoint ids (a's classes first).
PrototypeSet merge(const PrototypeSet& a, const PrototypeSet& b);

// ---------------------------------------------------------------------------
// Graph-level building blocks, shared by the trainer and the attacks.

struct NetVars {
  std::vector<Var> params;  // parallel to RelationNet::parameters()
};

// Parameters enter the graph as differentiable leaves (trainable=true) or as
// constants when only input/prototype gradients are needed.
NetVars bind_params(Graph& graph, const RelationNet& net, bool trainable);

// x: [B x input_dim] -> [B x embed_dim]
Var feature_embedding(Graph& graph, const RelationNet& net, const NetVars& vars, Var x);
// protos: [C x prototype_dim] -> [C x embed_dim]
Var attribute_embedding(Graph& graph, const RelationNet& net, const NetVars& vars, Var protos);
// Relation scores [B x C] from both embeddings. For concat, the first relation
// layer is applied as W_x^T f + W_p^T g, which equals W^T [f; g] without
// materializing the B*C concatenated rows.
Var relation_head(Graph& graph, const RelationNet& net, const NetVars& vars, Var features, Var attributes);
Var batch_scores(Graph& graph, const RelationNet& net, const NetVars& vars, Var x, Var protos);

// Scores of one sample [input_dim] against every prototype, built per class with
// an explicit concat (or product) of the two embeddings. Returns [C].
Var single_scores(Graph& graph, const RelationNet& net, const NetVars& vars, Var x, Var protos);

// ---------------------------------------------------------------------------
// Tensor-level API.

// r_j for every prototype, in prototype order. x: [input_dim].
Tensor relation_scores(const RelationNet& net, const Tensor& x, const PrototypeSet& protos);
// x: [B x input_dim], protos: [C x q] -> [B x C]
Tensor batch_relation_scores(const RelationNet& net, const Tensor& x, const Tensor& protos);

// Temperature softmax of a score vector (max-subtracted).
Tensor class_probabilities(const Tensor& scores, double temperature);

// Negative log-likelihood of label_index under the temperature softmax.
double ce_loss(const RelationNet& net, const Tensor& x, std::size_t label_index, const PrototypeSet& protos,
               double temperature);

struct LossGradients {
  double loss = 0.0;
  std::vector<double> row_losses;  // per-sample NLL
  std::vector<Tensor> params;  // parallel to RelationNet::parameters()
  Tensor input;                // same shape as x
  Tensor prototypes;           // same shape as the prototype matrix
};

enum class Reduction { kSum, kMean };

// Batched loss over rows of x with per-row label indices, and its gradients.
LossGradients loss_gradients(const RelationNet& net, const Tensor& x, const std::vector<std::size_t>& labels,
                             const Tensor& protos, double temperature, Reduction reduction,
                             bool want_param_grads = true);

// Per-row losses without gradients.
std::vector<double> batch_losses(const RelationNet& net, const Tensor& x, const std::vector<std::size_t>& labels,
                                 const Tensor& protos, double temperature);

// Single-sample gradient of ce_loss.
LossGradients ce_loss_gradients(const RelationNet& net, const Tensor& x, std::size_t label_index,
                                const PrototypeSet& protos, double temperature);

// Index of the best score; ties go to the lowest class id.
std::size_t argmax_by_class_id(std::span<const double> scores, const std::vector<int>& class_ids);

int predict_standard(const RelationNet& net, const Tensor& x, const PrototypeSet& unseen);
int predict_generalized(const RelationNet& net, const Tensor& x, const PrototypeSet& seen,
                        const PrototypeSet& unseen);
// Predicted class id for every row of x over the given prototype set.
std::vector<int> predict_batch(const RelationNet& net, const Tensor& x, const PrototypeSet& protos);

// ---------------------------------------------------------------------------
// Checkpoints: "ATZC" magic, u32 version, config, then every parameter tensor
// with its shape. Doubles are stored as little-endian IEEE-754 bit patterns.

void save_checkpoint(const RelationNet& net, const std::string& path);
RelationNet load_checkpoint(const std::string& path);

}  // namespace atzsl
