#include "atzsl/relnet.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "atzsl/errors.hpp"
#include "atzsl/io.hpp"
#include "atzsl/random.hpp"

namespace atzsl {

std::string to_string(Combine combine) { return combine == Combine::kConcat ? "concat" : "product"; }

Combine parse_combine(const std::string& text) {
  if (text == "concat") return Combine::kConcat;
  if (text == "product") return Combine::kProduct;
  throw std::invalid_argument("unknown combine operator '" + text + "'");
}

void NetConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("net.") + name, "must be >= 1");
  };
  positive(input_dim, "input_dim");
  positive(prototype_dim, "prototype_dim");
  for (std::size_t w : feature_hidden) positive(w, "feature_hidden");
  positive(attr_hidden, "attr_hidden");
  positive(embed_dim, "embed_dim");
  positive(relation_hidden, "relation_hidden");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("net.temperature", "must be a positive finite number");
  }
}

namespace {

struct LayerShape {
  std::size_t in, out;
};

std::vector<LayerShape> feature_shapes(const NetConfig& c) {
  std::vector<LayerShape> shapes;
  std::size_t in = c.input_dim;
  for (std::size_t w : c.feature_hidden) {
    shapes.push_back({in, w});
    in = w;
  }
  shapes.push_back({in, c.embed_dim});
  return shapes;
}

std::vector<LayerShape> attribute_shapes(const NetConfig& c) {
  return {{c.prototype_dim, c.attr_hidden}, {c.attr_hidden, c.embed_dim}};
}

std::vector<LayerShape> relation_shapes(const NetConfig& c) {
  const std::size_t in = c.combine == Combine::kConcat ? 2 * c.embed_dim : c.embed_dim;
  return {{in, c.relation_hidden}, {c.relation_hidden, 1}};
}

Dense glorot(LayerShape s, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(s.in + s.out));
  Tensor w(Shape{s.in, s.out});
  for (double& v : w.data()) v = uniform(rng, -limit, limit);
  return Dense{std::move(w), Tensor(Shape{s.out})};
}

void check_layers(const std::vector<Dense>& layers, const std::vector<LayerShape>& shapes, const char* module) {
  if (layers.size() != shapes.size()) {
    throw DimensionError(std::string(module) + ": expected " + std::to_string(shapes.size()) + " layers, got " +
                         std::to_string(layers.size()));
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].weight.shape() != Shape{shapes[i].in, shapes[i].out} || layers[i].bias.shape() != Shape{shapes[i].out}) {
      throw DimensionError(std::string(module) + " layer " + std::to_string(i) + ": weight " +
                           shape_string(layers[i].weight.shape()) + " bias " + shape_string(layers[i].bias.shape()) +
                           " inconsistent with config");
    }
  }
}

// Dense layers with ReLU after every layer.
Var mlp(Graph& g, const NetVars& vars, std::size_t first, std::size_t layers, Var x) {
  for (std::size_t i = 0; i < layers; ++i) {
    x = g.relu(g.add_bias(g.matmul(x, vars.params[first + 2 * i]), vars.params[first + 2 * i + 1]));
  }
  return x;
}

std::size_t attribute_offset(const RelationNet& net) { return 2 * net.feature.size(); }
std::size_t relation_offset(const RelationNet& net) { return 2 * (net.feature.size() + net.attribute.size()); }

Tensor as_row_matrix(const Tensor& x, std::size_t width, const char* what) {
  if (x.rank() != 1 || x.size() != width) {
    throw DimensionError(std::string(what) + ": expected a vector of length " + std::to_string(width) + ", got " +
                         shape_string(x.shape()));
  }
  return x.reshaped(Shape{1, width});
}

void check_batch(const RelationNet& net, const Tensor& x, const Tensor& protos) {
  if (x.rank() != 2 || x.shape()[1] != net.config.input_dim) {
    throw DimensionError("inputs " + shape_string(x.shape()) + " do not match input_dim " +
                         std::to_string(net.config.input_dim));
  }
  if (protos.rank() != 2 || protos.shape()[1] != net.config.prototype_dim) {
    throw DimensionError("prototypes " + shape_string(protos.shape()) + " do not match prototype_dim " +
                         std::to_string(net.config.prototype_dim));
  }
}

}  // namespace

std::vector<Tensor*> RelationNet::parameters() {
  std::vector<Tensor*> out;
  for (auto* layers : {&feature, &attribute, &relation}) {
    for (Dense& d : *layers) {
      out.push_back(&d.weight);
      out.push_back(&d.bias);
    }
  }
  return out;
}

std::vector<const Tensor*> RelationNet::parameters() const {
  std::vector<const Tensor*> out;
  for (auto* layers : {&feature, &attribute, &relation}) {
    for (const Dense& d : *layers) {
      out.push_back(&d.weight);
      out.push_back(&d.bias);
    }
  }
  return out;
}

std::vector<Module> RelationNet::parameter_modules() const {
  std::vector<Module> out;
  out.insert(out.end(), 2 * feature.size(), Module::kFeature);
  out.insert(out.end(), 2 * attribute.size(), Module::kAttribute);
  out.insert(out.end(), 2 * relation.size(), Module::kRelation);
  return out;
}

void RelationNet::validate() const {
  config.validate();
  check_layers(feature, feature_shapes(config), "feature module");
  check_layers(attribute, attribute_shapes(config), "attribute module");
  check_layers(relation, relation_shapes(config), "relation module");
}

RelationNet init_params(const NetConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  RelationNet net;
  net.config = config;
  for (auto s : feature_shapes(config)) net.feature.push_back(glorot(s, rng));
  for (auto s : attribute_shapes(config)) net.attribute.push_back(glorot(s, rng));
  for (auto s : relation_shapes(config)) net.relation.push_back(glorot(s, rng));
  return net;
}

std::optional<std::size_t> PrototypeSet::index_of(int class_id) const {
  auto it = std::find(class_ids.begin(), class_ids.end(), class_id);
  if (it == class_ids.end()) return std::nullopt;
  return static_cast<std::size_t>(it - class_ids.begin());
}

PrototypeSet PrototypeSet::subset(const std::vector<int>& ids) const {
  const std::size_t q = dim();
  PrototypeSet out;
  out.matrix = Tensor(Shape{ids.size(), q});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    auto idx = index_of(ids[r]);
    if (!idx) throw DataError("class " + std::to_string(ids[r]) + " has no prototype");
    std::copy(matrix.row(*idx).begin(), matrix.row(*idx).end(), out.matrix.row(r).begin());
  }
  out.class_ids = ids;
  return out;
}

void PrototypeSet::validate(std::optional<std::pair<double, double>> bounds) const {
  if (matrix.rank() != 2 || matrix.shape()[0] != class_ids.size()) {
    throw DimensionError("prototype matrix " + shape_string(matrix.shape()) + " for " +
                         std::to_string(class_ids.size()) + " class ids");
  }
  std::set<int> seen(class_ids.begin(), class_ids.end());
  if (seen.size() != class_ids.size()) throw DataError("duplicate class id in prototype set");
  if (!matrix.all_finite()) throw DataError("non-finite prototype entry");
  if (bounds) {
    for (std::size_t i = 0; i < matrix.size(); ++i) {
      if (matrix[i] < bounds->first || matrix[i] > bounds->second) {
        throw DataError("prototype entry " + io::format_double(matrix[i]) + " of class " +
                        std::to_string(class_ids[i / dim()]) + " outside attribute bounds");
      }
    }
  }
}

PrototypeSet merge(const PrototypeSet& a, const PrototypeSet& b) {
  if (a.dim() != b.dim()) throw DimensionError("merge: prototype widths differ");
  for (int id : b.class_ids) {
    if (a.index_of(id)) throw std::invalid_argument("class id " + std::to_string(id) + " present in both sets");
  }
  PrototypeSet out;
  std::vector<double> values(a.matrix.values());
  values.insert(values.end(), b.matrix.values().begin(), b.matrix.values().end());
  out.matrix = Tensor(Shape{a.size() + b.size(), a.dim()}, std::move(values));
  out.class_ids = a.class_ids;
  out.class_ids.insert(out.class_ids.end(), b.class_ids.begin(), b.class_ids.end());
  return out;
}

NetVars bind_params(Graph& graph, const RelationNet& net, bool trainable) {
  NetVars vars;
  for (const Tensor* p : net.parameters()) vars.params.push_back(trainable ? graph.input(*p) : graph.constant(*p));
  return vars;
}

Var feature_embedding(Graph& graph, const RelationNet& net, const NetVars& vars, Var x) {
  return mlp(graph, vars, 0, net.feature.size(), x);
}

Var attribute_embedding(Graph& graph, const RelationNet& net, const NetVars& vars, Var protos) {
  return mlp(graph, vars, attribute_offset(net), net.attribute.size(), protos);
}

Var relation_head(Graph& graph, const RelationNet& net, const NetVars& vars, Var features, Var attributes) {
  const std::size_t off = relation_offset(net);
  const Var w1 = vars.params[off], b1 = vars.params[off + 1];
  const Var w2 = vars.params[off + 2], b2 = vars.params[off + 3];
  const std::size_t B = graph.value(features).shape()[0];
  const std::size_t C = graph.value(attributes).shape()[0];
  const std::size_t e = net.config.embed_dim;

  Var pre;
  if (net.config.combine == Combine::kConcat) {
    const Var from_x = graph.matmul(features, graph.slice_rows(w1, 0, e));
    const Var from_p = graph.matmul(attributes, graph.slice_rows(w1, e, 2 * e));
    pre = graph.pairwise_sum(from_x, from_p);
  } else {
    pre = graph.matmul(graph.pairwise_product(features, attributes), w1);
  }
  const Var hidden = graph.relu(graph.add_bias(pre, b1));
  const Var out = graph.add_bias(graph.matmul(hidden, w2), b2);
  return graph.reshape(out, Shape{B, C});
}

Var batch_scores(Graph& graph, const RelationNet& net, const NetVars& vars, Var x, Var protos) {
  return relation_head(graph, net, vars, feature_embedding(graph, net, vars, x),
                       attribute_embedding(graph, net, vars, protos));
}

Var single_scores(Graph& graph, const RelationNet& net, const NetVars& vars, Var x, Var protos) {
  const std::size_t e = net.config.embed_dim;
  const std::size_t d = graph.value(x).size();
  const Var f = graph.reshape(feature_embedding(graph, net, vars, graph.reshape(x, Shape{1, d})), Shape{e});
  const Var attrs = attribute_embedding(graph, net, vars, protos);
  const std::size_t off = relation_offset(net);
  const std::size_t C = graph.value(protos).shape()[0];

  std::optional<Var> scores;
  for (std::size_t j = 0; j < C; ++j) {
    const Var a = graph.reshape(graph.slice_rows(attrs, j, j + 1), Shape{e});
    const Var joint = net.config.combine == Combine::kConcat ? graph.concat(f, a) : graph.mul(f, a);
    const std::size_t width = graph.value(joint).size();
    Var h = graph.matmul(graph.reshape(joint, Shape{1, width}), vars.params[off]);
    h = graph.relu(graph.add_bias(h, vars.params[off + 1]));
    const Var r = graph.reshape(graph.add_bias(graph.matmul(h, vars.params[off + 2]), vars.params[off + 3]), Shape{1});
    scores = scores ? graph.concat(*scores, r) : r;
  }
  if (!scores) throw std::invalid_argument("relation scores requested for an empty prototype set");
  return *scores;
}

Tensor relation_scores(const RelationNet& net, const Tensor& x, const PrototypeSet& protos) {
  as_row_matrix(x, net.config.input_dim, "relation_scores");
  check_batch(net, x.reshaped(Shape{1, x.size()}), protos.matrix);
  Graph g;
  const NetVars vars = bind_params(g, net, false);
  return g.value(single_scores(g, net, vars, g.constant(x), g.constant(protos.matrix)));
}

Tensor batch_relation_scores(const RelationNet& net, const Tensor& x, const Tensor& protos) {
  check_batch(net, x, protos);
  Graph g;
  const NetVars vars = bind_params(g, net, false);
  return g.value(batch_scores(g, net, vars, g.constant(x), g.constant(protos)));
}

Tensor class_probabilities(const Tensor& scores, double temperature) {
  if (!(temperature > 0.0)) throw NumericError("temperature must be positive");
  if (scores.empty()) throw std::invalid_argument("class_probabilities of an empty score vector");
  if (!scores.all_finite()) throw NumericError("class_probabilities requires finite scores");
  double mx = scores[0] / temperature;
  for (double s : scores.data()) mx = std::max(mx, s / temperature);
  Tensor out(scores.shape());
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] / temperature - mx);
    z += out[i];
  }
  for (double& p : out.data()) p /= z;
  return out;
}

double ce_loss(const RelationNet& net, const Tensor& x, std::size_t label_index, const PrototypeSet& protos,
               double temperature) {
  if (label_index >= protos.size()) {
    throw std::out_of_range("label index " + std::to_string(label_index) + " for " + std::to_string(protos.size()) +
                            " prototypes");
  }
  const Tensor scores = relation_scores(net, x, protos);
  Graph g;
  const Var s = g.constant(scores.reshaped(Shape{1, scores.size()}));
  return g.value(g.softmax_cross_entropy(s, {label_index}, temperature)).item();
}

LossGradients loss_gradients(const RelationNet& net, const Tensor& x, const std::vector<std::size_t>& labels,
                             const Tensor& protos, double temperature, Reduction reduction, bool want_param_grads) {
  check_batch(net, x, protos);
  Graph g;
  const NetVars vars = bind_params(g, net, want_param_grads);
  const Var xv = g.input(x);
  const Var pv = g.input(protos);
  const Var scores = batch_scores(g, net, vars, xv, pv);
  const Var per_row = g.softmax_cross_entropy(scores, labels, temperature);
  Var loss = g.sum(per_row);
  if (reduction == Reduction::kMean) loss = g.scale(loss, 1.0 / static_cast<double>(labels.size()));
  const GradientMap grads = g.backward(loss);

  LossGradients out;
  out.loss = g.value(loss).item();
  out.row_losses = g.value(per_row).values();
  if (want_param_grads) {
    for (Var v : vars.params) out.params.push_back(grads[v]);
  }
  out.input = grads[xv];
  out.prototypes = grads[pv];
  return out;
}

std::vector<double> batch_losses(const RelationNet& net, const Tensor& x, const std::vector<std::size_t>& labels,
                                 const Tensor& protos, double temperature) {
  check_batch(net, x, protos);
  Graph g;
  const NetVars vars = bind_params(g, net, false);
  const Var scores = batch_scores(g, net, vars, g.constant(x), g.constant(protos));
  return g.value(g.softmax_cross_entropy(scores, labels, temperature)).values();
}

LossGradients ce_loss_gradients(const RelationNet& net, const Tensor& x, std::size_t label_index,
                                const PrototypeSet& protos, double temperature) {
  const Tensor row = as_row_matrix(x, net.config.input_dim, "ce_loss_gradients");
  LossGradients out = loss_gradients(net, row, {label_index}, protos.matrix, temperature, Reduction::kSum);
  out.input = out.input.reshaped(x.shape());
  return out;
}

std::size_t argmax_by_class_id(std::span<const double> scores, const std::vector<int>& class_ids) {
  if (scores.empty()) throw std::invalid_argument("argmax over an empty prototype set");
  std::size_t best = 0;
  for (std::size_t j = 1; j < scores.size(); ++j) {
    if (scores[j] > scores[best] || (scores[j] == scores[best] && class_ids[j] < class_ids[best])) best = j;
  }
  return best;
}

// The temperature softmax is monotone in the scores, so the argmax over class
// probabilities is taken directly on the scores for every temperature.
int predict_standard(const RelationNet& net, const Tensor& x, const PrototypeSet& unseen) {
  if (unseen.size() == 0) throw std::invalid_argument("predict_standard: empty unseen prototype set");
  const Tensor scores = batch_relation_scores(net, as_row_matrix(x, net.config.input_dim, "predict_standard"),
                                              unseen.matrix);
  return unseen.class_ids[argmax_by_class_id(scores.data(), unseen.class_ids)];
}

int predict_generalized(const RelationNet& net, const Tensor& x, const PrototypeSet& seen,
                        const PrototypeSet& unseen) {
  if (seen.size() == 0 || unseen.size() == 0) {
    throw std::invalid_argument("predict_generalized: seen and unseen prototype sets must be non-empty");
  }
  return predict_standard(net, x, merge(seen, unseen));
}

std::vector<int> predict_batch(const RelationNet& net, const Tensor& x, const PrototypeSet& protos) {
  if (protos.size() == 0) throw std::invalid_argument("predict_batch: empty prototype set");
  constexpr std::size_t kChunk = 256;
  const std::size_t n = x.rank() == 2 ? x.shape()[0] : 0;
  const std::size_t d = net.config.input_dim;
  std::vector<int> out;
  out.reserve(n);
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t stop = std::min(n, start + kChunk);
    std::vector<double> rows(x.values().begin() + static_cast<std::ptrdiff_t>(start * d),
                             x.values().begin() + static_cast<std::ptrdiff_t>(stop * d));
    const Tensor scores = batch_relation_scores(net, Tensor(Shape{stop - start, d}, std::move(rows)), protos.matrix);
    for (std::size_t r = 0; r < stop - start; ++r) {
      out.push_back(protos.class_ids[argmax_by_class_id(scores.row(r), protos.class_ids)]);
    }
  }
  return out;
}

namespace {
constexpr std::string_view kCheckpointMagic = "ATZC";
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(const RelationNet& net, const std::string& path) {
  net.validate();
  io::Writer w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  const NetConfig& c = net.config;
  w.u64(c.input_dim);
  w.u64(c.prototype_dim);
  w.u32(static_cast<std::uint32_t>(c.feature_hidden.size()));
  for (std::size_t h : c.feature_hidden) w.u64(h);
  w.u64(c.attr_hidden);
  w.u64(c.embed_dim);
  w.u64(c.relation_hidden);
  w.f64(c.temperature);
  w.u32(c.combine == Combine::kConcat ? 0 : 1);
  const auto params = net.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const Tensor* p : params) {
    w.u32(static_cast<std::uint32_t>(p->rank()));
    for (std::size_t e : p->shape()) w.u64(e);
    for (double v : p->data()) w.f64(v);
  }
  io::write_file_atomic(path, w.buffer());
}

RelationNet load_checkpoint(const std::string& path) {
  const std::string bytes = io::read_file(path);
  io::Reader r(bytes, path);
  if (r.bytes(4) != kCheckpointMagic) r.fail("bad checkpoint magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  NetConfig c;
  c.input_dim = r.u64();
  c.prototype_dim = r.u64();
  const std::uint32_t depth = r.u32();
  if (depth > 1024) r.fail("implausible feature depth " + std::to_string(depth));
  c.feature_hidden.resize(depth);
  for (auto& h : c.feature_hidden) h = r.u64();
  c.attr_hidden = r.u64();
  c.embed_dim = r.u64();
  c.relation_hidden = r.u64();
  c.temperature = r.f64();
  const std::uint32_t combine = r.u32();
  if (combine > 1) r.fail("bad combine tag");
  c.combine = combine == 0 ? Combine::kConcat : Combine::kProduct;
  try {
    c.validate();
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid network config (") + e.what() + ")");
  }

  RelationNet net = init_params(c, 0);
  auto params = net.parameters();
  if (r.u32() != params.size()) r.fail("parameter count does not match config");
  for (Tensor* p : params) {
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& e : shape) e = r.u64();
    if (shape != p->shape()) r.fail("parameter shape " + shape_string(shape) + " does not match config");
    for (double& v : p->data()) v = r.f64();
    if (!p->all_finite()) r.fail("non-finite parameter");
  }
  if (!r.at_end()) r.fail("trailing bytes");
  return net;
}

}  // namespace atzsl
