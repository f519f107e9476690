#include "atzsl/trainer.hpp"

#include <cmath>
#include <map>

#include <json.hpp>

#include "atzsl/errors.hpp"
#include "atzsl/random.hpp"

namespace atzsl {

std::string to_string(DecayScope s) { return s == DecayScope::kGlobal ? "global" : "attr_module_only"; }
std::string to_string(TrainMode m) { return m == TrainMode::kImages ? "images" : "attributes"; }

DecayScope parse_decay_scope(const std::string& s) {
  if (s == "global") return DecayScope::kGlobal;
  if (s == "attr_module_only") return DecayScope::kAttributeOnly;
  throw std::invalid_argument("unknown decay scope '" + s + "'");
}

TrainMode parse_train_mode(const std::string& s) {
  if (s == "images") return TrainMode::kImages;
  if (s == "attributes") return TrainMode::kAttributes;
  throw std::invalid_argument("unknown training mode '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("train.alpha", "must lie in [0, 1]");
  if (!(temperature > 0.0)) throw ConfigError("train.temperature", "must be positive");
  if (epochs < 1) throw ConfigError("train.epochs", "must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
  if (!(base_lr > 0.0)) throw ConfigError("train.lr", "must be positive");
  if (!(anneal_factor > 0.0 && anneal_factor <= 1.0)) throw ConfigError("train.anneal_factor", "must lie in (0, 1]");
  if (anneal_period < 1) throw ConfigError("train.anneal_period", "must be >= 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay", "must be >= 0");
  if (max_iterations && *max_iterations < 1) throw ConfigError("train.max_iterations", "must be >= 1");
  attack.validate();
  rho_dist.validate();
  if (rho_dist.lo < 0.0) throw ConfigError("train.rho_lo", "attack magnitudes must be >= 0");
  const AttackTarget wanted = mode == TrainMode::kImages ? AttackTarget::kInput : AttackTarget::kPrototype;
  if (attack.target != wanted) {
    throw ConfigError("train.attack_target", to_string(mode) + " training needs a " + to_string(wanted) + " attack");
  }
  if (attack.family == AttackFamily::kZooLike) {
    throw ConfigError("train.attack_family", "training uses white-box attacks (fgsm or ifgsm)");
  }
}

TrainConfig TrainConfig::image_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::attribute_defaults() {
  TrainConfig c;
  c.mode = TrainMode::kAttributes;
  c.attack = AttackSpec{.family = AttackFamily::kIfgsm, .norm = Norm::kL2, .steps = 3, .target = AttackTarget::kPrototype};
  c.rho_dist = TruncNormalSpec{0.0, 27.0, 0.0, 14.0};
  return c;
}

AdamState AdamState::zeros_like(std::span<const Tensor* const> params) {
  AdamState s;
  for (const Tensor* p : params) {
    s.first_moment.emplace_back(p->shape());
    s.second_moment.emplace_back(p->shape());
  }
  return s;
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state, double lr) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters, " +
                         std::to_string(grads.size()) + " gradients, " + std::to_string(state.first_moment.size()) +
                         " moment slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i], grads[i], "adam_step gradient");
    require_same_shape(*params[i], state.first_moment[i], "adam_step moment");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    const auto g = grads[i].data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + state.epsilon);
    }
  }
}

double lr_schedule(double base_lr, std::size_t epoch, double factor, std::size_t period) {
  return base_lr * std::pow(factor, static_cast<double>(epoch / period));
}

void apply_update(RelationNet& net, const std::vector<Tensor>& grads, AdamState& state, double lr,
                  double weight_decay, DecayScope scope) {
  auto params = net.parameters();
  if (weight_decay > 0.0) {
    const auto modules = net.parameter_modules();
    const double shrink = 1.0 - lr * weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (scope == DecayScope::kAttributeOnly && modules[i] != Module::kAttribute) continue;
      for (double& v : params[i]->data()) v *= shrink;
    }
  }
  adam_step(params, grads, state, lr);
}

BlendedObjective blended_objective(const RelationNet& net, const Tensor& x, const Tensor* x_adv,
                                   const Tensor& protos, const Tensor* protos_adv,
                                   const std::vector<std::size_t>& labels, double alpha, double temperature) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
  const double inv_batch = 1.0 / static_cast<double>(labels.size());
  Graph g;
  const NetVars vars = bind_params(g, net, true);
  const Var features = feature_embedding(g, net, vars, g.constant(x));
  const Var attributes = attribute_embedding(g, net, vars, g.constant(protos));
  auto mean_loss = [&](Var f, Var a) {
    return g.scale(g.sum(g.softmax_cross_entropy(relation_head(g, net, vars, f, a), labels, temperature)), inv_batch);
  };

  const Var clean = mean_loss(features, attributes);
  BlendedObjective out;
  out.clean_loss = g.value(clean).item();
  Var objective = g.scale(clean, alpha);
  // A zero-budget attack returns the clean batch bitwise; the blend then
  // collapses to the clean objective.
  const bool same_point = (!x_adv || *x_adv == x) && (!protos_adv || *protos_adv == protos);
  if (alpha < 1.0 && same_point) {
    out.adv_loss = out.clean_loss;
    objective = g.scale(clean, 1.0);
  } else if (alpha < 1.0) {
    const Var adv_features = x_adv ? feature_embedding(g, net, vars, g.constant(*x_adv)) : features;
    const Var adv_attributes = protos_adv ? attribute_embedding(g, net, vars, g.constant(*protos_adv)) : attributes;
    const Var adv = mean_loss(adv_features, adv_attributes);
    out.adv_loss = g.value(adv).item();
    objective = alpha > 0.0 ? g.add(objective, g.scale(adv, 1.0 - alpha)) : g.scale(adv, 1.0);
  }
  const GradientMap grads = g.backward(objective);
  for (Var v : vars.params) out.grads.push_back(grads[v]);
  return out;
}

std::string TrainLog::to_jsonl() const {
  std::string out;
  for (const EpochRecord& e : epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["lr"] = e.lr;
    j["clean_loss"] = e.clean_loss;
    j["adv_loss"] = e.adv_loss ? nlohmann::ordered_json(*e.adv_loss) : nlohmann::ordered_json(nullptr);
    j["rho"] = e.rhos;
    out += j.dump() + "\n";
  }
  return out;
}

namespace {

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(v[i - 1], v[j]);
  }
}

TrainResult run_training(const ZslDataset& data, const NetConfig& net_config, const TrainConfig& config) {
  config.validate();
  const auto violations = validate_splits(data);
  if (!violations.empty()) throw DataError("dataset invariant violated: " + violations.front().detail);
  const std::vector<std::size_t> rows = data.train_rows();
  if (rows.empty()) throw DataError("training split is empty");

  const PrototypeSet seen = data.seen_prototypes();
  std::map<int, std::size_t> label_index;
  for (std::size_t j = 0; j < seen.size(); ++j) label_index[seen.class_ids[j]] = j;
  for (std::size_t r : rows) {
    if (!label_index.count(data.labels[r])) {
      throw DataError("training row " + std::to_string(r) + " is not labelled with a seen class");
    }
  }

  NetConfig nc = net_config;
  nc.temperature = config.temperature;
  nc.input_dim = data.feature_dim();
  nc.prototype_dim = seen.dim();
  TrainResult result{init_params(nc, derive_seed(config.seed, "trainer.init")), {}};
  RelationNet& net = result.net;
  AdamState adam = AdamState::zeros_like(std::as_const(net).parameters());

  Rng order_rng(derive_seed(config.seed, "trainer.shuffle"));
  Rng rho_rng(derive_seed(config.seed, "trainer.rho"));
  const std::uint64_t attack_seed = derive_seed(config.seed, "trainer.attack");
  const bool adversarial = config.alpha < 1.0;

  std::vector<std::size_t> order = rows;
  std::size_t iteration = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.max_iterations && iteration >= *config.max_iterations) break;
    const double lr = lr_schedule(config.base_lr, epoch, config.anneal_factor, config.anneal_period);
    shuffle(order, order_rng);
    EpochRecord record{epoch, lr, 0.0, std::nullopt, {}};
    double clean_sum = 0.0, adv_sum = 0.0;
    std::size_t batches = 0;

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      if (config.max_iterations && iteration >= *config.max_iterations) break;
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const std::vector<std::size_t> batch_rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                order.begin() + static_cast<std::ptrdiff_t>(stop));
      const Tensor x = data.gather(batch_rows);
      std::vector<std::size_t> labels;
      for (std::size_t r : batch_rows) labels.push_back(label_index.at(data.labels[r]));

      const double rho = sample_truncated_normal(config.rho_dist, rho_rng);
      AttackSpec spec = config.attack;
      spec.magnitude = rho;

      BlendedObjective obj;
      try {
        if (!adversarial) {
          obj = blended_objective(net, x, nullptr, seen.matrix, nullptr, labels, config.alpha, config.temperature);
        } else if (config.mode == TrainMode::kImages) {
          const Tensor x_adv = ifgsm_input_attack(net, x, labels, seen.matrix, spec, config.temperature);
          obj = blended_objective(net, x, &x_adv, seen.matrix, nullptr, labels, config.alpha, config.temperature);
        } else {
          const PrototypeSet adv = l2_prototype_attack(net, x, labels, seen, spec, config.temperature,
                                                       attack_seed + iteration);
          obj = blended_objective(net, x, nullptr, seen.matrix, &adv.matrix, labels, config.alpha,
                                  config.temperature);
        }
      } catch (const NumericError& e) {
        throw NumericError("non-finite value at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches) + " (iteration " + std::to_string(iteration) + "): " + e.what());
      }
      for (const Tensor& gr : obj.grads) {
        if (!gr.all_finite()) {
          throw NumericError("non-finite gradient at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batches));
        }
      }
      apply_update(net, obj.grads, adam, lr, config.weight_decay, config.decay_scope);

      result.log.batches.push_back(BatchRecord{epoch, batches, rho, obj.clean_loss, obj.adv_loss});
      record.rhos.push_back(rho);
      clean_sum += obj.clean_loss;
      if (obj.adv_loss) adv_sum += *obj.adv_loss;
      ++batches;
      ++iteration;
    }
    if (batches == 0) break;
    record.clean_loss = clean_sum / static_cast<double>(batches);
    if (adversarial) record.adv_loss = adv_sum / static_cast<double>(batches);
    result.log.epochs.push_back(std::move(record));
  }
  return result;
}

}  // namespace

TrainResult train_atzsl_images(const ZslDataset& data, const NetConfig& net_config, const TrainConfig& config) {
  if (config.mode != TrainMode::kImages) throw ConfigError("train.mode", "train_atzsl_images needs mode=images");
  return run_training(data, net_config, config);
}

TrainResult train_atzsl_attributes(const ZslDataset& data, const NetConfig& net_config, const TrainConfig& config) {
  if (config.mode != TrainMode::kAttributes) {
    throw ConfigError("train.mode", "train_atzsl_attributes needs mode=attributes");
  }
  return run_training(data, net_config, config);
}

TrainResult train(const ZslDataset& data, const NetConfig& net_config, const TrainConfig& config) {
  return config.mode == TrainMode::kImages ? train_atzsl_images(data, net_config, config)
                                           : train_atzsl_attributes(data, net_config, config);
}

}  // namespace atzsl
