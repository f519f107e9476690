#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atzsl/attacks.hpp"
#include "atzsl/dataset.hpp"
#include "atzsl/relnet.hpp"

namespace atzsl {

// Which parameters receive decoupled weight decay.
enum class DecayScope { kGlobal, kAttributeOnly };
// Space of the inner maximization: input features (linf) or seen prototypes (l2).
enum class TrainMode { kImages, kAttributes };

std::string to_string(DecayScope s);
std::string to_string(TrainMode m);
DecayScope parse_decay_scope(const std::string& s);
TrainMode parse_train_mode(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::kImages;
  double alpha = 0.5;  // weight of the clean term
  double temperature = 1.0;
  std::size_t epochs = 400;
  std::size_t batch_size = 64;
  double base_lr = 1e-5;
  double anneal_factor = 0.9;
  std::size_t anneal_period = 10;
  double weight_decay = 1e-5;
  DecayScope decay_scope = DecayScope::kGlobal;
  // Inner attack; its magnitude is replaced by a fresh rho_dist draw per batch.
  AttackSpec attack{.family = AttackFamily::kIfgsm, .norm = Norm::kLinf, .steps = 3, .target = AttackTarget::kInput};
  TruncNormalSpec rho_dist{0.0, 4.0, 0.0, 2.0};
  std::optional<std::size_t> max_iterations;  // cap on total batches
  std::uint64_t seed = 0;

  void validate() const;

  // Input-space defaults: IFGSM, N=3, rho ~ truncN(0, 2) on [0, 4].
  static TrainConfig image_defaults();
  // Prototype-space defaults: l2 sign attack, N=3, rho ~ truncN(0, 14) on [0, 27].
  static TrainConfig attribute_defaults();
};

struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState zeros_like(std::span<const Tensor* const> params);
};

// One bias-corrected Adam update of params in place.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state, double lr);

// lr * factor^floor(epoch / period)
double lr_schedule(double base_lr, std::size_t epoch, double factor = 0.9, std::size_t period = 10);

// Decoupled weight decay (p -= lr * wd * p on the parameters in scope)
// followed by an Adam step.
void apply_update(RelationNet& net, const std::vector<Tensor>& grads, AdamState& state, double lr,
                  double weight_decay, DecayScope scope);

struct BlendedObjective {
  double clean_loss = 0.0;               // mean over the batch
  std::optional<double> adv_loss;        // mean over the batch; absent when alpha == 1
  std::vector<Tensor> grads;             // parallel to RelationNet::parameters()
};

// alpha * L(x; P) + (1 - alpha) * L(x_adv; P_adv), both terms batch means.
// x_adv / protos_adv default to the clean tensors. With alpha == 1 the
// adversarial term is not built; with alpha == 0 the clean term is evaluated
// but kept out of the gradient.
BlendedObjective blended_objective(const RelationNet& net, const Tensor& x, const Tensor* x_adv,
                                   const Tensor& protos, const Tensor* protos_adv,
                                   const std::vector<std::size_t>& labels, double alpha, double temperature);

struct BatchRecord {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  double rho = 0.0;
  double clean_loss = 0.0;
  std::optional<double> adv_loss;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double clean_loss = 0.0;
  std::optional<double> adv_loss;
  std::vector<double> rhos;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::vector<BatchRecord> batches;

  // One JSON object per epoch: epoch, lr, clean_loss, adv_loss, rho.
  std::string to_jsonl() const;
};

struct TrainResult {
  RelationNet net;
  TrainLog log;
};

// Adversarial training against input-space (linf) attacks.
TrainResult train_atzsl_images(const ZslDataset& data, const NetConfig& net_config, const TrainConfig& config);
// Adversarial training against prototype-space (l2) attacks on the seen prototypes.
TrainResult train_atzsl_attributes(const ZslDataset& data, const NetConfig& net_config, const TrainConfig& config);
// Dispatches on config.mode.
TrainResult train(const ZslDataset& data, const NetConfig& net_config, const TrainConfig& config);

}  // namespace atzsl
