#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "atzsl/random.hpp"
#include "atzsl/relnet.hpp"
#include "atzsl/tensor.hpp"

namespace atzsl {

enum class AttackFamily { kFgsm, kIfgsm, kZooLike };
enum class Norm { kLinf, kL2 };
enum class AttackTarget { kInput, kPrototype };
// Prototype attacks either move every perturbable prototype at each step, or
// one randomly sampled prototype per step.
enum class PrototypeMode { kJoint, kSampled };

using Bounds = std::pair<double, double>;

std::string to_string(AttackFamily f);
std::string to_string(Norm n);
std::string to_string(AttackTarget t);
std::string to_string(PrototypeMode m);
AttackFamily parse_attack_family(const std::string& s);
Norm parse_norm(const std::string& s);
AttackTarget parse_attack_target(const std::string& s);
PrototypeMode parse_prototype_mode(const std::string& s);

struct AttackSpec {
  AttackFamily family = AttackFamily::kIfgsm;
  Norm norm = Norm::kLinf;
  double magnitude = 0.0;             // rho: per-coordinate (linf) or Euclidean (l2)
  std::size_t steps = 1;              // N
  std::optional<double> step_size;    // nullopt selects the automatic step
  AttackTarget target = AttackTarget::kInput;
  std::optional<Bounds> clamp;
  PrototypeMode prototype_mode = PrototypeMode::kJoint;
  // Return the highest-loss iterate (the starting point included) instead of
  // the last one.
  bool keep_best = true;

  // Throws ConfigError on any broken invariant.
  void validate() const;
  // 1.25 * rho / N for linf; sqrt(rho^2 / dim) for l2, when step_size is unset.
  double resolved_step(std::size_t dim) const;
  // Display name used in reports: FGSM, IFGSM, ZOO.
  std::string display_name() const;
};

struct TruncNormalSpec {
  double lo = 0.0;
  double hi = 4.0;
  double mean = 0.0;
  double stddev = 2.0;

  void validate() const;
};

// Rejection sampling from N(mean, stddev^2) restricted to [lo, hi]. Gives up
// with NumericError after 10^6 rejected draws.
double sample_truncated_normal(const TruncNormalSpec& spec, Rng& rng);

// Clip every coordinate into [ref - rho, ref + rho], then into clamp.
Tensor project_linf(const Tensor& x_adv, const Tensor& x_ref, double rho, std::optional<Bounds> clamp = std::nullopt);
// Radial projection onto the Euclidean ball around ref, then clamp.
Tensor project_l2(const Tensor& p_adv, const Tensor& p_ref, double rho, std::optional<Bounds> clamp = std::nullopt);

// ---------------------------------------------------------------------------
// Generic sign-gradient ascent loops. The objective works on a batch whose
// rows are independent samples (a rank-1 input is a single row).

struct RowLossGrad {
  std::vector<double> losses;  // one per row
  Tensor grad;                 // same shape as the evaluated point
};
using InputObjective = std::function<RowLossGrad(const Tensor& x)>;

// N steps of x' <- project_linf(x' + eps * sign(grad), x_ref, rho). Starts at
// `start` when given (warm start), otherwise at x_ref.
Tensor linf_sign_ascent(const Tensor& x_ref, const InputObjective& objective, const AttackSpec& spec,
                        const Tensor* start = nullptr);

struct LossGrad {
  double loss = 0.0;
  Tensor grad;
};
using PrototypeObjective = std::function<LossGrad(const Tensor& protos)>;

// N steps of row-wise p' <- project_l2(p' + eps * sign(grad_p), p, rho) over
// the rows flagged in `perturb` (all rows when empty).
Tensor l2_sign_ascent_rows(const Tensor& p_ref, const PrototypeObjective& objective, const AttackSpec& spec,
                           std::uint64_t seed, const std::vector<bool>& perturb = {});

// ---------------------------------------------------------------------------
// White-box attacks against a relation network.

// x: [B x d] (or [d]); labels index rows of protos.
Tensor ifgsm_input_attack(const RelationNet& net, const Tensor& x, const std::vector<std::size_t>& labels,
                          const Tensor& protos, const AttackSpec& spec, double temperature,
                          const Tensor* start = nullptr);
Tensor ifgsm_input_attack(const RelationNet& net, const Tensor& x, std::size_t label, const PrototypeSet& protos,
                          const AttackSpec& spec);

// Adversarial copy of protos maximizing the summed loss of the batch.
PrototypeSet l2_prototype_attack(const RelationNet& net, const Tensor& x, const std::vector<std::size_t>& labels,
                                 const PrototypeSet& protos, const AttackSpec& spec, double temperature,
                                 std::uint64_t seed, const std::vector<bool>& perturb = {});
PrototypeSet l2_prototype_attack(const RelationNet& net, const Tensor& x, std::size_t label,
                                 const PrototypeSet& protos, const AttackSpec& spec, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Black-box attack from loss evaluations only.

using ScalarOracle = std::function<double(const Tensor& x)>;

inline constexpr double kZerothOrderProbe = 1e-3;
inline constexpr std::size_t kZerothOrderCoordinates = 64;

// Central differences on the listed coordinates; other coordinates get 0.
Tensor estimate_gradient(const ScalarOracle& oracle, const Tensor& x, const std::vector<std::size_t>& coords,
                         double h = kZerothOrderProbe);

// Sign steps along the estimated gradient, projected onto the linf ball. Each
// step draws min(dim, 64) coordinates without replacement.
Tensor zeroth_order_attack(const ScalarOracle& oracle, const Tensor& x, const AttackSpec& spec, std::uint64_t seed);

}  // namespace atzsl
