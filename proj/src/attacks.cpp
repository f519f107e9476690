#include "atzsl/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "atzsl/errors.hpp"

namespace atzsl {

std::string to_string(AttackFamily f) {
  switch (f) {
    case AttackFamily::kFgsm: return "fgsm";
    case AttackFamily::kIfgsm: return "ifgsm";
    case AttackFamily::kZooLike: return "zoo";
  }
  return "?";
}
std::string to_string(Norm n) { return n == Norm::kLinf ? "linf" : "l2"; }
std::string to_string(AttackTarget t) { return t == AttackTarget::kInput ? "input" : "prototype"; }
std::string to_string(PrototypeMode m) { return m == PrototypeMode::kJoint ? "joint" : "sampled"; }

AttackFamily parse_attack_family(const std::string& s) {
  if (s == "fgsm") return AttackFamily::kFgsm;
  if (s == "ifgsm") return AttackFamily::kIfgsm;
  if (s == "zoo" || s == "zoo_like") return AttackFamily::kZooLike;
  throw std::invalid_argument("unknown attack family '" + s + "'");
}
Norm parse_norm(const std::string& s) {
  if (s == "linf") return Norm::kLinf;
  if (s == "l2") return Norm::kL2;
  throw std::invalid_argument("unknown norm '" + s + "'");
}
AttackTarget parse_attack_target(const std::string& s) {
  if (s == "input") return AttackTarget::kInput;
  if (s == "prototype") return AttackTarget::kPrototype;
  throw std::invalid_argument("unknown attack target '" + s + "'");
}
PrototypeMode parse_prototype_mode(const std::string& s) {
  if (s == "joint") return PrototypeMode::kJoint;
  if (s == "sampled") return PrototypeMode::kSampled;
  throw std::invalid_argument("unknown prototype mode '" + s + "'");
}

void AttackSpec::validate() const {
  if (!(magnitude >= 0.0) || !std::isfinite(magnitude)) throw ConfigError("attack.rho", "must be finite and >= 0");
  if (steps < 1) throw ConfigError("attack.steps", "must be >= 1");
  if (family == AttackFamily::kFgsm && steps != 1) throw ConfigError("attack.steps", "fgsm is single-step");
  if (step_size && (!(*step_size > 0.0) || !std::isfinite(*step_size))) {
    throw ConfigError("attack.step_size", "must be positive or auto");
  }
  if (target == AttackTarget::kInput && norm != Norm::kLinf) {
    throw ConfigError("attack.norm", "input-space attacks use the linf ball");
  }
  if (target == AttackTarget::kPrototype && norm != Norm::kL2) {
    throw ConfigError("attack.norm", "prototype-space attacks use the l2 ball");
  }
  if (family == AttackFamily::kZooLike && target != AttackTarget::kInput) {
    throw ConfigError("attack.target", "the zeroth-order attack works in input space");
  }
  if (clamp && !(clamp->first < clamp->second)) throw ConfigError("attack.clamp", "lower bound must be below upper");
}

double AttackSpec::resolved_step(std::size_t dim) const {
  if (step_size) return *step_size;
  if (norm == Norm::kLinf) return 1.25 * magnitude / static_cast<double>(steps);
  return std::sqrt(magnitude * magnitude / static_cast<double>(dim));
}

std::string AttackSpec::display_name() const {
  switch (family) {
    case AttackFamily::kFgsm: return "FGSM";
    case AttackFamily::kIfgsm: return "IFGSM";
    case AttackFamily::kZooLike: return "ZOO";
  }
  return "?";
}

void TruncNormalSpec::validate() const {
  if (!(lo < hi)) throw ConfigError("rho_dist", "truncation interval must satisfy lo < hi");
  if (!(stddev > 0.0)) throw ConfigError("rho_dist.stddev", "must be positive");
}

double sample_truncated_normal(const TruncNormalSpec& spec, Rng& rng) {
  spec.validate();
  constexpr int kMaxTries = 1'000'000;
  for (int i = 0; i < kMaxTries; ++i) {
    const double v = spec.mean + spec.stddev * standard_normal(rng);
    if (v >= spec.lo && v <= spec.hi) return v;
  }
  throw NumericError("truncated normal: no draw landed in [lo, hi] after 1e6 tries");
}

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void apply_clamp(std::span<double> v, const std::optional<Bounds>& clamp) {
  if (!clamp) return;
  for (double& x : v) x = std::clamp(x, clamp->first, clamp->second);
}

void project_l2_row(std::span<double> adv, std::span<const double> ref, double rho) {
  double norm2 = 0.0;
  for (std::size_t i = 0; i < adv.size(); ++i) norm2 += (adv[i] - ref[i]) * (adv[i] - ref[i]);
  const double norm = std::sqrt(norm2);
  // A point already rescaled onto the sphere can measure an ulp past rho;
  // the relative slack keeps a second projection a no-op.
  if (norm <= rho * (1.0 + 1e-12)) return;
  const double f = rho / norm;
  for (std::size_t i = 0; i < adv.size(); ++i) adv[i] = ref[i] + f * (adv[i] - ref[i]);
}

std::size_t row_count(const Tensor& x) { return x.rank() == 2 ? x.shape()[0] : 1; }

std::vector<bool> all_rows(std::size_t n) { return std::vector<bool>(n, true); }

}  // namespace

Tensor project_linf(const Tensor& x_adv, const Tensor& x_ref, double rho, std::optional<Bounds> clamp) {
  require_same_shape(x_adv, x_ref, "project_linf");
  if (!(rho >= 0.0)) throw std::invalid_argument("project_linf: rho must be >= 0");
  Tensor out = x_adv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], x_ref[i] - rho, x_ref[i] + rho);
  apply_clamp(out.data(), clamp);
  return out;
}

Tensor project_l2(const Tensor& p_adv, const Tensor& p_ref, double rho, std::optional<Bounds> clamp) {
  require_same_shape(p_adv, p_ref, "project_l2");
  if (!(rho >= 0.0)) throw std::invalid_argument("project_l2: rho must be >= 0");
  if (rho == 0.0) {
    Tensor out = p_ref;
    apply_clamp(out.data(), clamp);
    return out;
  }
  Tensor out = p_adv;
  project_l2_row(out.data(), p_ref.data(), rho);
  apply_clamp(out.data(), clamp);
  return out;
}

Tensor linf_sign_ascent(const Tensor& x_ref, const InputObjective& objective, const AttackSpec& spec,
                        const Tensor* start) {
  spec.validate();
  if (spec.magnitude == 0.0) return x_ref;
  const std::size_t rows = row_count(x_ref);
  const std::size_t width = x_ref.size() / std::max<std::size_t>(rows, 1);
  const double eps = spec.resolved_step(width);

  Tensor current = start ? project_linf(*start, x_ref, spec.magnitude, spec.clamp) : x_ref;
  RowLossGrad eval = objective(current);
  Tensor best = current;
  std::vector<double> best_loss = eval.losses;

  for (std::size_t step = 0; step < spec.steps; ++step) {
    Tensor moved = current;
    for (std::size_t i = 0; i < moved.size(); ++i) moved[i] += eps * sign(eval.grad[i]);
    current = project_linf(moved, x_ref, spec.magnitude, spec.clamp);
    if (!spec.keep_best && step + 1 == spec.steps) return current;
    eval = objective(current);
    for (std::size_t r = 0; r < rows; ++r) {
      if (eval.losses[r] >= best_loss[r]) {
        best_loss[r] = eval.losses[r];
        std::copy_n(current.data().begin() + static_cast<std::ptrdiff_t>(r * width), width,
                    best.data().begin() + static_cast<std::ptrdiff_t>(r * width));
      }
    }
  }
  return spec.keep_best ? best : current;
}

Tensor l2_sign_ascent_rows(const Tensor& p_ref, const PrototypeObjective& objective, const AttackSpec& spec,
                           std::uint64_t seed, const std::vector<bool>& perturb) {
  spec.validate();
  if (p_ref.rank() != 2) throw DimensionError("l2_sign_ascent_rows: expected a matrix, got " + shape_string(p_ref.shape()));
  const std::size_t rows = p_ref.shape()[0], q = p_ref.shape()[1];
  const std::vector<bool> mask = perturb.empty() ? all_rows(rows) : perturb;
  if (mask.size() != rows) throw DimensionError("l2_sign_ascent_rows: perturb mask length differs from row count");
  if (spec.magnitude == 0.0) return p_ref;

  std::vector<std::size_t> candidates;
  for (std::size_t r = 0; r < rows; ++r) {
    if (mask[r]) candidates.push_back(r);
  }
  if (candidates.empty()) return p_ref;

  const double eps = spec.resolved_step(q);
  Rng rng(seed);
  Tensor current = p_ref;
  LossGrad eval = objective(current);
  Tensor best = current;
  double best_loss = eval.loss;

  for (std::size_t step = 0; step < spec.steps; ++step) {
    std::vector<std::size_t> chosen = candidates;
    if (spec.prototype_mode == PrototypeMode::kSampled) {
      chosen = {candidates[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(candidates.size()))]};
    }
    for (std::size_t r : chosen) {
      auto row = current.row(r);
      const auto g = eval.grad.row(r);
      for (std::size_t k = 0; k < q; ++k) row[k] += eps * sign(g[k]);
      project_l2_row(row, p_ref.row(r), spec.magnitude);
      apply_clamp(row, spec.clamp);
    }
    if (!spec.keep_best && step + 1 == spec.steps) return current;
    eval = objective(current);
    if (eval.loss >= best_loss) {
      best_loss = eval.loss;
      best = current;
    }
  }
  return spec.keep_best ? best : current;
}

Tensor ifgsm_input_attack(const RelationNet& net, const Tensor& x, const std::vector<std::size_t>& labels,
                          const Tensor& protos, const AttackSpec& spec, double temperature, const Tensor* start) {
  if (spec.target != AttackTarget::kInput) throw ConfigError("attack.target", "ifgsm_input_attack needs target=input");
  const bool single = x.rank() == 1;
  const Tensor batch = single ? x.reshaped(Shape{1, x.size()}) : x;
  InputObjective objective = [&](const Tensor& point) {
    LossGradients lg = loss_gradients(net, point, labels, protos, temperature, Reduction::kSum, false);
    return RowLossGrad{std::move(lg.row_losses), std::move(lg.input)};
  };
  Tensor start_batch;
  if (start) start_batch = single ? start->reshaped(batch.shape()) : *start;
  Tensor out = linf_sign_ascent(batch, objective, spec, start ? &start_batch : nullptr);
  return single ? out.reshaped(x.shape()) : out;
}

Tensor ifgsm_input_attack(const RelationNet& net, const Tensor& x, std::size_t label, const PrototypeSet& protos,
                          const AttackSpec& spec) {
  return ifgsm_input_attack(net, x, std::vector<std::size_t>{label}, protos.matrix, spec, net.config.temperature);
}

PrototypeSet l2_prototype_attack(const RelationNet& net, const Tensor& x, const std::vector<std::size_t>& labels,
                                 const PrototypeSet& protos, const AttackSpec& spec, double temperature,
                                 std::uint64_t seed, const std::vector<bool>& perturb) {
  if (spec.target != AttackTarget::kPrototype) {
    throw ConfigError("attack.target", "l2_prototype_attack needs target=prototype");
  }
  const Tensor batch = x.rank() == 1 ? x.reshaped(Shape{1, x.size()}) : x;
  PrototypeObjective objective = [&](const Tensor& p) {
    LossGradients lg = loss_gradients(net, batch, labels, p, temperature, Reduction::kSum, false);
    return LossGrad{lg.loss, std::move(lg.prototypes)};
  };
  PrototypeSet out = protos;
  out.matrix = l2_sign_ascent_rows(protos.matrix, objective, spec, seed, perturb);
  return out;
}

PrototypeSet l2_prototype_attack(const RelationNet& net, const Tensor& x, std::size_t label,
                                 const PrototypeSet& protos, const AttackSpec& spec, std::uint64_t seed) {
  return l2_prototype_attack(net, x, std::vector<std::size_t>{label}, protos, spec, net.config.temperature, seed);
}

Tensor estimate_gradient(const ScalarOracle& oracle, const Tensor& x, const std::vector<std::size_t>& coords,
                         double h) {
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t c : coords) {
    if (c >= x.size()) throw DimensionError("estimate_gradient: coordinate " + std::to_string(c) + " out of range");
    probe[c] = x[c] + h;
    const double up = oracle(probe);
    probe[c] = x[c] - h;
    const double down = oracle(probe);
    probe[c] = x[c];
    grad[c] = (up - down) / (2.0 * h);
  }
  return grad;
}

Tensor zeroth_order_attack(const ScalarOracle& oracle, const Tensor& x, const AttackSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.magnitude == 0.0) return x;
  const std::size_t dim = x.size();
  const std::size_t subset = std::min(dim, kZerothOrderCoordinates);
  const double eps = spec.resolved_step(dim);
  Rng rng(seed);

  std::vector<std::size_t> order(dim);
  Tensor current = x;
  Tensor best = x;
  double best_loss = oracle(x);
  for (std::size_t step = 0; step < spec.steps; ++step) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Partial Fisher-Yates: the first `subset` entries are a uniform sample.
    for (std::size_t i = 0; i < subset; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(dim - i));
      std::swap(order[i], order[j]);
    }
    const std::vector<std::size_t> coords(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(subset));
    const Tensor grad = estimate_gradient(oracle, current, coords);
    Tensor moved = current;
    for (std::size_t i = 0; i < dim; ++i) moved[i] += eps * sign(grad[i]);
    current = project_linf(moved, x, spec.magnitude, spec.clamp);
    if (spec.keep_best) {
      const double loss = oracle(current);
      if (loss >= best_loss) {
        best_loss = loss;
        best = current;
      }
    }
  }
  return spec.keep_best ? best : current;
}

}  // namespace atzsl
