#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "atzsl/dataset.hpp"
#include "atzsl/relnet.hpp"
#include "atzsl/tensor.hpp"

namespace atzsl::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

inline NetConfig small_config(std::size_t d_x = 6, std::size_t q = 5) {
  NetConfig c;
  c.input_dim = d_x;
  c.prototype_dim = q;
  c.feature_hidden = {8};
  c.attr_hidden = 7;
  c.embed_dim = 6;
  c.relation_hidden = 5;
  return c;
}

inline PrototypeSet make_protos(const Tensor& matrix, int first_id = 0) {
  PrototypeSet p;
  p.matrix = matrix;
  for (std::size_t i = 0; i < matrix.shape()[0]; ++i) p.class_ids.push_back(first_id + static_cast<int>(i));
  return p;
}

// Central difference of f with respect to one entry of t.
inline double central_difference(const std::function<double()>& f, Tensor& t, std::size_t i, double h) {
  const double saved = t[i];
  t[i] = saved + h;
  const double up = f();
  t[i] = saved - h;
  const double down = f();
  t[i] = saved;
  return (up - down) / (2.0 * h);
}

inline bool gradient_close(double analytic, double numeric, double tol = 1e-4) {
  return std::fabs(analytic - numeric) <= tol * std::max(1.0, std::fabs(analytic));
}

// Scores [B x C] computed with plain loops, independent of the graph code.
// When min_preact is given it receives the smallest |pre-activation| over
// every ReLU, used to skip finite-difference checks that straddle a kink.
Tensor oracle_scores(const RelationNet& net, const Tensor& x, const Tensor& protos, double* min_preact = nullptr);

// Small synthetic dataset that trains in well under a second.
inline SynthSpec tiny_synth() {
  SynthSpec s;
  s.num_seen = 4;
  s.num_unseen = 3;
  s.attr_dim = 5;
  s.feature_dim = 6;
  s.seen_samples = 20;
  s.unseen_samples = 6;
  s.noise = 0.5;
  s.map_scale = 0.3;
  return s;
}

}  // namespace atzsl::testing
