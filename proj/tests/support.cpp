#include "support.hpp"

#include <algorithm>
#include <limits>

namespace atzsl::testing {
namespace {

std::vector<double> dense(const Dense& layer, const std::vector<double>& in, bool relu, double& min_preact) {
  const std::size_t n_in = layer.weight.shape()[0], n_out = layer.weight.shape()[1];
  std::vector<double> out(n_out);
  for (std::size_t o = 0; o < n_out; ++o) {
    double acc = layer.bias[o];
    for (std::size_t i = 0; i < n_in; ++i) acc += in[i] * layer.weight.at(i, o);
    if (relu) {
      min_preact = std::min(min_preact, std::fabs(acc));
      acc = std::max(acc, 0.0);
    }
    out[o] = acc;
  }
  return out;
}

std::vector<double> row_vector(const Tensor& t, std::size_t r) {
  const auto row = t.row(r);
  return {row.begin(), row.end()};
}

}  // namespace

Tensor oracle_scores(const RelationNet& net, const Tensor& x, const Tensor& protos, double* min_preact) {
  double kink = std::numeric_limits<double>::infinity();
  const std::size_t b = x.rank() == 1 ? 1 : x.shape()[0];
  const Tensor xs = x.rank() == 1 ? x.reshaped(Shape{1, x.size()}) : x;
  const std::size_t c = protos.shape()[0];
  std::vector<std::vector<double>> feats, attrs;
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double> h = row_vector(xs, i);
    for (const Dense& layer : net.feature) h = dense(layer, h, true, kink);
    feats.push_back(h);
  }
  for (std::size_t j = 0; j < c; ++j) {
    std::vector<double> h = row_vector(protos, j);
    for (const Dense& layer : net.attribute) h = dense(layer, h, true, kink);
    attrs.push_back(h);
  }
  Tensor out(Shape{b, c});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      std::vector<double> joined;
      if (net.config.combine == Combine::kConcat) {
        joined = feats[i];
        joined.insert(joined.end(), attrs[j].begin(), attrs[j].end());
      } else {
        for (std::size_t k = 0; k < feats[i].size(); ++k) joined.push_back(feats[i][k] * attrs[j][k]);
      }
      std::vector<double> h = dense(net.relation[0], joined, true, kink);
      out.at(i, j) = dense(net.relation[1], h, false, kink)[0];
    }
  }
  if (min_preact) *min_preact = kink;
  return out;
}

}  // namespace atzsl::testing
