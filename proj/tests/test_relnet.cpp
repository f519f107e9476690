#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "atzsl/errors.hpp"
#include "atzsl/graph.hpp"
#include "atzsl/io.hpp"
#include "atzsl/relnet.hpp"
#include "support.hpp"

namespace atzsl {
namespace {

using testing::make_protos;
using testing::oracle_scores;
using testing::random_tensor;
using testing::small_config;

// One unit everywhere: f = relu(a x), g = relu(b p), r = v relu(c f + d g + e) + k.
RelationNet toy_net(double a, double b, double c, double d, double e, double v, double k) {
  NetConfig cfg;
  cfg.input_dim = 1;
  cfg.prototype_dim = 1;
  cfg.feature_hidden = {};
  cfg.attr_hidden = 1;
  cfg.embed_dim = 1;
  cfg.relation_hidden = 1;
  RelationNet net = init_params(cfg, 0);
  net.feature[0].weight = Tensor::matrix({{a}});
  // The attribute module is q -> attr_hidden -> embed; make its first layer the identity.
  net.attribute[0].weight = Tensor::matrix({{1.0}});
  net.attribute[1].weight = Tensor::matrix({{b}});
  net.relation[0].weight = Tensor::matrix({{c}, {d}});
  net.relation[0].bias = Tensor::vector({e});
  net.relation[1].weight = Tensor::matrix({{v}});
  net.relation[1].bias = Tensor::vector({k});
  return net;
}

TEST(RelationScores, ZeroHeadGivesBias) {
  std::mt19937_64 rng(1);
  RelationNet net = init_params(small_config(), 4);
  for (double& w : net.relation[1].weight.data()) w = 0.0;
  net.relation[1].bias = Tensor::vector({0.75});
  const PrototypeSet protos = make_protos(random_tensor({4, 5}, rng));
  for (int trial = 0; trial < 3; ++trial) {
    const Tensor scores = relation_scores(net, random_tensor({6}, rng), protos);
    for (double s : scores.data()) EXPECT_EQ(s, 0.75);
  }
}

TEST(RelationScores, OneScorePerPrototype) {
  std::mt19937_64 rng(2);
  const RelationNet net = init_params(small_config(), 4);
  EXPECT_EQ(relation_scores(net, random_tensor({6}, rng), make_protos(random_tensor({7, 5}, rng))).shape(), Shape{7});
}

TEST(RelationScores, HandComputedToyNet) {
  const RelationNet net = toy_net(2.0, 0.5, 1.5, -1.0, 0.25, 3.0, -0.5);
  const double x = 0.8, p0 = 1.2, p1 = 4.0;
  auto hand = [](double xv, double pv) {
    const double f = std::max(0.0, 2.0 * xv);
    const double g = std::max(0.0, 0.5 * std::max(0.0, pv));
    return 3.0 * std::max(0.0, 1.5 * f - 1.0 * g + 0.25) - 0.5;
  };
  const Tensor scores = relation_scores(net, Tensor::vector({x}), make_protos(Tensor::matrix({{p0}, {p1}})));
  EXPECT_NEAR(scores[0], hand(x, p0), 1e-12);
  EXPECT_NEAR(scores[1], hand(x, p1), 1e-12);
}

TEST(RelationScores, BatchedPathMatchesLoopOracle) {
  std::mt19937_64 rng(3);
  for (Combine combine : {Combine::kConcat, Combine::kProduct}) {
    NetConfig cfg = small_config();
    cfg.feature_hidden = {9, 4};
    cfg.combine = combine;
    const RelationNet net = init_params(cfg, 11);
    const Tensor x = random_tensor({5, 6}, rng);
    const Tensor p = random_tensor({4, 5}, rng);
    const Tensor batched = batch_relation_scores(net, x, p);
    const Tensor oracle = oracle_scores(net, x, p);
    for (std::size_t i = 0; i < batched.size(); ++i) EXPECT_NEAR(batched[i], oracle[i], 1e-12);
    for (std::size_t b = 0; b < 5; ++b) {
      const Tensor single = relation_scores(net, Tensor::vector({x.row(b).begin(), x.row(b).end()}), make_protos(p));
      for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(single[j], batched.at(b, j), 1e-12);
    }
  }
}

TEST(RelationScores, DimensionMismatchThrows) {
  const RelationNet net = init_params(small_config(), 1);
  EXPECT_THROW(relation_scores(net, Tensor(Shape{5}), make_protos(Tensor(Shape{2, 5}))), DimensionError);
  EXPECT_THROW(relation_scores(net, Tensor(Shape{6}), make_protos(Tensor(Shape{2, 4}))), DimensionError);
}

TEST(ClassProbabilities, EqualScoresAreUniform) {
  for (double gamma : {0.1, 1.0, 7.0}) {
    const Tensor p = class_probabilities(Tensor::vector({3, 3, 3, 3}), gamma);
    for (double v : p.data()) EXPECT_NEAR(v, 0.25, 1e-15);
  }
}

TEST(ClassProbabilities, HugeTemperatureApproachesUniform) {
  const Tensor p = class_probabilities(Tensor::vector({-40, 3, 17.5, 100}), 1e9);
  for (double v : p.data()) EXPECT_NEAR(v, 0.25, 1e-6);
}

TEST(ClassProbabilities, AnalyticTwoClass) {
  const Tensor p = class_probabilities(Tensor::vector({std::log(2.0), 0.0}), 1.0);
  EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-15);
}

TEST(ClassProbabilities, RejectsNonPositiveTemperature) {
  EXPECT_THROW(class_probabilities(Tensor::vector({1, 2}), 0.0), NumericError);
  EXPECT_THROW(class_probabilities(Tensor::vector({1, 2}), -1.0), NumericError);
}

TEST(ClassProbabilities, OnTheSimplex) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor s = random_tensor({9}, rng, -500, 500);
    const Tensor p = class_probabilities(s, 0.5 + trial * 0.1);
    double total = 0.0;
    for (double v : p.data()) {
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(ClassProbabilities, ArgmaxInvariantToTemperature) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor s = random_tensor({6}, rng, -5, 5);
    const std::size_t want = argmax_by_class_id(s.data(), {0, 1, 2, 3, 4, 5});
    for (double gamma : {0.1, 1.0, 10.0}) {
      const Tensor p = class_probabilities(s, gamma);
      EXPECT_EQ(argmax_by_class_id(p.data(), {0, 1, 2, 3, 4, 5}), want);
    }
  }
}

TEST(CeLoss, CertainTrueClassGivesZero) {
  // Scores 0 and 1e4: the true class holds all the probability mass.
  const RelationNet net = toy_net(1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0);
  const PrototypeSet protos = make_protos(Tensor::matrix({{0.0}, {1e4}}));
  EXPECT_EQ(ce_loss(net, Tensor::vector({0.3}), 1, protos, 1.0), 0.0);
}

TEST(CeLoss, UniformGivesLogN) {
  std::mt19937_64 rng(6);
  RelationNet net = init_params(small_config(), 2);
  for (double& w : net.relation[1].weight.data()) w = 0.0;
  const PrototypeSet protos = make_protos(random_tensor({7, 5}, rng));
  EXPECT_NEAR(ce_loss(net, random_tensor({6}, rng), 3, protos, 1.0), std::log(7.0), 1e-12);
}

TEST(CeLoss, MatchesDirectSummation) {
  std::mt19937_64 rng(7);
  const RelationNet net = init_params(small_config(), 3);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_tensor({6}, rng, -3, 3);
    const Tensor p = random_tensor({5, 5}, rng, -3, 3);
    const double gamma = 0.5 + 0.05 * trial;
    const std::size_t label = static_cast<std::size_t>(trial) % 5;
    const Tensor r = oracle_scores(net, x, p);
    double z = 0.0;
    for (double s : r.data()) z += std::exp(s / gamma);
    // -sum_j q_j log p_j with a one-hot q
    double direct = 0.0;
    for (std::size_t j = 0; j < 5; ++j) direct -= (j == label ? 1.0 : 0.0) * std::log(std::exp(r[j] / gamma) / z);
    EXPECT_NEAR(ce_loss(net, x, label, make_protos(p), gamma), direct, 1e-12);
  }
}

TEST(CeLoss, NonNegative) {
  std::mt19937_64 rng(8);
  const RelationNet net = init_params(small_config(), 5);
  for (int trial = 0; trial < 100; ++trial) {
    EXPECT_GE(ce_loss(net, random_tensor({6}, rng, -9, 9), 0, make_protos(random_tensor({3, 5}, rng, -9, 9)), 1.0),
              0.0);
  }
}

TEST(CeLoss, InvalidLabelThrows) {
  std::mt19937_64 rng(9);
  const RelationNet net = init_params(small_config(), 5);
  EXPECT_THROW(ce_loss(net, random_tensor({6}, rng), 3, make_protos(random_tensor({3, 5}, rng)), 1.0),
               std::out_of_range);
}

// Every parameter, input and prototype gradient against central differences
// of the loop oracle.
void check_gradients(const NetConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  RelationNet net = init_params(cfg, seed);
  for (Tensor* p : net.parameters()) {
    for (double& v : p->data()) v += 0.05 * (static_cast<double>(rng() % 1000) / 1000.0 - 0.5);
  }
  Tensor x = random_tensor({cfg.input_dim}, rng, -2, 2);
  Tensor protos = random_tensor({4, cfg.prototype_dim}, rng, -2, 2);
  const std::size_t label = 2;
  const double gamma = 1.3;

  auto oracle_loss = [&](double* kink) {
    const Tensor r = oracle_scores(net, x, protos, kink);
    double mx = r[0];
    for (double s : r.data()) mx = std::max(mx, s / gamma);
    double z = 0.0;
    for (double s : r.data()) z += std::exp(s / gamma - mx);
    return -(r[label] / gamma - mx - std::log(z));
  };
  const LossGradients grads = ce_loss_gradients(net, x, label, make_protos(protos), gamma);

  constexpr double h = 1e-5;
  auto check = [&](Tensor& t, const Tensor& analytic, const std::string& what) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      double k_up = 0.0, k_down = 0.0;
      t[i] = saved + h;
      const double up = oracle_loss(&k_up);
      t[i] = saved - h;
      const double down = oracle_loss(&k_down);
      t[i] = saved;
      if (std::min(k_up, k_down) < 10 * h) continue;
      const double numeric = (up - down) / (2 * h);
      EXPECT_TRUE(testing::gradient_close(analytic[i], numeric))
          << what << "[" << i << "] analytic " << analytic[i] << " numeric " << numeric;
    }
  };
  const auto params = net.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) check(*params[k], grads.params[k], "param " + std::to_string(k));
  check(x, grads.input, "input");
  check(protos, grads.prototypes, "prototypes");
}

TEST(CeLossGradients, ConcatMatchesFiniteDifferences) {
  NetConfig cfg = small_config();
  cfg.feature_hidden = {7, 5};
  check_gradients(cfg, 21);
}

TEST(CeLossGradients, ProductMatchesFiniteDifferences) {
  NetConfig cfg = small_config();
  cfg.combine = Combine::kProduct;
  check_gradients(cfg, 22);
}

TEST(CeLossGradients, InputGradientIgnoresHeadBiasShift) {
  std::mt19937_64 rng(23);
  RelationNet net = init_params(small_config(), 23);
  const Tensor x = random_tensor({6}, rng);
  const PrototypeSet protos = make_protos(random_tensor({4, 5}, rng));
  const LossGradients base = ce_loss_gradients(net, x, 1, protos, 1.0);
  net.relation[1].bias[0] += 3.25;
  const LossGradients shifted = ce_loss_gradients(net, x, 1, protos, 1.0);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(base.input[i], shifted.input[i], 1e-12);
}

TEST(CeLossGradients, SingleSampleLossConsistent) {
  std::mt19937_64 rng(24);
  const RelationNet net = init_params(small_config(), 24);
  const Tensor x = random_tensor({6}, rng);
  const PrototypeSet protos = make_protos(random_tensor({4, 5}, rng));
  EXPECT_NEAR(ce_loss_gradients(net, x, 3, protos, 2.0).loss, ce_loss(net, x, 3, protos, 2.0), 1e-12);
}

TEST(Predict, SingleUnseenClassAlwaysWins) {
  std::mt19937_64 rng(30);
  const RelationNet net = init_params(small_config(), 30);
  PrototypeSet unseen = make_protos(random_tensor({1, 5}, rng), 42);
  for (int trial = 0; trial < 10; ++trial) EXPECT_EQ(predict_standard(net, random_tensor({6}, rng), unseen), 42);
}

TEST(Predict, ArgmaxAndTieBreak) {
  const std::vector<double> scores{1, 5, 2};
  EXPECT_EQ(argmax_by_class_id(scores, {10, 11, 12}), 1u);
  const std::vector<double> tied{4, 4, 4};
  EXPECT_EQ(argmax_by_class_id(tied, {7, 3, 5}), 1u);
}

TEST(Predict, TiesResolveToLowestClassId) {
  std::mt19937_64 rng(31);
  RelationNet net = init_params(small_config(), 31);
  for (double& w : net.relation[1].weight.data()) w = 0.0;
  PrototypeSet protos = make_protos(random_tensor({3, 5}, rng));
  protos.class_ids = {9, 4, 6};
  EXPECT_EQ(predict_standard(net, random_tensor({6}, rng), protos), 4);
}

TEST(Predict, TemperatureDoesNotChangePrediction) {
  std::mt19937_64 rng(32);
  RelationNet hot = init_params(small_config(), 32);
  RelationNet cold = hot;
  hot.config.temperature = 10.0;
  const PrototypeSet protos = make_protos(random_tensor({5, 5}, rng, 0, 3));
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor x = random_tensor({6}, rng, -3, 3);
    EXPECT_EQ(predict_standard(hot, x, protos), predict_standard(cold, x, protos));
  }
}

TEST(Predict, GeneralizedHigherScoreWins) {
  // Score rises with the prototype value: relu(c f + d g + e) with d > 0.
  const RelationNet net = toy_net(1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0);
  const PrototypeSet seen = make_protos(Tensor::matrix({{1.0}}), 0);
  const PrototypeSet unseen = make_protos(Tensor::matrix({{2.0}}), 1);
  EXPECT_EQ(predict_generalized(net, Tensor::vector({0.5}), seen, unseen), 1);
  const PrototypeSet strong_seen = make_protos(Tensor::matrix({{3.0}}), 0);
  EXPECT_EQ(predict_generalized(net, Tensor::vector({0.5}), strong_seen, unseen), 0);
}

TEST(Predict, GeneralizedRejectsOverlappingIds) {
  std::mt19937_64 rng(33);
  const RelationNet net = init_params(small_config(), 33);
  const PrototypeSet seen = make_protos(random_tensor({2, 5}, rng), 0);
  const PrototypeSet unseen = make_protos(random_tensor({2, 5}, rng), 1);
  EXPECT_THROW(predict_generalized(net, random_tensor({6}, rng), seen, unseen), std::invalid_argument);
}

TEST(Predict, GeneralizedNeverFixesAnUnseenMistake) {
  std::mt19937_64 rng(34);
  for (int model = 0; model < 20; ++model) {
    const RelationNet net = init_params(small_config(), 100 + model);
    const PrototypeSet seen = make_protos(random_tensor({3, 5}, rng), 0);
    const PrototypeSet unseen = make_protos(random_tensor({3, 5}, rng), 3);
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor x = random_tensor({6}, rng);
      const int label = 3 + trial % 3;
      const bool generalized_ok = predict_generalized(net, x, seen, unseen) == label;
      const bool standard_ok = predict_standard(net, x, unseen) == label;
      EXPECT_TRUE(!generalized_ok || standard_ok);
    }
  }
}

TEST(Predict, BatchMatchesSingle) {
  std::mt19937_64 rng(35);
  const RelationNet net = init_params(small_config(), 35);
  const PrototypeSet protos = make_protos(random_tensor({4, 5}, rng), 10);
  const Tensor x = random_tensor({300, 6}, rng);
  const std::vector<int> batch = predict_batch(net, x, protos);
  ASSERT_EQ(batch.size(), 300u);
  for (std::size_t i = 0; i < 300; i += 37) {
    EXPECT_EQ(batch[i], predict_standard(net, Tensor::vector({x.row(i).begin(), x.row(i).end()}), protos));
  }
}

TEST(InitParams, SeedDeterminesParameters) {
  EXPECT_EQ(init_params(small_config(), 7), init_params(small_config(), 7));
  EXPECT_NE(init_params(small_config(), 7), init_params(small_config(), 8));
}

TEST(InitParams, BiasesZeroWeightsBounded) {
  const RelationNet net = init_params(small_config(), 7);
  const auto params = net.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor& t = *params[k];
    if (t.rank() == 1) {
      for (double v : t.data()) EXPECT_EQ(v, 0.0);
    } else {
      const double a = std::sqrt(6.0 / static_cast<double>(t.shape()[0] + t.shape()[1]));
      for (double v : t.data()) EXPECT_LE(std::fabs(v), a);
    }
  }
}

TEST(InitParams, WeightMeanNearZero) {
  NetConfig cfg = small_config(400, 5);
  cfg.feature_hidden = {250};
  const RelationNet net = init_params(cfg, 99);
  const Tensor& w = net.feature[0].weight;
  ASSERT_EQ(w.size(), 100000u);
  double mean = 0.0;
  for (double v : w.data()) mean += v;
  mean /= static_cast<double>(w.size());
  const double a = std::sqrt(6.0 / 650.0);
  const double sigma = std::sqrt(a * a / 3.0 / static_cast<double>(w.size()));
  EXPECT_LT(std::fabs(mean), 3.0 * sigma);
}

TEST(NetConfig, ValidateNamesKey) {
  NetConfig cfg = small_config();
  cfg.embed_dim = 0;
  try {
    cfg.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "net.embed_dim");
  }
  cfg = small_config();
  cfg.temperature = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(RelationNet, RelationInputWidthFollowsCombine) {
  NetConfig cfg = small_config();
  EXPECT_EQ(init_params(cfg, 1).relation[0].weight.shape()[0], 2 * cfg.embed_dim);
  cfg.combine = Combine::kProduct;
  EXPECT_EQ(init_params(cfg, 1).relation[0].weight.shape()[0], cfg.embed_dim);
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("atzsl_ckpt_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::filesystem::path dir_;
};

TEST_F(CheckpointTest, RoundTripIsBitwise) {
  NetConfig cfg = small_config();
  cfg.feature_hidden = {5, 3};
  cfg.temperature = 0.1 + 0.2;
  cfg.combine = Combine::kProduct;
  const RelationNet net = init_params(cfg, 5);
  save_checkpoint(net, path("m.ckpt"));
  EXPECT_EQ(load_checkpoint(path("m.ckpt")), net);
  EXPECT_FALSE(std::filesystem::exists(path("m.ckpt.tmp")));
}

TEST_F(CheckpointTest, TruncatedFileReportsOffset) {
  save_checkpoint(init_params(small_config(), 5), path("m.ckpt"));
  std::string bytes = io::read_file(path("m.ckpt"));
  bytes.resize(bytes.size() - 3);
  io::write_file_atomic(path("cut.ckpt"), bytes);
  try {
    load_checkpoint(path("cut.ckpt"));
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos) << e.what();
  }
}

TEST_F(CheckpointTest, BadMagicAndMissingFile) {
  io::write_file_atomic(path("bad.ckpt"), "NOPE0000");
  EXPECT_THROW(load_checkpoint(path("bad.ckpt")), DataError);
  EXPECT_THROW(load_checkpoint(path("absent.ckpt")), DataError);
}

TEST(PrototypeSet, SubsetMergeAndValidate) {
  PrototypeSet all = make_protos(Tensor::matrix({{0, 1}, {2, 3}, {4, 5}}), 0);
  const PrototypeSet sub = all.subset({2, 0});
  EXPECT_EQ(sub.class_ids, (std::vector<int>{2, 0}));
  EXPECT_EQ(sub.matrix, Tensor::matrix({{4, 5}, {0, 1}}));
  EXPECT_THROW(all.subset({7}), DataError);
  EXPECT_THROW(merge(all, sub), std::invalid_argument);
  EXPECT_NO_THROW(all.validate(std::make_pair(0.0, 5.0)));
  EXPECT_THROW(all.validate(std::make_pair(0.0, 4.0)), DataError);
}

}  // namespace
}  // namespace atzsl
