#include "s3net/modules.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace s3net;

namespace {

struct Harness {
  Tape<double> tape;
  KernelMapCache kernels;
  ForwardContext<double> ctx;

  Harness(ParameterStore<double>& store, bool training)
      : ctx(tape, store, kernels, training, BatchNormOptions{training, 0.1, 1e-5}) {}
};

void zero_all(ParameterStore<double>& store) {
  for (auto& p : store.all()) p.value.setZero();
}

// Zero convs, identity skip and unit BN statistics: the module reduces to its skip path.
void make_identity(ParameterStore<double>& store, const ResModuleLayer& m) {
  store[m.skip.kernel].value.setIdentity();
  for (const BatchNormLayer& bn : {m.bn1, m.bn2}) {
    store[bn.gamma].value.setOnes();
    store[bn.running_var].value.setOnes();
  }
}

}  // namespace

TEST(SIntraAMTest, ZeroWeightsGiveOneAndAHalfTimesInput) {
  std::mt19937_64 rng(1);
  ParameterStore<double> store;
  const auto layer = LayerBuilder<double>(store, 1).sintra_am("intra", 4, 3);
  zero_all(store);
  const auto coords = support::random_coords(rng, 50, 0, 6);
  const SparseTensor<double> x{coords, support::random_matrix(rng, 50, 4)};
  Harness h(store, true);
  const Var out = sintra_am(h.ctx, layer, h.tape.input(x));
  EXPECT_LT((h.tape.value(out) - 1.5 * x.features).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(h.tape.coords(out), coords);
}

TEST(SIntraAMTest, ZeroInputGivesZero) {
  std::mt19937_64 rng(2);
  ParameterStore<double> store;
  const auto layer = LayerBuilder<double>(store, 2).sintra_am("intra", 3, 3);
  const auto coords = support::random_coords(rng, 40, 0, 5);
  Harness h(store, true);
  const Var out = sintra_am(h.ctx, layer, h.tape.input(SparseTensor<double>{coords, Matrix<double>::Zero(40, 3)}));
  EXPECT_TRUE(h.tape.value(out).isZero(0.0));
}

TEST(SInterAMTest, SaturatedExcitationGivesDampedInput) {
  std::mt19937_64 rng(3);
  ParameterStore<double> store;
  const auto layer = LayerBuilder<double>(store, 3).sinter_am("inter", 8, 4, 0.35);
  store[layer.excite.weight].value.setZero();
  store[layer.excite.bias].value.setConstant(50.0);  // sigmoid(50) rounds to exactly 1
  const auto coords = support::random_coords(rng, 60, 0, 6, 2);
  const SparseTensor<double> x{coords, support::random_matrix(rng, 60, 8)};
  Harness h(store, true);
  const Var out = sinter_am(h.ctx, layer, h.tape.input(x));
  EXPECT_LT((h.tape.value(out) - 0.35 * x.features).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(h.tape.coords(out), coords);
}

TEST(SInterAMTest, ZeroInputGivesZero) {
  std::mt19937_64 rng(4);
  ParameterStore<double> store;
  const auto layer = LayerBuilder<double>(store, 4).sinter_am("inter", 8, 4, 0.35);
  const auto coords = support::random_coords(rng, 30, 0, 5);
  Harness h(store, true);
  const Var out = sinter_am(h.ctx, layer, h.tape.input(SparseTensor<double>{coords, Matrix<double>::Zero(30, 8)}));
  EXPECT_TRUE(h.tape.value(out).isZero(0.0));
}

TEST(SInterAMTest, EachBatchUsesItsOwnScale) {
  std::mt19937_64 rng(5);
  ParameterStore<double> store;
  const auto layer = LayerBuilder<double>(store, 5).sinter_am("inter", 8, 4, 0.35);
  store[layer.squeeze.bias].value = support::random_matrix(rng, 1, 2);
  store[layer.excite.bias].value = support::random_matrix(rng, 1, 8);
  const auto coords = support::random_coords(rng, 90, 0, 6, 2);
  const SparseTensor<double> x{coords, support::random_matrix(rng, 90, 8)};
  Harness h(store, true);
  const Matrix<double> out = h.tape.value(sinter_am(h.ctx, layer, h.tape.input(x)));

  const Matrix<double>& w1 = store[layer.squeeze.weight].value;
  const Matrix<double>& b1 = store[layer.squeeze.bias].value;
  const Matrix<double>& w2 = store[layer.excite.weight].value;
  const Matrix<double>& b2 = store[layer.excite.bias].value;
  for (int batch : {0, 1}) {
    RowVector<double> mean = RowVector<double>::Zero(8);
    int n = 0;
    for (std::size_t r = 0; r < coords->size(); ++r)
      if (coords->coordinate(r).batch == batch) {
        mean += x.features.row(static_cast<Eigen::Index>(r));
        ++n;
      }
    mean /= n;
    const RowVector<double> hidden = (mean * w1 + b1).cwiseMax(0.0);
    const RowVector<double> s = ((-(hidden * w2 + b2)).array().exp() + 1.0).inverse().matrix();
    for (std::size_t r = 0; r < coords->size(); ++r) {
      if (coords->coordinate(r).batch != batch) continue;
      const auto row = static_cast<Eigen::Index>(r);
      const RowVector<double> expected = 0.35 * x.features.row(row).cwiseProduct(s);
      EXPECT_LT((out.row(row) - expected).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(ResModuleTest, SkipOnlyModuleIsIdentity) {
  std::mt19937_64 rng(6);
  ParameterStore<double> store;
  const auto layer = LayerBuilder<double>(store, 6).sres_module("res", 5, 5, 3, 1);
  zero_all(store);
  make_identity(store, layer);
  const auto coords = support::random_coords(rng, 40, 0, 6);
  const SparseTensor<double> x{coords, support::random_matrix(rng, 40, 5)};
  Harness h(store, false);
  const Var out = sres_module(h.ctx, layer, h.tape.input(x));
  EXPECT_EQ(h.tape.value(out), x.features);
}

TEST(ResModuleTest, StrideTwoOutputCoordinates) {
  std::mt19937_64 rng(7);
  ParameterStore<double> store;
  const auto layer = LayerBuilder<double>(store, 7).sres_module("res", 3, 6, 3, 2);
  const auto coords = support::random_coords(rng, 80, 0, 8);
  Harness h(store, true);
  const Var out = sres_module(h.ctx, layer, h.tape.input(SparseTensor<double>{coords, support::random_matrix(rng, 80, 3)}));
  EXPECT_EQ(*h.tape.coords(out), stride_coordinates(*coords, 1, 2));
  EXPECT_EQ(h.tape.stride(out), 2);
  EXPECT_EQ(h.tape.value(out).cols(), 6);
}

TEST(ResTowerTest, IdentityModulesComposeToIdentity) {
  std::mt19937_64 rng(8);
  ParameterStore<double> store;
  const auto tower = LayerBuilder<double>(store, 8).sres_tower("tower", 4, 4, 3, 3, 1);
  zero_all(store);
  for (const auto& m : tower.modules) make_identity(store, m);
  const auto coords = support::random_coords(rng, 40, 0, 6);
  const SparseTensor<double> x{coords, support::random_matrix(rng, 40, 4)};
  Harness h(store, false);
  EXPECT_EQ(h.tape.value(sres_tower(h.ctx, tower, h.tape.input(x))), x.features);
}

TEST(ResTowerTest, EqualsManualComposition) {
  std::mt19937_64 rng(9);
  ParameterStore<double> store;
  const auto tower = LayerBuilder<double>(store, 9).sres_tower("tower", 3, 6, 3, 3, 2);
  ASSERT_EQ(tower.modules.size(), 3u);
  const auto coords = support::random_coords(rng, 100, 0, 8);
  const SparseTensor<double> x{coords, support::random_matrix(rng, 100, 3)};

  Harness a(store, false);
  const Var whole = sres_tower(a.ctx, tower, a.tape.input(x));
  Harness b(store, false);
  Var step = b.tape.input(x);
  for (const auto& m : tower.modules) step = sres_module(b.ctx, m, step);
  EXPECT_EQ(a.tape.value(whole), b.tape.value(step));
  EXPECT_EQ(a.tape.stride(whole), 2);
}

namespace {

NetworkConfig small_network() {
  NetworkConfig c;
  c.class_count = 3;
  c.stem_channels = 8;
  c.encoder_channels = {8, 16, 32, 64};
  return c;
}

SparseTensor<double> random_input(std::mt19937_64& rng, std::size_t rows) {
  const auto coords = support::random_coords(rng, rows, 0, 16);
  return {coords, support::random_matrix(rng, static_cast<Eigen::Index>(rows), 4)};
}

}  // namespace

TEST(Network, OutputShape) {
  std::mt19937_64 rng(10);
  S3Net<double> net(small_network(), 1);
  const auto x = random_input(rng, 300);
  const Matrix<double> logits = net.predict(x);
  EXPECT_EQ(logits.rows(), 300);
  EXPECT_EQ(logits.cols(), 3);
  EXPECT_TRUE(logits.allFinite());
}

TEST(Network, ZeroClassifierTiesGoToLowestClass) {
  std::mt19937_64 rng(11);
  S3Net<double> net(small_network(), 2);
  net.parameters()[net.classifier().kernel].value.setZero();
  const Matrix<double> logits = net.predict(random_input(rng, 120));
  EXPECT_TRUE(logits.isZero(0.0));
  for (int c : argmax_rows(logits)) EXPECT_EQ(c, 0);
  Matrix<double> tie(1, 3);
  tie << 1.0, 2.0, 2.0;
  EXPECT_EQ(argmax_rows(tie), std::vector<int>{1});
}

TEST(Network, Structure) {
  const NetworkConfig defaults;
  EXPECT_EQ(defaults.encoder_tower_depth, 3);
  EXPECT_EQ(defaults.decoder_tower_depth, 2);
  EXPECT_DOUBLE_EQ(defaults.damping, 0.35);
  EXPECT_EQ(defaults.encoder_channels, (std::vector<int>{32, 64, 128, 256}));
  EXPECT_EQ(defaults.stem_channels, 32);
  EXPECT_EQ(defaults.kernel_size, 3);

  S3Net<double> net(small_network(), 3);
  ASSERT_EQ(net.encoder().size(), 4u);
  ASSERT_EQ(net.decoder().size(), 4u);
  for (const auto& level : net.encoder()) {
    EXPECT_EQ(level.tower.modules.size(), 3u);
    EXPECT_TRUE(level.inter.has_value());
    EXPECT_TRUE(level.intra.has_value());
    EXPECT_DOUBLE_EQ(level.inter->damping, 0.35);
    EXPECT_EQ(level.tower.modules.front().conv1.stride_factor, 2);
  }
  for (const auto& level : net.decoder()) EXPECT_EQ(level.tower.modules.size(), 2u);
  for (const auto& p : net.parameters().all()) {
    const bool decoder = p.name.rfind("decoder.", 0) == 0;
    EXPECT_FALSE(decoder && p.name.find("intra") != std::string::npos) << p.name;
  }
}

TEST(Network, InvalidConfigIsRejected) {
  NetworkConfig c = small_network();
  c.encoder_channels.clear();
  EXPECT_THROW(S3Net<double>(c, 0), std::invalid_argument);
  c = small_network();
  c.kernel_size = 2;
  EXPECT_THROW(S3Net<double>(c, 0), std::invalid_argument);
}

TEST(Network, ForwardIsDeterministic) {
  std::mt19937_64 rng(12);
  const auto x = random_input(rng, 250);
  S3Net<double> a(small_network(), 4);
  S3Net<double> b(small_network(), 4);
  const Matrix<double> first = a.predict(x);
  EXPECT_EQ(first, a.predict(x));
  EXPECT_EQ(first, b.predict(x));
}

TEST(Network, DecoderRestoresCachedCoordinates) {
  std::mt19937_64 rng(13);
  S3Net<double> net(small_network(), 5);
  const auto x = random_input(rng, 300);
  Tape<double> tape;
  KernelMapCache kernels;
  ForwardContext<double> ctx(tape, net.parameters(), kernels);
  const auto result = net.forward(ctx, tape.input(x));
  ASSERT_EQ(result.cache.coords.size(), 4u);
  EXPECT_EQ(result.cache.strides, (std::vector<int>{1, 2, 4, 8}));
  EXPECT_EQ(*result.cache.level(0), *x.coords);
  EXPECT_EQ(*tape.coords(result.decoder_features), *result.cache.level(0));
  EXPECT_EQ(*tape.coords(result.logits), *x.coords);
  for (int l = 1; l < 4; ++l) {
    EXPECT_EQ(*result.cache.level(l), stride_coordinates(*result.cache.level(l - 1), 1 << (l - 1), 2));
  }
  EXPECT_THROW(result.cache.level(4), std::out_of_range);
}

TEST(Network, TwoBatchesAreIndependentInEvalMode) {
  std::mt19937_64 rng(14);
  S3Net<double> net(small_network(), 6);
  const auto a = random_input(rng, 150);
  const auto b = random_input(rng, 170);
  std::vector<Eigen::Index> offsets;
  const auto both = concatenate_batches<double>({a, b}, &offsets);
  const Matrix<double> joint = net.predict(both);
  EXPECT_LT((joint.topRows(150) - net.predict(a)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((joint.bottomRows(170) - net.predict(b)).cwiseAbs().maxCoeff(), 1e-12);
}
