#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "lsdan/model.hpp"
#include "lsdan/purisk.hpp"
#include "support/oracles.hpp"

using namespace lsdan;
namespace t = lsdan::testing;

namespace {

struct Fixture {
  Adjacency adj;
  HopMaskSet masks;
  Tensor x;
  NetworkConfig cfg;
  std::vector<LayerParams> params;
};

Fixture make_fixture(std::uint64_t seed, std::size_t n, std::size_t m, std::size_t d, std::size_t kappa,
                     std::size_t layers, KeySource key = KeySource::layer_input) {
  std::mt19937_64 rng(seed);
  Fixture f;
  f.adj = t::random_graph(n, 0.35, rng);
  f.masks = compute_hop_masks(f.adj, kappa);
  f.x = t::random_tensor(n, m, rng, 1.0, false);
  f.cfg.kappa = kappa;
  f.cfg.layers = layers;
  f.cfg.hidden_dim = d;
  f.cfg.input_dim = m;
  f.cfg.key = key;
  f.params = init_params(f.cfg, seed);
  return f;
}

std::vector<t::BoolMatrix> bool_masks(const HopMaskSet& set) {
  std::vector<t::BoolMatrix> out;
  for (const auto& m : set.masks) out.push_back(t::to_bool(m));
  return out;
}

}  // namespace

TEST(Model, InitIsDeterministicAndShaped) {
  NetworkConfig cfg;
  cfg.input_dim = 10;
  cfg.layers = 3;
  const auto a = init_params(cfg, 5);
  const auto b = init_params(cfg, 5);
  const auto c = init_params(cfg, 6);
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a[0].w1.shape(), (Shape{64, 10}));
  EXPECT_EQ(a[0].r.shape(), (Shape{128, 1}));
  EXPECT_EQ(a[0].w2.shape(), (Shape{64, 10}));
  EXPECT_EQ(a[1].w1.shape(), (Shape{64, 64}));
  EXPECT_EQ(a[2].w1.shape(), (Shape{1, 64}));
  EXPECT_EQ(a[2].r.shape(), (Shape{2, 1}));
  EXPECT_EQ(a[2].w2.shape(), (Shape{1, 64}));
  for (std::size_t l = 0; l < 3; ++l) {
    EXPECT_TRUE(std::equal(a[l].w1.values().begin(), a[l].w1.values().end(), b[l].w1.values().begin()));
    EXPECT_TRUE(a[l].w1.requires_grad());
  }
  EXPECT_NE(a[0].w1(0, 0), c[0].w1(0, 0));
}

TEST(Model, RawFeatureKeysUseInputWidth) {
  NetworkConfig cfg;
  cfg.input_dim = 7;
  cfg.hidden_dim = 4;
  cfg.key = KeySource::raw_features;
  const auto p = init_params(cfg, 1);
  EXPECT_EQ(p[1].w2.shape(), (Shape{1, 7}));
}

TEST(Model, ConfigValidation) {
  NetworkConfig cfg;
  EXPECT_THROW(cfg.validate(), ConfigError);  // input_dim unset
  cfg.input_dim = 3;
  cfg.validate();
  cfg.kappa = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.kappa = 1;
  cfg.leaky_slope = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Model, ForwardMatchesStraightLineReference) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t layers = 1 + seed % 4;
    const auto key = seed % 2 ? KeySource::raw_features : KeySource::layer_input;
    auto f = make_fixture(seed, 4 + seed % 7, 3 + seed % 3, 2 + seed % 4, 1 + seed % 4, layers, key);
    const auto got = forward(f.x, f.masks, f.params, f.cfg).logits;
    const auto want = t::reference_forward(t::to_matrix(f.x), bool_masks(f.masks), f.params, f.cfg);
    ASSERT_EQ(got.shape(), (Shape{f.x.rows(), 1}));
    for (std::size_t i = 0; i < got.rows(); ++i) EXPECT_NEAR(got(i, 0), want[i][0], 1e-12) << "seed " << seed;
  }
}

TEST(Model, LayerInternalsMatchReference) {
  auto f = make_fixture(3, 8, 4, 3, 3, 2);
  const auto layer = lsdan_layer(f.x, f.masks, f.params[0]);
  const auto ref = t::reference_layer(t::to_matrix(f.x), t::to_matrix(f.x), bool_masks(f.masks),
                                      t::to_matrix(f.params[0].w1), t::to_matrix(f.params[0].r),
                                      t::to_matrix(f.params[0].w2), 0.2, Activation::elu);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t a = 0; a < 3; ++a) EXPECT_NEAR(layer.per_hop[k](i, a), ref.per_hop[k][i][a], 1e-12);
  for (std::size_t i = 0; i < 8; ++i) {
    double total = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_NEAR(layer.hop_attention(i, k), ref.hop_attention[i][k], 1e-12);
      total += layer.hop_attention(i, k);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Model, NeighborAttentionSumsToOnePerRow) {
  auto f = make_fixture(4, 12, 5, 4, 3, 2);
  const auto layer = lsdan_layer(f.x, f.masks, f.params[0]);
  for (std::size_t k = 1; k <= 3; ++k) {
    const auto& pat = *f.masks.pattern(k);
    const auto alpha = layer.neighbor_attention[k - 1].values();
    for (std::size_t i = 0; i < pat.rows(); ++i) {
      double total = 0.0;
      for (std::size_t p = pat.row_begin(i); p < pat.row_end(i); ++p) {
        EXPECT_GE(alpha[p], 0.0);
        total += alpha[p];
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Model, SingleHopOutputIsTheShortDistanceEmbedding) {
  auto f = make_fixture(5, 9, 4, 3, 1, 2);
  const auto layer = lsdan_layer(f.x, f.masks, f.params[0]);
  const auto h = short_distance_attention(f.x, f.masks.pattern(1), f.params[0]);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_EQ(layer.hop_attention(i, 0), 1.0);
    ASSERT_EQ(layer.output.shape(), h.shape());
    for (std::size_t a = 0; a < h.cols(); ++a) EXPECT_EQ(layer.output(i, a), h(i, a));
  }
}

TEST(Model, PermutationEquivariance) {
  std::mt19937_64 rng(17);
  const std::size_t n = 10, m = 4;
  auto f = make_fixture(17, n, m, 3, 3, 3);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);

  std::vector<Edge> pe;
  for (auto [a, b] : f.adj.edges()) pe.emplace_back(perm[a], perm[b]);
  const auto padj = build_adjacency(pe, n);
  std::vector<double> px(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) px[perm[i] * m + j] = f.x(i, j);

  const auto base = forward(f.x, f.masks, f.params, f.cfg).logits;
  const auto moved = forward(Tensor(n, m, px), compute_hop_masks(padj, 3), f.params, f.cfg).logits;
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(moved(perm[i], 0), base(i, 0), 1e-9);
}

TEST(Model, ZeroMiddleLayerIsAnIdentityResidual) {
  auto three = make_fixture(21, 9, 4, 3, 2, 3);
  for (auto* t : {&three.params[1].w1, &three.params[1].r, &three.params[1].w2})
    for (auto& v : t->mutable_values()) v = 0.0;
  NetworkConfig two_cfg = three.cfg;
  two_cfg.layers = 2;
  const std::vector<LayerParams> two = {three.params[0], three.params[2]};
  const auto a = forward(three.x, three.masks, three.params, three.cfg).logits;
  const auto b = forward(three.x, three.masks, two, two_cfg).logits;
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(a(i, 0), b(i, 0));
}

TEST(Model, ForwardRejectsMismatchedInputs) {
  auto f = make_fixture(2, 6, 3, 2, 2, 2);
  EXPECT_THROW(forward(Tensor::zeros(6, 4), f.masks, f.params, f.cfg), ShapeError);
  auto cfg = f.cfg;
  cfg.kappa = 3;
  EXPECT_THROW(forward(f.x, f.masks, f.params, cfg), ConfigError);
  const std::vector<LayerParams> one = {f.params[0]};
  EXPECT_THROW(forward(f.x, f.masks, one, f.cfg), ShapeError);
}

TEST(Model, FullGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto f = make_fixture(seed, 5, 4, 3, 2, 2);
    const std::vector<std::size_t> pos = {0, 1}, unl = {2, 3, 4};
    std::vector<Tensor> flat;
    for (const auto& p : f.params)
      for (const auto& t : p.tensors()) flat.push_back(t);
    auto loss = [&] {
      return nnpu_risk(risk_terms(forward(f.x, f.masks, f.params, f.cfg).logits, pos, unl), ClassPrior(0.4));
    };
    EXPECT_LT(t::max_relative_gradient_error(flat, loss), 1e-3) << "seed " << seed;
  }
}

TEST(Model, CheckpointRoundTripIsExact) {
  auto f = make_fixture(8, 7, 5, 4, 2, 3, KeySource::raw_features);
  const auto path = std::filesystem::temp_directory_path() / "lsdan_model_ckpt.json";
  save_checkpoint(path, f.cfg, f.params);
  const auto c = load_checkpoint(path);
  EXPECT_EQ(c.network.kappa, 2u);
  EXPECT_EQ(c.network.key, KeySource::raw_features);
  const auto a = forward(f.x, f.masks, f.params, f.cfg).logits;
  const auto b = forward(f.x, f.masks, c.params, c.network).logits;
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(a(i, 0), b(i, 0));

  auto j = checkpoint_to_json(f.cfg, f.params);
  j["version"] = 99;
  EXPECT_THROW(checkpoint_from_json(j), ConfigError);
}
