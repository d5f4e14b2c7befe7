#include <gtest/gtest.h>

#include "cast/errors.hpp"
#include "cast/style_projector.hpp"
#include "support/oracles.hpp"

using namespace cast;

namespace {

FeaturePyramid random_pyramid(int64_t batch, int64_t side, uint64_t seed,
                              const std::vector<int64_t>& channels = {kTapChannels.begin(), kTapChannels.end()},
                              torch::Dtype dtype = torch::kFloat32) {
  torch::manual_seed(seed);
  FeaturePyramid p;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    const int64_t s = std::max<int64_t>(1, side >> i);
    p.maps.push_back(torch::relu(torch::randn({batch, channels[i], s, s}, dtype)));
  }
  return p;
}

ProjectorConfig small_config() {
  ProjectorConfig c;
  c.input_channels = {3, 4, 5, 6};
  c.code_dims = {4, 5, 6, 7};
  c.hidden_widths = {3, 4, 3, 4};
  return c;
}

}  // namespace

TEST(StyleProjector, DefaultCodesHaveTheConfiguredDimsAndUnitNorm) {
  torch::manual_seed(0);
  StyleProjector proj;
  const auto z = proj->forward(random_pyramid(2, 16, 1));
  ASSERT_EQ(z.size(), kNumTaps);
  for (std::size_t i = 0; i < kNumTaps; ++i) {
    EXPECT_EQ(z[i].sizes(), (std::vector<int64_t>{2, kCodeDims[i]}));
  }
  EXPECT_NO_THROW(z.check_unit_norm(1e-6));
  EXPECT_EQ((std::vector<int64_t>{kCodeDims.begin(), kCodeDims.end()}), (std::vector<int64_t>{512, 1024, 2048, 2048}));
}

TEST(StyleProjector, AllZeroFeaturesGiveAFiniteUnitNormCode) {
  torch::manual_seed(0);
  StyleProjector proj;
  FeaturePyramid zeros;
  for (std::size_t i = 0; i < kNumTaps; ++i) zeros.maps.push_back(torch::zeros({1, kTapChannels[i], 4, 4}));
  const auto z = proj->forward(zeros);
  for (const auto& l : z.layers) EXPECT_TRUE(torch::isfinite(l).all().item<bool>());
  EXPECT_NO_THROW(z.check_unit_norm(1e-6));
}

TEST(StyleProjector, NormalizationIsEpsilonGuarded) {
  const auto z = normalize_rows(torch::zeros({2, 5}));
  EXPECT_TRUE(torch::equal(z, torch::zeros({2, 5})));
}

TEST(StyleProjector, SpatialPermutationDoesNotChangeTheCode) {
  torch::manual_seed(0);
  StyleProjector proj;
  const auto p = random_pyramid(1, 16, 2);
  FeaturePyramid permuted;
  for (const auto& m : p.maps) {
    const auto flat = m.flatten(2);
    const auto perm = torch::randperm(flat.size(2));
    permuted.maps.push_back(flat.index_select(2, perm).view(m.sizes()));
  }
  const auto a = proj->forward(p);
  const auto b = proj->forward(permuted);
  for (std::size_t i = 0; i < kNumTaps; ++i) {
    EXPECT_LE((a[i] - b[i]).abs().max().item<double>(), 1e-6) << "layer " << i;
  }
}

TEST(StyleProjector, PoolingModesAreSupported) {
  for (auto mode : {PoolingMode::avg, PoolingMode::max}) {
    auto cfg = small_config();
    cfg.pooling = mode;
    StyleProjector proj(cfg);
    EXPECT_NO_THROW(proj->forward(random_pyramid(2, 8, 3, cfg.input_channels)).check_unit_norm(1e-6));
  }
}

TEST(StyleProjector, RejectsNanAndMismatchedInputs) {
  StyleProjector proj(small_config());
  auto p = random_pyramid(1, 8, 4, small_config().input_channels);
  p.maps[1][0][0][0][0] = std::nanf("");
  EXPECT_THROW(proj->forward(p), NumericError);
  EXPECT_THROW(proj->forward(random_pyramid(1, 8, 4, {3, 4, 5, 7})), ArgumentError);
  EXPECT_THROW(proj->forward(random_pyramid(1, 8, 4, {3, 4, 5})), ArgumentError);
  auto bad = small_config();
  bad.hidden_widths[0] = 0;
  EXPECT_THROW(bad.validate(), ArgumentError);
}

TEST(StyleProjector, ParameterGradientsMatchFiniteDifferences) {
  torch::manual_seed(5);
  StyleProjector proj(small_config());
  proj->to(torch::kFloat64);
  const auto features = random_pyramid(2, 4, 6, small_config().input_channels, torch::kFloat64);
  std::vector<torch::Tensor> probes;
  for (auto k : small_config().code_dims) probes.push_back(torch::randn({2, k}, torch::kFloat64));
  auto objective = [&] {
    const auto z = proj->forward(features);
    auto s = torch::zeros({}, torch::kFloat64);
    for (std::size_t i = 0; i < z.size(); ++i) s = s + (z[i] * probes[i]).sum();
    return s;
  };
  proj->zero_grad();
  objective().backward();
  for (const auto& item : proj->named_parameters()) {
    auto param = item.value();
    const auto analytic = param.grad().clone();
    auto numeric = oracle::numeric_gradient(
        [&](const torch::Tensor& v) {
          torch::NoGradGuard no_grad;
          const auto saved = param.detach().clone();
          param.detach().copy_(v);
          const double out = objective().item<double>();
          param.detach().copy_(saved);
          return out;
        },
        param.detach());
    EXPECT_LE(oracle::relative_error(analytic, numeric), 1e-3) << item.key();
  }
}
