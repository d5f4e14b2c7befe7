#include <gtest/gtest.h>

#include <fstream>

#include "cast/errors.hpp"
#include "cast/feature_extractor.hpp"
#include "support/temp_dir.hpp"

using namespace cast;
using testing_support::TempDir;

namespace {

const FeatureExtractor& shared_extractor() {
  static const FeatureExtractor e = FeatureExtractor::random(19);
  return e;
}

torch::Tensor random_image(int64_t b, int64_t side, uint64_t seed) {
  torch::manual_seed(seed);
  return torch::rand({b, 3, side, side}) * 2 - 1;
}

}  // namespace

class ExtractorShapes : public ::testing::TestWithParam<int64_t> {};

TEST_P(ExtractorShapes, MatchTheTapTable) {
  const int64_t side = GetParam();
  const auto pyr = shared_extractor().extract(random_image(1, side, 1));
  ASSERT_EQ(pyr.size(), kNumTaps);
  for (std::size_t i = 0; i < kNumTaps; ++i) {
    EXPECT_EQ(pyr[i].sizes(), (std::vector<int64_t>{1, kTapChannels[i], side / kTapStrides[i], side / kTapStrides[i]}))
        << "tap " << i;
    EXPECT_TRUE(torch::isfinite(pyr[i]).all().item<bool>());
    // Post-activation maps are non-negative.
    EXPECT_GE(pyr[i].min().item<float>(), 0.0f);
  }
  EXPECT_NO_THROW(check_tap_shapes(pyr, 1, side, side));
}

INSTANTIATE_TEST_SUITE_P(Sizes, ExtractorShapes, ::testing::Values(64, 128, 256, 40));

TEST(Extractor, BatchDimensionIsPreserved) {
  const auto pyr = shared_extractor().extract(random_image(4, 32, 2));
  for (const auto& m : pyr.maps) EXPECT_EQ(m.size(0), 4);
}

TEST(Extractor, IsDeterministic) {
  const auto img = random_image(2, 32, 3);
  const auto a = shared_extractor().extract(img);
  const auto b = shared_extractor().extract(img);
  for (std::size_t i = 0; i < kNumTaps; ++i) EXPECT_TRUE(torch::equal(a[i], b[i]));
  EXPECT_EQ(FeatureExtractor::random(19).content_hash(), shared_extractor().content_hash());
  EXPECT_NE(FeatureExtractor::random(20).content_hash(), shared_extractor().content_hash());
}

TEST(Extractor, RejectsSizesNotDivisibleByEight) {
  EXPECT_THROW(shared_extractor().extract(random_image(1, 36, 4)), ArgumentError);
  EXPECT_THROW(shared_extractor().extract(torch::zeros({1, 1, 32, 32})), ArgumentError);
}

TEST(Extractor, FrozenParametersTakeNoGradient) {
  auto e = FeatureExtractor::random(19);
  ASSERT_TRUE(e.frozen());
  for (const auto& p : e.module()->parameters()) EXPECT_FALSE(p.requires_grad());
  auto img = random_image(1, 16, 5).requires_grad_(true);
  const auto pyr = e.extract(img);
  pyr[3].sum().backward();
  // The input still receives a gradient; the weights do not.
  EXPECT_TRUE(img.grad().defined());
  for (const auto& p : e.module()->parameters()) EXPECT_FALSE(p.grad().defined());
}

TEST(Extractor, Relu41IsBetweenTheThirdAndFourthTaps) {
  const auto img = random_image(1, 32, 6);
  const auto r41 = shared_extractor().relu4_1(img);
  EXPECT_EQ(r41.sizes(), (std::vector<int64_t>{1, 512, 4, 4}));
}

TEST(Extractor, NormalizationMapsToImagenetStatistics) {
  const auto white = torch::ones({1, 3, 8, 8});
  const auto n = shared_extractor().normalize(white);
  EXPECT_NEAR(n[0][0][0][0].item<double>(), (1.0 - 0.485) / 0.229, 1e-5);
  EXPECT_NEAR(n[0][2][0][0].item<double>(), (1.0 - 0.406) / 0.225, 1e-5);
}

TEST(Extractor, BlobRoundTripAndHashCheck) {
  TempDir dir;
  const auto blob = dir / "vgg.bin";
  shared_extractor().save(blob);
  ASSERT_TRUE(std::filesystem::exists(blob.string() + ".json"));
  const auto loaded = FeatureExtractor::load(blob);
  EXPECT_EQ(loaded.content_hash(), shared_extractor().content_hash());
  const auto img = random_image(1, 16, 7);
  EXPECT_TRUE(torch::equal(loaded.extract(img)[2], shared_extractor().extract(img)[2]));

  // Flip one byte: the sidecar hash no longer matches.
  {
    std::fstream f(blob, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(100);
    f.put('\x7f');
  }
  EXPECT_THROW(FeatureExtractor::load(blob), IoError);
  EXPECT_THROW(FeatureExtractor::load(dir / "missing.bin"), IoError);
}

TEST(Extractor, TapNamesAreValidated) {
  EXPECT_TRUE(is_known_tap("relu1_2"));
  EXPECT_TRUE(is_known_tap("relu4_3"));
  EXPECT_FALSE(is_known_tap("relu5_1"));
  EXPECT_FALSE(is_known_tap("conv1_1"));
  EXPECT_THROW(FeatureExtractor::random(1, {"relu9_9"}), ConfigError);
}
