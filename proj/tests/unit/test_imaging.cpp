#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "cast/corpus.hpp"
#include "cast/errors.hpp"
#include "cast/image.hpp"
#include "cast/toy_corpus.hpp"
#include "support/temp_dir.hpp"

using namespace cast;
using testing_support::TempDir;

namespace {

torch::Tensor random_rgb8(int64_t h, int64_t w, int64_t c = 3, uint64_t seed = 1) {
  torch::manual_seed(seed);
  return torch::randint(0, 256, {h, w, c}, torch::kUInt8);
}

}  // namespace

TEST(LoadImage, ResizesSquarePngToRequestedSize) {
  TempDir dir;
  write_png(random_rgb8(512, 512), dir / "big.png");
  const auto img = load_image(dir / "big.png", 256);
  EXPECT_EQ(img.sizes(), (std::vector<int64_t>{1, 3, 256, 256}));
  EXPECT_GE(img.min().item<float>(), -1.0f);
  EXPECT_LE(img.max().item<float>(), 1.0f);
  EXPECT_NO_THROW(check_image(img));
}

TEST(LoadImage, GrayscaleIsReplicatedToThreeChannels) {
  TempDir dir;
  write_png(random_rgb8(40, 40, 1), dir / "gray.png");
  const auto img = load_image(dir / "gray.png", 32);
  EXPECT_TRUE(torch::equal(img[0][0], img[0][1]));
  EXPECT_TRUE(torch::equal(img[0][0], img[0][2]));
}

TEST(LoadImage, NativeRoundTripIsExact) {
  TempDir dir;
  const auto pixels = random_rgb8(17, 23);
  write_png(pixels, dir / "a.png");
  EXPECT_TRUE(torch::equal(to_rgb8(load_image_native(dir / "a.png")), pixels));
}

TEST(LoadImage, TruncatedJpegRaisesDecodeErrorNamingTheFile) {
  TempDir dir;
  write_jpeg(random_rgb8(64, 64), dir / "full.jpg");
  std::ifstream in(dir / "full.jpg", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto cut = dir / "cut.jpg";
  std::ofstream(cut, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  try {
    load_image(cut, 32);
    FAIL() << "expected DecodeError";
  } catch (const DecodeError& e) {
    EXPECT_NE(std::string(e.what()).find("cut.jpg"), std::string::npos) << e.what();
  }
}

TEST(LoadImage, GarbageFileRaisesDecodeError) {
  TempDir dir;
  std::ofstream(dir / "junk.png") << "definitely not an image";
  EXPECT_THROW(load_image(dir / "junk.png", 32), DecodeError);
  EXPECT_THROW(load_image(dir / "missing.png", 32), DecodeError);
}

TEST(LoadImage, NonPositiveSizeIsAnArgumentError) {
  TempDir dir;
  write_png(random_rgb8(8, 8), dir / "a.png");
  EXPECT_THROW(load_image(dir / "a.png", 0), ArgumentError);
  EXPECT_THROW(load_image(dir / "a.png", -4), ArgumentError);
}

TEST(LoadImage, WideImageIsResizedByShorterSideThenCenterCropped) {
  // 32 x 96: left third red, middle third green, right third blue.
  auto pixels = torch::zeros({32, 96, 3}, torch::kUInt8);
  pixels.slice(1, 0, 32).select(2, 0).fill_(255);
  pixels.slice(1, 32, 64).select(2, 1).fill_(255);
  pixels.slice(1, 64, 96).select(2, 2).fill_(255);
  TempDir dir;
  write_png(pixels, dir / "wide.png");
  const auto img = load_image(dir / "wide.png", 16);
  EXPECT_EQ(img.sizes(), (std::vector<int64_t>{1, 3, 16, 16}));
  // Only the green third survives the crop; the outer columns may pick up
  // some filter bleed from the neighbouring bands.
  const auto inner = img.slice(3, 1, 15);
  EXPECT_NEAR(inner[0][1].min().item<double>(), 1.0, 1e-5);
  EXPECT_NEAR(inner[0][0].max().item<double>(), -1.0, 1e-5);
  EXPECT_NEAR(inner[0][2].max().item<double>(), -1.0, 1e-5);
}

TEST(CheckImage, RejectsBadShapesAndValues) {
  EXPECT_THROW(check_image(torch::zeros({3, 8, 8})), ArgumentError);
  EXPECT_THROW(check_image(torch::zeros({1, 4, 8, 8})), ArgumentError);
  EXPECT_THROW(check_image(torch::full({1, 3, 8, 8}, 1.5)), ArgumentError);
  auto nan = torch::zeros({1, 3, 8, 8});
  nan[0][0][0][0] = std::nanf("");
  EXPECT_THROW(check_image(nan), NumericError);
  EXPECT_THROW(check_spatial_multiple(torch::zeros({1, 3, 12, 16}), 8), ArgumentError);
}

TEST(AugmentPair, IdentitySpecReturnsTheImageTwice) {
  torch::manual_seed(3);
  const auto img = torch::rand({1, 3, 32, 32}) * 2 - 1;
  AugmentSpec spec;
  spec.scale_range = {1.0, 1.0};
  spec.rotation_range = {0.0, 0.0};
  spec.crop_size = 0;
  std::mt19937_64 rng(5);
  const auto [a, p] = augment_pair(img, spec, rng);
  EXPECT_TRUE(torch::equal(a, img));
  EXPECT_TRUE(torch::equal(p, img));
}

TEST(AugmentPair, FixedSeedGivesIdenticalPairs) {
  torch::manual_seed(4);
  const auto img = torch::rand({1, 3, 48, 48}) * 2 - 1;
  AugmentSpec spec;
  std::mt19937_64 r1(11);
  std::mt19937_64 r2(11);
  const auto [a1, p1] = augment_pair(img, spec, r1);
  const auto [a2, p2] = augment_pair(img, spec, r2);
  EXPECT_TRUE(torch::equal(a1, a2));
  EXPECT_TRUE(torch::equal(p1, p2));
  // A different stream gives a different view.
  std::mt19937_64 r3(12);
  EXPECT_FALSE(torch::equal(augment_pair(img, spec, r3).second, p1));
}

TEST(AugmentPair, RotatedAndRescaledViewsShareTheCropSize) {
  torch::manual_seed(5);
  const auto img = torch::rand({1, 3, 64, 64}) * 2 - 1;
  AugmentSpec spec;
  spec.scale_range = {0.8, 1.2};
  spec.rotation_range = {-15.0, 15.0};
  spec.crop_size = 48;
  std::mt19937_64 rng(2);
  for (int i = 0; i < 8; ++i) {
    const auto [a, p] = augment_pair(img, spec, rng);
    EXPECT_EQ(a.sizes(), (std::vector<int64_t>{1, 3, 48, 48}));
    EXPECT_EQ(p.sizes(), (std::vector<int64_t>{1, 3, 48, 48}));
    EXPECT_NO_THROW(check_image(p));
  }
  std::mt19937_64 rng2(2);
  EXPECT_EQ(augment_pair(img, spec, rng2, /*augment_both=*/true).first.sizes(), (std::vector<int64_t>{1, 3, 48, 48}));
}

TEST(AugmentPair, RejectsCropLargerThanTheSmallestResize) {
  const auto img = torch::zeros({1, 3, 64, 64});
  AugmentSpec spec;
  spec.scale_range = {0.5, 1.0};
  spec.crop_size = 40;
  std::mt19937_64 rng(0);
  EXPECT_THROW(augment_pair(img, spec, rng), ArgumentError);
  EXPECT_THROW(augment_pair(torch::zeros({2, 3, 64, 64}), AugmentSpec{}, rng), ArgumentError);
}

TEST(AugmentSpec, ValidatesRanges) {
  AugmentSpec spec;
  spec.rotation_range = {-10.0, 15.0};
  EXPECT_THROW(spec.validate(), ArgumentError);
  spec = AugmentSpec{};
  spec.scale_range = {1.2, 1.1};
  EXPECT_THROW(spec.validate(), ArgumentError);
  spec = AugmentSpec{};
  spec.scale_range = {0.0, 1.0};
  EXPECT_THROW(spec.validate(), ArgumentError);
  EXPECT_NO_THROW(AugmentSpec{}.validate_for(64));
}

TEST(RotateImage, ZeroDegreesIsIdentityUpToInterpolation) {
  torch::manual_seed(6);
  const auto img = torch::rand({1, 3, 16, 16}) * 2 - 1;
  EXPECT_TRUE(torch::allclose(rotate_image(img, 0.0), img, 1e-5, 1e-5));
}

class CorpusTest : public ::testing::Test {
 protected:
  void SetUp() override { paths_ = toy::write_corpus(dir_.path(), 2, 3, 16, 7); }
  TempDir dir_;
  toy::CorpusPaths paths_;
};

TEST_F(CorpusTest, ScanFindsLabelsFromSubdirectories) {
  const auto art = CorpusManifest::scan_directory(paths_.artistic, Domain::artistic, 16);
  EXPECT_EQ(art.entries.size(), 6u);
  EXPECT_EQ(art.labels(), (std::vector<std::string>{"dots", "mosaic", "stripes"}));
  const auto real = CorpusManifest::scan_directory(paths_.realistic, Domain::realistic, 16);
  EXPECT_EQ(real.entries.size(), 3u);
  EXPECT_TRUE(real.labels().empty());
  EXPECT_NO_THROW(art.validate());
}

TEST_F(CorpusTest, ManifestJsonRoundTrip) {
  const auto art = CorpusManifest::open(paths_.artistic, Domain::artistic, 16);
  art.save(dir_ / "copy.json");
  const auto back = CorpusManifest::load(dir_ / "copy.json");
  ASSERT_EQ(back.entries.size(), art.entries.size());
  EXPECT_EQ(back.domain, Domain::artistic);
  for (std::size_t i = 0; i < art.entries.size(); ++i) {
    EXPECT_EQ(back.resolve(back.entries[i]), art.resolve(art.entries[i]));
    EXPECT_EQ(back.entries[i].label, art.entries[i].label);
  }
}

TEST(Domain, ParsesOnlyTheTwoTags) {
  EXPECT_EQ(parse_domain("artistic"), Domain::artistic);
  EXPECT_EQ(parse_domain("realistic"), Domain::realistic);
  EXPECT_THROW(parse_domain("photo"), ArgumentError);
  EXPECT_EQ(to_string(Domain::realistic), "realistic");
}

TEST_F(CorpusTest, BatchesHaveConfiguredShape) {
  BatchSampler sampler(CorpusManifest::open(paths_.artistic, Domain::artistic, 16),
                       CorpusManifest::open(paths_.realistic, Domain::realistic, 16), 16, 1);
  const auto batch = sampler.next_batch(4);
  EXPECT_EQ(batch.contents.sizes(), (std::vector<int64_t>{4, 3, 16, 16}));
  EXPECT_EQ(batch.styles.sizes(), (std::vector<int64_t>{4, 3, 16, 16}));
  EXPECT_NO_THROW(check_image(batch.contents));
  EXPECT_NO_THROW(check_image(batch.styles));
}

TEST_F(CorpusTest, SingleImageManifestsYieldThoseImages) {
  auto art = CorpusManifest::open(paths_.artistic, Domain::artistic, 16);
  auto real = CorpusManifest::open(paths_.realistic, Domain::realistic, 16);
  art.entries.resize(1);
  real.entries.resize(1);
  BatchSampler sampler(art, real, 16, 9);
  const auto batch = sampler.next_batch(1);
  EXPECT_TRUE(torch::equal(batch.styles, load_image(art.resolve(art.entries[0]), 16)));
  EXPECT_TRUE(torch::equal(batch.contents, load_image(real.resolve(real.entries[0]), 16)));
}

TEST_F(CorpusTest, FixedSeedReproducesTheBatchSequence) {
  const auto art = CorpusManifest::open(paths_.artistic, Domain::artistic, 16);
  const auto real = CorpusManifest::open(paths_.realistic, Domain::realistic, 16);
  BatchSampler a(art, real, 16, 42);
  BatchSampler b(art, real, 16, 42);
  for (int i = 0; i < 5; ++i) {
    const auto x = a.next_batch(3);
    const auto y = b.next_batch(3);
    EXPECT_EQ(x.content_ids, y.content_ids);
    EXPECT_EQ(x.style_ids, y.style_ids);
    EXPECT_TRUE(torch::equal(x.styles, y.styles));
  }
}

TEST_F(CorpusTest, RngStateRestoresTheStream) {
  const auto art = CorpusManifest::open(paths_.artistic, Domain::artistic, 16);
  const auto real = CorpusManifest::open(paths_.realistic, Domain::realistic, 16);
  BatchSampler a(art, real, 16, 42);
  a.next_batch(2);
  const auto state = a.rng_state();
  const auto expected = a.next_batch(2);
  BatchSampler b(art, real, 16, 0);
  b.set_rng_state(state);
  const auto got = b.next_batch(2);
  EXPECT_EQ(got.style_ids, expected.style_ids);
  EXPECT_EQ(got.content_ids, expected.content_ids);
}

TEST_F(CorpusTest, SamplingCoversEveryEntry) {
  const auto art = CorpusManifest::open(paths_.artistic, Domain::artistic, 16);
  const auto real = CorpusManifest::open(paths_.realistic, Domain::realistic, 16);
  BatchSampler sampler(art, real, 16, 3);
  std::set<std::size_t> styles;
  std::set<std::size_t> contents;
  for (std::size_t draw = 0; draw < 10 * art.entries.size(); ++draw) {
    const auto b = sampler.next_batch(1);
    styles.insert(b.style_ids[0]);
    contents.insert(b.content_ids[0]);
  }
  EXPECT_EQ(styles.size(), art.entries.size());
  EXPECT_EQ(contents.size(), real.entries.size());
}

TEST_F(CorpusTest, EmptyManifestIsAConfigError) {
  auto art = CorpusManifest::open(paths_.artistic, Domain::artistic, 16);
  CorpusManifest empty;
  empty.domain = Domain::realistic;
  EXPECT_THROW(BatchSampler(art, empty, 16, 0), ConfigError);
}

TEST(ToyCorpus, StylesAreDistinctAndImagesValid) {
  for (int s = 0; s < 3; ++s) {
    const auto p = toy::render_painting(s, 32, 1);
    EXPECT_NO_THROW(check_image(p));
    EXPECT_TRUE(torch::equal(p, toy::render_painting(s, 32, 1)));
  }
  EXPECT_FALSE(torch::equal(toy::render_painting(0, 32, 1), toy::render_painting(1, 32, 1)));
  EXPECT_NO_THROW(check_image(toy::render_photo(32, 2)));
}
