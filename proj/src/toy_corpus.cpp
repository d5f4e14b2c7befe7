#include "cast/toy_corpus.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include <ATen/CPUGeneratorImpl.h>

#include "cast/corpus.hpp"
#include "cast/errors.hpp"
#include "cast/image.hpp"

namespace cast::toy {
namespace fs = std::filesystem;
namespace {

using Rgb = std::array<double, 3>;

struct Canvas {
  torch::Tensor y;  // [S, S] in [0, 1)
  torch::Tensor x;
};

Canvas make_canvas(int64_t size) {
  auto coords = (torch::arange(size, torch::kFloat32) + 0.5f) / static_cast<float>(size);
  auto grids = torch::meshgrid({coords, coords}, "ij");
  return {grids[0], grids[1]};
}

// Colors are specified in [0, 1] and the result is mapped to [-1, 1].
torch::Tensor paint(const torch::Tensor& weight, const Rgb& a, const Rgb& b) {
  std::vector<torch::Tensor> channels;
  for (int c = 0; c < 3; ++c) {
    channels.push_back(weight * static_cast<float>(b[c] - a[c]) + static_cast<float>(a[c]));
  }
  return torch::stack(channels, 0);
}

Rgb jitter(const Rgb& base, double amount, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-amount, amount);
  Rgb out{};
  for (int c = 0; c < 3; ++c) out[c] = std::clamp(base[c] + u(rng), 0.0, 1.0);
  return out;
}

torch::Tensor finish(torch::Tensor rgb01, double noise, std::mt19937_64& rng) {
  if (noise > 0.0) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(rng());
    rgb01 = rgb01 + torch::randn(rgb01.sizes(), gen, torch::TensorOptions().dtype(torch::kFloat32)) * noise;
  }
  return rgb01.clamp(0.0, 1.0).mul(2.0).sub(1.0).unsqueeze(0).contiguous();
}

// Warm diagonal stripes.
torch::Tensor stripes(int64_t size, std::mt19937_64& rng) {
  const auto cv = make_canvas(size);
  std::uniform_real_distribution<double> angle_d(0.0, std::numbers::pi);
  std::uniform_real_distribution<double> freq_d(3.0, 7.0);
  std::uniform_real_distribution<double> phase_d(0.0, 2.0 * std::numbers::pi);
  const double angle = angle_d(rng);
  const double freq = freq_d(rng);
  const auto t = cv.x * static_cast<float>(std::cos(angle)) + cv.y * static_cast<float>(std::sin(angle));
  auto wave = (torch::sin(t * static_cast<float>(2.0 * std::numbers::pi * freq) + static_cast<float>(phase_d(rng))) + 1.0) * 0.5;
  wave = torch::sigmoid((wave - 0.5) * 10.0);
  const Rgb a = jitter({0.80, 0.15, 0.10}, 0.08, rng);
  const Rgb b = jitter({1.00, 0.80, 0.20}, 0.08, rng);
  return finish(paint(wave, a, b), 0.03, rng);
}

// Bright dots on a dark blue ground.
torch::Tensor dots(int64_t size, std::mt19937_64& rng) {
  const auto cv = make_canvas(size);
  std::uniform_real_distribution<double> cells_d(3.0, 7.0);
  std::uniform_real_distribution<double> radius_d(0.18, 0.35);
  std::uniform_real_distribution<double> offset_d(0.0, 1.0);
  const double cells = std::floor(cells_d(rng));
  const double radius = radius_d(rng);
  const float ox = static_cast<float>(offset_d(rng));
  const float oy = static_cast<float>(offset_d(rng));
  auto fx = torch::frac(cv.x * static_cast<float>(cells) + ox) - 0.5;
  auto fy = torch::frac(cv.y * static_cast<float>(cells) + oy) - 0.5;
  auto dist = torch::sqrt(fx * fx + fy * fy);
  auto mask = torch::sigmoid((static_cast<float>(radius) - dist) * 40.0);
  const Rgb ground = jitter({0.05, 0.08, 0.30}, 0.05, rng);
  const Rgb dot = jitter({0.40, 0.90, 1.00}, 0.08, rng);
  return finish(paint(mask, ground, dot), 0.03, rng);
}

// Green/purple square tiles.
torch::Tensor mosaic(int64_t size, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> tiles_d(4, 10);
  std::uniform_real_distribution<double> mix_d(0.0, 1.0);
  const int tiles = tiles_d(rng);
  const Rgb green = jitter({0.15, 0.65, 0.25}, 0.06, rng);
  const Rgb purple = jitter({0.55, 0.20, 0.65}, 0.06, rng);
  auto tile_weights = torch::empty({tiles, tiles}, torch::kFloat32);
  auto acc = tile_weights.accessor<float, 2>();
  for (int i = 0; i < tiles; ++i) {
    for (int j = 0; j < tiles; ++j) acc[i][j] = mix_d(rng) < 0.5 ? 0.1f : 0.9f;
  }
  auto weights = tile_weights.unsqueeze(0).unsqueeze(0);
  weights = torch::nn::functional::interpolate(
                weights, torch::nn::functional::InterpolateFuncOptions()
                             .size(std::vector<int64_t>{size, size})
                             .mode(torch::kNearest))
                .squeeze(0)
                .squeeze(0);
  return finish(paint(weights, green, purple), 0.04, rng);
}

}  // namespace

torch::Tensor render_painting(int style, int64_t size, uint64_t seed) {
  if (size <= 0) {
    throw ArgumentError("toy image size must be positive");
  }
  std::mt19937_64 rng(seed * 7919 + static_cast<uint64_t>(style));
  switch (style) {
    case 0:
      return stripes(size, rng);
    case 1:
      return dots(size, rng);
    case 2:
      return mosaic(size, rng);
    default:
      throw ArgumentError("toy style index out of range: " + std::to_string(style));
  }
}

torch::Tensor render_photo(int64_t size, uint64_t seed) {
  if (size <= 0) {
    throw ArgumentError("toy image size must be positive");
  }
  std::mt19937_64 rng(seed * 104729 + 17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto cv = make_canvas(size);
  const float horizon = static_cast<float>(0.35 + 0.35 * u(rng));
  const Rgb sky_top = jitter({0.35, 0.55, 0.85}, 0.08, rng);
  const Rgb sky_low = jitter({0.85, 0.90, 0.95}, 0.05, rng);
  const Rgb ground_near = jitter({0.30, 0.40, 0.15}, 0.10, rng);
  const Rgb ground_far = jitter({0.55, 0.50, 0.35}, 0.10, rng);
  auto sky = paint((cv.y / horizon).clamp(0.0, 1.0), sky_top, sky_low);
  auto ground = paint(((cv.y - horizon) / (1.0f - horizon)).clamp(0.0, 1.0), ground_far, ground_near);
  auto is_sky = (cv.y < horizon).to(torch::kFloat32).unsqueeze(0);
  auto img = sky * is_sky + ground * (1.0 - is_sky);
  const int shapes = 2 + static_cast<int>(u(rng) * 3.0);
  for (int s = 0; s < shapes; ++s) {
    const Rgb color = {0.2 + 0.6 * u(rng), 0.2 + 0.6 * u(rng), 0.2 + 0.6 * u(rng)};
    const float cx = static_cast<float>(0.15 + 0.7 * u(rng));
    const float cy = static_cast<float>(0.25 + 0.6 * u(rng));
    const float r = static_cast<float>(0.06 + 0.14 * u(rng));
    torch::Tensor mask;
    if (u(rng) < 0.5) {
      mask = ((cv.x - cx).pow(2) + (cv.y - cy).pow(2) < r * r).to(torch::kFloat32);
    } else {
      mask = (((cv.x - cx).abs() < r) & ((cv.y - cy).abs() < r * 1.5f)).to(torch::kFloat32);
    }
    auto m = mask.unsqueeze(0);
    img = img * (1.0 - m) + paint(torch::ones_like(mask), color, color) * m;
  }
  return finish(img, 0.015, rng);
}

CorpusPaths write_corpus(const fs::path& root, int per_style, int photos, int64_t size, uint64_t seed) {
  CorpusPaths paths{root / "art", root / "real"};
  CorpusManifest art;
  art.root = paths.artistic;
  art.domain = Domain::artistic;
  art.size = size;
  CorpusManifest real;
  real.root = paths.realistic;
  real.domain = Domain::realistic;
  real.size = size;
  const auto& names = style_names();
  for (std::size_t s = 0; s < names.size(); ++s) {
    fs::create_directories(paths.artistic / names[s]);
    for (int i = 0; i < per_style; ++i) {
      const fs::path rel = fs::path(names[s]) / ("img_" + std::to_string(i) + ".png");
      save_image(render_painting(static_cast<int>(s), size, seed * 1000003 + s * 10007 + static_cast<uint64_t>(i)),
                 paths.artistic / rel);
      art.entries.push_back({rel, names[s]});
    }
  }
  fs::create_directories(paths.realistic);
  for (int i = 0; i < photos; ++i) {
    const fs::path rel = "photo_" + std::to_string(i) + ".png";
    save_image(render_photo(size, seed * 1000003 + static_cast<uint64_t>(i)), paths.realistic / rel);
    real.entries.push_back({rel, std::nullopt});
  }
  art.save(paths.artistic / "manifest.json");
  real.save(paths.realistic / "manifest.json");
  return paths;
}

}  // namespace cast::toy
