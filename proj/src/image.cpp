#include "cast/image.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "cast/errors.hpp"

namespace cast {
namespace F = torch::nn::functional;

void check_image(const torch::Tensor& img, const char* what) {
  if (!img.defined() || img.dim() != 4 || img.size(1) != kImageChannels) {
    throw ArgumentError(std::string(what) + " must be a [batch, 3, height, width] tensor");
  }
  if (img.size(0) < 1 || img.size(2) < 1 || img.size(3) < 1) {
    throw ArgumentError(std::string(what) + " must not be empty");
  }
  if (!torch::isfinite(img).all().item<bool>()) {
    throw NumericError(std::string(what) + " contains non-finite values");
  }
  if (img.abs().max().item<double>() > 1.0 + 1e-4) {
    throw ArgumentError(std::string(what) + " has values outside [-1, 1]");
  }
}

void check_spatial_multiple(const torch::Tensor& img, int64_t multiple, const char* what) {
  if (img.dim() < 2 || img.size(-1) % multiple != 0 || img.size(-2) % multiple != 0) {
    throw ArgumentError(std::string(what) + " height and width must be multiples of " + std::to_string(multiple));
  }
}

torch::Tensor to_image_tensor(const torch::Tensor& rgb8) {
  auto t = rgb8;
  if (t.dim() == 3 && t.size(2) == 1) {
    t = t.expand({t.size(0), t.size(1), 3});
  }
  return t.permute({2, 0, 1}).unsqueeze(0).to(torch::kFloat32).div(127.5).sub(1.0).contiguous();
}

torch::Tensor to_rgb8(const torch::Tensor& img) {
  auto t = img.detach().to(torch::kCPU, torch::kFloat32);
  if (t.dim() == 4) {
    if (t.size(0) != 1) {
      throw ArgumentError("to_rgb8 expects a single image");
    }
    t = t.squeeze(0);
  }
  if (t.dim() != 3 || t.size(0) != kImageChannels) {
    throw ArgumentError("to_rgb8 expects a [3, height, width] image");
  }
  return t.add(1.0).mul(127.5).round().clamp(0, 255).to(torch::kUInt8).permute({1, 2, 0}).contiguous();
}

torch::Tensor resize_image(const torch::Tensor& img, int64_t height, int64_t width) {
  if (img.size(2) == height && img.size(3) == width) {
    return img;
  }
  const bool shrinking = height < img.size(2) || width < img.size(3);
  return F::interpolate(img, F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{height, width})
                                 .mode(torch::kBilinear)
                                 .align_corners(false)
                                 .antialias(shrinking))
      .clamp(-1.0, 1.0);
}

torch::Tensor center_crop(const torch::Tensor& img, int64_t height, int64_t width) {
  const int64_t top = (img.size(2) - height) / 2;
  const int64_t left = (img.size(3) - width) / 2;
  if (top < 0 || left < 0) {
    throw ArgumentError("crop is larger than the image");
  }
  return img.slice(2, top, top + height).slice(3, left, left + width);
}

torch::Tensor load_image_native(const std::filesystem::path& path) {
  return to_image_tensor(decode_image_file(path));
}

torch::Tensor load_image(const std::filesystem::path& path, int64_t size) {
  if (size <= 0) {
    throw ArgumentError("image size must be positive, got " + std::to_string(size));
  }
  auto img = load_image_native(path);
  const int64_t h = img.size(2);
  const int64_t w = img.size(3);
  int64_t rh = size;
  int64_t rw = size;
  if (h < w) {
    rw = std::max<int64_t>(size, static_cast<int64_t>(std::llround(static_cast<double>(w) * size / h)));
  } else if (w < h) {
    rh = std::max<int64_t>(size, static_cast<int64_t>(std::llround(static_cast<double>(h) * size / w)));
  }
  return center_crop(resize_image(img, rh, rw), size, size).contiguous();
}

void save_image(const torch::Tensor& img, const std::filesystem::path& path) {
  write_png(to_rgb8(img), path);
}

void AugmentSpec::validate() const {
  if (!(scale_range.first > 0.0) || !(scale_range.second > 0.0) || scale_range.first > scale_range.second) {
    throw ArgumentError("augment scale range must satisfy 0 < min <= max");
  }
  if (crop_size < 0) {
    throw ArgumentError("augment crop size must be non-negative");
  }
  if (rotation_range.first != -rotation_range.second || rotation_range.second < 0.0) {
    throw ArgumentError("augment rotation range must be symmetric about zero");
  }
}

void AugmentSpec::validate_for(int64_t image_side) const {
  validate();
  const auto smallest = static_cast<int64_t>(std::floor(scale_range.first * static_cast<double>(image_side) + 1e-9));
  const int64_t crop = crop_for(image_side);
  if (crop > image_side || crop > smallest) {
    throw ArgumentError("augment crop of " + std::to_string(crop) + " px does not fit an image of " +
                        std::to_string(image_side) + " px after the minimum resize");
  }
}

torch::Tensor rotate_image(const torch::Tensor& img, double degrees) {
  if (degrees == 0.0) {
    return img;
  }
  const double rad = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(rad);
  const double s = std::sin(rad);
  const double aspect = static_cast<double>(img.size(2)) / static_cast<double>(img.size(3));
  // Normalized grid coordinates; the aspect terms keep the rotation rigid on
  // non-square inputs.
  auto theta = torch::tensor({c, -s * aspect, 0.0, s / aspect, c, 0.0}, img.options()).view({1, 2, 3});
  theta = theta.expand({img.size(0), 2, 3});
  auto grid = F::affine_grid(theta, {img.size(0), img.size(1), img.size(2), img.size(3)}, false);
  return F::grid_sample(img, grid,
                        F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kReflection).align_corners(
                            false));
}

torch::Tensor random_view(const torch::Tensor& img, const AugmentSpec& spec, std::mt19937_64& rng) {
  const int64_t h = img.size(2);
  const int64_t w = img.size(3);
  const int64_t crop = spec.crop_for(std::min(h, w));
  const auto [smin, smax] = spec.scale_range;
  const double scale = smin == smax ? smin : std::uniform_real_distribution<double>(smin, smax)(rng);
  const double rmax = spec.rotation_range.second;
  const double angle = rmax == 0.0 ? 0.0 : std::uniform_real_distribution<double>(-rmax, rmax)(rng);

  auto view = img;
  if (scale != 1.0) {
    const auto rh = std::max(crop, static_cast<int64_t>(std::llround(scale * static_cast<double>(h))));
    const auto rw = std::max(crop, static_cast<int64_t>(std::llround(scale * static_cast<double>(w))));
    view = resize_image(view, rh, rw);
  }
  view = rotate_image(view, angle);
  const int64_t max_top = view.size(2) - crop;
  const int64_t max_left = view.size(3) - crop;
  const int64_t top = max_top == 0 ? 0 : std::uniform_int_distribution<int64_t>(0, max_top)(rng);
  const int64_t left = max_left == 0 ? 0 : std::uniform_int_distribution<int64_t>(0, max_left)(rng);
  return view.slice(2, top, top + crop).slice(3, left, left + crop).contiguous();
}

std::pair<torch::Tensor, torch::Tensor> augment_pair(const torch::Tensor& img, const AugmentSpec& spec,
                                                     std::mt19937_64& rng, bool augment_both) {
  check_image(img, "augment input");
  if (img.size(0) != 1) {
    throw ArgumentError("augment_pair expects a single image (batch 1)");
  }
  const int64_t side = std::min(img.size(2), img.size(3));
  spec.validate_for(side);
  const int64_t crop = spec.crop_for(side);
  torch::NoGradGuard no_grad;
  auto anchor = augment_both ? random_view(img, spec, rng) : center_crop(img, crop, crop).contiguous();
  auto positive = random_view(img, spec, rng);
  return {anchor, positive};
}

}  // namespace cast
