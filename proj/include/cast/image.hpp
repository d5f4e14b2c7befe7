#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <random>
#include <utility>

namespace cast {

inline constexpr int64_t kImageChannels = 3;

// Images are float tensors of shape [batch, 3, height, width] with values in
// [-1, 1]. The helpers below validate and convert that convention.

/// Throws ArgumentError unless `img` is a 4-D, 3-channel tensor; throws
/// NumericError if any value is non-finite. Values outside [-1, 1] (beyond a
/// small tolerance) are rejected as well.
void check_image(const torch::Tensor& img, const char* what = "image");

/// Throws ArgumentError unless height and width are multiples of `multiple`.
void check_spatial_multiple(const torch::Tensor& img, int64_t multiple, const char* what = "image");

/// Raw 8-bit RGB pixels as decoded from disk: [height, width, 3], uint8.
torch::Tensor decode_image_file(const std::filesystem::path& path);

/// PNG writer for 8-bit RGB/gray [height, width, channels] tensors.
void write_png(const torch::Tensor& rgb8, const std::filesystem::path& path);
void write_jpeg(const torch::Tensor& rgb8, const std::filesystem::path& path, int quality = 92);

/// uint8 HWC -> float [1, 3, H, W] in [-1, 1].
torch::Tensor to_image_tensor(const torch::Tensor& rgb8);
/// float [1, 3, H, W] (or [3, H, W]) in [-1, 1] -> uint8 HWC.
torch::Tensor to_rgb8(const torch::Tensor& img);

/// Decodes `path` and returns a 1x3xSxS tensor: the shorter side is resized
/// to `size`, then the image is center-cropped. Grayscale is replicated.
torch::Tensor load_image(const std::filesystem::path& path, int64_t size);

/// Decodes at native resolution, 1x3xHxW.
torch::Tensor load_image_native(const std::filesystem::path& path);

/// Writes a single image tensor in [-1, 1] as PNG.
void save_image(const torch::Tensor& img, const std::filesystem::path& path);

/// Bilinear resize of a [B, 3, H, W] batch.
torch::Tensor resize_image(const torch::Tensor& img, int64_t height, int64_t width);
torch::Tensor center_crop(const torch::Tensor& img, int64_t height, int64_t width);

/// Parameters of the random view used as the contrastive positive.
struct AugmentSpec {
  /// Resize factor range applied to the input side length.
  std::pair<double, double> scale_range{1.0, 1.5};
  /// Output crop side in pixels; 0 means "same as the input".
  int64_t crop_size = 0;
  /// Rotation range in degrees, symmetric about zero.
  std::pair<double, double> rotation_range{-15.0, 15.0};

  void validate() const;
  /// Throws ArgumentError if the crop cannot fit an image of side
  /// `image_side` after the smallest allowed resize.
  void validate_for(int64_t image_side) const;
  int64_t crop_for(int64_t image_side) const { return crop_size > 0 ? crop_size : image_side; }
};

/// Rotates a batch about its center by `degrees` using bilinear sampling
/// with reflection padding.
torch::Tensor rotate_image(const torch::Tensor& img, double degrees);

/// Returns (I, I+) for a batch-1 image. I is the center crop of `img`; I+ is
/// an independently resized, rotated and randomly cropped view. With
/// `augment_both`, I is drawn from the same random process instead of being
/// the plain center crop.
std::pair<torch::Tensor, torch::Tensor> augment_pair(const torch::Tensor& img, const AugmentSpec& spec,
                                                     std::mt19937_64& rng, bool augment_both = false);

/// One random view, the building block of augment_pair.
torch::Tensor random_view(const torch::Tensor& img, const AugmentSpec& spec, std::mt19937_64& rng);

}  // namespace cast
