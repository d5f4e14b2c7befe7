#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace cast {

/// Number of feature taps feeding the style projector.
inline constexpr std::size_t kNumTaps = 4;
inline constexpr std::array<int64_t, kNumTaps> kTapChannels{64, 128, 256, 512};
inline constexpr std::array<int64_t, kNumTaps> kTapStrides{1, 2, 4, 8};

/// relu1_2, relu2_2, relu3_3, relu4_3.
const std::vector<std::string>& default_tap_names();

/// Post-activation feature maps, one per tap, each [batch, C_i, H_i, W_i].
struct FeaturePyramid {
  std::vector<torch::Tensor> maps;

  std::size_t size() const { return maps.size(); }
  int64_t batch() const { return maps.empty() ? 0 : maps.front().size(0); }
  const torch::Tensor& operator[](std::size_t i) const { return maps[i]; }
  FeaturePyramid detached() const;
};

/// Throws ArgumentError unless `pyramid` matches the tap table for an input
/// of the given batch and spatial size.
void check_tap_shapes(const FeaturePyramid& pyramid, int64_t batch, int64_t height, int64_t width);

/// The VGG-19 convolution stack up to conv4_3, with 3x3 zero-padded
/// convolutions and 2x2 max pooling between blocks.
class Vgg19Impl : public torch::nn::Module {
 public:
  Vgg19Impl();

  /// Runs an already-normalized batch and returns the post-ReLU outputs of
  /// `taps` (names like "relu3_3"), in the order given. Stops after the
  /// deepest requested tap.
  std::vector<torch::Tensor> forward_taps(const torch::Tensor& normalized, const std::vector<std::string>& taps);

  /// Ordered conv layer names: conv1_1 ... conv4_3.
  const std::vector<std::string>& conv_names() const { return names_; }
  torch::nn::Conv2d conv(const std::string& name) const;

 private:
  std::vector<std::string> names_;
  std::vector<torch::nn::Conv2d> convs_;
};
TORCH_MODULE(Vgg19);

/// True for relu names the stack produces (relu1_1 ... relu4_3).
bool is_known_tap(const std::string& name);

/// Frozen pretrained backbone with fixed multi-layer taps. Input images use
/// the library's [-1, 1] convention; conversion to the backbone's ImageNet
/// statistics happens inside. Copies share the underlying module.
class FeatureExtractor {
 public:
  /// He-initialized weights from a fixed seed. Used when no pretrained
  /// parameter archive is supplied.
  static FeatureExtractor random(uint64_t seed, std::vector<std::string> taps = default_tap_names());

  /// Reads `blob` (little-endian float32 parameters) and its sidecar
  /// `blob.json`, which lists tap names, tensor shapes and a SHA-256 of the
  /// blob. Throws IoError on hash mismatch and ConfigError on unknown taps.
  static FeatureExtractor load(const std::filesystem::path& blob);
  void save(const std::filesystem::path& blob) const;

  FeaturePyramid extract(const torch::Tensor& img) const;
  /// Post-activation relu4_1 map, used by the content metric.
  torch::Tensor relu4_1(const torch::Tensor& img) const;
  /// [-1, 1] -> ImageNet-normalized input.
  torch::Tensor normalize(const torch::Tensor& img) const;

  const std::vector<std::string>& taps() const { return taps_; }
  bool frozen() const { return frozen_; }
  void set_frozen(bool frozen);

  Vgg19 module() const { return net_; }
  void to(torch::Device device);
  /// SHA-256 of the serialized parameter blob, hex encoded.
  std::string content_hash() const;

 private:
  FeatureExtractor(Vgg19 net, std::vector<std::string> taps);
  std::vector<uint8_t> serialize_blob() const;

  Vgg19 net_;
  std::vector<std::string> taps_;
  bool frozen_ = true;
};

/// Hex SHA-256 of a byte buffer.
std::string sha256_hex(const void* data, std::size_t size);

}  // namespace cast
