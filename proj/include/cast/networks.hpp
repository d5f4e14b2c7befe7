#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

#include "cast/corpus.hpp"
#include "cast/feature_extractor.hpp"
#include "cast/style_projector.hpp"

namespace cast {

/// Number of style-conditioned normalization sites in the decoder.
inline constexpr std::size_t kModulationSites = 4;
/// Feature channels at each site, from the encoder/decoder junction outward.
inline constexpr std::array<int64_t, kModulationSites> kSiteChannels{512, 256, 128, 64};
/// Code layer consumed by each site (deepest code at the junction).
inline constexpr std::array<std::size_t, kModulationSites> kSiteCodeLayer{3, 2, 1, 0};

struct GeneratorConfig {
  std::vector<int64_t> code_dims{kCodeDims.begin(), kCodeDims.end()};
  int64_t head_hidden = 256;
};

enum class ModulationMode {
  learned,   // scale/shift from the per-site heads
  identity,  // scale = 1, shift = 0: plain instance-normalized auto-encoding
};

/// Maps one code layer to per-channel (scale, shift) for one site.
class ModulationHeadImpl : public torch::nn::Module {
 public:
  ModulationHeadImpl(int64_t code_dim, int64_t hidden, int64_t channels);
  /// Returns ([B, C], [B, C]).
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& code);
  int64_t channels() const { return channels_; }

 private:
  torch::nn::Linear hidden_{nullptr};
  torch::nn::Linear out_{nullptr};
  int64_t channels_;
};
TORCH_MODULE(ModulationHead);

/// Per-channel instance normalization over spatial positions.
torch::Tensor instance_normalize(const torch::Tensor& x, double eps = 1e-5);

/// Encoder (VGG-19 through relu4_1, reflection padded), style-conditioned
/// modulation at the junction and after each decoder upsampling, and a
/// mirrored decoder ending in tanh.
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(GeneratorConfig config = {});

  /// Copies conv1_1 .. conv4_1 from the backbone.
  void init_encoder_from(const FeatureExtractor& extractor);

  torch::Tensor encode(const torch::Tensor& content);
  torch::Tensor forward(const torch::Tensor& content, const StyleCode& code,
                        ModulationMode mode = ModulationMode::learned);

  std::vector<torch::Tensor> encoder_parameters() const;
  std::vector<torch::Tensor> decoder_parameters() const;
  std::vector<torch::Tensor> modulation_parameters() const;

 private:
  torch::Tensor modulate(const torch::Tensor& x, std::size_t site, const StyleCode& code, ModulationMode mode);

  GeneratorConfig config_;
  std::vector<std::pair<std::string, torch::nn::Conv2d>> encoder_;
  std::vector<torch::nn::Conv2d> decoder_;
  std::vector<ModulationHead> heads_;
};
TORCH_MODULE(Generator);

/// 70x70 PatchGAN: four 4x4 conv stages (three stride-2, one stride-1) then
/// a 4x4 stride-1 conv to one channel. A 256x256 input yields a 30x30 map.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  PatchDiscriminatorImpl();
  torch::Tensor logits(const torch::Tensor& img);
  /// Probability map strictly inside (0, 1).
  torch::Tensor forward(const torch::Tensor& img);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

/// Output probabilities are squeezed into [eps, 1 - eps] so that logs of the
/// map and of its complement stay finite in float32.
inline constexpr double kProbabilityEpsilon = 1e-6;

/// Spatial size of the discriminator map for a square input of `side`.
int64_t patch_map_side(int64_t side);

/// D_R and D_A with independent parameters.
struct DiscriminatorPair {
  PatchDiscriminator realistic;
  PatchDiscriminator artistic;

  torch::Tensor discriminate(const torch::Tensor& img, Domain which);
  torch::Tensor discriminate(const torch::Tensor& img, std::string_view which);
};

/// Extract + project.
StyleCode encode_style(const torch::Tensor& img, const FeatureExtractor& extractor, StyleProjector& projector);

/// Checks the stride contract and runs the generator.
torch::Tensor stylize(const torch::Tensor& content, const StyleCode& code, Generator& generator);

/// G(content, style_img): style code of `style_img`, then stylize.
torch::Tensor stylize_from_image(const torch::Tensor& content, const torch::Tensor& style_img,
                                 const FeatureExtractor& extractor, StyleProjector& projector, Generator& generator);

void set_requires_grad(torch::nn::Module& module, bool flag);

}  // namespace cast
