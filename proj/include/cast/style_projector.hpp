#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <vector>

#include "cast/feature_extractor.hpp"

namespace cast {

/// Per-layer style code widths.
inline constexpr std::array<int64_t, kNumTaps> kCodeDims{512, 1024, 2048, 2048};

/// One unit-norm vector per tap and batch element: layers[i] is [batch, K_i].
struct StyleCode {
  std::vector<torch::Tensor> layers;

  std::size_t size() const { return layers.size(); }
  int64_t batch() const { return layers.empty() ? 0 : layers.front().size(0); }
  const torch::Tensor& operator[](std::size_t i) const { return layers[i]; }
  StyleCode detached() const;
  /// Rows [begin, end) of every layer.
  StyleCode slice(int64_t begin, int64_t end) const;
  /// Throws NumericError if any layer has a row whose norm differs from 1
  /// by more than `tolerance`, or non-finite values.
  void check_unit_norm(double tolerance) const;
};

StyleCode concat(const std::vector<StyleCode>& codes);

enum class PoolingMode {
  max_avg_concat,  // [max-pool ; avg-pool], 2*C inputs per layer
  avg,
  max,
};

struct ProjectorConfig {
  std::vector<int64_t> input_channels{kTapChannels.begin(), kTapChannels.end()};
  std::vector<int64_t> code_dims{kCodeDims.begin(), kCodeDims.end()};
  /// Width of the two hidden perceptron layers per head.
  std::vector<int64_t> hidden_widths{kCodeDims.begin(), kCodeDims.end()};
  PoolingMode pooling = PoolingMode::max_avg_concat;

  void validate() const;
  std::size_t layers() const { return code_dims.size(); }
};

/// Small epsilon added to the norm before dividing.
inline constexpr double kNormEpsilon = 1e-8;

/// Multi-layer style projector. Each tap gets its own head:
/// global pooling -> 1x1 convolution -> ReLU -> Linear -> ReLU -> Linear
/// -> ReLU -> Linear -> L2 normalization.
class StyleProjectorImpl : public torch::nn::Module {
 public:
  explicit StyleProjectorImpl(ProjectorConfig config = {});

  StyleCode forward(const FeaturePyramid& features);

  const ProjectorConfig& config() const { return config_; }

 private:
  torch::Tensor pool(const torch::Tensor& map) const;

  ProjectorConfig config_;
  std::vector<torch::nn::Conv2d> reduce_;
  std::vector<torch::nn::Sequential> heads_;
};
TORCH_MODULE(StyleProjector);

/// L2-normalizes rows with the library epsilon.
torch::Tensor normalize_rows(const torch::Tensor& x);

}  // namespace cast
