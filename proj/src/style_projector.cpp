#include "cast/style_projector.hpp"

#include <string>

#include "cast/errors.hpp"

namespace cast {

StyleCode StyleCode::detached() const {
  StyleCode out;
  for (const auto& l : layers) out.layers.push_back(l.detach());
  return out;
}

StyleCode StyleCode::slice(int64_t begin, int64_t end) const {
  StyleCode out;
  for (const auto& l : layers) out.layers.push_back(l.slice(0, begin, end));
  return out;
}

void StyleCode::check_unit_norm(double tolerance) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto norms = layers[i].detach().to(torch::kFloat64).norm(2, {1});
    if (!torch::isfinite(norms).all().item<bool>()) {
      throw NumericError("style code layer " + std::to_string(i) + " is not finite");
    }
    const double worst = (norms - 1.0).abs().max().item<double>();
    if (worst > tolerance) {
      throw NumericError("style code layer " + std::to_string(i) + " deviates from unit norm by " +
                         std::to_string(worst));
    }
  }
}

StyleCode concat(const std::vector<StyleCode>& codes) {
  if (codes.empty()) return {};
  StyleCode out;
  for (std::size_t i = 0; i < codes.front().size(); ++i) {
    std::vector<torch::Tensor> parts;
    for (const auto& c : codes) parts.push_back(c[i]);
    out.layers.push_back(torch::cat(parts, 0));
  }
  return out;
}

void ProjectorConfig::validate() const {
  const auto n = code_dims.size();
  if (n == 0 || input_channels.size() != n || hidden_widths.size() != n) {
    throw ArgumentError("projector config needs matching per-layer channel, code and hidden widths");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (input_channels[i] <= 0 || code_dims[i] <= 0 || hidden_widths[i] <= 0) {
      throw ArgumentError("projector widths must be positive");
    }
  }
}

torch::Tensor normalize_rows(const torch::Tensor& x) {
  return x / (x.norm(2, {1}, /*keepdim=*/true) + kNormEpsilon);
}

StyleProjectorImpl::StyleProjectorImpl(ProjectorConfig config) : config_(std::move(config)) {
  config_.validate();
  const int64_t pooled_factor = config_.pooling == PoolingMode::max_avg_concat ? 2 : 1;
  for (std::size_t i = 0; i < config_.layers(); ++i) {
    const auto k = config_.code_dims[i];
    const auto h = config_.hidden_widths[i];
    reduce_.push_back(register_module(
        "reduce" + std::to_string(i),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(pooled_factor * config_.input_channels[i], k, 1))));
    heads_.push_back(register_module("mlp" + std::to_string(i),
                                     torch::nn::Sequential(torch::nn::ReLU(), torch::nn::Linear(k, h), torch::nn::ReLU(),
                                                           torch::nn::Linear(h, h), torch::nn::ReLU(),
                                                           torch::nn::Linear(h, k))));
  }
}

torch::Tensor StyleProjectorImpl::pool(const torch::Tensor& map) const {
  const auto flat = map.flatten(2);
  switch (config_.pooling) {
    case PoolingMode::max_avg_concat:
      return torch::cat({std::get<0>(flat.max(2)), flat.mean(2)}, 1);
    case PoolingMode::avg:
      return flat.mean(2);
    case PoolingMode::max:
      return std::get<0>(flat.max(2));
  }
  return {};
}

StyleCode StyleProjectorImpl::forward(const FeaturePyramid& features) {
  if (features.size() != config_.layers()) {
    throw ArgumentError("projector expects " + std::to_string(config_.layers()) + " feature maps, got " +
                        std::to_string(features.size()));
  }
  StyleCode out;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& map = features[i];
    if (map.dim() != 4 || map.size(1) != config_.input_channels[i]) {
      throw ArgumentError("feature map " + std::to_string(i) + " has " + std::to_string(map.size(1)) +
                          " channels, projector expects " + std::to_string(config_.input_channels[i]));
    }
    if (!torch::isfinite(map).all().item<bool>()) {
      throw NumericError("feature map " + std::to_string(i) + " contains non-finite values");
    }
    auto pooled = pool(map).unsqueeze(-1).unsqueeze(-1);
    auto z = heads_[i]->forward(reduce_[i]->forward(pooled).flatten(1));
    out.layers.push_back(normalize_rows(z));
  }
  return out;
}

}  // namespace cast
