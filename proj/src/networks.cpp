#include "cast/networks.hpp"

#include <string>

#include "cast/errors.hpp"
#include "cast/image.hpp"

namespace cast {
namespace nn = torch::nn;

namespace {

nn::Conv2d reflect_conv(int64_t in, int64_t out) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1).padding_mode(torch::kReflect));
}

// Encoder layers (name, in, out); "pool" entries mark 2x2 max pooling.
struct EncoderLayer {
  const char* name;
  int64_t in;
  int64_t out;
};
constexpr std::array<EncoderLayer, 12> kEncoder{{
    {"conv1_1", 3, 64},
    {"conv1_2", 64, 64},
    {"pool", 0, 0},
    {"conv2_1", 64, 128},
    {"conv2_2", 128, 128},
    {"pool", 0, 0},
    {"conv3_1", 128, 256},
    {"conv3_2", 256, 256},
    {"conv3_3", 256, 256},
    {"conv3_4", 256, 256},
    {"pool", 0, 0},
    {"conv4_1", 256, 512},
}};

// Decoder convs between sites. Site k is applied before stage k; an
// upsampling follows every stage but the last.
constexpr std::array<std::array<int64_t, 2>, 9> kDecoder{{
    {512, 256},                                    // stage 0
    {256, 256}, {256, 256}, {256, 256}, {256, 128},  // stage 1
    {128, 128}, {128, 64},                         // stage 2
    {64, 64}, {64, 3},                             // stage 3
}};
constexpr std::array<std::size_t, kModulationSites + 1> kStageStart{0, 1, 5, 7, 9};

}  // namespace

ModulationHeadImpl::ModulationHeadImpl(int64_t code_dim, int64_t hidden, int64_t channels) : channels_(channels) {
  hidden_ = register_module("hidden", nn::Linear(code_dim, hidden));
  out_ = register_module("out", nn::Linear(hidden, 2 * channels));
  torch::NoGradGuard no_grad;
  // Start near the identity modulation.
  out_->weight.mul_(0.1);
  out_->bias.zero_();
  out_->bias.slice(0, 0, channels).fill_(1.0);
}

std::pair<torch::Tensor, torch::Tensor> ModulationHeadImpl::forward(const torch::Tensor& code) {
  auto params = out_->forward(torch::relu(hidden_->forward(code)));
  return {params.slice(1, 0, channels_), params.slice(1, channels_, 2 * channels_)};
}

torch::Tensor instance_normalize(const torch::Tensor& x, double eps) {
  const auto mean = x.mean({2, 3}, /*keepdim=*/true);
  const auto var = x.var({2, 3}, /*unbiased=*/false, /*keepdim=*/true);
  return (x - mean) / torch::sqrt(var + eps);
}

GeneratorImpl::GeneratorImpl(GeneratorConfig config) : config_(std::move(config)) {
  if (config_.code_dims.size() != kModulationSites) {
    throw ArgumentError("generator expects " + std::to_string(kModulationSites) + " code layers");
  }
  for (const auto& layer : kEncoder) {
    if (std::string(layer.name) == "pool") {
      encoder_.emplace_back("pool", nullptr);
      continue;
    }
    encoder_.emplace_back(layer.name, register_module(std::string("enc_") + layer.name, reflect_conv(layer.in, layer.out)));
  }
  for (std::size_t i = 0; i < kDecoder.size(); ++i) {
    decoder_.push_back(register_module("dec" + std::to_string(i), reflect_conv(kDecoder[i][0], kDecoder[i][1])));
  }
  for (std::size_t s = 0; s < kModulationSites; ++s) {
    heads_.push_back(register_module(
        "mod" + std::to_string(s),
        ModulationHead(config_.code_dims[kSiteCodeLayer[s]], config_.head_hidden, kSiteChannels[s])));
  }
}

void GeneratorImpl::init_encoder_from(const FeatureExtractor& extractor) {
  torch::NoGradGuard no_grad;
  auto vgg = extractor.module();
  for (auto& [name, conv] : encoder_) {
    if (!conv) continue;
    auto src = vgg->conv(name);
    conv->weight.copy_(src->weight);
    conv->bias.copy_(src->bias);
  }
}

torch::Tensor GeneratorImpl::encode(const torch::Tensor& content) {
  auto x = content;
  for (auto& [name, conv] : encoder_) {
    x = conv ? torch::relu(conv->forward(x)) : torch::max_pool2d(x, 2, 2);
  }
  return x;
}

torch::Tensor GeneratorImpl::modulate(const torch::Tensor& x, std::size_t site, const StyleCode& code,
                                      ModulationMode mode) {
  auto normalized = instance_normalize(x);
  if (mode == ModulationMode::identity) {
    return normalized;
  }
  auto [scale, shift] = heads_[site]->forward(code[kSiteCodeLayer[site]]);
  return normalized * scale.unsqueeze(-1).unsqueeze(-1) + shift.unsqueeze(-1).unsqueeze(-1);
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& content, const StyleCode& code, ModulationMode mode) {
  if (mode == ModulationMode::learned) {
    if (code.size() != kModulationSites) {
      throw ArgumentError("style code must have " + std::to_string(kModulationSites) + " layers");
    }
    for (std::size_t i = 0; i < code.size(); ++i) {
      if (code[i].dim() != 2 || code[i].size(1) != config_.code_dims[i] || code[i].size(0) != content.size(0)) {
        throw ArgumentError("style code layer " + std::to_string(i) + " does not match generator config or batch");
      }
    }
  }
  auto x = encode(content);
  for (std::size_t stage = 0; stage < kModulationSites; ++stage) {
    x = modulate(x, stage, code, mode);
    for (std::size_t i = kStageStart[stage]; i < kStageStart[stage + 1]; ++i) {
      x = decoder_[i]->forward(x);
      if (i + 1 < kDecoder.size()) {
        x = torch::relu(x);
      }
    }
    if (stage + 1 < kModulationSites) {
      x = torch::upsample_nearest2d(x, {x.size(2) * 2, x.size(3) * 2});
    }
  }
  return torch::tanh(x);
}

std::vector<torch::Tensor> GeneratorImpl::encoder_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& [name, conv] : encoder_) {
    if (!conv) continue;
    for (const auto& p : conv->parameters()) out.push_back(p);
  }
  return out;
}

std::vector<torch::Tensor> GeneratorImpl::decoder_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& conv : decoder_) {
    for (const auto& p : conv->parameters()) out.push_back(p);
  }
  return out;
}

std::vector<torch::Tensor> GeneratorImpl::modulation_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& h : heads_) {
    for (const auto& p : h->parameters()) out.push_back(p);
  }
  return out;
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl() {
  auto conv = [](int64_t in, int64_t out, int64_t stride) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, 4).stride(stride).padding(1));
  };
  auto norm = [](int64_t c) { return nn::InstanceNorm2d(nn::InstanceNorm2dOptions(c).affine(true)); };
  auto act = [] { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)); };
  body_ = register_module("body", nn::Sequential(conv(3, 64, 2), act(),                 //
                                                 conv(64, 128, 2), norm(128), act(),    //
                                                 conv(128, 256, 2), norm(256), act(),   //
                                                 conv(256, 512, 1), norm(512), act(),   //
                                                 conv(512, 1, 1)));
}

torch::Tensor PatchDiscriminatorImpl::logits(const torch::Tensor& img) {
  return body_->forward(img);
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& img) {
  return torch::sigmoid(logits(img)) * (1.0 - 2.0 * kProbabilityEpsilon) + kProbabilityEpsilon;
}

int64_t patch_map_side(int64_t side) {
  for (int i = 0; i < 3; ++i) side = (side + 2 - 4) / 2 + 1;
  side = side + 2 - 4 + 1;
  return side + 2 - 4 + 1;
}

torch::Tensor DiscriminatorPair::discriminate(const torch::Tensor& img, Domain which) {
  check_image(img, "discriminator input");
  return which == Domain::realistic ? realistic->forward(img) : artistic->forward(img);
}

torch::Tensor DiscriminatorPair::discriminate(const torch::Tensor& img, std::string_view which) {
  return discriminate(img, parse_domain(which));
}

StyleCode encode_style(const torch::Tensor& img, const FeatureExtractor& extractor, StyleProjector& projector) {
  return projector->forward(extractor.extract(img));
}

torch::Tensor stylize(const torch::Tensor& content, const StyleCode& code, Generator& generator) {
  check_image(content, "content image");
  check_spatial_multiple(content, 8, "content image");
  return generator->forward(content, code);
}

torch::Tensor stylize_from_image(const torch::Tensor& content, const torch::Tensor& style_img,
                                 const FeatureExtractor& extractor, StyleProjector& projector, Generator& generator) {
  check_image(content, "content image");
  check_spatial_multiple(content, 8, "content image");
  return generator->forward(content, encode_style(style_img, extractor, projector));
}

void set_requires_grad(torch::nn::Module& module, bool flag) {
  for (auto& p : module.parameters()) p.set_requires_grad(flag);
}

}  // namespace cast
