#include "cast/feature_extractor.hpp"

#include <openssl/evp.h>

#include <ATen/CPUGeneratorImpl.h>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "cast/errors.hpp"
#include "cast/image.hpp"

namespace cast {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kBlobFormat = "caststyle-vgg19-f32le";

// Convolutions per block up to the deepest supported tap.
constexpr std::array<int, 4> kBlockDepth{2, 2, 4, 3};
constexpr std::array<int64_t, 4> kBlockWidth{64, 128, 256, 512};

}  // namespace

const std::vector<std::string>& default_tap_names() {
  static const std::vector<std::string> names{"relu1_2", "relu2_2", "relu3_3", "relu4_3"};
  return names;
}

FeaturePyramid FeaturePyramid::detached() const {
  FeaturePyramid out;
  for (const auto& m : maps) out.maps.push_back(m.detach());
  return out;
}

void check_tap_shapes(const FeaturePyramid& pyramid, int64_t batch, int64_t height, int64_t width) {
  if (pyramid.size() != kNumTaps) {
    throw ArgumentError("feature pyramid must have " + std::to_string(kNumTaps) + " maps");
  }
  for (std::size_t i = 0; i < kNumTaps; ++i) {
    const auto& m = pyramid[i];
    if (m.dim() != 4 || m.size(0) != batch || m.size(1) != kTapChannels[i] || m.size(2) != height / kTapStrides[i] ||
        m.size(3) != width / kTapStrides[i]) {
      throw ArgumentError("feature map " + std::to_string(i) + " does not match the tap shape table");
    }
  }
}

bool is_known_tap(const std::string& name) {
  for (std::size_t b = 0; b < kBlockDepth.size(); ++b) {
    for (int c = 1; c <= kBlockDepth[b]; ++c) {
      if (name == "relu" + std::to_string(b + 1) + "_" + std::to_string(c)) return true;
    }
  }
  return false;
}

Vgg19Impl::Vgg19Impl() {
  int64_t in = 3;
  for (std::size_t b = 0; b < kBlockDepth.size(); ++b) {
    for (int c = 1; c <= kBlockDepth[b]; ++c) {
      const auto name = "conv" + std::to_string(b + 1) + "_" + std::to_string(c);
      auto conv = register_module(name, torch::nn::Conv2d(torch::nn::Conv2dOptions(in, kBlockWidth[b], 3).padding(1)));
      names_.push_back(name);
      convs_.push_back(conv);
      in = kBlockWidth[b];
    }
  }
}

torch::nn::Conv2d Vgg19Impl::conv(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) {
    throw ArgumentError("no conv layer named '" + name + "'");
  }
  return convs_[static_cast<std::size_t>(it - names_.begin())];
}

std::vector<torch::Tensor> Vgg19Impl::forward_taps(const torch::Tensor& normalized, const std::vector<std::string>& taps) {
  std::vector<torch::Tensor> out(taps.size());
  std::size_t remaining = taps.size();
  auto x = normalized;
  std::size_t layer = 0;
  for (std::size_t b = 0; b < kBlockDepth.size() && remaining > 0; ++b) {
    if (b > 0) {
      x = torch::max_pool2d(x, 2, 2);
    }
    for (int c = 1; c <= kBlockDepth[b] && remaining > 0; ++c, ++layer) {
      x = torch::relu(convs_[layer]->forward(x));
      const auto relu = "relu" + std::to_string(b + 1) + "_" + std::to_string(c);
      for (std::size_t t = 0; t < taps.size(); ++t) {
        if (taps[t] == relu) {
          out[t] = x;
          --remaining;
        }
      }
    }
  }
  if (remaining > 0) {
    throw ArgumentError("requested tap is not produced by the backbone");
  }
  return out;
}

FeatureExtractor::FeatureExtractor(Vgg19 net, std::vector<std::string> taps) : net_(std::move(net)), taps_(std::move(taps)) {
  for (const auto& t : taps_) {
    if (!is_known_tap(t)) {
      throw ConfigError("tap '" + t + "' does not name a backbone layer");
    }
  }
  net_->eval();
  set_frozen(true);
}

FeatureExtractor FeatureExtractor::random(uint64_t seed, std::vector<std::string> taps) {
  Vgg19 net;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  torch::NoGradGuard no_grad;
  for (const auto& name : net->conv_names()) {
    auto conv = net->conv(name);
    const auto fan_in = static_cast<double>(conv->weight.size(1) * conv->weight.size(2) * conv->weight.size(3));
    conv->weight.normal_(0.0, std::sqrt(2.0 / fan_in), gen);
    conv->bias.zero_();
  }
  return FeatureExtractor(std::move(net), std::move(taps));
}

void FeatureExtractor::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (auto& p : net_->parameters()) {
    p.set_requires_grad(!frozen);
  }
}

void FeatureExtractor::to(torch::Device device) {
  net_->to(device);
}

torch::Tensor FeatureExtractor::normalize(const torch::Tensor& img) const {
  const auto opts = img.options();
  const auto mean = torch::tensor({0.485, 0.456, 0.406}, opts).view({1, 3, 1, 1});
  const auto std = torch::tensor({0.229, 0.224, 0.225}, opts).view({1, 3, 1, 1});
  return ((img + 1.0) * 0.5 - mean) / std;
}

FeaturePyramid FeatureExtractor::extract(const torch::Tensor& img) const {
  check_image(img, "extractor input");
  check_spatial_multiple(img, 8, "extractor input");
  FeaturePyramid out;
  Vgg19 net = net_;  // holders share the module; forward is non-const
  out.maps = net->forward_taps(normalize(img), taps_);
  return out;
}

torch::Tensor FeatureExtractor::relu4_1(const torch::Tensor& img) const {
  check_image(img, "extractor input");
  check_spatial_multiple(img, 8, "extractor input");
  Vgg19 net = net_;
  return net->forward_taps(normalize(img), {"relu4_1"}).front();
}

std::vector<uint8_t> FeatureExtractor::serialize_blob() const {
  std::vector<uint8_t> bytes;
  for (const auto& name : net_->conv_names()) {
    auto conv = net_->conv(name);
    for (const auto& t : {conv->weight, conv->bias}) {
      const auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
      const auto* p = reinterpret_cast<const uint8_t*>(c.data_ptr<float>());
      bytes.insert(bytes.end(), p, p + c.numel() * sizeof(float));
    }
  }
  return bytes;
}

std::string sha256_hex(const void* data, std::size_t size) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return hex.str();
}

std::string FeatureExtractor::content_hash() const {
  const auto blob = serialize_blob();
  return sha256_hex(blob.data(), blob.size());
}

void FeatureExtractor::save(const fs::path& blob) const {
  const auto bytes = serialize_blob();
  json tensors = json::array();
  for (const auto& name : net_->conv_names()) {
    auto conv = net_->conv(name);
    tensors.push_back({{"name", name + ".weight"}, {"shape", conv->weight.sizes().vec()}});
    tensors.push_back({{"name", name + ".bias"}, {"shape", conv->bias.sizes().vec()}});
  }
  json sidecar{{"format", kBlobFormat},
               {"taps", taps_},
               {"tensors", tensors},
               {"sha256", sha256_hex(bytes.data(), bytes.size())}};
  {
    std::ofstream out(blob, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("cannot write backbone weights '" + blob.string() + "'");
  }
  std::ofstream side(blob.string() + ".json");
  side << sidecar.dump(2) << '\n';
  if (!side) throw IoError("cannot write backbone sidecar for '" + blob.string() + "'");
}

FeatureExtractor FeatureExtractor::load(const fs::path& blob) {
  const fs::path sidecar_path = blob.string() + ".json";
  std::ifstream side(sidecar_path);
  if (!side) {
    throw IoError("missing backbone sidecar '" + sidecar_path.string() + "'");
  }
  json sidecar;
  try {
    sidecar = json::parse(side);
  } catch (const json::exception& e) {
    throw ConfigError("malformed backbone sidecar: " + std::string(e.what()));
  }
  if (sidecar.value("format", "") != kBlobFormat) {
    throw ConfigError("unrecognized backbone weight format in '" + sidecar_path.string() + "'");
  }
  std::ifstream in(blob, std::ios::binary);
  if (!in) {
    throw IoError("cannot read backbone weights '" + blob.string() + "'");
  }
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (sha256_hex(bytes.data(), bytes.size()) != sidecar.at("sha256").get<std::string>()) {
    throw IoError("backbone weights '" + blob.string() + "' do not match the sidecar hash");
  }
  Vgg19 net;
  std::size_t offset = 0;
  torch::NoGradGuard no_grad;
  for (const auto& name : net->conv_names()) {
    auto conv = net->conv(name);
    for (auto* t : {&conv->weight, &conv->bias}) {
      const auto n = static_cast<std::size_t>(t->numel()) * sizeof(float);
      if (offset + n > bytes.size()) {
        throw IoError("backbone weights '" + blob.string() + "' are truncated");
      }
      auto src = torch::from_blob(bytes.data() + offset, t->sizes(), torch::kFloat32);
      t->copy_(src);
      offset += n;
    }
  }
  if (offset != bytes.size()) {
    throw IoError("backbone weights '" + blob.string() + "' have trailing data");
  }
  return FeatureExtractor(std::move(net), sidecar.at("taps").get<std::vector<std::string>>());
}

}  // namespace cast
