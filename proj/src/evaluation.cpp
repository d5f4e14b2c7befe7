#include "cast/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "cast/errors.hpp"
#include "cast/image.hpp"

namespace cast {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kClassifierFormat = "caststyle-style-classifier";
constexpr int64_t kEmbedChunk = 16;

std::vector<float> to_vector(const torch::Tensor& t) {
  const auto c = t.to(torch::kCPU, torch::kFloat32).contiguous();
  return {c.data_ptr<float>(), c.data_ptr<float>() + c.numel()};
}

torch::Tensor from_vector(const std::vector<float>& v, std::vector<int64_t> shape) {
  int64_t n = 1;
  for (auto d : shape) n *= d;
  if (static_cast<int64_t>(v.size()) != n) {
    throw IoError("classifier tensor has the wrong number of values");
  }
  return torch::tensor(v, torch::kFloat32).reshape(shape);
}

}  // namespace

torch::Tensor content_loss(const FeatureExtractor& extractor, const torch::Tensor& a, const torch::Tensor& b) {
  if (!a.sizes().equals(b.sizes())) {
    throw ArgumentError("content_loss needs images of matching shape");
  }
  const auto fa = extractor.relu4_1(a);
  const auto fb = extractor.relu4_1(b);
  return (fa - fb).pow(2).flatten(1).mean(1).mean();
}

torch::Tensor StyleClassifier::embed(const torch::Tensor& images) const {
  check_image(images, "classifier input");
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> rows;
  for (int64_t begin = 0; begin < images.size(0); begin += kEmbedChunk) {
    const auto chunk = images.slice(0, begin, std::min(images.size(0), begin + kEmbedChunk));
    const auto pyramid = extractor_.extract(chunk);
    std::vector<torch::Tensor> parts;
    for (const auto& m : pyramid.maps) {
      parts.push_back(m.amax({2, 3}));
      parts.push_back(m.mean({2, 3}));
    }
    rows.push_back(torch::cat(parts, 1).to(torch::kCPU));
  }
  return torch::cat(rows, 0);
}

StyleClassifier StyleClassifier::train(const FeatureExtractor& extractor, const CorpusManifest& corpus,
                                       const StyleClassifierConfig& config) {
  if (config.epochs <= 0 || !(config.lr > 0.0) || config.image_size <= 0 || config.image_size % 8 != 0) {
    throw ConfigError("classifier needs positive epochs and lr and an image size that is a multiple of 8");
  }
  const auto labels = corpus.labels();
  if (labels.size() < 2) {
    throw ConfigError("style classifier needs at least two labels in the corpus");
  }
  StyleClassifier clf(extractor);
  clf.labels_ = labels;
  clf.image_size_ = config.image_size;

  std::vector<torch::Tensor> images;
  std::vector<int64_t> targets;
  for (const auto& entry : corpus.entries) {
    if (!entry.label) {
      throw ConfigError("corpus entry '" + entry.path.string() + "' has no label");
    }
    images.push_back(load_image(corpus.resolve(entry), config.image_size));
    targets.push_back(clf.label_index(*entry.label));
  }
  const auto x = clf.embed(torch::cat(images, 0));
  const auto y = torch::tensor(targets, torch::kLong);
  clf.mean_ = x.mean(0);
  clf.std_ = x.std(0, /*unbiased=*/false) + 1e-6;
  const auto xs = (x - clf.mean_) / clf.std_;

  torch::manual_seed(config.seed);
  auto weight = torch::zeros({static_cast<int64_t>(labels.size()), x.size(1)}, torch::requires_grad());
  auto bias = torch::zeros({static_cast<int64_t>(labels.size())}, torch::requires_grad());
  torch::optim::Adam opt({weight, bias}, torch::optim::AdamOptions(config.lr).weight_decay(1e-4));
  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    opt.zero_grad();
    const auto loss = torch::nn::functional::cross_entropy(torch::addmm(bias, xs, weight.t()), y);
    loss.backward();
    opt.step();
  }
  clf.weight_ = weight.detach();
  clf.bias_ = bias.detach();
  return clf;
}

int64_t StyleClassifier::label_index(const std::string& label) const {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] == label) return static_cast<int64_t>(i);
  }
  throw ArgumentError("label '" + label + "' is not one of the classifier's classes");
}

torch::Tensor StyleClassifier::logits(const torch::Tensor& images) const {
  const auto xs = (embed(images) - mean_) / std_;
  return torch::addmm(bias_, xs, weight_.t());
}

std::vector<std::string> StyleClassifier::predict(const torch::Tensor& images) const {
  const auto idx = logits(images).argmax(1);
  std::vector<std::string> out;
  for (int64_t i = 0; i < idx.size(0); ++i) out.push_back(labels_[idx[i].item<int64_t>()]);
  return out;
}

double StyleClassifier::accuracy(const CorpusManifest& corpus) const {
  std::vector<torch::Tensor> images;
  std::vector<std::string> targets;
  for (const auto& entry : corpus.entries) {
    if (!entry.label) continue;
    images.push_back(load_image(corpus.resolve(entry), image_size_));
    targets.push_back(*entry.label);
  }
  if (images.empty()) {
    throw ArgumentError("accuracy needs at least one labeled entry");
  }
  return deception_rate(predict(torch::cat(images, 0)), targets);
}

void StyleClassifier::save(const fs::path& file) const {
  const json j{{"format", kClassifierFormat},
               {"labels", labels_},
               {"image_size", image_size_},
               {"extractor_sha256", extractor_.content_hash()},
               {"dim", weight_.size(1)},
               {"mean", to_vector(mean_)},
               {"std", to_vector(std_)},
               {"weight", to_vector(weight_)},
               {"bias", to_vector(bias_)}};
  const fs::path tmp = file.string() + ".partial";
  {
    std::ofstream out(tmp);
    out << j.dump() << '\n';
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("cannot write classifier '" + file.string() + "'");
    }
  }
  fs::rename(tmp, file);
}

StyleClassifier StyleClassifier::load(const fs::path& file, const FeatureExtractor& extractor) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read classifier '" + file.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("malformed classifier file: " + std::string(e.what()));
  }
  if (j.value("format", "") != kClassifierFormat) {
    throw IoError("'" + file.string() + "' is not a style classifier");
  }
  if (j.at("extractor_sha256").get<std::string>() != extractor.content_hash()) {
    throw ConfigError("classifier was trained on a different backbone");
  }
  StyleClassifier clf(extractor);
  clf.labels_ = j.at("labels").get<std::vector<std::string>>();
  clf.image_size_ = j.at("image_size").get<int64_t>();
  const auto dim = j.at("dim").get<int64_t>();
  const auto k = static_cast<int64_t>(clf.labels_.size());
  clf.mean_ = from_vector(j.at("mean").get<std::vector<float>>(), {dim});
  clf.std_ = from_vector(j.at("std").get<std::vector<float>>(), {dim});
  clf.weight_ = from_vector(j.at("weight").get<std::vector<float>>(), {k, dim});
  clf.bias_ = from_vector(j.at("bias").get<std::vector<float>>(), {k});
  return clf;
}

double deception_rate(const std::vector<std::string>& predicted, const std::vector<std::string>& targets) {
  if (predicted.empty()) {
    throw ArgumentError("deception rate of an empty set is undefined");
  }
  if (predicted.size() != targets.size()) {
    throw ArgumentError("prediction and target counts differ");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == targets[i];
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

double deception_rate(const StyleClassifier& classifier, const torch::Tensor& stylized,
                      const std::vector<std::string>& targets) {
  for (const auto& t : targets) classifier.label_index(t);
  if (stylized.size(0) != static_cast<int64_t>(targets.size())) {
    throw ArgumentError("one target label per stylized image is required");
  }
  if (targets.empty()) {
    throw ArgumentError("deception rate of an empty set is undefined");
  }
  return deception_rate(classifier.predict(stylized), targets);
}

void EvalReport::validate() const {
  if (n <= 0) throw ArgumentError("evaluation report has no samples");
  require_finite(content_loss, "content_loss");
  require_finite(perceptual_pair_distance, "perceptual_pair_distance");
  if (deception_rate && !(*deception_rate >= 0.0 && *deception_rate <= 1.0)) {
    throw NumericError("deception rate outside [0, 1]");
  }
}

json EvalReport::to_json() const {
  return json{{"content_loss", content_loss},
              {"perceptual_pair_distance", perceptual_pair_distance},
              {"deception_rate", deception_rate ? json(*deception_rate) : json(nullptr)},
              {"n", n}};
}

std::vector<EvalPair> load_pairs(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read pair manifest '" + file.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed pair manifest: " + std::string(e.what()));
  }
  if (!j.is_array()) throw ConfigError("pair manifest must be a JSON list");
  const fs::path base = file.has_parent_path() ? file.parent_path() : fs::path(".");
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  std::vector<EvalPair> pairs;
  for (const auto& item : j) {
    if (!item.is_object() || !item.contains("content") || !item.contains("style")) {
      throw ConfigError("every pair needs 'content' and 'style'");
    }
    EvalPair pair{resolve(item["content"].get<std::string>()), resolve(item["style"].get<std::string>()), {}};
    if (item.contains("target_label") && !item["target_label"].is_null()) {
      pair.target_label = item["target_label"].get<std::string>();
    }
    pairs.push_back(std::move(pair));
  }
  if (pairs.empty()) throw ConfigError("pair manifest is empty");
  return pairs;
}

EvalReport evaluate_pairs(Trainer& model, const std::vector<EvalPair>& pairs, const StyleClassifier* classifier) {
  if (pairs.empty()) throw ArgumentError("no pairs to evaluate");
  const int64_t size = model.config().image_size;
  const auto& extractor = model.extractor();
  torch::NoGradGuard no_grad;
  double content_sum = 0.0;
  double pair_sum = 0.0;
  std::vector<torch::Tensor> labeled;
  std::vector<std::string> targets;
  for (const auto& pair : pairs) {
    const auto content = load_image(pair.content, size).to(model.device());
    const auto style = load_image(pair.style, size).to(model.device());
    const auto out = model.stylize(content, style);
    content_sum += content_loss(extractor, content, out).item<double>();
    pair_sum += perceptual_distance(extractor, out, style).item<double>();
    if (pair.target_label) {
      labeled.push_back(out.to(torch::kCPU));
      targets.push_back(*pair.target_label);
    }
  }
  EvalReport report;
  report.n = static_cast<int64_t>(pairs.size());
  report.content_loss = content_sum / static_cast<double>(report.n);
  report.perceptual_pair_distance = pair_sum / static_cast<double>(report.n);
  if (classifier && !labeled.empty()) {
    std::vector<torch::Tensor> resized;
    for (const auto& img : labeled) {
      resized.push_back(img.size(2) == classifier->image_size() ? img
                                                                : resize_image(img, classifier->image_size(),
                                                                               classifier->image_size()));
    }
    report.deception_rate = deception_rate(*classifier, torch::cat(resized, 0), targets);
  }
  report.validate();
  return report;
}

}  // namespace cast
