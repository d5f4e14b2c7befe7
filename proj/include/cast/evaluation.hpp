#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "cast/corpus.hpp"
#include "cast/feature_extractor.hpp"
#include "cast/trainer.hpp"

namespace cast {

/// Mean squared difference of the relu4_1 maps of `a` and `b`, i.e. the
/// squared L2 distance divided by the feature count, averaged over the
/// batch. Symmetric, and zero iff the two feature maps agree.
torch::Tensor content_loss(const FeatureExtractor& extractor, const torch::Tensor& a, const torch::Tensor& b);

/// Same metric, used between arbitrary image pairs (e.g. output vs. style).
inline torch::Tensor perceptual_distance(const FeatureExtractor& extractor, const torch::Tensor& a,
                                         const torch::Tensor& b) {
  return content_loss(extractor, a, b);
}

struct StyleClassifierConfig {
  int64_t epochs = 200;
  double lr = 1e-2;
  int64_t image_size = 64;
  uint64_t seed = 0;
};

/// Frozen backbone plus a linear head over standardized [max ; avg] pooled
/// features of every tap, trained with cross-entropy.
class StyleClassifier {
 public:
  /// Trains on the labeled entries of `corpus`. Needs at least two labels and
  /// a label on every entry (ConfigError otherwise).
  static StyleClassifier train(const FeatureExtractor& extractor, const CorpusManifest& corpus,
                               const StyleClassifierConfig& config);

  /// Label index, or ArgumentError for a label outside the trained set.
  int64_t label_index(const std::string& label) const;
  const std::vector<std::string>& labels() const { return labels_; }

  torch::Tensor logits(const torch::Tensor& images) const;
  std::vector<std::string> predict(const torch::Tensor& images) const;
  /// Fraction of the labeled entries of `corpus` predicted correctly.
  double accuracy(const CorpusManifest& corpus) const;

  /// JSON with labels, standardization statistics, head weights and the
  /// backbone hash. load() rejects a backbone whose hash differs.
  void save(const std::filesystem::path& file) const;
  static StyleClassifier load(const std::filesystem::path& file, const FeatureExtractor& extractor);

  int64_t image_size() const { return image_size_; }

 private:
  StyleClassifier(FeatureExtractor extractor) : extractor_(std::move(extractor)) {}
  torch::Tensor embed(const torch::Tensor& images) const;

  FeatureExtractor extractor_;
  std::vector<std::string> labels_;
  torch::Tensor mean_;
  torch::Tensor std_;
  torch::Tensor weight_;  // [classes, D]
  torch::Tensor bias_;    // [classes]
  int64_t image_size_ = 64;
};

/// Count-and-divide: fraction of positions where predicted == target. Empty
/// input or a length mismatch is an ArgumentError.
double deception_rate(const std::vector<std::string>& predicted, const std::vector<std::string>& targets);

/// Classifies `stylized` ([N, 3, H, W]) and compares with `targets`. Unknown
/// target labels are an ArgumentError.
double deception_rate(const StyleClassifier& classifier, const torch::Tensor& stylized,
                      const std::vector<std::string>& targets);

struct EvalReport {
  double content_loss = 0.0;
  double perceptual_pair_distance = 0.0;
  /// Unset when no classifier was supplied or no pair has a target label.
  std::optional<double> deception_rate;
  int64_t n = 0;

  /// Throws NumericError/ArgumentError when an invariant does not hold.
  void validate() const;
  nlohmann::json to_json() const;
};

struct EvalPair {
  std::filesystem::path content;
  std::filesystem::path style;
  std::optional<std::string> target_label;
};

/// Reads a JSON list of {content, style, target_label?}. Relative paths
/// resolve against the manifest's directory.
std::vector<EvalPair> load_pairs(const std::filesystem::path& file);

/// Stylizes every pair at the model's training resolution and aggregates the
/// metrics. Deception is computed over the pairs that carry a target label.
EvalReport evaluate_pairs(Trainer& model, const std::vector<EvalPair>& pairs,
                          const StyleClassifier* classifier = nullptr);

}  // namespace cast
