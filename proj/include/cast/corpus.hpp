#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace cast {

enum class Domain { artistic, realistic };

std::string_view to_string(Domain domain);
/// Accepts "artistic" or "realistic"; anything else is an ArgumentError.
Domain parse_domain(std::string_view tag);

struct CorpusEntry {
  std::filesystem::path path;
  std::optional<std::string> label;
};

/// An ordered list of images belonging to one domain. Serialized as
/// `{domain, size, entries: [{path, label?}]}`; relative paths resolve
/// against `root`.
struct CorpusManifest {
  std::filesystem::path root;
  Domain domain = Domain::artistic;
  int64_t size = 256;
  std::vector<CorpusEntry> entries;

  /// Recursively collects *.png / *.jpg / *.jpeg under `root`. Files in a
  /// subdirectory get the subdirectory name as their label.
  static CorpusManifest scan_directory(const std::filesystem::path& root, Domain domain, int64_t size);
  /// Reads `dir/manifest.json` when present, otherwise scans `dir`. A path to
  /// a JSON file is read directly.
  static CorpusManifest open(const std::filesystem::path& dir_or_file, Domain domain, int64_t size);
  static CorpusManifest load(const std::filesystem::path& json_path);
  void save(const std::filesystem::path& json_path) const;

  std::filesystem::path resolve(const CorpusEntry& entry) const;
  /// Sorted distinct labels.
  std::vector<std::string> labels() const;
  bool empty() const { return entries.empty(); }
  std::size_t ssize() const { return entries.size(); }

  /// Checks every path exists and decodes. Throws DecodeError / ConfigError.
  void validate() const;
};

/// A sampled pair of content and style batches plus the manifest indices
/// they came from.
struct Batch {
  torch::Tensor contents;
  torch::Tensor styles;
  std::vector<std::size_t> content_ids;
  std::vector<std::size_t> style_ids;
};

/// Draws content images from the realistic corpus and style images from the
/// artistic corpus, independently and uniformly with replacement. Decoded
/// images are cached. Each sampler owns its random state; do not share one
/// across threads.
class BatchSampler {
 public:
  BatchSampler(CorpusManifest artistic, CorpusManifest realistic, int64_t image_size, uint64_t seed);

  Batch next_batch(int64_t batch);

  const CorpusManifest& artistic() const { return artistic_; }
  const CorpusManifest& realistic() const { return realistic_; }
  /// Image at `index` of the given corpus, 1x3xSxS.
  const torch::Tensor& image(Domain domain, std::size_t index);

  std::string rng_state() const;
  void set_rng_state(const std::string& state);

 private:
  CorpusManifest artistic_;
  CorpusManifest realistic_;
  int64_t image_size_;
  std::mt19937_64 rng_;
  std::vector<torch::Tensor> art_cache_;
  std::vector<torch::Tensor> real_cache_;
};

/// Serializes a mt19937_64 state as text (the standard stream format).
std::string serialize_rng(const std::mt19937_64& rng);
void deserialize_rng(std::mt19937_64& rng, const std::string& state);

}  // namespace cast
