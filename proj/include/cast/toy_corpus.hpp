#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cast::toy {

// Procedural stand-ins for painting and photo corpora. Every style has a
// distinct palette and texture so that small classifiers can separate them.

inline const std::vector<std::string>& style_names() {
  static const std::vector<std::string> names{"stripes", "dots", "mosaic"};
  return names;
}

/// A 1x3xSxS "painting" of the given style index, values in [-1, 1].
torch::Tensor render_painting(int style, int64_t size, uint64_t seed);

/// A 1x3xSxS "photo": sky gradient, ground plane and a few solid shapes.
torch::Tensor render_photo(int64_t size, uint64_t seed);

struct CorpusPaths {
  std::filesystem::path artistic;
  std::filesystem::path realistic;
};

/// Writes `per_style` paintings of each style under `root/art/<style>/` and
/// `photos` photos under `root/real/`, plus a manifest.json in each domain
/// directory. Returns the two domain directories.
CorpusPaths write_corpus(const std::filesystem::path& root, int per_style, int photos, int64_t size, uint64_t seed);

}  // namespace cast::toy
