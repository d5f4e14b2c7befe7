#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cast/style_projector.hpp"

namespace cast {

inline constexpr int64_t kDefaultBankCapacity = 4096;

/// FIFO dictionary of negative style codes, one ring buffer per code layer.
/// All layers are pushed together and share occupancy and cursor. Stored
/// codes are detached copies.
///
/// Single writer; readers may call negatives() between pushes.
class StyleBank {
 public:
  explicit StyleBank(std::vector<int64_t> dims = {kCodeDims.begin(), kCodeDims.end()},
                     int64_t capacity = kDefaultBankCapacity);

  /// Appends every batch row of `code`, evicting the oldest entries when full.
  void push(const StyleCode& code);

  /// Current entries per layer as [N, K_i] copies, oldest first.
  std::vector<torch::Tensor> negatives() const;

  int64_t occupancy() const { return occupancy_; }
  int64_t capacity() const { return capacity_; }
  int64_t cursor() const { return cursor_; }
  const std::vector<int64_t>& dims() const { return dims_; }

  void to(torch::Device device);

  void save(const std::filesystem::path& file) const;
  static StyleBank load(const std::filesystem::path& file);

 private:
  std::vector<int64_t> dims_;
  int64_t capacity_;
  int64_t occupancy_ = 0;
  int64_t cursor_ = 0;
  std::vector<torch::Tensor> storage_;
};

}  // namespace cast
