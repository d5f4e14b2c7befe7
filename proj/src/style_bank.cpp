#include "cast/style_bank.hpp"

#include <string>

#include "cast/errors.hpp"

namespace cast {

StyleBank::StyleBank(std::vector<int64_t> dims, int64_t capacity) : dims_(std::move(dims)), capacity_(capacity) {
  if (capacity_ <= 0) {
    throw ArgumentError("bank capacity must be positive");
  }
  if (dims_.empty()) {
    throw ArgumentError("bank needs at least one code layer");
  }
  for (auto k : dims_) {
    if (k <= 0) throw ArgumentError("bank code dims must be positive");
    storage_.push_back(torch::zeros({capacity_, k}, torch::kFloat32));
  }
}

void StyleBank::push(const StyleCode& code) {
  if (code.size() != dims_.size()) {
    throw ArgumentError("bank expects " + std::to_string(dims_.size()) + " code layers, got " +
                        std::to_string(code.size()));
  }
  const int64_t rows = code.batch();
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (code[i].dim() != 2 || code[i].size(1) != dims_[i] || code[i].size(0) != rows) {
      throw ArgumentError("code layer " + std::to_string(i) + " does not match bank dim " + std::to_string(dims_[i]));
    }
  }
  code.check_unit_norm(1e-3);
  torch::NoGradGuard no_grad;
  for (int64_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      storage_[i][cursor_].copy_(code[i][r].detach());
    }
    cursor_ = (cursor_ + 1) % capacity_;
    occupancy_ = std::min(occupancy_ + 1, capacity_);
  }
}

std::vector<torch::Tensor> StyleBank::negatives() const {
  std::vector<torch::Tensor> out;
  out.reserve(storage_.size());
  for (const auto& s : storage_) {
    if (occupancy_ < capacity_) {
      out.push_back(s.slice(0, 0, occupancy_).clone());
    } else {
      out.push_back(torch::cat({s.slice(0, cursor_, capacity_), s.slice(0, 0, cursor_)}, 0));
    }
  }
  return out;
}

void StyleBank::to(torch::Device device) {
  for (auto& s : storage_) s = s.to(device);
}

void StyleBank::save(const std::filesystem::path& file) const {
  torch::serialize::OutputArchive archive;
  archive.write("capacity", torch::tensor(capacity_, torch::kInt64));
  archive.write("occupancy", torch::tensor(occupancy_, torch::kInt64));
  archive.write("cursor", torch::tensor(cursor_, torch::kInt64));
  archive.write("layers", torch::tensor(static_cast<int64_t>(storage_.size()), torch::kInt64));
  for (std::size_t i = 0; i < storage_.size(); ++i) {
    archive.write("layer" + std::to_string(i), storage_[i].to(torch::kCPU));
  }
  try {
    archive.save_to(file.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot write style bank '" + file.string() + "': " + e.what_without_backtrace());
  }
}

StyleBank StyleBank::load(const std::filesystem::path& file) {
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(file.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot read style bank '" + file.string() + "': " + e.what_without_backtrace());
  }
  auto read_int = [&](const char* key) {
    torch::Tensor t;
    archive.read(key, t);
    return t.item<int64_t>();
  };
  const auto layers = read_int("layers");
  std::vector<torch::Tensor> storage;
  std::vector<int64_t> dims;
  for (int64_t i = 0; i < layers; ++i) {
    torch::Tensor t;
    archive.read("layer" + std::to_string(i), t);
    dims.push_back(t.size(1));
    storage.push_back(t);
  }
  StyleBank bank(dims, read_int("capacity"));
  bank.storage_ = std::move(storage);
  bank.occupancy_ = read_int("occupancy");
  bank.cursor_ = read_int("cursor");
  if (bank.occupancy_ < 0 || bank.occupancy_ > bank.capacity_ || bank.cursor_ < 0 || bank.cursor_ >= bank.capacity_) {
    throw IoError("style bank '" + file.string() + "' has inconsistent occupancy or cursor");
  }
  return bank;
}

}  // namespace cast
