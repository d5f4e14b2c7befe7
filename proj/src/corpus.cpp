#include "cast/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "cast/errors.hpp"
#include "cast/image.hpp"

namespace cast {
namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Domain domain) {
  return domain == Domain::artistic ? "artistic" : "realistic";
}

Domain parse_domain(std::string_view tag) {
  if (tag == "artistic") return Domain::artistic;
  if (tag == "realistic") return Domain::realistic;
  throw ArgumentError("unknown domain tag '" + std::string(tag) + "' (expected artistic or realistic)");
}

namespace {

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

CorpusManifest CorpusManifest::scan_directory(const fs::path& root, Domain domain, int64_t size) {
  if (!fs::is_directory(root)) {
    throw ConfigError("corpus directory '" + root.string() + "' does not exist");
  }
  CorpusManifest m;
  m.root = root;
  m.domain = domain;
  m.size = size;
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) {
      files.push_back(fs::relative(entry.path(), root));
    }
  }
  std::sort(files.begin(), files.end());
  for (auto& rel : files) {
    CorpusEntry e{rel, std::nullopt};
    if (rel.has_parent_path()) {
      e.label = rel.begin()->string();
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

CorpusManifest CorpusManifest::open(const fs::path& dir_or_file, Domain domain, int64_t size) {
  if (fs::is_regular_file(dir_or_file)) {
    return load(dir_or_file);
  }
  if (fs::is_regular_file(dir_or_file / "manifest.json")) {
    return load(dir_or_file / "manifest.json");
  }
  return scan_directory(dir_or_file, domain, size);
}

CorpusManifest CorpusManifest::load(const fs::path& json_path) {
  std::ifstream in(json_path);
  if (!in) {
    throw ConfigError("cannot read corpus manifest '" + json_path.string() + "'");
  }
  json doc;
  try {
    doc = json::parse(in);
    CorpusManifest m;
    m.root = json_path.parent_path();
    m.domain = parse_domain(doc.at("domain").get<std::string>());
    m.size = doc.value("size", int64_t{256});
    for (const auto& e : doc.at("entries")) {
      CorpusEntry entry{fs::path(e.at("path").get<std::string>()), std::nullopt};
      if (e.contains("label") && !e["label"].is_null()) {
        entry.label = e["label"].get<std::string>();
      }
      m.entries.push_back(std::move(entry));
    }
    return m;
  } catch (const json::exception& e) {
    throw ConfigError("malformed corpus manifest '" + json_path.string() + "': " + e.what());
  } catch (const ArgumentError& e) {
    throw ConfigError("malformed corpus manifest '" + json_path.string() + "': " + e.what());
  }
}

void CorpusManifest::save(const fs::path& json_path) const {
  // Paths are stored relative to the file being written, which need not be
  // the directory the manifest was read from.
  const fs::path base = fs::absolute(json_path).parent_path();
  json entries_json = json::array();
  for (const auto& e : entries) {
    const fs::path full = fs::absolute(resolve(e)).lexically_normal();
    const fs::path rel = full.lexically_relative(base);
    json j{{"path", (rel.empty() ? full : rel).generic_string()}};
    if (e.label) j["label"] = *e.label;
    entries_json.push_back(std::move(j));
  }
  json doc{{"domain", std::string(to_string(domain))}, {"size", size}, {"entries", std::move(entries_json)}};
  std::ofstream out(json_path);
  if (!out) {
    throw IoError("cannot write corpus manifest '" + json_path.string() + "'");
  }
  out << doc.dump(2) << '\n';
}

fs::path CorpusManifest::resolve(const CorpusEntry& entry) const {
  return entry.path.is_absolute() ? entry.path : root / entry.path;
}

std::vector<std::string> CorpusManifest::labels() const {
  std::set<std::string> unique;
  for (const auto& e : entries) {
    if (e.label) unique.insert(*e.label);
  }
  return {unique.begin(), unique.end()};
}

void CorpusManifest::validate() const {
  for (const auto& e : entries) {
    const auto p = resolve(e);
    if (!fs::exists(p)) {
      throw ConfigError("corpus entry '" + p.string() + "' does not exist");
    }
    (void)decode_image_file(p);
  }
}

std::string serialize_rng(const std::mt19937_64& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

void deserialize_rng(std::mt19937_64& rng, const std::string& state) {
  std::istringstream in(state);
  in >> rng;
  if (!in) {
    throw ConfigError("malformed random generator state");
  }
}

BatchSampler::BatchSampler(CorpusManifest artistic, CorpusManifest realistic, int64_t image_size, uint64_t seed)
    : artistic_(std::move(artistic)), realistic_(std::move(realistic)), image_size_(image_size), rng_(seed) {
  if (artistic_.empty()) {
    throw ConfigError("artistic corpus is empty");
  }
  if (realistic_.empty()) {
    throw ConfigError("realistic corpus is empty");
  }
  if (image_size_ <= 0) {
    throw ConfigError("image size must be positive");
  }
  art_cache_.resize(artistic_.entries.size());
  real_cache_.resize(realistic_.entries.size());
}

const torch::Tensor& BatchSampler::image(Domain domain, std::size_t index) {
  auto& cache = domain == Domain::artistic ? art_cache_ : real_cache_;
  const auto& manifest = domain == Domain::artistic ? artistic_ : realistic_;
  auto& slot = cache.at(index);
  if (!slot.defined()) {
    slot = load_image(manifest.resolve(manifest.entries[index]), image_size_);
  }
  return slot;
}

Batch BatchSampler::next_batch(int64_t batch) {
  if (batch <= 0) {
    throw ArgumentError("batch size must be positive");
  }
  Batch out;
  std::uniform_int_distribution<std::size_t> pick_real(0, realistic_.entries.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_art(0, artistic_.entries.size() - 1);
  std::vector<torch::Tensor> contents;
  std::vector<torch::Tensor> styles;
  for (int64_t i = 0; i < batch; ++i) {
    out.content_ids.push_back(pick_real(rng_));
    out.style_ids.push_back(pick_art(rng_));
  }
  for (auto id : out.content_ids) contents.push_back(image(Domain::realistic, id));
  for (auto id : out.style_ids) styles.push_back(image(Domain::artistic, id));
  out.contents = torch::cat(contents, 0);
  out.styles = torch::cat(styles, 0);
  return out;
}

std::string BatchSampler::rng_state() const {
  return serialize_rng(rng_);
}

void BatchSampler::set_rng_state(const std::string& state) {
  deserialize_rng(rng_, state);
}

}  // namespace cast
