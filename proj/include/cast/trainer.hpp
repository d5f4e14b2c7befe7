#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <memory>
#include <optional>
#include <random>
#include <string>

#include "cast/corpus.hpp"
#include "cast/feature_extractor.hpp"
#include "cast/image.hpp"
#include "cast/networks.hpp"
#include "cast/objectives.hpp"
#include "cast/style_bank.hpp"
#include "cast/style_projector.hpp"

namespace cast {

/// Ablation switches. `no_de` excludes `mix_de` and `one_de`.
struct AblationFlags {
  bool no_de = false;            // no discriminators, no adversarial term
  bool mix_de = false;           // one discriminator shared by both domains
  bool one_de = false;           // artistic discriminator only, no I_sc branch
  bool half_cycle = false;       // keep only the content reconstruction term
  bool gram_substitute = false;  // Gram loss instead of the contrastive generator term
  bool joint_msp_grad = false;   // let contra_g gradients reach the projector
  bool saturating_adv = false;   // generator minimizes log(1 - D(fake))
  bool augment_both = false;     // positive pair is (augmented, augmented)

  void validate() const;
};

struct TrainConfig {
  int64_t iterations = 800000;
  int64_t batch = 4;
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  LossWeights weights;
  int64_t image_size = 256;
  AblationFlags flags;
  uint64_t seed = 0;
  int64_t bank_capacity = kDefaultBankCapacity;
  AugmentSpec augment;
  int64_t checkpoint_every = 10000;
  int64_t msp_pretrain_steps = 0;
  /// Pretrained backbone blob; empty means seeded random initialization.
  std::string extractor_weights;
  uint64_t extractor_seed = 19;
  ProjectorConfig projector;
  int64_t head_hidden = 256;

  void validate() const;

  /// Reads a TOML file. Unknown keys are a ConfigError.
  static TrainConfig from_toml_file(const std::filesystem::path& path);
  static TrainConfig from_toml_string(std::string_view text);
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Phases of one training step, in execution order.
enum class TrainPhase { generated, discriminator_updated, generator_updated, projector_updated, bank_pushed };

using PhaseObserver = std::function<void(TrainPhase)>;

inline constexpr int kCheckpointVersion = 1;

/// Owns every network, optimizer and the style bank, and runs the joint
/// update. Not thread-safe.
class Trainer {
 public:
  explicit Trainer(TrainConfig config, torch::Device device = torch::kCPU);

  /// One joint update on a content/style batch. The returned report's `step`
  /// is the 1-based index of this update.
  LossReport train_step(const torch::Tensor& contents, const torch::Tensor& styles,
                        const PhaseObserver& observer = nullptr);

  /// Projector-only update (staged MSP pre-training); does not advance the
  /// learning-rate schedule.
  LossReport pretrain_projector_step(const torch::Tensor& styles);

  /// lr0 * (1 - t / iterations), clamped at zero, for t completed steps.
  double learning_rate_at(int64_t completed_steps) const;

  torch::Tensor stylize(const torch::Tensor& content, const torch::Tensor& style_img);
  StyleCode style_code(const torch::Tensor& img);

  /// Writes {manifest.json, weights.pt, bank.pt} to `dir` atomically: files
  /// go to a sibling temporary directory that is renamed into place, and is
  /// removed if anything fails. `extra` is stored under "extra".
  void save_checkpoint(const std::filesystem::path& dir, const nlohmann::json& extra = {}) const;
  static Trainer load_checkpoint(const std::filesystem::path& dir, torch::Device device = torch::kCPU,
                                 nlohmann::json* extra = nullptr);

  const TrainConfig& config() const { return config_; }
  int64_t step() const { return step_; }
  torch::Device device() const { return device_; }
  const FeatureExtractor& extractor() const { return extractor_; }
  StyleProjector& projector() { return projector_; }
  Generator& generator() { return generator_; }
  DiscriminatorPair& discriminators() { return discriminators_; }
  /// Present only with mix_de.
  PatchDiscriminator& mixed_discriminator() { return mixed_; }
  StyleBank& bank() { return bank_; }
  const StyleBank& bank() const { return bank_; }
  std::mt19937_64& augment_rng() { return augment_rng_; }

 private:
  void set_learning_rate(double lr);
  StyleCode encode(const torch::Tensor& img, const FeaturePyramid* cached = nullptr);
  std::pair<torch::Tensor, torch::Tensor> augmented_batch(const torch::Tensor& styles);
  double update_projector(const torch::Tensor& styles, const FeaturePyramid& style_features);
  std::vector<torch::Tensor> discriminator_parameters();

  TrainConfig config_;
  torch::Device device_;
  FeatureExtractor extractor_;
  StyleProjector projector_{nullptr};
  Generator generator_{nullptr};
  DiscriminatorPair discriminators_{nullptr, nullptr};
  PatchDiscriminator mixed_{nullptr};
  StyleBank bank_;
  std::unique_ptr<torch::optim::Adam> opt_g_;
  std::unique_ptr<torch::optim::Adam> opt_d_;
  std::unique_ptr<torch::optim::Adam> opt_msp_;
  std::mt19937_64 augment_rng_;
  int64_t step_ = 0;
};

struct FitOptions {
  std::filesystem::path out_dir;
  /// Resume from this checkpoint directory.
  std::optional<std::filesystem::path> resume;
  /// Stop (and checkpoint) after this many total steps even if the schedule
  /// runs longer. Unset means run to `iterations`.
  std::optional<int64_t> stop_after;
  std::function<void(const LossReport&)> on_step;
  /// Write checkpoints and sample stylizations every N steps; 0 uses the
  /// config cadence.
  int64_t checkpoint_every = 0;
  bool write_samples = true;
};

/// Runs the schedule: samples batches, calls train_step, appends
/// `train_log.csv` and keeps the latest state in `checkpoint/` (rewritten at
/// every cadence point and at the end). Returns the trained state.
Trainer fit(const TrainConfig& config, const CorpusManifest& artistic, const CorpusManifest& realistic,
            const FitOptions& options);

/// Reads `CAST_DEVICE` ("cpu" by default).
torch::Device device_from_env();

}  // namespace cast
