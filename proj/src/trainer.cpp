#include "cast/trainer.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cast/errors.hpp"

namespace cast {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCheckpointFormat = "caststyle-checkpoint";

TrainConfig validated(TrainConfig config) {
  config.validate();
  return config;
}

FeatureExtractor make_extractor(const TrainConfig& config) {
  if (config.extractor_weights.empty()) {
    return FeatureExtractor::random(config.extractor_seed);
  }
  return FeatureExtractor::load(config.extractor_weights);
}

torch::optim::AdamOptions adam_options(const TrainConfig& c) {
  return torch::optim::AdamOptions(c.lr).betas({c.beta1, c.beta2});
}

void notify(const PhaseObserver& observer, TrainPhase phase) {
  if (observer) observer(phase);
}

std::vector<torch::Tensor> to_device(std::vector<torch::Tensor> tensors, torch::Device device) {
  for (auto& t : tensors) t = t.to(device);
  return tensors;
}

void save_module(torch::serialize::OutputArchive& root, const std::string& key, const torch::nn::Module& module) {
  torch::serialize::OutputArchive sub;
  module.save(sub);
  root.write(key, sub);
}

void load_module(torch::serialize::InputArchive& root, const std::string& key, torch::nn::Module& module) {
  torch::serialize::InputArchive sub;
  if (!root.try_read(key, sub)) {
    throw IoError("checkpoint weights are missing '" + key + "'");
  }
  module.load(sub);
}

void save_optimizer(torch::serialize::OutputArchive& root, const std::string& key, torch::optim::Optimizer& opt) {
  torch::serialize::OutputArchive sub;
  opt.save(sub);
  root.write(key, sub);
}

void load_optimizer(torch::serialize::InputArchive& root, const std::string& key, torch::optim::Optimizer& opt) {
  torch::serialize::InputArchive sub;
  if (!root.try_read(key, sub)) {
    throw IoError("checkpoint weights are missing '" + key + "'");
  }
  opt.load(sub);
}

}  // namespace

Trainer::Trainer(TrainConfig config, torch::Device device)
    : config_(validated(std::move(config))),
      device_(device),
      extractor_(make_extractor(config_)),
      bank_(config_.projector.code_dims, config_.bank_capacity),
      augment_rng_(config_.seed * 0x9E3779B97F4A7C15ULL + 1) {
  torch::manual_seed(config_.seed);
  projector_ = StyleProjector(config_.projector);
  generator_ = Generator(GeneratorConfig{config_.projector.code_dims, config_.head_hidden});
  generator_->init_encoder_from(extractor_);
  discriminators_.realistic = PatchDiscriminator();
  discriminators_.artistic = PatchDiscriminator();
  if (config_.flags.mix_de) {
    mixed_ = PatchDiscriminator();
  }

  extractor_.to(device_);
  projector_->to(device_);
  generator_->to(device_);
  discriminators_.realistic->to(device_);
  discriminators_.artistic->to(device_);
  if (mixed_) mixed_->to(device_);

  opt_g_ = std::make_unique<torch::optim::Adam>(generator_->parameters(), adam_options(config_));
  opt_d_ = std::make_unique<torch::optim::Adam>(discriminator_parameters(), adam_options(config_));
  opt_msp_ = std::make_unique<torch::optim::Adam>(projector_->parameters(), adam_options(config_));
  set_learning_rate(learning_rate_at(0));
}

std::vector<torch::Tensor> Trainer::discriminator_parameters() {
  if (config_.flags.mix_de) {
    return mixed_->parameters();
  }
  if (config_.flags.one_de) {
    return discriminators_.artistic->parameters();
  }
  auto params = discriminators_.realistic->parameters();
  for (auto& p : discriminators_.artistic->parameters()) params.push_back(p);
  return params;
}

double Trainer::learning_rate_at(int64_t completed_steps) const {
  const double fraction = static_cast<double>(completed_steps) / static_cast<double>(config_.iterations);
  return std::max(0.0, config_.lr * (1.0 - fraction));
}

void Trainer::set_learning_rate(double lr) {
  for (auto* opt : {opt_g_.get(), opt_d_.get(), opt_msp_.get()}) {
    for (auto& group : opt->param_groups()) {
      static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
    }
  }
}

StyleCode Trainer::encode(const torch::Tensor& img, const FeaturePyramid* cached) {
  if (cached) return projector_->forward(*cached);
  return projector_->forward(extractor_.extract(img));
}

std::pair<torch::Tensor, torch::Tensor> Trainer::augmented_batch(const torch::Tensor& styles) {
  std::vector<torch::Tensor> anchors;
  std::vector<torch::Tensor> positives;
  for (int64_t b = 0; b < styles.size(0); ++b) {
    auto [anchor, positive] = augment_pair(styles.slice(0, b, b + 1), config_.augment, augment_rng_,
                                           config_.flags.augment_both);
    anchors.push_back(anchor);
    positives.push_back(positive);
  }
  return {torch::cat(anchors, 0), torch::cat(positives, 0)};
}

double Trainer::update_projector(const torch::Tensor& styles, const FeaturePyramid& style_features) {
  const auto [anchors, positives] = augmented_batch(styles);
  const bool anchor_is_input = !config_.flags.augment_both && config_.augment.crop_for(config_.image_size) == config_.image_size;
  FeaturePyramid anchor_features;
  FeaturePyramid positive_features;
  {
    torch::NoGradGuard no_grad;
    anchor_features = anchor_is_input ? style_features : extractor_.extract(anchors);
    positive_features = extractor_.extract(positives);
  }
  set_requires_grad(*projector_, true);
  const auto z = projector_->forward(anchor_features);
  const auto z_pos = projector_->forward(positive_features);
  const auto loss = info_nce(z, z_pos, to_device(bank_.negatives(), device_), config_.weights.tau);
  const double value = loss.item<double>();
  require_finite(value, "contra_msp", step_ + 1);
  if (loss.requires_grad()) {
    loss.backward();
    opt_msp_->step();
  }
  return value;
}

LossReport Trainer::train_step(const torch::Tensor& contents, const torch::Tensor& styles,
                               const PhaseObserver& observer) {
  check_image(contents, "content batch");
  check_image(styles, "style batch");
  if (contents.size(0) != config_.batch || styles.size(0) != config_.batch) {
    throw ArgumentError("batch size does not match the training config");
  }
  if (contents.size(2) != config_.image_size || contents.size(3) != config_.image_size ||
      !contents.sizes().equals(styles.sizes())) {
    throw ArgumentError("batch images must be " + std::to_string(config_.image_size) + " px square");
  }
  const auto& flags = config_.flags;
  const int64_t step_index = step_ + 1;
  const double lr = learning_rate_at(step_);
  set_learning_rate(lr);
  opt_msp_->zero_grad();

  const auto i_c = contents.to(device_);
  const auto i_s = styles.to(device_);

  FeaturePyramid feat_s;
  FeaturePyramid feat_c;
  {
    torch::NoGradGuard no_grad;
    feat_s = extractor_.extract(i_s);
    feat_c = extractor_.extract(i_c);
  }
  set_requires_grad(*projector_, flags.joint_msp_grad);
  StyleCode z_s;
  StyleCode z_c;
  if (flags.joint_msp_grad) {
    z_s = encode(i_s, &feat_s);
    z_c = encode(i_c, &feat_c);
  } else {
    torch::NoGradGuard no_grad;
    z_s = encode(i_s, &feat_s);
    z_c = encode(i_c, &feat_c);
  }

  // (1) I_cs = G(I_c, I_s), I_sc = G(I_s, I_c)
  const auto i_cs = generator_->forward(i_c, z_s);
  torch::Tensor i_sc;
  if (!flags.one_de) {
    i_sc = generator_->forward(i_s, z_c);
  }
  require_finite(i_cs.abs().max().item<double>(), "generated I_cs", step_index);
  if (i_sc.defined()) require_finite(i_sc.abs().max().item<double>(), "generated I_sc", step_index);
  notify(observer, TrainPhase::generated);

  // (2) discriminators
  double d_value = 0.0;
  if (!flags.no_de) {
    if (flags.mix_de) {
      set_requires_grad(*mixed_, true);
    } else {
      set_requires_grad(*discriminators_.artistic, true);
      set_requires_grad(*discriminators_.realistic, !flags.one_de);
    }
    opt_d_->zero_grad();
    torch::Tensor d_loss;
    if (flags.mix_de) {
      d_loss = adversarial_loss(mixed_->forward(i_c), mixed_->forward(i_sc.detach()), mixed_->forward(i_s),
                                mixed_->forward(i_cs.detach()))
                   .d_loss;
    } else if (flags.one_de) {
      d_loss = domain_d_loss(discriminators_.artistic->forward(i_s), discriminators_.artistic->forward(i_cs.detach()));
    } else {
      d_loss = adversarial_loss(discriminators_.realistic->forward(i_c),
                                discriminators_.realistic->forward(i_sc.detach()),
                                discriminators_.artistic->forward(i_s), discriminators_.artistic->forward(i_cs.detach()))
                   .d_loss;
    }
    d_value = d_loss.item<double>();
    require_finite(d_value, "d_loss", step_index);
    d_loss.backward();
    opt_d_->step();
  }
  set_requires_grad(*discriminators_.realistic, false);
  set_requires_grad(*discriminators_.artistic, false);
  if (mixed_) set_requires_grad(*mixed_, false);
  notify(observer, TrainPhase::discriminator_updated);

  // (3) generator on the weighted objective
  opt_g_->zero_grad();
  auto cyc = reconstruction_l1(i_c, generator_->forward(i_cs, z_c));
  if (!flags.one_de && !flags.half_cycle) {
    cyc = cyc + reconstruction_l1(i_s, generator_->forward(i_sc, z_s));
  }
  LossReport report;
  report.step = step_index;
  report.lr = lr;
  report.d_loss = d_value;
  report.cyc = cyc.item<double>();
  require_finite(report.cyc, "cyc", step_index);
  torch::Tensor adv_g = torch::zeros({}, i_c.options());
  if (!flags.no_de) {
    const auto form = flags.saturating_adv ? GeneratorAdvForm::saturating : GeneratorAdvForm::non_saturating;
    if (flags.mix_de) {
      adv_g = domain_g_loss(mixed_->forward(i_sc), form) + domain_g_loss(mixed_->forward(i_cs), form);
    } else if (flags.one_de) {
      adv_g = domain_g_loss(discriminators_.artistic->forward(i_cs), form);
    } else {
      adv_g = domain_g_loss(discriminators_.realistic->forward(i_sc), form) +
              domain_g_loss(discriminators_.artistic->forward(i_cs), form);
    }
  }
  report.adv = adv_g.item<double>();
  require_finite(report.adv, "adv", step_index);
  const auto feat_cs = extractor_.extract(i_cs);
  torch::Tensor contra_g;
  if (flags.gram_substitute) {
    contra_g = gram_style_loss(feat_cs, feat_s);
  } else {
    const auto z_cs = projector_->forward(feat_cs);
    contra_g = info_nce(z_cs, z_s, to_device(bank_.negatives(), device_), config_.weights.tau);
  }
  report.contra_g = contra_g.item<double>();
  require_finite(report.contra_g, "contra_g", step_index);
  const auto total = total_loss(adv_g, cyc, contra_g, config_.weights);
  report.total = total.item<double>();
  require_finite(report.total, "total", step_index);
  total.backward();
  opt_g_->step();
  notify(observer, TrainPhase::generator_updated);

  // (4) projector on the contrastive style loss
  if (!flags.joint_msp_grad) {
    opt_msp_->zero_grad();
  }
  report.contra_msp = update_projector(i_s, feat_s);
  notify(observer, TrainPhase::projector_updated);

  // (5) enqueue the artistic codes as future negatives
  bank_.push(z_s.detached());
  notify(observer, TrainPhase::bank_pushed);

  ++step_;
  set_learning_rate(learning_rate_at(step_));
  return report;
}

LossReport Trainer::pretrain_projector_step(const torch::Tensor& styles) {
  check_image(styles, "style batch");
  set_learning_rate(config_.lr);
  const auto i_s = styles.to(device_);
  FeaturePyramid feat_s;
  {
    torch::NoGradGuard no_grad;
    feat_s = extractor_.extract(i_s);
  }
  StyleCode z_s;
  {
    torch::NoGradGuard no_grad;
    z_s = encode(i_s, &feat_s);
  }
  opt_msp_->zero_grad();
  LossReport report;
  report.step = step_;
  report.lr = config_.lr;
  report.contra_msp = update_projector(i_s, feat_s);
  bank_.push(z_s);
  set_learning_rate(learning_rate_at(step_));
  return report;
}

StyleCode Trainer::style_code(const torch::Tensor& img) {
  torch::NoGradGuard no_grad;
  return encode_style(img.to(device_), extractor_, projector_);
}

torch::Tensor Trainer::stylize(const torch::Tensor& content, const torch::Tensor& style_img) {
  torch::NoGradGuard no_grad;
  return stylize_from_image(content.to(device_), style_img.to(device_), extractor_, projector_, generator_);
}

void Trainer::save_checkpoint(const fs::path& dir, const json& extra) const {
  const fs::path target = dir.lexically_normal();
  const fs::path parent = target.has_parent_path() ? target.parent_path() : fs::path(".");
  const fs::path tmp = parent / (target.filename().string() + ".partial");
  const fs::path old = parent / (target.filename().string() + ".old");
  std::error_code ec;
  try {
    fs::create_directories(parent);
    fs::remove_all(tmp);
    fs::create_directories(tmp);

    torch::serialize::OutputArchive weights;
    save_module(weights, "extractor", *extractor_.module());
    save_module(weights, "projector", *projector_);
    save_module(weights, "generator", *generator_);
    save_module(weights, "d_realistic", *discriminators_.realistic);
    save_module(weights, "d_artistic", *discriminators_.artistic);
    if (mixed_) save_module(weights, "d_mixed", *mixed_);
    save_optimizer(weights, "opt_generator", *opt_g_);
    save_optimizer(weights, "opt_discriminator", *opt_d_);
    save_optimizer(weights, "opt_projector", *opt_msp_);
    weights.save_to((tmp / "weights.pt").string());
    bank_.save(tmp / "bank.pt");

    json manifest{{"format", kCheckpointFormat},
                  {"version", kCheckpointVersion},
                  {"step", step_},
                  {"config", config_.to_json()},
                  {"augment_rng", serialize_rng(augment_rng_)},
                  {"extractor_sha256", extractor_.content_hash()},
                  {"files", {{"weights", "weights.pt"}, {"bank", "bank.pt"}}},
                  {"extra", extra.is_null() ? json::object() : extra}};
    {
      std::ofstream out(tmp / "manifest.json");
      out << manifest.dump(2) << '\n';
      out.flush();
      if (!out) throw IoError("cannot write checkpoint manifest");
    }
    fs::remove_all(old);
    if (fs::exists(target)) {
      fs::rename(target, old);
    }
    fs::rename(tmp, target);
    fs::remove_all(old, ec);
  } catch (const std::exception& e) {
    fs::remove_all(tmp, ec);
    if (!fs::exists(target) && fs::exists(old)) {
      fs::rename(old, target, ec);
    }
    throw IoError("failed to write checkpoint '" + target.string() + "': " + e.what());
  }
}

Trainer Trainer::load_checkpoint(const fs::path& dir, torch::Device device, json* extra) {
  std::ifstream in(dir / "manifest.json");
  if (!in) {
    throw IoError("no checkpoint manifest in '" + dir.string() + "'");
  }
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != kCheckpointFormat) {
    throw IoError("'" + dir.string() + "' is not a caststyle checkpoint");
  }
  if (manifest.value("version", 0) != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + manifest.value("version", json(0)).dump());
  }
  auto config = TrainConfig::from_json(manifest.at("config"));
  // The backbone comes from the archive below, not from the original path.
  config.extractor_weights.clear();
  Trainer trainer(config, device);
  trainer.config_.extractor_weights = manifest.at("config").value("extractor_weights", "");

  torch::serialize::InputArchive weights;
  try {
    weights.load_from((dir / manifest.at("files").value("weights", "weights.pt")).string(), device);
  } catch (const c10::Error& e) {
    throw IoError("cannot read checkpoint weights: " + std::string(e.what_without_backtrace()));
  }
  {
    auto vgg = trainer.extractor_.module();
    load_module(weights, "extractor", *vgg);
    trainer.extractor_.set_frozen(true);
  }
  load_module(weights, "projector", *trainer.projector_);
  load_module(weights, "generator", *trainer.generator_);
  load_module(weights, "d_realistic", *trainer.discriminators_.realistic);
  load_module(weights, "d_artistic", *trainer.discriminators_.artistic);
  if (trainer.mixed_) load_module(weights, "d_mixed", *trainer.mixed_);
  load_optimizer(weights, "opt_generator", *trainer.opt_g_);
  load_optimizer(weights, "opt_discriminator", *trainer.opt_d_);
  load_optimizer(weights, "opt_projector", *trainer.opt_msp_);

  trainer.bank_ = StyleBank::load(dir / manifest.at("files").value("bank", "bank.pt"));
  trainer.bank_.to(torch::kCPU);
  trainer.step_ = manifest.at("step").get<int64_t>();
  deserialize_rng(trainer.augment_rng_, manifest.at("augment_rng").get<std::string>());
  if (manifest.contains("extractor_sha256") &&
      manifest["extractor_sha256"].get<std::string>() != trainer.extractor_.content_hash()) {
    throw IoError("checkpoint backbone does not match its recorded hash");
  }
  trainer.set_learning_rate(trainer.learning_rate_at(trainer.step_));
  if (extra) *extra = manifest.value("extra", json::object());
  return trainer;
}

torch::Device device_from_env() {
  const char* env = std::getenv("CAST_DEVICE");
  const std::string name = env && *env ? env : "cpu";
  try {
    torch::Device device(name);
    if (device.is_cuda() && !torch::cuda::is_available()) {
      throw ConfigError("CAST_DEVICE=" + name + " but no CUDA device is available");
    }
    return device;
  } catch (const c10::Error&) {
    throw ConfigError("CAST_DEVICE='" + name + "' is not a valid device");
  }
}

namespace {

void write_sample(Trainer& trainer, const Batch& batch, const fs::path& path) {
  const auto content = batch.contents.slice(0, 0, 1);
  const auto style = batch.styles.slice(0, 0, 1);
  const auto out = trainer.stylize(content, style).to(torch::kCPU);
  save_image(torch::cat({content, style, out}, 3), path);
}

// Keeps header plus rows with step <= last_step.
void truncate_log(const fs::path& log, int64_t last_step) {
  std::ifstream in(log);
  if (!in) return;
  std::vector<std::string> kept;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line == LossReport::csv_header()) {
      kept.push_back(line);
      continue;
    }
    if (LossReport::from_csv_row(line).step <= last_step) kept.push_back(line);
  }
  in.close();
  std::ofstream out(log, std::ios::trunc);
  for (const auto& l : kept) out << l << '\n';
}

}  // namespace

Trainer fit(const TrainConfig& config, const CorpusManifest& artistic, const CorpusManifest& realistic,
            const FitOptions& options) {
  const auto device = device_from_env();
  json extra;
  Trainer trainer = options.resume ? Trainer::load_checkpoint(*options.resume, device, &extra) : Trainer(config, device);
  const auto& cfg = trainer.config();
  BatchSampler sampler(artistic, realistic, cfg.image_size, cfg.seed);
  if (extra.contains("sampler_rng")) {
    sampler.set_rng_state(extra["sampler_rng"].get<std::string>());
  }

  fs::create_directories(options.out_dir);
  const fs::path log_path = options.out_dir / "train_log.csv";
  if (options.resume) {
    truncate_log(log_path, trainer.step());
  }
  const bool new_log = !fs::exists(log_path) || fs::file_size(log_path) == 0;
  std::ofstream log(log_path, std::ios::app);
  if (!log) {
    throw IoError("cannot open training log '" + log_path.string() + "'");
  }
  if (new_log) log << LossReport::csv_header() << '\n';

  auto checkpoint = [&](const fs::path& dir) {
    trainer.save_checkpoint(dir, json{{"sampler_rng", sampler.rng_state()}});
  };

  if (!options.resume && trainer.step() == 0) {
    for (int64_t i = 0; i < cfg.msp_pretrain_steps; ++i) {
      const auto batch = sampler.next_batch(cfg.batch);
      trainer.pretrain_projector_step(batch.styles);
    }
  }

  const int64_t end = std::min(cfg.iterations, options.stop_after.value_or(cfg.iterations));
  const int64_t every = options.checkpoint_every > 0 ? options.checkpoint_every : cfg.checkpoint_every;
  while (trainer.step() < end) {
    const auto batch = sampler.next_batch(cfg.batch);
    const auto report = trainer.train_step(batch.contents, batch.styles);
    log << report.csv_row() << '\n';
    log.flush();
    if (options.on_step) options.on_step(report);
    if (every > 0 && report.step % every == 0 && report.step < end) {
      checkpoint(options.out_dir / "checkpoint");
      if (options.write_samples) {
        fs::create_directories(options.out_dir / "samples");
        write_sample(trainer, batch, options.out_dir / "samples" / ("step_" + std::to_string(report.step) + ".png"));
      }
    }
  }
  checkpoint(options.out_dir / "checkpoint");
  return trainer;
}

}  // namespace cast
