#include "cast/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cast/errors.hpp"
#include "cast/evaluation.hpp"
#include "cast/image.hpp"
#include "cast/toy_corpus.hpp"
#include "cast/trainer.hpp"

namespace cast {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Writes through a sibling temporary file so a failure never leaves a
// half-written target.
template <typename Writer>
void write_atomically(const fs::path& target, Writer&& write) {
  const fs::path tmp = target.string() + ".partial";
  try {
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    write(tmp);
    fs::rename(tmp, target);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
}

void write_json(const fs::path& target, const json& j) {
  write_atomically(target, [&](const fs::path& tmp) {
    std::ofstream out(tmp);
    out << j.dump(2) << '\n';
    out.flush();
    if (!out) throw IoError("cannot write '" + target.string() + "'");
  });
}

struct TrainArgs {
  std::string config;
  std::string art_dir;
  std::string real_dir;
  std::string resume;
  std::string out = "cast_run";
  std::optional<int64_t> msp_pretrain_steps;
  std::optional<int64_t> stop_after;
  int64_t checkpoint_every = 0;
  int64_t print_every = 50;
};

int cmd_train(const TrainArgs& a) {
  TrainConfig config = TrainConfig::from_toml_file(a.config);
  if (a.msp_pretrain_steps) {
    config.msp_pretrain_steps = *a.msp_pretrain_steps;
    config.validate();
  }
  const auto art = CorpusManifest::open(a.art_dir, Domain::artistic, config.image_size);
  const auto real = CorpusManifest::open(a.real_dir, Domain::realistic, config.image_size);
  FitOptions options;
  options.out_dir = a.out;
  if (!a.resume.empty()) options.resume = fs::path(a.resume);
  options.stop_after = a.stop_after;
  options.checkpoint_every = a.checkpoint_every;
  const auto every = std::max<int64_t>(1, a.print_every);
  options.on_step = [every](const LossReport& r) {
    if (r.step % every == 0) {
      std::fprintf(stderr, "step %lld  total %.4f  adv %.4f  cyc %.4f  contra_g %.4f  contra_msp %.4f  lr %.3g\n",
                   static_cast<long long>(r.step), r.total, r.adv, r.cyc, r.contra_g, r.contra_msp, r.lr);
    }
  };
  const auto trainer = fit(config, art, real, options);
  std::cout << "trained to step " << trainer.step() << "; checkpoint at " << (fs::path(a.out) / "checkpoint").string()
            << '\n';
  return kExitOk;
}

// Reflection-pads H and W up to the next multiple of `m`.
torch::Tensor pad_to_multiple(const torch::Tensor& img, int64_t m) {
  const int64_t ph = (m - img.size(2) % m) % m;
  const int64_t pw = (m - img.size(3) % m) % m;
  if (ph == 0 && pw == 0) return img;
  namespace F = torch::nn::functional;
  auto opts = F::PadFuncOptions({0, pw, 0, ph});
  // Reflection needs the pad to be smaller than the side.
  if (ph < img.size(2) && pw < img.size(3)) {
    opts.mode(torch::kReflect);
  } else {
    opts.mode(torch::kReplicate);
  }
  return F::pad(img, opts);
}

int cmd_stylize(const std::string& ckpt, const std::string& content_path, const std::string& style_path,
                const std::string& out_path) {
  auto model = Trainer::load_checkpoint(ckpt, device_from_env());
  const auto content = load_image_native(content_path);
  const auto style = load_image(style_path, model.config().image_size);
  const auto out = model.stylize(pad_to_multiple(content, 8), style)
                       .slice(2, 0, content.size(2))
                       .slice(3, 0, content.size(3))
                       .to(torch::kCPU);
  write_atomically(out_path, [&](const fs::path& tmp) { save_image(out, tmp); });
  std::cout << "wrote " << out_path << " (" << content.size(3) << "x" << content.size(2) << ")\n";
  return kExitOk;
}

int cmd_evaluate(const std::string& ckpt, const std::string& pairs_path, const std::string& report_path,
                 const std::string& classifier_path) {
  auto model = Trainer::load_checkpoint(ckpt, device_from_env());
  const auto pairs = load_pairs(pairs_path);
  std::optional<StyleClassifier> classifier;
  if (!classifier_path.empty()) {
    classifier = StyleClassifier::load(classifier_path, model.extractor());
  }
  const auto report = evaluate_pairs(model, pairs, classifier ? &*classifier : nullptr);
  write_json(report_path, report.to_json());
  std::cout << report.to_json().dump() << '\n';
  return kExitOk;
}

int cmd_bank_inspect(const std::string& ckpt, int64_t top) {
  auto model = Trainer::load_checkpoint(ckpt, torch::kCPU);
  const auto& bank = model.bank();
  std::cout << "occupancy " << bank.occupancy() << " / " << bank.capacity() << "  cursor " << bank.cursor() << '\n';
  if (bank.occupancy() < 2 || top <= 0) return kExitOk;
  // Similarity of two entries = mean cosine over code layers.
  torch::NoGradGuard no_grad;
  const auto layers = bank.negatives();
  auto sim = torch::zeros({bank.occupancy(), bank.occupancy()});
  for (const auto& l : layers) sim += torch::matmul(l, l.t());
  sim /= static_cast<double>(layers.size());
  const auto upper = torch::triu(torch::ones_like(sim, torch::kBool), 1);
  const auto scores = sim.masked_select(upper);
  const auto index = upper.nonzero();
  const int64_t k = std::min<int64_t>(top, scores.size(0));
  const auto best = scores.topk(k);
  const auto values = std::get<0>(best);
  const auto positions = std::get<1>(best);
  std::cout << "nearest pairs (entry indices oldest-first, mean cosine):\n";
  for (int64_t i = 0; i < k; ++i) {
    const auto pos = positions[i].item<int64_t>();
    std::printf("  %5lld %5lld  %.6f\n", static_cast<long long>(index[pos][0].item<int64_t>()),
                static_cast<long long>(index[pos][1].item<int64_t>()), values[i].item<double>());
  }
  return kExitOk;
}

struct ClassifierArgs {
  std::string corpus;
  std::string out;
  std::string ckpt;
  std::string extractor_weights;
  StyleClassifierConfig config;
  std::string holdout;
};

int cmd_train_classifier(const ClassifierArgs& a) {
  FeatureExtractor extractor = FeatureExtractor::random(TrainConfig{}.extractor_seed);
  if (!a.ckpt.empty()) {
    extractor = Trainer::load_checkpoint(a.ckpt, torch::kCPU).extractor();
  } else if (!a.extractor_weights.empty()) {
    extractor = FeatureExtractor::load(a.extractor_weights);
  }
  const auto corpus = CorpusManifest::open(a.corpus, Domain::artistic, a.config.image_size);
  const auto clf = StyleClassifier::train(extractor, corpus, a.config);
  write_atomically(a.out, [&](const fs::path& tmp) { clf.save(tmp); });
  std::printf("classes %zu  train accuracy %.4f\n", clf.labels().size(), clf.accuracy(corpus));
  if (!a.holdout.empty()) {
    const auto held = CorpusManifest::open(a.holdout, Domain::artistic, a.config.image_size);
    std::printf("held-out accuracy %.4f\n", clf.accuracy(held));
  }
  return kExitOk;
}

int cmd_make_toy(const std::string& out, int per_style, int photos, int64_t size, uint64_t seed) {
  const auto paths = toy::write_corpus(out, per_style, photos, size, seed);
  std::cout << "artistic " << paths.artistic.string() << "\nrealistic " << paths.realistic.string() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Contrastive arbitrary style transfer: training, stylization and evaluation", "caststyle"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model on an artistic and a realistic corpus");
  train_cmd->add_option("--config", train.config, "TOML training config")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--art-dir", train.art_dir, "Artistic images (directory or manifest)")->required();
  train_cmd->add_option("--real-dir", train.real_dir, "Realistic images (directory or manifest)")->required();
  train_cmd->add_option("--resume", train.resume, "Checkpoint directory to resume from");
  train_cmd->add_option("--out", train.out, "Run directory")->capture_default_str();
  train_cmd->add_option("--msp-pretrain-steps", train.msp_pretrain_steps, "Projector-only steps before joint training");
  train_cmd->add_option("--stop-after", train.stop_after, "Stop after this many total steps");
  train_cmd->add_option("--checkpoint-every", train.checkpoint_every, "Override the config checkpoint cadence");
  train_cmd->add_option("--print-every", train.print_every, "Progress line cadence")->capture_default_str();

  std::string ckpt;
  std::string content;
  std::string style;
  std::string out;
  auto* stylize_cmd = app.add_subcommand("stylize", "Render a content image in the style of another image");
  stylize_cmd->add_option("--ckpt", ckpt, "Checkpoint directory")->required();
  stylize_cmd->add_option("--content", content, "Content image")->required();
  stylize_cmd->add_option("--style", style, "Style image")->required();
  stylize_cmd->add_option("--out", out, "Output PNG")->required();

  std::string pairs;
  std::string report;
  std::string classifier;
  auto* eval_cmd = app.add_subcommand("evaluate", "Content loss, perceptual distance and deception rate");
  eval_cmd->add_option("--ckpt", ckpt, "Checkpoint directory")->required();
  eval_cmd->add_option("--pairs", pairs, "JSON list of {content, style, target_label?}")->required();
  eval_cmd->add_option("--report", report, "Output JSON report")->required();
  eval_cmd->add_option("--classifier", classifier, "Style classifier for the deception rate");

  int64_t top = 5;
  auto* bank_cmd = app.add_subcommand("bank-inspect", "Print style bank occupancy and nearest neighbors");
  bank_cmd->add_option("--ckpt", ckpt, "Checkpoint directory")->required();
  bank_cmd->add_option("--top", top, "Number of nearest pairs")->capture_default_str();

  ClassifierArgs clf;
  auto* clf_cmd = app.add_subcommand("train-classifier", "Train the style classifier used for the deception rate");
  clf_cmd->add_option("--corpus", clf.corpus, "Labeled artistic images (label = subdirectory)")->required();
  clf_cmd->add_option("--out", clf.out, "Output classifier file")->required();
  clf_cmd->add_option("--ckpt", clf.ckpt, "Use this checkpoint's backbone");
  clf_cmd->add_option("--extractor-weights", clf.extractor_weights, "Pretrained backbone blob");
  clf_cmd->add_option("--epochs", clf.config.epochs)->capture_default_str();
  clf_cmd->add_option("--lr", clf.config.lr)->capture_default_str();
  clf_cmd->add_option("--image-size", clf.config.image_size)->capture_default_str();
  clf_cmd->add_option("--holdout", clf.holdout, "Labeled images to report held-out accuracy on");

  int per_style = 20;
  int photos = 60;
  int64_t size = 64;
  uint64_t seed = 0;
  auto* toy_cmd = app.add_subcommand("make-toy-corpus", "Write a procedural three-style corpus");
  toy_cmd->add_option("--out", out, "Output root")->required();
  toy_cmd->add_option("--per-style", per_style)->capture_default_str();
  toy_cmd->add_option("--photos", photos)->capture_default_str();
  toy_cmd->add_option("--size", size)->capture_default_str();
  toy_cmd->add_option("--seed", seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(train);
    if (*stylize_cmd) return cmd_stylize(ckpt, content, style, out);
    if (*eval_cmd) return cmd_evaluate(ckpt, pairs, report, classifier);
    if (*bank_cmd) return cmd_bank_inspect(ckpt, top);
    if (*clf_cmd) return cmd_train_classifier(clf);
    if (*toy_cmd) return cmd_make_toy(out, per_style, photos, size, seed);
  } catch (const std::exception& e) {
    std::cerr << "caststyle: error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace cast
