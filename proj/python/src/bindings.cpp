#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>
#include <torch/torch.h>

#include <memory>
#include <string>
#include <vector>

#include "cast/cli.hpp"
#include "cast/errors.hpp"
#include "cast/evaluation.hpp"
#include "cast/image.hpp"
#include "cast/objectives.hpp"
#include "cast/style_bank.hpp"
#include "cast/toy_corpus.hpp"
#include "cast/trainer.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
torch::Tensor tensor_from(const Array<T>& a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  const auto type = std::is_same_v<T, double> ? torch::kFloat64 : torch::kFloat32;
  return torch::from_blob(const_cast<T*>(a.data()), shape, type).clone();
}

py::array to_numpy(const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kCPU).contiguous();
  std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
  if (c.scalar_type() == torch::kFloat64) {
    py::array_t<double> out(shape);
    std::memcpy(out.mutable_data(), c.data_ptr<double>(), sizeof(double) * c.numel());
    return out;
  }
  const auto f = c.to(torch::kFloat32);
  py::array_t<float> out(shape);
  std::memcpy(out.mutable_data(), f.data_ptr<float>(), sizeof(float) * f.numel());
  return out;
}

std::vector<torch::Tensor> tensors_from(const std::vector<Array<double>>& arrays) {
  std::vector<torch::Tensor> out;
  for (const auto& a : arrays) out.push_back(tensor_from(a));
  return out;
}

py::list to_list(const std::vector<torch::Tensor>& ts) {
  py::list out;
  for (const auto& t : ts) out.append(to_numpy(t));
  return out;
}

// Trainer has no default state, so the Python handle owns one on the heap.
struct Model {
  std::unique_ptr<cast::Trainer> trainer;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Contrastive arbitrary style transfer: losses, style bank, inference and the command line.";

  auto base = py::register_exception<cast::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<cast::ArgumentError>(m, "ArgumentError", base);
  py::register_exception<cast::DecodeError>(m, "DecodeError", base);
  py::register_exception<cast::NumericError>(m, "NumericError", base);
  py::register_exception<cast::ConfigError>(m, "ConfigError", base);
  py::register_exception<cast::IoError>(m, "IoError", base);

  m.def(
      "load_image", [](const fs::path& path, int64_t size) { return to_numpy(cast::load_image(path, size)); },
      py::arg("path"), py::arg("size"), "Decode, resize and center-crop to 1x3xSxS float32 in [-1, 1].");
  m.def(
      "save_image", [](const Array<float>& img, const fs::path& path) { cast::save_image(tensor_from(img), path); },
      py::arg("image"), py::arg("path"));

  m.def(
      "info_nce",
      [](const std::vector<Array<double>>& anchor, const std::vector<Array<double>>& positive,
         const std::vector<Array<double>>& negatives, double tau) {
        return cast::info_nce(tensors_from(anchor), tensors_from(positive), tensors_from(negatives), tau)
            .item<double>();
      },
      py::arg("anchor"), py::arg("positive"), py::arg("negatives"), py::arg("tau") = 0.07,
      "Per-layer arrays [B, K_i], [B, K_i] and [N, K_i].");
  m.def(
      "cycle_loss",
      [](const Array<double>& i_c, const Array<double>& rec_c, const Array<double>& i_s, const Array<double>& rec_s) {
        return cast::cycle_loss(tensor_from(i_c), tensor_from(rec_c), tensor_from(i_s), tensor_from(rec_s))
            .item<double>();
      },
      py::arg("i_c"), py::arg("rec_c"), py::arg("i_s"), py::arg("rec_s"));
  m.def(
      "gram_matrix", [](const Array<double>& map) { return to_numpy(cast::gram_matrix(tensor_from(map))); },
      py::arg("feature_map"));
  m.def(
      "gram_style_loss",
      [](const std::vector<Array<double>>& out, const std::vector<Array<double>>& style) {
        return cast::gram_style_loss({tensors_from(out)}, {tensors_from(style)}).item<double>();
      },
      py::arg("f_out"), py::arg("f_style"));
  m.def(
      "adversarial_loss",
      [](const Array<double>& d_r_real, const Array<double>& d_r_fake, const Array<double>& d_a_real,
         const Array<double>& d_a_fake, bool saturating) {
        const auto terms = cast::adversarial_loss(
            tensor_from(d_r_real), tensor_from(d_r_fake), tensor_from(d_a_real), tensor_from(d_a_fake),
            saturating ? cast::GeneratorAdvForm::saturating : cast::GeneratorAdvForm::non_saturating);
        return py::make_tuple(terms.d_loss.item<double>(), terms.g_loss.item<double>());
      },
      py::arg("d_r_real"), py::arg("d_r_fake"), py::arg("d_a_real"), py::arg("d_a_fake"), py::arg("saturating") = false,
      "Returns (discriminator loss, generator loss).");
  m.def(
      "total_loss",
      [](double adv, double cyc, double contra, double w_adv, double w_cyc, double w_contra) {
        cast::LossWeights w;
        w.adv = w_adv;
        w.cyc = w_cyc;
        w.contra = w_contra;
        return cast::total_loss(adv, cyc, contra, w);
      },
      py::arg("adv"), py::arg("cyc"), py::arg("contra"), py::arg("w_adv") = cast::LossWeights{}.adv,
      py::arg("w_cyc") = cast::LossWeights{}.cyc, py::arg("w_contra") = cast::LossWeights{}.contra);
  m.def(
      "deception_rate",
      [](const std::vector<std::string>& predicted, const std::vector<std::string>& targets) {
        return cast::deception_rate(predicted, targets);
      },
      py::arg("predicted"), py::arg("targets"));

  py::class_<cast::StyleBank>(m, "StyleBank")
      .def(py::init<std::vector<int64_t>, int64_t>(), py::arg("dims"), py::arg("capacity") = cast::kDefaultBankCapacity)
      .def(
          "push",
          [](cast::StyleBank& bank, const std::vector<Array<float>>& layers) {
            cast::StyleCode code;
            for (const auto& l : layers) code.layers.push_back(tensor_from(l));
            bank.push(code);
          },
          py::arg("code"))
      .def("negatives", [](const cast::StyleBank& bank) { return to_list(bank.negatives()); })
      .def_property_readonly("occupancy", &cast::StyleBank::occupancy)
      .def_property_readonly("capacity", &cast::StyleBank::capacity)
      .def_property_readonly("cursor", &cast::StyleBank::cursor)
      .def_property_readonly("dims", &cast::StyleBank::dims);

  py::class_<cast::FeatureExtractor>(m, "FeatureExtractor")
      .def_static("random", [](uint64_t seed) { return cast::FeatureExtractor::random(seed); }, py::arg("seed") = 19)
      .def_static("load", &cast::FeatureExtractor::load, py::arg("blob"))
      .def("save", &cast::FeatureExtractor::save, py::arg("blob"))
      .def(
          "extract",
          [](const cast::FeatureExtractor& e, const Array<float>& img) {
            torch::NoGradGuard no_grad;
            return to_list(e.extract(tensor_from(img)).maps);
          },
          py::arg("image"))
      .def(
          "relu4_1",
          [](const cast::FeatureExtractor& e, const Array<float>& img) {
            torch::NoGradGuard no_grad;
            return to_numpy(e.relu4_1(tensor_from(img)));
          },
          py::arg("image"))
      .def(
          "content_loss",
          [](const cast::FeatureExtractor& e, const Array<float>& a, const Array<float>& b) {
            torch::NoGradGuard no_grad;
            return cast::content_loss(e, tensor_from(a), tensor_from(b)).item<double>();
          },
          py::arg("a"), py::arg("b"))
      .def_property_readonly("taps", &cast::FeatureExtractor::taps)
      .def_property_readonly("content_hash", &cast::FeatureExtractor::content_hash);

  py::class_<Model>(m, "Model")
      .def_static(
          "load",
          [](const fs::path& ckpt) {
            return Model{std::make_unique<cast::Trainer>(cast::Trainer::load_checkpoint(ckpt))};
          },
          py::arg("checkpoint"), "Load a checkpoint directory written by training.")
      .def(
          "stylize",
          [](Model& model, const Array<float>& content, const Array<float>& style) {
            const auto c = tensor_from(content);
            const auto s = tensor_from(style);
            torch::Tensor out;
            {
              py::gil_scoped_release release;
              out = model.trainer->stylize(c, s);
            }
            return to_numpy(out);
          },
          py::arg("content"), py::arg("style"))
      .def(
          "style_code",
          [](Model& model, const Array<float>& img) { return to_list(model.trainer->style_code(tensor_from(img)).layers); },
          py::arg("image"))
      .def_property_readonly("extractor", [](const Model& model) { return model.trainer->extractor(); })
      .def_property_readonly("step", [](const Model& model) { return model.trainer->step(); })
      .def_property_readonly("image_size", [](const Model& model) { return model.trainer->config().image_size; })
      .def_property_readonly("config_json", [](const Model& model) { return model.trainer->config().to_json().dump(); })
      .def_property_readonly("bank_occupancy", [](const Model& model) { return model.trainer->bank().occupancy(); });

  m.def(
      "make_toy_corpus",
      [](const fs::path& root, int per_style, int photos, int64_t size, uint64_t seed) {
        const auto paths = cast::toy::write_corpus(root, per_style, photos, size, seed);
        return py::make_tuple(paths.artistic, paths.realistic);
      },
      py::arg("root"), py::arg("per_style") = 20, py::arg("photos") = 60, py::arg("size") = 64, py::arg("seed") = 0,
      "Returns (artistic_dir, realistic_dir).");

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "caststyle");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        py::gil_scoped_release release;
        return cast::run_cli(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Run a caststyle subcommand in-process and return its exit status.");
}
