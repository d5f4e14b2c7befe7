#include "cast/objectives.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "cast/errors.hpp"

namespace cast {

void LossWeights::validate() const {
  if (!(adv > 0.0) || !(cyc > 0.0) || !(contra > 0.0) || !(tau > 0.0)) {
    throw ConfigError("loss weights and temperature must all be positive");
  }
}

std::string LossReport::csv_header() {
  return "step,adv,cyc,contra_msp,contra_g,total";
}

std::string LossReport::csv_row() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g", static_cast<long long>(step), adv, cyc, contra_msp,
                contra_g, total);
  return buf;
}

LossReport LossReport::from_csv_row(const std::string& row) {
  LossReport r;
  std::istringstream in(row);
  char comma = 0;
  if (!(in >> r.step >> comma >> r.adv >> comma >> r.cyc >> comma >> r.contra_msp >> comma >> r.contra_g >> comma >>
        r.total)) {
    throw ArgumentError("malformed loss log row: " + row);
  }
  return r;
}

void require_finite(double value, const std::string& name, int64_t step) {
  if (!std::isfinite(value)) {
    std::string msg = "non-finite loss term '" + name + "'";
    if (step >= 0) msg += " at step " + std::to_string(step);
    msg += " (value " + std::to_string(value) + ")";
    throw NumericError(msg);
  }
}

torch::Tensor info_nce(const std::vector<torch::Tensor>& anchor, const std::vector<torch::Tensor>& positive,
                       const std::vector<torch::Tensor>& negatives, double tau) {
  if (!(tau > 0.0)) {
    throw ArgumentError("temperature must be positive");
  }
  if (anchor.empty() || anchor.size() != positive.size() || anchor.size() != negatives.size()) {
    throw ArgumentError("info_nce needs the same number of anchor, positive and negative layers");
  }
  torch::Tensor total;
  for (std::size_t i = 0; i < anchor.size(); ++i) {
    const auto& a = anchor[i];
    const auto& p = positive[i];
    const auto& n = negatives[i];
    if (a.dim() != 2 || !a.sizes().equals(p.sizes())) {
      throw ArgumentError("anchor and positive layer " + std::to_string(i) + " must both be [batch, K]");
    }
    if (n.dim() != 2 || (n.size(0) > 0 && n.size(1) != a.size(1))) {
      throw ArgumentError("negatives layer " + std::to_string(i) + " must be [N, K] with matching K");
    }
    if (n.size(0) == 0) {
      continue;
    }
    const auto pos = (a * p).sum(1, /*keepdim=*/true) / tau;        // [B, 1]
    const auto neg = torch::matmul(a, n.to(a.dtype()).t()) / tau;   // [B, N]
    const auto layer = (torch::logsumexp(torch::cat({pos, neg}, 1), 1) - pos.squeeze(1)).mean();
    total = total.defined() ? total + layer : layer;
  }
  if (!total.defined()) {
    return torch::zeros({}, anchor.front().options().requires_grad(false));
  }
  return total;
}

namespace {

void check_probability_map(const torch::Tensor& d, const char* name) {
  if (!d.defined() || d.numel() == 0) {
    throw ArgumentError(std::string(name) + " is empty");
  }
  const auto inside = torch::logical_and(d > 0, d < 1).all().item<bool>();
  if (!inside) {
    throw ArgumentError(std::string(name) + " must lie strictly inside (0, 1); apply the output sigmoid first");
  }
}

}  // namespace

torch::Tensor domain_d_loss(const torch::Tensor& d_real, const torch::Tensor& d_fake) {
  check_probability_map(d_real, "discriminator output on real samples");
  check_probability_map(d_fake, "discriminator output on fake samples");
  return -(torch::log(d_real).mean() + torch::log1p(-d_fake).mean());
}

torch::Tensor domain_g_loss(const torch::Tensor& d_fake, GeneratorAdvForm form) {
  check_probability_map(d_fake, "discriminator output on fake samples");
  if (form == GeneratorAdvForm::saturating) {
    return torch::log1p(-d_fake).mean();
  }
  return -torch::log(d_fake).mean();
}

AdversarialTerms adversarial_loss(const torch::Tensor& d_r_real, const torch::Tensor& d_r_fake,
                                  const torch::Tensor& d_a_real, const torch::Tensor& d_a_fake,
                                  GeneratorAdvForm form) {
  return {domain_d_loss(d_r_real, d_r_fake) + domain_d_loss(d_a_real, d_a_fake),
          domain_g_loss(d_r_fake, form) + domain_g_loss(d_a_fake, form)};
}

torch::Tensor reconstruction_l1(const torch::Tensor& original, const torch::Tensor& reconstruction) {
  if (!original.sizes().equals(reconstruction.sizes())) {
    throw ArgumentError("reconstruction shape does not match the original");
  }
  return (original - reconstruction).abs().mean();
}

torch::Tensor cycle_loss(const torch::Tensor& i_c, const torch::Tensor& rec_c, const torch::Tensor& i_s,
                         const torch::Tensor& rec_s) {
  return reconstruction_l1(i_c, rec_c) + reconstruction_l1(i_s, rec_s);
}

torch::Tensor total_loss(const torch::Tensor& adv_g, const torch::Tensor& cyc, const torch::Tensor& contra_g,
                         const LossWeights& w) {
  require_finite(adv_g.item<double>(), "adv");
  require_finite(cyc.item<double>(), "cyc");
  require_finite(contra_g.item<double>(), "contra_g");
  return adv_g * w.adv + cyc * w.cyc + contra_g * w.contra;
}

double total_loss(double adv_g, double cyc, double contra_g, const LossWeights& w) {
  require_finite(adv_g, "adv");
  require_finite(cyc, "cyc");
  require_finite(contra_g, "contra_g");
  return w.adv * adv_g + w.cyc * cyc + w.contra * contra_g;
}

torch::Tensor gram_matrix(const torch::Tensor& map) {
  if (map.dim() != 4) {
    throw ArgumentError("gram_matrix expects a [batch, C, H, W] map");
  }
  const auto flat = map.flatten(2);
  return torch::bmm(flat, flat.transpose(1, 2));
}

torch::Tensor gram_style_loss(const FeaturePyramid& f_out, const FeaturePyramid& f_style) {
  if (f_out.size() != f_style.size() || f_out.size() == 0) {
    throw ArgumentError("gram_style_loss needs pyramids with the same number of maps");
  }
  torch::Tensor total;
  for (std::size_t i = 0; i < f_out.size(); ++i) {
    const auto& a = f_out[i];
    const auto& b = f_style[i];
    if (!a.sizes().equals(b.sizes())) {
      throw ArgumentError("gram_style_loss: map " + std::to_string(i) + " shapes differ");
    }
    const double chw = static_cast<double>(a.size(1) * a.size(2) * a.size(3));
    const auto diff = gram_matrix(a) - gram_matrix(b);
    const auto layer = diff.pow(2).sum({1, 2}).mean() / (chw * chw);
    total = total.defined() ? total + layer : layer;
  }
  return total;
}

}  // namespace cast
