#pragma once

// Reference implementations in plain double precision, written without
// torch so that the library kernels are checked against independent code.

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Vec to_vec(const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

inline Mat to_mat(const torch::Tensor& t) {
  Mat out;
  for (int64_t r = 0; r < t.size(0); ++r) out.push_back(to_vec(t[r]));
  return out;
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

// anchor[i][b], positive[i][b], negatives[i][j]: layer i, batch row b, negative j.
inline double info_nce(const std::vector<Mat>& anchor, const std::vector<Mat>& positive,
                       const std::vector<Mat>& negatives, double tau) {
  double total = 0.0;
  for (std::size_t i = 0; i < anchor.size(); ++i) {
    if (negatives[i].empty()) continue;
    double layer = 0.0;
    for (std::size_t b = 0; b < anchor[i].size(); ++b) {
      const double pos = std::exp(dot(anchor[i][b], positive[i][b]) / tau);
      double denom = pos;
      for (const auto& n : negatives[i]) denom += std::exp(dot(anchor[i][b], n) / tau);
      layer += -std::log(pos / denom);
    }
    total += layer / static_cast<double>(anchor[i].size());
  }
  return total;
}

inline double mean_l1(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += std::fabs(a[k] - b[k]);
  return s / static_cast<double>(a.size());
}

// map: one batch element, [C][H*W].
inline Mat gram(const Mat& map) {
  Mat g(map.size(), Vec(map.size(), 0.0));
  for (std::size_t i = 0; i < map.size(); ++i)
    for (std::size_t j = 0; j < map.size(); ++j) g[i][j] = dot(map[i], map[j]);
  return g;
}

// Sum over layers of batch-mean ||G(a) - G(b)||_F^2 / (C H W)^2.
inline double gram_style_loss(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
  double total = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    const auto batch = a[l].size(0);
    const double chw = static_cast<double>(a[l].size(1) * a[l].size(2) * a[l].size(3));
    double layer = 0.0;
    for (int64_t n = 0; n < batch; ++n) {
      const auto ga = gram(to_mat(a[l][n].flatten(1)));
      const auto gb = gram(to_mat(b[l][n].flatten(1)));
      double fro = 0.0;
      for (std::size_t i = 0; i < ga.size(); ++i)
        for (std::size_t j = 0; j < ga.size(); ++j) fro += (ga[i][j] - gb[i][j]) * (ga[i][j] - gb[i][j]);
      layer += fro / (chw * chw);
    }
    total += layer / static_cast<double>(batch);
  }
  return total;
}

// Central finite-difference gradient of f at x (a float64 tensor). f must not
// retain x.
inline torch::Tensor numeric_gradient(const std::function<double(const torch::Tensor&)>& f, const torch::Tensor& x,
                                      double h = 1e-6) {
  auto base = x.detach().clone().contiguous();
  auto grad = torch::zeros_like(base);
  auto flat = base.view({-1});
  auto gflat = grad.view({-1});
  for (int64_t k = 0; k < flat.size(0); ++k) {
    const double v = flat[k].item<double>();
    flat[k] = v + h;
    const double up = f(base);
    flat[k] = v - h;
    const double down = f(base);
    flat[k] = v;
    gflat[k] = (up - down) / (2.0 * h);
  }
  return grad;
}

// max |a - b| / max(1e-8, max |b|), a relative error over the whole array.
inline double relative_error(const torch::Tensor& a, const torch::Tensor& b) {
  const double scale = std::max(1e-8, b.abs().max().item<double>());
  return (a - b).abs().max().item<double>() / scale;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace oracle
