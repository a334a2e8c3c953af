#include "xlrm/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace xlrm {

double psnr_3d(const VolumeGrid& pred, const VolumeGrid& gt) {
  if (pred.resolution != gt.resolution)
    throw std::invalid_argument("psnr_3d: shape mismatch");
  double mse = 0.0;
  for (size_t i = 0; i < pred.values.size(); ++i) {
    const double d = double(pred.values[i]) - double(gt.values[i]);
    mse += d * d;
  }
  mse /= double(pred.values.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> gaussian_kernel() {
  std::vector<double> k(kWin);
  double sum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - (kWin - 1) / 2.0;
    k[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable valid-mode Gaussian filter of an n x n image.
std::vector<double> blur(const std::vector<double>& img, int n, const std::vector<double>& k) {
  const int m = n - kWin + 1;
  std::vector<double> tmp(static_cast<size_t>(n) * m), out(static_cast<size_t>(m) * m);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < m; ++c) {
      double s = 0.0;
      for (int i = 0; i < kWin; ++i) s += k[i] * img[static_cast<size_t>(r) * n + c + i];
      tmp[static_cast<size_t>(r) * m + c] = s;
    }
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c) {
      double s = 0.0;
      for (int i = 0; i < kWin; ++i) s += k[i] * tmp[static_cast<size_t>(r + i) * m + c];
      out[static_cast<size_t>(r) * m + c] = s;
    }
  return out;
}

double ssim_2d(const std::vector<double>& a, const std::vector<double>& b, int n,
               const std::vector<double>& k) {
  const size_t sz = a.size();
  std::vector<double> aa(sz), bb(sz), ab(sz);
  for (size_t i = 0; i < sz; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = blur(a, n, k), mu_b = blur(b, n, k);
  const auto m_aa = blur(aa, n, k), m_bb = blur(bb, n, k), m_ab = blur(ab, n, k);

  double total = 0.0;
  for (size_t i = 0; i < mu_a.size(); ++i) {
    const double va = m_aa[i] - mu_a[i] * mu_a[i];
    const double vb = m_bb[i] - mu_b[i] * mu_b[i];
    const double cov = m_ab[i] - mu_a[i] * mu_b[i];
    total += ((2 * mu_a[i] * mu_b[i] + kC1) * (2 * cov + kC2)) /
             ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kC1) * (va + vb + kC2));
  }
  return total / double(mu_a.size());
}

}  // namespace

double ssim_slices(const VolumeGrid& pred, const VolumeGrid& gt) {
  if (pred.resolution != gt.resolution)
    throw std::invalid_argument("ssim_slices: shape mismatch");
  const int r = pred.resolution;
  if (r < kWin) throw std::invalid_argument("ssim_slices: resolution below SSIM window size");

  const auto kernel = gaussian_kernel();
  const size_t per_slice = static_cast<size_t>(r) * r;
  std::vector<double> a(per_slice), b(per_slice);
  double total = 0.0;
  for (int z = 0; z < r; ++z) {
    for (size_t i = 0; i < per_slice; ++i) {
      a[i] = pred.values[per_slice * z + i];
      b[i] = gt.values[per_slice * z + i];
    }
    total += ssim_2d(a, b, r, kernel);
  }
  return total / r;
}

}  // namespace xlrm
