#pragma once

#include <cstdint>
#include <vector>

#include "xlrm/geometry.hpp"
#include "xlrm/phantom.hpp"

namespace xlrm {

// Raw line integrals are mapped into [0,1] by this fixed scale; the longest
// possible path through [-1,1]^3 at density 1 is 2*sqrt(3) ~ 3.46.
constexpr double kProjectionScale = 4.0;

struct NoiseModel {
  double photon_count = 1e5;     // expected photons on an unattenuated ray
  double gaussian_sigma = 0.01;  // additive std in the log domain
  uint64_t seed = 0;
};

struct ProjectionSet {
  ScannerGeometry geom;
  std::vector<float> images;  // view-major [view][row][col], values in [0,1]
  std::vector<RppcMap> rppc;

  size_t pixels_per_view() const {
    return static_cast<size_t>(geom.det_rows) * geom.det_cols;
  }
  float pixel(int view, int row, int col) const {
    return images[pixels_per_view() * view + static_cast<size_t>(row) * geom.det_cols + col];
  }
};

// Raw (unscaled) ray-marched line integrals: uniform samples at spacing
// `step` in normalized units, trilinear interpolation, zero outside the
// cube. One image per view, view-major.
std::vector<float> project_raw(const VolumeGrid& vol, const ScannerGeometry& geom, double step);

// Raw integrals along a single view.
void project_view_raw(const VolumeGrid& vol, const ScannerGeometry& geom, int view,
                      double step, float* out);

// Scaled noiseless projections with RPPC maps attached.
ProjectionSet project(const VolumeGrid& vol, const ScannerGeometry& geom, double step);

// Poisson photon statistics plus Gaussian log-domain noise, applied to the
// unscaled integrals and rescaled/clamped back to [0,1]. Deterministic given
// nm.seed and independent of pixel evaluation order.
ProjectionSet apply_noise(const ProjectionSet& proj, const NoiseModel& nm);

// Exact discrete adjoint of project_raw: every ray sample scatters its pixel
// value (times step) into the 8 surrounding voxels with trilinear weights.
// Input is raw-valued pixels, view-major; output is unclamped.
std::vector<float> backproject_raw(const std::vector<float>& raw, const ScannerGeometry& geom,
                                   int resolution, double step);

// SART with per-view sweeps; degenerate (zero row-sum) rays are skipped.
// proj images are in scaled [0,1] units.
VolumeGrid sart_reconstruct(const ProjectionSet& proj, int resolution, int iters, double relax);

}  // namespace xlrm
