#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace xlrm {

/// Circular cone-beam acquisition: point source and flat detector rotating
/// about the world z-axis. Distances are in millimetres; ray math happens in
/// normalized units where the reconstructed cube maps to [-1,1]^3.
struct ScannerGeometry {
  double dso_mm = 600.0;   // source -> rotation origin
  double dsd_mm = 1118.0;  // source -> detector
  int det_rows = 256;
  int det_cols = 256;
  double pixel_mm = 3.9;
  std::vector<double> angles_deg;
  double volume_extent_mm = 500.0;  // cubic side length

  int n_views() const { return static_cast<int>(angles_deg.size()); }
  // Throws std::invalid_argument on violated invariants.
  void validate() const;
};

// Default 256^2 detector preset and the reduced 64^2 preset (pixel pitch
// scaled x4 so the detector covers the same field of view).
ScannerGeometry paper_scale_geometry();
ScannerGeometry desk_scale_geometry();

struct Ray {
  Eigen::Vector3d origin;     // normalized units
  Eigen::Vector3d direction;  // unit norm
};

using Vec6 = Eigen::Matrix<double, 6, 1>;

/// Per-pixel 6-vectors (m, d): d is the unit ray direction, m the ray point
/// closest to the world origin, so m.d = 0.
struct RppcMap {
  int rows = 0, cols = 0;
  std::vector<Vec6> values;  // row-major

  const Vec6& at(int r, int c) const { return values[static_cast<size_t>(r) * cols + c]; }
  Vec6& at(int r, int c) { return values[static_cast<size_t>(r) * cols + c]; }
};

struct GeometryPerturbation {
  double angle_eps_deg = 0.0;
  double dso_eps_mm = 0.0;
  double dsd_eps_mm = 0.0;
  uint64_t seed = 0;
};

// Evenly spaced angles 360*i/n starting at 0; other fields copied from base.
ScannerGeometry make_circular_geometry(int n_views, const ScannerGeometry& base);

// Source position in normalized units at a given view angle.
Eigen::Vector3d source_position(const ScannerGeometry& geom, double angle_deg);

// Ray from the source through the center of detector pixel (row, col).
Ray pixel_ray(const ScannerGeometry& geom, int view_idx, int row, int col);

// (o - (o.d)d, d); throws if d is not unit-norm.
Vec6 rppc(const Ray& ray);

RppcMap rppc_map(const ScannerGeometry& geom, int view_idx);

// Independent uniform draws in [-eps, +eps] per angle, one draw each for
// dso/dsd. Deterministic given p.seed; the underlying U(-1,1) draws do not
// depend on the eps magnitudes, so sweeps over eps with a fixed seed scale
// the same perturbation directions. Angles wrap into [0, 360).
ScannerGeometry perturb(const ScannerGeometry& geom, const GeometryPerturbation& p);

}  // namespace xlrm
