#include "xlrm/geometry.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace xlrm {

namespace {
constexpr double kPi = 3.14159265358979323846;

double deg2rad(double d) { return d * kPi / 180.0; }
}  // namespace

void ScannerGeometry::validate() const {
  if (!(dsd_mm > dso_mm))
    throw std::invalid_argument("geometry: dsd_mm must exceed dso_mm");
  if (!(dso_mm > volume_extent_mm * std::sqrt(3.0) / 2.0))
    throw std::invalid_argument("geometry: source inside the volume sphere");
  if (det_rows < 2 || det_cols < 2)
    throw std::invalid_argument("geometry: detector must be at least 2x2");
  if (!(pixel_mm > 0))
    throw std::invalid_argument("geometry: pixel_mm must be positive");
  for (double a : angles_deg)
    if (a < 0.0 || a >= 360.0)
      throw std::invalid_argument("geometry: angle outside [0,360): " + std::to_string(a));
}

ScannerGeometry paper_scale_geometry() {
  ScannerGeometry g;
  g.dso_mm = 600.0;
  g.dsd_mm = 1118.0;
  g.det_rows = 256;
  g.det_cols = 256;
  g.pixel_mm = 3.9;
  g.volume_extent_mm = 500.0;
  return g;
}

ScannerGeometry desk_scale_geometry() {
  ScannerGeometry g = paper_scale_geometry();
  g.det_rows = 64;
  g.det_cols = 64;
  g.pixel_mm = 3.9 * 4.0;  // keep the 256*3.9mm field of view
  return g;
}

ScannerGeometry make_circular_geometry(int n_views, const ScannerGeometry& base) {
  if (n_views < 1) throw std::invalid_argument("make_circular_geometry: n_views must be >= 1");
  ScannerGeometry g = base;
  g.angles_deg.resize(n_views);
  for (int i = 0; i < n_views; ++i) g.angles_deg[i] = 360.0 * i / n_views;
  return g;
}

Eigen::Vector3d source_position(const ScannerGeometry& geom, double angle_deg) {
  const double a = deg2rad(angle_deg);
  const double scale = 2.0 / geom.volume_extent_mm;
  return {std::cos(a) * geom.dso_mm * scale, std::sin(a) * geom.dso_mm * scale, 0.0};
}

Ray pixel_ray(const ScannerGeometry& geom, int view_idx, int row, int col) {
  if (view_idx < 0 || view_idx >= geom.n_views())
    throw std::invalid_argument("pixel_ray: view index out of range");
  if (row < 0 || row >= geom.det_rows || col < 0 || col >= geom.det_cols)
    throw std::invalid_argument("pixel_ray: pixel index out of range");

  const double a = deg2rad(geom.angles_deg[view_idx]);
  const double c = std::cos(a), s = std::sin(a);
  const double scale = 2.0 / geom.volume_extent_mm;

  // Source on the +x axis rotated by the view angle; detector on the far
  // side, centered on and perpendicular to the central ray. u lies in the
  // rotation plane, v along the rotation axis (z).
  const Eigen::Vector3d src(c * geom.dso_mm, s * geom.dso_mm, 0.0);
  const Eigen::Vector3d det_center(c * (geom.dso_mm - geom.dsd_mm),
                                   s * (geom.dso_mm - geom.dsd_mm), 0.0);
  const Eigen::Vector3d u_axis(-s, c, 0.0);
  const Eigen::Vector3d v_axis(0.0, 0.0, 1.0);

  const double u = (col - 0.5 * (geom.det_cols - 1)) * geom.pixel_mm;
  const double v = (row - 0.5 * (geom.det_rows - 1)) * geom.pixel_mm;
  const Eigen::Vector3d pix = det_center + u * u_axis + v * v_axis;

  Ray ray;
  ray.origin = src * scale;
  ray.direction = (pix - src).normalized();
  return ray;
}

Vec6 rppc(const Ray& ray) {
  const double n = ray.direction.norm();
  if (std::abs(n - 1.0) > 1e-6)
    throw std::invalid_argument("rppc: direction must be unit-norm");
  const Eigen::Vector3d m =
      ray.origin - ray.origin.dot(ray.direction) * ray.direction;
  Vec6 out;
  out << m, ray.direction;
  return out;
}

RppcMap rppc_map(const ScannerGeometry& geom, int view_idx) {
  RppcMap map;
  map.rows = geom.det_rows;
  map.cols = geom.det_cols;
  map.values.resize(static_cast<size_t>(map.rows) * map.cols);
  for (int r = 0; r < map.rows; ++r)
    for (int c = 0; c < map.cols; ++c)
      map.at(r, c) = rppc(pixel_ray(geom, view_idx, r, c));
  return map;
}

ScannerGeometry perturb(const ScannerGeometry& geom, const GeometryPerturbation& p) {
  if (p.angle_eps_deg < 0 || p.dso_eps_mm < 0 || p.dsd_eps_mm < 0)
    throw std::invalid_argument("perturb: half-widths must be non-negative");
  std::mt19937_64 rng(p.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  ScannerGeometry g = geom;
  g.dso_mm += u(rng) * p.dso_eps_mm;
  g.dsd_mm += u(rng) * p.dsd_eps_mm;
  for (double& a : g.angles_deg) {
    a += u(rng) * p.angle_eps_deg;
    a = std::fmod(a, 360.0);
    if (a < 0.0) a += 360.0;
  }
  try {
    g.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("perturb: invalid perturbed geometry: ") + e.what());
  }
  return g;
}

}  // namespace xlrm
