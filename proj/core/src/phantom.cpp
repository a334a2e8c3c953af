#include "xlrm/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace xlrm {

namespace {

Eigen::Matrix3d rotation_from_euler(const Eigen::Vector3d& euler_deg) {
  const double d2r = 3.14159265358979323846 / 180.0;
  return (Eigen::AngleAxisd(euler_deg[0] * d2r, Eigen::Vector3d::UnitZ()) *
          Eigen::AngleAxisd(euler_deg[1] * d2r, Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(euler_deg[2] * d2r, Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

bool contains(const Primitive& prim, const Eigen::Matrix3d& rot_t, const Eigen::Vector3d& p) {
  const Eigen::Vector3d q = rot_t * (p - prim.center);
  if (prim.shape == Primitive::Shape::Ellipsoid) {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double r = q[i] / prim.semi_axes[i];
      s += r * r;
    }
    return s <= 1.0;
  }
  return std::abs(q[0]) <= prim.semi_axes[0] && std::abs(q[1]) <= prim.semi_axes[1] &&
         std::abs(q[2]) <= prim.semi_axes[2];
}

}  // namespace

float sample_volume(const VolumeGrid& vol, double x, double y, double z) {
  const int r = vol.resolution;
  const double half = 0.5 * (r - 1);
  auto to_grid = [&](double c) { return std::clamp((c + 1.0) * half, 0.0, double(r - 1)); };
  const double u = to_grid(x), v = to_grid(y), w = to_grid(z);
  const int x0 = std::min(int(u), r - 2), y0 = std::min(int(v), r - 2), z0 = std::min(int(w), r - 2);
  const double a = u - x0, b = v - y0, c = w - z0;
  double out = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double wgt = (dx ? a : 1 - a) * (dy ? b : 1 - b) * (dz ? c : 1 - c);
        out += wgt * vol.at(x0 + dx, y0 + dy, z0 + dz);
      }
  return static_cast<float>(out);
}

VolumeGrid rasterize_phantom(const PhantomSpec& spec, int resolution) {
  if (resolution < 2) throw std::invalid_argument("rasterize_phantom: resolution must be >= 2");
  VolumeGrid vol(resolution);

  std::vector<Eigen::Matrix3d> rot_t(spec.primitives.size());
  for (size_t i = 0; i < spec.primitives.size(); ++i)
    rot_t[i] = rotation_from_euler(spec.primitives[i].euler_deg).transpose();

  const double half = 0.5 * (resolution - 1);
  for (int z = 0; z < resolution; ++z)
    for (int y = 0; y < resolution; ++y)
      for (int x = 0; x < resolution; ++x) {
        const Eigen::Vector3d p(x / half - 1.0, y / half - 1.0, z / half - 1.0);
        double v = spec.background;
        for (size_t i = 0; i < spec.primitives.size(); ++i)
          if (contains(spec.primitives[i], rot_t[i], p)) v += spec.primitives[i].density_delta;
        vol.at(x, y, z) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  return vol;
}

PhantomSpec random_phantom(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  PhantomSpec spec;
  spec.background = 0.0;

  Primitive body;
  body.shape = Primitive::Shape::Ellipsoid;
  body.center = Eigen::Vector3d::Zero();
  body.semi_axes = {uni(0.7, 0.9), uni(0.7, 0.9), uni(0.7, 0.9)};
  body.euler_deg = Eigen::Vector3d::Zero();
  body.density_delta = uni(0.15, 0.35);
  spec.primitives.push_back(body);

  const int n_inner = 3 + static_cast<int>(unit(rng) * 6.0);  // 3..8
  for (int i = 0; i < n_inner; ++i) {
    Primitive p;
    p.shape = Primitive::Shape::Ellipsoid;
    p.center = {uni(-0.45, 0.45), uni(-0.45, 0.45), uni(-0.45, 0.45)};
    p.semi_axes = {uni(0.08, 0.35), uni(0.08, 0.35), uni(0.08, 0.35)};
    p.euler_deg = {uni(0.0, 180.0), uni(0.0, 180.0), uni(0.0, 180.0)};
    p.density_delta = uni(-0.25, 0.55);
    spec.primitives.push_back(p);
  }
  return spec;
}

}  // namespace xlrm
