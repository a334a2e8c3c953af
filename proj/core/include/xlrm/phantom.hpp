#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <vector>

namespace xlrm {

/// Cubic radiodensity field on a regular grid, values in [0,1].
/// Voxel (x,y,z) sits at normalized coordinate 2k/(R-1)-1 per axis
/// (align-corners); storage is x-fastest.
struct VolumeGrid {
  int resolution = 0;
  std::vector<float> values;

  VolumeGrid() = default;
  explicit VolumeGrid(int r)
      : resolution(r), values(static_cast<size_t>(r) * r * r, 0.0f) {}

  size_t index(int x, int y, int z) const {
    return static_cast<size_t>(x) +
           static_cast<size_t>(resolution) * (static_cast<size_t>(y) + static_cast<size_t>(resolution) * z);
  }
  float at(int x, int y, int z) const { return values[index(x, y, z)]; }
  float& at(int x, int y, int z) { return values[index(x, y, z)]; }
};

// Trilinear interpolation at a normalized point (align-corners, clamped to
// the grid); zero-extent grids are not allowed.
float sample_volume(const VolumeGrid& vol, double x, double y, double z);

struct Primitive {
  enum class Shape { Ellipsoid, Box };
  Shape shape = Shape::Ellipsoid;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d semi_axes = Eigen::Vector3d::Ones();
  Eigen::Vector3d euler_deg = Eigen::Vector3d::Zero();  // rotations about z, y, x
  double density_delta = 0.0;
};

struct PhantomSpec {
  std::vector<Primitive> primitives;
  double background = 0.0;
};

// Voxel value = background + sum of density deltas of primitives containing
// the voxel center, clamped to [0,1].
VolumeGrid rasterize_phantom(const PhantomSpec& spec, int resolution);

// One enclosing body ellipsoid plus 3-8 random inner ellipsoids,
// densities in [0.1, 0.9].
PhantomSpec random_phantom(std::mt19937_64& rng);

}  // namespace xlrm
