#include "xlrm/projector.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace xlrm {

namespace {

// Entry/exit parameters of a ray against the [-1,1]^3 cube; returns false on
// a miss.
bool ray_box(const Eigen::Vector3d& o, const Eigen::Vector3d& d, double& t0, double& t1) {
  t0 = 0.0;
  t1 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-12) {
      if (o[i] < -1.0 || o[i] > 1.0) return false;
      continue;
    }
    double a = (-1.0 - o[i]) / d[i];
    double b = (1.0 - o[i]) / d[i];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
  }
  return t0 < t1;
}

struct Cell {
  int x0, y0, z0;
  double a, b, c;
};

// Shared gather/scatter coordinates so backprojection is the exact
// transpose of projection.
inline Cell locate(int r, double x, double y, double z) {
  const double half = 0.5 * (r - 1);
  auto to_grid = [&](double v) { return std::clamp((v + 1.0) * half, 0.0, double(r - 1)); };
  const double u = to_grid(x), v = to_grid(y), w = to_grid(z);
  Cell cell;
  cell.x0 = std::min(int(u), r - 2);
  cell.y0 = std::min(int(v), r - 2);
  cell.z0 = std::min(int(w), r - 2);
  cell.a = u - cell.x0;
  cell.b = v - cell.y0;
  cell.c = w - cell.z0;
  return cell;
}

inline double gather(const VolumeGrid& vol, const Cell& s) {
  const double a = s.a, b = s.b, c = s.c;
  double out = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx)
        out += (dx ? a : 1 - a) * (dy ? b : 1 - b) * (dz ? c : 1 - c) *
               vol.at(s.x0 + dx, s.y0 + dy, s.z0 + dz);
  return out;
}

inline void scatter(std::vector<double>& field, int r, const Cell& s, double value) {
  const double a = s.a, b = s.b, c = s.c;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const size_t idx = static_cast<size_t>(s.x0 + dx) +
                           static_cast<size_t>(r) * (static_cast<size_t>(s.y0 + dy) +
                                                     static_cast<size_t>(r) * (s.z0 + dz));
        field[idx] += (dx ? a : 1 - a) * (dy ? b : 1 - b) * (dz ? c : 1 - c) * value;
      }
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

void project_view_raw(const VolumeGrid& vol, const ScannerGeometry& geom, int view,
                      double step, float* out) {
  if (!(step > 0)) throw std::invalid_argument("project: step must be positive");
  const int r = vol.resolution;
  for (int row = 0; row < geom.det_rows; ++row)
    for (int col = 0; col < geom.det_cols; ++col) {
      const Ray ray = pixel_ray(geom, view, row, col);
      double t0, t1, sum = 0.0;
      if (ray_box(ray.origin, ray.direction, t0, t1)) {
        const int n = static_cast<int>((t1 - t0) / step);
        for (int i = 0; i <= n; ++i) {
          const double t = t0 + (i + 0.5) * step;
          if (t >= t1) break;
          const Eigen::Vector3d p = ray.origin + t * ray.direction;
          sum += gather(vol, locate(r, p[0], p[1], p[2])) * step;
        }
      }
      out[static_cast<size_t>(row) * geom.det_cols + col] = static_cast<float>(sum);
    }
}

std::vector<float> project_raw(const VolumeGrid& vol, const ScannerGeometry& geom, double step) {
  const size_t per_view = static_cast<size_t>(geom.det_rows) * geom.det_cols;
  std::vector<float> raw(per_view * geom.n_views());
  for (int v = 0; v < geom.n_views(); ++v)
    project_view_raw(vol, geom, v, step, raw.data() + per_view * v);
  return raw;
}

ProjectionSet project(const VolumeGrid& vol, const ScannerGeometry& geom, double step) {
  ProjectionSet out;
  out.geom = geom;
  out.images = project_raw(vol, geom, step);
  for (float& p : out.images)
    p = std::clamp(p / static_cast<float>(kProjectionScale), 0.0f, 1.0f);
  out.rppc.reserve(geom.n_views());
  for (int v = 0; v < geom.n_views(); ++v) out.rppc.push_back(rppc_map(geom, v));
  return out;
}

ProjectionSet apply_noise(const ProjectionSet& proj, const NoiseModel& nm) {
  if (!(nm.photon_count > 0)) throw std::invalid_argument("apply_noise: photon_count must be positive");
  if (nm.gaussian_sigma < 0) throw std::invalid_argument("apply_noise: gaussian_sigma must be >= 0");

  ProjectionSet out = proj;
  for (size_t i = 0; i < out.images.size(); ++i) {
    const double p = double(proj.images[i]) * kProjectionScale;  // back to raw
    std::mt19937_64 rng(splitmix64(nm.seed ^ splitmix64(i + 1)));
    std::poisson_distribution<long long> poisson(nm.photon_count * std::exp(-p));
    const double k = std::max<long long>(poisson(rng), 1);
    double noisy = -std::log(k / nm.photon_count);
    if (nm.gaussian_sigma > 0) {
      std::normal_distribution<double> gauss(0.0, nm.gaussian_sigma);
      noisy += gauss(rng);
    }
    out.images[i] = static_cast<float>(std::clamp(noisy / kProjectionScale, 0.0, 1.0));
  }
  return out;
}

namespace {

void backproject_view(const float* raw, const ScannerGeometry& geom, int view, int r,
                      double step, std::vector<double>& field) {
  for (int row = 0; row < geom.det_rows; ++row)
    for (int col = 0; col < geom.det_cols; ++col) {
      const double value = raw[static_cast<size_t>(row) * geom.det_cols + col];
      if (value == 0.0) continue;
      const Ray ray = pixel_ray(geom, view, row, col);
      double t0, t1;
      if (!ray_box(ray.origin, ray.direction, t0, t1)) continue;
      const int n = static_cast<int>((t1 - t0) / step);
      for (int i = 0; i <= n; ++i) {
        const double t = t0 + (i + 0.5) * step;
        if (t >= t1) break;
        const Eigen::Vector3d p = ray.origin + t * ray.direction;
        scatter(field, r, locate(r, p[0], p[1], p[2]), value * step);
      }
    }
}

}  // namespace

std::vector<float> backproject_raw(const std::vector<float>& raw, const ScannerGeometry& geom,
                                   int resolution, double step) {
  const size_t per_view = static_cast<size_t>(geom.det_rows) * geom.det_cols;
  if (raw.size() != per_view * geom.n_views())
    throw std::invalid_argument("backproject: projection size mismatch");
  std::vector<double> field(static_cast<size_t>(resolution) * resolution * resolution, 0.0);
  for (int v = 0; v < geom.n_views(); ++v)
    backproject_view(raw.data() + per_view * v, geom, v, resolution, step, field);
  std::vector<float> out(field.size());
  for (size_t i = 0; i < field.size(); ++i) out[i] = static_cast<float>(field[i]);
  return out;
}

VolumeGrid sart_reconstruct(const ProjectionSet& proj, int resolution, int iters, double relax) {
  if (iters < 1) throw std::invalid_argument("sart: iters must be >= 1");
  if (!(relax > 0.0 && relax <= 1.0)) throw std::invalid_argument("sart: relax must be in (0,1]");

  const ScannerGeometry& geom = proj.geom;
  const double step = 1.0 / resolution;
  const size_t per_view = static_cast<size_t>(geom.det_rows) * geom.det_cols;
  const size_t n_vox = static_cast<size_t>(resolution) * resolution * resolution;

  // Per-view row sums (ray intersection lengths) and column sums.
  VolumeGrid ones(resolution);
  std::fill(ones.values.begin(), ones.values.end(), 1.0f);
  std::vector<float> ones_img(per_view, 1.0f);

  std::vector<std::vector<float>> row_sums(geom.n_views());
  std::vector<std::vector<double>> col_sums(geom.n_views());
  for (int v = 0; v < geom.n_views(); ++v) {
    row_sums[v].resize(per_view);
    project_view_raw(ones, geom, v, step, row_sums[v].data());
    col_sums[v].assign(n_vox, 0.0);
    backproject_view(ones_img.data(), geom, v, resolution, step, col_sums[v]);
  }

  VolumeGrid x(resolution);
  std::vector<float> fwd(per_view), weighted(per_view);
  std::vector<double> update(n_vox);

  for (int it = 0; it < iters; ++it) {
    for (int v = 0; v < geom.n_views(); ++v) {
      project_view_raw(x, geom, v, step, fwd.data());
      for (size_t i = 0; i < per_view; ++i) {
        const double len = row_sums[v][i];
        if (len < 1e-9) {
          weighted[i] = 0.0f;  // degenerate ray
          continue;
        }
        const double b = double(proj.images[per_view * v + i]) * kProjectionScale;
        weighted[i] = static_cast<float>((b - fwd[i]) / len);
      }
      std::fill(update.begin(), update.end(), 0.0);
      backproject_view(weighted.data(), geom, v, resolution, step, update);
      for (size_t i = 0; i < n_vox; ++i) {
        if (col_sums[v][i] < 1e-9) continue;
        const double val = x.values[i] + relax * update[i] / col_sums[v][i];
        x.values[i] = static_cast<float>(std::clamp(val, 0.0, 1.0));
      }
    }
  }
  return x;
}

}  // namespace xlrm
