#include "xlrm/dataset.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>

namespace xlrm {

namespace fs = std::filesystem;
using nlohmann::json;

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t x = seed ^ (0x9E3779B97F4A7C15ull * (stream + 1));
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

DatasetManifest gen_dataset(int n_samples, int resolution, const ScannerGeometry& base_geom,
                            int n_views, const NoiseModel& noise, uint64_t seed,
                            const std::string& out_dir) {
  if (n_samples < 1) throw std::invalid_argument("gen_dataset: n_samples must be >= 1");
  std::error_code ec;
  fs::create_directories(out_dir, ec);

  DatasetManifest m;
  m.resolution = resolution;
  m.n_views = n_views;
  m.geometry = make_circular_geometry(n_views, base_geom);
  m.noise = noise;
  m.root = out_dir;

  for (int i = 0; i < n_samples; ++i) {
    DatasetSample s;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d", i);
    s.id = std::string("sample_") + buf;
    s.volume_file = s.id + "_vol.xlrm";
    s.projections_file = s.id + "_proj.xlrm";
    s.noise_seed = mix_seed(seed, 2 * uint64_t(i) + 1);

    std::mt19937_64 rng(mix_seed(seed, 2 * uint64_t(i)));
    const VolumeGrid vol = rasterize_phantom(random_phantom(rng), resolution);

    ProjectionSet proj = project(vol, m.geometry, 1.0 / resolution);
    NoiseModel nm = noise;
    nm.seed = s.noise_seed;
    proj = apply_noise(proj, nm);

    io::write_volume((fs::path(out_dir) / s.volume_file).string(), vol);
    io::write_projections((fs::path(out_dir) / s.projections_file).string(), proj.images,
                          n_views, m.geometry.det_rows, m.geometry.det_cols);
    m.samples.push_back(std::move(s));
  }

  save_manifest(m, (fs::path(out_dir) / "manifest.json").string());
  return m;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
  json j;
  j["format_version"] = m.format_version;
  j["resolution"] = m.resolution;
  j["n_views"] = m.n_views;
  j["geometry"] = io::geometry_to_text(m.geometry);
  j["noise"] = {{"photon_count", m.noise.photon_count},
                {"gaussian_sigma", m.noise.gaussian_sigma}};
  json samples = json::array();
  for (const auto& s : m.samples)
    samples.push_back({{"id", s.id},
                       {"volume", s.volume_file},
                       {"projections", s.projections_file},
                       {"noise_seed", s.noise_seed}});
  j["samples"] = samples;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write manifest: " + path);
  os << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest: " + path);
  json j;
  is >> j;
  DatasetManifest m;
  m.format_version = j.at("format_version").get<int>();
  m.resolution = j.at("resolution").get<int>();
  m.n_views = j.at("n_views").get<int>();
  m.geometry = io::geometry_from_text(j.at("geometry").get<std::string>());
  m.noise.photon_count = j.at("noise").at("photon_count").get<double>();
  m.noise.gaussian_sigma = j.at("noise").at("gaussian_sigma").get<double>();
  for (const auto& js : j.at("samples")) {
    DatasetSample s;
    s.id = js.at("id").get<std::string>();
    s.volume_file = js.at("volume").get<std::string>();
    s.projections_file = js.at("projections").get<std::string>();
    s.noise_seed = js.at("noise_seed").get<uint64_t>();
    m.samples.push_back(std::move(s));
  }
  m.root = fs::path(path).parent_path().string();
  if (m.root.empty()) m.root = ".";
  return m;
}

void validate_manifest(const DatasetManifest& m) {
  for (const auto& s : m.samples) {
    const std::string vpath = (fs::path(m.root) / s.volume_file).string();
    const std::string ppath = (fs::path(m.root) / s.projections_file).string();
    const io::Tensor vol = io::read_tensor(vpath);
    if (vol.dims != std::vector<uint32_t>{uint32_t(m.resolution), uint32_t(m.resolution),
                                          uint32_t(m.resolution)})
      throw std::runtime_error("manifest: volume shape mismatch in " + vpath);
    const io::Tensor proj = io::read_tensor(ppath);
    if (proj.dims != std::vector<uint32_t>{uint32_t(m.n_views), uint32_t(m.geometry.det_rows),
                                           uint32_t(m.geometry.det_cols)})
      throw std::runtime_error("manifest: projection shape mismatch in " + ppath);
  }
}

VolumeGrid load_sample_volume(const DatasetManifest& m, size_t index) {
  return io::read_volume((fs::path(m.root) / m.samples.at(index).volume_file).string());
}

std::vector<float> load_sample_projections(const DatasetManifest& m, size_t index) {
  return io::read_tensor((fs::path(m.root) / m.samples.at(index).projections_file).string()).data;
}

}  // namespace xlrm
