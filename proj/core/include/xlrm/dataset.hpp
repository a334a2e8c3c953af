#pragma once

#include <string>
#include <vector>

#include "xlrm/io.hpp"
#include "xlrm/projector.hpp"

namespace xlrm {

struct DatasetSample {
  std::string id;
  std::string volume_file;       // relative to the manifest directory
  std::string projections_file;
  uint64_t noise_seed = 0;
};

struct DatasetManifest {
  int format_version = 1;
  int resolution = 0;
  int n_views = 0;  // view count rendered on disk
  ScannerGeometry geometry;
  NoiseModel noise;
  std::vector<DatasetSample> samples;
  std::string root;  // directory of the manifest file, not serialized
};

// Renders n_samples random phantoms at the given geometry/view count with
// noise; fully deterministic from seed (per-sample streams are derived, so
// byte-identical output across runs). Writes manifest.json plus per-sample
// volume and projection files into out_dir and returns the manifest.
DatasetManifest gen_dataset(int n_samples, int resolution, const ScannerGeometry& base_geom,
                            int n_views, const NoiseModel& noise, uint64_t seed,
                            const std::string& out_dir);

void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

// Checks that every referenced file exists and matches the declared shapes;
// throws with the offending path otherwise.
void validate_manifest(const DatasetManifest& m);

VolumeGrid load_sample_volume(const DatasetManifest& m, size_t index);
std::vector<float> load_sample_projections(const DatasetManifest& m, size_t index);

uint64_t mix_seed(uint64_t seed, uint64_t stream);

}  // namespace xlrm
