#pragma once

#include <functional>

#include "xlrm/metrics.hpp"
#include "xlrm/trainer.hpp"

namespace xlrm {

struct SampleMetrics {
  std::string id;
  int view_count = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct RobustnessRow {
  std::string description;
  double psnr = 0.0, ssim = 0.0;
  double delta_psnr = 0.0, delta_ssim = 0.0;
};

struct MetricReport {
  std::vector<SampleMetrics> per_sample;
  struct Aggregate {
    int view_count = 0;
    double psnr = 0.0, ssim = 0.0;
  };
  std::vector<Aggregate> aggregates;  // one row per view count
  std::vector<RobustnessRow> robustness;
};

// Reconstructs one sample at one view count; lets tests plug in oracles.
using Reconstructor =
    std::function<VolumeGrid(const DatasetManifest& m, size_t sample, int view_count)>;

MetricReport evaluate_with(const DatasetManifest& m, const std::vector<int>& view_counts,
                           const Reconstructor& reconstruct);

MetricReport evaluate(XlrmModel<float>& model, const DatasetManifest& m,
                      const std::vector<int>& view_counts);

// Robustness protocol: clean row first, then one row per perturbation. The
// projections are re-rendered under the perturbed geometry while the model
// keeps the unperturbed RPPC maps. 6-view setting.
struct RobustnessCase {
  std::string description;
  GeometryPerturbation perturbation;
};

MetricReport robustness_sweep(XlrmModel<float>& model, const DatasetManifest& m,
                              const std::vector<RobustnessCase>& sweep, int view_count = 6);

// Standard sweep rows: angles +-0.5/+-1 deg, DSO +-2/+-3 mm, DSD +-2/+-3 mm.
std::vector<RobustnessCase> scanner_noise_sweep(uint64_t seed);

// PSNR printed as "inf" for identical volumes, stored as null in JSON.
std::string format_report_table(const MetricReport& report);
void write_report_json(const std::string& path, const MetricReport& report);

// Adjoint, gradient, and interpolation property suites; prints one line per
// check and returns false if any fails.
bool run_selftest();

}  // namespace xlrm
