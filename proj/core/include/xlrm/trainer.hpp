#pragma once

#include <iosfwd>
#include <map>
#include <memory>

#include "xlrm/dataset.hpp"
#include "xlrm/model.hpp"

namespace xlrm {

struct TrainConfig {
  std::vector<int> view_counts{6, 8, 10};
  double lr_init = 4e-4;
  long warmup_iters = 3000;
  long total_steps = 10000;
  int batch_size = 2;
  int points_per_step = 4096;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.05;
  double clip_norm = 1.0;
  uint64_t seed = 0;
  std::string ablation = "+xformer";
};

// Linear warmup to lr_init over warmup_iters, then cosine annealing to 0 at
// total_steps.
double lr_at(long step, const TrainConfig& cfg);

// Mean over view counts of the per-element mean squared error.
double recon_loss(const std::map<int, std::vector<float>>& predictions,
                  const std::map<int, std::vector<float>>& targets);

struct TrainSample {
  VolumeGrid gt;
  std::map<int, ProjectionSet> projections;  // keyed by view count
};

// Projections for a view count: clean circular geometry for the RPPC maps,
// optionally a different true acquisition geometry for the ray integrals
// (robustness protocol), noise applied with the given seed. A non-positive
// photon count renders noiseless projections.
ProjectionSet render_views(const VolumeGrid& gt, const ScannerGeometry& base, int n_views,
                           const NoiseModel& noise, uint64_t noise_seed,
                           const ScannerGeometry* true_geom = nullptr);

// Loads ground-truth volumes and builds per-view-count projection sets:
// stored projections where the view count matches the dataset, regenerated
// evenly-spaced views (rendered from the ground truth) otherwise.
std::vector<TrainSample> prepare_training_set(const DatasetManifest& m,
                                              const std::vector<int>& view_counts);

/// AdamW with decoupled weight decay, global-norm gradient clipping, and the
/// warmup+cosine schedule. Single-threaded and bitwise deterministic given
/// the seed.
class Trainer {
 public:
  Trainer(const EncoderConfig& ec, const DecoderConfig& dc, const TrainConfig& tc);

  XlrmModel<float>& model() { return model_; }
  const TrainConfig& config() const { return tcfg_; }
  long step_count() const { return step_; }

  // One accumulated update over the batch; returns the step loss.
  // Throws on a non-finite loss.
  double train_step(const std::vector<const TrainSample*>& batch);

  // n_steps batches selected with the trainer RNG; appends
  // "step, lr, loss, psnr_train" lines to log when provided.
  void run(const std::vector<TrainSample>& data, long n_steps, std::ostream* log = nullptr);

  void save_checkpoint(const std::string& path);
  static std::unique_ptr<Trainer> load_checkpoint(const std::string& path);

 private:
  EncoderConfig ecfg_;
  DecoderConfig dcfg_;
  TrainConfig tcfg_;
  XlrmModel<float> model_;
  std::vector<Mat<float>> adam_m_, adam_v_;
  long step_ = 0;
  std::mt19937_64 rng_;

  void apply_update();
};

}  // namespace xlrm
