#include "xlrm/trainer.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <ostream>
#include <sstream>

namespace xlrm {

using nlohmann::json;

double lr_at(long step, const TrainConfig& cfg) {
  if (step < 0) throw std::invalid_argument("lr_at: negative step");
  if (step < cfg.warmup_iters)
    return cfg.lr_init * double(step) / double(cfg.warmup_iters);
  if (step >= cfg.total_steps) return 0.0;
  const double t = double(step - cfg.warmup_iters) / double(cfg.total_steps - cfg.warmup_iters);
  return cfg.lr_init * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

double recon_loss(const std::map<int, std::vector<float>>& predictions,
                  const std::map<int, std::vector<float>>& targets) {
  if (predictions.empty() || predictions.size() != targets.size())
    throw std::invalid_argument("recon_loss: prediction/target view counts differ");
  double total = 0.0;
  for (const auto& [views, pred] : predictions) {
    auto it = targets.find(views);
    if (it == targets.end() || it->second.size() != pred.size())
      throw std::invalid_argument("recon_loss: shape mismatch for view count " +
                                  std::to_string(views));
    double mse = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
      const double d = double(pred[i]) - double(it->second[i]);
      mse += d * d;
    }
    total += mse / double(pred.size());
  }
  return total / double(predictions.size());
}

ProjectionSet render_views(const VolumeGrid& gt, const ScannerGeometry& base, int n_views,
                           const NoiseModel& noise, uint64_t noise_seed,
                           const ScannerGeometry* true_geom) {
  const ScannerGeometry clean = make_circular_geometry(n_views, base);
  const ScannerGeometry& actual = true_geom ? *true_geom : clean;

  ProjectionSet proj;
  proj.geom = clean;
  proj.images = project_raw(gt, actual, 1.0 / gt.resolution);
  for (float& p : proj.images)
    p = std::clamp(p / float(kProjectionScale), 0.0f, 1.0f);
  for (int v = 0; v < n_views; ++v) proj.rppc.push_back(rppc_map(clean, v));

  if (!(noise.photon_count > 0)) return proj;  // noiseless rendering
  NoiseModel nm = noise;
  nm.seed = noise_seed;
  return apply_noise(proj, nm);
}

std::vector<TrainSample> prepare_training_set(const DatasetManifest& m,
                                              const std::vector<int>& view_counts) {
  std::vector<TrainSample> out;
  out.reserve(m.samples.size());
  for (size_t i = 0; i < m.samples.size(); ++i) {
    TrainSample ts;
    ts.gt = load_sample_volume(m, i);
    for (int v : view_counts) {
      if (v == m.n_views) {
        ProjectionSet proj;
        proj.geom = m.geometry;
        proj.images = load_sample_projections(m, i);
        for (int k = 0; k < v; ++k) proj.rppc.push_back(rppc_map(m.geometry, k));
        ts.projections.emplace(v, std::move(proj));
      } else {
        ts.projections.emplace(
            v, render_views(ts.gt, m.geometry, v, m.noise,
                            mix_seed(m.samples[i].noise_seed, uint64_t(v))));
      }
    }
    out.push_back(std::move(ts));
  }
  return out;
}

Trainer::Trainer(const EncoderConfig& ec, const DecoderConfig& dc, const TrainConfig& tc)
    : ecfg_(ec), dcfg_(dc), tcfg_(tc),
      model_(ec, dc, ablation_from_name(tc.ablation)), rng_(tc.seed) {
  model_.init(mix_seed(tc.seed, 0xC0FFEE));
  for (Param<float>* p : model_.parameters()) {
    adam_m_.push_back(Mat<float>::Zero(p->value.rows(), p->value.cols()));
    adam_v_.push_back(Mat<float>::Zero(p->value.rows(), p->value.cols()));
  }
}

double Trainer::train_step(const std::vector<const TrainSample*>& batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  model_.zero_grad();

  const int n_counts = static_cast<int>(tcfg_.view_counts.size());
  const int n_points = tcfg_.points_per_step;
  const float inv_norm = 1.0f / float(n_points) / float(n_counts) / float(batch.size());

  std::uniform_real_distribution<double> coord(-1.0, 1.0);
  double total_loss = 0.0;

  for (const TrainSample* inst : batch) {
    // M points shared across the view counts of this instance
    std::vector<Eigen::Vector3d> pts(n_points);
    for (auto& p : pts) {
      p[0] = coord(rng_);
      p[1] = coord(rng_);
      p[2] = coord(rng_);
    }
    Eigen::VectorXf target(n_points);
    for (int i = 0; i < n_points; ++i)
      target[i] = sample_volume(inst->gt, pts[i][0], pts[i][1], pts[i][2]);

    for (int v : tcfg_.view_counts) {
      const Mat<float> rho = model_.forward(inst->projections.at(v), pts);
      Mat<float> diff = rho;
      diff.col(0) -= target;
      double mse = 0.0;
      for (int i = 0; i < n_points; ++i) mse += double(diff(i, 0)) * double(diff(i, 0));
      total_loss += mse / double(n_points) / double(n_counts) / double(batch.size());
      model_.backward(2.0f * inv_norm * diff);
    }
  }

  if (!std::isfinite(total_loss)) {
    std::ostringstream os;
    os << "train_step: non-finite loss " << total_loss << " at step " << step_;
    throw std::runtime_error(os.str());
  }
  apply_update();
  return total_loss;
}

void Trainer::apply_update() {
  const ParamList<float> params = model_.parameters();
  ++step_;
  const float lr = static_cast<float>(lr_at(step_, tcfg_));

  double sq = 0.0;
  for (Param<float>* p : params) sq += double(p->grad.squaredNorm());
  const double norm = std::sqrt(sq);
  const float scale = (tcfg_.clip_norm > 0 && norm > tcfg_.clip_norm)
                          ? float(tcfg_.clip_norm / norm)
                          : 1.0f;

  const float b1 = float(tcfg_.beta1), b2 = float(tcfg_.beta2);
  const float bc1 = 1.0f - std::pow(b1, float(step_));
  const float bc2 = 1.0f - std::pow(b2, float(step_));
  const float wd = float(tcfg_.weight_decay);

  for (size_t i = 0; i < params.size(); ++i) {
    Mat<float>& m = adam_m_[i];
    Mat<float>& v = adam_v_[i];
    const Mat<float> g = params[i]->grad * scale;
    m = b1 * m + (1.0f - b1) * g;
    v = b2 * v + (1.0f - b2) * g.cwiseProduct(g);
    const Mat<float> update =
        (m / bc1).cwiseQuotient(((v / bc2).cwiseSqrt().array() + 1e-8f).matrix()) +
        wd * params[i]->value;
    params[i]->value -= lr * update;
  }
}

void Trainer::run(const std::vector<TrainSample>& data, long n_steps, std::ostream* log) {
  if (data.empty()) throw std::invalid_argument("run: empty training set");
  std::uniform_int_distribution<size_t> pick(0, data.size() - 1);
  for (long s = 0; s < n_steps; ++s) {
    std::vector<const TrainSample*> batch;
    for (int b = 0; b < tcfg_.batch_size; ++b) batch.push_back(&data[pick(rng_)]);
    const double loss = train_step(batch);
    if (log) {
      const double psnr = loss > 0 ? 10.0 * std::log10(1.0 / loss) : 99.0;
      (*log) << step_ << ", " << lr_at(step_, tcfg_) << ", " << loss << ", " << psnr << "\n";
    }
  }
}

namespace {

json encoder_to_json(const EncoderConfig& c) {
  return {{"patch", c.patch}, {"d_e", c.d_e}, {"n_layers", c.n_layers}, {"heads", c.heads}};
}
EncoderConfig encoder_from_json(const json& j) {
  EncoderConfig c;
  c.patch = j.at("patch");
  c.d_e = j.at("d_e");
  c.n_layers = j.at("n_layers");
  c.heads = j.at("heads");
  return c;
}
json decoder_to_json(const DecoderConfig& c) {
  return {{"d_d", c.d_d},           {"n_layers", c.n_layers},
          {"heads", c.heads},       {"token_grid", c.token_grid},
          {"d_t", c.d_t},           {"inf_layers", c.inf_layers},
          {"inf_hidden", c.inf_hidden}, {"paper_residual", c.paper_residual}};
}
DecoderConfig decoder_from_json(const json& j) {
  DecoderConfig c;
  c.d_d = j.at("d_d");
  c.n_layers = j.at("n_layers");
  c.heads = j.at("heads");
  c.token_grid = j.at("token_grid");
  c.d_t = j.at("d_t");
  c.inf_layers = j.at("inf_layers");
  c.inf_hidden = j.at("inf_hidden");
  c.paper_residual = j.at("paper_residual");
  return c;
}
json train_to_json(const TrainConfig& c) {
  return {{"view_counts", c.view_counts},
          {"lr_init", c.lr_init},
          {"warmup_iters", c.warmup_iters},
          {"total_steps", c.total_steps},
          {"batch_size", c.batch_size},
          {"points_per_step", c.points_per_step},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"weight_decay", c.weight_decay},
          {"clip_norm", c.clip_norm},
          {"seed", c.seed},
          {"ablation", c.ablation}};
}
TrainConfig train_from_json(const json& j) {
  TrainConfig c;
  c.view_counts = j.at("view_counts").get<std::vector<int>>();
  c.lr_init = j.at("lr_init");
  c.warmup_iters = j.at("warmup_iters");
  c.total_steps = j.at("total_steps");
  c.batch_size = j.at("batch_size");
  c.points_per_step = j.at("points_per_step");
  c.beta1 = j.at("beta1");
  c.beta2 = j.at("beta2");
  c.weight_decay = j.at("weight_decay");
  c.clip_norm = j.at("clip_norm");
  c.seed = j.at("seed");
  c.ablation = j.at("ablation");
  return c;
}

constexpr char kCkptMagic[8] = {'X', 'L', 'R', 'M', 'C', 'K', 'P', 'T'};

}  // namespace

void Trainer::save_checkpoint(const std::string& path) {
  const ParamList<float> params = model_.parameters();

  json tensors = json::array();
  uint64_t offset = 0;
  auto add = [&](const std::string& name, const Mat<float>& m) {
    tensors.push_back({{"name", name},
                       {"rows", m.rows()},
                       {"cols", m.cols()},
                       {"offset", offset}});
    offset += uint64_t(m.size()) * sizeof(float);
  };
  for (const Param<float>* p : params) add(p->name, p->value);
  for (size_t i = 0; i < params.size(); ++i) add("adam.m/" + params[i]->name, adam_m_[i]);
  for (size_t i = 0; i < params.size(); ++i) add("adam.v/" + params[i]->name, adam_v_[i]);

  std::ostringstream rng_state;
  rng_state << rng_;

  json header;
  header["version"] = 1;
  header["step"] = step_;
  header["rng"] = rng_state.str();
  header["encoder"] = encoder_to_json(ecfg_);
  header["decoder"] = decoder_to_json(dcfg_);
  header["train"] = train_to_json(tcfg_);
  header["tensors"] = tensors;
  const std::string hs = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
  os.write(kCkptMagic, 8);
  const uint64_t hlen = hs.size();
  os.write(reinterpret_cast<const char*>(&hlen), 8);
  os.write(hs.data(), std::streamsize(hs.size()));
  auto dump = [&](const Mat<float>& m) {
    os.write(reinterpret_cast<const char*>(m.data()), std::streamsize(m.size() * sizeof(float)));
  };
  for (const Param<float>* p : params) dump(p->value);
  for (const auto& m : adam_m_) dump(m);
  for (const auto& v : adam_v_) dump(v);
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

std::unique_ptr<Trainer> Trainer::load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  uint64_t hlen = 0;
  is.read(reinterpret_cast<char*>(&hlen), 8);
  std::string hs(hlen, '\0');
  is.read(hs.data(), std::streamsize(hlen));
  if (!is) throw std::runtime_error("truncated checkpoint header: " + path);
  const json header = json::parse(hs);

  auto trainer = std::make_unique<Trainer>(encoder_from_json(header.at("encoder")),
                                           decoder_from_json(header.at("decoder")),
                                           train_from_json(header.at("train")));
  trainer->step_ = header.at("step").get<long>();
  std::istringstream rng_state(header.at("rng").get<std::string>());
  rng_state >> trainer->rng_;

  const std::streampos payload_start = is.tellg();
  is.seekg(0, std::ios::end);
  const uint64_t payload_size = uint64_t(is.tellg() - payload_start);

  const ParamList<float> params = trainer->model_.parameters();
  std::map<std::string, Mat<float>*> by_name;
  for (size_t i = 0; i < params.size(); ++i) {
    by_name[params[i]->name] = &params[i]->value;
    by_name["adam.m/" + params[i]->name] = &trainer->adam_m_[i];
    by_name["adam.v/" + params[i]->name] = &trainer->adam_v_[i];
  }

  uint64_t expected_offset = 0;
  for (const auto& jt : header.at("tensors")) {
    const std::string name = jt.at("name").get<std::string>();
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint: unknown tensor '" + name + "'");
    Mat<float>* dst = it->second;
    const long rows = jt.at("rows").get<long>(), cols = jt.at("cols").get<long>();
    if (rows != dst->rows() || cols != dst->cols())
      throw std::runtime_error("checkpoint: shape mismatch for tensor '" + name + "'");
    const uint64_t offset = jt.at("offset").get<uint64_t>();
    const uint64_t bytes = uint64_t(dst->size()) * sizeof(float);
    if (offset != expected_offset)
      throw std::runtime_error("checkpoint: overlapping or out-of-order offset for tensor '" +
                               name + "'");
    if (offset + bytes > payload_size)
      throw std::runtime_error("checkpoint: out-of-bounds payload for tensor '" + name + "'");
    expected_offset = offset + bytes;
    is.seekg(payload_start + std::streampos(offset));
    is.read(reinterpret_cast<char*>(dst->data()), std::streamsize(bytes));
    if (!is) throw std::runtime_error("checkpoint: truncated payload for tensor '" + name + "'");
  }
  return trainer;
}

}  // namespace xlrm
