#pragma once

#include <memory>
#include <optional>

#include "xlrm/xformer.hpp"
#include "xlrm/xtriplane.hpp"

namespace xlrm {

// Break-down ablation stages: Base mean-pools patch tokens into a plain MLP
// predicting a low-res volume; Triplane adds the cross-attention triplane
// decoder and implicit field on top of raw tokens; Full adds the
// self-attention encoder between them.
enum class Ablation { Base, Triplane, Full };

inline const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::Base: return "base";
    case Ablation::Triplane: return "+triplane";
    default: return "+xformer";
  }
}

inline Ablation ablation_from_name(const std::string& s) {
  if (s == "base") return Ablation::Base;
  if (s == "+triplane" || s == "triplane") return Ablation::Triplane;
  if (s == "+xformer" || s == "full" || s == "xformer") return Ablation::Full;
  throw std::invalid_argument("unknown ablation: " + s);
}

template <typename T>
struct XlrmModel {
  EncoderConfig ecfg;
  DecoderConfig dcfg;
  Ablation ablation;

  Tokenizer<T> tokenizer;
  std::optional<Encoder<T>> encoder;
  std::optional<TriplaneDecoder<T>> decoder;
  std::optional<InfMlp<T>> inf;

  // Base ablation head: pooled tokens -> MLP -> sigmoid low-res volume.
  static constexpr int kBaseRes = 16;
  std::optional<Linear<T>> base_fc1, base_fc2;

  // forward caches
  Mat<T> tokens_cache;        // tokenizer output
  Mat<T> features_cache;      // encoder output (Full) or tokens (Triplane)
  Mat<T> z_cache;             // decoder tokens
  Triplane<T> triplane_cache;
  FieldQueryCache<T> query_cache;
  // base caches
  Mat<T> base_pre_act, base_sig;
  std::vector<std::array<std::pair<size_t, T>, 8>> base_taps;

  XlrmModel(const EncoderConfig& ec, const DecoderConfig& dc, Ablation ab)
      : ecfg(ec), dcfg(dc), ablation(ab), tokenizer(ec) {
    if (ablation == Ablation::Full) encoder.emplace(ec);
    if (ablation != Ablation::Base) {
      decoder.emplace(dc, ec.d_e);
      inf.emplace(dc);
    } else {
      base_fc1.emplace("base.fc1", ec.d_e, 256);
      base_fc2.emplace("base.fc2", 256, kBaseRes * kBaseRes * kBaseRes);
    }
  }

  void init(uint64_t seed) {
    std::mt19937_64 rng(seed);
    tokenizer.init(rng);
    if (encoder) encoder->init(rng);
    if (decoder) decoder->init(rng);
    if (inf) inf->init(rng);
    if (base_fc1) {
      base_fc1->init(rng);
      base_fc2->init(rng);
    }
  }

  ParamList<T> parameters() {
    ParamList<T> out;
    tokenizer.collect(out);
    if (encoder) encoder->collect(out);
    if (decoder) decoder->collect(out);
    if (inf) inf->collect(out);
    if (base_fc1) {
      base_fc1->collect(out);
      base_fc2->collect(out);
    }
    return out;
  }

  void zero_grad() {
    for (Param<T>* p : parameters()) p->grad.setZero();
  }

  // Encoder features F for the current ablation.
  const Mat<T>& encode(const ProjectionSet& proj) {
    tokens_cache = tokenizer.forward(proj);
    features_cache = encoder ? encoder->forward(tokens_cache) : tokens_cache;
    return features_cache;
  }

  // Full pipeline to the triplane (Triplane/Full ablations).
  const Triplane<T>& forward_triplane(const ProjectionSet& proj) {
    encode(proj);
    z_cache = decoder->decode(features_cache);
    triplane_cache = decoder->to_triplane(z_cache);
    return triplane_cache;
  }

  // Radiodensity at each point; caches everything needed for backward.
  Mat<T> forward(const ProjectionSet& proj, const std::vector<Eigen::Vector3d>& points) {
    if (ablation == Ablation::Base) return forward_base(proj, points);
    forward_triplane(proj);
    const Mat<T> feat = gather_point_features(triplane_cache, points, &query_cache);
    return inf->forward(feat);
  }

  void backward(const Mat<T>& drho) {
    if (ablation == Ablation::Base) {
      backward_base(drho);
      return;
    }
    const Mat<T> dfeat = inf->backward(drho);
    std::array<Mat<T>, 3> dplanes;
    for (int p = 0; p < 3; ++p)
      dplanes[p] = Mat<T>::Zero(triplane_cache.planes[p].rows(), triplane_cache.planes[p].cols());
    scatter_point_gradients(query_cache, dfeat, dplanes, dcfg.d_t);
    const Mat<T> dz = decoder->to_triplane_backward(dplanes);
    Mat<T> dfeatures = decoder->decode_backward(dz);
    if (encoder) dfeatures = encoder->backward(dfeatures);
    tokenizer.backward(dfeatures);
  }

  VolumeGrid reconstruct(const ProjectionSet& proj, int resolution) {
    if (ablation == Ablation::Base) {
      forward_base_volume(proj);
      VolumeGrid vol(resolution);
      const double half = 0.5 * (resolution - 1);
      for (int z = 0; z < resolution; ++z)
        for (int y = 0; y < resolution; ++y)
          for (int x = 0; x < resolution; ++x)
            vol.at(x, y, z) =
                base_sample(x / half - 1.0, y / half - 1.0, z / half - 1.0, nullptr);
      return vol;
    }
    forward_triplane(proj);
    return reconstruct_volume(triplane_cache, resolution, *inf);
  }

 private:
  void forward_base_volume(const ProjectionSet& proj) {
    tokens_cache = tokenizer.forward(proj);
    Mat<T> pooled = tokens_cache.colwise().mean();
    base_pre_act = base_fc1->forward(pooled);
    const Mat<T> logits = base_fc2->forward(gelu(base_pre_act));
    base_sig = logits.unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
  }

  float base_sample(double x, double y, double z, std::array<std::pair<size_t, T>, 8>* tap) const {
    const int r = kBaseRes;
    const double half = 0.5 * (r - 1);
    auto to_grid = [&](double c) { return std::clamp((c + 1.0) * half, 0.0, double(r - 1)); };
    const double u = to_grid(x), v = to_grid(y), w = to_grid(z);
    const int x0 = std::min(int(u), r - 2), y0 = std::min(int(v), r - 2), z0 = std::min(int(w), r - 2);
    const double a = u - x0, b = v - y0, c = w - z0;
    double out = 0.0;
    int k = 0;
    for (int dz = 0; dz < 2; ++dz)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx, ++k) {
          const size_t idx = static_cast<size_t>(x0 + dx) +
                             static_cast<size_t>(r) * ((y0 + dy) + static_cast<size_t>(r) * (z0 + dz));
          const double wgt = (dx ? a : 1 - a) * (dy ? b : 1 - b) * (dz ? c : 1 - c);
          out += wgt * double(base_sig(0, idx));
          if (tap) (*tap)[k] = {idx, static_cast<T>(wgt)};
        }
    return static_cast<float>(out);
  }

  Mat<T> forward_base(const ProjectionSet& proj, const std::vector<Eigen::Vector3d>& points) {
    forward_base_volume(proj);
    base_taps.resize(points.size());
    Mat<T> rho(points.size(), 1);
    for (size_t i = 0; i < points.size(); ++i)
      rho(i, 0) = static_cast<T>(
          base_sample(points[i][0], points[i][1], points[i][2], &base_taps[i]));
    return rho;
  }

  void backward_base(const Mat<T>& drho) {
    Mat<T> dsig = Mat<T>::Zero(1, kBaseRes * kBaseRes * kBaseRes);
    for (size_t i = 0; i < base_taps.size(); ++i)
      for (const auto& [idx, wgt] : base_taps[i]) dsig(0, idx) += wgt * drho(i, 0);
    const Mat<T> dlogits =
        dsig.cwiseProduct(base_sig.cwiseProduct(Mat<T>::Ones(1, base_sig.cols()) - base_sig));
    const Mat<T> dh = base_fc1->backward(gelu_backward(base_fc2->backward(dlogits), base_pre_act));
    // pooled mean spreads evenly over tokens
    Mat<T> dtokens(tokens_cache.rows(), tokens_cache.cols());
    dtokens.rowwise() = dh.row(0) / T(tokens_cache.rows());
    tokenizer.backward(dtokens);
  }
};

}  // namespace xlrm
