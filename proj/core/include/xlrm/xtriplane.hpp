#pragma once

#include <array>

#include "xlrm/nn.hpp"
#include "xlrm/phantom.hpp"

namespace xlrm {

struct DecoderConfig {
  int d_d = 64;
  int n_layers = 2;
  int heads = 4;
  int token_grid = 16;  // per-plane token side; plane resolution is 2x
  int d_t = 16;
  int inf_layers = 4;
  int inf_hidden = 64;
  bool paper_residual = true;

  int plane_res() const { return 2 * token_grid; }
  int n_tokens() const { return 3 * token_grid * token_grid; }

  static DecoderConfig desk_scale() { return {}; }
  static DecoderConfig paper_scale() {
    DecoderConfig c;
    c.d_d = 512;
    c.n_layers = 12;
    c.heads = 8;
    c.token_grid = 32;
    c.d_t = 32;
    return c;
  }
};

/// Three orthogonal feature planes (xy, yz, xz), each (res*res) x d_t with
/// row index v*res+u. Plane axes: xy -> (u=x, v=y), yz -> (u=y, v=z),
/// xz -> (u=x, v=z).
template <typename T>
struct Triplane {
  int res = 0, d_t = 0;
  std::array<Mat<T>, 3> planes;
};

/// Bilinear tap into one plane (align-corners, clamped).
template <typename T>
struct PlaneTap {
  int idx[4];
  T w[4];
};

template <typename T>
PlaneTap<T> plane_tap(int res, double u, double v) {
  const double half = 0.5 * (res - 1);
  const double gu = std::clamp((u + 1.0) * half, 0.0, double(res - 1));
  const double gv = std::clamp((v + 1.0) * half, 0.0, double(res - 1));
  const int u0 = std::min(int(gu), res - 2), v0 = std::min(int(gv), res - 2);
  const double a = gu - u0, b = gv - v0;
  PlaneTap<T> t;
  t.idx[0] = v0 * res + u0;
  t.idx[1] = v0 * res + u0 + 1;
  t.idx[2] = (v0 + 1) * res + u0;
  t.idx[3] = (v0 + 1) * res + u0 + 1;
  t.w[0] = static_cast<T>((1 - a) * (1 - b));
  t.w[1] = static_cast<T>(a * (1 - b));
  t.w[2] = static_cast<T>((1 - a) * b);
  t.w[3] = static_cast<T>(a * b);
  return t;
}

/// Bilinear feature lookup at a normalized 2D point in [-1,1]^2.
template <typename T>
Eigen::Matrix<T, 1, Eigen::Dynamic> sample_plane(const Mat<T>& plane, int res, double u, double v) {
  const PlaneTap<T> t = plane_tap<T>(res, u, v);
  return t.w[0] * plane.row(t.idx[0]) + t.w[1] * plane.row(t.idx[1]) +
         t.w[2] * plane.row(t.idx[2]) + t.w[3] * plane.row(t.idx[3]);
}

/// Per-point taps into the three planes, cached for the backward scatter.
template <typename T>
struct FieldQueryCache {
  std::vector<std::array<PlaneTap<T>, 3>> taps;
};

// M x (3*d_t) feature matrix: columns [T_xy | T_yz | T_xz].
template <typename T>
Mat<T> gather_point_features(const Triplane<T>& tri, const std::vector<Eigen::Vector3d>& pts,
                             FieldQueryCache<T>* cache = nullptr) {
  const int dt = tri.d_t, res = tri.res;
  Mat<T> feat(pts.size(), 3 * dt);
  if (cache) cache->taps.resize(pts.size());
  for (size_t i = 0; i < pts.size(); ++i) {
    const double x = pts[i][0], y = pts[i][1], z = pts[i][2];
    const std::array<PlaneTap<T>, 3> taps = {plane_tap<T>(res, x, y), plane_tap<T>(res, y, z),
                                             plane_tap<T>(res, x, z)};
    for (int p = 0; p < 3; ++p) {
      const auto& t = taps[p];
      feat.row(i).middleCols(p * dt, dt) =
          t.w[0] * tri.planes[p].row(t.idx[0]) + t.w[1] * tri.planes[p].row(t.idx[1]) +
          t.w[2] * tri.planes[p].row(t.idx[2]) + t.w[3] * tri.planes[p].row(t.idx[3]);
    }
    if (cache) cache->taps[i] = taps;
  }
  return feat;
}

template <typename T>
void scatter_point_gradients(const FieldQueryCache<T>& cache, const Mat<T>& dfeat,
                             std::array<Mat<T>, 3>& dplanes, int d_t) {
  for (size_t i = 0; i < cache.taps.size(); ++i)
    for (int p = 0; p < 3; ++p) {
      const auto& t = cache.taps[i][p];
      const auto g = dfeat.row(i).middleCols(p * d_t, d_t);
      for (int k = 0; k < 4; ++k) dplanes[p].row(t.idx[k]) += t.w[k] * g;
    }
}

/// Radiodensity head: inf_layers linear layers with GELU between and a final
/// sigmoid, mapping 3*d_t point features to a scalar in (0,1).
template <typename T>
struct InfMlp {
  std::vector<Linear<T>> layers;
  std::vector<Mat<T>> pre_acts;
  Mat<T> sig_cache;

  InfMlp(const DecoderConfig& cfg) {
    const int in = 3 * cfg.d_t;
    layers.reserve(cfg.inf_layers);
    for (int i = 0; i < cfg.inf_layers; ++i) {
      const int li = i == 0 ? in : cfg.inf_hidden;
      const int lo = i == cfg.inf_layers - 1 ? 1 : cfg.inf_hidden;
      layers.emplace_back("inf.fc" + std::to_string(i), li, lo);
    }
  }

  void init(std::mt19937_64& rng) {
    for (auto& l : layers) l.init(rng);
  }
  void collect(ParamList<T>& out) {
    for (auto& l : layers) l.collect(out);
  }

  Mat<T> forward(const Mat<T>& feat) {
    pre_acts.clear();
    Mat<T> h = feat;
    for (size_t i = 0; i < layers.size(); ++i) {
      h = layers[i].forward(h);
      if (i + 1 < layers.size()) {
        pre_acts.push_back(h);
        h = gelu(h);
      }
    }
    sig_cache = h.unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
    return sig_cache;
  }

  Mat<T> backward(const Mat<T>& dy) {
    Mat<T> d = dy.cwiseProduct(sig_cache.cwiseProduct(Mat<T>::Ones(sig_cache.rows(), 1) - sig_cache));
    for (size_t i = layers.size(); i-- > 0;) {
      d = layers[i].backward(d);
      if (i > 0) d = gelu_backward(d, pre_acts[i - 1]);
    }
    return d;
  }
};

/// Cross-attention decoder: learnable triplane embedding queries attend to
/// the encoder features; Z is split into three token grids and upsampled by
/// one shared deconvolution into the triplane.
template <typename T>
struct TriplaneDecoder {
  DecoderConfig cfg;
  Linear<T> f_proj;   // d_E -> d_D context projection
  Param<T> embedding; // (3*tg^2) x d_D
  std::vector<CrossAttentionBlock<T>> blocks;
  LayerNorm<T> final_ln;
  Deconv2x<T> deconv;
  std::array<Mat<T>, 3> z_chunk_cache;

  TriplaneDecoder(const DecoderConfig& c, int d_e)
      : cfg(c),
        f_proj("decoder.f_proj", d_e, c.d_d),
        embedding("decoder.embedding", c.n_tokens(), c.d_d),
        final_ln("decoder.final_ln", c.d_d),
        deconv("decoder.deconv", c.d_d, c.d_t) {
    blocks.reserve(c.n_layers);
    for (int i = 0; i < c.n_layers; ++i) {
      blocks.emplace_back("decoder.block" + std::to_string(i), c.d_d, c.heads);
      blocks.back().residual_form = c.paper_residual
                                        ? CrossAttentionBlock<T>::ResidualForm::Paper
                                        : CrossAttentionBlock<T>::ResidualForm::Standard;
    }
  }

  void init(std::mt19937_64& rng) {
    f_proj.init(rng);
    init_trunc_normal(embedding.value, rng);
    for (auto& b : blocks) b.init(rng);
    deconv.init(rng);
  }

  void collect(ParamList<T>& out) {
    f_proj.collect(out);
    out.push_back(&embedding);
    for (auto& b : blocks) b.collect(out);
    final_ln.collect(out);
    deconv.collect(out);
  }

  // F: n x d_E -> Z: (3*tg^2) x d_D
  Mat<T> decode(const Mat<T>& features) {
    const Mat<T> ctx = f_proj.forward(features);
    Mat<T> e = embedding.value;
    for (auto& b : blocks) e = b.forward(e, ctx);
    return final_ln.forward(e);
  }

  // Returns dF.
  Mat<T> decode_backward(const Mat<T>& dz) {
    Mat<T> de = final_ln.backward(dz);
    Mat<T> dctx;
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
      auto [dtok, dc] = it->backward(de);
      de = std::move(dtok);
      if (dctx.size() == 0)
        dctx = std::move(dc);
      else
        dctx += dc;
    }
    embedding.grad += de;
    if (dctx.size() == 0) dctx = Mat<T>::Zero(f_proj.x_cache.rows(), cfg.d_d);
    return f_proj.backward(dctx);
  }

  Triplane<T> to_triplane(const Mat<T>& z) {
    const int tg = cfg.token_grid;
    if (z.rows() != cfg.n_tokens())
      throw std::invalid_argument("to_triplane: token count mismatch");
    Triplane<T> tri;
    tri.res = cfg.plane_res();
    tri.d_t = cfg.d_t;
    for (int p = 0; p < 3; ++p) {
      z_chunk_cache[p] = z.middleRows(p * tg * tg, tg * tg);
      tri.planes[p] = deconv.forward(z_chunk_cache[p], tg);
    }
    return tri;
  }

  // Returns dZ given plane gradients.
  Mat<T> to_triplane_backward(const std::array<Mat<T>, 3>& dplanes) {
    const int tg = cfg.token_grid;
    Mat<T> dz(cfg.n_tokens(), cfg.d_d);
    for (int p = 0; p < 3; ++p) {
      deconv.x_cache = z_chunk_cache[p];
      deconv.grid_cache = tg;
      dz.middleRows(p * tg * tg, tg * tg) = deconv.backward(dplanes[p]);
    }
    return dz;
  }
};

/// Radiodensities at arbitrary points in [-1,1]^3 (clamped).
template <typename T>
std::vector<float> query_field(const Triplane<T>& tri, const std::vector<Eigen::Vector3d>& pts,
                               InfMlp<T>& inf) {
  const Mat<T> rho = inf.forward(gather_point_features(tri, pts));
  std::vector<float> out(pts.size());
  for (size_t i = 0; i < pts.size(); ++i) out[i] = static_cast<float>(rho(i, 0));
  return out;
}

/// Dense field evaluation at voxel centers 2k/(R-1)-1 (align-corners).
template <typename T>
VolumeGrid reconstruct_volume(const Triplane<T>& tri, int resolution, InfMlp<T>& inf) {
  if (resolution < 2) throw std::invalid_argument("reconstruct_volume: resolution must be >= 2");
  VolumeGrid vol(resolution);
  const double half = 0.5 * (resolution - 1);
  constexpr size_t kChunk = 8192;
  std::vector<Eigen::Vector3d> pts;
  pts.reserve(kChunk);
  size_t base = 0;
  auto flush = [&]() {
    const std::vector<float> rho = query_field(tri, pts, inf);
    for (size_t i = 0; i < rho.size(); ++i) vol.values[base + i] = rho[i];
    base += rho.size();
    pts.clear();
  };
  for (int z = 0; z < resolution; ++z)
    for (int y = 0; y < resolution; ++y)
      for (int x = 0; x < resolution; ++x) {
        pts.emplace_back(x / half - 1.0, y / half - 1.0, z / half - 1.0);
        if (pts.size() == kChunk) flush();
      }
  if (!pts.empty()) flush();
  return vol;
}

}  // namespace xlrm
