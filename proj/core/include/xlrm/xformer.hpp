#pragma once

#include "xlrm/nn.hpp"
#include "xlrm/projector.hpp"

namespace xlrm {

struct EncoderConfig {
  int patch = 8;
  int d_e = 64;
  int n_layers = 4;
  int heads = 4;
  static constexpr int channels = 7;  // image + 6 RPPC channels

  int tokens_per_view(int rows, int cols) const {
    return (rows / patch) * (cols / patch);
  }

  static EncoderConfig desk_scale() { return {8, 64, 4, 4}; }
  // 256x256 inputs, ViT-style patch 16; d_E = 384, N_e = 12.
  static EncoderConfig paper_scale() { return {16, 384, 12, 12}; }
};

/// Builds the (V * patches) x (P*P*7) input matrix from a projection set:
/// per patch, pixels row-major, channels [I, m0, m1, m2, d0, d1, d2].
template <typename T>
Mat<T> patchify(const ProjectionSet& proj, int patch) {
  const int rows = proj.geom.det_rows, cols = proj.geom.det_cols;
  if (rows % patch != 0 || cols % patch != 0)
    throw std::invalid_argument("tokenize: detector shape not divisible by patch size");
  const int pr = rows / patch, pc = cols / patch;
  const int n_views = proj.geom.n_views();
  constexpr int ch = EncoderConfig::channels;

  Mat<T> x(static_cast<Eigen::Index>(n_views) * pr * pc, patch * patch * ch);
  for (int v = 0; v < n_views; ++v) {
    const RppcMap& map = proj.rppc[v];
    for (int gr = 0; gr < pr; ++gr)
      for (int gc = 0; gc < pc; ++gc) {
        const Eigen::Index row = (static_cast<Eigen::Index>(v) * pr + gr) * pc + gc;
        int col = 0;
        for (int i = 0; i < patch; ++i)
          for (int j = 0; j < patch; ++j) {
            const int r = gr * patch + i, c = gc * patch + j;
            x(row, col++) = static_cast<T>(proj.pixel(v, r, c));
            const Vec6& rp = map.at(r, c);
            for (int d = 0; d < 6; ++d) x(row, col++) = static_cast<T>(rp[d]);
          }
      }
  }
  return x;
}

/// Shared linear patch projection; token count is V * (H/P) * (W/P).
template <typename T>
struct Tokenizer {
  EncoderConfig cfg;
  Linear<T> proj;

  explicit Tokenizer(const EncoderConfig& c)
      : cfg(c), proj("tokenizer.proj", c.patch * c.patch * EncoderConfig::channels, c.d_e) {}

  void init(std::mt19937_64& rng) { proj.init(rng); }
  void collect(ParamList<T>& out) { proj.collect(out); }

  Mat<T> forward(const ProjectionSet& p) { return proj.forward(patchify<T>(p, cfg.patch)); }
  void backward(const Mat<T>& dy) { proj.backward(dy); }
};

/// N_e self-attention blocks plus a final layer norm; token count passes
/// through unchanged, so any number of views works with one parameter set.
template <typename T>
struct Encoder {
  EncoderConfig cfg;
  std::vector<SelfAttentionBlock<T>> blocks;
  LayerNorm<T> final_ln;

  explicit Encoder(const EncoderConfig& c) : cfg(c), final_ln("encoder.final_ln", c.d_e) {
    blocks.reserve(c.n_layers);
    for (int i = 0; i < c.n_layers; ++i)
      blocks.emplace_back("encoder.block" + std::to_string(i), c.d_e, c.heads);
  }

  void init(std::mt19937_64& rng) {
    for (auto& b : blocks) b.init(rng);
  }

  void collect(ParamList<T>& out) {
    for (auto& b : blocks) b.collect(out);
    final_ln.collect(out);
  }

  Mat<T> forward(const Mat<T>& tokens) {
    Mat<T> h = tokens;
    for (auto& b : blocks) h = b.forward(h);
    return final_ln.forward(h);
  }

  Mat<T> backward(const Mat<T>& dy) {
    Mat<T> d = final_ln.backward(dy);
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) d = it->backward(d);
    return d;
  }
};

}  // namespace xlrm
