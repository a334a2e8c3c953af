#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace xlrm {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct Param {
  std::string name;
  Mat<T> value;
  Mat<T> grad;

  Param(std::string n, int rows, int cols)
      : name(std::move(n)), value(Mat<T>::Zero(rows, cols)), grad(Mat<T>::Zero(rows, cols)) {}
};

template <typename T>
using ParamList = std::vector<Param<T>*>;

// Truncated normal, std 0.02, resampled beyond two sigma.
template <typename T>
void init_trunc_normal(Mat<T>& m, std::mt19937_64& rng, double std_dev = 0.02) {
  std::normal_distribution<double> dist(0.0, std_dev);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double v = dist(rng);
    while (std::abs(v) > 2.0 * std_dev) v = dist(rng);
    m.data()[i] = static_cast<T>(v);
  }
}

template <typename T>
Mat<T> gelu(const Mat<T>& x) {
  Mat<T> y = x;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double v = double(x.data()[i]);
    y.data()[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))));
  }
  return y;
}

template <typename T>
Mat<T> gelu_backward(const Mat<T>& dy, const Mat<T>& x) {
  Mat<T> dx = dy;
  constexpr double inv_sqrt2pi = 0.3989422804014327;
  for (Eigen::Index i = 0; i < dx.size(); ++i) {
    const double v = double(x.data()[i]);
    const double g = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0))) +
                     v * inv_sqrt2pi * std::exp(-0.5 * v * v);
    dx.data()[i] = static_cast<T>(double(dy.data()[i]) * g);
  }
  return dx;
}

// Row-wise softmax with max subtraction.
template <typename T>
Mat<T> softmax_rows(const Mat<T>& s) {
  Mat<T> a = s;
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    auto row = a.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp();
    row /= row.sum();
  }
  return a;
}

template <typename T>
Mat<T> softmax_rows_backward(const Mat<T>& da, const Mat<T>& a) {
  Mat<T> ds = da.cwiseProduct(a);
  for (Eigen::Index r = 0; r < ds.rows(); ++r) {
    const T dot = ds.row(r).sum();
    ds.row(r) -= dot * a.row(r);
  }
  return ds;
}

template <typename T>
struct LayerNorm {
  static constexpr double kEps = 1e-5;
  Param<T> gain, bias;
  Mat<T> xhat;
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std;

  LayerNorm(const std::string& prefix, int d)
      : gain(prefix + ".gain", 1, d), bias(prefix + ".bias", 1, d) {
    gain.value.setOnes();
  }

  void collect(ParamList<T>& out) {
    out.push_back(&gain);
    out.push_back(&bias);
  }

  Mat<T> forward(const Mat<T>& x) {
    const Eigen::Index n = x.rows(), d = x.cols();
    xhat.resize(n, d);
    inv_std.resize(n);
    Mat<T> y(n, d);
    for (Eigen::Index r = 0; r < n; ++r) {
      const T mu = x.row(r).mean();
      const T var = (x.row(r).array() - mu).square().mean();
      const T inv = T(1) / std::sqrt(var + T(kEps));
      inv_std[r] = inv;
      xhat.row(r) = (x.row(r).array() - mu) * inv;
      y.row(r) = xhat.row(r).cwiseProduct(gain.value.row(0)) + bias.value.row(0);
    }
    return y;
  }

  Mat<T> backward(const Mat<T>& dy) {
    const Eigen::Index n = dy.rows(), d = dy.cols();
    Mat<T> dx(n, d);
    for (Eigen::Index r = 0; r < n; ++r) {
      gain.grad.row(0) += dy.row(r).cwiseProduct(xhat.row(r));
      bias.grad.row(0) += dy.row(r);
      const auto dxhat = dy.row(r).cwiseProduct(gain.value.row(0));
      const T m1 = dxhat.mean();
      const T m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
      dx.row(r) = inv_std[r] * (dxhat.array() - m1 - xhat.row(r).array() * m2);
    }
    return dx;
  }
};

template <typename T>
struct Linear {
  Param<T> weight;  // in x out
  Param<T> bias;    // 1 x out
  bool use_bias;
  Mat<T> x_cache;

  Linear(const std::string& prefix, int in, int out, bool with_bias = true)
      : weight(prefix + ".weight", in, out), bias(prefix + ".bias", 1, out), use_bias(with_bias) {}

  void init(std::mt19937_64& rng) { init_trunc_normal(weight.value, rng); }

  void collect(ParamList<T>& out) {
    out.push_back(&weight);
    if (use_bias) out.push_back(&bias);
  }

  Mat<T> forward(const Mat<T>& x) {
    x_cache = x;
    Mat<T> y = x * weight.value;
    if (use_bias) y.rowwise() += bias.value.row(0);
    return y;
  }

  Mat<T> backward(const Mat<T>& dy) {
    weight.grad.noalias() += x_cache.transpose() * dy;
    if (use_bias) bias.grad.row(0) += dy.colwise().sum();
    return dy * weight.value.transpose();
  }
};

/// Two-layer MLP with GELU, no internal residual (blocks add their own).
template <typename T>
struct Mlp {
  Linear<T> fc1, fc2;
  Mat<T> pre_act;

  Mlp(const std::string& prefix, int d, int hidden)
      : fc1(prefix + ".fc1", d, hidden), fc2(prefix + ".fc2", hidden, d) {}

  void init(std::mt19937_64& rng) {
    fc1.init(rng);
    fc2.init(rng);
  }

  void collect(ParamList<T>& out) {
    fc1.collect(out);
    fc2.collect(out);
  }

  Mat<T> forward(const Mat<T>& x) {
    pre_act = fc1.forward(x);
    return fc2.forward(gelu(pre_act));
  }

  Mat<T> backward(const Mat<T>& dy) {
    const Mat<T> dh = fc2.backward(dy);
    return fc1.backward(gelu_backward(dh, pre_act));
  }
};

/// Multi-head attention over head slices: the query and key/value sources
/// are split column-wise into `heads` slices, each slice is projected by its
/// own dk x dk matrices, and the head output carries a per-head residual of
/// the query slice before the concatenated output projection.
template <typename T>
struct HeadAttention {
  int heads, dk;
  std::vector<Param<T>> wq, wk, wv;  // dk x dk each
  Param<T> w_out;                    // d x d

  struct HeadCache {
    Mat<T> q, k, v, attn;
  };
  std::vector<HeadCache> cache;
  Mat<T> q_src_cache, kv_src_cache, concat_cache;

  HeadAttention(const std::string& prefix, int d, int n_heads)
      : heads(n_heads), dk(d / n_heads), w_out(prefix + ".w_out", d, d) {
    if (d % n_heads != 0)
      throw std::invalid_argument("attention: width not divisible by head count");
    wq.reserve(heads);
    wk.reserve(heads);
    wv.reserve(heads);
    for (int h = 0; h < heads; ++h) {
      wq.emplace_back(prefix + ".wq" + std::to_string(h), dk, dk);
      wk.emplace_back(prefix + ".wk" + std::to_string(h), dk, dk);
      wv.emplace_back(prefix + ".wv" + std::to_string(h), dk, dk);
    }
  }

  void init(std::mt19937_64& rng) {
    for (int h = 0; h < heads; ++h) {
      init_trunc_normal(wq[h].value, rng);
      init_trunc_normal(wk[h].value, rng);
      init_trunc_normal(wv[h].value, rng);
    }
    init_trunc_normal(w_out.value, rng);
  }

  void collect(ParamList<T>& out) {
    for (int h = 0; h < heads; ++h) {
      out.push_back(&wq[h]);
      out.push_back(&wk[h]);
      out.push_back(&wv[h]);
    }
    out.push_back(&w_out);
  }

  // q_src: nq x d, kv_src: nk x d (equal widths).
  Mat<T> forward(const Mat<T>& q_src, const Mat<T>& kv_src) {
    if (q_src.cols() != kv_src.cols() || q_src.cols() != heads * dk)
      throw std::invalid_argument("attention: source width mismatch");
    q_src_cache = q_src;
    kv_src_cache = kv_src;
    cache.assign(heads, {});
    const T scale = T(1) / std::sqrt(T(dk));
    Mat<T> concat(q_src.rows(), heads * dk);
    for (int h = 0; h < heads; ++h) {
      auto& hc = cache[h];
      const auto qs = q_src.middleCols(h * dk, dk);
      const auto ks = kv_src.middleCols(h * dk, dk);
      hc.q.noalias() = qs * wq[h].value;
      hc.k.noalias() = ks * wk[h].value;
      hc.v.noalias() = ks * wv[h].value;
      Mat<T> scores = hc.q * hc.k.transpose() * scale;
      hc.attn = softmax_rows(scores);
      concat.middleCols(h * dk, dk).noalias() = hc.attn * hc.v;
      concat.middleCols(h * dk, dk) += qs;  // per-head residual
    }
    concat_cache = concat;
    return concat * w_out.value;
  }

  // Returns (d_q_src, d_kv_src).
  std::pair<Mat<T>, Mat<T>> backward(const Mat<T>& dy) {
    w_out.grad.noalias() += concat_cache.transpose() * dy;
    const Mat<T> dconcat = dy * w_out.value.transpose();

    Mat<T> dq_src = Mat<T>::Zero(q_src_cache.rows(), q_src_cache.cols());
    Mat<T> dkv_src = Mat<T>::Zero(kv_src_cache.rows(), kv_src_cache.cols());
    const T scale = T(1) / std::sqrt(T(dk));
    for (int h = 0; h < heads; ++h) {
      const auto& hc = cache[h];
      const auto dhead = dconcat.middleCols(h * dk, dk);
      const auto qs = q_src_cache.middleCols(h * dk, dk);
      const auto ks = kv_src_cache.middleCols(h * dk, dk);

      dq_src.middleCols(h * dk, dk) += dhead;  // residual path

      const Mat<T> dattn = dhead * hc.v.transpose();
      const Mat<T> dv = hc.attn.transpose() * dhead;
      const Mat<T> dscores = softmax_rows_backward(dattn, hc.attn) * scale;
      const Mat<T> dq = dscores * hc.k;
      const Mat<T> dkm = dscores.transpose() * hc.q;

      wq[h].grad.noalias() += qs.transpose() * dq;
      wk[h].grad.noalias() += ks.transpose() * dkm;
      wv[h].grad.noalias() += ks.transpose() * dv;
      dq_src.middleCols(h * dk, dk).noalias() += dq * wq[h].value.transpose();
      dkv_src.middleCols(h * dk, dk).noalias() += dkm * wk[h].value.transpose();
      dkv_src.middleCols(h * dk, dk).noalias() += dv * wv[h].value.transpose();
    }
    return {std::move(dq_src), std::move(dkv_src)};
  }
};

/// Pre-norm self-attention block: per-head residual attention, output
/// projection, then MLP with residual. The only skip around attention is the
/// per-head one.
template <typename T>
struct SelfAttentionBlock {
  LayerNorm<T> ln_attn, ln_mlp;
  HeadAttention<T> attn;
  Mlp<T> mlp;

  SelfAttentionBlock(const std::string& prefix, int d, int heads)
      : ln_attn(prefix + ".ln_attn", d),
        ln_mlp(prefix + ".ln_mlp", d),
        attn(prefix + ".attn", d, heads),
        mlp(prefix + ".mlp", d, 4 * d) {}

  void init(std::mt19937_64& rng) {
    attn.init(rng);
    mlp.init(rng);
  }

  void collect(ParamList<T>& out) {
    ln_attn.collect(out);
    ln_mlp.collect(out);
    attn.collect(out);
    mlp.collect(out);
  }

  Mat<T> forward(const Mat<T>& x) {
    const Mat<T> xn = ln_attn.forward(x);
    const Mat<T> mid = attn.forward(xn, xn);
    return mlp.forward(ln_mlp.forward(mid)) + mid;
  }

  Mat<T> backward(const Mat<T>& dy) {
    Mat<T> dmid = ln_mlp.backward(mlp.backward(dy)) + dy;
    auto [dq, dkv] = attn.backward(dmid);
    return ln_attn.backward(dq + dkv);
  }
};

/// Cross-attention block: queries from the (normalized) running tokens,
/// keys/values from the context; then a self-attention sub-layer and an MLP.
/// residual_form selects between the literal composition
///   out = MLP(SA(mid) + mid) + SA(mid)
/// and the standard
///   x = mid + SA(mid); out = x + MLP(x).
template <typename T>
struct CrossAttentionBlock {
  enum class ResidualForm { Paper, Standard };

  LayerNorm<T> ln_q, ln_self, ln_mlp;
  HeadAttention<T> cross, self_attn;
  Mlp<T> mlp;
  ResidualForm residual_form = ResidualForm::Paper;
  Mat<T> self_in_cache;

  CrossAttentionBlock(const std::string& prefix, int d, int heads)
      : ln_q(prefix + ".ln_q", d),
        ln_self(prefix + ".ln_self", d),
        ln_mlp(prefix + ".ln_mlp", d),
        cross(prefix + ".cross", d, heads),
        self_attn(prefix + ".self", d, heads),
        mlp(prefix + ".mlp", d, 4 * d) {}

  void init(std::mt19937_64& rng) {
    cross.init(rng);
    self_attn.init(rng);
    mlp.init(rng);
  }

  void collect(ParamList<T>& out) {
    ln_q.collect(out);
    ln_self.collect(out);
    ln_mlp.collect(out);
    cross.collect(out);
    self_attn.collect(out);
    mlp.collect(out);
  }

  // tokens: n_t x d, context: n_c x d. Returns n_t x d.
  Mat<T> forward(const Mat<T>& tokens, const Mat<T>& context) {
    const Mat<T> tn = ln_q.forward(tokens);
    const Mat<T> mid = cross.forward(tn, context);
    self_in_cache = ln_self.forward(mid);
    const Mat<T> sa = self_attn.forward(self_in_cache, self_in_cache);
    if (residual_form == ResidualForm::Paper)
      return mlp.forward(ln_mlp.forward(sa + mid)) + sa;
    const Mat<T> x = mid + sa;
    return mlp.forward(ln_mlp.forward(x)) + x;
  }

  // Returns (d_tokens, d_context).
  std::pair<Mat<T>, Mat<T>> backward(const Mat<T>& dy) {
    Mat<T> dmid, dsa;
    if (residual_form == ResidualForm::Paper) {
      const Mat<T> dsum = ln_mlp.backward(mlp.backward(dy));
      dsa = dsum + dy;
      dmid = dsum;
    } else {
      const Mat<T> dx = ln_mlp.backward(mlp.backward(dy)) + dy;
      dsa = dx;
      dmid = dx;
    }
    auto [dsq, dskv] = self_attn.backward(dsa);
    dmid += ln_self.backward(dsq + dskv);
    auto [dtn, dctx] = cross.backward(dmid);
    return {ln_q.backward(dtn), std::move(dctx)};
  }
};

/// Transposed convolution, kernel 2, stride 2: each input cell expands into
/// a 2x2 output block. Input grid g x g x cin stored as (g*g) x cin with row
/// index r*g+c; output (2g*2g) x cout.
template <typename T>
struct Deconv2x {
  int cin, cout;
  Param<T> weight;  // (4*cin) x cout, sub-block (a*2+b) for offset (a,b)
  Param<T> bias;    // 1 x cout
  Mat<T> x_cache;
  int grid_cache = 0;

  Deconv2x(const std::string& prefix, int in_ch, int out_ch)
      : cin(in_ch), cout(out_ch),
        weight(prefix + ".weight", 4 * in_ch, out_ch),
        bias(prefix + ".bias", 1, out_ch) {}

  void init(std::mt19937_64& rng) { init_trunc_normal(weight.value, rng); }

  void collect(ParamList<T>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  Mat<T> forward(const Mat<T>& x, int grid) {
    if (x.rows() != Eigen::Index(grid) * grid || x.cols() != cin)
      throw std::invalid_argument("deconv: input shape mismatch");
    x_cache = x;
    grid_cache = grid;
    const int og = 2 * grid;
    Mat<T> y(og * og, cout);
    y.rowwise() = bias.value.row(0);
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        const Mat<T> sub = x * weight.value.middleRows((a * 2 + b) * cin, cin);
        for (int r = 0; r < grid; ++r)
          for (int c = 0; c < grid; ++c)
            y.row((2 * r + a) * og + (2 * c + b)) += sub.row(r * grid + c);
      }
    return y;
  }

  Mat<T> backward(const Mat<T>& dy) {
    const int grid = grid_cache, og = 2 * grid;
    Mat<T> dx = Mat<T>::Zero(grid * grid, cin);
    bias.grad.row(0) += dy.colwise().sum();
    Mat<T> dsub(grid * grid, cout);
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        for (int r = 0; r < grid; ++r)
          for (int c = 0; c < grid; ++c)
            dsub.row(r * grid + c) = dy.row((2 * r + a) * og + (2 * c + b));
        weight.grad.middleRows((a * 2 + b) * cin, cin).noalias() += x_cache.transpose() * dsub;
        dx.noalias() += dsub * weight.value.middleRows((a * 2 + b) * cin, cin).transpose();
      }
    return dx;
  }
};

}  // namespace xlrm
