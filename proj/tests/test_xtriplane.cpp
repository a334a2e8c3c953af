#include <doctest.h>

#include "xlrm/model.hpp"

#include <random>

using namespace xlrm;

namespace {

using Md = Mat<double>;

Triplane<double> random_triplane(int res, int dt, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  Triplane<double> tri;
  tri.res = res;
  tri.d_t = dt;
  for (auto& p : tri.planes) {
    p.resize(res * res, dt);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = ud(rng);
  }
  return tri;
}

DecoderConfig toy_decoder() {
  DecoderConfig c;
  c.d_d = 8;
  c.n_layers = 1;
  c.heads = 2;
  c.token_grid = 2;
  c.d_t = 4;
  c.inf_layers = 2;
  c.inf_hidden = 8;
  return c;
}

}  // namespace

TEST_SUITE_BEGIN("xtriplane");

TEST_CASE("plane sampling closed forms") {
  const int res = 6, dt = 3;
  const Triplane<double> tri = random_triplane(res, dt, 1);
  const Md& plane = tri.planes[0];

  // grid nodes are exact
  for (int v = 0; v < res; ++v)
    for (int u = 0; u < res; ++u) {
      const double pu = 2.0 * u / (res - 1) - 1.0, pv = 2.0 * v / (res - 1) - 1.0;
      CHECK((sample_plane(plane, res, pu, pv) - plane.row(v * res + u)).cwiseAbs().maxCoeff() <
            1e-12);
    }

  // cell centers average the four corners
  const double pu = 2.0 * 1.5 / (res - 1) - 1.0, pv = 2.0 * 2.5 / (res - 1) - 1.0;
  const Md corners = 0.25 * (plane.row(2 * res + 1) + plane.row(2 * res + 2) +
                             plane.row(3 * res + 1) + plane.row(3 * res + 2));
  CHECK((sample_plane(plane, res, pu, pv) - corners).cwiseAbs().maxCoeff() < 1e-12);

  // constant planes interpolate to the constant, including out of range
  Md constant = Md::Constant(res * res, dt, 0.4);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> ud(-1.5, 1.5);
  for (int i = 0; i < 100; ++i) {
    const auto s = sample_plane(constant, res, ud(rng), ud(rng));
    for (int k = 0; k < dt; ++k) CHECK(s(k) == doctest::Approx(0.4).epsilon(1e-12));
  }
}

TEST_CASE("bilinear weights are the exact feature gradients") {
  const int res = 6;
  Triplane<double> tri = random_triplane(res, 2, 3);
  Md& plane = tri.planes[0];
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  const double h = 1e-5;
  for (int trial = 0; trial < 30; ++trial) {
    const double pu = ud(rng), pv = ud(rng);
    const PlaneTap<double> tap = plane_tap<double>(res, pu, pv);
    for (int k = 0; k < 4; ++k) {
      const double orig = plane(tap.idx[k], 1);
      plane(tap.idx[k], 1) = orig + h;
      const double up = sample_plane(plane, res, pu, pv)(1);
      plane(tap.idx[k], 1) = orig - h;
      const double dn = sample_plane(plane, res, pu, pv)(1);
      plane(tap.idx[k], 1) = orig;
      const double fd = (up - dn) / (2 * h);
      CHECK(std::abs(fd - tap.w[k]) / std::max(std::abs(tap.w[k]), 1e-3) < 1e-3);
    }
  }
}

TEST_CASE("axis roles: a z-line sees a constant xy-plane contribution") {
  const DecoderConfig cfg = toy_decoder();
  const Triplane<double> tri = random_triplane(cfg.plane_res(), cfg.d_t, 5);

  std::vector<Eigen::Vector3d> line;
  for (int i = 0; i < 9; ++i) line.emplace_back(0.3, -0.2, -1.0 + 0.25 * i);
  const Md feat = gather_point_features(tri, line);
  for (int i = 1; i < 9; ++i) {
    // first d_t columns come from T_xy(x, y): constant along the line
    CHECK((feat.row(i).leftCols(cfg.d_t) - feat.row(0).leftCols(cfg.d_t)).cwiseAbs().maxCoeff() <
          1e-12);
    // the yz and xz blocks move with z
    CHECK((feat.row(i).middleCols(cfg.d_t, 2 * cfg.d_t) -
           feat.row(0).middleCols(cfg.d_t, 2 * cfg.d_t))
              .cwiseAbs()
              .maxCoeff() > 1e-8);
  }
}

TEST_CASE("a 90-degree rotation about z maps to transformed planes") {
  // rotation p -> (-y, x, z); transformed planes:
  //   T2_xy(u,v) = T_xy(v,-u), T2_yz = T_xz, T2_xz(u,v) = T_yz(-u,v)
  const int res = 8, dt = 3;
  const Triplane<double> tri = random_triplane(res, dt, 6);
  Triplane<double> tri2;
  tri2.res = res;
  tri2.d_t = dt;
  for (auto& p : tri2.planes) p.resize(res * res, dt);
  auto flip = [&](int i) { return res - 1 - i; };
  for (int v = 0; v < res; ++v)
    for (int u = 0; u < res; ++u) {
      tri2.planes[0].row(v * res + u) = tri.planes[0].row(flip(u) * res + v);
      tri2.planes[1].row(v * res + u) = tri.planes[2].row(v * res + u);
      tri2.planes[2].row(v * res + u) = tri.planes[1].row(v * res + flip(u));
    }

  // grid-aligned sample points keep the index maps exact
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> pick(0, res - 1);
  auto coord = [&](int i) { return 2.0 * i / (res - 1) - 1.0; };
  for (int trial = 0; trial < 8; ++trial) {
    const Eigen::Vector3d p(coord(pick(rng)), coord(pick(rng)), coord(pick(rng)));
    const Eigen::Vector3d q(-p[1], p[0], p[2]);
    const Md f1 = gather_point_features(tri, {p});
    const Md f2 = gather_point_features(tri2, {q});
    // rotated feature blocks: xy stays first, yz and xz swap roles
    CHECK((f2.leftCols(dt) - f1.leftCols(dt)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((f2.middleCols(dt, dt) - f1.middleCols(2 * dt, dt)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((f2.rightCols(dt) - f1.middleCols(dt, dt)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("decoder output length is fixed by the embedding") {
  DecoderConfig cfg = toy_decoder();
  TriplaneDecoder<double> dec(cfg, 6);
  std::mt19937_64 rng(8);
  dec.init(rng);

  for (int n_ctx : {3, 5, 9}) {  // stands in for 6/8/10-view token counts
    const Md f = Md::Random(n_ctx, 6);
    const Md z = dec.decode(f);
    CHECK(z.rows() == cfg.n_tokens());
    CHECK(z.cols() == cfg.d_d);
  }
}

TEST_CASE("empty decoder stack returns the normalized embedding") {
  DecoderConfig cfg = toy_decoder();
  cfg.n_layers = 0;
  TriplaneDecoder<double> dec(cfg, 6);
  std::mt19937_64 rng(9);
  dec.init(rng);
  const Md z = dec.decode(Md::Random(4, 6));
  LayerNorm<double> ref("ref", cfg.d_d);
  CHECK((z - ref.forward(dec.embedding.value)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("triplane assembly shapes and plane order") {
  DecoderConfig cfg = toy_decoder();
  TriplaneDecoder<double> dec(cfg, 6);
  std::mt19937_64 rng(10);
  dec.init(rng);

  // zero tokens and zero bias give zero planes
  const Triplane<double> zero = dec.to_triplane(Md::Zero(cfg.n_tokens(), cfg.d_d));
  for (const auto& p : zero.planes) {
    CHECK(p.rows() == cfg.plane_res() * cfg.plane_res());
    CHECK(p.cols() == cfg.d_t);
    CHECK(p.cwiseAbs().maxCoeff() == 0.0);
  }

  // plane p is produced from chunk p of Z in (xy, yz, xz) order
  const int chunk = cfg.token_grid * cfg.token_grid;
  for (int p = 0; p < 3; ++p) {
    Md z = Md::Zero(cfg.n_tokens(), cfg.d_d);
    z.middleRows(p * chunk, chunk).setRandom();
    const Triplane<double> tri = dec.to_triplane(z);
    for (int q = 0; q < 3; ++q) {
      const double mag = tri.planes[q].cwiseAbs().maxCoeff();
      if (q == p)
        CHECK(mag > 0.0);
      else
        CHECK(mag == 0.0);
    }
  }

  CHECK_THROWS_AS(dec.to_triplane(Md::Zero(cfg.n_tokens() + 1, cfg.d_d)), std::invalid_argument);
}

TEST_CASE("query_field closed forms and range") {
  DecoderConfig cfg = toy_decoder();
  InfMlp<double> inf(cfg);

  const Triplane<double> tri = random_triplane(cfg.plane_res(), cfg.d_t, 11);
  std::vector<Eigen::Vector3d> pts;
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  for (int i = 0; i < 40; ++i) pts.emplace_back(ud(rng), ud(rng), ud(rng));

  // zero weights: sigmoid of the final bias everywhere
  InfMlp<double> zero_inf(cfg);
  zero_inf.layers.back().bias.value(0, 0) = 0.8;
  for (float rho : query_field(tri, pts, zero_inf))
    CHECK(rho == doctest::Approx(1.0 / (1.0 + std::exp(-0.8))).epsilon(1e-6));

  inf.init(rng);
  for (float rho : query_field(tri, pts, inf)) {
    CHECK(rho > 0.0f);
    CHECK(rho < 1.0f);
  }
}

TEST_CASE("query_field matches a scripted single-point evaluation") {
  DecoderConfig cfg = toy_decoder();
  InfMlp<double> inf(cfg);
  std::mt19937_64 rng(13);
  inf.init(rng);
  for (auto& l : inf.layers) l.bias.value.setRandom();

  const Triplane<double> tri = random_triplane(cfg.plane_res(), cfg.d_t, 14);
  const Eigen::Vector3d p(0.37, -0.61, 0.12);

  // independent evaluation: three bilinear taps, two linear layers, GELU,
  // sigmoid
  Eigen::RowVectorXd feat(3 * cfg.d_t);
  feat << sample_plane(tri.planes[0], tri.res, p[0], p[1]),
      sample_plane(tri.planes[1], tri.res, p[1], p[2]),
      sample_plane(tri.planes[2], tri.res, p[0], p[2]);
  Eigen::RowVectorXd h = feat * inf.layers[0].weight.value + inf.layers[0].bias.value.row(0);
  for (Eigen::Index i = 0; i < h.size(); ++i)
    h[i] = 0.5 * h[i] * (1.0 + std::erf(h[i] / std::sqrt(2.0)));
  const double logit =
      (h * inf.layers[1].weight.value + inf.layers[1].bias.value.row(0))(0);
  const double expected = 1.0 / (1.0 + std::exp(-logit));

  const std::vector<float> rho = query_field(tri, {p}, inf);
  CHECK(rho[0] == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("reconstruct_volume equals pointwise queries") {
  DecoderConfig cfg = toy_decoder();
  InfMlp<double> inf(cfg);
  std::mt19937_64 rng(15);
  inf.init(rng);
  const Triplane<double> tri = random_triplane(cfg.plane_res(), cfg.d_t, 16);

  // R=2 queries exactly at the cube corners
  const VolumeGrid v2 = reconstruct_volume(tri, 2, inf);
  int idx = 0;
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x, ++idx) {
        const Eigen::Vector3d corner(2.0 * x - 1.0, 2.0 * y - 1.0, 2.0 * z - 1.0);
        CHECK(v2.values[idx] ==
              doctest::Approx(query_field(tri, {corner}, inf)[0]).epsilon(1e-6));
      }

  const int r = 9;
  const VolumeGrid vol = reconstruct_volume(tri, r, inf);
  std::mt19937_64 pick(17);
  std::uniform_int_distribution<int> pi(0, r - 1);
  for (int trial = 0; trial < 20; ++trial) {
    const int x = pi(pick), y = pi(pick), z = pi(pick);
    const Eigen::Vector3d p(2.0 * x / (r - 1) - 1.0, 2.0 * y / (r - 1) - 1.0,
                            2.0 * z / (r - 1) - 1.0);
    CHECK(vol.at(x, y, z) == doctest::Approx(query_field(tri, {p}, inf)[0]).epsilon(1e-6));
  }

  CHECK_THROWS_AS(reconstruct_volume(tri, 1, inf), std::invalid_argument);

  // constant field from constant planes
  Triplane<double> flat = tri;
  for (auto& pl : flat.planes) pl.setConstant(0.2);
  const VolumeGrid fv = reconstruct_volume(flat, 5, inf);
  for (float v : fv.values) CHECK(v == doctest::Approx(fv.values[0]).epsilon(1e-7));
}

TEST_CASE("decoder and INF gradients against finite differences") {
  DecoderConfig cfg = toy_decoder();
  TriplaneDecoder<double> dec(cfg, 6);
  InfMlp<double> inf(cfg);
  std::mt19937_64 rng(18);
  dec.init(rng);
  inf.init(rng);

  const Md f = Md::Random(5, 6);
  std::vector<Eigen::Vector3d> pts;
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  for (int i = 0; i < 12; ++i) pts.emplace_back(ud(rng), ud(rng), ud(rng));

  FieldQueryCache<double> cache;
  auto forward = [&]() {
    const Md z = dec.decode(f);
    Triplane<double> tri = dec.to_triplane(z);
    return inf.forward(gather_point_features(tri, pts, &cache));
  };
  auto backward = [&](const Md& dy) {
    const Md z = dec.decode(f);
    Triplane<double> tri = dec.to_triplane(z);
    inf.forward(gather_point_features(tri, pts, &cache));
    const Md dfeat = inf.backward(dy);
    std::array<Md, 3> dplanes;
    for (int p = 0; p < 3; ++p) dplanes[p] = Md::Zero(tri.planes[p].rows(), tri.planes[p].cols());
    scatter_point_gradients(cache, dfeat, dplanes, cfg.d_t);
    dec.decode_backward(dec.to_triplane_backward(dplanes));
  };

  ParamList<double> params;
  dec.collect(params);
  inf.collect(params);
  for (Param<double>* p : params) p->grad.setZero();

  const Md out0 = forward();
  Md weights(out0.rows(), out0.cols());
  for (Eigen::Index i = 0; i < weights.size(); ++i) weights.data()[i] = ud(rng);
  backward(weights);

  const double h = 1e-5;
  std::uniform_int_distribution<size_t> pick_param(0, params.size() - 1);
  for (int c = 0; c < 30; ++c) {
    Param<double>* p = params[pick_param(rng)];
    std::uniform_int_distribution<Eigen::Index> pick(0, p->value.size() - 1);
    const Eigen::Index k = pick(rng);
    const double orig = p->value.data()[k];
    p->value.data()[k] = orig + h;
    const double lp = forward().cwiseProduct(weights).sum();
    p->value.data()[k] = orig - h;
    const double lm = forward().cwiseProduct(weights).sum();
    p->value.data()[k] = orig;
    const double fd = (lp - lm) / (2 * h);
    const double an = p->grad.data()[k];
    INFO("parameter " << p->name << " coord " << k << " fd " << fd << " an " << an);
    // the 1e-6 floor keeps central-difference cancellation noise (~1e-11
    // absolute on an O(1) loss) from dominating near-zero gradients
    CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}) < 1e-3);
  }
}

TEST_CASE("end-to-end model gradient in double precision") {
  EncoderConfig ecfg;
  ecfg.patch = 4;
  ecfg.d_e = 8;
  ecfg.n_layers = 1;
  ecfg.heads = 2;
  DecoderConfig dcfg = toy_decoder();

  XlrmModel<double> model(ecfg, dcfg, Ablation::Full);
  model.init(19);

  ScannerGeometry g = desk_scale_geometry();
  g.det_rows = g.det_cols = 8;
  g.pixel_mm = 3.9 * 4.0 * 8.0;
  g = make_circular_geometry(2, g);
  std::mt19937_64 rng(20);
  const VolumeGrid vol = rasterize_phantom(random_phantom(rng), 8);
  const ProjectionSet proj = project(vol, g, 1.0 / 8);

  std::vector<Eigen::Vector3d> pts;
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  for (int i = 0; i < 10; ++i) pts.emplace_back(ud(rng), ud(rng), ud(rng));

  ParamList<double> params = model.parameters();
  model.zero_grad();
  const Md out0 = model.forward(proj, pts);
  Md weights(out0.rows(), out0.cols());
  for (Eigen::Index i = 0; i < weights.size(); ++i) weights.data()[i] = ud(rng);
  model.backward(weights);

  const double h = 1e-5;
  std::uniform_int_distribution<size_t> pick_param(0, params.size() - 1);
  int checked = 0;
  for (int c = 0; c < 40 && checked < 12; ++c) {
    Param<double>* p = params[pick_param(rng)];
    std::uniform_int_distribution<Eigen::Index> pick(0, p->value.size() - 1);
    const Eigen::Index k = pick(rng);
    const double orig = p->value.data()[k];
    p->value.data()[k] = orig + h;
    const double lp = model.forward(proj, pts).cwiseProduct(weights).sum();
    p->value.data()[k] = orig - h;
    const double lm = model.forward(proj, pts).cwiseProduct(weights).sum();
    p->value.data()[k] = orig;
    const double fd = (lp - lm) / (2 * h);
    const double an = p->grad.data()[k];
    if (std::abs(fd) < 1e-10 && std::abs(an) < 1e-10) continue;  // numerically dead coordinate
    CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}) < 1e-2);
    ++checked;
  }
  CHECK(checked >= 10);
}

TEST_SUITE_END();
