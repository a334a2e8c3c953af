// Command-line surface: dataset generation, training, reconstruction,
// evaluation, the robustness sweep, the SART baseline, and the selftest.

#include <CLI11.hpp>

#include "xlrm/harness.hpp"
#include "xlrm/io.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace xlrm;

namespace {

// Effective settings: config file first, explicit flags override.
struct Settings {
  io::Config values;

  std::string get(const std::string& key, const std::string& dflt) const {
    auto it = values.find(key);
    return it == values.end() ? dflt : it->second;
  }
  long get_long(const std::string& key, long dflt) const {
    auto it = values.find(key);
    return it == values.end() ? dflt : std::stol(it->second);
  }
  double get_double(const std::string& key, double dflt) const {
    auto it = values.find(key);
    return it == values.end() ? dflt : std::stod(it->second);
  }
  uint64_t get_u64(const std::string& key, uint64_t dflt) const {
    auto it = values.find(key);
    return it == values.end() ? dflt : std::stoull(it->second);
  }
};

std::vector<int> parse_view_counts(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  if (out.empty()) throw std::invalid_argument("empty view count list");
  return out;
}

ScannerGeometry geometry_preset(const std::string& name) {
  if (name == "desk") return desk_scale_geometry();
  if (name == "paper") return paper_scale_geometry();
  throw std::invalid_argument("unknown geometry preset: " + name);
}

EncoderConfig encoder_from(const Settings& s) {
  EncoderConfig c = s.get("preset", "desk") == "paper" ? EncoderConfig::paper_scale()
                                                       : EncoderConfig::desk_scale();
  c.patch = int(s.get_long("patch", c.patch));
  c.d_e = int(s.get_long("d_e", c.d_e));
  c.n_layers = int(s.get_long("encoder_layers", c.n_layers));
  c.heads = int(s.get_long("encoder_heads", c.heads));
  return c;
}

DecoderConfig decoder_from(const Settings& s) {
  DecoderConfig c = s.get("preset", "desk") == "paper" ? DecoderConfig::paper_scale()
                                                       : DecoderConfig::desk_scale();
  c.d_d = int(s.get_long("d_d", c.d_d));
  c.n_layers = int(s.get_long("decoder_layers", c.n_layers));
  c.heads = int(s.get_long("decoder_heads", c.heads));
  c.token_grid = int(s.get_long("token_grid", c.token_grid));
  c.d_t = int(s.get_long("d_t", c.d_t));
  c.inf_layers = int(s.get_long("inf_layers", c.inf_layers));
  c.inf_hidden = int(s.get_long("inf_hidden", c.inf_hidden));
  c.paper_residual = s.get_long("paper_residual", c.paper_residual ? 1 : 0) != 0;
  return c;
}

TrainConfig train_from(const Settings& s, uint64_t seed) {
  TrainConfig c;
  c.view_counts = parse_view_counts(s.get("view_counts", "6,8,10"));
  c.lr_init = s.get_double("lr", c.lr_init);
  c.warmup_iters = s.get_long("warmup", c.warmup_iters);
  c.total_steps = s.get_long("total_steps", c.total_steps);
  c.batch_size = int(s.get_long("batch", c.batch_size));
  c.points_per_step = int(s.get_long("points", c.points_per_step));
  c.weight_decay = s.get_double("weight_decay", c.weight_decay);
  c.clip_norm = s.get_double("clip_norm", c.clip_norm);
  c.ablation = s.get("ablation", c.ablation);
  c.seed = seed;
  return c;
}

int cmd_gen_data(const Settings& s, uint64_t seed, const std::string& out) {
  if (out.empty()) throw std::invalid_argument("gen-data: --out directory required");
  ScannerGeometry geom = geometry_preset(s.get("geometry", "desk"));
  NoiseModel noise;
  noise.photon_count = s.get_double("photon_count", noise.photon_count);
  noise.gaussian_sigma = s.get_double("gaussian_sigma", noise.gaussian_sigma);
  const DatasetManifest m =
      gen_dataset(int(s.get_long("samples", 4)), int(s.get_long("resolution", 32)), geom,
                  int(s.get_long("views", 10)), noise, seed, out);
  validate_manifest(m);
  std::cout << "wrote " << m.samples.size() << " samples to " << out << "\n";
  return 0;
}

int cmd_train(const Settings& s, uint64_t seed, const std::string& out) {
  const std::string data = s.get("data", "");
  if (data.empty()) throw std::invalid_argument("train: 'data' (manifest path) required");
  if (out.empty()) throw std::invalid_argument("train: --out checkpoint path required");

  const DatasetManifest m = load_manifest(data);
  std::unique_ptr<Trainer> trainer;
  const std::string resume = s.get("resume", "");
  if (!resume.empty()) {
    trainer = Trainer::load_checkpoint(resume);
  } else {
    trainer = std::make_unique<Trainer>(encoder_from(s), decoder_from(s), train_from(s, seed));
  }

  const auto train_set = prepare_training_set(m, trainer->config().view_counts);
  const long steps = s.get_long("steps", trainer->config().total_steps - trainer->step_count());

  std::ofstream log;
  const std::string log_path = s.get("log", "");
  if (!log_path.empty()) {
    log.open(log_path, std::ios::app);
    if (!log) throw std::invalid_argument("train: cannot open log file " + log_path);
  }
  trainer->run(train_set, steps, log_path.empty() ? &std::cout : &log);
  trainer->save_checkpoint(out);
  std::cout << "saved checkpoint at step " << trainer->step_count() << " to " << out << "\n";
  return 0;
}

int cmd_reconstruct(const Settings& s, const std::string& out) {
  const std::string ckpt = s.get("checkpoint", "");
  const std::string data = s.get("data", "");
  if (ckpt.empty()) throw std::invalid_argument("reconstruct: 'checkpoint' required");
  if (data.empty()) throw std::invalid_argument("reconstruct: 'data' (manifest path) required");
  if (out.empty()) throw std::invalid_argument("reconstruct: --out volume path required");

  const DatasetManifest m = load_manifest(data);
  auto trainer = Trainer::load_checkpoint(ckpt);
  const size_t sample = size_t(s.get_long("sample", 0));
  const int views = int(s.get_long("views", m.n_views));

  const VolumeGrid gt = load_sample_volume(m, sample);
  ProjectionSet proj;
  if (views == m.n_views) {
    proj.geom = m.geometry;
    proj.images = load_sample_projections(m, sample);
    for (int k = 0; k < views; ++k) proj.rppc.push_back(rppc_map(m.geometry, k));
  } else {
    proj = render_views(gt, m.geometry, views, m.noise,
                        mix_seed(m.samples[sample].noise_seed, uint64_t(views)));
  }
  const VolumeGrid rec = trainer->model().reconstruct(proj, m.resolution);
  io::write_volume(out, rec);
  const std::string png = s.get("slice_png", "");
  if (!png.empty()) io::write_slice_png(png, rec, rec.resolution / 2);
  std::cout << "psnr_db: " << psnr_3d(rec, gt) << "\n";
  return 0;
}

int cmd_eval(const Settings& s, const std::string& out) {
  const std::string ckpt = s.get("checkpoint", "");
  const std::string data = s.get("data", "");
  if (ckpt.empty()) throw std::invalid_argument("eval: 'checkpoint' required");
  if (data.empty()) throw std::invalid_argument("eval: 'data' (manifest path) required");

  const DatasetManifest m = load_manifest(data);
  auto trainer = Trainer::load_checkpoint(ckpt);
  const MetricReport report =
      evaluate(trainer->model(), m, parse_view_counts(s.get("view_counts", "6,8,10")));
  std::cout << format_report_table(report);
  if (!out.empty()) write_report_json(out, report);
  return 0;
}

int cmd_robustness(const Settings& s, uint64_t seed, const std::string& out) {
  const std::string ckpt = s.get("checkpoint", "");
  const std::string data = s.get("data", "");
  if (ckpt.empty()) throw std::invalid_argument("robustness: 'checkpoint' required");
  if (data.empty()) throw std::invalid_argument("robustness: 'data' (manifest path) required");

  const DatasetManifest m = load_manifest(data);
  auto trainer = Trainer::load_checkpoint(ckpt);
  const MetricReport report = robustness_sweep(trainer->model(), m, scanner_noise_sweep(seed),
                                               int(s.get_long("views", 6)));
  std::cout << format_report_table(report);
  if (!out.empty()) write_report_json(out, report);
  return 0;
}

int cmd_sart(const Settings& s, const std::string& out) {
  const std::string data = s.get("data", "");
  if (data.empty()) throw std::invalid_argument("sart: 'data' (manifest path) required");
  if (out.empty()) throw std::invalid_argument("sart: --out volume path required");

  const DatasetManifest m = load_manifest(data);
  const size_t sample = size_t(s.get_long("sample", 0));
  const int views = int(s.get_long("views", m.n_views));
  const VolumeGrid gt = load_sample_volume(m, sample);

  ProjectionSet proj;
  if (views == m.n_views) {
    proj.geom = m.geometry;
    proj.images = load_sample_projections(m, sample);
    for (int k = 0; k < views; ++k) proj.rppc.push_back(rppc_map(m.geometry, k));
  } else {
    NoiseModel noiseless;
    noiseless.photon_count = 0;
    noiseless.gaussian_sigma = 0;
    proj = render_views(gt, m.geometry, views, noiseless,
                        mix_seed(m.samples[sample].noise_seed, uint64_t(views)));
  }
  const VolumeGrid rec = sart_reconstruct(proj, m.resolution, int(s.get_long("iters", 20)),
                                          s.get_double("relax", 0.25));
  io::write_volume(out, rec);
  std::cout << "psnr_db: " << psnr_3d(rec, gt) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale sparse-view CT reconstruction pipeline"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  std::string config_path, out_path;
  uint64_t seed = 0;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "key=value config file")->capture_default_str();
  app.add_option("--out", out_path, "output path (directory or file, per subcommand)");
  app.add_option("--seed", seed, "RNG seed")->capture_default_str();
  app.add_option("--set", overrides, "override a config key, e.g. --set steps=100");

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic phantom dataset");
  CLI::App* train = app.add_subcommand("train", "train a model on a dataset");
  CLI::App* recon = app.add_subcommand("reconstruct", "reconstruct one sample from a checkpoint");
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint over view counts");
  CLI::App* robust = app.add_subcommand("robustness", "scanner-parameter robustness sweep");
  CLI::App* sart = app.add_subcommand("sart", "SART baseline reconstruction");
  CLI::App* selftest = app.add_subcommand("selftest", "adjoint/gradient/interpolation suites");
  for (CLI::App* sub : {gen, train, recon, eval_cmd, robust, sart, selftest}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    Settings s;
    if (!config_path.empty()) s.values = io::load_config_file(config_path);
    for (const std::string& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("--set expects key=value, got: " + kv);
      s.values[kv.substr(0, eq)] = kv.substr(eq + 1);
    }

    if (gen->parsed()) return cmd_gen_data(s, seed, out_path);
    if (train->parsed()) return cmd_train(s, seed, out_path);
    if (recon->parsed()) return cmd_reconstruct(s, out_path);
    if (eval_cmd->parsed()) return cmd_eval(s, out_path);
    if (robust->parsed()) return cmd_robustness(s, seed, out_path);
    if (sart->parsed()) return cmd_sart(s, out_path);
    if (selftest->parsed()) return run_selftest() ? 0 : 2;
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
