#include "volflow/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "volflow/io.hpp"

namespace fs = std::filesystem;

namespace volflow {

void TrainConfig::validate() const {
  parse_model_size(model);
  parse_regime(regime);
  if (lr_peak <= 0) throw_value("train config: lr_peak must be positive");
  if (warmup_steps < 0 || total_steps < 1 || warmup_steps > total_steps)
    throw_value("train config: need 0 <= warmup_steps <= total_steps");
  if (batch_per_step < 1 || accum_steps < 1)
    throw_value("train config: batch_per_step and accum_steps must be >= 1");
  if (p_first < 0 || p_first > 1) throw_value("train config: p_first outside [0,1]");
  if (threads < 1) throw_value("train config: threads must be >= 1");
  if (grad_clip < 0) throw_value("train config: grad_clip must be >= 0");
}

ModelConfig TrainConfig::model_config(int latent_h, int latent_w) const {
  ModelConfig cfg = ModelConfig::preset(model);
  if (dim > 0) cfg.dim = dim;
  if (heads > 0) cfg.heads = heads;
  if (depth > 0) cfg.depth = depth;
  cfg.latent_h = latent_h;
  cfg.latent_w = latent_w;
  cfg.validate();
  return cfg;
}

SamplingRegime TrainConfig::sampling_regime() const {
  SamplingRegime r;
  r.kind = parse_regime(regime);
  r.p_first = p_first;
  return r;
}

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig c;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    size_t h = line.find('#');
    if (h != std::string::npos) line = line.substr(0, h);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\r' || line.back() == '\t'))
      line.pop_back();
    size_t b = line.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    line = line.substr(b);
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw_parse("train config line " + std::to_string(lineno) + ": expected key=value");
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    try {
      if (key == "model") c.model = val;
      else if (key == "dim") c.dim = std::stoi(val);
      else if (key == "heads") c.heads = std::stoi(val);
      else if (key == "depth") c.depth = std::stoi(val);
      else if (key == "lr_peak") c.lr_peak = std::stod(val);
      else if (key == "warmup_steps") c.warmup_steps = std::stoi(val);
      else if (key == "total_steps") c.total_steps = std::stoi(val);
      else if (key == "batch_per_step") c.batch_per_step = std::stoi(val);
      else if (key == "accum_steps") c.accum_steps = std::stoi(val);
      else if (key == "regime") c.regime = val;
      else if (key == "p_first") c.p_first = std::stod(val);
      else if (key == "seed") c.seed = std::stoull(val);
      else if (key == "data_dir") c.data_dir = val;
      else if (key == "out_dir") c.out_dir = val;
      else if (key == "checkpoint_every") c.checkpoint_every = std::stoi(val);
      else if (key == "threads") c.threads = std::stoi(val);
      else if (key == "grad_clip") c.grad_clip = std::stod(val);
      else throw_usage("train config: unknown key '" + key + "'");
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      throw_parse("train config: bad value for '" + key + "': " + val);
    }
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_io("cannot open train config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

std::string render_train_config(const TrainConfig& c) {
  std::ostringstream os;
  os << "model=" << c.model << "\n";
  if (c.dim > 0) os << "dim=" << c.dim << "\n";
  if (c.heads > 0) os << "heads=" << c.heads << "\n";
  if (c.depth > 0) os << "depth=" << c.depth << "\n";
  os << "lr_peak=" << fmt_double(c.lr_peak, 10) << "\n";
  os << "warmup_steps=" << c.warmup_steps << "\n";
  os << "total_steps=" << c.total_steps << "\n";
  os << "batch_per_step=" << c.batch_per_step << "\n";
  os << "accum_steps=" << c.accum_steps << "\n";
  os << "regime=" << c.regime << "\n";
  os << "p_first=" << fmt_double(c.p_first, 6) << "\n";
  os << "seed=" << c.seed << "\n";
  os << "data_dir=" << c.data_dir << "\n";
  os << "out_dir=" << c.out_dir << "\n";
  os << "checkpoint_every=" << c.checkpoint_every << "\n";
  os << "threads=" << c.threads << "\n";
  os << "grad_clip=" << fmt_double(c.grad_clip, 6) << "\n";
  return os.str();
}

double lr_schedule(int64_t step, const TrainConfig& config) {
  if (step < 0) throw_value("lr_schedule: negative step");
  if (config.warmup_steps == 0) return config.lr_peak;
  double frac = static_cast<double>(step) / config.warmup_steps;
  return config.lr_peak * (frac < 1.0 ? frac : 1.0);
}

OptimState make_optim_state(const ModelParams& params) {
  OptimState s;
  s.m = make_grad_buffers(params);
  s.v = make_grad_buffers(params);
  return s;
}

void optim_step(ModelParams& params, const GradBuffers& grads, OptimState& state, double lr,
                double grad_clip) {
  if (grads.size() != params.tensors.size() || state.m.size() != params.tensors.size())
    throw_usage("optim_step: buffer count mismatch");
  for (size_t p = 0; p < params.tensors.size(); ++p)
    for (float g : grads[p])
      if (!std::isfinite(g))
        throw_numeric("non-finite gradient for parameter '" + params.tensors[p].name + "'");

  double scale = 1.0;
  if (grad_clip > 0.0) {
    double sq = 0;
    for (const auto& g : grads)
      for (float v : g) sq += static_cast<double>(v) * v;
    double norm = std::sqrt(sq);
    if (norm > grad_clip) scale = grad_clip / norm;
  }

  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t p = 0; p < params.tensors.size(); ++p) {
    auto& w = *params.tensors[p].data;
    auto& m = state.m[p];
    auto& v = state.v[p];
    const auto& g = grads[p];
    for (size_t i = 0; i < w.size(); ++i) {
      double gi = static_cast<double>(g[i]) * scale;
      double mi = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      double vi = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      double mhat = mi / bc1;
      double vhat = vi / bc2;
      w[i] = static_cast<float>(w[i] - lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

DataMeta DataMeta::from_dataset(const Dataset& ds) {
  DataMeta m;
  m.codec_seed = ds.codec_seed;
  m.embed_seed = ds.embed_seed;
  m.feature_seed = ds.feature_seed;
  m.resolution = ds.resolution;
  m.latent_h = ds.latent_h;
  m.latent_w = ds.latent_w;
  m.channel_scale = ds.basis.channel_scale;
  m.probe_calib = ds.probe_calib;
  return m;
}

CodecBasis DataMeta::make_basis() const {
  CodecBasis basis = build_basis(codec_seed);
  basis.channel_scale = channel_scale;
  return basis;
}

// ---------------------------------------------------------------------------
// checkpoint format: magic "VFCK"

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  BinWriter w(path);
  w.magic("VFCK");
  w.u32(ckpt.version);
  w.str(render_train_config(ckpt.config));
  w.u64(ckpt.meta.codec_seed);
  w.u64(ckpt.meta.embed_seed);
  w.u64(ckpt.meta.feature_seed);
  w.u32(static_cast<uint32_t>(ckpt.meta.resolution));
  w.u32(static_cast<uint32_t>(ckpt.meta.latent_h));
  w.u32(static_cast<uint32_t>(ckpt.meta.latent_w));
  w.f64_array(ckpt.meta.channel_scale);
  for (int c = 0; c < 7; ++c) w.f64(ckpt.meta.probe_calib.neg_mean[static_cast<size_t>(c)]);
  for (int c = 0; c < 7; ++c) w.f64(ckpt.meta.probe_calib.pos_mean[static_cast<size_t>(c)]);
  w.f64(ckpt.meta.probe_calib.is_temperature);
  w.i64(ckpt.step);
  w.str(ckpt.data_rng_state);
  w.str(ckpt.noise_rng_state);
  w.f64(ckpt.opt.beta1);
  w.f64(ckpt.opt.beta2);
  w.f64(ckpt.opt.eps);
  w.i64(ckpt.opt.step);
  w.u64(ckpt.params.tensors.size());
  for (size_t p = 0; p < ckpt.params.tensors.size(); ++p) {
    const auto& t = ckpt.params.tensors[p];
    w.str(t.name);
    w.u32(static_cast<uint32_t>(t.shape.size()));
    for (int64_t e : t.shape) w.i64(e);
    w.u8(0);  // float32
    w.f32_array(*t.data);
    w.f32_array(ckpt.opt.m[p]);
    w.f32_array(ckpt.opt.v[p]);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  BinReader r(path);
  r.expect_magic("VFCK");
  Checkpoint ckpt;
  ckpt.version = r.u32();
  if (ckpt.version != 1)
    throw_data("unsupported checkpoint version " + std::to_string(ckpt.version));
  ckpt.config = parse_train_config(r.str());
  ckpt.meta.codec_seed = r.u64();
  ckpt.meta.embed_seed = r.u64();
  ckpt.meta.feature_seed = r.u64();
  ckpt.meta.resolution = static_cast<int>(r.u32());
  ckpt.meta.latent_h = static_cast<int>(r.u32());
  ckpt.meta.latent_w = static_cast<int>(r.u32());
  ckpt.meta.channel_scale.resize(CodecBasis::kKeptRows);
  for (auto& v : ckpt.meta.channel_scale) v = r.f64();
  for (int c = 0; c < 7; ++c) ckpt.meta.probe_calib.neg_mean[static_cast<size_t>(c)] = r.f64();
  for (int c = 0; c < 7; ++c) ckpt.meta.probe_calib.pos_mean[static_cast<size_t>(c)] = r.f64();
  ckpt.meta.probe_calib.is_temperature = r.f64();
  ckpt.step = r.i64();
  ckpt.data_rng_state = r.str();
  ckpt.noise_rng_state = r.str();
  ckpt.opt.beta1 = r.f64();
  ckpt.opt.beta2 = r.f64();
  ckpt.opt.eps = r.f64();
  ckpt.opt.step = r.i64();

  ckpt.params.config = ckpt.config.model_config(ckpt.meta.latent_h, ckpt.meta.latent_w);
  uint64_t count = r.u64();
  std::vector<std::pair<std::string, Shape>> expect;
  for_each_param_spec(ckpt.params.config, [&](const std::string& n, const Shape& s) {
    expect.emplace_back(n, s);
  });
  if (count != expect.size())
    throw_data("checkpoint parameter count " + std::to_string(count) + " != expected " +
               std::to_string(expect.size()));
  for (uint64_t p = 0; p < count; ++p) {
    std::string name = r.str();
    uint32_t nd = r.u32();
    Shape shape(nd);
    for (auto& e : shape) e = r.i64();
    if (r.u8() != 0) throw_data("checkpoint tensor dtype must be float32");
    if (name != expect[p].first || shape != expect[p].second)
      throw_data("checkpoint tensor '" + name + "' " + shape_str(shape) +
                 " does not match expected '" + expect[p].first + "' " +
                 shape_str(expect[p].second));
    size_t n = static_cast<size_t>(numel(shape));
    auto data = std::make_shared<std::vector<float>>();
    r.f32_array(*data, n);
    ckpt.params.tensors.push_back({name, shape, std::move(data)});
    ckpt.opt.m.emplace_back();
    r.f32_array(ckpt.opt.m.back(), n);
    ckpt.opt.v.emplace_back();
    r.f32_array(ckpt.opt.v.back(), n);
  }
  if (!r.at_eof()) throw_data("trailing bytes in checkpoint " + path);
  return ckpt;
}

// ---------------------------------------------------------------------------

std::string loss_curve_csv(const std::vector<LossPoint>& curve) {
  std::string out = "step,loss,lr\n";
  for (const auto& p : curve)
    out += std::to_string(p.step) + "," + fmt_double(p.loss, 8) + "," + fmt_double(p.lr, 8) + "\n";
  return out;
}

TrainResult train(const TrainConfig& config, const Dataset& dataset, const Checkpoint* resume) {
  config.validate();
  if (dataset.latents.empty()) throw_data("train: dataset latents not loaded");
  const ModelConfig model_cfg = config.model_config(dataset.latent_h, dataset.latent_w);
  const SamplingRegime regime = config.sampling_regime();

  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.meta = DataMeta::from_dataset(dataset);
  Rng data_rng = Rng::derive(config.seed, 0xDA7AULL);
  Rng noise_rng = Rng::derive(config.seed, 0x2015EULL);
  int64_t start_step = 0;
  if (resume != nullptr) {
    ckpt.params = resume->params.deep_copy();
    ckpt.opt = resume->opt;
    start_step = resume->step;
    data_rng.load_state(resume->data_rng_state);
    noise_rng.load_state(resume->noise_rng_state);
    if (resume->config.model != config.model)
      throw_data("train: resume checkpoint model '" + resume->config.model +
                 "' does not match config '" + config.model + "'");
  } else {
    ckpt.params = init_params<float>(model_cfg, config.seed);
    ckpt.opt = make_optim_state(ckpt.params);
  }

  const int64_t effective_batch =
      static_cast<int64_t>(config.batch_per_step) * config.accum_steps;
  TrainResult result;
  GradBuffers accum = make_grad_buffers(ckpt.params);

  for (int64_t step = start_step; step < config.total_steps; ++step) {
    double lr = lr_schedule(step, config);
    for (auto& g : accum) std::fill(g.begin(), g.end(), 0.0f);
    double loss_sum = 0;
    for (int a = 0; a < config.accum_steps; ++a) {
      std::vector<PairSample> batch;
      batch.reserve(static_cast<size_t>(config.batch_per_step));
      for (int b = 0; b < config.batch_per_step; ++b) {
        int64_t idx = data_rng.uniform_int(0, static_cast<int64_t>(dataset.latents.size()) - 1);
        batch.push_back(sample_pair(dataset.latents[static_cast<size_t>(idx)], dataset.sentinels,
                                    dataset.embeddings[static_cast<size_t>(idx)], regime,
                                    data_rng));
      }
      loss_sum += fm_loss_accumulate(ckpt.params, batch, noise_rng, accum, config.threads);
    }
    float inv = 1.0f / static_cast<float>(effective_batch);
    for (auto& g : accum)
      for (auto& v : g) v *= inv;
    optim_step(ckpt.params, accum, ckpt.opt, lr, config.grad_clip);
    result.curve.push_back({step, loss_sum / static_cast<double>(effective_batch), lr});

    bool last = step + 1 == config.total_steps;
    if (!config.out_dir.empty() &&
        ((config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0) || last)) {
      ckpt.step = step + 1;
      ckpt.data_rng_state = data_rng.save_state();
      ckpt.noise_rng_state = noise_rng.save_state();
      char name[48];
      std::snprintf(name, sizeof(name), "checkpoint_%06lld.bin",
                    static_cast<long long>(step + 1));
      save_checkpoint((fs::path(config.out_dir) / name).string(), ckpt);
      if (last) save_checkpoint((fs::path(config.out_dir) / "checkpoint_final.bin").string(), ckpt);
    }
  }

  ckpt.step = config.total_steps;
  ckpt.data_rng_state = data_rng.save_state();
  ckpt.noise_rng_state = noise_rng.save_state();
  result.checkpoint = std::move(ckpt);
  return result;
}

TrainResult train(const TrainConfig& config, const std::string& resume_path) {
  config.validate();
  if (config.data_dir.empty()) throw_usage("train: data_dir is required");
  Dataset dataset = load_dataset(config.data_dir, /*load_latents=*/true);

  Checkpoint resume;
  const Checkpoint* resume_ptr = nullptr;
  if (!resume_path.empty()) {
    resume = load_checkpoint(resume_path);
    resume_ptr = &resume;
  }

  if (!config.out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(config.out_dir, ec);
    if (ec) throw_io("cannot create out_dir " + config.out_dir + ": " + ec.message());
    std::ofstream snap(fs::path(config.out_dir) / "train_config.txt");
    snap << render_train_config(config);
  }

  TrainResult result = train(config, dataset, resume_ptr);

  if (!config.out_dir.empty()) {
    std::ofstream csv(fs::path(config.out_dir) / "loss.csv");
    csv << loss_curve_csv(result.curve);
  }
  return result;
}

}  // namespace volflow
