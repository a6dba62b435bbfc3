// volflow: text-conditioned latent flow-matching volume synthesis at desk
// scale. Subcommands: gen-data, train, sample, evaluate, inspect.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "volflow/dataset.hpp"
#include "volflow/imageio.hpp"
#include "volflow/metrics.hpp"
#include "volflow/sampler.hpp"
#include "volflow/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace volflow;

namespace {

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage:
    case ErrorKind::Shape:
    case ErrorKind::Value:
    case ErrorKind::Parse:
    case ErrorKind::Vocabulary:
      return 2;
    case ErrorKind::Data:
      return 3;
    case ErrorKind::Numeric:
      return 4;
    case ErrorKind::Io:
      return 5;
  }
  return 1;
}

void write_run_config(const std::string& out_dir, const std::string& command,
                      const std::vector<std::pair<std::string, std::string>>& kv) {
  std::ofstream snap(fs::path(out_dir) / "run_config.txt");
  if (!snap) throw_io("cannot write run_config.txt in " + out_dir);
  snap << "command=" << command << "\n";
  for (const auto& [k, v] : kv) snap << k << "=" << v << "\n";
}

void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw_io("cannot create directory " + dir + ": " + ec.message());
}

struct SampleArgs {
  std::string ckpt, mode = "full-body", reports_file, data_dir, out_dir;
  int steps = 50;
  int count = 0;
  uint64_t seed = 0;
  int threads = 1;
  bool dump_slices = false;
};

std::vector<Report> load_report_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_io("cannot open reports file: " + path);
  std::vector<Report> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(parse_report(line));
  }
  if (out.empty()) throw_data("no reports in " + path);
  return out;
}

int cmd_sample(const SampleArgs& args) {
  Checkpoint ckpt = load_checkpoint(args.ckpt);
  InferenceMode mode = parse_inference_mode(args.mode);
  ensure_out_dir(args.out_dir);

  std::vector<Report> reports;
  Dataset data;
  bool have_data = !args.data_dir.empty();
  if (have_data) {
    data = load_dataset(args.data_dir, /*load_latents=*/true);
    if (data.codec_seed != ckpt.meta.codec_seed)
      throw_data("sample: dataset codec seed does not match the checkpoint");
    for (const auto& r : data.records) reports.push_back(r.report);
  }
  if (!args.reports_file.empty()) reports = load_report_lines(args.reports_file);
  if (mode != InferenceMode::FullBody && !have_data)
    throw_usage("sample: --data with ground-truth volumes is required for " + args.mode);
  if (reports.empty()) throw_usage("sample: provide --reports or --data");

  int count = args.count > 0 ? std::min<int>(args.count, static_cast<int>(reports.size()))
                             : static_cast<int>(reports.size());
  if (mode != InferenceMode::FullBody)
    count = std::min<int>(count, static_cast<int>(data.records.size()));
  CodecBasis basis = ckpt.meta.make_basis();
  SamplerConfig sampler_cfg{args.steps};

  write_run_config(args.out_dir, "sample",
                   {{"ckpt", args.ckpt},
                    {"mode", args.mode},
                    {"steps", std::to_string(args.steps)},
                    {"count", std::to_string(count)},
                    {"seed", std::to_string(args.seed)},
                    {"threads", std::to_string(args.threads)}});

  json traces = json::array();
  for (int i = 0; i < count; ++i) {
    const Report& report = reports[static_cast<size_t>(i)];
    TextEmbedding text = embed_report(report, ckpt.meta.embed_seed);
    Rng rng = Rng::derive(args.seed, 0x5A3FULL + static_cast<uint64_t>(i));
    char stem[32];
    std::snprintf(stem, sizeof(stem), "sample_%04d", i);

    std::vector<LatentSlice> latents;
    json trace;
    trace["report"] = render_report(report);
    trace["mode"] = args.mode;
    trace["requested_length"] = report.length_slices;
    trace["euler_steps"] = args.steps;

    if (mode == InferenceMode::NextBlock) {
      const auto& gt = data.latents[static_cast<size_t>(i)];
      auto preds = next_block_eval(ckpt.params, gt, text, sampler_cfg, rng.next_u64(),
                                   args.threads);
      for (size_t b = 0; b < preds.size(); ++b)
        for (const auto& s : preds[b].slices) latents.push_back(s);
      trace["blocks"] = preds.size();
      trace["stop_reason"] = "next_block";
    } else {
      LatentBlock head;
      const LatentBlock* head_ptr = nullptr;
      if (mode == InferenceMode::GTHead) {
        const auto& gt = data.latents[static_cast<size_t>(i)];
        if (gt.size() < LatentBlock::kSlices)
          throw_data("sample: ground-truth volume too short for gt-head");
        head = LatentBlock(std::vector<LatentSlice>(gt.begin(), gt.begin() + LatentBlock::kSlices));
        head_ptr = &head;
      }
      GeneratedVolume gv =
          generate_volume(model_block_generator(ckpt.params, sampler_cfg), report, text, mode,
                          basis, ckpt.meta.latent_h, ckpt.meta.latent_w, head_ptr, rng);
      latents = std::move(gv.latents);
      trace["blocks"] = gv.trace.blocks.size();
      trace["stop_reason"] =
          gv.trace.stop_reason == StopReason::WhiteSentinel ? "white_sentinel" : "block_cap";
      trace["white_scores"] = gv.trace.white_scores;
      trace["first_white_block"] = gv.trace.first_white_block;
      trace["first_white_slice"] = gv.trace.first_white_slice;
    }
    trace["output_slices"] = latents.size();

    if (!latents.empty()) {
      write_latent_volume((fs::path(args.out_dir) / (std::string(stem) + ".ctfl")).string(),
                          latents, ckpt.meta.codec_seed);
      std::vector<SliceImage> pixels = decode_volume(latents, basis);
      write_montage_pgm((fs::path(args.out_dir) / (std::string(stem) + "_montage.pgm")).string(),
                        pixels);
      if (args.dump_slices) {
        fs::path slice_dir = fs::path(args.out_dir) / (std::string(stem) + "_slices");
        ensure_out_dir(slice_dir.string());
        for (size_t s = 0; s < pixels.size(); ++s) {
          char name[32];
          std::snprintf(name, sizeof(name), "slice_%04zu.pgm", s);
          write_slice_pgm((slice_dir / name).string(), pixels[s]);
        }
      }
    }
    traces.push_back(std::move(trace));
  }
  std::ofstream tf(fs::path(args.out_dir) / "traces.json");
  tf << traces.dump(2) << "\n";
  std::cout << "wrote " << count << " volumes to " << args.out_dir << "\n";
  return 0;
}

struct EvalArgs {
  std::string ckpt, data_dir, mode = "next-block", resolution = "native", out_dir;
  int steps = 50;
  int volumes = 0;
  uint64_t seed = 0;
  int threads = 1;
};

int cmd_evaluate(const EvalArgs& args) {
  Checkpoint ckpt = load_checkpoint(args.ckpt);
  Dataset data = load_dataset(args.data_dir, /*load_latents=*/true);
  EvaluateOptions opts;
  opts.mode = parse_inference_mode(args.mode);
  opts.resolution = args.resolution;
  opts.euler_steps = args.steps;
  opts.n_volumes = args.volumes;
  opts.seed = args.seed;
  opts.threads = args.threads;

  ensure_out_dir(args.out_dir);
  write_run_config(args.out_dir, "evaluate",
                   {{"ckpt", args.ckpt},
                    {"data", args.data_dir},
                    {"mode", args.mode},
                    {"resolution", args.resolution},
                    {"steps", std::to_string(args.steps)},
                    {"volumes", std::to_string(args.volumes)},
                    {"seed", std::to_string(args.seed)},
                    {"threads", std::to_string(args.threads)}});

  EvalDetail detail;
  MetricReport report = evaluate(ckpt, data, opts, &detail);
  std::string csv = metric_report_csv({report});
  std::string table = metric_report_table({report});
  {
    std::ofstream f(fs::path(args.out_dir) / "metrics.csv");
    f << csv;
  }
  {
    std::ofstream f(fs::path(args.out_dir) / "metrics.txt");
    f << table;
  }
  {
    json d;
    d["requested_lengths"] = detail.requested_lengths;
    d["generated_lengths"] = detail.generated_lengths;
    d["stop_reasons"] = detail.stop_reasons;
    std::ofstream f(fs::path(args.out_dir) / "detail.json");
    f << d.dump(2) << "\n";
  }
  std::cout << table;
  return 0;
}

int cmd_inspect(const std::string& ckpt_path, const std::string& cache_dir,
                const std::string& model_name) {
  if (!model_name.empty()) {
    ModelConfig cfg = ModelConfig::preset(model_name);
    std::cout << "model=" << model_name << " dim=" << cfg.dim << " heads=" << cfg.heads
              << " depth=" << cfg.depth << " params=" << param_count(cfg) << " ("
              << fmt_double(param_count(cfg) / 1e6, 2) << " M)\n";
    return 0;
  }
  if (!ckpt_path.empty()) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    std::cout << "checkpoint: " << ckpt_path << "\n";
    std::cout << "step=" << ckpt.step << "\n";
    std::cout << "model=" << ckpt.config.model << " params=" << ckpt.params.count() << " ("
              << fmt_double(ckpt.params.count() / 1e6, 2) << " M)\n";
    std::cout << "latent=" << ckpt.meta.latent_h << "x" << ckpt.meta.latent_w
              << " resolution=" << ckpt.meta.resolution << "\n";
    std::cout << "codec_seed=" << ckpt.meta.codec_seed << " embed_seed=" << ckpt.meta.embed_seed
              << "\n";
    std::cout << "config:\n" << render_train_config(ckpt.config);
    return 0;
  }
  if (!cache_dir.empty()) {
    Dataset ds = load_dataset(cache_dir, /*load_latents=*/false);
    std::cout << "dataset: " << cache_dir << "\n";
    std::cout << "volumes=" << ds.records.size() << " resolution=" << ds.resolution
              << " lengths=[" << ds.min_length << "," << ds.max_length << "]\n";
    std::cout << "codec_seed=" << ds.codec_seed << " embed_seed=" << ds.embed_seed
              << " feature_seed=" << ds.feature_seed << "\n";
    int64_t total = 0;
    std::map<std::string, int> by_finding;
    for (const auto& r : ds.records) {
      total += r.length;
      for (int f : r.report.findings) by_finding[kFindingVocabulary[static_cast<size_t>(f)]]++;
    }
    std::cout << "total_slices=" << total << "\n";
    for (const auto& [name, n] : by_finding) std::cout << "finding " << name << ": " << n << "\n";
    return 0;
  }
  throw_usage("inspect: pass --ckpt, --cache or --model");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latent flow-matching volume synthesis"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "build a phantom dataset with latent cache");
  BuildDatasetOptions gen_opts;
  gen->add_option("--volumes", gen_opts.n_volumes, "number of volumes")->required();
  gen->add_option("--seed", gen_opts.seed, "dataset seed");
  gen->add_option("--out", gen_opts.out_dir, "output directory")->required();
  gen->add_option("--resolution", gen_opts.resolution, "slice resolution (multiple of 8)");
  gen->add_option("--min-length", gen_opts.min_length, "minimum slice count");
  gen->add_option("--max-length", gen_opts.max_length, "maximum slice count");
  gen->add_option("--codec-seed", gen_opts.codec_seed, "codec basis seed");
  gen->add_option("--threads", gen_opts.threads, "worker threads");
  gen->add_flag("--force", gen_opts.force, "overwrite a non-empty directory");

  // train
  auto* tr = app.add_subcommand("train", "run the optimization loop");
  std::string train_config_path, resume_path;
  std::vector<std::string> overrides;
  tr->add_option("--config", train_config_path, "key=value config file")->required();
  tr->add_option("--resume", resume_path, "checkpoint to resume from");
  tr->add_option("--set", overrides, "config overrides, key=value");

  // sample
  auto* sa = app.add_subcommand("sample", "generate volumes from a checkpoint");
  SampleArgs sample_args;
  sa->add_option("--ckpt", sample_args.ckpt, "checkpoint file")->required();
  sa->add_option("--mode", sample_args.mode, "full-body|gt-head|next-block");
  sa->add_option("--reports", sample_args.reports_file, "prompt reports, one per line");
  sa->add_option("--data", sample_args.data_dir, "dataset dir (gt modes, or prompts)");
  sa->add_option("--steps", sample_args.steps, "Euler steps");
  sa->add_option("--count", sample_args.count, "number of volumes (default: all prompts)");
  sa->add_option("--seed", sample_args.seed, "sampling seed");
  sa->add_option("--threads", sample_args.threads, "worker threads");
  sa->add_option("--out", sample_args.out_dir, "output directory")->required();
  sa->add_flag("--pgm", sample_args.dump_slices, "dump per-slice PGM images");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "compute the metric suite for a checkpoint");
  EvalArgs eval_args;
  ev->add_option("--ckpt", eval_args.ckpt, "checkpoint file")->required();
  ev->add_option("--data", eval_args.data_dir, "validation dataset dir")->required();
  ev->add_option("--mode", eval_args.mode, "full-body|gt-head|next-block");
  ev->add_option("--resolution", eval_args.resolution,
                 "native|x2:bilinear|x2:bicubic|x2:nearest");
  ev->add_option("--steps", eval_args.steps, "Euler steps");
  ev->add_option("--volumes", eval_args.volumes, "validation volumes to use (0 = all)");
  ev->add_option("--seed", eval_args.seed, "evaluation seed");
  ev->add_option("--threads", eval_args.threads, "worker threads");
  ev->add_option("--out", eval_args.out_dir, "output directory")->required();

  // inspect
  auto* in = app.add_subcommand("inspect", "print checkpoint / dataset / model info");
  std::string in_ckpt, in_cache, in_model;
  in->add_option("--ckpt", in_ckpt, "checkpoint file");
  in->add_option("--cache", in_cache, "dataset directory");
  in->add_option("--model", in_model, "model preset name (tiny|s|b|l)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      build_dataset(gen_opts);
      Dataset ds = load_dataset(gen_opts.out_dir, false);
      std::cout << "dataset ready: " << ds.records.size() << " volumes in " << gen_opts.out_dir
                << "\n";
      return 0;
    }
    if (tr->parsed()) {
      std::ifstream cf(train_config_path);
      if (!cf) throw_io("cannot open train config: " + train_config_path);
      std::stringstream ss;
      ss << cf.rdbuf();
      std::string text = ss.str();
      for (const auto& ov : overrides) text += "\n" + ov;
      TrainConfig config = parse_train_config(text);
      int64_t eff = static_cast<int64_t>(config.batch_per_step) * config.accum_steps;
      std::cout << "training " << config.model << " for " << config.total_steps
                << " steps, effective batch " << eff << " (" << config.batch_per_step << " x "
                << config.accum_steps << " accum x 1 worker)\n";
      TrainResult result = train(config, resume_path);
      double last = result.curve.empty() ? 0.0 : result.curve.back().loss;
      std::cout << "done at step " << result.checkpoint.step << ", last loss "
                << fmt_double(last, 6) << "\n";
      return 0;
    }
    if (sa->parsed()) return cmd_sample(sample_args);
    if (ev->parsed()) return cmd_evaluate(eval_args);
    if (in->parsed()) return cmd_inspect(in_ckpt, in_cache, in_model);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
