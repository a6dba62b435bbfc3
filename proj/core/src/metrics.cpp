#include "volflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "volflow/threading.hpp"

namespace volflow {

FeatureNet make_feature_net(uint64_t seed) {
  FeatureNet net;
  net.seed = seed;
  const int chans[5] = {3, 8, 16, 32, FeatureNet::kFeatureDim};
  Rng rng = Rng::derive(seed, 0xFEA7ULL);
  for (int l = 0; l < 4; ++l) {
    FeatureNet::Conv conv;
    conv.in_ch = chans[l];
    conv.out_ch = chans[l + 1];
    conv.w.resize(static_cast<size_t>(conv.out_ch) * conv.in_ch * 27);
    conv.b.resize(static_cast<size_t>(conv.out_ch));
    for (auto& v : conv.w) v = static_cast<float>(rng.normal());
    for (auto& v : conv.b) v = static_cast<float>(rng.uniform(-0.1, 0.1));
    // rescale each output channel's kernel to a fixed L2 norm: content
    // variance survives the ReLU stack and every layer's Lipschitz
    // constant is bounded by sqrt(27 sum_oc ||w_oc||^2)
    size_t per_out = static_cast<size_t>(conv.in_ch) * 27;
    for (int oc = 0; oc < conv.out_ch; ++oc) {
      double l2 = 0;
      for (size_t k = 0; k < per_out; ++k) {
        double w = conv.w[oc * per_out + k];
        l2 += w * w;
      }
      double s = l2 > 0 ? std::sqrt(2.0 / l2) : 1.0;
      for (size_t k = 0; k < per_out; ++k)
        conv.w[oc * per_out + k] = static_cast<float>(conv.w[oc * per_out + k] * s);
    }
    net.convs.push_back(std::move(conv));
  }
  return net;
}

int feature_window_length(FeatureWindow w) {
  switch (w) {
    case FeatureWindow::Slice: return 1;
    case FeatureWindow::F16: return 16;
    case FeatureWindow::F128: return 128;
  }
  return 1;
}

const char* feature_window_name(FeatureWindow w) {
  switch (w) {
    case FeatureWindow::Slice: return "slice";
    case FeatureWindow::F16: return "f16";
    case FeatureWindow::F128: return "f128";
  }
  return "?";
}

void FeatureMatrix::append(const std::vector<double>& row) {
  if (static_cast<int64_t>(row.size()) != dim) throw_shape("feature row has wrong width");
  data.insert(data.end(), row.begin(), row.end());
  ++rows;
}

namespace {

struct Grid {
  int c = 0, d = 0, h = 0, w = 0;
  std::vector<float> v;
  float at(int ci, int di, int hi, int wi) const {
    return v[((static_cast<size_t>(ci) * d + di) * h + hi) * w + wi];
  }
};

Grid conv_forward(const Grid& in, const FeatureNet::Conv& conv) {
  Grid out;
  out.c = conv.out_ch;
  out.d = (in.d - 1) / 2 + 1;
  out.h = (in.h - 1) / 2 + 1;
  out.w = (in.w - 1) / 2 + 1;
  out.v.assign(static_cast<size_t>(out.c) * out.d * out.h * out.w, 0.0f);
  size_t per_in = 27;
  size_t per_out = static_cast<size_t>(conv.in_ch) * per_in;
  for (int oc = 0; oc < out.c; ++oc) {
    const float* wk = conv.w.data() + oc * per_out;
    for (int od = 0; od < out.d; ++od)
      for (int oh = 0; oh < out.h; ++oh)
        for (int ow = 0; ow < out.w; ++ow) {
          double acc = conv.b[static_cast<size_t>(oc)];
          for (int ic = 0; ic < conv.in_ch; ++ic) {
            for (int kd = 0; kd < 3; ++kd) {
              int di = od * 2 - 1 + kd;
              if (di < 0 || di >= in.d) continue;
              for (int kh = 0; kh < 3; ++kh) {
                int hi = oh * 2 - 1 + kh;
                if (hi < 0 || hi >= in.h) continue;
                for (int kw = 0; kw < 3; ++kw) {
                  int wi = ow * 2 - 1 + kw;
                  if (wi < 0 || wi >= in.w) continue;
                  acc += wk[(static_cast<size_t>(ic) * 3 + kd) * 9 + kh * 3 + kw] *
                         in.at(ic, di, hi, wi);
                }
              }
            }
          }
          out.v[((static_cast<size_t>(oc) * out.d + od) * out.h + oh) * out.w + ow] =
              acc > 0 ? static_cast<float>(acc) : 0.0f;
        }
  }
  return out;
}

}  // namespace

// 64 dims: per conv layer, global mean and RMS pools of its first 8
// channels (4 layers x 16), so shallow high-signal statistics and deep
// context both survive the readout.
std::vector<double> clip_features(const FeatureNet& net, const std::vector<SliceImage>& volume,
                                  int first, int len) {
  if (first < 0 || len < 1 || first + len > static_cast<int>(volume.size()))
    throw_usage("clip_features: window out of range");
  const int h = volume[static_cast<size_t>(first)].height;
  const int w = volume[static_cast<size_t>(first)].width;
  Grid g;
  g.c = 3;
  g.d = len;
  g.h = h;
  g.w = w;
  g.v.resize(static_cast<size_t>(3) * len * h * w);
  for (int di = 0; di < len; ++di) {
    const SliceImage& s = volume[static_cast<size_t>(first + di)];
    if (s.height != h || s.width != w) throw_shape("clip_features: ragged volume");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          g.v[((static_cast<size_t>(c) * len + di) * h + y) * w + x] = s.at(y, x, c);
  }
  std::vector<double> feat;
  feat.reserve(static_cast<size_t>(FeatureNet::kFeatureDim));
  for (const auto& conv : net.convs) {
    g = conv_forward(g, conv);
    int64_t spatial = static_cast<int64_t>(g.d) * g.h * g.w;
    for (int c = 0; c < 8; ++c) {
      double mean_acc = 0, sq_acc = 0;
      const float* ch = g.v.data() + static_cast<size_t>(c) * spatial;
      for (int64_t i = 0; i < spatial; ++i) {
        mean_acc += ch[i];
        sq_acc += static_cast<double>(ch[i]) * ch[i];
      }
      // x10 puts typical Frechet distances in a readable range
      feat.push_back(10.0 * mean_acc / static_cast<double>(spatial));
      feat.push_back(10.0 * std::sqrt(sq_acc / static_cast<double>(spatial)));
    }
  }
  return feat;
}

void append_window_features(FeatureMatrix& m, const FeatureNet& net,
                            const std::vector<SliceImage>& volume, FeatureWindow window,
                            int threads) {
  const int len = feature_window_length(window);
  const int count = static_cast<int>(volume.size()) / len;
  if (count == 0) return;
  std::vector<std::vector<double>> rows(static_cast<size_t>(count));
  parallel_for(count, threads, [&](int64_t i) {
    rows[static_cast<size_t>(i)] = clip_features(net, volume, static_cast<int>(i) * len, len);
  });
  for (const auto& r : rows) m.append(r);
}

FrechetStats fit_stats(const FeatureMatrix& m) {
  if (m.rows < 2) throw_value("fit_stats: need at least 2 rows, got " + std::to_string(m.rows));
  FrechetStats s;
  s.dim = m.dim;
  s.count = m.rows;
  s.mean.assign(static_cast<size_t>(m.dim), 0.0);
  for (int64_t r = 0; r < m.rows; ++r)
    for (int64_t c = 0; c < m.dim; ++c)
      s.mean[static_cast<size_t>(c)] += m.data[static_cast<size_t>(r * m.dim + c)];
  for (auto& v : s.mean) v /= static_cast<double>(m.rows);
  s.cov = MatD(m.dim, m.dim);
  for (int64_t r = 0; r < m.rows; ++r)
    for (int64_t i = 0; i < m.dim; ++i) {
      double di = m.data[static_cast<size_t>(r * m.dim + i)] - s.mean[static_cast<size_t>(i)];
      for (int64_t j = i; j < m.dim; ++j) {
        double dj = m.data[static_cast<size_t>(r * m.dim + j)] - s.mean[static_cast<size_t>(j)];
        s.cov.at(i, j) += di * dj;
      }
    }
  for (int64_t i = 0; i < m.dim; ++i)
    for (int64_t j = i; j < m.dim; ++j) {
      double v = s.cov.at(i, j) / static_cast<double>(m.rows - 1);
      s.cov.at(i, j) = v;
      s.cov.at(j, i) = v;
    }
  return s;
}

double frechet_distance(const FrechetStats& s1, const FrechetStats& s2) {
  if (s1.dim != s2.dim) throw_shape("frechet_distance: dimension mismatch");
  double mean_term = 0;
  for (int64_t i = 0; i < s1.dim; ++i) {
    double d = s1.mean[static_cast<size_t>(i)] - s2.mean[static_cast<size_t>(i)];
    mean_term += d * d;
  }
  MatD root1 = sqrtm_spd(s1.cov);
  MatD mid = matmul(matmul(root1, s2.cov), root1);
  for (int64_t i = 0; i < mid.rows; ++i)
    for (int64_t j = i + 1; j < mid.cols; ++j) {
      double v = 0.5 * (mid.at(i, j) + mid.at(j, i));
      mid.at(i, j) = v;
      mid.at(j, i) = v;
    }
  MatD mid_root = sqrtm_spd(mid);
  double tr = 0;
  for (int64_t i = 0; i < s1.dim; ++i)
    tr += s1.cov.at(i, i) + s2.cov.at(i, i) - 2.0 * mid_root.at(i, i);
  double d = mean_term + tr;
  if (d < -1e-6) throw_numeric("frechet_distance: negative value " + std::to_string(d));
  return d < 0 ? 0.0 : d;
}

InceptionScore inception_score(const std::vector<std::array<double, 8>>& probs, int splits) {
  if (probs.empty()) throw_value("inception_score: no rows");
  for (const auto& row : probs) {
    double s = 0;
    for (double v : row) {
      if (v < -1e-12) throw_value("inception_score: negative probability");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6)
      throw_value("inception_score: row sums to " + std::to_string(s) + ", expected 1");
  }
  int n = static_cast<int>(probs.size());
  splits = std::max(1, std::min(splits, n));
  std::vector<double> scores;
  for (int s = 0; s < splits; ++s) {
    int lo = static_cast<int>(static_cast<int64_t>(s) * n / splits);
    int hi = static_cast<int>(static_cast<int64_t>(s + 1) * n / splits);
    if (hi <= lo) continue;
    std::array<double, 8> marginal{};
    for (int i = lo; i < hi; ++i)
      for (int c = 0; c < 8; ++c) marginal[static_cast<size_t>(c)] += probs[static_cast<size_t>(i)][static_cast<size_t>(c)];
    for (double& v : marginal) v /= static_cast<double>(hi - lo);
    double mean_kl = 0;
    for (int i = lo; i < hi; ++i) {
      double kl = 0;
      for (int c = 0; c < 8; ++c) {
        double p = probs[static_cast<size_t>(i)][static_cast<size_t>(c)];
        if (p > 0) kl += p * std::log(p / marginal[static_cast<size_t>(c)]);
      }
      mean_kl += kl;
    }
    scores.push_back(std::exp(mean_kl / static_cast<double>(hi - lo)));
  }
  InceptionScore out;
  for (double v : scores) out.mean += v;
  out.mean /= static_cast<double>(scores.size());
  if (scores.size() > 1) {
    double var = 0;
    for (double v : scores) var += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(var / static_cast<double>(scores.size() - 1));
  }
  return out;
}

namespace {

double f1(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.empty() && b.empty()) return 1.0;
  int inter = 0;
  for (int x : a)
    for (int y : b)
      if (x == y) ++inter;
  if (a.empty() || b.empty()) return 0.0;
  return 2.0 * inter / static_cast<double>(a.size() + b.size());
}

}  // namespace

double alignment_score(const std::vector<std::vector<int>>& prompted,
                       const std::vector<std::vector<int>>& detected) {
  if (prompted.size() != detected.size() || prompted.empty())
    throw_value("alignment_score: paired lists required");
  double acc = 0;
  for (size_t i = 0; i < prompted.size(); ++i) acc += f1(prompted[i], detected[i]);
  return 100.0 * acc / static_cast<double>(prompted.size());
}

PermutationTest alignment_permutation_test(const std::vector<std::vector<int>>& prompted,
                                           const std::vector<std::vector<int>>& detected,
                                           int n_perm, Rng& rng) {
  PermutationTest out;
  out.matched = alignment_score(prompted, detected);
  std::vector<size_t> perm(detected.size());
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  int at_least = 0;
  double acc = 0;
  for (int p = 0; p < n_perm; ++p) {
    for (size_t i = perm.size(); i > 1; --i)
      std::swap(perm[i - 1], perm[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
    std::vector<std::vector<int>> shuffled(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) shuffled[i] = detected[perm[i]];
    double s = alignment_score(prompted, shuffled);
    acc += s;
    if (s >= out.matched) ++at_least;
  }
  out.shuffled_mean = acc / std::max(1, n_perm);
  out.p_value = (1.0 + at_least) / (n_perm + 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// report formatting

namespace {

std::string opt_str(const std::optional<double>& v, int prec) {
  return v ? fmt_double(*v, prec) : std::string("—");
}

}  // namespace

std::string metric_report_csv(const std::vector<MetricReport>& rows) {
  std::string out =
      "mode,model,params_m,resolution,fid,fvd_f16,fvd_f128,is_mean,is_std,alignment,n_real,n_gen\n";
  for (const auto& r : rows) {
    out += r.mode + "," + r.model + "," + fmt_double(r.params_m, 2) + "," + r.resolution + ",";
    out += opt_str(r.fid, 4) + "," + opt_str(r.fvd_f16, 4) + "," + opt_str(r.fvd_f128, 4) + ",";
    out += fmt_double(r.is.mean, 4) + "," + fmt_double(r.is.std, 4) + ",";
    out += opt_str(r.alignment, 4) + ",";
    out += std::to_string(r.n_real) + "," + std::to_string(r.n_gen) + "\n";
  }
  return out;
}

std::string metric_report_table(const std::vector<MetricReport>& rows) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%-11s %-6s %-10s %-12s %-10s %-10s %-10s %-14s %-8s\n",
                "Inference", "Model", "Params(M)", "Resolution", "FID", "FVD_f16", "FVD_f128",
                "IS", "Align");
  out += buf;
  for (const auto& r : rows) {
    std::string is_str = fmt_double(r.is.mean, 2) + "+/-" + fmt_double(r.is.std, 2);
    std::snprintf(buf, sizeof(buf), "%-11s %-6s %-10.2f %-12s %-10s %-10s %-10s %-14s %-8s\n",
                  r.mode.c_str(), r.model.c_str(), r.params_m, r.resolution.c_str(),
                  opt_str(r.fid, 2).c_str(), opt_str(r.fvd_f16, 2).c_str(),
                  opt_str(r.fvd_f128, 2).c_str(), is_str.c_str(),
                  opt_str(r.alignment, 2).c_str());
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// evaluate

namespace {

struct ResolutionSpec {
  bool upscaled = false;
  UpscaleMode mode = UpscaleMode::Bilinear;
};

ResolutionSpec parse_resolution(const std::string& s) {
  ResolutionSpec spec;
  if (s == "native") return spec;
  if (s.rfind("x2:", 0) == 0) {
    spec.upscaled = true;
    spec.mode = parse_upscale_mode(s.substr(3));
    return spec;
  }
  throw_value("unknown resolution '" + s + "' (native|x2:bilinear|x2:bicubic|x2:nearest)");
}

std::vector<SliceImage> maybe_upscale(std::vector<SliceImage> slices, const ResolutionSpec& spec) {
  if (!spec.upscaled) return slices;
  for (auto& s : slices) s = upscale(s, 2, spec.mode);
  return slices;
}

}  // namespace

MetricReport evaluate(const Checkpoint& ckpt, const Dataset& validation,
                      const EvaluateOptions& opts, EvalDetail* detail) {
  const ResolutionSpec res_spec = parse_resolution(opts.resolution);
  if (ckpt.meta.codec_seed != validation.codec_seed)
    throw_data("evaluate: checkpoint codec seed does not match the validation set");
  if (validation.latents.empty())
    throw_data("evaluate: validation latents not loaded");
  const int total = static_cast<int>(validation.records.size());
  const int k = opts.n_volumes > 0 ? std::min(opts.n_volumes, total) : total;
  if (k < 2) throw_usage("evaluate: need at least 2 validation volumes");

  const CodecBasis basis = ckpt.meta.make_basis();
  const FeatureNet net = make_feature_net(ckpt.meta.feature_seed);
  const SamplerConfig sampler_cfg{opts.euler_steps};
  const ProbeCalibration& calib = ckpt.meta.probe_calib;

  FeatureMatrix real_slice, real_f16, real_f128;
  FeatureMatrix gen_slice, gen_f16, gen_f128;
  std::vector<std::array<double, 8>> gen_probs;
  std::vector<std::vector<int>> prompted, detected;
  EvalDetail local_detail;
  int64_t real_with_128 = 0, gen_with_128 = 0;

  for (int i = 0; i < k; ++i) {
    // real side: phantom re-rendered from the manifest record
    PhantomSpec spec = validation.phantom_spec(static_cast<size_t>(i));
    Volume real = generate_phantom(spec);
    std::vector<SliceImage> real_px = maybe_upscale(std::move(real.slices), res_spec);
    append_window_features(real_slice, net, real_px, FeatureWindow::Slice, opts.threads);
    append_window_features(real_f16, net, real_px, FeatureWindow::F16, opts.threads);
    if (static_cast<int>(real_px.size()) >= 128) ++real_with_128;
    append_window_features(real_f128, net, real_px, FeatureWindow::F128, opts.threads);

    // generated side
    const Report& report = validation.records[static_cast<size_t>(i)].report;
    const TextEmbedding& text = validation.embeddings[static_cast<size_t>(i)];
    Rng rng = Rng::derive(opts.seed, 0xE7A1ULL + static_cast<uint64_t>(i));
    std::vector<LatentSlice> gen_latents;
    std::string stop = "-";
    if (opts.mode == InferenceMode::NextBlock) {
      const auto& gt = validation.latents[static_cast<size_t>(i)];
      auto preds = next_block_eval(ckpt.params, gt, text, sampler_cfg, rng.next_u64(),
                                   opts.threads);
      // keep predictions whose targets lie fully inside the volume
      int n_gt = static_cast<int>(gt.size());
      for (size_t b = 0; b < preds.size(); ++b) {
        int target_end = (static_cast<int>(b) + 2) * LatentBlock::kSlices;
        if (target_end > n_gt) break;
        for (const auto& s : preds[b].slices) gen_latents.push_back(s);
      }
    } else {
      LatentBlock head;
      const LatentBlock* head_ptr = nullptr;
      if (opts.mode == InferenceMode::GTHead) {
        const auto& gt = validation.latents[static_cast<size_t>(i)];
        head = LatentBlock(std::vector<LatentSlice>(gt.begin(), gt.begin() + LatentBlock::kSlices));
        head_ptr = &head;
      }
      GeneratedVolume gv =
          generate_volume(model_block_generator(ckpt.params, sampler_cfg), report, text,
                          opts.mode, basis, validation.latent_h, validation.latent_w, head_ptr,
                          rng);
      gen_latents = std::move(gv.latents);
      stop = gv.trace.stop_reason == StopReason::WhiteSentinel ? "white_sentinel" : "block_cap";
    }

    local_detail.requested_lengths.push_back(report.length_slices);
    local_detail.generated_lengths.push_back(static_cast<int>(gen_latents.size()));
    local_detail.stop_reasons.push_back(stop);
    prompted.push_back(report.findings);
    if (gen_latents.empty()) {
      detected.push_back({});
      gen_probs.push_back({0, 0, 0, 0, 0, 0, 0, 1.0});
      continue;
    }
    std::vector<SliceImage> gen_px = maybe_upscale(decode_volume(gen_latents, basis), res_spec);
    append_window_features(gen_slice, net, gen_px, FeatureWindow::Slice, opts.threads);
    append_window_features(gen_f16, net, gen_px, FeatureWindow::F16, opts.threads);
    if (static_cast<int>(gen_px.size()) >= 128) ++gen_with_128;
    append_window_features(gen_f128, net, gen_px, FeatureWindow::F128, opts.threads);
    std::array<double, 8> probe = probe_findings(gen_px, calib);
    detected.push_back(detect_findings(probe));
    gen_probs.push_back(probe_class_probs(probe, calib));
  }

  MetricReport report;
  report.mode = inference_mode_name(opts.mode);
  report.model = ckpt.config.model;
  report.params_m = static_cast<double>(ckpt.params.count()) / 1e6;
  report.resolution = opts.resolution;
  report.n_real = k;
  report.n_gen = k;
  if (real_slice.rows >= 2 && gen_slice.rows >= 2)
    report.fid = frechet_distance(fit_stats(real_slice), fit_stats(gen_slice));
  if (real_f16.rows >= 2 && gen_f16.rows >= 2)
    report.fvd_f16 = frechet_distance(fit_stats(real_f16), fit_stats(gen_f16));
  if (real_f128.rows >= 2 && gen_f128.rows >= 2 && real_with_128 > 0 && gen_with_128 > 0)
    report.fvd_f128 = frechet_distance(fit_stats(real_f128), fit_stats(gen_f128));
  report.is = inception_score(gen_probs);
  report.alignment = alignment_score(prompted, detected);
  local_detail.prompted = std::move(prompted);
  local_detail.detected = std::move(detected);
  if (detail) *detail = std::move(local_detail);
  return report;
}

}  // namespace volflow
