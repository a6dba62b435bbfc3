#include "volflow/sampler.hpp"

#include <cmath>

#include "volflow/threading.hpp"

namespace volflow {

InferenceMode parse_inference_mode(const std::string& name) {
  if (name == "full-body") return InferenceMode::FullBody;
  if (name == "gt-head") return InferenceMode::GTHead;
  if (name == "next-block") return InferenceMode::NextBlock;
  throw_value("unknown inference mode '" + name + "' (full-body|gt-head|next-block)");
}

const char* inference_mode_name(InferenceMode mode) {
  switch (mode) {
    case InferenceMode::FullBody: return "full-body";
    case InferenceMode::GTHead: return "gt-head";
    case InferenceMode::NextBlock: return "next-block";
  }
  return "?";
}

LatentBlock generate_next(const ModelParams& params, const LatentBlock& cond,
                          const TextEmbedding& text, const SamplerConfig& config, Rng& rng) {
  const ModelConfig& cfg = params.config;
  std::vector<float> cond_chw = block_to_chw(cond);
  size_t n = cond_chw.size();
  std::vector<float> x1(n);
  for (auto& v : x1) v = static_cast<float>(rng.normal());
  std::vector<float> x0 = euler_sample(params, std::move(x1), cond_chw, text, config);
  return chw_to_block(x0, cfg.latent_h, cfg.latent_w);
}

BlockGenerator model_block_generator(const ModelParams& params, const SamplerConfig& config) {
  return [&params, config](const LatentBlock& cond, const TextEmbedding& text, Rng& rng) {
    return generate_next(params, cond, text, config, rng);
  };
}

EndDetection detect_end(const LatentBlock& block, const CodecBasis& basis) {
  EndDetection det;
  for (int i = 0; i < LatentBlock::kSlices; ++i) {
    float m = mean_pixel(decode_slice(block.slices[static_cast<size_t>(i)], basis));
    det.white_score = std::max(det.white_score, static_cast<double>(m));
    if (m > kWhiteSliceThreshold && !det.is_end) {
      det.is_end = true;
      det.first_white_index = i;
    }
  }
  return det;
}

int block_cap(int requested_length) {
  if (requested_length < 1) throw_value("block_cap: requested length must be positive");
  return (requested_length + LatentBlock::kSlices - 1) / LatentBlock::kSlices + 2;
}

GeneratedVolume generate_volume(const BlockGenerator& gen, const Report& report,
                                const TextEmbedding& text, InferenceMode mode,
                                const CodecBasis& basis, int latent_h, int latent_w,
                                const LatentBlock* gt_head, Rng& rng) {
  validate_report(report);
  if (mode == InferenceMode::NextBlock)
    throw_usage("generate_volume: next-block is evaluated via next_block_eval");
  if (mode == InferenceMode::GTHead && gt_head == nullptr)
    throw_usage("generate_volume: gt-head mode needs a ground-truth head block");

  LatentBlock cond;
  std::vector<LatentSlice> head_slices;
  if (mode == InferenceMode::FullBody) {
    cond = sentinel_blocks(basis, latent_h, latent_w).first;
  } else {
    cond = *gt_head;
    head_slices = gt_head->slices;
  }

  const int cap = block_cap(report.length_slices);
  GeneratedVolume out;
  int kept_in_last = LatentBlock::kSlices;
  for (int n = 0; n < cap; ++n) {
    LatentBlock block = gen(cond, text, rng);
    EndDetection det = detect_end(block, basis);
    out.trace.blocks.push_back(block);
    out.trace.white_scores.push_back(det.white_score);
    if (det.is_end) {
      out.trace.stop_reason = StopReason::WhiteSentinel;
      out.trace.first_white_block = n;
      out.trace.first_white_slice = det.first_white_index;
      kept_in_last = det.first_white_index;
      break;
    }
    cond = block;  // chaining: next conditioning is exactly this output
  }
  if (out.trace.first_white_block < 0) out.trace.stop_reason = StopReason::BlockCap;

  out.latents = head_slices;
  for (size_t n = 0; n < out.trace.blocks.size(); ++n) {
    int keep = (n + 1 == out.trace.blocks.size() &&
                out.trace.stop_reason == StopReason::WhiteSentinel)
                   ? kept_in_last
                   : LatentBlock::kSlices;
    for (int i = 0; i < keep; ++i)
      out.latents.push_back(out.trace.blocks[n].slices[static_cast<size_t>(i)]);
  }

  out.volume.report = report;
  if (!out.latents.empty()) out.volume.slices = decode_volume(out.latents, basis);
  return out;
}

std::vector<LatentBlock> next_block_eval(const ModelParams& params,
                                         const std::vector<LatentSlice>& gt_latents,
                                         const TextEmbedding& text, const SamplerConfig& config,
                                         uint64_t seed, int threads) {
  constexpr int kB = LatentBlock::kSlices;
  const int n = static_cast<int>(gt_latents.size());
  if (n < 2 * kB)
    throw_usage("next_block_eval: volume has " + std::to_string(n) + " slices, needs at least 32");

  std::vector<int> starts;  // conditioning block starts; every cond block is fully real
  for (int b = 0; kB * b + kB <= n; ++b) starts.push_back(kB * b);

  std::vector<LatentBlock> preds(starts.size());
  parallel_for(static_cast<int64_t>(starts.size()), threads, [&](int64_t i) {
    int s = starts[static_cast<size_t>(i)];
    std::vector<LatentSlice> cond_slices(gt_latents.begin() + s, gt_latents.begin() + s + kB);
    LatentBlock cond{std::move(cond_slices)};
    Rng rng = Rng::derive(seed, static_cast<uint64_t>(i));
    preds[static_cast<size_t>(i)] = generate_next(params, cond, text, config, rng);
  });
  return preds;
}

}  // namespace volflow
