#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "volflow/flow.hpp"

namespace volflow {

// Block-level autoregression: start from the black sentinel (or a real
// head block), sample one 16-slice latent block at a time conditioned on
// the previous block and the text, stop when a decoded slice reads as
// white or when the block cap is reached.

enum class InferenceMode { FullBody, GTHead, NextBlock };

InferenceMode parse_inference_mode(const std::string& name);
const char* inference_mode_name(InferenceMode mode);

enum class StopReason { WhiteSentinel, BlockCap };

struct GenerationTrace {
  std::vector<LatentBlock> blocks;   // generated blocks, in order
  StopReason stop_reason = StopReason::BlockCap;
  std::vector<double> white_scores;  // per block: max slice mean decoded pixel
  int first_white_block = -1;
  int first_white_slice = -1;
};

// Pluggable one-block generator, so the stop protocol can be driven by
// stubs in tests as well as by the trained model.
using BlockGenerator =
    std::function<LatentBlock(const LatentBlock& cond, const TextEmbedding& text, Rng& rng)>;

BlockGenerator model_block_generator(const ModelParams& params, const SamplerConfig& config);

// Draw x1 ~ N(0,I) and Euler-sample one block conditioned on (cond, text).
LatentBlock generate_next(const ModelParams& params, const LatentBlock& cond,
                          const TextEmbedding& text, const SamplerConfig& config, Rng& rng);

struct EndDetection {
  bool is_end = false;
  int first_white_index = -1;  // first slice whose mean decoded pixel > 0.9
  double white_score = 0.0;    // max slice mean decoded pixel
};

EndDetection detect_end(const LatentBlock& block, const CodecBasis& basis);

inline constexpr double kWhiteSliceThreshold = 0.9;

struct GeneratedVolume {
  Volume volume;           // decoded pixels, truncated before the first white slice
  GenerationTrace trace;
  std::vector<LatentSlice> latents;  // same slices, latent-space
};

// FullBody: conditioning starts at the black sentinel. GTHead: at the
// supplied real head block, which is included in the output. The cap is
// ceil(requested/16)+2 generated blocks.
GeneratedVolume generate_volume(const BlockGenerator& gen, const Report& report,
                                const TextEmbedding& text, InferenceMode mode,
                                const CodecBasis& basis, int latent_h, int latent_w,
                                const LatentBlock* gt_head, Rng& rng);

int block_cap(int requested_length);

// Per-block predictions from real conditioning: for every n with
// 16n+16 <= N, predict the block starting at 16(n+1); targets overlapping
// the end are white-padded, the final prediction being the end block.
// Per-block rng streams derive from `seed`, so evaluation order is
// irrelevant.
std::vector<LatentBlock> next_block_eval(const ModelParams& params,
                                         const std::vector<LatentSlice>& gt_latents,
                                         const TextEmbedding& text, const SamplerConfig& config,
                                         uint64_t seed, int threads = 1);

}  // namespace volflow
