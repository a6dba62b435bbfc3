#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "volflow/common.hpp"
#include "volflow/linalg.hpp"

namespace volflow {

// Deterministic linear patch codec standing in for a learned autoencoder:
// each non-overlapping 8x8x3 pixel patch is flattened to a 192-vector and
// projected onto the first 16 rows of a seeded orthonormal basis, giving a
// 16-channel latent at 1/8 spatial resolution. Decoding is the transposed
// projection (zero-filled dropped coefficients) followed by clamping.

struct SliceImage {
  static constexpr int kChannels = 3;
  int height = 0, width = 0;
  std::vector<float> pixels;  // HWC row-major, values in [0,1]

  SliceImage() = default;
  SliceImage(int h, int w, float fill = 0.0f)
      : height(h), width(w), pixels(static_cast<size_t>(h) * w * kChannels, fill) {}

  float& at(int y, int x, int c) {
    return pixels[(static_cast<size_t>(y) * width + x) * kChannels + c];
  }
  float at(int y, int x, int c) const {
    return pixels[(static_cast<size_t>(y) * width + x) * kChannels + c];
  }
};

struct LatentSlice {
  static constexpr int kChannels = 16;
  int height = 0, width = 0;  // pixel extents / 8
  std::vector<float> values;  // CHW row-major

  LatentSlice() = default;
  LatentSlice(int h, int w) : height(h), width(w), values(static_cast<size_t>(kChannels) * h * w) {}

  float& at(int c, int y, int x) {
    return values[(static_cast<size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return values[(static_cast<size_t>(c) * height + y) * width + x];
  }
};

// The autoregressive unit: exactly 16 consecutive latent slices.
struct LatentBlock {
  static constexpr int kSlices = 16;
  std::vector<LatentSlice> slices;

  LatentBlock() = default;
  explicit LatentBlock(std::vector<LatentSlice> s) : slices(std::move(s)) {
    if (slices.size() != kSlices)
      throw_shape("latent block must hold exactly 16 slices, got " +
                  std::to_string(slices.size()));
  }
};

struct CodecBasis {
  static constexpr int kPatchDim = 192;  // 8*8*3
  static constexpr int kKeptRows = 16;

  uint64_t seed = 0;
  MatD q;  // 192x192, orthonormal rows
  std::vector<double> channel_scale;  // per latent channel, defaults to 1
};

// Orthonormalizes a seeded 192x192 matrix whose first rows are smooth patch
// modes (constant + low-order cosines) and the rest seeded noise; same seed
// gives a bit-identical basis.
CodecBasis build_basis(uint64_t seed);

LatentSlice encode_slice(const SliceImage& img, const CodecBasis& basis);
SliceImage decode_slice(const LatentSlice& latent, const CodecBasis& basis);

std::vector<LatentSlice> encode_volume(const std::vector<SliceImage>& volume,
                                       const CodecBasis& basis);
std::vector<SliceImage> decode_volume(const std::vector<LatentSlice>& latents,
                                      const CodecBasis& basis);

struct SentinelSlices {
  LatentSlice black;  // encode of an all-zero slice
  LatentSlice white;  // encode of an all-one slice
};

SentinelSlices sentinel_slices(const CodecBasis& basis, int latent_h, int latent_w);
std::pair<LatentBlock, LatentBlock> sentinel_blocks(const CodecBasis& basis, int latent_h,
                                                    int latent_w);

enum class UpscaleMode { Bilinear, Bicubic, Nearest };

UpscaleMode parse_upscale_mode(const std::string& name);
const char* upscale_mode_name(UpscaleMode mode);

// Factor-2 interpolation with the align-corners-false convention.
SliceImage upscale(const SliceImage& img, int factor, UpscaleMode mode);

// Storage ratio of 1-byte pixels over latents of the given element width.
double compression_report(const Shape& pixel_shape, const Shape& latent_shape,
                          int latent_dtype_bytes);

float mean_pixel(const SliceImage& img);
double volume_psnr(const std::vector<SliceImage>& a, const std::vector<SliceImage>& b);

}  // namespace volflow
