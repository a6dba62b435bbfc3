#include "volflow/codec.hpp"

#include <cmath>

#include "volflow/rng.hpp"

namespace volflow {

CodecBasis build_basis(uint64_t seed) {
  constexpr int kP = CodecBasis::kPatchDim;
  MatD m(kP, kP);

  // Rows 0..15 (the retained sub-basis): the 16 lowest separable cosine
  // modes, replicated across the three channels. Row 0 is the patch mean,
  // which makes the all-zero / all-one sentinel slices decode back to
  // exact black / white; the rest keep smooth content representable, so
  // latents are predictable structure rather than random projections.
  int r = 0;
  for (int order = 0; order <= 6 && r < CodecBasis::kKeptRows; ++order)
    for (int u = 0; u <= order && r < CodecBasis::kKeptRows; ++u) {
      int v = order - u;
      if (u > 3 || v > 3) continue;
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          double f = std::cos(M_PI * u * (y + 0.5) / 8.0) * std::cos(M_PI * v * (x + 0.5) / 8.0);
          for (int c = 0; c < 3; ++c) m.at(r, (y * 8 + x) * 3 + c) = f;
        }
      ++r;
    }

  Rng rng = Rng::derive(seed, 0xba5e5);
  for (; r < kP; ++r)
    for (int k = 0; k < kP; ++k) m.at(r, k) = rng.normal();

  orthonormalize_rows(m);

  CodecBasis basis;
  basis.seed = seed;
  basis.q = std::move(m);
  basis.channel_scale.assign(CodecBasis::kKeptRows, 1.0);
  return basis;
}

static void check_encode_dims(const SliceImage& img) {
  if (img.height <= 0 || img.width <= 0 || img.height % 8 != 0 || img.width % 8 != 0)
    throw_shape("encode_slice: extents " + std::to_string(img.height) + "x" +
                std::to_string(img.width) + " must be positive and divisible by 8");
  if (img.pixels.size() != static_cast<size_t>(img.height) * img.width * SliceImage::kChannels)
    throw_shape("encode_slice: pixel buffer size does not match extents");
}

LatentSlice encode_slice(const SliceImage& img, const CodecBasis& basis) {
  check_encode_dims(img);
  int lh = img.height / 8, lw = img.width / 8;
  LatentSlice out(lh, lw);
  double patch[CodecBasis::kPatchDim];
  for (int py = 0; py < lh; ++py) {
    for (int px = 0; px < lw; ++px) {
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
          for (int c = 0; c < 3; ++c)
            patch[(y * 8 + x) * 3 + c] = img.at(py * 8 + y, px * 8 + x, c);
      for (int ch = 0; ch < CodecBasis::kKeptRows; ++ch) {
        const double* row = basis.q.row(ch);
        double acc = 0;
        for (int k = 0; k < CodecBasis::kPatchDim; ++k) acc += row[k] * patch[k];
        out.at(ch, py, px) = static_cast<float>(acc * basis.channel_scale[static_cast<size_t>(ch)]);
      }
    }
  }
  return out;
}

SliceImage decode_slice(const LatentSlice& latent, const CodecBasis& basis) {
  if (latent.values.size() !=
      static_cast<size_t>(LatentSlice::kChannels) * latent.height * latent.width)
    throw_shape("decode_slice: latent buffer size does not match extents");
  if (latent.height <= 0 || latent.width <= 0)
    throw_shape("decode_slice: latent extents must be positive");
  SliceImage out(latent.height * 8, latent.width * 8);
  double patch[CodecBasis::kPatchDim];
  for (int py = 0; py < latent.height; ++py) {
    for (int px = 0; px < latent.width; ++px) {
      for (int k = 0; k < CodecBasis::kPatchDim; ++k) patch[k] = 0.0;
      for (int ch = 0; ch < CodecBasis::kKeptRows; ++ch) {
        double coeff = static_cast<double>(latent.at(ch, py, px)) /
                       basis.channel_scale[static_cast<size_t>(ch)];
        const double* row = basis.q.row(ch);
        for (int k = 0; k < CodecBasis::kPatchDim; ++k) patch[k] += coeff * row[k];
      }
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
          for (int c = 0; c < 3; ++c) {
            double v = patch[(y * 8 + x) * 3 + c];
            out.at(py * 8 + y, px * 8 + x, c) =
                static_cast<float>(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v));
          }
    }
  }
  return out;
}

std::vector<LatentSlice> encode_volume(const std::vector<SliceImage>& volume,
                                       const CodecBasis& basis) {
  if (volume.empty()) throw_usage("encode_volume: empty volume");
  std::vector<LatentSlice> out;
  out.reserve(volume.size());
  for (const auto& s : volume) out.push_back(encode_slice(s, basis));
  return out;
}

std::vector<SliceImage> decode_volume(const std::vector<LatentSlice>& latents,
                                      const CodecBasis& basis) {
  if (latents.empty()) throw_usage("decode_volume: empty volume");
  std::vector<SliceImage> out;
  out.reserve(latents.size());
  for (const auto& l : latents) out.push_back(decode_slice(l, basis));
  return out;
}

SentinelSlices sentinel_slices(const CodecBasis& basis, int latent_h, int latent_w) {
  SliceImage zeros(latent_h * 8, latent_w * 8, 0.0f);
  SliceImage ones(latent_h * 8, latent_w * 8, 1.0f);
  return SentinelSlices{encode_slice(zeros, basis), encode_slice(ones, basis)};
}

std::pair<LatentBlock, LatentBlock> sentinel_blocks(const CodecBasis& basis, int latent_h,
                                                    int latent_w) {
  SentinelSlices s = sentinel_slices(basis, latent_h, latent_w);
  LatentBlock black(std::vector<LatentSlice>(LatentBlock::kSlices, s.black));
  LatentBlock white(std::vector<LatentSlice>(LatentBlock::kSlices, s.white));
  return {std::move(black), std::move(white)};
}

UpscaleMode parse_upscale_mode(const std::string& name) {
  if (name == "bilinear") return UpscaleMode::Bilinear;
  if (name == "bicubic") return UpscaleMode::Bicubic;
  if (name == "nearest") return UpscaleMode::Nearest;
  throw_value("unknown interpolation mode '" + name + "' (bilinear|bicubic|nearest)");
}

const char* upscale_mode_name(UpscaleMode mode) {
  switch (mode) {
    case UpscaleMode::Bilinear: return "bilinear";
    case UpscaleMode::Bicubic: return "bicubic";
    case UpscaleMode::Nearest: return "nearest";
  }
  return "?";
}

static double cubic_kernel(double t) {
  // Keys kernel, a = -0.75
  constexpr double a = -0.75;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return (((t - 5.0) * t + 8.0) * t - 4.0) * a;
  return 0.0;
}

SliceImage upscale(const SliceImage& img, int factor, UpscaleMode mode) {
  if (factor != 2) throw_value("upscale: only factor 2 is supported");
  check_encode_dims(img);
  int oh = img.height * factor, ow = img.width * factor;
  SliceImage out(oh, ow);
  auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };

  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      if (mode == UpscaleMode::Nearest) {
        int sy = y / factor, sx = x / factor;
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(sy, sx, c);
        continue;
      }
      double fy = (y + 0.5) / factor - 0.5;
      double fx = (x + 0.5) / factor - 0.5;
      if (mode == UpscaleMode::Bilinear) {
        int y0 = static_cast<int>(std::floor(fy)), x0 = static_cast<int>(std::floor(fx));
        double wy = fy - y0, wx = fx - x0;
        int y0c = clampi(y0, 0, img.height - 1), y1c = clampi(y0 + 1, 0, img.height - 1);
        int x0c = clampi(x0, 0, img.width - 1), x1c = clampi(x0 + 1, 0, img.width - 1);
        for (int c = 0; c < 3; ++c) {
          double v = (1 - wy) * ((1 - wx) * img.at(y0c, x0c, c) + wx * img.at(y0c, x1c, c)) +
                     wy * ((1 - wx) * img.at(y1c, x0c, c) + wx * img.at(y1c, x1c, c));
          out.at(y, x, c) = static_cast<float>(v);
        }
      } else {  // bicubic
        int y0 = static_cast<int>(std::floor(fy)), x0 = static_cast<int>(std::floor(fx));
        for (int c = 0; c < 3; ++c) {
          double v = 0;
          for (int dy = -1; dy <= 2; ++dy) {
            double wy = cubic_kernel(fy - (y0 + dy));
            if (wy == 0) continue;
            int yy = clampi(y0 + dy, 0, img.height - 1);
            for (int dx = -1; dx <= 2; ++dx) {
              double wx = cubic_kernel(fx - (x0 + dx));
              if (wx == 0) continue;
              v += wy * wx * img.at(yy, clampi(x0 + dx, 0, img.width - 1), c);
            }
          }
          out.at(y, x, c) = static_cast<float>(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v));
        }
      }
    }
  }
  return out;
}

double compression_report(const Shape& pixel_shape, const Shape& latent_shape,
                          int latent_dtype_bytes) {
  for (int64_t e : pixel_shape)
    if (e <= 0) throw_value("compression_report: pixel extents must be positive");
  for (int64_t e : latent_shape)
    if (e <= 0) throw_value("compression_report: latent extents must be positive");
  if (latent_dtype_bytes <= 0) throw_value("compression_report: dtype bytes must be positive");
  double pixel_bytes = static_cast<double>(numel(pixel_shape));  // 1 byte per pixel element
  double latent_bytes = static_cast<double>(numel(latent_shape)) * latent_dtype_bytes;
  return pixel_bytes / latent_bytes;
}

float mean_pixel(const SliceImage& img) {
  double acc = 0;
  for (float v : img.pixels) acc += v;
  return img.pixels.empty() ? 0.0f : static_cast<float>(acc / img.pixels.size());
}

double volume_psnr(const std::vector<SliceImage>& a, const std::vector<SliceImage>& b) {
  if (a.size() != b.size() || a.empty()) throw_usage("volume_psnr: size mismatch");
  double se = 0;
  size_t n = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].pixels.size() != b[i].pixels.size()) throw_shape("volume_psnr: slice shape mismatch");
    for (size_t k = 0; k < a[i].pixels.size(); ++k) {
      double d = static_cast<double>(a[i].pixels[k]) - b[i].pixels[k];
      se += d * d;
    }
    n += a[i].pixels.size();
  }
  double mse = se / static_cast<double>(n);
  if (mse <= 0) return 99.0;
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace volflow
