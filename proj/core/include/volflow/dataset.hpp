#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "volflow/codec.hpp"
#include "volflow/phantom.hpp"
#include "volflow/text.hpp"

namespace volflow {

// On-disk dataset layout (one directory):
//   volume_NNNN.ctfl   latent cache, one file per volume
//   manifest.tsv       volume_id, length, findings, latent file, report
//   reports.txt        rendered reports, one per line
//   embeddings.bin     precomputed text embeddings
//   calibration.txt    channel scale, probe calibration, feature seed
//   dataset.meta       seeds and extents
//
// Latent files: magic "CTFL", version u32, codec seed u64, ndim u32,
// extents u32[ndim] = [N,16,h',w'], dtype u8 (0 = float32), then
// contiguous little-endian latent data slice by slice (CHW per slice).

inline constexpr uint64_t kDefaultCodecSeed = 0xC0DECULL;
inline constexpr uint64_t kDefaultEmbedSeed = 0x7E87ULL;
inline constexpr uint64_t kDefaultFeatureSeed = 17;

void write_latent_volume(const std::string& path, const std::vector<LatentSlice>& latents,
                         uint64_t codec_seed);
std::vector<LatentSlice> read_latent_volume(const std::string& path,
                                            uint64_t* codec_seed_out = nullptr);

// Per-channel scale making latent channels unit variance over a fixed
// seeded phantom corpus; depends only on the codec seed.
std::vector<double> calibrate_channel_scale(const CodecBasis& unscaled_basis);

struct BuildDatasetOptions {
  int n_volumes = 100;
  uint64_t seed = 0;
  std::string out_dir;
  int resolution = 64;
  int min_length = 32, max_length = 128;
  uint64_t codec_seed = kDefaultCodecSeed;
  uint64_t embed_seed = kDefaultEmbedSeed;
  uint64_t feature_seed = kDefaultFeatureSeed;
  bool force = false;
  int threads = 1;
};

struct DatasetRecord {
  std::string id;
  int length = 0;
  Report report;
  std::string latent_file;
};

struct Dataset {
  std::string dir;
  uint64_t seed = 0, codec_seed = 0, embed_seed = 0, feature_seed = 0;
  int resolution = 0, latent_h = 0, latent_w = 0;
  int min_length = 0, max_length = 0;
  std::vector<DatasetRecord> records;
  std::vector<TextEmbedding> embeddings;
  std::vector<std::vector<LatentSlice>> latents;  // empty unless loaded eagerly
  CodecBasis basis;  // channel_scale applied
  SentinelSlices sentinels;
  ProbeCalibration probe_calib;

  // Phantom spec for a record, reproducing the generated volume exactly.
  PhantomSpec phantom_spec(size_t index) const;
};

void build_dataset(const BuildDatasetOptions& opts);
Dataset load_dataset(const std::string& dir, bool load_latents);

}  // namespace volflow
