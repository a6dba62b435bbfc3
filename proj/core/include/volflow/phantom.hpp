#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "volflow/codec.hpp"
#include "volflow/rng.hpp"
#include "volflow/text.hpp"

namespace volflow {

// Procedural chest-like volumes. Anatomy is analytic (ellipses in
// normalized coordinates), so any resolution divisible by 8 renders the
// same content, and the body outline grows monotonically along the axial
// axis so a single slice reveals its relative position in the volume.

struct PhantomSpec {
  int resolution = 64;    // divisible by 8
  int length_slices = 64; // [32, 128] for the toy dataset
  std::vector<int> findings{kNormalFinding};
  uint64_t seed = 0;
};

struct Volume {
  std::vector<SliceImage> slices;
  Report report;
};

Volume generate_phantom(const PhantomSpec& spec);

// Renders a single slice; exposed so evaluation can stream real volumes
// without holding them all in memory.
SliceImage render_phantom_slice(const PhantomSpec& spec, int slice_index);

// ---------------------------------------------------------------------------
// finding probes

// Raw per-finding intensity statistics for the 7 pathological channels.
std::array<double, 7> probe_raw(const std::vector<SliceImage>& slices);

struct ProbeCalibration {
  int version = 1;
  std::array<double, 7> neg_mean{};  // raw probe mean over phantoms without the finding
  std::array<double, 7> pos_mean{};  // raw probe mean over phantoms with the finding
  double is_temperature = 0.25;      // softmax temperature for class probabilities
};

// Deterministic calibration over a fixed internal corpus of 200 phantoms;
// every call returns the same values.
ProbeCalibration calibrate_probes();

// Normalized 8-channel probe vector: pathological channels are affinely
// rescaled so ~0 means calibration-negative and ~1 calibration-positive,
// and channel 7 ("normal") is 1 - max of the others.
std::array<double, 8> probe_findings(const std::vector<SliceImage>& slices,
                                     const ProbeCalibration& calib);

// Channels above 0.5, or {normal} when none fire.
std::vector<int> detect_findings(const std::array<double, 8>& probe);

// Class distribution over the 8 findings via a tempered softmax of the
// normalized probe.
std::array<double, 8> probe_class_probs(const std::array<double, 8>& probe,
                                        const ProbeCalibration& calib);

// ---------------------------------------------------------------------------
// training-pair sampling

struct SamplingRegime {
  enum class Kind { Uniform, StartBoost };
  Kind kind = Kind::Uniform;
  double p_first = 0.30;  // StartBoost only
};

SamplingRegime::Kind parse_regime(const std::string& name);
const char* regime_name(SamplingRegime::Kind kind);

struct PairSample {
  LatentBlock cond;
  LatentBlock target;
  TextEmbedding text;
  bool is_first = false;
  int64_t start_index = 0;  // cond start; 0 for the first pair
};

// Draws one (conditioning, target) block pair. The first pair conditions on
// the black sentinel; targets overlapping the volume end are padded with
// white sentinel slices.
PairSample sample_pair(const std::vector<LatentSlice>& latent_volume,
                       const SentinelSlices& sentinels, const TextEmbedding& text,
                       const SamplingRegime& regime, Rng& rng);

}  // namespace volflow
