#include <cmath>
#include <map>

#include "doctest.h"
#include "test_util.hpp"
#include "volflow/phantom.hpp"

using namespace volflow;

namespace {

Volume make_phantom(int finding, uint64_t seed, int len = 48) {
  PhantomSpec spec;
  spec.resolution = 64;
  spec.length_slices = len;
  spec.findings = {finding};
  spec.seed = seed;
  return generate_phantom(spec);
}

std::vector<LatentSlice> tiny_latent_volume(int n) {
  std::vector<LatentSlice> out;
  for (int i = 0; i < n; ++i) {
    LatentSlice s(1, 1);
    for (int c = 0; c < 16; ++c) s.at(c, 0, 0) = static_cast<float>(i);
    out.push_back(std::move(s));
  }
  return out;
}

SentinelSlices tiny_sentinels() {
  SentinelSlices s;
  s.black = LatentSlice(1, 1);
  s.white = LatentSlice(1, 1);
  for (int c = 0; c < 16; ++c) s.white.at(c, 0, 0) = 999.0f;
  return s;
}

TextEmbedding dummy_text() {
  return embed_report(Report{{kNormalFinding}, 64}, 1);
}

}  // namespace

TEST_CASE("phantom generation is deterministic and in range") {
  Volume a = make_phantom(0, 42);
  Volume b = make_phantom(0, 42);
  REQUIRE(a.slices.size() == b.slices.size());
  for (size_t i = 0; i < a.slices.size(); ++i) CHECK(a.slices[i].pixels == b.slices[i].pixels);
  for (const auto& s : a.slices)
    for (float v : s.pixels) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  Volume c = make_phantom(0, 43);
  CHECK(a.slices[24].pixels != c.slices[24].pixels);
}

TEST_CASE("nodule blob response exceeds normal by a wide margin over seeded pairs") {
  // 50 seeded pairs; the separation must beat 3x the spread of the
  // negative responses
  std::vector<double> pos, neg;
  for (int i = 0; i < 50; ++i) {
    pos.push_back(probe_raw(make_phantom(0, 1000 + static_cast<uint64_t>(i)).slices)[0]);
    neg.push_back(probe_raw(make_phantom(kNormalFinding, 1000 + static_cast<uint64_t>(i)).slices)[0]);
  }
  double mean_pos = 0, mean_neg = 0;
  for (double v : pos) mean_pos += v;
  for (double v : neg) mean_neg += v;
  mean_pos /= 50;
  mean_neg /= 50;
  double sd_neg = 0;
  for (double v : neg) sd_neg += (v - mean_neg) * (v - mean_neg);
  sd_neg = std::sqrt(sd_neg / 49.0);
  CHECK(mean_pos - mean_neg >= 3.0 * (sd_neg + 1e-6));
}

TEST_CASE("calibrated probes detect each finding and stay quiet on normals") {
  ProbeCalibration calib = calibrate_probes();
  for (uint64_t seed = 7000; seed < 7004; ++seed) {
    auto normal = probe_findings(make_phantom(kNormalFinding, seed).slices, calib);
    for (int c = 0; c < 7; ++c) CHECK(normal[static_cast<size_t>(c)] <= 0.5);
    CHECK(detect_findings(normal) == std::vector<int>{kNormalFinding});

    for (int f = 0; f < 7; ++f) {
      auto probe = probe_findings(make_phantom(f, seed).slices, calib);
      CHECK(probe[static_cast<size_t>(f)] > 0.5);
      auto det = detect_findings(probe);
      CHECK(std::find(det.begin(), det.end(), f) != det.end());
    }
  }
}

TEST_CASE("probe detection is invariant to small intensity jitter") {
  ProbeCalibration calib = calibrate_probes();
  Rng rng(77);
  for (int f : {0, 3, kNormalFinding}) {
    Volume v = make_phantom(f, 31337);
    auto before = detect_findings(probe_findings(v.slices, calib));
    for (auto& s : v.slices)
      for (auto& px : s.pixels)
        px = std::clamp(px + static_cast<float>(rng.uniform(-0.0099, 0.0099)), 0.0f, 1.0f);
    auto after = detect_findings(probe_findings(v.slices, calib));
    CHECK(before == after);
  }
}

TEST_CASE("sample_pair: first pair and white padding rules") {
  auto vol = tiny_latent_volume(64);
  auto sent = tiny_sentinels();
  auto text = dummy_text();
  Rng rng(5);
  SamplingRegime boost{SamplingRegime::Kind::StartBoost, 1.0};  // always first
  PairSample first = sample_pair(vol, sent, text, boost, rng);
  CHECK(first.is_first);
  CHECK(first.start_index == 0);
  for (const auto& s : first.cond.slices) CHECK(s.values == sent.black.values);
  for (int i = 0; i < 16; ++i) CHECK(first.target.slices[static_cast<size_t>(i)].values == vol[static_cast<size_t>(i)].values);

  // force the last interior start: target fully past the end -> all white
  SamplingRegime never{SamplingRegime::Kind::StartBoost, 0.0};
  bool saw_tail = false;
  for (int trial = 0; trial < 2000 && !saw_tail; ++trial) {
    PairSample p = sample_pair(vol, sent, text, never, rng);
    CHECK(!p.is_first);
    if (p.start_index == 48) {
      saw_tail = true;
      for (const auto& s : p.target.slices) CHECK(s.values == sent.white.values);
    }
    // cond must always be real slices starting at start_index
    CHECK(p.cond.slices[0].values == vol[static_cast<size_t>(p.start_index)].values);
  }
  CHECK(saw_tail);

  CHECK_THROWS_AS(sample_pair(tiny_latent_volume(15), sent, text, never, rng), Error);
}

TEST_CASE("StartBoost first-pair frequency is 0.300 +/- 0.01 over 100k draws") {
  auto vol = tiny_latent_volume(64);
  auto sent = tiny_sentinels();
  auto text = dummy_text();
  SamplingRegime boost{SamplingRegime::Kind::StartBoost, 0.30};
  Rng rng(99);
  int first = 0;
  const int kDraws = 100000;
  for (int i = 0; i < kDraws; ++i)
    if (sample_pair(vol, sent, text, boost, rng).is_first) ++first;
  double freq = static_cast<double>(first) / kDraws;
  CHECK(freq == doctest::Approx(0.300).epsilon(0.0334));  // 0.300 +/- 0.01
  CHECK(std::abs(freq - 0.300) <= 0.01);
}

TEST_CASE("Uniform regime start histogram passes a chi-square test at alpha=0.01") {
  const int n = 64;
  auto vol = tiny_latent_volume(n);
  auto sent = tiny_sentinels();
  auto text = dummy_text();
  SamplingRegime uniform{SamplingRegime::Kind::Uniform, 0.0};
  Rng rng(123);
  const int categories = (n - 16 + 1) + 1;  // interior starts + the first pair
  std::vector<int64_t> hist(static_cast<size_t>(categories), 0);
  const int kDraws = 100000;
  for (int i = 0; i < kDraws; ++i) {
    PairSample p = sample_pair(vol, sent, text, uniform, rng);
    size_t bucket = p.is_first ? 0 : static_cast<size_t>(p.start_index) + 1;
    ++hist[bucket];
  }
  double expect = static_cast<double>(kDraws) / categories;
  double chi2 = 0;
  for (int64_t c : hist) {
    double d = static_cast<double>(c) - expect;
    chi2 += d * d / expect;
  }
  CHECK(chi2 <= chi2_critical(categories - 1, 0.01));
}
