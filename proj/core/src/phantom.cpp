#include "volflow/phantom.hpp"

#include <algorithm>
#include <cmath>

namespace volflow {

namespace {

// Per-volume anatomy parameters, derived once from the spec seed so that
// any slice can be rendered independently.
struct Anatomy {
  double bx0, bxg, by0, byg;      // body semi-axes: base + growth along z
  double lung_du, lung_su, lung_sv;
  double heart_u, heart_v, heart_su, heart_sv, heart_scale;
  double nod_u, nod_v, nod_z, nod_r, nod_dz;
  bool nodule = false, effusion = false, cardiomegaly = false, emphysema = false;
  bool consolidation = false, atelectasis = false, fibrosis = false;
  uint64_t cell_seed = 0;
};

Anatomy make_anatomy(const PhantomSpec& spec) {
  Rng rng = Rng::derive(spec.seed, 0xA7A70ULL);
  auto jit = [&](double amp) { return 1.0 + amp * (2.0 * rng.uniform() - 1.0); };

  Anatomy a;
  a.bx0 = 0.60 * jit(0.025);
  a.bxg = 0.26 * jit(0.05);
  a.by0 = 0.46 * jit(0.025);
  a.byg = 0.20 * jit(0.05);
  a.lung_du = 0.42 * jit(0.025);
  a.lung_su = 0.30 * jit(0.04);
  a.lung_sv = 0.50 * jit(0.04);
  a.heart_u = -0.06 + 0.012 * (2.0 * rng.uniform() - 1.0);
  a.heart_v = 0.06 + 0.012 * (2.0 * rng.uniform() - 1.0);
  a.heart_su = 0.17 * jit(0.04);
  a.heart_sv = 0.14 * jit(0.04);
  a.heart_scale = 1.0;
  a.nod_u = 0.38 + 0.03 * (2.0 * rng.uniform() - 1.0);
  a.nod_v = -0.10 + 0.03 * (2.0 * rng.uniform() - 1.0);
  a.nod_z = 0.50 + 0.05 * (2.0 * rng.uniform() - 1.0);
  a.nod_r = 0.17 * jit(0.08);
  a.nod_dz = 0.18;
  a.cell_seed = rng.next_u64();

  for (int f : spec.findings) {
    switch (f) {
      case 0: a.nodule = true; break;
      case 1: a.effusion = true; break;
      case 2: a.cardiomegaly = true; a.heart_scale = 1.5; break;
      case 3: a.emphysema = true; break;
      case 4: a.consolidation = true; break;
      case 5: a.atelectasis = true; break;
      case 6: a.fibrosis = true; break;
      default: break;  // normal
    }
  }
  return a;
}

uint64_t cell_hash(uint64_t seed, uint64_t a, uint64_t b, uint64_t c) {
  uint64_t z = seed ^ (a * 0x9e3779b97f4a7c15ULL) ^ (b * 0xc2b2ae3d27d4eb4fULL) ^
               (c * 0x165667b19e3779f9ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline bool in_ellipse(double u, double v, double cu, double cv, double su, double sv) {
  if (su <= 0 || sv <= 0) return false;
  double du = (u - cu) / su, dv = (v - cv) / sv;
  return du * du + dv * dv <= 1.0;
}

}  // namespace

SliceImage render_phantom_slice(const PhantomSpec& spec, int slice_index) {
  if (spec.resolution <= 0 || spec.resolution % 8 != 0)
    throw_shape("phantom: resolution must be positive and divisible by 8");
  if (spec.length_slices < 1) throw_value("phantom: length must be positive");
  const Anatomy a = make_anatomy(spec);
  const int res = spec.resolution;
  const int n = spec.length_slices;
  const int k = slice_index;
  const double z = n > 1 ? static_cast<double>(k) / (n - 1) : 0.0;

  const double ax = a.bx0 + a.bxg * z;  // grows toward the caudal end
  const double ay = a.by0 + a.byg * z;
  double lp = std::clamp((z - 0.02) / 0.96, 0.0, 1.0);
  lp = std::pow(std::sin(M_PI * lp), 0.35);

  const double lung_cu = a.lung_du * ax;
  const double lung_cv = -0.10;
  const double lung_su = a.lung_su * ax * lp;
  const double lung_sv = a.lung_sv * ay * lp;
  // atelectasis: collapsed left lung, pulled toward the midline
  const double lsu = a.atelectasis ? lung_su * 0.30 : lung_su;
  const double lsv = a.atelectasis ? lung_sv * 0.30 : lung_sv;
  const double lcu = a.atelectasis ? -0.62 * a.lung_du * ax : -lung_cu;

  double hp = 0.0;
  if (z > 0.22 && z < 0.78) hp = std::sin(M_PI * (z - 0.22) / 0.56);
  const double hsu = a.heart_su * a.heart_scale * (0.55 + 0.45 * hp);
  const double hsv = a.heart_sv * a.heart_scale * (0.55 + 0.45 * hp);

  const double lung_i = a.emphysema ? 0.08f : 0.20f;
  const bool effusion_here = a.effusion && z > 0.72;
  const bool consolidation_here = a.consolidation && z >= 0.30 && z <= 0.70;
  const double nod_rel = (z - a.nod_z) / a.nod_dz;
  const double nod_r_here =
      (a.nodule && std::abs(nod_rel) < 1.0) ? a.nod_r * std::sqrt(1.0 - nod_rel * nod_rel) : 0.0;

  SliceImage img(res, res);
  for (int y = 0; y < res; ++y) {
    const double v = (y + 0.5) / res * 2.0 - 1.0;
    for (int x = 0; x < res; ++x) {
      const double u = (x + 0.5) / res * 2.0 - 1.0;
      double val = 0.0;
      if (in_ellipse(u, v, 0.0, 0.02, ax, ay)) {
        val = 0.5;
        bool in_left = in_ellipse(u, v, lcu, lung_cv, lsu, lsv);
        bool in_right = in_ellipse(u, v, lung_cu, lung_cv, lung_su, lung_sv);
        if (in_left || in_right) val = lung_i;
        if (hp > 0 && in_ellipse(u, v, a.heart_u, a.heart_v, hsu, hsv)) val = 0.62;
        if (in_ellipse(u, v, 0.0, 0.33, 0.085, 0.085)) val = 0.80;

        if (consolidation_here && in_left) {
          // chunky patches on a 4x4 cell grid, static along the axis so
          // the pattern is inferable from the previous block
          uint64_t cx = static_cast<uint64_t>(x * 4 / res);
          uint64_t cy = static_cast<uint64_t>(y * 4 / res);
          if (cell_hash(a.cell_seed, cx, cy, 1) & 1) val = 0.68;
        }
        if (a.fibrosis && (in_left || in_right)) {
          // 4-pixel cells (at the 64 base resolution): coarse enough to
          // survive the codec's low-order patch modes
          int xc = x * 16 / res, yc = y * 16 / res;
          val += ((xc + yc + k) & 1) ? 0.16 : -0.16;
        }
        if (effusion_here && v > -0.02) {
          // basal pool: full-size lung footprint, independent of the taper
          double su_eff = a.lung_su * ax * 0.75, sv_eff = a.lung_sv * ay * 0.75;
          if (in_ellipse(u, v, lung_cu, lung_cv, su_eff, sv_eff) ||
              in_ellipse(u, v, -lung_cu, lung_cv, su_eff, sv_eff))
            val = 0.88;
        }
        if (nod_r_here > 0) {
          double du = u - a.nod_u, dv = v - a.nod_v;
          if (du * du + dv * dv <= nod_r_here * nod_r_here) val = 0.95;
        }
      }
      float f = static_cast<float>(std::clamp(val, 0.0, 1.0));
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = f;
    }
  }
  return img;
}

Volume generate_phantom(const PhantomSpec& spec) {
  Volume vol;
  vol.report.findings = spec.findings;
  std::sort(vol.report.findings.begin(), vol.report.findings.end());
  vol.report.length_slices = spec.length_slices;
  validate_report(vol.report);
  vol.slices.reserve(static_cast<size_t>(spec.length_slices));
  for (int k = 0; k < spec.length_slices; ++k) vol.slices.push_back(render_phantom_slice(spec, k));
  return vol;
}

// ---------------------------------------------------------------------------
// probes

namespace {

struct SliceStats {
  int res = 0;
  std::vector<double> gray;      // channel 0
  std::vector<double> integral;  // (res+1)^2 prefix sums
};

SliceStats slice_stats(const SliceImage& img) {
  SliceStats s;
  s.res = img.width;
  int res = img.width;
  s.gray.resize(static_cast<size_t>(res) * res);
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) s.gray[static_cast<size_t>(y) * res + x] = img.at(y, x, 0);
  s.integral.assign(static_cast<size_t>(res + 1) * (res + 1), 0.0);
  for (int y = 0; y < res; ++y) {
    double rowsum = 0;
    for (int x = 0; x < res; ++x) {
      rowsum += s.gray[static_cast<size_t>(y) * res + x];
      s.integral[static_cast<size_t>(y + 1) * (res + 1) + (x + 1)] =
          s.integral[static_cast<size_t>(y) * (res + 1) + (x + 1)] + rowsum;
    }
  }
  return s;
}

double box_mean(const SliceStats& s, int y, int x, int r) {
  int res = s.res;
  int y0 = std::max(0, y - r), y1 = std::min(res - 1, y + r);
  int x0 = std::max(0, x - r), x1 = std::min(res - 1, x + r);
  const auto& I = s.integral;
  double sum = I[static_cast<size_t>(y1 + 1) * (res + 1) + (x1 + 1)] -
               I[static_cast<size_t>(y0) * (res + 1) + (x1 + 1)] -
               I[static_cast<size_t>(y1 + 1) * (res + 1) + x0] +
               I[static_cast<size_t>(y0) * (res + 1) + x0];
  return sum / ((y1 - y0 + 1) * (x1 - x0 + 1));
}

}  // namespace

// Channel signatures rely on the painter's disjoint intensity bands
// (background 0, lung 0.20 / emphysema 0.08, body 0.50, heart 0.62,
// consolidation 0.68, spine 0.80, effusion 0.88, nodule 0.95, fibrosis =
// lung +-0.16 texture). Channels that must stay meaningful on imperfect
// generated volumes are left/right or basal/mid differentials, so a
// symmetric artifact floor cancels out.
std::array<double, 7> probe_raw(const std::vector<SliceImage>& slices) {
  if (slices.empty()) throw_usage("probe_raw: empty volume");
  const int n = static_cast<int>(slices.size());
  const int res = slices[0].width;
  const int m0 = std::max(0, static_cast<int>(std::lround(0.30 * n)));
  const int m1 = std::min(n, std::max(m0 + 1, static_cast<int>(std::lround(0.70 * n))));
  const int b0 = std::min(n - 1, static_cast<int>(std::lround(0.78 * n)));
  const int r_hp = std::max(1, res / 64);

  auto uu = [&](int x) { return (x + 0.5) / res * 2.0 - 1.0; };
  auto vv = [&](int y) { return (y + 0.5) / res * 2.0 - 1.0; };
  auto in_lung_zone = [&](double u, double v) {
    return std::abs(u) >= 0.14 && std::abs(u) <= 0.70 && v >= -0.58 && v <= 0.40;
  };

  double left_sum = 0, right_sum = 0;
  int64_t left_cnt = 0, right_cnt = 0;
  double bright_mid_sum = 0, bright_basal_sum = 0;
  int64_t bright_mid_cnt = 0, bright_basal_cnt = 0;
  double heart_frac_max = 0.0;
  double dark_sum = 0.0;
  int64_t dark_cnt = 0;
  int64_t consol_left = 0, consol_right = 0;
  double hp_sum = 0.0;
  int64_t hp_cnt = 0;
  int64_t lungish_left = 0, lungish_right = 0;

  for (int k = m0; k < m1; ++k) {
    const SliceImage& img = slices[static_cast<size_t>(k)];
    SliceStats st = slice_stats(img);
    int64_t heart_band = 0, heart_all = 0;
    for (int y = 0; y < res; ++y) {
      double v = vv(y);
      for (int x = 0; x < res; ++x) {
        double u = uu(x);
        double I = st.gray[static_cast<size_t>(y) * res + x];
        if (in_lung_zone(u, v)) {
          bool lung_dark = I > 0.04 && I < 0.45;
          bool consol_like = I >= 0.64 && I <= 0.72;
          if (u < 0) {
            left_sum += I;
            ++left_cnt;
            if (consol_like) ++consol_left;
          } else {
            right_sum += I;
            ++right_cnt;
            if (consol_like) ++consol_right;
          }
          if (I > 0.45) {
            bright_mid_sum += I;
            ++bright_mid_cnt;
          }
          if (lung_dark) {
            dark_sum += I;
            ++dark_cnt;
          }
          if (lung_dark || consol_like) {
            if (u < 0)
              ++lungish_left;
            else
              ++lungish_right;
          }
          // texture energy over strict lung interior: every 3x3 neighbour
          // inside the lung intensity range, away from organ boundaries
          if (y > 0 && y + 1 < res && x > 0 && x + 1 < res) {
            bool interior = true;
            for (int dy = -1; dy <= 1 && interior; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                double nb = st.gray[static_cast<size_t>(y + dy) * res + (x + dx)];
                if (nb <= 0.03 || nb >= 0.48) {
                  interior = false;
                  break;
                }
              }
            if (interior) {
              hp_sum += std::abs(I - box_mean(st, y, x, r_hp));
              ++hp_cnt;
            }
          }
        }
        if (std::abs(u) <= 0.24 && v >= -0.26 && v <= 0.30) {
          ++heart_all;
          if (I >= 0.58 && I <= 0.66) ++heart_band;
        }
      }
    }
    if (heart_all > 0)
      heart_frac_max = std::max(heart_frac_max, static_cast<double>(heart_band) / heart_all);
  }

  for (int k = b0; k < n; ++k) {
    const SliceImage& img = slices[static_cast<size_t>(k)];
    for (int y = 0; y < res; ++y) {
      double v = vv(y);
      if (v < -0.58 || v > 0.40) continue;
      for (int x = 0; x < res; ++x) {
        double u = uu(x);
        if (std::abs(u) < 0.14 || std::abs(u) > 0.70) continue;
        float I = img.at(y, x, 0);
        if (I > 0.45f) {
          bright_basal_sum += I;
          ++bright_basal_cnt;
        }
      }
    }
  }

  double left_mean = left_cnt > 0 ? left_sum / left_cnt : 0.0;
  double right_mean = right_cnt > 0 ? right_sum / right_cnt : 0.0;
  double bright_mid = bright_mid_cnt > 0 ? bright_mid_sum / bright_mid_cnt : 0.5;
  double bright_basal = bright_basal_cnt > 0 ? bright_basal_sum / bright_basal_cnt : 0.5;

  std::array<double, 7> p{};
  p[0] = right_mean - left_mean;      // nodule brightens the right lung zone
  p[1] = bright_basal - bright_mid;   // effusion pools bright basal content
  p[2] = heart_frac_max;
  p[3] = dark_cnt > 0 ? dark_sum / dark_cnt : 0.5;  // emphysema lowers it
  p[4] = (static_cast<double>(consol_left) - consol_right) /
         (static_cast<double>(left_cnt + right_cnt) / 2.0 + 1e-9);
  p[5] = static_cast<double>(std::abs(lungish_left - lungish_right)) /
         (static_cast<double>(lungish_left + lungish_right) + 1e-9);
  p[6] = hp_cnt > 0 ? hp_sum / hp_cnt : 0.0;
  return p;
}

ProbeCalibration calibrate_probes() {
  constexpr uint64_t kCalibSeed = 0xCA11BULL;
  constexpr int kCount = 200;
  std::array<double, 7> pos_sum{}, neg_sum{};
  std::array<int, 7> pos_n{}, neg_n{};
  std::vector<std::array<double, 7>> raws;
  std::vector<int> labels;

  for (int i = 0; i < kCount; ++i) {
    PhantomSpec spec;
    spec.resolution = 64;
    spec.length_slices = 48 + (i % 5) * 16;
    spec.findings = {i % kNumFindings};
    spec.seed = Rng::derive(kCalibSeed, static_cast<uint64_t>(i)).next_u64();
    Volume vol = generate_phantom(spec);
    raws.push_back(probe_raw(vol.slices));
    labels.push_back(i % kNumFindings);
  }
  for (size_t i = 0; i < raws.size(); ++i) {
    for (int c = 0; c < 7; ++c) {
      if (labels[i] == c) {
        pos_sum[static_cast<size_t>(c)] += raws[i][static_cast<size_t>(c)];
        ++pos_n[static_cast<size_t>(c)];
      } else {
        neg_sum[static_cast<size_t>(c)] += raws[i][static_cast<size_t>(c)];
        ++neg_n[static_cast<size_t>(c)];
      }
    }
  }

  ProbeCalibration calib;
  for (int c = 0; c < 7; ++c) {
    calib.pos_mean[static_cast<size_t>(c)] = pos_sum[static_cast<size_t>(c)] / pos_n[static_cast<size_t>(c)];
    calib.neg_mean[static_cast<size_t>(c)] = neg_sum[static_cast<size_t>(c)] / neg_n[static_cast<size_t>(c)];
  }

  // temperature: tempered softmax of the normalized probe should put ~0.85
  // mass on the top class, averaged over the calibration corpus
  auto mean_top_prob = [&](double tau) {
    double acc = 0;
    for (size_t i = 0; i < raws.size(); ++i) {
      std::array<double, 8> norm{};
      double mx = 0;
      for (int c = 0; c < 7; ++c) {
        double denom = calib.pos_mean[static_cast<size_t>(c)] - calib.neg_mean[static_cast<size_t>(c)];
        norm[static_cast<size_t>(c)] =
            (raws[i][static_cast<size_t>(c)] - calib.neg_mean[static_cast<size_t>(c)]) /
            (denom == 0 ? 1.0 : denom);
        mx = std::max(mx, norm[static_cast<size_t>(c)]);
      }
      norm[7] = 1.0 - mx;
      double emax = *std::max_element(norm.begin(), norm.end());
      double z = 0;
      for (double nv : norm) z += std::exp((nv - emax) / tau);
      acc += 1.0 / z;  // exp(0)/z for the max element
    }
    return acc / static_cast<double>(raws.size());
  };
  double lo = 0.02, hi = 2.0;
  for (int it = 0; it < 60; ++it) {
    double mid = 0.5 * (lo + hi);
    if (mean_top_prob(mid) > 0.85)
      lo = mid;  // colder than needed -> warm up
    else
      hi = mid;
  }
  calib.is_temperature = 0.5 * (lo + hi);
  return calib;
}

std::array<double, 8> probe_findings(const std::vector<SliceImage>& slices,
                                     const ProbeCalibration& calib) {
  std::array<double, 7> raw = probe_raw(slices);
  std::array<double, 8> norm{};
  double mx = 0;
  for (int c = 0; c < 7; ++c) {
    double denom = calib.pos_mean[static_cast<size_t>(c)] - calib.neg_mean[static_cast<size_t>(c)];
    norm[static_cast<size_t>(c)] =
        (raw[static_cast<size_t>(c)] - calib.neg_mean[static_cast<size_t>(c)]) /
        (denom == 0 ? 1.0 : denom);
    mx = std::max(mx, norm[static_cast<size_t>(c)]);
  }
  norm[7] = 1.0 - mx;
  return norm;
}

std::vector<int> detect_findings(const std::array<double, 8>& probe) {
  std::vector<int> out;
  for (int c = 0; c < 7; ++c)
    if (probe[static_cast<size_t>(c)] > 0.5) out.push_back(c);
  if (out.empty()) out.push_back(kNormalFinding);
  return out;
}

std::array<double, 8> probe_class_probs(const std::array<double, 8>& probe,
                                        const ProbeCalibration& calib) {
  std::array<double, 8> p{};
  double tau = calib.is_temperature;
  double mx = *std::max_element(probe.begin(), probe.end());
  double z = 0;
  for (int c = 0; c < 8; ++c) {
    p[static_cast<size_t>(c)] = std::exp((probe[static_cast<size_t>(c)] - mx) / tau);
    z += p[static_cast<size_t>(c)];
  }
  for (double& v : p) v /= z;
  return p;
}

// ---------------------------------------------------------------------------
// pair sampling

SamplingRegime::Kind parse_regime(const std::string& name) {
  if (name == "uniform") return SamplingRegime::Kind::Uniform;
  if (name == "startboost") return SamplingRegime::Kind::StartBoost;
  throw_value("unknown sampling regime '" + name + "' (uniform|startboost)");
}

const char* regime_name(SamplingRegime::Kind kind) {
  return kind == SamplingRegime::Kind::Uniform ? "uniform" : "startboost";
}

PairSample sample_pair(const std::vector<LatentSlice>& latent_volume,
                       const SentinelSlices& sentinels, const TextEmbedding& text,
                       const SamplingRegime& regime, Rng& rng) {
  const int64_t n = static_cast<int64_t>(latent_volume.size());
  constexpr int64_t kB = LatentBlock::kSlices;
  if (n < kB)
    throw_usage("sample_pair: volume has " + std::to_string(n) + " slices, needs at least 16");

  bool first = false;
  int64_t start = 0;
  if (regime.kind == SamplingRegime::Kind::StartBoost) {
    if (regime.p_first < 0.0 || regime.p_first > 1.0)
      throw_value("sample_pair: p_first outside [0,1]");
    if (rng.uniform() < regime.p_first)
      first = true;
    else
      start = rng.uniform_int(0, n - kB);
  } else {
    // every pair equally likely: the first pair plus the n-15 interior starts
    int64_t k = rng.uniform_int(0, n - kB + 1);
    if (k == 0)
      first = true;
    else
      start = k - 1;
  }

  PairSample out;
  out.text = text;
  out.is_first = first;
  out.start_index = first ? 0 : start;
  std::vector<LatentSlice> cond, target;
  cond.reserve(kB);
  target.reserve(kB);
  if (first) {
    for (int64_t i = 0; i < kB; ++i) cond.push_back(sentinels.black);
    for (int64_t i = 0; i < kB; ++i) target.push_back(latent_volume[static_cast<size_t>(i)]);
  } else {
    for (int64_t i = start; i < start + kB; ++i)
      cond.push_back(latent_volume[static_cast<size_t>(i)]);
    for (int64_t i = start + kB; i < start + 2 * kB; ++i)
      target.push_back(i < n ? latent_volume[static_cast<size_t>(i)] : sentinels.white);
  }
  out.cond = LatentBlock(std::move(cond));
  out.target = LatentBlock(std::move(target));
  return out;
}

}  // namespace volflow
