#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "volflow/dataset.hpp"
#include "volflow/linalg.hpp"
#include "volflow/sampler.hpp"
#include "volflow/train.hpp"

namespace volflow {

// Evaluation stack: a frozen seeded 3D-conv feature extractor feeding
// Frechet distances (per-slice for FID, per 16/128-slice window for FVD),
// an inception-style diversity score over probe class distributions, and
// an F1-based report alignment score.

struct FeatureNet {
  static constexpr int kFeatureDim = 64;
  struct Conv {
    int in_ch = 0, out_ch = 0;
    std::vector<float> w;  // [out][in][3][3][3]
    std::vector<float> b;
  };
  uint64_t seed = 0;
  std::vector<Conv> convs;  // 3 -> 8 -> 16 -> 32 -> 64, stride 2, tanh
};

// Weights are seeded normals rescaled so each output channel's kernel has
// a fixed L1 norm, bounding the layer's Lipschitz constant.
FeatureNet make_feature_net(uint64_t seed);

enum class FeatureWindow { Slice, F16, F128 };

int feature_window_length(FeatureWindow w);
const char* feature_window_name(FeatureWindow w);

struct FeatureMatrix {
  int64_t dim = FeatureNet::kFeatureDim;
  int64_t rows = 0;
  std::vector<double> data;

  void append(const std::vector<double>& row);
};

// Features of one clip [first, first+len) of a volume.
std::vector<double> clip_features(const FeatureNet& net, const std::vector<SliceImage>& volume,
                                  int first, int len);

// Appends one row per non-overlapping window (from slice 0); volumes
// shorter than the window contribute nothing.
void append_window_features(FeatureMatrix& m, const FeatureNet& net,
                            const std::vector<SliceImage>& volume, FeatureWindow window,
                            int threads = 1);

struct FrechetStats {
  int64_t dim = 0;
  int64_t count = 0;
  std::vector<double> mean;
  MatD cov;  // unbiased (n-1) estimator, symmetric
};

FrechetStats fit_stats(const FeatureMatrix& m);

// ||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2), clamped at the
// -1e-6 numerical floor.
double frechet_distance(const FrechetStats& s1, const FrechetStats& s2);

struct InceptionScore {
  double mean = 0, std = 0;
};

// exp(mean KL(p(y|x) || p(y))) over `splits` consecutive splits.
InceptionScore inception_score(const std::vector<std::array<double, 8>>& probs, int splits = 10);

// Mean F1 between prompted and probe-detected finding sets, x100.
double alignment_score(const std::vector<std::vector<int>>& prompted,
                       const std::vector<std::vector<int>>& detected);

struct PermutationTest {
  double matched = 0;
  double shuffled_mean = 0;
  double p_value = 1.0;
};

PermutationTest alignment_permutation_test(const std::vector<std::vector<int>>& prompted,
                                           const std::vector<std::vector<int>>& detected,
                                           int n_perm, Rng& rng);

// ---------------------------------------------------------------------------
// whole-checkpoint evaluation

struct MetricReport {
  std::string mode, model, resolution;
  double params_m = 0;
  std::optional<double> fid, fvd_f16, fvd_f128;
  InceptionScore is;
  std::optional<double> alignment;
  int64_t n_real = 0, n_gen = 0;
};

std::string metric_report_csv(const std::vector<MetricReport>& rows);
std::string metric_report_table(const std::vector<MetricReport>& rows);

struct EvaluateOptions {
  InferenceMode mode = InferenceMode::NextBlock;
  std::string resolution = "native";  // native | x2:bilinear | x2:bicubic | x2:nearest
  int euler_steps = 50;
  int n_volumes = 0;  // 0 = whole validation set
  uint64_t seed = 0;
  int threads = 1;
};

struct EvalDetail {
  std::vector<int> requested_lengths;
  std::vector<int> generated_lengths;
  std::vector<std::string> stop_reasons;
  std::vector<std::vector<int>> prompted;
  std::vector<std::vector<int>> detected;
};

MetricReport evaluate(const Checkpoint& ckpt, const Dataset& validation,
                      const EvaluateOptions& opts, EvalDetail* detail = nullptr);

}  // namespace volflow
