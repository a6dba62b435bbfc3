#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "volflow/common.hpp"

namespace volflow {

// Deterministic stand-in for a learned report encoder. Reports are rendered
// from a fixed 8-item finding vocabulary plus a requested slice count, and
// embedded as 192 seeded semantic dims plus 64 sinusoidal length dims,
// L2-normalized. Same report, same seed, same vector.

inline constexpr std::array<const char*, 8> kFindingVocabulary = {
    "nodule",        "effusion",    "cardiomegaly", "emphysema",
    "consolidation", "atelectasis", "fibrosis",     "normal"};
inline constexpr int kNumFindings = 8;
inline constexpr int kNormalFinding = 7;
inline constexpr int kMinReportLength = 16;
inline constexpr int kMaxReportLength = 512;

struct Report {
  std::vector<int> findings;  // canonical (ascending) vocabulary indices, non-empty
  int length_slices = 0;      // in [16, 256]

  bool has(int finding) const {
    for (int f : findings)
      if (f == finding) return true;
    return false;
  }
};

// Throws on unknown names.
int finding_index(const std::string& name);

// Validates invariants: non-empty canonical findings, "normal" exclusive,
// length within range.
void validate_report(const Report& report);

// "Findings: <list>. Impressions: <list>. length of volume: <N>"
std::string render_report(const Report& report);

// Exact inverse of render_report; tolerates extra whitespace.
Report parse_report(const std::string& text);

struct TextEmbedding {
  static constexpr int kDim = 256;
  static constexpr int kSemanticDim = 192;
  static constexpr int kLengthDim = 64;

  std::vector<float> vector;  // unit L2 norm
  uint64_t source_hash = 0;
};

TextEmbedding embed_report(const Report& report, uint64_t seed);

}  // namespace volflow
