#include "volflow/text.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "volflow/rng.hpp"

namespace volflow {

int finding_index(const std::string& name) {
  for (int i = 0; i < kNumFindings; ++i)
    if (name == kFindingVocabulary[static_cast<size_t>(i)]) return i;
  throw Error(ErrorKind::Vocabulary, "unknown finding '" + name + "'");
}

void validate_report(const Report& report) {
  if (report.findings.empty()) throw_value("report: findings must not be empty");
  for (size_t i = 0; i < report.findings.size(); ++i) {
    int f = report.findings[i];
    if (f < 0 || f >= kNumFindings)
      throw Error(ErrorKind::Vocabulary, "finding index " + std::to_string(f) + " out of range");
    if (i > 0 && report.findings[i - 1] >= f)
      throw_value("report: findings must be strictly ascending vocabulary indices");
  }
  if (report.has(kNormalFinding) && report.findings.size() > 1)
    throw_value("report: 'normal' excludes all other findings");
  if (report.length_slices < kMinReportLength || report.length_slices > kMaxReportLength)
    throw_value("report: length " + std::to_string(report.length_slices) + " outside [" +
                std::to_string(kMinReportLength) + "," + std::to_string(kMaxReportLength) + "]");
}

static std::string finding_list(const Report& report) {
  std::string out;
  for (size_t i = 0; i < report.findings.size(); ++i) {
    if (i) out += ", ";
    out += kFindingVocabulary[static_cast<size_t>(report.findings[i])];
  }
  return out;
}

std::string render_report(const Report& report) {
  validate_report(report);
  std::string list = finding_list(report);
  return "Findings: " + list + ". Impressions: " + list +
         ". length of volume: " + std::to_string(report.length_slices);
}

static std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

static std::vector<int> parse_finding_list(const std::string& segment) {
  std::vector<int> out;
  std::string cleaned = trim(segment);
  if (!cleaned.empty() && cleaned.back() == '.') cleaned.pop_back();
  std::stringstream ss(cleaned);
  std::string token;
  while (std::getline(ss, token, ',')) {
    token = trim(token);
    if (token.empty()) continue;
    out.push_back(finding_index(token));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

static std::string collapse_whitespace(const std::string& s) {
  std::string out;
  bool in_ws = false;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      in_ws = true;
      continue;
    }
    if (in_ws && !out.empty()) out += ' ';
    in_ws = false;
    out += c;
  }
  return out;
}

Report parse_report(const std::string& raw) {
  std::string text = collapse_whitespace(raw);
  size_t f = text.find("Findings:");
  if (f == std::string::npos) throw_parse("report: missing 'Findings:' clause");
  size_t imp = text.find("Impressions:", f);
  if (imp == std::string::npos) throw_parse("report: missing 'Impressions:' clause");
  size_t len = text.find("length of volume:", imp);
  if (len == std::string::npos) throw_parse("report: missing 'length of volume:' clause");

  std::string findings_seg = text.substr(f + 9, imp - (f + 9));
  // the Impressions list mirrors Findings by construction and is not re-read
  std::string len_seg = trim(text.substr(len + 17));
  if (len_seg.empty()) throw_parse("report: empty volume length");
  size_t pos = 0;
  long value = 0;
  try {
    value = std::stol(len_seg, &pos);
  } catch (const std::exception&) {
    throw_parse("report: malformed volume length '" + len_seg + "'");
  }
  if (!trim(len_seg.substr(pos)).empty())
    throw_parse("report: trailing text after volume length '" + len_seg + "'");

  Report report;
  report.findings = parse_finding_list(findings_seg);
  report.length_slices = static_cast<int>(value);
  validate_report(report);
  return report;
}

static uint64_t fnv1a(const std::string& s) {
  uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

TextEmbedding embed_report(const Report& report, uint64_t seed) {
  validate_report(report);
  TextEmbedding emb;
  emb.vector.assign(TextEmbedding::kDim, 0.0f);

  // semantic band: sum of unit-scale seeded vectors, one per finding
  for (int f : report.findings) {
    Rng rng = Rng::derive(seed, 0xF1D0ULL + static_cast<uint64_t>(f));
    for (int i = 0; i < TextEmbedding::kSemanticDim; ++i)
      emb.vector[static_cast<size_t>(i)] +=
          static_cast<float>(rng.normal() / std::sqrt(double(TextEmbedding::kSemanticDim)));
  }

  // length band: 32 sin/cos pairs, frequencies geometric from 1 down to
  // 1/512 rad per slice; scaled to unit norm so neither band dominates
  constexpr int kPairs = TextEmbedding::kLengthDim / 2;
  double band_scale = 1.0 / std::sqrt(double(kPairs));
  for (int k = 0; k < kPairs; ++k) {
    double freq = std::exp(-std::log(512.0) * k / (kPairs - 1));
    double arg = report.length_slices * freq;
    emb.vector[static_cast<size_t>(TextEmbedding::kSemanticDim + 2 * k)] =
        static_cast<float>(std::sin(arg) * band_scale);
    emb.vector[static_cast<size_t>(TextEmbedding::kSemanticDim + 2 * k + 1)] =
        static_cast<float>(std::cos(arg) * band_scale);
  }

  double norm = 0;
  for (float v : emb.vector) norm += static_cast<double>(v) * v;
  norm = std::sqrt(norm);
  for (float& v : emb.vector) v = static_cast<float>(v / norm);
  emb.source_hash = fnv1a(render_report(report));
  return emb;
}

}  // namespace volflow
