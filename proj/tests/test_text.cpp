#include <cmath>
#include <set>

#include "doctest.h"
#include "volflow/text.hpp"
#include "volflow/rng.hpp"

using namespace volflow;

namespace {

double cosine(const TextEmbedding& a, const TextEmbedding& b) {
  double acc = 0;
  for (size_t i = 0; i < a.vector.size(); ++i) acc += double(a.vector[i]) * b.vector[i];
  return acc;
}

double norm(const TextEmbedding& e) {
  double acc = 0;
  for (float v : e.vector) acc += double(v) * v;
  return std::sqrt(acc);
}

}  // namespace

TEST_CASE("render_report template") {
  Report r{{0}, 64};
  CHECK(render_report(r) == "Findings: nodule. Impressions: nodule. length of volume: 64");

  Report n{{kNormalFinding}, 266};
  CHECK(render_report(n).find("length of volume: 266") != std::string::npos);

  Report multi{{0, 1}, 48};
  CHECK(render_report(multi) ==
        "Findings: nodule, effusion. Impressions: nodule, effusion. length of volume: 48");
}

TEST_CASE("render/parse round trip") {
  Rng rng(4);
  for (int i = 0; i < 3; ++i) {
    Report r;
    r.length_slices = static_cast<int>(rng.uniform_int(16, 256));
    int f1 = static_cast<int>(rng.uniform_int(0, 6));
    int f2 = static_cast<int>(rng.uniform_int(0, 6));
    r.findings = f1 == f2 ? std::vector<int>{f1} : std::vector<int>{std::min(f1, f2), std::max(f1, f2)};
    Report back = parse_report(render_report(r));
    CHECK(back.findings == r.findings);
    CHECK(back.length_slices == r.length_slices);
  }
}

TEST_CASE("parse errors") {
  CHECK_THROWS_AS(parse_report("Findings: nodule. Impressions: nodule."), Error);  // no length
  CHECK_THROWS_AS(parse_report("Findings: nodule. Impressions: nodule. length of volume: abc"),
                  Error);
  CHECK_THROWS_AS(parse_report("Findings: gadget. Impressions: gadget. length of volume: 64"),
                  Error);
  CHECK_THROWS_AS(parse_report("Findings: normal, nodule. Impressions: x. length of volume: 64"),
                  Error);
  CHECK_THROWS_AS(parse_report("Findings: nodule. Impressions: nodule. length of volume: 4"),
                  Error);  // out of range
  try {
    parse_report("Findings: gadget. Impressions: gadget. length of volume: 64");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Vocabulary);
  }
}

TEST_CASE("parser tolerates extra whitespace (perturbation corpus)") {
  Rng rng(9);
  Report r{{2, 5}, 77};
  std::string base = render_report(r);
  for (int trial = 0; trial < 100; ++trial) {
    std::string mutated;
    for (char c : base) {
      mutated += c;
      if ((c == ' ' || c == '.' || c == ',') && rng.uniform() < 0.3)
        mutated += std::string(static_cast<size_t>(rng.uniform_int(1, 3)), ' ');
    }
    if (rng.uniform() < 0.5) mutated = "  " + mutated + "   ";
    Report back = parse_report(mutated);
    CHECK(back.findings == r.findings);
    CHECK(back.length_slices == r.length_slices);
  }
}

TEST_CASE("embedding determinism and unit norm") {
  Report r{{0}, 64};
  TextEmbedding a = embed_report(r, 11), b = embed_report(r, 11);
  CHECK(a.vector == b.vector);
  CHECK(a.source_hash == b.source_hash);
  CHECK(std::abs(norm(a) - 1.0) <= 1e-6);
  CHECK(static_cast<int>(a.vector.size()) == TextEmbedding::kDim);

  TextEmbedding c = embed_report(r, 12);
  CHECK(a.vector != c.vector);
}

TEST_CASE("cosine separation across the finding vocabulary") {
  constexpr uint64_t kSeed = 11;
  std::vector<TextEmbedding> singles;
  for (int f = 0; f < kNumFindings; ++f) singles.push_back(embed_report(Report{{f}, 64}, kSeed));
  double max_cross = -1;
  for (int i = 0; i < kNumFindings; ++i) {
    CHECK(cosine(singles[static_cast<size_t>(i)], singles[static_cast<size_t>(i)]) ==
          doctest::Approx(1.0).epsilon(1e-6));
    for (int j = 0; j < kNumFindings; ++j)
      if (i != j) max_cross = std::max(max_cross, cosine(singles[static_cast<size_t>(i)], singles[static_cast<size_t>(j)]));
  }
  CHECK(max_cross < 1.0 - 1e-3);  // within-findings (identical) beats every cross pair
}

TEST_CASE("length band separates adjacent lengths") {
  TextEmbedding a = embed_report(Report{{0}, 64}, 11);
  TextEmbedding b = embed_report(Report{{0}, 65}, 11);
  double band = 0;
  for (int i = TextEmbedding::kSemanticDim; i < TextEmbedding::kDim; ++i) {
    double d = double(a.vector[static_cast<size_t>(i)]) - b.vector[static_cast<size_t>(i)];
    band += d * d;
  }
  CHECK(band > 0.0);
}

TEST_CASE("embedding injectivity over findings sets and lengths") {
  constexpr uint64_t kSeed = 11;
  // all 127 non-empty pathological subsets plus {normal}, at a fixed length
  std::vector<std::vector<int>> sets;
  for (int mask = 1; mask < 128; ++mask) {
    std::vector<int> f;
    for (int b = 0; b < 7; ++b)
      if (mask & (1 << b)) f.push_back(b);
    sets.push_back(f);
  }
  sets.push_back({kNormalFinding});
  std::set<std::vector<float>> seen;
  for (const auto& f : sets) {
    TextEmbedding e = embed_report(Report{f, 128}, kSeed);
    CHECK(seen.insert(e.vector).second);
  }

  // all lengths at a fixed findings set
  std::set<std::vector<float>> seen_len;
  for (int len = kMinReportLength; len <= kMaxReportLength; ++len) {
    TextEmbedding e = embed_report(Report{{3}, len}, kSeed);
    CHECK(seen_len.insert(e.vector).second);
  }
}
