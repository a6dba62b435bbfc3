#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace volflow {

// Deterministic RNG used everywhere. Wraps mt19937_64 with explicit
// Box-Muller normals so the byte stream of draws is pinned by this file,
// not by the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : gen_(seed) {}

  // Derive an independent stream, e.g. one per worker or per volume.
  static Rng derive(uint64_t seed, uint64_t stream) {
    return Rng(mix(seed, stream));
  }

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(gen_() % span);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  std::string save_state() const {
    std::ostringstream os;
    os << gen_ << ' ' << (has_spare_ ? 1 : 0) << ' ';
    os.precision(17);
    os << spare_;
    return os.str();
  }

  void load_state(const std::string& s) {
    std::istringstream is(s);
    int hs = 0;
    is >> gen_ >> hs >> spare_;
    has_spare_ = hs != 0;
  }

 private:
  static uint64_t mix(uint64_t a, uint64_t b) {
    // splitmix64 finalizer over the combined word
    uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace volflow
