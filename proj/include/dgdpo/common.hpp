#pragma once

// Shared vocabulary layout, seeded randomness, and small utilities used by
// every module. All randomness in the project flows through Rng so that a
// (config, seed) pair fully determines every artifact byte.

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dgdpo {

using TokenSeq = std::vector<int>;

// Reserved token ids. True/False answers are ordinary tokens so a binary
// decision head needs no special vocabulary handling.
namespace tok {
constexpr int kBos = 0;
constexpr int kEos = 1;
constexpr int kTrue = 2;
constexpr int kFalse = 3;
constexpr int kPad = 4;
constexpr int kFirstConcept = 5;
}  // namespace tok

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Derives an independent stream seed from a master seed and a stream tag.
inline uint64_t derive_seed(uint64_t master, uint64_t stream) {
  uint64_t s = master ^ (0x9E3779B97F4A7C15ULL * (stream + 1));
  return splitmix64(s);
}

// Deterministic generator with hand-rolled transforms. std::mt19937_64 output
// is pinned by the standard; the distribution transforms are written out here
// because the standard library's are implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ? seed : 0x1234abcd5678ef01ULL) {}

  uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [lo, hi).
  int uniform_int(int lo, int hi) {
    if (hi <= lo) throw std::invalid_argument("uniform_int: empty range");
    uint64_t span = static_cast<uint64_t>(hi - lo);
    return lo + static_cast<int>(next_u64() % span);
  }

  // Standard normal via Box-Muller; the spare value is discarded so each
  // draw consumes a fixed number of uniforms.
  double gaussian() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = next_u64() % i;
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

inline std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw std::runtime_error(what + ": non-finite value");
}

}  // namespace dgdpo
