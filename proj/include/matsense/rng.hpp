#pragma once

#include <cstdint>
#include <cmath>
#include <random>

namespace matsense {

namespace detail {

// SplitMix64 step; used to key generators and derive child stream ids.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a;
  std::uint64_t h = splitmix64(s);
  s = h ^ b;
  return splitmix64(s);
}

}  // namespace detail

/// Counter-keyed random stream. A given (seed, stream_id) pair always
/// reproduces the same draw sequence; distinct stream_ids give independent
/// streams, so replicates and Monte-Carlo draws parallelize deterministically.
///
/// Normal variates use the polar Box-Muller transform on top of mt19937_64
/// (the std distributions are implementation-defined and would break
/// reproducibility across standard libraries).
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : seed_(seed), stream_id_(stream_id), gen_(detail::mix64(seed, stream_id)) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  /// Child stream with an id derived from (stream_id, k). Deterministic.
  RngStream substream(std::uint64_t k) const {
    return RngStream(seed_, detail::mix64(stream_id_ ^ 0xa5a5a5a5a5a5a5a5ULL, k));
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  /// Standard normal draw.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace matsense
