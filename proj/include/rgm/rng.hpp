#pragma once

#include <cmath>
#include <cstdint>

namespace rgm {

/**
 * Splittable counter-based random generator.
 *
 * Output i of a stream is mix(key, i) for a fixed 64-bit key, so a stream's
 * values depend only on (seed, split path, position) and never on which
 * thread or in which order other streams were consumed. split(id) derives an
 * independent child stream; candidate i of a Best-of-N batch always uses
 * split(i) of the query stream, which is what makes parallel sampling
 * schedule-independent.
 */
class RngState {
 public:
  RngState() : RngState(0) {}
  explicit RngState(uint64_t seed) : key_(mix64(seed + kGolden)), counter_(0) {}

  /// Derive an independent child stream. Children with distinct ids are
  /// decorrelated from each other and from the parent's own outputs.
  [[nodiscard]] RngState split(uint64_t stream_id) const {
    RngState child;
    child.key_ = mix64(key_ ^ mix64(stream_id * kGolden + 0x94d049bb133111ebULL));
    child.counter_ = 0;
    child.have_spare_ = false;
    return child;
  }

  uint64_t next_u64() {
    counter_ += 1;
    return mix64(key_ + counter_ * kGolden);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform float in [0, 1) with 24 random bits.
  float next_unit_f() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

  /// Uniform integer in [0, n). n == 0 returns 0.
  uint32_t below(uint32_t n) {
    if (n == 0) return 0;
    // Lemire multiply-shift; bias is < 2^-32 and fully deterministic.
    const uint64_t x = next_u64() >> 32;
    return static_cast<uint32_t>((x * n) >> 32);
  }

  /// Standard normal via Box-Muller with a cached spare.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u = 1.0 - next_unit();  // (0, 1], keeps log finite
    const double r = std::sqrt(-2.0 * std::log(u));
    const double theta = 2.0 * 3.14159265358979323846 * next_unit();
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  uint64_t position() const { return counter_; }

 private:
  static constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

  static uint64_t mix64(uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
  }

  uint64_t key_ = 0;
  uint64_t counter_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace rgm
