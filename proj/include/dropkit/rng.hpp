#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "dropkit/errors.hpp"

namespace dropkit {

// Deterministic splittable generator built on SplitMix64. The seed is the
// stream identity: child streams derived via split() depend only on the
// parent's seed and the label, never on how many values the parent has drawn.
// Uniform and Bernoulli draws use only integer arithmetic plus one multiply,
// so sequences are reproducible across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), cursor_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() {
    cursor_ += 0x9e3779b97f4a7c15ULL;
    return mix(cursor_);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Bounded draw in [0, n); n must be nonzero.
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  double uniform(double lo, double hi) {
    if (lo > hi) throw ParameterError("uniform bounds: lo > hi");
    return lo + (hi - lo) * next_double();
  }

  std::vector<double> uniform(std::size_t count, double lo, double hi) {
    if (lo > hi) throw ParameterError("uniform bounds: lo > hi");
    std::vector<double> out(count);
    for (auto& v : out) v = lo + (hi - lo) * next_double();
    return out;
  }

  // One Bernoulli(p) draw as 0.0 / 1.0.
  double bernoulli(double p) {
    check_probability(p);
    return next_double() < p ? 1.0 : 0.0;
  }

  std::vector<double> bernoulli(std::size_t count, double p) {
    check_probability(p);
    std::vector<double> out(count);
    for (auto& v : out) v = next_double() < p ? 1.0 : 0.0;
    return out;
  }

  // Standard normal via Box-Muller; the spare value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - next_double();  // (0, 1], keeps log finite
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  std::vector<double> normal(std::size_t count, double mean, double stddev) {
    std::vector<double> out(count);
    for (auto& v : out) v = mean + stddev * normal();
    return out;
  }

  // Child stream keyed by an integer label. Sibling streams are independent
  // of draws made anywhere else.
  Rng split(std::uint64_t label) const {
    return Rng(mix(seed_ + 0x9e3779b97f4a7c15ULL * (label + 1)));
  }

  Rng split(std::string_view label) const { return split(fnv1a(label)); }

  Rng split(std::string_view label, std::uint64_t a) const { return split(label).split(a); }

  Rng split(std::string_view label, std::uint64_t a, std::uint64_t b) const {
    return split(label).split(a).split(b);
  }

  Rng split(std::string_view label, std::uint64_t a, std::uint64_t b, std::uint64_t c) const {
    return split(label).split(a).split(b).split(c);
  }

 private:
  static void check_probability(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("probability outside [0,1]");
  }

  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
  }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  std::uint64_t seed_;
  std::uint64_t cursor_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dropkit
