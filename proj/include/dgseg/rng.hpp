#pragma once

// Counter-based deterministic RNG.
//
// Every random draw in the engine comes from a stream derived by hashing
// (master seed, purpose tag, scene index, step). Streams are cheap to
// construct, so nothing ever carries generator state across steps: a
// checkpoint only needs the master seed and the step counter to resume
// bit-exactly, and per-scene work stays independent of thread scheduling.

#include <cmath>
#include <cstdint>

namespace dgseg {

/// splitmix64: tiny, well-mixed, passes BigCrush as a 64-bit mixer.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Purpose tags keep unrelated draws in unrelated streams even when the
/// (seed, scene, step) triple coincides.
enum class StreamTag : std::uint64_t {
  SceneLayout = 1,   // shape placement, colors, depth bands
  DepthNoise = 2,    // pseudo-depth corruption
  ParamInit = 3,     // mask-head weight init
  StudentScale = 4,  // per-step student rescale factor
  GradCheck = 5,     // gradient-verification probe points
  Render = 6,        // cosmetic jitter in visualization
};

class Rng {
public:
  Rng() = default;
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  /// Stream keyed by (seed, tag, a, b). Chained mixing, not xor, so that
  /// (a=1,b=0) and (a=0,b=1) land far apart.
  static Rng stream(std::uint64_t seed, StreamTag tag, std::uint64_t a = 0,
                    std::uint64_t b = 0) {
    std::uint64_t s = mix64(seed);
    s = mix64(s ^ static_cast<std::uint64_t>(tag));
    s = mix64(s ^ a);
    s = mix64(s ^ b);
    return Rng(s);
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  /// Uniform in [0,1): top 53 bits, exact double grid.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Inclusive integer range; lo <= hi required.
  int uniform_int(int lo, int hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  /// Box-Muller. Draws two uniforms per pair; caches the second value.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

private:
  std::uint64_t state_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

} // namespace dgseg
