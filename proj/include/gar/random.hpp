#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace gar {

// Mixes a root seed with a purpose tag ("init", "dropout", "data", "shuffle")
// so independent consumers draw from unrelated streams.
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag);

// Seeded generator with distribution code that does not depend on the
// standard library implementation, so generated data is identical across
// toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace gar
