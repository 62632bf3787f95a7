#pragma once

#include <numeric>
#include <vector>

#include "gar/random.hpp"
#include "gar/tensor.hpp"

namespace gar::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

inline std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  return perm;
}

// Row i of the result is row perm[i] of m.
inline Tensor permute_rows(const Tensor& m, const std::vector<std::size_t>& perm) {
  Tensor out(m.shape());
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out.at(i, j) = m.at(perm[i], j);
  return out;
}

// Randomises every weight, including norms and biases, so tests do not rely
// on the neutral initial values.
template <typename Weights>
void randomize(Weights& w, Rng& rng, double scale = 0.5) {
  w.for_each_parameter([&](auto& p) {
    for (auto& v : p.value.values()) v = scale * rng.normal();
  });
}

}  // namespace gar::testing
