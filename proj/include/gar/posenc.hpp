#pragma once

#include <cstddef>
#include <span>

#include "gar/autodiff.hpp"
#include "gar/tensor.hpp"

namespace gar {

// Box center normalised by frame width and height.
struct BoxCenter {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const BoxCenter&, const BoxCenter&) = default;
};

inline constexpr double kDefaultPositionScale = 100.0;
inline constexpr double kPositionBase = 10000.0;

// Sinusoidal encoding of a scalar position: entry 2i is sin(pos / base^(2i/dim))
// and entry 2i+1 the matching cosine. dim must be even.
Tensor pe_1d(double pos, std::size_t dim);

// x is encoded in the first d_model/2 entries and y in the second half, each
// after multiplying the coordinate by scale. d_model must be divisible by 4.
Tensor pe_2d(BoxCenter center, std::size_t d_model, double scale = kDefaultPositionScale);

// N x d matrix whose row i is pe_2d(centers[i]).
Tensor position_table(std::span<const BoxCenter> centers, std::size_t d_model,
                      double scale = kDefaultPositionScale);

// S + position_table(centers); the table is a constant of the graph.
Var apply_pe(Var s, std::span<const BoxCenter> centers, double scale = kDefaultPositionScale);

}  // namespace gar
