#include "gar/posenc.hpp"

#include <algorithm>
#include <cmath>

#include "gar/error.hpp"

namespace gar {

Tensor pe_1d(double pos, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) {
    throw ConfigError("positional encoding dimension must be even and positive, got " + std::to_string(dim));
  }
  if (!(pos >= 0.0) || !std::isfinite(pos)) throw ConfigError("position must be finite and non-negative");
  Tensor out({dim});
  for (std::size_t i = 0; i < dim; i += 2) {
    const double freq = std::pow(kPositionBase, static_cast<double>(i) / static_cast<double>(dim));
    out[i] = std::sin(pos / freq);
    out[i + 1] = std::cos(pos / freq);
  }
  return out;
}

Tensor pe_2d(BoxCenter center, std::size_t d_model, double scale) {
  if (d_model == 0 || d_model % 4 != 0) {
    throw ConfigError("2D positional encoding needs d_model divisible by 4, got " + std::to_string(d_model));
  }
  if (!(center.x >= 0.0 && center.x <= 1.0 && center.y >= 0.0 && center.y <= 1.0)) {
    throw DataError("box center outside [0,1]^2");
  }
  const std::size_t half = d_model / 2;
  Tensor out({d_model});
  const Tensor px = pe_1d(scale * center.x, half);
  const Tensor py = pe_1d(scale * center.y, half);
  std::copy(px.values().begin(), px.values().end(), out.values().begin());
  std::copy(py.values().begin(), py.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(half));
  return out;
}

Tensor position_table(std::span<const BoxCenter> centers, std::size_t d_model, double scale) {
  if (centers.empty()) throw DataError("position_table: no centers");
  Tensor out({centers.size(), d_model});
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const Tensor row = pe_2d(centers[i], d_model, scale);
    std::copy(row.values().begin(), row.values().end(), out.row(i).begin());
  }
  return out;
}

Var apply_pe(Var s, std::span<const BoxCenter> centers, double scale) {
  const Tensor& sv = s.value();
  if (sv.rows() != centers.size()) {
    throw DataError("apply_pe: " + std::to_string(sv.rows()) + " actors but " +
                    std::to_string(centers.size()) + " centers");
  }
  return add(s, s.graph->constant(position_table(centers, sv.cols(), scale)));
}

}  // namespace gar
