#pragma once

// Central finite-difference oracle for gradient tests. Independent of the
// backward implementations: it only evaluates forward passes.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "gar/autodiff.hpp"

namespace gar::testing {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  return buf;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t failures = 0;
  std::string worst;
};

// loss_fn builds a scalar on a fresh graph from the current parameter values.
inline GradCheckResult grad_check(const std::function<Var(Graph&)>& loss_fn, const std::vector<Parameter*>& params,
                                  double step = 1e-5, double tol = 1e-4, double floor = 1e-8) {
  for (Parameter* p : params) p->zero_grad();
  {
    Graph g(Mode::kInference);
    g.backward(loss_fn(g));
  }
  auto eval = [&] {
    Graph g(Mode::kInference);
    return loss_fn(g).value()[0];
  };
  GradCheckResult r;
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + step;
      const double up = eval();
      p->value[i] = orig - step;
      const double down = eval();
      p->value[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p->grad[i];
      const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
      ++r.checked;
      if (rel > tol) ++r.failures;
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst = p->name + "[" + std::to_string(i) + "] analytic=" + fmt(analytic) +
                  " numeric=" + fmt(numeric);
      }
    }
  }
  return r;
}

}  // namespace gar::testing
