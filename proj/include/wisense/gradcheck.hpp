#pragma once

#include "wisense/types.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace wisense::nn {

/// One tensor whose coordinates are perturbed in place; `analytic` holds the
/// gradient claimed by backward at the unperturbed point.
struct GradTarget {
  std::string name;
  Matrix* value = nullptr;
  Matrix analytic;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;  // "name[r,c]"
  Index checked = 0;

  bool passed(double tol) const { return max_rel_error < tol; }
};

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Five-point central differences (truncation error O(h^4)) on every coordinate of every
/// target, or on `max_coords` seeded random coordinates per tensor when the
/// tensor is larger than that (0 = all).
GradCheckReport gradient_check(const std::function<double()>& loss, std::vector<GradTarget>& targets,
                               double h = 1e-3, Index max_coords = 0, std::uint64_t seed = 0);

}  // namespace wisense::nn
