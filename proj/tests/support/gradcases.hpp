#pragma once

#include "wisense/gradcheck.hpp"

#include <functional>
#include <string>
#include <vector>

namespace wisense::testing {

inline constexpr double kGradTolerance = 1e-4;

/// One finite-difference check of a layer's analytic backward pass. All
/// cases run in double precision on small random shapes.
struct GradCase {
  std::string name;
  std::function<nn::GradCheckReport()> run;
};

/// Every trainable layer and loss of the library.
std::vector<GradCase> gradient_cases();

}  // namespace wisense::testing
