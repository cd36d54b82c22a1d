#include "wisense/gradcheck.hpp"

#include "wisense/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace wisense::nn {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport gradient_check(const std::function<double()>& loss, std::vector<GradTarget>& targets, double h,
                               Index max_coords, std::uint64_t seed) {
  GradCheckReport report;
  auto rng = make_rng({seed, 0x4752414443484bull});
  for (auto& t : targets) {
    Matrix& x = *t.value;
    require_shape(t.analytic.rows() == x.rows() && t.analytic.cols() == x.cols(),
                  "gradient_check: analytic gradient of " + t.name + " has shape " + dims(t.analytic) +
                      ", value " + dims(x));
    std::vector<Index> coords(static_cast<std::size_t>(x.size()));
    std::iota(coords.begin(), coords.end(), Index{0});
    if (max_coords > 0 && x.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(max_coords));
    }
    for (Index flat : coords) {
      double& xi = x.data()[flat];
      const double saved = xi;
      auto at = [&](double offset) {
        xi = saved + offset;
        return loss();
      };
      const double numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
      xi = saved;
      const double err = relative_error(t.analytic.data()[flat], numeric);
      ++report.checked;
      if (err > report.max_rel_error || report.worst.empty()) {
        if (err >= report.max_rel_error) {
          report.max_rel_error = err;
          report.worst = t.name + "[" + std::to_string(flat / x.cols()) + "," + std::to_string(flat % x.cols()) + "]";
        }
      }
    }
  }
  return report;
}

}  // namespace wisense::nn
