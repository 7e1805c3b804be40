#include "raw/error.hpp"

#include <fmt/format.h>

namespace raw {

InfeasibleAlphaError::InfeasibleAlphaError(double alpha, double correction, double min_alpha, std::size_t n)
    : ConfigError(fmt::format(
          "alpha = {} is infeasible for n = {} calibration images: alpha must exceed "
          "sqrt(ln(2/delta)/(2n)) = {:.4f}; the minimum feasible alpha is {:.4f}",
          alpha, n, correction, min_alpha)),
      alpha_(alpha),
      correction_(correction),
      min_alpha_(min_alpha) {}

}  // namespace raw
