#include "archopt/optim.hpp"

namespace archopt {

double one_cycle_lr(long step, const OneCycle& s) {
  if (step < 0 || step > s.total_steps)
    throw Error(ErrorKind::invalid_state, "step " + std::to_string(step) + " outside the schedule");
  // Breakpoints as 45T/100 and 90T/100 so integral breakpoints are exact.
  const double x = static_cast<double>(step), end = static_cast<double>(s.total_steps);
  const double rise = 45.0 * end / 100.0, fall = 90.0 * end / 100.0;
  auto lerp = [](double a, double b, double f) { return (1.0 - f) * a + f * b; };
  if (x <= rise) return lerp(s.lr_start, s.lr_peak, x / rise);
  if (x <= fall) return lerp(s.lr_peak, s.lr_start, (x - rise) / (fall - rise));
  return lerp(s.lr_start, s.lr_final, (x - fall) / (end - fall));
}

}  // namespace archopt
