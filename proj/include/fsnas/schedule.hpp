#pragma once

#include <cmath>

#include "fsnas/error.hpp"

namespace fsnas::train {

// Linear warmup from 0 to base_lr over warmup_steps, then cosine decay to 0
// at total_steps. warmup_steps == 0 gives pure cosine from base_lr.
inline double lr_at(long step, long total_steps, long warmup_steps,
                    double base_lr) {
  check(step >= 0 && step <= total_steps, ErrorCode::Usage,
        "lr_at step outside [0, total_steps]");
  check(warmup_steps >= 0 && warmup_steps < total_steps, ErrorCode::Usage,
        "warmup_steps must lie in [0, total_steps)");
  if (step < warmup_steps)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const double t = static_cast<double>(step - warmup_steps) /
                   static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

}  // namespace fsnas::train
