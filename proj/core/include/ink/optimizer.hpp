#pragma once

#include <cstdint>
#include <vector>

#include "ink/autodiff.hpp"

namespace ink {

// Linear warm-up to peak_lr, then decay proportional to 1/sqrt(step).
struct LearningRateSchedule {
  int warmup_steps = 4000;
  double peak_lr = 5e-4;

  double at(std::int64_t step) const;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-8;
  // Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
};

// Updates only parameters marked trainable. Moments are keyed by position in the
// list given to the constructor.
class Adam {
 public:
  Adam(std::vector<ad::Parameter*> params, AdamOptions options = {});

  void step(double lr);
  std::int64_t steps() const { return steps_; }
  void zero_grad();

 private:
  std::vector<ad::Parameter*> params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  AdamOptions options_;
  std::int64_t steps_ = 0;
};

}  // namespace ink
