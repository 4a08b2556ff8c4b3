#pragma once

#include <vector>

#include "freeview/layers.hpp"

namespace freeview {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed list of parameters. Moments are indexed by position,
/// so the parameter list must not change between steps.
class Adam {
 public:
  Adam(std::vector<Parameter<float>*> params, AdamConfig cfg);

  void step();
  long steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Parameter<float>*> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace freeview
