#pragma once

#include <cmath>
#include <cstddef>

#include "mbrec/ndcore/array.hpp"

namespace mbrec {

struct AdamOptions {
  real learning_rate = 1e-3;
  real beta1 = 0.9;
  real beta2 = 0.999;
  real epsilon = 1e-8;
};

// Moment estimates for one parameter array.
struct AdamState {
  std::size_t step = 0;
  Array m;
  Array v;
  real beta1 = 0.9;
  real beta2 = 0.999;
  real epsilon = 1e-8;
  real learning_rate = 1e-3;

  AdamState() = default;
  AdamState(const Shape& shape, const AdamOptions& opt)
      : m(shape, 0),
        v(shape, 0),
        beta1(opt.beta1),
        beta2(opt.beta2),
        epsilon(opt.epsilon),
        learning_rate(opt.learning_rate) {}
};

/// One bias-corrected Adam update of `param` in place.
inline void adam_step(AdamState& state, Array& param, const Array& grad) {
  if (param.shape() != grad.shape()) {
    throw DimensionError("adam_step: parameter " + shape_string(param.shape()) + " vs gradient " +
                         shape_string(grad.shape()));
  }
  if (state.m.shape() != param.shape()) {
    state.m = Array(param.shape(), 0);
    state.v = Array(param.shape(), 0);
  }
  ++state.step;
  const real t = static_cast<real>(state.step);
  const real c1 = 1 - std::pow(state.beta1, t);
  const real c2 = 1 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const real g = grad[i];
    state.m[i] = state.beta1 * state.m[i] + (1 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1 - state.beta2) * g * g;
    const real mhat = state.m[i] / c1;
    const real vhat = state.v[i] / c2;
    param[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
  }
}

}  // namespace mbrec
