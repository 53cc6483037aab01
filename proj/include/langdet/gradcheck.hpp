#pragma once

#include <functional>
#include <vector>

#include "langdet/tensor.hpp"

namespace langdet {

// Central-difference gradient oracle. `f` rebuilds the scalar loss from the
// current leaf values on every call; `leaf` is one of its requires-grad
// inputs, perturbed coordinate by coordinate. Returns the max over
// coordinates of |analytic - numeric| / max(1, |numeric|).
//
// The step must sit in [1e-6, 1e-3]; the default is 1e-5.
double finite_difference_check(const std::function<Tensor()>& f, Tensor leaf, double h = 1e-5);

// Convenience sweep over several leaves; returns the worst error.
double finite_difference_check_many(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                                    double h = 1e-5);

}  // namespace langdet
