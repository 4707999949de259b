// Central finite-difference gradient oracle.
//
// Every analytic gradient in the project is validated against this estimate;
// it deliberately knows nothing about the model internals.

#pragma once

#include <functional>

#include "vkdlab/matrix.hpp"

namespace vkdlab {

// (f(theta + h e_i) - f(theta - h e_i)) / 2h per coordinate.
// Throws NumericError if f evaluates to a non-finite value.
Vec fd_gradient(const std::function<double(const Vec&)>& f, Vec theta, double h);

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
double max_rel_error(const Vec& a, const Vec& b, double floor = 1e-7);

}  // namespace vkdlab
