#ifndef SNPFORGE_GRADCHECK_HPP
#define SNPFORGE_GRADCHECK_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "snpforge/tensor.hpp"

namespace snpforge {

// Finite-difference validation of analytic gradients, always in f64.
// Returns max over all differentiable input entries of
// |analytic - numeric| / max(|numeric|, 1e-8), central differences h = 1e-5.
double grad_check(const std::string& op_spec, uint64_t seed);
double grad_check(const std::string& op_spec, const std::vector<Shape>& input_shapes, uint64_t seed);

// All op specs known to the checker.
std::vector<std::string> grad_check_ops();

} // namespace snpforge

#endif
