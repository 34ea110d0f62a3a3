#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "mvit/tensor.hpp"

namespace mvit {

struct GradcheckOptions {
    double step = 1e-5;
    /// Coordinates probed per input; 0 probes every coordinate.
    std::size_t max_probes = 0;
    std::uint64_t seed = 0;
    /// When positive, a probe whose error reaches this value is re-measured at each decade step in
    /// [1e-6, 1e-4] and the smallest error is kept. Each re-measurement also scores the two
    /// one-sided slopes, since at a ReLU kink backward returns one of them and the central
    /// difference averages both. A wrong backward pass disagrees with every estimate.
    double refine_tolerance = 0.0;
};

struct GradcheckReport {
    double max_relative_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t probes = 0;
    std::size_t refined = 0;  // probes that needed re-measurement
};

/// Compares the backward pass of `f` against central differences over the leaves in `inputs`.
/// `f` must rebuild its graph from the current leaf values on every call; a non-scalar output
/// is sum-reduced. Relative error uses max(|a|, |b|, 1e-8) as denominator.
GradcheckReport gradcheck(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs,
                          const GradcheckOptions& options = {});

}  // namespace mvit
