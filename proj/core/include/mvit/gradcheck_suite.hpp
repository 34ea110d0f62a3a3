#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mvit/gradcheck.hpp"
#include "mvit/tensor.hpp"

namespace mvit {

/// Named gradient checks over every differentiable primitive plus the full model. Shared by
/// `mvit gradcheck` and the acceptance runner.
struct SuiteOptions {
    std::string preset = "desk-32";  // model target; must be a desk preset
    double threshold = 1e-4;
    std::size_t model_probes = 3;  // per parameter tensor
    /// Negative control: multiplies every upstream gradient entering the checked op by 1.01.
    bool corrupt_backward = false;
};

struct TargetResult {
    std::string name;
    std::uint64_t seed = 0;
    GradcheckReport report;
    bool passed = false;
};

/// Primitive names followed by "model".
std::vector<std::string> gradcheck_targets();

/// Throws ConfigError for unknown names or non-desk presets.
TargetResult run_gradcheck_target(std::string_view name, std::uint64_t seed, const SuiteOptions& options = {});

/// Identity forward; backward scales the incoming gradient by `factor`.
Tensor corrupt_backward(const Tensor& x, double factor = 1.01);

}  // namespace mvit
