#include "mvit/rng.hpp"

#include <cmath>
#include <numbers>

namespace mvit {

double standard_normal(Rng& rng) {
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double truncated_normal(Rng& rng, double std) {
    for (;;) {
        const double z = standard_normal(rng);
        if (std::abs(z) <= 2.0) return z * std;
    }
}

double gamma_sample(Rng& rng, double shape) {
    if (shape < 1.0) {
        // Boost to shape+1 and rescale.
        double u = uniform01(rng);
        while (u <= 0.0) u = uniform01(rng);
        return gamma_sample(rng, shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = 0.0;
        double v = 0.0;
        do {
            x = standard_normal(rng);
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform01(rng);
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

double beta_sample(Rng& rng, double a, double b) {
    const double x = gamma_sample(rng, a);
    const double y = gamma_sample(rng, b);
    if (x + y <= 0.0) return 0.5;
    return x / (x + y);
}

}  // namespace mvit
