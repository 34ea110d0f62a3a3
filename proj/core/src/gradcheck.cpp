#include "mvit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>
#include <utility>

#include "mvit/errors.hpp"
#include "mvit/ops.hpp"
#include "mvit/rng.hpp"

namespace mvit {

namespace {

double evaluate(const std::function<Tensor()>& f) {
    Tensor y = f();
    double s = 0.0;
    for (double v : y.values()) s += v;
    if (!std::isfinite(s)) throw NumericalError("gradcheck: function produced a non-finite value");
    return s;
}

std::vector<std::size_t> probe_indices(std::size_t n, std::size_t max_probes, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (max_probes == 0 || max_probes >= n) return idx;
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < max_probes; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n - i));
        std::swap(idx[i], idx[std::min(j, n - 1)]);
    }
    idx.resize(max_probes);
    std::sort(idx.begin(), idx.end());
    return idx;
}

double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

}  // namespace

GradcheckReport gradcheck(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs,
                          const GradcheckOptions& options) {
    if (options.step < 1e-6 || options.step > 1e-4) {
        throw ConfigError("gradcheck: step must lie in [1e-6, 1e-4]");
    }
    std::vector<Tensor> leaves = inputs;
    for (auto& t : leaves) {
        t.set_requires_grad(true);
        t.zero_grad();
    }

    Tensor y = f();
    Tensor s = y.numel() == 1 ? y : ops::sum(y);
    if (!std::isfinite(s.item())) throw NumericalError("gradcheck: function produced a non-finite value");
    s.backward();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (const auto& t : leaves) analytic.push_back(t.grad());

    GradcheckReport report;
    Rng rng = make_rng(options.seed, "gradcheck");
    NoGradGuard no_grad;
    const double base = evaluate(f);
    for (std::size_t k = 0; k < leaves.size(); ++k) {
        auto values = leaves[k].mutable_values();
        for (std::size_t i : probe_indices(values.size(), options.max_probes, rng)) {
            const double a = analytic[k][i];
            // Returns the central difference and its error; in refine mode the error also
            // considers the one-sided slopes, which is what backward reports at a kink.
            auto probe = [&](double step, bool one_sided) {
                const double saved = values[i];
                values[i] = saved + step;
                const double plus = evaluate(f);
                values[i] = saved - step;
                const double minus = evaluate(f);
                values[i] = saved;
                const double numeric = (plus - minus) / (2.0 * step);
                double err = relative_error(a, numeric);
                if (one_sided) {
                    err = std::min({err, relative_error(a, (plus - base) / step), relative_error(a, (base - minus) / step)});
                }
                return std::pair{numeric, err};
            };
            auto [numeric, err] = probe(options.step, false);
            if (options.refine_tolerance > 0.0 && err >= options.refine_tolerance) {
                ++report.refined;
                for (double step : {1e-4, 1e-5, 1e-6}) {
                    const auto [n2, e2] = probe(step, true);
                    if (e2 < err) std::tie(numeric, err) = std::pair{n2, e2};
                }
            }
            ++report.probes;
            if (report.probes == 1 || err > report.max_relative_error) {
                report.max_relative_error = err;
                report.worst_input = k;
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace mvit
