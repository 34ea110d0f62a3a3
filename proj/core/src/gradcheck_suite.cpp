#include "mvit/gradcheck_suite.hpp"

#include <functional>

#include "mvit/config.hpp"
#include "mvit/errors.hpp"
#include "mvit/model.hpp"
#include "mvit/ops.hpp"
#include "mvit/rng.hpp"

namespace mvit {

Tensor corrupt_backward(const Tensor& x, double factor) {
    std::vector<double> out(x.values().begin(), x.values().end());
    return detail::make_result(x.shape(), std::move(out), {x}, [x, factor](detail::Node& self) {
        if (!x.requires_grad()) return;
        auto& g = x.node()->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
    });
}

namespace {

Tensor uniform(Shape shape, std::uint64_t seed, std::string_view tag, double lo = -1.0, double hi = 1.0) {
    Rng rng = make_rng(seed, "gradcheck-suite", {hash_label(tag)});
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = lo + (hi - lo) * uniform01(rng);
    return Tensor::from(std::move(shape), std::move(v), true);
}

// sum(y * r) with positive r normalized to one: no coordinate cancels by symmetry and the scalar
// stays O(1), so central-difference round-off sits far below the relative-error floor.
Tensor weighted_mean(const Tensor& y, std::uint64_t seed) {
    Rng rng = make_rng(seed, "gradcheck-suite.weights");
    std::vector<double> r(y.numel());
    double total = 0.0;
    for (double& v : r) total += (v = 0.5 + uniform01(rng));
    for (double& v : r) v /= total;
    return ops::sum(ops::mul(y, Tensor::from(y.shape(), std::move(r))));
}

struct Case {
    std::function<Tensor()> f;
    std::vector<Tensor> inputs;
};

using Builder = std::function<Case(std::uint64_t, bool)>;

ops::Conv2dOptions conv_options(std::size_t stride, std::size_t pad, std::size_t groups) {
    ops::Conv2dOptions o;
    o.stride = {stride, stride};
    o.padding = {pad, pad};
    o.groups = groups;
    return o;
}

// Wraps a unary/multi-input op so the corrupted variant damages exactly that op's backward.
template <class Op>
Case make_case(std::uint64_t seed, bool corrupt, std::vector<Tensor> inputs, Op op) {
    Case c;
    c.inputs = inputs;
    c.f = [=] {
        Tensor y = op(inputs);
        if (corrupt) y = corrupt_backward(y);
        return weighted_mean(y, seed);
    };
    return c;
}

const std::vector<std::pair<std::string, Builder>>& primitive_builders() {
    static const std::vector<std::pair<std::string, Builder>> builders = [] {
        std::vector<std::pair<std::string, Builder>> b;
        auto add = [&](std::string name, Builder fn) { b.emplace_back(std::move(name), std::move(fn)); };
        add("add", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({2, 3, 4}, s, "a"), uniform({3, 4}, s, "b")},
                             [](const auto& in) { return ops::add(in[0], in[1]); });
        });
        add("mul", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({2, 3, 4}, s, "a"), uniform({3, 4}, s, "b")},
                             [](const auto& in) { return ops::mul(in[0], in[1]); });
        });
        add("scale", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({2, 3, 4}, s, "a")}, [](const auto& in) { return ops::scale(in[0], -1.7); });
        });
        add("mul_prefix", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({2, 3, 4, 4}, s, "x"), uniform({2, 3}, s, "g")},
                             [](const auto& in) { return ops::mul_prefix(in[0], in[1]); });
        });
        add("matmul", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({3, 4}, s, "a"), uniform({4, 5}, s, "b")},
                             [](const auto& in) { return ops::matmul(in[0], in[1]); });
        });
        add("bmm", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({2, 3, 4}, s, "a"), uniform({2, 4, 3}, s, "b")},
                             [](const auto& in) { return ops::bmm(in[0], in[1]); });
        });
        add("linear", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({2, 3, 4}, s, "x"), uniform({5, 4}, s, "w"), uniform({5}, s, "b")},
                             [](const auto& in) { return ops::linear(in[0], in[1], in[2]); });
        });
        add("conv2d", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({2, 4, 6, 6}, s, "x"), uniform({6, 4, 3, 3}, s, "w"), uniform({6}, s, "b")},
                             [](const auto& in) { return ops::conv2d(in[0], in[1], in[2], conv_options(1, 1, 1)); });
        });
        add("conv2d_strided", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({2, 4, 7, 7}, s, "x"), uniform({6, 4, 3, 3}, s, "w"), uniform({6}, s, "b")},
                             [](const auto& in) { return ops::conv2d(in[0], in[1], in[2], conv_options(2, 1, 1)); });
        });
        add("conv2d_depthwise", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({2, 4, 7, 7}, s, "x"), uniform({4, 1, 7, 7}, s, "w"), uniform({4}, s, "b")},
                             [](const auto& in) { return ops::conv2d(in[0], in[1], in[2], conv_options(7, 3, 4)); });
        });
        add("softmax", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({2, 3, 4}, s, "x", -3, 3)}, [](const auto& in) { return ops::softmax(in[0], 1); });
        });
        add("layernorm", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({2, 3, 6}, s, "x", -2, 2), uniform({6}, s, "g"), uniform({6}, s, "b")},
                             [](const auto& in) { return ops::layernorm(in[0], in[1], in[2]); });
        });
        add("relu", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({2, 3, 4}, s, "x")}, [](const auto& in) { return ops::relu(in[0]); });
        });
        add("sigmoid", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({2, 3, 4}, s, "x", -4, 4)}, [](const auto& in) { return ops::sigmoid(in[0]); });
        });
        add("gelu", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({2, 3, 4}, s, "x", -3, 3)}, [](const auto& in) { return ops::gelu(in[0]); });
        });
        add("global_avg_pool", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({2, 3, 5, 5}, s, "x")}, [](const auto& in) { return ops::global_avg_pool(in[0]); });
        });
        add("adaptive_avg_pool", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({2, 3, 7, 7}, s, "x")},
                             [](const auto& in) { return ops::adaptive_avg_pool(in[0], 4, 3); });
        });
        add("reshape", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({2, 3, 4}, s, "x")}, [](const auto& in) { return ops::reshape(in[0], {4, 6}); });
        });
        add("permute", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({2, 3, 4}, s, "x")},
                             [](const auto& in) { return ops::permute(in[0], {2, 0, 1}); });
        });
        add("narrow", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({2, 5, 4}, s, "x")}, [](const auto& in) { return ops::narrow(in[0], 1, 1, 3); });
        });
        add("concat", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({2, 3, 4}, s, "a"), uniform({2, 2, 4}, s, "b")},
                             [](const auto& in) { return ops::concat({in[0], in[1]}, 1); });
        });
        add("repeat_leading", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({3, 4}, s, "x")}, [](const auto& in) { return ops::repeat_leading(in[0], 3); });
        });
        add("sum", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({2, 3, 4}, s, "x")}, [](const auto& in) { return ops::sum(in[0]); });
        });
        add("mean", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({2, 3, 4}, s, "x")}, [](const auto& in) { return ops::mean(in[0], 1); });
        });
        add("normalize_last", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({2, 3, 4}, s, "x", 0.1, 1.0)},
                             [](const auto& in) { return ops::normalize_last(in[0]); });
        });
        add("cross_entropy", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({3, 5}, s, "z", -3, 3), uniform({3, 5}, s, "t", 0.0, 1.0)},
                             [](const auto& in) { return ops::cross_entropy(in[0], in[1]); });
        });
        add("patchify", [](std::uint64_t s, bool c) {
            return make_case(s, c, {uniform({2, 3, 6, 6}, s, "x")}, [](const auto& in) { return ops::patchify(in[0], 3); });
        });
        return b;
    }();
    return builders;
}

TargetResult run_model(std::uint64_t seed, const SuiteOptions& options) {
    if (options.preset.rfind("desk-", 0) != 0) {
        throw ConfigError("gradcheck runs on desk presets only (got '" + options.preset + "')");
    }
    Model m(model_preset(options.preset), seed);
    // Parameters drawn away from zero so no ReLU input sits exactly on its kink.
    Rng rng = make_rng(seed, "gradcheck-suite.parameters");
    for (auto& p : m.store().parameters())
        for (double& v : p.tensor.mutable_values()) v = 0.3 * (2.0 * uniform01(rng) - 1.0);
    const std::size_t S = m.config().input_size;
    Tensor img = uniform({2, 3, S, S}, seed, "images", 0.0, 1.0);
    std::vector<Tensor> inputs{img};
    for (const auto& p : m.store().parameters()) inputs.push_back(p.tensor);
    GradcheckOptions opt;
    opt.max_probes = options.model_probes;
    opt.seed = seed;
    opt.refine_tolerance = options.threshold / 10.0;
    const bool corrupt = options.corrupt_backward;
    TargetResult r;
    r.name = "model";
    r.seed = seed;
    r.report = gradcheck(
        [&] {
            Tensor logits = m.forward(img, false).logits;
            if (corrupt) logits = corrupt_backward(logits);
            return weighted_mean(logits, seed);
        },
        inputs, opt);
    r.passed = r.report.max_relative_error < options.threshold;
    return r;
}

}  // namespace

std::vector<std::string> gradcheck_targets() {
    std::vector<std::string> names;
    for (const auto& [name, _] : primitive_builders()) names.push_back(name);
    names.emplace_back("model");
    return names;
}

TargetResult run_gradcheck_target(std::string_view name, std::uint64_t seed, const SuiteOptions& options) {
    if (name == "model") return run_model(seed, options);
    for (const auto& [n, build] : primitive_builders()) {
        if (n != name) continue;
        Case c = build(seed, options.corrupt_backward);
        GradcheckOptions opt;
        opt.seed = seed;
        opt.refine_tolerance = options.threshold / 10.0;
        TargetResult r;
        r.name = n;
        r.seed = seed;
        r.report = gradcheck(c.f, c.inputs, opt);
        r.passed = r.report.max_relative_error < options.threshold;
        return r;
    }
    std::string known;
    for (const auto& n : gradcheck_targets()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown gradcheck target '" + std::string(name) + "' (known: " + known + ")");
}

}  // namespace mvit
