#include "mvit/layers.hpp"

#include <cmath>

#include "mvit/errors.hpp"
#include "mvit/rng.hpp"

namespace mvit {

std::string join_name(std::string_view prefix, std::string_view leaf) {
    if (prefix.empty()) return std::string(leaf);
    return std::string(prefix) + "." + std::string(leaf);
}

Tensor ParameterStore::add(const std::string& name, Tensor t) {
    if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    t.set_requires_grad(true);
    params_.push_back({name, t});
    return t;
}

Tensor ParameterStore::zeros(const std::string& name, Shape shape) { return add(name, Tensor::zeros(std::move(shape))); }

Tensor ParameterStore::ones(const std::string& name, Shape shape) { return add(name, Tensor::full(std::move(shape), 1.0)); }

Tensor ParameterStore::truncated_normal(const std::string& name, Shape shape, double std) {
    Rng rng = make_rng(seed_, name);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = mvit::truncated_normal(rng, std);
    return add(name, Tensor::from(std::move(shape), std::move(v)));
}

Tensor ParameterStore::kaiming_conv(const std::string& name, Shape shape, std::size_t groups) {
    const double fan_out = static_cast<double>(shape[0] * shape[2] * shape[3]) / static_cast<double>(groups);
    const double std = std::sqrt(2.0 / fan_out);
    Rng rng = make_rng(seed_, name);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = standard_normal(rng) * std;
    return add(name, Tensor::from(std::move(shape), std::move(v)));
}

const Parameter* ParameterStore::find(std::string_view name) const {
    for (const auto& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

std::size_t ParameterStore::total_values() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, bool bias) {
    Linear l;
    l.weight = store.truncated_normal(join_name(name, "weight"), {out, in});
    if (bias) l.bias = store.zeros(join_name(name, "bias"), {out});
    return l;
}

Conv2d Conv2d::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                      std::size_t kernel, std::size_t stride, std::size_t groups) {
    Conv2d c;
    c.weight = store.kaiming_conv(join_name(name, "weight"), {out, in / groups, kernel, kernel}, groups);
    c.bias = store.zeros(join_name(name, "bias"), {out});
    c.options.stride = {stride, stride};
    c.options.padding = {(kernel - 1) / 2, (kernel - 1) / 2};
    c.options.groups = groups;
    return c;
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, std::size_t dim, double eps) {
    LayerNorm ln;
    ln.gamma = store.ones(join_name(name, "weight"), {dim});
    ln.beta = store.zeros(join_name(name, "bias"), {dim});
    ln.eps = eps;
    return ln;
}

}  // namespace mvit
