#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mvit/ops.hpp"
#include "mvit/tensor.hpp"

namespace mvit {

struct Parameter {
    std::string name;
    Tensor tensor;
};

/// Owns every trainable tensor of a model under a unique hierarchical name. Initial values are
/// drawn from a stream keyed by (seed, name), so they do not depend on registration order.
class ParameterStore {
public:
    explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}

    Tensor zeros(const std::string& name, Shape shape);
    Tensor ones(const std::string& name, Shape shape);
    Tensor truncated_normal(const std::string& name, Shape shape, double std = 0.02);
    /// He-normal with fan-out = out_channels * kh * kw / groups.
    Tensor kaiming_conv(const std::string& name, Shape shape, std::size_t groups);

    const std::vector<Parameter>& parameters() const { return params_; }
    std::vector<Parameter>& parameters() { return params_; }
    const Parameter* find(std::string_view name) const;
    std::size_t total_values() const;
    void zero_grad();

private:
    Tensor add(const std::string& name, Tensor t);

    std::uint64_t seed_;
    std::vector<Parameter> params_;
};

/// Joins name components with '.'.
std::string join_name(std::string_view prefix, std::string_view leaf);

struct Linear {
    Tensor weight;  // [out, in]
    Tensor bias;    // [out], may be undefined

    static Linear create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                         bool bias = true);
    Tensor operator()(const Tensor& x) const { return ops::linear(x, weight, bias); }
};

struct Conv2d {
    Tensor weight;  // [out, in/groups, k, k]
    Tensor bias;
    ops::Conv2dOptions options;

    static Conv2d create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                         std::size_t kernel, std::size_t stride, std::size_t groups = 1);
    Tensor operator()(const Tensor& x) const { return ops::conv2d(x, weight, bias, options); }
};

struct LayerNorm {
    Tensor gamma;
    Tensor beta;
    double eps = 1e-6;

    static LayerNorm create(ParameterStore& store, const std::string& name, std::size_t dim, double eps);
    Tensor operator()(const Tensor& x) const { return ops::layernorm(x, gamma, beta, eps); }
};

}  // namespace mvit
