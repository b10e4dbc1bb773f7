#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hardi/autodiff.hpp"
#include "hardi/errors.hpp"
#include "hardi/random.hpp"

namespace hardi {

/// He-uniform filter draw: U(-sqrt(6/fan_in), sqrt(6/fan_in)), fan_in = in_channels * kernel.
template<class T>
Tensor<T> he_uniform(Shape shape, std::size_t fan_in, std::uint64_t seed)
{
    if (fan_in == 0)
        throw ValidationError("fan_in must be positive");
    double const bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor<T> out(std::move(shape));
    Rng rng(seed);
    for (auto& v : out.values)
        v = static_cast<T>(rng.uniform(-bound, bound));
    return out;
}

template<class T>
struct ConvParams
{
    Tensor<T> filters;
    Tensor<T> bias;  // empty when the layer has no bias
};

/// Filters (+ zero bias) for a conv or transposed-conv layer.
template<class T>
ConvParams<T> init_params(ConvSpec const& spec, bool transposed, std::uint64_t seed)
{
    spec.validate();
    ConvParams<T> p;
    Shape const shape = transposed ? spec.transposed_filter_shape() : spec.conv_filter_shape();
    p.filters = he_uniform<T>(shape, spec.in_channels * spec.kernel, seed);
    if (spec.has_bias)
        p.bias = Tensor<T>(Shape{spec.out_channels}, T{0});
    return p;
}

//---------------------------------------------------------------------------//
// OPTIMIZERS
//---------------------------------------------------------------------------//

enum class OptimizerKind
{
    adam,
    sgd
};

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

inline OptimizerKind optimizer_from_string(std::string const& s)
{
    if (s == "adam")
        return OptimizerKind::adam;
    if (s == "sgd")
        return OptimizerKind::sgd;
    throw ValidationError("unknown optimizer '" + s + "' (expected adam or sgd)");
}

template<class T>
struct AdamState
{
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    std::uint64_t step = 0;

    void resize_for(std::vector<Var<T>> const& params)
    {
        m.resize(params.size());
        v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i)
        {
            m[i].assign(params[i].values().size(), T{0});
            v[i].assign(params[i].values().size(), T{0});
        }
        step = 0;
    }
};

struct AdamConfig
{
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update of every parameter from its grad buffer.
template<class T>
void adam_step(std::vector<Var<T>>& params, AdamState<T>& state, AdamConfig const& cfg)
{
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw ValidationError("Adam state holds " + std::to_string(state.m.size())
                              + " slots for " + std::to_string(params.size()) + " parameters");
    ++state.step;
    double const bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    double const bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i)
    {
        auto& w = params[i].values();
        auto const& g = params[i].grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != w.size() || v.size() != w.size() || g.size() != w.size())
            throw ValidationError("Adam state shape mismatch for parameter "
                                  + std::to_string(i));
        for (std::size_t k = 0; k < w.size(); ++k)
        {
            double const gk = g[k];
            double const mk = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            double const vk = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            m[k] = static_cast<T>(mk);
            v[k] = static_cast<T>(vk);
            w[k] -= static_cast<T>(cfg.lr * (mk / bc1) / (std::sqrt(vk / bc2) + cfg.eps));
        }
    }
}

template<class T>
void sgd_step(std::vector<Var<T>>& params, double lr)
{
    for (auto& p : params)
    {
        auto& w = p.values();
        auto const& g = p.grad();
        for (std::size_t k = 0; k < w.size(); ++k)
            w[k] -= static_cast<T>(lr * g[k]);
    }
}

}  // namespace hardi
