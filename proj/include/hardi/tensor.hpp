#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "hardi/errors.hpp"

namespace hardi {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(Shape const& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(Shape const& shape)
{
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i)
        s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
}

//---------------------------------------------------------------------------//
/*!
 * Dense row-major n-d array with an optional gradient buffer.
 *
 * Activations are [batch, channels, length]; conv filters are
 * [out, in, kernel] and transposed-conv filters [in, out, kernel].
 */
template<class T>
struct Tensor
{
    using value_type = T;

    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T{0}) : shape(std::move(s)), values(shape_size(shape), fill) {}
    Tensor(Shape s, std::vector<T> v) : shape(std::move(s)), values(std::move(v))
    {
        if (values.size() != shape_size(shape))
            throw ShapeError("tensor of shape " + to_string(shape) + " given "
                             + std::to_string(values.size()) + " values");
    }

    std::size_t size() const { return values.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    T& operator[](std::size_t i) { return values[i]; }
    T const& operator[](std::size_t i) const { return values[i]; }

    T* data() { return values.data(); }
    T const* data() const { return values.data(); }

    bool has_grad() const { return !grad.empty(); }
    void ensure_grad()
    {
        if (grad.size() != values.size())
            grad.assign(values.size(), T{0});
    }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T{0}); }

    bool all_finite() const
    {
        return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
    }

    template<class U>
    Tensor<U> cast() const
    {
        Tensor<U> out;
        out.shape = shape;
        out.values.assign(values.begin(), values.end());
        return out;
    }
};

}  // namespace hardi
