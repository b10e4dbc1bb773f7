#pragma once

// Reverse-mode automatic differentiation over Tensor<T>.
//
// Every op returns a Var that owns its output tensor, references its parents
// and carries a closure propagating the output gradient into the parents.
// backward(loss) walks the graph in reverse topological order.

#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "hardi/errors.hpp"
#include "hardi/tensor.hpp"

namespace hardi {

namespace testing {
/// Perturbs the conv1d weight gradient; only for negative-control selftests.
inline std::atomic<bool> inject_conv_grad_fault{false};
}  // namespace testing

//---------------------------------------------------------------------------//
// GRAPH
//---------------------------------------------------------------------------//

template<class T>
struct Node
{
    Tensor<T> data;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    bool requires_grad = false;
    std::string op = "leaf";
};

template<class T>
class Var
{
  public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    bool defined() const { return static_cast<bool>(node_); }
    Tensor<T>& tensor() { return node_->data; }
    Tensor<T> const& tensor() const { return node_->data; }
    Shape const& shape() const { return node_->data.shape; }
    std::vector<T>& values() { return node_->data.values; }
    std::vector<T> const& values() const { return node_->data.values; }
    std::vector<T> const& grad() const { return node_->data.grad; }
    std::vector<T>& grad() { return node_->data.grad; }
    bool requires_grad() const { return node_->requires_grad; }
    std::shared_ptr<Node<T>> const& node() const { return node_; }

    /// Scalar value of a one-element tensor.
    T item() const
    {
        if (node_->data.size() != 1)
            throw UsageError("item() on tensor of shape " + to_string(shape()));
        return node_->data.values[0];
    }

    void zero_grad() { node_->data.grad.assign(node_->data.size(), T{0}); }

  private:
    std::shared_ptr<Node<T>> node_;
};

/// Trainable leaf.
template<class T>
Var<T> parameter(Tensor<T> value)
{
    auto node = std::make_shared<Node<T>>();
    node->data = std::move(value);
    node->data.ensure_grad();
    node->requires_grad = true;
    node->op = "parameter";
    return Var<T>(std::move(node));
}

/// Non-trainable leaf.
template<class T>
Var<T> constant(Tensor<T> value)
{
    auto node = std::make_shared<Node<T>>();
    node->data = std::move(value);
    node->op = "constant";
    return Var<T>(std::move(node));
}

namespace detail {
inline thread_local bool grad_disabled = false;

/// Reduction accumulator: double, or T when T is wider.
template<class T>
using Accum = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;
}  // namespace detail

/// Disables graph recording on this thread for its lifetime (inference).
class NoGradGuard
{
  public:
    NoGradGuard() : previous_(detail::grad_disabled) { detail::grad_disabled = true; }
    ~NoGradGuard() { detail::grad_disabled = previous_; }
    NoGradGuard(NoGradGuard const&) = delete;
    NoGradGuard& operator=(NoGradGuard const&) = delete;

  private:
    bool previous_;
};

namespace detail {

template<class T>
void check_finite(Tensor<T> const& t, std::string const& op)
{
    if (!t.all_finite())
        throw NumericError("non-finite value produced by " + op);
}

template<class T>
Var<T> make_result(Tensor<T> out, std::type_identity_t<std::vector<Var<T>>> const& inputs,
                   std::string op, std::type_identity_t<std::function<void(Node<T>&)>> backward_fn)
{
    check_finite(out, op);
    auto node = std::make_shared<Node<T>>();
    node->data = std::move(out);
    node->op = std::move(op);
    if (!grad_disabled)
        for (auto const& in : inputs)
        {
            node->parents.push_back(in.node());
            node->requires_grad = node->requires_grad || in.requires_grad();
        }
    if (node->requires_grad)
        node->backward_fn = std::move(backward_fn);
    return Var<T>(std::move(node));
}

template<class T>
std::vector<T>& grad_of(Node<T>& n)
{
    n.data.ensure_grad();
    return n.data.grad;
}

}  // namespace detail

/*!
 * Accumulate d(loss)/d(node) into every node reachable from `loss`.
 *
 * Parameter gradients accumulate across calls; clear them with zero_grad.
 */
template<class T>
void backward(Var<T> const& loss)
{
    if (!loss.defined())
        throw UsageError("backward called before a forward pass built a graph");
    if (loss.tensor().size() != 1)
        throw UsageError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
    if (!loss.requires_grad())
        return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node().get(), 0}};
    visited.insert(loss.node().get());
    while (!stack.empty())
    {
        auto& [node, next] = stack.back();
        if (next < node->parents.size())
        {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second)
                stack.push_back({p, 0});
        }
        else
        {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Intermediate gradients start from zero on every call.
    for (auto* n : order)
        if (n->backward_fn)
            n->data.grad.assign(n->data.size(), T{0});
    detail::grad_of(*loss.node())[0] += T{1};

    for (auto it = order.rbegin(); it != order.rend(); ++it)
    {
        Node<T>& n = **it;
        if (n.backward_fn)
        {
            n.backward_fn(n);
            for (auto const& p : n.parents)
                if (p->requires_grad)
                    for (T g : p->data.grad)
                        if (!std::isfinite(g))
                            throw NumericError("non-finite gradient flowing out of " + n.op);
        }
    }
}

//---------------------------------------------------------------------------//
// CONVOLUTION
//---------------------------------------------------------------------------//

struct ConvSpec
{
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t output_padding = 0;
    bool has_bias = true;

    void validate() const
    {
        if (in_channels < 1 || out_channels < 1)
            throw ShapeError("conv channels must be positive");
        if (kernel < 1 || stride < 1)
            throw ShapeError("conv kernel and stride must be at least 1");
        if (output_padding >= stride)
            throw ShapeError("output_padding " + std::to_string(output_padding)
                             + " must be smaller than stride " + std::to_string(stride));
    }

    /// floor((n + 2p - k) / s) + 1
    std::size_t output_length(std::size_t n) const
    {
        long const span = static_cast<long>(n) + 2 * static_cast<long>(padding)
                          - static_cast<long>(kernel);
        if (span < 0)
            throw ShapeError("conv output length <= 0: (" + std::to_string(n) + " + 2*"
                             + std::to_string(padding) + " - " + std::to_string(kernel)
                             + ") / " + std::to_string(stride) + " + 1");
        return static_cast<std::size_t>(span) / stride + 1;
    }

    /// (n - 1) s - 2p + k + output_padding
    std::size_t transposed_output_length(std::size_t n) const
    {
        long const m = (static_cast<long>(n) - 1) * static_cast<long>(stride)
                       - 2 * static_cast<long>(padding) + static_cast<long>(kernel)
                       + static_cast<long>(output_padding);
        if (n == 0 || m <= 0)
            throw ShapeError("transposed conv output length <= 0: (" + std::to_string(n)
                             + " - 1)*" + std::to_string(stride) + " - 2*"
                             + std::to_string(padding) + " + " + std::to_string(kernel) + " + "
                             + std::to_string(output_padding) + " = " + std::to_string(m));
        return static_cast<std::size_t>(m);
    }

    Shape conv_filter_shape() const { return {out_channels, in_channels, kernel}; }
    Shape transposed_filter_shape() const { return {in_channels, out_channels, kernel}; }
};

namespace detail {

template<class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// [B, C, L] -> C x (B*L)
template<class T>
RowMat<T> to_channel_major(T const* x, std::size_t B, std::size_t C, std::size_t L)
{
    RowMat<T> out(C, B * L);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            std::copy_n(x + (b * C + c) * L, L, out.data() + c * B * L + b * L);
    return out;
}

/// C x (B*L) -> [B, C, L], added into `out`.
template<class T>
void add_from_channel_major(RowMat<T> const& m, T* out, std::size_t B, std::size_t C,
                            std::size_t L)
{
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
        {
            T const* src = m.data() + c * B * L + b * L;
            T* dst = out + (b * C + c) * L;
            for (std::size_t i = 0; i < L; ++i)
                dst[i] += src[i];
        }
}

/*!
 * Patch matrix (C*K) x (B*P) for a length-L signal with P output positions;
 * entry (c*K + k, b*P + p) = x[b, c, p*stride - pad + k], zero outside.
 */
template<class T>
RowMat<T> im2col(T const* x, std::size_t B, std::size_t C, std::size_t L, std::size_t K,
                 std::size_t stride, std::size_t pad, std::size_t P)
{
    RowMat<T> col(C * K, B * P);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t k = 0; k < K; ++k)
        {
            T* row = col.data() + (c * K + k) * B * P;
            for (std::size_t b = 0; b < B; ++b)
            {
                T const* src = x + (b * C + c) * L;
                for (std::size_t p = 0; p < P; ++p)
                {
                    long const i = static_cast<long>(p * stride + k) - static_cast<long>(pad);
                    row[b * P + p] = (i >= 0 && i < static_cast<long>(L))
                                         ? src[static_cast<std::size_t>(i)]
                                         : T{0};
                }
            }
        }
    return col;
}

/// Adjoint of im2col: scatter-add patch entries back into a [B, C, L] buffer.
template<class T>
void col2im(RowMat<T> const& col, T* x, std::size_t B, std::size_t C, std::size_t L,
            std::size_t K, std::size_t stride, std::size_t pad, std::size_t P)
{
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t k = 0; k < K; ++k)
        {
            T const* row = col.data() + (c * K + k) * B * P;
            for (std::size_t b = 0; b < B; ++b)
            {
                T* dst = x + (b * C + c) * L;
                for (std::size_t p = 0; p < P; ++p)
                {
                    long const i = static_cast<long>(p * stride + k) - static_cast<long>(pad);
                    if (i >= 0 && i < static_cast<long>(L))
                        dst[static_cast<std::size_t>(i)] += row[b * P + p];
                }
            }
        }
}

inline void check_activation(Shape const& s, std::size_t channels, std::string const& op)
{
    if (s.size() != 3)
        throw ShapeError(op + " expects [batch, channels, length], got " + to_string(s));
    if (s[1] != channels)
        throw ShapeError(op + " expects " + std::to_string(channels) + " input channels, got "
                         + std::to_string(s[1]));
}

}  // namespace detail

/*!
 * Strided 1D cross-correlation with zero padding and optional bias.
 *
 * input [B, C_in, N], filters [C_out, C_in, K], bias [C_out]
 * -> [B, C_out, floor((N + 2p - K)/s) + 1]
 */
template<class T>
Var<T> conv1d(Var<T> const& input, Var<T> const& filters, std::optional<Var<T>> const& bias,
              ConvSpec const& spec)
{
    using Mat = detail::RowMat<T>;
    spec.validate();
    detail::check_activation(input.shape(), spec.in_channels, "conv1d");
    if (filters.shape() != spec.conv_filter_shape())
        throw ShapeError("conv1d filters have shape " + to_string(filters.shape())
                         + ", expected " + to_string(spec.conv_filter_shape()));
    if (bias && bias->shape() != Shape{spec.out_channels})
        throw ShapeError("conv1d bias has shape " + to_string(bias->shape()));
    if (spec.has_bias != bias.has_value())
        throw ShapeError("conv1d bias presence does not match spec");

    std::size_t const B = input.shape()[0], Cin = spec.in_channels, N = input.shape()[2];
    std::size_t const Cout = spec.out_channels, K = spec.kernel;
    std::size_t const M = spec.output_length(N);

    auto col = std::make_shared<Mat>(
        detail::im2col(input.tensor().data(), B, Cin, N, K, spec.stride, spec.padding, M));
    Eigen::Map<Mat const> W(filters.tensor().data(), Cout, Cin * K);
    Mat Y = W * (*col);
    if (bias)
        for (std::size_t co = 0; co < Cout; ++co)
            Y.row(co).array() += bias->tensor()[co];

    Tensor<T> out({B, Cout, M});
    detail::add_from_channel_major(Y, out.data(), B, Cout, M);

    std::vector<Var<T>> inputs{input, filters};
    if (bias)
        inputs.push_back(*bias);
    bool const with_bias = bias.has_value();
    auto backward_fn = [col, spec, B, Cin, N, Cout, K, M, with_bias](Node<T>& self) {
        Mat const dY = detail::to_channel_major(self.data.grad.data(), B, Cout, M);
        auto& in = *self.parents[0];
        auto& w = *self.parents[1];
        if (w.requires_grad)
        {
            Eigen::Map<Mat> dW(detail::grad_of(w).data(), Cout, Cin * K);
            if (testing::inject_conv_grad_fault.load())
                dW.noalias() += T(1.01) * (dY * col->transpose());
            else
                dW.noalias() += dY * col->transpose();
        }
        if (with_bias && self.parents[2]->requires_grad)
        {
            auto& g = detail::grad_of(*self.parents[2]);
            for (std::size_t co = 0; co < Cout; ++co)
                g[co] += dY.row(co).sum();
        }
        if (in.requires_grad)
        {
            Eigen::Map<Mat const> W(w.data.data(), Cout, Cin * K);
            Mat const dcol = W.transpose() * dY;
            detail::col2im(dcol, detail::grad_of(in).data(), B, Cin, N, K, spec.stride,
                           spec.padding, M);
        }
    };
    return detail::make_result(std::move(out), inputs, "conv1d", backward_fn);
}

/*!
 * Transposed 1D convolution (adjoint of conv1d), no bias.
 *
 * input [B, C_in, N], filters [C_in, C_out, K]
 * -> [B, C_out, (N - 1)s - 2p + K + output_padding]
 */
template<class T>
Var<T> conv1d_transposed(Var<T> const& input, Var<T> const& filters, ConvSpec const& spec)
{
    using Mat = detail::RowMat<T>;
    spec.validate();
    if (spec.has_bias)
        throw ShapeError("conv1d_transposed does not support bias");
    detail::check_activation(input.shape(), spec.in_channels, "conv1d_transposed");
    if (filters.shape() != spec.transposed_filter_shape())
        throw ShapeError("conv1d_transposed filters have shape " + to_string(filters.shape())
                         + ", expected " + to_string(spec.transposed_filter_shape()));

    std::size_t const B = input.shape()[0], Cin = spec.in_channels, N = input.shape()[2];
    std::size_t const Cout = spec.out_channels, K = spec.kernel;
    std::size_t const M = spec.transposed_output_length(N);

    auto X = std::make_shared<Mat>(detail::to_channel_major(input.tensor().data(), B, Cin, N));
    Eigen::Map<Mat const> W(filters.tensor().data(), Cin, Cout * K);
    Mat const cols = W.transpose() * (*X);
    Tensor<T> out({B, Cout, M});
    detail::col2im(cols, out.data(), B, Cout, M, K, spec.stride, spec.padding, N);

    auto backward_fn = [X, spec, B, Cin, N, Cout, K, M](Node<T>& self) {
        Mat const dcols = detail::im2col(self.data.grad.data(), B, Cout, M, K, spec.stride,
                                         spec.padding, N);
        auto& in = *self.parents[0];
        auto& w = *self.parents[1];
        if (w.requires_grad)
        {
            Eigen::Map<Mat> dW(detail::grad_of(w).data(), Cin, Cout * K);
            dW.noalias() += (*X) * dcols.transpose();
        }
        if (in.requires_grad)
        {
            Eigen::Map<Mat const> W(w.data.data(), Cin, Cout * K);
            Mat const dX = W * dcols;
            detail::add_from_channel_major(dX, detail::grad_of(in).data(), B, Cin, N);
        }
    };
    return detail::make_result(std::move(out), {input, filters}, "conv1d_transposed",
                               backward_fn);
}

//---------------------------------------------------------------------------//
// ELEMENTWISE AND REDUCTIONS
//---------------------------------------------------------------------------//

/// max(0, x); the gradient at exactly 0 is 0.
template<class T>
Var<T> relu(Var<T> const& input)
{
    Tensor<T> out(input.shape());
    auto const& x = input.values();
    for (std::size_t i = 0; i < x.size(); ++i)
        out[i] = x[i] > T{0} ? x[i] : T{0};
    auto backward_fn = [](Node<T>& self) {
        auto& in = *self.parents[0];
        auto& g = detail::grad_of(in);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (in.data.values[i] > T{0})
                g[i] += self.data.grad[i];
    };
    return detail::make_result(std::move(out), {input}, "relu", backward_fn);
}

template<class T>
Var<T> add(Var<T> const& a, Var<T> const& b)
{
    if (a.shape() != b.shape())
        throw ShapeError("add: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.values()[i] + b.values()[i];
    auto backward_fn = [](Node<T>& self) {
        for (auto const& p : self.parents)
            if (p->requires_grad)
            {
                auto& g = detail::grad_of(*p);
                for (std::size_t i = 0; i < g.size(); ++i)
                    g[i] += self.data.grad[i];
            }
    };
    return detail::make_result(std::move(out), {a, b}, "add", backward_fn);
}

template<class T>
Var<T> scale(Var<T> const& a, T factor)
{
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = factor * a.values()[i];
    auto backward_fn = [factor](Node<T>& self) {
        auto& g = detail::grad_of(*self.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += factor * self.data.grad[i];
    };
    return detail::make_result(std::move(out), {a}, "scale", backward_fn);
}

/// Inner product <a, weights> as a scalar; weights are a constant.
template<class T>
Var<T> dot(Var<T> const& a, Tensor<T> const& weights)
{
    if (a.tensor().size() != weights.size())
        throw ShapeError("dot: size mismatch");
    using A = detail::Accum<T>;
    A acc = 0;
    for (std::size_t i = 0; i < weights.size(); ++i)
        acc += static_cast<A>(a.values()[i]) * static_cast<A>(weights[i]);
    Tensor<T> out(Shape{1}, static_cast<T>(acc));
    auto w = std::make_shared<std::vector<T>>(weights.values);
    auto backward_fn = [w](Node<T>& self) {
        auto& g = detail::grad_of(*self.parents[0]);
        T const up = self.data.grad[0];
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += up * (*w)[i];
    };
    return detail::make_result(std::move(out), {a}, "dot", backward_fn);
}

template<class T>
Var<T> sum(Var<T> const& a)
{
    return dot(a, Tensor<T>(a.shape(), T{1}));
}

//---------------------------------------------------------------------------//
// LOSS
//---------------------------------------------------------------------------//

inline constexpr double kTargetNormEpsilon = 1e-12;

/*!
 * Normalized mean squared error over a batch:
 *   (1/N) sum_n ||pred_n - target_n||^2 / ||target_n||^2
 * pred and target are [N, ...] with matching shapes; each sample is the
 * flattened trailing block.
 */
template<class T>
Var<T> nmse_loss(Var<T> const& pred, Tensor<T> const& target)
{
    if (pred.shape() != target.shape)
        throw ShapeError("nmse_loss: prediction " + to_string(pred.shape()) + " vs target "
                         + to_string(target.shape));
    if (pred.shape().empty() || pred.shape()[0] == 0)
        throw ShapeError("nmse_loss: empty batch");
    std::size_t const N = pred.shape()[0];
    std::size_t const per = target.size() / N;

    using A = detail::Accum<T>;
    auto inv_norm = std::make_shared<std::vector<A>>(N);
    A total = 0;
    for (std::size_t n = 0; n < N; ++n)
    {
        A ss = 0, err = 0;
        for (std::size_t i = 0; i < per; ++i)
        {
            A const s = target[n * per + i];
            A const d = static_cast<A>(pred.values()[n * per + i]) - s;
            ss += s * s;
            err += d * d;
        }
        if (!(std::sqrt(ss) > kTargetNormEpsilon))
            throw ValidationError("nmse_loss: target " + std::to_string(n)
                                  + " in the batch has near-zero norm");
        (*inv_norm)[n] = 1 / ss;
        total += err / ss;
    }
    Tensor<T> out(Shape{1}, static_cast<T>(total / static_cast<A>(N)));

    auto tgt = std::make_shared<std::vector<T>>(target.values);
    auto backward_fn = [tgt, inv_norm, N, per](Node<T>& self) {
        auto& in = *self.parents[0];
        auto& g = detail::grad_of(in);
        A const up = self.data.grad[0];
        for (std::size_t n = 0; n < N; ++n)
        {
            A const c = up * 2 * (*inv_norm)[n] / static_cast<A>(N);
            for (std::size_t i = 0; i < per; ++i)
            {
                std::size_t const k = n * per + i;
                g[k] += static_cast<T>(c * (static_cast<A>(in.data.values[k])
                                            - static_cast<A>((*tgt)[k])));
            }
        }
    };
    return detail::make_result(std::move(out), {pred}, "nmse_loss", backward_fn);
}

}  // namespace hardi
