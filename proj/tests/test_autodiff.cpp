#include <gtest/gtest.h>

#include <cmath>
#include <optional>

#include "hardi/autodiff.hpp"
#include "hardi/model.hpp"
#include "hardi/optim.hpp"
#include "hardi/selftest.hpp"

using namespace hardi;
using selftest::random_tensor;

namespace {

using OptVar = std::optional<Var<double>>;

// Direct loop evaluations used as oracles for the im2col kernels.
Tensor<double> naive_conv(Tensor<double> const& x, Tensor<double> const& w,
                          Tensor<double> const* b, ConvSpec const& s)
{
    std::size_t const B = x.shape[0], N = x.shape[2], M = s.output_length(N);
    Tensor<double> out({B, s.out_channels, M});
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t co = 0; co < s.out_channels; ++co)
            for (std::size_t m = 0; m < M; ++m)
            {
                double acc = b ? (*b)[co] : 0.0;
                for (std::size_t ci = 0; ci < s.in_channels; ++ci)
                    for (std::size_t k = 0; k < s.kernel; ++k)
                    {
                        long const pos = long(m * s.stride + k) - long(s.padding);
                        if (pos >= 0 && pos < long(N))
                            acc += w[(co * s.in_channels + ci) * s.kernel + k]
                                   * x[(n * s.in_channels + ci) * N + std::size_t(pos)];
                    }
                out[(n * s.out_channels + co) * M + m] = acc;
            }
    return out;
}

Tensor<double> naive_conv_t(Tensor<double> const& x, Tensor<double> const& w, ConvSpec const& s)
{
    std::size_t const B = x.shape[0], N = x.shape[2], M = s.transposed_output_length(N);
    Tensor<double> out({B, s.out_channels, M});
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t ci = 0; ci < s.in_channels; ++ci)
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t co = 0; co < s.out_channels; ++co)
                    for (std::size_t k = 0; k < s.kernel; ++k)
                    {
                        long const pos = long(i * s.stride + k) - long(s.padding);
                        if (pos >= 0 && pos < long(M))
                            out[(n * s.out_channels + co) * M + std::size_t(pos)]
                                += w[(ci * s.out_channels + co) * s.kernel + k]
                                   * x[(n * s.in_channels + ci) * N + i];
                    }
    return out;
}

double max_abs_diff(std::vector<double> const& a, std::vector<double> const& b)
{
    EXPECT_EQ(a.size(), b.size());
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

ConvSpec spec(std::size_t ci, std::size_t co, std::size_t k, std::size_t s, std::size_t p,
              std::size_t op = 0, bool bias = true)
{
    ConvSpec c;
    c.in_channels = ci;
    c.out_channels = co;
    c.kernel = k;
    c.stride = s;
    c.padding = p;
    c.output_padding = op;
    c.has_bias = bias;
    return c;
}

}  // namespace

//---------------------------------------------------------------------------//
// Convolution
//---------------------------------------------------------------------------//

TEST(Conv1d, LengthFormula)
{
    EXPECT_EQ(spec(1, 1, 9, 3, 3).output_length(90), 30u);
    EXPECT_EQ(spec(1, 1, 9, 3, 3).output_length(30), 10u);
    EXPECT_EQ(spec(1, 1, 9, 2, 4).output_length(10), 5u);
    EXPECT_EQ(spec(1, 1, 9, 2, 4, 1, false).transposed_output_length(5), 10u);
    EXPECT_EQ(spec(1, 1, 9, 3, 3, 0, false).transposed_output_length(10), 30u);
    EXPECT_EQ(spec(1, 1, 9, 3, 3, 0, false).transposed_output_length(30), 90u);
}

TEST(Conv1d, NonPositiveLengthMessageShowsArithmetic)
{
    try
    {
        spec(1, 1, 9, 1, 0).output_length(4);
        FAIL();
    }
    catch (ShapeError const& e)
    {
        EXPECT_NE(std::string(e.what()).find("(4 + 2*0 - 9)"), std::string::npos) << e.what();
    }
    EXPECT_THROW(spec(1, 1, 1, 1, 2, 0, false).transposed_output_length(1), ShapeError);
    EXPECT_THROW(spec(1, 1, 3, 2, 0, 2).validate(), ShapeError);
}

TEST(Conv1d, HandExample)
{
    auto x = constant(Tensor<double>({1, 1, 3}, {1, 2, 3}));
    auto w = constant(Tensor<double>({1, 1, 3}, {1, 1, 1}));
    auto y = conv1d(x, w, OptVar{}, spec(1, 1, 3, 1, 1, 0, false));
    EXPECT_EQ(y.values(), (std::vector<double>{3, 6, 5}));
}

TEST(Conv1d, UnitKernelIdentity)
{
    Rng rng(1);
    auto const t = random_tensor({3, 4, 11}, rng);
    Tensor<double> w({4, 4, 1});
    for (std::size_t c = 0; c < 4; ++c)
        w[c * 4 + c] = 1;
    auto y = conv1d(constant(t), constant(w), OptVar{}, spec(4, 4, 1, 1, 0, 0, false));
    EXPECT_EQ(y.values(), t.values);
}

TEST(Conv1d, MatchesLoopOracle)
{
    Rng rng(2);
    for (int trial = 0; trial < 30; ++trial)
    {
        auto const s = spec(1 + rng.below(5), 1 + rng.below(6), 1 + rng.below(9),
                            1 + rng.below(3), rng.below(5));
        std::size_t const N = s.kernel + rng.below(20);
        auto const x = random_tensor({1 + rng.below(3), s.in_channels, N}, rng);
        auto const w = random_tensor(s.conv_filter_shape(), rng);
        auto const b = random_tensor({s.out_channels}, rng);
        auto y = conv1d(constant(x), constant(w), OptVar{constant(b)}, s);
        auto const ref = naive_conv(x, w, &b, s);
        EXPECT_EQ(y.shape(), ref.shape);
        EXPECT_LT(max_abs_diff(y.values(), ref.values), 1e-12);
    }
}

TEST(Conv1dTransposed, MatchesLoopOracle)
{
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial)
    {
        std::size_t const stride = 1 + rng.below(3);
        auto const s = spec(1 + rng.below(5), 1 + rng.below(6), 1 + rng.below(9), stride,
                            rng.below(3), rng.below(stride), false);
        std::size_t const N = 2 + rng.below(10);
        if (long(N - 1) * long(stride) - 2 * long(s.padding) + long(s.kernel) <= 0)
            continue;
        auto const x = random_tensor({1 + rng.below(3), s.in_channels, N}, rng);
        auto const w = random_tensor(s.transposed_filter_shape(), rng);
        auto y = conv1d_transposed(constant(x), constant(w), s);
        auto const ref = naive_conv_t(x, w, s);
        EXPECT_EQ(y.shape(), ref.shape);
        EXPECT_LT(max_abs_diff(y.values(), ref.values), 1e-12);
    }
}

TEST(Conv1dTransposed, ZeroInputZeroOutputAndNoBias)
{
    auto const s = spec(3, 2, 9, 2, 4, 1, false);
    Rng rng(4);
    auto y = conv1d_transposed(constant(Tensor<double>({2, 3, 5})),
                               constant(random_tensor(s.transposed_filter_shape(), rng)), s);
    EXPECT_EQ(y.shape(), (Shape{2, 2, 10}));
    for (double v : y.values())
        EXPECT_EQ(v, 0.0);
    EXPECT_THROW(conv1d_transposed(constant(Tensor<double>({2, 3, 5})),
                                   constant(random_tensor(s.transposed_filter_shape(), rng)),
                                   spec(3, 2, 9, 2, 4, 1, true)),
                 ShapeError);
}

TEST(Conv1d, ShapeErrors)
{
    auto const s = spec(2, 3, 3, 1, 1);
    auto x = constant(Tensor<double>({1, 2, 8}));
    EXPECT_THROW(conv1d(constant(Tensor<double>({1, 3, 8})), constant(Tensor<double>({3, 2, 3})),
                        OptVar{constant(Tensor<double>({3}))}, s),
                 ShapeError);
    EXPECT_THROW(conv1d(x, constant(Tensor<double>({3, 2, 4})), OptVar{constant(Tensor<double>({3}))}, s),
                 ShapeError);
    EXPECT_THROW(conv1d(x, constant(Tensor<double>({3, 2, 3})), OptVar{constant(Tensor<double>({2}))}, s),
                 ShapeError);
    EXPECT_THROW(conv1d(x, constant(Tensor<double>({3, 2, 3})), OptVar{}, s), ShapeError);
}

TEST(Conv1d, AdjointOfTransposedForModelLayersAndRandomSpecs)
{
    auto const r = selftest::adjoint_suite(50, 3);
    EXPECT_TRUE(r.passed) << r.detail;
    EXPECT_LT(r.value, 1e-10);
}

TEST(Conv1d, ModelShapeChain)
{
    ModelConfig cfg;
    auto const enc = cfg.encoder_specs();
    auto const dec = cfg.decoder_specs();
    std::size_t n = 90;
    std::vector<std::size_t> down;
    for (auto const& s : enc)
        down.push_back(n = s.output_length(n));
    EXPECT_EQ(down, (std::vector<std::size_t>{30, 10, 5}));
    std::vector<std::size_t> up;
    for (auto const& s : dec)
        up.push_back(n = s.transposed_output_length(n));
    EXPECT_EQ(up, (std::vector<std::size_t>{10, 30, 90}));
}

//---------------------------------------------------------------------------//
// Elementwise and loss
//---------------------------------------------------------------------------//

TEST(Relu, ForwardAndGradient)
{
    auto y = relu(constant(Tensor<double>({3}, {-1, 0, 2})));
    EXPECT_EQ(y.values(), (std::vector<double>{0, 0, 2}));
    auto x = parameter(Tensor<double>({3}, {-1, 2, 0}));
    backward(sum(relu(x)));
    EXPECT_EQ(x.grad(), (std::vector<double>{0, 1, 0}));
    Rng rng(5);
    auto t = random_tensor({50}, rng);
    for (auto& v : t.values)
        v = std::abs(v);
    EXPECT_EQ(relu(constant(t)).values(), t.values);
}

TEST(NmseLoss, Examples)
{
    Rng rng(6);
    auto s = random_tensor({4, 1, 90}, rng);
    for (auto& v : s.values)
        v += 3;
    EXPECT_EQ(nmse_loss(constant(s), s).item(), 0.0);
    EXPECT_NEAR(nmse_loss(constant(Tensor<double>({4, 1, 90})), s).item(), 1.0, 1e-15);
    Tensor<double> twice = s;
    for (auto& v : twice.values)
        v *= 2;
    EXPECT_NEAR(nmse_loss(constant(twice), s).item(), 1.0, 1e-15);
}

TEST(NmseLoss, ScaleInvariant)
{
    Rng rng(7);
    auto const s = random_tensor({5, 1, 90}, rng);
    auto const p = random_tensor({5, 1, 90}, rng);
    double const base = nmse_loss(constant(p), s).item();
    for (double a : {-3.0, 1e-3, 7.5, 1e4})
    {
        Tensor<double> sa = s, pa = p;
        for (auto& v : sa.values)
            v *= a;
        for (auto& v : pa.values)
            v *= a;
        EXPECT_NEAR(nmse_loss(constant(pa), sa).item(), base, 1e-12 * base);
    }
}

TEST(NmseLoss, GradientClosedForm)
{
    Rng rng(8);
    auto const s = random_tensor({3, 1, 20}, rng);
    auto p = parameter(random_tensor({3, 1, 20}, rng));
    backward(nmse_loss(p, s));
    for (std::size_t n = 0; n < 3; ++n)
    {
        double ss = 0;
        for (std::size_t i = 0; i < 20; ++i)
            ss += s[n * 20 + i] * s[n * 20 + i];
        for (std::size_t i = 0; i < 20; ++i)
        {
            std::size_t const k = n * 20 + i;
            EXPECT_NEAR(p.grad()[k], 2 * (p.values()[k] - s[k]) / (3 * ss), 1e-15);
        }
    }
}

TEST(NmseLoss, ZeroTargetNamesIndex)
{
    Tensor<double> s({3, 1, 4}, 1.0);
    for (std::size_t i = 4; i < 8; ++i)
        s[i] = 0;
    try
    {
        nmse_loss(constant(Tensor<double>({3, 1, 4})), s);
        FAIL();
    }
    catch (ValidationError const& e)
    {
        EXPECT_NE(std::string(e.what()).find("target 1"), std::string::npos) << e.what();
    }
    EXPECT_THROW(nmse_loss(constant(Tensor<double>({3, 1, 5})), s), ShapeError);
}

//---------------------------------------------------------------------------//
// Backward
//---------------------------------------------------------------------------//

TEST(Backward, FiniteDifferenceSuite)
{
    for (auto const& r : selftest::gradient_suite({}))
    {
        EXPECT_TRUE(r.passed) << r.name << ": " << r.value << " " << r.detail;
        EXPECT_LT(r.value, 1e-5) << r.name;
    }
}

TEST(Backward, BeforeForwardIsUsageError)
{
    EXPECT_THROW(backward(Var<double>{}), UsageError);
    auto x = parameter(Tensor<double>({2}, 1.0));
    EXPECT_THROW(backward(x), UsageError);
}

TEST(Backward, ConstantLossGivesZeroGradient)
{
    auto x = parameter(Tensor<double>({4}, {1, 2, 3, 4}));
    backward(sum(scale(x, 0.0)));
    for (double g : x.grad())
        EXPECT_EQ(g, 0.0);
}

TEST(Backward, SummedLossesAddGradients)
{
    Rng rng(9);
    auto const s1 = random_tensor({1, 1, 30}, rng);
    auto const s2 = random_tensor({1, 1, 30}, rng);
    auto const W = random_tensor({2, 1, 5}, rng);
    auto const x1 = random_tensor({1, 1, 30}, rng);
    auto const x2 = random_tensor({1, 1, 30}, rng);
    auto const sp = spec(1, 2, 5, 1, 2, 0, false);
    auto const spt = spec(2, 1, 5, 1, 2, 0, false);
    auto w = parameter(W);
    auto const Wt = random_tensor({2, 1, 5}, rng);
    auto f = [&](Tensor<double> const& x, Tensor<double> const& s) {
        return nmse_loss(conv1d_transposed(relu(conv1d(constant(x), w, OptVar{}, sp)), constant(Wt), spt), s);
    };
    backward(f(x1, s1));
    auto g1 = w.grad();
    w.zero_grad();
    backward(f(x2, s2));
    auto g2 = w.grad();
    w.zero_grad();
    backward(add(f(x1, s1), f(x2, s2)));
    for (std::size_t i = 0; i < g1.size(); ++i)
        EXPECT_NEAR(w.grad()[i], g1[i] + g2[i], 1e-14);
}

TEST(Backward, NoGradGuardRecordsNothing)
{
    auto x = parameter(Tensor<double>({3}, 1.0));
    {
        NoGradGuard guard;
        auto y = sum(scale(x, 2.0));
        EXPECT_FALSE(y.requires_grad());
        EXPECT_TRUE(y.node()->parents.empty());
    }
    EXPECT_TRUE(sum(x).requires_grad());
}

TEST(Backward, NonFiniteForwardDetected)
{
    auto x = parameter(Tensor<double>({2}, {1.0, 1e308}));
    EXPECT_THROW(scale(x, 1e10), NumericError);
}

TEST(Backward, InjectedConvFaultIsCaught)
{
    hardi::testing::inject_conv_grad_fault = true;
    auto const results = selftest::gradient_suite({});
    hardi::testing::inject_conv_grad_fault = false;
    bool any_conv_failed = false;
    for (auto const& r : results)
        if (r.name.starts_with("conv1d[") && !r.passed)
            any_conv_failed = true;
    EXPECT_TRUE(any_conv_failed);
}

TEST(Backward, FloatMatchesDouble)
{
    Rng rng(10);
    auto const s = spec(4, 8, 9, 3, 3);
    auto const x = random_tensor({2, 4, 90}, rng);
    auto const w = random_tensor(s.conv_filter_shape(), rng, 0.2);
    auto const b = random_tensor({8}, rng);
    auto const R = random_tensor({2, 8, 30}, rng);
    auto wd = parameter(w);
    backward(dot(conv1d(constant(x), wd, OptVar{constant(b)}, s), R));
    auto wf = parameter(w.cast<float>());
    backward(dot(conv1d(constant(x.cast<float>()), wf, std::optional<Var<float>>{constant(b.cast<float>())}, s),
                 R.cast<float>()));
    for (std::size_t i = 0; i < wd.grad().size(); ++i)
        EXPECT_NEAR(wf.grad()[i], wd.grad()[i], 1e-4 * (1 + std::abs(wd.grad()[i])));
}

//---------------------------------------------------------------------------//
// Initialization and optimizers
//---------------------------------------------------------------------------//

TEST(Init, HeUniformBoundsVarianceAndBias)
{
    auto const s = spec(36, 3000, 9, 1, 0);
    auto const p = init_params<double>(s, false, 12);
    double const fan_in = 36 * 9;
    double const bound = std::sqrt(6 / fan_in);
    double sq = 0;
    for (double v : p.filters.values)
    {
        ASSERT_LE(std::abs(v), bound);
        sq += v * v;
    }
    double const var = sq / double(p.filters.size());
    EXPECT_NEAR(var, 2 / fan_in, 0.05 * 2 / fan_in);
    for (double v : p.bias.values)
        EXPECT_EQ(v, 0.0);
    EXPECT_EQ(init_params<double>(s, false, 12).filters.values, p.filters.values);
    EXPECT_NE(init_params<double>(s, false, 13).filters.values, p.filters.values);
    auto const t = init_params<double>(spec(5, 3, 9, 2, 4, 1, false), true, 1);
    EXPECT_EQ(t.filters.shape, (Shape{5, 3, 9}));
    EXPECT_TRUE(t.bias.values.empty());
}

TEST(Adam, ZeroGradientLeavesParams)
{
    std::vector<Var<double>> params{parameter(Tensor<double>({5}, {1, 2, 3, 4, 5}))};
    AdamState<double> st;
    st.resize_for(params);
    adam_step(params, st, {});
    EXPECT_EQ(params[0].values(), (std::vector<double>{1, 2, 3, 4, 5}));
}

TEST(Adam, FirstStepClosedForm)
{
    std::vector<Var<double>> params{parameter(Tensor<double>({4}, {0, 0, 0, 0}))};
    params[0].grad() = {0.5, -2, 1e-3, 0};
    AdamState<double> st;
    st.resize_for(params);
    AdamConfig cfg;
    adam_step(params, st, cfg);
    for (std::size_t i = 0; i < 4; ++i)
    {
        double const g = std::vector<double>{0.5, -2, 1e-3, 0}[i];
        EXPECT_NEAR(params[0].values()[i], -cfg.lr * g / (std::abs(g) + cfg.eps), 1e-15);
    }
}

TEST(Adam, DeterministicAndShapeChecked)
{
    auto run = [] {
        Rng rng(14);
        std::vector<Var<double>> params{parameter(random_tensor({1, 1, 10}, rng))};
        AdamState<double> st;
        st.resize_for(params);
        auto const target = random_tensor({1, 1, 10}, rng);
        for (int i = 0; i < 10; ++i)
        {
            params[0].zero_grad();
            backward(nmse_loss(params[0], target));
            adam_step(params, st, {});
        }
        return params[0].values();
    };
    EXPECT_EQ(run(), run());

    std::vector<Var<double>> params{parameter(Tensor<double>({3}))};
    AdamState<double> st;
    EXPECT_THROW(adam_step(params, st, {}), ValidationError);
    std::vector<Var<double>> other{parameter(Tensor<double>({4}))};
    st.resize_for(other);
    EXPECT_THROW(adam_step(params, st, {}), ValidationError);
}

TEST(Optimizer, Strings)
{
    EXPECT_EQ(optimizer_from_string("adam"), OptimizerKind::adam);
    EXPECT_EQ(optimizer_from_string("sgd"), OptimizerKind::sgd);
    EXPECT_THROW(optimizer_from_string("rmsprop"), ValidationError);
}
