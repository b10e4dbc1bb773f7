#pragma once

// Numerical self-checks: central finite differences against reverse-mode
// gradients, the conv / transposed-conv adjoint identity, and optimality of
// the sparse and ridge solvers against independent iterative oracles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hardi/autodiff.hpp"
#include "hardi/dictionary.hpp"
#include "hardi/model.hpp"
#include "hardi/random.hpp"
#include "hardi/solvers.hpp"

namespace hardi::selftest {

struct CheckResult
{
    std::string name;
    bool passed = false;
    double value = 0;      // worst observed error
    double threshold = 0;  // pass if value < threshold
    std::string detail;
};

//---------------------------------------------------------------------------//
// GRADIENT CHECKS
//---------------------------------------------------------------------------//

struct GradCheckOptions
{
    double eps = 1e-6;
    double tolerance = 1e-5;
    /// Denominator floor of the relative error.
    double floor = 1e-6;
    std::size_t coords = 100;
    std::uint64_t seed = 1;
};

/// Loss plus the ReLU activation pattern that produced it.
struct TracedLoss
{
    Var<double> loss;
    std::vector<std::uint8_t> pattern;
};

using LossBuilder = std::function<TracedLoss()>;

/// Loss re-evaluated in extended precision from the current parameter values.
struct PreciseLoss
{
    long double loss = 0;
    std::vector<std::uint8_t> pattern;
};
using PreciseBuilder = std::function<PreciseLoss()>;

inline double relative_error(double a, double b, double floor)
{
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/*!
 * Compare analytic gradients of `build` with central differences on a
 * seeded sample of coordinates spread evenly across `params`.
 *
 * A coordinate whose +-eps probes change the ReLU pattern straddles a kink
 * where the loss is not differentiable; it is replaced by another draw.
 */
inline CheckResult gradient_check(std::string name, LossBuilder const& build,
                                  std::vector<Var<double>> params, GradCheckOptions const& opt,
                                  PreciseBuilder const& precise = {})
{
    for (auto& p : params)
        p.zero_grad();
    auto const base = build();
    backward(base.loss);
    std::vector<std::vector<double>> analytic;
    for (auto const& p : params)
        analytic.push_back(p.grad());

    Rng rng(opt.seed);
    std::size_t const per = (opt.coords + params.size() - 1) / params.size();
    double worst = 0;
    std::size_t checked = 0;
    std::size_t skipped = 0;
    std::string worst_at;
    for (std::size_t pi = 0; pi < params.size(); ++pi)
    {
        auto& vals = params[pi].values();
        std::size_t const n = vals.size();
        std::size_t const want = std::min(per, n);
        std::size_t done = 0;
        std::size_t attempts = 0;
        while (done < want && attempts < 20 * want + 20)
        {
            ++attempts;
            std::size_t const i = n <= want ? (done + skipped) % n : static_cast<std::size_t>(rng.below(n));
            double const orig = vals[i];
            long double lp, lm;
            std::vector<std::uint8_t> pp, pm;
            auto evaluate = [&](long double& l, std::vector<std::uint8_t>& pat) {
                if (precise)
                {
                    auto r = precise();
                    l = r.loss;
                    pat = std::move(r.pattern);
                }
                else
                {
                    auto r = build();
                    l = r.loss.item();
                    pat = std::move(r.pattern);
                }
            };
            {
                NoGradGuard guard;
                vals[i] = orig + opt.eps;
                evaluate(lp, pp);
                vals[i] = orig - opt.eps;
                evaluate(lm, pm);
                vals[i] = orig;
            }
            if (pp != base.pattern || pm != base.pattern)
            {
                ++skipped;
                continue;
            }
            double const numeric = static_cast<double>((lp - lm) / (2 * static_cast<long double>(opt.eps)));
            double const err = relative_error(analytic[pi][i], numeric, opt.floor);
            if (err > worst)
            {
                worst = err;
                worst_at = "param " + std::to_string(pi) + "[" + std::to_string(i)
                           + "] analytic " + std::to_string(analytic[pi][i]) + " numeric "
                           + std::to_string(numeric);
            }
            ++done;
            ++checked;
        }
    }
    CheckResult r;
    r.name = std::move(name);
    r.value = worst;
    r.threshold = opt.tolerance;
    r.passed = worst < opt.tolerance && checked >= std::min<std::size_t>(opt.coords, 1);
    r.detail = std::to_string(checked) + " coordinates, " + std::to_string(skipped)
               + " kink-straddling skipped";
    if (!worst_at.empty())
        r.detail += "; worst at " + worst_at;
    return r;
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0)
{
    Tensor<double> t(std::move(shape));
    for (auto& v : t.values)
        v = scale * rng.normal();
    return t;
}

template<class T>
std::vector<std::uint8_t> relu_pattern(Tensor<T> const& pre)
{
    std::vector<std::uint8_t> out(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i)
        out[i] = pre.values[i] > 0;
    return out;
}

/// Gradient checks of every differentiable op and of the composed model.
inline std::vector<CheckResult> gradient_suite(GradCheckOptions const& opt,
                                               ModelConfig const& cfg = {})
{
    std::vector<CheckResult> results;
    Rng rng(mix_seed(opt.seed, 77));
    auto const enc = cfg.encoder_specs();
    auto const dec = cfg.decoder_specs();
    auto const lengths = cfg.length_chain();

    for (std::size_t i = 0; i < enc.size(); ++i)
    {
        auto const& s = enc[i];
        auto x = parameter(random_tensor({2, s.in_channels, lengths[i]}, rng));
        auto w = parameter(random_tensor(s.conv_filter_shape(), rng, 1.0 / std::sqrt(double(s.in_channels * s.kernel))));
        auto b = parameter(random_tensor({s.out_channels}, rng));
        auto const R = random_tensor({2, s.out_channels, lengths[i + 1]}, rng);
        results.push_back(gradient_check(
            "conv1d[encoder." + std::to_string(i) + "]",
            [&] { return TracedLoss{dot(conv1d(x, w, std::optional<Var<double>>(b), s), R), {}}; },
            {w, b, x}, opt));
    }
    for (std::size_t i = 0; i < dec.size(); ++i)
    {
        auto const& s = dec[i];
        std::size_t const n_in = lengths[lengths.size() - 1 - i];
        std::size_t const n_out = lengths[lengths.size() - 2 - i];
        auto x = parameter(random_tensor({2, s.in_channels, n_in}, rng));
        auto w = parameter(random_tensor(s.transposed_filter_shape(), rng, 1.0 / std::sqrt(double(s.in_channels * s.kernel))));
        auto const R = random_tensor({2, s.out_channels, n_out}, rng);
        results.push_back(gradient_check(
            "conv1d_transposed[decoder." + std::to_string(i) + "]",
            [&] { return TracedLoss{dot(conv1d_transposed(x, w, s), R), {}}; }, {w, x}, opt));
    }
    {
        auto t = random_tensor({2, 3, 40}, rng);
        for (auto& v : t.values)
            v += v >= 0 ? 0.05 : -0.05;  // keep away from the kink
        auto x = parameter(std::move(t));
        auto const R = random_tensor({2, 3, 40}, rng);
        results.push_back(gradient_check(
            "relu", [&] { return TracedLoss{dot(relu(x), R), relu_pattern(x.tensor())}; }, {x}, opt));
    }
    {
        auto a = parameter(random_tensor({2, 4, 15}, rng));
        auto b = parameter(random_tensor({2, 4, 15}, rng));
        auto const R = random_tensor({2, 4, 15}, rng);
        results.push_back(gradient_check(
            "add/scale/sum",
            [&] { return TracedLoss{scale(sum(add(scale(a, 0.5), b)), 0.1), {}}; },
            {a, b}, opt));
        results.push_back(gradient_check(
            "dot", [&] { return TracedLoss{dot(scale(a, -2.0), R), {}}; }, {a}, opt));
    }
    {
        auto p = parameter(random_tensor({4, 1, 90}, rng));
        auto target = random_tensor({4, 1, 90}, rng);
        for (auto& v : target.values)
            v = std::abs(v) + 0.1;
        results.push_back(gradient_check(
            "nmse_loss", [&] { return TracedLoss{nmse_loss(p, target), {}}; }, {p}, opt));
    }

    // Composed model with the ReLU pattern of every encoder layer traced.
    {
        auto params = ModelParams<double>::init(cfg, mix_seed(opt.seed, 5));
        auto const x = random_tensor({2, kInputChannels, cfg.k_high}, rng);
        Tensor<double> target({2, 1, cfg.k_high});
        for (auto& v : target.values)
            v = 0.1 + rng.uniform01();
        auto build = [&] {
            TracedLoss out;
            Var<double> h = constant(x);
            for (std::size_t i = 0; i < enc.size(); ++i)
            {
                auto pre = conv1d(h, params.encoder_filters[i],
                                  std::optional<Var<double>>(params.encoder_biases[i]), enc[i]);
                auto const pat = relu_pattern(pre.tensor());
                out.pattern.insert(out.pattern.end(), pat.begin(), pat.end());
                h = relu(pre);
            }
            out.loss = nmse_loss(decode(h, params, cfg), target);
            return out;
        };
        // Finite differences of an O(1) loss at eps = 1e-6 carry ~1e-10 of
        // double roundoff, comparable to the smallest model gradients, so
        // the probes are evaluated in long double.
        auto precise = [&] {
            using LD = long double;
            auto widen = [](Var<double> const& v) {
                return constant(v.tensor().cast<LD>());
            };
            ModelParams<LD> wide;
            for (auto const& f : params.encoder_filters)
                wide.encoder_filters.push_back(widen(f));
            for (auto const& b : params.encoder_biases)
                wide.encoder_biases.push_back(widen(b));
            for (auto const& f : params.decoder_filters)
                wide.decoder_filters.push_back(widen(f));
            PreciseLoss out;
            Var<LD> h = constant(x.cast<LD>());
            for (std::size_t i = 0; i < enc.size(); ++i)
            {
                auto pre = conv1d(h, wide.encoder_filters[i],
                                  std::optional<Var<LD>>(wide.encoder_biases[i]), enc[i]);
                auto const pat = relu_pattern(pre.tensor());
                out.pattern.insert(out.pattern.end(), pat.begin(), pat.end());
                h = relu(pre);
            }
            out.loss = nmse_loss(decode(h, wide, cfg), target.cast<LD>()).item();
            return out;
        };
        GradCheckOptions o = opt;
        o.coords = std::max<std::size_t>(opt.coords, 9 * 12);
        results.push_back(gradient_check("model", build, params.all(), o, precise));
    }
    return results;
}

//---------------------------------------------------------------------------//
// ADJOINT IDENTITY
//---------------------------------------------------------------------------//

/// <conv(x), y> against <x, convT(y)> with shared filters; worst relative gap.
inline double adjoint_gap(ConvSpec spec, std::size_t length, std::size_t batch, Rng& rng)
{
    spec.has_bias = false;
    std::size_t const m = spec.output_length(length);
    ConvSpec tspec = spec;
    std::swap(tspec.in_channels, tspec.out_channels);
    tspec.output_padding = (length + 2 * spec.padding - spec.kernel) % spec.stride;

    auto const x = random_tensor({batch, spec.in_channels, length}, rng);
    auto const y = random_tensor({batch, spec.out_channels, m}, rng);
    auto const w = random_tensor(spec.conv_filter_shape(), rng);
    NoGradGuard guard;
    auto const cx = conv1d(constant(x), constant(w), std::optional<Var<double>>{}, spec);
    auto const ty = conv1d_transposed(constant(y), constant(w), tspec);
    if (ty.shape() != x.shape)
        throw ShapeError("adjoint: transposed output " + to_string(ty.shape()) + " vs input "
                         + to_string(x.shape));
    long double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
        lhs += static_cast<long double>(cx.values()[i]) * y.values[i];
    for (std::size_t i = 0; i < x.size(); ++i)
        rhs += static_cast<long double>(x.values[i]) * ty.values()[i];
    return static_cast<double>(std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1e-300L}));
}

inline CheckResult adjoint_suite(std::size_t draws = 50, std::uint64_t seed = 3,
                                 ModelConfig const& cfg = {})
{
    Rng rng(seed);
    double worst = 0;
    auto const lengths = cfg.length_chain();
    auto const enc = cfg.encoder_specs();
    std::size_t done = 0;
    for (std::size_t i = 0; i < enc.size() && done < draws; ++i, ++done)
        worst = std::max(worst, adjoint_gap(enc[i], lengths[i], 2, rng));
    for (; done < draws; ++done)
    {
        ConvSpec s;
        s.in_channels = 1 + rng.below(8);
        s.out_channels = 1 + rng.below(8);
        s.kernel = 1 + rng.below(9);
        s.stride = 1 + rng.below(4);
        s.padding = rng.below(s.kernel);
        std::size_t const length = s.kernel + rng.below(40);
        worst = std::max(worst, adjoint_gap(s, length, 1 + rng.below(3), rng));
    }
    return {"conv/convT adjoint", worst < 1e-10, worst, 1e-10,
            std::to_string(draws) + " shape draws including the model layers"};
}

//---------------------------------------------------------------------------//
// SOLVER OPTIMALITY
//---------------------------------------------------------------------------//

inline Dictionary raw_dictionary(Eigen::MatrixXd A)
{
    Dictionary d;
    d.basis = BasisDescriptor::sh(0);
    d.basis.regularization.assign(static_cast<std::size_t>(A.cols()), 1.0);
    d.matrix = std::move(A);
    return d;
}

/// Cyclic coordinate descent for ||A f - l||^2 + lambda ||f||_1.
inline Eigen::VectorXd coordinate_descent_l1(Eigen::MatrixXd const& A, Eigen::VectorXd const& l,
                                             double lambda, std::size_t max_passes = 1000000,
                                             double tol = 1e-15)
{
    Eigen::Index const n = A.cols();
    Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd r = l;
    Eigen::VectorXd const sq = A.colwise().squaredNorm();
    for (std::size_t pass = 0; pass < max_passes; ++pass)
    {
        double change = 0;
        for (Eigen::Index j = 0; j < n; ++j)
        {
            double const rho = A.col(j).dot(r) + sq[j] * f[j];
            double const mag = std::abs(rho) - lambda / 2;
            double const next = mag > 0 ? std::copysign(mag, rho) / sq[j] : 0.0;
            double const d = next - f[j];
            if (d != 0)
            {
                r -= d * A.col(j);
                f[j] = next;
                change = std::max(change, std::abs(d));
            }
        }
        if (change <= tol * std::max(1.0, f.cwiseAbs().maxCoeff()))
            break;
    }
    return f;
}

/// Largest violation of the L1 subgradient condition, relative to lambda.
inline double kkt_residual(Eigen::MatrixXd const& A, Eigen::VectorXd const& l,
                           Eigen::VectorXd const& f, double lambda)
{
    Eigen::VectorXd const g = 2.0 * (A.transpose() * (A * f - l));
    double worst = 0;
    for (Eigen::Index i = 0; i < f.size(); ++i)
    {
        double const v = f[i] != 0 ? std::abs(g[i] + lambda * (f[i] > 0 ? 1.0 : -1.0))
                                   : std::max(0.0, std::abs(g[i]) - lambda);
        worst = std::max(worst, v / lambda);
    }
    return worst;
}

struct FistaSuiteResult
{
    CheckResult objective;
    CheckResult kkt;
};

inline FistaSuiteResult fista_suite(std::size_t instances = 100, std::uint64_t seed = 11,
                                    std::size_t rows = 30, std::size_t cols = 45)
{
    Rng rng(seed);
    double worst_obj = 0, worst_kkt = 0;
    SolverConfig cfg;
    cfg.max_iters = 200000;
    cfg.tolerance = 1e-16;
    for (std::size_t t = 0; t < instances; ++t)
    {
        Eigen::MatrixXd A(rows, cols);
        for (Eigen::Index i = 0; i < A.size(); ++i)
            A.data()[i] = rng.normal() / std::sqrt(double(rows));
        Eigen::VectorXd l(rows);
        for (Eigen::Index i = 0; i < l.size(); ++i)
            l[i] = rng.normal();
        double const lam_max = 2 * (A.transpose() * l).cwiseAbs().maxCoeff();
        cfg.lambda = lam_max * rng.uniform(0.02, 0.5);
        auto const dict = raw_dictionary(A);
        auto const rep = solve_l1_fista(dict, l, cfg);
        auto const oracle = coordinate_descent_l1(A, l, cfg.lambda);
        double const fo = detail::l1_objective(A, l, oracle, cfg.lambda);
        double const ff = detail::l1_objective(A, l, rep.coeffs, cfg.lambda);
        worst_obj = std::max(worst_obj, std::abs(ff - fo) / std::abs(fo));
        worst_kkt = std::max(worst_kkt, kkt_residual(A, l, rep.coeffs, cfg.lambda));
    }
    std::string const d = std::to_string(instances) + " random " + std::to_string(rows) + "x"
                          + std::to_string(cols) + " instances";
    return {{"fista vs coordinate descent", worst_obj < 1e-6, worst_obj, 1e-6, d},
            {"fista KKT residual / lambda", worst_kkt < 1e-4, worst_kkt, 1e-4, d}};
}

/// Noiseless 5-sparse coefficients on K_L = 30 of a 90-direction scheme.
inline CheckResult planted_sparse_check(std::uint64_t seed = 21, std::size_t trials = 20)
{
    auto const scheme = fibonacci_hemisphere(90, 2000);
    auto const dH = build_dictionary(scheme, BasisDescriptor::sh(8));
    auto const sub = select_subset(scheme, 30, SubsetStrategy::uniform_angular);
    auto const dL = restrict_dictionary(dH, sub);
    Rng rng(seed);
    SolverConfig cfg;
    cfg.lambda = 1e-6;
    cfg.max_iters = 100000;
    cfg.tolerance = 1e-16;
    double worst = 0;
    for (std::size_t t = 0; t < trials; ++t)
    {
        Eigen::VectorXd f = Eigen::VectorXd::Zero(45);
        std::vector<std::size_t> idx(45);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t i = 0; i < 5; ++i)
        {
            std::swap(idx[i], idx[i + rng.below(45 - i)]);
            f[static_cast<Eigen::Index>(idx[i])] = rng.normal();
        }
        Eigen::VectorXd const truth = dH.matrix * f;
        Eigen::VectorXd const rec = reconstruct_from_measurement(dL, dH, dL.matrix * f, cfg, SolverMethod::l1);
        worst = std::max(worst, (rec - truth).squaredNorm() / truth.squaredNorm());
    }
    return {"planted 5-sparse recovery NMSE", worst < 1e-3, worst, 1e-3,
            std::to_string(trials) + " noiseless trials, K_L=30"};
}

/// Ridge closed form against plain gradient descent on the same objective.
inline CheckResult ridge_suite(std::size_t instances = 20, std::uint64_t seed = 31)
{
    Rng rng(seed);
    double worst = 0;
    for (std::size_t t = 0; t < instances; ++t)
    {
        std::size_t const rows = 10 + rng.below(30);
        Eigen::MatrixXd A(rows, 45);
        for (Eigen::Index i = 0; i < A.size(); ++i)
            A.data()[i] = rng.normal() / std::sqrt(double(rows));
        Eigen::VectorXd l(rows);
        for (Eigen::Index i = 0; i < l.size(); ++i)
            l[i] = rng.normal();
        SolverConfig cfg;
        cfg.lambda = t % 2 ? 0.01 : rng.uniform(0.05, 1.0);
        auto const closed = solve_l2(raw_dictionary(A), l, cfg).coeffs;

        Eigen::MatrixXd const H = 2.0 * (A.transpose() * A + cfg.lambda * Eigen::MatrixXd::Identity(45, 45));
        Eigen::VectorXd const c = 2.0 * (A.transpose() * l);
        double const step = 1.0 / (power_iteration_sq_norm(A) * 2.0 + 2.0 * cfg.lambda);
        Eigen::VectorXd f = Eigen::VectorXd::Zero(45);
        for (int it = 0; it < 2000000; ++it)
        {
            Eigen::VectorXd const g = H * f - c;
            if (g.norm() < 1e-14 * c.norm())
                break;
            f -= step * g;
        }
        worst = std::max(worst, (closed - f).norm() / f.norm());
    }
    return {"ridge vs gradient descent", worst < 1e-8, worst, 1e-8,
            std::to_string(instances) + " random instances"};
}

/// Everything the command-line self-test runs.
inline std::vector<CheckResult> run_all(GradCheckOptions const& opt = {})
{
    auto out = gradient_suite(opt);
    out.push_back(adjoint_suite());
    auto f = fista_suite(20);
    out.push_back(f.objective);
    out.push_back(f.kkt);
    out.push_back(planted_sparse_check());
    out.push_back(ridge_suite(5));
    return out;
}

}  // namespace hardi::selftest
