#pragma once

// Coefficient recovery from reduced measurements.
//
// Both solvers work on the squared data term:
//   ridge : ||A f - l||^2 + lambda * sum_j w_j f_j^2
//   lasso : ||A f - l||^2 + lambda * ||f||_1
// where w are the dictionary basis regularization weights.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hardi/dictionary.hpp"
#include "hardi/errors.hpp"
#include "hardi/random.hpp"

namespace hardi {

enum class StepRule
{
    fixed,
    backtracking
};

enum class SolverMethod
{
    l1,
    l2
};

inline std::string to_string(SolverMethod m) { return m == SolverMethod::l1 ? "l1" : "l2"; }

inline SolverMethod solver_method_from_string(std::string const& s)
{
    if (s == "l1" || s == "cs")
        return SolverMethod::l1;
    if (s == "l2")
        return SolverMethod::l2;
    throw ValidationError("unknown solver method '" + s + "' (expected l1 or l2)");
}

struct SolverConfig
{
    double lambda = 0.01;
    int max_iters = 2000;
    double tolerance = 1e-8;
    StepRule step_rule = StepRule::fixed;
    bool restart = true;

    void validate() const
    {
        if (!(lambda >= 0) || !std::isfinite(lambda))
            throw ValidationError("lambda must be finite and non-negative");
        if (max_iters < 1)
            throw ValidationError("max_iters must be at least 1");
        if (!(tolerance > 0))
            throw ValidationError("tolerance must be positive");
    }
};

struct SolveReport
{
    Eigen::VectorXd coeffs;
    std::vector<double> objective_trace;
    int iterations = 0;
    bool converged = false;
};

namespace detail {

inline void check_system(Dictionary const& dict, Eigen::VectorXd const& measurement)
{
    if (static_cast<std::size_t>(measurement.size()) != dict.rows())
        throw ValidationError("measurement length " + std::to_string(measurement.size())
                              + " does not match dictionary rows "
                              + std::to_string(dict.rows()));
    Eigen::VectorXd const norms = dict.matrix.colwise().norm();
    for (Eigen::Index j = 0; j < norms.size(); ++j)
        if (!(norms[j] > 0))
            throw ValidationError("dictionary column " + std::to_string(j) + " is zero");
}

inline double l1_objective(Eigen::MatrixXd const& A, Eigen::VectorXd const& l,
                           Eigen::VectorXd const& f, double lambda)
{
    return (A * f - l).squaredNorm() + lambda * f.lpNorm<1>();
}

}  // namespace detail

//---------------------------------------------------------------------------//
/*!
 * Largest eigenvalue of A^T A by power iteration.
 *
 * The start vector is drawn from a fixed seed so repeated calls agree.
 */
inline double power_iteration_sq_norm(Eigen::MatrixXd const& A, int max_steps = 100,
                                      double tol = 1e-10)
{
    Rng rng(0x5eedULL);
    Eigen::VectorXd v(A.cols());
    for (Eigen::Index i = 0; i < v.size(); ++i)
        v[i] = rng.normal();
    v.normalize();
    double est = 0;
    for (int step = 0; step < max_steps; ++step)
    {
        Eigen::VectorXd w = A.transpose() * (A * v);
        double const next = w.norm();
        if (!(next > 0))
            return 0;
        v = w / next;
        if (std::abs(next - est) <= tol * next)
        {
            est = next;
            break;
        }
        est = next;
    }
    return est;
}

//---------------------------------------------------------------------------//
// RIDGE
//---------------------------------------------------------------------------//

/// Closed-form ridge solution through a Cholesky factorization of the
/// normal matrix A^T A + lambda diag(w).
inline SolveReport solve_l2(Dictionary const& dict, Eigen::VectorXd const& measurement,
                            SolverConfig const& config)
{
    config.validate();
    detail::check_system(dict, measurement);
    auto const& A = dict.matrix;
    Eigen::VectorXd const w = Eigen::Map<Eigen::VectorXd const>(
        dict.basis.regularization.data(),
        static_cast<Eigen::Index>(dict.basis.regularization.size()));

    Eigen::MatrixXd normal = A.transpose() * A;
    normal.diagonal() += config.lambda * w;
    Eigen::LLT<Eigen::MatrixXd> llt(normal);
    bool singular = llt.info() != Eigen::Success;
    if (!singular)
    {
        // LLT may succeed on a numerically singular matrix; check the pivots.
        Eigen::VectorXd const d = llt.matrixLLT().diagonal();
        singular = d.minCoeff() <= 1e-10 * d.maxCoeff();
    }
    if (singular)
    {
        std::string msg = "ridge normal matrix is singular";
        if (config.lambda == 0 && A.rows() < A.cols())
            msg += " (underdetermined system: " + std::to_string(A.rows()) + " measurements, "
                   + std::to_string(A.cols()) + " atoms); use lambda > 0";
        throw ValidationError(msg);
    }

    SolveReport report;
    report.coeffs = llt.solve(A.transpose() * measurement);
    double const obj = (A * report.coeffs - measurement).squaredNorm()
                       + config.lambda * (w.array() * report.coeffs.array().square()).sum();
    report.objective_trace.push_back(obj);
    report.iterations = 1;
    report.converged = true;
    return report;
}

//---------------------------------------------------------------------------//
// L1 / FISTA
//---------------------------------------------------------------------------//

inline Eigen::VectorXd soft_threshold(Eigen::VectorXd const& v, double t)
{
    if (!(t >= 0))
        throw ValidationError("soft threshold must be non-negative");
    return v.unaryExpr([t](double x) {
        double const mag = std::abs(x) - t;
        return mag > 0 ? std::copysign(mag, x) : 0.0;
    });
}

/*!
 * FISTA for ||A f - l||^2 + lambda ||f||_1.
 *
 * Step 1/L with L = 2 sigma_max(A)^2 from power iteration (fixed rule) or
 * Beck-Teboulle backtracking. With restart enabled an iterate that raises
 * the objective is discarded, momentum is reset and a proximal-gradient
 * step is taken from the last accepted point, so the trace never increases.
 * Iteration stops once the relative objective change of an accepted step
 * drops below the tolerance.
 */
inline SolveReport solve_l1_fista(Dictionary const& dict, Eigen::VectorXd const& measurement,
                                  SolverConfig const& config)
{
    config.validate();
    detail::check_system(dict, measurement);
    auto const& A = dict.matrix;
    auto const& l = measurement;
    double const lambda = config.lambda;
    Eigen::Index const n = A.cols();

    double lip = 2.0 * power_iteration_sq_norm(A);
    SolveReport report;
    report.coeffs = Eigen::VectorXd::Zero(n);
    if (!(lip > 0))
    {
        report.objective_trace.push_back(l.squaredNorm());
        report.converged = true;
        return report;
    }
    if (config.step_rule == StepRule::backtracking)
        lip /= 16.0;

    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd y = x;
    Eigen::VectorXd x_new(n);
    double t = 1.0;
    double f_prev = detail::l1_objective(A, l, x, lambda);

    auto smooth = [&](Eigen::VectorXd const& v) { return (A * v - l).squaredNorm(); };

    // Proximal gradient step from `from` with the current lip, backtracking
    // when requested or when the fixed constant underestimates the curvature.
    auto prox_step = [&](Eigen::VectorXd const& from, bool backtrack) {
        Eigen::VectorXd const resid = A * from - l;
        Eigen::VectorXd const grad = 2.0 * (A.transpose() * resid);
        double const f_from = resid.squaredNorm();
        for (int tries = 0;; ++tries)
        {
            x_new = soft_threshold(from - grad / lip, lambda / lip);
            if (!backtrack || tries >= 60)
                break;
            Eigen::VectorXd const d = x_new - from;
            double const bound = f_from + grad.dot(d) + 0.5 * lip * d.squaredNorm();
            if (smooth(x_new) <= bound * (1 + 1e-14) + 1e-300)
                break;
            lip *= 2.0;
        }
    };

    bool const backtracking = config.step_rule == StepRule::backtracking;
    for (int it = 1; it <= config.max_iters; ++it)
    {
        prox_step(y, backtracking);
        double f_new = detail::l1_objective(A, l, x_new, lambda);

        if (config.restart && f_new > f_prev)
        {
            t = 1.0;
            y = x;
            prox_step(y, true);
            f_new = detail::l1_objective(A, l, x_new, lambda);
            if (f_new > f_prev)
            {
                // Rounding-level increase at the optimum: keep the last point.
                x_new = x;
                f_new = f_prev;
            }
        }

        double const t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        y = x_new + ((t - 1.0) / t_new) * (x_new - x);
        x = x_new;
        t = t_new;

        report.objective_trace.push_back(f_new);
        report.iterations = it;
        double const rel = std::abs(f_prev - f_new) / std::max(std::abs(f_prev), 1e-300);
        f_prev = f_new;
        if (!x.allFinite())
            throw NumericError("FISTA produced non-finite coefficients");
        if (rel < config.tolerance)
        {
            report.converged = true;
            break;
        }
    }
    report.coeffs = x;
    return report;
}

inline SolveReport solve(SolverMethod method, Dictionary const& dict,
                         Eigen::VectorXd const& measurement, SolverConfig const& config)
{
    return method == SolverMethod::l1 ? solve_l1_fista(dict, measurement, config)
                                      : solve_l2(dict, measurement, config);
}

/// Solve on the reduced dictionary, then synthesize on the full one.
inline Eigen::VectorXd reconstruct_from_measurement(Dictionary const& dict_low,
                                                    Dictionary const& dict_high,
                                                    Eigen::VectorXd const& measurement,
                                                    SolverConfig const& config,
                                                    SolverMethod method)
{
    if (!(dict_low.basis == dict_high.basis) || dict_low.scheme_hash != dict_high.scheme_hash)
        throw ValidationError("measurement and full dictionaries use different bases or schemes");
    auto const report = solve(method, dict_low, measurement, config);
    return reconstruct_signal(dict_high, report.coeffs);
}

}  // namespace hardi
