#pragma once

// End-to-end experiment protocol on synthetic data: generate paired
// training/test sets, reconstruct each test voxel from a reduced measurement
// with ridge, L1 and the network, and summarize per-voxel NMSE.

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hardi/dictionary.hpp"
#include "hardi/io.hpp"
#include "hardi/model.hpp"
#include "hardi/parallel.hpp"
#include "hardi/solvers.hpp"
#include "hardi/synth.hpp"

namespace hardi {

/// Reconstruct every row of `measurements` (N x K_L) to the full scheme.
inline Eigen::MatrixXd reconstruct_batch(Dictionary const& dict_low, Dictionary const& dict_high,
                                         Eigen::MatrixXd const& measurements,
                                         SolverConfig const& cfg, SolverMethod method,
                                         std::size_t threads = 1)
{
    if (static_cast<std::size_t>(measurements.cols()) != static_cast<std::size_t>(dict_low.matrix.rows()))
        throw ValidationError("measurement matrix has " + std::to_string(measurements.cols())
                              + " columns, dictionary expects " + std::to_string(dict_low.matrix.rows()));
    auto const N = static_cast<std::size_t>(measurements.rows());
    Eigen::MatrixXd out(measurements.rows(), dict_high.matrix.rows());
    parallel_for(N, threads, [&](std::size_t i) {
        auto const r = static_cast<Eigen::Index>(i);
        out.row(r) = reconstruct_from_measurement(dict_low, dict_high,
                                                  measurements.row(r).transpose(), cfg, method)
                         .transpose();
    });
    return out;
}

inline std::vector<double> default_lambda_grid() { return {1e-4, 1e-3, 1e-2, 1e-1, 1.0}; }

struct LambdaSearch
{
    std::vector<double> grid;
    std::vector<double> scores;  // mean over folds of fold-average NMSE
    double best = 0;
};

/*!
 * K-fold selection of the regularization weight.
 *
 * Up to `max_voxels` training voxels (seeded draw) are split into `folds`
 * folds. Every fold is reconstructed at every grid value against its
 * full-scheme ground truth and the grid value with the lowest mean fold
 * NMSE wins; ties go to the smaller value.
 */
inline LambdaSearch select_lambda_cv(Dictionary const& dict_low, Dictionary const& dict_high,
                                     Eigen::MatrixXd const& measurements,
                                     Eigen::MatrixXd const& truth, SolverMethod method,
                                     SolverConfig base, std::vector<double> grid,
                                     std::size_t folds = 5, std::size_t max_voxels = 500,
                                     std::uint64_t seed = 0, std::size_t threads = 1)
{
    if (grid.empty())
        throw ValidationError("lambda grid is empty");
    if (folds < 2)
        throw ValidationError("cross-validation needs at least 2 folds");
    if (measurements.rows() != truth.rows())
        throw ValidationError("measurement and ground-truth voxel counts differ");
    auto const N = static_cast<std::size_t>(measurements.rows());
    if (N < folds)
        throw ValidationError("fewer voxels than folds");

    std::vector<std::size_t> idx(N);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = N - 1; i > 0; --i)
        std::swap(idx[i], idx[rng.below(i + 1)]);
    idx.resize(std::min(N, std::max(max_voxels, folds)));
    std::size_t const M = idx.size();

    Eigen::MatrixXd meas(static_cast<Eigen::Index>(M), measurements.cols());
    Eigen::MatrixXd gt(static_cast<Eigen::Index>(M), truth.cols());
    for (std::size_t i = 0; i < M; ++i)
    {
        meas.row(static_cast<Eigen::Index>(i)) = measurements.row(static_cast<Eigen::Index>(idx[i]));
        gt.row(static_cast<Eigen::Index>(i)) = truth.row(static_cast<Eigen::Index>(idx[i]));
    }

    LambdaSearch out;
    out.grid = std::move(grid);
    double best_score = std::numeric_limits<double>::infinity();
    for (double lambda : out.grid)
    {
        base.lambda = lambda;
        Eigen::VectorXd const e = nmse_rows(reconstruct_batch(dict_low, dict_high, meas, base, method, threads), gt);
        double score = 0;
        for (std::size_t f = 0; f < folds; ++f)
        {
            std::size_t const lo = f * M / folds;
            std::size_t const hi = (f + 1) * M / folds;
            score += e.segment(static_cast<Eigen::Index>(lo), static_cast<Eigen::Index>(hi - lo)).mean();
        }
        score /= static_cast<double>(folds);
        out.scores.push_back(score);
        if (score < best_score)
        {
            best_score = score;
            out.best = lambda;
        }
    }
    return out;
}

/// ODF SH coefficients (one row per voxel) of full-scheme signals.
inline Eigen::MatrixXd odf_coefficients(Eigen::MatrixXd const& signals, Dictionary const& dict_high)
{
    Eigen::MatrixXd out(signals.rows(), dict_high.matrix.cols());
    for (Eigen::Index r = 0; r < signals.rows(); ++r)
        out.row(r) = odf_from_coeffs(fit_coefficients(dict_high, signals.row(r).transpose()),
                                     dict_high.basis)
                         .transpose();
    return out;
}

//---------------------------------------------------------------------------//
// EXPERIMENT
//---------------------------------------------------------------------------//

enum class Method
{
    l2,
    cs,
    cnn
};

inline std::string to_string(Method m)
{
    switch (m)
    {
        case Method::l2: return "l2";
        case Method::cs: return "cs";
        case Method::cnn: return "cnn";
    }
    return "?";
}

inline Method method_from_string(std::string const& s)
{
    if (s == "l2")
        return Method::l2;
    if (s == "cs" || s == "l1")
        return Method::cs;
    if (s == "cnn")
        return Method::cnn;
    throw UsageError("unknown method '" + s + "' (valid: l2, cs, cnn)");
}

struct ExperimentConfig
{
    std::size_t k_high = 90;
    double bvalue = 2000;
    std::vector<std::size_t> k_lows{30, 23, 18};
    std::vector<Method> methods{Method::l2, Method::cs, Method::cnn};
    std::size_t n_train = 8000;
    std::size_t n_test = 2000;
    double sigma = 0.02;
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    int max_order = 8;
    std::optional<double> lambda;  // cross-validated per method and K_L when empty
    std::size_t cv_folds = 5;
    std::size_t cv_voxels = 500;
    SolverConfig solver;

    ModelConfig model;  // k_low and seed are set per run
    bool record_timing = false;

    void validate() const
    {
        if (k_lows.empty() || methods.empty())
            throw ValidationError("experiment needs at least one k_low and one method");
        for (auto k : k_lows)
            if (k < kMinDirections || k > k_high)
                throw ValidationError("k_low=" + std::to_string(k) + " outside ["
                                      + std::to_string(kMinDirections) + ", "
                                      + std::to_string(k_high) + "]");
        if (n_train < 1 || n_test < 1)
            throw ValidationError("voxel counts must be positive");
        if (!(sigma >= 0))
            throw ValidationError("noise sigma must be non-negative");
    }
};

/// Fixed seed streams of an experiment.
struct ExperimentSeeds
{
    std::uint64_t train_signal, train_noise, test_signal, test_noise;

    explicit ExperimentSeeds(std::uint64_t seed)
        : train_signal(mix_seed(seed, 1))
        , train_noise(mix_seed(seed, 2))
        , test_signal(mix_seed(seed, 3))
        , test_noise(mix_seed(seed, 4))
    {
    }
    std::uint64_t model(std::size_t k_low, std::uint64_t seed) const { return mix_seed(seed, 1000 + k_low); }
    std::uint64_t cv(std::size_t k_low, std::uint64_t seed) const { return mix_seed(seed, 2000 + k_low); }
};

struct ExperimentData
{
    GradientScheme scheme;
    Dataset train;
    Dataset test;
};

inline ExperimentData make_experiment_data(ExperimentConfig const& cfg)
{
    ExperimentSeeds const seeds(cfg.seed);
    auto scheme = fibonacci_hemisphere(cfg.k_high, cfg.bvalue);
    FiberDistribution const dist;
    NoiseConfig train_noise{NoiseModel::rician, cfg.sigma, seeds.train_noise};
    NoiseConfig test_noise{NoiseModel::rician, cfg.sigma, seeds.test_noise};
    auto train = generate_dataset(cfg.n_train, scheme, dist, train_noise, seeds.train_signal, cfg.threads);
    auto test = generate_dataset(cfg.n_test, scheme, dist, test_noise, seeds.test_signal, cfg.threads);
    return {std::move(scheme), std::move(train), std::move(test)};
}

struct ExperimentRun
{
    Method method;
    std::size_t k_low;
    Eigen::MatrixXd reconstruction;
    Eigen::VectorXd nmse;
    double seconds = 0;
    std::optional<LambdaSearch> lambda;
    std::vector<EpochLog> training_log;
};

struct ExperimentResult
{
    std::vector<ExperimentRun> runs;
    MetricsReport report;
};

struct ExperimentHooks
{
    std::function<void(std::string const&)> message;
    std::function<void(std::size_t k_low, EpochLog const&)> epoch;
};

/// Rows ordered as method-major, then K_L in the given order.
inline ExperimentResult run_experiment(ExperimentConfig const& cfg, ExperimentData const& data,
                                       ExperimentHooks const& hooks = {})
{
    cfg.validate();
    ExperimentSeeds const seeds(cfg.seed);
    auto say = [&](std::string const& m) {
        if (hooks.message)
            hooks.message(m);
    };
    auto const dict_high = build_dictionary(data.scheme, BasisDescriptor::sh(cfg.max_order));

    ExperimentResult result;
    for (Method method : cfg.methods)
        for (std::size_t k_low : cfg.k_lows)
        {
            auto const subset = select_subset(data.scheme, k_low, cfg.model.subset_strategy,
                                              cfg.model.subset_seed);
            Eigen::MatrixXd const test_meas = select_columns(data.test.noisy, subset);
            ExperimentRun run{method, k_low, {}, {}, 0, std::nullopt, {}};
            auto const t0 = std::chrono::steady_clock::now();

            if (method == Method::cnn)
            {
                ModelConfig mc = cfg.model;
                mc.k_high = cfg.k_high;
                mc.k_low = k_low;
                mc.seed = seeds.model(k_low, cfg.seed);
                InputBuilder const builder(data.scheme, subset, mc.upsample);
                TrainingSet const ts{select_columns(data.train.noisy, subset), data.train.clean};
                TrainingState<float> state{ModelParams<float>::init(mc, mc.seed)};
                say("training cnn for k_low=" + std::to_string(k_low));
                auto tr = train<float>(ts, builder, mc, state, [&](EpochLog const& e) {
                    if (hooks.epoch)
                        hooks.epoch(k_low, e);
                });
                run.training_log = std::move(tr.log);
                run.reconstruction = infer_batch<float>(test_meas, builder, state.params, mc);
            }
            else
            {
                auto const dict_low = restrict_dictionary(dict_high, subset);
                SolverMethod const sm = method == Method::cs ? SolverMethod::l1 : SolverMethod::l2;
                SolverConfig sc = cfg.solver;
                if (cfg.lambda)
                    sc.lambda = *cfg.lambda;
                else
                {
                    run.lambda = select_lambda_cv(dict_low, dict_high, select_columns(data.train.noisy, subset),
                                                  data.train.clean, sm, sc, default_lambda_grid(),
                                                  cfg.cv_folds, cfg.cv_voxels, seeds.cv(k_low, cfg.seed),
                                                  cfg.threads);
                    sc.lambda = run.lambda->best;
                    say(to_string(method) + " k_low=" + std::to_string(k_low) + ": lambda "
                        + detail::format_double(sc.lambda) + " by cross-validation");
                }
                run.reconstruction = reconstruct_batch(dict_low, dict_high, test_meas, sc, sm, cfg.threads);
            }
            run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            run.nmse = nmse_rows(run.reconstruction, data.test.clean);
            result.report.records.push_back(summarize_nmse(to_string(method), k_low, run.nmse,
                                                           cfg.record_timing ? run.seconds : 0.0));
            say(to_string(method) + " k_low=" + std::to_string(k_low) + ": avg NMSE "
                + detail::format_double(result.report.records.back().avg_nmse));
            result.runs.push_back(std::move(run));
        }
    return result;
}

}  // namespace hardi
