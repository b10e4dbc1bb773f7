#pragma once

// 1D encoder-decoder convolutional network mapping a reduced q-space
// measurement to the full-scheme signal.
//
// Input  : [B, 4, K_H]  (upsampled signal, q_x, q_y, q_z)
// Encoder: I x (conv1d + bias + ReLU), output is the nonnegative code
// Decoder: I x conv1d_transposed, linear, no bias; the last layer emits one
//          channel, inner layers mirror the encoder filter shapes.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hardi/autodiff.hpp"
#include "hardi/errors.hpp"
#include "hardi/geometry.hpp"
#include "hardi/optim.hpp"
#include "hardi/random.hpp"

namespace hardi {

inline constexpr std::size_t kInputChannels = 4;

//---------------------------------------------------------------------------//
// CONFIGURATION
//---------------------------------------------------------------------------//

struct ModelConfig
{
    std::size_t k_high = 90;
    std::size_t k_low = 30;
    std::vector<std::size_t> encoder_channels{400, 200, 100};
    std::vector<std::size_t> strides{3, 3, 2};
    std::size_t kernel = 9;
    UpsampleMethod upsample = UpsampleMethod::idw;
    SubsetStrategy subset_strategy = SubsetStrategy::uniform_angular;
    std::uint64_t subset_seed = 0;
    bool permute = true;
    double lr = 1e-3;
    std::size_t batch_size = 500;
    std::size_t epochs = 300;
    std::size_t patience = 30;  // 0 disables early stopping
    double val_fraction = 0.1;
    OptimizerKind optimizer = OptimizerKind::adam;
    bool zero_init_last = false;
    std::uint64_t seed = 0;

    std::size_t layers() const { return encoder_channels.size(); }

    /// Padding that makes a layer shrink its input length exactly by `stride`.
    std::size_t padding_for(std::size_t stride) const
    {
        return kernel > stride ? (kernel - stride + 1) / 2 : 0;
    }

    std::vector<ConvSpec> encoder_specs() const
    {
        validate_structure();
        std::vector<ConvSpec> out;
        std::size_t in = kInputChannels;
        for (std::size_t i = 0; i < layers(); ++i)
        {
            ConvSpec s;
            s.in_channels = in;
            s.out_channels = encoder_channels[i];
            s.kernel = kernel;
            s.stride = strides[i];
            s.padding = padding_for(strides[i]);
            s.has_bias = true;
            out.push_back(s);
            in = encoder_channels[i];
        }
        return out;
    }

    /// Decoder layer i mirrors encoder layer I-1-i; the final layer emits one channel.
    std::vector<ConvSpec> decoder_specs() const
    {
        auto const enc = encoder_specs();
        std::vector<ConvSpec> out;
        for (std::size_t i = 0; i < enc.size(); ++i)
        {
            auto const& e = enc[enc.size() - 1 - i];
            ConvSpec s;
            s.in_channels = e.out_channels;
            s.out_channels = (i + 1 == enc.size()) ? 1 : e.in_channels;
            s.kernel = e.kernel;
            s.stride = e.stride;
            s.padding = e.padding;
            long const op = static_cast<long>(e.stride) + 2 * static_cast<long>(e.padding)
                            - static_cast<long>(e.kernel);
            if (op < 0 || op >= static_cast<long>(e.stride))
                throw ValidationError("kernel " + std::to_string(kernel) + " and stride "
                                      + std::to_string(e.stride)
                                      + " admit no exact transposed length");
            s.output_padding = static_cast<std::size_t>(op);
            s.has_bias = false;
            out.push_back(s);
        }
        return out;
    }

    /// Length after each encoder layer (code length last).
    std::vector<std::size_t> length_chain() const
    {
        std::vector<std::size_t> out{k_high};
        for (auto s : strides)
            out.push_back(out.back() / s);
        return out;
    }

    void validate_structure() const
    {
        if (encoder_channels.empty() || encoder_channels.size() != strides.size())
            throw ValidationError("encoder channels and strides must have equal, nonzero length");
        if (kernel < 1)
            throw ValidationError("kernel must be at least 1");
        std::size_t len = k_high;
        for (auto s : strides)
        {
            if (s < 1 || len % s != 0)
                throw ValidationError("stride chain does not divide k_high="
                                      + std::to_string(k_high) + " to an integer code length");
            len /= s;
        }
        for (auto c : encoder_channels)
            if (c < 1)
                throw ValidationError("encoder channel counts must be positive");
    }

    void validate() const
    {
        validate_structure();
        if (k_low < kMinDirections || k_low > k_high)
            throw ValidationError("k_low must lie in [" + std::to_string(kMinDirections) + ", "
                                  + std::to_string(k_high) + "]");
        if (!(lr > 0))
            throw ValidationError("learning rate must be positive");
        if (batch_size < 1)
            throw ValidationError("batch size must be at least 1");
        if (!(val_fraction >= 0 && val_fraction < 1))
            throw ValidationError("val_fraction must lie in [0, 1)");
        (void)decoder_specs();
    }
};

//---------------------------------------------------------------------------//
// PARAMETERS
//---------------------------------------------------------------------------//

template<class T>
struct ModelParams
{
    std::vector<Var<T>> encoder_filters;
    std::vector<Var<T>> encoder_biases;
    std::vector<Var<T>> decoder_filters;

    /// Canonical order: encoder (filter, bias) pairs, then decoder filters.
    std::vector<Var<T>> all() const
    {
        std::vector<Var<T>> out;
        for (std::size_t i = 0; i < encoder_filters.size(); ++i)
        {
            out.push_back(encoder_filters[i]);
            out.push_back(encoder_biases[i]);
        }
        for (auto const& d : decoder_filters)
            out.push_back(d);
        return out;
    }

    std::vector<std::string> names() const
    {
        std::vector<std::string> out;
        for (std::size_t i = 0; i < encoder_filters.size(); ++i)
        {
            out.push_back("encoder." + std::to_string(i) + ".weight");
            out.push_back("encoder." + std::to_string(i) + ".bias");
        }
        for (std::size_t i = 0; i < decoder_filters.size(); ++i)
            out.push_back("decoder." + std::to_string(i) + ".weight");
        return out;
    }

    std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for (auto const& p : all())
            n += p.values().size();
        return n;
    }

    void zero_grad()
    {
        for (auto& p : all())
            p.zero_grad();
    }

    /// Independent copy (fresh graph leaves).
    ModelParams clone() const
    {
        ModelParams out;
        for (auto const& p : encoder_filters)
            out.encoder_filters.push_back(parameter(Tensor<T>(p.shape(), p.values())));
        for (auto const& p : encoder_biases)
            out.encoder_biases.push_back(parameter(Tensor<T>(p.shape(), p.values())));
        for (auto const& p : decoder_filters)
            out.decoder_filters.push_back(parameter(Tensor<T>(p.shape(), p.values())));
        return out;
    }

    void copy_values_from(ModelParams const& other)
    {
        auto dst = all();
        auto const src = other.all();
        for (std::size_t i = 0; i < dst.size(); ++i)
            dst[i].values() = src[i].values();
    }

    /// Shapes must match the config; inner decoder filters must mirror the encoder.
    void check_against(ModelConfig const& cfg) const
    {
        auto const enc = cfg.encoder_specs();
        auto const dec = cfg.decoder_specs();
        if (encoder_filters.size() != enc.size() || encoder_biases.size() != enc.size()
            || decoder_filters.size() != dec.size())
            throw ValidationError("parameter layer count does not match model config");
        for (std::size_t i = 0; i < enc.size(); ++i)
        {
            if (encoder_filters[i].shape() != enc[i].conv_filter_shape()
                || encoder_biases[i].shape() != Shape{enc[i].out_channels})
                throw ValidationError("encoder layer " + std::to_string(i)
                                      + " parameters do not match model config");
            if (decoder_filters[i].shape() != dec[i].transposed_filter_shape())
                throw ValidationError("decoder layer " + std::to_string(i)
                                      + " parameters do not match model config");
        }
        for (std::size_t i = 0; i + 1 < dec.size(); ++i)
            if (decoder_filters[i].shape() != encoder_filters[enc.size() - 1 - i].shape())
                throw ValidationError("decoder filter " + std::to_string(i)
                                      + " breaks the tied-shape rule");
    }

    static ModelParams init(ModelConfig const& cfg, std::uint64_t seed)
    {
        ModelParams p;
        auto const enc = cfg.encoder_specs();
        auto const dec = cfg.decoder_specs();
        for (std::size_t i = 0; i < enc.size(); ++i)
        {
            auto cp = init_params<T>(enc[i], false, mix_seed(seed, i));
            p.encoder_filters.push_back(parameter(std::move(cp.filters)));
            p.encoder_biases.push_back(parameter(std::move(cp.bias)));
        }
        for (std::size_t i = 0; i < dec.size(); ++i)
        {
            auto cp = init_params<T>(dec[i], true, mix_seed(seed, 100 + i));
            if (cfg.zero_init_last && i + 1 == dec.size())
                std::fill(cp.filters.values.begin(), cp.filters.values.end(), T{0});
            p.decoder_filters.push_back(parameter(std::move(cp.filters)));
        }
        p.check_against(cfg);
        return p;
    }
};

//---------------------------------------------------------------------------//
// FORWARD PASS
//---------------------------------------------------------------------------//

/// Sparse code f = E(x0): conv + bias + ReLU per layer.
template<class T>
Var<T> encode(Var<T> const& x0, ModelParams<T> const& params, ModelConfig const& cfg)
{
    auto const specs = cfg.encoder_specs();
    Var<T> x = x0;
    for (std::size_t i = 0; i < specs.size(); ++i)
        x = relu(conv1d(x, params.encoder_filters[i],
                        std::optional<Var<T>>(params.encoder_biases[i]), specs[i]));
    return x;
}

/// Reconstruction D(f): linear stack of transposed convolutions.
template<class T>
Var<T> decode(Var<T> const& code, ModelParams<T> const& params, ModelConfig const& cfg)
{
    auto const specs = cfg.decoder_specs();
    Var<T> y = code;
    for (std::size_t i = 0; i < specs.size(); ++i)
        y = conv1d_transposed(y, params.decoder_filters[i], specs[i]);
    return y;
}

template<class T>
Var<T> forward(Var<T> const& x0, ModelParams<T> const& params, ModelConfig const& cfg)
{
    return decode(encode(x0, params, cfg), params, cfg);
}

//---------------------------------------------------------------------------//
// INPUT PIPELINE
//---------------------------------------------------------------------------//

/*!
 * Builds network inputs from reduced measurements.
 *
 * The measurement is upsampled to the full scheme and stacked with the
 * direction components. A permutation reorders all four channels jointly.
 */
class InputBuilder
{
  public:
    InputBuilder(GradientScheme scheme, SubsetSelection subset, UpsampleMethod method)
        : scheme_(std::move(scheme))
        , subset_(std::move(subset))
        , upsampler_(scheme_, subset_, method)
    {
        for (int a = 0; a < 3; ++a)
            coords_[static_cast<std::size_t>(a)] = scheme_.axis(a);
    }

    GradientScheme const& scheme() const { return scheme_; }
    SubsetSelection const& subset() const { return subset_; }
    std::size_t k_high() const { return scheme_.size(); }
    std::size_t k_low() const { return subset_.size(); }

    /// Unpermuted channel rows (4 x K_H), signal upsampled.
    Eigen::MatrixXd channels(Eigen::VectorXd const& measurement) const
    {
        Eigen::MatrixXd out(static_cast<Eigen::Index>(kInputChannels),
                            static_cast<Eigen::Index>(k_high()));
        out.row(0) = upsampler_(measurement).transpose();
        for (std::size_t a = 0; a < 3; ++a)
            out.row(static_cast<Eigen::Index>(a + 1)) = coords_[a].transpose();
        return out;
    }

    /// Write one sample's [4, K_H] block (optionally permuted) into `dst`.
    template<class T>
    void fill(Eigen::MatrixXd const& channels, Permutation const* perm, T* dst) const
    {
        std::size_t const K = k_high();
        for (std::size_t c = 0; c < kInputChannels; ++c)
            for (std::size_t i = 0; i < K; ++i)
            {
                std::size_t const src = perm ? perm->order[i] : i;
                dst[c * K + i] = static_cast<T>(
                    channels(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(src)));
            }
    }

    template<class T>
    Tensor<T> prepare(Eigen::VectorXd const& measurement, Permutation const* perm = nullptr) const
    {
        if (perm && perm->size() != k_high())
            throw ValidationError("permutation length does not match k_high");
        Tensor<T> out({1, kInputChannels, k_high()});
        fill(channels(measurement), perm, out.data());
        return out;
    }

  private:
    GradientScheme scheme_;
    SubsetSelection subset_;
    Upsampler upsampler_;
    std::array<Eigen::VectorXd, 3> coords_;
};

template<class T>
Tensor<T> prepare_input(Eigen::VectorXd const& measurement, SubsetSelection const& subset,
                        GradientScheme const& scheme, UpsampleMethod method,
                        Permutation const* perm = nullptr)
{
    return InputBuilder(scheme, subset, method).prepare<T>(measurement, perm);
}

//---------------------------------------------------------------------------//
// INFERENCE
//---------------------------------------------------------------------------//

/*!
 * Reconstruct full-scheme signals for a block of voxels.
 *
 * measurements: N x K_L; returns N x K_H in the original direction order.
 * With tta_perms > 0 the output is the mean over that many seeded input
 * permutations (each mapped back to the original order).
 */
template<class T>
Eigen::MatrixXd infer_batch(Eigen::MatrixXd const& measurements, InputBuilder const& builder,
                            ModelParams<T> const& params, ModelConfig const& cfg,
                            std::size_t chunk = 500, std::size_t tta_perms = 0,
                            std::uint64_t tta_seed = 0)
{
    params.check_against(cfg);
    if (builder.k_high() != cfg.k_high || builder.k_low() != cfg.k_low)
        throw ValidationError("model config (k_high=" + std::to_string(cfg.k_high) + ", k_low="
                              + std::to_string(cfg.k_low) + ") does not match input pipeline");
    if (static_cast<std::size_t>(measurements.cols()) != cfg.k_low)
        throw ValidationError("measurement matrix has " + std::to_string(measurements.cols())
                              + " columns, expected " + std::to_string(cfg.k_low));

    NoGradGuard no_grad;
    std::size_t const N = static_cast<std::size_t>(measurements.rows());
    std::size_t const K = cfg.k_high;
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(N),
                                                static_cast<Eigen::Index>(K));
    std::size_t const passes = std::max<std::size_t>(1, tta_perms);
    chunk = std::max<std::size_t>(1, chunk);

    for (std::size_t start = 0; start < N; start += chunk)
    {
        std::size_t const B = std::min(chunk, N - start);
        std::vector<Eigen::MatrixXd> channels;
        channels.reserve(B);
        for (std::size_t b = 0; b < B; ++b)
            channels.push_back(builder.channels(
                measurements.row(static_cast<Eigen::Index>(start + b)).transpose()));

        for (std::size_t pass = 0; pass < passes; ++pass)
        {
            std::optional<Permutation> perm;
            if (tta_perms > 0)
                perm = make_permutation(K, mix_seed(tta_seed, pass));
            Tensor<T> x({B, kInputChannels, K});
            for (std::size_t b = 0; b < B; ++b)
                builder.fill(channels[b], perm ? &*perm : nullptr,
                             x.data() + b * kInputChannels * K);
            auto const y = forward(constant(std::move(x)), params, cfg);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t i = 0; i < K; ++i)
                {
                    std::size_t const dst = perm ? perm->order[i] : i;
                    out(static_cast<Eigen::Index>(start + b), static_cast<Eigen::Index>(dst))
                        += static_cast<double>(y.values()[b * K + i]);
                }
        }
    }
    if (passes > 1)
        out /= static_cast<double>(passes);
    return out;
}

template<class T>
Eigen::VectorXd infer(Eigen::VectorXd const& measurement, SubsetSelection const& subset,
                      GradientScheme const& scheme, ModelParams<T> const& params,
                      ModelConfig const& cfg)
{
    InputBuilder const builder(scheme, subset, cfg.upsample);
    Eigen::MatrixXd m = measurement.transpose();
    return infer_batch<T>(m, builder, params, cfg).row(0).transpose();
}

/// Per-voxel NMSE ||pred - truth||^2 / ||truth||^2 for each row.
inline Eigen::VectorXd nmse_rows(Eigen::MatrixXd const& pred, Eigen::MatrixXd const& truth)
{
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
        throw ValidationError("nmse: matrices of shape " + std::to_string(pred.rows()) + "x"
                              + std::to_string(pred.cols()) + " and "
                              + std::to_string(truth.rows()) + "x"
                              + std::to_string(truth.cols()));
    Eigen::VectorXd out(pred.rows());
    for (Eigen::Index r = 0; r < pred.rows(); ++r)
    {
        double const denom = truth.row(r).squaredNorm();
        if (!(std::sqrt(denom) > kTargetNormEpsilon))
            throw ValidationError("nmse: ground-truth row " + std::to_string(r)
                                  + " has near-zero norm");
        out[r] = (pred.row(r) - truth.row(r)).squaredNorm() / denom;
    }
    return out;
}

//---------------------------------------------------------------------------//
// TRAINING
//---------------------------------------------------------------------------//

struct EpochLog
{
    std::size_t epoch = 0;
    double train_nmse = 0;
    double val_nmse = std::numeric_limits<double>::quiet_NaN();
    double wall_seconds = 0;
};

/// Everything needed to continue a run.
template<class T>
struct TrainingState
{
    ModelParams<T> params;
    AdamState<T> adam;
    std::size_t epochs_done = 0;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::size_t stale_epochs = 0;
};

/// Paired training voxels: measurements N x K_L, clean targets N x K_H.
struct TrainingSet
{
    Eigen::MatrixXd measurements;
    Eigen::MatrixXd targets;

    std::size_t size() const { return static_cast<std::size_t>(targets.rows()); }
};

struct TrainResult
{
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;
    bool stopped_early = false;
};

/*!
 * Mini-batch training on NMSE.
 *
 * Voxels are split into train/validation by a seeded shuffle. Each epoch
 * visits the training voxels in a fresh seeded order; with permutation
 * enabled every voxel draws a fresh order per epoch and the same order is
 * applied to its target. Validation uses the identity order. With early
 * stopping the returned state holds the best-validation parameters.
 */
template<class T>
TrainResult train(TrainingSet const& data, InputBuilder const& builder, ModelConfig const& cfg,
                  TrainingState<T>& state,
                  std::function<void(EpochLog const&)> const& on_epoch = {})
{
    cfg.validate();
    state.params.check_against(cfg);
    if (data.size() == 0)
        throw ValidationError("training set is empty");
    if (static_cast<std::size_t>(data.measurements.rows()) != data.size()
        || static_cast<std::size_t>(data.measurements.cols()) != cfg.k_low
        || static_cast<std::size_t>(data.targets.cols()) != cfg.k_high)
        throw ValidationError("training set shape does not match model config");
    if (builder.k_high() != cfg.k_high || builder.k_low() != cfg.k_low)
        throw ValidationError("input pipeline does not match model config");
    for (Eigen::Index r = 0; r < data.targets.rows(); ++r)
        if (!(data.targets.row(r).norm() > kTargetNormEpsilon))
            throw ValidationError("training target " + std::to_string(r) + " has near-zero norm");

    std::size_t const K = cfg.k_high;

    // Train / validation split.
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    {
        Rng rng(mix_seed(cfg.seed, 0x5111));
        for (std::size_t i = order.size() - 1; i > 0; --i)
            std::swap(order[i], order[rng.below(i + 1)]);
    }
    auto const n_val = static_cast<std::size_t>(cfg.val_fraction * static_cast<double>(data.size()));
    std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    if (train_idx.empty())
        throw ValidationError("validation split leaves no training voxels");

    std::vector<Eigen::MatrixXd> channels(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
        channels[i] = builder.channels(data.measurements.row(static_cast<Eigen::Index>(i)).transpose());

    Eigen::MatrixXd val_meas(static_cast<Eigen::Index>(n_val), static_cast<Eigen::Index>(cfg.k_low));
    Eigen::MatrixXd val_truth(static_cast<Eigen::Index>(n_val), static_cast<Eigen::Index>(K));
    for (std::size_t i = 0; i < n_val; ++i)
    {
        val_meas.row(static_cast<Eigen::Index>(i)) = data.measurements.row(static_cast<Eigen::Index>(val_idx[i]));
        val_truth.row(static_cast<Eigen::Index>(i)) = data.targets.row(static_cast<Eigen::Index>(val_idx[i]));
    }

    auto params = state.params.all();
    if (state.adam.m.size() != params.size())
        state.adam.resize_for(params);
    AdamConfig const adam_cfg{cfg.lr};

    std::optional<ModelParams<T>> best;
    if (n_val > 0 && cfg.patience > 0)
        best = state.params.clone();

    TrainResult result;
    result.best_epoch = state.best_epoch;
    auto const t0 = std::chrono::steady_clock::now();

    for (std::size_t epoch = state.epochs_done; epoch < cfg.epochs; ++epoch)
    {
        std::vector<std::size_t> visit = train_idx;
        Rng rng(mix_seed(cfg.seed, 0xE0000 + epoch));
        for (std::size_t i = visit.size() - 1; i > 0; --i)
            std::swap(visit[i], visit[rng.below(i + 1)]);

        double loss_sum = 0;
        std::size_t batch_no = 0;
        for (std::size_t start = 0; start < visit.size(); start += cfg.batch_size, ++batch_no)
        {
            std::size_t const B = std::min(cfg.batch_size, visit.size() - start);
            Tensor<T> x({B, kInputChannels, K});
            Tensor<T> target({B, 1, K});
            for (std::size_t b = 0; b < B; ++b)
            {
                std::size_t const v = visit[start + b];
                std::optional<Permutation> perm;
                if (cfg.permute)
                    perm = make_permutation(K, mix_seed(mix_seed(cfg.seed, epoch), v));
                builder.fill(channels[v], perm ? &*perm : nullptr, x.data() + b * kInputChannels * K);
                for (std::size_t i = 0; i < K; ++i)
                {
                    std::size_t const src = perm ? perm->order[i] : i;
                    target[b * K + i] = static_cast<T>(
                        data.targets(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(src)));
                }
            }

            try
            {
                state.params.zero_grad();
                auto const loss = nmse_loss(forward(constant(std::move(x)), state.params, cfg), target);
                backward(loss);
                loss_sum += static_cast<double>(loss.item()) * static_cast<double>(B);
                if (cfg.optimizer == OptimizerKind::adam)
                    adam_step(params, state.adam, adam_cfg);
                else
                    sgd_step(params, cfg.lr);
                for (auto const& p : params)
                    if (!p.tensor().all_finite())
                        throw NumericError("non-finite parameter after update");
            }
            catch (NumericError const& e)
            {
                throw NumericError("training aborted at epoch " + std::to_string(epoch)
                                   + ", batch " + std::to_string(batch_no) + ": " + e.what());
            }
        }

        EpochLog log;
        log.epoch = epoch;
        log.train_nmse = loss_sum / static_cast<double>(visit.size());
        if (n_val > 0)
            log.val_nmse = nmse_rows(infer_batch<T>(val_meas, builder, state.params, cfg), val_truth).mean();
        log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.push_back(log);
        state.epochs_done = epoch + 1;
        if (on_epoch)
            on_epoch(log);

        if (best)
        {
            if (log.val_nmse < state.best_val)
            {
                state.best_val = log.val_nmse;
                state.best_epoch = epoch;
                state.stale_epochs = 0;
                best->copy_values_from(state.params);
            }
            else if (++state.stale_epochs >= cfg.patience)
            {
                result.stopped_early = true;
                break;
            }
        }
    }
    if (best && std::isfinite(state.best_val))
        state.params.copy_values_from(*best);
    result.best_epoch = state.best_epoch;
    return result;
}

}  // namespace hardi
