#pragma once

// Multi-tensor ground truth for single-shell HARDI with Rician noise.
//
//   s(q) = sum_i w_i exp(-b q^T D_i q)
//   D_i  = lambda_perp I + (lambda_par - lambda_perp) u_i u_i^T
//
// Voxel i of a dataset draws its fiber configuration from mix_seed(seed, i)
// and its noise from mix_seed(noise.seed, i), so generation order and thread
// count do not change the output.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hardi/errors.hpp"
#include "hardi/geometry.hpp"
#include "hardi/parallel.hpp"
#include "hardi/random.hpp"

namespace hardi {

struct Fiber
{
    double weight = 1.0;
    Vec3 orientation = Vec3::UnitZ();
    double lambda_par = 1.7e-3;   // mm^2/s
    double lambda_perp = 0.3e-3;  // mm^2/s
};

struct FiberConfig
{
    std::vector<Fiber> fibers;

    void validate() const
    {
        if (fibers.empty() || fibers.size() > 3)
            throw ValidationError("a voxel holds 1 to 3 fibers, got "
                                  + std::to_string(fibers.size()));
        double total = 0;
        for (auto const& f : fibers)
        {
            if (!(f.weight > 0))
                throw ValidationError("fiber weights must be positive");
            if (std::abs(f.orientation.norm() - 1.0) > kUnitTolerance)
                throw ValidationError("fiber orientation must be a unit vector");
            if (!(f.lambda_perp > 0) || f.lambda_par < f.lambda_perp)
                throw ValidationError("fiber eigenvalues need lambda_par >= lambda_perp > 0");
            total += f.weight;
        }
        if (std::abs(total - 1.0) > 1e-9)
            throw ValidationError("fiber weights must sum to 1");
    }
};

enum class NoiseModel
{
    none,
    rician
};

struct NoiseConfig
{
    NoiseModel model = NoiseModel::rician;
    double sigma = 0.02;  // fraction of the b=0 signal
    std::uint64_t seed = 0;
};

inline Eigen::VectorXd simulate_voxel(FiberConfig const& config, GradientScheme const& scheme)
{
    config.validate();
    Eigen::VectorXd s = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(scheme.size()));
    double const b = scheme.bvalue();
    for (std::size_t k = 0; k < scheme.size(); ++k)
    {
        Vec3 const& q = scheme[k];
        double acc = 0;
        for (auto const& f : config.fibers)
        {
            double const c = q.dot(f.orientation);
            double const adc = f.lambda_perp + (f.lambda_par - f.lambda_perp) * c * c;
            acc += f.weight * std::exp(-b * adc);
        }
        s[static_cast<Eigen::Index>(k)] = acc;
    }
    return s;
}

inline constexpr double kRicianClamp = 1.5;

struct NoisySignal
{
    Eigen::VectorXd values;
    std::size_t clamp_events = 0;
};

/// v -> sqrt((v + n1)^2 + n2^2), n1, n2 ~ N(0, sigma^2); clamped at 1.5.
inline NoisySignal add_rician_noise(Eigen::VectorXd const& signal, double sigma, Rng& rng)
{
    if (!(sigma >= 0))
        throw ValidationError("noise sigma must be non-negative");
    NoisySignal out{signal, 0};
    if (sigma == 0)
        return out;
    for (Eigen::Index i = 0; i < signal.size(); ++i)
    {
        double const re = signal[i] + sigma * rng.normal();
        double const im = sigma * rng.normal();
        double v = std::hypot(re, im);
        if (v > kRicianClamp)
        {
            v = kRicianClamp;
            ++out.clamp_events;
        }
        out.values[i] = v;
    }
    return out;
}

inline NoisySignal add_rician_noise(Eigen::VectorXd const& signal, NoiseConfig const& noise)
{
    if (noise.model == NoiseModel::none)
        return {signal, 0};
    Rng rng(noise.seed);
    return add_rician_noise(signal, noise.sigma, rng);
}

//---------------------------------------------------------------------------//
// DATASETS
//---------------------------------------------------------------------------//

struct FiberDistribution
{
    /// Probability of 1, 2, 3 fibers.
    std::array<double, 3> count_probs{0.3, 0.5, 0.2};
    double min_angle_deg = 30.0;
    double lambda_par = 1.7e-3;
    double lambda_perp = 0.3e-3;
    double jitter = 0.15;
    double min_weight = 0.2;  // raw weight draw U(min_weight, 1) before normalizing
    bool isotropic = false;   // single isotropic compartment, diffusivity lambda_perp
    std::size_t max_tries = 10000;
};

struct Dataset
{
    Eigen::MatrixXd clean;  // voxels x directions
    Eigen::MatrixXd noisy;
    std::vector<FiberConfig> fibers;
    std::vector<std::uint64_t> voxel_seeds;
    std::size_t clamp_events = 0;

    std::size_t size() const { return static_cast<std::size_t>(clean.rows()); }
};

inline Vec3 random_unit_vector(Rng& rng)
{
    for (;;)
    {
        Vec3 v(rng.normal(), rng.normal(), rng.normal());
        double const n = v.norm();
        if (n > 1e-12)
            return v / n;
    }
}

inline FiberConfig sample_fibers(FiberDistribution const& dist, Rng& rng)
{
    FiberConfig cfg;
    if (dist.isotropic)
    {
        cfg.fibers.push_back({1.0, Vec3::UnitZ(), dist.lambda_perp, dist.lambda_perp});
        return cfg;
    }
    double const u = rng.uniform01();
    std::size_t count = 3;
    if (u < dist.count_probs[0])
        count = 1;
    else if (u < dist.count_probs[0] + dist.count_probs[1])
        count = 2;

    double const cos_limit = std::cos(dist.min_angle_deg * std::numbers::pi / 180.0);
    double total = 0;
    for (std::size_t i = 0; i < count; ++i)
    {
        Fiber f;
        std::size_t tries = 0;
        for (;; ++tries)
        {
            if (tries >= dist.max_tries)
                throw ValidationError("could not place fiber " + std::to_string(i + 1) + " of "
                                      + std::to_string(count) + " at least "
                                      + std::to_string(dist.min_angle_deg)
                                      + " degrees apart after "
                                      + std::to_string(dist.max_tries)
                                      + " tries; use a smaller minimum crossing angle");
            f.orientation = random_unit_vector(rng);
            bool ok = true;
            for (auto const& other : cfg.fibers)
                if (std::abs(other.orientation.dot(f.orientation)) > cos_limit)
                    ok = false;
            if (ok)
                break;
        }
        f.weight = rng.uniform(dist.min_weight, 1.0);
        f.lambda_par = dist.lambda_par * rng.uniform(1.0 - dist.jitter, 1.0 + dist.jitter);
        f.lambda_perp = dist.lambda_perp * rng.uniform(1.0 - dist.jitter, 1.0 + dist.jitter);
        if (f.lambda_perp > f.lambda_par)
            std::swap(f.lambda_perp, f.lambda_par);
        total += f.weight;
        cfg.fibers.push_back(f);
    }
    for (auto& f : cfg.fibers)
        f.weight /= total;
    // Renormalize exactly to 1 against rounding.
    double sum = 0;
    for (auto const& f : cfg.fibers)
        sum += f.weight;
    cfg.fibers.back().weight += 1.0 - sum;
    return cfg;
}

inline Dataset generate_dataset(std::size_t n_voxels, GradientScheme const& scheme,
                                FiberDistribution const& dist, NoiseConfig const& noise,
                                std::uint64_t seed, std::size_t threads = 1)
{
    if (n_voxels < 1)
        throw ValidationError("dataset needs at least one voxel");
    if (!(noise.sigma >= 0))
        throw ValidationError("noise sigma must be non-negative");
    auto const K = static_cast<Eigen::Index>(scheme.size());
    Dataset d;
    d.clean.resize(static_cast<Eigen::Index>(n_voxels), K);
    d.noisy.resize(static_cast<Eigen::Index>(n_voxels), K);
    d.fibers.resize(n_voxels);
    d.voxel_seeds.resize(n_voxels);
    std::vector<std::size_t> clamps(n_voxels, 0);

    parallel_for(n_voxels, threads, [&](std::size_t i) {
        std::uint64_t const vseed = mix_seed(seed, i);
        Rng rng(vseed);
        d.voxel_seeds[i] = vseed;
        d.fibers[i] = sample_fibers(dist, rng);
        Eigen::VectorXd const s = simulate_voxel(d.fibers[i], scheme);
        d.clean.row(static_cast<Eigen::Index>(i)) = s.transpose();
        if (noise.model == NoiseModel::rician && noise.sigma > 0)
        {
            Rng nrng(mix_seed(noise.seed, i));
            auto noisy = add_rician_noise(s, noise.sigma, nrng);
            d.noisy.row(static_cast<Eigen::Index>(i)) = noisy.values.transpose();
            clamps[i] = noisy.clamp_events;
        }
        else
        {
            d.noisy.row(static_cast<Eigen::Index>(i)) = s.transpose();
        }
    });
    for (auto c : clamps)
        d.clamp_events += c;
    return d;
}

}  // namespace hardi
