#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "hardi/dictionary.hpp"
#include "hardi/synth.hpp"

using namespace hardi;

namespace {

GradientScheme negated(GradientScheme const& s)
{
    std::vector<Vec3> dirs;
    for (auto const& d : s.directions())
        dirs.push_back(-d);
    return {dirs, s.bvalue()};
}

FiberConfig single(Vec3 u, double par = 1.7e-3, double perp = 0.3e-3)
{
    FiberConfig c;
    c.fibers.push_back({1.0, u.normalized(), par, perp});
    return c;
}

}  // namespace

TEST(Simulate, IsotropicTensorIsConstant)
{
    auto const scheme = fibonacci_hemisphere(90, 2000);
    auto const s = simulate_voxel(single(Vec3::UnitX(), 1e-3, 1e-3), scheme);
    for (auto v : s)
        EXPECT_NEAR(v, std::exp(-2.0), 1e-15);
}

TEST(Simulate, ClosedFormAlongAndAcrossFiber)
{
    std::vector<Vec3> dirs{Vec3::UnitZ(), Vec3::UnitX(), Vec3::UnitY(),
                           Vec3(1, 1, 0).normalized(), Vec3(1, 0, 1).normalized(),
                           Vec3(0, 1, 1).normalized()};
    GradientScheme const scheme(dirs, 2000);
    auto const s = simulate_voxel(single(Vec3::UnitZ()), scheme);
    EXPECT_NEAR(s[0], std::exp(-2000 * 1.7e-3), 1e-15);
    EXPECT_NEAR(s[1], 0.5488116360940264, 1e-12);
    EXPECT_NEAR(s[2], std::exp(-0.6), 1e-15);
    EXPECT_NEAR(s[4], std::exp(-2000 * (0.5 * 1.7e-3 + 0.5 * 0.3e-3)), 1e-15);
}

TEST(Simulate, WeightedMixtureIsSumOfCompartments)
{
    auto const scheme = fibonacci_hemisphere(60, 3000);
    FiberConfig mix;
    mix.fibers.push_back({0.4, Vec3::UnitX(), 1.5e-3, 0.2e-3});
    mix.fibers.push_back({0.6, Vec3(0, 1, 1).normalized(), 1.9e-3, 0.4e-3});
    auto const s = simulate_voxel(mix, scheme);
    auto const a = simulate_voxel(single(Vec3::UnitX(), 1.5e-3, 0.2e-3), scheme);
    auto const b = simulate_voxel(single(Vec3(0, 1, 1), 1.9e-3, 0.4e-3), scheme);
    EXPECT_LT((s - (0.4 * a + 0.6 * b)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Simulate, ValuesInUnitIntervalAndAntipodal)
{
    auto const scheme = fibonacci_hemisphere(90, 2000);
    auto const flipped = negated(scheme);
    Rng rng(21);
    FiberDistribution dist;
    for (int i = 0; i < 200; ++i)
    {
        auto const cfg = sample_fibers(dist, rng);
        auto const s = simulate_voxel(cfg, scheme);
        EXPECT_GT(s.minCoeff(), 0.0);
        EXPECT_LE(s.maxCoeff(), 1.0);
        EXPECT_EQ(s, simulate_voxel(cfg, flipped));
    }
}

TEST(Simulate, InvalidConfigs)
{
    auto const scheme = fibonacci_hemisphere(30, 2000);
    EXPECT_THROW(simulate_voxel(FiberConfig{}, scheme), ValidationError);
    auto c = single(Vec3::UnitZ());
    c.fibers[0].weight = 0.5;
    EXPECT_THROW(simulate_voxel(c, scheme), ValidationError);
    c = single(Vec3::UnitZ(), 0.2e-3, 0.3e-3);
    EXPECT_THROW(simulate_voxel(c, scheme), ValidationError);
    c = single(Vec3::UnitZ());
    c.fibers[0].orientation = Vec3(0, 0, 2);
    EXPECT_THROW(simulate_voxel(c, scheme), ValidationError);
}

TEST(Rician, ZeroSigmaIsIdentity)
{
    Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(20, 0.0, 1.0);
    Rng rng(3);
    auto const out = add_rician_noise(v, 0.0, rng);
    EXPECT_EQ(out.values, v);
    EXPECT_EQ(out.clamp_events, 0u);
    EXPECT_EQ(add_rician_noise(v, NoiseConfig{NoiseModel::none, 0.1, 1}).values, v);
    EXPECT_THROW(add_rician_noise(v, -0.1, rng), ValidationError);
}

TEST(Rician, RayleighMeanAtZeroSignal)
{
    double const sigma = 0.05;
    Eigen::VectorXd const zero = Eigen::VectorXd::Zero(100000);
    auto const out = add_rician_noise(zero, NoiseConfig{NoiseModel::rician, sigma, 11});
    double const expected = sigma * std::sqrt(std::numbers::pi / 2);
    EXPECT_NEAR(out.values.mean(), expected, 0.02 * expected);
    EXPECT_GE(out.values.minCoeff(), 0.0);
}

TEST(Rician, SeededReproducible)
{
    Eigen::VectorXd const v = Eigen::VectorXd::Constant(50, 0.5);
    NoiseConfig const n{NoiseModel::rician, 0.03, 99};
    EXPECT_EQ(add_rician_noise(v, n).values, add_rician_noise(v, n).values);
    NoiseConfig m = n;
    m.seed = 100;
    EXPECT_NE(add_rician_noise(v, n).values, add_rician_noise(v, m).values);
}

TEST(Rician, BiasIsNonNegative)
{
    // The Rician mean exceeds the underlying amplitude.
    Eigen::VectorXd const clean = Eigen::VectorXd::LinSpaced(10, 0.05, 1.0);
    double const sigma = 0.05;
    int const draws = 10000;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(10);
    Rng rng(17);
    for (int d = 0; d < draws; ++d)
        sum += add_rician_noise(clean, sigma, rng).values;
    Eigen::VectorXd const mean = sum / draws;
    double const se = sigma / std::sqrt(double(draws));
    for (Eigen::Index i = 0; i < 10; ++i)
        EXPECT_GT(mean[i], clean[i] - 4 * se) << "index " << i;
    EXPECT_GT(mean[0], clean[0] + 4 * se);
}

TEST(Rician, ClampCounted)
{
    Eigen::VectorXd const v = Eigen::VectorXd::Constant(2000, 1.0);
    auto const out = add_rician_noise(v, NoiseConfig{NoiseModel::rician, 0.5, 4});
    EXPECT_LE(out.values.maxCoeff(), kRicianClamp);
    std::size_t at = 0;
    for (auto x : out.values)
        at += (x == kRicianClamp);
    EXPECT_GT(out.clamp_events, 0u);
    EXPECT_EQ(out.clamp_events, at);
}

TEST(Dataset, TrainTestSizes)
{
    auto const scheme = fibonacci_hemisphere(90, 2000);
    FiberDistribution const dist;
    auto const train = generate_dataset(8000, scheme, dist, {NoiseModel::rician, 0.02, 1}, 10);
    auto const test = generate_dataset(2000, scheme, dist, {NoiseModel::rician, 0.02, 2}, 20);
    EXPECT_EQ(train.size(), 8000u);
    EXPECT_EQ(test.size(), 2000u);
    EXPECT_EQ(train.clean.cols(), 90);
    EXPECT_EQ(train.noisy.rows(), 8000);
    EXPECT_EQ(train.fibers.size(), 8000u);
    EXPECT_NE(train.clean.row(0), test.clean.row(0));
}

TEST(Dataset, FiberCountMixAndAngles)
{
    auto const scheme = fibonacci_hemisphere(30, 2000);
    FiberDistribution const dist;
    auto const d = generate_dataset(5000, scheme, dist, {NoiseModel::none, 0, 0}, 4);
    std::array<int, 3> counts{};
    double const cos_limit = std::cos(dist.min_angle_deg * std::numbers::pi / 180);
    for (auto const& cfg : d.fibers)
    {
        cfg.validate();
        ++counts[cfg.fibers.size() - 1];
        for (std::size_t a = 0; a < cfg.fibers.size(); ++a)
        {
            auto const& f = cfg.fibers[a];
            EXPECT_GE(f.lambda_par, 1.7e-3 * 0.85 - 1e-18);
            EXPECT_LE(f.lambda_par, 1.7e-3 * 1.15 + 1e-18);
            EXPECT_GE(f.lambda_perp, 0.3e-3 * 0.85 - 1e-18);
            EXPECT_LE(f.lambda_perp, 0.3e-3 * 1.15 + 1e-18);
            for (std::size_t b = a + 1; b < cfg.fibers.size(); ++b)
                EXPECT_LE(std::abs(f.orientation.dot(cfg.fibers[b].orientation)), cos_limit);
        }
    }
    // Binomial standard error at n = 5000 is under 0.0071.
    EXPECT_NEAR(counts[0] / 5000.0, 0.3, 0.03);
    EXPECT_NEAR(counts[1] / 5000.0, 0.5, 0.03);
    EXPECT_NEAR(counts[2] / 5000.0, 0.2, 0.03);
}

TEST(Dataset, IsotropicRowsConstant)
{
    auto const scheme = fibonacci_hemisphere(40, 2000);
    FiberDistribution dist;
    dist.isotropic = true;
    auto const d = generate_dataset(50, scheme, dist, {NoiseModel::none, 0, 0}, 8);
    for (Eigen::Index i = 0; i < 50; ++i)
        EXPECT_LT(d.clean.row(i).maxCoeff() - d.clean.row(i).minCoeff(), 1e-15);
}

TEST(Dataset, SameSeedBitwiseIdentical)
{
    auto const scheme = fibonacci_hemisphere(45, 2000);
    FiberDistribution const dist;
    NoiseConfig const noise{NoiseModel::rician, 0.02, 5};
    auto const a = generate_dataset(300, scheme, dist, noise, 6);
    auto const b = generate_dataset(300, scheme, dist, noise, 6);
    EXPECT_EQ(a.clean, b.clean);
    EXPECT_EQ(a.noisy, b.noisy);
    EXPECT_EQ(a.voxel_seeds, b.voxel_seeds);
    auto const c = generate_dataset(300, scheme, dist, noise, 7);
    EXPECT_NE(a.clean, c.clean);
}

TEST(Dataset, ThreadCountDoesNotMatter)
{
    auto const scheme = fibonacci_hemisphere(45, 2000);
    FiberDistribution const dist;
    NoiseConfig const noise{NoiseModel::rician, 0.02, 5};
    auto const one = generate_dataset(257, scheme, dist, noise, 6, 1);
    auto const four = generate_dataset(257, scheme, dist, noise, 6, 4);
    EXPECT_EQ(one.clean, four.clean);
    EXPECT_EQ(one.noisy, four.noisy);
}

TEST(Dataset, PrefixStable)
{
    auto const scheme = fibonacci_hemisphere(30, 2000);
    FiberDistribution const dist;
    NoiseConfig const noise{NoiseModel::rician, 0.02, 5};
    auto const small = generate_dataset(10, scheme, dist, noise, 6);
    auto const large = generate_dataset(100, scheme, dist, noise, 6);
    EXPECT_EQ(small.noisy, large.noisy.topRows(10));
}

TEST(Dataset, ZeroSigmaCleanEqualsNoisy)
{
    auto const scheme = fibonacci_hemisphere(30, 2000);
    auto const d = generate_dataset(100, scheme, {}, {NoiseModel::rician, 0.0, 5}, 6);
    EXPECT_EQ(d.clean, d.noisy);
    EXPECT_EQ(d.clamp_events, 0u);
}

TEST(Dataset, Errors)
{
    auto const scheme = fibonacci_hemisphere(30, 2000);
    EXPECT_THROW(generate_dataset(0, scheme, {}, {}, 1), ValidationError);
    EXPECT_THROW(generate_dataset(5, scheme, {}, {NoiseModel::rician, -1, 0}, 1),
                 ValidationError);
    FiberDistribution crowded;
    crowded.count_probs = {0, 0, 1};
    crowded.min_angle_deg = 89.99;
    crowded.max_tries = 200;
    try
    {
        generate_dataset(50, scheme, crowded, {}, 1);
        FAIL() << "expected rejection sampling to give up";
    }
    catch (ValidationError const& e)
    {
        EXPECT_NE(std::string(e.what()).find("smaller minimum crossing angle"), std::string::npos);
    }
}

TEST(Dataset, CleanSignalsNearlyBandLimited)
{
    auto const scheme = fibonacci_hemisphere(90, 2000);
    auto const dict = build_dictionary(scheme, BasisDescriptor::sh(8));
    auto const d = generate_dataset(1000, scheme, {}, {NoiseModel::none, 0, 0}, 31);
    int good = 0;
    for (Eigen::Index i = 0; i < 1000; ++i)
    {
        Eigen::VectorXd const s = d.clean.row(i).transpose();
        auto const r = reconstruct_signal(dict, fit_coefficients(dict, s));
        good += ((r - s).squaredNorm() / s.squaredNorm() < 0.01);
    }
    EXPECT_GE(good, 950);
}
