#pragma once

// Directions on the unit sphere: gradient schemes, subsampling, interpolation
// back to the full scheme, and channel permutations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hardi/errors.hpp"
#include "hardi/random.hpp"

namespace hardi {

using Vec3 = Eigen::Vector3d;

inline constexpr double kUnitTolerance = 1e-9;
inline constexpr std::size_t kMinDirections = 6;

//---------------------------------------------------------------------------//
/*!
 * Single-shell gradient scheme.
 *
 * Directions are unit vectors, at least six of them, with no exact or
 * antipodal duplicates. The b-value is carried along for bookkeeping only.
 */
class GradientScheme
{
  public:
    GradientScheme(std::vector<Vec3> directions, double bvalue)
        : directions_(std::move(directions)), bvalue_(bvalue)
    {
        validate();
    }

    std::size_t size() const { return directions_.size(); }
    Vec3 const& operator[](std::size_t i) const { return directions_[i]; }
    std::vector<Vec3> const& directions() const { return directions_; }
    double bvalue() const { return bvalue_; }

    /// Component `axis` (0=x, 1=y, 2=z) of every direction.
    Eigen::VectorXd axis(int axis) const
    {
        Eigen::VectorXd out(size());
        for (std::size_t k = 0; k < size(); ++k)
            out[k] = directions_[k][axis];
        return out;
    }

    GradientScheme subscheme(std::span<std::size_t const> indices) const
    {
        std::vector<Vec3> dirs;
        dirs.reserve(indices.size());
        for (auto i : indices)
        {
            detail::require(i < size(), "subscheme index out of range");
            dirs.push_back(directions_[i]);
        }
        return {std::move(dirs), bvalue_};
    }

  private:
    void validate() const
    {
        if (directions_.size() < kMinDirections)
            throw ValidationError("gradient scheme needs at least "
                                  + std::to_string(kMinDirections)
                                  + " directions, got "
                                  + std::to_string(directions_.size()));
        if (!(bvalue_ > 0) || !std::isfinite(bvalue_))
            throw ValidationError("gradient scheme b-value must be positive");
        for (std::size_t i = 0; i < directions_.size(); ++i)
        {
            double const n = directions_[i].norm();
            if (!(std::abs(n - 1.0) <= kUnitTolerance))
                throw ValidationError("direction " + std::to_string(i)
                                      + " is not unit norm (|q| = "
                                      + std::to_string(n) + ")");
        }
        for (std::size_t i = 0; i < directions_.size(); ++i)
            for (std::size_t j = i + 1; j < directions_.size(); ++j)
                if (std::abs(directions_[i].dot(directions_[j]))
                    >= 1.0 - kUnitTolerance)
                    throw ValidationError("directions " + std::to_string(i)
                                          + " and " + std::to_string(j)
                                          + " coincide up to sign");
    }

    std::vector<Vec3> directions_;
    double bvalue_;
};

/// Near-uniform scheme of `k` directions on the upper hemisphere
/// (Fibonacci lattice, z strictly positive so no antipodal pairs).
inline GradientScheme fibonacci_hemisphere(std::size_t k, double bvalue)
{
    double const golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    std::vector<Vec3> dirs;
    dirs.reserve(k);
    for (std::size_t i = 0; i < k; ++i)
    {
        double const z = 1.0 - (static_cast<double>(i) + 0.5) / static_cast<double>(k);
        double const r = std::sqrt(std::max(0.0, 1.0 - z * z));
        double const phi = golden * static_cast<double>(i);
        dirs.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
        dirs.back().normalize();
    }
    return {std::move(dirs), bvalue};
}

//---------------------------------------------------------------------------//
// ANGULAR DISTANCE
//---------------------------------------------------------------------------//

/// Antipodally symmetric angle arccos(|a.b|) in [0, pi/2].
inline double angular_distance(Vec3 const& a, Vec3 const& b)
{
    if (std::abs(a.norm() - 1.0) > kUnitTolerance
        || std::abs(b.norm() - 1.0) > kUnitTolerance)
        throw ValidationError("angular_distance requires unit vectors");
    return std::acos(std::clamp(std::abs(a.dot(b)), 0.0, 1.0));
}

//---------------------------------------------------------------------------//
// SUBSET SELECTION
//---------------------------------------------------------------------------//

enum class SubsetStrategy
{
    uniform_angular,
    random
};

inline std::string to_string(SubsetStrategy s)
{
    return s == SubsetStrategy::uniform_angular ? "uniform-angular" : "random";
}

inline SubsetStrategy subset_strategy_from_string(std::string const& s)
{
    if (s == "uniform-angular")
        return SubsetStrategy::uniform_angular;
    if (s == "random")
        return SubsetStrategy::random;
    throw ValidationError("unknown subset strategy '" + s
                          + "' (expected uniform-angular or random)");
}

/// Indices of a reduced scheme Q_L inside its parent Q_H.
struct SubsetSelection
{
    std::vector<std::size_t> indices;
    std::size_t parent_size = 0;
    SubsetStrategy strategy = SubsetStrategy::uniform_angular;
    std::uint64_t seed = 0;

    std::size_t size() const { return indices.size(); }

    void validate() const
    {
        for (std::size_t i = 0; i < indices.size(); ++i)
        {
            if (indices[i] >= parent_size)
                throw ValidationError("subset index " + std::to_string(indices[i])
                                      + " out of range for parent of size "
                                      + std::to_string(parent_size));
            if (i > 0 && indices[i] <= indices[i - 1])
                throw ValidationError("subset indices must be strictly increasing");
        }
    }

    static SubsetSelection identity(std::size_t n)
    {
        SubsetSelection s;
        s.indices.resize(n);
        std::iota(s.indices.begin(), s.indices.end(), std::size_t{0});
        s.parent_size = n;
        return s;
    }
};

/// Smallest pairwise angular distance within a set of directions.
inline double min_pairwise_angle(GradientScheme const& scheme,
                                 std::span<std::size_t const> indices)
{
    double best = std::numbers::pi / 2;
    for (std::size_t i = 0; i < indices.size(); ++i)
        for (std::size_t j = i + 1; j < indices.size(); ++j)
            best = std::min(best, angular_distance(scheme[indices[i]],
                                                   scheme[indices[j]]));
    return best;
}

inline SubsetSelection select_subset(GradientScheme const& scheme,
                                     std::size_t k,
                                     SubsetStrategy strategy,
                                     std::uint64_t seed = 0)
{
    std::size_t const n = scheme.size();
    if (k < kMinDirections || k > n)
        throw ValidationError("subset size " + std::to_string(k)
                              + " outside [" + std::to_string(kMinDirections)
                              + ", " + std::to_string(n) + "]");

    SubsetSelection out;
    out.parent_size = n;
    out.strategy = strategy;
    out.seed = seed;

    if (strategy == SubsetStrategy::random)
    {
        std::vector<std::size_t> pool(n);
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        Rng rng(seed);
        for (std::size_t i = 0; i < k; ++i)
            std::swap(pool[i], pool[i + rng.below(n - i)]);
        out.indices.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    }
    else
    {
        // Farthest-point greedy from direction 0; ties go to the lower index.
        std::vector<double> dist(n, std::numbers::pi);
        std::vector<bool> taken(n, false);
        std::size_t next = 0;
        for (std::size_t step = 0; step < k; ++step)
        {
            taken[next] = true;
            out.indices.push_back(next);
            for (std::size_t j = 0; j < n; ++j)
                if (!taken[j])
                    dist[j] = std::min(dist[j], angular_distance(scheme[next], scheme[j]));
            double best = -1;
            for (std::size_t j = 0; j < n; ++j)
                if (!taken[j] && dist[j] > best)
                {
                    best = dist[j];
                    next = j;
                }
        }
    }
    std::sort(out.indices.begin(), out.indices.end());
    return out;
}

//---------------------------------------------------------------------------//
// UPSAMPLING
//---------------------------------------------------------------------------//

enum class UpsampleMethod
{
    nearest,
    idw
};

inline std::string to_string(UpsampleMethod m)
{
    return m == UpsampleMethod::nearest ? "nearest" : "idw";
}

inline UpsampleMethod upsample_method_from_string(std::string const& s)
{
    if (s == "nearest")
        return UpsampleMethod::nearest;
    if (s == "idw")
        return UpsampleMethod::idw;
    throw ValidationError("unknown upsample method '" + s + "' (expected nearest or idw)");
}

/*!
 * Precomputed interpolation from a subset back to the full scheme.
 *
 * Each full-scheme position holds up to three (source index, weight) pairs
 * into the measured vector. Measured positions copy their value exactly.
 */
class Upsampler
{
  public:
    static constexpr std::size_t kNeighbors = 3;

    Upsampler(GradientScheme const& scheme, SubsetSelection const& subset,
              UpsampleMethod method)
        : full_size_(scheme.size()), measured_size_(subset.size())
    {
        if (subset.parent_size != scheme.size())
            throw ValidationError("subset parent size " + std::to_string(subset.parent_size)
                                  + " does not match scheme size "
                                  + std::to_string(scheme.size()));
        subset.validate();
        if (subset.size() == 0)
            throw ValidationError("cannot upsample from an empty subset");

        std::vector<std::ptrdiff_t> measured_at(full_size_, -1);
        for (std::size_t i = 0; i < subset.size(); ++i)
            measured_at[subset.indices[i]] = static_cast<std::ptrdiff_t>(i);

        taps_.resize(full_size_);
        std::vector<std::pair<double, std::size_t>> cand(subset.size());
        for (std::size_t k = 0; k < full_size_; ++k)
        {
            if (measured_at[k] >= 0)
            {
                taps_[k].push_back({static_cast<std::size_t>(measured_at[k]), 1.0});
                continue;
            }
            for (std::size_t i = 0; i < subset.size(); ++i)
                cand[i] = {angular_distance(scheme[k], scheme[subset.indices[i]]), i};
            std::size_t const nn = method == UpsampleMethod::nearest
                                       ? 1
                                       : std::min(kNeighbors, cand.size());
            std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(nn),
                              cand.end());
            if (nn == 1)
            {
                taps_[k].push_back({cand[0].second, 1.0});
                continue;
            }
            double total = 0;
            for (std::size_t t = 0; t < nn; ++t)
                total += 1.0 / cand[t].first;
            for (std::size_t t = 0; t < nn; ++t)
                taps_[k].push_back({cand[t].second, (1.0 / cand[t].first) / total});
        }
    }

    std::size_t full_size() const { return full_size_; }
    std::size_t measured_size() const { return measured_size_; }

    template<class T>
    void apply(std::span<T const> values, std::span<T> out) const
    {
        if (values.size() != measured_size_)
            throw ValidationError("upsample: got " + std::to_string(values.size())
                                  + " values for a subset of size "
                                  + std::to_string(measured_size_));
        if (out.size() != full_size_)
            throw ValidationError("upsample: output length mismatch");
        for (std::size_t k = 0; k < full_size_; ++k)
        {
            auto const& taps = taps_[k];
            if (taps.size() == 1)
            {
                out[k] = values[taps[0].source];
                continue;
            }
            double acc = 0;
            for (auto const& t : taps)
                acc += t.weight * static_cast<double>(values[t.source]);
            out[k] = static_cast<T>(acc);
        }
    }

    Eigen::VectorXd operator()(Eigen::VectorXd const& values) const
    {
        Eigen::VectorXd out(full_size_);
        apply<double>(std::span<double const>(values.data(), static_cast<std::size_t>(values.size())),
                      std::span<double>(out.data(), full_size_));
        return out;
    }

  private:
    struct Tap
    {
        std::size_t source;
        double weight;
    };

    std::size_t full_size_;
    std::size_t measured_size_;
    std::vector<std::vector<Tap>> taps_;
};

inline Eigen::VectorXd upsample_to_full(Eigen::VectorXd const& values,
                                        SubsetSelection const& subset,
                                        GradientScheme const& scheme,
                                        UpsampleMethod method = UpsampleMethod::idw)
{
    if (static_cast<std::size_t>(values.size()) != subset.size())
        throw ValidationError("upsample: got " + std::to_string(values.size())
                              + " values for a subset of size "
                              + std::to_string(subset.size()));
    return Upsampler(scheme, subset, method)(values);
}

//---------------------------------------------------------------------------//
// PERMUTATIONS
//---------------------------------------------------------------------------//

/// Bijection on 0..k-1; output position i takes input position order[i].
struct Permutation
{
    std::vector<std::size_t> order;
    std::uint64_t seed = 0;

    std::size_t size() const { return order.size(); }

    bool is_valid() const
    {
        std::vector<std::size_t> sorted = order;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size(); ++i)
            if (sorted[i] != i)
                return false;
        return true;
    }

    Permutation inverse() const
    {
        Permutation inv;
        inv.seed = seed;
        inv.order.resize(order.size());
        for (std::size_t i = 0; i < order.size(); ++i)
            inv.order[order[i]] = i;
        return inv;
    }

    static Permutation identity(std::size_t k)
    {
        Permutation p;
        p.order.resize(k);
        std::iota(p.order.begin(), p.order.end(), std::size_t{0});
        return p;
    }
};

/// Fisher-Yates shuffle (descending swap) driven by mt19937_64(seed).
inline Permutation make_permutation(std::size_t k, std::uint64_t seed)
{
    if (k < 1)
        throw ValidationError("permutation length must be at least 1");
    Permutation p = Permutation::identity(k);
    p.seed = seed;
    Rng rng(seed);
    for (std::size_t i = k - 1; i > 0; --i)
        std::swap(p.order[i], p.order[rng.below(i + 1)]);
    return p;
}

/// Reorder the columns of a C x K matrix; every row uses the same permutation.
template<class Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>
apply_permutation(Eigen::MatrixBase<Derived> const& channels, Permutation const& perm)
{
    if (static_cast<std::size_t>(channels.cols()) != perm.size())
        throw ValidationError("permutation of length " + std::to_string(perm.size())
                              + " applied to " + std::to_string(channels.cols())
                              + " columns");
    Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> out(
        channels.rows(), channels.cols());
    for (std::size_t i = 0; i < perm.size(); ++i)
        out.col(static_cast<Eigen::Index>(i))
            = channels.col(static_cast<Eigen::Index>(perm.order[i]));
    return out;
}

}  // namespace hardi
