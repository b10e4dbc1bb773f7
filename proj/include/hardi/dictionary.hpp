#pragma once

// Signal dictionaries over a real, even-order spherical harmonic basis.
//
// Convention: orthonormal on the sphere, Condon-Shortley phase omitted,
//   Y_lm = sqrt(2) N_l^|m| P_l^|m|(cos t) sin(|m| p)   m < 0
//   Y_l0 =         N_l^0   P_l^0(cos t)
//   Y_lm = sqrt(2) N_l^m   P_l^m(cos t) cos(m p)       m > 0
// with N_l^m = sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!). Atoms are ordered by
// l = 0, 2, ..., L then m = -l..l, so atom index j = l(l+1)/2 + m.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hardi/errors.hpp"
#include "hardi/geometry.hpp"

namespace hardi {

//---------------------------------------------------------------------------//
// BASIS
//---------------------------------------------------------------------------//

struct ShIndex
{
    int l;
    int m;
};

constexpr std::size_t sh_atom_count(int max_order)
{
    return static_cast<std::size_t>((max_order + 1) * (max_order + 2) / 2);
}

constexpr std::size_t sh_index(int l, int m)
{
    return static_cast<std::size_t>(l * (l + 1) / 2 + m);
}

struct BasisDescriptor
{
    std::string family = "real-symmetric-spherical-harmonics";
    int max_order = 8;
    /// Per-atom regularization weights (identity by default).
    std::vector<double> regularization;

    std::size_t atom_count() const { return sh_atom_count(max_order); }

    std::vector<ShIndex> atoms() const
    {
        std::vector<ShIndex> out;
        out.reserve(atom_count());
        for (int l = 0; l <= max_order; l += 2)
            for (int m = -l; m <= l; ++m)
                out.push_back({l, m});
        return out;
    }

    void validate() const
    {
        if (family != "real-symmetric-spherical-harmonics")
            throw ValidationError("unsupported basis family '" + family + "'");
        if (max_order < 0 || max_order % 2 != 0)
            throw ValidationError("spherical harmonic order must be even and non-negative, got "
                                  + std::to_string(max_order));
        if (regularization.size() != atom_count())
            throw ValidationError("regularization weight count does not match atom count");
    }

    bool operator==(BasisDescriptor const&) const = default;

    /// Plain basis with unit regularization weights.
    static BasisDescriptor sh(int max_order)
    {
        if (max_order < 0 || max_order % 2 != 0)
            throw ValidationError("spherical harmonic order must be even and non-negative, got "
                                  + std::to_string(max_order));
        BasisDescriptor b;
        b.max_order = max_order;
        b.regularization.assign(b.atom_count(), 1.0);
        return b;
    }

    /// Laplace-Beltrami weights (l(l+1))^2.
    static BasisDescriptor sh_laplace_beltrami(int max_order)
    {
        BasisDescriptor b = sh(max_order);
        auto const at = b.atoms();
        for (std::size_t j = 0; j < at.size(); ++j)
        {
            double const ll = at[j].l * (at[j].l + 1.0);
            b.regularization[j] = ll * ll;
        }
        return b;
    }
};

/// Evaluate all atoms of an even-order real SH basis at a unit direction.
inline Eigen::VectorXd evaluate_sh(int max_order, Vec3 q)
{
    // Flip into a canonical hemisphere so q and -q produce identical bits.
    if (q.z() < 0 || (q.z() == 0 && (q.y() < 0 || (q.y() == 0 && q.x() < 0))))
        q = -q;

    int const L = max_order;
    double const x = std::clamp(q.z(), -1.0, 1.0);
    double const s = std::hypot(q.x(), q.y());
    double const sin_t = std::sqrt(std::max(0.0, 1.0 - x * x));

    // Normalized associated Legendre values P[l][m], no Condon-Shortley phase.
    std::vector<std::vector<double>> P(static_cast<std::size_t>(L) + 1);
    for (int l = 0; l <= L; ++l)
        P[static_cast<std::size_t>(l)].assign(static_cast<std::size_t>(l) + 1, 0.0);
    P[0][0] = 1.0 / std::sqrt(4.0 * std::numbers::pi);
    for (int m = 1; m <= L; ++m)
        P[static_cast<std::size_t>(m)][static_cast<std::size_t>(m)]
            = std::sqrt((2.0 * m + 1.0) / (2.0 * m)) * sin_t
              * P[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(m - 1)];
    for (int m = 0; m < L; ++m)
        P[static_cast<std::size_t>(m + 1)][static_cast<std::size_t>(m)]
            = std::sqrt(2.0 * m + 3.0) * x
              * P[static_cast<std::size_t>(m)][static_cast<std::size_t>(m)];
    for (int m = 0; m <= L; ++m)
        for (int l = m + 2; l <= L; ++l)
        {
            double const a = std::sqrt((4.0 * l * l - 1.0) / (1.0 * l * l - 1.0 * m * m));
            double const b = std::sqrt(((l - 1.0) * (l - 1.0) - 1.0 * m * m)
                                       / (4.0 * (l - 1.0) * (l - 1.0) - 1.0));
            P[static_cast<std::size_t>(l)][static_cast<std::size_t>(m)]
                = a * (x * P[static_cast<std::size_t>(l - 1)][static_cast<std::size_t>(m)]
                       - b * P[static_cast<std::size_t>(l - 2)][static_cast<std::size_t>(m)]);
        }

    // cos(m phi), sin(m phi) via complex powers of (x + iy)/s.
    std::vector<double> cm(static_cast<std::size_t>(L) + 1), sm(static_cast<std::size_t>(L) + 1);
    double const c1 = s > 0 ? q.x() / s : 1.0;
    double const s1 = s > 0 ? q.y() / s : 0.0;
    cm[0] = 1;
    sm[0] = 0;
    for (int m = 1; m <= L; ++m)
    {
        cm[static_cast<std::size_t>(m)] = cm[static_cast<std::size_t>(m - 1)] * c1
                                          - sm[static_cast<std::size_t>(m - 1)] * s1;
        sm[static_cast<std::size_t>(m)] = sm[static_cast<std::size_t>(m - 1)] * c1
                                          + cm[static_cast<std::size_t>(m - 1)] * s1;
    }

    Eigen::VectorXd out(static_cast<Eigen::Index>(sh_atom_count(L)));
    double const root2 = std::numbers::sqrt2;
    for (int l = 0; l <= L; l += 2)
    {
        auto const lu = static_cast<std::size_t>(l);
        out[static_cast<Eigen::Index>(sh_index(l, 0))] = P[lu][0];
        for (int m = 1; m <= l; ++m)
        {
            auto const mu = static_cast<std::size_t>(m);
            out[static_cast<Eigen::Index>(sh_index(l, m))] = root2 * P[lu][mu] * cm[mu];
            out[static_cast<Eigen::Index>(sh_index(l, -m))] = root2 * P[lu][mu] * sm[mu];
        }
    }
    return out;
}

//---------------------------------------------------------------------------//
// DICTIONARY
//---------------------------------------------------------------------------//

/// FNV-1a digest of the b-value and direction bit patterns, as 16 hex digits.
inline std::string scheme_hash(GradientScheme const& scheme)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](double v) {
        auto bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i)
        {
            h ^= (bits >> (8 * i)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    };
    feed(scheme.bvalue());
    for (auto const& d : scheme.directions())
        for (int a = 0; a < 3; ++a)
            feed(d[a]);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Directions x atoms design matrix.
struct Dictionary
{
    Eigen::MatrixXd matrix;
    BasisDescriptor basis;
    std::string scheme_hash;

    std::size_t rows() const { return static_cast<std::size_t>(matrix.rows()); }
    std::size_t atoms() const { return static_cast<std::size_t>(matrix.cols()); }
};

inline Dictionary build_dictionary(GradientScheme const& scheme, BasisDescriptor const& basis)
{
    basis.validate();
    Dictionary d;
    d.basis = basis;
    d.scheme_hash = hardi::scheme_hash(scheme);
    d.matrix.resize(static_cast<Eigen::Index>(scheme.size()),
                    static_cast<Eigen::Index>(basis.atom_count()));
    for (std::size_t k = 0; k < scheme.size(); ++k)
        d.matrix.row(static_cast<Eigen::Index>(k)) = evaluate_sh(basis.max_order, scheme[k]).transpose();
    if (!d.matrix.allFinite())
        throw NumericError("dictionary contains non-finite entries");
    return d;
}

/// Row-restriction A_L of a full dictionary A_H to a measured subset.
inline Dictionary restrict_dictionary(Dictionary const& full, SubsetSelection const& subset)
{
    if (subset.parent_size != full.rows())
        throw ValidationError("subset parent size " + std::to_string(subset.parent_size)
                              + " does not match dictionary rows "
                              + std::to_string(full.rows()));
    subset.validate();
    Dictionary d;
    d.basis = full.basis;
    d.scheme_hash = full.scheme_hash;
    d.matrix.resize(static_cast<Eigen::Index>(subset.size()), full.matrix.cols());
    for (std::size_t i = 0; i < subset.size(); ++i)
        d.matrix.row(static_cast<Eigen::Index>(i))
            = full.matrix.row(static_cast<Eigen::Index>(subset.indices[i]));
    return d;
}

inline Eigen::VectorXd reconstruct_signal(Dictionary const& dict, Eigen::VectorXd const& coeffs)
{
    if (static_cast<std::size_t>(coeffs.size()) != dict.atoms())
        throw ValidationError("coefficient vector of length " + std::to_string(coeffs.size())
                              + " does not match " + std::to_string(dict.atoms()) + " atoms");
    return dict.matrix * coeffs;
}

/// Least-squares SH coefficients of a signal sampled on the dictionary's scheme.
inline Eigen::VectorXd fit_coefficients(Dictionary const& dict, Eigen::VectorXd const& signal)
{
    if (static_cast<std::size_t>(signal.size()) != dict.rows())
        throw ValidationError("signal length does not match dictionary rows");
    return dict.matrix.colPivHouseholderQr().solve(signal);
}

/// Legendre polynomial at zero: P_l(0) = (-1)^(l/2) (l-1)!! / l!! for even l.
inline double legendre_at_zero(int l)
{
    if (l % 2 != 0)
        return 0.0;
    double v = 1.0;
    for (int k = 2; k <= l; k += 2)
        v *= -static_cast<double>(k - 1) / static_cast<double>(k);
    return v;
}

/// Funk-Radon transform in the SH domain: scale order l by 2 pi P_l(0).
inline Eigen::VectorXd odf_from_coeffs(Eigen::VectorXd const& coeffs, BasisDescriptor const& basis)
{
    if (static_cast<std::size_t>(coeffs.size()) != basis.atom_count())
        throw ValidationError("coefficient vector of length " + std::to_string(coeffs.size())
                              + " does not match basis with " + std::to_string(basis.atom_count())
                              + " atoms");
    Eigen::VectorXd out = coeffs;
    auto const at = basis.atoms();
    for (std::size_t j = 0; j < at.size(); ++j)
        out[static_cast<Eigen::Index>(j)] *= 2.0 * std::numbers::pi * legendre_at_zero(at[j].l);
    return out;
}

}  // namespace hardi
