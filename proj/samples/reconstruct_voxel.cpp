// Simulate one crossing-fiber voxel, keep 18 of 90 directions, and bring the
// full signal back with ridge and L1 reconstruction. Prints NMSE and the ODF
// value along each fiber.

#include <cstdio>

#include "hardi/dictionary.hpp"
#include "hardi/solvers.hpp"
#include "hardi/synth.hpp"

using namespace hardi;

int main()
{
    auto const scheme = fibonacci_hemisphere(90, 2000);
    auto const full = build_dictionary(scheme, BasisDescriptor::sh(8));
    auto const subset = select_subset(scheme, 18, SubsetStrategy::uniform_angular);
    auto const reduced = restrict_dictionary(full, subset);

    FiberConfig voxel;
    voxel.fibers.push_back({0.6, Vec3::UnitX(), 1.7e-3, 0.3e-3});
    voxel.fibers.push_back({0.4, Vec3(0, 1, 1).normalized(), 1.7e-3, 0.3e-3});
    Eigen::VectorXd const truth = simulate_voxel(voxel, scheme);
    Rng rng(1);
    Eigen::VectorXd const noisy = add_rician_noise(truth, 0.02, rng).values;

    Eigen::VectorXd measurement(18);
    for (std::size_t i = 0; i < 18; ++i)
        measurement[static_cast<Eigen::Index>(i)] = noisy[static_cast<Eigen::Index>(subset.indices[i])];

    for (auto method : {SolverMethod::l2, SolverMethod::l1})
    {
        SolverConfig cfg;
        cfg.lambda = 0.01;
        auto const report = solve(method, reduced, measurement, cfg);
        Eigen::VectorXd const s = reconstruct_signal(full, report.coeffs);
        Eigen::VectorXd const odf = odf_from_coeffs(report.coeffs, full.basis);
        std::printf("%s: NMSE %.4f, %d iterations\n", to_string(method).c_str(),
                    (s - truth).squaredNorm() / truth.squaredNorm(), report.iterations);
        for (auto const& f : voxel.fibers)
            std::printf("  ODF along fiber (%.2f, %.2f, %.2f): %.4f\n", f.orientation.x(),
                        f.orientation.y(), f.orientation.z(), evaluate_sh(8, f.orientation).dot(odf));
    }
}
