#ifndef SVBMC_TEST_HELPERS_HPP
#define SVBMC_TEST_HELPERS_HPP

#include <svbmc/data.hpp>
#include <svbmc/kernel.hpp>

#include <random>

namespace svbmc::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double lo = -2.0,
                            double hi = 2.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = u(rng);
    return m;
}

inline KernelHyperparams random_hyperparams(int dim, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    KernelHyperparams hp(dim);
    hp.sigma_f = 0.5 + 1.5 * u(rng);
    for (int d = 0; d < dim; ++d) {
        hp.ell(d) = 0.3 + 0.7 * u(rng);
        hp.mu_m(d) = u(rng) - 0.5;
        hp.omega(d) = 1.0 + 2.0 * u(rng);
    }
    hp.m0 = u(rng) - 0.5;
    return hp;
}

/// Random heteroskedastic dataset whose y follows a smooth function plus noise.
inline Dataset random_dataset(int dim, Eigen::Index n, std::mt19937_64& rng, double noise_lo = 1e-3,
                              double noise_hi = 0.1) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> z;
    const Matrix X = random_matrix(n, dim, rng, -3.0, 3.0);
    std::vector<Evaluation> ev;
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vector x = X.row(i).transpose();
        const double var = noise_lo * std::pow(noise_hi / noise_lo, u(rng));
        const double f = -0.5 * x.squaredNorm() + std::sin(2.0 * x(0));
        ev.push_back({x, f + std::sqrt(var) * z(rng), var});
    }
    return Dataset::from_evaluations(dim, ev);
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

} // namespace svbmc::testing

#endif
