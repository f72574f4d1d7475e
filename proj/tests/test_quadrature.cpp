#include "helpers.hpp"

#include <svbmc/inducing.hpp>
#include <svbmc/quadrature.hpp>

#include <gtest/gtest.h>

using namespace svbmc;
using svbmc::testing::random_dataset;
using svbmc::testing::random_hyperparams;
using svbmc::testing::rel_err;

namespace {

SparseGP random_sparse(int dim, std::mt19937_64& rng, Eigen::Index n = 40, Eigen::Index m = 15) {
    const Dataset ds = random_dataset(dim, n, rng);
    const KernelHyperparams hp = random_hyperparams(dim, rng);
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(m));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    return SparseGP::fit(ds, gather_rows(ds.X(), idx), hp);
}

MixturePosterior random_mixture(int K, int dim, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    MixturePosterior q;
    q.w = Vector(K);
    for (int k = 0; k < K; ++k) q.w(k) = 0.2 + u(rng);
    q.w /= q.w.sum();
    q.mu = svbmc::testing::random_matrix(K, dim, rng, -1.5, 1.5);
    q.sigma = Vector(K);
    for (int k = 0; k < K; ++k) q.sigma(k) = 0.4 + 0.8 * u(rng);
    q.lambda = Vector(dim);
    for (int d = 0; d < dim; ++d) q.lambda(d) = 0.3 + 0.7 * u(rng);
    return q;
}

} // namespace

TEST(Quadrature, MeanMatchesMonteCarlo) {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 5; ++rep) {
        const SparseGP s = random_sparse(2, rng);
        const MixturePosterior q = random_mixture(1, 2, rng);
        const Vector var = q.component_var(0);
        const Matrix xs = q.sample(200000, rng);
        const Vector m = s.predict_batch(xs).first;
        const double mc = m.mean();
        const double se = std::sqrt((m.array() - mc).square().sum() / (m.size() - 1) / m.size());
        EXPECT_NEAR(bq_mean(s, q.mu.row(0).transpose(), var), mc, 4.0 * se + 1e-10) << rep;
    }
}

TEST(Quadrature, CovarianceMatchesMonteCarlo) {
    std::mt19937_64 rng(12);
    for (int rep = 0; rep < 3; ++rep) {
        const SparseGP s = random_sparse(2, rng, 25, 10);
        const MixturePosterior qa = random_mixture(1, 2, rng), qb = random_mixture(1, 2, rng);
        const Eigen::Index n = 20000;
        const Matrix xa = qa.sample(n, rng), xb = qb.sample(n, rng);
        // Posterior covariance k(x, x') via inducing quantities.
        Vector vals(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const Vector a = s.L.triangularView<Eigen::Lower>().solve(kernel_vector(s.Z, xa.row(i).transpose(), s.hp));
            const Vector b = s.L.triangularView<Eigen::Lower>().solve(kernel_vector(s.Z, xb.row(i).transpose(), s.hp));
            const Vector la = s.LS.triangularView<Eigen::Lower>().solve(a);
            const Vector lb = s.LS.triangularView<Eigen::Lower>().solve(b);
            vals(i) = kernel(xa.row(i).transpose(), xb.row(i).transpose(), s.hp) - a.dot(b) + la.dot(lb);
        }
        const double mc = vals.mean();
        const double se = std::sqrt((vals.array() - mc).square().sum() / (n - 1) / n);
        const double c = bq_cov(s, qa.mu.row(0).transpose(), qa.component_var(0), qb.mu.row(0).transpose(),
                                qb.component_var(0));
        EXPECT_NEAR(c, mc, 4.0 * se + 1e-10) << rep;
    }
}

TEST(Quadrature, ComponentGramIsPsd) {
    std::mt19937_64 rng(13);
    for (int rep = 0; rep < 10; ++rep) {
        const SparseGP s = random_sparse(2, rng);
        const MixturePosterior q = random_mixture(6, 2, rng);
        const auto [I, C] = bq_components(s, q);
        EXPECT_LE((C - C.transpose()).cwiseAbs().maxCoeff(), 1e-12);
        Eigen::SelfAdjointEigenSolver<Matrix> es(C);
        EXPECT_GE(es.eigenvalues().minCoeff(), -1e-8);
        for (int k = 0; k < q.K(); ++k) {
            EXPECT_NEAR(I(k), bq_mean(s, q.mu.row(k).transpose(), q.component_var(k)), 1e-12);
            EXPECT_NEAR(C(k, k), bq_cov(s, q.mu.row(k).transpose(), q.component_var(k), q.mu.row(k).transpose(),
                                        q.component_var(k)),
                        1e-12);
        }
    }
}

TEST(Quadrature, FarFromDataReducesToMeanFunction) {
    std::mt19937_64 rng(14);
    const SparseGP s = random_sparse(2, rng);
    const Vector mean = Vector::Constant(2, 200.0);
    const Vector var = Vector::Constant(2, 0.01);
    EXPECT_NEAR(bq_mean(s, mean, var), mean_function_integral(s.hp, mean, var), 1e-9);
    // At the mean-function centre the integral is m0 - sum(var / omega^2) / 2.
    const Vector at = s.hp.mu_m;
    const Vector big = Vector::Constant(2, 0.25);
    EXPECT_NEAR(mean_function_integral(s.hp, at, big), s.hp.m0 - 0.5 * (big.array() / s.hp.omega.array().square()).sum(),
                1e-14);
}

TEST(Quadrature, MatchesDenseQuadratureWhenInducingEqualsData) {
    std::mt19937_64 rng(15);
    const Dataset ds = random_dataset(2, 20, rng);
    const KernelHyperparams hp = random_hyperparams(2, rng);
    SgprOptions opt;
    opt.jitter_rel = 0.0;
    const SparseGP s = SparseGP::fit(ds, ds.X(), hp, opt);
    const MixturePosterior q = random_mixture(1, 2, rng);
    const Vector var = q.component_var(0);
    Matrix K = kernel_matrix(ds.X(), ds.X(), hp);
    K.diagonal() += ds.total_var();
    const Vector z = bq_weights(s, q.mu.row(0).transpose(), var);
    const Vector r = ds.y() - mean_vector(ds.X(), hp);
    const double dense = z.dot(K.ldlt().solve(r)) + mean_function_integral(hp, q.mu.row(0).transpose(), var);
    EXPECT_LT(rel_err(bq_mean(s, q.mu.row(0).transpose(), var), dense), 1e-8);
}

namespace {

double elj_from(const SparseGP& s, const MixturePosterior& q) { return expected_log_joint(s, q); }

} // namespace

TEST(Quadrature, ExpectedLogJointGradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(16);
    for (int rep = 0; rep < 10; ++rep) {
        const int D = 1 + rep % 3;
        const SparseGP s = random_sparse(D, rng, 30, 12);
        const MixturePosterior q = random_mixture(3, D, rng);
        MixtureGradient g;
        expected_log_joint(s, q, &g);
        const double h = 1e-5;
        auto check = [&](double analytic, auto perturb) {
            MixturePosterior a = q, b = q;
            perturb(a, h);
            perturb(b, -h);
            const double fd = (elj_from(s, a) - elj_from(s, b)) / (2 * h);
            EXPECT_LT(std::abs(analytic - fd) / std::max(1.0, std::abs(fd)), 1e-5) << rep;
        };
        for (int k = 0; k < q.K(); ++k) {
            check(g.w(k), [k](MixturePosterior& m, double e) { m.w(k) += e; });
            check(g.log_sigma(k), [k](MixturePosterior& m, double e) { m.sigma(k) *= std::exp(e); });
            for (int d = 0; d < D; ++d) check(g.mu(k, d), [k, d](MixturePosterior& m, double e) { m.mu(k, d) += e; });
        }
        for (int d = 0; d < D; ++d) check(g.log_lambda(d), [d](MixturePosterior& m, double e) { m.lambda(d) *= std::exp(e); });
    }
}

TEST(Quadrature, ZeroWeightComponentHasNoMeanGradient) {
    std::mt19937_64 rng(17);
    const SparseGP s = random_sparse(2, rng);
    MixturePosterior q = random_mixture(3, 2, rng);
    q.w << 0.5, 0.5, 0.0;
    MixtureGradient g;
    expected_log_joint(s, q, &g);
    EXPECT_EQ(g.mu.row(2).norm(), 0.0);
    EXPECT_EQ(g.log_sigma(2), 0.0);
}
