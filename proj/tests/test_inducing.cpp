#include "helpers.hpp"

#include <svbmc/inducing.hpp>

#include <Eigen/Cholesky>

#include <gtest/gtest.h>

#include <set>

using namespace svbmc;
using svbmc::testing::random_dataset;
using svbmc::testing::random_hyperparams;

namespace {

// Recomputes diag[(K - Q) D^-1] from scratch at every step.
std::vector<Eigen::Index> naive_greedy(const Dataset& ds, const KernelHyperparams& hp, Eigen::Index m) {
    std::vector<Eigen::Index> chosen;
    const Matrix& X = ds.X();
    for (Eigen::Index k = 0; k < m; ++k) {
        Vector diag = Vector::Constant(X.rows(), hp.sigma_f * hp.sigma_f);
        if (!chosen.empty()) {
            const Matrix Z = gather_rows(X, chosen);
            const Matrix Kzx = kernel_matrix(Z, X, hp);
            const Matrix Kzz = kernel_matrix(Z, Z, hp);
            diag -= (Kzx.array() * Kzz.ldlt().solve(Kzx).array()).colwise().sum().transpose().matrix();
        }
        const Vector score = diag.cwiseQuotient(ds.total_var());
        Eigen::Index best = -1;
        for (Eigen::Index i = 0; i < X.rows(); ++i) {
            if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
            if (best < 0 || score(i) > score(best)) best = i;
        }
        chosen.push_back(best);
    }
    return chosen;
}

} // namespace

TEST(Inducing, SmallDatasetReturnsEverything) {
    std::mt19937_64 rng(31);
    const auto ds = random_dataset(2, 50, rng);
    const auto sel = select_inducing(ds, random_hyperparams(2, rng), InducingConfig{});
    EXPECT_EQ(sel.indices.size(), 50u);
    EXPECT_EQ(std::set<Eigen::Index>(sel.indices.begin(), sel.indices.end()).size(), 50u);
    EXPECT_LT(sel.frac_error.back(), 1e-12);
}

TEST(Inducing, FirstPickIsTheLeastNoisyPoint) {
    std::mt19937_64 rng(32);
    const auto ds = random_dataset(2, 80, rng);
    Eigen::Index least;
    ds.total_var().minCoeff(&least);
    InducingConfig cfg;
    cfg.m_min = 5;
    EXPECT_EQ(select_inducing(ds, random_hyperparams(2, rng), cfg).indices.front(), least);
}

TEST(Inducing, MatchesNaiveRecomputation) {
    std::mt19937_64 rng(33);
    for (int rep = 0; rep < 5; ++rep) {
        const auto ds = random_dataset(2, 150, rng);
        const auto hp = random_hyperparams(2, rng);
        InducingConfig cfg;
        cfg.m_min = 25;
        cfg.m_max_base = 25;
        cfg.m_max_growth = 0.0;
        const auto sel = select_inducing(ds, hp, cfg);
        EXPECT_EQ(sel.indices, naive_greedy(ds, hp, 25));
    }
}

TEST(Inducing, TraceErrorIsNonincreasingAndStopsAtTolerance) {
    std::mt19937_64 rng(34);
    const auto ds = random_dataset(1, 400, rng);
    KernelHyperparams hp(1);
    hp.ell(0) = 1.0;
    InducingConfig cfg;
    cfg.m_min = 5;
    const auto sel = select_inducing(ds, hp, cfg);
    for (std::size_t k = 1; k < sel.frac_error.size(); ++k) EXPECT_LE(sel.frac_error[k], sel.frac_error[k - 1] + 1e-15);
    EXPECT_LT(sel.frac_error.back(), cfg.frac_tol);
    EXPECT_LT(sel.indices.size(), 100u); // smooth 1D kernel needs few points
}

TEST(Inducing, RespectsBounds) {
    std::mt19937_64 rng(35);
    const auto ds = random_dataset(4, 600, rng);
    KernelHyperparams hp(4);
    hp.ell.setConstant(0.1);
    InducingConfig cfg;
    EXPECT_EQ(select_inducing(ds, hp, cfg, 0).indices.size(), 300u);
    EXPECT_EQ(select_inducing(ds, hp, cfg, 100).indices.size(), 320u);
    hp.ell.setConstant(50.0);
    EXPECT_EQ(select_inducing(ds, hp, cfg, 0).indices.size(), 200u);
}

TEST(Inducing, PermutationInvariant) {
    std::mt19937_64 rng(36);
    const auto ds = random_dataset(2, 120, rng);
    const auto hp = random_hyperparams(2, rng);
    std::vector<Eigen::Index> perm(120);
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto shuffled = ds.subset(perm);
    InducingConfig cfg;
    cfg.m_min = 30;
    cfg.m_max_base = 30;
    cfg.m_max_growth = 0;
    const auto a = select_inducing(ds, hp, cfg).indices;
    const auto b = select_inducing(shuffled, hp, cfg).indices;
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k], perm[static_cast<std::size_t>(b[k])]);
}

TEST(StratifiedSubset, FullBudgetReturnsAll) {
    std::mt19937_64 rng(37);
    const auto ds = random_dataset(2, 40, rng);
    EXPECT_EQ(stratified_subset(ds, 40, 5, 1).size(), 40u);
}

TEST(StratifiedSubset, OneClusterPicksPointNearestCentroid) {
    std::mt19937_64 rng(38);
    const auto ds = random_dataset(3, 70, rng);
    const auto idx = stratified_subset(ds, 1, 1, 7);
    ASSERT_EQ(idx.size(), 1u);
    const Vector centroid = ds.X().colwise().mean().transpose();
    Eigen::Index nearest;
    (ds.X().rowwise() - centroid.transpose()).rowwise().squaredNorm().minCoeff(&nearest);
    EXPECT_EQ(idx[0], nearest);
}

TEST(StratifiedSubset, EveryStratumContributesAndSeedIsDeterministic) {
    std::mt19937_64 rng(39);
    const auto ds = random_dataset(2, 500, rng);
    const auto idx = stratified_subset(ds, 12, 5, 3);
    EXPECT_EQ(idx.size(), 12u);
    EXPECT_EQ(std::set<Eigen::Index>(idx.begin(), idx.end()).size(), 12u);
    std::vector<Eigen::Index> order(500);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return ds.y()(a) > ds.y()(b); });
    std::set<int> hit;
    for (auto i : idx) hit.insert(static_cast<int>((std::find(order.begin(), order.end(), i) - order.begin()) * 5 / 500));
    EXPECT_EQ(hit.size(), 5u);
    EXPECT_EQ(idx, stratified_subset(ds, 12, 5, 3));
}
