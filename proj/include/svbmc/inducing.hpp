#ifndef SVBMC_INDUCING_HPP
#define SVBMC_INDUCING_HPP

#include <svbmc/kernel.hpp>

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

namespace svbmc {

struct InducingConfig {
    int m_min = 200;
    int m_max_base = 300;
    double m_max_growth = 2.0;
    double frac_tol = 1e-5;

    /// Upper bound on M after `n_new` post-processing evaluations.
    int m_max(int n_new) const {
        return m_max_base + static_cast<int>(std::floor(m_max_growth * std::sqrt(static_cast<double>(n_new))));
    }
};

struct InducingSelection {
    std::vector<Eigen::Index> indices;
    std::vector<double> frac_error; ///< fractional trace error after each pick
};

/// Weighted greedy variance selection by pivoted partial Cholesky: each step picks the point with
/// the largest residual prior variance divided by its noise variance. Ties go to the lowest index.
inline InducingSelection select_inducing(const Matrix& X, const Vector& noise, const KernelHyperparams& hp,
                                         const InducingConfig& cfg, int n_new = 0) {
    const Eigen::Index n = X.rows();
    InducingSelection out;
    if (n == 0) return out;
    const Eigen::Index m_min = std::min<Eigen::Index>(cfg.m_min, n);
    const Eigen::Index m_max = std::max<Eigen::Index>(m_min, std::min<Eigen::Index>(cfg.m_max(n_new), n));
    const double s2 = hp.sigma_f * hp.sigma_f;
    const Vector w = noise.cwiseInverse();
    Vector resid = Vector::Constant(n, s2);
    const double total = s2 * w.sum();
    std::vector<char> taken(static_cast<std::size_t>(n), 0);
    Matrix V(m_max, n); // rows of the partial Cholesky factor
    double err = total;
    for (Eigen::Index k = 0; k < m_max; ++k) {
        Eigen::Index p = -1;
        double best = -kInf;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (taken[static_cast<std::size_t>(i)]) continue;
            const double score = resid(i) * w(i);
            if (score > best) {
                best = score;
                p = i;
            }
        }
        if (p < 0) break;
        taken[static_cast<std::size_t>(p)] = 1;
        out.indices.push_back(p);
        const double dp = resid(p);
        if (dp > 1e-14 * s2) {
            Vector row = kernel_vector(X, X.row(p).transpose(), hp);
            if (k > 0) row.noalias() -= V.topRows(k).transpose() * V.col(p).head(k);
            row /= std::sqrt(dp);
            V.row(k) = row.transpose();
            resid -= row.cwiseAbs2();
            resid = resid.cwiseMax(0.0);
        } else {
            V.row(k).setZero();
        }
        resid(p) = 0.0;
        err = resid.dot(w);
        out.frac_error.push_back(err / total);
        if (k + 1 >= m_min && err / total < cfg.frac_tol) break;
    }
    return out;
}

inline InducingSelection select_inducing(const Dataset& ds, const KernelHyperparams& hp, const InducingConfig& cfg,
                                         int n_new = 0) {
    return select_inducing(ds.X(), ds.total_var(), hp, cfg, n_new);
}

inline Matrix gather_rows(const Matrix& X, const std::vector<Eigen::Index>& idx) {
    Matrix out(static_cast<Eigen::Index>(idx.size()), X.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = X.row(idx[k]);
    return out;
}

namespace detail {

// Lloyd's algorithm with k-means++ seeding; returns the centres.
inline Matrix kmeans(const Matrix& P, Eigen::Index k, std::mt19937_64& rng, int max_iter = 100) {
    const Eigen::Index n = P.rows();
    Matrix C(k, P.cols());
    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
    C.row(0) = P.row(first(rng));
    Vector d2 = (P.rowwise() - C.row(0)).rowwise().squaredNorm();
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (Eigen::Index c = 1; c < k; ++c) {
        const double sum = d2.sum();
        Eigen::Index pick = 0;
        if (sum > 0.0) {
            double r = u(rng) * sum;
            for (pick = 0; pick < n - 1; ++pick) {
                r -= d2(pick);
                if (r <= 0.0) break;
            }
        } else {
            pick = first(rng);
        }
        C.row(c) = P.row(pick);
        d2 = d2.cwiseMin((P.rowwise() - C.row(c)).rowwise().squaredNorm());
    }
    std::vector<Eigen::Index> assign(static_cast<std::size_t>(n), -1);
    for (int it = 0; it < max_iter; ++it) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Index best;
            (C.rowwise() - P.row(i)).rowwise().squaredNorm().minCoeff(&best);
            if (assign[static_cast<std::size_t>(i)] != best) {
                assign[static_cast<std::size_t>(i)] = best;
                changed = true;
            }
        }
        if (!changed) break;
        Matrix sum = Matrix::Zero(k, P.cols());
        Vector cnt = Vector::Zero(k);
        for (Eigen::Index i = 0; i < n; ++i) {
            sum.row(assign[static_cast<std::size_t>(i)]) += P.row(i);
            cnt(assign[static_cast<std::size_t>(i)]) += 1.0;
        }
        for (Eigen::Index c = 0; c < k; ++c)
            if (cnt(c) > 0) C.row(c) = sum.row(c) / cnt(c);
    }
    return C;
}

} // namespace detail

/// Representative subset: split the points into `strata` groups by y quantile, allocate the budget
/// proportionally (largest remainder, at least one per non-empty group when n >= strata), run
/// k-means within each group and keep the points nearest the centres. Returned indices are sorted.
inline std::vector<Eigen::Index> stratified_subset(const Dataset& ds, Eigen::Index n, int strata, std::uint64_t seed) {
    const Eigen::Index total = ds.size();
    std::vector<Eigen::Index> all(static_cast<std::size_t>(total));
    std::iota(all.begin(), all.end(), Eigen::Index{0});
    if (n >= total) return all;
    if (n <= 0) return {};
    strata = std::max(1, strata);

    std::stable_sort(all.begin(), all.end(), [&](auto a, auto b) { return ds.y()(a) > ds.y()(b); });
    std::vector<std::vector<Eigen::Index>> groups(static_cast<std::size_t>(strata));
    for (Eigen::Index r = 0; r < total; ++r)
        groups[static_cast<std::size_t>(r * strata / total)].push_back(all[static_cast<std::size_t>(r)]);

    // Largest-remainder allocation.
    std::vector<Eigen::Index> budget(groups.size(), 0);
    std::vector<std::pair<double, std::size_t>> rem;
    Eigen::Index used = 0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const double share = static_cast<double>(n) * static_cast<double>(groups[g].size()) / static_cast<double>(total);
        budget[g] = static_cast<Eigen::Index>(std::floor(share));
        if (n >= strata && !groups[g].empty()) budget[g] = std::max<Eigen::Index>(budget[g], 1);
        used += budget[g];
        rem.emplace_back(share - std::floor(share), g);
    }
    std::stable_sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; used < n; i = (i + 1) % rem.size()) {
        const auto g = rem[i].second;
        if (budget[g] < static_cast<Eigen::Index>(groups[g].size())) {
            ++budget[g];
            ++used;
        }
    }
    while (used > n) { // the minimum-one rule can overshoot for tiny budgets
        auto g = static_cast<std::size_t>(std::max_element(budget.begin(), budget.end()) - budget.begin());
        --budget[g];
        --used;
    }

    std::mt19937_64 rng(seed);
    std::vector<Eigen::Index> out;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& grp = groups[g];
        const Eigen::Index k = budget[g];
        if (k == 0) continue;
        if (k >= static_cast<Eigen::Index>(grp.size())) {
            out.insert(out.end(), grp.begin(), grp.end());
            continue;
        }
        std::vector<Eigen::Index> sorted = grp;
        std::sort(sorted.begin(), sorted.end());
        const Matrix P = gather_rows(ds.X(), sorted);
        const Matrix C = detail::kmeans(P, k, rng);
        std::vector<char> used_pt(sorted.size(), 0);
        for (Eigen::Index c = 0; c < k; ++c) {
            const Vector d = (P.rowwise() - C.row(c)).rowwise().squaredNorm();
            Eigen::Index best = -1;
            for (Eigen::Index i = 0; i < P.rows(); ++i)
                if (!used_pt[static_cast<std::size_t>(i)] && (best < 0 || d(i) < d(best))) best = i;
            used_pt[static_cast<std::size_t>(best)] = 1;
            out.push_back(sorted[static_cast<std::size_t>(best)]);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace svbmc

#endif
