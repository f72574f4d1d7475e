#ifndef SVBMC_OPTIMIZE_HPP
#define SVBMC_OPTIMIZE_HPP

#include <svbmc/common.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

namespace svbmc {

struct OptimResult {
    Vector x;
    double f = -kInf;
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
};

struct BfgsOptions {
    int max_iter = 200;
    double grad_tol = 1e-6; ///< on the infinity norm of the gradient
    double f_tol = 1e-10;   ///< relative change of f between accepted steps
    double max_step = 2.0;  ///< largest infinity-norm step length
};

/// Objective returning f(x) and writing its gradient; may return -inf to signal an invalid point.
using ValueGrad = std::function<double(const Vector&, Vector&)>;

/// BFGS ascent with Armijo backtracking. Only improving steps are accepted, so the
/// returned value is the best one seen.
inline OptimResult maximize_bfgs(const ValueGrad& fg, Vector x0, const BfgsOptions& opt = {}) {
    const Eigen::Index n = x0.size();
    OptimResult res;
    Vector g(n), g_new(n);
    res.x = std::move(x0);
    res.f = fg(res.x, g);
    res.evaluations = 1;
    if (!std::isfinite(res.f) || !g.allFinite()) return res;

    Matrix H = Matrix::Identity(n, n); // inverse Hessian approximation of -f
    int stalls = 0;
    for (int it = 0; it < opt.max_iter; ++it) {
        res.iterations = it + 1;
        if (g.lpNorm<Eigen::Infinity>() < opt.grad_tol) {
            res.converged = true;
            break;
        }
        Vector dir = H * g;
        if (dir.dot(g) <= 0.0) {
            H.setIdentity();
            dir = g;
        }
        const double dmax = dir.lpNorm<Eigen::Infinity>();
        if (dmax > opt.max_step) dir *= opt.max_step / dmax;

        double step = 1.0, f_new = -kInf;
        Vector x_new;
        const double slope = g.dot(dir);
        bool accepted = false;
        for (int ls = 0; ls < 40; ++ls) {
            x_new = res.x + step * dir;
            f_new = fg(x_new, g_new);
            ++res.evaluations;
            if (std::isfinite(f_new) && g_new.allFinite() && f_new >= res.f + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            if (H.isIdentity()) break;
            H.setIdentity();
            continue;
        }
        const Vector s = x_new - res.x;
        const Vector yv = g - g_new; // gradient of -f changes by -(g_new - g)
        const double df = f_new - res.f;
        res.x = x_new;
        res.f = f_new;
        g = g_new;
        const double sy = s.dot(yv);
        if (sy > 1e-12 * s.norm() * yv.norm()) {
            const double rho = 1.0 / sy;
            const Matrix I = Matrix::Identity(n, n);
            H = (I - rho * s * yv.transpose()) * H * (I - rho * yv * s.transpose()) + rho * s * s.transpose();
        }
        if (df <= opt.f_tol * std::max(1.0, std::abs(res.f))) {
            if (++stalls >= 3) {
                res.converged = true;
                break;
            }
        } else {
            stalls = 0;
        }
    }
    return res;
}

struct CmaesOptions {
    double sigma0 = 0.3;      ///< initial step size, in units of the search box width
    int lambda = 0;           ///< population size; 0 means 4 + floor(3 ln n)
    int max_evals = 1000;
    double f_tol = 1e-10;     ///< stop when the best value barely changes over a generation window
    double x_tol = 1e-10;     ///< stop when the step size is negligible
};

/// Compact (mu/mu_w, lambda)-CMA-ES maximizing f inside the box [lb, ub]. Candidates outside
/// the box are projected onto it before evaluation. `f` may return -inf.
template <typename F>
OptimResult maximize_cmaes(F&& f, const Vector& x0, const Vector& lb, const Vector& ub, std::mt19937_64& rng,
                           const CmaesOptions& opt = {}) {
    const Eigen::Index n = x0.size();
    const int lambda = opt.lambda > 0 ? opt.lambda : 4 + static_cast<int>(std::floor(3.0 * std::log(double(n))));
    const int mu = lambda / 2;
    Vector w(mu);
    for (int i = 0; i < mu; ++i) w(i) = std::log(mu + 0.5) - std::log(i + 1.0);
    w /= w.sum();
    const double mueff = 1.0 / w.squaredNorm();
    const double nd = static_cast<double>(n);
    const double cc = (4.0 + mueff / nd) / (nd + 4.0 + 2.0 * mueff / nd);
    const double cs = (mueff + 2.0) / (nd + mueff + 5.0);
    const double c1 = 2.0 / ((nd + 1.3) * (nd + 1.3) + mueff);
    const double cmu = std::min(1.0 - c1, 2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nd + 2.0) * (nd + 2.0) + mueff));
    const double damps = 1.0 + 2.0 * std::max(0.0, std::sqrt((mueff - 1.0) / (nd + 1.0)) - 1.0) + cs;
    const double chi_n = std::sqrt(nd) * (1.0 - 1.0 / (4.0 * nd) + 1.0 / (21.0 * nd * nd));

    const Vector width = (ub - lb).cwiseMax(1e-12);
    // Work in coordinates normalized by the box width.
    auto to_x = [&](const Vector& u) { return (lb + u.cwiseProduct(width)).cwiseMax(lb).cwiseMin(ub).eval(); };
    Vector mean = ((x0 - lb).array() / width.array()).matrix();
    double sigma = opt.sigma0;
    Matrix C = Matrix::Identity(n, n), B = Matrix::Identity(n, n);
    Vector Dg = Vector::Ones(n), pc = Vector::Zero(n), ps = Vector::Zero(n);
    std::normal_distribution<double> normal;

    OptimResult res;
    res.x = to_x(mean);
    res.f = f(res.x);
    res.evaluations = 1;

    std::vector<Vector> zs(static_cast<std::size_t>(lambda)), ys(static_cast<std::size_t>(lambda));
    std::vector<double> fs(static_cast<std::size_t>(lambda));
    std::vector<int> idx(static_cast<std::size_t>(lambda));
    std::vector<double> history;
    int gen = 0;
    while (res.evaluations + lambda <= opt.max_evals) {
        ++gen;
        for (int k = 0; k < lambda; ++k) {
            Vector z(n);
            for (Eigen::Index i = 0; i < n; ++i) z(i) = normal(rng);
            const Vector y = B * Dg.cwiseProduct(z);
            const Vector u = mean + sigma * y;
            const Vector x = to_x(u);
            double fx = f(x);
            if (std::isnan(fx)) fx = -kInf;
            // Penalize projection so the search does not drift along the boundary.
            const Vector uc = u.cwiseMax(0.0).cwiseMin(1.0);
            if (std::isfinite(fx)) fx -= 1e3 * (u - uc).squaredNorm();
            zs[static_cast<std::size_t>(k)] = z;
            ys[static_cast<std::size_t>(k)] = y;
            fs[static_cast<std::size_t>(k)] = fx;
            ++res.evaluations;
            if (fx > res.f) {
                res.f = fx;
                res.x = x;
            }
        }
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return fs[std::size_t(a)] > fs[std::size_t(b)]; });
        if (!std::isfinite(fs[std::size_t(idx[0])])) {
            sigma *= 0.5;
            if (sigma < opt.x_tol) break;
            continue;
        }

        Vector yw = Vector::Zero(n), zw = Vector::Zero(n);
        for (int i = 0; i < mu; ++i) {
            const auto k = std::size_t(idx[std::size_t(i)]);
            if (!std::isfinite(fs[k])) continue;
            yw += w(i) * ys[k];
            zw += w(i) * zs[k];
        }
        mean += sigma * yw;
        ps = (1.0 - cs) * ps + std::sqrt(cs * (2.0 - cs) * mueff) * (B * zw);
        const double hsig_lhs = ps.norm() / std::sqrt(1.0 - std::pow(1.0 - cs, 2.0 * gen)) / chi_n;
        const double hsig = hsig_lhs < 1.4 + 2.0 / (nd + 1.0) ? 1.0 : 0.0;
        pc = (1.0 - cc) * pc + hsig * std::sqrt(cc * (2.0 - cc) * mueff) * yw;
        Matrix rank_mu = Matrix::Zero(n, n);
        for (int i = 0; i < mu; ++i) {
            const auto k = std::size_t(idx[std::size_t(i)]);
            if (!std::isfinite(fs[k])) continue;
            rank_mu += w(i) * ys[k] * ys[k].transpose();
        }
        C = (1.0 - c1 - cmu) * C + c1 * (pc * pc.transpose() + (1.0 - hsig) * cc * (2.0 - cc) * C) + cmu * rank_mu;
        sigma *= std::exp((cs / damps) * (ps.norm() / chi_n - 1.0));
        sigma = std::min(sigma, 1.0);

        C = 0.5 * (C + C.transpose());
        Eigen::SelfAdjointEigenSolver<Matrix> es(C);
        Dg = es.eigenvalues().cwiseMax(1e-20).cwiseSqrt();
        B = es.eigenvectors();

        history.push_back(fs[std::size_t(idx[0])]);
        const std::size_t window = 10 + static_cast<std::size_t>(30.0 * nd / lambda);
        if (history.size() > window) {
            const auto first = history.end() - static_cast<std::ptrdiff_t>(window);
            const auto [lo, hi] = std::minmax_element(first, history.end());
            if (*hi - *lo < opt.f_tol * std::max(1.0, std::abs(*hi))) {
                res.converged = true;
                break;
            }
        }
        if (sigma * Dg.maxCoeff() < opt.x_tol) {
            res.converged = true;
            break;
        }
    }
    res.iterations = gen;
    return res;
}

} // namespace svbmc

#endif
