#ifndef SVBMC_EXACT_GP_HPP
#define SVBMC_EXACT_GP_HPP

#include <svbmc/kernel.hpp>
#include <svbmc/linalg.hpp>
#include <svbmc/optimize.hpp>

#include <random>
#include <utility>

namespace svbmc {

/// Exact heteroskedastic GP conditioned on a (small) dataset.
class ExactGP {
public:
    ExactGP(const Dataset& ds, KernelHyperparams hp) : hp_(std::move(hp)), X_(ds.X()), noise_(ds.total_var()) {
        if (!hp_.valid() || hp_.dim() != ds.dim()) throw Error("exact GP: invalid hyperparameters");
        if (ds.empty()) return;
        ybar_ = ds.y() - mean_vector(X_, hp_);
        Matrix K = kernel_matrix(X_, X_, hp_);
        K.diagonal() += noise_;
        const double s2 = hp_.sigma_f * hp_.sigma_f;
        auto f = linalg::cholesky_with_jitter(K, 0.0, 1e-4 * s2, "K_XX + D");
        L_ = std::move(f.L);
        jitter_ = f.jitter;
        alpha_ = L_.transpose().triangularView<Eigen::Upper>().solve(L_.triangularView<Eigen::Lower>().solve(ybar_));
    }

    const KernelHyperparams& hyperparams() const noexcept { return hp_; }
    const Matrix& chol() const noexcept { return L_; }
    const Vector& alpha() const noexcept { return alpha_; }
    double jitter() const noexcept { return jitter_; }

    /// Latent posterior mean and variance at x.
    std::pair<double, double> predict(const Eigen::Ref<const Vector>& x) const {
        const double m = mean_function(x, hp_);
        const double s2 = hp_.sigma_f * hp_.sigma_f;
        if (X_.rows() == 0) return {m, s2};
        const Vector k = kernel_vector(X_, x, hp_);
        const Vector v = L_.triangularView<Eigen::Lower>().solve(k);
        return {m + k.dot(alpha_), std::max(0.0, s2 - v.squaredNorm())};
    }

    /// log N(y; m(X), K + D).
    double log_marginal_likelihood() const {
        const auto n = static_cast<double>(X_.rows());
        return -0.5 * ybar_.dot(alpha_) - L_.diagonal().array().log().sum() - 0.5 * n * kLog2Pi;
    }

private:
    KernelHyperparams hp_;
    Matrix X_;
    Vector noise_, ybar_, alpha_;
    Matrix L_;
    double jitter_ = 0.0;
};

/// Accumulates the gradient of a mean-function term sum_n g_n m(x_n) with respect to the packed
/// hyperparameters (m0, mu_m, log omega slots).
inline void add_mean_gradient(const Matrix& X, const Vector& g, const KernelHyperparams& hp, Vector& grad) {
    const Eigen::Index d = X.cols();
    grad(d + 1) += g.sum();
    for (Eigen::Index k = 0; k < d; ++k) {
        const Eigen::ArrayXd diff = X.col(k).array() - hp.mu_m(k);
        const double w2 = hp.omega(k) * hp.omega(k);
        grad(d + 2 + k) += (g.array() * diff).sum() / w2;
        grad(2 * d + 2 + k) += (g.array() * diff.square()).sum() / w2;
    }
}

/// Sum over entries of W o dK for the kernel parameters, where K = kernel_matrix(A, B).
/// Adds to the (log sigma_f, log ell) slots of grad, scaled by `scale`.
inline void add_kernel_gradient(const Matrix& A, const Matrix& B, const Matrix& K, const Matrix& W,
                                const KernelHyperparams& hp, double scale, Vector& grad) {
    grad(0) += scale * 2.0 * (W.array() * K.array()).sum();
    const Matrix WK = W.cwiseProduct(K);
    for (Eigen::Index d = 0; d < A.cols(); ++d) {
        const double inv2 = 1.0 / (hp.ell(d) * hp.ell(d));
        double acc = 0.0;
        for (Eigen::Index j = 0; j < B.rows(); ++j) {
            const double bj = B(j, d);
            acc += (WK.col(j).array() * (A.col(d).array() - bj).square()).sum();
        }
        grad(1 + d) += scale * acc * inv2;
    }
}

/// Exact log marginal likelihood and, optionally, its gradient in packed coordinates.
inline double exact_lml(const Dataset& ds, const KernelHyperparams& hp, Vector* grad = nullptr) {
    const ExactGP gp(ds, hp);
    const double lml = gp.log_marginal_likelihood();
    if (grad) {
        const Matrix& X = ds.X();
        const Eigen::Index n = X.rows();
        grad->setZero(KernelHyperparams::packed_size(ds.dim()));
        const Vector& a = gp.alpha();
        Matrix Kinv = Matrix::Identity(n, n);
        gp.chol().triangularView<Eigen::Lower>().solveInPlace(Kinv);
        gp.chol().transpose().triangularView<Eigen::Upper>().solveInPlace(Kinv);
        const Matrix W = a * a.transpose() - Kinv;
        const Matrix K = kernel_matrix(X, X, hp);
        add_kernel_gradient(X, X, K, W, hp, 0.5, *grad);
        add_mean_gradient(X, a, hp, *grad);
    }
    return lml;
}

struct TrainOptions {
    int restarts = 3;
    int max_iter = 200;
    double perturb_sd = 0.5; ///< restart perturbation of the packed vector, in prior sd units
    std::uint64_t seed = 0;
};

struct TrainResult {
    KernelHyperparams hp;
    double objective = -kInf;
    bool converged = false;
};

/// Multi-start BFGS maximization of a hyperparameter objective given in packed coordinates.
inline TrainResult maximize_hyperparams(const ValueGrad& objective, const HyperPrior& prior,
                                        const KernelHyperparams& hp0, const TrainOptions& opt) {
    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<double> normal;
    const Vector t0 = prior.clamp(hp0.pack());
    TrainResult best;
    best.hp = hp0;
    BfgsOptions bo;
    bo.max_iter = opt.max_iter;
    for (int r = 0; r <= opt.restarts; ++r) {
        Vector start = t0;
        if (r > 0)
            for (Eigen::Index i = 0; i < start.size(); ++i) start(i) += opt.perturb_sd * prior.sd(i) * normal(rng);
        start = prior.clamp(start);
        const OptimResult res = maximize_bfgs(objective, start, bo);
        if (res.f > best.objective) {
            best.objective = res.f;
            best.hp = KernelHyperparams::unpack(res.x);
            best.converged = res.converged;
        }
    }
    return best;
}

/// Wraps a likelihood-with-gradient into a log-posterior objective over packed coordinates.
template <typename Lik>
ValueGrad map_objective(Lik&& lik, const HyperPrior& prior) {
    return [lik = std::forward<Lik>(lik), &prior](const Vector& t, Vector& g) -> double {
        const double lp = prior.log_density(t);
        if (!std::isfinite(lp)) {
            g.setZero(t.size());
            return -kInf;
        }
        try {
            const KernelHyperparams hp = KernelHyperparams::unpack(t);
            const double v = lik(hp, &g);
            if (!std::isfinite(v)) return -kInf;
            g += prior.gradient(t);
            return v + lp;
        } catch (const ConditioningError&) {
            g.setZero(t.size());
            return -kInf;
        }
    };
}

/// MAP hyperparameters of the exact GP (log marginal likelihood plus log hyperprior).
inline TrainResult train_map(const Dataset& subset, const KernelHyperparams& hp0, const HyperPrior& prior,
                             const TrainOptions& opt = {}) {
    if (subset.size() < subset.dim() + 2) throw InputError("train_map: need at least D+2 points");
    auto lik = [&subset](const KernelHyperparams& hp, Vector* g) { return exact_lml(subset, hp, g); };
    TrainResult res = maximize_hyperparams(map_objective(lik, prior), prior, hp0, opt);
    return res;
}

} // namespace svbmc

#endif
