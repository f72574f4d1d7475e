#ifndef SVBMC_QUADRATURE_HPP
#define SVBMC_QUADRATURE_HPP

#include <svbmc/mixture.hpp>
#include <svbmc/sgpr.hpp>

namespace svbmc {

/// Gradient of a scalar with respect to the mixture parameters (weights taken as free).
struct MixtureGradient {
    Vector w;
    Matrix mu;
    Vector log_sigma;
    Vector log_lambda;

    static MixtureGradient zeros(int K, int D) {
        return {Vector::Zero(K), Matrix::Zero(K, D), Vector::Zero(K), Vector::Zero(D)};
    }
};

/// Integral of k(x, z_p) against N(x; mean, diag(var)) for every inducing point z_p.
inline Vector bq_weights(const SparseGP& s, const Eigen::Ref<const Vector>& mean, const Eigen::Ref<const Vector>& var) {
    const Eigen::ArrayXd a = s.hp.ell.array().square() + var.array();
    const double scale = s.hp.sigma_f * s.hp.sigma_f * (s.hp.ell.array() / a.sqrt()).prod();
    Vector r2 = Vector::Zero(s.Z.rows());
    for (Eigen::Index d = 0; d < s.Z.cols(); ++d) r2.array() += (s.Z.col(d).array() - mean(d)).square() / a(d);
    return scale * (-0.5 * r2.array()).exp().matrix();
}

/// E[m(x)] under N(mean, diag(var)) for the negative-quadratic mean function.
inline double mean_function_integral(const KernelHyperparams& hp, const Eigen::Ref<const Vector>& mean,
                                     const Eigen::Ref<const Vector>& var) {
    return hp.m0 - 0.5 * (((mean - hp.mu_m).array().square() + var.array()) / hp.omega.array().square()).sum();
}

/// L^-T gamma, so that the posterior mean of a Gaussian integral is w^T beta.
inline Vector bq_beta(const SparseGP& s) { return s.L.transpose().triangularView<Eigen::Upper>().solve(s.gamma); }

/// Posterior mean of the integral of the latent function against N(mean, diag(var)).
inline double bq_mean(const SparseGP& s, const Eigen::Ref<const Vector>& mean, const Eigen::Ref<const Vector>& var) {
    return bq_weights(s, mean, var).dot(bq_beta(s)) + mean_function_integral(s.hp, mean, var);
}

/// Posterior covariance between the integrals against two Gaussians.
inline double bq_cov(const SparseGP& s, const Eigen::Ref<const Vector>& mean_j, const Eigen::Ref<const Vector>& var_j,
                     const Eigen::Ref<const Vector>& mean_k, const Eigen::Ref<const Vector>& var_k) {
    const Eigen::ArrayXd a = s.hp.ell.array().square() + var_j.array() + var_k.array();
    const double prior = s.hp.sigma_f * s.hp.sigma_f * (s.hp.ell.array() / a.sqrt()).prod() *
                         std::exp(-0.5 * ((mean_j - mean_k).array().square() / a).sum());
    const Vector aj = s.L.triangularView<Eigen::Lower>().solve(bq_weights(s, mean_j, var_j));
    const Vector ak = s.L.triangularView<Eigen::Lower>().solve(bq_weights(s, mean_k, var_k));
    const Vector bj = s.LS.triangularView<Eigen::Lower>().solve(aj);
    const Vector bk = s.LS.triangularView<Eigen::Lower>().solve(ak);
    return prior - aj.dot(ak) + bj.dot(bk);
}

/// Per-component integral means I_k and their posterior covariance matrix.
inline std::pair<Vector, Matrix> bq_components(const SparseGP& s, const MixturePosterior& q, bool with_cov = true) {
    const int K = q.K();
    const Vector beta = bq_beta(s);
    Vector I(K);
    Matrix A(s.Z.rows(), K);
    for (int k = 0; k < K; ++k) {
        const Vector var = q.component_var(k);
        const Vector wk = bq_weights(s, q.mu.row(k).transpose(), var);
        I(k) = wk.dot(beta) + mean_function_integral(s.hp, q.mu.row(k).transpose(), var);
        A.col(k) = wk;
    }
    Matrix C;
    if (with_cov) {
        s.L.triangularView<Eigen::Lower>().solveInPlace(A);
        Matrix B = A;
        s.LS.triangularView<Eigen::Lower>().solveInPlace(B);
        C = B.transpose() * B - A.transpose() * A;
        const double s2 = s.hp.sigma_f * s.hp.sigma_f;
        for (int j = 0; j < K; ++j)
            for (int k = 0; k < K; ++k) {
                const Eigen::ArrayXd a = s.hp.ell.array().square() + q.component_var(j).array() + q.component_var(k).array();
                C(j, k) += s2 * (s.hp.ell.array() / a.sqrt()).prod() *
                           std::exp(-0.5 * ((q.mu.row(j) - q.mu.row(k)).transpose().array().square() / a).sum());
            }
    }
    return {std::move(I), std::move(C)};
}

/// Posterior mean of E_q[f] = sum_k w_k I_k, with its analytic gradient when requested.
inline double expected_log_joint(const SparseGP& s, const MixturePosterior& q, MixtureGradient* grad = nullptr) {
    const int K = q.K(), D = q.dim();
    const Vector beta = bq_beta(s);
    const Eigen::ArrayXd ell2 = s.hp.ell.array().square();
    const Eigen::ArrayXd om2 = s.hp.omega.array().square();
    double total = 0.0;
    if (grad) *grad = MixtureGradient::zeros(K, D);
    for (int k = 0; k < K; ++k) {
        const Vector mean = q.mu.row(k).transpose();
        const Eigen::ArrayXd var = q.component_var(k).array();
        const Vector wk = bq_weights(s, mean, var.matrix());
        const Vector wb = wk.cwiseProduct(beta);
        const double Ik = wb.sum() + mean_function_integral(s.hp, mean, var.matrix());
        total += q.w(k) * Ik;
        if (!grad) continue;
        grad->w(k) = Ik;
        const Eigen::ArrayXd a = ell2 + var;
        // d I_k / d mean_d and d I_k / d var_d.
        Eigen::ArrayXd dmean(D), dvar(D);
        for (int d = 0; d < D; ++d) {
            const Eigen::ArrayXd diff = mean(d) - s.Z.col(d).array();
            const double s1 = (wb.array() * diff).sum();
            const double s2 = (wb.array() * diff.square()).sum();
            dmean(d) = -s1 / a(d) - (mean(d) - s.hp.mu_m(d)) / om2(d);
            dvar(d) = -0.5 * wb.sum() / a(d) + 0.5 * s2 / (a(d) * a(d)) - 0.5 / om2(d);
        }
        grad->mu.row(k) = q.w(k) * dmean.matrix().transpose();
        // var_d = sigma_k^2 lambda_d^2, so d var_d / d log(.) = 2 var_d.
        const double chain = q.w(k) * 2.0 * (dvar * var).sum();
        grad->log_sigma(k) = chain;
        grad->log_lambda += (q.w(k) * 2.0 * dvar * var).matrix();
    }
    return total;
}

/// Posterior variance of E_q[f].
inline double expected_log_joint_variance(const SparseGP& s, const MixturePosterior& q) {
    const auto [I, C] = bq_components(s, q, true);
    return std::max(0.0, q.w.dot(C * q.w));
}

} // namespace svbmc

#endif
