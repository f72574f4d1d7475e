#ifndef SVBMC_SGPR_HPP
#define SVBMC_SGPR_HPP

#include <svbmc/exact_gp.hpp>
#include <svbmc/kernel.hpp>
#include <svbmc/linalg.hpp>

#include <utility>

namespace svbmc {

struct SgprOptions {
    double jitter_rel = 1e-8;     ///< jitter on K_ZZ, relative to sigma_f^2
    double max_jitter_rel = 1e-4; ///< escalation limit
};

/// Heteroskedastic sparse GP with the optimal variational distribution at the inducing points.
///
/// With L L^T = K_ZZ + jitter, R = L^-1 K_ZX D^-1/2, L_S L_S^T = I + R R^T, b = R D^-1/2 (y - m(X))
/// and c = L_S^-1 b, the predictive mean is m(x) + a^T gamma and the variance
/// sigma_f^2 - |a|^2 + |L_S^-1 a|^2, where a = L^-1 k_Z(x) and gamma = L_S^-T c.
struct SparseGP {
    KernelHyperparams hp;
    Matrix Z;       ///< M x D inducing inputs
    Matrix X;       ///< N x D training inputs
    Vector ybar;    ///< y - m(X)
    Vector noise;   ///< total per-point variance (the diagonal of D)
    Vector dis;     ///< D^-1/2
    double jitter = 0.0;
    Matrix L, LS, R;
    Vector b, c, gamma;

    Eigen::Index num_inducing() const noexcept { return Z.rows(); }
    Eigen::Index num_points() const noexcept { return X.rows(); }

    static SparseGP fit(const Matrix& X, const Vector& y, const Vector& noise, const Matrix& Z,
                        const KernelHyperparams& hp, const SgprOptions& opt = {}) {
        if (!hp.valid() || hp.dim() != X.cols() || Z.cols() != X.cols()) throw Error("sgpr: invalid hyperparameters");
        if (Z.rows() < 1) throw Error("sgpr: need at least one inducing point");
        if (y.size() != X.rows() || noise.size() != X.rows()) throw Error("sgpr: size mismatch");
        if ((noise.array() <= 0.0).any()) throw Error("sgpr: total noise must be positive");
        SparseGP s;
        s.hp = hp;
        s.Z = Z;
        s.X = X;
        s.ybar = y - mean_vector(X, hp);
        s.noise = noise;
        s.dis = noise.array().rsqrt().matrix();
        const double s2 = hp.sigma_f * hp.sigma_f;
        auto f = linalg::cholesky_with_jitter(kernel_matrix(Z, Z, hp), opt.jitter_rel * s2, opt.max_jitter_rel * s2,
                                              "K_ZZ");
        s.L = std::move(f.L);
        s.jitter = f.jitter;
        s.R = kernel_matrix(Z, X, hp);
        s.L.triangularView<Eigen::Lower>().solveInPlace(s.R);
        s.R = s.R * s.dis.asDiagonal();
        Matrix S = Matrix::Identity(Z.rows(), Z.rows());
        S.selfadjointView<Eigen::Lower>().rankUpdate(s.R);
        S = S.selfadjointView<Eigen::Lower>();
        auto ls = linalg::try_cholesky(S);
        if (!ls) throw ConditioningError("Cholesky factorization of I + R R^T failed");
        s.LS = std::move(*ls);
        s.b = s.R * s.dis.cwiseProduct(s.ybar);
        s.finish();
        return s;
    }

    static SparseGP fit(const Dataset& ds, const Matrix& Z, const KernelHyperparams& hp, const SgprOptions& opt = {}) {
        return fit(ds.X(), ds.y(), ds.total_var(), Z, hp, opt);
    }

    /// Latent mean and variance at x.
    std::pair<double, double> predict(const Eigen::Ref<const Vector>& x) const {
        const Vector a = L.triangularView<Eigen::Lower>().solve(kernel_vector(Z, x, hp));
        const Vector v = LS.triangularView<Eigen::Lower>().solve(a);
        const double var = hp.sigma_f * hp.sigma_f - a.squaredNorm() + v.squaredNorm();
        return {mean_function(x, hp) + a.dot(gamma), std::max(0.0, var)};
    }

    /// Latent means and variances at the rows of Xs.
    std::pair<Vector, Vector> predict_batch(const Matrix& Xs) const {
        Matrix A = kernel_matrix(Z, Xs, hp);
        L.triangularView<Eigen::Lower>().solveInPlace(A);
        Vector mean = mean_vector(Xs, hp) + A.transpose() * gamma;
        Vector var = Vector::Constant(Xs.rows(), hp.sigma_f * hp.sigma_f) - A.colwise().squaredNorm().transpose();
        LS.triangularView<Eigen::Lower>().solveInPlace(A);
        var += A.colwise().squaredNorm().transpose();
        return {std::move(mean), var.cwiseMax(0.0)};
    }

    /// Mean of q(u), including the mean function at Z.
    Vector inducing_mean() const { return mean_vector(Z, hp) + L * gamma; }

    /// Covariance of q(u).
    Matrix inducing_cov() const {
        Matrix W = L.transpose();
        LS.triangularView<Eigen::Lower>().solveInPlace(W);
        return W.transpose() * W;
    }

    /// Heteroskedastic Titsias bound log N(y; m, Q + D) - tr((K - Q) D^-1) / 2.
    double gp_elbo() const {
        const auto n = static_cast<double>(num_points());
        const double s2 = hp.sigma_f * hp.sigma_f;
        const Vector inv = noise.cwiseInverse();
        return -0.5 * n * kLog2Pi - LS.diagonal().array().log().sum() - 0.5 * noise.array().log().sum() -
               0.5 * ybar.cwiseAbs2().dot(inv) + 0.5 * c.squaredNorm() - 0.5 * s2 * inv.sum() +
               0.5 * R.squaredNorm();
    }

    /// Gradient of gp_elbo in packed hyperparameter coordinates. The jitter is treated as a
    /// fixed multiple of sigma_f^2.
    Vector gp_elbo_gradient() const {
        const Eigen::Index m = num_inducing();
        const double s2 = hp.sigma_f * hp.sigma_f;
        const Matrix Kzx = kernel_matrix(Z, X, hp);
        const Matrix Kzz = kernel_matrix(Z, Z, hp);
        const auto Lt = L.transpose().triangularView<Eigen::Upper>();
        const Vector alpha = noise.cwiseInverse().cwiseProduct(ybar) - dis.cwiseProduct(R.transpose() * gamma);
        // K_ZZ^-1 K_ZX = L^-T R D^1/2, so only its product with alpha is needed.
        const Vector Aa = Lt.solve(R * alpha.cwiseQuotient(dis));
        Matrix AU(m, m);
        AU.setZero();
        AU.selfadjointView<Eigen::Lower>().rankUpdate(R);
        AU = AU.selfadjointView<Eigen::Lower>();
        AU = LS.triangularView<Eigen::Lower>().solve(AU).transpose(); // (R R^T) L_S^-T
        Lt.solveInPlace(AU);
        // B = Aa alpha^T + AU L_S^-1 R D^-1/2
        Matrix AUS = LS.transpose().triangularView<Eigen::Upper>().solve(AU.transpose()).transpose();
        Matrix B = AUS * R;
        B = B * dis.asDiagonal();
        B.noalias() += Aa * alpha.transpose();
        Matrix C = Aa * Aa.transpose();
        C.noalias() += AU * AU.transpose();

        Vector g = Vector::Zero(KernelHyperparams::packed_size(hp.dim()));
        add_kernel_gradient(Z, X, Kzx, B, hp, 1.0, g);
        add_kernel_gradient(Z, Z, Kzz, C, hp, -0.5, g);
        g(0) += -jitter * C.trace() - s2 * noise.cwiseInverse().sum();
        add_mean_gradient(X, alpha, hp, g);
        return g;
    }

    /// Adds an observation without a new inducing point.
    SparseGP add_point(const Eigen::Ref<const Vector>& x, double y, double var) const {
        SparseGP s = *this;
        const double sd = std::sqrt(var);
        const double yb = y - mean_function(x, hp);
        const Vector v4 = L.triangularView<Eigen::Lower>().solve(kernel_vector(Z, x, hp)) / sd;
        s.append_point(x, yb, var);
        s.R.col(s.R.cols() - 1) = v4;
        linalg::cholesky_rank1_update(s.LS, v4);
        s.b += v4 * (yb / sd);
        s.finish();
        return s;
    }

    /// Adds an observation at x together with a new inducing point at x. Falls back to
    /// add_point when x is (numerically) already represented by the inducing set.
    SparseGP add_point_with_inducing(const Eigen::Ref<const Vector>& x, double y, double var) const {
        const double s2 = hp.sigma_f * hp.sigma_f;
        const Vector t = L.triangularView<Eigen::Lower>().solve(kernel_vector(Z, x, hp));
        const double tt = t.squaredNorm();
        const double c1sq = s2 + jitter - tt;
        if (!(s2 - tt > std::max(1e-10 * s2, 10.0 * jitter))) return add_point(x, y, var);
        const double c1 = std::sqrt(c1sq);
        const double sd = std::sqrt(var);
        const double yb = y - mean_function(x, hp);
        const Eigen::Index m = num_inducing(), n = num_points();

        const Vector v4 = t / sd;
        const Vector v2 = (dis.cwiseProduct(kernel_vector(X, x, hp)) - R.transpose() * t) / c1;
        const double c2 = (s2 - tt) / (c1 * sd);
        const Vector v3 = R * v2 + c2 * v4;

        SparseGP s;
        s.hp = hp;
        s.jitter = jitter;
        s.Z.resize(m + 1, Z.cols());
        s.Z << Z, x.transpose();
        s.X = X;
        s.ybar = ybar;
        s.noise = noise;
        s.dis = dis;
        s.append_point(x, yb, var);

        s.L = Matrix::Zero(m + 1, m + 1);
        s.L.topLeftCorner(m, m) = L;
        s.L.block(m, 0, 1, m) = t.transpose();
        s.L(m, m) = c1;

        Matrix L1 = LS;
        linalg::cholesky_rank1_update(L1, v4);
        const Vector l = L1.triangularView<Eigen::Lower>().solve(v3);
        const double d2 = 1.0 + c2 * c2 + v2.squaredNorm() - l.squaredNorm();
        if (!(d2 > 0.0)) throw ConditioningError("rank-1 update of L_S lost positive definiteness");
        s.LS = Matrix::Zero(m + 1, m + 1);
        s.LS.topLeftCorner(m, m) = L1;
        s.LS.block(m, 0, 1, m) = l.transpose();
        s.LS(m, m) = std::sqrt(d2);

        s.R = Matrix::Zero(m + 1, n + 1);
        s.R.topLeftCorner(m, n) = R;
        s.R.block(0, n, m, 1) = v4;
        s.R.block(m, 0, 1, n) = v2.transpose();
        s.R(m, n) = c2;

        s.b.resize(m + 1);
        s.b.head(m) = b + v4 * (yb / sd);
        s.b(m) = v2.dot(dis.cwiseProduct(ybar)) + c2 * yb / sd;
        s.finish();
        return s;
    }

private:
    void finish() {
        c = LS.triangularView<Eigen::Lower>().solve(b);
        gamma = LS.transpose().triangularView<Eigen::Upper>().solve(c);
    }

    // Appends x to the training inputs; R must be resized by the caller.
    void append_point(const Eigen::Ref<const Vector>& x, double yb, double var) {
        const Eigen::Index n = X.rows();
        X.conservativeResize(n + 1, Eigen::NoChange);
        X.row(n) = x.transpose();
        ybar.conservativeResize(n + 1);
        ybar(n) = yb;
        noise.conservativeResize(n + 1);
        noise(n) = var;
        dis.conservativeResize(n + 1);
        dis(n) = 1.0 / std::sqrt(var);
        if (R.cols() == n) R.conservativeResize(Eigen::NoChange, n + 1);
    }
};

/// GP-ELBO with optional gradient, refitting the sparse GP at hp.
inline double sgpr_elbo(const Matrix& X, const Vector& y, const Vector& noise, const Matrix& Z,
                        const KernelHyperparams& hp, Vector* grad = nullptr, const SgprOptions& opt = {}) {
    const SparseGP s = SparseGP::fit(X, y, noise, Z, hp, opt);
    if (grad) *grad = s.gp_elbo_gradient();
    return s.gp_elbo();
}

inline double gp_elbo(const Dataset& ds, const Matrix& Z, const KernelHyperparams& hp, const SgprOptions& opt = {}) {
    return sgpr_elbo(ds.X(), ds.y(), ds.total_var(), Z, hp, nullptr, opt);
}

/// MAP hyperparameters under the GP-ELBO (GP-ELBO plus log hyperprior).
inline TrainResult optimize_hyperparams(const Dataset& ds, const Matrix& Z, const KernelHyperparams& hp0,
                                        const HyperPrior& prior, const TrainOptions& topt = {},
                                        const SgprOptions& opt = {}) {
    auto lik = [&](const KernelHyperparams& hp, Vector* g) {
        return sgpr_elbo(ds.X(), ds.y(), ds.total_var(), Z, hp, g, opt);
    };
    return maximize_hyperparams(map_objective(lik, prior), prior, hp0, topt);
}

} // namespace svbmc

#endif
