#ifndef SVBMC_KERNEL_HPP
#define SVBMC_KERNEL_HPP

#include <svbmc/data.hpp>

#include <algorithm>
#include <vector>

namespace svbmc {

/// Squared-exponential kernel and negative-quadratic mean parameters.
struct KernelHyperparams {
    double sigma_f = 1.0;
    Vector ell;
    double m0 = 0.0;
    Vector mu_m;
    Vector omega;

    KernelHyperparams() = default;
    explicit KernelHyperparams(int dim)
        : ell(Vector::Ones(dim)), mu_m(Vector::Zero(dim)), omega(Vector::Ones(dim)) {}

    int dim() const noexcept { return static_cast<int>(ell.size()); }

    bool valid() const {
        return std::isfinite(sigma_f) && sigma_f > 0.0 && std::isfinite(m0) && ell.allFinite() &&
               (ell.array() > 0.0).all() && mu_m.allFinite() && omega.allFinite() && (omega.array() > 0.0).all() &&
               mu_m.size() == ell.size() && omega.size() == ell.size();
    }

    /// Unconstrained vector [log sigma_f, log ell, m0, mu_m, log omega], length 3D+2.
    Vector pack() const {
        const int d = dim();
        Vector t(3 * d + 2);
        t(0) = std::log(sigma_f);
        t.segment(1, d) = ell.array().log().matrix();
        t(d + 1) = m0;
        t.segment(d + 2, d) = mu_m;
        t.segment(2 * d + 2, d) = omega.array().log().matrix();
        return t;
    }

    static KernelHyperparams unpack(const Vector& t) {
        const auto d = static_cast<int>((t.size() - 2) / 3);
        KernelHyperparams hp(d);
        hp.sigma_f = std::exp(t(0));
        hp.ell = t.segment(1, d).array().exp().matrix();
        hp.m0 = t(d + 1);
        hp.mu_m = t.segment(d + 2, d);
        hp.omega = t.segment(2 * d + 2, d).array().exp().matrix();
        return hp;
    }

    static Eigen::Index packed_size(int dim) { return 3 * dim + 2; }
};

inline double kernel(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& x2, const KernelHyperparams& hp) {
    const double r2 = ((x - x2).array() / hp.ell.array()).square().sum();
    return hp.sigma_f * hp.sigma_f * std::exp(-0.5 * r2);
}

inline double mean_function(const Eigen::Ref<const Vector>& x, const KernelHyperparams& hp) {
    return hp.m0 - 0.5 * ((x - hp.mu_m).array() / hp.omega.array()).square().sum();
}

/// Mean function at every row of X.
inline Vector mean_vector(const Matrix& X, const KernelHyperparams& hp) {
    Vector m = Vector::Constant(X.rows(), hp.m0);
    for (Eigen::Index d = 0; d < X.cols(); ++d)
        m.array() -= 0.5 * ((X.col(d).array() - hp.mu_m(d)) / hp.omega(d)).square();
    return m;
}

/// Cross-covariance between the rows of A and the rows of B.
inline Matrix kernel_matrix(const Matrix& A, const Matrix& B, const KernelHyperparams& hp) {
    Matrix r2 = Matrix::Zero(A.rows(), B.rows());
    for (Eigen::Index d = 0; d < A.cols(); ++d) {
        const double inv = 1.0 / hp.ell(d);
        const Vector a = A.col(d) * inv;
        const Vector b = B.col(d) * inv;
        for (Eigen::Index j = 0; j < B.rows(); ++j) r2.col(j).array() += (a.array() - b(j)).square();
    }
    return (hp.sigma_f * hp.sigma_f) * (-0.5 * r2.array()).exp().matrix();
}

/// Kernel between the rows of A and a single point x.
inline Vector kernel_vector(const Matrix& A, const Eigen::Ref<const Vector>& x, const KernelHyperparams& hp) {
    Vector r2 = Vector::Zero(A.rows());
    for (Eigen::Index d = 0; d < A.cols(); ++d)
        r2.array() += ((A.col(d).array() - x(d)) / hp.ell(d)).square();
    return (hp.sigma_f * hp.sigma_f) * (-0.5 * r2.array()).exp().matrix();
}

/// Independent Gaussian prior on the packed hyperparameter vector, with hard box bounds.
struct HyperPrior {
    Vector mean;
    Vector sd;
    Vector lower;
    Vector upper;

    double log_density(const Vector& t) const {
        if (t.size() != mean.size()) throw Error("hyperprior: size mismatch");
        double lp = 0.0;
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            if (!(t(i) >= lower(i) && t(i) <= upper(i))) return -kInf;
            const double z = (t(i) - mean(i)) / sd(i);
            lp += -0.5 * z * z - std::log(sd(i)) - 0.5 * kLog2Pi;
        }
        return lp;
    }

    /// Gradient of log_density inside the bounds.
    Vector gradient(const Vector& t) const {
        return -((t - mean).array() / sd.array().square()).matrix();
    }

    Vector clamp(const Vector& t) const { return t.cwiseMax(lower).cwiseMin(upper); }

    KernelHyperparams mode() const { return KernelHyperparams::unpack(mean); }
};

/// Data-driven prior: broad log-normals on sigma_f, ell, omega centred on the spread of y and of the
/// high-density inputs, and normals on m0 and mu_m centred on the best observation.
/// `hpd_gap` selects the high-density subset as points within that many log units of y_max.
inline HyperPrior make_hyperprior(const Dataset& ds, double hpd_gap) {
    if (ds.empty()) throw InputError("hyperprior: empty dataset");
    const int dim = ds.dim();
    const Eigen::Index n = ds.size();
    const double ymax = ds.y_max();

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return ds.y()(a) > ds.y()(b); });
    Eigen::Index n_hpd = 0;
    while (n_hpd < n && ymax - ds.y()(order[static_cast<std::size_t>(n_hpd)]) <= hpd_gap) ++n_hpd;
    n_hpd = std::min(n, std::max<Eigen::Index>(n_hpd, std::max<Eigen::Index>(dim + 2, n / 10)));

    Matrix Xh(n_hpd, dim);
    for (Eigen::Index k = 0; k < n_hpd; ++k) Xh.row(k) = ds.X().row(order[static_cast<std::size_t>(k)]);
    Vector spread(dim);
    const Vector range = ds.X().colwise().maxCoeff() - ds.X().colwise().minCoeff();
    for (int d = 0; d < dim; ++d) {
        const double m = Xh.col(d).mean();
        double s = n_hpd > 1 ? std::sqrt((Xh.col(d).array() - m).square().sum() / static_cast<double>(n_hpd - 1)) : 0.0;
        const double floor = std::max(1e-3 * range(d), 1e-6);
        spread(d) = std::max(s, floor);
    }
    const double ym = ds.y().mean();
    double sd_y = n > 1 ? std::sqrt((ds.y().array() - ym).square().sum() / static_cast<double>(n - 1)) : 1.0;
    sd_y = std::max(sd_y, 1e-3);

    const auto size = KernelHyperparams::packed_size(dim);
    HyperPrior p;
    p.mean.resize(size);
    p.sd.resize(size);
    p.mean(0) = std::log(sd_y);
    p.sd(0) = 1.0;
    p.mean.segment(1, dim) = spread.array().log().matrix();
    p.sd.segment(1, dim).setOnes();
    p.mean(dim + 1) = ymax;
    p.sd(dim + 1) = 2.0 * std::max(sd_y, 1.0);
    p.mean.segment(dim + 2, dim) = ds.X().row(ds.argmax()).transpose();
    p.sd.segment(dim + 2, dim) = 2.0 * spread;
    p.mean.segment(2 * dim + 2, dim) = (2.0 * spread).array().log().matrix();
    p.sd.segment(2 * dim + 2, dim).setOnes();

    p.lower = p.mean - 10.0 * p.sd;
    p.upper = p.mean + 10.0 * p.sd;
    return p;
}

} // namespace svbmc

#endif
