#ifndef SVBMC_METRICS_HPP
#define SVBMC_METRICS_HPP

#include <svbmc/common.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <optional>
#include <vector>

namespace svbmc {

struct MetricReport {
    std::optional<double> delta_lml;
    double mmtv = 0.0;
    double gskl = 0.0;
    bool gskl_regularized = false;
    Eigen::Index n_p = 0, n_q = 0;
};

namespace detail {

inline double quantile_sorted(const std::vector<double>& v, double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    const double f = pos - static_cast<double>(i);
    return i + 1 < v.size() ? v[i] * (1.0 - f) + v[i + 1] * f : v[i];
}

// Total variation between the two marginals, from histograms on a shared Freedman-Diaconis grid.
inline double marginal_tv(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
    std::vector<double> pooled(a.data(), a.data() + a.size());
    pooled.insert(pooled.end(), b.data(), b.data() + b.size());
    std::sort(pooled.begin(), pooled.end());
    const double lo = pooled.front(), hi = pooled.back();
    if (!(hi > lo)) return 0.0;
    const double iqr = quantile_sorted(pooled, 0.75) - quantile_sorted(pooled, 0.25);
    double h = 2.0 * iqr * std::pow(static_cast<double>(pooled.size()), -1.0 / 3.0);
    if (!(h > 0.0)) h = (hi - lo) / 100.0;
    const auto bins = static_cast<Eigen::Index>(std::clamp(std::ceil((hi - lo) / h), 1.0, 1e6));
    Vector ca = Vector::Zero(bins), cb = Vector::Zero(bins);
    auto bin_of = [&](double x) {
        return std::min<Eigen::Index>(bins - 1, static_cast<Eigen::Index>((x - lo) / (hi - lo) * static_cast<double>(bins)));
    };
    for (Eigen::Index i = 0; i < a.size(); ++i) ca(bin_of(a(i))) += 1.0;
    for (Eigen::Index i = 0; i < b.size(); ++i) cb(bin_of(b(i))) += 1.0;
    return 0.5 * (ca / static_cast<double>(a.size()) - cb / static_cast<double>(b.size())).cwiseAbs().sum();
}

} // namespace detail

/// Mean over dimensions of the total variation distance between marginals.
inline double mmtv(const Matrix& p, const Matrix& q) {
    if (p.cols() != q.cols()) throw InputError("mmtv: dimension mismatch");
    if (p.rows() < 1 || q.rows() < 1) throw InputError("mmtv: empty sample set");
    double sum = 0.0;
    for (Eigen::Index d = 0; d < p.cols(); ++d) sum += detail::marginal_tv(p.col(d), q.col(d));
    return sum / static_cast<double>(p.cols());
}

inline std::pair<Vector, Matrix> sample_moments(const Matrix& s) {
    const Vector m = s.colwise().mean().transpose();
    const Matrix c = s.rowwise() - m.transpose();
    return {m, (c.transpose() * c) / std::max<double>(1.0, static_cast<double>(s.rows()) - 1.0)};
}

/// Symmetrized KL between two Gaussians.
inline double gaussian_skl(const Vector& m1, const Matrix& S1, const Vector& m2, const Matrix& S2) {
    const Eigen::Index D = m1.size();
    Eigen::LLT<Matrix> l1(S1), l2(S2);
    if (l1.info() != Eigen::Success || l2.info() != Eigen::Success) throw ConditioningError("gskl: covariance not PD");
    const Vector dm = m2 - m1;
    const double tr12 = l2.solve(S1).trace(), tr21 = l1.solve(S2).trace();
    const double q2 = dm.dot(l2.solve(dm)), q1 = dm.dot(l1.solve(dm));
    // The log-determinant terms cancel in the symmetrized sum.
    return 0.25 * (tr12 + tr21 + q1 + q2 - 2.0 * static_cast<double>(D));
}

/// Gaussianized symmetrized KL between two sample sets. Sets `regularized` when a ridge was needed.
inline double gskl(const Matrix& p, const Matrix& q, bool* regularized = nullptr) {
    if (p.cols() != q.cols()) throw InputError("gskl: dimension mismatch");
    const Eigen::Index D = p.cols();
    if (p.rows() <= D + 1 || q.rows() <= D + 1) throw InputError("gskl: not enough samples for a covariance");
    auto [m1, S1] = sample_moments(p);
    auto [m2, S2] = sample_moments(q);
    bool ridge = false;
    for (Matrix* S : {&S1, &S2}) {
        Eigen::SelfAdjointEigenSolver<Matrix> es(*S);
        if (es.eigenvalues().minCoeff() <= 1e-12 * std::max(1.0, es.eigenvalues().maxCoeff())) {
            S->diagonal().array() += 1e-10;
            ridge = true;
        }
    }
    if (regularized) *regularized = ridge;
    return std::max(0.0, gaussian_skl(m1, S1, m2, S2));
}

inline double delta_lml(double elbo_mean, double true_lml) { return std::abs(elbo_mean - true_lml); }

inline MetricReport compute_metrics(const Matrix& approx, const Matrix& reference, std::optional<double> elbo,
                                    std::optional<double> true_lml) {
    MetricReport r;
    r.mmtv = mmtv(approx, reference);
    r.gskl = gskl(approx, reference, &r.gskl_regularized);
    if (elbo && true_lml) r.delta_lml = delta_lml(*elbo, *true_lml);
    r.n_p = approx.rows();
    r.n_q = reference.rows();
    return r;
}

} // namespace svbmc

#endif
