#ifndef SVBMC_LINALG_HPP
#define SVBMC_LINALG_HPP

#include <svbmc/common.hpp>

#include <Eigen/Cholesky>

#include <optional>
#include <string>

namespace svbmc::linalg {

/// Plain lower Cholesky factor; returns nullopt when the matrix is not numerically PD.
inline std::optional<Matrix> try_cholesky(const Matrix& a) {
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() != Eigen::Success) return std::nullopt;
    Matrix l = llt.matrixL();
    if (!l.allFinite() || (l.diagonal().array() <= 0.0).any()) return std::nullopt;
    return l;
}

struct JitteredFactor {
    Matrix L;
    double jitter = 0.0; ///< absolute jitter that was added to the diagonal
};

/// Cholesky of `a + jitter*I`, escalating the jitter by 10x on failure until `max_jitter`.
/// A starting jitter of zero retries from `1e-10 * max_jitter`.
inline JitteredFactor cholesky_with_jitter(const Matrix& a, double jitter, double max_jitter,
                                           const std::string& name) {
    double j = jitter;
    for (;;) {
        Matrix shifted = a;
        shifted.diagonal().array() += j;
        if (auto l = try_cholesky(shifted)) return {std::move(*l), j};
        if (j >= max_jitter) break;
        j = (j <= 0.0) ? 1e-10 * max_jitter : std::min(10.0 * j, max_jitter);
    }
    throw ConditioningError("Cholesky factorization of " + name + " failed with jitter up to " +
                            std::to_string(max_jitter));
}

/// In-place rank-1 update: on return L*L^T equals the old L*L^T + v*v^T.
inline void cholesky_rank1_update(Matrix& L, Vector v) {
    const Eigen::Index n = L.rows();
    for (Eigen::Index k = 0; k < n; ++k) {
        const double lkk = L(k, k);
        const double r = std::hypot(lkk, v(k));
        const double c = r / lkk;
        const double s = v(k) / lkk;
        L(k, k) = r;
        if (k + 1 < n) {
            const Eigen::Index m = n - k - 1;
            L.col(k).tail(m) = (L.col(k).tail(m) + s * v.tail(m)) / c;
            v.tail(m) = c * v.tail(m) - s * L.col(k).tail(m);
        }
    }
}

inline Vector solve_lower(const Matrix& L, const Vector& b) {
    return L.triangularView<Eigen::Lower>().solve(b);
}

inline Vector solve_upper_t(const Matrix& L, const Vector& b) {
    return L.transpose().triangularView<Eigen::Upper>().solve(b);
}

inline double log_det_from_cholesky(const Matrix& L) { return 2.0 * L.diagonal().array().log().sum(); }

} // namespace svbmc::linalg

#endif
