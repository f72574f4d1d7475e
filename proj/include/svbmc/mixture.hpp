#ifndef SVBMC_MIXTURE_HPP
#define SVBMC_MIXTURE_HPP

#include <svbmc/common.hpp>

#include <algorithm>
#include <random>
#include <vector>

namespace svbmc {

/// Mixture of K axis-aligned Gaussians, component k with mean mu_k and covariance
/// sigma_k^2 diag(lambda^2).
struct MixturePosterior {
    Vector w;      ///< K weights on the simplex
    Matrix mu;     ///< K x D means
    Vector sigma;  ///< K component scales
    Vector lambda; ///< D shared scales

    int K() const noexcept { return static_cast<int>(w.size()); }
    int dim() const noexcept { return static_cast<int>(lambda.size()); }

    bool valid() const {
        return w.size() == mu.rows() && sigma.size() == w.size() && lambda.size() == mu.cols() && w.allFinite() &&
               mu.allFinite() && (w.array() >= 0.0).all() && std::abs(w.sum() - 1.0) < 1e-9 &&
               (sigma.array() > 0.0).all() && (lambda.array() > 0.0).all() && sigma.allFinite() && lambda.allFinite();
    }

    /// Per-dimension variance of component k.
    Vector component_var(int k) const { return (sigma(k) * lambda).cwiseAbs2(); }

    /// log N(x; mu_k, Sigma_k) for every component.
    Vector component_log_pdf(const Eigen::Ref<const Vector>& x) const {
        const double base = -0.5 * dim() * kLog2Pi - lambda.array().log().sum();
        Vector out(K());
        for (int k = 0; k < K(); ++k) {
            const double r2 = ((x.transpose() - mu.row(k)).array() / lambda.transpose().array()).square().sum();
            out(k) = base - dim() * std::log(sigma(k)) - 0.5 * r2 / (sigma(k) * sigma(k));
        }
        return out;
    }

    double log_pdf(const Eigen::Ref<const Vector>& x) const {
        const Vector lp = component_log_pdf(x);
        double hi = -kInf;
        for (int k = 0; k < K(); ++k)
            if (w(k) > 0.0) hi = std::max(hi, lp(k) + std::log(w(k)));
        if (hi == -kInf) return -kInf;
        double s = 0.0;
        for (int k = 0; k < K(); ++k)
            if (w(k) > 0.0) s += std::exp(lp(k) + std::log(w(k)) - hi);
        return hi + std::log(s);
    }

    double pdf(const Eigen::Ref<const Vector>& x) const { return std::exp(log_pdf(x)); }

    Vector log_pdf_batch(const Matrix& X) const {
        Vector out(X.rows());
        for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) = log_pdf(X.row(i).transpose());
        return out;
    }

    /// n i.i.d. draws (rows).
    Matrix sample(Eigen::Index n, std::mt19937_64& rng) const {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::normal_distribution<double> z;
        std::vector<double> cdf(static_cast<std::size_t>(K()));
        double acc = 0.0;
        for (int k = 0; k < K(); ++k) cdf[static_cast<std::size_t>(k)] = (acc += w(k));
        Matrix out(n, dim());
        for (Eigen::Index i = 0; i < n; ++i) {
            const double r = u(rng) * acc;
            auto k = static_cast<int>(std::upper_bound(cdf.begin(), cdf.end(), r) - cdf.begin());
            k = std::min(k, K() - 1);
            for (int d = 0; d < dim(); ++d) out(i, d) = mu(k, d) + sigma(k) * lambda(d) * z(rng);
        }
        return out;
    }

    Matrix sample(Eigen::Index n, std::uint64_t seed) const {
        std::mt19937_64 rng(seed);
        return sample(n, rng);
    }

    /// Mixture mean and covariance.
    std::pair<Vector, Matrix> moments() const {
        const Vector m = mu.transpose() * w;
        Matrix C = Matrix::Zero(dim(), dim());
        for (int k = 0; k < K(); ++k) {
            const Vector d = mu.row(k).transpose() - m;
            C += w(k) * (d * d.transpose());
            C.diagonal() += w(k) * component_var(k);
        }
        return {m, C};
    }
};

} // namespace svbmc

#endif
