#ifndef SVBMC_VARIATIONAL_HPP
#define SVBMC_VARIATIONAL_HPP

#include <svbmc/mixture.hpp>
#include <svbmc/inducing.hpp>
#include <svbmc/quadrature.hpp>

#include <deque>
#include <numeric>
#include <optional>

namespace svbmc {

struct ElboEstimate {
    double mean = -kInf;
    double sd = 0.0;          ///< posterior sd of the expected log joint
    double entropy = 0.0;
    double entropy_se = 0.0;  ///< Monte Carlo standard error of the entropy
    int n_mc_entropy = 0;
};

/// Stratified reparameterized Monte Carlo estimate of the mixture entropy: ceil(n_mc / K) draws per
/// component. Fills the gradient (weights treated as free) and the standard error when requested.
inline double entropy_mc(const MixturePosterior& q, int n_mc, std::mt19937_64& rng, MixtureGradient* grad = nullptr,
                         double* se = nullptr) {
    const int K = q.K(), D = q.dim();
    const int per = std::max(1, (n_mc + K - 1) / K);
    std::normal_distribution<double> z;
    if (grad) *grad = MixtureGradient::zeros(K, D);
    const Eigen::ArrayXd lam2 = q.lambda.array().square();
    Vector inv_s2(K), logw(K);
    for (int j = 0; j < K; ++j) {
        inv_s2(j) = 1.0 / (q.sigma(j) * q.sigma(j));
        logw(j) = q.w(j) > 0.0 ? std::log(q.w(j)) : -kInf;
    }
    double H = 0.0, var_acc = 0.0;
    Vector x(D), lp(K), e(K);
    Matrix diff(K, D);
    Vector gx(D);
    for (int k = 0; k < K; ++k) {
        double sum = 0.0, sum2 = 0.0;
        for (int i = 0; i < per; ++i) {
            for (int d = 0; d < D; ++d) x(d) = q.mu(k, d) + q.sigma(k) * q.lambda(d) * z(rng);
            const Vector lcomp = q.component_log_pdf(x);
            double hi = -kInf;
            for (int j = 0; j < K; ++j) {
                lp(j) = lcomp(j) + logw(j);
                hi = std::max(hi, lp(j));
            }
            double s = 0.0;
            for (int j = 0; j < K; ++j) s += std::exp(lp(j) - hi);
            const double logq = hi + std::log(s);
            sum += logq;
            sum2 += logq * logq;
            if (!grad) continue;
            const double c = -q.w(k) / per;
            gx.setZero();
            for (int j = 0; j < K; ++j) {
                e(j) = std::exp(lcomp(j) - logq);
                const double r = q.w(j) * e(j);
                grad->w(j) += c * e(j);
                if (r == 0.0) continue;
                diff.row(j) = x.transpose() - q.mu.row(j);
                const Eigen::ArrayXd u = diff.row(j).transpose().array() * inv_s2(j) / lam2; // (x - mu_j) / var_j
                grad->mu.row(j) += c * r * u.matrix().transpose();
                const Eigen::ArrayXd t = diff.row(j).transpose().array() * u; // (x - mu_j)^2 / var_j
                grad->log_sigma(j) += c * r * (t.sum() - D);
                grad->log_lambda += (c * r * (t - 1.0)).matrix();
                gx -= r * u.matrix();
            }
            const Vector dk = x - q.mu.row(k).transpose();
            grad->mu.row(k) += c * gx.transpose();
            grad->log_sigma(k) += c * gx.dot(dk);
            grad->log_lambda += c * gx.cwiseProduct(dk);
        }
        const double mean = sum / per;
        H -= q.w(k) * mean;
        if (grad) grad->w(k) -= mean;
        if (per > 1) var_acc += q.w(k) * q.w(k) * std::max(0.0, (sum2 / per - mean * mean)) / (per - 1);
    }
    if (se) *se = std::sqrt(var_acc);
    return H;
}

/// ELBO of q under the sparse-GP surrogate: BQ expected log joint plus MC entropy.
inline ElboEstimate elbo(const MixturePosterior& q, const SparseGP& s, int n_mc, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ElboEstimate out;
    out.entropy = entropy_mc(q, n_mc, rng, nullptr, &out.entropy_se);
    out.mean = expected_log_joint(s, q) + out.entropy;
    out.sd = std::sqrt(expected_log_joint_variance(s, q));
    out.n_mc_entropy = std::max(1, (n_mc + q.K() - 1) / q.K()) * q.K();
    return out;
}

/// Symmetrized KL, (KL(a||b) + KL(b||a)) / 2, estimated with n/2 draws from each side.
inline double symmetrized_kl(const MixturePosterior& a, const MixturePosterior& b, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const Matrix xa = a.sample(n / 2, rng), xb = b.sample(n / 2, rng);
    const double kab = (a.log_pdf_batch(xa) - b.log_pdf_batch(xa)).mean();
    const double kba = (b.log_pdf_batch(xb) - a.log_pdf_batch(xb)).mean();
    return std::max(0.0, 0.5 * (kab + kba));
}

struct VariationalOptions {
    int n_mc = 100;          ///< entropy draws per gradient step (split across components)
    int n_mc_compare = 4000; ///< draws for accept/reject comparisons
    int max_iter = 1500;
    double lr = 0.05;
    double lr_final = 0.005;
    double lr_decay = 0.3;   ///< step-size factor applied on each plateau
    int window = 20;         ///< smoothing window of the stochastic ELBO trace
    int patience = 6;        ///< windows without improvement before annealing
    double improve_tol = 1e-3;
    double accept_tol = 0.0; ///< extra slack when comparing against the starting point
    double scale_lo = 1e-3, scale_hi = 1e3;
    Vector scale;            ///< per-dimension data scale; empty means ones
    int max_restarts = 3;
    // build-up
    int k_max = 30;
    double kl_tol = 0.01;
    int n_kl = 20000;
};

namespace detail {

inline Vector pack_mixture(const MixturePosterior& q, const Vector& scale) {
    const int K = q.K(), D = q.dim();
    Vector t(K + K * D + K + D);
    for (int k = 0; k < K; ++k) t(k) = q.w(k) > 0.0 ? std::log(q.w(k)) : -700.0;
    for (int k = 0; k < K; ++k)
        for (int d = 0; d < D; ++d) t(K + k * D + d) = q.mu(k, d) / scale(d);
    t.segment(K + K * D, K) = q.sigma.array().log().matrix();
    t.tail(D) = q.lambda.array().log().matrix();
    return t;
}

inline MixturePosterior unpack_mixture(const Vector& t, int K, int D, const Vector& scale) {
    MixturePosterior q;
    const double hi = t.head(K).maxCoeff();
    q.w = (t.head(K).array() - hi).exp().matrix();
    q.w /= q.w.sum();
    q.mu.resize(K, D);
    for (int k = 0; k < K; ++k)
        for (int d = 0; d < D; ++d) q.mu(k, d) = t(K + k * D + d) * scale(d);
    q.sigma = t.segment(K + K * D, K).array().exp().matrix();
    q.lambda = t.tail(D).array().exp().matrix();
    return q;
}

inline Vector pack_gradient(const MixturePosterior& q, const MixtureGradient& g, const Vector& scale) {
    const int K = q.K(), D = q.dim();
    Vector out(K + K * D + K + D);
    const double avg = q.w.dot(g.w);
    for (int k = 0; k < K; ++k) out(k) = q.w(k) * (g.w(k) - avg);
    for (int k = 0; k < K; ++k)
        for (int d = 0; d < D; ++d) out(K + k * D + d) = g.mu(k, d) * scale(d);
    out.segment(K + K * D, K) = g.log_sigma;
    out.tail(D) = g.log_lambda;
    return out;
}

// Keeps every sigma_k lambda_d inside [lo, hi] x scale_d.
inline void clamp_scales(Vector& t, int K, int D, const Vector& scale, double lo, double hi) {
    for (int d = 0; d < D; ++d) {
        double& ll = t(K + K * D + K + d);
        ll = std::clamp(ll, std::log(lo * scale(d)), std::log(hi * scale(d)));
    }
    for (int k = 0; k < K; ++k) {
        double smin = -kInf, smax = kInf;
        for (int d = 0; d < D; ++d) {
            const double ll = t(K + K * D + K + d);
            smin = std::max(smin, std::log(lo * scale(d)) - ll);
            smax = std::min(smax, std::log(hi * scale(d)) - ll);
        }
        double& ls = t(K + K * D + k);
        if (smin <= smax) ls = std::clamp(ls, smin, smax);
    }
    // Keep the logits in a sane range.
    const double top = t.head(K).maxCoeff();
    for (int k = 0; k < K; ++k) t(k) = std::max(t(k) - top, -700.0);
}

inline Vector default_scale(const VariationalOptions& opt, int D) {
    return opt.scale.size() == D ? opt.scale : Vector::Ones(D);
}

} // namespace detail

struct FitReport {
    int iterations = 0;
    int restarts = 0;
    bool reverted = false; ///< the starting point was better and was returned
};

/// Stochastic gradient ascent (Adam) on the ELBO. Returns q0 if the result is not better.
inline MixturePosterior fit_variational(const MixturePosterior& q0, const SparseGP& s, const VariationalOptions& opt,
                                        std::mt19937_64& rng, FitReport* report = nullptr) {
    const int K = q0.K(), D = q0.dim();
    const Vector scale = detail::default_scale(opt, D);
    const std::uint64_t cmp_seed = rng();
    FitReport rep;
    double lr0 = opt.lr;
    for (int attempt = 0; attempt <= opt.max_restarts; ++attempt) {
        Vector t = detail::pack_mixture(q0, scale);
        detail::clamp_scales(t, K, D, scale, opt.scale_lo, opt.scale_hi);
        const Eigen::Index n = t.size();
        Vector m1 = Vector::Zero(n), m2 = Vector::Zero(n);
        std::deque<double> trace;
        double best_smooth = -kInf;
        Vector best_t = t;
        int stale = 0;
        bool diverged = false;
        double lr = lr0;
        const double lr_end = lr0 * opt.lr_final / opt.lr;
        int it = 0;
        for (; it < opt.max_iter; ++it) {
            const MixturePosterior q = detail::unpack_mixture(t, K, D, scale);
            MixtureGradient gG, gH;
            const double G = expected_log_joint(s, q, &gG);
            const double H = entropy_mc(q, opt.n_mc, rng, &gH);
            const double f = G + H;
            gG.w += gH.w;
            gG.mu += gH.mu;
            gG.log_sigma += gH.log_sigma;
            gG.log_lambda += gH.log_lambda;
            const Vector g = detail::pack_gradient(q, gG, scale);
            if (!std::isfinite(f) || !g.allFinite()) {
                diverged = true;
                break;
            }
            trace.push_back(f);
            if (static_cast<int>(trace.size()) > opt.window) trace.pop_front();
            if ((it + 1) % opt.window == 0) {
                double smooth = 0.0;
                for (double v : trace) smooth += v;
                smooth /= static_cast<double>(trace.size());
                if (smooth > best_smooth + opt.improve_tol) {
                    best_smooth = smooth;
                    best_t = t;
                    stale = 0;
                } else if (++stale >= opt.patience) {
                    // Plateau: anneal, and stop once the final rate has stalled too.
                    if (lr <= lr_end) break;
                    lr = std::max(lr_end, lr * opt.lr_decay);
                    stale = 0;
                }
            }
            const double b1 = 0.9, b2 = 0.999;
            m1 = b1 * m1 + (1 - b1) * g;
            m2 = b2 * m2 + (1 - b2) * g.cwiseAbs2();
            const Vector mh = m1 / (1 - std::pow(b1, it + 1));
            const Vector vh = m2 / (1 - std::pow(b2, it + 1));
            t += lr * (mh.array() / (vh.array().sqrt() + 1e-8)).matrix();
            detail::clamp_scales(t, K, D, scale, opt.scale_lo, opt.scale_hi);
        }
        rep.iterations += it;
        if (diverged) {
            ++rep.restarts;
            lr0 *= 0.1;
            continue;
        }
        // Prefer the final iterate unless the best smoothed window was clearly better.
        MixturePosterior q = detail::unpack_mixture(t, K, D, scale);
        const MixturePosterior qb = detail::unpack_mixture(best_t, K, D, scale);
        double fq = elbo(q, s, opt.n_mc_compare, cmp_seed).mean;
        const double fb = elbo(qb, s, opt.n_mc_compare, cmp_seed).mean;
        if (fb > fq) {
            q = qb;
            fq = fb;
        }
        const double f0 = elbo(q0, s, opt.n_mc_compare, cmp_seed).mean;
        if (!std::isfinite(fq) || fq < f0 - opt.accept_tol) {
            rep.reverted = true;
            q = q0;
        }
        if (report) *report = rep;
        return q;
    }
    throw Error("variational fit diverged after " + std::to_string(opt.max_restarts) + " restarts");
}

/// Adds one component at the training input where the normalized surrogate most exceeds q.
/// `fbar` holds the surrogate mean at the rows of X, `log_z` the current ELBO.
inline MixturePosterior add_component(const MixturePosterior& q, const Matrix& X, const Vector& fbar, double log_z) {
    const int K = q.K();
    Eigen::Index best = 0;
    double best_r = -kInf;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const double r = std::exp(fbar(i) - log_z) - std::exp(q.log_pdf(X.row(i).transpose()));
        if (r > best_r) {
            best_r = r;
            best = i;
        }
    }
    MixturePosterior out;
    out.lambda = q.lambda;
    out.w.resize(K + 1);
    out.w.head(K) = q.w * (static_cast<double>(K) / (K + 1));
    out.w(K) = 1.0 / (K + 1);
    out.mu.resize(K + 1, q.dim());
    out.mu.topRows(K) = q.mu;
    out.mu.row(K) = X.row(best);
    out.sigma.resize(K + 1);
    out.sigma.head(K) = q.sigma;
    out.sigma(K) = std::exp(q.sigma.array().log().mean());
    return out;
}

struct BuildUpReport {
    std::vector<double> kl_trace;
    std::vector<double> elbo_trace;
};

/// Grows q one component at a time until successive posteriors differ by less than kl_tol in
/// symmetrized KL, a new component stops helping, or K reaches k_max.
inline MixturePosterior build_up(const MixturePosterior& q_init, const SparseGP& s, const VariationalOptions& opt,
                                 std::mt19937_64& rng, BuildUpReport* report = nullptr) {
    const auto [fbar, fvar] = s.predict_batch(s.X);
    MixturePosterior q = fit_variational(q_init, s, opt, rng);
    const std::uint64_t cmp_seed = rng();
    double fq = elbo(q, s, opt.n_mc_compare, cmp_seed).mean;
    if (report) report->elbo_trace.push_back(fq);
    while (q.K() < opt.k_max) {
        MixturePosterior cand = fit_variational(add_component(q, s.X, fbar, fq), s, opt, rng);
        const double fc = elbo(cand, s, opt.n_mc_compare, cmp_seed).mean;
        if (!(fc >= fq - opt.accept_tol)) break;
        const double kl = symmetrized_kl(q, cand, opt.n_kl, rng());
        if (report) {
            report->kl_trace.push_back(kl);
            report->elbo_trace.push_back(fc);
        }
        q = std::move(cand);
        fq = fc;
        if (kl < opt.kl_tol) break;
    }
    return q;
}

/// Starting mixture: K components at the best distinct training points, with the shared scale set to
/// the spread of the high-density points.
inline MixturePosterior initial_mixture(const Matrix& X, const Vector& y, int K, double hpd_gap) {
    const int D = static_cast<int>(X.cols());
    std::vector<Eigen::Index> order(static_cast<std::size_t>(X.rows()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return y(a) > y(b); });
    const double ymax = y(order.front());
    std::vector<Eigen::Index> hpd;
    for (auto i : order)
        if (ymax - y(i) <= hpd_gap || static_cast<int>(hpd.size()) < D + 2) hpd.push_back(i);
    const Matrix H = gather_rows(X, hpd);
    const Vector m = H.colwise().mean().transpose();
    Vector sd = ((H.rowwise() - m.transpose()).array().square().colwise().sum() /
                 std::max<double>(1.0, static_cast<double>(H.rows()) - 1.0))
                    .sqrt()
                    .matrix()
                    .transpose();
    sd = sd.cwiseMax(1e-6);
    MixturePosterior q;
    K = std::max(1, std::min<int>(K, static_cast<int>(X.rows())));
    q.w = Vector::Constant(K, 1.0 / K);
    q.mu.resize(K, D);
    q.mu.row(0) = X.row(order.front());
    int filled = 1;
    // Spread further components over the high-density points, farthest-first.
    while (filled < K) {
        Eigen::Index pick = hpd.front();
        double far = -1.0;
        for (auto i : hpd) {
            double dmin = kInf;
            for (int k = 0; k < filled; ++k)
                dmin = std::min(dmin, ((X.row(i) - q.mu.row(k)).transpose().array() / sd.array()).square().sum());
            if (dmin > far) {
                far = dmin;
                pick = i;
            }
        }
        q.mu.row(filled++) = X.row(pick);
    }
    q.sigma = Vector::Constant(K, 1.0 / std::sqrt(static_cast<double>(K)));
    q.lambda = sd;
    return q;
}

} // namespace svbmc

#endif
