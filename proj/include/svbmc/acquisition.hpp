#ifndef SVBMC_ACQUISITION_HPP
#define SVBMC_ACQUISITION_HPP

#include <svbmc/data.hpp>
#include <svbmc/mixture.hpp>
#include <svbmc/optimize.hpp>
#include <svbmc/sgpr.hpp>

#include <functional>
#include <optional>

namespace svbmc {

enum class AcquisitionKind { a1, a2 };

struct AcquisitionConfig {
    std::optional<AcquisitionKind> kind; ///< unset: a1 for exact data, a2 otherwise
    double p_alpha = 0.75;
    int n_imiqr_mc = 512;
    int n_starts = 8;
    int max_evals_per_start = 200;
    bool add_inducing = true; ///< hypothetical observations also add an inducing point
    double box_margin = 0.1;  ///< search box expansion, as a fraction of its width
    std::optional<std::pair<Vector, Vector>> bounds;

    double alpha() const { return normal_quantile(p_alpha); }
};

/// Chooses a1 when every observation is (nearly) exact.
inline AcquisitionKind default_acquisition(const Dataset& ds) {
    return (ds.obs_var().array() <= 1e-3).all() ? AcquisitionKind::a1 : AcquisitionKind::a2;
}

/// log a1(x) = log s^2(x) + log q(x) + fbar(x).
inline double log_a1(const Eigen::Ref<const Vector>& x, const MixturePosterior& q, const SparseGP& s) {
    const auto [m, v] = s.predict(x);
    if (!(v > 0.0)) return -kInf;
    return std::log(v) + q.log_pdf(x) + m;
}

inline double a1(const Eigen::Ref<const Vector>& x, const MixturePosterior& q, const SparseGP& s) {
    return std::exp(log_a1(x, q, s));
}

/// Hypothetical observation variance at x: observation noise model plus shaping at the expected Δy.
struct HypotheticalNoise {
    std::function<double(const Eigen::Ref<const Vector>&)> obs_var;
    NoiseShapeConfig shaping;
    double y_max = 0.0;
    int dim = 1;

    double operator()(const Eigen::Ref<const Vector>& x, double mean) const {
        double v = obs_var ? obs_var(x) : kNoiselessVariance;
        if (shaping.enabled) v += shape_noise(std::max(0.0, y_max - mean), shaping, dim);
        return v;
    }
};

/// Precomputed quantities for evaluating the latent sd at a fixed Monte Carlo set after a
/// hypothetical observation at a candidate point.
class LookaheadVariance {
public:
    LookaheadVariance(const SparseGP& s, Matrix points) : s_(s), P_(std::move(points)) {
        const auto L = s.L.triangularView<Eigen::Lower>();
        const auto LS = s.LS.triangularView<Eigen::Lower>();
        A_ = kernel_matrix(s.Z, P_, s.hp);
        L.solveInPlace(A_);
        Ab_ = A_;
        LS.solveInPlace(Ab_);
        const double s2 = s.hp.sigma_f * s.hp.sigma_f;
        var_ = (s2 - A_.colwise().squaredNorm().array() + Ab_.colwise().squaredNorm().array()).max(0.0).matrix().transpose();
        RRt_ = s.R * s.R.transpose();
    }

    const Matrix& points() const noexcept { return P_; }
    const Vector& current_variance() const noexcept { return var_; }

    /// Latent variances at the Monte Carlo points after observing at x with variance v.
    Vector after(const Eigen::Ref<const Vector>& x, double v, bool add_inducing) const {
        const auto& hp = s_.hp;
        const double s2 = hp.sigma_f * hp.sigma_f;
        const auto L = s_.L.triangularView<Eigen::Lower>();
        const auto LS = s_.LS.triangularView<Eigen::Lower>();
        const Vector t = L.solve(kernel_vector(s_.Z, x, hp));
        const double tt = t.squaredNorm();
        const double sd = std::sqrt(v);
        Vector out;
        if (!add_inducing || !(s2 - tt > std::max(1e-10 * s2, 10.0 * s_.jitter))) {
            const Vector ub = LS.solve(t / sd);
            const Vector au = Ab_.transpose() * ub;
            out = var_.array() - au.array().square() / (1.0 + ub.squaredNorm());
        } else {
            const double c1 = std::sqrt(s2 + s_.jitter - tt);
            const Vector kd = s_.dis.cwiseProduct(kernel_vector(s_.X, x, hp));
            const Vector g = s_.R * kd;
            const Vector RRt_t = RRt_ * t;
            const Vector Rv2 = (g - RRt_t) / c1;
            const double v2sq = (kd.squaredNorm() - 2.0 * t.dot(g) + t.dot(RRt_t)) / (c1 * c1);
            const double c2 = (s2 - tt) / (c1 * sd);
            const Vector u = t / sd;
            const Vector p = Rv2 + c2 * u;
            const double qq = 1.0 + std::max(0.0, v2sq) + c2 * c2;
            const Vector ub = LS.solve(u), pb = LS.solve(p);
            const double den1 = 1.0 + ub.squaredNorm();
            const double pu = pb.dot(ub);
            const double schur = qq - (pb.squaredNorm() - pu * pu / den1);
            const Vector ta = A_.transpose() * t;
            const Vector au = Ab_.transpose() * ub;
            const Vector ap = Ab_.transpose() * pb;
            const Vector kx = kernel_vector(P_, x, hp);
            const Eigen::ArrayXd e = (kx - ta).array() / c1;
            const Eigen::ArrayXd pba = ap.array() - pu * au.array() / den1;
            out = var_.array() - e.square() - au.array().square() / den1 + (pba - e).square() / schur;
        }
        return out.cwiseMax(0.0).cwiseMin(s2);
    }

private:
    const SparseGP& s_;
    Matrix P_;
    Matrix A_, Ab_, RRt_;
    Vector var_;
};

/// a2(x) = -2 mean_j sinh(alpha s*(x_j; x)) over the Monte Carlo set.
inline double a2(const Eigen::Ref<const Vector>& x, const LookaheadVariance& look, const SparseGP& s,
                 const HypotheticalNoise& noise, double alpha, bool add_inducing) {
    const double m = s.predict(x).first;
    const Vector v = look.after(x, noise(x, m), add_inducing);
    return -2.0 * (alpha * v.array().sqrt()).sinh().mean();
}

/// Search box: training inputs and the bulk of q, widened by a margin.
inline std::pair<Vector, Vector> search_box(const Matrix& X, const MixturePosterior& q, double margin) {
    Vector lo = X.colwise().minCoeff().transpose(), hi = X.colwise().maxCoeff().transpose();
    for (int k = 0; k < q.K(); ++k) {
        const Vector sd = q.component_var(k).cwiseSqrt();
        lo = lo.cwiseMin(q.mu.row(k).transpose() - 4.0 * sd);
        hi = hi.cwiseMax(q.mu.row(k).transpose() + 4.0 * sd);
    }
    const Vector w = (hi - lo).cwiseMax(1e-6);
    return {lo - margin * w, hi + margin * w};
}

struct ProposalContext {
    HypotheticalNoise noise;
    Matrix X;  ///< training inputs, for seeding
    Vector y;
};

/// Picks n_points by sequential maximization with fantasy updates in between.
inline std::vector<Vector> propose(const SparseGP& state, const MixturePosterior& q, const ProposalContext& ctx,
                                   const AcquisitionConfig& cfg, AcquisitionKind kind, int n_points,
                                   std::mt19937_64& rng) {
    const int D = q.dim();
    const auto [lb, ub] = cfg.bounds ? *cfg.bounds : search_box(ctx.X, q, cfg.box_margin);
    const double alpha = cfg.alpha();
    // The a2 integration set is drawn once per proposal round.
    const Matrix mc = kind == AcquisitionKind::a2 ? q.sample(cfg.n_imiqr_mc, rng) : Matrix();

    std::vector<Eigen::Index> order(static_cast<std::size_t>(ctx.X.rows()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return ctx.y(a) > ctx.y(b); });

    SparseGP s = state;
    std::vector<Vector> picks;
    CmaesOptions copt;
    copt.max_evals = cfg.max_evals_per_start;
    copt.sigma0 = 0.1;
    copt.f_tol = 1e-8;
    for (int p = 0; p < n_points; ++p) {
        std::optional<LookaheadVariance> look;
        if (kind == AcquisitionKind::a2) look.emplace(s, mc);
        auto objective = [&](const Vector& x) {
            if (kind == AcquisitionKind::a1) return log_a1(x, q, s);
            return a2(x, *look, s, ctx.noise, alpha, cfg.add_inducing);
        };
        const int n_from_q = (cfg.n_starts + 1) / 2;
        const Matrix qs = q.sample(n_from_q, rng);
        std::vector<Vector> starts;
        for (int i = 0; i < n_from_q; ++i) starts.emplace_back(qs.row(i).transpose());
        for (int i = 0; static_cast<int>(starts.size()) < cfg.n_starts && i < static_cast<int>(order.size()); ++i)
            starts.emplace_back(ctx.X.row(order[static_cast<std::size_t>(i)]).transpose());
        Vector best_x;
        double best_f = -kInf;
        for (auto& x0 : starts) {
            const Vector x0c = x0.cwiseMax(lb).cwiseMin(ub);
            OptimResult r;
            try {
                r = maximize_cmaes(objective, x0c, lb, ub, rng, copt);
            } catch (const std::exception&) {
                continue;
            }
            if (std::isfinite(r.f) && r.f > best_f) {
                best_f = r.f;
                best_x = r.x;
            }
        }
        if (best_x.size() != D) throw Error("acquisition: all optimizer starts failed");
        picks.push_back(best_x);
        if (p + 1 < n_points) {
            const double m = s.predict(best_x).first;
            const double v = ctx.noise(best_x, m);
            s = cfg.add_inducing ? s.add_point_with_inducing(best_x, m, v) : s.add_point(best_x, m, v);
        }
    }
    return picks;
}

} // namespace svbmc

#endif
