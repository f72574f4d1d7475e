#ifndef SVBMC_DATA_HPP
#define SVBMC_DATA_HPP

#include <svbmc/common.hpp>

#include <algorithm>
#include <map>
#include <span>
#include <vector>

namespace svbmc {

/// One evaluation of the target log density, in inference-space coordinates.
struct Evaluation {
    Vector x;
    double y = 0.0;
    double sigma_obs_sq = kNoiselessVariance;
};

/// Parameters of the shaping-noise function. `theta_threshold <= 0` means "10 * D".
struct NoiseShapeConfig {
    double sigma_min_sq = 1e-3;
    double sigma_med_sq = 1.0;
    double lambda_slope = 0.05;
    double theta_threshold = 0.0;
    bool enabled = true;

    double theta(int dim) const { return theta_threshold > 0.0 ? theta_threshold : 10.0 * dim; }
};

/// `eta_trim <= 0` means "20 * D".
struct TrimConfig {
    double beta = 1.96;
    double eta_trim = 0.0;

    double eta(int dim) const { return eta_trim > 0.0 ? eta_trim : 20.0 * dim; }
};

/// Training set snapshot: inputs, observed log densities, observation and total variances.
///
/// Exact duplicate inputs are merged on insertion by precision weighting, so every stored
/// x is unique. Mutating operations return a new snapshot.
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(int dim) : dim_(dim), X_(0, dim) {}

    static Dataset from_evaluations(int dim, std::span<const Evaluation> evals) {
        Dataset ds(dim);
        ds.X_.resize(0, dim);
        for (const auto& e : evals) ds.insert(e);
        return ds;
    }

    int dim() const noexcept { return dim_; }
    Eigen::Index size() const noexcept { return y_.size(); }
    bool empty() const noexcept { return y_.size() == 0; }

    /// N x D matrix, one point per row.
    const Matrix& X() const noexcept { return X_; }
    const Vector& y() const noexcept { return y_; }
    const Vector& obs_var() const noexcept { return obs_var_; }
    /// Observation plus shaping variance; equals obs_var until shaping is applied.
    const Vector& total_var() const noexcept { return tot_var_; }

    double y_max() const { return empty() ? -kInf : y_.maxCoeff(); }
    Eigen::Index argmax() const {
        Eigen::Index i = 0;
        if (!empty()) y_.maxCoeff(&i);
        return i;
    }

    Evaluation evaluation(Eigen::Index i) const { return {X_.row(i).transpose(), y_(i), obs_var_(i)}; }

    std::vector<Evaluation> evaluations() const {
        std::vector<Evaluation> out;
        out.reserve(static_cast<std::size_t>(size()));
        for (Eigen::Index i = 0; i < size(); ++i) out.push_back(evaluation(i));
        return out;
    }

    /// New snapshot with `e` appended, or merged into an existing point at the same x.
    Dataset with_added(const Evaluation& e) const {
        Dataset out = *this;
        out.insert(e);
        return out;
    }

    Dataset with_added(std::span<const Evaluation> evals) const {
        Dataset out = *this;
        for (const auto& e : evals) out.insert(e);
        return out;
    }

    /// Rows at `idx`, in the given order; total variances carried over.
    Dataset subset(std::span<const Eigen::Index> idx) const {
        Dataset out(dim_);
        const auto n = static_cast<Eigen::Index>(idx.size());
        out.X_.resize(n, dim_);
        out.y_.resize(n);
        out.obs_var_.resize(n);
        out.tot_var_.resize(n);
        for (Eigen::Index k = 0; k < n; ++k) {
            const auto i = idx[static_cast<std::size_t>(k)];
            out.X_.row(k) = X_.row(i);
            out.y_(k) = y_(i);
            out.obs_var_(k) = obs_var_(i);
            out.tot_var_(k) = tot_var_(i);
            out.index_.emplace(key(X_.row(i)), k);
        }
        return out;
    }

    Dataset with_total_variance(Vector tot) const {
        if (tot.size() != size()) throw Error("with_total_variance: size mismatch");
        Dataset out = *this;
        out.tot_var_ = std::move(tot);
        return out;
    }

    /// Index of the stored point equal to x, or -1.
    Eigen::Index find(const Eigen::Ref<const Vector>& x) const {
        auto it = index_.find(key(x.transpose()));
        return it == index_.end() ? -1 : it->second;
    }

private:
    using Key = std::vector<double>;

    template <typename Row>
    static Key key(const Row& r) {
        Key k(static_cast<std::size_t>(r.size()));
        for (Eigen::Index d = 0; d < r.size(); ++d) k[static_cast<std::size_t>(d)] = r(d);
        return k;
    }

    void validate(const Evaluation& e) const {
        if (e.x.size() != dim_)
            throw InputError("expected " + std::to_string(dim_) + " coordinates, got " + std::to_string(e.x.size()));
        if (!e.x.allFinite()) throw InputError("non-finite coordinate");
        if (!std::isfinite(e.y)) throw InputError("non-finite log density");
        if (!std::isfinite(e.sigma_obs_sq) || e.sigma_obs_sq < 0.0) throw InputError("invalid observation variance");
    }

    void insert(const Evaluation& e) {
        validate(e);
        const Key k = key(e.x.transpose());
        if (auto it = index_.find(k); it != index_.end()) {
            const auto i = it->second;
            const auto [y, v] = merge(y_(i), obs_var_(i), e.y, e.sigma_obs_sq);
            const double shaping = tot_var_(i) - obs_var_(i);
            y_(i) = y;
            obs_var_(i) = v;
            tot_var_(i) = v + shaping;
            return;
        }
        const Eigen::Index n = size();
        X_.conservativeResize(n + 1, dim_);
        y_.conservativeResize(n + 1);
        obs_var_.conservativeResize(n + 1);
        tot_var_.conservativeResize(n + 1);
        X_.row(n) = e.x.transpose();
        y_(n) = e.y;
        obs_var_(n) = e.sigma_obs_sq;
        tot_var_(n) = e.sigma_obs_sq;
        index_.emplace(k, n);
    }

    // Precision-weighted combination of two independent measurements.
    static std::pair<double, double> merge(double y1, double v1, double y2, double v2) {
        if (v1 == 0.0 && v2 == 0.0) return {0.5 * (y1 + y2), 0.0};
        if (v1 == 0.0) return {y1, 0.0};
        if (v2 == 0.0) return {y2, 0.0};
        const double p1 = 1.0 / v1, p2 = 1.0 / v2;
        return {(p1 * y1 + p2 * y2) / (p1 + p2), 1.0 / (p1 + p2)};
    }

    int dim_ = 0;
    Matrix X_;
    Vector y_, obs_var_, tot_var_;
    std::map<Key, Eigen::Index> index_;
};

/// Shaping variance as a function of the gap to the best observed log density.
inline double shape_noise(double delta_y, const NoiseShapeConfig& cfg, int dim) {
    if (!std::isfinite(delta_y) || delta_y < 0.0) throw std::invalid_argument("shape_noise: delta_y must be finite and >= 0");
    if (!cfg.enabled) return 0.0;
    const double theta = cfg.theta(dim);
    const double rho = std::min(1.0, delta_y / theta);
    double v = std::exp((1.0 - rho) * std::log(cfg.sigma_min_sq) + rho * std::log(cfg.sigma_med_sq));
    if (delta_y >= theta) {
        const double t = cfg.lambda_slope * (delta_y - theta);
        v += t * t;
    }
    return v;
}

/// Removes points whose log density is, with high probability, far below the best one.
inline Dataset trim(const Dataset& ds, const TrimConfig& cfg) {
    if (ds.empty()) throw InputError("trim: empty dataset");
    const Vector sd = ds.obs_var().cwiseSqrt();
    const double lcb_max = (ds.y() - cfg.beta * sd).maxCoeff();
    const double eta = cfg.eta(ds.dim());
    std::vector<Eigen::Index> keep;
    keep.reserve(static_cast<std::size_t>(ds.size()));
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        const double ucb = ds.y()(i) + cfg.beta * sd(i);
        if (!(lcb_max - ucb > eta)) keep.push_back(i);
    }
    return ds.subset(keep);
}

/// Recomputes total variances from scratch relative to the current maximum.
inline Dataset apply_noise_shaping(const Dataset& ds, const NoiseShapeConfig& cfg) {
    Vector tot(ds.size());
    const double ymax = ds.y_max();
    for (Eigen::Index i = 0; i < ds.size(); ++i)
        tot(i) = ds.obs_var()(i) + shape_noise(ymax - ds.y()(i), cfg, ds.dim());
    return ds.with_total_variance(std::move(tot));
}

} // namespace svbmc

#endif
