#ifndef SVBMC_TARGETS_HPP
#define SVBMC_TARGETS_HPP

#include <svbmc/data.hpp>
#include <svbmc/optimize.hpp>

#include <cstring>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>

namespace svbmc {

/// One target evaluation; sigma_obs is the reported noise sd (0 for exact values).
struct Observation {
    double y = 0.0;
    double sigma_obs = 0.0;
    bool has_sigma = false;
};

struct Target {
    std::string name;
    int dim = 0;
    std::function<Observation(const Vector&)> eval;
    bool exact = true;
    bool concurrency_safe = true;
    std::optional<double> log_z;                                          ///< true log normalizer
    std::function<Matrix(Eigen::Index, std::uint64_t)> reference_sampler; ///< exact posterior draws
    std::function<std::uint64_t()> get_calls;       ///< internal call counter, for stateful targets
    std::function<void(std::uint64_t)> set_calls;

    double operator()(const Vector& x) const { return eval(x).y; }
};

/// (x, y, variance) of an observation, as stored in a dataset.
inline Evaluation to_evaluation(const Vector& x, const Observation& o) {
    return {x, o.y, o.has_sigma ? std::max(o.sigma_obs * o.sigma_obs, 0.0) : kNoiselessVariance};
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Exact draws from a 2D density tabulated on a midpoint grid (cell chosen by mass, uniform inside).
class GridSampler2D {
public:
    GridSampler2D(const std::function<double(double, double)>& log_f, double a0, double a1, int na, double b0, double b1,
                  int nb)
        : a0_(a0), b0_(b0), da_((a1 - a0) / na), db_((b1 - b0) / nb), na_(na), nb_(nb) {
        std::vector<double> lf(static_cast<std::size_t>(na) * static_cast<std::size_t>(nb));
        double hi = -kInf;
        for (int i = 0; i < na; ++i)
            for (int j = 0; j < nb; ++j) {
                const double v = log_f(a0 + (i + 0.5) * da_, b0 + (j + 0.5) * db_);
                lf[static_cast<std::size_t>(i) * static_cast<std::size_t>(nb) + static_cast<std::size_t>(j)] = v;
                hi = std::max(hi, v);
            }
        cdf_.resize(lf.size());
        double acc = 0.0;
        for (std::size_t k = 0; k < lf.size(); ++k) cdf_[k] = (acc += std::exp(lf[k] - hi));
        log_z_ = hi + std::log(acc * da_ * db_);
    }

    double log_normalizer() const noexcept { return log_z_; }

    std::pair<double, double> draw(std::mt19937_64& rng) const {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double r = u(rng) * cdf_.back();
        auto k = static_cast<std::size_t>(std::upper_bound(cdf_.begin(), cdf_.end(), r) - cdf_.begin());
        k = std::min(k, cdf_.size() - 1);
        const auto i = static_cast<int>(k / static_cast<std::size_t>(nb_));
        const auto j = static_cast<int>(k % static_cast<std::size_t>(nb_));
        return {a0_ + (i + u(rng)) * da_, b0_ + (j + u(rng)) * db_};
    }

private:
    double a0_, b0_, da_, db_;
    int na_, nb_;
    std::vector<double> cdf_;
    double log_z_ = 0.0;
};

inline double rosenbrock_term(double a, double b) {
    const double r = a * a - b;
    return -r * r - (b - 1.0) * (b - 1.0) / 100.0;
}

// One (x_{2i-1}, x_{2i}) banana block including its share of the N(0, 9 I) factor.
inline double banana_block(double a, double b) {
    return rosenbrock_term(a, b) - (a * a + b * b) / 18.0 - std::log(2.0 * std::numbers::pi * 9.0);
}

inline const GridSampler2D& banana_grid() {
    static const GridSampler2D grid(banana_block, -6.5, 6.5, 1600, -14.0, 24.0, 3200);
    return grid;
}

} // namespace detail

/// R(a, b) = -(a^2 - b)^2 - (b - 1)^2 / 100.
inline double rosenbrock(double a, double b) { return detail::rosenbrock_term(a, b); }

/// Two banana blocks, a standard normal pair, and a N(0, 9 I) prior factor.
inline double rosenbrock_gaussian_6d(const Eigen::Ref<const Vector>& x) {
    if (x.size() != 6) throw InputError("rosenbrock_gaussian_6d expects 6 coordinates");
    return rosenbrock(x(0), x(1)) + rosenbrock(x(2), x(3)) - kLog2Pi - 0.5 * (x(4) * x(4) + x(5) * x(5)) -
           3.0 * kLog2Pi - 6.0 * std::log(3.0) - x.squaredNorm() / 18.0;
}

inline Target rosenbrock_gaussian_target() {
    Target t;
    t.name = "rosenbrock_gaussian_6d";
    t.dim = 6;
    t.eval = [](const Vector& x) { return Observation{rosenbrock_gaussian_6d(x)}; };
    // The density factorizes into two banana blocks and two Gaussian coordinates with variance 0.9;
    // each standard normal times N(0, 9) integrates to N(0; 0, 10).
    const double log_gauss = -0.5 * std::log(2.0 * std::numbers::pi * 10.0);
    t.log_z = 2.0 * detail::banana_grid().log_normalizer() + 2.0 * log_gauss;
    t.reference_sampler = [](Eigen::Index n, std::uint64_t seed) {
        const auto& grid = detail::banana_grid();
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> z(0.0, std::sqrt(0.9));
        Matrix out(n, 6);
        for (Eigen::Index i = 0; i < n; ++i) {
            std::tie(out(i, 0), out(i, 1)) = grid.draw(rng);
            std::tie(out(i, 2), out(i, 3)) = grid.draw(rng);
            out(i, 4) = z(rng);
            out(i, 5) = z(rng);
        }
        return out;
    };
    return t;
}

inline constexpr double kTwoMoonsRadius = 0.70710678118654752440; // 1 / sqrt(2)
inline constexpr double kTwoMoonsWidth = 0.01;

/// Ring of radius 1/sqrt(2) and width 0.01 with a von Mises-like angular profile: two thirds of
/// the mass on the left (x1 < 0), one third on the right.
inline double two_moons(const Eigen::Ref<const Vector>& x, double kappa) {
    if (x.size() != 2) throw InputError("two_moons expects 2 coordinates");
    const double r = x.norm();
    if (r == 0.0) return -kInf;
    const double c = x(0) / r;
    const double rad = (r - kTwoMoonsRadius) / kTwoMoonsWidth;
    return -0.5 * rad * rad + log_add_exp(kappa * c - std::log(3.0), -kappa * c + std::log(2.0 / 3.0));
}

inline Target two_moons_target(double kappa = 8.0) {
    Target t;
    t.name = "two_moons";
    t.dim = 2;
    t.eval = [kappa](const Vector& x) { return Observation{two_moons(x, kappa)}; };
    // In polar coordinates the density is r exp(-(r - c)^2 / 2s^2) times an angular factor that
    // integrates to 2 pi I0(kappa).
    const double c = kTwoMoonsRadius, s = kTwoMoonsWidth;
    const double radial = s * std::sqrt(2.0 * std::numbers::pi) * c * normal_cdf(c / s) +
                          s * s * std::exp(-0.5 * (c / s) * (c / s));
    t.log_z = std::log(radial) + std::log(2.0 * std::numbers::pi) + std::log(std::cyl_bessel_i(0.0, kappa));
    t.reference_sampler = [kappa](Eigen::Index n, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> z;
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double c = kTwoMoonsRadius, s = kTwoMoonsWidth, rmax = c + 12.0 * s;
        Matrix out(n, 2);
        for (Eigen::Index i = 0; i < n; ++i) {
            double r;
            do { // size-biased normal radius
                r = c + s * z(rng);
            } while (r <= 0.0 || u(rng) * rmax > r);
            // Angle: von Mises around 0 (weight 1/3) or around pi (weight 2/3), by rejection.
            double th;
            do {
                th = 2.0 * std::numbers::pi * u(rng);
            } while (u(rng) > std::exp(kappa * (std::cos(th) - 1.0)));
            if (u(rng) < 2.0 / 3.0) th += std::numbers::pi;
            out(i, 0) = r * std::cos(th);
            out(i, 1) = r * std::sin(th);
        }
        return out;
    };
    return t;
}

/// Multivariate normal with diagonal covariance, scaled so that its log normalizer is log_z.
inline Target normal_target(const Vector& mean, const Vector& sd, double log_z = 0.0) {
    Target t;
    t.name = "normal";
    t.dim = static_cast<int>(mean.size());
    const double c = log_z - 0.5 * t.dim * kLog2Pi - sd.array().log().sum();
    t.eval = [mean, sd, c](const Vector& x) {
        return Observation{c - 0.5 * ((x - mean).array() / sd.array()).square().sum()};
    };
    t.log_z = log_z;
    t.reference_sampler = [mean, sd](Eigen::Index n, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> z;
        Matrix out(n, mean.size());
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index d = 0; d < mean.size(); ++d) out(i, d) = mean(d) + sd(d) * z(rng);
        return out;
    };
    return t;
}

/// Adds N(0, sigma_obs^2) noise and reports sigma_obs. The noise depends on (x, call count, seed).
inline Target noisy_wrap(Target base, double sigma_obs, std::uint64_t seed) {
    if (!(sigma_obs >= 0.0)) throw ConfigError("sigma_obs must be non-negative");
    Target t = base;
    t.name = base.name + "_noisy";
    t.exact = sigma_obs == 0.0;
    t.concurrency_safe = false;
    struct State {
        std::mutex mu;
        std::uint64_t calls = 0;
    };
    auto state = std::make_shared<State>();
    t.eval = [base, sigma_obs, seed, state](const Vector& x) {
        std::uint64_t call;
        {
            std::lock_guard lock(state->mu);
            call = state->calls++;
        }
        std::uint64_t h = detail::splitmix64(seed ^ detail::splitmix64(call));
        for (Eigen::Index d = 0; d < x.size(); ++d) {
            std::uint64_t bits;
            std::memcpy(&bits, &x(d), sizeof bits);
            h = detail::splitmix64(h ^ bits);
        }
        std::mt19937_64 rng(h);
        std::normal_distribution<double> z;
        Observation o = base.eval(x);
        o.y += sigma_obs * z(rng);
        o.sigma_obs = sigma_obs;
        o.has_sigma = true;
        return o;
    };
    t.get_calls = [state] {
        std::lock_guard lock(state->mu);
        return state->calls;
    };
    t.set_calls = [state](std::uint64_t c) {
        std::lock_guard lock(state->mu);
        state->calls = c;
    };
    return t;
}

/// Records every target evaluation, up to a budget.
class EvaluationRecorder {
public:
    EvaluationRecorder(const Target& t, Eigen::Index budget) : target_(t), budget_(budget) {}

    bool exhausted() const noexcept { return count_ >= budget_; }
    Eigen::Index count() const noexcept { return count_; }
    const std::vector<Evaluation>& evaluations() const noexcept { return evals_; }

    /// Evaluates and records; non-finite values count against the budget but are not stored.
    double operator()(const Vector& x) {
        if (exhausted()) throw EvaluationError("evaluation budget exhausted");
        ++count_;
        const Observation o = target_.eval(x);
        if (std::isfinite(o.y)) evals_.push_back(to_evaluation(x, o));
        return o.y;
    }

private:
    const Target& target_;
    Eigen::Index budget_;
    Eigen::Index count_ = 0;
    std::vector<Evaluation> evals_;
};

namespace detail {

struct BudgetExhausted {};

inline Vector uniform_in_box(const Vector& lo, const Vector& hi, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vector x(lo.size());
    for (Eigen::Index d = 0; d < lo.size(); ++d) x(d) = lo(d) + (hi(d) - lo(d)) * u(rng);
    return x;
}

} // namespace detail

struct GeneratorOptions {
    Vector box_lower, box_upper; ///< starting-point box
    double slice_width = 1.0;    ///< initial slice bracket, in units of the box width / 4
    int max_step_out = 20;
};

/// Coordinate-wise slice sampling (stepping out and shrinkage) from n_chains random starts,
/// recording every density evaluation. Each chain gets an equal share of the budget. The chain
/// states after each full sweep go to `states` when given.
inline std::vector<Evaluation> slice_sampler_init(const Target& target, int n_chains, Eigen::Index budget,
                                                  std::uint64_t seed, const GeneratorOptions& opt,
                                                  std::vector<Vector>* states = nullptr) {
    const int D = target.dim;
    if (n_chains < 1 || budget < 10 * n_chains) throw ConfigError("slice sampler needs budget >= 10 per chain");
    std::vector<Evaluation> out;
    for (int c = 0; c < n_chains; ++c) {
        std::mt19937_64 rng(detail::splitmix64(seed + 0x100000001ULL * static_cast<std::uint64_t>(c + 1)));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const Eigen::Index share = budget / n_chains + (c < budget % n_chains ? 1 : 0);
        EvaluationRecorder rec(target, share);
        auto f = [&](const Vector& x) {
            if (rec.exhausted()) throw detail::BudgetExhausted{};
            return rec(x);
        };
        const Vector width = opt.slice_width * (opt.box_upper - opt.box_lower) / 4.0;
        try {
            Vector x = detail::uniform_in_box(opt.box_lower, opt.box_upper, rng);
            double fx = f(x);
            while (!std::isfinite(fx)) {
                x = detail::uniform_in_box(opt.box_lower, opt.box_upper, rng);
                fx = f(x);
            }
            for (;;) {
                for (int d = 0; d < D; ++d) {
                    const double level = fx + std::log(u(rng));
                    const double w = width(d);
                    double lo = x(d) - w * u(rng), hi = lo + w;
                    Vector probe = x;
                    int steps = opt.max_step_out;
                    for (probe(d) = lo; steps-- > 0 && f(probe) > level; probe(d) = lo) lo -= w;
                    steps = opt.max_step_out;
                    for (probe(d) = hi; steps-- > 0 && f(probe) > level; probe(d) = hi) hi += w;
                    for (;;) {
                        probe(d) = lo + (hi - lo) * u(rng);
                        const double fp = f(probe);
                        if (fp > level) {
                            x = probe;
                            fx = fp;
                            break;
                        }
                        if (probe(d) < x(d)) lo = probe(d);
                        else hi = probe(d);
                    }
                }
                if (states) states->push_back(x);
            }
        } catch (const detail::BudgetExhausted&) {
        }
        out.insert(out.end(), rec.evaluations().begin(), rec.evaluations().end());
    }
    return out;
}

/// CMA-ES maximization runs from random starts in the box, restarting within a run when it
/// converges early. Every evaluation is recorded.
inline std::vector<Evaluation> optimizer_init(const Target& target, int n_runs, Eigen::Index budget,
                                              std::uint64_t seed, const GeneratorOptions& opt) {
    if (n_runs < 1 || budget < 20 * n_runs) throw ConfigError("optimizer init needs budget >= 20 per run");
    std::vector<Evaluation> out;
    for (int r = 0; r < n_runs; ++r) {
        std::mt19937_64 rng(detail::splitmix64(seed + 0x200000003ULL * static_cast<std::uint64_t>(r + 1)));
        const Eigen::Index share = budget / n_runs + (r < budget % n_runs ? 1 : 0);
        EvaluationRecorder rec(target, share);
        while (!rec.exhausted()) {
            const Vector x0 = detail::uniform_in_box(opt.box_lower, opt.box_upper, rng);
            CmaesOptions copt;
            copt.sigma0 = 0.25;
            copt.max_evals = static_cast<int>(share - rec.count());
            if (copt.max_evals < 1) break;
            maximize_cmaes([&](const Vector& x) { return rec(x); }, x0, opt.box_lower, opt.box_upper, rng, copt);
        }
        out.insert(out.end(), rec.evaluations().begin(), rec.evaluations().end());
    }
    return out;
}

} // namespace svbmc

#endif
