#ifndef SVBMC_LOOP_HPP
#define SVBMC_LOOP_HPP

#include <svbmc/acquisition.hpp>
#include <svbmc/inducing.hpp>
#include <svbmc/targets.hpp>
#include <svbmc/variational.hpp>

#include <json.hpp>

#include <chrono>
#include <fstream>
#include <sstream>

namespace svbmc {

struct LoopConfig {
    int n_f_budget = 200;
    int n_active_per_iter = 0;        ///< 0: 5 for exact data, 25 for noisy data
    double elbo_stability_tol = 0.0;  ///< > 0 enables the early stop
    std::uint64_t seed = 0;
    bool trim_enabled = true;
    TrimConfig trim;
    NoiseShapeConfig shaping;
    InducingConfig inducing;
    AcquisitionConfig acquisition;
    VariationalOptions variational;
    TrainOptions train{3, 200, 0.5, 0};      ///< first hyperparameter fit
    TrainOptions retrain{0, 25, 0.5, 0};     ///< per-iteration refits, warm-started
    int bootstrap_points = 300;
    int strata = 5;
    double hpd_gap = 0.0;                    ///< 0: max(5, 2D)
    int k_init = 2;
    int n_mc_report = 4096;                  ///< entropy draws for per-iteration ELBO
    int n_mc_final = 1 << 16;
    std::string checkpoint_path;             ///< written after every iteration when set
    std::function<void(const std::string&)> log;

    double gap(int dim) const { return hpd_gap > 0.0 ? hpd_gap : std::max(5.0, 2.0 * dim); }
};

struct LogEntry {
    int iteration = 0;
    Vector x;
    double y = 0.0;
    double sigma_obs = 0.0;
    bool ok = true;
    std::string error;
};

struct IterationDiagnostics {
    int iteration = 0;
    double elbo = 0.0, elbo_sd = 0.0;
    Eigen::Index n_points = 0, n_inducing = 0;
    int K = 0;
    double seconds = 0.0;
};

struct RunResult {
    MixturePosterior posterior;
    ElboEstimate elbo;
    SparseGP state;
    Dataset data;
    std::vector<LogEntry> evaluation_log;
    std::vector<IterationDiagnostics> diagnostics;
    KernelHyperparams hp;
};

/// Everything needed to continue a run after an iteration boundary.
struct LoopState {
    int iteration = 0;
    int used = 0;
    std::vector<Evaluation> data;   ///< raw evaluations in dataset order (trimmed)
    KernelHyperparams hp, hp_exact;
    Matrix Z;
    MixturePosterior q;
    std::string rng;
    std::uint64_t target_calls = 0;
    std::vector<LogEntry> log;
    std::vector<IterationDiagnostics> diagnostics;
    int stable_count = 0;
    double last_elbo = -kInf;
};

namespace detail {

inline nlohmann::json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector json_vec(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline nlohmann::json mat_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vec_json(m.row(i).transpose()));
    return rows;
}

inline Matrix json_mat(const nlohmann::json& j, Eigen::Index cols) {
    Matrix m(static_cast<Eigen::Index>(j.size()), cols);
    for (std::size_t i = 0; i < j.size(); ++i) {
        const Vector r = json_vec(j[i]);
        if (r.size() != cols) throw CheckpointError("checkpoint: ragged matrix");
        m.row(static_cast<Eigen::Index>(i)) = r.transpose();
    }
    return m;
}

inline nlohmann::json hp_json(const KernelHyperparams& hp) { return vec_json(hp.pack()); }

} // namespace detail

inline nlohmann::json mixture_to_json(const MixturePosterior& q) {
    return {{"K", q.K()},
            {"D", q.dim()},
            {"weights", detail::vec_json(q.w)},
            {"means", detail::mat_json(q.mu)},
            {"scales", detail::vec_json(q.sigma)},
            {"lambda", detail::vec_json(q.lambda)}};
}

inline MixturePosterior mixture_from_json(const nlohmann::json& j) {
    MixturePosterior q;
    const int D = j.at("D").get<int>();
    q.w = detail::json_vec(j.at("weights"));
    q.mu = detail::json_mat(j.at("means"), D);
    q.sigma = detail::json_vec(j.at("scales"));
    q.lambda = detail::json_vec(j.at("lambda"));
    if (q.K() != j.at("K").get<int>() || q.mu.rows() != q.K() || q.sigma.size() != q.K() || q.lambda.size() != D)
        throw InputError("posterior: inconsistent K or D");
    if (!q.valid()) throw InputError("posterior: invalid parameters");
    return q;
}

inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const LoopState& s, const std::string& path) {
    nlohmann::json j;
    j["format"] = "svbmc-checkpoint";
    j["version"] = kCheckpointVersion;
    j["iteration"] = s.iteration;
    j["used"] = s.used;
    const int D = s.hp.dim();
    j["dim"] = D;
    nlohmann::json data = nlohmann::json::array();
    for (const auto& e : s.data) data.push_back({detail::vec_json(e.x), e.y, e.sigma_obs_sq});
    j["data"] = data;
    j["hp"] = detail::hp_json(s.hp);
    j["hp_exact"] = detail::hp_json(s.hp_exact);
    j["Z"] = detail::mat_json(s.Z);
    j["q"] = mixture_to_json(s.q);
    j["rng"] = s.rng;
    j["target_calls"] = s.target_calls;
    nlohmann::json log = nlohmann::json::array();
    for (const auto& e : s.log)
        log.push_back({{"iteration", e.iteration}, {"x", detail::vec_json(e.x)}, {"y", e.y}, {"sigma_obs", e.sigma_obs},
                       {"ok", e.ok}, {"error", e.error}});
    j["log"] = log;
    nlohmann::json diag = nlohmann::json::array();
    for (const auto& d : s.diagnostics)
        diag.push_back({d.iteration, d.elbo, d.elbo_sd, d.n_points, d.n_inducing, d.K, d.seconds});
    j["diagnostics"] = diag;
    j["stable_count"] = s.stable_count;
    j["last_elbo"] = std::isfinite(s.last_elbo) ? nlohmann::json(s.last_elbo) : nlohmann::json(nullptr);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw CheckpointError("cannot write checkpoint '" + tmp + "'");
        out << j.dump();
        if (!out) throw CheckpointError("failed writing checkpoint '" + tmp + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CheckpointError("cannot move checkpoint into '" + path + "'");
}

inline LoopState load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
    try {
        const nlohmann::json j = nlohmann::json::parse(in);
        if (j.at("format") != "svbmc-checkpoint") throw CheckpointError("not a checkpoint file");
        if (j.at("version").get<int>() != kCheckpointVersion)
            throw CheckpointError("checkpoint version " + j.at("version").dump() + " is not supported");
        LoopState s;
        const int D = j.at("dim").get<int>();
        s.iteration = j.at("iteration").get<int>();
        s.used = j.at("used").get<int>();
        for (const auto& e : j.at("data")) s.data.push_back({detail::json_vec(e.at(0)), e.at(1).get<double>(), e.at(2).get<double>()});
        s.hp = KernelHyperparams::unpack(detail::json_vec(j.at("hp")));
        s.hp_exact = KernelHyperparams::unpack(detail::json_vec(j.at("hp_exact")));
        s.Z = detail::json_mat(j.at("Z"), D);
        s.q = mixture_from_json(j.at("q"));
        s.rng = j.at("rng").get<std::string>();
        s.target_calls = j.at("target_calls").get<std::uint64_t>();
        for (const auto& e : j.at("log"))
            s.log.push_back({e.at("iteration").get<int>(), detail::json_vec(e.at("x")), e.at("y").get<double>(),
                             e.at("sigma_obs").get<double>(), e.at("ok").get<bool>(), e.at("error").get<std::string>()});
        for (const auto& d : j.at("diagnostics"))
            s.diagnostics.push_back({d.at(0).get<int>(), d.at(1).get<double>(), d.at(2).get<double>(),
                                     d.at(3).get<Eigen::Index>(), d.at(4).get<Eigen::Index>(), d.at(5).get<int>(),
                                     d.at(6).get<double>()});
        s.stable_count = j.at("stable_count").get<int>();
        s.last_elbo = j.at("last_elbo").is_null() ? -kInf : j.at("last_elbo").get<double>();
        if (s.hp.dim() != D || s.q.dim() != D || s.data.empty()) throw CheckpointError("checkpoint: inconsistent dimensions");
        return s;
    } catch (const CheckpointError&) {
        throw;
    } catch (const std::exception& e) {
        throw CheckpointError(std::string("corrupted checkpoint: ") + e.what());
    }
}

/// The SVBMC procedure: trim, fit a first sparse GP, build up the variational posterior, then
/// alternate active sampling with refits until the evaluation budget is spent.
class Svbmc {
public:
    Svbmc(Target target, LoopConfig cfg) : target_(std::move(target)), cfg_(std::move(cfg)) {}

    RunResult run(const std::vector<Evaluation>& initial) {
        if (initial.empty()) throw InputError("no initial evaluations");
        const int D = static_cast<int>(initial.front().x.size());
        if (target_.dim != 0 && target_.dim != D) throw InputError("initial data dimension does not match the target");
        LoopState st;
        rng_.seed(cfg_.seed);
        Dataset ds = Dataset::from_evaluations(D, initial);
        if (cfg_.trim_enabled) ds = trim(ds, trim_config(D));
        st.data = ds.evaluations();
        ds = shaped(ds);
        log("trimmed initial set: " + std::to_string(initial.size()) + " -> " + std::to_string(ds.size()) + " points");

        // First sparse GP: exact GP on a representative subset, inducing points, then the sparse fit.
        const HyperPrior prior = make_hyperprior(ds, cfg_.gap(D));
        const auto sub = stratified_subset(ds, cfg_.bootstrap_points, cfg_.strata, rng_());
        TrainOptions topt = cfg_.train;
        topt.seed = rng_();
        st.hp_exact = train_map(ds.subset(sub), prior.mode(), prior, topt).hp;
        st.Z = gather_rows(ds.X(), select_inducing(ds, st.hp_exact, cfg_.inducing, 0).indices);
        TrainOptions sopt = cfg_.retrain;
        sopt.seed = rng_();
        st.hp = optimize_hyperparams(ds, st.Z, st.hp_exact, prior, sopt).hp;
        SparseGP s = SparseGP::fit(ds, st.Z, st.hp);
        log("initial sparse GP: N=" + std::to_string(ds.size()) + " M=" + std::to_string(st.Z.rows()));

        VariationalOptions vopt = variational_options(ds);
        st.q = build_up(initial_mixture(ds.X(), ds.y(), cfg_.k_init, cfg_.gap(D)), s, vopt, rng_);
        record(st, ds, s, 0.0);
        return iterate(st, std::move(ds), std::move(s));
    }

    /// Continues from a checkpoint written by a run with the same configuration and target.
    RunResult resume(const LoopState& saved) {
        LoopState st = saved;
        std::istringstream(st.rng) >> rng_;
        if (target_.set_calls) target_.set_calls(st.target_calls);
        const int D = st.hp.dim();
        Dataset ds = shaped(Dataset::from_evaluations(D, st.data));
        SparseGP s = SparseGP::fit(ds, st.Z, st.hp);
        return iterate(st, std::move(ds), std::move(s));
    }

private:
    Target target_;
    LoopConfig cfg_;
    std::mt19937_64 rng_;

    void log(const std::string& msg) const {
        if (cfg_.log) cfg_.log(msg);
    }

    TrimConfig trim_config(int) const { return cfg_.trim; }

    Dataset shaped(const Dataset& ds) const {
        if (!cfg_.shaping.enabled) return ds.with_total_variance(ds.obs_var());
        return apply_noise_shaping(ds, cfg_.shaping);
    }

    VariationalOptions variational_options(const Dataset& ds) const {
        VariationalOptions v = cfg_.variational;
        const MixturePosterior q0 = initial_mixture(ds.X(), ds.y(), 1, cfg_.gap(ds.dim()));
        if (v.scale.size() != ds.dim()) v.scale = q0.lambda;
        return v;
    }

    int n_active(const Dataset& ds) const {
        if (cfg_.n_active_per_iter > 0) return cfg_.n_active_per_iter;
        return default_acquisition(ds) == AcquisitionKind::a1 ? 5 : 25;
    }

    void record(LoopState& st, const Dataset& ds, const SparseGP& s, double seconds) {
        const std::uint64_t seed = cfg_.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(st.iteration + 1));
        const ElboEstimate e = elbo(st.q, s, cfg_.n_mc_report, seed);
        st.diagnostics.push_back({st.iteration, e.mean, e.sd, ds.size(), s.num_inducing(), st.q.K(), seconds});
        std::ostringstream msg;
        msg << "iteration " << st.iteration << ": ELBO " << e.mean << " +- " << e.sd << ", K=" << st.q.K()
            << ", N=" << ds.size() << ", M=" << s.num_inducing() << ", evaluations " << st.used << "/"
            << cfg_.n_f_budget;
        log(msg.str());
        if (std::isfinite(st.last_elbo) && std::abs(e.mean - st.last_elbo) < cfg_.elbo_stability_tol) ++st.stable_count;
        else st.stable_count = 0;
        st.last_elbo = e.mean;
    }

    void save(LoopState& st) {
        if (cfg_.checkpoint_path.empty()) return;
        std::ostringstream os;
        os << rng_;
        st.rng = os.str();
        st.target_calls = target_.get_calls ? target_.get_calls() : 0;
        save_checkpoint(st, cfg_.checkpoint_path);
    }

    RunResult iterate(LoopState& st, Dataset ds, SparseGP s) {
        const int D = ds.dim();
        save(st);
        const AcquisitionKind kind = cfg_.acquisition.kind ? *cfg_.acquisition.kind : default_acquisition(ds);
        while (st.used < cfg_.n_f_budget) {
            if (cfg_.elbo_stability_tol > 0.0 && st.stable_count >= 3) {
                log("ELBO stable over 3 iterations; stopping early");
                break;
            }
            const auto t0 = std::chrono::steady_clock::now();
            ++st.iteration;
            const int n = std::min(n_active(ds), cfg_.n_f_budget - st.used);

            ProposalContext ctx;
            ctx.X = ds.X();
            ctx.y = ds.y();
            ctx.noise.shaping = cfg_.shaping;
            ctx.noise.y_max = ds.y_max();
            ctx.noise.dim = D;
            std::vector<double> ov(ds.obs_var().data(), ds.obs_var().data() + ds.size());
            std::nth_element(ov.begin(), ov.begin() + static_cast<std::ptrdiff_t>(ov.size() / 2), ov.end());
            const double obs_noise = ov[ov.size() / 2];
            ctx.noise.obs_var = [obs_noise](const Eigen::Ref<const Vector>&) { return obs_noise; };
            const auto picks = propose(s, st.q, ctx, cfg_.acquisition, kind, n, rng_);
            const auto t_prop = std::chrono::steady_clock::now();

            std::vector<Evaluation> fresh;
            for (const auto& x : picks) {
                ++st.used;
                LogEntry entry{st.iteration, x, 0.0, 0.0, true, {}};
                try {
                    const Observation o = target_.eval(x);
                    if (!std::isfinite(o.y)) throw EvaluationError("non-finite value");
                    entry.y = o.y;
                    entry.sigma_obs = o.has_sigma ? o.sigma_obs : 0.0;
                    fresh.push_back(to_evaluation(x, o));
                } catch (const std::exception& e) {
                    entry.ok = false;
                    entry.error = e.what();
                    log(std::string("evaluation failed, point skipped: ") + e.what());
                }
                st.log.push_back(entry);
            }
            Dataset raw = Dataset::from_evaluations(D, st.data).with_added(fresh);
            st.data = raw.evaluations();
            ds = shaped(raw);

            // Hyperparameters for choosing inducing points: the better of a refreshed exact GP and the
            // current sparse GP, judged by the GP-ELBO at the current inducing points.
            const HyperPrior prior = make_hyperprior(ds, cfg_.gap(D));
            const auto sub = stratified_subset(ds, cfg_.bootstrap_points, cfg_.strata, rng_());
            TrainOptions topt = cfg_.retrain;
            topt.seed = rng_();
            st.hp_exact = train_map(ds.subset(sub), st.hp_exact, prior, topt).hp;
            const auto t_exact = std::chrono::steady_clock::now();
            double e_exact = -kInf, e_sparse = -kInf;
            try {
                e_exact = gp_elbo(ds, st.Z, st.hp_exact);
            } catch (const ConditioningError&) {
            }
            try {
                e_sparse = gp_elbo(ds, st.Z, st.hp);
            } catch (const ConditioningError&) {
            }
            const KernelHyperparams& hp_sel = e_exact > e_sparse ? st.hp_exact : st.hp;
            st.Z = gather_rows(ds.X(), select_inducing(ds, hp_sel, cfg_.inducing, st.used).indices);
            topt.seed = rng_();
            st.hp = optimize_hyperparams(ds, st.Z, hp_sel, prior, topt).hp;
            s = SparseGP::fit(ds, st.Z, st.hp);
            const auto t_sparse = std::chrono::steady_clock::now();

            st.q = refine(st.q, s, variational_options(ds));
            const auto t_vi = std::chrono::steady_clock::now();
            auto sec = [](auto a, auto b) { return std::to_string(std::chrono::duration<double>(b - a).count()); };
            log("seconds: propose " + sec(t0, t_prop) + ", exact GP " + sec(t_prop, t_exact) + ", sparse GP " +
                sec(t_exact, t_sparse) + ", variational " + sec(t_sparse, t_vi));
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            record(st, ds, s, secs);
            save(st);
        }
        RunResult res;
        res.posterior = st.q;
        res.elbo = elbo(st.q, s, cfg_.n_mc_final, cfg_.seed ^ 0xe1b0e1b0e1b0ULL);
        res.state = s;
        res.data = ds;
        res.evaluation_log = st.log;
        res.diagnostics = st.diagnostics;
        res.hp = st.hp;
        log("final ELBO " + std::to_string(res.elbo.mean) + " +- " + std::to_string(res.elbo.sd));
        return res;
    }

    // Warm-started refit; grows q again only if one more component changes it noticeably.
    MixturePosterior refine(const MixturePosterior& q_prev, const SparseGP& s, const VariationalOptions& vopt) {
        MixturePosterior q = fit_variational(q_prev, s, vopt, rng_);
        if (q.K() >= vopt.k_max) return q;
        const std::uint64_t cmp = rng_();
        const double fq = elbo(q, s, vopt.n_mc_compare, cmp).mean;
        const auto fbar = s.predict_batch(s.X).first;
        MixturePosterior cand = fit_variational(add_component(q, s.X, fbar, fq), s, vopt, rng_);
        const double fc = elbo(cand, s, vopt.n_mc_compare, cmp).mean;
        if (!(fc >= fq - vopt.accept_tol)) return q;
        if (symmetrized_kl(q, cand, vopt.n_kl, rng_()) < vopt.kl_tol) return q;
        return build_up(cand, s, vopt, rng_);
    }
};

} // namespace svbmc

#endif
