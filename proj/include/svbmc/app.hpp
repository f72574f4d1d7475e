#ifndef SVBMC_APP_HPP
#define SVBMC_APP_HPP

#include <svbmc/config.hpp>
#include <svbmc/io.hpp>
#include <svbmc/metrics.hpp>
#include <svbmc/subprocess.hpp>

#include <iomanip>

namespace svbmc {

inline constexpr int kPosteriorVersion = 1;

/// Target in the original parameter space, as described by the configuration.
inline Target make_target(const RunConfig& c) {
    const auto& s = c.target;
    Target t;
    if (s.builtin == "two_moons") t = two_moons_target(s.kappa);
    else if (s.builtin == "rosenbrock_gaussian") t = rosenbrock_gaussian_target();
    else if (s.builtin == "normal") t = normal_target(s.mean, s.sd);
    else if (!s.command.empty()) t = subprocess_target(s.command, s.dim, s.timeout, c.base_dir.string());
    else {
        // File-only: no further evaluations are possible.
        t.name = "none";
        t.dim = s.dim;
        t.eval = [](const Vector&) -> Observation { throw EvaluationError("no target configured"); };
        return t;
    }
    if (s.sigma_obs > 0.0) t = noisy_wrap(t, s.sigma_obs, s.noise_seed);
    if (!s.command.empty()) t.concurrency_safe = s.concurrency_safe;
    return t;
}

/// The target seen by the inference engine: log density of the unconstrained coordinates.
inline Target to_inference_space(const Target& t, const ParamSpace& space) {
    if (space.is_identity()) return t;
    Target u = t;
    u.eval = [t, space](const Vector& z) {
        Observation o = t.eval(space.from_inference(z));
        o.y += space.log_jacobian(z);
        return o;
    };
    u.reference_sampler = nullptr;
    return u;
}

inline Evaluation evaluation_to_inference(const Evaluation& e, const ParamSpace& space) {
    if (space.is_identity()) return e;
    const Vector u = space.to_inference(e.x);
    return {u, e.y + space.log_jacobian(u), e.sigma_obs_sq};
}

inline Evaluation evaluation_from_inference(const Evaluation& e, const ParamSpace& space) {
    if (space.is_identity()) return e;
    return {space.from_inference(e.x), e.y - space.log_jacobian(e.x), e.sigma_obs_sq};
}

/// Parses filters of the form "x3>0.5" or "x1<0" and returns the predicate selecting rows to drop.
inline std::function<bool(const Vector&)> parse_exclude(const std::string& rule, int dim) {
    if (rule.empty()) return [](const Vector&) { return false; };
    const auto op = rule.find_first_of("<>");
    if (rule.size() < 4 || rule[0] != 'x' || op == std::string::npos || op < 2)
        throw ConfigError("[initial] exclude: expected a rule like x1>0, got '" + rule + "'");
    int d = 0;
    double v = 0.0;
    try {
        d = std::stoi(rule.substr(1, op - 1));
        v = std::stod(rule.substr(op + 1));
    } catch (const std::exception&) {
        throw ConfigError("[initial] exclude: cannot parse '" + rule + "'");
    }
    if (d < 1 || d > dim) throw ConfigError("[initial] exclude: coordinate out of range in '" + rule + "'");
    const bool greater = rule[op] == '>';
    return [d, v, greater](const Vector& x) { return greater ? x(d - 1) > v : x(d - 1) < v; };
}

/// Runs the configured generator. Evaluations are returned in the original space.
inline std::vector<Evaluation> generate_initial(const RunConfig& c, const Target& target) {
    const auto& in = c.initial;
    const int D = target.dim;
    const ParamSpace& space = c.transform;
    GeneratorOptions g;
    if (in.box_lower.size() != 0 || in.box_upper.size() != 0) {
        if (in.box_lower.size() != D || in.box_upper.size() != D)
            throw ConfigError("[initial] box_lower and box_upper need " + std::to_string(D) + " entries");
        g.box_lower = space.to_inference(in.box_lower);
        g.box_upper = space.to_inference(in.box_upper);
    } else {
        g.box_lower = Vector::Constant(D, -1.0);
        g.box_upper = Vector::Constant(D, 1.0);
        if (space.is_identity()) {
            g.box_lower *= 3.0;
            g.box_upper *= 3.0;
        }
    }
    const Target ut = to_inference_space(target, space);
    const std::vector<Evaluation> raw = in.generator == "slice"
                                            ? slice_sampler_init(ut, in.chains, in.budget, c.seed, g)
                                            : optimizer_init(ut, in.chains, in.budget, c.seed, g);
    std::vector<Evaluation> out;
    out.reserve(raw.size());
    for (const auto& e : raw) out.push_back(evaluation_from_inference(e, space));
    return out;
}

/// Initial evaluations in the original space, after the optional exclusion filter.
inline std::vector<Evaluation> load_initial(const RunConfig& c, const Target& target) {
    std::vector<Evaluation> evals;
    if (!c.initial.file.empty()) {
        if (!std::filesystem::exists(c.initial.file)) throw InputError("initial file not found: " + c.initial.file);
        const Dataset ds = ingest(c.initial.file);
        if (target.dim != 0 && ds.dim() != target.dim)
            throw InputError("initial file " + c.initial.file + " has " + std::to_string(ds.dim()) +
                             " coordinates, target has " + std::to_string(target.dim));
        evals = ds.evaluations();
    } else {
        evals = generate_initial(c, target);
    }
    const int D = static_cast<int>(evals.empty() ? target.dim : evals.front().x.size());
    const auto drop = parse_exclude(c.initial.exclude, D);
    std::vector<Evaluation> kept;
    for (auto& e : evals)
        if (!drop(e.x)) kept.push_back(std::move(e));
    if (kept.empty()) throw InputError("no initial evaluations left after filtering");
    return kept;
}

inline nlohmann::json posterior_json(const MixturePosterior& q, const ParamSpace& space) {
    nlohmann::json j = mixture_to_json(q);
    j["format"] = "svbmc-posterior";
    j["version"] = kPosteriorVersion;
    j["transform"] = space.to_json();
    return j;
}

struct PosteriorFile {
    MixturePosterior q;
    ParamSpace space;
};

inline PosteriorFile read_posterior(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open posterior file " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const std::exception& e) {
        throw InputError(path.string() + ": not valid JSON (" + e.what() + ")");
    }
    try {
        if (j.at("format") != "svbmc-posterior") throw InputError(path.string() + ": not a posterior file");
        if (j.at("version").get<int>() != kPosteriorVersion)
            throw InputError(path.string() + ": unsupported posterior version " + j.at("version").dump());
        PosteriorFile p{mixture_from_json(j), ParamSpace::from_json(j.at("transform"))};
        if (p.space.dim() != p.q.dim()) throw InputError(path.string() + ": transform dimension does not match D");
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(path.string() + ": schema error (" + e.what() + ")");
    }
}

/// Draws from q and maps the draws to the original space.
inline Matrix sample_original(const MixturePosterior& q, const ParamSpace& space, Eigen::Index n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Matrix s = q.sample(n, rng);
    if (!space.is_identity())
        for (Eigen::Index i = 0; i < n; ++i) s.row(i) = space.from_inference(s.row(i).transpose()).transpose();
    return s;
}

struct PipelineOutput {
    RunResult result;
    nlohmann::json posterior;
    Matrix samples;
    std::string target_name;
};

inline std::uint64_t sample_seed(std::uint64_t seed) { return detail::splitmix64(seed ^ 0x5a3b1e5ULL); }

/// Full run: target, initial set, loop, posterior JSON and samples in the original space.
inline PipelineOutput run_pipeline(const RunConfig& c, const std::function<void(const std::string&)>& log = {},
                                   const std::optional<LoopState>& resume = std::nullopt) {
    Target target = make_target(c);
    LoopConfig lc = c.loop;
    lc.seed = c.seed;
    lc.log = log;
    if (target.name == "none" && lc.n_f_budget > 0)
        throw ConfigError("[loop] budget must be 0 when no target is configured");
    PipelineOutput out;
    out.target_name = target.name;
    Svbmc engine(to_inference_space(target, c.transform), lc);
    if (resume) {
        out.result = engine.resume(*resume);
    } else {
        std::vector<Evaluation> init = load_initial(c, target);
        for (auto& e : init) e = evaluation_to_inference(e, c.transform);
        out.result = engine.run(init);
    }
    out.posterior = posterior_json(out.result.posterior, c.transform);
    out.samples = sample_original(out.result.posterior, c.transform, c.n_samples, sample_seed(c.seed));
    return out;
}

/// Writes posterior.json, samples.csv, elbo.json, diagnostics.csv and evaluations.csv.
inline void write_artifacts(const PipelineOutput& o, const RunConfig& c, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream f(dir / name);
        if (!f) throw InputError("cannot write " + (dir / name).string());
        return f;
    };
    const auto& r = o.result;
    const int D = r.posterior.dim();
    open("posterior.json") << o.posterior.dump(2) << '\n';
    write_matrix_csv(dir / "samples.csv", o.samples);

    nlohmann::json e;
    e["format"] = "svbmc-elbo";
    e["version"] = 1;
    e["elbo"] = r.elbo.mean;
    e["elbo_sd"] = r.elbo.sd;
    e["entropy"] = r.elbo.entropy;
    e["entropy_se"] = r.elbo.entropy_se;
    e["n_mc_entropy"] = r.elbo.n_mc_entropy;
    e["target"] = o.target_name;
    if (c.target.builtin == "two_moons") e["kappa"] = c.target.kappa;
    e["seed"] = c.seed;
    e["evaluations_used"] = r.evaluation_log.size();
    e["K"] = r.posterior.K();
    e["note"] = "ELBO is for the unconstrained inference space";
    open("elbo.json") << e.dump(2) << '\n';

    auto diag = open("diagnostics.csv");
    diag << "iteration,elbo,elbo_sd,n_points,n_inducing,K,seconds\n";
    for (const auto& d : r.diagnostics)
        diag << d.iteration << ',' << format_double(d.elbo) << ',' << format_double(d.elbo_sd) << ',' << d.n_points
             << ',' << d.n_inducing << ',' << d.K << ',' << std::fixed << std::setprecision(3) << d.seconds
             << std::defaultfloat << '\n';

    auto ev = open("evaluations.csv");
    ev << "iteration";
    for (int d = 0; d < D; ++d) ev << ",x" << d + 1;
    ev << ",y,sigma_obs,ok,error\n";
    for (const auto& l : r.evaluation_log) {
        const Vector x = c.transform.is_identity() ? l.x : c.transform.from_inference(l.x);
        ev << l.iteration;
        for (int d = 0; d < D; ++d) ev << ',' << format_double(x(d));
        const double y = l.ok ? l.y - (c.transform.is_identity() ? 0.0 : c.transform.log_jacobian(l.x)) : 0.0;
        std::string err = l.error;
        for (char& ch : err)
            if (ch == ',' || ch == '\n') ch = ';';
        ev << ',' << (l.ok ? format_double(y) : std::string("nan")) << ',' << format_double(l.sigma_obs) << ','
           << (l.ok ? 1 : 0) << ',' << err << '\n';
    }
}

} // namespace svbmc

#endif
