#ifndef SVBMC_CONFIG_HPP
#define SVBMC_CONFIG_HPP

#include <svbmc/loop.hpp>
#include <svbmc/transforms.hpp>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <filesystem>
#include <set>
#include <sstream>

namespace svbmc {

/// Which density to run on.
struct TargetSpec {
    std::string builtin;                  ///< two_moons, rosenbrock_gaussian, normal; empty otherwise
    double kappa = 8.0;
    Vector mean, sd;                      ///< normal target
    double sigma_obs = 0.0;               ///< adds Gaussian noise to a builtin target when > 0
    std::uint64_t noise_seed = 0;
    std::string command;                  ///< subprocess target, started in the config file's directory
    double timeout = 300.0;
    int dim = 0;                          ///< required for subprocess and file-only runs
    bool concurrency_safe = false;
};

/// Where the initial evaluations come from.
struct InitialSpec {
    std::string file;                     ///< CSV or JSON lines, in the original parameter space
    std::string generator;                ///< slice or optimizer
    int budget = 1000;
    int chains = 4;                       ///< chains (slice) or runs (optimizer)
    Vector box_lower, box_upper;
    std::string exclude;                  ///< optional filter, "x1>0" style: drops matching rows
};

struct RunConfig {
    TargetSpec target;
    InitialSpec initial;
    LoopConfig loop;
    ParamSpace transform;
    std::uint64_t seed = 0;
    int n_samples = 10000;
    std::string out_dir = ".";
    std::filesystem::path base_dir;       ///< relative paths in the file resolve against this
};

namespace detail {

inline std::vector<double> parse_list(const std::string& s, const std::string& key) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto a = item.find_first_not_of(" \t"), b = item.find_last_not_of(" \t");
        if (a == std::string::npos) throw ConfigError(key + ": empty list element");
        const std::string t = item.substr(a, b - a + 1);
        if (t == "inf" || t == "+inf") out.push_back(kInf);
        else if (t == "-inf") out.push_back(-kInf);
        else {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(t, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != t.size()) throw ConfigError(key + ": '" + t + "' is not a number");
            out.push_back(v);
        }
    }
    return out;
}

inline Vector to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<std::string> parse_words(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto a = item.find_first_not_of(" \t"), b = item.find_last_not_of(" \t");
        out.push_back(a == std::string::npos ? std::string() : item.substr(a, b - a + 1));
    }
    return out;
}

/// Typed access that reports the offending key and rejects unknown keys per section.
class Section {
public:
    Section(const boost::property_tree::ptree* pt, std::string name) : pt_(pt), name_(std::move(name)) {}

    bool present() const { return pt_ != nullptr; }

    template <typename T>
    T get(const std::string& key, T fallback) {
        seen_.insert(key);
        if (!pt_) return fallback;
        const auto v = pt_->get_optional<std::string>(key);
        if (!v) return fallback;
        if constexpr (std::is_same_v<T, std::string>) {
            return *v;
        } else if constexpr (std::is_same_v<T, bool>) {
            if (*v == "true" || *v == "yes" || *v == "1") return true;
            if (*v == "false" || *v == "no" || *v == "0") return false;
            throw ConfigError(where(key) + ": expected true or false, got '" + *v + "'");
        } else {
            std::istringstream in(*v);
            T out{};
            in >> out;
            if (in.fail() || !(in >> std::ws).eof())
                throw ConfigError(where(key) + ": cannot parse '" + *v + "'");
            return out;
        }
    }

    std::optional<std::vector<double>> list(const std::string& key) {
        seen_.insert(key);
        if (!pt_) return std::nullopt;
        const auto v = pt_->get_optional<std::string>(key);
        if (!v) return std::nullopt;
        return parse_list(*v, where(key));
    }

    std::optional<std::vector<std::string>> words(const std::string& key) {
        seen_.insert(key);
        if (!pt_) return std::nullopt;
        const auto v = pt_->get_optional<std::string>(key);
        if (!v) return std::nullopt;
        return parse_words(*v);
    }

    void finish() const {
        if (!pt_) return;
        for (const auto& kv : *pt_)
            if (!seen_.count(kv.first)) throw ConfigError("unknown key '" + kv.first + "' in [" + name_ + "]");
    }

    std::string where(const std::string& key) const { return "[" + name_ + "] " + key; }

private:
    const boost::property_tree::ptree* pt_;
    std::string name_;
    std::set<std::string> seen_;
};

inline ParamSpace parse_transform(Section& sec, int dim) {
    const auto kinds = sec.words("kinds");
    const auto lower = sec.list("lower"), upper = sec.list("upper");
    const auto pl = sec.list("plausible_lower"), pu = sec.list("plausible_upper");
    if (!kinds && !lower && !upper && !pl && !pu) return ParamSpace::identity(dim);
    auto check = [&](const auto& v, const char* key) {
        if (v && static_cast<int>(v->size()) != dim)
            throw ConfigError(sec.where(key) + ": expected " + std::to_string(dim) + " entries");
    };
    check(kinds, "kinds");
    check(lower, "lower");
    check(upper, "upper");
    check(pl, "plausible_lower");
    check(pu, "plausible_upper");
    if (static_cast<bool>(pl) != static_cast<bool>(pu))
        throw ConfigError(sec.where("plausible_lower") + ": plausible_lower and plausible_upper go together");
    std::vector<ParamDim> dims(static_cast<std::size_t>(dim));
    for (int d = 0; d < dim; ++d) {
        auto& p = dims[static_cast<std::size_t>(d)];
        const std::string k = kinds ? (*kinds)[static_cast<std::size_t>(d)] : std::string("unbounded");
        if (k == "bounded") p.kind = ParamDim::Kind::bounded;
        else if (k == "lower_bounded") p.kind = ParamDim::Kind::lower_bounded;
        else if (k != "unbounded") throw ConfigError(sec.where("kinds") + ": unknown kind '" + k + "'");
        if (lower) p.lower = (*lower)[static_cast<std::size_t>(d)];
        if (upper) p.upper = (*upper)[static_cast<std::size_t>(d)];
        if (pl) {
            p.plausible_lower = (*pl)[static_cast<std::size_t>(d)];
            p.plausible_upper = (*pu)[static_cast<std::size_t>(d)];
        }
    }
    return ParamSpace(std::move(dims));
}

} // namespace detail

/// Reads an INI-style run configuration. Unknown sections and keys are errors.
inline RunConfig load_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw InputError("config file not found: " + path.string());
    boost::property_tree::ptree pt;
    try {
        boost::property_tree::read_ini(path.string(), pt);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    static const std::set<std::string> known{"run",       "target",    "initial",     "loop",     "acquisition",
                                             "shaping",   "trim",      "inducing",    "variational", "transform"};
    for (const auto& kv : pt) {
        if (!known.count(kv.first)) throw ConfigError("unknown section [" + kv.first + "]");
        if (kv.second.empty() && !kv.second.data().empty())
            throw ConfigError("key '" + kv.first + "' must be inside a section");
    }
    auto section = [&](const char* name) {
        const auto child = pt.get_child_optional(name);
        return detail::Section(child ? &*child : nullptr, name);
    };
    RunConfig c;
    c.base_dir = std::filesystem::absolute(path).parent_path();

    auto run = section("run");
    c.seed = run.get<std::uint64_t>("seed", 0);
    c.n_samples = run.get<int>("n_samples", 10000);
    c.out_dir = run.get<std::string>("out_dir", ".");
    run.finish();
    if (c.n_samples < 1) throw ConfigError("[run] n_samples must be positive");

    auto tg = section("target");
    c.target.builtin = tg.get<std::string>("builtin", "");
    c.target.kappa = tg.get<double>("kappa", 8.0);
    if (auto v = tg.list("mean")) c.target.mean = detail::to_vector(*v);
    if (auto v = tg.list("sd")) c.target.sd = detail::to_vector(*v);
    c.target.sigma_obs = tg.get<double>("sigma_obs", 0.0);
    c.target.noise_seed = tg.get<std::uint64_t>("noise_seed", c.seed);
    c.target.command = tg.get<std::string>("command", "");
    c.target.timeout = tg.get<double>("timeout", 300.0);
    c.target.dim = tg.get<int>("dim", 0);
    c.target.concurrency_safe = tg.get<bool>("concurrency_safe", false);
    tg.finish();
    if (!c.target.builtin.empty() && !c.target.command.empty())
        throw ConfigError("[target]: give either builtin or command, not both");
    if (c.target.builtin == "two_moons") c.target.dim = 2;
    else if (c.target.builtin == "rosenbrock_gaussian") c.target.dim = 6;
    else if (c.target.builtin == "normal") {
        if (c.target.mean.size() == 0) throw ConfigError("[target] mean is required for the normal target");
        if (c.target.sd.size() == 0) c.target.sd = Vector::Ones(c.target.mean.size());
        if (c.target.sd.size() != c.target.mean.size()) throw ConfigError("[target] sd and mean differ in length");
        c.target.dim = static_cast<int>(c.target.mean.size());
    } else if (!c.target.builtin.empty()) {
        throw ConfigError("[target] unknown builtin '" + c.target.builtin + "'");
    }
    if (c.target.sigma_obs < 0.0) throw ConfigError("[target] sigma_obs must be non-negative");
    if (c.target.timeout <= 0.0) throw ConfigError("[target] timeout must be positive");

    auto in = section("initial");
    c.initial.file = in.get<std::string>("file", "");
    c.initial.generator = in.get<std::string>("generator", "");
    c.initial.budget = in.get<int>("budget", 1000);
    c.initial.chains = in.get<int>("chains", c.initial.generator == "optimizer" ? 10 : 4);
    if (auto v = in.list("box_lower")) c.initial.box_lower = detail::to_vector(*v);
    if (auto v = in.list("box_upper")) c.initial.box_upper = detail::to_vector(*v);
    c.initial.exclude = in.get<std::string>("exclude", "");
    in.finish();
    if (c.initial.file.empty() == c.initial.generator.empty())
        throw ConfigError("[initial]: give exactly one of file or generator");
    if (!c.initial.generator.empty() && c.initial.generator != "slice" && c.initial.generator != "optimizer")
        throw ConfigError("[initial] generator must be slice or optimizer");
    if (!c.initial.file.empty()) {
        std::filesystem::path p(c.initial.file);
        if (p.is_relative()) p = c.base_dir / p;
        c.initial.file = p.string();
    }
    if (c.initial.budget < 1 || c.initial.chains < 1) throw ConfigError("[initial] budget and chains must be positive");

    auto lp = section("loop");
    LoopConfig& L = c.loop;
    L.n_f_budget = lp.get<int>("budget", 200);
    L.n_active_per_iter = lp.get<int>("n_active", 0);
    L.elbo_stability_tol = lp.get<double>("elbo_stability_tol", 0.0);
    L.bootstrap_points = lp.get<int>("bootstrap_points", L.bootstrap_points);
    L.strata = lp.get<int>("strata", L.strata);
    L.hpd_gap = lp.get<double>("hpd_gap", 0.0);
    L.k_init = lp.get<int>("k_init", L.k_init);
    L.n_mc_final = lp.get<int>("n_mc_final", L.n_mc_final);
    L.trim_enabled = lp.get<bool>("trim", true);
    L.checkpoint_path = lp.get<std::string>("checkpoint", "");
    L.retrain.max_iter = lp.get<int>("retrain_max_iter", L.retrain.max_iter);
    lp.finish();
    if (L.n_f_budget < 0) throw ConfigError("[loop] budget must be >= 0");
    if (L.n_active_per_iter < 0) throw ConfigError("[loop] n_active must be >= 1 (or 0 for the default)");
    L.seed = c.seed;

    auto aq = section("acquisition");
    const std::string kind = aq.get<std::string>("kind", "auto");
    if (kind == "a1") L.acquisition.kind = AcquisitionKind::a1;
    else if (kind == "a2") L.acquisition.kind = AcquisitionKind::a2;
    else if (kind != "auto") throw ConfigError("[acquisition] kind must be a1, a2 or auto");
    L.acquisition.p_alpha = aq.get<double>("p_alpha", L.acquisition.p_alpha);
    L.acquisition.n_imiqr_mc = aq.get<int>("n_mc", L.acquisition.n_imiqr_mc);
    L.acquisition.n_starts = aq.get<int>("n_starts", L.acquisition.n_starts);
    L.acquisition.max_evals_per_start = aq.get<int>("max_evals_per_start", L.acquisition.max_evals_per_start);
    L.acquisition.add_inducing = aq.get<bool>("add_inducing", L.acquisition.add_inducing);
    L.acquisition.box_margin = aq.get<double>("box_margin", L.acquisition.box_margin);
    aq.finish();
    if (!(L.acquisition.p_alpha > 0.5 && L.acquisition.p_alpha < 1.0))
        throw ConfigError("[acquisition] p_alpha must lie in (0.5, 1)");

    auto sh = section("shaping");
    L.shaping.enabled = sh.get<bool>("enabled", true);
    L.shaping.sigma_min_sq = sh.get<double>("sigma_min_sq", L.shaping.sigma_min_sq);
    L.shaping.sigma_med_sq = sh.get<double>("sigma_med_sq", L.shaping.sigma_med_sq);
    L.shaping.lambda_slope = sh.get<double>("lambda_slope", L.shaping.lambda_slope);
    L.shaping.theta_threshold = sh.get<double>("theta", 0.0);
    sh.finish();

    auto tr = section("trim");
    L.trim.beta = tr.get<double>("beta", L.trim.beta);
    L.trim.eta_trim = tr.get<double>("eta", 0.0);
    tr.finish();

    auto ind = section("inducing");
    L.inducing.m_min = ind.get<int>("m_min", L.inducing.m_min);
    L.inducing.m_max_base = ind.get<int>("m_max_base", L.inducing.m_max_base);
    L.inducing.m_max_growth = ind.get<double>("m_max_growth", L.inducing.m_max_growth);
    L.inducing.frac_tol = ind.get<double>("frac_tol", L.inducing.frac_tol);
    ind.finish();
    if (L.inducing.m_min < 1 || L.inducing.m_max_base < L.inducing.m_min)
        throw ConfigError("[inducing] need 1 <= m_min <= m_max_base");

    auto vi = section("variational");
    VariationalOptions& V = L.variational;
    V.n_mc = vi.get<int>("n_mc", V.n_mc);
    V.max_iter = vi.get<int>("max_iter", V.max_iter);
    V.lr = vi.get<double>("lr", V.lr);
    V.lr_final = vi.get<double>("lr_final", V.lr_final);
    V.k_max = vi.get<int>("k_max", V.k_max);
    V.kl_tol = vi.get<double>("kl_tol", V.kl_tol);
    vi.finish();
    if (V.k_max < 1 || V.k_max > 30) throw ConfigError("[variational] k_max must lie in [1, 30]");

    const int dim = c.target.dim;
    auto tf = section("transform");
    if (dim > 0) c.transform = detail::parse_transform(tf, dim);
    else if (tf.present()) throw ConfigError("[transform] needs a known dimension; set [target] dim");
    tf.finish();
    return c;
}

} // namespace svbmc

#endif
