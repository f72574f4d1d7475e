// svbmc: command-line front end (run, generate, metrics).

#include <svbmc/app.hpp>

#include <CLI11.hpp>

#include <iostream>

using namespace svbmc;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitInput = 2;

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    bool verbose = false;
};

RunConfig configure(const std::string& path, const Globals& g) {
    RunConfig c = load_config(path);
    if (g.seed) {
        c.seed = *g.seed;
        c.loop.seed = *g.seed;
    }
    if (!g.out_dir.empty()) c.out_dir = g.out_dir;
    else if (std::filesystem::path(c.out_dir).is_relative()) c.out_dir = (c.base_dir / c.out_dir).string();
    if (!c.loop.checkpoint_path.empty() && std::filesystem::path(c.loop.checkpoint_path).is_relative())
        c.loop.checkpoint_path = (std::filesystem::path(c.out_dir) / c.loop.checkpoint_path).string();
    return c;
}

int cmd_run(const std::string& config, const std::string& resume, const Globals& g) {
    const RunConfig c = configure(config, g);
    std::function<void(const std::string&)> log;
    if (g.verbose) log = [](const std::string& m) { std::cerr << m << '\n'; };
    if (!c.loop.checkpoint_path.empty()) std::filesystem::create_directories(std::filesystem::path(c.loop.checkpoint_path).parent_path());
    std::optional<LoopState> state;
    if (!resume.empty()) {
        if (!std::filesystem::exists(resume)) throw InputError("checkpoint file not found: " + resume);
        state = load_checkpoint(resume);
    }
    const PipelineOutput out = run_pipeline(c, log, state);
    write_artifacts(out, c, c.out_dir);
    std::cout << "ELBO " << out.result.elbo.mean << " +- " << out.result.elbo.sd << "  (K=" << out.result.posterior.K()
              << ", evaluations " << out.result.evaluation_log.size() << ")\n"
              << "artifacts written to " << c.out_dir << '\n';
    return 0;
}

int cmd_generate(const std::string& config, const Globals& g) {
    RunConfig c = configure(config, g);
    if (c.initial.generator.empty()) throw ConfigError("[initial] generate needs a generator, not a file");
    const Target target = make_target(c);
    if (target.name == "none") throw ConfigError("[target] generate needs a target");
    const auto evals = generate_initial(c, target);
    std::filesystem::create_directories(c.out_dir);
    const auto path = std::filesystem::path(c.out_dir) / "initial.csv";
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    write_csv(out, evals, target.dim);
    std::cout << evals.size() << " evaluations written to " << path.string() << '\n';
    return 0;
}

int cmd_metrics(const std::string& posterior, const std::string& reference, std::optional<double> true_lml,
                std::optional<double> elbo, Eigen::Index n, const Globals& g) {
    if (!std::filesystem::exists(posterior)) throw InputError("posterior file not found: " + posterior);
    if (!std::filesystem::exists(reference)) throw InputError("reference file not found: " + reference);
    const PosteriorFile p = read_posterior(posterior);
    const Matrix ref = read_matrix_csv(reference);
    if (ref.cols() != p.q.dim())
        throw InputError("dimension mismatch: posterior has D=" + std::to_string(p.q.dim()) + ", reference has " +
                         std::to_string(ref.cols()) + " columns");
    if (!elbo && true_lml) {
        // Use the ELBO written next to the posterior, if any.
        const auto ep = std::filesystem::path(posterior).parent_path() / "elbo.json";
        if (std::filesystem::exists(ep)) {
            std::ifstream in(ep);
            elbo = nlohmann::json::parse(in).at("elbo").get<double>();
        }
    }
    const Eigen::Index ns = n > 0 ? n : std::max<Eigen::Index>(ref.rows(), 10000);
    const Matrix qs = sample_original(p.q, p.space, ns, sample_seed(g.seed.value_or(0)));
    const MetricReport m = compute_metrics(qs, ref, elbo, true_lml);
    std::cout << "metric   value\n";
    std::cout << "MMTV     " << m.mmtv << '\n';
    std::cout << "gsKL     " << m.gskl << (m.gskl_regularized ? "  (covariance ridge applied)" : "") << '\n';
    std::cout << "dLML     " << (m.delta_lml ? std::to_string(*m.delta_lml) : std::string("absent")) << '\n';
    nlohmann::json j;
    j["mmtv"] = m.mmtv;
    j["gskl"] = m.gskl;
    j["gskl_regularized"] = m.gskl_regularized;
    j["delta_lml"] = m.delta_lml ? nlohmann::json(*m.delta_lml) : nlohmann::json(nullptr);
    j["n_posterior_samples"] = m.n_p;
    j["n_reference_samples"] = m.n_q;
    std::cout << j.dump() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse variational Bayesian Monte Carlo"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "override the configured seed");
    app.add_option("--out-dir", g.out_dir, "directory for artifacts");
    app.add_flag("--verbose,-v", g.verbose, "log progress to stderr");

    std::string run_config, resume;
    auto* run = app.add_subcommand("run", "fit a posterior from a configuration file");
    run->add_option("config", run_config, "configuration file")->required();
    run->add_option("--resume", resume, "continue from a checkpoint file");

    std::string gen_config;
    auto* gen = app.add_subcommand("generate", "write an initial evaluation set");
    gen->add_option("config", gen_config, "configuration file")->required();

    std::string posterior, reference;
    std::optional<double> true_lml, elbo;
    Eigen::Index n_samples = 0;
    auto* met = app.add_subcommand("metrics", "compare a posterior file with reference samples");
    met->add_option("--posterior", posterior, "posterior JSON written by run")->required();
    met->add_option("--reference", reference, "CSV of reference samples")->required();
    met->add_option("--true-lml", true_lml, "true log normalizer");
    met->add_option("--elbo", elbo, "ELBO to compare with --true-lml (default: elbo.json next to the posterior)");
    met->add_option("--n-samples", n_samples, "posterior draws (default: max(reference rows, 10000))");

    // Global options may also follow the subcommand.
    for (auto* sub : {run, gen, met}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kExitInput;
    }
    try {
        if (*run) return cmd_run(run_config, resume, g);
        if (*gen) return cmd_generate(gen_config, g);
        return cmd_metrics(posterior, reference, true_lml, elbo, n_samples, g);
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitInput;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << '\n';
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}
