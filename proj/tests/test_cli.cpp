#include <svbmc/app.hpp>

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

using namespace svbmc;
namespace fs = std::filesystem;

namespace {

struct Cmd {
    int code;
    std::string output;
};

Cmd run_cli(const std::string& args) {
    const fs::path log = fs::temp_directory_path() / "svbmc_cli_output.txt";
    const std::string cmd = std::string(SVBMC_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class CliTest : public ::testing::Test {
protected:
    fs::path dir;

    void SetUp() override {
        dir = fs::temp_directory_path() /
              ("svbmc_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    fs::path write(const std::string& name, const std::string& text) {
        std::ofstream(dir / name) << text;
        return dir / name;
    }

    fs::path normal_config(int budget, const std::string& extra = "") {
        return write("run.ini", "[run]\nseed = 4\nn_samples = 4000\nout_dir = out\n"
                                "[target]\nbuiltin = normal\nmean = 0.5, -1\nsd = 1, 0.5\n"
                                "[initial]\ngenerator = slice\nchains = 4\nbudget = 400\n"
                                "[loop]\nbudget = " + std::to_string(budget) + "\n"
                                "[inducing]\nm_min = 50\nm_max_base = 60\n" + extra);
    }
};

} // namespace

TEST_F(CliTest, RunWritesAllArtifacts) {
    const auto cfg = normal_config(5);
    const Cmd r = run_cli("run " + cfg.string());
    ASSERT_EQ(r.code, 0) << r.output;
    const fs::path out = dir / "out";
    for (const char* f : {"posterior.json", "samples.csv", "elbo.json", "diagnostics.csv", "evaluations.csv"})
        EXPECT_TRUE(fs::exists(out / f)) << f;
    const PosteriorFile p = read_posterior(out / "posterior.json");
    EXPECT_EQ(p.q.dim(), 2);
    EXPECT_TRUE(p.space.is_identity());
    const Matrix s = read_matrix_csv(out / "samples.csv");
    EXPECT_EQ(s.rows(), 4000);
    EXPECT_EQ(s.cols(), 2);
    const auto e = nlohmann::json::parse(slurp(out / "elbo.json"));
    EXPECT_EQ(e.at("format"), "svbmc-elbo");
    EXPECT_NEAR(e.at("elbo").get<double>(), 0.0, 0.1);
    EXPECT_EQ(e.at("evaluations_used").get<int>(), 5);
    const Matrix ev = read_matrix_csv(out / "diagnostics.csv");
    EXPECT_EQ(ev.cols(), 7);
    EXPECT_EQ(ev.rows(), 2);
}

TEST_F(CliTest, SameConfigGivesIdenticalPosterior) {
    const auto cfg = normal_config(5);
    ASSERT_EQ(run_cli("run " + cfg.string() + " --out-dir " + (dir / "a").string()).code, 0);
    ASSERT_EQ(run_cli("run " + cfg.string() + " --out-dir " + (dir / "b").string()).code, 0);
    EXPECT_EQ(slurp(dir / "a" / "posterior.json"), slurp(dir / "b" / "posterior.json"));
    // A different seed changes the result.
    ASSERT_EQ(run_cli("--seed 99 run " + cfg.string() + " --out-dir " + (dir / "c").string()).code, 0);
    EXPECT_NE(slurp(dir / "a" / "posterior.json"), slurp(dir / "c" / "posterior.json"));
}

TEST_F(CliTest, MissingInitialFileExitsWithTwo) {
    const auto cfg = write("run.ini", "[target]\nbuiltin = normal\nmean = 0\n[initial]\nfile = nowhere/init.csv\n");
    const Cmd r = run_cli("run " + cfg.string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("nowhere/init.csv"), std::string::npos) << r.output;
}

TEST_F(CliTest, ConfigErrorsExitWithTwo) {
    EXPECT_EQ(run_cli("run " + (dir / "absent.ini").string()).code, 2);
    const auto bad_key = write("k.ini", "[target]\nbuiltin = normal\nmean = 0\nmeen = 1\n[initial]\ngenerator = slice\n");
    const Cmd r = run_cli("run " + bad_key.string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("meen"), std::string::npos) << r.output;
    const auto both = write("b.ini", "[target]\nbuiltin = normal\nmean = 0\n[initial]\ngenerator = slice\nfile = x.csv\n");
    EXPECT_EQ(run_cli("run " + both.string()).code, 2);
}

TEST_F(CliTest, GenerateRespectsBudgetAndReingests) {
    const auto cfg = write("gen.ini", "[run]\nseed = 2\nout_dir = gen\n[target]\nbuiltin = two_moons\n"
                                      "[initial]\ngenerator = slice\nchains = 4\nbudget = 300\n"
                                      "box_lower = -2, -2\nbox_upper = 2, 2\n");
    ASSERT_EQ(run_cli("generate " + cfg.string()).code, 0);
    const fs::path f = dir / "gen" / "initial.csv";
    const Dataset ds = ingest(f);
    EXPECT_LE(ds.size(), 300);
    EXPECT_GT(ds.size(), 100);
    // Lossless: writing the re-read set gives the same bytes.
    std::ostringstream again;
    write_csv(again, ds.evaluations(), ds.dim());
    EXPECT_EQ(again.str(), slurp(f));
    // Chains start at different points.
    const Matrix X = ds.X();
    EXPECT_NE(X.row(0), X.row(ds.size() - 1));
    ASSERT_EQ(run_cli("generate " + cfg.string() + " --out-dir " + (dir / "gen2").string()).code, 0);
    EXPECT_EQ(slurp(f), slurp(dir / "gen2" / "initial.csv"));
}

TEST_F(CliTest, MetricsCommand) {
    const auto cfg = normal_config(0);
    ASSERT_EQ(run_cli("run " + cfg.string()).code, 0);
    const fs::path post = dir / "out" / "posterior.json";
    const PosteriorFile p = read_posterior(post);
    write_matrix_csv(dir / "self.csv", sample_original(p.q, p.space, 200000, 77));
    Cmd r = run_cli("metrics --posterior " + post.string() + " --reference " + (dir / "self.csv").string());
    ASSERT_EQ(r.code, 0) << r.output;
    const auto j = nlohmann::json::parse(r.output.substr(r.output.find('{')));
    EXPECT_LE(j.at("mmtv").get<double>(), 0.02);
    EXPECT_TRUE(j.at("delta_lml").is_null());
    EXPECT_NE(r.output.find("absent"), std::string::npos);

    r = run_cli("metrics --posterior " + post.string() + " --reference " + (dir / "self.csv").string() +
                " --true-lml 0");
    ASSERT_EQ(r.code, 0) << r.output;
    const auto j2 = nlohmann::json::parse(r.output.substr(r.output.find('{')));
    EXPECT_LT(j2.at("delta_lml").get<double>(), 0.1);

    write_matrix_csv(dir / "wide.csv", Matrix::Zero(10, 3));
    EXPECT_EQ(run_cli("metrics --posterior " + post.string() + " --reference " + (dir / "wide.csv").string()).code, 2);
    EXPECT_EQ(run_cli("metrics --posterior " + (dir / "none.json").string() + " --reference " +
                      (dir / "self.csv").string()).code, 2);
}

TEST_F(CliTest, RunFromFileOnly) {
    const Target t = normal_target(Vector::Zero(2), Vector::Ones(2));
    GeneratorOptions g;
    g.box_lower = Vector::Constant(2, -3.0);
    g.box_upper = Vector::Constant(2, 3.0);
    std::ofstream out(dir / "init.csv");
    write_csv(out, slice_sampler_init(t, 4, 500, 5, g), 2);
    out.close();
    const auto cfg = write("file.ini", "[run]\nout_dir = out\n[initial]\nfile = init.csv\n[loop]\nbudget = 0\n"
                                       "[inducing]\nm_min = 50\nm_max_base = 60\n");
    const Cmd r = run_cli("run " + cfg.string());
    ASSERT_EQ(r.code, 0) << r.output;
    const auto e = nlohmann::json::parse(slurp(dir / "out" / "elbo.json"));
    EXPECT_NEAR(e.at("elbo").get<double>(), 0.0, 0.1);
    // A budget without a target is a configuration error.
    const auto bad = write("bad.ini", "[initial]\nfile = init.csv\n[loop]\nbudget = 5\n");
    EXPECT_EQ(run_cli("run " + bad.string()).code, 2);
}

TEST_F(CliTest, TransformedRunReportsOriginalSpace) {
    // Gamma(3, 1) in x1 > 0 through a shell child.
    write("gamma.sh", "#!/bin/sh\nwhile read cmd a; do\n  [ \"$cmd\" = QUIT ] && exit 0\n"
                      "  awk -v a=\"$a\" 'BEGIN { printf \"%.17g\\n\", 2*log(a) - a - log(2) }'\ndone\n");
    const auto cfg = write("t.ini", "[run]\nseed = 2\nn_samples = 50000\nout_dir = out\n"
                                    "[target]\ncommand = sh gamma.sh\ndim = 1\n"
                                    "[initial]\ngenerator = slice\nchains = 2\nbudget = 300\n"
                                    "[loop]\nbudget = 5\n[inducing]\nm_min = 50\nm_max_base = 60\n"
                                    "[transform]\nkinds = lower_bounded\nlower = 0\n");
    const Cmd r = run_cli("run " + cfg.string());
    ASSERT_EQ(r.code, 0) << r.output;
    const Matrix s = read_matrix_csv(dir / "out" / "samples.csv");
    EXPECT_GT(s.minCoeff(), 0.0);
    EXPECT_NEAR(s.mean(), 3.0, 0.15);
    const auto e = nlohmann::json::parse(slurp(dir / "out" / "elbo.json"));
    EXPECT_NEAR(e.at("elbo").get<double>(), 0.0, 0.05);
}

TEST(Subprocess, ReplyParsing) {
    const Observation a = ChildProcess::parse_reply("0.0");
    EXPECT_EQ(a.y, 0.0);
    EXPECT_FALSE(a.has_sigma);
    const Observation b = ChildProcess::parse_reply("-1.5 0.3");
    EXPECT_EQ(b.y, -1.5);
    EXPECT_EQ(b.sigma_obs, 0.3);
    EXPECT_TRUE(b.has_sigma);
    EXPECT_THROW(ChildProcess::parse_reply("oops"), EvaluationError);
    EXPECT_THROW(ChildProcess::parse_reply("1 2 3"), EvaluationError);
    EXPECT_THROW(ChildProcess::parse_reply("1 -2"), EvaluationError);
    EXPECT_THROW(ChildProcess::parse_reply("nan"), EvaluationError);
}

TEST(Subprocess, EchoChild) {
    Target t = subprocess_target("while read l; do [ \"$l\" = QUIT ] && exit 0; echo 0.0; done", 3, 10.0);
    for (int i = 0; i < 3; ++i) {
        const Observation o = t.eval(Vector::Constant(3, i * 0.7));
        EXPECT_EQ(o.y, 0.0);
    }
    Target n = subprocess_target("while read l; do echo '-1.5 0.3'; done", 1, 10.0);
    const Observation o = n.eval(Vector::Zero(1));
    EXPECT_EQ(o.y, -1.5);
    EXPECT_EQ(o.sigma_obs, 0.3);
}

TEST(Subprocess, ProtocolLineIsExact) {
    const fs::path log = fs::temp_directory_path() / "svbmc_protocol.txt";
    fs::remove(log);
    Target t = subprocess_target("while read l; do echo \"$l\" >> " + log.string() + "; echo 1; done", 2, 10.0);
    t.eval((Vector(2) << 0.1, -2.5e-7).finished());
    std::ifstream in(log);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "EVAL 0.10000000000000001 -2.4999999999999999e-07");
    fs::remove(log);
}

TEST(Subprocess, TimeoutAndCrashAreEvaluationFailures) {
    Target slow = subprocess_target("read l; sleep 5; echo 1", 1, 0.3);
    EXPECT_THROW(slow.eval(Vector::Zero(1)), EvaluationError);
    Target dead = subprocess_target("exit 0", 1, 5.0);
    EXPECT_THROW(dead.eval(Vector::Zero(1)), EvaluationError);
}

TEST(Subprocess, GarbageOnceSkipsOneEvaluation) {
    // The child answers garbage to its third request only; the run keeps going.
    const fs::path count = fs::temp_directory_path() / "svbmc_garbage_count";
    fs::remove(count);
    const std::string script =
        "n=0; while read cmd x y; do [ \"$cmd\" = QUIT ] && exit 0; n=$((n+1)); "
        "if [ $n -eq 3 ]; then echo garbage; else "
        "awk -v x=\"$x\" -v y=\"$y\" 'BEGIN { printf \"%.17g\\n\", -0.5*(x*x+y*y) - log(2*3.141592653589793) }'; fi; done";
    Target t = subprocess_target(script, 2, 10.0);
    const Target ref = normal_target(Vector::Zero(2), Vector::Ones(2));
    GeneratorOptions g;
    g.box_lower = Vector::Constant(2, -3.0);
    g.box_upper = Vector::Constant(2, 3.0);
    const auto init = slice_sampler_init(ref, 4, 300, 1, g);
    LoopConfig c;
    c.n_f_budget = 10;
    c.inducing.m_min = 50;
    c.inducing.m_max_base = 60;
    const RunResult r = Svbmc(t, c).run(init);
    ASSERT_EQ(r.evaluation_log.size(), 10u);
    int failed = 0;
    for (const auto& e : r.evaluation_log) failed += e.ok ? 0 : 1;
    EXPECT_EQ(failed, 1);
    EXPECT_FALSE(r.evaluation_log[2].ok);
}
