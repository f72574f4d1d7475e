#include <svbmc/metrics.hpp>
#include <svbmc/targets.hpp>

#include <gtest/gtest.h>

using namespace svbmc;

TEST(Targets, RosenbrockValues) {
    EXPECT_EQ(rosenbrock(1.0, 1.0), 0.0);
    EXPECT_NEAR(rosenbrock(0.0, 0.0), -0.01, 1e-15);
    const Vector x = (Vector(6) << 0.3, -0.7, 1.2, 0.4, 0.1, -2.0).finished();
    Vector y = x;
    y << 1.2, 0.4, 0.3, -0.7, 0.1, -2.0;
    EXPECT_DOUBLE_EQ(rosenbrock_gaussian_6d(x), rosenbrock_gaussian_6d(y));
}

TEST(Targets, TwoMoonsShape) {
    const double c = kTwoMoonsRadius;
    const double th = 0.3;
    const Vector on = (Vector(2) << c * std::cos(th), c * std::sin(th)).finished();
    EXPECT_NEAR(two_moons(on, 8.0), std::log(std::exp(8.0 * std::cos(th)) / 3 + 2 * std::exp(-8.0 * std::cos(th)) / 3),
                1e-12);
    const Vector a = (Vector(2) << 0.4, 0.5).finished(), b = (Vector(2) << 0.4, -0.5).finished();
    EXPECT_EQ(two_moons(a, 8.0), two_moons(b, 8.0));
    EXPECT_EQ(two_moons(Vector::Zero(2), 8.0), -kInf);
}

TEST(Targets, TwoMoonsNormalizerAndModeMassByGrid) {
    const double kappa = 8.0;
    const Target t = two_moons_target(kappa);
    // Polar grid: radial band of +-10 widths around the ring.
    const int nr = 2000, nth = 4000;
    const double r0 = kTwoMoonsRadius - 10 * kTwoMoonsWidth, r1 = kTwoMoonsRadius + 10 * kTwoMoonsWidth;
    const double dr = (r1 - r0) / nr, dth = 2 * M_PI / nth;
    double left = 0.0, right = 0.0;
    for (int i = 0; i < nr; ++i) {
        const double r = r0 + (i + 0.5) * dr;
        for (int j = 0; j < nth; ++j) {
            const double th = (j + 0.5) * dth;
            const Vector x = (Vector(2) << r * std::cos(th), r * std::sin(th)).finished();
            const double m = std::exp(two_moons(x, kappa)) * r * dr * dth;
            (x(0) < 0 ? left : right) += m;
        }
    }
    EXPECT_NEAR(std::log(left + right), *t.log_z, 1e-6);
    EXPECT_NEAR(left / right, 2.0, 0.02);
    // Reference draws land on the ring with the same split.
    const Matrix s = t.reference_sampler(200000, 3);
    const double frac_left = (s.col(0).array() < 0.0).cast<double>().mean();
    EXPECT_NEAR(frac_left, left / (left + right), 0.01);
    EXPECT_NEAR(s.rowwise().norm().mean(), kTwoMoonsRadius, 1e-3);
}

TEST(Targets, RosenbrockNormalizerAndSamplesAgreeWithImportanceSampling) {
    const Target t = rosenbrock_gaussian_target();
    // Importance sampling with the prior N(0, 9 I) as proposal: Z = E[exp(R + R) N(x5, x6)].
    std::mt19937_64 rng(4);
    std::normal_distribution<double> z(0.0, 3.0);
    const int n = 2000000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double v[6];
        for (double& e : v) e = z(rng);
        const double w = std::exp(rosenbrock(v[0], v[1]) + rosenbrock(v[2], v[3]) - kLog2Pi -
                                  0.5 * (v[4] * v[4] + v[5] * v[5]));
        sum += w;
        sum2 += w * w;
    }
    const double mean = sum / n, se = std::sqrt((sum2 / n - mean * mean) / n);
    EXPECT_NEAR(std::exp(*t.log_z), mean, 4 * se);
    const Matrix s = t.reference_sampler(100000, 5);
    // x2 given x1 concentrates around x1^2.
    EXPECT_LT(((s.col(1).array() - s.col(0).array().square()).square().mean()), 1.0);
    EXPECT_NEAR(s.col(4).array().square().mean(), 0.9, 0.02);
}

TEST(Targets, NoisyWrapperStatistics) {
    const Target base = normal_target(Vector::Zero(2), Vector::Ones(2));
    const Target noisy = noisy_wrap(base, 2.0, 9);
    const Vector x = Vector::Constant(2, 0.3);
    const int n = 10000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const Observation o = noisy.eval(x);
        EXPECT_EQ(o.sigma_obs, 2.0);
        sum += o.y;
        sum2 += o.y * o.y;
    }
    const double sd = std::sqrt(sum2 / n - (sum / n) * (sum / n));
    EXPECT_NEAR(sd, 2.0, 0.1);
    const Target exact = noisy_wrap(base, 0.0, 9);
    EXPECT_EQ(exact.eval(x).y, base.eval(x).y);
    // Same seed, same call sequence -> same values.
    const Target n1 = noisy_wrap(base, 1.0, 3), n2 = noisy_wrap(base, 1.0, 3);
    EXPECT_EQ(n1.eval(x).y, n2.eval(x).y);
}

TEST(Targets, SliceSamplerRecordsEveryEvaluation) {
    int calls = 0;
    Target t = normal_target(Vector::Zero(1), Vector::Ones(1));
    auto inner = t.eval;
    t.eval = [&calls, inner](const Vector& x) {
        ++calls;
        return inner(x);
    };
    GeneratorOptions opt{Vector::Constant(1, -2.0), Vector::Constant(1, 2.0)};
    const auto evals = slice_sampler_init(t, 4, 20000, 1, opt);
    EXPECT_EQ(calls, 20000);
    EXPECT_EQ(static_cast<int>(evals.size()), 20000);
    for (std::size_t i = 0; i < evals.size(); i += 97) EXPECT_EQ(evals[i].y, inner(evals[i].x).y);
}

TEST(Targets, SliceSamplerChainMeanIsUnbiased) {
    const Target t = normal_target(Vector::Zero(1), Vector::Ones(1));
    GeneratorOptions opt{Vector::Constant(1, -2.0), Vector::Constant(1, 2.0)};
    std::vector<Vector> states;
    slice_sampler_init(t, 4, 400000, 2, opt, &states);
    ASSERT_GT(states.size(), 10000u);
    double sum = 0.0, sum2 = 0.0;
    for (const auto& x : states) {
        sum += x(0);
        sum2 += x(0) * x(0);
    }
    const double n = static_cast<double>(states.size());
    // Successive 1D slice draws from a Gaussian are nearly independent.
    EXPECT_NEAR(sum / n, 0.0, 4.0 / std::sqrt(n) * 1.5);
    EXPECT_NEAR(sum2 / n, 1.0, 0.05);
}

TEST(Targets, OptimizerFindsQuadraticMaximum) {
    const Target t = normal_target((Vector(3) << 1.0, -1.0, 0.5).finished(), Vector::Ones(3));
    GeneratorOptions opt{Vector::Constant(3, -5.0), Vector::Constant(3, 5.0)};
    const auto evals = optimizer_init(t, 4, 2000, 3, opt);
    EXPECT_LE(static_cast<int>(evals.size()), 2000);
    double best = -kInf;
    int in_box = 0;
    for (const auto& e : evals) {
        best = std::max(best, e.y);
        if (((e.x - (Vector(3) << 1.0, -1.0, 0.5).finished()).array().abs() < 2.807).all()) ++in_box;
    }
    EXPECT_NEAR(best, t(Vector((Vector(3) << 1.0, -1.0, 0.5).finished())), 0.01);
    EXPECT_GE(in_box, static_cast<int>(evals.size()) / 2);
}

TEST(Targets, GeneratorRunsUseDistinctStreams) {
    const Target t = normal_target(Vector::Zero(2), Vector::Ones(2));
    GeneratorOptions opt{Vector::Constant(2, -3.0), Vector::Constant(2, 3.0)};
    const auto evals = optimizer_init(t, 2, 200, 7, opt);
    EXPECT_NE(evals.front().x, evals[100].x);
    const auto again = optimizer_init(t, 2, 200, 7, opt);
    ASSERT_EQ(evals.size(), again.size());
    for (std::size_t i = 0; i < evals.size(); ++i) EXPECT_EQ(evals[i].x, again[i].x);
}
