#include "helpers.hpp"

#include <svbmc/data.hpp>
#include <svbmc/io.hpp>

#include <gtest/gtest.h>

#include <sstream>

using namespace svbmc;

namespace {

Evaluation ev(std::initializer_list<double> x, double y, double var = kNoiselessVariance) {
    Vector v(static_cast<Eigen::Index>(x.size()));
    Eigen::Index i = 0;
    for (double a : x) v(i++) = a;
    return {v, y, var};
}

} // namespace

TEST(ShapeNoise, PublishedValues) {
    const NoiseShapeConfig cfg;
    const int dim = 2;
    const double theta = cfg.theta(dim);
    EXPECT_DOUBLE_EQ(shape_noise(0.0, cfg, dim), 1e-3);
    EXPECT_NEAR(shape_noise(theta, cfg, dim), 1.0, 1e-15);
    EXPECT_NEAR(shape_noise(theta + 10.0, cfg, dim), 1.25, 1e-12);
}

TEST(ShapeNoise, MonotoneContinuousAndLinearTail) {
    const NoiseShapeConfig cfg;
    double prev = 0.0;
    for (int i = 0; i <= 10000; ++i) {
        const double v = shape_noise(i * 0.01, cfg, 3);
        EXPECT_GE(v, prev);
        EXPECT_GE(v, cfg.sigma_min_sq);
        prev = v;
    }
    const double theta = cfg.theta(3);
    EXPECT_NEAR(shape_noise(theta - 1e-9, cfg, 3), shape_noise(theta, cfg, 3), 1e-8);
    const double big = 1e7;
    EXPECT_NEAR(std::sqrt(shape_noise(big, cfg, 3)) / big, cfg.lambda_slope, 1e-4);
}

TEST(ShapeNoise, RejectsBadInput) {
    EXPECT_THROW(shape_noise(-1.0, {}, 2), std::invalid_argument);
    EXPECT_THROW(shape_noise(std::nan(""), {}, 2), std::invalid_argument);
}

TEST(Trim, RemovesOnlyFarLowPoints) {
    std::vector<Evaluation> e{ev({0, 0}, 0.0), ev({1, 0}, -100.0), ev({0, 1}, -10.0)};
    const auto ds = Dataset::from_evaluations(2, e);
    const auto t = trim(ds, {});
    ASSERT_EQ(t.size(), 2);
    EXPECT_EQ(t.y()(0), 0.0);
    EXPECT_EQ(t.y()(1), -10.0);
    EXPECT_EQ(trim(t, {}).size(), 2); // idempotent
    std::vector<Evaluation> one{ev({3, 3}, 5.0)};
    EXPECT_EQ(trim(Dataset::from_evaluations(2, one), {}).size(), 1);
    EXPECT_THROW(trim(Dataset(2), {}), InputError);
}

TEST(NoiseShaping, AddsToObservationVariance) {
    std::vector<Evaluation> e{ev({0}, 1.0), ev({1}, 0.0, 0.5), ev({2}, -3.0)};
    const auto ds = apply_noise_shaping(Dataset::from_evaluations(1, e), {});
    EXPECT_DOUBLE_EQ(ds.total_var()(0), 1e-5 + 1e-3);
    EXPECT_DOUBLE_EQ(ds.total_var()(1), 0.5 + shape_noise(1.0, {}, 1));
    EXPECT_GT(ds.total_var()(2), ds.total_var()(0));
    EXPECT_EQ(ds.y()(2), -3.0);
    EXPECT_EQ(ds.obs_var()(1), 0.5);
}

TEST(Dataset, MergesDuplicatesByPrecision) {
    std::vector<Evaluation> e{ev({1, 2}, 1.0, 1.0), ev({0, 0}, 7.0), ev({1, 2}, 4.0, 2.0)};
    const auto ds = Dataset::from_evaluations(2, e);
    ASSERT_EQ(ds.size(), 2);
    // (1/1 * 1 + 1/2 * 4) / (1 + 1/2) = 2, variance 2/3.
    EXPECT_DOUBLE_EQ(ds.y()(0), 2.0);
    EXPECT_DOUBLE_EQ(ds.obs_var()(0), 2.0 / 3.0);
    EXPECT_EQ(ds.y_max(), 7.0);
    EXPECT_EQ(ds.argmax(), 1);
}

TEST(Dataset, RejectsInvalidEvaluations) {
    Dataset ds(2);
    EXPECT_THROW(ds.with_added(ev({1}, 0.0)), InputError);
    EXPECT_THROW(ds.with_added(ev({1, std::nan("")}, 0.0)), InputError);
    EXPECT_THROW(ds.with_added(ev({1, 2}, kInf)), InputError);
    EXPECT_THROW(ds.with_added(ev({1, 2}, 0.0, -1.0)), InputError);
}

TEST(Ingest, ParsesCsvAndDefaultsNoise) {
    std::istringstream in("x1,x2,y\n0.5,1,-2\n1,1,-3\n0.5,1,-4\n");
    const auto ds = read_csv(in);
    EXPECT_EQ(ds.dim(), 2);
    ASSERT_EQ(ds.size(), 2);
    EXPECT_DOUBLE_EQ(ds.y()(0), -3.0); // equal-variance duplicates average
    EXPECT_EQ(ds.obs_var()(1), kNoiselessVariance);
}

TEST(Ingest, ParsesNoiseColumnAndJsonLines) {
    std::istringstream csv("x1,y,sigma_obs\n0,1,2\n");
    EXPECT_DOUBLE_EQ(read_csv(csv).obs_var()(0), 4.0);
    std::istringstream jl("{\"x\":[1,2],\"y\":-1}\n{\"x\":[0,2],\"y\":-2,\"sigma_obs\":0.5}\n");
    const auto ds = read_jsonl(jl);
    EXPECT_EQ(ds.size(), 2);
    EXPECT_EQ(ds.obs_var()(0), kNoiselessVariance);
    EXPECT_EQ(ds.obs_var()(1), 0.25);
}

TEST(Ingest, ReportsOffendingRow) {
    std::istringstream in("x1,y\n0,1\n1,nan\n");
    try {
        read_csv(in);
        FAIL();
    } catch (const InputError& e) {
        EXPECT_EQ(e.row(), 1);
        EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos);
    }
    std::istringstream bad("x1,x2,y\n0,1,2\n1,2\n");
    EXPECT_THROW(read_csv(bad), InputError);
    std::istringstream jl("{\"x\":[1,2],\"y\":-1}\n{\"x\":[0],\"y\":-2}\n");
    EXPECT_THROW(read_jsonl(jl), InputError);
    std::istringstream hdr("a,b\n1,2\n");
    EXPECT_THROW(read_csv(hdr), InputError);
}

TEST(Ingest, CsvRoundTripIsLossless) {
    std::mt19937_64 rng(41);
    for (double noise : {kNoiselessVariance, 0.0}) {
        auto ds = svbmc::testing::random_dataset(3, 50, rng, 0.01, 2.0);
        if (noise > 0) {
            auto e = ds.evaluations();
            for (auto& x : e) x.sigma_obs_sq = noise;
            ds = Dataset::from_evaluations(3, e);
        }
        std::stringstream buf;
        write_csv(buf, ds.evaluations(), 3);
        const auto back = read_csv(buf);
        EXPECT_TRUE(back.X() == ds.X());
        EXPECT_TRUE(back.y() == ds.y());
        EXPECT_LT((back.obs_var() - ds.obs_var()).cwiseAbs().maxCoeff(), 1e-15 * ds.obs_var().maxCoeff() + 1e-300);
    }
}
