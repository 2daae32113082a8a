#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <random>

#include "msfpca/errors.hpp"
#include "msfpca/rng.hpp"
#include "msfpca/sampler.hpp"
#include "msfpca/stats.hpp"

using namespace msfpca;

namespace {

LogDensityGrad standard_normal(int dim) {
    return [dim](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        g = -x;
        return -0.5 * x.squaredNorm();
    };
}

LogDensityGrad gaussian(const Eigen::MatrixXd& cov) {
    const Eigen::MatrixXd prec = cov.inverse();
    return [prec](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        g = -prec * x;
        return 0.5 * x.dot(g);
    };
}

std::vector<double> coordinate(const Draws& d, int coord) {
    std::vector<double> out;
    for (int c = 0; c < d.chains; ++c)
        for (int t = 0; t < d.iters; ++t) out.push_back(d.value(c, t, coord));
    return out;
}

Draws iid_draws(int chains, int iters, std::uint64_t seed, double offset_last_chain = 0.0) {
    Draws d;
    d.chains = chains;
    d.iters = iters;
    d.dim = 1;
    d.data.resize(d.n_draws());
    Rng rng(seed);
    for (int c = 0; c < chains; ++c)
        for (int t = 0; t < iters; ++t)
            d.data[static_cast<std::size_t>(c) * iters + t] =
                rng.normal() + (c == chains - 1 ? offset_last_chain : 0.0);
    d.accept_rate.assign(chains, 1.0);
    d.divergences.assign(chains, 0);
    d.step_size.assign(chains, 1.0);
    return d;
}

}  // namespace

TEST_SUITE("sampler") {

TEST_CASE("recovers a 1-d standard normal") {
    ChainConfig cfg;
    cfg.chains = 4;
    cfg.warmup_iters = 500;
    cfg.sampling_iters = 500;  // 4 x 500 = 2000 draws
    cfg.seed = 1234;
    Draws d = run_nuts(cfg, 1, standard_normal(1));
    const auto x = coordinate(d, 0);
    CHECK(std::abs(mean(x)) <= 0.05);
    CHECK(variance(x) >= 0.9);
    CHECK(variance(x) <= 1.1);
}

TEST_CASE("recovers a correlated 2-d Gaussian") {
    Eigen::MatrixXd cov(2, 2);
    cov << 1.0, 0.9, 0.9, 1.0;
    ChainConfig cfg;
    cfg.chains = 4;
    cfg.warmup_iters = 500;
    cfg.sampling_iters = 750;
    cfg.seed = 99;
    Draws d = run_nuts(cfg, 2, gaussian(cov));
    const auto x = coordinate(d, 0);
    const auto y = coordinate(d, 1);
    const double mx = mean(x), my = mean(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    CHECK(std::abs(sxy / std::sqrt(sxx * syy) - 0.9) <= 0.05);
}

TEST_CASE("identical seed gives bitwise identical draws; thread count is irrelevant") {
    ChainConfig cfg;
    cfg.chains = 4;
    cfg.warmup_iters = 200;
    cfg.sampling_iters = 200;
    cfg.seed = 777;
    cfg.threads = 1;
    Draws a = run_nuts(cfg, 3, standard_normal(3));
    cfg.threads = 4;
    Draws b = run_nuts(cfg, 3, standard_normal(3));
    CHECK(a.data == b.data);
    CHECK(a.accept_rate == b.accept_rate);
    CHECK(a.step_size == b.step_size);
}

TEST_CASE("5-d Gaussian calibration: means, rhat, divergences") {
    Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(5, 5);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j)
            if (i != j) cov(i, j) = 0.5 * std::pow(0.8, std::abs(i - j));
    Eigen::VectorXd scale(5);
    scale << 1.0, 2.0, 0.5, 1.5, 3.0;
    cov = scale.asDiagonal() * cov * scale.asDiagonal();

    ChainConfig cfg;
    cfg.chains = 4;
    cfg.warmup_iters = 600;
    cfg.sampling_iters = 600;
    cfg.seed = 4242;
    Draws d = run_nuts(cfg, 5, gaussian(cov));

    int total_div = 0;
    for (int c = 0; c < cfg.chains; ++c) total_div += d.divergences[c];
    CHECK(total_div == 0);

    for (int coord = 0; coord < 5; ++coord) {
        CHECK(rhat(d, coord) <= 1.01);
        const double se = std::sqrt(cov(coord, coord) / ess(d, coord));
        CHECK(std::abs(mean(coordinate(d, coord))) <= 3.0 * se);
    }
}

TEST_CASE("fixed-length leapfrog fallback also recovers the target") {
    ChainConfig cfg;
    cfg.chains = 2;
    cfg.warmup_iters = 500;
    cfg.sampling_iters = 1000;
    cfg.seed = 31;
    cfg.fixed_path_length = true;
    cfg.fixed_steps = 16;
    Draws d = run_nuts(cfg, 1, standard_normal(1));
    const auto x = coordinate(d, 0);
    CHECK(std::abs(mean(x)) <= 0.08);
    CHECK(variance(x) >= 0.85);
    CHECK(variance(x) <= 1.15);
}

TEST_CASE("rhat near one for iid chains, large under an offset chain") {
    Draws good = iid_draws(4, 500, 8);
    CHECK(rhat(good, 0) >= 0.99);
    CHECK(rhat(good, 0) <= 1.01);

    Draws bad = iid_draws(4, 500, 8, /*offset_last_chain=*/10.0);
    CHECK(rhat(bad, 0) > 1.5);
}

TEST_CASE("rhat requires at least two chains") {
    Draws single = iid_draws(1, 100, 3);
    CHECK_THROWS_AS(rhat(single, 0), InsufficientChains);
}

TEST_CASE("ess of iid draws is within 20% of the nominal draw count") {
    Draws d = iid_draws(4, 1000, 21);
    const double e = ess(d, 0);
    CHECK(e >= 0.8 * 4000.0);
    CHECK(e <= 1.2 * 4000.0);
}

TEST_CASE("nonfinite density at initialization raises after 100 redraws") {
    LogDensityGrad bad = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        g.setZero(x.size());
        return std::numeric_limits<double>::quiet_NaN();
    };
    ChainConfig cfg;
    cfg.chains = 1;
    cfg.warmup_iters = 10;
    cfg.sampling_iters = 10;
    CHECK_THROWS_AS(run_nuts(cfg, 2, bad), NonFiniteDensity);
}

TEST_CASE("draws binary round trip and csv export") {
    ChainConfig cfg;
    cfg.chains = 2;
    cfg.warmup_iters = 50;
    cfg.sampling_iters = 40;
    cfg.seed = 5;
    Draws d = run_nuts(cfg, 2, standard_normal(2));

    const auto dir = std::filesystem::temp_directory_path();
    const std::string bin = (dir / "msfpca_draws_test.bin").string();
    save_draws(bin, d, "layout: test");
    std::string meta;
    Draws back = load_draws(bin, &meta);
    CHECK(meta == "layout: test");
    CHECK(back.chains == d.chains);
    CHECK(back.iters == d.iters);
    CHECK(back.dim == d.dim);
    CHECK(back.data == d.data);
    CHECK(back.divergences == d.divergences);

    const std::string csv = (dir / "msfpca_draws_test.csv").string();
    export_draws_csv(csv, d, {"x0", "x1"});
    CHECK(std::filesystem::file_size(csv) > 0);
    std::filesystem::remove(bin);
    std::filesystem::remove(csv);
}

}  // TEST_SUITE
