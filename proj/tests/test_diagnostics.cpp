#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "msfpca/diagnostics.hpp"
#include "msfpca/errors.hpp"
#include "msfpca/rng.hpp"
#include "msfpca/simulate.hpp"
#include "msfpca/stats.hpp"

using namespace msfpca;

namespace {

// inverse-CDF sampler for the generalized Pareto with shape k, scale 1
std::vector<double> gpd_sample(double k, int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> x(n);
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        x[static_cast<std::size_t>(i)] =
            std::abs(k) < 1e-12 ? -std::log1p(-u) : (std::pow(1.0 - u, -k) - 1.0) / k;
    }
    return x;
}

MultiBlockDataset tiny_dataset(int n_subjects, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<ObservationRecord> rows;
    for (int i = 0; i < n_subjects; ++i)
        for (int v = 0; v < 4; ++v)
            rows.push_back({"s" + std::to_string(i), "b1", rng.uniform(), rng.normal()});
    return load_long_records(rows);
}

}  // namespace

TEST_SUITE("diagnostics") {

TEST_CASE("gpd fit recovers the shape (simulation oracle)") {
    auto heavy = gpd_sample(0.3, 1000, 17);
    GpdFit fit = fit_generalized_pareto(heavy);
    CHECK(fit.k >= 0.2);
    CHECK(fit.k <= 0.4);
    CHECK(fit.sigma > 0.0);

    auto expo = gpd_sample(0.0, 1000, 19);
    fit = fit_generalized_pareto(expo);
    CHECK(fit.k >= -0.1);
    CHECK(fit.k <= 0.1);
}

TEST_CASE("gpd fit degenerate and error paths") {
    CHECK_THROWS_AS(fit_generalized_pareto({1.0, 2.0}), InsufficientTail);
    GpdFit fit = fit_generalized_pareto({2.0, 2.0, 2.0, 2.0, 2.0, 2.0});
    CHECK(fit.k <= 0.0);  // sentinel for a zero-spread tail
}

TEST_CASE("pareto smoothing preserves tail order and leaves the bulk") {
    Rng rng(23);
    std::vector<double> lr(500);
    for (auto& v : lr) v = rng.normal() * 2.0;
    double khat = 0.0;
    std::vector<double> lw = pareto_smooth(lr, khat);
    REQUIRE(lw.size() == lr.size());

    std::vector<std::size_t> order(lr.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return lr[a] < lr[b]; });
    for (std::size_t j = 1; j < lr.size(); ++j)
        CHECK(lw[order[j - 1]] <= lw[order[j]] + 1e-12);  // monotone transform

    // untouched below the tail, truncated at the raw maximum
    const double lmax = *std::max_element(lr.begin(), lr.end());
    for (std::size_t j = 0; j + 100 < lr.size(); ++j)
        CHECK(lw[order[j]] == doctest::Approx(lr[order[j]] - lmax));
    for (double v : lw) CHECK(v <= 0.0);
}

TEST_CASE("psis_loo on constant log likelihoods") {
    Eigen::MatrixXd ll = Eigen::MatrixXd::Constant(200, 3, -4.2);
    LooReport rep = psis_loo(ll);
    for (int i = 0; i < 3; ++i) {
        CHECK(rep.pointwise[i] == doctest::Approx(-4.2).epsilon(1e-12));
        CHECK(rep.pareto_k[i] <= 0.0);
    }
    CHECK(rep.elpd_loo == doctest::Approx(-12.6).epsilon(1e-12));

    // self-normalized weights sum to one
    double khat = 0.0;
    std::vector<double> lr(200, 0.7);
    auto lw = pareto_smooth(lr, khat);
    double total = 0.0;
    const double norm = log_sum_exp(lw);
    for (double v : lw) total += std::exp(v - norm);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("psis_loo requires enough draws") {
    CHECK_THROWS_AS(psis_loo(Eigen::MatrixXd::Zero(50, 2)), TooFewDraws);
}

TEST_CASE("pointwise loglik: zero residual, consistency, empty subject") {
    ModelSpec spec = make_model_spec({1}, {4});
    Rng rng(37);
    Eigen::VectorXd theta_mu(4);
    for (int i = 0; i < 4; ++i) theta_mu[i] = rng.normal();
    std::vector<double> times = {0.1, 0.4, 0.9};
    const Eigen::VectorXd fitted = spec.bases[0].evaluate(times) * theta_mu;

    std::vector<ObservationRecord> rows;
    for (std::size_t v = 0; v < times.size(); ++v)
        rows.push_back({"s1", "b1", times[v], fitted[static_cast<Eigen::Index>(v)]});
    rows.push_back({"s2", "b1", 0.5, 1.3});
    MultiBlockDataset data = load_long_records(rows);
    // s3 exists with an empty series
    DatasetBuilder builder({"b1"}, {"s1", "s2", "s3"});
    for (int i = 0; i < 2; ++i) {
        Series s;
        for (std::size_t v = 0; v < data.count(i, 0); ++v) {
            s.times.push_back(data.series(i, 0).times[v]);
            s.values.push_back(data.series(i, 0).values[v]);
        }
        builder.set_series(i, 0, std::move(s));
    }
    Model model(builder.build(), spec);

    Eigen::VectorXd params = Eigen::VectorXd::Zero(model.dim());
    params.segment(0, 4) = theta_mu;
    const Eigen::VectorXd ll = model.pointwise_loglik(params);
    constexpr double kLog2Pi = 1.8378770664093454836;
    CHECK(ll[0] == doctest::Approx(-1.5 * kLog2Pi).epsilon(1e-12));  // zero residual, V=3
    CHECK(ll[2] == 0.0);                                             // empty series

    // sums reproduce the likelihood term
    Draws draws;
    draws.chains = 1;
    draws.iters = 3;
    draws.dim = model.dim();
    draws.data.resize(static_cast<std::size_t>(3) * model.dim());
    Rng prng(41);
    for (int t = 0; t < 3; ++t)
        for (int d = 0; d < model.dim(); ++d)
            draws.data[static_cast<std::size_t>(t) * model.dim() + d] = 0.5 * prng.normal();
    const Eigen::MatrixXd mat = pointwise_loglik(model, draws);
    for (int t = 0; t < 3; ++t)
        CHECK(mat.row(t).sum() ==
              doctest::Approx(model.log_likelihood(draws.draw(0, t))).epsilon(1e-8));
}

TEST_CASE("elpd_loo never exceeds the in-sample elpd") {
    Rng rng(47);
    Eigen::MatrixXd ll(300, 6);
    for (int s = 0; s < 300; ++s)
        for (int i = 0; i < 6; ++i) ll(s, i) = -2.0 + 0.8 * rng.normal();
    LooReport rep = psis_loo(ll);
    const auto in_sample = in_sample_elpd(ll);
    double in_total = 0.0;
    for (double v : in_sample) in_total += v;
    CHECK(rep.elpd_loo <= in_total + 1e-10);
}

TEST_CASE("posterior predictive: noiseless limit and design contract") {
    MultiBlockDataset data = tiny_dataset(3, 53);
    ModelSpec spec = make_model_spec({1}, {4});
    Model model(data, spec);

    RotatedDraws rotated;
    rotated.structure = BlockStructure({1});
    rotated.Q = {4};
    Rng rng(59);
    Eigen::VectorXd mu(4);
    for (int i = 0; i < 4; ++i) mu[i] = rng.normal();
    for (int s = 0; s < 10; ++s) {
        RotatedDraw d;
        d.theta = {Eigen::MatrixXd::Identity(4, 1)};
        d.alpha = Eigen::MatrixXd::Zero(3, 1);
        d.sigma = Eigen::MatrixXd::Identity(1, 1) * 1e-24;  // sigma_alpha -> 0
        d.R = Eigen::MatrixXd::Identity(1, 1);
        d.eigenvalues = Eigen::VectorXd::Ones(1);
        d.theta_mu = mu;
        d.sigma_eps = Eigen::VectorXd::Constant(1, 1e-14);  // sigma_eps -> 0
        rotated.draws.push_back(std::move(d));
    }

    PpcExport ppc = posterior_predictive(model, rotated, 5, 61);
    REQUIRE(ppc.replicated.size() == 5);
    for (int r = 0; r < 5; ++r) {
        std::size_t pos = 0;
        for (int i = 0; i < 3; ++i) {
            const Series& s = data.series(i, 0);
            const Eigen::VectorXd mean_curve = spec.bases[0].evaluate(s.times) * mu;
            for (std::size_t v = 0; v < s.size(); ++v, ++pos)
                CHECK(ppc.replicated[r][0][pos] ==
                      doctest::Approx(mean_curve[static_cast<Eigen::Index>(v)]).epsilon(1e-6));
        }
        CHECK(pos == ppc.replicated[r][0].size());  // same index set as observed
        CHECK(ppc.replicated[r][0].size() == ppc.observed[0].size());
    }
}

TEST_CASE("posterior predictive variance tracks the generative variance") {
    // simulate from the model, then replicate from the truth-as-draw
    ScenarioSpec sspec;
    sspec.scenario = Scenario::I;
    sspec.n_subjects = 200;
    sspec.seed = 67;
    ScenarioTruth truth = make_truth(sspec);
    MultiBlockDataset data = simulate_dataset(sspec, truth);
    ModelSpec spec = make_model_spec(sspec.K, sspec.Q);
    Model model(data, spec);

    RotatedDraws rotated;
    rotated.structure = truth.structure;
    rotated.Q = sspec.Q;
    for (int s = 0; s < 30; ++s) {
        RotatedDraw d;
        d.theta = truth.theta;
        d.alpha = Eigen::MatrixXd::Zero(200, truth.structure.total());
        d.sigma = truth.sigma;
        d.R = truth.R;
        d.eigenvalues = truth.sigma.diagonal();
        d.theta_mu = truth.theta_mu;
        d.sigma_eps = Eigen::VectorXd::Constant(1, truth.sigma_eps);
        rotated.draws.push_back(std::move(d));
    }
    PpcExport ppc = posterior_predictive(model, rotated, 30, 71);

    for (int p = 0; p < 3; ++p) {
        const double obs_var = variance(ppc.observed[p]);
        std::vector<double> pooled;
        for (const auto& rep : ppc.replicated)
            pooled.insert(pooled.end(), rep[p].begin(), rep[p].end());
        const double rep_var = variance(pooled);
        CHECK(rep_var / obs_var >= 0.8);
        CHECK(rep_var / obs_var <= 1.25);
    }
}

}  // TEST_SUITE
