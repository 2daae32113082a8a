#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "msfpca/association.hpp"
#include "msfpca/errors.hpp"
#include "msfpca/rng.hpp"
#include "msfpca/simulate.hpp"
#include "msfpca/stats.hpp"

using namespace msfpca;

TEST_SUITE("association") {

TEST_CASE("independent blocks have zero MI") {
    BlockStructure st({2, 2, 1});
    const Eigen::MatrixXd R = Eigen::MatrixXd::Identity(5, 5);
    CHECK(marginal_mi(R, st, 0, 1) == 0.0);
    CHECK(conditional_mi(R, st, 0, 2) == doctest::Approx(0.0));
}

TEST_CASE("single cross-correlation: closed form and normalization identity") {
    BlockStructure st({1, 1});
    for (double r : {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.75, 0.8, 0.9}) {
        Eigen::MatrixXd R = Eigen::MatrixXd::Identity(2, 2);
        R(0, 1) = R(1, 0) = r;
        const double mi = marginal_mi(R, st, 0, 1);
        CHECK(mi == doctest::Approx(-0.5 * std::log1p(-r * r)).epsilon(1e-14));
        CHECK(std::abs(normalize_mi(mi) - r) < 1e-12);
    }
}

TEST_CASE("symmetry is exact") {
    ScenarioTruth truth = scenario_sigma(Scenario::IV);
    for (int p1 = 0; p1 < 3; ++p1)
        for (int p2 = p1 + 1; p2 < 3; ++p2) {
            CHECK(marginal_mi(truth.R, truth.structure, p1, p2) ==
                  marginal_mi(truth.R, truth.structure, p2, p1));
            CHECK(conditional_mi(truth.R, truth.structure, p1, p2) ==
                  conditional_mi(truth.R, truth.structure, p2, p1));
        }
}

TEST_CASE("conditional equals marginal when P = 2") {
    BlockStructure st({2, 1});
    Rng rng(3);
    Eigen::VectorXd v(count_unconstrained(st));
    for (int i = 0; i < v.size(); ++i) v[i] = 0.5 * rng.normal();
    const Eigen::MatrixXd R = assemble(build_factor(v, st)).R;
    CHECK(conditional_mi(R, st, 0, 1) ==
          doctest::Approx(marginal_mi(R, st, 0, 1)).epsilon(1e-12));
}

TEST_CASE("scenario truth tables") {
    // Table 1 truths
    ScenarioTruth s1 = scenario_sigma(Scenario::I);
    for (double v : s1.mi) CHECK(v == 0.0);
    ScenarioTruth s2 = scenario_sigma(Scenario::II);
    CHECK(s2.mi[0] == doctest::Approx(0.0));        // MI12
    CHECK(s2.mi[1] == doctest::Approx(0.0));        // MI13
    CHECK(std::abs(s2.mi[2] - 0.75) < 1e-12);       // MI23
    ScenarioTruth s3 = scenario_sigma(Scenario::III);
    CHECK(std::abs(s3.mi[0] - 0.5) < 1e-12);
    CHECK(s3.mi[1] == doctest::Approx(0.0));
    CHECK(std::abs(s3.mi[2] - 0.75) < 1e-12);
    ScenarioTruth s4 = scenario_sigma(Scenario::IV);
    CHECK(std::abs(s4.mi[0] - 0.5) < 1e-12);
    CHECK(std::abs(s4.mi[1] - 0.25) < 1e-12);
    CHECK(std::abs(s4.mi[2] - 0.75) < 1e-12);

    // Table 2 truths, two decimals
    CHECK(s3.cmi[0] == doctest::Approx(0.76).epsilon(0.005));
    CHECK(s3.cmi[1] == doctest::Approx(0.66).epsilon(0.005));
    CHECK(s3.cmi[2] == doctest::Approx(0.87).epsilon(0.005));
    CHECK(s4.cmi[0] == doctest::Approx(0.81).epsilon(0.005));
    CHECK(s4.cmi[1] == doctest::Approx(0.76).epsilon(0.005));
    CHECK(s4.cmi[2] == doctest::Approx(0.89).epsilon(0.005));
    // scenario II: conditional equals marginal placement-wise
    CHECK(s2.cmi[0] == doctest::Approx(0.0));
    CHECK(std::abs(s2.cmi[2] - 0.75) < 1e-12);
}

TEST_CASE("conditioning on a common correlate induces dependence") {
    ScenarioTruth s3 = scenario_sigma(Scenario::III);
    CHECK(marginal_mi(s3.R, s3.structure, 0, 2) == doctest::Approx(0.0));
    CHECK(conditional_mi(s3.R, s3.structure, 0, 2) > 0.1);
}

TEST_CASE("normalize maps [0, inf) onto [0, 1) monotonically") {
    CHECK(normalize_mi(0.0) == 0.0);
    double prev = -1.0;
    for (double mi = 0.0; mi <= 8.0; mi += 0.25) {
        const double v = normalize_mi(mi);
        CHECK(v >= 0.0);
        CHECK(v < 1.0);
        CHECK(v > prev);
        prev = v;
    }
    // bounded limit (saturates to 1 within double precision)
    CHECK(normalize_mi(40.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(normalize_mi(40.0) <= 1.0);
    CHECK_THROWS_AS(normalize_mi(-0.5), NegativeMI);
    CHECK(normalize_mi(-1e-12) == 0.0);  // roundoff tolerance
}

TEST_CASE("indefinite submatrix raises, exactly singular saturates") {
    BlockStructure st({1, 1});
    Eigen::MatrixXd bad(2, 2);
    bad << 1.0, 1.2, 1.2, 1.0;  // min eigenvalue -0.2, beyond the -1e-10 tolerance
    CHECK_THROWS_AS(marginal_mi(bad, st, 0, 1), SingularSubmatrix);

    Eigen::MatrixXd singular(2, 2);
    singular << 1.0, 1.0, 1.0, 1.0;  // PSD with a zero eigenvalue: MI saturates
    const double mi = marginal_mi(singular, st, 0, 1);
    CHECK(mi > 100.0);
    CHECK(normalize_mi(mi) == doctest::Approx(1.0));
}

TEST_CASE("posterior association: degenerate and uniform-r posteriors") {
    BlockStructure st({1, 1});
    RotatedDraws draws;
    draws.structure = st;
    draws.Q = {4, 4};

    auto make_draw = [&](double r) {
        RotatedDraw d;
        d.R = Eigen::MatrixXd::Identity(2, 2);
        d.R(0, 1) = d.R(1, 0) = r;
        d.sigma = d.R;
        d.alpha = Eigen::MatrixXd::Zero(1, 2);
        d.eigenvalues = Eigen::VectorXd::Ones(2);
        d.theta = {Eigen::MatrixXd::Identity(4, 1), Eigen::MatrixXd::Identity(4, 1)};
        d.theta_mu = Eigen::VectorXd::Zero(8);
        d.sigma_eps = Eigen::VectorXd::Ones(1);
        return d;
    };

    // all draws share one R: zero-width interval
    for (int s = 0; s < 50; ++s) draws.draws.push_back(make_draw(0.6));
    auto est = posterior_association(draws, {{0, 1}}, MiKind::Marginal);
    CHECK(est[0].median == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(est[0].lo == doctest::Approx(est[0].hi).epsilon(1e-12));

    // r uniform on (0.7, 0.8): median 0.75, interval about (0.7025, 0.7975)
    draws.draws.clear();
    const int n = 20000;
    for (int s = 0; s < n; ++s)
        draws.draws.push_back(make_draw(0.7 + 0.1 * (s + 0.5) / n));
    est = posterior_association(draws, {{0, 1}}, MiKind::Marginal);
    CHECK(est[0].median == doctest::Approx(0.75).epsilon(1e-3));
    CHECK(est[0].lo == doctest::Approx(0.7025).epsilon(1e-3));
    CHECK(est[0].hi == doctest::Approx(0.7975).epsilon(1e-3));
}

}  // TEST_SUITE
