#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "msfpca/covariance.hpp"
#include "msfpca/errors.hpp"
#include "msfpca/rng.hpp"

using namespace msfpca;

namespace {

// enumeration oracle over the lower-triangular index set
int count_free_oracle(const BlockStructure& st) {
    int n = st.total();
    for (int i = 0; i < st.total(); ++i)
        for (int j = 0; j < i; ++j)
            if (st.block_of(i) != st.block_of(j)) ++n;
    return n;
}

Eigen::VectorXd random_vector(int n, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = rng.normal();
    return v;
}

}  // namespace

TEST_SUITE("covariance") {

TEST_CASE("count_unconstrained") {
    CHECK(count_unconstrained(BlockStructure({1})) == 1);
    CHECK(count_unconstrained(BlockStructure({1, 1})) == 3);
    CHECK(count_unconstrained(BlockStructure({2, 2, 1})) == 13);
    for (auto K : {std::vector<int>{1}, {3}, {2, 1}, {2, 2, 1}, {1, 4, 2}}) {
        BlockStructure st(K);
        CHECK(count_unconstrained(st) == count_free_oracle(st));
    }
}

TEST_CASE("single-block scalar factor is exp(2) at zero") {
    ConstrainedCholesky f = build_factor(Eigen::VectorXd::Zero(1), BlockStructure({1}));
    CHECK(f.L(0, 0) == doctest::Approx(std::exp(2.0)).epsilon(1e-12));
}

TEST_CASE("zero input gives a scaled identity") {
    BlockStructure st({2, 1});
    ConstrainedCholesky f = build_factor(Eigen::VectorXd::Zero(count_unconstrained(st)), st);
    const double e2 = std::exp(2.0);
    CHECK((f.L - e2 * Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);
    ScoreCovariance sc = assemble(f);
    CHECK((sc.sigma - std::exp(4.0) * Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() <
          1e-10);
    CHECK((sc.R - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("within-block off-diagonals vanish (direct multiply oracle)") {
    BlockStructure st({2, 1});
    for (int trial = 0; trial < 50; ++trial) {
        const Eigen::VectorXd v = random_vector(count_unconstrained(st), 100 + trial);
        ConstrainedCholesky f = build_factor(v, st);
        const Eigen::MatrixXd sigma = f.L * f.L.transpose();
        CHECK(std::abs(sigma(0, 1)) < 1e-12);
    }
}

TEST_CASE("dimension mismatch") {
    CHECK_THROWS_AS(build_factor(Eigen::VectorXd::Zero(4), BlockStructure({2, 1})),
                    DimensionMismatch);
}

TEST_CASE("assemble: positive definite with identity within-block correlation sub-blocks") {
    BlockStructure st({2, 2, 1});
    for (int trial = 0; trial < 200; ++trial) {
        const Eigen::VectorXd v = 2.0 * random_vector(count_unconstrained(st), 7000 + trial);
        ScoreCovariance sc = assemble(build_factor(v, st));

        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sc.sigma);
        CHECK(eig.eigenvalues().minCoeff() > 0.0);

        CHECK((sc.sigma - sc.sds.asDiagonal() * sc.R * sc.sds.asDiagonal())
                  .cwiseAbs()
                  .maxCoeff() < 1e-10 * sc.sigma.cwiseAbs().maxCoeff());

        for (int p = 0; p < st.n_blocks(); ++p) {
            const int off = st.block_offset(p);
            const int kp = st.block_size(p);
            const Eigen::MatrixXd sub = sc.R.block(off, off, kp, kp);
            CHECK((sub - Eigen::MatrixXd::Identity(kp, kp)).cwiseAbs().maxCoeff() < 1e-10);
        }
    }
}

TEST_CASE("jacobian matches central finite differences") {
    BlockStructure st({2, 2, 1});
    const int nfree = count_unconstrained(st);
    const Eigen::VectorXd v = random_vector(nfree, 99);
    std::vector<Eigen::MatrixXd> jac;
    build_factor_with_jacobian(v, st, jac);

    const double h = 1e-6;
    for (int m = 0; m < nfree; ++m) {
        Eigen::VectorXd vp = v, vm = v;
        vp[m] += h;
        vm[m] -= h;
        const Eigen::MatrixXd fd =
            (build_factor(vp, st).L - build_factor(vm, st).L) / (2.0 * h);
        const double scale = std::max(1.0, jac[m].cwiseAbs().maxCoeff());
        CHECK((fd - jac[m]).cwiseAbs().maxCoeff() / scale < 1e-6);
    }
}

TEST_CASE("diagonal map constants are configurable") {
    DiagonalMap dm{1.0, 0.0};
    ConstrainedCholesky f = build_factor(Eigen::VectorXd::Constant(1, 0.5), BlockStructure({1}), dm);
    CHECK(f.L(0, 0) == doctest::Approx(std::exp(0.5)));
}

TEST_CASE("free parameter ordering: diagonals then row-major cross-block entries") {
    BlockStructure st({1, 1});
    Eigen::VectorXd v(3);
    v << 0.0, 0.0, 0.7;  // two diagonals, then L(1,0)
    ConstrainedCholesky f = build_factor(v, st);
    CHECK(f.L(1, 0) == 0.7);
    CHECK(f.L(0, 0) == doctest::Approx(std::exp(2.0)));
}

}  // TEST_SUITE
