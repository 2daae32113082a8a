#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>

#include "msfpca/errors.hpp"
#include "msfpca/model.hpp"
#include "msfpca/rng.hpp"

using namespace msfpca;

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

MultiBlockDataset toy_dataset(int n_subjects, const std::vector<int>& n_obs_per_block,
                              std::uint64_t seed) {
    Rng rng(seed);
    std::vector<ObservationRecord> rows;
    for (int i = 0; i < n_subjects; ++i)
        for (std::size_t p = 0; p < n_obs_per_block.size(); ++p)
            for (int v = 0; v < n_obs_per_block[p]; ++v)
                rows.push_back({"s" + std::to_string(i), "b" + std::to_string(p), rng.uniform(),
                                rng.normal()});
    return load_long_records(rows);
}

Eigen::VectorXd random_params(const Model& model, std::uint64_t seed, double scale = 0.7) {
    Rng rng(seed);
    Eigen::VectorXd x(model.dim());
    for (int d = 0; d < model.dim(); ++d) x[d] = scale * rng.normal();
    return x;
}

// independent dense reimplementation of the joint density: stacked
// block-diagonal basis and loading matrices, its own Crout recursion
double dense_oracle_logpost(const Model& model, const Eigen::VectorXd& params) {
    const auto& spec = model.spec();
    const auto& layout = model.layout();
    const auto& data = model.data();
    const int P = spec.n_blocks();
    const int K = layout.total_K();
    const int Q = layout.total_Q();
    const int N = layout.n_subjects();

    // rebuild L with an independent Crout recursion
    BlockStructure st(spec.K);
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(K, K);
    {
        const Eigen::VectorXd v = params.segment(layout.cov_offset(), layout.n_free_cov());
        for (int j = 0; j < K; ++j) L(j, j) = std::exp(0.5 * v[j] + 2.0);
        int idx = K;
        for (int i = 0; i < K; ++i)
            for (int j = 0; j < i; ++j)
                if (st.block_of(i) != st.block_of(j)) L(i, j) = v[idx++];
        for (int j = 0; j < K; ++j)
            for (int i = j + 1; i < K; ++i) {
                if (st.block_of(i) != st.block_of(j)) continue;
                double acc = 0.0;
                for (int k = 0; k < j; ++k) acc += L(i, k) * L(j, k);
                L(i, j) = (0.0 - acc) / L(j, j);
            }
    }

    // stacked theta (block diagonal) and mean coefficients
    Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(Q, K);
    int qo = 0, ko = 0;
    for (int p = 0; p < P; ++p) {
        theta.block(qo, ko, spec.Q[p], spec.K[p]) =
            Eigen::Map<const Eigen::MatrixXd>(params.data() + layout.theta_raw_offset(p),
                                              spec.Q[p], spec.K[p]);
        qo += spec.Q[p];
        ko += spec.K[p];
    }
    const Eigen::VectorXd theta_mu = params.segment(layout.theta_mu_offset(0), Q);
    const double s = params[layout.sigma_offset()];
    const double sigma = std::exp(s);

    double logp = 0.0;
    for (int i = 0; i < N; ++i) {
        // stacked block-diagonal B_i and stacked y_i
        int vi = 0;
        for (int p = 0; p < P; ++p) vi += static_cast<int>(data.count(i, p));
        Eigen::MatrixXd B = Eigen::MatrixXd::Zero(vi, Q);
        Eigen::VectorXd y(vi);
        int row = 0;
        qo = 0;
        for (int p = 0; p < P; ++p) {
            const Series& ser = data.series(i, p);
            if (!ser.empty()) {
                B.block(row, qo, static_cast<int>(ser.size()), spec.Q[p]) =
                    spec.bases[p].evaluate(ser.times);
                for (std::size_t k = 0; k < ser.size(); ++k) y[row + static_cast<int>(k)] = ser.values[k];
                row += static_cast<int>(ser.size());
            }
            qo += spec.Q[p];
        }
        const Eigen::VectorXd alpha = params.segment(layout.alpha_offset(i), K);
        const Eigen::VectorXd fitted = B * theta_mu + B * theta * alpha;
        const double sq = (y - fitted).squaredNorm();
        logp += -0.5 * vi * kLog2Pi - vi * s - 0.5 * sq / (sigma * sigma);

        // score prior N(0, L L^T) via manual forward substitution
        Eigen::VectorXd w(K);
        for (int r = 0; r < K; ++r) {
            double acc = alpha[r];
            for (int c = 0; c < r; ++c) acc -= L(r, c) * w[c];
            w[r] = acc / L(r, r);
        }
        double logdet = 0.0;
        for (int j = 0; j < K; ++j) logdet += std::log(L(j, j));
        logp += -0.5 * w.squaredNorm() - logdet - 0.5 * K * kLog2Pi;
    }

    // priors, summed with plain loops
    for (int q = 0; q < Q; ++q) logp += -0.5 * theta_mu[q] * theta_mu[q] - 0.5 * kLog2Pi;
    int n_load = 0;
    for (int p = 0; p < P; ++p) n_load += spec.Q[p] * spec.K[p];
    for (int j = 0; j < n_load; ++j) {
        const double v = params[layout.theta_raw_offset(0) + j];
        logp += -0.5 * v * v - 0.5 * kLog2Pi;
    }
    logp += std::log(2.0 / std::numbers::pi) - std::log1p(sigma * sigma) + s;
    return logp;
}

void check_gradient(const Model& model, const Eigen::VectorXd& x, double tol = 1e-6) {
    Eigen::VectorXd grad;
    model.log_posterior_grad(x, grad);
    const double h = 1e-5;
    Eigen::VectorXd xp = x, xm = x;
    for (int d = 0; d < model.dim(); ++d) {
        xp[d] = x[d] + h;
        xm[d] = x[d] - h;
        const double fd = (model.log_posterior(xp) - model.log_posterior(xm)) / (2.0 * h);
        xp[d] = x[d];
        xm[d] = x[d];
        const double denom = std::max({1.0, std::abs(grad[d]), std::abs(fd)});
        CHECK(std::abs(fd - grad[d]) / denom < tol);
    }
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("zero-residual subject gives the closed-form likelihood term") {
    ModelSpec spec = make_model_spec({1}, {4});
    Rng rng(5);
    std::vector<double> times = {0.1, 0.3, 0.5, 0.7, 0.9};
    Eigen::VectorXd theta_mu(4);
    for (int i = 0; i < 4; ++i) theta_mu[i] = rng.normal();
    const Eigen::VectorXd fitted = spec.bases[0].evaluate(times) * theta_mu;

    std::vector<ObservationRecord> rows;
    for (std::size_t v = 0; v < times.size(); ++v)
        rows.push_back({"s1", "b1", times[v], fitted[static_cast<Eigen::Index>(v)]});
    Model model(load_long_records(rows), spec);

    Eigen::VectorXd params = Eigen::VectorXd::Zero(model.dim());
    params.segment(0, 4) = theta_mu;  // z = 0, log_sigma = 0
    const double expected = -0.5 * 5.0 * kLog2Pi;  // V/2 log 2pi, sigma = 1
    CHECK(model.log_likelihood(params) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("prior-only value matches a hand-summed oracle on an empty dataset") {
    ModelSpec spec = make_model_spec({1}, {4});
    DatasetBuilder builder({"b1"}, {});
    Model model(builder.build(), spec);
    Eigen::VectorXd params = Eigen::VectorXd::Zero(model.dim());
    // theta_mu: Q=4 standard normals at 0; loadings: 4; sigma: half-Cauchy at 1
    const double expected = -0.5 * 4.0 * kLog2Pi - 0.5 * 4.0 * kLog2Pi +
                            std::log(2.0 / std::numbers::pi) - std::log(2.0);
    CHECK(model.log_posterior(params) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("matches the independent dense oracle") {
    MultiBlockDataset data = toy_dataset(2, {3, 3}, 17);
    ModelSpec spec = make_model_spec({2, 1}, {5, 4});
    Model model(data, spec);
    for (int trial = 0; trial < 5; ++trial) {
        const Eigen::VectorXd x = random_params(model, 300 + trial);
        const double got = model.log_posterior(x);
        const double expected = dense_oracle_logpost(model, x);
        CHECK(got == doctest::Approx(expected).epsilon(1e-10));
    }
}

TEST_CASE("gradient matches finite differences for all structures") {
    struct Case {
        std::vector<int> K, Q;
    };
    for (const Case& c : {Case{{1}, {4}}, Case{{2, 1}, {5, 4}}, Case{{2, 2, 1}, {6, 5, 5}}}) {
        MultiBlockDataset data = toy_dataset(3, std::vector<int>(c.K.size(), 4), 23);
        Model model(data, make_model_spec(c.K, c.Q));
        for (int trial = 0; trial < 5; ++trial)
            check_gradient(model, random_params(model, 40 + trial));
    }
}

TEST_CASE("gradient with per-block sigma") {
    MultiBlockDataset data = toy_dataset(3, {4, 4}, 29);
    Model model(data, make_model_spec({2, 1}, {5, 4}, /*per_block_sigma=*/true));
    CHECK(model.layout().n_sigma() == 2);
    for (int trial = 0; trial < 3; ++trial)
        check_gradient(model, random_params(model, 70 + trial));
}

TEST_CASE("gradient of the prior-only posterior vanishes at the origin") {
    ModelSpec spec = make_model_spec({2, 1}, {5, 4});
    DatasetBuilder builder({"b1", "b2"}, {});
    Model model(builder.build(), spec);
    Eigen::VectorXd grad;
    model.log_posterior_grad(Eigen::VectorXd::Zero(model.dim()), grad);
    CHECK(grad.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("invariant to subject reordering") {
    Rng rng(31);
    std::vector<ObservationRecord> rows;
    for (int i = 0; i < 4; ++i)
        for (int v = 0; v < 3; ++v)
            rows.push_back({"s" + std::to_string(i), "b1", rng.uniform(), rng.normal()});
    MultiBlockDataset data = load_long_records(rows);

    // reorder subjects: move the last subject first
    std::vector<ObservationRecord> reordered;
    for (const auto& r : rows)
        if (r.subject_id == "s3") reordered.push_back(r);
    for (const auto& r : rows)
        if (r.subject_id != "s3") reordered.push_back(r);
    MultiBlockDataset data2 = load_long_records(reordered);

    ModelSpec spec = make_model_spec({1}, {4});
    Model m1(data, spec);
    Model m2(data2, spec);
    const Eigen::VectorXd x = random_params(m1, 77);

    // permute the per-subject score segments to match the new subject order
    Eigen::VectorXd x2 = x;
    const auto& l1 = m1.layout();
    const auto& l2 = m2.layout();
    for (std::size_t i2 = 0; i2 < data2.n_subjects(); ++i2) {
        const auto& sid = data2.subjects()[i2];
        const auto it = std::find(data.subjects().begin(), data.subjects().end(), sid);
        const int i1 = static_cast<int>(it - data.subjects().begin());
        x2.segment(l2.alpha_offset(static_cast<int>(i2)), l2.total_K()) =
            x.segment(l1.alpha_offset(i1), l1.total_K());
    }
    CHECK(m1.log_posterior(x) == doctest::Approx(m2.log_posterior(x2)).epsilon(1e-13));
}

TEST_CASE("finite for extreme parameter values") {
    MultiBlockDataset data = toy_dataset(2, {3}, 41);
    Model model(data, make_model_spec({1}, {4}));
    Eigen::VectorXd x = Eigen::VectorXd::Constant(model.dim(), 8.0);
    CHECK(std::isfinite(model.log_posterior(x)));
    x.setConstant(-8.0);
    CHECK(std::isfinite(model.log_posterior(x)));
}

TEST_CASE("doubling residuals quadruples the residual term of the sigma gradient") {
    ModelSpec spec = make_model_spec({1}, {4});
    Rng rng(53);
    std::vector<double> times = {0.2, 0.4, 0.6, 0.8};
    Eigen::VectorXd theta_mu(4);
    for (int i = 0; i < 4; ++i) theta_mu[i] = rng.normal();
    const Eigen::VectorXd fitted = spec.bases[0].evaluate(times) * theta_mu;

    auto build = [&](double resid_scale) {
        std::vector<ObservationRecord> rows;
        for (std::size_t v = 0; v < times.size(); ++v)
            rows.push_back({"s1", "b1", times[v],
                            fitted[static_cast<Eigen::Index>(v)] + resid_scale * (v % 2 ? 1.0 : -1.0)});
        return load_long_records(rows);
    };
    Model m1(build(0.3), spec);
    Model m2(build(0.6), spec);
    Eigen::VectorXd params = Eigen::VectorXd::Zero(m1.dim());
    params.segment(0, 4) = theta_mu;

    // residual contribution = total sigma gradient minus the residual-free parts
    const double base = -4.0 + (-2.0 * 1.0 / 2.0) + 1.0;  // -V - 2 sigma^2/(1+sigma^2) + 1 at s=0
    Eigen::VectorXd g1, g2;
    m1.log_posterior_grad(params, g1);
    m2.log_posterior_grad(params, g2);
    const int sd = m1.layout().sigma_offset();
    CHECK(g2[sd] - base == doctest::Approx(4.0 * (g1[sd] - base)).epsilon(1e-9));
}

TEST_CASE("dimension mismatch raises") {
    MultiBlockDataset data = toy_dataset(2, {3}, 59);
    Model model(data, make_model_spec({1}, {4}));
    CHECK_THROWS_AS(model.log_posterior(Eigen::VectorXd::Zero(model.dim() + 1)),
                    DimensionMismatch);
}

TEST_CASE("spec mismatch against data blocks") {
    MultiBlockDataset data = toy_dataset(2, {3, 3}, 61);
    CHECK_THROWS_AS(Model(data, make_model_spec({1}, {4})), SpecMismatch);
}

}  // TEST_SUITE
