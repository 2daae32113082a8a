#include "msfpca/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "msfpca/association.hpp"
#include "msfpca/errors.hpp"
#include "msfpca/rng.hpp"

namespace msfpca {

Scenario scenario_from_string(const std::string& name) {
    if (name == "I" || name == "1") return Scenario::I;
    if (name == "II" || name == "2") return Scenario::II;
    if (name == "III" || name == "3") return Scenario::III;
    if (name == "IV" || name == "4") return Scenario::IV;
    throw InvalidArgument("unknown scenario '" + name + "' (expected I, II, III or IV)");
}

std::string to_string(Scenario s) {
    switch (s) {
        case Scenario::I: return "I";
        case Scenario::II: return "II";
        case Scenario::III: return "III";
        case Scenario::IV: return "IV";
    }
    return "?";
}

void ScenarioSpec::validate() const {
    if (n_subjects < 1) throw InvalidArgument("n_subjects must be positive");
    if (n_timepoints < 2) throw InvalidArgument("n_timepoints must be >= 2");
    if (!(mean_rate <= n_timepoints))
        throw InvalidArgument("mean_rate must not exceed n_timepoints");
    if (K.size() != Q.size() || K.empty()) throw InvalidArgument("K and Q must match");
}

ScenarioTruth scenario_sigma(Scenario scenario) {
    ScenarioTruth truth;
    truth.structure = BlockStructure({2, 2, 1});
    const int K = truth.structure.total();

    truth.sds.resize(K);
    truth.sds << 2.0, 1.0, 2.0, 1.0, 1.5;

    truth.R = Eigen::MatrixXd::Identity(K, K);
    auto set_corr = [&](int a, int b, double r) {
        truth.R(a, b) = r;
        truth.R(b, a) = r;
    };
    // component indices: 0,1 = block1 pc1,pc2; 2,3 = block2; 4 = block3
    if (scenario != Scenario::I) set_corr(2, 4, 0.75);
    if (scenario == Scenario::III || scenario == Scenario::IV) set_corr(0, 2, 0.5);
    if (scenario == Scenario::IV) set_corr(1, 4, 0.25);

    truth.sigma = truth.sds.asDiagonal() * truth.R * truth.sds.asDiagonal();

    for (int p1 = 0; p1 < truth.structure.n_blocks(); ++p1)
        for (int p2 = p1 + 1; p2 < truth.structure.n_blocks(); ++p2) {
            truth.pairs.emplace_back(p1, p2);
            truth.mi.push_back(normalize_mi(marginal_mi(truth.R, truth.structure, p1, p2)));
            truth.cmi.push_back(normalize_mi(conditional_mi(truth.R, truth.structure, p1, p2)));
        }
    return truth;
}

void default_truth_parameters(const BlockStructure& structure, const std::vector<int>& Q,
                              Eigen::VectorXd& theta_mu, std::vector<Eigen::MatrixXd>& theta,
                              double& sigma_eps) {
    const int P = structure.n_blocks();
    if (static_cast<int>(Q.size()) != P) throw DimensionMismatch("Q size mismatch");

    int q_total = 0;
    for (int q : Q) q_total += q;
    theta_mu.resize(q_total);
    int off = 0;
    for (int p = 0; p < P; ++p) {
        // mean coefficients = projection of a fixed one-cycle cosine onto the
        // orthonormal basis; amplitude 2.6 keeps curves within +-3 while the
        // curve norm stays large relative to posterior identification noise
        OrthonormalBasis basis = orthonormalize(SplineBasisSpec::equally_spaced(Q[p]), 1001);
        const Eigen::MatrixXd on_grid = basis.evaluate(basis.grid());
        Eigen::VectorXd target(on_grid.rows());
        for (Eigen::Index g = 0; g < target.size(); ++g)
            target[g] = 2.6 * std::cos(2.0 * std::numbers::pi * basis.grid()[g] + 0.4 + 0.5 * p);
        theta_mu.segment(off, Q[p]) =
            on_grid.transpose() * target / static_cast<double>(on_grid.rows());
        off += Q[p];
    }

    theta.clear();
    for (int p = 0; p < P; ++p) {
        const int Kp = structure.block_size(p);
        Rng rng(split_seed(0xA5F0C0DEULL, static_cast<std::uint64_t>(p)));
        Eigen::MatrixXd raw(Q[p], Kp);
        for (int c = 0; c < Kp; ++c)
            for (int r = 0; r < Q[p]; ++r) raw(r, c) = rng.normal();
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
        Eigen::MatrixXd q_factor = qr.householderQ() * Eigen::MatrixXd::Identity(Q[p], Kp);
        for (int c = 0; c < Kp; ++c)
            if (qr.matrixQR()(c, c) < 0.0) q_factor.col(c) = -q_factor.col(c);
        theta.push_back(std::move(q_factor));
    }
    sigma_eps = 0.5;
}

ScenarioTruth make_truth(const ScenarioSpec& spec) {
    spec.validate();
    if (spec.K != std::vector<int>{2, 2, 1})
        throw InvalidArgument("scenario truths are defined for K = (2,2,1)");
    ScenarioTruth truth = scenario_sigma(spec.scenario);
    default_truth_parameters(truth.structure, spec.Q, truth.theta_mu, truth.theta,
                             truth.sigma_eps);
    return truth;
}

MultiBlockDataset simulate_dataset(const ScenarioSpec& spec, const ScenarioTruth& truth) {
    spec.validate();
    const int P = truth.structure.n_blocks();
    const int K = truth.structure.total();
    const int T = spec.n_timepoints;

    std::vector<OrthonormalBasis> bases;
    for (int q : spec.Q) bases.push_back(orthonormalize(SplineBasisSpec::equally_spaced(q), spec.grid_size));

    std::vector<double> candidates(T);
    for (int c = 0; c < T; ++c)
        candidates[c] = static_cast<double>(c) / static_cast<double>(T - 1);
    std::vector<Eigen::MatrixXd> candidate_rows(P);
    for (int p = 0; p < P; ++p) candidate_rows[p] = bases[p].evaluate(candidates);

    Eigen::LLT<Eigen::MatrixXd> llt(truth.sigma);
    if (llt.info() != Eigen::Success)
        throw SingularSubmatrix("scenario covariance is not positive definite");
    const Eigen::MatrixXd chol = llt.matrixL();

    std::vector<std::string> subjects, blocks;
    for (int i = 0; i < spec.n_subjects; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "s%04d", i + 1);
        subjects.emplace_back(buf);
    }
    for (int p = 0; p < P; ++p) blocks.push_back("b" + std::to_string(p + 1));

    DatasetBuilder builder(blocks, subjects);
    Rng rng(spec.seed);
    Eigen::VectorXd alpha(K);
    std::vector<int> pool(T);

    for (int i = 0; i < spec.n_subjects; ++i) {
        for (int k = 0; k < K; ++k) alpha[k] = rng.normal();
        alpha = chol * alpha;

        int shared_n = 0;
        if (spec.shared_counts) shared_n = std::clamp(rng.poisson(spec.mean_rate), 2, T);

        int q_off = 0;
        for (int p = 0; p < P; ++p) {
            const int n_obs =
                spec.shared_counts ? shared_n : std::clamp(rng.poisson(spec.mean_rate), 2, T);

            // partial Fisher-Yates for a uniform subset of candidate indices
            for (int c = 0; c < T; ++c) pool[c] = c;
            for (int c = 0; c < n_obs; ++c) {
                const int j = c + static_cast<int>(rng.below(static_cast<std::uint64_t>(T - c)));
                std::swap(pool[c], pool[j]);
            }
            std::vector<int> chosen(pool.begin(), pool.begin() + n_obs);
            std::sort(chosen.begin(), chosen.end());

            const int Qp = spec.Q[p];
            Eigen::VectorXd coef = truth.theta_mu.segment(q_off, Qp);
            coef.noalias() += truth.theta[p] * alpha.segment(truth.structure.block_offset(p),
                                                             truth.structure.block_size(p));
            Series s;
            s.times.reserve(n_obs);
            s.values.reserve(n_obs);
            for (int idx : chosen) {
                const double fitted = candidate_rows[p].row(idx).dot(coef);
                s.times.push_back(candidates[idx]);
                s.values.push_back(fitted + truth.sigma_eps * rng.normal());
            }
            builder.set_series(i, p, std::move(s));
            q_off += Qp;
        }
    }
    return builder.build();
}

void write_truth_csv(const std::string& path, const ScenarioTruth& truth) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.precision(12);
    out << "quantity,i,j,value\n";
    const int K = truth.structure.total();
    for (int r = 0; r < K; ++r)
        for (int c = 0; c < K; ++c) out << "sigma," << r << ',' << c << ',' << truth.sigma(r, c) << '\n';
    for (int r = 0; r < K; ++r)
        for (int c = 0; c < K; ++c) out << "R," << r << ',' << c << ',' << truth.R(r, c) << '\n';
    for (std::size_t q = 0; q < truth.pairs.size(); ++q) {
        out << "mi," << truth.pairs[q].first << ',' << truth.pairs[q].second << ',' << truth.mi[q]
            << '\n';
        out << "cmi," << truth.pairs[q].first << ',' << truth.pairs[q].second << ','
            << truth.cmi[q] << '\n';
    }
    out << "sigma_eps,0,0," << truth.sigma_eps << '\n';
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace msfpca
