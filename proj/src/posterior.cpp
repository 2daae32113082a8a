#include "msfpca/posterior.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "msfpca/errors.hpp"
#include "msfpca/stats.hpp"

namespace msfpca {

RotatedDraw rotate_draw(const std::vector<Eigen::MatrixXd>& theta_blocks,
                        const ScoreCovariance& score_cov, const Eigen::MatrixXd& scores,
                        const BlockStructure& structure) {
    const int P = structure.n_blocks();
    const int K = structure.total();
    if (static_cast<int>(theta_blocks.size()) != P)
        throw DimensionMismatch("loadings block count mismatch");
    if (score_cov.sigma.rows() != K || scores.cols() != K)
        throw DimensionMismatch("score covariance / scores dimension mismatch");

    RotatedDraw out;
    out.theta.resize(P);
    out.eigenvalues.resize(K);

    // per-block rotation G_p = Theta*_p^T Theta_p
    std::vector<Eigen::MatrixXd> G(P);
    for (int p = 0; p < P; ++p) {
        const int Kp = structure.block_size(p);
        const int off = structure.block_offset(p);
        const Eigen::MatrixXd& theta_p = theta_blocks[p];
        if (theta_p.cols() != Kp) throw DimensionMismatch("loadings column count mismatch");

        const Eigen::MatrixXd sigma_pp = score_cov.sigma.block(off, off, Kp, Kp);
        const Eigen::MatrixXd m = theta_p * sigma_pp * theta_p.transpose();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
        if (eig.info() != Eigen::Success)
            throw RankDeficientLoadings("eigendecomposition failed for block " + std::to_string(p));

        const Eigen::Index Qp = theta_p.rows();
        Eigen::MatrixXd vecs(Qp, Kp);
        for (int k = 0; k < Kp; ++k) {
            // Eigen returns ascending order; take the top K_p, descending
            const Eigen::Index src = Qp - 1 - k;
            out.eigenvalues[off + k] = eig.eigenvalues()[src];
            vecs.col(k) = eig.eigenvectors().col(src);
        }
        if (!(out.eigenvalues[off + Kp - 1] > 1e-12 * std::abs(out.eigenvalues[off])))
            throw RankDeficientLoadings("block " + std::to_string(p) +
                                        " loadings do not have full column rank");
        out.theta[p] = vecs;
        G[p] = vecs.transpose() * theta_p;
    }

    // apply the block-diagonal rotation to scores and covariance
    out.alpha.resize(scores.rows(), K);
    out.sigma.resize(K, K);
    for (int p = 0; p < P; ++p) {
        const int off = structure.block_offset(p);
        const int Kp = structure.block_size(p);
        out.alpha.middleCols(off, Kp) = scores.middleCols(off, Kp) * G[p].transpose();
        for (int q = 0; q < P; ++q) {
            const int off_q = structure.block_offset(q);
            const int Kq = structure.block_size(q);
            out.sigma.block(off, off_q, Kp, Kq) =
                G[p] * score_cov.sigma.block(off, off_q, Kp, Kq) * G[q].transpose();
        }
    }
    out.R = decompose_covariance(out.sigma).R;
    return out;
}

RotatedDraws rotate_all(const Model& model, const Draws& draws) {
    const ParameterLayout& layout = model.layout();
    RotatedDraws out;
    out.structure = BlockStructure(model.spec().K);
    out.Q = model.spec().Q;
    out.chains = draws.chains;
    out.draws.reserve(draws.n_draws());

    const int P = model.spec().n_blocks();
    for (std::size_t s = 0; s < draws.n_draws(); ++s) {
        const Eigen::VectorXd params = draws.draw(s);
        std::vector<Eigen::MatrixXd> theta_blocks(P);
        for (int p = 0; p < P; ++p) theta_blocks[p] = model.theta_block(params, p);
        RotatedDraw r = rotate_draw(theta_blocks, assemble(model.factor(params)),
                                    model.scores_alpha(params), out.structure);
        r.theta_mu = params.segment(layout.theta_mu_offset(0), layout.total_Q());
        r.sigma_eps.resize(layout.n_sigma());
        for (int g = 0; g < layout.n_sigma(); ++g)
            r.sigma_eps[g] = std::exp(params[layout.sigma_offset() + g]);
        out.draws.push_back(std::move(r));
    }
    return out;
}

namespace {

// flip the sign of component j (global index) everywhere it appears
void flip_component(RotatedDraw& d, const BlockStructure& structure, int j) {
    const int p = structure.block_of(j);
    const int local = j - structure.block_offset(p);
    d.theta[p].col(local) = -d.theta[p].col(local);
    d.alpha.col(j) = -d.alpha.col(j);
    d.sigma.row(j) = -d.sigma.row(j);
    d.sigma.col(j) = -d.sigma.col(j);
    d.R.row(j) = -d.R.row(j);
    d.R.col(j) = -d.R.col(j);
}

void align_to_reference(RotatedDraws& rotated, const std::vector<Eigen::MatrixXd>& ref) {
    const BlockStructure& st = rotated.structure;
    for (auto& d : rotated.draws)
        for (int p = 0; p < st.n_blocks(); ++p)
            for (int k = 0; k < st.block_size(p); ++k)
                if (d.theta[p].col(k).dot(ref[p].col(k)) < 0.0)
                    flip_component(d, st, st.block_offset(p) + k);
}

std::vector<Eigen::MatrixXd> mean_loadings(const RotatedDraws& rotated) {
    std::vector<Eigen::MatrixXd> m;
    for (std::size_t p = 0; p < rotated.draws.front().theta.size(); ++p)
        m.push_back(Eigen::MatrixXd::Zero(rotated.draws.front().theta[p].rows(),
                                          rotated.draws.front().theta[p].cols()));
    for (const auto& d : rotated.draws)
        for (std::size_t p = 0; p < m.size(); ++p) m[p] += d.theta[p];
    for (auto& mp : m) mp /= static_cast<double>(rotated.draws.size());
    return m;
}

}  // namespace

RotatedDraws align_draws(RotatedDraws rotated) {
    if (rotated.draws.empty()) return rotated;
    align_to_reference(rotated, rotated.draws.front().theta);
    align_to_reference(rotated, mean_loadings(rotated));
    return rotated;
}

namespace {

CurveSummary summarize_matrix(const Eigen::MatrixXd& samples, const std::vector<double>& grid) {
    // samples: draws x grid points
    CurveSummary cs;
    cs.grid = grid;
    const Eigen::Index G = samples.cols();
    cs.median.resize(G);
    cs.lo.resize(G);
    cs.hi.resize(G);
    std::vector<double> col(samples.rows());
    for (Eigen::Index g = 0; g < G; ++g) {
        for (Eigen::Index s = 0; s < samples.rows(); ++s) col[s] = samples(s, g);
        cs.median[g] = quantile(col, 0.5);
        cs.lo[g] = quantile(col, 0.025);
        cs.hi[g] = quantile(col, 0.975);
    }
    return cs;
}

}  // namespace

FittedModel summarize_curves(const RotatedDraws& aligned,
                             const std::vector<OrthonormalBasis>& bases,
                             const std::vector<double>& report_grid) {
    const BlockStructure& st = aligned.structure;
    const int P = st.n_blocks();
    const std::size_t S = aligned.draws.size();
    if (S == 0) throw EmptyInput("no draws to summarize");

    FittedModel fm;
    fm.report_grid = report_grid;
    fm.fpc_curves.resize(P);
    fm.explained_variance.resize(P);

    int q_off = 0;
    for (int p = 0; p < P; ++p) {
        const Eigen::MatrixXd basis_eval = bases[p].evaluate(report_grid);
        const int Qp = bases[p].Q();
        const int Kp = st.block_size(p);

        Eigen::MatrixXd mean_samples(S, report_grid.size());
        for (std::size_t s = 0; s < S; ++s)
            mean_samples.row(s) =
                (basis_eval * aligned.draws[s].theta_mu.segment(q_off, Qp)).transpose();
        fm.mean_curves.push_back(summarize_matrix(mean_samples, report_grid));

        for (int k = 0; k < Kp; ++k) {
            Eigen::MatrixXd fpc_samples(S, report_grid.size());
            for (std::size_t s = 0; s < S; ++s)
                fpc_samples.row(s) = (basis_eval * aligned.draws[s].theta[p].col(k)).transpose();
            fm.fpc_curves[p].push_back(summarize_matrix(fpc_samples, report_grid));
        }

        for (int k = 0; k < Kp; ++k) {
            std::vector<double> fractions(S);
            for (std::size_t s = 0; s < S; ++s) {
                const auto ev = aligned.draws[s].eigenvalues.segment(st.block_offset(p), Kp);
                fractions[s] = ev[k] / ev.sum();
            }
            fm.explained_variance[p].push_back(median(fractions));
        }
        q_off += Qp;
    }

    const int K = st.total();
    fm.sigma_median.resize(K, K);
    fm.sigma_lo.resize(K, K);
    fm.sigma_hi.resize(K, K);
    fm.r_median.resize(K, K);
    std::vector<double> buf(S);
    for (int r = 0; r < K; ++r)
        for (int c = 0; c < K; ++c) {
            for (std::size_t s = 0; s < S; ++s) buf[s] = aligned.draws[s].sigma(r, c);
            fm.sigma_median(r, c) = quantile(buf, 0.5);
            fm.sigma_lo(r, c) = quantile(buf, 0.025);
            fm.sigma_hi(r, c) = quantile(buf, 0.975);
            for (std::size_t s = 0; s < S; ++s) buf[s] = aligned.draws[s].R(r, c);
            fm.r_median(r, c) = quantile(buf, 0.5);
        }
    for (std::size_t s = 0; s < S; ++s) buf[s] = aligned.draws[s].sigma_eps[0];
    fm.sigma_eps_median = quantile(buf, 0.5);
    return fm;
}

void write_curves_csv(const std::string& path, const FittedModel& fitted,
                      const std::vector<std::string>& block_names) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "grid,block,component,median,lo,hi\n";
    out.precision(12);
    for (std::size_t p = 0; p < fitted.mean_curves.size(); ++p) {
        const CurveSummary& mc = fitted.mean_curves[p];
        for (std::size_t g = 0; g < mc.grid.size(); ++g)
            out << mc.grid[g] << ',' << block_names[p] << ",mean," << mc.median[g] << ','
                << mc.lo[g] << ',' << mc.hi[g] << '\n';
        for (std::size_t k = 0; k < fitted.fpc_curves[p].size(); ++k) {
            const CurveSummary& fc = fitted.fpc_curves[p][k];
            for (std::size_t g = 0; g < fc.grid.size(); ++g)
                out << fc.grid[g] << ',' << block_names[p] << ",fpc" << (k + 1) << ','
                    << fc.median[g] << ',' << fc.lo[g] << ',' << fc.hi[g] << '\n';
        }
    }
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace msfpca
