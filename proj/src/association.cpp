#include "msfpca/association.hpp"

#include <cmath>
#include <fstream>

#include "msfpca/errors.hpp"
#include "msfpca/stats.hpp"

namespace msfpca {

namespace {

// log det via Cholesky; the submatrix is selected by component indices.
// An empty selection has determinant 1. A submatrix that fails the Cholesky
// within the -1e-10 pivot tolerance (a numerically semidefinite draw, e.g.
// near-collinear loadings) gets a floored log determinant instead of an
// error, so per-draw MI saturates rather than aborting a whole posterior.
double logdet_subcorrelation(const Eigen::MatrixXd& R, const std::vector<int>& idx) {
    if (idx.empty()) return 0.0;
    const int n = static_cast<int>(idx.size());
    Eigen::MatrixXd sub(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) sub(r, c) = R(idx[r], idx[c]);
    Eigen::LLT<Eigen::MatrixXd> llt(sub);
    if (llt.info() == Eigen::Success) {
        double ld = 0.0;
        for (int i = 0; i < n; ++i) ld += 2.0 * std::log(llt.matrixL()(i, i));
        return ld;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sub);
    if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() < -1e-10)
        throw SingularSubmatrix("correlation submatrix is not positive definite");
    double ld = 0.0;
    for (int i = 0; i < n; ++i) ld += std::log(std::max(eig.eigenvalues()[i], 1e-300));
    return ld;
}

std::vector<int> block_components(const BlockStructure& st, std::initializer_list<int> blocks) {
    std::vector<int> idx;
    for (int p : blocks)
        for (int k = 0; k < st.block_size(p); ++k) idx.push_back(st.block_offset(p) + k);
    return idx;
}

std::vector<int> all_except(const BlockStructure& st, std::initializer_list<int> drop) {
    std::vector<int> idx;
    for (int p = 0; p < st.n_blocks(); ++p) {
        bool skip = false;
        for (int d : drop) skip = skip || (p == d);
        if (skip) continue;
        for (int k = 0; k < st.block_size(p); ++k) idx.push_back(st.block_offset(p) + k);
    }
    return idx;
}

void check_pair(const BlockStructure& st, int p1, int p2) {
    if (p1 < 0 || p2 < 0 || p1 >= st.n_blocks() || p2 >= st.n_blocks() || p1 == p2)
        throw InvalidArgument("invalid block pair");
}

}  // namespace

double marginal_mi(const Eigen::MatrixXd& R, const BlockStructure& structure, int p1, int p2) {
    check_pair(structure, p1, p2);
    if (R.rows() != structure.total() || R.cols() != structure.total())
        throw DimensionMismatch("correlation matrix does not match block structure");
    return -0.5 * logdet_subcorrelation(R, block_components(structure, {p1, p2}));
}

double conditional_mi(const Eigen::MatrixXd& R, const BlockStructure& structure, int p1, int p2) {
    check_pair(structure, p1, p2);
    if (structure.n_blocks() < 2) throw InvalidArgument("conditional MI needs P >= 2");
    if (R.rows() != structure.total() || R.cols() != structure.total())
        throw DimensionMismatch("correlation matrix does not match block structure");
    // Oriented so the result is the nonnegative Gaussian conditional MI:
    // 1/2 [ log det R_{-p1} + log det R_{-p2} - log det R_{-p1,p2} - log det R ]
    const double ld_no_p1 = logdet_subcorrelation(R, all_except(structure, {p1}));
    const double ld_no_p2 = logdet_subcorrelation(R, all_except(structure, {p2}));
    const double ld_no_both = logdet_subcorrelation(R, all_except(structure, {p1, p2}));
    const double ld_full = logdet_subcorrelation(R, all_except(structure, {}));
    return 0.5 * (ld_no_p1 + ld_no_p2 - ld_no_both - ld_full);
}

double normalize_mi(double mi) {
    if (mi < 0.0) {
        if (mi < -1e-9) throw NegativeMI("mutual information is negative: " + std::to_string(mi));
        mi = 0.0;  // roundoff from the log-determinant differences
    }
    return std::sqrt(-std::expm1(-2.0 * mi));
}

std::vector<AssociationEstimate> posterior_association(
    const RotatedDraws& draws, const std::vector<std::pair<int, int>>& pairs, MiKind kind) {
    std::vector<AssociationEstimate> out;
    for (const auto& [p1, p2] : pairs) {
        AssociationEstimate est;
        est.p1 = p1;
        est.p2 = p2;
        est.kind = kind;
        est.per_draw.reserve(draws.draws.size());
        for (const auto& d : draws.draws) {
            const double mi = kind == MiKind::Marginal
                                  ? marginal_mi(d.R, draws.structure, p1, p2)
                                  : conditional_mi(d.R, draws.structure, p1, p2);
            est.per_draw.push_back(normalize_mi(mi));
        }
        est.median = quantile(est.per_draw, 0.5);
        est.lo = quantile(est.per_draw, 0.025);
        est.hi = quantile(est.per_draw, 0.975);
        out.push_back(std::move(est));
    }
    return out;
}

void write_association_csv(const std::string& path,
                           const std::vector<AssociationEstimate>& estimates,
                           const std::vector<std::string>& block_names) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "pair,kind,median,lo,hi\n";
    out.precision(12);
    for (const auto& e : estimates)
        out << block_names[e.p1] << '-' << block_names[e.p2] << ','
            << (e.kind == MiKind::Marginal ? "marginal" : "conditional") << ',' << e.median << ','
            << e.lo << ',' << e.hi << '\n';
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace msfpca
