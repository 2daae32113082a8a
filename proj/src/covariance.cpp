#include "msfpca/covariance.hpp"

#include <cmath>
#include <string>

#include "msfpca/errors.hpp"

namespace msfpca {

BlockStructure::BlockStructure(std::vector<int> K) : K_(std::move(K)) {
    if (K_.empty()) throw InvalidArgument("block structure needs at least one block");
    for (std::size_t p = 0; p < K_.size(); ++p) {
        if (K_[p] < 1) throw InvalidArgument("K_p must be >= 1");
        offsets_.push_back(total_);
        for (int k = 0; k < K_[p]; ++k) block_of_.push_back(static_cast<int>(p));
        total_ += K_[p];
    }
}

int count_unconstrained(const BlockStructure& structure) {
    int n = structure.total();  // diagonal entries
    int seen = 0;
    for (int p = 0; p < structure.n_blocks(); ++p) {
        n += structure.block_size(p) * seen;  // cross-block rows against all earlier columns
        seen += structure.block_size(p);
    }
    return n;
}

namespace {

void check_length(const Eigen::VectorXd& v, const BlockStructure& s) {
    const int expect = count_unconstrained(s);
    if (v.size() != expect)
        throw DimensionMismatch("unconstrained vector has length " + std::to_string(v.size()) +
                                ", structure needs " + std::to_string(expect));
}

}  // namespace

ConstrainedCholesky build_factor(const Eigen::VectorXd& unconstrained,
                                 const BlockStructure& structure, const DiagonalMap& diag_map) {
    check_length(unconstrained, structure);
    const int K = structure.total();

    ConstrainedCholesky f;
    f.structure = structure;
    f.unconstrained_dim = static_cast<int>(unconstrained.size());
    f.L = Eigen::MatrixXd::Zero(K, K);

    for (int j = 0; j < K; ++j)
        f.L(j, j) = std::exp(diag_map.scale * unconstrained[j] + diag_map.offset);

    int idx = K;
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < i; ++j)
            if (structure.block_of(i) != structure.block_of(j)) f.L(i, j) = unconstrained[idx++];

    // Crout update with a zero within-block covariance target:
    // L_ij = (0 - sum_{k<j} L_ik L_jk) / L_jj for i > j in the same block.
    for (int j = 0; j < K; ++j)
        for (int i = j + 1; i < K && structure.block_of(i) == structure.block_of(j); ++i) {
            double s = 0.0;
            for (int k = 0; k < j; ++k) s += f.L(i, k) * f.L(j, k);
            f.L(i, j) = -s / f.L(j, j);
        }
    return f;
}

ConstrainedCholesky build_factor_with_jacobian(const Eigen::VectorXd& unconstrained,
                                               const BlockStructure& structure,
                                               std::vector<Eigen::MatrixXd>& jacobian,
                                               const DiagonalMap& diag_map) {
    check_length(unconstrained, structure);
    const int K = structure.total();
    const int nfree = static_cast<int>(unconstrained.size());

    ConstrainedCholesky f = build_factor(unconstrained, structure, diag_map);

    jacobian.assign(nfree, Eigen::MatrixXd::Zero(K, K));
    for (int j = 0; j < K; ++j) jacobian[j](j, j) = diag_map.scale * f.L(j, j);

    int idx = K;
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < i; ++j)
            if (structure.block_of(i) != structure.block_of(j)) jacobian[idx++](i, j) = 1.0;

    // forward sweep mirroring the Crout update
    for (int j = 0; j < K; ++j)
        for (int i = j + 1; i < K && structure.block_of(i) == structure.block_of(j); ++i)
            for (int m = 0; m < nfree; ++m) {
                double ds = 0.0;
                for (int k = 0; k < j; ++k)
                    ds += jacobian[m](i, k) * f.L(j, k) + f.L(i, k) * jacobian[m](j, k);
                jacobian[m](i, j) = (-ds - f.L(i, j) * jacobian[m](j, j)) / f.L(j, j);
            }
    return f;
}

ScoreCovariance assemble(const ConstrainedCholesky& factor) {
    ScoreCovariance sc;
    sc.sigma = factor.L * factor.L.transpose();
    sc.sds = sc.sigma.diagonal().cwiseSqrt();
    const Eigen::VectorXd inv = sc.sds.cwiseInverse();
    sc.R = inv.asDiagonal() * sc.sigma * inv.asDiagonal();
    return sc;
}

ScoreCovariance decompose_covariance(const Eigen::MatrixXd& sigma) {
    ScoreCovariance sc;
    sc.sigma = sigma;
    sc.sds = sigma.diagonal().cwiseSqrt();
    const Eigen::VectorXd inv = sc.sds.cwiseInverse();
    sc.R = inv.asDiagonal() * sigma * inv.asDiagonal();
    return sc;
}

}  // namespace msfpca
