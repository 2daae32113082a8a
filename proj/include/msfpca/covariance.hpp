#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <vector>

namespace msfpca {

// Per-block score counts K_p; total K = sum K_p.
class BlockStructure {
public:
    BlockStructure() = default;
    explicit BlockStructure(std::vector<int> K);

    const std::vector<int>& K() const { return K_; }
    int n_blocks() const { return static_cast<int>(K_.size()); }
    int total() const { return total_; }
    int block_of(int component) const { return block_of_[component]; }
    int block_offset(int block) const { return offsets_[block]; }
    int block_size(int block) const { return K_[block]; }

private:
    std::vector<int> K_;
    std::vector<int> block_of_;
    std::vector<int> offsets_;
    int total_ = 0;
};

// Constants of the diagonal map L_jj = exp(diag_scale * O + diag_offset).
// 0.5 mimics the square root of the plain Cholesky recursion and 2 keeps
// initial diagonals away from zero when starting values are drawn from
// (-2, 2). Overridable for experimentation.
struct DiagonalMap {
    double scale = 0.5;
    double offset = 2.0;
};

// Lower-triangular factor of the score covariance with diagonal within-block
// covariance guaranteed by construction. Cross-block entries are free; the
// within-block off-diagonals are determined by the Crout update so that each
// within-block covariance sum is exactly diagonal.
struct ConstrainedCholesky {
    BlockStructure structure;
    Eigen::MatrixXd L;
    int unconstrained_dim = 0;
};

// Sigma = S R S decomposition of the assembled score covariance.
struct ScoreCovariance {
    Eigen::MatrixXd sigma;
    Eigen::VectorXd sds;  // diagonal of S
    Eigen::MatrixXd R;
};

// Free parameters: K diagonal entries (block order, then PC order), followed
// by cross-block lower-triangle entries scanned row-major.
int count_unconstrained(const BlockStructure& structure);

ConstrainedCholesky build_factor(const Eigen::VectorXd& unconstrained,
                                 const BlockStructure& structure,
                                 const DiagonalMap& diag_map = {});

// Forward sensitivities dL/dv alongside the factor; jacobian[m] is the K x K
// derivative of L with respect to unconstrained parameter m.
ConstrainedCholesky build_factor_with_jacobian(const Eigen::VectorXd& unconstrained,
                                               const BlockStructure& structure,
                                               std::vector<Eigen::MatrixXd>& jacobian,
                                               const DiagonalMap& diag_map = {});

ScoreCovariance assemble(const ConstrainedCholesky& factor);

// Sigma -> (S, R) split for an already-assembled covariance.
ScoreCovariance decompose_covariance(const Eigen::MatrixXd& sigma);

}  // namespace msfpca
