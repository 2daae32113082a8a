#pragma once

#include <Eigen/Dense>
#include <vector>

#include "msfpca/covariance.hpp"
#include "msfpca/model.hpp"
#include "msfpca/sampler.hpp"

namespace msfpca {

// One posterior draw after the identifiability rotation: orthonormal
// per-block loadings, diagonal within-block score covariance with descending
// eigenvalues, and consistently rotated scores.
struct RotatedDraw {
    std::vector<Eigen::MatrixXd> theta;  // per block, Q_p x K_p, orthonormal columns
    Eigen::MatrixXd alpha;               // N x K rotated scores
    Eigen::MatrixXd sigma;               // K x K rotated score covariance
    Eigen::MatrixXd R;                   // correlation of the rotated covariance
    Eigen::VectorXd eigenvalues;         // K, descending within block
    Eigen::VectorXd theta_mu;            // stacked mean coefficients
    Eigen::VectorXd sigma_eps;           // residual scale(s)
};

struct RotatedDraws {
    BlockStructure structure;
    std::vector<int> Q;
    std::vector<RotatedDraw> draws;
    int chains = 1;  // draws are stored chain-major: draws[c * iters + t]

    int iters_per_chain() const { return static_cast<int>(draws.size()) / std::max(1, chains); }
};

// Per-block eigendecomposition of Theta_p D_p Theta_p^T; returns the top-K_p
// eigenvector loadings, the rotated covariance/scores, and the eigenvalues.
RotatedDraw rotate_draw(const std::vector<Eigen::MatrixXd>& theta_blocks,
                        const ScoreCovariance& score_cov, const Eigen::MatrixXd& scores,
                        const BlockStructure& structure);

// Rotates every stored draw of a fitted model.
RotatedDraws rotate_all(const Model& model, const Draws& draws);

// Column-sign alignment across draws: flip each FPC column (with its scores
// and covariance rows/columns) to keep a positive inner product with a
// reference, seeded by the first draw and refined once by the aligned mean.
RotatedDraws align_draws(RotatedDraws rotated);

struct CurveSummary {
    std::vector<double> grid;
    std::vector<double> median, lo, hi;  // pointwise 50 / 2.5 / 97.5 percentiles
};

struct FittedModel {
    std::vector<double> report_grid;
    std::vector<CurveSummary> mean_curves;               // per block
    std::vector<std::vector<CurveSummary>> fpc_curves;   // per block, per component
    std::vector<std::vector<double>> explained_variance; // per block, posterior median fraction
    Eigen::MatrixXd sigma_median, sigma_lo, sigma_hi;    // elementwise over draws
    Eigen::MatrixXd r_median;
    double sigma_eps_median = 0.0;
};

FittedModel summarize_curves(const RotatedDraws& aligned,
                             const std::vector<OrthonormalBasis>& bases,
                             const std::vector<double>& report_grid);

// grid point, block, component (-1 = mean curve), median, lo, hi
void write_curves_csv(const std::string& path, const FittedModel& fitted,
                      const std::vector<std::string>& block_names);

}  // namespace msfpca
