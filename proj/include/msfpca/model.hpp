#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <vector>

#include "msfpca/basis.hpp"
#include "msfpca/covariance.hpp"
#include "msfpca/dataset.hpp"

namespace msfpca {

// Model configuration: per block the number of FPCs K_p (< Q_p) and the
// orthonormal basis. sigma_eps is shared across blocks unless
// per_block_sigma is set.
struct ModelSpec {
    std::vector<int> K;
    std::vector<int> Q;
    std::vector<OrthonormalBasis> bases;
    bool per_block_sigma = false;
    DiagonalMap diag_map;

    int n_blocks() const { return static_cast<int>(K.size()); }
    BlockStructure structure() const { return BlockStructure(K); }
    void validate() const;
};

// Builds bases with equally spaced interior knots for the given Q.
ModelSpec make_model_spec(std::vector<int> K, std::vector<int> Q, bool per_block_sigma = false,
                          int grid_size = 1001);

// Flat layout of the unconstrained sampler coordinates:
//   theta_mu (sum Q_p) | Theta_raw per block, column-major | cov_raw |
//   alpha scores, subject-major (K per subject) | log_sigma (1 or P)
class ParameterLayout {
public:
    ParameterLayout() = default;
    ParameterLayout(const ModelSpec& spec, int n_subjects);

    int dim() const { return dim_; }
    int n_subjects() const { return N_; }
    int n_blocks() const { return P_; }
    int total_K() const { return K_total_; }
    int total_Q() const { return Q_total_; }
    int n_free_cov() const { return n_free_cov_; }
    int n_sigma() const { return n_sigma_; }

    int theta_mu_offset(int block) const { return theta_mu_off_[block]; }
    int theta_raw_offset(int block) const { return theta_raw_off_[block]; }
    int cov_offset() const { return cov_off_; }
    int alpha_offset(int subject) const { return alpha_off_ + subject * K_total_; }
    int sigma_offset() const { return sigma_off_; }

    int block_Q(int block) const { return Q_[block]; }
    int block_K(int block) const { return K_[block]; }
    int block_score_offset(int block) const { return score_off_[block]; }

    // human-readable name of coordinate d (for draw exports and diagnostics)
    std::string name(int d) const;

private:
    std::vector<int> K_, Q_;
    std::vector<int> theta_mu_off_, theta_raw_off_, score_off_;
    int cov_off_ = 0, alpha_off_ = 0, sigma_off_ = 0;
    int dim_ = 0, N_ = 0, P_ = 0, K_total_ = 0, Q_total_ = 0, n_free_cov_ = 0, n_sigma_ = 1;
};

// Joint log posterior over the unconstrained coordinates and its exact
// gradient. Scores are sampled directly (centered parameterization) with a
// N(0, Sigma_alpha(L)) prior, so the density vanishes as any conditional
// score variance collapses. Evaluation is const and reentrant; per-subject
// terms are summed in a fixed order so results do not depend on thread count.
class Model {
public:
    Model(const MultiBlockDataset& data, ModelSpec spec);

    const ModelSpec& spec() const { return spec_; }
    const ParameterLayout& layout() const { return layout_; }
    const MultiBlockDataset& data() const { return data_; }
    int dim() const { return layout_.dim(); }

    double log_posterior(const Eigen::VectorXd& params) const;
    // returns the value; fills grad (resized to dim)
    double log_posterior_grad(const Eigen::VectorXd& params, Eigen::VectorXd& grad) const;
    // likelihood term only (the sum over subjects of log N(Y_i | ...))
    double log_likelihood(const Eigen::VectorXd& params) const;
    // per-subject log likelihood conditional on that draw's scores
    Eigen::VectorXd pointwise_loglik(const Eigen::VectorXd& params) const;

    // structured views of one draw
    ConstrainedCholesky factor(const Eigen::VectorXd& params) const;
    Eigen::MatrixXd scores_alpha(const Eigen::VectorXd& params) const;  // N x K
    Eigen::MatrixXd theta_block(const Eigen::VectorXd& params, int block) const;  // Q_p x K_p
    Eigen::VectorXd theta_mu_block(const Eigen::VectorXd& params, int block) const;
    double sigma_eps(const Eigen::VectorXd& params, int block = 0) const;

    // precomputed basis rows for subject/block (V_ip x Q_p)
    const Eigen::MatrixXd& basis_rows(std::size_t subject, int block) const {
        return B_[subject * spec_.n_blocks() + block];
    }
    const Eigen::VectorXd& observed(std::size_t subject, int block) const {
        return y_[subject * spec_.n_blocks() + block];
    }

private:
    double evaluate(const Eigen::VectorXd& params, Eigen::VectorXd* grad,
                    Eigen::VectorXd* per_subject_loglik, bool likelihood_only) const;

    MultiBlockDataset data_;
    ModelSpec spec_;
    ParameterLayout layout_;
    BlockStructure structure_;
    std::vector<Eigen::MatrixXd> B_;  // subject-major basis evaluations
    std::vector<Eigen::VectorXd> y_;
    std::vector<double> v_count_per_sigma_;  // total obs per sigma group
};

}  // namespace msfpca
