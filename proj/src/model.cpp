#include "msfpca/model.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "msfpca/errors.hpp"

namespace msfpca {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

void ModelSpec::validate() const {
    if (K.empty() || K.size() != Q.size() || K.size() != bases.size())
        throw InvalidArgument("model spec needs matching K, Q, bases");
    for (std::size_t p = 0; p < K.size(); ++p) {
        if (K[p] < 1 || K[p] >= Q[p])
            throw InvalidArgument("need 1 <= K_p < Q_p, got K=" + std::to_string(K[p]) +
                                  " Q=" + std::to_string(Q[p]));
        if (bases[p].Q() != Q[p]) throw InvalidArgument("basis dimension mismatch");
    }
}

ModelSpec make_model_spec(std::vector<int> K, std::vector<int> Q, bool per_block_sigma,
                          int grid_size) {
    ModelSpec spec;
    spec.K = std::move(K);
    spec.Q = std::move(Q);
    spec.per_block_sigma = per_block_sigma;
    for (int q : spec.Q) spec.bases.push_back(orthonormalize(SplineBasisSpec::equally_spaced(q), grid_size));
    spec.validate();
    return spec;
}

ParameterLayout::ParameterLayout(const ModelSpec& spec, int n_subjects) {
    K_ = spec.K;
    Q_ = spec.Q;
    N_ = n_subjects;
    P_ = spec.n_blocks();
    int off = 0;
    for (int p = 0; p < P_; ++p) {
        theta_mu_off_.push_back(off);
        off += Q_[p];
    }
    Q_total_ = off;
    for (int p = 0; p < P_; ++p) {
        theta_raw_off_.push_back(off);
        off += Q_[p] * K_[p];
    }
    int koff = 0;
    for (int p = 0; p < P_; ++p) {
        score_off_.push_back(koff);
        koff += K_[p];
    }
    K_total_ = koff;
    n_free_cov_ = count_unconstrained(BlockStructure(K_));
    cov_off_ = off;
    off += n_free_cov_;
    alpha_off_ = off;
    off += N_ * K_total_;
    sigma_off_ = off;
    n_sigma_ = spec.per_block_sigma ? P_ : 1;
    off += n_sigma_;
    dim_ = off;
}

std::string ParameterLayout::name(int d) const {
    for (int p = 0; p < P_; ++p)
        if (d >= theta_mu_off_[p] && d < theta_mu_off_[p] + Q_[p])
            return "theta_mu[" + std::to_string(p) + "," + std::to_string(d - theta_mu_off_[p]) + "]";
    for (int p = 0; p < P_; ++p)
        if (d >= theta_raw_off_[p] && d < theta_raw_off_[p] + Q_[p] * K_[p]) {
            const int r = d - theta_raw_off_[p];
            return "theta[" + std::to_string(p) + "," + std::to_string(r % Q_[p]) + "," +
                   std::to_string(r / Q_[p]) + "]";
        }
    if (d >= cov_off_ && d < cov_off_ + n_free_cov_)
        return "cov_raw[" + std::to_string(d - cov_off_) + "]";
    if (d >= alpha_off_ && d < alpha_off_ + N_ * K_total_) {
        const int r = d - alpha_off_;
        return "alpha[" + std::to_string(r / K_total_) + "," + std::to_string(r % K_total_) + "]";
    }
    if (d >= sigma_off_ && d < sigma_off_ + n_sigma_)
        return n_sigma_ == 1 ? std::string("log_sigma_eps")
                             : "log_sigma_eps[" + std::to_string(d - sigma_off_) + "]";
    throw InvalidArgument("coordinate out of range");
}

Model::Model(const MultiBlockDataset& data, ModelSpec spec)
    : data_(data), spec_(std::move(spec)), structure_(spec_.K) {
    spec_.validate();
    const int P = spec_.n_blocks();
    if (static_cast<int>(data_.n_blocks()) != P)
        throw SpecMismatch("data has " + std::to_string(data_.n_blocks()) + " blocks, spec has " +
                           std::to_string(P));
    layout_ = ParameterLayout(spec_, static_cast<int>(data_.n_subjects()));

    const std::size_t N = data_.n_subjects();
    B_.resize(N * P);
    y_.resize(N * P);
    v_count_per_sigma_.assign(layout_.n_sigma(), 0.0);
    for (std::size_t i = 0; i < N; ++i) {
        for (int p = 0; p < P; ++p) {
            const Series& s = data_.series(i, p);
            B_[i * P + p] = spec_.bases[p].evaluate(s.times);
            y_[i * P + p] =
                Eigen::Map<const Eigen::VectorXd>(s.values.data(), static_cast<Eigen::Index>(s.size()));
            v_count_per_sigma_[spec_.per_block_sigma ? p : 0] += static_cast<double>(s.size());
        }
    }
}

double Model::evaluate(const Eigen::VectorXd& params, Eigen::VectorXd* grad,
                       Eigen::VectorXd* per_subject, bool likelihood_only) const {
    if (params.size() != layout_.dim())
        throw DimensionMismatch("parameter vector has length " + std::to_string(params.size()) +
                                ", model dim is " + std::to_string(layout_.dim()));
    const int P = spec_.n_blocks();
    const int K = layout_.total_K();
    const std::size_t N = data_.n_subjects();
    const int n_sigma = layout_.n_sigma();

    std::vector<Eigen::MatrixXd> dL;
    ConstrainedCholesky factor =
        grad ? build_factor_with_jacobian(params.segment(layout_.cov_offset(), layout_.n_free_cov()),
                                          structure_, dL, spec_.diag_map)
             : build_factor(params.segment(layout_.cov_offset(), layout_.n_free_cov()), structure_,
                            spec_.diag_map);
    const Eigen::MatrixXd& L = factor.L;

    Eigen::VectorXd sigma(n_sigma), inv_sigma2(n_sigma);
    for (int g = 0; g < n_sigma; ++g) {
        sigma[g] = std::exp(params[layout_.sigma_offset() + g]);
        inv_sigma2[g] = 1.0 / (sigma[g] * sigma[g]);
    }

    if (grad) grad->setZero(layout_.dim());
    if (per_subject) per_subject->setZero(static_cast<Eigen::Index>(N));

    Eigen::VectorXd a_lik(K), innov(K), whitened(K);
    Eigen::VectorXd ssr_per_sigma = Eigen::VectorXd::Zero(n_sigma);
    // accumulates d logp / dL over the score prior: sum_i w_i y_i^T - N diag(1/L_jj)
    Eigen::MatrixXd g_factor = Eigen::MatrixXd::Zero(K, K);
    double sum_sq_whitened = 0.0;
    double loglik = 0.0;

    for (std::size_t i = 0; i < N; ++i) {
        const auto alpha_i = params.segment(layout_.alpha_offset(static_cast<int>(i)), K);
        double subject_ll = 0.0;
        if (grad) a_lik.setZero();

        for (int p = 0; p < P; ++p) {
            const Eigen::MatrixXd& B = B_[i * P + p];
            const Eigen::Index V = B.rows();
            if (V == 0) continue;
            const int g = spec_.per_block_sigma ? p : 0;
            const int Qp = layout_.block_Q(p);
            const int Kp = layout_.block_K(p);
            const auto mu_p = params.segment(layout_.theta_mu_offset(p), Qp);
            const Eigen::Map<const Eigen::MatrixXd> theta_p(
                params.data() + layout_.theta_raw_offset(p), Qp, Kp);
            const auto alpha_p = alpha_i.segment(layout_.block_score_offset(p), Kp);

            Eigen::VectorXd coef = mu_p;
            coef.noalias() += theta_p * alpha_p;
            Eigen::VectorXd resid = y_[i * P + p];
            resid.noalias() -= B * coef;

            const double sq = resid.squaredNorm();
            ssr_per_sigma[g] += sq;
            subject_ll += -0.5 * static_cast<double>(V) * kLog2Pi -
                          static_cast<double>(V) * params[layout_.sigma_offset() + g] -
                          0.5 * sq * inv_sigma2[g];

            if (grad) {
                Eigen::VectorXd bt_r = B.transpose() * resid;
                bt_r *= inv_sigma2[g];
                grad->segment(layout_.theta_mu_offset(p), Qp) += bt_r;
                Eigen::Map<Eigen::MatrixXd> g_theta(grad->data() + layout_.theta_raw_offset(p), Qp,
                                                    Kp);
                g_theta.noalias() += bt_r * alpha_p.transpose();
                a_lik.segment(layout_.block_score_offset(p), Kp).noalias() =
                    theta_p.transpose() * bt_r;
            }
        }

        loglik += subject_ll;
        if (per_subject) (*per_subject)[static_cast<Eigen::Index>(i)] = subject_ll;

        if (!likelihood_only) {
            // score prior N(0, L L^T): whiten via a triangular solve
            innov = alpha_i;
            L.template triangularView<Eigen::Lower>().solveInPlace(innov);
            sum_sq_whitened += innov.squaredNorm();
            if (grad) {
                whitened = innov;
                L.transpose().template triangularView<Eigen::Upper>().solveInPlace(whitened);
                // whitened = Sigma^{-1} alpha_i
                grad->segment(layout_.alpha_offset(static_cast<int>(i)), K) = a_lik - whitened;
                g_factor.noalias() += whitened * innov.transpose();
            }
        } else if (grad) {
            grad->segment(layout_.alpha_offset(static_cast<int>(i)), K) = a_lik;
        }
    }

    if (likelihood_only) return loglik;

    // priors
    double logp = loglik;
    const auto theta_mu_all = params.segment(layout_.theta_mu_offset(0), layout_.total_Q());
    logp += -0.5 * theta_mu_all.squaredNorm() - 0.5 * layout_.total_Q() * kLog2Pi;
    int n_loadings = 0;
    for (int p = 0; p < P; ++p) n_loadings += layout_.block_Q(p) * layout_.block_K(p);
    const auto theta_all = params.segment(layout_.theta_raw_offset(0), n_loadings);
    logp += -0.5 * theta_all.squaredNorm() - 0.5 * n_loadings * kLog2Pi;

    double logdet_l = 0.0;
    for (int j = 0; j < K; ++j) logdet_l += std::log(L(j, j));
    logp += -0.5 * sum_sq_whitened - static_cast<double>(N) * logdet_l -
            0.5 * static_cast<double>(N) * K * kLog2Pi;

    for (int g = 0; g < n_sigma; ++g) {
        // half-Cauchy(0,1) on sigma plus the log|d sigma / d log_sigma| term
        logp += std::log(2.0 / std::numbers::pi) - std::log1p(sigma[g] * sigma[g]) +
                params[layout_.sigma_offset() + g];
    }

    if (grad) {
        grad->segment(layout_.theta_mu_offset(0), layout_.total_Q()) -= theta_mu_all;
        grad->segment(layout_.theta_raw_offset(0), n_loadings) -= theta_all;
        for (int j = 0; j < K; ++j) g_factor(j, j) -= static_cast<double>(N) / L(j, j);
        for (int g = 0; g < n_sigma; ++g) {
            const double s2 = sigma[g] * sigma[g];
            (*grad)[layout_.sigma_offset() + g] =
                -v_count_per_sigma_[g] + ssr_per_sigma[g] * inv_sigma2[g] - 2.0 * s2 / (1.0 + s2) +
                1.0;
        }
        for (int m = 0; m < layout_.n_free_cov(); ++m) {
            double acc = 0.0;
            const Eigen::MatrixXd& J = dL[m];
            for (int r = 0; r < K; ++r)
                for (int c = 0; c <= r; ++c) acc += g_factor(r, c) * J(r, c);
            (*grad)[layout_.cov_offset() + m] = acc;
        }
    }
    return logp;
}

double Model::log_posterior(const Eigen::VectorXd& params) const {
    return evaluate(params, nullptr, nullptr, false);
}

double Model::log_posterior_grad(const Eigen::VectorXd& params, Eigen::VectorXd& grad) const {
    return evaluate(params, &grad, nullptr, false);
}

double Model::log_likelihood(const Eigen::VectorXd& params) const {
    return evaluate(params, nullptr, nullptr, true);
}

Eigen::VectorXd Model::pointwise_loglik(const Eigen::VectorXd& params) const {
    Eigen::VectorXd per_subject;
    evaluate(params, nullptr, &per_subject, true);
    return per_subject;
}

ConstrainedCholesky Model::factor(const Eigen::VectorXd& params) const {
    return build_factor(params.segment(layout_.cov_offset(), layout_.n_free_cov()), structure_,
                        spec_.diag_map);
}

Eigen::MatrixXd Model::scores_alpha(const Eigen::VectorXd& params) const {
    const int K = layout_.total_K();
    const int N = layout_.n_subjects();
    Eigen::MatrixXd A(N, K);
    for (int i = 0; i < N; ++i) A.row(i) = params.segment(layout_.alpha_offset(i), K).transpose();
    return A;
}

Eigen::MatrixXd Model::theta_block(const Eigen::VectorXd& params, int block) const {
    return Eigen::Map<const Eigen::MatrixXd>(params.data() + layout_.theta_raw_offset(block),
                                             layout_.block_Q(block), layout_.block_K(block));
}

Eigen::VectorXd Model::theta_mu_block(const Eigen::VectorXd& params, int block) const {
    return params.segment(layout_.theta_mu_offset(block), layout_.block_Q(block));
}

double Model::sigma_eps(const Eigen::VectorXd& params, int block) const {
    const int g = spec_.per_block_sigma ? block : 0;
    return std::exp(params[layout_.sigma_offset() + g]);
}

}  // namespace msfpca
