#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "msfpca/model.hpp"
#include "msfpca/posterior.hpp"
#include "msfpca/sampler.hpp"

namespace msfpca {

struct LooReport {
    double elpd_loo = 0.0;
    double se_elpd = 0.0;
    std::vector<double> pointwise;  // per-subject elpd, sums to elpd_loo
    std::vector<double> pareto_k;   // per-subject GPD shape diagnostic
};

struct PpcExport {
    std::vector<std::string> blocks;
    // pooled values in observed design order; replicated[r][p] matches observed[p]
    std::vector<std::vector<double>> observed;
    std::vector<std::vector<std::vector<double>>> replicated;
};

// entry (s, i) = log p(Y_i | draw s), conditional on that draw's scores;
// the LOO unit is the subject's full multivariate trajectory
Eigen::MatrixXd pointwise_loglik(const Model& model, const Draws& draws);

// Generalized Pareto shape/scale on positive exceedances via the
// profile-likelihood (Zhang-Stephens) estimator with the weakly informative
// shape adjustment. A degenerate (zero-spread) tail returns shape -inf.
struct GpdFit {
    double k = 0.0;
    double sigma = 0.0;
};
GpdFit fit_generalized_pareto(std::vector<double> exceedances);

// Pareto-smoothed, truncated, *unnormalized* log weights for one importance
// sampling problem; khat receives the fitted tail shape.
std::vector<double> pareto_smooth(const std::vector<double>& log_ratios, double& khat);

LooReport psis_loo(const Eigen::MatrixXd& loglik);

// in-sample pointwise elpd (log mean predictive density per subject)
std::vector<double> in_sample_elpd(const Eigen::MatrixXd& loglik);

// Simulates replicate datasets at the observed design from evenly thinned
// draws, using each draw's mean coefficients, rotated loadings, rotated score
// covariance, and residual scale with fresh scores and noise.
PpcExport posterior_predictive(const Model& model, const RotatedDraws& rotated, int n_rep,
                               std::uint64_t seed);

void write_loo_csv(const std::string& path, const LooReport& report,
                   const std::vector<std::string>& subjects);
void write_ppc_csv(const std::string& path, const PpcExport& ppc, const Model& model);

}  // namespace msfpca
