#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msfpca/association.hpp"
#include "msfpca/diagnostics.hpp"
#include "msfpca/model.hpp"
#include "msfpca/posterior.hpp"
#include "msfpca/sampler.hpp"
#include "msfpca/simulate.hpp"

namespace msfpca {

struct FitConfig {
    std::vector<int> K;
    std::vector<int> Q;
    ChainConfig chain;
    bool per_block_sigma = false;
    int grid_size = 1001;
};

struct FitResult {
    Model model;
    Draws draws;
    RotatedDraws rotated;  // aligned
    double max_rhat = 0.0; // over identified summaries (see identified_rhat)
};

// simulate-agnostic single fit: build bases, sample, rotate, align
FitResult fit_msfpca(const MultiBlockDataset& data, const FitConfig& cfg);

// Split R-hat computed on identified quantities (mean coefficients, residual
// scale, rotated covariance entries, normalized MI); the raw loadings and
// scores are only identified up to rotation, so their R-hat is meaningless.
double identified_rhat(const FitResult& fit);

struct CurveRecovery {
    std::vector<double> mean_rel_l2;  // per block
    std::vector<double> fpc_rel_l2;   // per block, first component, min over sign
};

CurveRecovery recovery_report(const FitResult& fit, const ScenarioTruth& truth,
                              const std::vector<double>& grid);

struct ReplicateResult {
    int replicate = 0;
    bool converged = false;
    std::string error;  // nonempty when the fit failed outright
    double max_rhat = 0.0;
    std::vector<double> cov_median, cov_lo, cov_hi;  // truth-sign-aligned unique parameters
    std::vector<double> mi_median, mi_lo, mi_hi;
    std::vector<double> cmi_median, cmi_lo, cmi_hi;
    CurveRecovery recovery;
};

struct CoverageReport {
    Scenario scenario = Scenario::I;
    int replicates = 0;
    std::uint64_t master_seed = 0;
    int n_converged = 0;
    std::vector<std::string> cov_param_names;
    std::vector<double> cov_truth;
    std::vector<double> cov_coverage;  // fraction over converged replicates
    double avg_cov_coverage = 0.0;
    std::vector<std::pair<int, int>> pairs;
    std::vector<double> mi_truth, cmi_truth;
    std::vector<double> mi_coverage, cmi_coverage;  // -1 marks the 0* convention rows
    std::vector<ReplicateResult> results;
};

// simulate -> fit -> summarize per replicate; per-replicate seeds are derived
// from the master seed by counter, so the report is reproducible under any
// degree of parallelism. Artifacts go to out_dir/<scenario>/rep_###/ when
// out_dir is nonempty.
CoverageReport coverage_study(const ScenarioSpec& scenario_spec, int replicates,
                              const FitConfig& fit_cfg, std::uint64_t master_seed,
                              const std::string& out_dir = "", int threads = 1);

// unique covariance parameters in cov_raw order: variances then cross-block
// lower-triangle entries row-major
std::vector<std::pair<int, int>> unique_covariance_indices(const BlockStructure& structure);

// per-component sign flips that align a fitted model's FPC curves to truth
std::vector<double> truth_sign_flips(const FitResult& fit, const ScenarioTruth& truth,
                                     const std::vector<double>& grid);

void write_coverage_csv(const std::string& path, const CoverageReport& report);
void write_coverage_text(const std::string& path, const CoverageReport& report);

}  // namespace msfpca
