#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "msfpca/basis.hpp"
#include "msfpca/covariance.hpp"
#include "msfpca/dataset.hpp"

namespace msfpca {

// The four simulation covariance structures: independent scores (I), one
// strong correlation (II), strong + medium (III), strong + medium + weak (IV).
enum class Scenario { I, II, III, IV };

Scenario scenario_from_string(const std::string& name);
std::string to_string(Scenario s);

struct ScenarioSpec {
    Scenario scenario = Scenario::I;
    int n_subjects = 100;
    int n_timepoints = 10;
    double mean_rate = 8.0;
    std::vector<int> K{2, 2, 1};
    std::vector<int> Q{6, 5, 5};
    std::uint64_t seed = 0;
    bool shared_counts = false;  // one n_i per subject instead of one per block
    int grid_size = 1001;

    void validate() const;
};

struct ScenarioTruth {
    BlockStructure structure;
    Eigen::VectorXd sds;   // score standard deviations, descending within block
    Eigen::MatrixXd R;     // score correlations
    Eigen::MatrixXd sigma; // S R S
    Eigen::VectorXd theta_mu;            // stacked mean coefficients
    std::vector<Eigen::MatrixXd> theta;  // per block, orthonormal columns
    double sigma_eps = 0.5;
    // normalized truths per block pair, ordered (0,1), (0,2), ..., (P-2,P-1)
    std::vector<std::pair<int, int>> pairs;
    std::vector<double> mi;
    std::vector<double> cmi;
};

// Correlation placement: II puts 0.75 on (block2 pc1, block3 pc1); III adds
// 0.5 on (block1 pc1, block2 pc1); IV adds 0.25 on (block1 pc2, block3 pc1).
// Standard deviations are (2, 1, 2, 1, 1.5). MI/CMI truths are computed from
// R with the closed forms, so they are exact for the placements.
ScenarioTruth scenario_sigma(Scenario scenario);

// Deterministic synthetic mean/loading truth: decaying alternating mean
// coefficients and per-block orthonormalized seeded loading columns.
void default_truth_parameters(const BlockStructure& structure, const std::vector<int>& Q,
                              Eigen::VectorXd& theta_mu, std::vector<Eigen::MatrixXd>& theta,
                              double& sigma_eps);

// Full scenario truth (covariance placement plus default mean/loadings).
ScenarioTruth make_truth(const ScenarioSpec& spec);

MultiBlockDataset simulate_dataset(const ScenarioSpec& spec, const ScenarioTruth& truth);

void write_truth_csv(const std::string& path, const ScenarioTruth& truth);

}  // namespace msfpca
