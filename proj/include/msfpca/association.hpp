#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "msfpca/covariance.hpp"
#include "msfpca/posterior.hpp"

namespace msfpca {

enum class MiKind { Marginal, Conditional };

struct AssociationEstimate {
    int p1 = 0, p2 = 0;  // block indices
    MiKind kind = MiKind::Marginal;
    std::vector<double> per_draw;  // normalized values
    double median = 0.0, lo = 0.0, hi = 0.0;  // equal-tailed 95% interval
};

// Gaussian mutual information (nats) between the score vectors of two blocks:
// -1/2 log det of the joint correlation submatrix.
double marginal_mi(const Eigen::MatrixXd& R, const BlockStructure& structure, int p1, int p2);

// Conditional mutual information of blocks p1, p2 given all remaining blocks.
double conditional_mi(const Eigen::MatrixXd& R, const BlockStructure& structure, int p1, int p2);

// sqrt(1 - exp(-2 mi)): maps [0, inf) onto [0, 1); equals |r| for a single
// cross-correlation pair.
double normalize_mi(double mi);

std::vector<AssociationEstimate> posterior_association(
    const RotatedDraws& draws, const std::vector<std::pair<int, int>>& pairs, MiKind kind);

// pair, kind, median, lo, hi
void write_association_csv(const std::string& path,
                           const std::vector<AssociationEstimate>& estimates,
                           const std::vector<std::string>& block_names);

}  // namespace msfpca
