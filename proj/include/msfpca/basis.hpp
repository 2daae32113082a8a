#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <vector>

namespace msfpca {

// Cubic B-spline basis on [0,1] with a clamped knot vector and equally
// spaced interior knots by default.
struct SplineBasisSpec {
    int Q = 4;                          // number of basis functions, >= 4
    std::vector<double> interior_knots; // Q - 4 strictly increasing values in (0,1)

    static SplineBasisSpec equally_spaced(int Q);
    void validate() const;
};

// raw (non-orthonormal) B-spline evaluations, one row per time
Eigen::MatrixXd bspline_matrix(const std::vector<double>& times, const SplineBasisSpec& spec);

// B-spline basis orthonormalized under the discrete inner product
// (1/G) * sum over G equally spaced grid points, so the Gram matrix of the
// transformed basis is the identity. Immutable; evaluation is pure.
class OrthonormalBasis {
public:
    const SplineBasisSpec& spec() const { return spec_; }
    const Eigen::MatrixXd& transform() const { return transform_; }
    const std::vector<double>& grid() const { return grid_; }
    int Q() const { return spec_.Q; }

    Eigen::MatrixXd evaluate(const std::vector<double>& times) const;

    friend OrthonormalBasis orthonormalize(const SplineBasisSpec& spec, int grid_size);

private:
    SplineBasisSpec spec_;
    Eigen::MatrixXd transform_;  // Q x Q, upper triangular with positive diagonal
    std::vector<double> grid_;
};

// Thin QR of the grid evaluation matrix scaled by 1/sqrt(G), sign-fixed so
// the triangular factor has positive diagonal.
OrthonormalBasis orthonormalize(const SplineBasisSpec& spec, int grid_size = 1001);

}  // namespace msfpca
