#include "msfpca/basis.hpp"

#include <cmath>
#include <string>

#include "msfpca/errors.hpp"

namespace msfpca {

SplineBasisSpec SplineBasisSpec::equally_spaced(int Q) {
    SplineBasisSpec spec;
    spec.Q = Q;
    const int m = Q - 4;
    for (int j = 1; j <= m; ++j)
        spec.interior_knots.push_back(static_cast<double>(j) / static_cast<double>(m + 1));
    spec.validate();
    return spec;
}

void SplineBasisSpec::validate() const {
    if (Q < 4) throw InvalidArgument("spline basis needs Q >= 4, got " + std::to_string(Q));
    if (static_cast<int>(interior_knots.size()) != Q - 4)
        throw InvalidArgument("expected " + std::to_string(Q - 4) + " interior knots, got " +
                              std::to_string(interior_knots.size()));
    double prev = 0.0;
    for (double k : interior_knots) {
        if (!(k > prev && k < 1.0))
            throw InvalidArgument("interior knots must be strictly increasing in (0,1)");
        prev = k;
    }
}

namespace {

// clamped knot vector: 0 x4, interior, 1 x4
std::vector<double> knot_vector(const SplineBasisSpec& spec) {
    std::vector<double> knots(4, 0.0);
    knots.insert(knots.end(), spec.interior_knots.begin(), spec.interior_knots.end());
    knots.insert(knots.end(), 4, 1.0);
    return knots;
}

}  // namespace

Eigen::MatrixXd bspline_matrix(const std::vector<double>& times, const SplineBasisSpec& spec) {
    spec.validate();
    const std::vector<double> knots = knot_vector(spec);
    const int Q = spec.Q;
    const int degree = 3;
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(times.size()), Q);

    // Cox-de Boor on the knot span containing t; t == 1 falls in the last span.
    std::vector<double> work(degree + 1);
    for (std::size_t row = 0; row < times.size(); ++row) {
        const double t = times[row];
        if (!(t >= 0.0 && t <= 1.0))
            throw TimeOutOfRange("t = " + std::to_string(t) + " outside [0,1]");

        int span = degree;  // index j with knots[j] <= t < knots[j+1]
        const int last = Q - 1;
        while (span < last && t >= knots[span + 1]) ++span;

        work.assign(degree + 1, 0.0);
        work[0] = 1.0;
        for (int d = 1; d <= degree; ++d) {
            double saved = 0.0;
            for (int r = 0; r < d; ++r) {
                const int left = span - d + 1 + r;
                const double den = knots[left + d] - knots[left];
                const double term = den > 0.0 ? work[r] / den : 0.0;
                work[r] = saved + (knots[left + d] - t) * term;
                saved = (t - knots[left]) * term;
            }
            work[d] = saved;
        }
        for (int r = 0; r <= degree; ++r) out(static_cast<Eigen::Index>(row), span - degree + r) = work[r];
    }
    return out;
}

OrthonormalBasis orthonormalize(const SplineBasisSpec& spec, int grid_size) {
    spec.validate();
    if (grid_size < 10 * spec.Q)
        throw InvalidArgument("grid_size must be >= 10*Q");

    OrthonormalBasis basis;
    basis.spec_ = spec;
    basis.grid_.resize(grid_size);
    for (int g = 0; g < grid_size; ++g)
        basis.grid_[g] = static_cast<double>(g) / static_cast<double>(grid_size - 1);

    const double scale = 1.0 / std::sqrt(static_cast<double>(grid_size));
    Eigen::MatrixXd raw = bspline_matrix(basis.grid_, spec) * scale;

    Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
    Eigen::MatrixXd R =
        qr.matrixQR().topRows(spec.Q).template triangularView<Eigen::Upper>();

    const double tol = 1e-10 * R.cwiseAbs().maxCoeff();
    for (int j = 0; j < spec.Q; ++j) {
        if (std::abs(R(j, j)) <= tol)
            throw RankDeficientBasis("grid evaluation matrix is rank deficient");
        if (R(j, j) < 0.0) R.row(j) = -R.row(j);
    }

    basis.transform_ = R.template triangularView<Eigen::Upper>().solve(
        Eigen::MatrixXd::Identity(spec.Q, spec.Q));
    return basis;
}

Eigen::MatrixXd OrthonormalBasis::evaluate(const std::vector<double>& times) const {
    if (times.empty()) return Eigen::MatrixXd(0, spec_.Q);
    return bspline_matrix(times, spec_) * transform_;
}

}  // namespace msfpca
