#include "msfpca/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "msfpca/errors.hpp"
#include "msfpca/rng.hpp"
#include "msfpca/stats.hpp"

namespace msfpca {

Eigen::MatrixXd pointwise_loglik(const Model& model, const Draws& draws) {
    if (draws.dim != model.dim())
        throw DimensionMismatch("draws dimension does not match model");
    const std::size_t S = draws.n_draws();
    const int N = model.layout().n_subjects();
    Eigen::MatrixXd ll(S, N);
    for (std::size_t s = 0; s < S; ++s)
        ll.row(s) = model.pointwise_loglik(draws.draw(s)).transpose();
    return ll;
}

GpdFit fit_generalized_pareto(std::vector<double> x) {
    if (x.size() < 5) throw InsufficientTail("GPD fit needs at least 5 exceedances");
    std::sort(x.begin(), x.end());
    const std::size_t n = x.size();
    const double xmax = x.back();
    if (!(xmax > 0.0) || !std::isfinite(xmax) || x.front() == xmax)
        return {-std::numeric_limits<double>::infinity(), 0.0};

    // Zhang & Stephens profile posterior over theta = -k/sigma
    const std::size_t m = 30 + static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
    const double quartile = x[static_cast<std::size_t>(static_cast<double>(n) / 4.0 + 0.5) > 0
                                 ? static_cast<std::size_t>(static_cast<double>(n) / 4.0 + 0.5) - 1
                                 : 0];
    std::vector<double> theta(m), prof(m);
    for (std::size_t j = 0; j < m; ++j) {
        theta[j] = 1.0 / xmax +
                   (1.0 - std::sqrt(static_cast<double>(m) / (static_cast<double>(j) + 0.5))) /
                       (3.0 * quartile);
        double mean_log = 0.0;
        for (double v : x) mean_log += std::log1p(-theta[j] * v);
        mean_log /= static_cast<double>(n);
        const double k = -mean_log;
        prof[j] = static_cast<double>(n) * (std::log(theta[j] / k) + k - 1.0);
    }
    // posterior-mean theta under the profile weights
    const double lmax = *std::max_element(prof.begin(), prof.end());
    double wsum = 0.0, theta_hat = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        const double w = std::exp(prof[j] - lmax);
        wsum += w;
        theta_hat += w * theta[j];
    }
    theta_hat /= wsum;

    double k = 0.0;
    for (double v : x) k += std::log1p(-theta_hat * v);
    k /= static_cast<double>(n);
    GpdFit fit;
    fit.sigma = -k / theta_hat;
    // weakly informative adjustment toward 0.5 stabilizes small tails
    fit.k = (static_cast<double>(n) * k + 5.0) / (static_cast<double>(n) + 10.0);
    return fit;
}

namespace {

double gpd_quantile(double p, double k, double sigma) {
    if (std::abs(k) < 1e-12) return -sigma * std::log1p(-p);
    return sigma / k * (std::pow(1.0 - p, -k) - 1.0);
}

}  // namespace

std::vector<double> pareto_smooth(const std::vector<double>& log_ratios, double& khat) {
    const std::size_t S = log_ratios.size();
    std::vector<double> lw = log_ratios;
    const double lmax = *std::max_element(lw.begin(), lw.end());
    for (double& v : lw) v -= lmax;

    const std::size_t tail_len = std::max<std::size_t>(
        5, static_cast<std::size_t>(
               std::ceil(std::min(0.2 * static_cast<double>(S),
                                  3.0 * std::sqrt(static_cast<double>(S))))));
    khat = -std::numeric_limits<double>::infinity();
    if (tail_len >= S) return lw;  // too few draws to isolate a tail

    std::vector<std::size_t> order(S);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return lw[a] < lw[b]; });

    const double cutoff = std::exp(lw[order[S - tail_len - 1]]);
    std::vector<double> exceed;
    exceed.reserve(tail_len);
    for (std::size_t j = S - tail_len; j < S; ++j) exceed.push_back(std::exp(lw[order[j]]) - cutoff);
    if (*std::max_element(exceed.begin(), exceed.end()) <= 0.0) return lw;  // flat tail

    const GpdFit fit = fit_generalized_pareto(exceed);
    khat = fit.k;
    if (!std::isfinite(fit.k)) return lw;

    // replace tail weights by expected GPD order statistics, keep order,
    // truncate at the raw maximum (zero on the shifted log scale)
    for (std::size_t j = 0; j < tail_len; ++j) {
        const double p = (static_cast<double>(j) + 0.5) / static_cast<double>(tail_len);
        const double smoothed = cutoff + gpd_quantile(p, fit.k, fit.sigma);
        lw[order[S - tail_len + j]] = std::min(std::log(smoothed), 0.0);
    }
    return lw;
}

LooReport psis_loo(const Eigen::MatrixXd& loglik) {
    const std::size_t S = static_cast<std::size_t>(loglik.rows());
    const int N = static_cast<int>(loglik.cols());
    if (S < 100) throw TooFewDraws("PSIS-LOO needs at least 100 draws, got " + std::to_string(S));

    LooReport report;
    report.pointwise.resize(N);
    report.pareto_k.resize(N);
    for (int i = 0; i < N; ++i) {
        std::vector<double> lr(S);
        for (std::size_t s = 0; s < S; ++s) lr[s] = -loglik(s, i);
        double khat = 0.0;
        std::vector<double> lw = pareto_smooth(lr, khat);
        // elpd_i = log( sum w * exp(loglik) / sum w )
        std::vector<double> num(S);
        for (std::size_t s = 0; s < S; ++s) num[s] = lw[s] + loglik(s, i);
        report.pointwise[i] = log_sum_exp(num) - log_sum_exp(lw);
        report.pareto_k[i] = khat;
    }
    report.elpd_loo = std::accumulate(report.pointwise.begin(), report.pointwise.end(), 0.0);
    report.se_elpd = std::sqrt(static_cast<double>(N) * variance(report.pointwise));
    return report;
}

std::vector<double> in_sample_elpd(const Eigen::MatrixXd& loglik) {
    const std::size_t S = static_cast<std::size_t>(loglik.rows());
    std::vector<double> out(loglik.cols());
    std::vector<double> col(S);
    for (int i = 0; i < loglik.cols(); ++i) {
        for (std::size_t s = 0; s < S; ++s) col[s] = loglik(s, i);
        out[i] = log_sum_exp(col) - std::log(static_cast<double>(S));
    }
    return out;
}

PpcExport posterior_predictive(const Model& model, const RotatedDraws& rotated, int n_rep,
                               std::uint64_t seed) {
    const std::size_t S = rotated.draws.size();
    if (n_rep < 1 || static_cast<std::size_t>(n_rep) > S)
        throw InvalidArgument("n_rep must be in [1, draw count]");

    const int P = model.spec().n_blocks();
    const int N = model.layout().n_subjects();
    const BlockStructure& st = rotated.structure;

    PpcExport ppc;
    ppc.blocks = model.data().blocks();
    ppc.observed.resize(P);
    for (int p = 0; p < P; ++p)
        for (int i = 0; i < N; ++i) {
            const Eigen::VectorXd& y = model.observed(i, p);
            for (Eigen::Index v = 0; v < y.size(); ++v) ppc.observed[p].push_back(y[v]);
        }

    ppc.replicated.resize(n_rep);
    for (int r = 0; r < n_rep; ++r) {
        const std::size_t s = static_cast<std::size_t>(
            static_cast<double>(r) * static_cast<double>(S) / static_cast<double>(n_rep));
        const RotatedDraw& d = rotated.draws[s];
        Rng rng(split_seed(seed, static_cast<std::uint64_t>(r)));

        Eigen::LLT<Eigen::MatrixXd> llt(d.sigma);
        if (llt.info() != Eigen::Success)
            throw SingularSubmatrix("rotated score covariance is not positive definite");
        const Eigen::MatrixXd chol = llt.matrixL();

        auto& rep = ppc.replicated[r];
        rep.resize(P);
        Eigen::VectorXd alpha(st.total());
        int q_off;
        for (int i = 0; i < N; ++i) {
            for (int k = 0; k < st.total(); ++k) alpha[k] = rng.normal();
            alpha = chol * alpha;
            q_off = 0;
            for (int p = 0; p < P; ++p) {
                const int Qp = model.spec().Q[p];
                const Eigen::MatrixXd& B = model.basis_rows(i, p);
                const int g = model.spec().per_block_sigma ? p : 0;
                if (B.rows() > 0) {
                    Eigen::VectorXd coef = d.theta_mu.segment(q_off, Qp);
                    coef.noalias() +=
                        d.theta[p] * alpha.segment(st.block_offset(p), st.block_size(p));
                    Eigen::VectorXd y = B * coef;
                    for (Eigen::Index v = 0; v < y.size(); ++v)
                        rep[p].push_back(y[v] + d.sigma_eps[g] * rng.normal());
                }
                q_off += Qp;
            }
        }
    }
    return ppc;
}

void write_loo_csv(const std::string& path, const LooReport& report,
                   const std::vector<std::string>& subjects) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "subject,elpd,pareto_k\n";
    out.precision(12);
    for (std::size_t i = 0; i < report.pointwise.size(); ++i)
        out << subjects[i] << ',' << report.pointwise[i] << ',' << report.pareto_k[i] << '\n';
    if (!out) throw IoError("write failed: " + path);
}

void write_ppc_csv(const std::string& path, const PpcExport& ppc, const Model& model) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "block,rep,subject_id,time,value\n";
    out.precision(12);
    const int P = static_cast<int>(ppc.blocks.size());
    const auto& data = model.data();
    for (int p = 0; p < P; ++p) {
        std::size_t pos = 0;
        for (std::size_t i = 0; i < data.n_subjects(); ++i) {
            const Series& s = data.series(i, p);
            for (std::size_t v = 0; v < s.size(); ++v, ++pos)
                out << ppc.blocks[p] << ",obs," << data.subjects()[i] << ',' << s.times[v] << ','
                    << ppc.observed[p][pos] << '\n';
        }
        for (std::size_t r = 0; r < ppc.replicated.size(); ++r) {
            pos = 0;
            for (std::size_t i = 0; i < data.n_subjects(); ++i) {
                const Series& s = data.series(i, p);
                for (std::size_t v = 0; v < s.size(); ++v, ++pos)
                    out << ppc.blocks[p] << ',' << (r + 1) << ',' << data.subjects()[i] << ','
                        << s.times[v] << ',' << ppc.replicated[r][p][pos] << '\n';
            }
        }
    }
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace msfpca
