#include "msfpca/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "msfpca/errors.hpp"
#include "msfpca/rng.hpp"
#include "msfpca/stats.hpp"

namespace msfpca {

FitResult fit_msfpca(const MultiBlockDataset& data, const FitConfig& cfg) {
    ModelSpec spec = make_model_spec(cfg.K, cfg.Q, cfg.per_block_sigma, cfg.grid_size);
    Model model(data, std::move(spec));

    const Model& m = model;
    LogDensityGrad density = [&m](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        return m.log_posterior_grad(x, g);
    };
    Draws draws = run_nuts(cfg.chain, model.dim(), density);
    RotatedDraws rotated = align_draws(rotate_all(model, draws));

    FitResult fit{std::move(model), std::move(draws), std::move(rotated), 0.0};
    fit.max_rhat = identified_rhat(fit);
    return fit;
}

double identified_rhat(const FitResult& fit) {
    if (fit.draws.chains < 2) return 1.0;
    const ParameterLayout& layout = fit.model.layout();
    const BlockStructure st(fit.model.spec().K);
    const auto cov_idx = unique_covariance_indices(st);

    std::vector<std::pair<int, int>> pairs;
    for (int p1 = 0; p1 < st.n_blocks(); ++p1)
        for (int p2 = p1 + 1; p2 < st.n_blocks(); ++p2) pairs.emplace_back(p1, p2);

    const int n_derived = layout.total_Q() + layout.n_sigma() +
                          static_cast<int>(cov_idx.size()) + static_cast<int>(pairs.size());
    Draws derived;
    derived.chains = fit.draws.chains;
    derived.iters = fit.draws.iters;
    derived.dim = n_derived;
    derived.data.resize(derived.n_draws() * static_cast<std::size_t>(n_derived));

    // The mean structure enters as theta_mu + Theta * mean(alpha): the split
    // between the population coefficients and the score sample mean is a
    // slow-mixing near-redundancy, while this combination (together with the
    // covariance, MI and residual-scale functionals below) is what the
    // summaries report.
    for (std::size_t s = 0; s < fit.rotated.draws.size(); ++s) {
        const RotatedDraw& d = fit.rotated.draws[s];
        double* row = derived.data.data() + s * static_cast<std::size_t>(n_derived);
        const Eigen::VectorXd score_mean = d.alpha.colwise().mean();
        int c = 0;
        int q_off = 0;
        for (int p = 0; p < st.n_blocks(); ++p) {
            const int Qp = layout.block_Q(p);
            Eigen::VectorXd recentered = d.theta_mu.segment(q_off, Qp);
            recentered.noalias() +=
                d.theta[p] * score_mean.segment(st.block_offset(p), st.block_size(p));
            for (int q = 0; q < Qp; ++q) row[c++] = recentered[q];
            q_off += Qp;
        }
        for (int g = 0; g < layout.n_sigma(); ++g) row[c++] = d.sigma_eps[g];
        for (const auto& [r_i, c_i] : cov_idx) row[c++] = d.sigma(r_i, c_i);
        for (const auto& [p1, p2] : pairs)
            row[c++] = normalize_mi(marginal_mi(d.R, st, p1, p2));
    }

    double worst = 1.0;
    for (int d = 0; d < n_derived; ++d) worst = std::max(worst, rhat(derived, d));
    return worst;
}

std::vector<std::pair<int, int>> unique_covariance_indices(const BlockStructure& structure) {
    std::vector<std::pair<int, int>> idx;
    for (int j = 0; j < structure.total(); ++j) idx.emplace_back(j, j);
    for (int i = 0; i < structure.total(); ++i)
        for (int j = 0; j < i; ++j)
            if (structure.block_of(i) != structure.block_of(j)) idx.emplace_back(i, j);
    return idx;
}

std::vector<double> truth_sign_flips(const FitResult& fit, const ScenarioTruth& truth,
                                     const std::vector<double>& grid) {
    const BlockStructure& st = fit.rotated.structure;
    std::vector<double> flips(st.total(), 1.0);
    FittedModel fm = summarize_curves(fit.rotated, fit.model.spec().bases, grid);
    for (int p = 0; p < st.n_blocks(); ++p) {
        const Eigen::MatrixXd basis_eval = fit.model.spec().bases[p].evaluate(grid);
        for (int k = 0; k < st.block_size(p); ++k) {
            const Eigen::VectorXd truth_curve = basis_eval * truth.theta[p].col(k);
            double dot = 0.0;
            for (std::size_t g = 0; g < grid.size(); ++g)
                dot += fm.fpc_curves[p][k].median[g] * truth_curve[static_cast<Eigen::Index>(g)];
            if (dot < 0.0) flips[st.block_offset(p) + k] = -1.0;
        }
    }
    return flips;
}

CurveRecovery recovery_report(const FitResult& fit, const ScenarioTruth& truth,
                              const std::vector<double>& grid) {
    CurveRecovery rec;
    FittedModel fm = summarize_curves(fit.rotated, fit.model.spec().bases, grid);
    const BlockStructure& st = fit.rotated.structure;
    int q_off = 0;
    for (int p = 0; p < st.n_blocks(); ++p) {
        const Eigen::MatrixXd basis_eval = fit.model.spec().bases[p].evaluate(grid);
        const int Qp = fit.model.spec().Q[p];
        const Eigen::VectorXd mean_truth = basis_eval * truth.theta_mu.segment(q_off, Qp);
        double num = 0.0, den = 0.0;
        for (std::size_t g = 0; g < grid.size(); ++g) {
            const double diff = fm.mean_curves[p].median[g] - mean_truth[static_cast<Eigen::Index>(g)];
            num += diff * diff;
            den += mean_truth[static_cast<Eigen::Index>(g)] * mean_truth[static_cast<Eigen::Index>(g)];
        }
        rec.mean_rel_l2.push_back(std::sqrt(num / den));

        const Eigen::VectorXd fpc_truth = basis_eval * truth.theta[p].col(0);
        double plus = 0.0, minus = 0.0, fden = 0.0;
        for (std::size_t g = 0; g < grid.size(); ++g) {
            const double est = fm.fpc_curves[p][0].median[g];
            const double tr = fpc_truth[static_cast<Eigen::Index>(g)];
            plus += (est - tr) * (est - tr);
            minus += (est + tr) * (est + tr);
            fden += tr * tr;
        }
        rec.fpc_rel_l2.push_back(std::sqrt(std::min(plus, minus) / fden));
        q_off += Qp;
    }
    return rec;
}

namespace {

ReplicateResult run_replicate(const ScenarioSpec& scenario_spec, const ScenarioTruth& truth,
                              const FitConfig& fit_cfg, std::uint64_t master_seed, int rep,
                              const std::string& rep_dir) {
    ReplicateResult res;
    res.replicate = rep;
    try {
        ScenarioSpec sim_spec = scenario_spec;
        sim_spec.seed = split_seed(master_seed, 2 * static_cast<std::uint64_t>(rep));
        const MultiBlockDataset data = simulate_dataset(sim_spec, truth);

        FitConfig cfg = fit_cfg;
        cfg.K = sim_spec.K;
        cfg.Q = sim_spec.Q;
        cfg.chain.seed = split_seed(master_seed, 2 * static_cast<std::uint64_t>(rep) + 1);
        FitResult fit = fit_msfpca(data, cfg);
        res.max_rhat = fit.max_rhat;
        res.converged = fit.max_rhat <= 1.05;

        std::vector<double> grid(101);
        for (int g = 0; g < 101; ++g) grid[g] = g / 100.0;
        const std::vector<double> flips = truth_sign_flips(fit, truth, grid);

        const BlockStructure& st = fit.rotated.structure;
        for (const auto& [r_i, c_i] : unique_covariance_indices(st)) {
            std::vector<double> vals(fit.rotated.draws.size());
            for (std::size_t s = 0; s < vals.size(); ++s)
                vals[s] = fit.rotated.draws[s].sigma(r_i, c_i) * flips[r_i] * flips[c_i];
            res.cov_median.push_back(quantile(vals, 0.5));
            res.cov_lo.push_back(quantile(vals, 0.025));
            res.cov_hi.push_back(quantile(vals, 0.975));
        }

        std::vector<std::pair<int, int>> pairs;
        for (int p1 = 0; p1 < st.n_blocks(); ++p1)
            for (int p2 = p1 + 1; p2 < st.n_blocks(); ++p2) pairs.emplace_back(p1, p2);
        for (const auto& est : posterior_association(fit.rotated, pairs, MiKind::Marginal)) {
            res.mi_median.push_back(est.median);
            res.mi_lo.push_back(est.lo);
            res.mi_hi.push_back(est.hi);
        }
        for (const auto& est : posterior_association(fit.rotated, pairs, MiKind::Conditional)) {
            res.cmi_median.push_back(est.median);
            res.cmi_lo.push_back(est.lo);
            res.cmi_hi.push_back(est.hi);
        }
        res.recovery = recovery_report(fit, truth, grid);

        if (!rep_dir.empty()) {
            std::filesystem::create_directories(rep_dir);
            write_records_csv(rep_dir + "/data.csv", data);
            save_draws(rep_dir + "/draws.bin", fit.draws, "coverage replicate");
            write_truth_csv(rep_dir + "/truth.csv", truth);
            FittedModel fm = summarize_curves(fit.rotated, fit.model.spec().bases, grid);
            write_curves_csv(rep_dir + "/curves.csv", fm, data.blocks());
        }
    } catch (const std::exception& e) {
        res.converged = false;
        res.error = e.what();
    }
    return res;
}

}  // namespace

CoverageReport coverage_study(const ScenarioSpec& scenario_spec, int replicates,
                              const FitConfig& fit_cfg, std::uint64_t master_seed,
                              const std::string& out_dir, int threads) {
    if (replicates < 1) throw InvalidArgument("replicates must be >= 1");
    const ScenarioTruth truth = make_truth(scenario_spec);

    CoverageReport report;
    report.scenario = scenario_spec.scenario;
    report.replicates = replicates;
    report.master_seed = master_seed;
    report.pairs = truth.pairs;
    report.mi_truth = truth.mi;
    report.cmi_truth = truth.cmi;

    const auto cov_idx = unique_covariance_indices(truth.structure);
    for (const auto& [r, c] : cov_idx) {
        report.cov_param_names.push_back("sigma[" + std::to_string(r) + "," + std::to_string(c) +
                                         "]");
        report.cov_truth.push_back(truth.sigma(r, c));
    }

    report.results.resize(replicates);
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int rep = next.fetch_add(1); rep < replicates; rep = next.fetch_add(1)) {
            std::string rep_dir;
            if (!out_dir.empty()) {
                char buf[16];
                std::snprintf(buf, sizeof(buf), "rep_%03d", rep + 1);
                rep_dir = out_dir + "/" + to_string(scenario_spec.scenario) + "/" + buf;
            }
            report.results[rep] =
                run_replicate(scenario_spec, truth, fit_cfg, master_seed, rep, rep_dir);
        }
    };
    const int n_threads = std::max(1, std::min(threads, replicates));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    // aggregate over converged replicates
    report.n_converged = 0;
    report.cov_coverage.assign(cov_idx.size(), 0.0);
    report.mi_coverage.assign(truth.pairs.size(), 0.0);
    report.cmi_coverage.assign(truth.pairs.size(), 0.0);
    for (const auto& res : report.results) {
        if (!res.converged) continue;
        ++report.n_converged;
        for (std::size_t c = 0; c < cov_idx.size(); ++c)
            if (res.cov_lo[c] <= report.cov_truth[c] && report.cov_truth[c] <= res.cov_hi[c])
                report.cov_coverage[c] += 1.0;
        for (std::size_t q = 0; q < truth.pairs.size(); ++q) {
            if (res.mi_lo[q] <= truth.mi[q] && truth.mi[q] <= res.mi_hi[q])
                report.mi_coverage[q] += 1.0;
            if (res.cmi_lo[q] <= truth.cmi[q] && truth.cmi[q] <= res.cmi_hi[q])
                report.cmi_coverage[q] += 1.0;
        }
    }
    if (report.n_converged > 0) {
        const double denom = static_cast<double>(report.n_converged);
        for (auto& v : report.cov_coverage) v /= denom;
        for (auto& v : report.mi_coverage) v /= denom;
        for (auto& v : report.cmi_coverage) v /= denom;
    }
    report.avg_cov_coverage = 0.0;
    for (double v : report.cov_coverage) report.avg_cov_coverage += v;
    if (!report.cov_coverage.empty())
        report.avg_cov_coverage /= static_cast<double>(report.cov_coverage.size());
    // 0* convention: a zero-truth MI interval cannot contain the truth
    for (std::size_t q = 0; q < truth.pairs.size(); ++q) {
        if (truth.mi[q] == 0.0) report.mi_coverage[q] = -1.0;
        if (truth.cmi[q] == 0.0) report.cmi_coverage[q] = -1.0;
    }
    return report;
}

void write_coverage_csv(const std::string& path, const CoverageReport& report) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.precision(12);
    out << "quantity,truth,coverage\n";
    for (std::size_t c = 0; c < report.cov_param_names.size(); ++c)
        out << report.cov_param_names[c] << ',' << report.cov_truth[c] << ','
            << report.cov_coverage[c] << '\n';
    for (std::size_t q = 0; q < report.pairs.size(); ++q) {
        const std::string pair_tag =
            std::to_string(report.pairs[q].first + 1) + std::to_string(report.pairs[q].second + 1);
        out << "MI" << pair_tag << ',' << report.mi_truth[q] << ',';
        if (report.mi_coverage[q] < 0.0) out << "0*";
        else out << report.mi_coverage[q];
        out << '\n';
        out << "CMI" << pair_tag << ',' << report.cmi_truth[q] << ',';
        if (report.cmi_coverage[q] < 0.0) out << "0*";
        else out << report.cmi_coverage[q];
        out << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
}

void write_coverage_text(const std::string& path, const CoverageReport& report) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "coverage study, scenario " << to_string(report.scenario) << "\n";
    out << "replicates: " << report.replicates << " (converged: " << report.n_converged << ")\n";
    out << "master seed: " << report.master_seed << "\n\n";
    out.precision(4);
    out << "average covariance-parameter coverage: " << report.avg_cov_coverage << "\n\n";
    out << "parameter coverage:\n";
    for (std::size_t c = 0; c < report.cov_param_names.size(); ++c)
        out << "  " << report.cov_param_names[c] << "  truth " << report.cov_truth[c]
            << "  coverage " << report.cov_coverage[c] << "\n";
    out << "\nnormalized MI / CMI:\n";
    for (std::size_t q = 0; q < report.pairs.size(); ++q) {
        const std::string tag =
            std::to_string(report.pairs[q].first + 1) + std::to_string(report.pairs[q].second + 1);
        out << "  MI" << tag << "  truth " << report.mi_truth[q] << "  coverage ";
        if (report.mi_coverage[q] < 0.0) out << "0*";
        else out << report.mi_coverage[q];
        out << "\n  CMI" << tag << " truth " << report.cmi_truth[q] << "  coverage ";
        if (report.cmi_coverage[q] < 0.0) out << "0*";
        else out << report.cmi_coverage[q];
        out << "\n";
    }
    out << "\nper-replicate status:\n";
    for (const auto& res : report.results) {
        out << "  rep " << (res.replicate + 1) << ": ";
        if (!res.error.empty()) out << "failed (" << res.error << ")";
        else out << (res.converged ? "converged" : "not converged") << ", max rhat " << res.max_rhat;
        out << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace msfpca
