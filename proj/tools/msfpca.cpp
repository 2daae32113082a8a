#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "msfpca/config.hpp"
#include "msfpca/errors.hpp"
#include "msfpca/experiments.hpp"
#include "msfpca/rng.hpp"

namespace fs = std::filesystem;
using namespace msfpca;

namespace {

struct RunPaths {
    fs::path root;
    fs::path data() const { return root / "data.csv"; }
    fs::path spec() const { return root / "spec.resolved.toml"; }
    fs::path draws() const { return root / "draws.bin"; }
    fs::path draws_meta() const { return root / "draws_meta.txt"; }
    fs::path report() const { return root / "report.txt"; }
    fs::path summary() const { return root / "summary"; }
};

struct ResolvedSpec {
    std::vector<int> K, Q;
    bool per_block_sigma = false;
    int grid_size = 1001;
    bool standardize = true;
    ChainConfig chain;
};

ResolvedSpec read_spec(const Config& cfg) {
    ResolvedSpec spec;
    spec.K = cfg.get("model.K").as_int_list();
    spec.Q = cfg.get("model.Q").as_int_list();
    spec.per_block_sigma = cfg.get_bool("model.per_block_sigma", false);
    spec.grid_size = static_cast<int>(cfg.get_int("model.grid_size", 1001));
    spec.standardize = cfg.get_bool("model.standardize", true);
    spec.chain.chains = static_cast<int>(cfg.get_int("sampler.chains", 4));
    spec.chain.warmup_iters = static_cast<int>(cfg.get_int("sampler.warmup", 1000));
    spec.chain.sampling_iters = static_cast<int>(cfg.get_int("sampler.iters", 1000));
    spec.chain.seed = static_cast<std::uint64_t>(cfg.get_int("sampler.seed", 0));
    spec.chain.target_accept = cfg.get_real("sampler.target_accept", 0.8);
    spec.chain.max_tree_depth = static_cast<int>(cfg.get_int("sampler.max_depth", 10));
    spec.chain.threads = static_cast<int>(cfg.get_int("sampler.threads", 0));
    return spec;
}

void write_resolved_spec(const fs::path& path, const ResolvedSpec& spec) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    auto list = [](const std::vector<int>& v) {
        std::string s = "[";
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
        return s + "]";
    };
    out << "[model]\n";
    out << "K = " << list(spec.K) << "\n";
    out << "Q = " << list(spec.Q) << "\n";
    out << "per_block_sigma = " << (spec.per_block_sigma ? "true" : "false") << "\n";
    out << "grid_size = " << spec.grid_size << "\n";
    out << "standardize = " << (spec.standardize ? "true" : "false") << "\n\n";
    out << "[sampler]\n";
    out << "chains = " << spec.chain.chains << "\n";
    out << "warmup = " << spec.chain.warmup_iters << "\n";
    out << "iters = " << spec.chain.sampling_iters << "\n";
    out << "seed = " << spec.chain.seed << "\n";
    out << "target_accept = " << spec.chain.target_accept << "\n";
    out << "max_depth = " << spec.chain.max_tree_depth << "\n";
    out << "threads = " << spec.chain.threads << "\n";
    if (!out) throw IoError("write failed: " + path.string());
}

MultiBlockDataset load_run_data(const RunPaths& run, const ResolvedSpec& spec) {
    MultiBlockDataset data = load_long_records(read_records_csv(run.data().string()));
    if (spec.standardize) data = data.standardize_and_rescale();
    return data;
}

// run fit, persist artifacts; returns max identified R-hat
double fit_into_dir(const MultiBlockDataset& data, const ResolvedSpec& spec, const RunPaths& run,
                    const std::string& source_csv, bool draws_csv) {
    if (static_cast<int>(data.n_blocks()) != static_cast<int>(spec.K.size()))
        throw SpecMismatch("data has " + std::to_string(data.n_blocks()) + " blocks, spec has " +
                           std::to_string(spec.K.size()));
    fs::create_directories(run.root);
    if (fs::exists(run.data()) && fs::equivalent(fs::path(source_csv), run.data())) {
        // fitting from a run's own data copy; keep it in place
    } else {
        fs::copy_file(source_csv, run.data(), fs::copy_options::overwrite_existing);
    }
    write_resolved_spec(run.spec(), spec);

    FitConfig cfg;
    cfg.K = spec.K;
    cfg.Q = spec.Q;
    cfg.per_block_sigma = spec.per_block_sigma;
    cfg.grid_size = spec.grid_size;
    cfg.chain = spec.chain;
    FitResult fit = fit_msfpca(data, cfg);

    std::ostringstream meta;
    meta << "msfpca draws v1\nblocks:";
    for (const auto& b : data.blocks()) meta << ' ' << b;
    meta << "\nsubjects: " << data.n_subjects() << "\nK:";
    for (int k : spec.K) meta << ' ' << k;
    meta << "\nQ:";
    for (int q : spec.Q) meta << ' ' << q;
    meta << "\ndim: " << fit.model.dim() << "\nlayout: theta_mu | theta_raw per block"
         << " (column major) | cov_raw | alpha per subject | log_sigma_eps\n";
    save_draws(run.draws().string(), fit.draws, meta.str());

    {
        std::ofstream mf(run.draws_meta());
        mf << meta.str();
        mf << "chains: " << fit.draws.chains << "\niters: " << fit.draws.iters << "\n";
        for (int d = 0; d < fit.model.dim() && d < 64; ++d)
            mf << "coord " << d << ": " << fit.model.layout().name(d) << "\n";
        if (fit.model.dim() > 64) mf << "... (" << fit.model.dim() << " coordinates)\n";
    }
    if (draws_csv) {
        std::vector<std::string> names;
        for (int d = 0; d < fit.model.dim(); ++d) names.push_back(fit.model.layout().name(d));
        export_draws_csv((run.root / "draws.csv").string(), fit.draws, names);
    }

    std::ofstream report(run.report());
    report.precision(6);
    report << "msfpca fit report\n";
    report << "data: " << data.n_subjects() << " subjects, " << data.n_blocks() << " blocks, "
           << data.total_count() << " observations\n";
    report << "model: K =";
    for (int k : spec.K) report << ' ' << k;
    report << ", Q =";
    for (int q : spec.Q) report << ' ' << q;
    report << ", dim = " << fit.model.dim() << "\n";
    report << "sampler: " << spec.chain.chains << " chains x (" << spec.chain.warmup_iters
           << " warmup + " << spec.chain.sampling_iters << " draws), seed " << spec.chain.seed
           << ", target accept " << spec.chain.target_accept << "\n";
    for (int c = 0; c < fit.draws.chains; ++c)
        report << "chain " << c << ": accept " << fit.draws.accept_rate[c] << ", divergences "
               << fit.draws.divergences[c] << ", step " << fit.draws.step_size[c] << "\n";
    report << "max identified R-hat: " << fit.max_rhat << "\n";
    return fit.max_rhat;
}

struct LoadedRun {
    ResolvedSpec spec;
    MultiBlockDataset data;
    Model model;
    Draws draws;
};

LoadedRun load_run(const std::string& run_dir) {
    RunPaths run{fs::path(run_dir)};
    if (!fs::exists(run.draws())) throw FileNotFound(run.draws().string());
    ResolvedSpec spec = read_spec(Config::parse_file(run.spec().string()));
    MultiBlockDataset data = load_run_data(run, spec);
    ModelSpec mspec = make_model_spec(spec.K, spec.Q, spec.per_block_sigma, spec.grid_size);
    Model model(data, std::move(mspec));
    Draws draws = load_draws(run.draws().string());
    if (draws.dim != model.dim())
        throw SpecMismatch("draws dimension " + std::to_string(draws.dim) +
                           " does not match the model (" + std::to_string(model.dim()) + ")");
    return {std::move(spec), std::move(data), std::move(model), std::move(draws)};
}

std::vector<std::pair<int, int>> all_pairs(int P) {
    std::vector<std::pair<int, int>> pairs;
    for (int p1 = 0; p1 < P; ++p1)
        for (int p2 = p1 + 1; p2 < P; ++p2) pairs.emplace_back(p1, p2);
    return pairs;
}

int cmd_simulate(const std::string& scenario, std::uint64_t seed, const std::string& out,
                 int subjects, int timepoints, double rate, bool shared_counts,
                 const std::string& truth_out) {
    ScenarioSpec spec;
    spec.scenario = scenario_from_string(scenario);
    spec.n_subjects = subjects;
    spec.n_timepoints = timepoints;
    spec.mean_rate = rate;
    spec.seed = seed;
    spec.shared_counts = shared_counts;
    ScenarioTruth truth = make_truth(spec);
    MultiBlockDataset data = simulate_dataset(spec, truth);
    write_records_csv(out, data);
    if (!truth_out.empty()) write_truth_csv(truth_out, truth);
    std::cout << "wrote " << data.total_count() << " observations (" << data.n_subjects()
              << " subjects x " << data.n_blocks() << " blocks) to " << out << "\n";
    return 0;
}

int cmd_fit(const std::string& data_path, const std::string& spec_path, const std::string& out,
            int chains, int iters, int warmup, std::int64_t seed, int threads,
            double target_accept, bool draws_csv, bool sweep) {
    Config file_cfg = Config::parse_file(spec_path);
    ResolvedSpec spec = read_spec(file_cfg);
    if (chains > 0) spec.chain.chains = chains;
    if (iters > 0) spec.chain.sampling_iters = iters;
    if (warmup > 0) spec.chain.warmup_iters = warmup;
    if (seed >= 0) spec.chain.seed = static_cast<std::uint64_t>(seed);
    if (threads > 0) spec.chain.threads = threads;
    if (target_accept > 0.0) spec.chain.target_accept = target_accept;

    MultiBlockDataset raw = load_long_records(read_records_csv(data_path));
    MultiBlockDataset data = spec.standardize ? raw.standardize_and_rescale() : raw;

    if (!sweep) {
        RunPaths run{fs::path(out)};
        const double max_rhat = fit_into_dir(data, spec, run, data_path, draws_csv);
        std::cout << "fit written to " << out << " (max identified R-hat " << max_rhat << ")\n";
        return 0;
    }

    if (!file_cfg.has("sweep.K") || !file_cfg.has("sweep.Q"))
        throw ConfigParse("--sweep needs sweep.K and sweep.Q arrays in the spec file");
    const auto sweep_K = file_cfg.get("sweep.K").as_int_lists();
    const auto sweep_Q = file_cfg.get("sweep.Q").as_int_lists();
    if (sweep_K.size() != sweep_Q.size())
        throw ConfigParse("sweep.K and sweep.Q must have the same length");

    struct Candidate {
        std::size_t index;
        double elpd, se;
        std::string dir;
    };
    std::vector<Candidate> ranked;
    for (std::size_t c = 0; c < sweep_K.size(); ++c) {
        ResolvedSpec cand = spec;
        cand.K = sweep_K[c];
        cand.Q = sweep_Q[c];
        RunPaths run{fs::path(out) / ("candidate_" + std::to_string(c + 1))};
        fit_into_dir(data, cand, run, data_path, false);
        LoadedRun loaded = load_run(run.root.string());
        LooReport loo = psis_loo(pointwise_loglik(loaded.model, loaded.draws));
        ranked.push_back({c, loo.elpd_loo, loo.se_elpd, run.root.string()});
        std::cout << "candidate " << (c + 1) << ": elpd_loo = " << loo.elpd_loo << " +- "
                  << loo.se_elpd << "\n";
    }
    std::sort(ranked.begin(), ranked.end(),
              [](const Candidate& a, const Candidate& b) { return a.elpd > b.elpd; });

    fs::create_directories(out);
    std::ofstream rank_csv(fs::path(out) / "sweep.csv");
    rank_csv << "rank,candidate,K,Q,elpd_loo,se\n";
    rank_csv.precision(12);
    for (std::size_t r = 0; r < ranked.size(); ++r) {
        const auto& cand = ranked[r];
        auto join = [](const std::vector<int>& v) {
            std::string s;
            for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "|" : "") + std::to_string(v[i]);
            return s;
        };
        rank_csv << (r + 1) << ',' << (cand.index + 1) << ',' << join(sweep_K[cand.index]) << ','
                 << join(sweep_Q[cand.index]) << ',' << cand.elpd << ',' << cand.se << "\n";
    }
    // promote the winner's artifacts to the run root
    const fs::path best(ranked.front().dir);
    for (const char* f : {"data.csv", "spec.resolved.toml", "draws.bin", "draws_meta.txt",
                          "report.txt"})
        fs::copy_file(best / f, fs::path(out) / f, fs::copy_options::overwrite_existing);
    std::cout << "best candidate: " << (ranked.front().index + 1) << " (elpd_loo "
              << ranked.front().elpd << "); artifacts promoted to " << out << "\n";
    return 0;
}

int cmd_summarize(const std::string& run_dir, int grid_size) {
    LoadedRun run = load_run(run_dir);
    RotatedDraws rotated = align_draws(rotate_all(run.model, run.draws));
    std::vector<double> grid(grid_size);
    for (int g = 0; g < grid_size; ++g)
        grid[g] = static_cast<double>(g) / static_cast<double>(grid_size - 1);
    FittedModel fitted = summarize_curves(rotated, run.model.spec().bases, grid);

    RunPaths paths{fs::path(run_dir)};
    fs::create_directories(paths.summary());
    write_curves_csv((paths.summary() / "curves.csv").string(), fitted, run.data.blocks());

    std::ofstream ev(paths.summary() / "explained_variance.csv");
    ev << "block,component,fraction\n";
    ev.precision(12);
    for (std::size_t p = 0; p < fitted.explained_variance.size(); ++p)
        for (std::size_t k = 0; k < fitted.explained_variance[p].size(); ++k)
            ev << run.data.blocks()[p] << ',' << (k + 1) << ','
               << fitted.explained_variance[p][k] << "\n";

    std::ofstream cov(paths.summary() / "score_covariance.csv");
    cov << "i,j,median,lo,hi\n";
    cov.precision(12);
    for (int r = 0; r < fitted.sigma_median.rows(); ++r)
        for (int c = 0; c < fitted.sigma_median.cols(); ++c)
            cov << r << ',' << c << ',' << fitted.sigma_median(r, c) << ','
                << fitted.sigma_lo(r, c) << ',' << fitted.sigma_hi(r, c) << "\n";
    std::cout << "summaries written to " << (paths.summary()).string() << "\n";
    return 0;
}

int cmd_mi(const std::string& run_dir, const std::string& kind) {
    LoadedRun run = load_run(run_dir);
    RotatedDraws rotated = align_draws(rotate_all(run.model, run.draws));
    const auto pairs = all_pairs(static_cast<int>(run.data.n_blocks()));

    std::vector<AssociationEstimate> estimates;
    if (kind == "marginal" || kind == "both") {
        auto part = posterior_association(rotated, pairs, MiKind::Marginal);
        estimates.insert(estimates.end(), part.begin(), part.end());
    }
    if (kind == "conditional" || kind == "both") {
        auto part = posterior_association(rotated, pairs, MiKind::Conditional);
        estimates.insert(estimates.end(), part.begin(), part.end());
    }
    if (estimates.empty()) throw InvalidArgument("kind must be marginal, conditional or both");

    RunPaths paths{fs::path(run_dir)};
    fs::create_directories(paths.summary());
    write_association_csv((paths.summary() / "association.csv").string(), estimates,
                          run.data.blocks());
    for (const auto& est : estimates)
        std::cout << (est.kind == MiKind::Marginal ? "MI" : "CMI") << '(' << run.data.blocks()[est.p1]
                  << ',' << run.data.blocks()[est.p2] << "): median " << est.median << "  95% ("
                  << est.lo << ", " << est.hi << ")\n";
    return 0;
}

int cmd_loo(const std::string& run_dir) {
    LoadedRun run = load_run(run_dir);
    LooReport report = psis_loo(pointwise_loglik(run.model, run.draws));
    RunPaths paths{fs::path(run_dir)};
    fs::create_directories(paths.summary());
    write_loo_csv((paths.summary() / "loo.csv").string(), report, run.data.subjects());

    int k_ok = 0, k_warn = 0, k_bad = 0;
    for (double k : report.pareto_k) {
        if (k < 0.5) ++k_ok;
        else if (k <= 0.7) ++k_warn;
        else ++k_bad;
    }
    std::cout << "elpd_loo = " << report.elpd_loo << " +- " << report.se_elpd << "\n";
    std::cout << "pareto k: " << k_ok << " below 0.5, " << k_warn << " in [0.5, 0.7], " << k_bad
              << " above 0.7\n";
    return 0;
}

int cmd_ppc(const std::string& run_dir, int reps, std::uint64_t seed) {
    LoadedRun run = load_run(run_dir);
    RotatedDraws rotated = align_draws(rotate_all(run.model, run.draws));
    PpcExport ppc = posterior_predictive(run.model, rotated, reps, seed);
    RunPaths paths{fs::path(run_dir)};
    fs::create_directories(paths.summary());
    write_ppc_csv((paths.summary() / "ppc.csv").string(), ppc, run.model);
    std::cout << "wrote " << reps << " replicates to "
              << (paths.summary() / "ppc.csv").string() << "\n";
    return 0;
}

int cmd_coverage(const std::string& scenario, int reps, const std::string& out, int subjects,
                 int chains, int warmup, int iters, std::uint64_t seed, int threads,
                 double target_accept) {
    ScenarioSpec sspec;
    sspec.scenario = scenario_from_string(scenario);
    sspec.n_subjects = subjects;

    FitConfig fit_cfg;
    fit_cfg.chain.chains = chains;
    fit_cfg.chain.warmup_iters = warmup;
    fit_cfg.chain.sampling_iters = iters;
    fit_cfg.chain.threads = 1;
    fit_cfg.chain.target_accept = target_accept;

    CoverageReport report = coverage_study(sspec, reps, fit_cfg, seed, out, threads);
    fs::create_directories(out);
    write_coverage_csv((fs::path(out) / "coverage.csv").string(), report);
    write_coverage_text((fs::path(out) / "coverage.txt").string(), report);
    std::cout << "coverage study done: " << report.n_converged << "/" << report.replicates
              << " replicates converged, average covariance coverage "
              << report.avg_cov_coverage << "\n";
    std::cout << "report written to " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multivariate sparse functional PCA"};
    app.require_subcommand(1);

    // simulate
    auto* sim = app.add_subcommand("simulate", "generate a synthetic multi-block dataset");
    std::string sim_scenario = "I", sim_out = "data.csv", sim_truth_out;
    std::uint64_t sim_seed = 0;
    int sim_subjects = 100, sim_timepoints = 10;
    double sim_rate = 8.0;
    bool sim_shared = false;
    sim->add_option("--scenario", sim_scenario, "covariance scenario: I, II, III or IV");
    sim->add_option("--seed", sim_seed, "random seed");
    sim->add_option("--out", sim_out, "output CSV path")->required();
    sim->add_option("--subjects", sim_subjects, "number of subjects");
    sim->add_option("--timepoints", sim_timepoints, "candidate time points");
    sim->add_option("--rate", sim_rate, "mean observations per series");
    sim->add_flag("--shared-counts", sim_shared, "draw one count per subject instead of per block");
    sim->add_option("--truth-out", sim_truth_out, "also write the scenario truth table CSV");

    // fit
    auto* fit = app.add_subcommand("fit", "fit the model to a long-format CSV");
    std::string fit_data, fit_spec, fit_out = "run";
    int fit_chains = 0, fit_iters = 0, fit_warmup = 0, fit_threads = 0;
    std::int64_t fit_seed = -1;
    double fit_target = 0.0;
    bool fit_draws_csv = false, fit_sweep = false;
    fit->add_option("--data", fit_data, "long-format CSV")->required();
    fit->add_option("--spec", fit_spec, "model spec TOML")->required();
    fit->add_option("--out", fit_out, "run directory")->required();
    fit->add_option("--chains", fit_chains, "number of chains");
    fit->add_option("--iters", fit_iters, "sampling iterations per chain");
    fit->add_option("--warmup", fit_warmup, "warmup iterations per chain");
    fit->add_option("--seed", fit_seed, "random seed");
    fit->add_option("--threads", fit_threads, "thread cap");
    fit->add_option("--target-accept", fit_target, "dual averaging target");
    fit->add_flag("--draws-csv", fit_draws_csv, "also export draws.csv");
    fit->add_flag("--sweep", fit_sweep, "fit every sweep.K/sweep.Q candidate, rank by elpd_loo");

    // summarize
    auto* summ = app.add_subcommand("summarize", "curve and covariance summaries");
    std::string summ_run;
    int summ_grid = 101;
    summ->add_option("--run", summ_run, "run directory")->required();
    summ->add_option("--grid", summ_grid, "report grid size");

    // mi
    auto* mi = app.add_subcommand("mi", "marginal / conditional mutual information");
    std::string mi_run, mi_kind = "both";
    mi->add_option("--run", mi_run, "run directory")->required();
    mi->add_option("--kind", mi_kind, "marginal, conditional or both");

    // loo
    auto* loo = app.add_subcommand("loo", "PSIS-LOO model diagnostics");
    std::string loo_run;
    loo->add_option("--run", loo_run, "run directory")->required();

    // ppc
    auto* ppc = app.add_subcommand("ppc", "posterior predictive replicates");
    std::string ppc_run;
    int ppc_reps = 100;
    std::uint64_t ppc_seed = 0;
    ppc->add_option("--run", ppc_run, "run directory")->required();
    ppc->add_option("--reps", ppc_reps, "number of replicates");
    ppc->add_option("--seed", ppc_seed, "random seed");

    // coverage
    auto* cov = app.add_subcommand("coverage", "simulation coverage study");
    std::string cov_scenario = "I", cov_out = "report";
    int cov_reps = 20, cov_subjects = 100, cov_chains = 2, cov_warmup = 500, cov_iters = 500;
    int cov_threads = 1;
    std::uint64_t cov_seed = 0;
    double cov_target = 0.9;
    cov->add_option("--scenario", cov_scenario, "covariance scenario");
    cov->add_option("--reps", cov_reps, "number of replicates");
    cov->add_option("--out", cov_out, "report directory")->required();
    cov->add_option("--subjects", cov_subjects, "subjects per replicate");
    cov->add_option("--chains", cov_chains, "chains per fit");
    cov->add_option("--warmup", cov_warmup, "warmup iterations");
    cov->add_option("--iters", cov_iters, "sampling iterations");
    cov->add_option("--seed", cov_seed, "master seed");
    cov->add_option("--threads", cov_threads, "replicate worker threads");
    cov->add_option("--target-accept", cov_target, "dual averaging target");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*sim)
            return cmd_simulate(sim_scenario, sim_seed, sim_out, sim_subjects, sim_timepoints,
                                sim_rate, sim_shared, sim_truth_out);
        if (*fit)
            return cmd_fit(fit_data, fit_spec, fit_out, fit_chains, fit_iters, fit_warmup,
                           fit_seed, fit_threads, fit_target, fit_draws_csv, fit_sweep);
        if (*summ) return cmd_summarize(summ_run, summ_grid);
        if (*mi) return cmd_mi(mi_run, mi_kind);
        if (*loo) return cmd_loo(loo_run);
        if (*ppc) return cmd_ppc(ppc_run, ppc_reps, ppc_seed);
        if (*cov)
            return cmd_coverage(cov_scenario, cov_reps, cov_out, cov_subjects, cov_chains,
                                cov_warmup, cov_iters, cov_seed, cov_threads, cov_target);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: Internal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
