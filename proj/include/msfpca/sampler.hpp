#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace msfpca {

struct ChainConfig {
    int chains = 4;
    int warmup_iters = 1000;
    int sampling_iters = 1000;
    std::uint64_t seed = 0;
    double target_accept = 0.8;
    int max_tree_depth = 10;
    double init_radius = 2.0;  // initial coordinates drawn uniformly from (-r, r)
    int threads = 0;           // 0 = hardware concurrency
    bool fixed_path_length = false;  // plain leapfrog HMC fallback
    int fixed_steps = 32;
};

// Posterior sample in unconstrained coordinates, chain-major storage.
struct Draws {
    int chains = 0;
    int iters = 0;
    int dim = 0;
    std::vector<double> data;        // [chain][iter][dim]
    std::vector<double> accept_rate; // per chain, mean accept statistic
    std::vector<int> divergences;    // per chain, post-warmup
    std::vector<double> step_size;   // per chain, adapted

    std::size_t n_draws() const { return static_cast<std::size_t>(chains) * iters; }

    Eigen::Map<const Eigen::VectorXd> draw(int chain, int iter) const {
        return {data.data() + (static_cast<std::size_t>(chain) * iters + iter) * dim,
                static_cast<Eigen::Index>(dim)};
    }
    // flat index s = chain * iters + iter
    Eigen::Map<const Eigen::VectorXd> draw(std::size_t s) const {
        return {data.data() + s * dim, static_cast<Eigen::Index>(dim)};
    }
    double value(int chain, int iter, int d) const {
        return data[(static_cast<std::size_t>(chain) * iters + iter) * dim + d];
    }
};

// log density with gradient; must be reentrant (called from chain threads)
using LogDensityGrad = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

// Dynamic-trajectory Hamiltonian sampler (no-U-turn doubling with multinomial
// state selection), dual-averaging step size and windowed diagonal mass
// adaptation. Identical (config, density) gives bitwise identical Draws
// regardless of the thread count.
Draws run_nuts(const ChainConfig& config, int dim, const LogDensityGrad& density);

// split-R-hat over all chains for one coordinate
double rhat(const Draws& draws, int coordinate);
// rank-normalized effective sample size for one coordinate
double ess(const Draws& draws, int coordinate);

void save_draws(const std::string& path, const Draws& draws, const std::string& meta);
Draws load_draws(const std::string& path, std::string* meta = nullptr);
// wide CSV: chain,iter,<coordinate names>
void export_draws_csv(const std::string& path, const Draws& draws,
                      const std::vector<std::string>& names);

}  // namespace msfpca
