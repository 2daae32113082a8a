#include "msfpca/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <thread>

#include "msfpca/errors.hpp"
#include "msfpca/rng.hpp"
#include "msfpca/stats.hpp"

namespace msfpca {

namespace {

constexpr double kDivergenceThreshold = 1000.0;

struct State {
    Eigen::VectorXd q;
    Eigen::VectorXd p;
    Eigen::VectorXd grad;
    double logp = 0.0;
};

struct Subtree {
    State minus;   // backward end
    State plus;    // forward end
    Eigen::VectorXd sample;
    double log_sum_w = -std::numeric_limits<double>::infinity();
    double sum_accept = 0.0;
    int n_leaf = 0;
    bool divergent = false;
    bool turning = false;
};

double log_add_exp(double a, double b) {
    const double m = std::max(a, b);
    if (!std::isfinite(m)) return m;
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

class NutsChain {
public:
    NutsChain(const ChainConfig& cfg, int dim, const LogDensityGrad& f, std::uint64_t chain_seed)
        : cfg_(cfg), dim_(dim), f_(f), rng_(chain_seed),
          inv_mass_(Eigen::VectorXd::Ones(dim)) {}

    // fills out_draws (sampling_iters x dim, row-major slice of the Draws array)
    void run(double* out_draws, double& accept_rate, int& divergences, double& step_size_out) {
        initialize();
        adapt_and_sample(out_draws, accept_rate, divergences, step_size_out);
    }

private:
    double hamiltonian(const State& s) const {
        return s.logp - 0.5 * s.p.dot(inv_mass_.cwiseProduct(s.p));
    }

    void initialize() {
        cur_.q.resize(dim_);
        cur_.grad.resize(dim_);
        for (int attempt = 0; attempt < 100; ++attempt) {
            for (int d = 0; d < dim_; ++d)
                cur_.q[d] = rng_.uniform(-cfg_.init_radius, cfg_.init_radius);
            cur_.logp = f_(cur_.q, cur_.grad);
            if (std::isfinite(cur_.logp) && cur_.grad.allFinite()) return;
        }
        throw NonFiniteDensity("no finite log density after 100 initial draws");
    }

    void sample_momentum(State& s) {
        s.p.resize(dim_);
        for (int d = 0; d < dim_; ++d) s.p[d] = rng_.normal() / std::sqrt(inv_mass_[d]);
    }

    // one leapfrog step; returns false when the density or gradient blew up
    bool leapfrog(State& s, double eps) {
        s.p.noalias() += 0.5 * eps * s.grad;
        s.q.noalias() += eps * inv_mass_.cwiseProduct(s.p);
        s.logp = f_(s.q, s.grad);
        if (!std::isfinite(s.logp)) return false;
        s.p.noalias() += 0.5 * eps * s.grad;
        return true;
    }

    bool uturn(const State& minus, const State& plus) const {
        Eigen::VectorXd dq = plus.q - minus.q;
        return dq.dot(inv_mass_.cwiseProduct(minus.p)) < 0.0 ||
               dq.dot(inv_mass_.cwiseProduct(plus.p)) < 0.0;
    }

    Subtree leaf(State from, int dir, double eps, double h0) {
        Subtree t;
        const bool ok = leapfrog(from, dir * eps);
        const double h = ok ? hamiltonian(from) : -std::numeric_limits<double>::infinity();
        const double w = h - h0;
        t.divergent = !(w > -kDivergenceThreshold);
        t.sum_accept = std::isfinite(w) ? std::min(1.0, std::exp(w)) : 0.0;
        t.n_leaf = 1;
        t.log_sum_w = w;
        t.sample = from.q;
        t.minus = from;
        t.plus = std::move(from);
        return t;
    }

    Subtree build_tree(int depth, int dir, const State& edge, double eps, double h0) {
        if (depth == 0) return leaf(edge, dir, eps, h0);
        Subtree first = build_tree(depth - 1, dir, edge, eps, h0);
        if (first.divergent || first.turning) return first;
        const State& next_edge = dir > 0 ? first.plus : first.minus;
        Subtree second = build_tree(depth - 1, dir, next_edge, eps, h0);

        Subtree t;
        t.n_leaf = first.n_leaf + second.n_leaf;
        t.sum_accept = first.sum_accept + second.sum_accept;
        t.divergent = second.divergent;
        t.log_sum_w = log_add_exp(first.log_sum_w, second.log_sum_w);
        // multinomial choice between the two halves
        const double u = rng_.uniform();
        t.sample = (std::log(u) < second.log_sum_w - t.log_sum_w) ? std::move(second.sample)
                                                                  : std::move(first.sample);
        if (dir > 0) {
            t.minus = std::move(first.minus);
            t.plus = std::move(second.plus);
        } else {
            t.minus = std::move(second.minus);
            t.plus = std::move(first.plus);
        }
        t.turning = second.turning || (!t.divergent && uturn(t.minus, t.plus));
        return t;
    }

    // one transition; returns mean accept statistic, sets divergent flag
    double transition_nuts(double eps, bool& divergent) {
        sample_momentum(cur_);
        const double h0 = hamiltonian(cur_);

        Subtree tree;
        tree.minus = cur_;
        tree.plus = cur_;
        tree.sample = cur_.q;
        tree.log_sum_w = 0.0;
        double sum_accept = 0.0;
        int n_leaf = 0;
        divergent = false;

        for (int depth = 0; depth < cfg_.max_tree_depth; ++depth) {
            const int dir = rng_.uniform() < 0.5 ? -1 : 1;
            Subtree grown = build_tree(depth, dir, dir > 0 ? tree.plus : tree.minus, eps, h0);
            sum_accept += grown.sum_accept;
            n_leaf += grown.n_leaf;
            if (grown.divergent) {
                divergent = true;
                break;
            }
            if (grown.turning) break;
            // biased progressive sampling toward the new half
            if (std::log(rng_.uniform()) < grown.log_sum_w - tree.log_sum_w)
                tree.sample = grown.sample;
            tree.log_sum_w = log_add_exp(tree.log_sum_w, grown.log_sum_w);
            if (dir > 0)
                tree.plus = std::move(grown.plus);
            else
                tree.minus = std::move(grown.minus);
            if (uturn(tree.minus, tree.plus)) break;
        }

        cur_.q = std::move(tree.sample);
        cur_.logp = f_(cur_.q, cur_.grad);
        return n_leaf > 0 ? sum_accept / n_leaf : 0.0;
    }

    double transition_static(double eps, bool& divergent) {
        sample_momentum(cur_);
        const double h0 = hamiltonian(cur_);
        State prop = cur_;
        bool ok = true;
        for (int s = 0; s < cfg_.fixed_steps && ok; ++s) ok = leapfrog(prop, eps);
        const double h = ok ? hamiltonian(prop) : -std::numeric_limits<double>::infinity();
        const double w = h - h0;
        divergent = !(w > -kDivergenceThreshold);
        const double accept = std::isfinite(w) ? std::min(1.0, std::exp(w)) : 0.0;
        if (!divergent && std::log(rng_.uniform()) < w) cur_ = std::move(prop);
        return accept;
    }

    double transition(double eps, bool& divergent) {
        return cfg_.fixed_path_length ? transition_static(eps, divergent)
                                      : transition_nuts(eps, divergent);
    }

    // double/halve until the one-step accept probability crosses 1/2
    double find_initial_step() {
        State probe = cur_;
        sample_momentum(probe);
        const double h0 = hamiltonian(probe);
        auto accept_of = [&](double e) {
            State trial = probe;
            if (!leapfrog(trial, e)) return 0.0;
            const double a = std::exp(hamiltonian(trial) - h0);
            return std::isfinite(a) ? a : 0.0;
        };
        double eps = 1.0;
        double a = accept_of(eps);
        const bool increase = a > 0.5;
        for (int iter = 0; iter < 50; ++iter) {
            if (increase != (a > 0.5)) break;
            eps *= increase ? 2.0 : 0.5;
            a = accept_of(eps);
        }
        return eps;
    }

    struct DualAveraging {
        double mu = 0.0, log_eps = 0.0, log_eps_bar = 0.0, h_bar = 0.0;
        double gamma = 0.05, t0 = 10.0, kappa = 0.75;
        int m = 1;
        void restart(double eps) {
            mu = std::log(10.0 * eps);
            log_eps = std::log(eps);
            log_eps_bar = std::log(eps);
            h_bar = 0.0;
            m = 1;
        }
        double update(double accept, double target) {
            const double frac = 1.0 / (m + t0);
            h_bar = (1.0 - frac) * h_bar + frac * (target - accept);
            log_eps = mu - std::sqrt(static_cast<double>(m)) / gamma * h_bar;
            const double w = std::pow(static_cast<double>(m), -kappa);
            log_eps_bar = w * log_eps + (1.0 - w) * log_eps_bar;
            ++m;
            return std::exp(log_eps);
        }
    };

    void adapt_and_sample(double* out, double& accept_rate, int& divergences,
                          double& step_size_out) {
        const int W = cfg_.warmup_iters;
        // 15% step-size-only buffer, 75% doubling mass windows, 10% final polish
        const int init_buf = std::max(1, static_cast<int>(0.15 * W));
        const int term_buf = std::max(1, static_cast<int>(0.10 * W));
        const int middle = std::max(0, W - init_buf - term_buf);

        std::vector<int> window_ends;
        {
            int done = 0, size = std::min(middle, 25);
            while (middle > 0 && done < middle) {
                if (done + size >= middle || middle - (done + size) < size * 2)
                    size = middle - done;  // absorb the remainder into the last window
                done += size;
                window_ends.push_back(init_buf + done);
                size *= 2;
            }
        }

        double eps = find_initial_step();
        DualAveraging da;
        da.restart(eps);

        Eigen::VectorXd welford_mean = Eigen::VectorXd::Zero(dim_);
        Eigen::VectorXd welford_m2 = Eigen::VectorXd::Zero(dim_);
        long welford_n = 0;
        std::size_t next_window = 0;

        for (int it = 0; it < W; ++it) {
            bool div = false;
            const double accept = transition(eps, div);
            eps = da.update(accept, cfg_.target_accept);

            const bool in_middle = it >= init_buf && it < init_buf + middle;
            if (in_middle) {
                ++welford_n;
                Eigen::VectorXd delta = cur_.q - welford_mean;
                welford_mean += delta / static_cast<double>(welford_n);
                welford_m2 += delta.cwiseProduct(cur_.q - welford_mean);
            }
            if (next_window < window_ends.size() && it + 1 == window_ends[next_window]) {
                if (welford_n > 1) {
                    const double n = static_cast<double>(welford_n);
                    Eigen::VectorXd var = welford_m2 / (n - 1.0);
                    inv_mass_ = (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
                    welford_mean.setZero();
                    welford_m2.setZero();
                    welford_n = 0;
                }
                eps = find_initial_step();
                da.restart(eps);
                ++next_window;
            }
        }
        if (W > 0) eps = std::exp(da.log_eps_bar);

        double accept_sum = 0.0;
        divergences = 0;
        for (int it = 0; it < cfg_.sampling_iters; ++it) {
            bool div = false;
            accept_sum += transition(eps, div);
            divergences += div ? 1 : 0;
            std::memcpy(out + static_cast<std::size_t>(it) * dim_, cur_.q.data(),
                        sizeof(double) * dim_);
        }
        accept_rate = cfg_.sampling_iters > 0 ? accept_sum / cfg_.sampling_iters : 0.0;
        step_size_out = eps;
    }

    ChainConfig cfg_;
    int dim_;
    const LogDensityGrad& f_;
    Rng rng_;
    Eigen::VectorXd inv_mass_;
    State cur_;
};

}  // namespace

Draws run_nuts(const ChainConfig& config, int dim, const LogDensityGrad& density) {
    if (dim < 1) throw InvalidArgument("dimension must be >= 1");
    if (config.chains < 1) throw InvalidArgument("need at least one chain");
    if (config.sampling_iters < 1) throw InvalidArgument("sampling_iters must be positive");

    Draws draws;
    draws.chains = config.chains;
    draws.iters = config.sampling_iters;
    draws.dim = dim;
    draws.data.assign(draws.n_draws() * static_cast<std::size_t>(dim), 0.0);
    draws.accept_rate.assign(config.chains, 0.0);
    draws.divergences.assign(config.chains, 0);
    draws.step_size.assign(config.chains, 0.0);

    int n_threads = config.threads > 0 ? config.threads
                                       : static_cast<int>(std::thread::hardware_concurrency());
    n_threads = std::max(1, std::min(n_threads, config.chains));

    std::vector<std::exception_ptr> errors(config.chains);
    auto run_chain = [&](int c) {
        try {
            NutsChain chain(config, dim, density, split_seed(config.seed, static_cast<std::uint64_t>(c)));
            chain.run(draws.data.data() + static_cast<std::size_t>(c) * config.sampling_iters * dim,
                      draws.accept_rate[c], draws.divergences[c], draws.step_size[c]);
        } catch (...) {
            errors[c] = std::current_exception();
        }
    };

    if (n_threads == 1) {
        for (int c = 0; c < config.chains; ++c) run_chain(c);
    } else {
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        for (int t = 0; t < n_threads; ++t)
            pool.emplace_back([&] {
                for (int c = next.fetch_add(1); c < config.chains; c = next.fetch_add(1))
                    run_chain(c);
            });
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return draws;
}

namespace {

// split every chain in half; returns sequences as vectors
std::vector<std::vector<double>> split_sequences(const Draws& draws, int coord) {
    const int half = draws.iters / 2;
    std::vector<std::vector<double>> seq;
    for (int c = 0; c < draws.chains; ++c) {
        std::vector<double> a, b;
        for (int t = 0; t < half; ++t) a.push_back(draws.value(c, t, coord));
        for (int t = half; t < 2 * half; ++t) b.push_back(draws.value(c, t, coord));
        seq.push_back(std::move(a));
        seq.push_back(std::move(b));
    }
    return seq;
}

}  // namespace

double rhat(const Draws& draws, int coordinate) {
    if (draws.chains < 2) throw InsufficientChains("split R-hat needs >= 2 chains");
    if (draws.iters < 4) throw InvalidArgument("too few iterations for split R-hat");
    auto seq = split_sequences(draws, coordinate);
    const double n = static_cast<double>(seq.front().size());
    std::vector<double> means;
    double w = 0.0;
    for (const auto& s : seq) {
        means.push_back(mean(s));
        w += variance(s);
    }
    w /= static_cast<double>(seq.size());
    const double b = n * variance(means);
    if (w <= 0.0) return b <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    return std::sqrt(((n - 1.0) / n * w + b / n) / w);
}

double ess(const Draws& draws, int coordinate) {
    if (draws.iters < 4) throw InvalidArgument("too few iterations for ESS");
    auto seq = split_sequences(draws, coordinate);

    // rank-normalize jointly (average ranks for ties, then normal quantiles)
    const std::size_t m = seq.size();
    const std::size_t n = seq.front().size();
    const std::size_t total = m * n;
    std::vector<std::pair<double, std::size_t>> pool;
    pool.reserve(total);
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t t = 0; t < n; ++t) pool.emplace_back(seq[j][t], j * n + t);
    std::sort(pool.begin(), pool.end());
    std::vector<double> z(total);
    std::size_t i = 0;
    while (i < total) {
        std::size_t j = i;
        while (j + 1 < total && pool[j + 1].first == pool[i].first) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        const double q = normal_quantile((avg_rank - 0.375) / (static_cast<double>(total) + 0.25));
        for (std::size_t k = i; k <= j; ++k) z[pool[k].second] = q;
        i = j + 1;
    }
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t t = 0; t < n; ++t) seq[j][t] = z[j * n + t];

    std::vector<double> means;
    double w = 0.0;
    for (const auto& s : seq) {
        means.push_back(mean(s));
        w += variance(s);
    }
    w /= static_cast<double>(m);
    const double b_over_n = means.size() > 1 ? variance(means) : 0.0;
    const double var_plus = w * (static_cast<double>(n) - 1.0) / static_cast<double>(n) + b_over_n;
    if (var_plus <= 0.0) return static_cast<double>(total);

    // mean autocovariance across sequences, lag by lag
    auto acov = [&](std::size_t lag) {
        double acc = 0.0;
        for (const auto& s : seq) {
            const double mu = mean(s);
            double c = 0.0;
            for (std::size_t t = lag; t < n; ++t) c += (s[t] - mu) * (s[t - lag] - mu);
            acc += c / static_cast<double>(n);
        }
        return acc / static_cast<double>(m);
    };

    // Geyer initial positive monotone sequence over paired lags
    double tau = -1.0;
    double prev_pair = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t + 1 < n; t += 2) {
        const double rho_a = 1.0 - (w - acov(t)) / var_plus;
        const double rho_b = 1.0 - (w - acov(t + 1)) / var_plus;
        double pair = rho_a + rho_b;
        if (pair < 0.0) break;
        pair = std::min(pair, prev_pair);
        prev_pair = pair;
        tau += 2.0 * pair;
    }
    tau = std::max(tau, 1.0 / std::log10(static_cast<double>(total) + 10.0));
    return static_cast<double>(total) / tau;
}

namespace {
constexpr char kMagic[8] = {'M', 'S', 'F', 'P', 'C', 'A', 'D', '1'};
}

void save_draws(const std::string& path, const Draws& draws, const std::string& meta) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(kMagic, sizeof(kMagic));
    const std::uint64_t header[3] = {static_cast<std::uint64_t>(draws.chains),
                                     static_cast<std::uint64_t>(draws.iters),
                                     static_cast<std::uint64_t>(draws.dim)};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    const std::uint64_t meta_len = meta.size();
    out.write(reinterpret_cast<const char*>(&meta_len), sizeof(meta_len));
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    out.write(reinterpret_cast<const char*>(draws.accept_rate.data()),
              static_cast<std::streamsize>(sizeof(double) * draws.accept_rate.size()));
    for (int d : draws.divergences) {
        const std::uint64_t v = static_cast<std::uint64_t>(d);
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    out.write(reinterpret_cast<const char*>(draws.step_size.data()),
              static_cast<std::streamsize>(sizeof(double) * draws.step_size.size()));
    out.write(reinterpret_cast<const char*>(draws.data.data()),
              static_cast<std::streamsize>(sizeof(double) * draws.data.size()));
    if (!out) throw IoError("write failed: " + path);
}

Draws load_draws(const std::string& path, std::string* meta) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileNotFound(path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw ConfigParse(path + ": not a draws file (bad magic)");
    std::uint64_t header[3];
    in.read(reinterpret_cast<char*>(header), sizeof(header));
    Draws draws;
    draws.chains = static_cast<int>(header[0]);
    draws.iters = static_cast<int>(header[1]);
    draws.dim = static_cast<int>(header[2]);
    std::uint64_t meta_len = 0;
    in.read(reinterpret_cast<char*>(&meta_len), sizeof(meta_len));
    std::string m(meta_len, '\0');
    in.read(m.data(), static_cast<std::streamsize>(meta_len));
    if (meta) *meta = m;
    draws.accept_rate.resize(draws.chains);
    in.read(reinterpret_cast<char*>(draws.accept_rate.data()),
            static_cast<std::streamsize>(sizeof(double) * draws.accept_rate.size()));
    draws.divergences.resize(draws.chains);
    for (int c = 0; c < draws.chains; ++c) {
        std::uint64_t v = 0;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        draws.divergences[c] = static_cast<int>(v);
    }
    draws.step_size.resize(draws.chains);
    in.read(reinterpret_cast<char*>(draws.step_size.data()),
            static_cast<std::streamsize>(sizeof(double) * draws.step_size.size()));
    draws.data.resize(draws.n_draws() * static_cast<std::size_t>(draws.dim));
    in.read(reinterpret_cast<char*>(draws.data.data()),
            static_cast<std::streamsize>(sizeof(double) * draws.data.size()));
    if (!in) throw ConfigParse(path + ": truncated draws file");
    return draws;
}

void export_draws_csv(const std::string& path, const Draws& draws,
                      const std::vector<std::string>& names) {
    if (static_cast<int>(names.size()) != draws.dim)
        throw DimensionMismatch("coordinate name count does not match dim");
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "chain,iter";
    for (const auto& n : names) out << ',' << n;
    out << '\n';
    out.precision(17);
    for (int c = 0; c < draws.chains; ++c)
        for (int t = 0; t < draws.iters; ++t) {
            out << c << ',' << t;
            for (int d = 0; d < draws.dim; ++d) out << ',' << draws.value(c, t, d);
            out << '\n';
        }
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace msfpca
