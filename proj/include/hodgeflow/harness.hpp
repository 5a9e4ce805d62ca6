#pragma once

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <memory>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "hodgeflow/agents.hpp"
#include "hodgeflow/envs.hpp"

namespace hodgeflow {

// ---------------------------------------------------------------------------
// Experiment configuration.

struct EnvSpec {
    enum class Kind { Ring, RandomFeature, PointMass };
    Kind kind = Kind::Ring;
    RingSpec ring;
    RandomFeatureSpec random_feature;
    int rf_horizon = 50;  // episode length for the random-feature MDP env
    int grid_size = 5;
    int goal_cell = -1;  // <0: bottom-right corner
    double step_penalty = -1.0;
    int start_cell = -1;  // <0: uniform over non-goal cells
};

struct WrapperSpec {
    enum class Kind { HoldLast, Noisy, Sticky };
    Kind kind = Kind::HoldLast;
    HoldLastSpec hold;
    NoiseSpec noise;
    StickySpec sticky;
};

struct AgentSpec {
    // q_learning | hfps | td_linear | hfps_linear | tbd_linear
    std::string kind = "q_learning";
    HfpsConfig cfg;
};

struct RunConfig {
    EnvSpec env;
    std::vector<WrapperSpec> wrappers;
    AgentSpec agent;
    long long total_steps = 10000;
    long long eval_interval = 1000;
    int eval_episodes = 5;
    std::vector<std::uint64_t> seeds = {0};

    void validate() const {
        if (total_steps < 0) throw ContractError("run_config: negative total_steps");
        if (eval_interval <= 0) throw ContractError("run_config: eval_interval must be positive");
        if (total_steps % eval_interval != 0)
            throw ContractError("run_config: eval_interval must divide total_steps");
        if (eval_episodes < 1) throw ContractError("run_config: eval_episodes must be >= 1");
        if (seeds.empty()) throw ContractError("run_config: need at least one seed");
        if (agent.kind != "q_learning" && agent.kind != "hfps" && agent.kind != "td_linear" &&
            agent.kind != "hfps_linear" && agent.kind != "tbd_linear")
            throw ContractError("run_config: unknown agent kind '" + agent.kind + "'");
    }
};

struct SeedSeries {
    std::uint64_t seed = 0;
    std::vector<double> returns;    // one entry per eval point
    std::vector<double> residuals;  // mean residual indicator per interval (NaN when silent)
    std::vector<double> msve;       // filled when exact V^pi is available
    bool failed = false;
    long long fail_step = -1;
};

struct MetricSeries {
    std::vector<long long> steps;  // eval grid including step 0
    std::vector<SeedSeries> per_seed;
};

// ---------------------------------------------------------------------------
// Environment and agent construction. Per-run instance randomness (ring
// potential, random-feature draw) is derived from the run seed, matching the
// sample-once-per-run protocol.

inline EnvPtr build_env(const EnvSpec& spec, std::uint64_t run_seed) {
    EnvPtr env;
    switch (spec.kind) {
        case EnvSpec::Kind::Ring: {
            RingSpec rs = spec.ring;
            rs.potential_seed = mix_seed(rs.potential_seed, run_seed);
            env = make_ring(rs).env;
            break;
        }
        case EnvSpec::Kind::RandomFeature: {
            RandomFeatureSpec rf = spec.random_feature;
            rf.seed = mix_seed(rf.seed, run_seed);
            auto inst = make_random_feature_mdp(rf);
            env = std::make_unique<MdpEnv>(inst.mdp,
                                           InitialDistribution::uniform(rf.n_states),
                                           spec.rf_horizon);
            break;
        }
        case EnvSpec::Kind::PointMass: {
            const int goal = spec.goal_cell >= 0 ? spec.goal_cell
                                                 : spec.grid_size * spec.grid_size - 1;
            env = make_pointmass(spec.grid_size, goal, spec.step_penalty, spec.start_cell);
            break;
        }
    }
    return env;
}

inline EnvPtr apply_wrappers(EnvPtr env, const std::vector<WrapperSpec>& wrappers,
                             std::uint64_t run_seed) {
    for (std::size_t i = 0; i < wrappers.size(); ++i) {
        const auto& w = wrappers[i];
        switch (w.kind) {
            case WrapperSpec::Kind::HoldLast:
                env = wrap_hold_last(std::move(env), w.hold);
                break;
            case WrapperSpec::Kind::Noisy: {
                NoiseSpec ns = w.noise;
                ns.rng_seed = mix_seed(ns.rng_seed ^ run_seed, 200 + i);
                env = wrap_noisy(std::move(env), ns);
                break;
            }
            case WrapperSpec::Kind::Sticky: {
                StickySpec ss = w.sticky;
                ss.rng_seed = mix_seed(ss.rng_seed ^ run_seed, 300 + i);
                env = wrap_sticky(std::move(env), ss);
                break;
            }
        }
    }
    return env;
}

/// Harness-facing agent: action selection, replay storage, one update per
/// environment step once the buffer holds a batch.
class TrainableAgent {
  public:
    virtual ~TrainableAgent() = default;
    virtual int act(int obs, bool evaluate) = 0;
    virtual void observe(const Transition& t) = 0;
    virtual bool ready() const = 0;
    /// One gradient update; returns the residual indicator or NaN.
    virtual double update() = 0;
    virtual const AgentState& state() const = 0;
};

namespace detail {

class ControlAgent : public TrainableAgent {
  public:
    ControlAgent(std::string kind, const HfpsConfig& cfg, int n_obs, int n_actions, double r_max,
                 std::uint64_t seed)
        : kind_(std::move(kind)),
          cfg_(cfg),
          r_max_(r_max),
          state_(make_tabular_q_agent(n_obs, n_actions)),
          rng_(mix_seed(seed, 1)) {}

    int act(int obs, bool evaluate) override {
        return hodgeflow::act(state_, obs, evaluate, cfg_, rng_);
    }
    void observe(const Transition& t) override { buffer_.add(t); }
    bool ready() const override {
        return buffer_.size() >= static_cast<std::size_t>(cfg_.batch_size);
    }
    double update() override {
        const Batch batch = buffer_.sample(static_cast<std::size_t>(cfg_.batch_size), rng_);
        if (kind_ == "q_learning") {
            q_learning_update(state_, batch, cfg_);
            return std::numeric_limits<double>::quiet_NaN();
        }
        const HfpsReport rep = practical_hfps_update(state_, batch, cfg_, r_max_);
        return rep.norm_delta_res * rep.norm_delta_res;
    }
    const AgentState& state() const override { return state_; }

  private:
    std::string kind_;
    HfpsConfig cfg_;
    double r_max_;
    AgentState state_;
    ReplayBuffer buffer_;
    std::mt19937_64 rng_;
};

// Fixed-policy linear evaluation agent (uniform behavior). The value update
// is plain TD(0), the practical HFPS pipeline, or the idealized single-step
// TBD projection.
class LinearEvalAgent : public TrainableAgent {
  public:
    LinearEvalAgent(std::string kind, const HfpsConfig& cfg, MatrixXd features, int n_actions,
                    double r_max, std::uint64_t seed)
        : kind_(std::move(kind)),
          cfg_(cfg),
          n_actions_(n_actions),
          r_max_(r_max),
          state_(make_linear_v_agent(std::move(features), cfg.tabular_potential)),
          rng_(mix_seed(seed, 1)) {}

    int act(int /*obs*/, bool /*evaluate*/) override {
        std::uniform_int_distribution<int> pick(0, n_actions_ - 1);
        return pick(rng_);
    }
    void observe(const Transition& t) override { buffer_.add(t); }
    bool ready() const override {
        return buffer_.size() >= static_cast<std::size_t>(cfg_.batch_size);
    }
    double update() override {
        const Batch batch = buffer_.sample(static_cast<std::size_t>(cfg_.batch_size), rng_);
        if (kind_ == "td_linear") {
            linear_td_update(state_, batch, cfg_);
            return std::numeric_limits<double>::quiet_NaN();
        }
        if (kind_ == "tbd_linear") return tbd_update(state_, batch, cfg_).mean_sq_residual;
        const HfpsReport rep = practical_hfps_update(state_, batch, cfg_, r_max_);
        return rep.norm_delta_res * rep.norm_delta_res;
    }
    const AgentState& state() const override { return state_; }

  private:
    std::string kind_;
    HfpsConfig cfg_;
    int n_actions_;
    double r_max_;
    AgentState state_;
    ReplayBuffer buffer_;
    std::mt19937_64 rng_;
};

}  // namespace detail

inline std::unique_ptr<TrainableAgent> make_agent(const AgentSpec& spec, const EpisodicEnv& env,
                                                  const MatrixXd* features, std::uint64_t seed) {
    HfpsConfig cfg = spec.cfg;
    if (spec.kind == "q_learning" || spec.kind == "hfps")
        return std::make_unique<detail::ControlAgent>(spec.kind, cfg, env.n_observations(),
                                                      env.n_actions(), env.max_abs_reward(), seed);
    if (spec.kind == "td_linear" || spec.kind == "hfps_linear" || spec.kind == "tbd_linear") {
        if (!features)
            throw ContractError("make_agent: linear agents need a feature-bearing environment");
        return std::make_unique<detail::LinearEvalAgent>(spec.kind, cfg, *features,
                                                         env.n_actions(), env.max_abs_reward(),
                                                         seed);
    }
    throw ContractError("make_agent: unknown agent kind '" + spec.kind + "'");
}

// ---------------------------------------------------------------------------
// Training loop.

inline double evaluate_return(const RunConfig& cfg, TrainableAgent& agent, std::uint64_t run_seed,
                              long long eval_index) {
    EnvPtr env = apply_wrappers(build_env(cfg.env, run_seed), cfg.wrappers, run_seed);
    env->seed(mix_seed(run_seed, 100 + static_cast<std::uint64_t>(eval_index)));
    double total = 0.0;
    for (int ep = 0; ep < cfg.eval_episodes; ++ep) {
        int obs = env->reset();
        while (true) {
            const StepResult sr = env->step(agent.act(obs, /*evaluate=*/true));
            total += sr.reward;
            if (sr.done || sr.truncated) break;
            obs = sr.obs;
        }
    }
    return total / cfg.eval_episodes;
}

namespace detail {

struct GroundTruth {
    bool available = false;
    VectorXd v_exact;
    VectorXd nu;
    MatrixXd features;
};

inline GroundTruth ground_truth_for(const RunConfig& cfg, std::uint64_t run_seed) {
    GroundTruth gt;
    if (cfg.env.kind != EnvSpec::Kind::RandomFeature || !cfg.wrappers.empty()) return gt;
    RandomFeatureSpec rf = cfg.env.random_feature;
    rf.seed = mix_seed(rf.seed, run_seed);
    auto inst = make_random_feature_mdp(rf);
    const PolicyTable uniform = PolicyTable::uniform(rf.n_states, rf.n_actions);
    gt.available = true;
    gt.v_exact = exact_value(*inst.mdp, uniform);
    gt.nu = exact_occupancy(*inst.mdp, uniform, InitialDistribution::uniform(rf.n_states)).nu();
    gt.features = inst.features;
    return gt;
}

inline SeedSeries run_single_seed(const RunConfig& cfg, std::uint64_t run_seed) {
    SeedSeries series;
    series.seed = run_seed;

    const GroundTruth gt = ground_truth_for(cfg, run_seed);
    EnvPtr env = apply_wrappers(build_env(cfg.env, run_seed), cfg.wrappers, run_seed);
    env->seed(mix_seed(run_seed, 0));
    const MatrixXd* features = gt.available ? &gt.features : nullptr;

    AgentSpec agent_spec = cfg.agent;
    agent_spec.cfg.total_steps = cfg.total_steps;
    std::unique_ptr<TrainableAgent> agent = make_agent(agent_spec, *env, features, run_seed);

    auto record_eval = [&](long long eval_index, double resid_mean) {
        series.returns.push_back(evaluate_return(cfg, *agent, run_seed, eval_index));
        series.residuals.push_back(resid_mean);
        if (gt.available) {
            const VectorXd v_learned = gt.features * agent->state().theta.col(0);
            series.msve.push_back(
                (gt.nu.array() * (v_learned - gt.v_exact).array().square()).sum());
        }
    };

    try {
        record_eval(0, std::numeric_limits<double>::quiet_NaN());
        int obs = env->reset();
        double resid_acc = 0.0;
        long long resid_n = 0;
        for (long long t = 1; t <= cfg.total_steps; ++t) {
            const int a = agent->act(obs, /*evaluate=*/false);
            const StepResult sr = env->step(a);
            agent->observe({obs, a, sr.reward, sr.obs, sr.done, sr.truncated});
            obs = (sr.done || sr.truncated) ? env->reset() : sr.obs;
            if (agent->ready()) {
                const double r = agent->update();
                if (std::isfinite(r)) {
                    resid_acc += r;
                    ++resid_n;
                }
            }
            if (t % cfg.eval_interval == 0) {
                const double mean_resid =
                    resid_n > 0 ? resid_acc / static_cast<double>(resid_n)
                                : std::numeric_limits<double>::quiet_NaN();
                record_eval(t / cfg.eval_interval, mean_resid);
                resid_acc = 0.0;
                resid_n = 0;
            }
        }
    } catch (const DivergenceError& e) {
        series.failed = true;
        series.fail_step = e.step;
    }
    return series;
}

inline int thread_cap() {
    if (const char* env = std::getenv("HODGEFLOW_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace detail

/// Runs every seed (concurrently up to HODGEFLOW_THREADS) and aggregates in
/// seed order. A diverged seed is marked failed and excluded downstream;
/// other seeds are unaffected.
inline MetricSeries run_experiment(const RunConfig& cfg) {
    cfg.validate();
    MetricSeries out;
    for (long long t = 0; t <= cfg.total_steps; t += cfg.eval_interval) out.steps.push_back(t);
    out.per_seed.resize(cfg.seeds.size());

    const int n_threads =
        std::min<int>(detail::thread_cap(), static_cast<int>(cfg.seeds.size()));
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cfg.seeds.size()) return;
            out.per_seed[i] = detail::run_single_seed(cfg, cfg.seeds[i]);
        }
    };
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scalar and curve metrics.

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // population convention (divide by n)
    int n = 0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
    MeanStd out;
    out.n = static_cast<int>(xs.size());
    if (xs.empty()) return out;
    double s = 0.0;
    for (double x : xs) s += x;
    out.mean = s / out.n;
    double sq = 0.0;
    for (double x : xs) sq += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(sq / out.n);
    return out;
}

/// Trapezoidal area under (t_k, R_k); needs at least two points.
inline double trapezoid_auc(const std::vector<long long>& steps,
                            const std::vector<double>& returns) {
    if (steps.size() != returns.size()) throw ContractError("auc: shape mismatch");
    if (steps.size() < 2) throw ContractError("auc: need at least two evaluation points");
    double acc = 0.0;
    for (std::size_t k = 1; k < steps.size(); ++k) {
        if (steps[k] <= steps[k - 1]) throw ContractError("auc: steps must increase");
        acc += 0.5 * (returns[k] + returns[k - 1]) *
               static_cast<double>(steps[k] - steps[k - 1]);
    }
    return acc;
}

struct AucSummary {
    std::vector<double> per_seed;
    MeanStd agg;
};

inline AucSummary auc_at_t(const MetricSeries& series) {
    AucSummary out;
    for (const auto& s : series.per_seed) {
        if (s.failed) continue;
        out.per_seed.push_back(trapezoid_auc(series.steps, s.returns));
    }
    out.agg = mean_std(out.per_seed);
    return out;
}

/// Cumulative trapezoid curve: element m-1 is cAUC(t_{m+1}) for m >= 1, so
/// the final element equals auc_at_t for the same seed.
inline std::vector<double> cauc(const std::vector<long long>& steps,
                                const std::vector<double>& returns) {
    if (steps.size() != returns.size()) throw ContractError("cauc: shape mismatch");
    if (steps.size() < 2) throw ContractError("cauc: need at least two evaluation points");
    std::vector<double> out;
    double acc = 0.0;
    for (std::size_t k = 1; k < steps.size(); ++k) {
        acc += 0.5 * (returns[k] + returns[k - 1]) *
               static_cast<double>(steps[k] - steps[k - 1]);
        out.push_back(acc);
    }
    return out;
}

inline MeanStd final_at_t(const MetricSeries& series) {
    std::vector<double> finals;
    for (const auto& s : series.per_seed)
        if (!s.failed && !s.returns.empty()) finals.push_back(s.returns.back());
    return mean_std(finals);
}

/// Population std across seeds at each evaluation step.
inline std::vector<double> cross_seed_std(const MetricSeries& series) {
    std::size_t n_ok = 0;
    for (const auto& s : series.per_seed)
        if (!s.failed) ++n_ok;
    if (n_ok < 2) throw ContractError("cross_seed_std: need at least two surviving seeds");
    std::vector<double> out;
    for (std::size_t k = 0; k < series.steps.size(); ++k) {
        std::vector<double> col;
        for (const auto& s : series.per_seed)
            if (!s.failed) col.push_back(s.returns[k]);
        out.push_back(mean_std(col).std);
    }
    return out;
}

/// nu-weighted mean squared value error.
inline double msve(const VectorXd& v_learned, const VectorXd& v_exact, const VectorXd& nu) {
    if (v_learned.size() != v_exact.size() || v_learned.size() != nu.size())
        throw ContractError("msve: shape mismatch");
    return (nu.array() * (v_learned - v_exact).array().square()).sum();
}

}  // namespace hodgeflow
