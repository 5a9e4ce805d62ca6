#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <utility>
#include <vector>

#include "hodgeflow/cochain.hpp"
#include "hodgeflow/mdp.hpp"

namespace hodgeflow {

struct StepResult {
    int obs;
    double reward;
    bool done;
    bool truncated;
};

/// Minimal episodic interface with discrete observations and actions.
/// Instances are deterministic functions of (seed, action sequence).
class EpisodicEnv {
  public:
    virtual ~EpisodicEnv() = default;
    virtual void seed(std::uint64_t s) = 0;
    virtual int reset() = 0;
    virtual StepResult step(int action) = 0;
    virtual int n_observations() const = 0;
    virtual int n_actions() const = 0;
    virtual double max_abs_reward() const = 0;
};

using EnvPtr = std::unique_ptr<EpisodicEnv>;

/// Episodic view of a FiniteMdp: start states from d0, horizon truncation
/// (truncated_flag, never done_flag -- learners bootstrap through it).
class MdpEnv : public EpisodicEnv {
  public:
    MdpEnv(std::shared_ptr<const FiniteMdp> mdp, InitialDistribution d0, int horizon)
        : mdp_(std::move(mdp)), d0_(std::move(d0)), horizon_(horizon) {
        if (horizon_ < 1) throw ContractError("mdp_env: horizon must be >= 1");
    }

    void seed(std::uint64_t s) override { rng_.seed(s); }

    int reset() override {
        std::discrete_distribution<int> start(d0_.d0.data(), d0_.d0.data() + d0_.d0.size());
        state_ = start(rng_);
        t_ = 0;
        needs_reset_ = false;
        return state_;
    }

    StepResult step(int action) override {
        if (needs_reset_) throw ContractError("mdp_env: step after episode end without reset");
        if (action < 0 || action >= mdp_->n_actions())
            throw ContractError("mdp_env: action out of range");
        const int n = mdp_->n_states();
        std::vector<double> row(n);
        for (int sp = 0; sp < n; ++sp) row[sp] = mdp_->transition(state_, action, sp);
        std::discrete_distribution<int> next(row.begin(), row.end());
        const int sp = next(rng_);
        const double r = mdp_->reward(state_, action, sp);
        state_ = sp;
        ++t_;
        const bool truncated = t_ >= horizon_;
        needs_reset_ = truncated;
        return {state_, r, false, truncated};
    }

    int n_observations() const override { return mdp_->n_states(); }
    int n_actions() const override { return mdp_->n_actions(); }
    double max_abs_reward() const override { return mdp_->r_max(); }

  private:
    std::shared_ptr<const FiniteMdp> mdp_;
    InitialDistribution d0_;
    int horizon_;
    std::mt19937_64 rng_{0};
    int state_ = 0;
    long t_ = 0;
    bool needs_reset_ = true;
};

// ---------------------------------------------------------------------------
// Ring MDP: n states on a cycle, two deterministic actions (clockwise /
// counterclockwise). Integrable mode builds rewards from a hidden potential,
// r(s,a) = u*(next) - gamma u*(s); non-integrable mode adds epsilon to the
// clockwise edge leaving state 0, breaking every cycle-sum condition.

struct RingSpec {
    int n = 10;
    int horizon = 50;
    double gamma = 0.99;
    enum class Mode { Integrable, NonIntegrable };
    Mode mode = Mode::Integrable;
    double epsilon = 0.1;
    std::uint64_t potential_seed = 0;
    bool zero_potential = false;  // override: u* = 0 everywhere
};

struct RingInstance {
    EnvPtr env;
    std::shared_ptr<const FiniteMdp> mdp;
    VectorXd u_star;  // ground-truth potential
};

inline RingInstance make_ring(const RingSpec& spec) {
    if (spec.n < 3) throw ContractError("make_ring: need at least 3 states");
    const int n = spec.n;
    VectorXd u_star = VectorXd::Zero(n);
    if (!spec.zero_potential) {
        std::mt19937_64 rng(spec.potential_seed);
        std::uniform_real_distribution<double> unif(-1.0, 1.0);
        for (int s = 0; s < n; ++s) u_star[s] = unif(rng);
    }
    // action 0: clockwise (s+1), action 1: counterclockwise (s-1)
    std::vector<MatrixXd> transition(2, MatrixXd::Zero(n, n));
    MatrixXd r_sa(n, 2);
    for (int s = 0; s < n; ++s) {
        const int cw = (s + 1) % n;
        const int ccw = (s + n - 1) % n;
        transition[0](s, cw) = 1.0;
        transition[1](s, ccw) = 1.0;
        r_sa(s, 0) = u_star[cw] - spec.gamma * u_star[s];
        r_sa(s, 1) = u_star[ccw] - spec.gamma * u_star[s];
    }
    if (spec.mode == RingSpec::Mode::NonIntegrable) r_sa(0, 0) += spec.epsilon;
    auto mdp = std::make_shared<const FiniteMdp>(
        FiniteMdp::from_state_action_rewards(std::move(transition), r_sa, spec.gamma));
    auto env = std::make_unique<MdpEnv>(mdp, InitialDistribution::uniform(n), spec.horizon);
    return {std::move(env), std::move(mdp), std::move(u_star)};
}

// ---------------------------------------------------------------------------
// Random-feature MDP: dense random transitions and rewards plus a fixed
// feature matrix for linear function approximation.

struct RandomFeatureSpec {
    int n_states = 50;
    int n_actions = 2;
    int feature_dim = 32;
    double gamma = 0.99;
    std::uint64_t seed = 0;
};

struct RandomFeatureInstance {
    std::shared_ptr<const FiniteMdp> mdp;
    MatrixXd features;  // n_states x feature_dim, column-normalized
};

inline RandomFeatureInstance make_random_feature_mdp(const RandomFeatureSpec& spec) {
    if (spec.n_states < 2 || spec.n_actions < 1 || spec.feature_dim < 1)
        throw ContractError("make_random_feature_mdp: invalid spec");
    std::mt19937_64 rng(spec.seed);
    std::exponential_distribution<double> expo(1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<MatrixXd> transition(spec.n_actions, MatrixXd::Zero(spec.n_states, spec.n_states));
    MatrixXd r_sa(spec.n_states, spec.n_actions);
    for (int a = 0; a < spec.n_actions; ++a)
        for (int s = 0; s < spec.n_states; ++s) {
            double sum = 0.0;
            for (int sp = 0; sp < spec.n_states; ++sp) {
                transition[a](s, sp) = expo(rng);  // Dirichlet(1) row
                sum += transition[a](s, sp);
            }
            transition[a].row(s) /= sum;
            r_sa(s, a) = gauss(rng);
        }

    MatrixXd features(spec.n_states, spec.feature_dim);
    for (int s = 0; s < spec.n_states; ++s)
        for (int j = 0; j < spec.feature_dim; ++j) features(s, j) = gauss(rng);
    for (int j = 0; j < spec.feature_dim; ++j) {
        const double norm = features.col(j).norm();
        if (norm > 0.0) features.col(j) /= norm;
    }

    auto mdp = std::make_shared<const FiniteMdp>(
        FiniteMdp::from_state_action_rewards(std::move(transition), r_sa, spec.gamma));
    return {std::move(mdp), std::move(features)};
}

/// Small dense random MDP + policy, used by diagnostics and tests.
inline FiniteMdp random_mdp(int n_states, int n_actions, double gamma, std::uint64_t seed) {
    RandomFeatureSpec spec;
    spec.n_states = n_states;
    spec.n_actions = n_actions;
    spec.feature_dim = 1;
    spec.gamma = gamma;
    spec.seed = seed;
    return *make_random_feature_mdp(spec).mdp;
}

inline PolicyTable random_policy(int n_states, int n_actions, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::exponential_distribution<double> expo(1.0);
    MatrixXd probs(n_states, n_actions);
    for (int s = 0; s < n_states; ++s) {
        double sum = 0.0;
        for (int a = 0; a < n_actions; ++a) {
            probs(s, a) = expo(rng);
            sum += probs(s, a);
        }
        probs.row(s) /= sum;
    }
    return PolicyTable(std::move(probs));
}

// ---------------------------------------------------------------------------
// Point-mass gridworld: 4 move actions, -1 per step, absorbing goal worth 0.
// Walls keep the position and still cost the step.

class PointMassEnv : public EpisodicEnv {
  public:
    PointMassEnv(int grid_size, int goal_cell, double step_penalty, int start_cell = -1)
        : g_(grid_size), goal_(goal_cell), penalty_(step_penalty), start_(start_cell) {
        if (g_ < 3) throw ContractError("pointmass: grid_size must be >= 3");
        if (goal_ < 0 || goal_ >= g_ * g_) throw ContractError("pointmass: goal out of range");
        max_steps_ = 4 * g_ * g_;
    }

    void seed(std::uint64_t s) override { rng_.seed(s); }

    int reset() override {
        if (start_ >= 0) {
            cell_ = start_;
        } else {
            std::uniform_int_distribution<int> pick(0, g_ * g_ - 2);
            const int c = pick(rng_);
            cell_ = c >= goal_ ? c + 1 : c;  // uniform over non-goal cells
        }
        t_ = 0;
        needs_reset_ = false;
        return cell_;
    }

    StepResult step(int action) override {
        if (needs_reset_) throw ContractError("pointmass: step after episode end without reset");
        if (action < 0 || action >= 4) throw ContractError("pointmass: action out of range");
        if (cell_ == goal_) {
            needs_reset_ = true;
            return {cell_, 0.0, true, false};
        }
        int row = cell_ / g_, col = cell_ % g_;
        switch (action) {
            case 0: row = std::max(0, row - 1); break;
            case 1: row = std::min(g_ - 1, row + 1); break;
            case 2: col = std::max(0, col - 1); break;
            case 3: col = std::min(g_ - 1, col + 1); break;
        }
        cell_ = row * g_ + col;
        ++t_;
        const bool done = cell_ == goal_;
        const bool truncated = !done && t_ >= max_steps_;
        needs_reset_ = done || truncated;
        return {cell_, penalty_, done, truncated};
    }

    int n_observations() const override { return g_ * g_; }
    int n_actions() const override { return 4; }
    double max_abs_reward() const override { return std::abs(penalty_); }

  private:
    int g_;
    int goal_;
    double penalty_;
    int start_;
    int max_steps_;
    std::mt19937_64 rng_{0};
    int cell_ = 0;
    long t_ = 0;
    bool needs_reset_ = true;
};

inline EnvPtr make_pointmass(int grid_size, int goal_cell, double step_penalty = -1.0,
                             int start_cell = -1) {
    return std::make_unique<PointMassEnv>(grid_size, goal_cell, step_penalty, start_cell);
}

// ---------------------------------------------------------------------------
// Non-Markov wrappers (Appendix-style regimes). Each wrapper changes only the
// action interface or the emitted observation; the underlying reward and
// dynamics process is untouched.

struct HoldLastSpec {
    int hold_index = -1;  // must equal env.n_actions(); -1 = derive
    int default_action = 0;
    int max_hold_steps = -1;  // <0: unlimited
};

/// Adds a hidden actuator memory u_mem and a special hold action (last
/// index). Hold replays u_mem; any other action executes and overwrites
/// u_mem. Consecutive holds beyond max_hold_steps reset the memory to the
/// default action. The memory is never exposed in observations.
class HoldLastWrapper : public EpisodicEnv {
  public:
    HoldLastWrapper(EnvPtr inner, HoldLastSpec spec) : inner_(std::move(inner)), spec_(spec) {
        if (spec_.hold_index < 0) spec_.hold_index = inner_->n_actions();
        if (spec_.hold_index != inner_->n_actions())
            throw ContractError("hold_last: hold_index must be env.n_actions()");
        if (spec_.default_action < 0 || spec_.default_action >= inner_->n_actions())
            throw ContractError("hold_last: default_action out of range");
    }

    void seed(std::uint64_t s) override { inner_->seed(s); }

    int reset() override {
        u_mem_ = spec_.default_action;
        hold_count_ = 0;
        return inner_->reset();
    }

    StepResult step(int action) override {
        if (action < 0 || action > spec_.hold_index)
            throw ContractError("hold_last: action out of range");
        int executed;
        if (action == spec_.hold_index) {
            if (spec_.max_hold_steps >= 0 && hold_count_ >= spec_.max_hold_steps) {
                u_mem_ = spec_.default_action;  // budget exceeded: reset memory
                hold_count_ = 0;
            } else {
                ++hold_count_;
            }
            executed = u_mem_;
        } else {
            executed = action;
            u_mem_ = action;
            hold_count_ = 0;
        }
        return inner_->step(executed);
    }

    int n_observations() const override { return inner_->n_observations(); }
    int n_actions() const override { return inner_->n_actions() + 1; }
    double max_abs_reward() const override { return inner_->max_abs_reward(); }

    int memory_for_test() const { return u_mem_; }

  private:
    EnvPtr inner_;
    HoldLastSpec spec_;
    int u_mem_ = 0;
    int hold_count_ = 0;
};

inline EnvPtr wrap_hold_last(EnvPtr env, HoldLastSpec spec = {}) {
    return std::make_unique<HoldLastWrapper>(std::move(env), spec);
}

struct NoiseSpec {
    double alias_prob = 0.1;
    std::uint64_t rng_seed = 0;
};

struct StickySpec {
    double reuse_prob = 0.0;
    std::uint64_t rng_seed = 0;
};

/// With probability p the emitted observation is the previously *emitted*
/// one; the first observation of an episode is never aliased. Rewards,
/// termination, and hidden dynamics pass through unchanged.
class ObservationReuseWrapper : public EpisodicEnv {
  public:
    ObservationReuseWrapper(EnvPtr inner, double prob, std::uint64_t rng_seed)
        : inner_(std::move(inner)), prob_(prob), rng_(rng_seed) {
        if (prob_ < 0.0 || prob_ > 1.0)
            throw ContractError("observation reuse: probability outside [0,1]");
    }

    void seed(std::uint64_t s) override { inner_->seed(s); }

    int reset() override {
        prev_emitted_ = inner_->reset();
        return prev_emitted_;
    }

    StepResult step(int action) override {
        StepResult r = inner_->step(action);
        if (prob_ > 0.0 && unif_(rng_) < prob_) r.obs = prev_emitted_;
        prev_emitted_ = r.obs;
        return r;
    }

    int n_observations() const override { return inner_->n_observations(); }
    int n_actions() const override { return inner_->n_actions(); }
    double max_abs_reward() const override { return inner_->max_abs_reward(); }

  private:
    EnvPtr inner_;
    double prob_;
    std::mt19937_64 rng_;
    std::uniform_real_distribution<double> unif_{0.0, 1.0};
    int prev_emitted_ = 0;
};

inline EnvPtr wrap_noisy(EnvPtr env, const NoiseSpec& spec) {
    return std::make_unique<ObservationReuseWrapper>(std::move(env), spec.alias_prob,
                                                     spec.rng_seed);
}

/// Sticky regime: temporal persistence in the observation interface,
/// realized as probabilistic reuse of the previous emitted observation.
inline EnvPtr wrap_sticky(EnvPtr env, const StickySpec& spec) {
    return std::make_unique<ObservationReuseWrapper>(std::move(env), spec.reuse_prob,
                                                     spec.rng_seed);
}

}  // namespace hodgeflow
