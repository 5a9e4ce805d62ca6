#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "hodgeflow/hodge.hpp"

namespace hodgeflow {

struct Transition {
    int s;
    int a;
    double r;
    int sp;
    bool done = false;
    bool truncated = false;
};

using Batch = std::vector<Transition>;

/// FIFO buffer with uniform with-replacement sampling.
class ReplayBuffer {
  public:
    explicit ReplayBuffer(std::size_t capacity = 100000) : capacity_(capacity) {
        if (capacity_ == 0) throw ContractError("replay_buffer: zero capacity");
    }

    void add(const Transition& t) {
        if (data_.size() < capacity_) {
            data_.push_back(t);
        } else {
            data_[write_] = t;
            write_ = (write_ + 1) % capacity_;
        }
    }

    std::size_t size() const { return data_.size(); }

    Batch sample(std::size_t batch_size, std::mt19937_64& rng) const {
        if (data_.empty()) throw ContractError("replay_buffer: sample from empty buffer");
        std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
        Batch out;
        out.reserve(batch_size);
        for (std::size_t i = 0; i < batch_size; ++i) out.push_back(data_[pick(rng)]);
        return out;
    }

  private:
    std::size_t capacity_;
    std::size_t write_ = 0;
    std::vector<Transition> data_;
};

/// Hyperparameters shared by the TBD/HFPS update family.
struct HfpsConfig {
    double gamma = 0.99;
    double alpha_v = 0.1;  // value step size (3e-4 scale for linear nets)
    double alpha_u = 0.1;  // potential step size
    double delta_max = -1.0;  // <0: derived as 10 r_max / (1-gamma)
    int inner_steps = 5;      // K
    double topo_weight = 0.5;  // lambda_max in [0,1]
    double gate_power = 2.0;   // p >= 1
    double eps_num = 1e-8;
    double rescale_cap = 10.0;
    double grad_clip_norm = 10.0;
    long long target_interval = 1000;
    double eps_start = 1.0;
    double eps_end = 0.05;
    double explore_fraction = 0.5;  // epsilon decays linearly over this fraction
    long long total_steps = 0;      // schedule horizon; 0 = already at eps_end
    bool recompute_after_fit = true;
    bool tabular_potential = false;  // linear agents may carry a tabular potential
    int batch_size = 64;

    void validate() const {
        if (!(gamma > 0.0 && gamma < 1.0)) throw ContractError("hfps_config: gamma");
        if (inner_steps < 1) throw ContractError("hfps_config: inner_steps must be >= 1");
        if (topo_weight < 0.0 || topo_weight > 1.0) throw ContractError("hfps_config: topo_weight");
        if (gate_power < 1.0) throw ContractError("hfps_config: gate_power must be >= 1");
        if (target_interval < 1) throw ContractError("hfps_config: target_interval");
    }
};

enum class Repr { Tabular, Linear };
enum class ValueKind { StateValue, ActionValue };

/// Learnable parameters of one agent: value parameters theta (a V-vector or
/// a Q-table, tabular or linear over bound features), potential parameters
/// phi, and a frozen target copy of theta.
struct AgentState {
    Repr repr = Repr::Tabular;
    Repr phi_repr = Repr::Tabular;  // potential may be tabular under a linear value
    ValueKind kind = ValueKind::ActionValue;
    int n_obs = 0;
    int n_actions = 0;
    MatrixXd features;  // n_obs x d; empty for tabular
    MatrixXd theta;     // tabular: n_obs x cols, linear: d x cols
    MatrixXd theta_target;
    VectorXd phi;  // tabular: n_obs, linear: d
    long long step_count = 0;

    int param_dim() const { return repr == Repr::Tabular ? n_obs : static_cast<int>(features.cols()); }
    int phi_dim() const { return phi_repr == Repr::Tabular ? n_obs : static_cast<int>(features.cols()); }

    double v(int s) const { return value_of(theta, s, 0); }
    double v_target(int s) const { return value_of(theta_target, s, 0); }
    double q(int s, int a) const { return value_of(theta, s, a); }
    double q_target(int s, int a) const { return value_of(theta_target, s, a); }
    double potential(int s) const {
        return phi_repr == Repr::Tabular ? phi[s] : features.row(s).dot(phi);
    }

    /// Gradient of V(s) (or Q(s,*) per column) with respect to theta's rows.
    VectorXd grad_row(int s) const {
        if (repr == Repr::Tabular) {
            VectorXd e = VectorXd::Zero(n_obs);
            e[s] = 1.0;
            return e;
        }
        return features.row(s).transpose();
    }

    VectorXd grad_row_phi(int s) const {
        if (phi_repr == Repr::Tabular) {
            VectorXd e = VectorXd::Zero(n_obs);
            e[s] = 1.0;
            return e;
        }
        return features.row(s).transpose();
    }

    double max_q_target(int s) const {
        double best = q_target(s, 0);
        for (int a = 1; a < n_actions; ++a) best = std::max(best, q_target(s, a));
        return best;
    }

  private:
    double value_of(const MatrixXd& params, int s, int col) const {
        return repr == Repr::Tabular ? params(s, col) : features.row(s).dot(params.col(col));
    }
};

inline AgentState make_tabular_q_agent(int n_obs, int n_actions) {
    AgentState st;
    st.repr = Repr::Tabular;
    st.phi_repr = Repr::Tabular;
    st.kind = ValueKind::ActionValue;
    st.n_obs = n_obs;
    st.n_actions = n_actions;
    st.theta = MatrixXd::Zero(n_obs, n_actions);
    st.theta_target = st.theta;
    st.phi = VectorXd::Zero(n_obs);
    return st;
}

inline AgentState make_tabular_v_agent(int n_obs) {
    AgentState st;
    st.repr = Repr::Tabular;
    st.phi_repr = Repr::Tabular;
    st.kind = ValueKind::StateValue;
    st.n_obs = n_obs;
    st.n_actions = 1;
    st.theta = MatrixXd::Zero(n_obs, 1);
    st.theta_target = st.theta;
    st.phi = VectorXd::Zero(n_obs);
    return st;
}

inline AgentState make_linear_v_agent(MatrixXd features, bool tabular_potential = false) {
    AgentState st;
    st.repr = Repr::Linear;
    st.phi_repr = tabular_potential ? Repr::Tabular : Repr::Linear;
    st.kind = ValueKind::StateValue;
    st.n_obs = static_cast<int>(features.rows());
    st.n_actions = 1;
    st.features = std::move(features);
    st.theta = MatrixXd::Zero(st.features.cols(), 1);
    st.theta_target = st.theta;
    st.phi = VectorXd::Zero(st.phi_dim());
    return st;
}

inline AgentState make_linear_q_agent(MatrixXd features, int n_actions) {
    AgentState st;
    st.repr = Repr::Linear;
    st.phi_repr = Repr::Linear;
    st.kind = ValueKind::ActionValue;
    st.n_obs = static_cast<int>(features.rows());
    st.n_actions = n_actions;
    st.features = std::move(features);
    st.theta = MatrixXd::Zero(st.features.cols(), n_actions);
    st.theta_target = st.theta;
    st.phi = VectorXd::Zero(st.features.cols());
    return st;
}

inline double epsilon_schedule(const HfpsConfig& cfg, long long step) {
    if (cfg.total_steps <= 0) return cfg.eps_end;
    const double horizon = cfg.explore_fraction * static_cast<double>(cfg.total_steps);
    if (horizon <= 0.0) return cfg.eps_end;
    const double frac = std::min(1.0, static_cast<double>(step) / horizon);
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac;
}

/// Greedy action with lowest-index tie break; epsilon-greedy during training.
inline int act(const AgentState& state, int obs, bool evaluate, const HfpsConfig& cfg,
               std::mt19937_64& rng) {
    if (state.kind != ValueKind::ActionValue)
        throw ContractError("act: state-value agents have no action preferences");
    if (obs < 0 || obs >= state.n_obs) throw ContractError("act: observation out of range");
    if (!evaluate) {
        const double eps = epsilon_schedule(cfg, state.step_count);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        if (unif(rng) < eps) {
            std::uniform_int_distribution<int> pick(0, state.n_actions - 1);
            return pick(rng);
        }
    }
    int best = 0;
    double best_q = state.q(obs, 0);
    for (int a = 1; a < state.n_actions; ++a) {
        const double qa = state.q(obs, a);
        if (qa > best_q) {
            best = a;
            best_q = qa;
        }
    }
    return best;
}

namespace detail {

inline void check_finite(const AgentState& st, const char* what) {
    if (!st.theta.allFinite() || !st.phi.allFinite())
        throw DivergenceError(std::string(what) + ": non-finite parameters", st.step_count);
}

inline void bump_step(AgentState& st, const HfpsConfig& cfg) {
    ++st.step_count;
    if (st.step_count % cfg.target_interval == 0) st.theta_target = st.theta;
}

inline void clip_norm(VectorXd& g, double max_norm) {
    const double n = g.norm();
    if (max_norm > 0.0 && n > max_norm) g *= max_norm / n;
}

inline double resolved_delta_max(const HfpsConfig& cfg, double r_max) {
    return cfg.delta_max > 0.0 ? cfg.delta_max : 10.0 * r_max / (1.0 - cfg.gamma);
}

// One gradient-descent step on the potential loss
// (1/B) sum_i (U(sp_i) - gamma U(s_i) - target_i)^2. Clipping is reserved
// for the practical update; the idealized TBD step is the plain gradient.
inline void potential_step(AgentState& st, const Batch& batch, const VectorXd& target,
                           const HfpsConfig& cfg, bool clip) {
    VectorXd grad = VectorXd::Zero(st.phi_dim());
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& t = batch[i];
        const double err = st.potential(t.sp) - cfg.gamma * st.potential(t.s) - target[static_cast<long>(i)];
        grad += (2.0 * inv_b * err) * (st.grad_row_phi(t.sp) - cfg.gamma * st.grad_row_phi(t.s));
    }
    if (clip) clip_norm(grad, cfg.grad_clip_norm);
    st.phi -= cfg.alpha_u * grad;
}

inline VectorXd potential_diffs(const AgentState& st, const Batch& batch, double gamma) {
    VectorXd out(static_cast<long>(batch.size()));
    for (std::size_t i = 0; i < batch.size(); ++i)
        out[static_cast<long>(i)] = st.potential(batch[i].sp) - gamma * st.potential(batch[i].s);
    return out;
}

inline double rms(const VectorXd& v) {
    return std::sqrt(v.squaredNorm() / static_cast<double>(v.size()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Idealized TBD update (state-value form): fit the potential to the batch TD
// errors, then update the value parameters using only the fitted (integrable)
// component. On exactly integrable batches the value step coincides with the
// standard TD semi-gradient step.

struct TbdReport {
    double topo_loss;         // (1/B) sum (delta_i - Delta_i)^2 before the fit step
    double mean_sq_residual;  // (1/B) sum (delta_i - delta_tilde_i)^2 after it
};

inline TbdReport tbd_update(AgentState& st, const Batch& batch, const HfpsConfig& cfg) {
    if (batch.empty()) throw ContractError("tbd_update: empty batch");
    if (st.kind != ValueKind::StateValue)
        throw ContractError("tbd_update: requires a state-value agent");
    const double g = cfg.gamma;
    const long b = static_cast<long>(batch.size());

    VectorXd delta(b);
    for (long i = 0; i < b; ++i) {
        const auto& t = batch[static_cast<std::size_t>(i)];
        delta[i] = t.r + (t.done ? 0.0 : g * st.v(t.sp)) - st.v(t.s);
    }
    VectorXd pot_diff = detail::potential_diffs(st, batch, g);
    const double topo_loss = (delta - pot_diff).squaredNorm() / static_cast<double>(b);

    detail::potential_step(st, batch, delta, cfg, /*clip=*/false);
    if (cfg.recompute_after_fit) pot_diff = detail::potential_diffs(st, batch, g);

    // value step uses only the integrable component delta_tilde = Delta
    VectorXd value_grad = VectorXd::Zero(st.param_dim());
    for (long i = 0; i < b; ++i)
        value_grad += pot_diff[i] * st.grad_row(batch[static_cast<std::size_t>(i)].s);
    st.theta.col(0) += (cfg.alpha_v / static_cast<double>(b)) * value_grad;

    const double mean_sq_residual = (delta - pot_diff).squaredNorm() / static_cast<double>(b);
    detail::bump_step(st, cfg);
    detail::check_finite(st, "tbd_update");
    return {topo_loss, mean_sq_residual};
}

// ---------------------------------------------------------------------------
// Practical HFPS update with TD clipping, a K-step inner potential fit,
// residual-adaptive gating, and norm-preserving rescaling. Action-value
// agents use the max-target form; state-value agents regress V with the same
// pipeline (the fixed-policy evaluation variant).

struct HfpsReport {
    double q_score;
    double lambda_eff;
    double norm_delta_clip;  // RMS over the batch
    double norm_delta_int;
    double norm_delta_res;
    double rescale_factor;
};

inline HfpsReport practical_hfps_update(AgentState& st, const Batch& batch, const HfpsConfig& cfg,
                                        double r_max) {
    if (batch.empty()) throw ContractError("practical_hfps_update: empty batch");
    cfg.validate();
    const double g = cfg.gamma;
    const double dmax = detail::resolved_delta_max(cfg, r_max);
    const long b = static_cast<long>(batch.size());
    const bool q_form = st.kind == ValueKind::ActionValue;

    VectorXd delta_clip(b);
    for (long i = 0; i < b; ++i) {
        const auto& t = batch[static_cast<std::size_t>(i)];
        const double boot = t.done ? 0.0
                            : q_form ? g * st.max_q_target(t.sp)
                                     : g * st.v_target(t.sp);
        const double current = q_form ? st.q(t.s, t.a) : st.v(t.s);
        delta_clip[i] = std::clamp(t.r + boot - current, -dmax, dmax);
    }

    for (int k = 0; k < cfg.inner_steps; ++k)
        detail::potential_step(st, batch, delta_clip, cfg, /*clip=*/true);

    VectorXd delta_int = detail::potential_diffs(st, batch, g)
                             .cwiseMax(-dmax)
                             .cwiseMin(dmax);
    const VectorXd delta_res = delta_clip - delta_int;

    const double n_clip = detail::rms(delta_clip);
    const double n_int = detail::rms(delta_int);
    const double n_res = detail::rms(delta_res);
    const double q_score = std::max(0.0, 1.0 - n_res / (n_clip + cfg.eps_num));
    const double lambda_eff = cfg.topo_weight * std::pow(q_score, cfg.gate_power);

    const VectorXd delta_raw = lambda_eff * delta_int + (1.0 - lambda_eff) * delta_clip;
    const double n_raw = detail::rms(delta_raw);
    const double rescale = std::min(n_clip / (n_raw + cfg.eps_num), cfg.rescale_cap);
    const VectorXd delta_eff = rescale * delta_raw;

    VectorXd grad = VectorXd::Zero(st.param_dim() * st.n_actions);
    for (long i = 0; i < b; ++i) {
        const auto& t = batch[static_cast<std::size_t>(i)];
        const long col = q_form ? t.a : 0;
        grad.segment(col * st.param_dim(), st.param_dim()) += delta_eff[i] * st.grad_row(t.s);
    }
    grad /= static_cast<double>(b);
    detail::clip_norm(grad, cfg.grad_clip_norm);
    for (int a = 0; a < st.n_actions; ++a)
        st.theta.col(a) += cfg.alpha_v * grad.segment(static_cast<long>(a) * st.param_dim(),
                                                      st.param_dim());

    detail::bump_step(st, cfg);
    detail::check_finite(st, "practical_hfps_update");
    return {q_score, lambda_eff, n_clip, n_int, n_res, rescale};
}

// ---------------------------------------------------------------------------
// Baselines.

struct QLearningReport {
    double mean_sq_td_error;
};

inline QLearningReport q_learning_update(AgentState& st, const Batch& batch,
                                         const HfpsConfig& cfg) {
    if (batch.empty()) throw ContractError("q_learning_update: empty batch");
    if (st.kind != ValueKind::ActionValue)
        throw ContractError("q_learning_update: requires an action-value agent");
    const double g = cfg.gamma;
    const long b = static_cast<long>(batch.size());
    MatrixXd grad = MatrixXd::Zero(st.param_dim(), st.n_actions);
    double sq = 0.0;
    for (long i = 0; i < b; ++i) {
        const auto& t = batch[static_cast<std::size_t>(i)];
        const double target = t.r + (t.done ? 0.0 : g * st.max_q_target(t.sp));
        const double td = target - st.q(t.s, t.a);
        sq += td * td;
        grad.col(t.a) += td * st.grad_row(t.s);
    }
    st.theta += (cfg.alpha_v / static_cast<double>(b)) * grad;
    detail::bump_step(st, cfg);
    detail::check_finite(st, "q_learning_update");
    return {sq / static_cast<double>(b)};
}

struct TdReport {
    double mean_sq_td_error;
};

/// Semi-gradient TD(0): w <- w + alpha * mean_i delta_i * grad V(s_i).
inline TdReport linear_td_update(AgentState& st, const Batch& batch, const HfpsConfig& cfg) {
    if (batch.empty()) throw ContractError("linear_td_update: empty batch");
    if (st.kind != ValueKind::StateValue)
        throw ContractError("linear_td_update: requires a state-value agent");
    const double g = cfg.gamma;
    const long b = static_cast<long>(batch.size());
    VectorXd grad = VectorXd::Zero(st.param_dim());
    double sq = 0.0;
    for (long i = 0; i < b; ++i) {
        const auto& t = batch[static_cast<std::size_t>(i)];
        const double delta = t.r + (t.done ? 0.0 : g * st.v(t.sp)) - st.v(t.s);
        sq += delta * delta;
        grad += delta * st.grad_row(t.s);
    }
    st.theta.col(0) += (cfg.alpha_v / static_cast<double>(b)) * grad;
    detail::bump_step(st, cfg);
    detail::check_finite(st, "linear_td_update");
    return {sq / static_cast<double>(b)};
}

// ---------------------------------------------------------------------------
// TD vs HFPS update directions and the residual bias bound
// ||g_HFPS - g_TD|| <= B ||delta_res||, with B the largest per-state value
// gradient norm.

struct GradientPair {
    VectorXd g_td;
    VectorXd g_hfps;
    double gap;            // ||g_hfps - g_td||_2
    double residual_norm;  // C1 norm (exact mode) or batch RMS
    double grad_bound;     // B
    double bound;          // B * residual_norm
};

/// Exact-expectation mode over supp(mu). `features` null selects the tabular
/// representation (indicator gradients, B = 1).
inline GradientPair hfps_gradient_pair(const FiniteMdp& mdp, const DiffOperator& op,
                                       const Cochain0& V, const MatrixXd* features = nullptr) {
    const OccupancyMeasures& occ = *op.occupancy();
    const Cochain1 delta = td_field(mdp, op.occupancy(), V);
    const HodgeDecomposition dec = decompose(op, delta);

    const int dim = features ? static_cast<int>(features->cols()) : occ.n_states();
    VectorXd g_td = VectorXd::Zero(dim);
    VectorXd g_hfps = VectorXd::Zero(dim);
    double grad_bound = 0.0;
    for (int k = 0; k < occ.support_size(); ++k) {
        const auto& t = occ.support()[static_cast<std::size_t>(k)];
        VectorXd feat;
        if (features) {
            feat = features->row(t.s).transpose();
        } else {
            feat = VectorXd::Zero(dim);
            feat[t.s] = 1.0;
        }
        const double w = occ.mu()[k];
        g_td += w * delta[k] * feat;
        g_hfps += w * dec.exact_part[k] * feat;
        grad_bound = std::max(grad_bound, feat.norm());
    }
    const double gap = (g_hfps - g_td).norm();
    return {std::move(g_td), std::move(g_hfps), gap, dec.norm_residual, grad_bound,
            grad_bound * dec.norm_residual};
}

/// Batch mode: the projection is the exact least-squares tabular fit on the
/// batch, and norms are with respect to the empirical measure.
inline GradientPair hfps_gradient_pair(const AgentState& st, const Batch& batch,
                                       const HfpsConfig& cfg) {
    if (batch.empty()) throw ContractError("hfps_gradient_pair: empty batch");
    const double g = cfg.gamma;
    const long b = static_cast<long>(batch.size());

    VectorXd delta(b);
    MatrixXd design = MatrixXd::Zero(b, st.n_obs);
    for (long i = 0; i < b; ++i) {
        const auto& t = batch[static_cast<std::size_t>(i)];
        delta[i] = t.r + (t.done ? 0.0 : g * st.v(t.sp)) - st.v(t.s);
        design(i, t.sp) += 1.0;
        design(i, t.s) -= g;
    }
    const VectorXd u_fit = design.completeOrthogonalDecomposition().solve(delta);
    const VectorXd fitted = design * u_fit;
    const VectorXd res = delta - fitted;

    VectorXd g_td = VectorXd::Zero(st.param_dim());
    VectorXd g_hfps = VectorXd::Zero(st.param_dim());
    double grad_bound = 0.0;
    for (long i = 0; i < b; ++i) {
        const VectorXd feat = st.grad_row(batch[static_cast<std::size_t>(i)].s);
        g_td += delta[i] * feat;
        g_hfps += fitted[i] * feat;
        grad_bound = std::max(grad_bound, feat.norm());
    }
    g_td /= static_cast<double>(b);
    g_hfps /= static_cast<double>(b);
    const double res_rms = detail::rms(res);
    const double gap = (g_hfps - g_td).norm();
    return {std::move(g_td), std::move(g_hfps), gap, res_rms, grad_bound, grad_bound * res_rms};
}

}  // namespace hodgeflow
