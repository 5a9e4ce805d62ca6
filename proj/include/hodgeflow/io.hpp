#pragma once

#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hodgeflow/diagnostics.hpp"
#include "hodgeflow/harness.hpp"
#include "hodgeflow/hodge.hpp"

namespace hodgeflow {

using nlohmann::json;

namespace io_detail {

inline json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ContractError("cannot open file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ContractError("parse error in " + path + ": " + e.what());
    }
    return j;
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ContractError("bad value for '" + key + "': " + e.what());
    }
}

template <typename T>
T require(const json& j, const std::string& key) {
    if (!j.contains(key)) throw ContractError("missing required field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ContractError("bad value for '" + key + "': " + e.what());
    }
}

}  // namespace io_detail

// ---------------------------------------------------------------------------
// MDP / policy / value documents. Tensors are dense row-major with state
// outermost: transition[(s * n_actions + a) * n_states + s'].

struct MdpDocument {
    FiniteMdp mdp;
    InitialDistribution d0;
};

inline MdpDocument load_mdp(const std::string& path) {
    const json j = io_detail::load_json_file(path);
    const int n = io_detail::require<int>(j, "n_states");
    const int na = io_detail::require<int>(j, "n_actions");
    const double gamma = io_detail::require<double>(j, "gamma");
    if (n <= 0 || na <= 0) throw ContractError(path + ": non-positive dimensions");
    const auto p_flat = io_detail::require<std::vector<double>>(j, "transition");
    const auto r_flat = io_detail::require<std::vector<double>>(j, "reward");
    if (p_flat.size() != static_cast<std::size_t>(n) * na * n)
        throw ContractError(path + ": transition length != n_states*n_actions*n_states");
    const bool reward_sa = r_flat.size() == static_cast<std::size_t>(n) * na;
    if (!reward_sa && r_flat.size() != static_cast<std::size_t>(n) * na * n)
        throw ContractError(path + ": reward length must be n*a or n*a*n");

    std::vector<MatrixXd> transition(na, MatrixXd::Zero(n, n));
    for (int s = 0; s < n; ++s)
        for (int a = 0; a < na; ++a)
            for (int sp = 0; sp < n; ++sp)
                transition[a](s, sp) = p_flat[(static_cast<std::size_t>(s) * na + a) * n + sp];

    VectorXd d0 = VectorXd::Constant(n, 1.0 / n);
    if (j.contains("initial_distribution")) {
        const auto d = io_detail::require<std::vector<double>>(j, "initial_distribution");
        if (d.size() != static_cast<std::size_t>(n))
            throw ContractError(path + ": initial_distribution length mismatch");
        d0 = Eigen::Map<const VectorXd>(d.data(), n);
    }

    if (reward_sa) {
        MatrixXd r_sa(n, na);
        for (int s = 0; s < n; ++s)
            for (int a = 0; a < na; ++a) r_sa(s, a) = r_flat[static_cast<std::size_t>(s) * na + a];
        return {FiniteMdp::from_state_action_rewards(std::move(transition), r_sa, gamma),
                InitialDistribution(std::move(d0))};
    }
    std::vector<MatrixXd> reward(na, MatrixXd::Zero(n, n));
    for (int s = 0; s < n; ++s)
        for (int a = 0; a < na; ++a)
            for (int sp = 0; sp < n; ++sp)
                reward[a](s, sp) = r_flat[(static_cast<std::size_t>(s) * na + a) * n + sp];
    return {FiniteMdp(std::move(transition), std::move(reward), gamma),
            InitialDistribution(std::move(d0))};
}

inline json mdp_to_json(const FiniteMdp& mdp, const InitialDistribution& d0) {
    const int n = mdp.n_states(), na = mdp.n_actions();
    std::vector<double> p_flat, r_flat;
    p_flat.reserve(static_cast<std::size_t>(n) * na * n);
    r_flat.reserve(static_cast<std::size_t>(n) * na * n);
    for (int s = 0; s < n; ++s)
        for (int a = 0; a < na; ++a)
            for (int sp = 0; sp < n; ++sp) {
                p_flat.push_back(mdp.transition(s, a, sp));
                r_flat.push_back(mdp.reward(s, a, sp));
            }
    json j;
    j["n_states"] = n;
    j["n_actions"] = na;
    j["gamma"] = mdp.gamma();
    j["transition"] = p_flat;
    j["reward"] = r_flat;
    j["initial_distribution"] = std::vector<double>(d0.d0.data(), d0.d0.data() + n);
    return j;
}

inline PolicyTable load_policy(const std::string& path, int n_states, int n_actions) {
    const json j = io_detail::load_json_file(path);
    const auto flat = io_detail::require<std::vector<double>>(j, "probs");
    if (flat.size() != static_cast<std::size_t>(n_states) * n_actions)
        throw ContractError(path + ": policy length != n_states*n_actions");
    MatrixXd probs(n_states, n_actions);
    for (int s = 0; s < n_states; ++s)
        for (int a = 0; a < n_actions; ++a)
            probs(s, a) = flat[static_cast<std::size_t>(s) * n_actions + a];
    return PolicyTable(std::move(probs));
}

inline VectorXd load_values(const std::string& path, int n_states) {
    const json j = io_detail::load_json_file(path);
    const auto vals = io_detail::require<std::vector<double>>(j, "values");
    if (vals.size() != static_cast<std::size_t>(n_states))
        throw ContractError(path + ": values length != n_states");
    return Eigen::Map<const VectorXd>(vals.data(), n_states);
}

// ---------------------------------------------------------------------------
// Decomposition report.

inline json decomposition_report(const HodgeDecomposition& dec, const FiniteMdp& mdp,
                                 const Cochain0& mean_defect_field) {
    json j;
    j["gamma"] = mdp.gamma();
    j["n_states"] = mdp.n_states();
    j["norm_input"] = dec.norm_input;
    j["norm_exact"] = dec.norm_exact;
    j["norm_residual"] = dec.norm_residual;
    j["orthogonality_defect"] = dec.orthogonality_defect;
    j["pythagoras_defect"] = dec.pythagoras_defect;
    j["u_star"] = std::vector<double>(dec.u_star.values().data(),
                                      dec.u_star.values().data() + mdp.n_states());
    json md;
    md["max_abs"] = mean_defect_field.values().cwiseAbs().maxCoeff();
    md["values"] = std::vector<double>(mean_defect_field.values().data(),
                                       mean_defect_field.values().data() + mdp.n_states());
    j["mean_defect"] = md;
    return j;
}

inline json theorem_report_to_json(const TheoremReport& rep, bool expected_pass = true) {
    json j;
    j["name"] = rep.name;
    j["measured"] = rep.measured;
    j["bound"] = rep.bound;
    j["pass"] = rep.pass;
    j["tolerance"] = rep.tolerance;
    j["expected_pass"] = expected_pass;
    j["as_expected"] = rep.pass == expected_pass;
    return j;
}

// ---------------------------------------------------------------------------
// Run configuration document.

inline RunConfig parse_run_config(const json& j) {
    RunConfig cfg;
    const json env = io_detail::require<json>(j, "env");
    const std::string env_kind = io_detail::require<std::string>(env, "kind");
    if (env_kind == "ring") {
        cfg.env.kind = EnvSpec::Kind::Ring;
        cfg.env.ring.n = io_detail::get_or(env, "n", 10);
        cfg.env.ring.horizon = io_detail::get_or(env, "horizon", 50);
        cfg.env.ring.gamma = io_detail::get_or(env, "gamma", 0.99);
        const std::string mode = io_detail::get_or<std::string>(env, "mode", "integrable");
        if (mode == "integrable")
            cfg.env.ring.mode = RingSpec::Mode::Integrable;
        else if (mode == "nonintegrable")
            cfg.env.ring.mode = RingSpec::Mode::NonIntegrable;
        else
            throw ContractError("env.mode must be integrable|nonintegrable");
        cfg.env.ring.epsilon = io_detail::get_or(env, "epsilon", 0.1);
        cfg.env.ring.potential_seed = io_detail::get_or<std::uint64_t>(env, "potential_seed", 0);
    } else if (env_kind == "random_feature") {
        cfg.env.kind = EnvSpec::Kind::RandomFeature;
        cfg.env.random_feature.n_states = io_detail::get_or(env, "n_states", 50);
        cfg.env.random_feature.n_actions = io_detail::get_or(env, "n_actions", 2);
        cfg.env.random_feature.feature_dim = io_detail::get_or(env, "feature_dim", 32);
        cfg.env.random_feature.gamma = io_detail::get_or(env, "gamma", 0.99);
        cfg.env.random_feature.seed = io_detail::get_or<std::uint64_t>(env, "seed", 0);
        cfg.env.rf_horizon = io_detail::get_or(env, "horizon", 50);
    } else if (env_kind == "pointmass") {
        cfg.env.kind = EnvSpec::Kind::PointMass;
        cfg.env.grid_size = io_detail::get_or(env, "grid_size", 5);
        cfg.env.goal_cell = io_detail::get_or(env, "goal_cell", -1);
        cfg.env.step_penalty = io_detail::get_or(env, "step_penalty", -1.0);
        cfg.env.start_cell = io_detail::get_or(env, "start_cell", -1);
    } else {
        throw ContractError("unknown env kind '" + env_kind + "'");
    }

    for (const json& w : io_detail::get_or(j, "wrappers", json::array())) {
        WrapperSpec ws;
        const std::string kind = io_detail::require<std::string>(w, "kind");
        if (kind == "hold_last") {
            ws.kind = WrapperSpec::Kind::HoldLast;
            ws.hold.default_action = io_detail::get_or(w, "default_action", 0);
            ws.hold.max_hold_steps = io_detail::get_or(w, "max_hold_steps", -1);
        } else if (kind == "noisy") {
            ws.kind = WrapperSpec::Kind::Noisy;
            ws.noise.alias_prob = io_detail::get_or(w, "alias_prob", 0.1);
            ws.noise.rng_seed = io_detail::get_or<std::uint64_t>(w, "rng_seed", 0);
        } else if (kind == "sticky") {
            ws.kind = WrapperSpec::Kind::Sticky;
            ws.sticky.reuse_prob = io_detail::get_or(w, "reuse_prob", 0.25);
            ws.sticky.rng_seed = io_detail::get_or<std::uint64_t>(w, "rng_seed", 0);
        } else {
            throw ContractError("unknown wrapper kind '" + kind + "'");
        }
        cfg.wrappers.push_back(ws);
    }

    const json agent = io_detail::require<json>(j, "agent");
    cfg.agent.kind = io_detail::require<std::string>(agent, "kind");
    HfpsConfig& hc = cfg.agent.cfg;
    hc.gamma = io_detail::get_or(agent, "gamma", hc.gamma);
    hc.alpha_v = io_detail::get_or(agent, "alpha_v", hc.alpha_v);
    hc.alpha_u = io_detail::get_or(agent, "alpha_u", hc.alpha_u);
    hc.delta_max = io_detail::get_or(agent, "delta_max", hc.delta_max);
    hc.inner_steps = io_detail::get_or(agent, "inner_steps", hc.inner_steps);
    hc.topo_weight = io_detail::get_or(agent, "topo_weight", hc.topo_weight);
    hc.gate_power = io_detail::get_or(agent, "gate_power", hc.gate_power);
    hc.eps_num = io_detail::get_or(agent, "eps_num", hc.eps_num);
    hc.rescale_cap = io_detail::get_or(agent, "rescale_cap", hc.rescale_cap);
    hc.grad_clip_norm = io_detail::get_or(agent, "grad_clip_norm", hc.grad_clip_norm);
    hc.target_interval = io_detail::get_or(agent, "target_interval", hc.target_interval);
    hc.eps_start = io_detail::get_or(agent, "eps_start", hc.eps_start);
    hc.eps_end = io_detail::get_or(agent, "eps_end", hc.eps_end);
    hc.explore_fraction = io_detail::get_or(agent, "explore_fraction", hc.explore_fraction);
    hc.recompute_after_fit = io_detail::get_or(agent, "recompute_after_fit", hc.recompute_after_fit);
    hc.tabular_potential = io_detail::get_or(agent, "tabular_potential", hc.tabular_potential);
    hc.batch_size = io_detail::get_or(agent, "batch_size", hc.batch_size);
    hc.validate();

    cfg.total_steps = io_detail::require<long long>(j, "total_steps");
    cfg.eval_interval = io_detail::get_or<long long>(j, "eval_interval", cfg.total_steps);
    cfg.eval_episodes = io_detail::get_or(j, "eval_episodes", 5);
    if (j.contains("seeds")) cfg.seeds = io_detail::require<std::vector<std::uint64_t>>(j, "seeds");
    cfg.validate();
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    return parse_run_config(io_detail::load_json_file(path));
}

// ---------------------------------------------------------------------------
// Delimited-text outputs. All floats go through format_double so reruns are
// byte-identical.

inline std::string metric_series_tsv(const MetricSeries& series) {
    std::ostringstream out;
    out << "step\tseed\treturn\tresidual_indicator\n";
    for (const auto& s : series.per_seed) {
        if (s.failed) continue;
        for (std::size_t k = 0; k < series.steps.size(); ++k)
            out << series.steps[k] << '\t' << s.seed << '\t' << format_double(s.returns[k])
                << '\t' << format_double(s.residuals[k]) << '\n';
    }
    return out.str();
}

inline std::string msve_series_tsv(const MetricSeries& series) {
    std::ostringstream out;
    out << "step\tseed\tmsve\n";
    for (const auto& s : series.per_seed) {
        if (s.failed || s.msve.empty()) continue;
        for (std::size_t k = 0; k < series.steps.size(); ++k)
            out << series.steps[k] << '\t' << s.seed << '\t' << format_double(s.msve[k]) << '\n';
    }
    return out.str();
}

inline std::string summary_tsv(const std::string& label, const MetricSeries& series) {
    const AucSummary auc = auc_at_t(series);
    const MeanStd fin = final_at_t(series);
    int failed = 0;
    for (const auto& s : series.per_seed)
        if (s.failed) ++failed;
    std::ostringstream out;
    out << "agent\tn_seeds\tn_failed\tauc_mean\tauc_std\tfinal_mean\tfinal_std\n";
    out << label << '\t' << series.per_seed.size() << '\t' << failed << '\t'
        << format_double(auc.agg.mean) << '\t' << format_double(auc.agg.std) << '\t'
        << format_double(fin.mean) << '\t' << format_double(fin.std) << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// Agent checkpoints.

inline json checkpoint_to_json(const AgentState& st, std::uint64_t config_hash,
                               const std::string& rng_state) {
    json j;
    j["repr"] = st.repr == Repr::Tabular ? "tabular" : "linear";
    j["kind"] = st.kind == ValueKind::StateValue ? "state_value" : "action_value";
    j["n_obs"] = st.n_obs;
    j["n_actions"] = st.n_actions;
    j["theta_rows"] = st.theta.rows();
    j["theta_cols"] = st.theta.cols();
    j["theta"] = std::vector<double>(st.theta.data(), st.theta.data() + st.theta.size());
    j["theta_target"] = std::vector<double>(st.theta_target.data(),
                                            st.theta_target.data() + st.theta_target.size());
    j["phi"] = std::vector<double>(st.phi.data(), st.phi.data() + st.phi.size());
    j["step_count"] = st.step_count;
    j["config_hash"] = config_hash;
    j["rng_state"] = rng_state;
    return j;
}

/// Restores parameters into `st` (which must already have the right shape,
/// e.g. from the same factory that created the saved agent).
inline std::pair<std::uint64_t, std::string> checkpoint_from_json(const json& j, AgentState& st) {
    const auto theta = io_detail::require<std::vector<double>>(j, "theta");
    const auto target = io_detail::require<std::vector<double>>(j, "theta_target");
    const auto phi = io_detail::require<std::vector<double>>(j, "phi");
    const long rows = io_detail::require<long>(j, "theta_rows");
    const long cols = io_detail::require<long>(j, "theta_cols");
    if (rows != st.theta.rows() || cols != st.theta.cols() ||
        phi.size() != static_cast<std::size_t>(st.phi.size()))
        throw ContractError("checkpoint: shape mismatch with target agent");
    st.theta = Eigen::Map<const MatrixXd>(theta.data(), rows, cols);
    st.theta_target = Eigen::Map<const MatrixXd>(target.data(), rows, cols);
    st.phi = Eigen::Map<const VectorXd>(phi.data(), static_cast<long>(phi.size()));
    st.step_count = io_detail::require<long long>(j, "step_count");
    return {io_detail::require<std::uint64_t>(j, "config_hash"),
            io_detail::require<std::string>(j, "rng_state")};
}

inline std::string rng_state_string(const std::mt19937_64& rng) {
    std::ostringstream out;
    out << rng;
    return out.str();
}

inline void rng_state_from_string(const std::string& s, std::mt19937_64& rng) {
    std::istringstream in(s);
    in >> rng;
    if (!in) throw ContractError("checkpoint: bad rng state");
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ContractError("cannot write file: " + path);
    out << content;
}

}  // namespace hodgeflow
