#pragma once

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "hodgeflow/common.hpp"

namespace hodgeflow {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kRowSumTol = 1e-12;
constexpr double kMeasureTol = 1e-10;
// Below this mass a state is treated as unvisited and dropped from the
// occupancy support (values there are identified with 0).
constexpr double kSupportTol = 1e-14;

/// Finite discounted MDP. Rewards are stored per transition r[s][a][s'];
/// (s,a)-rewards are the special case constant in s' (see
/// from_state_action_rewards).
class FiniteMdp {
  public:
    FiniteMdp(std::vector<MatrixXd> transition, std::vector<MatrixXd> reward,
              double gamma)
        : transition_(std::move(transition)), reward_(std::move(reward)), gamma_(gamma) {
        validate();
    }

    /// Builds the reward tensor by broadcasting r_sa(s,a) over s'.
    static FiniteMdp from_state_action_rewards(std::vector<MatrixXd> transition,
                                               const MatrixXd& r_sa, double gamma) {
        const int a_count = static_cast<int>(transition.size());
        if (a_count == 0) throw ContractError("mdp: at least one action required");
        const int n = static_cast<int>(transition[0].rows());
        if (r_sa.rows() != n || r_sa.cols() != a_count)
            throw ContractError("mdp: reward matrix shape mismatch");
        std::vector<MatrixXd> reward(a_count);
        for (int a = 0; a < a_count; ++a)
            reward[a] = r_sa.col(a).replicate(1, n);
        return FiniteMdp(std::move(transition), std::move(reward), gamma);
    }

    int n_states() const { return static_cast<int>(transition_[0].rows()); }
    int n_actions() const { return static_cast<int>(transition_.size()); }
    double gamma() const { return gamma_; }
    double r_max() const { return r_max_; }

    double transition(int s, int a, int sp) const { return transition_[a](s, sp); }
    double reward(int s, int a, int sp) const { return reward_[a](s, sp); }
    const MatrixXd& transition_matrix(int a) const { return transition_[a]; }
    const MatrixXd& reward_matrix(int a) const { return reward_[a]; }

  private:
    void validate() {
        if (transition_.empty()) throw ContractError("mdp: no actions");
        const int n = static_cast<int>(transition_[0].rows());
        if (n <= 0) throw ContractError("mdp: no states");
        if (reward_.size() != transition_.size())
            throw ContractError("mdp: reward/transition action count mismatch");
        if (!(gamma_ > 0.0 && gamma_ < 1.0))
            throw ContractError("mdp: discount must lie in (0,1)");
        r_max_ = 0.0;
        for (std::size_t a = 0; a < transition_.size(); ++a) {
            const MatrixXd& p = transition_[a];
            const MatrixXd& r = reward_[a];
            if (p.rows() != n || p.cols() != n || r.rows() != n || r.cols() != n)
                throw ContractError("mdp: tensor shape mismatch");
            for (int s = 0; s < n; ++s) {
                double row_sum = 0.0;
                for (int sp = 0; sp < n; ++sp) {
                    const double pv = p(s, sp);
                    if (pv < 0.0) throw ContractError("mdp: negative transition probability");
                    if (!std::isfinite(r(s, sp)))
                        throw ContractError("mdp: non-finite reward entry");
                    row_sum += pv;
                    r_max_ = std::max(r_max_, std::abs(r(s, sp)));
                }
                if (std::abs(row_sum - 1.0) > kRowSumTol)
                    throw ContractError("mdp: transition row does not sum to 1");
            }
        }
    }

    std::vector<MatrixXd> transition_;  // per action, n x n
    std::vector<MatrixXd> reward_;      // per action, n x n
    double gamma_;
    double r_max_ = 0.0;
};

/// Markov kernel pi(a|s) as a dense row-stochastic table.
struct PolicyTable {
    MatrixXd probs;  // n_states x n_actions

    explicit PolicyTable(MatrixXd p) : probs(std::move(p)) {
        for (int s = 0; s < probs.rows(); ++s) {
            double row_sum = 0.0;
            for (int a = 0; a < probs.cols(); ++a) {
                if (probs(s, a) < 0.0) throw ContractError("policy: negative probability");
                row_sum += probs(s, a);
            }
            if (std::abs(row_sum - 1.0) > kRowSumTol)
                throw ContractError("policy: row does not sum to 1");
        }
    }

    static PolicyTable uniform(int n_states, int n_actions) {
        return PolicyTable(MatrixXd::Constant(n_states, n_actions, 1.0 / n_actions));
    }
};

struct InitialDistribution {
    VectorXd d0;

    explicit InitialDistribution(VectorXd d) : d0(std::move(d)) {
        double sum = 0.0;
        for (int s = 0; s < d0.size(); ++s) {
            if (d0[s] < 0.0) throw ContractError("d0: negative probability");
            sum += d0[s];
        }
        if (std::abs(sum - 1.0) > kRowSumTol) throw ContractError("d0: does not sum to 1");
    }

    static InitialDistribution uniform(int n_states) {
        return InitialDistribution(VectorXd::Constant(n_states, 1.0 / n_states));
    }
};

/// One (s,a,s') triplet in the occupancy support.
struct TripletRef {
    int s;
    int a;
    int sp;
};

/// Discounted occupancy measures: the state marginal nu and the triplet
/// measure mu, stored sparsely over supp(mu). The support enumeration is the
/// canonical index space shared by all 1-cochains built on this measure.
class OccupancyMeasures {
  public:
    /// `normalized` distinguishes the exact measure (total mass 1, checked)
    /// from truncated partial sums produced by the finite-horizon oracle.
    OccupancyMeasures(VectorXd nu, std::vector<TripletRef> support, VectorXd mu,
                      bool normalized)
        : nu_(std::move(nu)),
          support_(std::move(support)),
          mu_(std::move(mu)),
          normalized_(normalized) {
        build_index();
        if (normalized_) check_mass();
    }

    int n_states() const { return static_cast<int>(nu_.size()); }
    const VectorXd& nu() const { return nu_; }
    const std::vector<TripletRef>& support() const { return support_; }
    const VectorXd& mu() const { return mu_; }
    int support_size() const { return static_cast<int>(support_.size()); }
    bool on_support(int s) const { return nu_[s] > 0.0; }
    double total_mass() const { return mu_.sum(); }

    /// Support indices whose first coordinate is s (outgoing triplets).
    std::pair<int, int> outgoing_range(int s) const {
        return {out_begin_[s], out_begin_[s + 1]};
    }
    /// Support indices whose third coordinate is s (incoming triplets).
    const std::vector<int>& incoming(int s) const { return in_edges_[s]; }

    double mu_at(int s, int a, int sp) const {
        auto [lo, hi] = outgoing_range(s);
        for (int k = lo; k < hi; ++k)
            if (support_[k].a == a && support_[k].sp == sp) return mu_[k];
        return 0.0;
    }

  private:
    void build_index() {
        const int n = n_states();
        // support must be sorted by first coordinate for the range index
        for (std::size_t k = 1; k < support_.size(); ++k)
            if (support_[k - 1].s > support_[k].s)
                throw ContractError("occupancy: support not sorted by state");
        out_begin_.assign(n + 1, 0);
        in_edges_.assign(n, {});
        for (std::size_t k = 0; k < support_.size(); ++k) {
            out_begin_[support_[k].s + 1]++;
            in_edges_[support_[k].sp].push_back(static_cast<int>(k));
        }
        for (int s = 0; s < n; ++s) out_begin_[s + 1] += out_begin_[s];
    }

    void check_mass() const {
        if (std::abs(nu_.sum() - 1.0) > kMeasureTol)
            throw NumericalError("occupancy: nu does not sum to 1", std::abs(nu_.sum() - 1.0));
        if (std::abs(mu_.sum() - 1.0) > kMeasureTol)
            throw NumericalError("occupancy: mu does not sum to 1", std::abs(mu_.sum() - 1.0));
        // marginal consistency nu(s) = sum_{a,s'} mu(s,a,s')
        VectorXd marg = VectorXd::Zero(nu_.size());
        for (std::size_t k = 0; k < support_.size(); ++k) marg[support_[k].s] += mu_[k];
        const double defect = (marg - nu_).cwiseAbs().maxCoeff();
        if (defect > kMeasureTol)
            throw NumericalError("occupancy: marginal inconsistency", defect);
    }

    VectorXd nu_;
    std::vector<TripletRef> support_;
    VectorXd mu_;
    bool normalized_;
    std::vector<int> out_begin_;
    std::vector<std::vector<int>> in_edges_;
};

using OccupancyPtr = std::shared_ptr<const OccupancyMeasures>;

/// State-to-state chain P_pi(s,s') = sum_a pi(a|s) P(s'|s,a).
inline MatrixXd induced_chain(const FiniteMdp& mdp, const PolicyTable& policy) {
    const int n = mdp.n_states();
    if (policy.probs.rows() != n || policy.probs.cols() != mdp.n_actions())
        throw ContractError("induced_chain: policy shape mismatch");
    MatrixXd p_pi = MatrixXd::Zero(n, n);
    for (int a = 0; a < mdp.n_actions(); ++a)
        p_pi += policy.probs.col(a).asDiagonal() * mdp.transition_matrix(a);
    return p_pi;
}

/// Expected one-step reward r_pi(s) = E[r(s,A,S') | s].
inline VectorXd expected_reward(const FiniteMdp& mdp, const PolicyTable& policy) {
    const int n = mdp.n_states();
    VectorXd r_pi = VectorXd::Zero(n);
    for (int a = 0; a < mdp.n_actions(); ++a) {
        const VectorXd per_action =
            (mdp.transition_matrix(a).cwiseProduct(mdp.reward_matrix(a))).rowwise().sum();
        r_pi += policy.probs.col(a).cwiseProduct(per_action);
    }
    return r_pi;
}

namespace detail {

// Dense direct solve below this size, iterative above (desk-scale default).
constexpr int kDenseSolveLimit = 2000;

inline VectorXd solve_linear(const MatrixXd& m, const VectorXd& rhs, const char* what) {
    VectorXd x;
    if (m.rows() <= kDenseSolveLimit) {
        Eigen::PartialPivLU<MatrixXd> lu(m);
        x = lu.solve(rhs);
    } else {
        Eigen::BiCGSTAB<MatrixXd> solver;
        solver.setTolerance(1e-13);
        solver.compute(m);
        x = solver.solve(rhs);
    }
    const double resid = (m * x - rhs).norm();
    const double scale = rhs.norm() + x.norm() + 1.0;
    if (!x.allFinite() || resid > 1e-9 * scale) {
        // crude condition estimate for the error message
        const double cond = m.norm() * (x.norm() + 1.0) / (rhs.norm() + 1e-300);
        throw NumericalError(std::string(what) + ": linear solve failed (cond~" +
                                 format_double(cond) + ")",
                             resid);
    }
    return x;
}

inline OccupancyMeasures assemble_occupancy(const FiniteMdp& mdp, const PolicyTable& policy,
                                            VectorXd nu, bool normalized) {
    const int n = mdp.n_states();
    for (int s = 0; s < n; ++s)
        if (nu[s] < kSupportTol) nu[s] = 0.0;  // flag unvisited states
    std::vector<TripletRef> support;
    std::vector<double> mu_vals;
    for (int s = 0; s < n; ++s) {
        if (nu[s] == 0.0) continue;
        for (int a = 0; a < mdp.n_actions(); ++a) {
            const double pa = policy.probs(s, a);
            if (pa == 0.0) continue;
            for (int sp = 0; sp < n; ++sp) {
                const double pt = mdp.transition(s, a, sp);
                if (pt == 0.0) continue;
                support.push_back({s, a, sp});
                mu_vals.push_back(nu[s] * pa * pt);
            }
        }
    }
    VectorXd mu = Eigen::Map<VectorXd>(mu_vals.data(), static_cast<long>(mu_vals.size()));
    return OccupancyMeasures(std::move(nu), std::move(support), std::move(mu), normalized);
}

}  // namespace detail

/// Exact discounted occupancy: nu = (1-gamma) (I - gamma P_pi^T)^{-1} d0,
/// mu(s,a,s') = nu(s) pi(a|s) P(s'|s,a).
inline OccupancyMeasures exact_occupancy(const FiniteMdp& mdp, const PolicyTable& policy,
                                         const InitialDistribution& d0) {
    const int n = mdp.n_states();
    if (d0.d0.size() != n) throw ContractError("exact_occupancy: d0 shape mismatch");
    const MatrixXd p_pi = induced_chain(mdp, policy);
    const MatrixXd system = MatrixXd::Identity(n, n) - mdp.gamma() * p_pi.transpose();
    VectorXd nu = detail::solve_linear(system, (1.0 - mdp.gamma()) * d0.d0, "exact_occupancy");
    return detail::assemble_occupancy(mdp, policy, std::move(nu), /*normalized=*/true);
}

/// Partial sum (1-gamma) sum_{t<horizon} gamma^t d_t of the occupancy series.
/// Total mass is 1 - gamma^horizon, so the result is intentionally not
/// normalized; it converges to exact_occupancy at rate gamma^T/(1-gamma).
inline OccupancyMeasures truncated_occupancy_oracle(const FiniteMdp& mdp,
                                                    const PolicyTable& policy,
                                                    const InitialDistribution& d0,
                                                    int horizon) {
    if (horizon < 1) throw ContractError("truncated_occupancy_oracle: horizon must be >= 1");
    const MatrixXd p_pi_t = induced_chain(mdp, policy).transpose();
    VectorXd dist = d0.d0;
    VectorXd nu = VectorXd::Zero(mdp.n_states());
    double scale = 1.0 - mdp.gamma();
    for (int t = 0; t < horizon; ++t) {
        nu += scale * dist;
        dist = p_pi_t * dist;
        scale *= mdp.gamma();
    }
    return detail::assemble_occupancy(mdp, policy, std::move(nu), /*normalized=*/false);
}

/// Fixed-policy value function via (I - gamma P_pi) V = r_pi.
inline VectorXd exact_value(const FiniteMdp& mdp, const PolicyTable& policy) {
    const int n = mdp.n_states();
    const MatrixXd p_pi = induced_chain(mdp, policy);
    const VectorXd r_pi = expected_reward(mdp, policy);
    const MatrixXd system = MatrixXd::Identity(n, n) - mdp.gamma() * p_pi;
    VectorXd v = detail::solve_linear(system, r_pi, "exact_value");
    const double bellman_resid = (v - r_pi - mdp.gamma() * p_pi * v).cwiseAbs().maxCoeff();
    if (bellman_resid > 1e-10 * (1.0 + v.cwiseAbs().maxCoeff()))
        throw NumericalError("exact_value: Bellman residual too large", bellman_resid);
    return v;
}

}  // namespace hodgeflow
