#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include "hodgeflow/cochain.hpp"

namespace hodgeflow {

// Discrete de Rham differential d : C0 -> C1, (du)(s,a,s') = u(s') - gamma u(s),
// its Hilbert adjoint under the occupancy-weighted inner products, the Hodge
// Laplacian D0 = d* d, and the least-squares splitting of a 1-cochain into an
// exact part du* and the orthogonal residual.

class DiffOperator {
  public:
    DiffOperator(OccupancyPtr occ, double gamma) : occ_(std::move(occ)), gamma_(gamma) {
        if (!occ_) throw ContractError("diff_operator: null occupancy");
        if (!(gamma_ > 0.0 && gamma_ < 1.0))
            throw ContractError("diff_operator: gamma must lie in (0,1)");
        build_matrix();
    }

    const OccupancyPtr& occupancy() const { return occ_; }
    double gamma() const { return gamma_; }
    /// Sparse T x n matrix with row (s,a,s') carrying +1 at s' and -gamma at s.
    const Eigen::SparseMatrix<double>& d_matrix() const { return d_matrix_; }

  private:
    void build_matrix() {
        const auto& sup = occ_->support();
        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(2 * sup.size());
        for (std::size_t k = 0; k < sup.size(); ++k) {
            trips.emplace_back(static_cast<int>(k), sup[k].sp, 1.0);
            trips.emplace_back(static_cast<int>(k), sup[k].s, -gamma_);
        }
        d_matrix_.resize(static_cast<int>(sup.size()), occ_->n_states());
        d_matrix_.setFromTriplets(trips.begin(), trips.end());
    }

    OccupancyPtr occ_;
    double gamma_;
    Eigen::SparseMatrix<double> d_matrix_;
};

inline Cochain1 apply_d(const DiffOperator& op, const Cochain0& u) {
    require_same_weight(op.occupancy(), u.occupancy(), "apply_d");
    const auto& sup = op.occupancy()->support();
    VectorXd out(static_cast<long>(sup.size()));
    for (std::size_t k = 0; k < sup.size(); ++k)
        out[static_cast<long>(k)] = u[sup[k].sp] - op.gamma() * u[sup[k].s];
    return Cochain1(op.occupancy(), std::move(out));
}

/// (d*f)(s) = [ sum_{(x,a,s)} mu f - gamma sum_{(s,a,s')} mu f ] / nu(s),
/// and 0 on states outside the nu-support.
inline Cochain0 apply_d_adjoint(const DiffOperator& op, const Cochain1& f) {
    require_same_weight(op.occupancy(), f.occupancy(), "apply_d_adjoint");
    const OccupancyMeasures& occ = *op.occupancy();
    const auto& sup = occ.support();
    VectorXd out = VectorXd::Zero(occ.n_states());
    for (std::size_t k = 0; k < sup.size(); ++k) {
        const double w = occ.mu()[static_cast<long>(k)] * f[static_cast<int>(k)];
        out[sup[k].sp] += w;
        out[sup[k].s] -= op.gamma() * w;
    }
    for (int s = 0; s < occ.n_states(); ++s)
        out[s] = occ.on_support(s) ? out[s] / occ.nu()[s] : 0.0;
    return Cochain0(op.occupancy(), std::move(out));
}

/// Zero-th order Hodge Laplacian D0 = d* d, self-adjoint and PSD on C0.
class Laplacian0 {
  public:
    explicit Laplacian0(const DiffOperator& op) : op_(op) {}

    Cochain0 apply(const Cochain0& u) const { return apply_d_adjoint(op_, apply_d(op_, u)); }

    /// Dense n x n matrix of the operator in state coordinates.
    MatrixXd dense() const {
        const int n = op_.occupancy()->n_states();
        MatrixXd out(n, n);
        for (int j = 0; j < n; ++j) {
            VectorXd e = VectorXd::Zero(n);
            e[j] = 1.0;
            out.col(j) = apply(Cochain0(op_.occupancy(), std::move(e))).values();
        }
        return out;
    }

    const DiffOperator& diff() const { return op_; }

  private:
    DiffOperator op_;
};

inline Laplacian0 laplacian(const DiffOperator& op) { return Laplacian0(op); }

namespace detail {

struct PoissonResult {
    VectorXd u;
    double achieved_residual;  // ||d*(f - du)||_{C0}
    int iterations;
};

// Conjugate gradients on D0 u = d*f in the C0 geometry (the nu-weighted inner
// product, under which D0 is self-adjoint). Started from zero the iterates
// stay in range(D0) = (ker D0)^perp, so the limit is the minimal-C0-norm
// solution; off-support coordinates never enter and remain exactly zero.
inline PoissonResult poisson_cg(const DiffOperator& op, const Cochain1& f, double rtol,
                                int max_iters) {
    const OccupancyPtr& occ = op.occupancy();
    const Cochain0 b = apply_d_adjoint(op, f);
    const double b_norm = norm0(b);
    if (b_norm == 0.0) return {VectorXd::Zero(occ->n_states()), 0.0, 0};

    Cochain0 u = Cochain0::zero(occ);
    Cochain0 r = b;
    Cochain0 p = r;
    double rs_old = inner0(r, r);
    int it = 0;
    for (; it < max_iters; ++it) {
        if (std::sqrt(rs_old) <= rtol * b_norm) break;
        const Cochain0 ap = apply_d_adjoint(op, apply_d(op, p));
        const double p_ap = inner0(p, ap);
        if (p_ap <= 0.0) break;  // numerical kernel direction; cannot descend further
        const double alpha = rs_old / p_ap;
        u.values() += alpha * p.values();
        r.values() -= alpha * ap.values();
        const double rs_new = inner0(r, r);
        p.values() = r.values() + (rs_new / rs_old) * p.values();
        rs_old = rs_new;
    }
    return {u.values(), std::sqrt(std::max(0.0, rs_old)), it};
}

}  // namespace detail

/// Minimal-C0-norm solution of the normal equations D0 u = d*f, i.e. the
/// canonical representative of argmin_u ||f - du||_{C1} in (ker D0)^perp.
inline Cochain0 solve_poisson(const DiffOperator& op, const Cochain1& f) {
    require_same_weight(op.occupancy(), f.occupancy(), "solve_poisson");
    const int n = op.occupancy()->n_states();
    const auto res = detail::poisson_cg(op, f, 1e-12, 10 * n);
    Cochain0 u(op.occupancy(), res.u);
    // weak optimality: the projection residual must be C0-orthogonal to
    // every potential direction
    const Cochain1 du = apply_d(op, u);
    Cochain1 defect(f.occupancy(), f.values() - du.values());
    const double weak = norm0(apply_d_adjoint(op, defect));
    if (weak > 1e-8 * (1.0 + norm1(f)))
        throw NumericalError("solve_poisson: conjugate gradients stalled", weak);
    return u;
}

struct HodgeDecomposition {
    Cochain0 u_star;
    Cochain1 exact_part;  // d u_star
    Cochain1 residual;    // input - exact_part
    double norm_input;
    double norm_exact;
    double norm_residual;
    double orthogonality_defect;  // <exact, residual>_{C1}
    double pythagoras_defect;     // | ||f||^2 - ||du*||^2 - ||res||^2 |
};

inline HodgeDecomposition decompose(const DiffOperator& op, const Cochain1& f) {
    Cochain0 u_star = solve_poisson(op, f);
    Cochain1 exact_part = apply_d(op, u_star);
    Cochain1 residual(f.occupancy(), f.values() - exact_part.values());
    const double n_in = norm1(f);
    const double n_ex = norm1(exact_part);
    const double n_res = norm1(residual);
    const double ortho = inner1(exact_part, residual);
    const double pyth = std::abs(n_in * n_in - n_ex * n_ex - n_res * n_res);
    return {std::move(u_star), std::move(exact_part), std::move(residual),
            n_in,              n_ex,                  n_res,
            ortho,             pyth};
}

/// TD-error field of V as a 1-cochain: r(s,a,s') + gamma V(s') - V(s).
inline Cochain1 td_field(const FiniteMdp& mdp, const OccupancyPtr& occ, const Cochain0& V) {
    require_same_weight(occ, V.occupancy(), "td_field");
    if (occ->n_states() != mdp.n_states()) throw ContractError("td_field: state count mismatch");
    const auto& sup = occ->support();
    VectorXd out(static_cast<long>(sup.size()));
    for (std::size_t k = 0; k < sup.size(); ++k) {
        const auto& t = sup[k];
        out[static_cast<long>(k)] = mdp.reward(t.s, t.a, t.sp) + mdp.gamma() * V[t.sp] - V[t.s];
    }
    return Cochain1(occ, std::move(out));
}

/// Mean TD error (Bellman defect) at the state level:
/// dbar(s) = E[r(S,A,S') + gamma V(S') - V(S) | S=s]. Vanishes identically
/// at V = V^pi.
inline Cochain0 mean_defect(const FiniteMdp& mdp, const PolicyTable& policy, const Cochain0& V) {
    const int n = mdp.n_states();
    if (V.occupancy()->n_states() != n) throw ContractError("mean_defect: state count mismatch");
    const MatrixXd p_pi = induced_chain(mdp, policy);
    const VectorXd r_pi = expected_reward(mdp, policy);
    VectorXd out = r_pi + mdp.gamma() * (p_pi * V.values()) - V.values();
    return Cochain0(V.occupancy(), std::move(out));
}

// ---------------------------------------------------------------------------
// Sample-based projection: fit a tabular potential U to a transition dataset
// by minimizing (1/N) sum_i (delta_i - [U(s_i') - gamma U(s_i)])^2.

struct SampleTransition {
    int s;
    int a;
    double r;
    int sp;
};

struct FitterConfig {
    enum class Mode { ExactLeastSquares, Sgd };
    Mode mode = Mode::ExactLeastSquares;
    double learning_rate = 0.1;
    int steps = 1000;  // SGD mode only
};

struct ResidualEstimate {
    VectorXd potential;    // fitted tabular U
    double empirical_loss; // value of the empirical projection loss at U
};

inline ResidualEstimate estimate_residual_from_samples(const std::vector<SampleTransition>& data,
                                                       const Cochain0& V, double gamma,
                                                       const FitterConfig& cfg) {
    if (data.empty()) throw ContractError("estimate_residual_from_samples: empty dataset");
    const int n = V.occupancy()->n_states();
    const long N = static_cast<long>(data.size());
    VectorXd delta(N);
    for (long i = 0; i < N; ++i) {
        const auto& t = data[i];
        if (t.s < 0 || t.s >= n || t.sp < 0 || t.sp >= n)
            throw ContractError("estimate_residual_from_samples: state out of range");
        delta[i] = t.r + gamma * V[t.sp] - V[t.s];
    }

    VectorXd u = VectorXd::Zero(n);
    if (cfg.mode == FitterConfig::Mode::ExactLeastSquares) {
        // design row i is e_{s'_i} - gamma e_{s_i}; COD gives the min-norm fit
        MatrixXd design = MatrixXd::Zero(N, n);
        for (long i = 0; i < N; ++i) {
            design(i, data[i].sp) += 1.0;
            design(i, data[i].s) -= gamma;
        }
        u = design.completeOrthogonalDecomposition().solve(delta);
    } else {
        for (int step = 0; step < cfg.steps; ++step) {
            VectorXd grad = VectorXd::Zero(n);
            for (long i = 0; i < N; ++i) {
                const auto& t = data[i];
                const double err = (u[t.sp] - gamma * u[t.s]) - delta[i];
                grad[t.sp] += 2.0 * err / static_cast<double>(N);
                grad[t.s] -= 2.0 * gamma * err / static_cast<double>(N);
            }
            u -= cfg.learning_rate * grad;
        }
    }

    double loss = 0.0;
    for (long i = 0; i < N; ++i) {
        const auto& t = data[i];
        const double err = delta[i] - (u[t.sp] - gamma * u[t.s]);
        loss += err * err;
    }
    loss /= static_cast<double>(N);
    return {std::move(u), loss};
}

/// Draws N transitions i.i.d. from mu (replay-buffer idealization).
inline std::vector<SampleTransition> sample_from_occupancy(const FiniteMdp& mdp,
                                                           const OccupancyMeasures& occ, long n,
                                                           std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::discrete_distribution<int> pick(occ.mu().data(), occ.mu().data() + occ.support_size());
    std::vector<SampleTransition> out;
    out.reserve(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) {
        const auto& t = occ.support()[static_cast<std::size_t>(pick(rng))];
        out.push_back({t.s, t.a, mdp.reward(t.s, t.a, t.sp), t.sp});
    }
    return out;
}

}  // namespace hodgeflow
