#pragma once

#include <cmath>
#include <utility>

#include "hodgeflow/mdp.hpp"

namespace hodgeflow {

// Weighted cochain spaces over a fixed occupancy measure:
//   C0 = L2(S, nu)            -- state potentials and value functions
//   C1 = L2(supp(mu), mu)     -- transition fields such as TD errors
// Elements of C1 are defined only on supp(mu); off-support values do not
// exist, mirroring the mu-a.e. identification. Two cochains are compatible
// iff they reference the same OccupancyMeasures object.

class Cochain0 {
  public:
    Cochain0(OccupancyPtr occ, VectorXd values) : occ_(std::move(occ)), values_(std::move(values)) {
        if (!occ_) throw ContractError("cochain0: null occupancy");
        if (values_.size() != occ_->n_states())
            throw ContractError("cochain0: value vector shape mismatch");
        if (!values_.allFinite()) throw ContractError("cochain0: non-finite entry");
    }

    static Cochain0 zero(OccupancyPtr occ) {
        const int n = occ->n_states();
        return Cochain0(std::move(occ), VectorXd::Zero(n));
    }

    const OccupancyPtr& occupancy() const { return occ_; }
    const VectorXd& values() const { return values_; }
    VectorXd& values() { return values_; }
    double operator[](int s) const { return values_[s]; }

  private:
    OccupancyPtr occ_;
    VectorXd values_;
};

class Cochain1 {
  public:
    Cochain1(OccupancyPtr occ, VectorXd values) : occ_(std::move(occ)), values_(std::move(values)) {
        if (!occ_) throw ContractError("cochain1: null occupancy");
        if (values_.size() != occ_->support_size())
            throw ContractError("cochain1: value vector must match support size");
        if (!values_.allFinite()) throw ContractError("cochain1: non-finite entry");
    }

    static Cochain1 zero(OccupancyPtr occ) {
        const int t = occ->support_size();
        return Cochain1(std::move(occ), VectorXd::Zero(t));
    }

    const OccupancyPtr& occupancy() const { return occ_; }
    /// Values aligned with occupancy().support().
    const VectorXd& values() const { return values_; }
    VectorXd& values() { return values_; }
    double operator[](int k) const { return values_[k]; }

  private:
    OccupancyPtr occ_;
    VectorXd values_;
};

inline void require_same_weight(const OccupancyPtr& a, const OccupancyPtr& b, const char* what) {
    if (a.get() != b.get())
        throw ContractError(std::string(what) + ": cochains weighted by different measures");
}

/// <u1,u2>_{C0} = sum_s nu(s) u1(s) u2(s), over the nu-support.
inline double inner0(const Cochain0& u1, const Cochain0& u2) {
    require_same_weight(u1.occupancy(), u2.occupancy(), "inner0");
    const VectorXd& nu = u1.occupancy()->nu();
    return (nu.array() * u1.values().array() * u2.values().array()).sum();
}

/// <f1,f2>_{C1} = sum_{(s,a,s') in supp} mu(s,a,s') f1 f2.
inline double inner1(const Cochain1& f1, const Cochain1& f2) {
    require_same_weight(f1.occupancy(), f2.occupancy(), "inner1");
    const VectorXd& mu = f1.occupancy()->mu();
    return (mu.array() * f1.values().array() * f2.values().array()).sum();
}

inline double norm0(const Cochain0& u) { return std::sqrt(std::max(0.0, inner0(u, u))); }
inline double norm1(const Cochain1& f) { return std::sqrt(std::max(0.0, inner1(f, f))); }

}  // namespace hodgeflow
