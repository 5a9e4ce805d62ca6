#include <catch2/catch_amalgamated.hpp>
#include <memory>
#include <random>

#include "hodgeflow/diagnostics.hpp"
#include "hodgeflow/envs.hpp"

using namespace hodgeflow;

namespace {

struct Instance {
    std::shared_ptr<const FiniteMdp> mdp;
    OccupancyPtr occ;
    DiffOperator op;
};

Instance ring_instance(RingSpec::Mode mode, std::uint64_t potential_seed = 3) {
    RingSpec spec;
    spec.mode = mode;
    spec.potential_seed = potential_seed;
    auto ring = make_ring(spec);
    auto occ = std::make_shared<const OccupancyMeasures>(exact_occupancy(
        *ring.mdp, PolicyTable::uniform(spec.n, 2), InitialDistribution::uniform(spec.n)));
    DiffOperator op(occ, spec.gamma);
    return {ring.mdp, occ, std::move(op)};
}

Cochain1 random_field_seeded(const OccupancyPtr& occ, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss;
    VectorXd v(occ->support_size());
    for (long i = 0; i < v.size(); ++i) v[i] = gauss(rng);
    return Cochain1(occ, std::move(v));
}

}  // namespace

TEST_CASE("stability check") {
    const Instance inst = ring_instance(RingSpec::Mode::NonIntegrable);
    const Cochain1 f1 = td_field(*inst.mdp, inst.occ, Cochain0::zero(inst.occ));
    SECTION("identical inputs give zero differences") {
        const TheoremReport rep = check_stability(inst.op, f1, f1);
        CHECK(rep.pass);
        CHECK(rep.measured.at("potential_ratio") == 0.0);
        CHECK(rep.measured.at("residual_ratio") == 0.0);
    }
    SECTION("exact perturbations shift only the potential") {
        std::mt19937_64 rng(2);
        std::normal_distribution<double> gauss;
        VectorXd u(10);
        for (int i = 0; i < 10; ++i) u[i] = gauss(rng);
        const double c = 0.7;
        const Cochain1 du = apply_d(inst.op, Cochain0(inst.occ, u));
        const Cochain1 f2(inst.occ, f1.values() + c * du.values());
        const HodgeDecomposition d1 = decompose(inst.op, f1);
        const HodgeDecomposition d2 = decompose(inst.op, f2);
        CHECK((d1.residual.values() - d2.residual.values()).cwiseAbs().maxCoeff() <= 1e-9);
        // full support: the canonical projection of c*u is c*u itself
        CHECK((d2.u_star.values() - d1.u_star.values() - c * u).cwiseAbs().maxCoeff() <= 1e-8);
        CHECK(check_stability(inst.op, f1, f2).pass);
    }
    SECTION("selector ratio is constant across perturbation magnitudes") {
        const Cochain1 dir = random_field_seeded(inst.occ, 5);
        double first_ratio = -1.0;
        for (double mag : {1e-3, 1e-2, 1e-1, 1.0, 10.0}) {
            const Cochain1 f2(inst.occ, f1.values() + mag * dir.values());
            const TheoremReport rep = check_stability(inst.op, f1, f2);
            CHECK(rep.pass);
            const double ratio = rep.measured.at("potential_ratio");
            if (first_ratio < 0.0)
                first_ratio = ratio;
            else
                CHECK(ratio == Catch::Approx(first_ratio).epsilon(1e-6));
        }
    }
}

TEST_CASE("gamma sensitivity check") {
    const Instance inst = ring_instance(RingSpec::Mode::NonIntegrable, 6);
    const InitialDistribution d0 = InitialDistribution::uniform(10);
    const PolicyTable policy = PolicyTable::uniform(10, 2);
    SECTION("equal gammas give zero potential differences") {
        std::mt19937_64 rng(3);
        std::normal_distribution<double> gauss;
        VectorXd v(10);
        for (int i = 0; i < 10; ++i) v[i] = gauss(rng);
        const TheoremReport rep =
            check_gamma_sensitivity(*inst.mdp, policy, d0, v, {0.95, 0.95});
        CHECK(rep.pass);
        CHECK(rep.measured.at("potential_ratio_fixed_d") == 0.0);
    }
    SECTION("zero value function isolates the d-variation term") {
        const VectorXd v = VectorXd::Zero(10);
        const TheoremReport rep =
            check_gamma_sensitivity(*inst.mdp, policy, d0, v, {0.9, 0.95, 0.99});
        CHECK(rep.pass);
        CHECK(rep.measured.at("L_gamma") == 0.0);  // reward-only field
        CHECK(rep.measured.at("potential_ratio_fixed_d") <= 1e-10);
        CHECK(rep.measured.at("d_variation_term") > 0.0);
    }
    SECTION("gamma sweep satisfies the fixed-operator bound") {
        const VectorXd v = exact_value(*inst.mdp, policy);
        const TheoremReport rep =
            check_gamma_sensitivity(*inst.mdp, policy, d0, v, {0.9, 0.95, 0.99});
        CHECK(rep.pass);
        CHECK(rep.measured.at("L_gamma") > 0.0);
        CHECK(std::isfinite(rep.measured.at("potential_ratio_full")));
    }
    SECTION("re-derived measure variant is reported separately") {
        const VectorXd v = exact_value(*inst.mdp, policy);
        const TheoremReport rep = check_gamma_sensitivity(*inst.mdp, policy, d0, v,
                                                          {0.9, 0.95, 0.99}, 20, 23,
                                                          /*vary_occupancy=*/true);
        CHECK(rep.pass);
        CHECK(rep.measured.count("potential_ratio_varied_measure") == 1);
        CHECK(std::isfinite(rep.measured.at("potential_ratio_varied_measure")));
        CHECK(rep.bound.count("potential_ratio_varied_measure") == 0);  // unbounded
    }
    SECTION("gamma outside the open interval rejected") {
        CHECK_THROWS_AS(
            check_gamma_sensitivity(*inst.mdp, policy, d0, VectorXd::Zero(10), {0.9, 1.0}),
            ContractError);
    }
}

TEST_CASE("bias bound check") {
    SECTION("integrable ring has zero gap") {
        RingSpec spec;
        spec.potential_seed = 9;
        auto ring = make_ring(spec);
        const TheoremReport rep =
            check_bias_bound(*ring.mdp, PolicyTable::uniform(10, 2),
                             InitialDistribution::uniform(10), VectorXd::Zero(10));
        CHECK(rep.pass);
        CHECK(rep.measured.at("gap") <= 1e-9);
    }
    SECTION("perturbed ring: tabular gap within the residual bound") {
        RingSpec spec;
        spec.mode = RingSpec::Mode::NonIntegrable;
        auto ring = make_ring(spec);
        const TheoremReport rep =
            check_bias_bound(*ring.mdp, PolicyTable::uniform(10, 2),
                             InitialDistribution::uniform(10), VectorXd::Zero(10));
        CHECK(rep.pass);
        CHECK(rep.measured.at("grad_bound") == 1.0);
        CHECK(rep.measured.at("gap") <= rep.measured.at("residual_norm") + 1e-9);
    }
    SECTION("linear features use the max feature norm as B") {
        RingSpec spec;
        spec.mode = RingSpec::Mode::NonIntegrable;
        auto ring = make_ring(spec);
        std::mt19937_64 rng(4);
        std::normal_distribution<double> gauss;
        MatrixXd feat(10, 3);
        for (int i = 0; i < 10; ++i)
            for (int j = 0; j < 3; ++j) feat(i, j) = gauss(rng);
        const TheoremReport rep =
            check_bias_bound(*ring.mdp, PolicyTable::uniform(10, 2),
                             InitialDistribution::uniform(10), VectorXd::Zero(10), &feat);
        CHECK(rep.pass);
        double b = 0.0;
        for (int s = 0; s < 10; ++s) b = std::max(b, feat.row(s).norm());
        CHECK(rep.measured.at("grad_bound") == Catch::Approx(b));
    }
    SECTION("understated bound is the negative control") {
        RingSpec spec;
        spec.mode = RingSpec::Mode::NonIntegrable;
        auto ring = make_ring(spec);
        const TheoremReport rep = check_bias_bound(
            *ring.mdp, PolicyTable::uniform(10, 2), InitialDistribution::uniform(10),
            VectorXd::Zero(10), nullptr, /*bound_scale=*/1e-3);
        CHECK_FALSE(rep.pass);
    }
}

TEST_CASE("consistency trend check") {
    const PolicyTable policy = PolicyTable::uniform(10, 2);
    const InitialDistribution d0 = InitialDistribution::uniform(10);
    SECTION("integrable ring: every loss is numerically zero") {
        RingSpec spec;
        spec.potential_seed = 12;
        auto ring = make_ring(spec);
        const TheoremReport rep = check_consistency_trend(
            *ring.mdp, policy, d0, VectorXd::Zero(10), {100, 1000}, {0, 1, 2});
        CHECK(rep.pass);
        CHECK(rep.measured.at("residual_sq") <= 1e-12);
    }
    SECTION("perturbed ring: gap shrinks and lands within 5 percent") {
        RingSpec spec;
        spec.mode = RingSpec::Mode::NonIntegrable;
        auto ring = make_ring(spec);
        std::vector<std::uint64_t> seeds;
        for (std::uint64_t s = 0; s < 10; ++s) seeds.push_back(s);
        const TheoremReport rep = check_consistency_trend(
            *ring.mdp, policy, d0, VectorXd::Zero(10), {100, 1000, 10000}, seeds);
        CHECK(rep.pass);
        CHECK(rep.measured.at("non_monotone_pairs") <= 1.0);
    }
    SECTION("exhaustive weighted evaluation reproduces the exact residual") {
        RingSpec spec;
        spec.mode = RingSpec::Mode::NonIntegrable;
        auto ring = make_ring(spec);
        auto occ = std::make_shared<const OccupancyMeasures>(
            exact_occupancy(*ring.mdp, policy, d0));
        const DiffOperator op(occ, spec.gamma);
        const Cochain0 v0 = Cochain0::zero(occ);
        const Cochain1 delta = td_field(*ring.mdp, occ, v0);
        const double res_sq = std::pow(decompose(op, delta).norm_residual, 2);
        // weighted "sampling" that visits each support triplet exactly in
        // proportion: solve the weighted least squares directly
        MatrixXd design = MatrixXd::Zero(occ->support_size(), 10);
        VectorXd target(occ->support_size());
        VectorXd w(occ->support_size());
        for (int k = 0; k < occ->support_size(); ++k) {
            const auto& t = occ->support()[static_cast<std::size_t>(k)];
            const double sq = std::sqrt(occ->mu()[k]);
            design(k, t.sp) += sq;
            design(k, t.s) -= sq * spec.gamma;
            target[k] = sq * delta[k];
            w[k] = occ->mu()[k];
        }
        const VectorXd u = design.completeOrthogonalDecomposition().solve(target);
        const double loss = (target - design * u).squaredNorm();
        CHECK(loss == Catch::Approx(res_sq).margin(1e-10));
    }
}

TEST_CASE("perfect mdp degeneracy check") {
    SECTION("exact value passes on random mdps") {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const FiniteMdp mdp = random_mdp(8, 2, 0.9, seed + 40);
            const PolicyTable policy = random_policy(8, 2, seed + 300);
            const TheoremReport rep = check_perfect_mdp_degeneracy(
                mdp, policy, InitialDistribution::uniform(8));
            CHECK(rep.pass);
            CHECK(rep.measured.at("max_mean_defect") <= 1e-9);
            CHECK(rep.measured.at("mean_field_projection_error") <= 1e-12);
        }
    }
    SECTION("shifted value is the negative control") {
        const FiniteMdp mdp = random_mdp(6, 2, 0.9, 50);
        const PolicyTable policy = random_policy(6, 2, 51);
        const VectorXd v_shift = exact_value(mdp, policy).array() + 1.0;
        const TheoremReport rep = check_perfect_mdp_degeneracy(
            mdp, policy, InitialDistribution::uniform(6), &v_shift);
        CHECK_FALSE(rep.pass);
        // defect is exactly c (gamma - 1) at every state
        CHECK(rep.measured.at("max_mean_defect") == Catch::Approx(0.1).epsilon(1e-9));
    }
    SECTION("zero-reward mdp with zero value passes") {
        RingSpec spec;
        spec.zero_potential = true;
        auto ring = make_ring(spec);
        const VectorXd zero = VectorXd::Zero(10);
        const TheoremReport rep = check_perfect_mdp_degeneracy(
            *ring.mdp, PolicyTable::uniform(10, 2), InitialDistribution::uniform(10), &zero);
        CHECK(rep.pass);
    }
}

TEST_CASE("neighborhood convergence check") {
    const LinearEvalSetup setup = make_linear_eval_setup(20, 2, 8, 0.9, 77);
    SECTION("distance grows linearly in the injected residual") {
        const TheoremReport rep =
            check_neighborhood_convergence(setup, {0.0, 0.01, 0.02, 0.04, 0.08});
        CHECK(rep.pass);
        CHECK(rep.measured.at("r_squared") >= 0.95);
        CHECK(rep.measured.at("slope") <= rep.bound.at("slope"));
        CHECK(rep.measured.at("distance_eps_0") <= 1e-8);
        // doubling eps roughly doubles the distance
        const double d1 = rep.measured.at("distance_eps_0.01");
        const double d2 = rep.measured.at("distance_eps_0.02");
        CHECK(d2 == Catch::Approx(2.0 * d1).epsilon(0.05));
    }
    SECTION("too few levels rejected") {
        CHECK_THROWS_AS(check_neighborhood_convergence(setup, {0.0}), ContractError);
    }
}
