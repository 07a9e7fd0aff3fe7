import numpy as np
import pytest

from mdtree import constants as C
from mdtree.errors import GammaSingular, InvalidSampleCount, LambdaNotPsd, NotStrictlyInterior
from mdtree.optimizer import MultiplierSet, solve
from mdtree.rate_objective import ThetaAssignment
from mdtree.scheme_builder import (
    ENHANCEMENT_KEYS,
    achievable_rate_paths,
    achievable_sum_rate,
    build_lambda_gamma,
    build_q_tree,
    build_scheme,
    distortion_check,
    enhance,
    monte_carlo_check,
    sum_rate_enhanced,
    verify_enhancement,
)
from mdtree.tree_model import nodes
from tests.conftest import random_instance

HALF_LN4 = 0.5 * np.log(4.0)


@pytest.fixture
def hand_optimum():
    """Exact optimum of the active-top instance: θ* = 1, M_{2,1} = 0.55."""
    th = ThetaAssignment.uniform([[1.0]], 2)
    ms = MultiplierSet.from_map({(2, 1): [[0.55]]}, 2, 1)
    return th, ms


@pytest.fixture
def hand_scheme(active_top_instance, hand_optimum):
    th, ms = hand_optimum
    return build_scheme(active_top_instance, th, ms)


class TestEnhancement:
    def test_enhanced_values(self, active_top_instance, hand_optimum):
        es = enhance(active_top_instance, *hand_optimum)
        assert es.sigma((1, 1))[0, 0] == pytest.approx(1.0 / 3.0)
        assert es.sigma((2, 1))[0, 0] == pytest.approx(7.0 / 13.0)
        assert es.sigma((2, 2))[0, 0] == pytest.approx(9.0)

    def test_identities_hold_at_the_optimum(self, active_top_instance, hand_optimum):
        th, ms = hand_optimum
        es = enhance(active_top_instance, th, ms)
        residuals = verify_enhancement(active_top_instance, th, ms, es)
        assert set(residuals) == set(ENHANCEMENT_KEYS)
        for key, value in residuals.items():
            assert value == pytest.approx(0.0, abs=1e-12), key
        assert sum_rate_enhanced(active_top_instance, th, es) == pytest.approx(HALF_LN4)

    def test_wrong_multiplier_breaks_stationarity(self, active_top_instance, hand_optimum):
        th, _ = hand_optimum
        ms = MultiplierSet.from_map({(2, 1): [[0.3]]}, 2, 1)
        es = enhance(active_top_instance, th, ms)
        residuals = verify_enhancement(active_top_instance, th, ms, es)
        assert residuals["enhanced_stationarity"] > 1e-3

    def test_requires_interior_instance(self, central_only_instance):
        th = ThetaAssignment.uniform(0.5 * np.eye(2), 3)
        with pytest.raises(NotStrictlyInterior):
            enhance(central_only_instance, th, MultiplierSet.zero(3, 2))


class TestLambdaGamma:
    def test_lambda_is_singular_psd(self, hand_scheme):
        _, sc = hand_scheme
        assert sc.lambda_failures == []
        assert sc.lambda_min_eigs[(1, 1)] == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(sc.lambdas[(1, 1)], [[8.0 / 39.0, -4.0 / 3.0], [-4.0 / 3.0, 26.0 / 3.0]])

    def test_splitting_matrices(self, hand_scheme):
        _, sc = hand_scheme
        h_odd, h_even = sc.h_blocks[(1, 1)]
        assert h_odd[0, 0] == pytest.approx(13.0 / 15.0)
        assert h_even[0, 0] == pytest.approx(2.0 / 15.0)
        for value in sc.structure_residuals.values():
            assert value == pytest.approx(0.0, abs=1e-12)

    def test_symmetric_instance_splits_evenly(self, interior_optimum_instance):
        th = ThetaAssignment.uniform([[1.0 / 7.0]], 2)
        _, sc = build_scheme(interior_optimum_instance, th, MultiplierSet.zero(2, 1))
        h_odd, h_even = sc.h_blocks[(1, 1)]
        assert h_odd[0, 0] == pytest.approx(0.5)
        assert h_even[0, 0] == pytest.approx(0.5)

    def test_lambda_failure_is_recorded(self, interior_optimum_instance):
        th = ThetaAssignment.uniform([[0.8]], 2)
        es = enhance(interior_optimum_instance, th, MultiplierSet.zero(2, 1))
        sc = build_lambda_gamma(th, es)
        assert sc.lambda_failures == [(1, 1)]
        assert sc.lambda_min_eigs[(1, 1)] < 0.0
        with pytest.raises(LambdaNotPsd):
            build_lambda_gamma(th, es, strict=True)

    def test_singular_gamma(self, interior_optimum_instance):
        th = ThetaAssignment.uniform([[1.0]], 2)
        es = enhance(interior_optimum_instance, th, MultiplierSet.zero(2, 1))
        with pytest.raises(GammaSingular):
            build_lambda_gamma(th, es)


class TestQTree:
    def test_joint_covariance(self, hand_scheme):
        _, sc = hand_scheme
        np.testing.assert_allclose(sc.q_joint, [[7.0 / 13.0, -1.0], [-1.0, 9.0]], atol=1e-12)
        assert sc.node_q_cov[(1, 1)][0, 0] == pytest.approx(1.0 / 3.0)

    def test_rate_before_q_tree(self, active_top_instance, hand_optimum):
        th, ms = hand_optimum
        es = enhance(active_top_instance, th, ms)
        sc = build_lambda_gamma(th, es)
        with pytest.raises(ValueError):
            achievable_rate_paths(active_top_instance, sc)
        build_q_tree(es, sc)
        assert sc.q_joint is not None


class TestAchievability:
    def test_rate_paths(self, active_top_instance, hand_scheme):
        _, sc = hand_scheme
        rate = achievable_rate_paths(active_top_instance, sc)
        assert rate.path_a == pytest.approx(HALF_LN4, abs=1e-12)
        assert rate.path_b == pytest.approx(HALF_LN4, abs=1e-12)
        assert set(rate.terms) == {"root", "1,1"}
        assert achievable_sum_rate(active_top_instance, sc) == pytest.approx(HALF_LN4)

    def test_distortions(self, active_top_instance, hand_scheme):
        es, sc = hand_scheme
        entries = distortion_check(active_top_instance, es, sc)
        expected = {(1, 1): 0.25, (2, 1): 0.35, (2, 2): 0.9}
        for node, value in expected.items():
            entry = entries[node]
            assert entry.satisfied
            assert entry.achieved[0, 0] == pytest.approx(value)
            assert entry.closed_form[0, 0] == pytest.approx(value)
            assert entry.path_gap == pytest.approx(0.0, abs=1e-12)

    def test_distortions_against_tighter_requirement(self, active_top_instance, hand_scheme):
        es, sc = hand_scheme
        tighter = active_top_instance.replace_distortions({(2, 1): [[0.3]]})
        entries = distortion_check(active_top_instance, es, sc, required=tighter)
        assert not entries[(2, 1)].satisfied
        assert entries[(2, 2)].satisfied

    @pytest.mark.slow
    @pytest.mark.parametrize("m, L", [(1, 3), (2, 3), (2, 4)])
    def test_solved_random_instances(self, rng, m, L):
        inst = random_instance(rng, m, L)
        report = solve(inst)
        es, sc = build_scheme(inst, report.theta_star, report.multipliers)
        residuals = verify_enhancement(inst, report.theta_star, report.multipliers, es)
        assert max(residuals.values()) <= C.ENHANCEMENT_TOL
        assert sc.lambda_failures == []
        assert max(sc.structure_residuals.values()) <= C.STRUCTURE_TOL
        rate = achievable_rate_paths(inst, sc)
        assert rate.path_a == pytest.approx(report.value, abs=1e-6 * (1 + report.value))
        assert rate.gap <= 1e-6 * (1 + rate.path_a)
        assert all(entry.satisfied for entry in distortion_check(inst, es, sc).values())


class TestMonteCarlo:
    def test_within_bounds(self, active_top_instance, hand_scheme):
        _, sc = hand_scheme
        mc = monte_carlo_check(active_top_instance, sc, 200_000, seed=0)
        assert mc.shards == 1
        assert mc.within_bounds
        assert set(mc.empirical_distortion) == {"1,1", "2,1", "2,2"}
        assert mc.empirical_distortion["1,1"][0, 0] == pytest.approx(0.25, abs=0.01)

    @pytest.mark.slow
    def test_million_samples_on_a_solved_instance(self, rng):
        inst = random_instance(rng, 2, 2)
        report = solve(inst)
        _, sc = build_scheme(inst, report.theta_star, report.multipliers)
        assert sc.lambda_failures == []
        mc = monte_carlo_check(inst, sc, 1_000_000, seed=0, workers=2)
        assert mc.n_samples == 1_000_000
        assert mc.within_bounds

    def test_reproducible_across_workers(self, active_top_instance, hand_scheme):
        _, sc = hand_scheme
        n = C.MC_SHARD_SIZE + 1000
        serial = monte_carlo_check(active_top_instance, sc, n, seed=3)
        threaded = monte_carlo_check(active_top_instance, sc, n, seed=3, workers=2)
        assert serial.shards == 2
        assert threaded.u_cov_deviation == pytest.approx(serial.u_cov_deviation, abs=1e-12)
        for node in nodes(2):
            key = f"{node[0]},{node[1]}"
            np.testing.assert_allclose(
                threaded.empirical_distortion[key], serial.empirical_distortion[key], atol=1e-12
            )

    def test_seed_changes_draws(self, active_top_instance, hand_scheme):
        _, sc = hand_scheme
        a = monte_carlo_check(active_top_instance, sc, 5000, seed=1)
        b = monte_carlo_check(active_top_instance, sc, 5000, seed=2)
        assert a.u_cov_deviation != b.u_cov_deviation

    @pytest.mark.parametrize("n", [0, -5, True])
    def test_invalid_sample_count(self, active_top_instance, hand_scheme, n):
        _, sc = hand_scheme
        with pytest.raises(InvalidSampleCount):
            monte_carlo_check(active_top_instance, sc, n, seed=0)
