import numpy as np
import pytest

from mdtree.errors import UnsupportedDimension
from mdtree.optimizer import solve
from mdtree.oracle import GridSpec, known_closedforms, scalar_grid_max
from mdtree.tree_model import ProblemInstance, nodes
from tests.conftest import random_instance, scalar_instance


class TestGridSpec:
    @pytest.mark.parametrize(
        "kwargs",
        [{"resolution": 0.0}, {"resolution": -1e-3}, {"refine_levels": -1}, {"refine_levels": 9}],
    )
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            GridSpec(**kwargs)


class TestScalarGridMax:
    def test_upper_bound_is_on_the_grid(self, active_top_instance):
        theta, value = scalar_grid_max(active_top_instance, GridSpec(resolution=1e-3))
        assert theta[(1, 1)] == pytest.approx(1.0)
        assert value == pytest.approx(0.5 * np.log(4.0), abs=1e-12)

    def test_interior_optimum(self, interior_optimum_instance):
        theta, value = scalar_grid_max(interior_optimum_instance, GridSpec(resolution=1e-4))
        assert theta[(1, 1)] == pytest.approx(1.0 / 7.0, abs=1e-4)
        assert value == pytest.approx(0.5 * np.log(49.0 / 12.0), abs=1e-8)

    def test_refinement_never_decreases(self, interior_optimum_instance):
        values = [
            scalar_grid_max(interior_optimum_instance, GridSpec(resolution=1e-2, refine_levels=k))[1]
            for k in range(3)
        ]
        assert values[0] <= values[1] <= values[2]
        assert values[2] == pytest.approx(0.5 * np.log(49.0 / 12.0), abs=1e-8)

    def test_boundary_instance(self):
        inst = scalar_instance(2.0, {(1, 1): 0.5, (2, 1): 2.0, (2, 2): 2.0}, 2)
        _, value = scalar_grid_max(inst, GridSpec(resolution=1e-3))
        assert value == pytest.approx(0.5 * np.log(4.0), abs=1e-12)

    def test_three_levels_respects_chain(self, rng):
        inst = random_instance(rng, 1, 3)
        theta, _ = scalar_grid_max(inst, GridSpec(resolution=1e-3))
        assert 0.0 <= theta[(1, 1)] <= theta[(2, 1)] <= inst.sigma_x[0, 0]
        assert theta[(1, 1)] <= theta[(2, 2)] <= inst.sigma_x[0, 0]

    @pytest.mark.slow
    @pytest.mark.parametrize("L", [2, 3])
    def test_agrees_with_solver(self, rng, L):
        for _ in range(3):
            inst = random_instance(rng, 1, L)
            _, grid_value = scalar_grid_max(inst, GridSpec(resolution=1e-4, refine_levels=2))
            assert solve(inst).value == pytest.approx(grid_value, abs=1e-5)

    @pytest.mark.slow
    @pytest.mark.parametrize("L", [2, 3])
    def test_agrees_with_solver_on_many_instances(self, rng, L):
        for _ in range(10):
            inst = random_instance(rng, 1, L)
            _, grid_value = scalar_grid_max(inst, GridSpec(resolution=1e-3, refine_levels=2))
            value = solve(inst).value
            assert value >= grid_value - 1e-9
            assert value == pytest.approx(grid_value, abs=1e-4)

    @pytest.mark.parametrize("m, L", [(2, 2), (1, 4)])
    def test_unsupported(self, rng, m, L):
        with pytest.raises(UnsupportedDimension):
            scalar_grid_max(random_instance(rng, m, L), GridSpec())


class TestClosedForms:
    def test_central_only(self, central_only_instance):
        assert known_closedforms(central_only_instance) == pytest.approx(0.5 * np.log(8.0))

    def test_all_trivial(self):
        sx = np.array([[2.0, 0.5], [0.5, 1.0]])
        inst = ProblemInstance.from_map(sx, {n: sx for n in nodes(3)}, 3)
        assert known_closedforms(inst) == 0.0

    def test_general_instance_has_none(self, rng):
        assert known_closedforms(random_instance(rng, 2, 3)) is None
