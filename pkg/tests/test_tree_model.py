import numpy as np
import pytest

from mdtree.errors import EpsTooLarge, InvalidInstance, NotATree
from mdtree.tree_model import (
    GeneralTreeSpec,
    ProblemInstance,
    boundary_nodes,
    children,
    epsilon_shrink,
    individual_central_spec,
    individual_hierarchical_spec,
    is_strictly_interior,
    lca,
    leaves,
    node_offset,
    nodes,
    pad_to_perfect_binary,
    parent,
    require_valid,
    strip_padding,
    subset,
    validate,
)
from tests.conftest import random_instance, scalar_instance


class TestIndexing:
    @pytest.mark.parametrize("L", [2, 3, 4, 5])
    def test_offsets_are_level_major(self, L):
        offsets = [node_offset(node) for node in nodes(L)]
        assert offsets == list(range(2**L - 1))

    @pytest.mark.parametrize("L", [2, 3, 4])
    def test_children_partition_subset(self, L):
        for node in nodes(L - 1):
            odd, even = children(node)
            assert parent(odd) == node and parent(even) == node
            assert list(subset(odd, L)) + list(subset(even, L)) == list(subset(node, L))

    def test_subset_examples(self):
        assert list(subset((1, 1), 3)) == [1, 2, 3, 4]
        assert list(subset((2, 2), 3)) == [3, 4]
        assert list(subset((3, 3), 3)) == [3]

    def test_leaves_are_singletons(self):
        for j, leaf in enumerate(leaves(4), start=1):
            assert list(subset(leaf, 4)) == [j]

    def test_root_has_no_parent(self):
        with pytest.raises(ValueError):
            parent((1, 1))

    @pytest.mark.parametrize(
        "a, b, expected",
        [(1, 2, (2, 1)), (1, 3, (1, 1)), (3, 4, (2, 2)), (2, 4, (1, 1))],
    )
    def test_lca(self, a, b, expected):
        assert lca(a, b, 3) == expected

    def test_lca_is_deepest_common_node(self):
        L = 4
        for a in range(1, 9):
            for b in range(a + 1, 9):
                node = lca(a, b, L)
                assert a in subset(node, L) and b in subset(node, L)
                for kid in children(node):
                    assert not (a in subset(kid, L) and b in subset(kid, L))


class TestInstance:
    def test_wrong_distortion_count(self):
        with pytest.raises(InvalidInstance):
            ProblemInstance(m=1, L=2, sigma_x=np.eye(1), distortions=(np.eye(1),) * 2)

    def test_depth_below_two(self):
        with pytest.raises(InvalidInstance):
            ProblemInstance(m=1, L=1, sigma_x=np.eye(1), distortions=(np.eye(1),))

    def test_from_map_missing_node(self):
        with pytest.raises(InvalidInstance):
            ProblemInstance.from_map(np.eye(1), {(1, 1): np.eye(1)}, 2)

    def test_valid_random_instance(self, rng):
        inst = random_instance(rng, 3, 3)
        assert validate(inst) == []
        assert is_strictly_interior(inst)
        assert boundary_nodes(inst) == []

    def test_distortion_above_source(self):
        inst = scalar_instance(1.0, {(1, 1): 0.5, (2, 1): 1.5, (2, 2): 0.5}, 2)
        kinds = {(v.kind, v.node) for v in validate(inst)}
        assert ("distortion_exceeds_source", (2, 1)) in kinds
        with pytest.raises(InvalidInstance) as info:
            require_valid(inst)
        assert info.value.to_dict()["violations"]

    def test_singular_distortion(self):
        sx = np.eye(2)
        dmap = {node: 0.5 * sx for node in nodes(2)}
        dmap[(2, 2)] = np.diag([0.5, 0.0])
        kinds = [v.kind for v in validate(ProblemInstance.from_map(sx, dmap, 2))]
        assert kinds == ["distortion_not_pd"]

    def test_source_not_pd(self):
        inst = scalar_instance(-1.0, {(1, 1): -2.0, (2, 1): -2.0, (2, 2): -2.0}, 2)
        assert "sigma_x_not_pd" in {v.kind for v in validate(inst)}

    def test_boundary_nodes(self, active_top_instance):
        inst = active_top_instance.replace_distortions({(2, 2): [[1.0]]})
        assert not is_strictly_interior(inst)
        assert boundary_nodes(inst) == [(2, 2)]

    def test_to_dict_keys(self, rng):
        payload = random_instance(rng, 2, 3).to_dict()
        assert set(payload["distortions"]) == {f"{k},{i}" for k, i in nodes(3)}


class TestEpsilonShrink:
    def test_shifts_every_distortion(self, active_top_instance):
        shrunk = epsilon_shrink(active_top_instance, 0.1)
        for node in nodes(2):
            np.testing.assert_allclose(shrunk.d(node), active_top_instance.d(node) - 0.1)
        np.testing.assert_array_equal(shrunk.sigma_x, active_top_instance.sigma_x)

    def test_shrinks_add_up(self, interior_optimum_instance):
        twice = epsilon_shrink(epsilon_shrink(interior_optimum_instance, 0.05), 0.1)
        once = epsilon_shrink(interior_optimum_instance, 0.15)
        for node in nodes(2):
            np.testing.assert_allclose(twice.d(node), once.d(node), rtol=0, atol=1e-15)

    def test_zero_is_identity(self, active_top_instance):
        assert epsilon_shrink(active_top_instance, 0.0) is active_top_instance

    def test_too_large(self, active_top_instance):
        with pytest.raises(EpsTooLarge) as info:
            epsilon_shrink(active_top_instance, 0.25)
        assert info.value.node == (1, 1)

    def test_negative(self, active_top_instance):
        with pytest.raises(ValueError):
            epsilon_shrink(active_top_instance, -1e-3)


class TestPadding:
    def test_three_descriptions_individual_central(self):
        padded = pad_to_perfect_binary(individual_central_spec(3, 1.0, 0.5, 0.2))
        inst = padded.instance
        assert inst.L == 3 and inst.M == 4
        assert padded.relabeling == {1: 1, 2: 2, 3: 3, 4: 4}
        assert padded.dummy_nodes == [(2, 1), (2, 2), (3, 4)]
        assert inst.d((1, 1))[0, 0] == pytest.approx(0.2)
        for leaf in [(3, 1), (3, 2), (3, 3)]:
            assert inst.d(leaf)[0, 0] == pytest.approx(0.5)
        for node in padded.dummy_nodes:
            np.testing.assert_array_equal(inst.d(node), inst.sigma_x)
        assert padded.to_dict()["dummy_descriptions"] == [4]

    def test_strip_padding_recovers_constraints(self):
        spec = individual_hierarchical_spec(3, np.eye(2), 0.8 * np.eye(2), [0.5 * np.eye(2), 0.3 * np.eye(2)])
        padded = pad_to_perfect_binary(spec)
        recovered = strip_padding(padded)
        expected = sorted(spec.constraints, key=lambda item: (len(item[0]), sorted(item[0])))
        assert [s for s, _ in recovered] == [s for s, _ in expected]
        for (_, got), (_, want) in zip(recovered, expected):
            np.testing.assert_allclose(got, want)

    def test_hierarchical_layout(self):
        spec = individual_hierarchical_spec(3, 1.0, 0.8, [0.5, 0.3])
        padded = pad_to_perfect_binary(spec)
        assert padded.origin[(2, 1)] == frozenset({1, 2})
        assert padded.origin[(2, 2)] is None
        assert padded.origin[(3, 3)] == frozenset({3})

    def test_central_only_inserts_singletons(self):
        spec = GeneralTreeSpec(M=4, sigma_x=np.eye(1), constraints=((frozenset({1, 2, 3, 4}), [[0.3]]),))
        padded = pad_to_perfect_binary(spec)
        assert padded.instance.L == 3
        assert padded.origin[(1, 1)] == frozenset({1, 2, 3, 4})
        assert len(padded.dummy_nodes) == 6

    def test_missing_root_is_inserted(self):
        spec = GeneralTreeSpec(
            M=2, sigma_x=np.eye(1), constraints=((frozenset({1}), [[0.5]]), (frozenset({2}), [[0.5]]))
        )
        padded = pad_to_perfect_binary(spec)
        assert padded.instance.L == 2
        assert padded.dummy_nodes == [(1, 1)]

    def test_overlapping_subsets(self):
        spec = GeneralTreeSpec(
            M=3, sigma_x=np.eye(1), constraints=((frozenset({1, 2}), [[0.5]]), (frozenset({2, 3}), [[0.5]]))
        )
        with pytest.raises(NotATree):
            pad_to_perfect_binary(spec)

    @pytest.mark.parametrize(
        "constraints",
        [
            ((frozenset({4}), [[0.5]]),),
            ((frozenset({1}), [[0.5]]), (frozenset({1}), [[0.4]])),
        ],
    )
    def test_bad_subsets(self, constraints):
        spec = GeneralTreeSpec(M=3, sigma_x=np.eye(1), constraints=constraints)
        with pytest.raises(InvalidInstance):
            pad_to_perfect_binary(spec)
