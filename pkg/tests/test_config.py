import numpy as np
import pytest
from pydantic import ValidationError

from mdtree.config import GeneralTreeFile, InstanceFile, SolverConfig, ToleranceConfig, parse_instance_document
from mdtree.errors import InstanceFormatError


def instance_document(**overrides):
    document = {
        "m": 1,
        "L": 2,
        "sigma_x": [[1.0]],
        "distortions": {"1,1": [[0.25]], "2,1": [[0.9]], "2,2": [[0.9]]},
    }
    document.update(overrides)
    return document


class TestInstanceFile:
    def test_round_trip_to_instance(self):
        model = parse_instance_document(instance_document())
        assert isinstance(model, InstanceFile)
        inst = model.to_instance()
        assert (inst.m, inst.L, inst.M) == (1, 2, 2)
        assert inst.d((1, 1))[0, 0] == 0.25

    def test_solver_block(self):
        model = parse_instance_document(instance_document(solver={"multistart_seeds": [4], "max_inner": 50}))
        assert model.solver.multistart_seeds == (4,)
        assert model.solver.max_inner == 50

    @pytest.mark.parametrize(
        "overrides",
        [
            {"distortions": {"1,1": [[0.25]], "2,1": [[0.9]]}},
            {"distortions": {"1,1": [[0.25]], "2,1": [[0.9]], "2,2": [[0.9]], "3,1": [[0.9]]}},
            {"sigma_x": [[1.0, 0.0], [0.0, 1.0]]},
            {"m": 2, "sigma_x": [[1.0, 0.3], [0.0, 1.0]]},
            {"L": 1},
            {"extra": True},
            {"solver": {"barrier_decay": 1.5}},
            {"solver": {"unknown_knob": 1}},
        ],
    )
    def test_schema_errors(self, overrides):
        with pytest.raises(InstanceFormatError):
            parse_instance_document(instance_document(**overrides))

    def test_non_finite_entries(self):
        document = instance_document(sigma_x=[[float("nan")]])
        with pytest.raises(InstanceFormatError):
            parse_instance_document(document)

    def test_not_an_object(self):
        with pytest.raises(InstanceFormatError):
            parse_instance_document([1, 2, 3])


class TestGeneralTreeFile:
    def test_dispatch_on_constraints(self):
        document = {
            "M": 3,
            "m": 1,
            "sigma_x": [[1.0]],
            "constraints": [{"subset": [1, 2, 3], "d": [[0.2]]}, {"subset": [1], "d": [[0.5]]}],
        }
        model = parse_instance_document(document)
        assert isinstance(model, GeneralTreeFile)
        spec = model.to_spec()
        assert spec.M == 3
        assert frozenset({1, 2, 3}) in {s for s, _ in spec.constraints}

    def test_empty_subset(self):
        document = {"M": 2, "m": 1, "sigma_x": [[1.0]], "constraints": [{"subset": [], "d": [[0.5]]}]}
        with pytest.raises(InstanceFormatError):
            parse_instance_document(document)


class TestSolverConfig:
    def test_defaults(self):
        cfg = SolverConfig()
        assert cfg.ascent == "bfgs"
        assert cfg.multistart_seeds == (0, 1, 2, 3, 4)
        assert cfg.workers == 1

    def test_overrides_skip_none(self):
        cfg = SolverConfig(grad_tol=1e-6).with_overrides(grad_tol=None, workers=4)
        assert cfg.grad_tol == 1e-6
        assert cfg.workers == 4

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"multistart_seeds": ()},
            {"multistart_seeds": (-1,)},
            {"barrier_decay": 0.0},
            {"max_outer": 0},
            {"ascent": "newton"},
            {"workers": 0},
        ],
    )
    def test_rejects(self, kwargs):
        with pytest.raises(ValidationError):
            SolverConfig(**kwargs)

    def test_overrides_are_validated(self):
        with pytest.raises(ValidationError):
            SolverConfig().with_overrides(grad_tol=-1.0)

    def test_frozen(self):
        with pytest.raises(ValidationError):
            SolverConfig().grad_tol = 1.0


class TestToleranceConfig:
    def test_to_tolerance(self):
        tol = ToleranceConfig(psd_eps=1e-7, eq_eps=1e-6).to_tolerance()
        assert tol.psd_tol(np.eye(2) * 100.0) == 1e-7
        assert tol.eq_eps == 1e-6

    def test_default_psd_is_relative(self):
        tol = ToleranceConfig().to_tolerance()
        assert tol.psd_eps is None

    def test_negative(self):
        with pytest.raises(ValidationError):
            ToleranceConfig(eq_eps=-1.0)
