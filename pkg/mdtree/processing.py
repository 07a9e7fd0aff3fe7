"""Solve/verify pipeline: validate, solve, construct the scheme, certify, sample."""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import constants as C
from . import psd_linalg as la
from .config import SolverConfig
from .errors import InvalidSampleCount, MdtreeError
from .optimizer import SolveReport, solve
from .scheme_builder import (
    AchievableRate,
    DistortionEntry,
    EnhancedSigmas,
    MonteCarloReport,
    SchemeConstruction,
    achievable_rate_paths,
    build_scheme,
    distortion_check,
    monte_carlo_check,
    verify_enhancement,
)
from .tree_model import PaddedInstance, ProblemInstance, epsilon_shrink, is_strictly_interior, require_valid
from .utils import logging_status_callback

logger = logging.getLogger(__name__)


@dataclass
class PipelineResult:
    """Everything one solve/verify run produced; report.py renders it."""

    instance: ProblemInstance
    solved_instance: ProblemInstance
    solve: SolveReport
    epsilon_used: Optional[float] = None
    epsilon_schedule: List[dict] = field(default_factory=list)
    boundary_value: Optional[float] = None
    enhanced: Optional[EnhancedSigmas] = None
    construction: Optional[SchemeConstruction] = None
    enhancement_residuals: Dict[str, float] = field(default_factory=dict)
    achievable: Optional[AchievableRate] = None
    distortions: Dict[tuple, DistortionEntry] = field(default_factory=dict)
    monte_carlo: Optional[MonteCarloReport] = None
    certificate: str = C.CERT_UNVERIFIED
    reasons: List[str] = field(default_factory=list)
    retried: bool = False
    wall_times: Dict[str, float] = field(default_factory=dict)
    padding: Optional[PaddedInstance] = None


class _Timer:
    def __init__(self, sink, name):
        self.sink = sink
        self.name = name

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.sink[self.name] = self.sink.get(self.name, 0.0) + time.perf_counter() - self.start
        return False


def _solve_boundary(inst, cfg, schedule, status_callback, result_times):
    """Solves the ε-shrunk instances; returns (last instance, last report, schedule rows)."""
    lam_min = la.min_eig(inst.sigma_x)
    rows = []
    work, report = inst, None
    for eps in schedule:
        work = epsilon_shrink(inst, eps * lam_min)
        with _Timer(result_times, "solve"):
            report = solve(work, cfg)
        rows.append({"epsilon": eps, "value_nats": report.value})
        status_callback(f"ε = {eps:g}·λ_min: value {report.value:.10f} nats")
    return work, report, rows


def _construct(result: PipelineResult, tol: la.Tolerance):
    work = result.solved_instance
    rep = result.solve
    es, sc = build_scheme(work, rep.theta_star, rep.multipliers, tol)
    result.enhanced, result.construction = es, sc
    result.enhancement_residuals = verify_enhancement(work, rep.theta_star, rep.multipliers, es, tol)
    result.achievable = achievable_rate_paths(work, sc)
    result.distortions = distortion_check(work, es, sc, tol, required=result.instance)


def _certify(result: PipelineResult) -> None:
    reasons = result.reasons
    if result.construction is None:
        result.certificate = C.CERT_FAILED
        return
    unmet = [node for node, entry in result.distortions.items() if not entry.satisfied]
    if unmet:
        reasons.append(f"distortion constraints not met at {sorted(unmet)}")
        result.certificate = C.CERT_FAILED
        return
    if not result.solve.converged:
        reasons.append("KKT residuals above tolerance")
    bad = [k for k, v in result.enhancement_residuals.items() if v > C.ENHANCEMENT_TOL]
    if bad:
        reasons.append(f"enhancement identities above tolerance: {bad}")
    structure = [k for k, v in result.construction.structure_residuals.items() if v > C.STRUCTURE_TOL]
    if structure:
        reasons.append(f"construction identities above tolerance: {structure}")
    if result.construction.lambda_failures:
        reasons.append(f"Λ not PSD at {result.construction.lambda_failures}")
    value = result.solve.value
    rate = result.achievable
    if abs(rate.path_a - value) > C.RATE_REL_TOL * (1.0 + abs(value)):
        reasons.append(f"achievable rate {rate.path_a:.10f} differs from optimum {value:.10f}")
    if rate.gap > C.RATE_REL_TOL * (1.0 + abs(rate.path_a)):
        reasons.append("entropy and telescoping rate paths disagree")
    gaps = [
        node
        for node, entry in result.distortions.items()
        if entry.path_gap > C.ENHANCEMENT_TOL * (1.0 + la.max_abs(entry.required))
    ]
    if gaps:
        reasons.append(f"distortion paths disagree at {sorted(gaps)}")
    if result.monte_carlo is not None and not result.monte_carlo.within_bounds:
        reasons.append("Monte Carlo deviations exceed the CLT bound")
    result.certificate = C.CERT_UNVERIFIED if reasons else C.CERT_VERIFIED


def run_pipeline(
    inst: ProblemInstance,
    cfg: Optional[SolverConfig] = None,
    tol: Optional[la.Tolerance] = None,
    eps: Optional[float] = None,
    mc_samples: Optional[int] = None,
    mc_seed: int = 0,
    retry_on_lambda: bool = True,
    status_callback=logging_status_callback,
    padding: Optional[PaddedInstance] = None,
) -> PipelineResult:
    """validate -> (ε schedule) -> solve -> construct -> certify (-> Monte Carlo).

    ``eps`` replaces the boundary ε schedule with a single shrink (a multiple
    of λ_min(Σ_X)) and is applied even to strictly interior instances.
    Input problems raise; everything after the solve is reported as data.
    """
    cfg = cfg or SolverConfig()
    tol = tol or la.DEFAULT_TOLERANCE
    times: Dict[str, float] = {}
    status_callback(f"Validating instance (m={inst.m}, L={inst.L}, M={inst.M})...")
    require_valid(inst, tol)
    if mc_samples is not None and (isinstance(mc_samples, bool) or mc_samples < 1):
        raise InvalidSampleCount(f"--mc-samples must be a positive integer, got {mc_samples}")

    boundary = not is_strictly_interior(inst, tol)
    boundary_value = None
    rows: List[dict] = []
    eps_used = None
    if eps is not None or boundary:
        schedule = (eps,) if eps is not None else C.EPSILON_SCHEDULE
        if boundary:
            status_callback("Instance touches D = Σ_X; solving it directly and on the ε schedule.")
            with _Timer(times, "solve"):
                boundary_value = solve(inst, cfg).value
        work, report, rows = _solve_boundary(inst, cfg, schedule, status_callback, times)
        eps_used = schedule[-1]
    else:
        status_callback("Solving the sum-rate program...")
        work = inst
        with _Timer(times, "solve"):
            report = solve(inst, cfg)
    status_callback(
        f"Optimum {report.value:.10f} nats (seed {report.seed}, converged={report.converged})"
    )

    result = PipelineResult(
        instance=inst,
        solved_instance=work,
        solve=report,
        epsilon_used=eps_used,
        epsilon_schedule=rows,
        boundary_value=boundary_value,
        padding=padding,
    )

    status_callback("Building the achievability construction...")
    try:
        with _Timer(times, "construct"):
            _construct(result, tol)
        if retry_on_lambda and result.construction.lambda_failures:
            status_callback("Λ is not PSD; retrying with additional multistarts.", tag="warning")
            retry_cfg = cfg.with_overrides(
                multistart_seeds=tuple(s + C.RETRY_SEED_OFFSET for s in cfg.multistart_seeds)
            )
            with _Timer(times, "solve"):
                retry = solve(work, retry_cfg)
            result.retried = True
            if retry.value > report.value:
                result.solve = retry
                with _Timer(times, "construct"):
                    _construct(result, tol)
    except (MdtreeError, np.linalg.LinAlgError) as exc:
        logger.warning("construction failed: %s", exc)
        result.construction = None
        result.reasons.append(f"construction failed: {type(exc).__name__}: {exc}")
        status_callback(f"Construction failed: {exc}", is_error=True)

    if mc_samples is not None and result.construction is not None and result.construction.lambda_failures:
        result.reasons.append("Monte Carlo skipped: the joint law does not exist while Λ is not PSD")
    elif mc_samples is not None and result.construction is not None:
        status_callback(f"Monte Carlo check with {mc_samples} samples (seed {mc_seed})...")
        with _Timer(times, "monte_carlo"):
            result.monte_carlo = monte_carlo_check(
                work, result.construction, mc_samples, mc_seed, cfg.workers, cfg.progress
            )

    _certify(result)
    result.wall_times = times
    tag = "success" if result.certificate == C.CERT_VERIFIED else "warning"
    status_callback(f"Certificate: {result.certificate}", tag=tag)
    for reason in result.reasons:
        status_callback(reason, tag="warning")
    return result
