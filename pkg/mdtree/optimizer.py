"""Barrier interior-point solver for the tree-structured sum-rate program.

The program maximizes the Σ-coordinate objective over the closed chain
0 ⪯ Θ_{1,1} ⪯ ... ⪯ Θ_{L-1,i} ⪯ Σ_X. Each outer iteration fixes μ and
ascends φ = objective + μ Σ logdet(slack) from the previous iterate; μ then
decays geometrically. Multipliers on the Lagrangian scale (log rather than
½ log) are recovered from the final iterate.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg
from tqdm import tqdm

from . import constants as C
from . import psd_linalg as la
from .config import SolverConfig
from .errors import NotConverged, SingularSlack
from .rate_objective import (
    PrecisionObjective,
    SlackSpec,
    ThetaAssignment,
    barrier_gradient,  # noqa: F401  re-exported
    objective_theta,
    slack_specs,
)
from .tree_model import Node, ProblemInstance, internal_nodes, node_offset, nodes, require_valid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MultiplierSet:
    """M_{k,i} for every node; M_{L,2i} is identically zero."""

    L: int
    ms: Tuple[la.SymMatrix, ...]

    @classmethod
    def from_map(cls, ms: Dict[Node, np.ndarray], L: int, m: int) -> "MultiplierSet":
        return cls(L=L, ms=tuple(la.sym(ms.get(node, la.zeros(m))) for node in nodes(L)))

    @classmethod
    def zero(cls, L: int, m: int) -> "MultiplierSet":
        return cls(L=L, ms=tuple(la.zeros(m) for _ in nodes(L)))

    def multiplier(self, node: Node) -> la.SymMatrix:
        return self.ms[node_offset(node)]

    def as_map(self) -> Dict[Node, la.SymMatrix]:
        return {node: self.multiplier(node) for node in nodes(self.L)}


@dataclass
class KktResiduals:
    """Max-norm residuals of the first-order system, keyed "k,i"."""

    stationarity: Dict[str, float]
    complementary: Dict[str, float]
    multiplier_psd: Dict[str, float]
    even_leaf: float

    @property
    def max_stationarity(self) -> float:
        return max(self.stationarity.values(), default=0.0)

    @property
    def max_complementary(self) -> float:
        return max(self.complementary.values(), default=0.0)

    @property
    def max_multiplier_psd(self) -> float:
        return max(self.multiplier_psd.values(), default=0.0)

    def within(self, stationarity_tol, slack_tol, scale=1.0) -> bool:
        return (
            self.max_stationarity * scale <= stationarity_tol
            and self.max_multiplier_psd * scale <= stationarity_tol
            and self.max_complementary <= slack_tol
            and self.even_leaf == 0.0
        )

    def to_dict(self) -> dict:
        return {
            "stationarity": self.stationarity,
            "complementary_slackness": self.complementary,
            "multiplier_psd_violation": self.multiplier_psd,
            "even_leaf_multiplier": self.even_leaf,
        }


@dataclass
class SolveReport:
    theta_star: ThetaAssignment
    multipliers: MultiplierSet
    value: float
    kkt_residuals: KktResiduals
    iterations: int
    restarts: int
    converged: bool
    seed: int
    mu_final: float
    history: List[Tuple[float, float]] = field(default_factory=list)
    runs: List[dict] = field(default_factory=list)


# --- Vectorization ---


class _Packer:
    """Isometric map between per-node symmetric matrices and a flat vector."""

    def __init__(self, m: int, node_list: List[Node]):
        self.m = m
        self.nodes = node_list
        self.index = {node: idx for idx, node in enumerate(node_list)}
        self.rows, self.cols = np.triu_indices(m)
        self.weights = np.where(self.rows == self.cols, 1.0, np.sqrt(2.0))
        self.width = len(self.rows)
        self.units = [self.unpack_one(e) for e in np.eye(self.width)]

    @property
    def size(self) -> int:
        return self.width * len(self.nodes)

    def pack_one(self, mat: np.ndarray) -> np.ndarray:
        return mat[self.rows, self.cols] * self.weights

    def unpack_one(self, chunk: np.ndarray) -> np.ndarray:
        chunk = chunk / self.weights
        mat = np.zeros((self.m, self.m))
        mat[self.rows, self.cols] = chunk
        mat[self.cols, self.rows] = chunk
        return mat

    def pack(self, mats: Dict[Node, np.ndarray]) -> np.ndarray:
        return np.concatenate([self.pack_one(mats[node]) for node in self.nodes])

    def unpack(self, x: np.ndarray) -> Dict[Node, np.ndarray]:
        w = self.width
        return {node: self.unpack_one(x[idx * w : (idx + 1) * w]) for idx, node in enumerate(self.nodes)}


@dataclass
class _Point:
    x: np.ndarray
    phi: float
    value: float
    grad: np.ndarray
    objective_grad: np.ndarray
    slack_chols: List[np.ndarray]
    slack_invs: List[np.ndarray]


class _BarrierRun:
    """One multistart run: owns its iterate, curvature estimate and history.

    The ascent metric is μ times the exact curvature of the log-det barrier
    plus an estimate of the objective's curvature built from gradient
    differences (damped BFGS, or a scalar Barzilai-Borwein estimate when
    ``ascent="gradient"``). The objective's Hessian is never formed.
    """

    def __init__(self, inst: ProblemInstance, cfg: SolverConfig, objective: PrecisionObjective):
        self.inst = inst
        self.cfg = cfg
        self.objective = objective
        self.specs = slack_specs(inst.L)
        self.packer = _Packer(inst.m, list(internal_nodes(inst.L)))
        self.scale = 1.0 + la.max_abs(inst.sigma_x)
        self.zero_sigma = np.zeros_like(inst.sigma_x)
        self.iterations = 0
        self.history: List[Tuple[float, float]] = []
        self._reset_curvature()

    def _reset_curvature(self):
        self.curvature = np.eye(self.packer.size) / self.scale**2
        self.fresh = True

    def evaluate(self, x: np.ndarray, mu: float) -> Optional[_Point]:
        """φ and its gradient, or None when x is not strictly feasible."""
        thetas = self.packer.unpack(x)
        barrier = 0.0
        barrier_grads = {node: np.zeros_like(t) for node, t in thetas.items()}
        chols, invs = [], []
        for spec in self.specs:
            slack = spec.matrix(thetas, self.inst.sigma_x)
            try:
                chol = np.linalg.cholesky(slack)
            except np.linalg.LinAlgError:
                return None
            diag = np.diag(chol)
            if np.any(diag <= 0.0) or not np.all(np.isfinite(diag)):
                return None
            barrier += 2.0 * float(np.sum(np.log(diag)))
            chol_inv = np.linalg.inv(chol)
            slack_inv = chol_inv.T @ chol_inv
            chols.append(chol)
            invs.append(slack_inv)
            if spec.upper is not None:
                barrier_grads[spec.upper] += slack_inv
            if spec.lower is not None:
                barrier_grads[spec.lower] -= slack_inv
        try:
            value, grads = self.objective.value_and_gradient(thetas)
        except np.linalg.LinAlgError:
            return None
        total = {node: la.sym(grads[node] + mu * barrier_grads[node]) for node in thetas}
        return _Point(
            x=x,
            phi=value + mu * barrier,
            value=value,
            grad=self.packer.pack(total),
            objective_grad=self.packer.pack(grads),
            slack_chols=chols,
            slack_invs=invs,
        )

    def initial_point(self, seed: int) -> np.ndarray:
        """Default chain Θ_k = (k/L)(1-δ)Σ_X, randomly perturbed for nonzero seeds."""
        L = self.inst.L
        sx = self.inst.sigma_x
        base = {node: (node[0] / L) * (1.0 - C.INIT_SHRINK) * sx for node in internal_nodes(L)}
        x0 = self.packer.pack(base)
        if seed == 0:
            return x0
        rng = np.random.default_rng(seed)
        factor = la.psd_factor(sx)
        m = self.inst.m
        bumps = {}
        for node in internal_nodes(L):
            w = rng.standard_normal((m, m)) / np.sqrt(m)
            bumps[node] = (C.INIT_PERTURBATION / L) * factor @ la.sym(w) @ factor.T
        direction = self.packer.pack(bumps)
        t = 1.0
        for _ in range(C.MAX_BACKTRACKS):
            candidate = x0 + t * direction
            if self.evaluate(candidate, 1.0) is not None:
                return candidate
            t *= 0.5
        return x0

    def barrier_curvature(self, point: _Point) -> np.ndarray:
        """Hessian of -Σ logdet(slack): ⟨S^{-1} dS S^{-1}, dS⟩ summed over the slacks."""
        w = self.packer.width
        hess = np.zeros((self.packer.size, self.packer.size))
        for spec, s_inv in zip(self.specs, point.slack_invs):
            block = np.column_stack([self.packer.pack_one(s_inv @ e @ s_inv) for e in self.packer.units])
            ends = []
            if spec.upper is not None:
                ends.append((self.packer.index[spec.upper], 1.0))
            if spec.lower is not None:
                ends.append((self.packer.index[spec.lower], -1.0))
            for a, sign_a in ends:
                for b, sign_b in ends:
                    hess[a * w : (a + 1) * w, b * w : (b + 1) * w] += sign_a * sign_b * block
        return hess

    def max_step(self, point: _Point, direction: np.ndarray) -> float:
        """Largest t with every slack at x + t·direction still positive definite."""
        moves = self.packer.unpack(direction)
        limit = np.inf
        for spec, chol in zip(self.specs, point.slack_chols):
            d_slack = spec.matrix(moves, self.zero_sigma)
            half = scipy.linalg.solve_triangular(chol, d_slack, lower=True)
            scaled = scipy.linalg.solve_triangular(chol, half.T, lower=True)
            lowest = float(scipy.linalg.eigvalsh(la.sym(scaled))[0])
            if lowest < 0.0:
                limit = min(limit, -1.0 / lowest)
        return limit

    def direction(self, point: _Point, mu: float) -> np.ndarray:
        metric = la.sym(mu * self.barrier_curvature(point) + self.curvature)
        try:
            return scipy.linalg.cho_solve(scipy.linalg.cho_factor(metric), point.grad)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            self._reset_curvature()
            metric = mu * self.barrier_curvature(point) + self.curvature
            return scipy.linalg.solve(la.sym(metric), point.grad, assume_a="sym")

    def _line_search(self, point: _Point, direction: np.ndarray, mu: float, step: float):
        slope = float(point.grad @ direction)
        noise = C.ARMIJO_NOISE_FLOOR * (1.0 + abs(point.phi))
        for _ in range(self.cfg.max_backtracks):
            trial = self.evaluate(point.x + step * direction, mu)
            if trial is not None and trial.phi >= point.phi + self.cfg.armijo_c * step * slope - noise:
                return trial
            step *= 0.5
        return None

    def _update_curvature(self, s: np.ndarray, y: np.ndarray) -> None:
        # y is the change of -∇objective, so s·y > 0 where the objective is concave
        sy = float(s @ y)
        if self.cfg.ascent == "gradient":
            if sy > 0.0:
                self.curvature = np.eye(s.size) * (float(y @ y) / sy)
            return
        if self.fresh and sy > 0.0:
            self.curvature = np.eye(s.size) * (float(y @ y) / sy)
        self.fresh = False
        bs = self.curvature @ s
        sbs = float(s @ bs)
        if sbs <= 0.0:
            return
        if sy < C.BFGS_DAMPING * sbs:
            t = (1.0 - C.BFGS_DAMPING) * sbs / (sbs - sy)
            y = t * y + (1.0 - t) * bs
            sy = float(s @ y)
        self.curvature = la.sym(self.curvature - np.outer(bs, bs) / sbs + np.outer(y, y) / sy)

    def ascend(self, point: _Point, mu: float, final: bool) -> _Point:
        """Inner loop at fixed μ; stops once φ is centered (Newton-type decrement)."""
        if final:
            centering = C.CENTERING_TOL
        else:
            centering = max(C.CENTERING_TOL, C.CENTERING_MU_FACTOR * mu)
        failures = 0
        for _ in range(self.cfg.max_inner):
            if np.max(np.abs(point.grad)) * self.scale <= self.cfg.grad_tol:
                break
            direction = self.direction(point, mu)
            if 0.5 * float(point.grad @ direction) <= centering:
                break
            step = min(1.0, C.BOUNDARY_FRACTION * self.max_step(point, direction))
            trial = self._line_search(point, direction, mu, step)
            self.iterations += 1
            if trial is None:
                failures += 1
                self._reset_curvature()
                if failures >= 2:
                    break
                continue
            failures = 0
            self._update_curvature(trial.x - point.x, point.objective_grad - trial.objective_grad)
            point = trial
        return point

    def run(self, seed: int):
        mu = self.cfg.barrier_mu0
        point = self.evaluate(self.initial_point(seed), mu)
        if point is None:
            raise RuntimeError("default initial chain is not strictly feasible")
        for outer in range(self.cfg.max_outer):
            final = mu <= self.cfg.mu_min or outer == self.cfg.max_outer - 1
            if outer:
                # φ and its gradient depend on μ
                point = self.evaluate(point.x, mu)
            point = self.ascend(point, mu, final)
            self.history.append((mu, point.value))
            logger.debug(
                "seed %d outer %d: mu=%.2e value=%.12f |grad|=%.2e",
                seed, outer, mu, point.value, np.max(np.abs(point.grad)),
            )
            if final:
                break
            mu *= self.cfg.barrier_decay
        return point, mu


def _barrier_estimate(vectors, eigenvalues, mu, floor):
    if np.any(eigenvalues <= floor):
        raise SingularSlack("slack is numerically zero along an active direction")
    return np.diag(2.0 * mu / eigenvalues)


def recover_multipliers(
    inst: ProblemInstance,
    th_star: ThetaAssignment,
    mu_final: float,
    slack_threshold: Optional[float] = None,
) -> MultiplierSet:
    """Lagrangian multipliers at a barrier solution.

    Slack directions with eigenvalue above the threshold are inactive and get
    multiplier 0. On active directions the barrier estimate 2μ·slack^{-1} is
    corrected by the minimum-norm least-squares change that zeros the
    stationarity equations; a numerically zero slack starts from 0 instead.
    Each multiplier is then projected onto the PSD cone.
    Residual stationarity outside the active subspaces stays in the KKT report.
    """
    m, L = inst.m, inst.L
    scale = 1.0 + la.max_abs(inst.sigma_x)
    threshold = (slack_threshold or C.SLACK_THRESHOLD_RELATIVE) * scale
    floor = C.SINGULAR_SLACK_RELATIVE * scale
    thetas = th_star.as_map()
    objective = PrecisionObjective(inst)

    active: List[Tuple[SlackSpec, np.ndarray, np.ndarray]] = []
    for spec in slack_specs(L):
        w, v = la.eigh(spec.matrix(thetas, inst.sigma_x))
        mask = w <= threshold
        if not np.any(mask):
            continue
        basis = v[:, mask]
        try:
            start = _barrier_estimate(basis, w[mask], mu_final, floor)
        except SingularSlack:
            logger.debug("slack %s is numerically zero; recovering from stationarity", spec.slot)
            start = np.zeros((basis.shape[1], basis.shape[1]))
        active.append((spec, basis, start))

    ms: Dict[Node, np.ndarray] = {}
    if active:
        node_list = list(internal_nodes(L))
        packer = _Packer(m, node_list)
        gradient = packer.pack({n: objective.full_gradient(n, thetas[n]) for n in node_list})
        columns, x0 = [], []
        for spec, basis, start in active:
            r = basis.shape[1]
            sub = _Packer(r, [spec.slot])
            x0.append(sub.pack({spec.slot: start}))
            for idx in range(sub.size):
                unit = np.zeros(sub.size)
                unit[idx] = 1.0
                x_mat = sub.unpack(unit)[spec.slot]
                contrib = {n: np.zeros((m, m)) for n in node_list}
                block = basis @ x_mat @ basis.T
                if spec.upper is not None:
                    contrib[spec.upper] += block
                if spec.lower is not None:
                    contrib[spec.lower] -= block
                columns.append(packer.pack(contrib))
        a = np.column_stack(columns)
        x_start = np.concatenate(x0)
        delta, *_ = scipy.linalg.lstsq(a, -gradient - a @ x_start)
        x = x_start + delta
        offset = 0
        for spec, basis, _ in active:
            sub = _Packer(basis.shape[1], [spec.slot])
            x_mat = sub.unpack(x[offset : offset + sub.size])[spec.slot]
            offset += sub.size
            ms[spec.slot] = la.clip_psd(basis @ x_mat @ basis.T)
    for i in range(1, 2 ** (L - 2) + 1):
        ms[(L, 2 * i)] = la.zeros(m)
    return MultiplierSet.from_map(ms, L, m)


def kkt_residual(inst: ProblemInstance, th: ThetaAssignment, ms: MultiplierSet) -> KktResiduals:
    """Stationarity, complementary slackness and multiplier-sign residuals."""
    thetas = th.as_map()
    objective = PrecisionObjective(inst)
    multipliers = ms.as_map()
    balance = {node: objective.full_gradient(node, thetas[node]) for node in thetas}
    complementary = {}
    for spec in slack_specs(inst.L):
        mult = multipliers[spec.slot]
        if spec.upper is not None:
            balance[spec.upper] = balance[spec.upper] + mult
        if spec.lower is not None:
            balance[spec.lower] = balance[spec.lower] - mult
        slack = spec.matrix(thetas, inst.sigma_x)
        complementary[_key(spec.slot)] = la.max_abs(mult @ slack)
    stationarity = {_key(node): la.max_abs(g) for node, g in balance.items()}
    psd = {}
    for node in nodes(inst.L):
        if node[0] == inst.L and node[1] % 2 == 0:
            continue
        psd[_key(node)] = max(0.0, -la.min_eig(multipliers[node]))
    even_leaf = max(
        (la.max_abs(multipliers[(inst.L, 2 * i)]) for i in range(1, 2 ** (inst.L - 2) + 1)),
        default=0.0,
    )
    return KktResiduals(
        stationarity=stationarity, complementary=complementary, multiplier_psd=psd, even_leaf=even_leaf
    )


def _key(node: Node) -> str:
    return f"{node[0]},{node[1]}"


def _finish_run(inst, cfg, objective, seed) -> SolveReport:
    run = _BarrierRun(inst, cfg, objective)
    point, mu = run.run(seed)
    theta = ThetaAssignment.from_map(run.packer.unpack(point.x), inst.L)
    ms = recover_multipliers(inst, theta, mu, cfg.slack_threshold)
    residuals = kkt_residual(inst, theta, ms)
    converged = residuals.within(cfg.kkt_tol, cfg.slack_tol, run.scale)
    return SolveReport(
        theta_star=theta,
        multipliers=ms,
        value=objective_theta(inst, theta),
        kkt_residuals=residuals,
        iterations=run.iterations,
        restarts=1,
        converged=converged,
        seed=seed,
        mu_final=mu,
        history=run.history,
    )


def solve(inst: ProblemInstance, cfg: Optional[SolverConfig] = None, raise_on_failure=False) -> SolveReport:
    """Maximizes the sum-rate program; the best multistart run wins.

    Raises:
        InvalidInstance: if the instance does not validate.
        NotConverged: only when ``raise_on_failure`` is set and no run converged.
    """
    cfg = cfg or SolverConfig()
    require_valid(inst)
    objective = PrecisionObjective(inst)
    seeds = list(cfg.multistart_seeds)

    with tqdm(total=len(seeds), desc="multistart", disable=not cfg.progress, leave=False) as bar:
        if cfg.workers > 1 and len(seeds) > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                futures = [pool.submit(_finish_run, inst, cfg, objective, s) for s in seeds]
                reports = []
                for future in futures:
                    reports.append(future.result())
                    bar.update(1)
        else:
            reports = []
            for s in seeds:
                reports.append(_finish_run(inst, cfg, objective, s))
                bar.update(1)

    best = reports[0]
    for candidate in reports[1:]:
        if candidate.value > best.value:
            best = candidate
    best.restarts = len(reports)
    best.runs = [
        {"seed": r.seed, "value": r.value, "converged": r.converged, "iterations": r.iterations}
        for r in reports
    ]
    logger.info(
        "solve finished: value=%.10f seed=%d converged=%s (%d runs)",
        best.value, best.seed, best.converged, len(reports),
    )
    if not best.converged:
        logger.warning(
            "best run did not meet KKT tolerances (stationarity %.2e, complementary %.2e)",
            best.kkt_residuals.max_stationarity, best.kkt_residuals.max_complementary,
        )
        if raise_on_failure:
            raise NotConverged("no multistart run met the KKT tolerances", report=best)
    return best
