"""Sum-rate objective in Θ, Σ and noise coordinates.

All values are in nats. Internal nodes (levels 1..L-1) carry one Θ each.
The feasible set is the closed chain

    0 ⪯ Θ_{1,1} ⪯ ... ⪯ Θ_{L-1,i} ⪯ Σ_X

and each inequality is represented by a ``SlackSpec``: the slack matrix is
``upper - lower`` and its multiplier lives in the Lagrangian slot ``slot``.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import psd_linalg as la
from .errors import (
    BoundaryTheta,
    InfeasibleTheta,
    InvalidNoiseTree,
    NotPositiveDefinite,
    NotStrictlyInterior,
    SingularTerm,
)
from .tree_model import (
    Node,
    ProblemInstance,
    children,
    internal_nodes,
    is_strictly_interior,
    node_offset,
    nodes,
    parent,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ThetaAssignment:
    L: int
    thetas: Tuple[la.SymMatrix, ...]

    def __post_init__(self):
        expected = 2 ** (self.L - 1) - 1
        if len(self.thetas) != expected:
            raise ValueError(f"expected {expected} Θ matrices for L={self.L}, got {len(self.thetas)}")
        object.__setattr__(self, "thetas", tuple(la.sym(t) for t in self.thetas))

    @classmethod
    def from_map(cls, thetas: Dict[Node, object], L: int) -> "ThetaAssignment":
        return cls(L=L, thetas=tuple(thetas[node] for node in internal_nodes(L)))

    @classmethod
    def uniform(cls, theta, L: int) -> "ThetaAssignment":
        return cls(L=L, thetas=tuple(la.sym(theta) for _ in internal_nodes(L)))

    def theta(self, node: Node) -> la.SymMatrix:
        return self.thetas[node_offset(node)]

    def as_map(self) -> Dict[Node, la.SymMatrix]:
        return {node: self.theta(node) for node in internal_nodes(self.L)}


@dataclass(frozen=True)
class NoiseTree:
    """Σ_{N_{k,i}} per internal node."""

    L: int
    sigma_n: Tuple[la.SymMatrix, ...]

    @classmethod
    def from_map(cls, sigma_n: Dict[Node, object], L: int) -> "NoiseTree":
        return cls(L=L, sigma_n=tuple(la.sym(sigma_n[node]) for node in internal_nodes(L)))

    def noise(self, node: Node) -> la.SymMatrix:
        return self.sigma_n[node_offset(node)]

    def increment(self, node: Node) -> la.SymMatrix:
        """Σ_{W_{k,i}} = Σ_{N_{k,i}} - Σ_{N_parent} (Σ_{N_{1,1}} at the root)."""
        if node == (1, 1):
            return self.noise(node)
        return self.noise(node) - self.noise(parent(node))


@dataclass(frozen=True)
class SigmaSlack:
    """Σ_{S_{k,i}} = (D^{-1} - Σ_X^{-1})^{-1} for every node."""

    L: int
    sigmas: Tuple[la.SymMatrix, ...]

    def sigma(self, node: Node) -> la.SymMatrix:
        return self.sigmas[node_offset(node)]


@dataclass(frozen=True)
class SlackSpec:
    """One chain inequality ``lower ⪯ upper``; None means 0 (lower) or Σ_X (upper)."""

    slot: Node
    lower: Optional[Node]
    upper: Optional[Node]

    @property
    def kind(self) -> str:
        if self.lower is None:
            return "root"
        if self.upper is None:
            return "top"
        return "edge"

    def matrix(self, thetas: Dict[Node, np.ndarray], sigma_x) -> np.ndarray:
        upper = sigma_x if self.upper is None else thetas[self.upper]
        if self.lower is None:
            return upper
        return upper - thetas[self.lower]


def slack_specs(L: int) -> List[SlackSpec]:
    """Chain constraints in multiplier-slot order (level-major)."""
    specs = [SlackSpec(slot=(1, 1), lower=None, upper=(1, 1))]
    for node in internal_nodes(L):
        if node[0] == 1:
            continue
        specs.append(SlackSpec(slot=node, lower=parent(node), upper=node))
    for i in range(1, 2 ** (L - 2) + 1):
        specs.append(SlackSpec(slot=(L, 2 * i - 1), lower=(L - 1, i), upper=None))
    return specs


def slack_matrices(sigma_x, th: ThetaAssignment) -> Dict[Node, np.ndarray]:
    thetas = th.as_map()
    return {spec.slot: spec.matrix(thetas, sigma_x) for spec in slack_specs(th.L)}


def check_feasible(inst: ProblemInstance, th: ThetaAssignment, tol=None) -> None:
    """Raises InfeasibleTheta unless Θ lies on the closed chain."""
    if th.L != inst.L:
        raise InfeasibleTheta(f"Θ has depth {th.L}, instance has depth {inst.L}")
    for spec in slack_specs(inst.L):
        slack = spec.matrix(th.as_map(), inst.sigma_x)
        if not la.is_psd(slack, tol):
            raise InfeasibleTheta(
                f"{spec.kind} constraint violated (min eig {la.min_eig(slack):.3e})",
                node=spec.slot,
            )


def is_strictly_feasible(inst: ProblemInstance, th: ThetaAssignment) -> bool:
    thetas = th.as_map()
    return all(la.is_pd(spec.matrix(thetas, inst.sigma_x)) for spec in slack_specs(inst.L))


def sigma_from_distortion(inst: ProblemInstance, tol=None) -> SigmaSlack:
    if not is_strictly_interior(inst, tol):
        raise NotStrictlyInterior("Σ_S exists only when every D ≺ Σ_X")
    sx_inv = la.inverse(inst.sigma_x, tol)
    sigmas = tuple(la.inverse(la.inverse(d, tol) - sx_inv, tol) for d in inst.distortions)
    return SigmaSlack(L=inst.L, sigmas=sigmas)


def _logdet_general(a, node) -> float:
    sign, value = np.linalg.slogdet(a)
    if sign <= 0 or not np.isfinite(value):
        raise SingularTerm("determinant argument is not positive", node=node)
    return float(value)


def _logdet_pd(a, node) -> float:
    try:
        return la.logdet(a)
    except NotPositiveDefinite as exc:
        raise SingularTerm(str(exc), node=node) from exc


def objective_terms(inst: ProblemInstance, th: ThetaAssignment, tol=None) -> Dict[str, float]:
    """Per-term breakdown of the Θ-coordinate objective (keys "root" and "k,i")."""
    check_feasible(inst, th, tol)
    sx = inst.sigma_x
    sx_inv = la.inverse(sx, tol)
    ld_sx = la.logdet(sx, tol)
    terms = {"root": 0.5 * (ld_sx - _logdet_pd(inst.d((1, 1)), (1, 1)))}
    for node in internal_nodes(inst.L):
        theta = th.theta(node)
        shrink = sx_inv @ (sx - theta)
        odd, even = children(node)

        def ld(target):
            return _logdet_general(inst.d(target) @ shrink + theta, node)

        terms[f"{node[0]},{node[1]}"] = 0.5 * (ld_sx + ld(node) - ld(odd) - ld(even))
    return terms


def objective_theta(inst: ProblemInstance, th: ThetaAssignment, tol=None) -> float:
    return float(sum(objective_terms(inst, th, tol).values()))


def objective_sigma(inst: ProblemInstance, th: ThetaAssignment, tol=None) -> float:
    ss = sigma_from_distortion(inst, tol)
    check_feasible(inst, th, tol)
    sx = inst.sigma_x
    root_s = ss.sigma((1, 1))
    value = 0.5 * (_logdet_pd(sx + root_s, (1, 1)) - _logdet_pd(root_s, (1, 1)))
    for node in internal_nodes(inst.L):
        theta = th.theta(node)
        odd, even = children(node)
        s_n, s_o, s_e = ss.sigma(node), ss.sigma(odd), ss.sigma(even)
        value += 0.5 * (
            _logdet_pd(theta + s_n, node)
            + _logdet_pd(sx + s_o, odd)
            + _logdet_pd(sx + s_e, even)
            - _logdet_pd(sx + s_n, node)
            - _logdet_pd(theta + s_o, odd)
            - _logdet_pd(theta + s_e, even)
        )
    return float(value)


def slack_precisions(inst: ProblemInstance, tol=None) -> Dict[Node, la.SymMatrix]:
    """P = D^{-1} - Σ_X^{-1} per node, clipped to the PSD cone (zero where D = Σ_X)."""
    sx_inv = la.inverse(inst.sigma_x, tol)
    return {node: la.clip_psd(la.inverse(inst.d(node), tol) - sx_inv) for node in nodes(inst.L)}


class PrecisionObjective:
    """Σ-coordinate objective evaluated through slack precisions.

    P = D^{-1} - Σ_X^{-1} = F F^T is finite even where D = Σ_X (P = 0), and
    (Θ + Σ_S)^{-1} = F (I + F^T Θ F)^{-1} F^T, so boundary nodes simply
    contribute nothing. On strictly interior instances this is objective_sigma.
    """

    def __init__(self, inst: ProblemInstance, tol=None):
        self.inst = inst
        self.factors = {node: la.psd_factor(p, tol) for node, p in slack_precisions(inst, tol).items()}
        self._eye = np.eye(inst.m)
        self._top = {node: self._logdet_inv(node, inst.sigma_x)[0] for node in nodes(inst.L)}
        self.constant = 0.5 * self._top[(1, 1)]

    def _logdet_inv(self, node, theta):
        f = self.factors[node]
        a = self._eye + f.T @ theta @ f
        chol = np.linalg.cholesky(a)
        chol_inv = np.linalg.inv(chol)
        return 2.0 * float(np.sum(np.log(np.diag(chol)))), chol_inv.T @ chol_inv

    def node_term(self, node: Node, theta) -> float:
        odd, even = children(node)
        total = 0.0
        for target, sign in ((node, 1.0), (odd, -1.0), (even, -1.0)):
            total += sign * (self._logdet_inv(target, theta)[0] - self._top[target])
        return 0.5 * total

    def value(self, thetas: Dict[Node, np.ndarray]) -> float:
        return self.constant + sum(self.node_term(node, thetas[node]) for node in thetas)

    def resolvent(self, target: Node, theta) -> np.ndarray:
        """(Θ + Σ_{S_target})^{-1}."""
        f = self.factors[target]
        inv = self._logdet_inv(target, theta)[1]
        return la.sym(f @ inv @ f.T)

    def full_gradient(self, node: Node, theta) -> np.ndarray:
        """Gradient of the un-halved node term: the Lagrangian-scale stationarity part."""
        odd, even = children(node)
        return la.sym(
            self.resolvent(node, theta) - self.resolvent(odd, theta) - self.resolvent(even, theta)
        )

    def value_and_gradient(self, thetas: Dict[Node, np.ndarray]):
        value = self.constant
        grads = {}
        for node, theta in thetas.items():
            odd, even = children(node)
            grad = np.zeros_like(theta)
            for target, sign in ((node, 1.0), (odd, -1.0), (even, -1.0)):
                ld, inv = self._logdet_inv(target, theta)
                f = self.factors[target]
                value += 0.5 * sign * (ld - self._top[target])
                grad += 0.5 * sign * (f @ inv @ f.T)
            grads[node] = la.sym(grad)
        return value, grads


def barrier_gradient(inst: ProblemInstance, th: ThetaAssignment, mu: float, tol=None):
    """Gradient of objective_sigma + μ Σ logdet(slack) with respect to every Θ_{k,i}.

    Raises:
        BoundaryTheta: if some slack is not strictly positive definite.
    """
    objective = PrecisionObjective(inst, tol)
    thetas = th.as_map()
    _, grads = objective.value_and_gradient(thetas)
    if mu:
        for spec in slack_specs(inst.L):
            slack = spec.matrix(thetas, inst.sigma_x)
            if not la.is_pd(slack):
                raise BoundaryTheta(f"{spec.kind} slack is not strictly positive", node=spec.slot)
            slack_inv = mu * la.inverse(slack, la.Tolerance(psd_eps=0.0))
            if spec.upper is not None:
                grads[spec.upper] = grads[spec.upper] + slack_inv
            if spec.lower is not None:
                grads[spec.lower] = grads[spec.lower] - slack_inv
    return {node: la.sym(g) for node, g in grads.items()}


def theta_from_noise(sigma_x, nt: NoiseTree, tol=None) -> ThetaAssignment:
    """Θ_{k,i} = (Σ_X^{-1} + Σ_{N_{k,i}}^{-1})^{-1}."""
    _check_noise_tree(nt)
    sx_inv = la.inverse(sigma_x, tol)
    return ThetaAssignment(
        L=nt.L, thetas=tuple(la.inverse(sx_inv + la.inverse(n, tol), tol) for n in nt.sigma_n)
    )


def noise_from_theta(sigma_x, th: ThetaAssignment, tol=None) -> NoiseTree:
    """Σ_{N_{k,i}} = (Θ_{k,i}^{-1} - Σ_X^{-1})^{-1}; exists only on the strict chain.

    Raises:
        BoundaryTheta: if Θ is not strictly feasible.
    """
    sigma_x = la.sym(sigma_x)
    thetas = th.as_map()
    for spec in slack_specs(th.L):
        if not la.is_pd(spec.matrix(thetas, sigma_x)):
            raise BoundaryTheta(
                f"noise coordinates do not exist on the {spec.kind} boundary", node=spec.slot
            )
    sx_inv = la.inverse(sigma_x, tol)
    strict = la.Tolerance(psd_eps=0.0)
    try:
        noise = tuple(la.inverse(la.inverse(t, strict) - sx_inv, strict) for t in th.thetas)
    except NotPositiveDefinite as exc:
        raise BoundaryTheta(f"noise coordinates are numerically infinite: {exc}") from exc
    return NoiseTree(L=th.L, sigma_n=noise)


def _check_noise_tree(nt: NoiseTree) -> None:
    if len(nt.sigma_n) != 2 ** (nt.L - 1) - 1:
        raise InvalidNoiseTree(f"expected {2 ** (nt.L - 1) - 1} noise matrices")
    if not la.is_pd(nt.noise((1, 1))):
        raise InvalidNoiseTree("Σ_{N_{1,1}} must be positive definite", node=(1, 1))
    for node in internal_nodes(nt.L):
        if node[0] == 1:
            continue
        if not la.is_pd(nt.increment(node)):
            raise InvalidNoiseTree("noise must strictly increase down the tree", node=node)


def lower_bound_value(inst: ProblemInstance, nt: NoiseTree, tol=None) -> float:
    """Noise-tree lower bound on the sum rate for one admissible Σ_N assignment."""
    _check_noise_tree(nt)
    if nt.L != inst.L:
        raise InvalidNoiseTree(f"noise tree depth {nt.L} does not match instance depth {inst.L}")
    sx = inst.sigma_x
    L = inst.L

    def ld(a, node):
        return _logdet_pd(a, node)

    n11 = nt.noise((1, 1))
    d11 = inst.d((1, 1))
    value = 0.5 * (ld(sx, (1, 1)) + ld(d11 + n11, (1, 1)) - ld(d11, (1, 1)) - ld(sx + n11, (1, 1)))
    for node in internal_nodes(L):
        n_here = nt.noise(node)
        for child in children(node):
            d_child = inst.d(child)
            if node[0] < L - 1:
                n_child = nt.noise(child)
                value += 0.5 * (
                    ld(sx + n_here, node)
                    + ld(d_child + n_child, child)
                    - ld(sx + n_child, child)
                    - ld(d_child + n_here, child)
                )
            else:
                value += 0.5 * (ld(sx + n_here, node) - ld(d_child + n_here, child))
    return float(value)
