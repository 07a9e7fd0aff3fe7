"""Achievability construction from a solved (Θ*, M*) pair.

enhance -> build_lambda_gamma -> build_q_tree produces the joint law of the
description noises (Q_{L,1}, ..., Q_{L,M}); the remaining functions evaluate
the rate and distortions that law achieves, analytically and by simulation.
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
from .errors import (
    GammaSingular,
    InvalidSampleCount,
    JointCovSingular,
    LambdaNotPsd,
    NotPositiveDefinite,
    SingularEnhancement,
    SingularTerm,
)
from .optimizer import MultiplierSet
from .rate_objective import ThetaAssignment, sigma_from_distortion
from .tree_model import (
    Node,
    ProblemInstance,
    children,
    internal_nodes,
    lca,
    leaves,
    node_offset,
    nodes,
    subset,
)

logger = logging.getLogger(__name__)

ENHANCEMENT_KEYS = (
    "odd_child_enhancement",
    "even_child_enhancement",
    "enhanced_stationarity",
    "strict_ordering",
    "root_ratio",
    "edge_ratio_odd",
    "edge_ratio_even",
    "top_ratio_odd",
    "top_ratio_even",
    "enhancement_dominance",
)


@dataclass(frozen=True)
class EnhancedSigmas:
    L: int
    sig_tilde: Tuple[la.SymMatrix, ...]

    def sigma(self, node: Node) -> la.SymMatrix:
        return self.sig_tilde[node_offset(node)]

    def as_map(self) -> Dict[Node, la.SymMatrix]:
        return {node: self.sigma(node) for node in nodes(self.L)}


@dataclass
class SchemeConstruction:
    """Λ, Γ and H per internal node, plus the covariance of the Q tree.

    ``q_joint`` and ``node_q_cov`` stay None until build_q_tree runs.
    """

    m: int
    L: int
    theta: ThetaAssignment
    enhanced: EnhancedSigmas
    lambdas: Dict[Node, la.SymMatrix]
    gammas: Dict[Node, la.SymMatrix]
    h_blocks: Dict[Node, Tuple[np.ndarray, np.ndarray]]
    lambda_min_eigs: Dict[Node, float]
    structure_residuals: Dict[str, float] = field(default_factory=dict)
    lambda_failures: List[Node] = field(default_factory=list)
    q_joint: Optional[la.SymMatrix] = None
    node_q_cov: Optional[Dict[Node, la.SymMatrix]] = None

    @property
    def M(self) -> int:
        return 2 ** (self.L - 1)


@dataclass
class AchievableRate:
    path_a: float
    path_b: float
    terms: Dict[str, float]

    @property
    def gap(self) -> float:
        return abs(self.path_a - self.path_b)


@dataclass
class DistortionEntry:
    required: la.SymMatrix
    closed_form: la.SymMatrix
    mmse: la.SymMatrix
    path_gap: float
    satisfied: bool

    @property
    def achieved(self) -> la.SymMatrix:
        return self.mmse


@dataclass
class MonteCarloReport:
    n_samples: int
    seed: int
    shards: int
    u_cov_deviation: float
    u_cov_bound: float
    cross_moment: Dict[str, float]
    cross_moment_bound: Dict[str, float]
    distortion_deviation: Dict[str, float]
    distortion_bound: Dict[str, float]
    empirical_distortion: Dict[str, la.SymMatrix]

    @property
    def within_bounds(self) -> bool:
        if self.u_cov_deviation > self.u_cov_bound:
            return False
        for key, value in self.cross_moment.items():
            if value > self.cross_moment_bound[key]:
                return False
        for key, value in self.distortion_deviation.items():
            if value > self.distortion_bound[key]:
                return False
        return True


def _key(node: Node) -> str:
    return f"{node[0]},{node[1]}"


def _anchor(inst: ProblemInstance, th: ThetaAssignment, node: Node) -> la.SymMatrix:
    """Θ*_{k,i} for internal nodes, Σ_X for leaves."""
    return inst.sigma_x if node[0] == inst.L else th.theta(node)


def _logdet(a, node, error=SingularTerm) -> float:
    sign, value = np.linalg.slogdet(la.sym(a))
    if sign <= 0 or not np.isfinite(value):
        raise error("determinant argument is not positive definite", node=node)
    return float(value)


def _enhanced_inverse(a, node):
    try:
        return la.inverse(a, la.Tolerance(psd_eps=0.0))
    except NotPositiveDefinite as exc:
        raise SingularEnhancement(f"enhanced covariance is singular: {exc}", node=node) from exc


def enhance(inst: ProblemInstance, th_star: ThetaAssignment, ms: MultiplierSet, tol=None) -> EnhancedSigmas:
    """Σ̃_{k,i} = ((A + Σ_{S_{k,i}})^{-1} + M_{k,i})^{-1} - A with A = Θ*_{k,i} or Σ_X at leaves."""
    ss = sigma_from_distortion(inst, tol)
    out = []
    for node in nodes(inst.L):
        anchor = _anchor(inst, th_star, node)
        boosted = _enhanced_inverse(anchor + ss.sigma(node), node) + ms.multiplier(node)
        out.append(_enhanced_inverse(boosted, node) - anchor)
    return EnhancedSigmas(L=inst.L, sig_tilde=tuple(la.sym(s) for s in out))


def verify_enhancement(
    inst: ProblemInstance,
    th_star: ThetaAssignment,
    ms: MultiplierSet,
    es: EnhancedSigmas,
    tol=None,
) -> Dict[str, float]:
    """Max-norm residual of every enhancement identity.

    Identities between inverses are scaled by (1 + max|Σ_X|) so that all
    residuals are dimensionless. strict_ordering and enhancement_dominance
    report the amount by which the ordering fails (0 when it holds).
    """
    ss = sigma_from_distortion(inst, tol)
    scale = 1.0 + la.max_abs(inst.sigma_x)
    exact = la.Tolerance(psd_eps=0.0)
    res = {key: 0.0 for key in ENHANCEMENT_KEYS}

    def inv(a, node):
        try:
            return la.inverse(a, exact)
        except NotPositiveDefinite:
            logger.warning("singular matrix in enhancement identity at node %s", node)
            return np.full_like(a, np.inf)

    def bump(key, value):
        value = float(value)
        res[key] = max(res[key], value if np.isfinite(value) else np.inf)

    st = es.sigma
    for node in internal_nodes(inst.L):
        theta = th_star.theta(node)
        odd, even = children(node)
        for key, child in (("odd_child_enhancement", odd), ("even_child_enhancement", even)):
            lhs = inv(theta + st(child), child)
            rhs = inv(theta + ss.sigma(child), child) + ms.multiplier(child)
            bump(key, scale * la.residual(lhs, rhs))
        combined = inv(theta + st(odd), odd) + inv(theta + st(even), even)
        bump("enhanced_stationarity", scale * la.residual(combined, inv(theta + st(node), node)))
        for child in (odd, even):
            gap = st(child) - st(node)
            bump("strict_ordering", max(0.0, -la.min_eig(gap)) / (1.0 + la.max_abs(st(child))))

        for child, edge_key, top_key in (
            (odd, "edge_ratio_odd", "top_ratio_odd"),
            (even, "edge_ratio_even", "top_ratio_even"),
        ):
            upper = _anchor(inst, th_star, child)
            lhs = inv(theta + st(child), child) @ (upper + st(child))
            rhs = inv(theta + ss.sigma(child), child) @ (upper + ss.sigma(child))
            bump(top_key if child[0] == inst.L else edge_key, la.residual(lhs, rhs))

    root = (1, 1)
    bump("strict_ordering", max(0.0, -la.min_eig(st(root))) / (1.0 + la.max_abs(st(root))))
    theta11 = th_star.theta(root)
    lhs = inv(st(root), root) @ (theta11 + st(root))
    rhs = inv(ss.sigma(root), root) @ (theta11 + ss.sigma(root))
    bump("root_ratio", la.residual(lhs, rhs))

    for node in nodes(inst.L):
        gap = ss.sigma(node) - st(node)
        bump("enhancement_dominance", max(0.0, -la.min_eig(gap)) / (1.0 + la.max_abs(ss.sigma(node))))
    return res


def sum_rate_enhanced(inst: ProblemInstance, th_star: ThetaAssignment, es: EnhancedSigmas) -> float:
    """Sum rate written in enhanced covariances; equals the optimum when KKT holds."""
    sx = inst.sigma_x
    st = es.sigma
    root = (1, 1)
    value = 0.5 * (_logdet(sx + st(root), root) - _logdet(st(root), root))
    for node in internal_nodes(inst.L):
        theta = th_star.theta(node)
        odd, even = children(node)
        value += 0.5 * (
            _logdet(theta + st(node), node)
            + _logdet(sx + st(odd), odd)
            + _logdet(sx + st(even), even)
            - _logdet(sx + st(node), node)
            - _logdet(theta + st(odd), odd)
            - _logdet(theta + st(even), even)
        )
    return float(value)


def build_lambda_gamma(
    th_star: ThetaAssignment, es: EnhancedSigmas, tol=None, strict=False
) -> SchemeConstruction:
    """Λ_{k,i}, Γ_{k,i} and the splitting matrices H per internal node.

    Raises:
        GammaSingular: if some Γ_{k,i} is not positive definite.
        LambdaNotPsd: only with ``strict``; otherwise failures are recorded.
    """
    st = es.sigma
    m = st((1, 1)).shape[0]
    eye = la.identity(m)
    split = np.hstack([eye, eye])
    lambdas, gammas, h_blocks, min_eigs = {}, {}, {}, {}
    failures = []
    worst = {"gamma_block_inverse": 0.0, "h_sum": 0.0, "h_lambda_h": 0.0}
    for node in internal_nodes(th_star.L):
        theta = th_star.theta(node)
        odd, even = children(node)
        here = st(node)
        cross = -theta - here
        lam = la.sym(np.block([[st(odd) - here, cross], [cross, st(even) - here]]))
        gamma = la.sym(np.block([[st(odd), -theta], [-theta, st(even)]]))
        lambdas[node], gammas[node] = lam, gamma

        min_eigs[node] = la.min_eig(lam)
        if min_eigs[node] < -C.LAMBDA_PSD_TOL * (1.0 + la.max_abs(lam)):
            failures.append(node)
            message = f"Λ has eigenvalue {min_eigs[node]:.3e} at node {node}"
            if strict:
                raise LambdaNotPsd(message, node=node)
            logger.warning(message)

        try:
            gamma_chol = scipy.linalg.cho_factor(gamma, lower=True)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
            raise GammaSingular("Γ is not positive definite", node=node) from exc
        gamma_inv_split = scipy.linalg.cho_solve(gamma_chol, split.T)
        h = (here @ split) @ scipy.linalg.cho_solve(gamma_chol, np.eye(2 * m))
        h_odd, h_even = h[:, :m], h[:, m:]
        h_blocks[node] = (h_odd, h_even)

        here_scale = 1.0 + la.max_abs(here)
        worst["gamma_block_inverse"] = max(
            worst["gamma_block_inverse"],
            here_scale * la.residual(split @ gamma_inv_split, _enhanced_inverse(here, node)),
        )
        worst["h_sum"] = max(worst["h_sum"], la.residual(h_odd + h_even, eye))
        worst["h_lambda_h"] = max(
            worst["h_lambda_h"], la.max_abs(h @ lam @ h.T) / (1.0 + la.max_abs(lam))
        )
    return SchemeConstruction(
        m=m,
        L=th_star.L,
        theta=th_star,
        enhanced=es,
        lambdas=lambdas,
        gammas=gammas,
        h_blocks=h_blocks,
        lambda_min_eigs=min_eigs,
        structure_residuals=worst,
        lambda_failures=failures,
    )


def _v_covariance(sc: SchemeConstruction) -> np.ndarray:
    """Block covariance of all V_{k,i} (level-major), zero across sibling pairs."""
    m, L = sc.m, sc.L
    count = 2**L - 1
    cov = np.zeros((count * m, count * m))
    cov[:m, :m] = sc.enhanced.sigma((1, 1))
    for node, lam in sc.lambdas.items():
        odd, even = children(node)
        a, b = node_offset(odd) * m, node_offset(even) * m
        idx = np.r_[a : a + m, b : b + m]
        cov[np.ix_(idx, idx)] = lam
    return cov


def _path_matrix(L: int) -> np.ndarray:
    """Q_{k,i} = sum of V along the root path, as a 0/1 node-by-node matrix."""
    count = 2**L - 1
    path = np.zeros((count, count))
    for node in nodes(L):
        k, i = node
        row = node_offset(node)
        while True:
            path[row, node_offset((k, i))] = 1.0
            if k == 1:
                break
            k, i = k - 1, (i + 1) // 2
    return path


def build_q_tree(es: EnhancedSigmas, sc: SchemeConstruction) -> SchemeConstruction:
    """Completes ``sc`` with the joint covariance of every Q_{k,i}."""
    m, L = sc.m, sc.L
    incidence = np.kron(_path_matrix(L), np.eye(m))
    q_all = la.sym(incidence @ _v_covariance(sc) @ incidence.T)

    def block(a: Node, b: Node):
        ra, rb = node_offset(a) * m, node_offset(b) * m
        return q_all[ra : ra + m, rb : rb + m]

    sc.node_q_cov = {node: la.sym(block(node, node)) for node in nodes(L)}
    leaf_nodes = leaves(L)
    idx = np.concatenate([np.arange(node_offset(n) * m, node_offset(n) * m + m) for n in leaf_nodes])
    sc.q_joint = la.sym(q_all[np.ix_(idx, idx)])

    scale = 1.0 + max(la.max_abs(es.sigma(n)) for n in nodes(L))
    node_cov = max(la.residual(sc.node_q_cov[n], es.sigma(n)) for n in nodes(L))
    lca_blocks = 0.0
    for a in range(1, len(leaf_nodes) + 1):
        for b in range(a + 1, len(leaf_nodes) + 1):
            target = -sc.theta.theta(lca(a, b, L))
            lca_blocks = max(lca_blocks, la.residual(block((L, a), (L, b)), target))
    sc.structure_residuals["q_node_cov"] = node_cov / scale
    sc.structure_residuals["q_lca_blocks"] = lca_blocks / scale
    return sc


def achievable_rate_paths(inst: ProblemInstance, sc: SchemeConstruction) -> AchievableRate:
    """Rate of the constructed scheme via entropies and via per-node mutual informations.

    Raises:
        JointCovSingular: if the joint noise covariance is not positive definite.
    """
    if sc.q_joint is None:
        raise ValueError("build_q_tree must run before the rate can be evaluated")
    m, M = inst.m, inst.M
    sx = inst.sigma_x
    st = sc.enhanced.sigma
    marginal = sum(
        0.5 * (m * np.log(C.TWO_PI_E) + _logdet(sx + st(leaf), leaf)) for leaf in leaves(inst.L)
    )
    joint = 0.5 * (M * m * np.log(C.TWO_PI_E) + _logdet(sc.q_joint, None, JointCovSingular))
    path_a = float(marginal - joint)

    root = (1, 1)
    terms = {"root": 0.5 * (_logdet(sx + st(root), root) - _logdet(st(root), root))}
    for node in internal_nodes(inst.L):
        theta = sc.theta.theta(node)

        def info(target):
            return 0.5 * (_logdet(sx + st(target), target) - _logdet(theta + st(target), target))

        odd, even = children(node)
        terms[_key(node)] = info(odd) + info(even) - info(node)
    path_b = float(sum(terms.values()))
    return AchievableRate(path_a=path_a, path_b=path_b, terms=terms)


def achievable_sum_rate(inst: ProblemInstance, sc: SchemeConstruction, tol=None) -> float:
    rate = achievable_rate_paths(inst, sc)
    eq_eps = (tol or la.DEFAULT_TOLERANCE).eq_eps
    if rate.gap > eq_eps * (1.0 + abs(rate.path_a)):
        logger.warning(
            "achievable rate paths disagree: entropy %.12f vs telescoping %.12f",
            rate.path_a, rate.path_b,
        )
    return rate.path_a


def _mmse_weights(inst: ProblemInstance, sc: SchemeConstruction, node: Node):
    """(W, Σ_U) with W = C Σ_U^{-1} the linear MMSE estimator of X from (U_j)_{j in S}."""
    m = inst.m
    members = list(subset(node, inst.L))
    idx = np.concatenate([np.arange((j - 1) * m, j * m) for j in members])
    q_sub = sc.q_joint[np.ix_(idx, idx)]
    sigma_u = la.sym(np.kron(np.ones((len(members), len(members))), inst.sigma_x) + q_sub)
    c = np.tile(inst.sigma_x, (1, len(members)))
    weights = scipy.linalg.solve(sigma_u, c.T, assume_a="pos").T
    return weights, sigma_u, idx


def distortion_check(
    inst: ProblemInstance,
    es: EnhancedSigmas,
    sc: SchemeConstruction,
    tol=None,
    required: Optional[ProblemInstance] = None,
) -> Dict[Node, DistortionEntry]:
    """Achieved reconstruction covariance per node, closed form and direct MMSE.

    ``required`` supplies the constraints to test against when they differ
    from ``inst`` (the ε-shrunk instance is built, the original is required).
    """
    if sc.q_joint is None:
        raise ValueError("build_q_tree must run before distortions can be checked")
    target = required or inst
    sx_inv = la.inverse(inst.sigma_x, tol)
    exact = la.Tolerance(psd_eps=0.0)
    out = {}
    for node in nodes(inst.L):
        closed = la.inverse(sx_inv + la.inverse(es.sigma(node), exact), exact)
        weights, _, _ = _mmse_weights(inst, sc, node)
        c = np.tile(inst.sigma_x, (1, len(subset(node, inst.L))))
        mmse = la.sym(inst.sigma_x - weights @ c.T)
        d = target.d(node)
        # the MMSE path inherits the KKT error of the construction
        loose = la.Tolerance(
            psd_eps=max((tol or la.DEFAULT_TOLERANCE).psd_tol(d), C.ENHANCEMENT_TOL * (1.0 + la.max_abs(d)))
        )
        satisfied = la.is_loewner_leq(closed, d, tol) and la.is_loewner_leq(mmse, d, loose)
        out[node] = DistortionEntry(
            required=d,
            closed_form=closed,
            mmse=mmse,
            path_gap=la.residual(closed, mmse),
            satisfied=bool(satisfied),
        )
        if not satisfied:
            logger.warning("distortion constraint at node %s is not met", node)
    return out


# --- Monte Carlo ---


class _Sampler:
    """Draws shards of (X, Q-tree, X̂) and accumulates zero-mean moment sums."""

    def __init__(self, inst: ProblemInstance, sc: SchemeConstruction):
        self.inst = inst
        self.sc = sc
        self.m = inst.m
        self.x_factor = la.psd_factor(inst.sigma_x)
        self.v_root_factor = la.psd_factor(sc.enhanced.sigma((1, 1)))
        self.lambda_factors = {
            node: la.psd_factor(lam, la.Tolerance(psd_eps=C.LAMBDA_PSD_TOL * (1.0 + la.max_abs(lam))))
            for node, lam in sc.lambdas.items()
        }
        self.theta_factors = {node: la.psd_factor(sc.theta.theta(node)) for node in sc.lambdas}
        self.estimators = {node: _mmse_weights(inst, sc, node) for node in nodes(inst.L)}

    def shard(self, seed: int, index: int, size: int) -> dict:
        rng = np.random.default_rng([seed, index])
        m, L = self.m, self.inst.L

        def draw(factor):
            return rng.standard_normal((size, factor.shape[1])) @ factor.T

        x = draw(self.x_factor)
        q = {(1, 1): draw(self.v_root_factor)}
        cross = {}
        for node in internal_nodes(L):
            pair = draw(self.lambda_factors[node])
            odd, even = children(node)
            q[odd] = q[node] + pair[:, :m]
            q[even] = q[node] + pair[:, m:]
            x_hat = draw(self.theta_factors[node])
            cross[node] = (x_hat + q[odd]).T @ (x_hat + q[even])
        u = np.hstack([x + q[leaf] for leaf in leaves(L)])
        errors = {}
        for node, (weights, _, idx) in self.estimators.items():
            err = x - u[:, idx] @ weights.T
            errors[node] = err.T @ err
        return {"u": u.T @ u, "cross": cross, "errors": errors}


def monte_carlo_check(
    inst: ProblemInstance,
    sc: SchemeConstruction,
    n_samples: int,
    seed: int,
    workers: int = 1,
    progress: bool = False,
) -> MonteCarloReport:
    """Simulates the constructed law and compares its moments to the analytic targets.

    Shard s draws from default_rng([seed, s]) and shards are merged in order,
    so the report depends only on (n_samples, seed).

    Raises:
        InvalidSampleCount: if n_samples < 1.
    """
    if isinstance(n_samples, bool) or not isinstance(n_samples, (int, np.integer)) or n_samples < 1:
        raise InvalidSampleCount(f"n_samples must be a positive integer, got {n_samples!r}")
    if sc.q_joint is None:
        raise ValueError("build_q_tree must run before sampling")
    sampler = _Sampler(inst, sc)
    sizes = [C.MC_SHARD_SIZE] * (n_samples // C.MC_SHARD_SIZE)
    if n_samples % C.MC_SHARD_SIZE:
        sizes.append(n_samples % C.MC_SHARD_SIZE)

    with tqdm(total=len(sizes), desc="monte carlo", disable=not progress, leave=False) as bar:
        if workers > 1 and len(sizes) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(sampler.shard, seed, i, s) for i, s in enumerate(sizes)]
                results = []
                for future in futures:
                    results.append(future.result())
                    bar.update(1)
        else:
            results = []
            for i, s in enumerate(sizes):
                results.append(sampler.shard(seed, i, s))
                bar.update(1)

    n = float(n_samples)
    clt = C.MC_CLT_FACTOR / np.sqrt(n)

    def bound(variances):
        return clt * np.sqrt(2.0) * float(np.max(variances))

    u_sum = sum(r["u"] for r in results)
    m, M = inst.m, inst.M
    u_target = np.kron(np.ones((M, M)), inst.sigma_x) + sc.q_joint
    u_dev = la.residual(u_sum / n, u_target)

    st = sc.enhanced.sigma
    cross, cross_bound = {}, {}
    for node in internal_nodes(inst.L):
        total = sum(r["cross"][node] for r in results)
        theta = sc.theta.theta(node)
        odd, even = children(node)
        cross[_key(node)] = la.max_abs(total / n)
        cross_bound[_key(node)] = bound(np.concatenate([np.diag(theta + st(odd)), np.diag(theta + st(even))]))

    dist_dev, dist_bound, empirical = {}, {}, {}
    for node, (weights, _, _) in sampler.estimators.items():
        total = sum(r["errors"][node] for r in results)
        emp = la.sym(total / n)
        c = np.tile(inst.sigma_x, (1, len(subset(node, inst.L))))
        analytic = la.sym(inst.sigma_x - weights @ c.T)
        empirical[_key(node)] = emp
        dist_dev[_key(node)] = la.residual(emp, analytic)
        dist_bound[_key(node)] = bound(np.diag(analytic))

    report = MonteCarloReport(
        n_samples=int(n_samples),
        seed=int(seed),
        shards=len(sizes),
        u_cov_deviation=u_dev,
        u_cov_bound=bound(np.diag(u_target)),
        cross_moment=cross,
        cross_moment_bound=cross_bound,
        distortion_deviation=dist_dev,
        distortion_bound=dist_bound,
        empirical_distortion=empirical,
    )
    logger.info(
        "monte carlo: %d samples in %d shards, within bounds: %s", n_samples, len(sizes), report.within_bounds
    )
    return report


def build_scheme(inst: ProblemInstance, th_star: ThetaAssignment, ms: MultiplierSet, tol=None, strict=False):
    """enhance, build_lambda_gamma and build_q_tree in sequence."""
    es = enhance(inst, th_star, ms, tol)
    sc = build_lambda_gamma(th_star, es, tol, strict=strict)
    return es, build_q_tree(es, sc)
