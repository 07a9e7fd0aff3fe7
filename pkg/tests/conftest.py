import numpy as np
import pytest
from scipy.stats import ortho_group

from mdtree.tree_model import ProblemInstance, nodes


def random_spd(rng, m, low=0.5, high=2.0):
    if m == 1:
        return np.array([[rng.uniform(low, high)]])
    q = ortho_group.rvs(m, random_state=rng)
    return q @ np.diag(rng.uniform(low, high, size=m)) @ q.T


def random_instance(rng, m, L, low=0.2, high=0.9):
    """D = Σ_X^{1/2} C Σ_X^{1/2} with eig(C) in [low, high], so 0 ≺ D ≺ Σ_X."""
    sigma_x = random_spd(rng, m)
    w, v = np.linalg.eigh(sigma_x)
    root = (v * np.sqrt(w)) @ v.T
    dmap = {node: root @ random_spd(rng, m, low, high) @ root for node in nodes(L)}
    return ProblemInstance.from_map(sigma_x, dmap, L)


def scalar_instance(sigma2, dmap, L):
    return ProblemInstance.from_map([[sigma2]], {node: [[d]] for node, d in dmap.items()}, L)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def active_top_instance():
    """σ²=1, d=(0.25, 0.9, 0.9): θ* = 1 on the upper bound, optimum ½ln4."""
    return scalar_instance(1.0, {(1, 1): 0.25, (2, 1): 0.9, (2, 2): 0.9}, 2)


@pytest.fixture
def interior_optimum_instance():
    """σ²=1, d=(0.3, 0.5, 0.5): θ* = 1/7 strictly inside, optimum ½ln(49/12)."""
    return scalar_instance(1.0, {(1, 1): 0.3, (2, 1): 0.5, (2, 2): 0.5}, 2)


@pytest.fixture
def central_only_instance():
    """Only the root is constrained; optimum ½ln(|Σ_X|/|D_root|) = ½ln 8."""
    sx = np.eye(2)
    dmap = {node: sx for node in nodes(3)}
    dmap[(1, 1)] = np.diag([0.5, 0.25])
    return ProblemInstance.from_map(sx, dmap, 3)
