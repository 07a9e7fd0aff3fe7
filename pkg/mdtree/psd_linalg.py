"""Symmetric / positive semidefinite matrix primitives.

Every matrix in mdtree is a dense ``float64`` numpy array. ``sym`` is the
single constructor: it checks the shape and symmetrizes, and every function
here symmetrizes its result before returning it. Eigendecomposition is the
canonical PSD test and factorization because the construction matrices are
legitimately singular; Cholesky is only used as a fast strict-PD probe.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from .constants import EQ_EPS, PSD_EPS_RELATIVE
from .errors import DimensionMismatch, NotPositiveDefinite, NotPsd

SymMatrix = NDArray[np.float64]


@dataclass(frozen=True)
class Tolerance:
    """Eigenvalue slack for PSD tests and residual slack for identities.

    ``psd_eps=None`` selects the scale-aware default 1e-9 * (1 + max|a|).
    """

    psd_eps: Optional[float] = None
    eq_eps: float = EQ_EPS

    def __post_init__(self):
        for name in ("psd_eps", "eq_eps"):
            value = getattr(self, name)
            if value is None:
                continue
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {value}")

    def psd_tol(self, a):
        if self.psd_eps is not None:
            return self.psd_eps
        return PSD_EPS_RELATIVE * (1.0 + max_abs(a))


DEFAULT_TOLERANCE = Tolerance()


def _tol(tol):
    return DEFAULT_TOLERANCE if tol is None else tol


def sym(a) -> SymMatrix:
    """Builds a symmetric matrix from any square array-like (A <- (A+A^T)/2)."""
    arr = np.array(a, dtype=np.float64, ndmin=2)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise DimensionMismatch(f"expected a non-empty square matrix, got shape {arr.shape}")
    return 0.5 * (arr + arr.T)


def identity(m) -> SymMatrix:
    return np.eye(m, dtype=np.float64)


def zeros(m) -> SymMatrix:
    return np.zeros((m, m), dtype=np.float64)


def max_abs(a) -> float:
    return float(np.max(np.abs(a))) if np.size(a) else 0.0


def check_same_dim(*mats):
    shapes = {np.shape(a) for a in mats}
    if len(shapes) != 1:
        raise DimensionMismatch(f"matrix shapes differ: {sorted(shapes)}")


def eigh(a):
    """Symmetric eigendecomposition (ascending eigenvalues)."""
    return scipy.linalg.eigh(sym(a))


def min_eig(a) -> float:
    return float(scipy.linalg.eigvalsh(sym(a))[0])


def is_pd(a) -> bool:
    """Cholesky fast path: True iff ``a`` factors as strictly positive definite."""
    try:
        scipy.linalg.cholesky(a, lower=True, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        return False
    return True


def _pd_eigh(a, tol):
    a = sym(a)
    w, v = scipy.linalg.eigh(a)
    eps = _tol(tol).psd_tol(a)
    if w[0] <= eps:
        raise NotPositiveDefinite(
            f"matrix is not positive definite (min eigenvalue {w[0]:.3e} <= {eps:.3e})"
        )
    return w, v


def logdet(a, tol=None) -> float:
    """Natural-log determinant of a positive definite matrix."""
    w, _ = _pd_eigh(a, tol)
    return float(np.sum(np.log(w)))


def inverse(a, tol=None) -> SymMatrix:
    w, v = _pd_eigh(a, tol)
    return sym((v / w) @ v.T)


def is_psd(a, tol=None) -> bool:
    a = sym(a)
    return min_eig(a) >= -_tol(tol).psd_tol(a)


def is_loewner_leq(a, b, tol=None) -> bool:
    """a ⪯ b in the Loewner order, i.e. b - a is PSD."""
    check_same_dim(a, b)
    return is_psd(np.asarray(b) - np.asarray(a), tol)


def psd_factor(a, tol=None) -> NDArray[np.float64]:
    """Returns F with F @ F.T ≈ a, clipping eigenvalues in [-psd_eps, 0] to zero.

    Raises:
        NotPsd: if some eigenvalue is below -psd_eps.
    """
    a = sym(a)
    w, v = scipy.linalg.eigh(a)
    eps = _tol(tol).psd_tol(a)
    if w[0] < -eps:
        raise NotPsd(f"matrix is not PSD (min eigenvalue {w[0]:.3e} < -{eps:.3e})")
    return v * np.sqrt(np.clip(w, 0.0, None))


def clip_psd(a, floor=0.0) -> SymMatrix:
    """Projects onto the PSD cone by clipping eigenvalues below ``floor``."""
    w, v = eigh(a)
    return sym((v * np.clip(w, floor, None)) @ v.T)


def residual(a, b) -> float:
    """Max-norm distance between two matrices."""
    return max_abs(np.asarray(a) - np.asarray(b))
