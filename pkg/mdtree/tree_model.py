"""Perfect binary tree indexing, problem instances, padding and ε-shrinking.

Nodes are ``(k, i)`` tuples with level ``1 <= k <= L`` and position
``1 <= i <= 2**(k-1)``. Storage is a flat tuple in level-major,
position-minor order (offset ``2**(k-1) - 1 + i - 1``).
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterator, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from . import psd_linalg as la
from .errors import DimensionMismatch, EpsTooLarge, InvalidInstance, NotATree

logger = logging.getLogger(__name__)

Node = Tuple[int, int]


# --- Node arithmetic ---


def node_offset(node: Node) -> int:
    k, i = node
    return 2 ** (k - 1) - 1 + i - 1


def node_count(L: int) -> int:
    return 2**L - 1


def nodes(L: int) -> Iterator[Node]:
    """All nodes, level-major then position-minor."""
    for k in range(1, L + 1):
        for i in range(1, 2 ** (k - 1) + 1):
            yield (k, i)


def internal_nodes(L: int) -> Iterator[Node]:
    for node in nodes(L - 1):
        yield node


def leaves(L: int) -> List[Node]:
    return [(L, j) for j in range(1, 2 ** (L - 1) + 1)]


def children(node: Node) -> Tuple[Node, Node]:
    k, i = node
    return (k + 1, 2 * i - 1), (k + 1, 2 * i)


def parent(node: Node) -> Node:
    k, i = node
    if k <= 1:
        raise ValueError("the root has no parent")
    return (k - 1, (i + 1) // 2)


def subset(node: Node, L: int) -> range:
    """Descriptions j with 2^L (i-1)/2^k < j <= 2^L i/2^k."""
    k, i = node
    width = 2 ** (L - k)
    return range(width * (i - 1) + 1, width * i + 1)


def leaf_ancestor(leaf: int, k: int, L: int) -> Node:
    """Level-k ancestor of description ``leaf`` (1-based)."""
    return (k, (leaf - 1) // 2 ** (L - k) + 1)


def lca(a: int, b: int, L: int) -> Node:
    """Least common ancestor of two leaves given by description index."""
    for k in range(L, 0, -1):
        node = leaf_ancestor(a, k, L)
        if node == leaf_ancestor(b, k, L):
            return node
    return (1, 1)


# --- Problem instances ---


@dataclass(frozen=True)
class ProblemInstance:
    """Source covariance plus one distortion matrix per tree node."""

    m: int
    L: int
    sigma_x: la.SymMatrix
    distortions: Tuple[la.SymMatrix, ...]

    def __post_init__(self):
        if self.L < 2:
            raise InvalidInstance(f"tree depth L must be >= 2, got {self.L}")
        if len(self.distortions) != node_count(self.L):
            raise InvalidInstance(
                f"expected {node_count(self.L)} distortion matrices for L={self.L}, "
                f"got {len(self.distortions)}"
            )
        object.__setattr__(self, "sigma_x", la.sym(self.sigma_x))
        object.__setattr__(self, "distortions", tuple(la.sym(d) for d in self.distortions))

    @classmethod
    def from_map(cls, sigma_x, distortions: Dict[Node, object], L: int) -> "ProblemInstance":
        sigma_x = la.sym(sigma_x)
        missing = [node for node in nodes(L) if node not in distortions]
        if missing:
            raise InvalidInstance(f"missing distortion for nodes {missing}")
        flat = tuple(la.sym(distortions[node]) for node in nodes(L))
        return cls(m=sigma_x.shape[0], L=L, sigma_x=sigma_x, distortions=flat)

    @property
    def M(self) -> int:
        return 2 ** (self.L - 1)

    def d(self, node: Node) -> la.SymMatrix:
        return self.distortions[node_offset(node)]

    def distortion_map(self) -> Dict[Node, la.SymMatrix]:
        return {node: self.d(node) for node in nodes(self.L)}

    def replace_distortions(self, new: Dict[Node, object]) -> "ProblemInstance":
        merged = self.distortion_map()
        merged.update({node: la.sym(mat) for node, mat in new.items()})
        return ProblemInstance.from_map(self.sigma_x, merged, self.L)

    def congruence(self, t) -> "ProblemInstance":
        """Instance with Σ_X <- T Σ_X T^T and every D <- T D T^T."""
        t = np.asarray(t, dtype=np.float64)
        return ProblemInstance(
            m=self.m,
            L=self.L,
            sigma_x=t @ self.sigma_x @ t.T,
            distortions=tuple(t @ d @ t.T for d in self.distortions),
        )

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "L": self.L,
            "sigma_x": self.sigma_x.tolist(),
            "distortions": {f"{k},{i}": self.d((k, i)).tolist() for k, i in nodes(self.L)},
        }


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    node: Optional[Node] = None

    def to_dict(self) -> dict:
        payload = {"kind": self.kind, "message": self.message}
        if self.node is not None:
            payload["node"] = list(self.node)
        return payload


def validate(inst: ProblemInstance, tol: Optional[la.Tolerance] = None) -> List[Violation]:
    """Every violated instance invariant; an empty list means the instance is ok."""
    violations = []
    sx = inst.sigma_x
    if sx.shape != (inst.m, inst.m):
        violations.append(
            Violation("dimension", f"sigma_x has shape {sx.shape}, expected m={inst.m}")
        )
        return violations
    if la.min_eig(sx) <= (tol or la.DEFAULT_TOLERANCE).psd_tol(sx):
        violations.append(Violation("sigma_x_not_pd", "sigma_x must be positive definite"))
    for node in nodes(inst.L):
        d = inst.d(node)
        if d.shape != sx.shape:
            violations.append(
                Violation("dimension", f"distortion has shape {d.shape}, expected {sx.shape}", node)
            )
            continue
        lo = la.min_eig(d)
        if lo <= (tol or la.DEFAULT_TOLERANCE).psd_tol(d):
            violations.append(
                Violation("distortion_not_pd", f"D must be positive definite (min eig {lo:.3e})", node)
            )
        if not la.is_loewner_leq(d, sx, tol):
            violations.append(Violation("distortion_exceeds_source", "D must satisfy D ⪯ Σ_X", node))
    return violations


def require_valid(inst: ProblemInstance, tol: Optional[la.Tolerance] = None) -> None:
    violations = validate(inst, tol)
    if violations:
        raise InvalidInstance(
            f"instance has {len(violations)} violation(s): {violations[0].message}",
            violations=violations,
        )


def is_strictly_interior(inst: ProblemInstance, tol: Optional[la.Tolerance] = None) -> bool:
    """True iff every D ≺ Σ_X strictly."""
    tol = tol or la.DEFAULT_TOLERANCE
    for d in inst.distortions:
        gap = inst.sigma_x - d
        if la.min_eig(gap) <= tol.psd_tol(gap):
            return False
    return True


def boundary_nodes(inst: ProblemInstance, tol: Optional[la.Tolerance] = None) -> List[Node]:
    tol = tol or la.DEFAULT_TOLERANCE
    found = []
    for node in nodes(inst.L):
        gap = inst.sigma_x - inst.d(node)
        if la.min_eig(gap) <= tol.psd_tol(gap):
            found.append(node)
    return found


def epsilon_shrink(inst: ProblemInstance, eps: float) -> ProblemInstance:
    """Replaces every D by D - εI."""
    if eps < 0:
        raise ValueError(f"eps must be nonnegative, got {eps}")
    if eps == 0:
        return inst
    shift = eps * la.identity(inst.m)
    shrunk = []
    for node in nodes(inst.L):
        d = inst.d(node) - shift
        if la.min_eig(d) <= 0.0:
            raise EpsTooLarge(f"D - {eps:g} I is not positive definite", node=node)
        shrunk.append(d)
    return ProblemInstance(m=inst.m, L=inst.L, sigma_x=inst.sigma_x, distortions=tuple(shrunk))


# --- General trees and padding ---


@dataclass(frozen=True)
class GeneralTreeSpec:
    """Laminar family of constrained description subsets.

    Args:
        M: Number of descriptions, labelled 1..M.
        sigma_x: Source covariance.
        constraints: (subset, D) pairs.
    """

    M: int
    sigma_x: la.SymMatrix
    constraints: Tuple[Tuple[FrozenSet[int], la.SymMatrix], ...]

    def __post_init__(self):
        object.__setattr__(self, "sigma_x", la.sym(self.sigma_x))
        object.__setattr__(
            self,
            "constraints",
            tuple((frozenset(int(j) for j in s), la.sym(d)) for s, d in self.constraints),
        )


@dataclass(frozen=True)
class PaddedInstance:
    """Result of padding: the perfect-tree instance plus bookkeeping.

    ``relabeling`` maps every description of the general tree (originals
    1..M, then dummies M+1..M') to its leaf index in the padded tree.
    ``origin`` maps every padded node to the original subset it carries, or
    None for inserted nodes (which carry D = Σ_X).
    """

    instance: ProblemInstance
    relabeling: Dict[int, int]
    origin: Dict[Node, Optional[FrozenSet[int]]]
    original_M: int

    @property
    def dummy_nodes(self) -> List[Node]:
        return [node for node, src in self.origin.items() if src is None]

    def to_dict(self) -> dict:
        return {
            "instance": self.instance.to_dict(),
            "relabeling": {str(k): v for k, v in sorted(self.relabeling.items())},
            "dummy_descriptions": sorted(j for j in self.relabeling if j > self.original_M),
            "dummy_nodes": [f"{k},{i}" for k, i in self.dummy_nodes],
            "origin": {
                f"{k},{i}": (sorted(src) if src is not None else None)
                for (k, i), src in self.origin.items()
            },
        }


@dataclass
class _BinaryNode:
    members: FrozenSet[int]
    source: Optional[FrozenSet[int]]
    d: Optional[la.SymMatrix]
    kids: List["_BinaryNode"] = field(default_factory=list)

    def height(self) -> int:
        return 0 if not self.kids else 1 + max(kid.height() for kid in self.kids)


def _check_laminar(spec: GeneralTreeSpec) -> Dict[FrozenSet[int], la.SymMatrix]:
    if spec.M < 1:
        raise InvalidInstance(f"M must be >= 1, got {spec.M}")
    universe = frozenset(range(1, spec.M + 1))
    family: Dict[FrozenSet[int], la.SymMatrix] = {}
    for s, d in spec.constraints:
        if not s or not s <= universe:
            raise InvalidInstance(f"subset {sorted(s)} is empty or outside 1..{spec.M}")
        if s in family:
            raise InvalidInstance(f"subset {sorted(s)} is constrained twice")
        if d.shape != spec.sigma_x.shape:
            raise DimensionMismatch(f"constraint on {sorted(s)} has shape {d.shape}")
        family[s] = d
    sets = list(family)
    for a_idx, a in enumerate(sets):
        for b in sets[a_idx + 1 :]:
            if a & b and not (a <= b or b <= a):
                raise NotATree(f"subsets {sorted(a)} and {sorted(b)} overlap without nesting")
    return family


def _hasse_tree(family_sets, root) -> nx.DiGraph:
    """Containment DAG reduced to its Hasse diagram (a tree for laminar families)."""
    dag = nx.DiGraph()
    dag.add_nodes_from(family_sets)
    for a in family_sets:
        for b in family_sets:
            if a < b:
                dag.add_edge(b, a)
    tree = nx.transitive_reduction(dag)
    if not nx.is_arborescence(tree) or tree.in_degree(root) != 0:
        raise NotATree("constraint family does not form a rooted tree")
    return tree


def _binarize(tree, node, family, inserted) -> _BinaryNode:
    kids = sorted(tree.successors(node), key=min)
    source = None if node in inserted else node
    current = _BinaryNode(node, source, family.get(node) if source else None)
    if not kids:
        return current
    built = [_binarize(tree, kid, family, inserted) for kid in kids]

    def group(items):
        if len(items) == 1:
            return items[0]
        half = (len(items) + 1) // 2
        left, right = group(items[:half]), group(items[half:])
        return _BinaryNode(left.members | right.members, None, None, [left, right])

    half = (len(built) + 1) // 2
    current.kids = [group(built[:half]), group(built[half:])]
    return current


def pad_to_perfect_binary(spec: GeneralTreeSpec) -> PaddedInstance:
    """Pads a laminar constraint family to a perfect binary tree instance.

    Missing root and singleton nodes are inserted, nodes with more than two
    children are split by balanced dummy nodes, and shallow leaves are pushed
    down with dummy descriptions appended after the originals. Every inserted
    node carries D = Σ_X.

    Raises:
        NotATree: if two subsets overlap without nesting.
    """
    family = _check_laminar(spec)
    universe = frozenset(range(1, spec.M + 1))
    inserted = set()
    for s in [universe] + [frozenset([j]) for j in range(1, spec.M + 1)]:
        if s not in family:
            inserted.add(s)
    all_sets = set(family) | inserted
    tree = _hasse_tree(all_sets, universe)
    root = _binarize(tree, universe, family, inserted)
    L = max(root.height() + 1, 2)
    if inserted:
        logger.debug("padding inserted %d node(s) carrying D = Σ_X", len(inserted))

    slots: Dict[Node, Tuple[Optional[FrozenSet[int]], la.SymMatrix]] = {}
    leaf_owner: Dict[int, Optional[int]] = {}
    next_dummy = [spec.M]

    def place(b: Optional[_BinaryNode], node: Node):
        k, i = node
        if b is None:
            slots[node] = (None, spec.sigma_x)
            if k == L:
                next_dummy[0] += 1
                leaf_owner[i] = next_dummy[0]
            else:
                for kid in children(node):
                    place(None, kid)
            return
        if k == L:
            slots[node] = (b.source, b.d if b.source is not None else spec.sigma_x)
            leaf_owner[i] = next(iter(b.members))
            return
        if not b.kids:
            # shallow leaf: push its constraint down the left spine
            slots[node] = (None, spec.sigma_x)
            left, right = children(node)
            place(b, left)
            place(None, right)
            return
        slots[node] = (b.source, b.d if b.source is not None else spec.sigma_x)
        left, right = children(node)
        place(b.kids[0], left)
        place(b.kids[1], right)

    place(root, (1, 1))
    relabeling = {owner: leaf for leaf, owner in leaf_owner.items()}
    origin = {node: slots[node][0] for node in nodes(L)}
    instance = ProblemInstance.from_map(
        spec.sigma_x, {node: slots[node][1] for node in nodes(L)}, L
    )
    return PaddedInstance(instance=instance, relabeling=relabeling, origin=origin, original_M=spec.M)


def strip_padding(padded: PaddedInstance) -> List[Tuple[FrozenSet[int], la.SymMatrix]]:
    """Original (subset, D) constraints recovered from a padded instance."""
    recovered = [
        (src, padded.instance.d(node)) for node, src in padded.origin.items() if src is not None
    ]
    return sorted(recovered, key=lambda item: (len(item[0]), sorted(item[0])))


def _per_description(M, d_individual) -> List[la.SymMatrix]:
    if isinstance(d_individual, (list, tuple)):
        if len(d_individual) != M:
            raise InvalidInstance(f"expected {M} individual distortions, got {len(d_individual)}")
        return [la.sym(d) for d in d_individual]
    return [la.sym(d_individual)] * M


def individual_central_spec(M: int, sigma_x, d_individual, d_central) -> GeneralTreeSpec:
    """Constraints on every single description and on all M jointly."""
    singles = _per_description(M, d_individual)
    constraints = [(frozenset([j + 1]), singles[j]) for j in range(M)]
    if M > 1:
        constraints.append((frozenset(range(1, M + 1)), la.sym(d_central)))
    return GeneralTreeSpec(M=M, sigma_x=sigma_x, constraints=tuple(constraints))


def individual_hierarchical_spec(
    M: int, sigma_x, d_individual, d_hierarchical: Sequence
) -> GeneralTreeSpec:
    """Constraints on every single description and on {1..n} for n = 2..M."""
    if len(d_hierarchical) != M - 1:
        raise InvalidInstance(f"expected {M - 1} hierarchical distortions, got {len(d_hierarchical)}")
    singles = _per_description(M, d_individual)
    constraints = [(frozenset([j + 1]), singles[j]) for j in range(M)]
    for n, d in enumerate(d_hierarchical, start=2):
        constraints.append((frozenset(range(1, n + 1)), la.sym(d)))
    return GeneralTreeSpec(M=M, sigma_x=sigma_x, constraints=tuple(constraints))
