"""Plane trees, labeled trees, contour codings and spine decompositions.

Vertices are identified by their depth-first (preorder) index; a tree is
stored as a dense parent array plus a dense label array in that order.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from . import _numba


class TreeError(ValueError):
    pass


class ContourError(TreeError):
    """Malformed contour data; ``index`` is the first offending position."""

    def __init__(self, index: int, message: str):
        super().__init__(f"index {index}: {message}")
        self.index = index


class AssemblyError(TreeError):
    def __init__(self, index: int, message: str):
        super().__init__(f"spine index {index}: {message}")
        self.index = index


@dataclass(frozen=True, eq=False)
class PlaneTree:
    """Rooted ordered tree; ``parent[v]`` is the preorder index of v's parent."""

    parent: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "parent", np.ascontiguousarray(self.parent, dtype=np.int64))

    @property
    def size(self) -> int:
        """Number of edges."""
        return int(self.parent.shape[0]) - 1

    @cached_property
    def depth(self) -> np.ndarray:
        return _numba.depths(self.parent)

    @property
    def height(self) -> int:
        return int(self.depth.max())

    @cached_property
    def child_counts(self) -> np.ndarray:
        return np.bincount(self.parent[1:], minlength=self.parent.shape[0])

    def children(self, v: int) -> np.ndarray:
        return np.flatnonzero(self.parent == v)

    def __eq__(self, other):
        return isinstance(other, PlaneTree) and np.array_equal(self.parent, other.parent)

    def __hash__(self):
        return hash(self.parent.tobytes())


@dataclass(frozen=True, eq=False)
class LabeledTree:
    """Plane tree with one integer label per vertex (preorder)."""

    tree: PlaneTree
    labels: np.ndarray

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if labels.shape != self.tree.parent.shape:
            raise TreeError("one label per vertex required")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_parents(cls, parent, labels) -> "LabeledTree":
        return cls(PlaneTree(parent), labels)

    @classmethod
    def single(cls, label: int = 1) -> "LabeledTree":
        return cls.from_parents([-1], [label])

    @classmethod
    def from_nested(cls, nested) -> "LabeledTree":
        """Build from ``(label, child, child, ...)``.

        >>> LabeledTree.from_nested((1, (2,), (1, (0,)))).labels.tolist()
        [1, 2, 1, 0]
        """
        parent, labels = [], []
        stack = [(-1, nested)]
        while stack:
            p, node = stack.pop()
            v = len(parent)
            parent.append(p)
            labels.append(int(node[0]))
            for child in reversed(node[1:]):
                stack.append((v, child))
        return cls.from_parents(parent, labels)

    def to_nested(self):
        kids: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for v in range(1, self.n_vertices):
            kids[int(self.tree.parent[v])].append(v)

        def build(v):
            return (int(self.labels[v]), *(build(c) for c in kids[v]))

        return build(0)

    @property
    def parent(self) -> np.ndarray:
        return self.tree.parent

    @property
    def size(self) -> int:
        return self.tree.size

    @property
    def n_vertices(self) -> int:
        return self.size + 1

    @property
    def height(self) -> int:
        return self.tree.height

    @property
    def root_label(self) -> int:
        return int(self.labels[0])

    def __eq__(self, other):
        return (
            isinstance(other, LabeledTree)
            and self.tree == other.tree
            and np.array_equal(self.labels, other.labels)
        )

    def __hash__(self):
        return hash((self.tree, self.labels.tobytes()))

    def __repr__(self):
        if self.n_vertices <= 12:
            return f"LabeledTree({self.to_nested()!r})"
        return f"LabeledTree(size={self.size}, root={self.root_label})"

    def mirror(self) -> "LabeledTree":
        """The same tree with every child order reversed."""
        cp = encode_contour(self)
        return decode_contour(ContourPair(cp.C[::-1], cp.V[::-1]))


@dataclass(frozen=True)
class Violation:
    vertex: int
    message: str


@dataclass(frozen=True)
class ValidationReport:
    mode: str
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def validate(theta: LabeledTree, mode: str = "labeled") -> ValidationReport:
    """Check the plane-tree, adjacency and (optionally) well-labeling rules.

    ``mode`` is ``"labeled"`` or ``"well_labeled"``.
    """
    if mode not in ("labeled", "well_labeled"):
        raise ValueError(f"unknown mode {mode!r}")
    bad: list[Violation] = []
    parent = theta.parent.tolist()
    labels = theta.labels.tolist()
    if parent[0] != -1:
        bad.append(Violation(0, "root must have no parent"))
    path = [0]
    for v in range(1, len(parent)):
        p = parent[v]
        while path and path[-1] != p:
            path.pop()
        if not path:
            bad.append(Violation(v, f"parent {p} is not on the current root path (not preorder)"))
            path = [0]
            continue
        path.append(v)
        if abs(labels[v] - labels[p]) > 1:
            bad.append(Violation(v, f"|label({v}) - label({p})| = {abs(labels[v] - labels[p])} > 1"))
    if mode == "well_labeled":
        if labels[0] != 1:
            bad.append(Violation(0, f"root label must be 1, got {labels[0]}"))
        for v, lab in enumerate(labels):
            if lab < 1:
                bad.append(Violation(v, f"label {lab} < 1"))
    return ValidationReport(mode, tuple(bad))


@dataclass(frozen=True, eq=False)
class ContourPair:
    """Heights ``C`` and labels ``V`` at integer contour times."""

    C: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "C", np.asarray(self.C, dtype=np.int64))
        object.__setattr__(self, "V", np.asarray(self.V, dtype=np.int64))

    @property
    def duration(self) -> int:
        return len(self.C) - 1

    def __eq__(self, other):
        return (
            isinstance(other, ContourPair)
            and np.array_equal(self.C, other.C)
            and np.array_equal(self.V, other.V)
        )

    def check(self, finite: bool = True) -> None:
        """Raise :class:`ContourError` at the first broken invariant."""
        C, V = self.C, self.V
        if len(C) == 0 or len(C) != len(V):
            raise ContourError(0, "C and V must be non-empty and of equal length")
        if C[0] != 0:
            raise ContourError(0, "C(0) must be 0")
        dC = np.diff(C)
        bad = np.flatnonzero(np.abs(dC) != 1)
        if bad.size:
            raise ContourError(int(bad[0]) + 1, "height steps must be +-1")
        neg = np.flatnonzero(C < 0)
        if neg.size:
            raise ContourError(int(neg[0]), "negative height")
        jump = np.flatnonzero(np.abs(np.diff(V)) > 1)
        if jump.size:
            raise ContourError(int(jump[0]) + 1, "label steps must be in {-1, 0, 1}")
        if finite and C[-1] != 0:
            raise ContourError(len(C) - 1, "C must return to 0")


def encode_contour(theta: LabeledTree) -> ContourPair:
    """Contour pair of a finite labeled tree (length ``2|theta| + 1``)."""
    if theta.n_vertices == 1:
        return ContourPair(np.zeros(1, np.int64), theta.labels.copy())
    walk = _numba.contour_walk(theta.parent)
    return ContourPair(theta.tree.depth[walk], theta.labels[walk])


def contour_vertices(theta: LabeledTree) -> np.ndarray:
    """Preorder index of the vertex visited at each contour time."""
    if theta.n_vertices == 1:
        return np.zeros(1, np.int64)
    return _numba.contour_walk(theta.parent)


def decode_contour(cp: ContourPair) -> LabeledTree:
    cp.check(finite=True)
    C = cp.C.tolist()
    V = cp.V.tolist()
    parent = [-1]
    labels = [V[0]]
    path = [0]
    for t in range(1, len(C)):
        if C[t] > C[t - 1]:
            parent.append(path[-1])
            labels.append(V[t])
            path.append(len(parent) - 1)
        else:
            path.pop()
            if labels[path[-1]] != V[t]:
                raise ContourError(t, f"label {V[t]} does not match revisited vertex label {labels[path[-1]]}")
    return LabeledTree.from_parents(parent, labels)


def truncate_at_height(theta: LabeledTree, h: int) -> LabeledTree:
    """All vertices of generation ``<= h`` with their labels."""
    if h < 0:
        raise ValueError("h must be >= 0")
    keep = theta.tree.depth <= h
    if keep.all():
        return theta
    new_index = np.cumsum(keep) - 1
    parent = theta.parent[keep]
    parent = np.where(parent >= 0, new_index[np.maximum(parent, 0)], -1)
    return LabeledTree.from_parents(parent, theta.labels[keep])


def tree_distance(a: LabeledTree, b: LabeledTree) -> Fraction:
    """``(1 + sup{h : tr_h(a) = tr_h(b)})^-1`` with ``sup {} = 0``; 0 when equal."""
    if a == b:
        return Fraction(0)
    if a.root_label != b.root_label:
        return Fraction(1)
    top = max(a.height, b.height)
    h = 0
    while h + 1 <= top and truncate_at_height(a, h + 1) == truncate_at_height(b, h + 1):
        h += 1
    return Fraction(1, 1 + h)


def label_counts(theta: LabeledTree) -> dict[int, int]:
    values, counts = np.unique(theta.labels, return_counts=True)
    return {int(k): int(c) for k, c in zip(values, counts)}


def min_label(theta: LabeledTree) -> int:
    return int(theta.labels.min())


# ---------------------------------------------------------------- serialization

def dumps_tree(theta: LabeledTree) -> str:
    cp = encode_contour(theta)
    steps = " ".join("U" if d > 0 else "D" for d in np.diff(cp.C))
    deltas = " ".join(f"{int(d):+d}" if d else "0" for d in np.diff(cp.V))
    return f"WLT v1 size={theta.size} root={theta.root_label}\n{steps}\n{deltas}\n"


def loads_tree(text: str) -> LabeledTree:
    lines = text.split("\n")
    header = lines[0].split()
    if len(header) != 4 or header[:2] != ["WLT", "v1"]:
        raise TreeError(f"bad header {lines[0]!r}")
    try:
        size = int(header[2].removeprefix("size="))
        root = int(header[3].removeprefix("root="))
    except ValueError as exc:
        raise TreeError(f"bad header {lines[0]!r}") from exc
    if not (header[2].startswith("size=") and header[3].startswith("root=")):
        raise TreeError(f"bad header {lines[0]!r}")
    steps = lines[1].split() if len(lines) > 1 else []
    deltas = lines[2].split() if len(lines) > 2 else []
    if len(steps) != 2 * size or len(deltas) != 2 * size:
        raise TreeError(f"expected {2 * size} tokens per line")
    step_map = {"U": 1, "D": -1}
    delta_map = {"-1": -1, "0": 0, "+1": 1}
    try:
        dC = [step_map[s] for s in steps]
        dV = [delta_map[s] for s in deltas]
    except KeyError as exc:
        raise TreeError(f"bad token {exc.args[0]!r}") from None
    C = np.concatenate([[0], np.cumsum(dC, dtype=np.int64)])
    V = np.concatenate([[root], root + np.cumsum(dV, dtype=np.int64)])
    return decode_contour(ContourPair(C, V))


# ---------------------------------------------------------------- spine decompositions

@dataclass(frozen=True)
class TruncationCertificate:
    """How a spine decomposition was cut, and the leftover dip risk."""

    target_radius: int
    x_stop: int
    window: int
    height: int
    epsilon: float
    # exact rho-hat_{X_i}(V_* <= r) over the final window, per subtree
    dip_probabilities: tuple[Fraction, ...] = ()

    @property
    def residual_bound(self) -> float:
        return float(2 * sum(self.dip_probabilities, Fraction(0)))

    @property
    def within_budget(self) -> bool:
        return self.residual_bound <= self.epsilon


@dataclass(frozen=True, eq=False)
class SpineDecomposition:
    """Spine labels X_0..X_H with the left/right subtrees hanging off each spine vertex."""

    spine_labels: np.ndarray
    left: tuple[LabeledTree, ...]
    right: tuple[LabeledTree, ...]
    truncation: TruncationCertificate | None = field(default=None)

    @property
    def height(self) -> int:
        return len(self.spine_labels) - 1

    def __eq__(self, other):
        return (
            isinstance(other, SpineDecomposition)
            and np.array_equal(self.spine_labels, other.spine_labels)
            and self.left == other.left
            and self.right == other.right
            and self.truncation == other.truncation
        )

    def labels(self) -> Iterable[np.ndarray]:
        yield self.spine_labels
        for t in self.left + self.right:
            yield t.labels[1:]


def spine_assemble(
    X: Sequence[int],
    left: Sequence[LabeledTree],
    right: Sequence[LabeledTree],
    truncation: TruncationCertificate | None = None,
) -> SpineDecomposition:
    X = np.asarray(X, dtype=np.int64)
    if len(X) == 0:
        raise AssemblyError(0, "empty spine")
    if len(left) != len(X) or len(right) != len(X):
        raise AssemblyError(min(len(left), len(right), len(X)), "need one left and one right subtree per spine vertex")
    if X[0] != 1:
        raise AssemblyError(0, f"X_0 must be 1, got {X[0]}")
    for i in range(len(X)):
        if X[i] < 1:
            raise AssemblyError(i, f"spine label {X[i]} < 1")
        if i and abs(X[i] - X[i - 1]) > 1:
            raise AssemblyError(i, "spine labels must move by at most 1")
        for side, t in (("left", left[i]), ("right", right[i])):
            if t.root_label != X[i]:
                raise AssemblyError(i, f"{side} subtree root label {t.root_label} != X_i = {X[i]}")
    return SpineDecomposition(X, tuple(left), tuple(right), truncation)


def side_contours(sd: SpineDecomposition, side: str) -> ContourPair:
    """Finite prefix of the left (or right) side contour pair.

    The left side is explored left to right, the right side right to left;
    each subtree contour is followed by a unit climb along the spine.
    """
    C, V, _ = _side_walk(sd, side)
    return ContourPair(C, V)


def _side_walk(sd: SpineDecomposition, side: str):
    """Side contour together with a vertex id per time.

    Spine vertex v_i has id ``i``; non-root vertices of the side subtrees get
    ids after the spine, left side first, in spine order.
    """
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    trees = sd.left if side == "left" else sd.right
    offset = len(sd.spine_labels)
    if side == "right":
        offset += sum(t.size for t in sd.left)
    Cs, Vs, ids = [], [], []
    for i, t in enumerate(trees):
        walk = contour_vertices(t)
        if side == "right":
            walk = walk[::-1]
        Cs.append(t.tree.depth[walk] + i)
        Vs.append(t.labels[walk])
        ids.append(np.where(walk == 0, i, walk - 1 + offset))
        offset += t.size
    return np.concatenate(Cs), np.concatenate(Vs), np.concatenate(ids)


def spine_project(sd: SpineDecomposition, k: int) -> LabeledTree:
    """Finite tree made of v_0..v_k and the subtrees L_i, R_i for i < k.

    Around v_i (i < k) the children are: those of L_i, then v_{i+1}, then
    those of R_i. v_k is a leaf.
    """
    if not 0 <= k <= sd.height:
        raise ValueError(f"k must be in [0, {sd.height}]")
    nested = (int(sd.spine_labels[k]),)
    for i in range(k - 1, -1, -1):
        lnest = sd.left[i].to_nested()
        rnest = sd.right[i].to_nested()
        nested = (int(sd.spine_labels[i]), *lnest[1:], nested, *rnest[1:])
    return LabeledTree.from_nested(nested)


def spine_positions(sd: SpineDecomposition) -> list[int]:
    """0-based index of v_{i+1} among the children of v_i in the projection."""
    return [int(t.tree.child_counts[0]) for t in sd.left[:-1]]


def spine_decompose(theta: LabeledTree, positions: Sequence[int]) -> SpineDecomposition:
    """Inverse of :func:`spine_project` given where the spine child sits at each level."""
    nested = theta.to_nested()
    X, left, right = [], [], []
    for i, pos in enumerate(positions):
        kids = nested[1:]
        if not 0 <= pos < len(kids):
            raise AssemblyError(i, f"spine child position {pos} out of range")
        X.append(nested[0])
        left.append(LabeledTree.from_nested((nested[0], *kids[:pos])))
        right.append(LabeledTree.from_nested((nested[0], *kids[pos + 1:])))
        nested = kids[pos]
    if len(nested) > 1:
        raise AssemblyError(len(positions), "last spine vertex must be a leaf")
    X.append(nested[0])
    left.append(LabeledTree.single(nested[0]))
    right.append(LabeledTree.single(nested[0]))
    return spine_assemble(X, left, right)


def counts_array(labels: Iterable[np.ndarray], kmax: int) -> np.ndarray:
    """Histogram of labels 0..kmax accumulated over several arrays."""
    out = np.zeros(kmax + 1, dtype=np.int64)
    for lab in labels:
        lab = lab[(lab >= 0) & (lab <= kmax)]
        out += np.bincount(lab, minlength=kmax + 1)
    return out


def label_counter(trees: Iterable[LabeledTree]) -> Counter:
    c: Counter = Counter()
    for t in trees:
        c.update(label_counts(t))
    return c
