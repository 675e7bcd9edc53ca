"""Quadrangulations built from well-labeled trees by the corner-successor rule.

Maps are stored as rotation systems on half-edges: ``sigma[h]`` is the next
half-edge around the origin of ``h`` and ``twin[h]`` the opposite half-edge.
Walking ``h -> sigma[twin[h]]`` traces a face.

In every construction the extra vertex is vertex 0 and tree vertex ``v``
becomes map vertex ``v + 1``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import shortest_path

from .trees import (
    LabeledTree,
    SpineDecomposition,
    TreeError,
    _side_walk,
    contour_vertices,
    validate,
)

GAP = -1


class MapError(ValueError):
    pass


class CertificateError(MapError):
    pass


# ---------------------------------------------------------------- maps

@dataclass(frozen=True, eq=False)
class PlanarMap:
    """Rooted map given by a rotation system.

    ``hole_edges`` lists half-edges lying on faces that are holes left by
    cutting the map out of a larger one.
    """

    sigma: np.ndarray
    twin: np.ndarray
    origin: np.ndarray
    root: int
    hole_edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        for name in ("sigma", "twin", "origin"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        m = len(self.sigma)
        if len(self.twin) != m or len(self.origin) != m:
            raise MapError("sigma, twin and origin must have the same length")
        if m and not 0 <= self.root < m:
            raise MapError(f"root half-edge {self.root} out of range")

    @property
    def n_half_edges(self) -> int:
        return len(self.sigma)

    @property
    def n_edges(self) -> int:
        return len(self.sigma) // 2

    @cached_property
    def vertices(self) -> np.ndarray:
        return np.unique(self.origin)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @cached_property
    def phi(self) -> np.ndarray:
        """Next half-edge along the face."""
        return self.sigma[self.twin]

    @cached_property
    def face_of(self) -> np.ndarray:
        """Face id per half-edge; faces are numbered by first appearance."""
        return _orbits(self.phi)

    @cached_property
    def faces(self) -> list[np.ndarray]:
        order = np.argsort(self.face_of, kind="stable")
        bounds = np.flatnonzero(np.diff(self.face_of[order])) + 1
        return [self._face_walk(int(g[0])) for g in np.split(order, bounds)] if len(order) else []

    def _face_walk(self, h: int) -> np.ndarray:
        out = [h]
        nxt = int(self.phi[h])
        while nxt != h:
            out.append(nxt)
            nxt = int(self.phi[nxt])
        return np.asarray(out, dtype=np.int64)

    @property
    def n_faces(self) -> int:
        return int(self.face_of.max()) + 1 if self.n_half_edges else 1

    @property
    def face_degrees(self) -> np.ndarray:
        return np.bincount(self.face_of)

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    def check(self) -> None:
        """Raise :class:`MapError` if the half-edge tables are inconsistent."""
        m = self.n_half_edges
        idx = np.arange(m)
        if np.any(self.twin == idx) or not np.array_equal(self.twin[self.twin], idx):
            raise MapError("twin must be a fixed-point-free involution")
        if not np.array_equal(np.sort(self.sigma), idx):
            raise MapError("sigma must be a permutation")
        if not np.array_equal(self.origin[self.sigma], self.origin):
            raise MapError("sigma must preserve the origin vertex")
        if not np.array_equal(_orbits(self.sigma), _orbits_by_key(self.origin)):
            raise MapError("each vertex must carry a single sigma cycle")
        if len(graph_distances(self)) != self.n_vertices or np.any(graph_distances(self) < 0):
            raise MapError("map is not connected")

    def edge_list(self) -> np.ndarray:
        h = np.arange(0, self.n_half_edges)
        h = h[h < self.twin]
        return np.stack([self.origin[h], self.origin[self.twin[h]]], axis=1)

    def __eq__(self, other):
        return isinstance(other, PlanarMap) and canonical_encoding(self) == canonical_encoding(other)

    def __hash__(self):
        return hash(canonical_encoding(self))


@dataclass(frozen=True, eq=False)
class Quadrangulation(PlanarMap):
    """Finite rooted quadrangulation; vertex 0 is the extra vertex."""

    labels: np.ndarray | None = None

    def check(self) -> None:
        super().check()
        if np.any(self.face_degrees != 4):
            raise MapError(f"face degrees {sorted(set(self.face_degrees.tolist()))}, expected all 4")
        if self.euler_characteristic != 2:
            raise MapError(f"Euler characteristic {self.euler_characteristic} != 2")


@dataclass(frozen=True, eq=False)
class PartialMap(PlanarMap):
    """The part of an infinite quadrangulation spanned by low labels.

    Holds every edge incident to a vertex with label <= ``r_build``.
    ``vertex_labels[v]`` is the label of map vertex ``v`` and
    ``pruned_in[v]`` counts edges to vertices beyond the truncation
    (label ``r_build + 2``) that were left out.
    """

    r_build: int = 0
    vertex_labels: np.ndarray | None = None
    pruned_in: np.ndarray | None = None
    certificate: object = None


def _orbits(perm: np.ndarray) -> np.ndarray:
    """Cycle id per element, cycles numbered by their smallest element."""
    n = len(perm)
    out = np.full(n, -1, dtype=np.int64)
    c = 0
    for start in range(n):
        if out[start] >= 0:
            continue
        h = start
        while out[h] < 0:
            out[h] = c
            h = perm[h]
        c += 1
    return out


def _orbits_by_key(key: np.ndarray) -> np.ndarray:
    _, first = np.unique(key, return_index=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first)] = np.arange(len(first))
    return rank[np.unique(key, return_inverse=True)[1]]


# ---------------------------------------------------------------- corners

@dataclass(frozen=True)
class Corner:
    vertex: int
    position: int
    label: int
    side: str | None = None


def corner_sequence(obj, side: str | None = None) -> list[Corner]:
    """Corners in contour order.

    For a finite tree this lists contour times 0..2|theta|; the last entry is
    the root's closing corner, which is the first one again once the contour
    is repeated cyclically. For a spine decomposition, ``side`` picks the left
    or right side contour and vertex ids follow the side-walk numbering.
    """
    if isinstance(obj, LabeledTree):
        walk = contour_vertices(obj)
        return [Corner(int(v), t, int(obj.labels[v])) for t, v in enumerate(walk)]
    if isinstance(obj, SpineDecomposition):
        _, V, ids = _side_walk(obj, side)
        return [Corner(int(v), t, int(l), side) for t, (v, l) in enumerate(zip(ids, V))]
    raise TypeError(f"expected LabeledTree or SpineDecomposition, got {type(obj).__name__}")


def _successors(labels: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Cyclic index of the next slot with label one less, for ``active`` slots.

    Slots with label 1 get ``-1`` (their edge goes to the extra vertex).
    """
    n = len(labels)
    out = np.full(n, -2, dtype=np.int64)
    pos = np.flatnonzero(active)
    out[pos[labels[pos] == 1]] = -1
    for lab in np.unique(labels[pos]):
        if lab < 2:
            continue
        src = pos[labels[pos] == lab]
        tgt = np.flatnonzero(labels == lab - 1)
        if len(tgt) == 0:
            raise MapError(f"no corner with label {lab - 1}")
        k = np.searchsorted(tgt, src, side="right")
        out[src] = tgt[k % len(tgt)]
    return out


def _assemble(slot_vertex, slot_label, keep, succ):
    """Half-edge tables for the arcs leaving the ``keep`` slots.

    Arc ``a`` joins slot ``src[a]`` to ``succ[src[a]]`` (or to vertex 0):
    half-edge ``2a`` sits at the source, ``2a + 1`` at the target.
    """
    n_slots = len(slot_vertex)
    src = np.flatnonzero(keep)
    tgt = succ[src]
    m = 2 * len(src)
    origin = np.empty(m, dtype=np.int64)
    origin[0::2] = slot_vertex[src] + 1
    origin[1::2] = np.where(tgt >= 0, slot_vertex[np.maximum(tgt, 0)] + 1, 0)

    # order within a vertex: by slot, and inside a slot incoming arcs by
    # increasing span, then the outgoing arc
    slot = np.empty(m, dtype=np.int64)
    slot[0::2] = src
    slot[1::2] = np.where(tgt >= 0, tgt, src)
    minor = np.empty(m, dtype=np.int64)
    minor[0::2] = n_slots
    minor[1::2] = np.where(tgt >= 0, (tgt - src) % n_slots, 0)
    # around the extra vertex the arcs come in reverse slot order
    at_base = origin == 0
    slot = np.where(at_base, -slot, slot)

    order = np.lexsort((minor, slot, origin))
    sigma = np.empty(m, dtype=np.int64)
    o = origin[order]
    nxt = np.roll(order, -1)
    starts = np.flatnonzero(np.r_[True, o[1:] != o[:-1]])
    ends = np.r_[starts[1:], m] - 1
    nxt[ends] = order[starts]
    sigma[order] = nxt
    twin = np.arange(m) ^ 1
    return sigma, twin, origin, src


def build_finite(theta: LabeledTree) -> Quadrangulation:
    """The rooted quadrangulation with ``|theta|`` faces encoded by ``theta``."""
    report = validate(theta, "well_labeled")
    if not report.ok:
        raise TreeError(f"not a well-labeled tree: {report.violations[0]}")
    if theta.size < 1:
        raise TreeError("need at least one edge")
    walk = contour_vertices(theta)[:-1]
    lab = theta.labels[walk]
    keep = np.ones(len(walk), dtype=bool)
    succ = _successors(lab, keep)
    sigma, twin, origin, _ = _assemble(walk, lab, keep, succ)
    labels = np.r_[0, theta.labels]
    # arc 0 leaves corner 0, which has label 1, so half-edge 1 starts at the base
    return Quadrangulation(sigma, twin, origin, 1, labels=labels)


def _omega(sd: SpineDecomposition):
    """Cyclic corner order of the truncated infinite tree.

    Left side corners in decreasing time, right side corners in increasing
    time (time 0 is the root corner, already listed on the left), then one
    gap slot standing for the unexplored part of the tree.
    """
    _, VL, idL = _side_walk(sd, "left")
    _, VR, idR = _side_walk(sd, "right")
    vert = np.r_[idL[::-1], idR[1:], GAP]
    lab = np.r_[VL[::-1], VR[1:], np.iinfo(np.int64).max]
    side = np.r_[np.zeros(len(VL), dtype=np.int8), np.ones(len(VR) - 1, dtype=np.int8), 2]
    return vert, lab, side, len(VL) - 1


def certified_radius(sd: SpineDecomposition) -> int:
    cert = sd.truncation
    if cert is None:
        return 0
    return cert.target_radius


def build_truncated(sd: SpineDecomposition, r_build: int) -> PartialMap:
    """All edges incident to vertices with label <= ``r_build``.

    Needs the decomposition to be certified for labels up to ``r_build + 1``
    so that every such edge is decided inside the sample.
    """
    if r_build < 1:
        raise ValueError("r_build must be >= 1")
    if r_build + 1 > certified_radius(sd):
        raise CertificateError(
            f"sample certified to radius {certified_radius(sd)}, building to {r_build} needs {r_build + 1}"
        )
    window = sd.truncation.window
    if sd.spine_labels[-window:].min() <= r_build + 1:
        raise CertificateError("spine window does not clear the build radius")
    vert, lab, _, root_slot = _omega(sd)
    active = lab <= r_build + 2
    succ = _successors(lab, active)
    keep = lab <= r_build + 1
    sigma, twin, origin, src = _assemble(np.where(vert >= 0, vert, 0), lab, keep, succ)

    # count the arcs from label r_build + 2 that were left out
    outer = np.flatnonzero(lab == r_build + 2)
    n_tree = len(sd.spine_labels) + sum(t.size for t in sd.left + sd.right)
    pruned = np.bincount(vert[succ[outer]] + 1, minlength=n_tree + 1) if len(outer) else np.zeros(n_tree + 1, np.int64)

    vlab = np.zeros(n_tree + 1, dtype=np.int64)
    vlab[vert[:-1] + 1] = lab[:-1]
    root = 2 * int(np.searchsorted(src, root_slot)) + 1
    return PartialMap(
        sigma, twin, origin, root,
        r_build=r_build, vertex_labels=vlab, pruned_in=pruned, certificate=sd.truncation,
    )


# ---------------------------------------------------------------- distances and balls

def graph_distances(q: PlanarMap) -> np.ndarray:
    """BFS distance from vertex 0, indexed by vertex id (-1 if absent)."""
    n = int(q.origin.max()) + 1 if q.n_half_edges else 1
    if isinstance(q, PartialMap) and q.vertex_labels is not None:
        n = max(n, len(q.vertex_labels))
    e = q.edge_list()
    g = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n)).tocsr()
    d = shortest_path(g, directed=False, unweighted=True, indices=0)
    out = np.where(np.isfinite(d), d, -1).astype(np.int64)
    present = np.zeros(n, dtype=bool)
    present[q.origin] = True
    present[0] = True
    out[~present] = -1
    return out


def ball_map(q: PlanarMap, r: int) -> PlanarMap:
    """Union of the faces having a vertex at distance < ``r`` from vertex 0.

    The result keeps the root and marks the half-edges that border the
    removed part (``hole_edges``) so that two balls compare equal only if
    their holes match too.
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    if isinstance(q, PartialMap) and q.r_build < r + 1:
        raise CertificateError(f"ball of radius {r} needs r_build >= {r + 1}, have {q.r_build}")
    dist = graph_distances(q)
    dh = dist[q.origin]
    close = np.zeros(q.n_faces, dtype=bool)
    np.logical_or.at(close, q.face_of, (dh >= 0) & (dh < r))
    inner = close[q.face_of]
    kept = inner | inner[q.twin]
    if isinstance(q, PartialMap):
        # inner faces of a partial map must be complete quadrangles
        deg = q.face_degrees
        if np.any(deg[close] != 4):
            raise CertificateError("ball reaches the truncated region")
    idx = np.flatnonzero(kept)
    new = np.full(q.n_half_edges, -1, dtype=np.int64)
    new[idx] = np.arange(len(idx))
    # next kept half-edge around the same vertex
    sigma = np.empty(len(idx), dtype=np.int64)
    for k, h in enumerate(idx):
        s = q.sigma[h]
        while not kept[s]:
            s = q.sigma[s]
        sigma[k] = new[s]
    holes = frozenset(int(new[h]) for h in idx if not inner[h])
    return PlanarMap(sigma, new[q.twin[idx]], q.origin[idx], int(new[q.root]), hole_edges=holes)


def eccentricity(q: PlanarMap) -> int:
    return int(graph_distances(q).max())


def local_distance(q1: PlanarMap, q2: PlanarMap) -> Fraction:
    """(1 + sup{r : M_r(q1) = M_r(q2)})^-1, with sup of the empty set = 0.

    For finite maps the result is exact. When a partial map is involved,
    radii are only compared up to what its build radius supports, and
    agreement up to that limit returns the corresponding upper bound.
    """
    partial = [q for q in (q1, q2) if isinstance(q, PartialMap)]
    if not partial and canonical_encoding(q1) == canonical_encoding(q2):
        return Fraction(0)
    if partial:
        limit = min(q.r_build - 1 for q in partial)
    else:
        # beyond the eccentricity the ball is the whole map
        limit = max(eccentricity(q1), eccentricity(q2)) + 1
    best = 0
    for r in range(1, limit + 1):
        if canonical_encoding(ball_map(q1, r)) != canonical_encoding(ball_map(q2, r)):
            break
        best = r
    return Fraction(1, 1 + best)


# ---------------------------------------------------------------- canonical form

def canonical_encoding(q: PlanarMap) -> bytes:
    """Rooted rotation-system fingerprint; equal iff root-preserving isomorphic.

    Half-edges are renumbered in breadth-first order from the root, exploring
    ``sigma`` then ``twin`` of each one; the bytes list the renumbered
    ``sigma``, ``twin`` and hole flags.
    """
    m = q.n_half_edges
    new = np.full(m, -1, dtype=np.int64)
    order = []
    queue = deque([q.root])
    new[q.root] = 0
    sigma, twin = q.sigma, q.twin
    while queue:
        h = queue.popleft()
        order.append(h)
        for nb in (sigma[h], twin[h]):
            if new[nb] < 0:
                new[nb] = len(order) + len(queue)
                queue.append(nb)
    if len(order) != m:
        raise MapError("map is not connected")
    order = np.asarray(order, dtype=np.int64)
    holes = np.zeros(m, dtype=np.int64)
    for h in q.hole_edges:
        holes[new[h]] = 1
    body = np.stack([new[sigma[order]], new[twin[order]], holes[: m]], axis=1)
    return np.int64(m).tobytes() + body.astype("<i8").tobytes()


def canonical_hex(q: PlanarMap) -> str:
    return canonical_encoding(q).hex()


def relabel(q: PlanarMap, perm: Sequence[int]) -> PlanarMap:
    """Same map with half-edge ``h`` renamed ``perm[h]``."""
    perm = np.asarray(perm, dtype=np.int64)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return PlanarMap(
        perm[q.sigma[inv]], perm[q.twin[inv]], q.origin[inv], int(perm[q.root]),
        hole_edges=frozenset(int(perm[h]) for h in q.hole_edges),
    )


# ---------------------------------------------------------------- serialization

def dumps_map(q: PlanarMap) -> str:
    """``QUAD v1`` text: header, then ``id twin next origin`` per half-edge."""
    lines = [f"QUAD v1 V={q.n_vertices} E={q.n_edges} F={q.n_faces} root={q.root}"]
    for h in range(q.n_half_edges):
        lines.append(f"{h} {q.twin[h]} {q.phi[h]} {q.origin[h]}")
    return "\n".join(lines) + "\n"


def loads_map(text: str) -> PlanarMap:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    head = lines[0].split()
    if head[:2] != ["QUAD", "v1"]:
        raise MapError("missing 'QUAD v1' header")
    fields = dict(tok.split("=", 1) for tok in head[2:])
    rows = np.array([[int(x) for x in ln.split()] for ln in lines[1:]], dtype=np.int64).reshape(-1, 4)
    if not np.array_equal(rows[:, 0], np.arange(len(rows))):
        raise MapError("half-edge ids must be 0..m-1 in order")
    twin, nxt, origin = rows[:, 1], rows[:, 2], rows[:, 3]
    q = PlanarMap(nxt[twin], twin, origin, int(fields["root"]))
    for key, got in (("V", q.n_vertices), ("E", q.n_edges), ("F", q.n_faces)):
        if int(fields[key]) != got:
            raise MapError(f"header {key}={fields[key]} but tables give {got}")
    return q


def profile_counts(q: PlanarMap, kmax: int) -> np.ndarray:
    """Number of vertices at each distance 0..kmax from vertex 0."""
    d = graph_distances(q)
    d = d[(d >= 0) & (d <= kmax)]
    return np.bincount(d, minlength=kmax + 1)
