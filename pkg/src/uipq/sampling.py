"""Exact laws and samplers for labeled Galton-Watson trees and the infinite spine.

Conventions
-----------
``rho_l`` is the law of a geometric(1/2) Galton-Watson tree whose root has
label ``l`` and whose other labels are the parent's label plus an
independent uniform step in {-1, 0, +1}. ``rho_hat_l`` conditions it on all
labels being positive.  Every sampler draws, for each vertex in depth-first
order, its offspring count (inversion of one uniform) and then one uniform
per child for the label step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, lru_cache
from itertools import product
from typing import Callable, Sequence

import numpy as np

from . import _numba
from .trees import (
    LabeledTree,
    SpineDecomposition,
    TruncationCertificate,
    dumps_tree,
    loads_tree,
    spine_assemble,
)

DEFAULT_SIZE_CAP = 10**7

# coefficients of the quartic factor in d_l, highest degree first
NOMINAL_QUARTIC = (4, 30, 59, 42, 4)
HARMONIC_QUARTIC = (5, 30, 59, 42, 4)


class SizeCapExceeded(RuntimeError):
    def __init__(self, cap: int):
        super().__init__(f"tree exceeded size cap of {cap} vertices")
        self.cap = cap


class TruncationFailure(RuntimeError):
    pass


# ---------------------------------------------------------------- random streams

_MASK64 = (1 << 64) - 1
_MASK32 = (1 << 32) - 1


@dataclass(frozen=True)
class RngStream:
    """Counter-based stream keyed by ``(seed, stream, substream)``.

    Backed by Philox: distinct keys give independent streams and the draw
    sequence is a pure function of the key and the counter.
    """

    seed: int
    stream: int = 0
    substream: int = 0

    def __post_init__(self):
        if not (0 <= self.stream <= _MASK32 and 0 <= self.substream <= _MASK32):
            raise ValueError("stream indices must fit in 32 bits")

    @cached_property
    def generator(self) -> np.random.Generator:
        key = (self.seed & _MASK64) | (self.stream << 64) | (self.substream << 96)
        return np.random.Generator(np.random.Philox(key=key))

    @property
    def counter(self) -> int:
        """Number of 64-bit words consumed so far."""
        state = self.generator.bit_generator.state
        c = sum(int(x) << (64 * i) for i, x in enumerate(state["state"]["counter"]))
        return 4 * c + int(state["buffer_pos"]) - 4

    def task(self, index: int) -> "RngStream":
        return RngStream(self.seed, index, 0)

    def child(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.stream, index)

    def random(self, size=None):
        return self.generator.random(size)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


# ---------------------------------------------------------------- exact probabilities

def prob_min_positive(l: int) -> Fraction:
    """rho_l(V_* > 0) = l(l+3) / ((l+1)(l+2))."""
    if l < 1:
        raise ValueError("l must be >= 1")
    return Fraction(l * (l + 3), (l + 1) * (l + 2))


def prob_min_at(l: int, level: int) -> Fraction:
    """rho_l(V_* = level) for l > level >= 0, via the shift to level 0."""
    if not l > level >= 0:
        raise ValueError("need l > level >= 0")
    m = l - level
    return Fraction(4, (m + 1) * (m + 2) * (m + 3))


def prob_min_le(l: int, r: int) -> Fraction:
    """rho_l(V_* <= r); equals 1 when the root itself is at or below r."""
    if l <= r:
        return Fraction(1)
    return 1 - prob_min_positive(l - r)


def prob_hat_min_le(x: int, r: int) -> Fraction:
    """rho_hat_x(V_* <= r) = 1 - rho_{x-r}(V_*>0) / rho_x(V_*>0) for x > r >= 0."""
    if x < 1:
        raise ValueError("x must be >= 1")
    if r < 1:
        return Fraction(0)
    if x <= r:
        return Fraction(1)
    return 1 - prob_min_positive(x - r) / prob_min_positive(x)


def catalan(n: int) -> int:
    return math.comb(2 * n, n) // (n + 1)


def size_probability(n: int) -> Fraction:
    """rho_0(|theta| = n) = Cat(n) 4^-n / 2."""
    return Fraction(catalan(n), 2 * 4**n)


# ---------------------------------------------------------------- spine kernel

def w(l: int) -> Fraction:
    return 2 * Fraction(l * (l + 3), (l + 1) * (l + 2))


def d(l: int, quartic: Sequence[int] = HARMONIC_QUARTIC) -> Fraction:
    a4, a3, a2, a1, a0 = quartic
    return 2 * w(l) / 560 * (a4 * l**4 + a3 * l**3 + a2 * l**2 + a1 * l + a0)


@dataclass(frozen=True)
class KernelRow:
    """One row of the spine transition kernel, raw and normalized."""

    l: int
    raw_down: Fraction
    raw_stay: Fraction
    raw_up: Fraction

    @property
    def raw_row_sum(self) -> Fraction:
        return self.raw_down + self.raw_stay + self.raw_up

    @property
    def down(self) -> Fraction:
        return self.raw_down / self.raw_row_sum

    @property
    def stay(self) -> Fraction:
        return self.raw_stay / self.raw_row_sum

    @property
    def up(self) -> Fraction:
        return self.raw_up / self.raw_row_sum

    def normalized(self) -> tuple[Fraction, Fraction, Fraction]:
        return self.down, self.stay, self.up


def kernel_row(l: int, quartic: Sequence[int] = NOMINAL_QUARTIC) -> KernelRow:
    """Row ``l`` of the spine kernel with exact rational entries.

    The default quartic is the nominal one, whose raw rows fall slightly
    short of 1 at small ``l``. ``HARMONIC_QUARTIC`` gives rows summing to
    exactly 1 and is what the samplers use.
    """
    if l < 1:
        raise ValueError("l must be >= 1")
    a = w(l) ** 2 / 12
    dl = d(l, quartic)
    down = a / dl * d(l - 1, quartic) if l >= 2 else Fraction(0)
    up = a / dl * d(l + 1, quartic)
    return KernelRow(l, down, a, up)


@lru_cache(maxsize=16)
def spine_tables(max_label: int, quartic: tuple = HARMONIC_QUARTIC) -> tuple[np.ndarray, np.ndarray]:
    """Float ``(p_down, p_stay)`` indexed by label 0..max_label (index 0 unused)."""
    l = np.arange(0, max_label + 2, dtype=np.float64)
    ww = 2 * l * (l + 3) / ((l + 1) * (l + 2))
    a4, a3, a2, a1, a0 = quartic
    dd = 2 * ww / 560 * ((((a4 * l + a3) * l + a2) * l + a1) * l + a0)
    a = ww**2 / 12
    down = np.zeros_like(l)
    up = np.zeros_like(l)
    down[2:] = a[2:] * dd[1:-1] / dd[2:]
    up[1:-1] = a[1:-1] * dd[2:] / dd[1:-1]
    total = down + a + up
    total[0] = 1.0
    p_down = down / total
    p_stay = a / total
    p_down[0] = p_stay[0] = 0.0
    return p_down[: max_label + 1], p_stay[: max_label + 1]


def _table_size(n: int) -> int:
    return 1 << max(10, (n + 2).bit_length())


def sample_spine(
    rng,
    stop: Callable[[int, list[int]], bool],
    quartic: tuple = HARMONIC_QUARTIC,
    max_steps: int = 10**8,
) -> np.ndarray:
    """Run the spine chain from X_0 = 1 until ``stop(i, history)`` holds.

    ``history`` is the list X_0..X_i; the returned array ends at the first
    index where the predicate is true.
    """
    gen = as_generator(rng)
    size = _table_size(64)
    p_down, p_stay = spine_tables(size, tuple(quartic))
    hist = [1]
    x = 1
    i = 0
    while not stop(i, hist):
        if i >= max_steps:
            raise TruncationFailure(f"spine did not stop within {max_steps} steps")
        if x + 1 >= size:
            size = _table_size(2 * x)
            p_down, p_stay = spine_tables(size, tuple(quartic))
        u = gen.random()
        if u < p_down[x]:
            x -= 1
        elif u < p_down[x] + p_stay[x]:
            pass
        else:
            x += 1
        hist.append(x)
        i += 1
    return np.asarray(hist, dtype=np.int64)


# ---------------------------------------------------------------- tree samplers

def sample_rho(l: int, rng, size_cap: int = DEFAULT_SIZE_CAP) -> LabeledTree:
    """One tree from rho_l; raises :class:`SizeCapExceeded` past ``size_cap`` vertices."""
    if size_cap < 1:
        raise ValueError("size_cap must be >= 1")
    parent, labels, status = _numba.gw_tree(as_generator(rng), l, size_cap, -(1 << 62))
    if status == _numba.OVERFLOW:
        raise SizeCapExceeded(size_cap)
    return LabeledTree.from_parents(parent, labels)


def sample_rho_hat(l: int, rng, size_cap: int = DEFAULT_SIZE_CAP) -> LabeledTree:
    """One tree from rho_hat_l by rejection.

    An attempt is abandoned as soon as a label <= 0 is drawn, which leaves
    the law of the accepted tree unchanged. Expected attempts are
    (l+1)(l+2) / (l(l+3)) <= 3/2.
    """
    if l < 1:
        raise ValueError("l must be >= 1")
    gen = as_generator(rng)
    while True:
        parent, labels, status = _numba.gw_tree(gen, l, size_cap, 0)
        if status == _numba.OK:
            return LabeledTree.from_parents(parent, labels)
        if status == _numba.OVERFLOW:
            raise SizeCapExceeded(size_cap)


@dataclass(frozen=True)
class AcceptanceEstimate:
    l: int
    trials: int
    accepted: int
    overflows: int

    @property
    def rate(self) -> float:
        return self.accepted / self.trials

    @property
    def stderr(self) -> float:
        p = self.rate
        return math.sqrt(p * (1 - p) / self.trials)


def estimate_min_positive(l: int, trials: int, rng, size_cap: int = DEFAULT_SIZE_CAP) -> AcceptanceEstimate:
    """Monte Carlo frequency of V_* > 0 under rho_l (the rejection acceptance rate)."""
    accepted, _, overflows = _numba.probe_batch(as_generator(rng), l, trials, size_cap, 0)
    return AcceptanceEstimate(l, trials, accepted, overflows)


def estimate_size_law(n_max: int, trials: int, rng) -> np.ndarray:
    """Empirical rho_0(|theta| = n) for n = 0..n_max from ``trials`` trees."""
    sizes = _numba.size_histogram(as_generator(rng), trials, n_max + 1) - 1
    return np.bincount(sizes[sizes <= n_max], minlength=n_max + 1) / trials


def estimate_size_probability(n: int, trials: int, rng) -> tuple[float, float]:
    """Monte Carlo estimate of rho_0(|theta| = n) and its standard error.

    Uses the hitting-time identity P(T = m) = P(S_m = -1) / m for the
    Lukasiewicz walk of the tree (m = n + 1 vertices): a tree has n edges
    with probability P(xi_1 + ... + xi_m = n) / m for i.i.d. offspring xi.
    """
    gen = as_generator(rng)
    m = n + 1
    hits = gen.negative_binomial(m, 0.5, size=trials) == n
    p = hits.mean()
    return p / m, math.sqrt(p * (1 - p) / trials) / m


# ---------------------------------------------------------------- uniform infinite well-labeled tree

@dataclass(frozen=True)
class TruncationPolicy:
    """When to stop growing the spine for a target radius ``r``.

    Defaults: x_stop = max(8r, r + 32), window = x_stop.
    """

    r: int
    x_stop: int | None = None
    window: int | None = None
    epsilon: float = 1e-3
    size_cap: int = DEFAULT_SIZE_CAP
    max_steps: int | None = None

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("r must be >= 1")
        if self.x_stop is None:
            object.__setattr__(self, "x_stop", max(8 * self.r, self.r + 32))
        if self.window is None:
            object.__setattr__(self, "window", self.x_stop)
        if self.max_steps is None:
            object.__setattr__(self, "max_steps", 1000 * self.x_stop**2 + 10**5)
        if self.x_stop <= self.r:
            raise ValueError("x_stop must exceed r")
        if self.window < 1:
            raise ValueError("window must be >= 1")

    def doubled(self) -> "TruncationPolicy":
        return TruncationPolicy(self.r, 2 * self.x_stop, 2 * self.window, self.epsilon, self.size_cap)

    @property
    def label_cap(self) -> int:
        # while the window is incomplete the label stays below x_stop + window
        return self.x_stop + self.window + 2


def stop_after_window(policy: TruncationPolicy) -> Callable[[int, list[int]], bool]:
    def stop(i, hist):
        W = policy.window
        return len(hist) >= W and min(hist[-W:]) >= policy.x_stop

    return stop


def sample_truncated_spine(policy: TruncationPolicy, rng, quartic: tuple = HARMONIC_QUARTIC) -> np.ndarray:
    p_down, p_stay = spine_tables(policy.label_cap, tuple(quartic))
    X, status = _numba.spine_until_window(
        as_generator(rng), p_down, p_stay, policy.x_stop, policy.window, policy.max_steps
    )
    if status != _numba.OK:
        raise TruncationFailure(f"spine hit the step cap ({policy.max_steps})")
    return X


def _subtree_forest(X: np.ndarray, rng: RngStream, size_cap: int):
    """Subtrees L_0, R_0, L_1, R_1, ... concatenated, with offsets."""
    roots = np.repeat(np.asarray(X, dtype=np.int64), 2)
    parent, labels, offsets, status = _numba.conditioned_forest(rng.generator, roots, size_cap)
    if status == _numba.OVERFLOW:
        raise SizeCapExceeded(size_cap)
    return parent, labels, offsets


def uiwt_label_counts(
    policy: TruncationPolicy, rng: RngStream, kmax: int, quartic: tuple = HARMONIC_QUARTIC, size_cap: int = 10**12
) -> tuple[np.ndarray, np.ndarray]:
    """Spine labels and the label histogram (0..kmax) of the whole sample.

    Uses the same draws as :func:`sample_uiwt` but never stores the
    subtrees, so the size cap only bounds running time.
    """
    X = sample_truncated_spine(policy, rng.child(0), quartic)
    roots = np.repeat(np.asarray(X, dtype=np.int64), 2)
    counts, status = _numba.conditioned_forest_counts(rng.child(1).generator, roots, size_cap, kmax)
    if status == _numba.OVERFLOW:
        raise SizeCapExceeded(size_cap)
    counts += np.bincount(X[X <= kmax], minlength=kmax + 1)
    return X, counts


def sample_uiwt(policy: TruncationPolicy, rng: RngStream, quartic: tuple = HARMONIC_QUARTIC) -> SpineDecomposition:
    """Truncated uniform infinite well-labeled tree.

    The spine uses substream 0 of ``rng`` and the subtrees substream 1
    (L_0, R_0, L_1, R_1, ...), so a stricter policy on the same stream
    extends the same sample.
    """
    X = sample_truncated_spine(policy, rng.child(0), quartic)
    parent, labels, offsets = _subtree_forest(X, rng.child(1), policy.size_cap)
    trees = [
        LabeledTree.from_parents(parent[a:b], labels[a:b])
        for a, b in zip(offsets[:-1].tolist(), offsets[1:].tolist())
    ]
    left, right = trees[0::2], trees[1::2]
    H = len(X) - 1
    window = X[H - policy.window + 1:].tolist()
    cert = TruncationCertificate(
        target_radius=policy.r,
        x_stop=policy.x_stop,
        window=policy.window,
        height=H,
        epsilon=policy.epsilon,
        dip_probabilities=tuple(prob_hat_min_le(x, policy.r) for x in window),
    )
    return spine_assemble(X, left, right, cert)


# ---------------------------------------------------------------- enumeration

def _dyck_words(n: int):
    def rec(prefix, up, down):
        if up == n and down == n:
            yield prefix
            return
        if up < n:
            yield from rec(prefix + "U", up + 1, down)
        if down < up:
            yield from rec(prefix + "D", up, down + 1)

    yield from rec("", 0, 0)


def enumerate_well_labeled(n: int) -> list[LabeledTree]:
    """All well-labeled trees with ``n <= 5`` edges.

    Ordered lexicographically by contour word (as a U/D string) and then by
    the contour label deltas.
    """
    if not 0 <= n <= 5:
        raise ValueError("enumeration is limited to 0 <= n <= 5")
    keyed = []
    for word in _dyck_words(n):
        steps = " ".join(word)
        for deltas in product((-1, 0, 1), repeat=n):
            # one delta per non-root vertex, assigned in preorder; the
            # contour retraces them in reverse on the way down
            text = _wlt_from_vertex_deltas(word, deltas, steps)
            if text is None:
                continue
            t = loads_tree(text)
            if t.labels.min() >= 1:
                cp_deltas = tuple(int(x) for x in np.diff(_contour_labels(t)))
                keyed.append(((word, cp_deltas), t))
    keyed.sort(key=lambda kv: kv[0])
    return [t for _, t in keyed]


def _wlt_from_vertex_deltas(word: str, deltas, steps: str) -> str | None:
    stack = []
    out = []
    it = iter(deltas)
    for s in word:
        if s == "U":
            dv = next(it)
            stack.append(dv)
            out.append(dv)
        else:
            out.append(-stack.pop())
    tokens = " ".join(f"{x:+d}" if x else "0" for x in out)
    return f"WLT v1 size={len(word) // 2} root=1\n{steps}\n{tokens}\n"


def _contour_labels(t: LabeledTree) -> np.ndarray:
    from .trees import encode_contour

    return encode_contour(t).V


def count_well_labeled(n: int) -> int:
    """|T_n| = 2 * 3^n * Cat(n) / (n + 2)."""
    return 2 * 3**n * catalan(n) // (n + 2)


__all__ = [
    "AcceptanceEstimate",
    "HARMONIC_QUARTIC",
    "KernelRow",
    "NOMINAL_QUARTIC",
    "RngStream",
    "SizeCapExceeded",
    "TruncationFailure",
    "TruncationPolicy",
    "catalan",
    "count_well_labeled",
    "dumps_tree",
    "enumerate_well_labeled",
    "estimate_min_positive",
    "estimate_size_law",
    "estimate_size_probability",
    "kernel_row",
    "prob_hat_min_le",
    "prob_min_at",
    "prob_min_le",
    "prob_min_positive",
    "sample_rho",
    "sample_rho_hat",
    "sample_spine",
    "sample_truncated_spine",
    "sample_uiwt",
    "uiwt_label_counts",
    "size_probability",
    "spine_tables",
]
