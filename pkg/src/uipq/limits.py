"""Profiles of the infinite quadrangulation, their rescalings and estimators.

The profile lambda(k) counts vertices at distance k from the root vertex.
Through the tree coding it equals the number of tree vertices with label k
(plus the extra vertex at k = 0), so everything here works on labels.

Two estimators of E lambda([0, R]) are provided. ``full`` materializes a
truncated tree and counts labels. ``conditional`` samples only the spine
and replaces each pair of subtrees by its exact conditional expectation,
which is unbiased for the same quantity and far cheaper at large R.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import sparse, stats
from scipy.sparse.linalg import spsolve

from . import _numba
from .sampling import (
    HARMONIC_QUARTIC,
    RngStream,
    TruncationPolicy,
    count_well_labeled,
    estimate_min_positive,
    estimate_size_law,
    estimate_size_probability,
    prob_min_positive,
    uiwt_label_counts,
    size_probability,
    spine_tables,
    w,
)
from .trees import SpineDecomposition, counts_array

MAX_FAILURE_RATE = 1e-3


class EstimationError(RuntimeError):
    pass


# ---------------------------------------------------------------- targets

@dataclass(frozen=True)
class TargetCurve:
    """Limit constants for the rescaled profile and the spine."""

    mean_profile: Fraction = Fraction(32, 21)
    density: Fraction = Fraction(128, 21)
    ball_factor: Fraction = Fraction(9, 4)
    ball_mean: Fraction = Fraction(24, 7)
    bessel_second_moment: int = 9
    hitting: Fraction = Fraction(3, 2)

    def __post_init__(self):
        if self.ball_mean != self.ball_factor * self.mean_profile:
            raise ValueError("ball mean must equal ball_factor * mean_profile")
        if self.density != 4 * self.mean_profile:
            raise ValueError("density must be the derivative coefficient of the mean profile")

    def profile_mean(self, r: float) -> float:
        """E I([0, r]) = (32/21) r^4."""
        return float(self.mean_profile) * r**4

    def spine_second_moment(self, t: float) -> float:
        return self.bessel_second_moment * t


TARGETS = TargetCurve()


# ---------------------------------------------------------------- profiles

@dataclass(frozen=True, eq=False)
class ProfileMeasure:
    """Vertex counts per distance 0..r; ``source`` is "tree" or "bfs"."""

    counts: np.ndarray
    source: str = "tree"

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", c)
        if len(c) == 0 or c[0] != 1:
            raise ValueError("lambda(0) must be 1")
        if np.any(c < 0):
            raise ValueError("counts must be non-negative")

    @property
    def radius(self) -> int:
        return len(self.counts) - 1

    def mass(self, k: int) -> int:
        """lambda([0, k])."""
        if k > self.radius:
            raise ValueError(f"profile only covers radius {self.radius}")
        return int(self.counts[: k + 1].sum())

    def __eq__(self, other):
        return isinstance(other, ProfileMeasure) and np.array_equal(self.counts, other.counts)


def profile_from_decomposition(sd: SpineDecomposition, r: int) -> ProfileMeasure:
    cert = sd.truncation
    if cert is not None and r > cert.target_radius:
        raise ValueError(f"sample certified to radius {cert.target_radius}, asked for {r}")
    c = counts_array(sd.labels(), r)
    c[0] = 1
    return ProfileMeasure(c, "tree")


def profile_from_map(q, r: int) -> ProfileMeasure:
    from .schaeffer import profile_counts

    return ProfileMeasure(profile_counts(q, r), "bfs")


def bucket(n: float, r: float) -> int:
    """Largest label counted in lambda^(n)([0, r])."""
    return math.floor(math.sqrt(2 * n / 3) * r + 1e-12)


@dataclass(frozen=True)
class RescaledProfile:
    """r -> n^-2 lambda([0, floor(sqrt(2n/3) r)])."""

    profile: ProfileMeasure
    n: float

    def __call__(self, r: float) -> float:
        k = bucket(self.n, r)
        if k > self.profile.radius:
            raise ValueError(f"r={r} needs radius {k}, profile has {self.profile.radius}")
        return self.profile.mass(k) / self.n**2


def rescale(profile: ProfileMeasure, n: float) -> RescaledProfile:
    return RescaledProfile(profile, n)


# ---------------------------------------------------------------- reports

@dataclass
class EstimateReport:
    name: str
    n: float
    r_or_t: float
    M: int
    estimate: float
    stderr: float
    target: float
    runtime: float = 0.0
    failures: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def zscore(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.estimate == self.target else math.copysign(math.inf, self.estimate - self.target)
        return (self.estimate - self.target) / self.stderr

    @property
    def ratio(self) -> float:
        return self.estimate / self.target if self.target else math.nan

    def row(self) -> dict:
        return {
            "n": self.n,
            "r_or_t": self.r_or_t,
            "M": self.M,
            "estimate": self.estimate,
            "stderr": self.stderr,
            "target": self.target,
            "zscore": self.zscore,
        }


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    if len(x) < 2:
        return float(x.mean()), math.nan
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


# ---------------------------------------------------------------- exact expectations

def _p_vec(L: int) -> np.ndarray:
    l = np.arange(1, L + 1, dtype=np.float64)
    return l * (l + 3) / ((l + 1) * (l + 2))


@lru_cache(maxsize=8)
def _offspring_operator(L: int) -> sparse.csc_matrix:
    """I - M on labels 1..L, M(l, l') = p(l) p(l') / 3 the mean offspring matrix."""
    p = _p_vec(L)
    main = p * p / 3
    off = p[:-1] * p[1:] / 3
    M = sparse.diags([off, main, off], [-1, 0, 1], format="csc")
    return (sparse.identity(L, format="csc") - M).tocsc()


def subtree_label_means(R: int, L: int) -> np.ndarray:
    """E under rho_hat_x of #{v : label(v) <= R}, root included, for x = 1..L.

    Index 0 is unused; labels above L are ignored, so ``L`` should sit well
    beyond the labels of interest.
    """
    rhs = (np.arange(1, L + 1) <= R).astype(np.float64)
    y = spsolve(_offspring_operator(L), rhs)
    return np.r_[0.0, y]


def spine_green(L: int, quartic: tuple = HARMONIC_QUARTIC) -> np.ndarray:
    """Expected number of visits of the spine to each label 1..L (killed above L)."""
    p_down, p_stay = spine_tables(L + 1, quartic)
    pd, ps = p_down[1:L + 1], p_stay[1:L + 1]
    pu = 1 - pd - ps
    # column-stochastic transpose: visits g solve g = e_1 + P^T g
    P = sparse.diags([pd[1:], ps, pu[:-1]], [-1, 0, 1], format="csc")
    rhs = np.zeros(L)
    rhs[0] = 1.0
    g = spsolve((sparse.identity(L, format="csc") - P.T).tocsc(), rhs)
    return np.r_[0.0, g]


def expected_profile(kmax: int, L: int | None = None) -> np.ndarray:
    """E lambda(k) for k = 0..kmax in the infinite quadrangulation.

    Sums the expected visits of the spine to each label against the
    expected label counts of the two subtrees hanging there.
    """
    if L is None:
        L = max(1000 * kmax, 20000)
    g = spine_green(L)[1:]
    z = spsolve(_offspring_operator(L).T.tocsc(), g)
    out = np.empty(kmax + 1)
    out[0] = 1.0
    out[1:] = 2 * z[:kmax] - g[:kmax]
    return out


def expected_mass(R: int, L: int | None = None) -> float:
    """E lambda([0, R])."""
    return float(expected_profile(R, L).sum())


# ---------------------------------------------------------------- Monte Carlo over the spine

def _solve_size(policy: TruncationPolicy) -> int:
    return max(64 * (policy.label_cap + 1), 20000)


def conditional_weights(radii: Sequence[int], L: int) -> np.ndarray:
    """Per-label contribution of a spine vertex to lambda([1, R]), one row per R.

    A spine vertex at label x adds itself plus, for each side, the expected
    count of labels <= R in a rho_hat_x tree minus its root. Columns run
    over labels 0..L.
    """
    out = np.zeros((len(radii), L + 1))
    x = np.arange(L + 1)
    for j, R in enumerate(radii):
        y = subtree_label_means(R, L)
        own = ((x >= 1) & (x <= R)).astype(np.float64)
        out[j] = own + 2 * (y - own)
        out[j, 0] = 0.0
    return out


def spine_tail_means(weights: np.ndarray, quartic: tuple = HARMONIC_QUARTIC) -> np.ndarray:
    """E_y sum_{i >= 1} weights[X_i] for the spine started at y, per row.

    The chain is killed above the last column, which only drops labels
    whose weights are negligible.
    """
    L = weights.shape[1] - 1
    p_down, p_stay = spine_tables(L + 1, quartic)
    pd, ps = p_down[1:L + 1], p_stay[1:L + 1]
    pu = 1 - pd - ps
    P = sparse.diags([pd[1:], ps, pu[:-1]], [-1, 0, 1], format="csc")
    A = (sparse.identity(L, format="csc") - P).tocsc()
    out = np.zeros_like(weights)
    for j in range(weights.shape[0]):
        out[j, 1:] = spsolve(A, P @ weights[j, 1:])
    return out


@lru_cache(maxsize=32)
def _estimator_tables(radii: tuple, x_stop: int, window: int, quartic: tuple):
    policy = TruncationPolicy(max(1, min(radii)), x_stop, window)
    L = _solve_size(policy)
    weights = conditional_weights(radii, L)
    tail = spine_tail_means(weights, quartic)
    width = policy.label_cap + 1
    return np.ascontiguousarray(weights[:, :width]), np.ascontiguousarray(tail[:, :width])


def _conditional_chunk(seed, indices, radii, x_stop, window, max_steps, quartic, tail):
    weights, tails = _estimator_tables(tuple(radii), x_stop, window, quartic)
    p_down, p_stay = spine_tables(weights.shape[1] - 1, quartic)
    vals = np.full((len(indices), len(radii)), np.nan)
    heights = np.zeros(len(indices), dtype=np.int64)
    for k, i in enumerate(indices):
        gen = RngStream(seed, int(i)).child(0).generator
        acc, H, xH, status = _numba.spine_accumulate(gen, p_down, p_stay, weights, x_stop, window, max_steps)
        if status == _numba.OK:
            vals[k] = acc + 1.0 + (tails[:, xH] if tail else 0.0)
            heights[k] = H
    return vals, heights


def _full_chunk(seed, indices, radii, x_stop, window, max_steps, quartic, tail):
    rmax = max(radii)
    policy = TruncationPolicy(rmax, x_stop, window, max_steps=max_steps)
    _, tails = _estimator_tables(tuple(radii), x_stop, window, quartic)
    vals = np.full((len(indices), len(radii)), np.nan)
    heights = np.zeros(len(indices), dtype=np.int64)
    for k, i in enumerate(indices):
        try:
            X, counts = uiwt_label_counts(policy, RngStream(seed, int(i)), rmax, quartic)
        except RuntimeError:
            continue
        counts[0] = 1  # the extra vertex
        c = np.cumsum(counts)
        vals[k] = c[list(radii)] + (tails[:, X[-1]] if tail else 0.0)
        heights[k] = len(X) - 1
    return vals, heights


def label_mass_samples(
    radii: Sequence[int],
    M: int,
    seed: int,
    policy: TruncationPolicy | None = None,
    workers: int = 1,
    method: str = "conditional",
    quartic: tuple = HARMONIC_QUARTIC,
    tail: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample values of lambda([0, R]) (or its conditional expectation).

    Sample ``i`` always uses stream ``i`` of ``seed``, so results do not
    depend on ``workers`` and two policies share their random numbers.
    With ``tail`` the expected contribution of the spine above the
    truncation, given its last label, is added; without it the estimate
    only counts what the truncated sample contains.
    Returns ``(values[M, len(radii)], spine_heights)``; failed samples are NaN.
    """
    radii = [int(R) for R in radii]
    if policy is None:
        policy = TruncationPolicy(max(radii))
    if max(radii) > policy.r:
        raise ValueError("policy radius is below the largest requested radius")
    fn = {"conditional": _conditional_chunk, "full": _full_chunk}[method]
    args = (radii, policy.x_stop, policy.window, policy.max_steps, tuple(quartic), tail)
    chunks = np.array_split(np.arange(M), max(1, min(M, 4 * workers)))
    if workers <= 1:
        parts = [fn(seed, c, *args) for c in chunks]
    else:
        with ProcessPoolExecutor(workers) as ex:
            futs = [ex.submit(fn, seed, c, *args) for c in chunks]
            parts = [f.result() for f in futs]
    vals = np.concatenate([p[0] for p in parts])
    heights = np.concatenate([p[1] for p in parts])
    return vals, heights


def _checked(vals: np.ndarray) -> tuple[np.ndarray, int]:
    bad = np.isnan(vals).any(axis=1)
    failures = int(bad.sum())
    if failures > MAX_FAILURE_RATE * len(vals):
        raise EstimationError(f"{failures} of {len(vals)} samples failed to truncate")
    return vals[~bad], failures


def mc_mean_profile(
    n: float,
    M: int,
    r_grid: Sequence[float],
    seed: int,
    workers: int = 1,
    method: str = "conditional",
    policy: TruncationPolicy | None = None,
    tail: bool = True,
) -> list[EstimateReport]:
    """Estimate E lambda^(n)([0, r]) for each r, against (32/21) r^4."""
    t0 = time.perf_counter()
    radii = [bucket(n, r) for r in r_grid]
    if policy is None:
        policy = TruncationPolicy(max(1, math.ceil(math.sqrt(2 * n / 3) * max(r_grid))))
    vals, heights = label_mass_samples([max(R, 1) for R in radii], M, seed, policy, workers, method, tail=tail)
    vals, failures = _checked(vals)
    runtime = time.perf_counter() - t0
    out = []
    for j, (r, R) in enumerate(zip(r_grid, radii)):
        v = vals[:, j] if R >= 1 else np.ones(len(vals))
        est, se = _mean_se(v / n**2)
        out.append(
            EstimateReport(
                "mean_profile", n, r, M, est, se, TARGETS.profile_mean(r), runtime, failures,
                {"bucket": R, "method": method, "tail": tail, "x_stop": policy.x_stop, "window": policy.window,
                 "mean_height": float(heights.mean())},
            )
        )
    return out


def mc_ball_volume(
    n_list: Sequence[int],
    M: int,
    seed: int,
    workers: int = 1,
    method: str = "conditional",
    scale: int = 1,
    tail: bool = True,
) -> list[EstimateReport]:
    """Estimate E n^-4 #{vertices within distance n}, against 24/7.

    ``scale`` multiplies the default truncation thresholds.
    """
    out = []
    for n in n_list:
        t0 = time.perf_counter()
        base = TruncationPolicy(n)
        policy = TruncationPolicy(n, scale * base.x_stop, scale * base.window)
        vals, heights = label_mass_samples([n], M, seed, policy, workers, method, tail=tail)
        vals, failures = _checked(vals)
        est, se = _mean_se(vals[:, 0] / n**4)
        out.append(
            EstimateReport(
                "ball_volume", n, n, M, est, se, float(TARGETS.ball_mean),
                time.perf_counter() - t0, failures,
                {"method": method, "tail": tail, "x_stop": policy.x_stop, "window": policy.window,
                 "mean_height": float(heights.mean())},
            )
        )
    return out


def truncation_sensitivity(
    n: float,
    M: int,
    r_grid: Sequence[float],
    seed: int,
    workers: int = 1,
    ball: bool = False,
    tail: bool = True,
) -> list[dict]:
    """Relative change of point estimates when x_stop and the window double.

    Both runs use the same streams, so the difference isolates the effect
    of the truncation policy.
    """
    out = []
    if ball:
        a = mc_ball_volume([int(n)], M, seed, workers, tail=tail)[0]
        b = mc_ball_volume([int(n)], M, seed, workers, scale=2, tail=tail)[0]
        pairs = [(a, b)]
    else:
        base = TruncationPolicy(max(1, math.ceil(math.sqrt(2 * n / 3) * max(r_grid))))
        A = mc_mean_profile(n, M, r_grid, seed, workers, policy=base, tail=tail)
        B = mc_mean_profile(n, M, r_grid, seed, workers, policy=base.doubled(), tail=tail)
        pairs = list(zip(A, B))
    for a, b in pairs:
        out.append({
            "name": a.name, "n": n, "r_or_t": a.r_or_t,
            "base": a.estimate, "doubled": b.estimate,
            "relative_change": abs(b.estimate - a.estimate) / abs(a.estimate),
        })
    return out


def trend(reports: Sequence[EstimateReport]) -> dict:
    """Distances to target along increasing n, and whether they shrink."""
    reps = sorted(reports, key=lambda r: r.n)
    gaps = [abs(r.estimate - r.target) for r in reps]
    return {
        "n": [r.n for r in reps],
        "ratio": [r.ratio for r in reps],
        "gap": gaps,
        "improving": all(b < a for a, b in zip(gaps, gaps[1:])),
    }


# ---------------------------------------------------------------- spine scaling

def bessel9_norms_squared(t: float, M: int, rng) -> np.ndarray:
    """t |Z|^2 for Z a standard 9-dimensional Gaussian."""
    gen = rng.generator if isinstance(rng, RngStream) else rng
    Z = gen.standard_normal((M, 9))
    return t * np.einsum("ij,ij->i", Z, Z)


def spine_samples(n: int, t_grid: Sequence[float], M: int, seed: int) -> np.ndarray:
    """(3 / (2n)) X_{floor(nt)}^2 for M spines, one column per t."""
    times = np.array([math.floor(n * t) for t in t_grid], dtype=np.int64)
    order = np.argsort(times)
    p_down, p_stay = spine_tables(int(times.max()) + 2, HARMONIC_QUARTIC)
    out = np.empty((M, len(times)))
    for i in range(M):
        gen = RngStream(seed, i).child(0).generator
        x = _numba.spine_record(gen, p_down, p_stay, times[order])
        out[i, order] = x
    return 3.0 / (2 * n) * out**2


def spine_moment_check(
    n: int, M: int, t_grid: Sequence[float], seed: int, ks: bool = True
) -> list[EstimateReport]:
    """Second moment of the rescaled spine against 9t.

    With ``ks`` each t also gets a two-sample Kolmogorov-Smirnov p-value
    against directly simulated 9-dimensional Gaussian norms.
    """
    t0 = time.perf_counter()
    vals = spine_samples(n, t_grid, M, seed)
    runtime = time.perf_counter() - t0
    out = []
    oracle_rng = RngStream(seed, 0, 7)
    for j, t in enumerate(t_grid):
        est, se = _mean_se(vals[:, j])
        extra = {}
        if ks and t > 0:
            ref = bessel9_norms_squared(t, M, oracle_rng.generator)
            extra["ks_pvalue"] = float(stats.ks_2samp(vals[:, j], ref).pvalue)
        out.append(EstimateReport("spine_moment", n, t, M, est, se, TARGETS.spine_second_moment(t), runtime, 0, extra))
    return out


# ---------------------------------------------------------------- bundled checks

def consistency_checks(M: int = 10**5, seed: int = 0, asymptotic_n: int = 10**4) -> dict:
    """Size law, acceptance rates and the hitting-constant limit in one report."""
    rng = RngStream(seed, 0)
    sizes = estimate_size_law(6, M, rng.child(0))
    size_rows = []
    for k in range(7):
        p = float(size_probability(k))
        se = math.sqrt(p * (1 - p) / M)
        size_rows.append({"n": k, "exact": str(size_probability(k)), "estimate": float(sizes[k]),
                          "stderr": se, "zscore": (sizes[k] - p) / se})
    est, se = estimate_size_probability(asymptotic_n, M, rng.child(1))
    scale = asymptotic_n**1.5 * 2 * math.sqrt(math.pi)
    acc_rows = []
    for j, l in enumerate((1, 2, 5)):
        a = estimate_min_positive(l, M, rng.child(2 + j))
        exact = prob_min_positive(l)
        acc_rows.append({"l": l, "exact": str(exact), "estimate": a.rate, "stderr": a.stderr,
                         "zscore": (a.rate - float(exact)) / a.stderr, "overflows": a.overflows})
    hit_rows = []
    for l in (10**3, 10**6):
        v = l * l * (1 - w(l) / 2)
        hit_rows.append({"l": l, "value": str(v), "float": float(v)})
    return {
        "size_law": size_rows,
        "size_asymptotic": {"n": asymptotic_n, "scaled_estimate": est * scale, "scaled_stderr": se * scale},
        "acceptance": acc_rows,
        "hitting_limit": hit_rows,
        "well_labeled_counts": [count_well_labeled(k) for k in range(6)],
    }
