"""Compiled inner loops.

Every sampler here consumes uniforms from a ``numpy.random.Generator`` one
at a time, so the Python-level wrappers and these kernels see identical
draw sequences for identical generator states.
"""

import math

import numpy as np
from numba import njit

OK = 0
OVERFLOW = 1
HIT_FLOOR = 2
STEP_CAP = 3

_LOG_HALF = math.log(0.5)


@njit(cache=True)
def _geometric(u):
    # P(k) = 2^-(k+1): invert P(K >= k) = 2^-k
    return int(math.floor(math.log1p(-u) / _LOG_HALF))


@njit(cache=True)
def _delta(u):
    d = int(3.0 * u)
    if d > 2:
        d = 2
    return d - 1


@njit(cache=True)
def _grow(a, n):
    b = np.empty(max(2 * a.shape[0], n), dtype=a.dtype)
    b[: a.shape[0]] = a
    return b


@njit(cache=True)
def gw_tree(gen, root_label, cap, floor):
    """Labeled geometric(1/2) Galton-Watson tree in preorder.

    Returns ``(parent, labels, status)``. ``status`` is OVERFLOW when more
    than ``cap`` vertices would be created and HIT_FLOOR as soon as a label
    ``<= floor`` appears; in both cases the arrays hold the partial tree.
    """
    parent = np.empty(min(cap, 64), dtype=np.int64)
    labels = np.empty(min(cap, 64), dtype=np.int64)
    st_par = np.empty(64, dtype=np.int64)
    st_lab = np.empty(64, dtype=np.int64)
    kids = np.empty(16, dtype=np.int64)
    st_par[0] = -1
    st_lab[0] = root_label
    top = 1
    n = 0
    while top > 0:
        top -= 1
        par = st_par[top]
        lab = st_lab[top]
        if n >= cap:
            return parent[:n], labels[:n], OVERFLOW
        if n >= parent.shape[0]:
            parent = _grow(parent, n + 1)
            labels = _grow(labels, n + 1)
        parent[n] = par
        labels[n] = lab
        v = n
        n += 1
        if lab <= floor:
            return parent[:n], labels[:n], HIT_FLOOR
        k = _geometric(gen.random())
        if k > kids.shape[0]:
            kids = np.empty(2 * k, dtype=np.int64)
        for j in range(k):
            kids[j] = lab + _delta(gen.random())
        if top + k > st_par.shape[0]:
            st_par = _grow(st_par, top + k)
            st_lab = _grow(st_lab, top + k)
        for j in range(k - 1, -1, -1):
            st_par[top] = v
            st_lab[top] = kids[j]
            top += 1
    return parent[:n], labels[:n], OK


@njit(cache=True)
def gw_probe(gen, root_label, cap, floor):
    """Same draws as :func:`gw_tree` without storing the tree.

    Returns ``(status, n_vertices, min_label)``.
    """
    st_lab = np.empty(64, dtype=np.int64)
    st_lab[0] = root_label
    top = 1
    n = 0
    lo = root_label
    while top > 0:
        top -= 1
        lab = st_lab[top]
        if n >= cap:
            return OVERFLOW, n, lo
        n += 1
        if lab < lo:
            lo = lab
        if lab <= floor:
            return HIT_FLOOR, n, lo
        k = _geometric(gen.random())
        if top + k > st_lab.shape[0]:
            st_lab = _grow(st_lab, top + k)
        # children are pushed in reverse so the first child is explored first
        for j in range(k):
            st_lab[top + k - 1 - j] = lab + _delta(gen.random())
        top += k
    return OK, n, lo


@njit(cache=True)
def size_histogram(gen, m, cap):
    """Vertex counts of ``m`` trees, with ``cap + 1`` meaning "more than cap"."""
    out = np.empty(m, dtype=np.int64)
    for i in range(m):
        status, n, lo = gw_probe(gen, 0, cap, -(1 << 62))
        out[i] = cap + 1 if status == OVERFLOW else n
    return out


@njit(cache=True)
def spine_step(gen, x, p_down, p_stay):
    u = gen.random()
    if u < p_down[x]:
        return x - 1
    if u < p_down[x] + p_stay[x]:
        return x
    return x + 1


@njit(cache=True)
def spine_until_window(gen, p_down, p_stay, x_stop, window, max_steps):
    """Spine labels X_0 = 1, ... until W consecutive labels are >= x_stop."""
    out = np.empty(256, dtype=np.int64)
    x = 1
    out[0] = 1
    run = 1 if x >= x_stop else 0
    i = 0
    while run < window:
        if i >= max_steps:
            return out[: i + 1], STEP_CAP
        if x + 1 >= p_down.shape[0]:
            return out[: i + 1], STEP_CAP
        x = spine_step(gen, x, p_down, p_stay)
        i += 1
        if i >= out.shape[0]:
            out = _grow(out, i + 1)
        out[i] = x
        if x >= x_stop:
            run += 1
        else:
            run = 0
    return out[: i + 1], OK


@njit(cache=True)
def spine_accumulate(gen, p_down, p_stay, weights, x_stop, window, max_steps):
    """Sum ``weights[:, X_i]`` along a spine stopped like :func:`spine_until_window`.

    Returns ``(totals, H, X_H, status)``.
    """
    acc = np.zeros(weights.shape[0])
    x = 1
    for j in range(weights.shape[0]):
        acc[j] += weights[j, x]
    run = 1 if x >= x_stop else 0
    i = 0
    while run < window:
        if i >= max_steps or x + 1 >= p_down.shape[0]:
            return acc, i, x, STEP_CAP
        x = spine_step(gen, x, p_down, p_stay)
        i += 1
        for j in range(weights.shape[0]):
            acc[j] += weights[j, x]
        if x >= x_stop:
            run += 1
        else:
            run = 0
    return acc, i, x, OK


@njit(cache=True)
def spine_record(gen, p_down, p_stay, times):
    """Spine labels observed at the sorted step indices ``times``."""
    out = np.empty(times.shape[0], dtype=np.int64)
    x = 1
    i = 0
    for j in range(times.shape[0]):
        while i < times[j]:
            x = spine_step(gen, x, p_down, p_stay)
            i += 1
        out[j] = x
    return out


@njit(cache=True)
def contour_walk(parent):
    """Preorder vertex index visited at each contour time 0..2n."""
    n = parent.shape[0]
    out = np.empty(2 * n - 1, dtype=np.int64)
    out[0] = 0
    t = 0
    cur = 0
    for v in range(1, n):
        p = parent[v]
        while cur != p:
            cur = parent[cur]
            t += 1
            out[t] = cur
        t += 1
        out[t] = v
        cur = v
    while cur != 0:
        cur = parent[cur]
        t += 1
        out[t] = cur
    return out


@njit(cache=True)
def depths(parent):
    d = np.zeros(parent.shape[0], dtype=np.int64)
    for v in range(1, parent.shape[0]):
        d[v] = d[parent[v]] + 1
    return d


@njit(cache=True)
def conditioned_forest(gen, roots, cap):
    """One positive-label tree per entry of ``roots``, sampled in order.

    Each tree is drawn like :func:`gw_tree` with floor 0, retrying until it
    is accepted. Returns concatenated ``(parent, labels)`` with per-tree
    ``offsets`` and a status.
    """
    k = roots.shape[0]
    offsets = np.zeros(k + 1, dtype=np.int64)
    parent = np.empty(max(2 * k, 16), dtype=np.int64)
    labels = np.empty(max(2 * k, 16), dtype=np.int64)
    n = 0
    for i in range(k):
        while True:
            p, lab, status = gw_tree(gen, roots[i], cap, 0)
            if status == OVERFLOW:
                return parent[:n], labels[:n], offsets, OVERFLOW
            if status == OK:
                break
        m = p.shape[0]
        if n + m > parent.shape[0]:
            parent = _grow(parent, n + m)
            labels = _grow(labels, n + m)
        parent[n : n + m] = p
        labels[n : n + m] = lab
        n += m
        offsets[i + 1] = n
    return parent[:n], labels[:n], offsets, OK


@njit(cache=True)
def _probe_counts(gen, root_label, cap, floor, hist):
    # gw_probe with a histogram of labels 0..len(hist)-1, same draw order
    st_lab = np.empty(64, dtype=np.int64)
    st_lab[0] = root_label
    top = 1
    n = 0
    kmax = hist.shape[0] - 1
    while top > 0:
        top -= 1
        lab = st_lab[top]
        if n >= cap:
            return OVERFLOW, n
        n += 1
        if lab <= floor:
            return HIT_FLOOR, n
        if lab <= kmax:
            hist[lab] += 1
        k = _geometric(gen.random())
        if top + k > st_lab.shape[0]:
            st_lab = _grow(st_lab, top + k)
        for j in range(k):
            st_lab[top + k - 1 - j] = lab + _delta(gen.random())
        top += k
    return OK, n


@njit(cache=True)
def conditioned_forest_counts(gen, roots, cap, kmax):
    """Label histogram (0..kmax) of the non-root vertices of the trees that
    :func:`conditioned_forest` would return, without storing them."""
    total = np.zeros(kmax + 1, dtype=np.int64)
    hist = np.zeros(kmax + 1, dtype=np.int64)
    for i in range(roots.shape[0]):
        while True:
            hist[:] = 0
            status, n = _probe_counts(gen, roots[i], cap, 0, hist)
            if status == OVERFLOW:
                return total, OVERFLOW
            if status == OK:
                break
        if roots[i] <= kmax:
            hist[roots[i]] -= 1
        total += hist
    return total, OK


@njit(cache=True)
def probe_batch(gen, root_label, m, cap, floor):
    """``m`` consecutive :func:`gw_probe` runs; returns (ok, hit_floor, overflow) counts."""
    ok = 0
    hit = 0
    over = 0
    for _ in range(m):
        status, n, lo = gw_probe(gen, root_label, cap, floor)
        if status == OK:
            ok += 1
        elif status == HIT_FLOOR:
            hit += 1
        else:
            over += 1
    return ok, hit, over
