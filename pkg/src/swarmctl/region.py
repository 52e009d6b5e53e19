"""Monte-Carlo estimation of consensus regions on an (X0, V0) lattice."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from .control import ControlSpec
from .core import AgentState, KernelSpec, spread, threshold_gamma
from .dynamics import ModelSpec
from .errors import ConfigError, DomainError
from .integrator import SimConfig, simulate_batch

SUCCESS_V = 1e-5
MAX_REDRAWS = 100


def rescale_to(x_raw, v_raw, X0, V0) -> AgentState:
    """Scale a raw draw so that ``(X, V) = (X0, V0)``.

    Positions are scaled about the origin, which leaves ``X`` and ``V``
    exactly as prescribed since both only see deviations from the mean.
    """
    x_raw = np.asarray(x_raw, dtype=float)
    v_raw = np.asarray(v_raw, dtype=float)
    if X0 < 0 or V0 < 0:
        raise DomainError("X0 and V0 must be nonnegative")
    Xr, Vr = float(spread(x_raw)), float(spread(v_raw))
    if Xr <= 0 or Vr <= 0:
        raise DomainError("raw draw has zero spread")
    return AgentState(math.sqrt(X0 / Xr) * x_raw, math.sqrt(V0 / Vr) * v_raw)


def trial_rng(seed, cell, trial):
    """Independent stream for one trial, derived from ``(seed, cell, trial)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(cell), int(trial)]))


def draw_raw(rng, N, d):
    """Uniform draw from ``[-1, 1]^{dN} x [-1, 1]^{dN}`` with positive spreads."""
    for _ in range(MAX_REDRAWS):
        x = rng.uniform(-1.0, 1.0, (N, d))
        v = rng.uniform(-1.0, 1.0, (N, d))
        if spread(x) > 0 and spread(v) > 0:
            return x, v
    raise DomainError(f"no nondegenerate draw after {MAX_REDRAWS} attempts")


def initial_batch(cells, X_axis, V_axis, trials, seed, N, d):
    """Rescaled initial data for ``trials`` draws in each cell ``(i, j)``."""
    nV = len(V_axis)
    xs = np.empty((len(cells) * trials, N, d))
    vs = np.empty_like(xs)
    k = 0
    for i, j in cells:
        for tr in range(trials):
            x, v = draw_raw(trial_rng(seed, i * nV + j, tr), N, d)
            st = rescale_to(x, v, X_axis[i], V_axis[j])
            xs[k], vs[k] = st.x, st.v
            k += 1
    return xs, vs


def _run_cells(args):
    cells, X_axis, V_axis, model, control, cfg, seed, N, d, trials = args
    x0, v0 = initial_batch(cells, X_axis, V_axis, trials, seed, N, d)
    V = simulate_batch(model, control, x0, v0, cfg)
    ok = np.nan_to_num(V, nan=np.inf) <= SUCCESS_V
    return ok.reshape(len(cells), trials).sum(axis=1)


def run_trials(X0, V0, model: ModelSpec, control: ControlSpec, trials: int, cfg: SimConfig,
               seed: int, N: int, d: int = 2, cell: int = 0):
    """Run ``trials`` rescaled random starts at one ``(X0, V0)``; return ``(successes, trials)``."""
    if trials < 1:
        raise ConfigError("trials must be at least 1", "region.trials")
    x0 = np.empty((trials, N, d))
    v0 = np.empty_like(x0)
    for tr in range(trials):
        st = rescale_to(*draw_raw(trial_rng(seed, cell, tr), N, d), X0, V0)
        x0[tr], v0[tr] = st.x, st.v
    V = simulate_batch(model, control, x0, v0, cfg)
    return int(np.sum(np.nan_to_num(V, nan=np.inf) <= SUCCESS_V)), trials


def wilson_interval(successes, trials, confidence=0.95):
    ci = binomtest(int(successes), int(trials)).proportion_ci(confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class RegionGrid:
    X0: np.ndarray
    V0: np.ndarray
    trials: np.ndarray
    successes: np.ndarray
    boundaries: dict = field(default_factory=dict)

    @property
    def probability(self):
        return self.successes / self.trials

    def wilson(self, confidence=0.95):
        lo = np.empty(self.trials.shape)
        hi = np.empty(self.trials.shape)
        for idx in np.ndindex(self.trials.shape):
            lo[idx], hi[idx] = wilson_interval(self.successes[idx], self.trials[idx], confidence)
        return lo, hi


def probability_grid(X_axis, V_axis, model: ModelSpec, control: ControlSpec, cfg: SimConfig,
                     seed: int, N: int, d: int = 2, trials: int = 20, jobs: int = 1,
                     chunk_cells: int = 21) -> RegionGrid:
    """Empirical consensus probability on the lattice ``X_axis x V_axis``.

    Cells are independent and each trial has its own random stream, so the
    result does not depend on ``jobs`` or on how cells are chunked.
    """
    X_axis = np.asarray(X_axis, dtype=float)
    V_axis = np.asarray(V_axis, dtype=float)
    for ax in (X_axis, V_axis):
        if ax.ndim != 1 or len(ax) == 0 or np.any(np.diff(ax) <= 0) or ax[0] < 0:
            raise ConfigError("grid axes must be nonnegative and strictly increasing", "region.axes")
    cells = [(i, j) for i in range(len(X_axis)) for j in range(len(V_axis))]
    chunks = [cells[k:k + chunk_cells] for k in range(0, len(cells), chunk_cells)]
    work = [(c, X_axis, V_axis, model, control, cfg, seed, N, d, trials) for c in chunks]
    if jobs > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            counts = list(pool.map(_run_cells, work))
    else:
        counts = [_run_cells(w) for w in work]
    succ = np.zeros((len(X_axis), len(V_axis)), dtype=int)
    for chunk, cnt in zip(chunks, counts):
        for (i, j), c in zip(chunk, cnt):
            succ[i, j] = c
    return RegionGrid(X_axis, V_axis, np.full(succ.shape, trials), succ)


# ---------------------------------------------------------------------------
# theory overlays


def theoretical_boundary(X_axis, a: KernelSpec, N: int, variant="theorem2", R=None,
                         gamma=0.0, eta_sup=None):
    """``V0*(X0)``: the square of the threshold side of the region inequality."""
    out = []
    for X0 in np.asarray(X_axis, dtype=float):
        g = threshold_gamma(X0, a, N)
        if variant == "theorem5" and gamma > 0:
            eta = N if eta_sup is None else eta_sup
            g += gamma * N / eta * threshold_gamma(X0, KernelSpec.indicator(R), N)
        elif variant not in ("theorem2", "theorem5"):
            raise ConfigError(f"unknown boundary variant {variant!r}")
        out.append(g * g)
    return np.array(out)


# ---------------------------------------------------------------------------
# contours

# crossed edges per corner mask (bit k set when corner k is at or above the level);
# corners run (i,j), (i+1,j), (i+1,j+1), (i,j+1) and edge k joins corner k to k+1
_SEGMENTS = {
    1: ((3, 0),), 2: ((0, 1),), 3: ((3, 1),), 4: ((1, 2),), 6: ((0, 2),), 7: ((3, 2),),
    8: ((2, 3),), 9: ((2, 0),), 11: ((2, 1),), 12: ((1, 3),), 13: ((1, 0),), 14: ((0, 3),),
}
_SADDLE = {
    # (center at or above the level, center below)
    5: (((0, 1), (2, 3)), ((3, 0), (1, 2))),
    10: (((3, 0), (1, 2)), ((0, 1), (2, 3))),
}


def contour_extract(values, X_axis, V_axis, level=0.8):
    """Marching-squares isolines of ``values[i, j]`` sampled at ``(X_axis[i], V_axis[j])``.

    Returns a list of ``(k, 2)`` arrays of ``(X0, V0)`` vertices.  Saddle
    cells are resolved by the average of their four corners.
    """
    P = np.asarray(values, dtype=float)
    X_axis = np.asarray(X_axis, dtype=float)
    V_axis = np.asarray(V_axis, dtype=float)
    nx, nv = P.shape
    above = P >= level
    corners = ((0, 0), (1, 0), (1, 1), (0, 1))

    def edge_key(i, j, e):
        # canonical id of the lattice edge, shared by neighbouring cells
        a = (i + corners[e][0], j + corners[e][1])
        b = (i + corners[(e + 1) % 4][0], j + corners[(e + 1) % 4][1])
        return (a, b) if a < b else (b, a)

    def point(key):
        (i0, j0), (i1, j1) = key
        p0, p1 = P[i0, j0], P[i1, j1]
        t = (level - p0) / (p1 - p0)
        return (X_axis[i0] + t * (X_axis[i1] - X_axis[i0]), V_axis[j0] + t * (V_axis[j1] - V_axis[j0]))

    segments = []
    for i in range(nx - 1):
        for j in range(nv - 1):
            mask = sum(1 << k for k, (di, dj) in enumerate(corners) if above[i + di, j + dj])
            if mask in (0, 15):
                continue
            if mask in _SADDLE:
                centre = P[i:i + 2, j:j + 2].mean() >= level
                pairs = _SADDLE[mask][0 if centre else 1]
            else:
                pairs = _SEGMENTS[mask]
            for e0, e1 in pairs:
                segments.append((edge_key(i, j, e0), edge_key(i, j, e1)))

    # chain segments through shared edges
    adj = {}
    for s, (a, b) in enumerate(segments):
        adj.setdefault(a, []).append(s)
        adj.setdefault(b, []).append(s)
    used = [False] * len(segments)
    lines = []

    def walk(start_key, s):
        keys = [start_key]
        cur = start_key
        while s is not None and not used[s]:
            used[s] = True
            a, b = segments[s]
            cur = b if a == cur else a
            keys.append(cur)
            s = next((t for t in adj[cur] if not used[t]), None)
        return keys

    starts = sorted(k for k, segs in adj.items() if len(segs) == 1)
    for k in starts:
        if not used[adj[k][0]]:
            lines.append(walk(k, adj[k][0]))
    for s in range(len(segments)):
        if not used[s]:
            lines.append(walk(segments[s][0], s))
    return [np.array([point(k) for k in keys]) for keys in lines]


def superlevel_area(values, X_axis, V_axis, level=0.8, refine=16):
    """Area of ``{p >= level}`` under bilinear interpolation, by midpoint sub-sampling."""
    P = np.asarray(values, dtype=float)
    X_axis = np.asarray(X_axis, dtype=float)
    V_axis = np.asarray(V_axis, dtype=float)
    s = (np.arange(refine) + 0.5) / refine
    area = 0.0
    for i in range(len(X_axis) - 1):
        dx = X_axis[i + 1] - X_axis[i]
        for j in range(len(V_axis) - 1):
            dv = V_axis[j + 1] - V_axis[j]
            c = P[i:i + 2, j:j + 2]
            if np.all(c >= level):
                area += dx * dv
                continue
            if np.all(c < level):
                continue
            u, w = np.meshgrid(s, s, indexing="ij")
            f = (c[0, 0] * (1 - u) * (1 - w) + c[1, 0] * u * (1 - w)
                 + c[1, 1] * u * w + c[0, 1] * (1 - u) * w)
            area += dx * dv * float(np.mean(f >= level))
    return area


def transition_index(column, level=0.5):
    """Index of the first row (in increasing V0) whose probability drops below ``level``; None if none."""
    below = np.flatnonzero(np.asarray(column) < level)
    return int(below[0]) if len(below) else None
