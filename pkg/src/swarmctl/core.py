"""Domain types, interaction kernels, the bilinear form B and the Lyapunov
functionals used throughout the package.

States are stored as ``(N, d)`` float arrays.  Helpers that only touch the
last two axes also accept a leading batch axis, which the region explorer
uses to integrate many trials at once.
"""
from __future__ import annotations

import math
import warnings
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, special
from scipy.sparse.csgraph import connected_components

from .errors import ConfigError, DimensionError, DomainError, SingularConfigurationError

INF = math.inf
SINGULAR_DISTANCE = 1e-12


# ---------------------------------------------------------------------------
# quadrature


def tail_integral(fn: Callable[[float], float], start: float) -> float:
    """Integrate ``fn`` over ``[start, inf)``.

    QUADPACK's QAGI maps the half line onto (0, 1] (the r -> 1/u substitution),
    so slowly decaying tails are handled without truncation.  A tail that
    QUADPACK flags as divergent is reported as ``inf``.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        value, err, _info, *warning = integrate.quad(
            fn, start, np.inf, epsabs=1e-11, epsrel=1e-11, limit=500, full_output=1
        )
    # QUADPACK appends a message when it gives up; a large error estimate then
    # means the tail does not settle (divergent or too slowly decaying)
    if not math.isfinite(value) or (warning and err > 1e-6 * max(1.0, abs(value))):
        return INF
    return float(value)


def finite_integral(fn: Callable[[float], float], lo: float, hi: float) -> float:
    if hi <= lo:
        return 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        value, _ = integrate.quad(fn, lo, hi, epsabs=1e-12, epsrel=1e-11, limit=500)
    return float(value)


# ---------------------------------------------------------------------------
# kernels

_FAMILIES = ("rational", "indicator", "plateau", "custom")
_CONVENTIONS = ("distance", "squared")


@dataclass(frozen=True)
class KernelSpec:
    """Nonincreasing, nonnegative interaction kernel.

    ``convention`` states what the kernel is fed: the pairwise distance
    (Cucker-Smale weights) or the squared distance (Cucker-Dong attraction).
    Use the constructors rather than the raw fields.
    """

    family: str
    H: float = 1.0
    sigma: float = 1.0
    beta: float = 1.0
    R: float = 1.0
    M: float = 1.0
    tail_mass: float = 1.0
    convention: str = "distance"
    fn: Optional[Callable] = field(default=None, compare=False, repr=False)
    table: Optional[tuple] = None

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ConfigError(f"unknown kernel family {self.family!r}", "family")
        if self.convention not in _CONVENTIONS:
            raise ConfigError(f"unknown argument convention {self.convention!r}", "convention")
        if self.family == "rational":
            if not (self.H > 0 and self.sigma > 0 and self.beta >= 0):
                raise ConfigError("rational kernel needs H > 0, sigma > 0, beta >= 0")
        elif self.family == "indicator":
            if not self.R >= 0:
                raise ConfigError("indicator kernel needs R >= 0", "R")
        elif self.family == "plateau":
            if not (self.M > 0 and self.R > 0 and self.tail_mass > 0):
                raise ConfigError("plateau kernel needs M, R, tail_mass > 0")
        elif self.family == "custom" and self.fn is None and self.table is None:
            raise ConfigError("custom kernel needs a callable or a table")
        if self.family in ("indicator", "plateau") and self.convention != "distance":
            raise ConfigError(f"{self.family} kernels are defined on distances", "convention")

    # constructors -------------------------------------------------------
    @classmethod
    def rational(cls, H=1.0, sigma=1.0, beta=1.0, convention="distance"):
        """``H / (sigma^2 + r^2)^beta`` on distances, ``H / (sigma^2 + s)^beta`` on squared distances."""
        return cls("rational", H=float(H), sigma=float(sigma), beta=float(beta), convention=convention)

    @classmethod
    def indicator(cls, R):
        return cls("indicator", R=float(R))

    @classmethod
    def plateau(cls, M, R, tail_mass, tail=None):
        """Constant ``M`` up to ``R``, then a decreasing tail of total mass ``tail_mass``.

        The default tail is ``M exp(-(M / tail_mass) (r - R))``.  A custom
        ``tail`` callable must satisfy ``tail(R) == M`` and integrate to
        ``tail_mass`` on ``[R, inf)``.
        """
        return cls("plateau", M=float(M), R=float(R), tail_mass=float(tail_mass), fn=tail)

    @classmethod
    def custom(cls, fn, convention="distance"):
        return cls("custom", fn=fn, convention=convention)

    @classmethod
    def tabulated(cls, r, values, convention="distance"):
        """Piecewise-linear kernel through ``(r, values)``; zero past the last node."""
        r = tuple(float(x) for x in r)
        values = tuple(float(x) for x in values)
        if len(r) != len(values) or len(r) < 2 or any(b <= a for a, b in zip(r, r[1:])):
            raise ConfigError("tabulated kernel needs >= 2 strictly increasing nodes")
        if any(b > a for a, b in zip(values, values[1:])) or min(values) < 0:
            raise ConfigError("tabulated kernel values must be nonnegative and nonincreasing")
        return cls("custom", table=(r, values), convention=convention)

    # evaluation ---------------------------------------------------------
    def __call__(self, arg):
        """Evaluate on the kernel's own argument (distance or squared distance)."""
        arg = np.asarray(arg, dtype=float)
        fam = self.family
        if fam == "rational":
            base = self.sigma**2 + (arg * arg if self.convention == "distance" else arg)
            return self.H * base ** (-self.beta)
        if fam == "indicator":
            return np.where(arg <= self.R, 1.0, 0.0)
        if fam == "plateau":
            if self.fn is None:
                k = self.M / self.tail_mass
                tail = self.M * np.exp(-k * np.maximum(arg - self.R, 0.0))
            else:
                tail = np.vectorize(self.fn, otypes=[float])(np.maximum(arg, self.R))
            return np.where(arg <= self.R, self.M, tail)
        if self.table is not None:
            r, vals = self.table
            return np.interp(arg, r, vals, left=vals[0], right=0.0)
        return np.vectorize(self.fn, otypes=[float])(arg)

    def scalar(self, arg: float) -> float:
        """Fast evaluation at a single float (used by the two-agent reductions)."""
        if self.family == "rational":
            base = self.sigma * self.sigma + (arg * arg if self.convention == "distance" else arg)
            return self.H * base ** (-self.beta)
        return float(self(arg))

    def from_squared_distance(self, s):
        """Evaluate on distances supplied squared (avoids a square root for rational kernels)."""
        s = np.asarray(s, dtype=float)
        if self.family == "rational":
            base = self.sigma**2 + s
            if self.beta == 1:
                return self.H / base
            return self.H * base ** (-self.beta)
        return self.of_squared(s)

    def of_distance(self, r):
        r = np.asarray(r, dtype=float)
        return self(r) if self.convention == "distance" else self(r * r)

    def of_squared(self, s):
        s = np.asarray(s, dtype=float)
        return self(s) if self.convention == "squared" else self(np.sqrt(s))

    # integrals ----------------------------------------------------------
    def distance_tail(self, rho0: float) -> float:
        """``int_{rho0}^inf a(rho) d rho`` with ``a`` read as a function of distance."""
        rho0 = float(rho0)
        if self.family == "rational":
            if self.beta <= 0.5:
                return INF
            s2 = self.sigma**2
            t0 = s2 / (s2 + rho0 * rho0)
            a, b = self.beta - 0.5, 0.5
            return float(self.H * self.sigma ** (1 - 2 * self.beta) / 2 * special.betainc(a, b, t0) * special.beta(a, b))
        if self.family == "indicator":
            if math.isinf(self.R):
                return INF
            return max(0.0, self.R - rho0)
        if self.family == "plateau" and self.fn is None:
            if rho0 <= self.R:
                return self.M * (self.R - rho0) + self.tail_mass
            return self.tail_mass * math.exp(-(self.M / self.tail_mass) * (rho0 - self.R))
        if self.family == "plateau":
            head = self.M * max(0.0, self.R - rho0)
            return head + tail_integral(lambda r: float(self.fn(r)), max(rho0, self.R))
        if self.table is not None:
            r, _ = self.table
            return finite_integral(lambda x: float(self.of_distance(x)), rho0, r[-1])
        return tail_integral(lambda x: float(self.of_distance(x)), rho0)

    def squared_integral(self, s_hi: float = INF) -> float:
        """``int_0^{s_hi} a(s) ds`` with ``a`` read as a function of squared distance."""
        if self.family == "rational":
            h, b, c = self.H, self.beta, self.sigma**2
            if math.isinf(s_hi):
                return INF if b <= 1 else h * c ** (1 - b) / (b - 1)
            if b == 1:
                return h * math.log((c + s_hi) / c)
            return h * ((c + s_hi) ** (1 - b) - c ** (1 - b)) / (1 - b)
        fn = lambda s: float(self.of_squared(s))
        if math.isinf(s_hi):
            return tail_integral(fn, 0.0)
        return finite_integral(fn, 0.0, s_hi)

    @property
    def is_integrable(self) -> bool:
        return math.isfinite(self.distance_tail(0.0))


@dataclass(frozen=True)
class RepulsionSpec:
    """Repulsion ``f`` acting on squared distances: ``s^-p`` or a custom callable."""

    p: Optional[float] = 2.0
    fn: Optional[Callable] = field(default=None, compare=False, repr=False)
    zero: bool = False

    def __post_init__(self):
        if self.zero:
            return
        if self.fn is None:
            if self.p is None or not self.p > 1:
                raise ConfigError("power-law repulsion needs p > 1", "p")
        else:
            for delta in (0.1, 1.0, 10.0):
                if not math.isfinite(tail_integral(lambda s: float(self.fn(s)), delta)):
                    raise ConfigError(f"repulsion tail integral diverges from {delta}")

    @classmethod
    def power(cls, p):
        return cls(p=float(p))

    @classmethod
    def none(cls):
        return cls(p=None, zero=True)

    @classmethod
    def custom(cls, fn):
        return cls(p=None, fn=fn)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.zero:
            return np.zeros_like(s)
        if self.fn is None:
            return s ** (-self.p)
        return np.vectorize(self.fn, otypes=[float])(s)

    def tail(self, s: float) -> float:
        """``int_s^inf f(r) dr``."""
        if self.zero:
            return 0.0
        if self.fn is None:
            return s ** (1 - self.p) / (self.p - 1)
        return tail_integral(lambda r: float(self.fn(r)), s)


@dataclass(frozen=True)
class FrictionSpec:
    """Friction coefficients ``b_i(t)`` bounded by ``Lambda``.

    ``b`` may be None (no friction), a scalar or per-agent sequence (constant
    in time) or a callable ``t -> array of N``.
    """

    Lambda: float = 0.0
    b: object = None

    def __post_init__(self):
        if self.Lambda < 0:
            raise ConfigError("friction bound Lambda must be nonnegative", "Lambda")

    def __call__(self, t, N):
        if self.b is None:
            return np.zeros(N)
        vals = self.b(t) if callable(self.b) else self.b
        return np.broadcast_to(np.asarray(vals, dtype=float), (N,))

    @property
    def is_zero(self):
        return self.b is None

    def check(self, times, N):
        for t in times:
            vals = self(t, N)
            if np.any(vals < 0) or np.any(vals > self.Lambda):
                raise ConfigError(f"friction outside [0, {self.Lambda}] at t={t}", "b")


# ---------------------------------------------------------------------------
# states


@dataclass
class AgentState:
    """Positions ``x`` and velocities (or opinions) ``v``, both ``(N, d)``."""

    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.x = np.array(self.x, dtype=float)
        self.v = np.array(self.v, dtype=float)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        if self.v.ndim == 1:
            self.v = self.v[:, None]
        if self.x.ndim != 2 or self.x.shape != self.v.shape:
            raise DimensionError(f"x {self.x.shape} and v {self.v.shape} must both be (N, d)")
        if self.x.shape[0] < 1 or self.x.shape[1] < 1:
            raise DimensionError("need N >= 1 and d >= 1")

    @classmethod
    def from_flat(cls, x, v, N, d):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if x.size != N * d or v.size != N * d:
            raise DimensionError(f"flat vectors must have N*d = {N * d} entries")
        return cls(x.reshape(N, d), v.reshape(N, d))

    @property
    def N(self):
        return self.x.shape[0]

    @property
    def d(self):
        return self.x.shape[1]

    def copy(self):
        return AgentState(self.x.copy(), self.v.copy())


def _check_pair(v, w):
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    if v.shape != w.shape or v.ndim < 2:
        raise DimensionError(f"shapes {v.shape} and {w.shape} are not matching (N, d) arrays")
    return v, w


def perp_decompose(v):
    """Split ``v`` into its consensus part (every row the mean) and zero-mean part."""
    v = np.asarray(v, dtype=float)
    if v.ndim < 2:
        raise DimensionError("expected an (N, d) array")
    mean = v.mean(axis=-2, keepdims=True)
    return np.broadcast_to(mean, v.shape).copy(), v - mean


def bilinear_b(v, w):
    """Symmetric form ``(1/2N^2) sum_ij (v_i - v_j).(w_i - w_j)``.

    Evaluated as ``(1/N) sum_i vp_i . wp_i`` on the zero-mean parts, which is
    the same quantity without the cancellation of the mean-product form.
    """
    v, w = _check_pair(v, w)
    vp = v - v.mean(axis=-2, keepdims=True)
    wp = w - w.mean(axis=-2, keepdims=True)
    return np.sum(vp * wp, axis=(-2, -1)) / v.shape[-2]


def spread(v):
    """``B(v, v)`` for (possibly batched) arrays."""
    vp = v - v.mean(axis=-2, keepdims=True)
    return np.sum(vp * vp, axis=(-2, -1)) / v.shape[-2]


def functionals_xv(state: AgentState):
    return float(spread(state.x)), float(spread(state.v))


@lru_cache(maxsize=64)
def upper_pairs(N):
    """Cached ``np.triu_indices(N, 1)``."""
    return np.triu_indices(N, k=1)


@lru_cache(maxsize=64)
def identity_mask(N):
    return np.eye(N, dtype=bool)


def pairwise_squared(x):
    """Squared distances ``|x_i - x_j|^2`` for ``(..., N, d)`` arrays (exact zeros on the diagonal)."""
    x = np.asarray(x, dtype=float)
    out = 0.0
    for k in range(x.shape[-1]):
        c = x[..., k]
        diff = c[..., :, None] - c[..., None, :]
        out = out + diff * diff
    return out


def energy_parts(state: AgentState, a: KernelSpec, f: RepulsionSpec):
    """Kinetic, attraction and repulsion energy of a Cucker-Dong state.

    The potentials are summed once over every unordered pair, i.e. half the
    sum over ordered pairs; with this weighting the energy is exactly
    conserved by the frictionless, uncontrolled dynamics.
    """
    kinetic = float(np.sum(state.v**2))
    N = state.N
    if N < 2:
        return kinetic, 0.0, 0.0
    s = pairwise_squared(state.x)[upper_pairs(N)]
    if np.min(np.sqrt(s)) < SINGULAR_DISTANCE:
        raise SingularConfigurationError("coincident agents: repulsion energy is singular")
    if a.family == "rational":
        h, b, c = a.H, a.beta, a.sigma**2
        if b == 1:
            attraction = h * np.log((c + s) / c)
        else:
            attraction = h * ((c + s) ** (1 - b) - c ** (1 - b)) / (1 - b)
        attraction = float(np.sum(attraction))
    else:
        attraction = float(sum(a.squared_integral(si) for si in s))
    if f.zero:
        repulsion = 0.0
    elif f.fn is None:
        repulsion = float(np.sum(s ** (1 - f.p)) / (f.p - 1))
    else:
        repulsion = float(sum(f.tail(si) for si in s))
    return kinetic, attraction, repulsion


def total_energy(state: AgentState, a: KernelSpec, f: RepulsionSpec) -> float:
    return sum(energy_parts(state, a, f))


# ---------------------------------------------------------------------------
# consensus-region thresholds


def threshold_gamma(X: float, a: KernelSpec, N: int) -> float:
    """``int_{sqrt X}^inf a(sqrt(2N) r) dr``; ``inf`` for non-integrable kernels."""
    if X < 0:
        raise DomainError(f"X must be nonnegative, got {X}")
    scale = math.sqrt(2 * N)
    tail = a.distance_tail(scale * math.sqrt(X))
    return tail / scale


@dataclass(frozen=True)
class RegionCertificate:
    X0: float
    V0: float
    threshold: float
    inside: bool


def _certificate(X0, V0, threshold):
    return RegionCertificate(float(X0), float(V0), threshold, bool(threshold >= math.sqrt(V0)))


def cs_region_check(X0: float, V0: float, a: KernelSpec, N: int) -> RegionCertificate:
    if X0 < 0 or V0 < 0:
        raise DomainError("X0 and V0 must be nonnegative")
    return _certificate(X0, V0, threshold_gamma(X0, a, N))


def cs_region_check_extended(X0, V0, a: KernelSpec, N: int, gamma_strength: float,
                             psi: KernelSpec, eta_sup: float) -> RegionCertificate:
    """Region certificate for the local-average feedback of strength ``gamma_strength``.

    ``psi`` is the feedback's interaction cut-off (``KernelSpec.indicator(R)``
    for the ball of radius R) and ``eta_sup`` the sup of its normalisation.
    """
    if X0 < 0 or V0 < 0:
        raise DomainError("X0 and V0 must be nonnegative")
    if gamma_strength < 0:
        raise ConfigError("feedback strength must be nonnegative", "gamma")
    if not 0 < eta_sup <= N:
        raise ConfigError("eta_sup must lie in (0, N]", "eta_sup")
    base = threshold_gamma(X0, a, N)
    if gamma_strength == 0:
        return _certificate(X0, V0, base)
    extra = gamma_strength * N / eta_sup * threshold_gamma(X0, psi, N)
    return _certificate(X0, V0, base + extra)


def cd_threshold_vartheta(a: KernelSpec, N: int) -> float:
    """Critical energy ``(N-1)/2 * int_0^inf a(s) ds`` (``inf`` when ``a`` is not integrable)."""
    integral = a.squared_integral()
    return INF if math.isinf(integral) else (N - 1) / 2 * integral


def cd_condition_b_constant(state0: AgentState, M: float, Lambda: float, a: KernelSpec,
                            f: RepulsionSpec):
    """Return ``(c, satisfied)`` for the energy window ``c*theta > E(0) > theta``.

    ``c`` is None when the mean velocity vanishes.
    """
    N = state0.N
    vbar = float(np.linalg.norm(state0.v.mean(axis=0)))
    if vbar <= 1e-14 * max(1.0, float(np.max(np.abs(state0.v)))):
        vbar = 0.0
    E0 = total_energy(state0, a, f)
    theta = cd_threshold_vartheta(a, N)
    if vbar == 0 or E0 <= 0:
        return None, False
    if M == 0:
        c = 1.0
    else:
        denom = E0 * math.sqrt(E0) * (Lambda * math.sqrt(E0) + M / N)
        c = math.exp(-(2 * math.sqrt(3) / 9) * M * vbar**3 / denom)
    return c, bool(c * theta > E0 > theta)


# ---------------------------------------------------------------------------
# communication graph


@dataclass(frozen=True)
class EpsilonGraph:
    edges: tuple
    strongly_connected: bool


def epsilon_graph(weights, eps: float) -> EpsilonGraph:
    """Directed graph with an edge ``(i, j)`` wherever ``g_ij > eps``."""
    g = np.asarray(weights, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise DimensionError("weights must be a square matrix")
    adj = g > eps
    edges = tuple((int(i), int(j)) for i, j in zip(*np.nonzero(adj)))
    n = g.shape[0]
    if n == 1:
        return EpsilonGraph(edges, True)
    ncomp, _ = connected_components(adj.astype(np.int8), directed=True, connection="strong")
    return EpsilonGraph(edges, ncomp == 1)
