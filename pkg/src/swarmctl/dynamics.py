"""Right-hand sides for every model in the package.

Each evaluator is a pure map ``(t, x, v, u) -> (dx, dv)`` on arrays shaped
``(..., N, d)``; the leading axes are an optional batch of independent
systems.  First-order models (graph, Hegselmann-Krause) keep the opinion in
the ``v`` slot and return ``dx = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (
    SINGULAR_DISTANCE,
    FrictionSpec,
    KernelSpec,
    RepulsionSpec,
    cd_threshold_vartheta,
    identity_mask,
    pairwise_squared,
    upper_pairs,
    spread,
)
from .errors import ConfigError, DimensionError, SingularConfigurationError

VARIANTS = (
    "graph",
    "hegselmann_krause",
    "vicsek",
    "cucker_smale",
    "perturbed_cs",
    "cucker_dong",
    "cs_pair",
    "cd_pair",
)


def _coefficient(c, t):
    return float(c(t)) if callable(c) else float(c)


def _neighbours(dist2, R):
    """Indicator of ``dist <= R`` (self included) from squared distances."""
    return (dist2 <= R * R).astype(float)


# ---------------------------------------------------------------------------
# evaluators


def graph_rhs(t, v, g):
    """``dv_i = sum_j g_ij (v_j - v_i)``; ``g`` is a matrix or ``t -> matrix``."""
    v = np.asarray(v, dtype=float)
    G = np.asarray(g(t) if callable(g) else g, dtype=float)
    if G.shape[-2:] != (v.shape[-2], v.shape[-2]):
        raise DimensionError(f"weight matrix {G.shape} does not match N={v.shape[-2]}")
    return G @ v - G.sum(axis=-1)[..., None] * v


def hk_rhs(t, v, R):
    """Bounded-confidence averaging over opinions within distance ``R``."""
    v = np.asarray(v, dtype=float)
    chi = _neighbours(pairwise_squared(v), R)
    count = chi.sum(axis=-1)[..., None]
    return (chi @ v - count * v) / count


def vicsek_rhs(t, x, theta, R, speed):
    """Constant-speed headings aligned with neighbours (planar positions)."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if x.shape[-1] != 2:
        raise DimensionError("the Vicsek model is planar (d = 2)")
    dx = speed * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    chi = _neighbours(pairwise_squared(x), R)
    count = chi.sum(axis=-1)
    dtheta = (np.einsum("...ij,...j->...i", chi, theta) - count * theta) / count
    return dx, dtheta


def cs_rhs(t, x, v, a: KernelSpec, u=None):
    """Cucker-Smale alignment ``dv_i = (1/N) sum_j a(|x_i - x_j|)(v_j - v_i) + u_i``."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    N = x.shape[-2]
    A = a.from_squared_distance(pairwise_squared(x))
    dv = (A @ v - A.sum(axis=-1)[..., None] * v) / N
    if u is not None:
        dv = dv + u
    return v.copy(), dv


def perturbed_cs_rhs(t, x, v, a: KernelSpec, alpha, beta, delta: Optional[Callable]):
    """Cucker-Smale plus ``alpha(t)(vbar - v_i) + beta(t) Delta_i``.

    ``delta(x, v)`` returns the deviation array; None means ``Delta = 0``.
    """
    dx, dv = cs_rhs(t, x, v, a)
    al = _coefficient(alpha, t)
    if al:
        dv = dv + al * (v.mean(axis=-2, keepdims=True) - v)
    if delta is not None:
        be = _coefficient(beta, t)
        if be:
            dv = dv + be * delta(x, v)
    return dx, dv


def cd_forces(x, a: KernelSpec, f: RepulsionSpec):
    """Attraction plus repulsion acceleration on each agent."""
    x = np.asarray(x, dtype=float)
    N = x.shape[-2]
    s = pairwise_squared(x)
    eye = identity_mask(N)
    if N > 1 and not f.zero:
        if np.min(s[..., upper_pairs(N)[0], upper_pairs(N)[1]]) < SINGULAR_DISTANCE**2:
            raise SingularConfigurationError("coincident agents in a repulsive model")
    A = a.of_squared(s)
    if f.zero:
        K = A
    else:
        Fm = np.where(eye, 0.0, f(np.where(eye, 1.0, s)))
        K = A - Fm
    # sum_j K_ij (x_j - x_i)
    return K @ x - K.sum(axis=-1)[..., None] * x


def cd_rhs(t, x, v, a: KernelSpec, f: RepulsionSpec, b: FrictionSpec, u=None):
    """Cucker-Dong attraction-repulsion with friction and optional control."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    dv = cd_forces(x, a, f)
    if not b.is_zero:
        dv = dv - b(t, x.shape[-2])[:, None] * v
    if u is not None:
        dv = dv + u
    return v.copy(), dv


def cs_pair_rhs(t, x, v, a: KernelSpec, u=None):
    """Two-agent Cucker-Smale in relative coordinates: ``x' = v``, ``v' = -a(|x|) v``."""
    if isinstance(x, float):
        r = abs(x) if a.convention == "distance" else x * x
        return v, -a.scalar(r) * v + (u or 0.0)
    dv = -a.of_distance(np.abs(x)) * v
    if u is not None:
        dv = dv + u
    return v.copy(), dv


def cd_pair_rhs(t, x, v, a: KernelSpec, f: RepulsionSpec, u=None):
    """Two-agent Cucker-Dong in relative coordinates: ``v' = -a(x^2) x + f(x^2) x``."""
    s = x * x
    if isinstance(x, float):
        r = s if a.convention == "squared" else abs(x)
        dv = -a.scalar(r) * x + (0.0 if f.zero else float(f(s)) * x)
        return v, dv + (u or 0.0)
    dv = -a.of_squared(s) * x
    if not f.zero:
        dv = dv + f(s) * x
    if u is not None:
        dv = dv + u
    return v.copy(), dv


# ---------------------------------------------------------------------------
# model specification


@dataclass(frozen=True)
class ModelSpec:
    """A model variant with its parameters; build it with the classmethods."""

    variant: str
    kernel: Optional[KernelSpec] = None
    repulsion: RepulsionSpec = field(default_factory=RepulsionSpec.none)
    friction: FrictionSpec = field(default_factory=FrictionSpec)
    R: float = 1.0
    speed: float = 1.0
    weights: object = field(default=None, compare=False)
    alpha: object = field(default=0.0, compare=False)
    beta: object = field(default=0.0, compare=False)
    delta: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown model variant {self.variant!r}", "model.variant")
        if self.variant in ("hegselmann_krause", "vicsek") and not self.R > 0:
            raise ConfigError("interaction radius R must be positive", "model.R")
        if self.variant == "vicsek" and not self.speed > 0:
            raise ConfigError("Vicsek speed must be positive", "model.speed")
        if self.variant in ("cucker_smale", "perturbed_cs", "cucker_dong", "cs_pair", "cd_pair"):
            if self.kernel is None:
                raise ConfigError(f"{self.variant} needs an interaction kernel", "model.kernel")
        if self.variant == "graph" and self.weights is None:
            raise ConfigError("graph model needs weights", "model.weights")
        for name in ("alpha", "beta"):
            c = getattr(self, name)
            if not callable(c) and c < 0:
                raise ConfigError(f"{name} must be nonnegative", f"model.{name}")

    # constructors -------------------------------------------------------
    @classmethod
    def graph(cls, weights):
        return cls("graph", weights=weights)

    @classmethod
    def hegselmann_krause(cls, R):
        return cls("hegselmann_krause", R=float(R))

    @classmethod
    def vicsek(cls, R, speed):
        """Headings live in ``v[:, 0]``; ``v[:, 1]`` is unused and stays zero."""
        return cls("vicsek", R=float(R), speed=float(speed))

    @classmethod
    def cucker_smale(cls, a):
        return cls("cucker_smale", kernel=a)

    @classmethod
    def perturbed_cs(cls, a, alpha, beta, delta):
        return cls("perturbed_cs", kernel=a, alpha=alpha, beta=beta, delta=delta)

    @classmethod
    def cucker_dong(cls, a, f, friction=None):
        return cls("cucker_dong", kernel=a, repulsion=f, friction=friction or FrictionSpec())

    @classmethod
    def cs_pair(cls, a):
        return cls("cs_pair", kernel=a)

    @classmethod
    def cd_pair(cls, a, f=None):
        return cls("cd_pair", kernel=a, repulsion=f or RepulsionSpec.none())

    # properties ---------------------------------------------------------
    @property
    def is_pair(self):
        return self.variant in ("cs_pair", "cd_pair")

    @property
    def is_alignment(self):
        return self.variant in ("cucker_smale", "perturbed_cs", "cs_pair")

    @property
    def is_cucker_dong(self):
        return self.variant in ("cucker_dong", "cd_pair")

    def agent_count(self, N):
        """Number of physical agents represented by a state with ``N`` rows."""
        return 2 if self.is_pair else N

    def rhs(self, t, x, v, u=None):
        var = self.variant
        if var == "cucker_smale":
            return cs_rhs(t, x, v, self.kernel, u)
        if var == "cucker_dong":
            return cd_rhs(t, x, v, self.kernel, self.repulsion, self.friction, u)
        if var == "perturbed_cs":
            dx, dv = perturbed_cs_rhs(t, x, v, self.kernel, self.alpha, self.beta, self.delta)
            return dx, dv if u is None else dv + u
        if var == "cs_pair":
            return cs_pair_rhs(t, x, v, self.kernel, u)
        if var == "cd_pair":
            return cd_pair_rhs(t, x, v, self.kernel, self.repulsion, u)
        if var == "vicsek":
            dx, dth = vicsek_rhs(t, x, v[..., 0], self.R, self.speed)
            dv = np.zeros_like(v)
            dv[..., 0] = dth
            return dx, dv
        if var == "hegselmann_krause":
            dv = hk_rhs(t, v, self.R)
        else:
            dv = graph_rhs(t, v, self.weights)
        if u is not None:
            dv = dv + u
        return np.zeros_like(x), dv

    def functionals(self, x, v):
        """``(X, V)``; pair variants report the functionals of the two-agent system."""
        if self.is_pair:
            if isinstance(x, float):
                return x * x / 4, v * v / 4
            return (np.sum(x * x, axis=(-2, -1)) / 4, np.sum(v * v, axis=(-2, -1)) / 4)
        return spread(x), spread(v)

    def energy(self, x, v):
        """Total energy of Cucker-Dong states (pair variant: ``v^2/2 + potential``)."""
        from .core import AgentState, total_energy

        if self.variant == "cd_pair":
            s = float(np.sum(x * x))
            pot = self.kernel.squared_integral(s) / 2
            if not self.repulsion.zero:
                pot += self.repulsion.tail(s) / 2
            return float(np.sum(v * v)) / 2 + pot
        return total_energy(AgentState(x, v), self.kernel, self.repulsion)

    def vartheta(self, N):
        return cd_threshold_vartheta(self.kernel, self.agent_count(N))


def cd_pair_escape_level(x, beta):
    """``Psi(x) = 1 / ((beta - 1)(1 + x^2)^(beta - 1))``; ``v^2 >= Psi(x)`` means escape."""
    if beta <= 1:
        return math.inf
    return 1.0 / ((beta - 1) * (1 + x * x) ** (beta - 1))
