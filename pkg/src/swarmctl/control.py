"""Control and perturbation laws.

Two kinds of law live here.  *External* laws (total, sparse Cucker-Smale,
sparse Cucker-Dong) are admissible controls ``u`` with ``sum_i |u_i| <= M``;
the integrator recomputes them on a sample-and-hold grid.  *Decentralised*
laws (leader, structured, local average) are feedback terms of the
perturbed Cucker-Smale system and are evaluated at every Runge-Kutta stage.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import KernelSpec, pairwise_squared, spread, threshold_gamma
from .errors import ConfigError, DimensionError

TIE_RTOL = 1e-9
ZERO_DIRECTION = 1e-14

LAWS = ("none", "total", "sparse_cs", "sparse_cd", "leader", "structured", "local_average")
EXTERNAL = ("total", "sparse_cs", "sparse_cd")
STAGEWISE = ("leader", "structured", "local_average")


def perp(v):
    return v - v.mean(axis=-2, keepdims=True)


def block_norms(u):
    return np.linalg.norm(u, axis=-1)


def control_mass(u):
    """``sum_i |u_i|`` (mixed l1-l2 norm)."""
    return np.sum(block_norms(u), axis=-1)


# ---------------------------------------------------------------------------
# partitions


@dataclass(frozen=True)
class PartitionLabel:
    value: str
    indices: tuple = ()


def _classify(norms, threshold):
    m = float(np.max(norms))
    scale = max(m, abs(threshold)) if math.isfinite(threshold) else m
    tie = TIE_RTOL * scale
    if math.isfinite(threshold) and abs(m - threshold) <= tie:
        return PartitionLabel("P2", tuple(int(i) for i in np.flatnonzero(norms >= m - TIE_RTOL * m)))
    if m < threshold:
        return PartitionLabel("P1")
    top = tuple(int(i) for i in np.flatnonzero(norms >= m - TIE_RTOL * m))
    return PartitionLabel("P3" if len(top) == 1 else "P4", top)


def classify_partition_cs(x, v, a: KernelSpec) -> PartitionLabel:
    """Compare ``max_i |v_i^perp|`` with the squared threshold ``gamma(X)^2``."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    g = threshold_gamma(float(spread(x)), a, x.shape[0])
    return _classify(block_norms(perp(v)), g * g)


def classify_partition_cd(v, eta: float) -> PartitionLabel:
    """Same four-way split, on raw speeds against ``eta``."""
    if eta < 0:
        raise ConfigError("eta must be nonnegative", "eta")
    return _classify(block_norms(np.asarray(v, dtype=float)), float(eta))


# ---------------------------------------------------------------------------
# external laws


def total_control(v, alpha):
    """``u = -alpha v^perp``."""
    return -alpha * perp(np.asarray(v, dtype=float))


def total_control_bound(M, N, V0):
    """Largest admissible gain ``M / (N sqrt(V0))``."""
    return math.inf if V0 == 0 else M / (N * math.sqrt(V0))


def _unit_push(v_rows, index, magnitude, shape):
    u = np.zeros(shape)
    n = float(np.linalg.norm(v_rows[index]))
    if n < ZERO_DIRECTION:
        return u
    u[index] = -magnitude * v_rows[index] / n
    return u


def sparse_control_cs(x, v, M, a: KernelSpec):
    """Full budget on the agent farthest from the mean, or zero inside the threshold.

    Returns ``(u, index)`` with ``index = -1`` when the control is off.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    vp = perp(v)
    norms = block_norms(vp)
    g = threshold_gamma(float(spread(x)), a, x.shape[0])
    if float(np.max(norms)) <= g * g:
        return np.zeros_like(v), -1
    label = _classify(norms, g * g)
    idx = label.indices[0]
    u = _unit_push(vp, idx, M, v.shape)
    return u, (idx if np.any(u) else -1)


def _epsilon_form(u, directions, tol):
    """Recover ``eps_i >= 0`` with ``u_i = -eps_i d_i/|d_i|``; None if ``u`` is not of that form."""
    eps = np.zeros(u.shape[0])
    for i, (ui, di) in enumerate(zip(u, directions)):
        n = np.linalg.norm(di)
        if n < ZERO_DIRECTION:
            if np.linalg.norm(ui) > tol:
                return None
            continue
        e = -float(ui @ di) / n
        if e < -tol or np.linalg.norm(ui + e * di / n) > tol:
            return None
        eps[i] = max(e, 0.0)
    return eps


def variational_membership_cs(u, x, v, M, a: KernelSpec) -> bool:
    """Whether ``u`` lies in the set selected by the variational principle at ``(x, v)``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise DimensionError("control and state shapes differ")
    tol = 1e-9 * max(1.0, M)
    eps = _epsilon_form(u, perp(v), tol)
    if eps is None or eps.sum() > M + tol:
        return False
    label = classify_partition_cs(x, v, a)
    outside = np.ones(len(eps), dtype=bool)
    outside[list(label.indices)] = False
    if label.value == "P1":
        return bool(np.all(eps <= tol))
    if np.any(eps[outside] > tol):
        return False
    if label.value == "P2":
        return True
    if label.value == "P3":
        return abs(eps[label.indices[0]] - M) <= tol
    return abs(eps.sum() - M) <= tol


def sample_admissible_controls(v, M, k, rng, directions=None):
    """``k`` random controls with ``sum_i |u_i| <= M``.

    Even draws use the epsilon form ``-eps_i d_i/|d_i|`` along ``directions``
    (default ``v^perp``) and odd draws use uniformly random directions; the
    budgets are split by a flat Dirichlet draw and scaled by a uniform factor,
    with every fourth draw spending the full budget.
    """
    v = np.asarray(v, dtype=float)
    N, d = v.shape
    dirs = perp(v) if directions is None else np.asarray(directions, dtype=float)
    n = block_norms(dirs)
    unit = np.divide(dirs, n[:, None], out=np.zeros_like(dirs), where=n[:, None] > ZERO_DIRECTION)
    out = np.empty((k, N, d))
    for s in range(k):
        eps = rng.dirichlet(np.ones(N)) * M * (1.0 if s % 4 == 0 else rng.uniform())
        if s % 2 == 0:
            out[s] = -eps[:, None] * unit
        else:
            g = rng.standard_normal((N, d))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            out[s] = eps[:, None] * g
    return out


def sparse_optimality_check_cs(x, v, M, a: KernelSpec, k, rng) -> bool:
    """Check ``B(u_sparse, v) <= B(u, v) + 1e-12`` against ``k`` sampled admissible ``u``.

    At a P3 state the variational set is a single point, so the competitors
    are drawn from the larger admissible set, which contains it.
    """
    from .core import bilinear_b

    v = np.asarray(v, dtype=float)
    label = classify_partition_cs(x, v, a)
    if label.value not in ("P1", "P3"):
        raise ConfigError(f"optimality check needs a P1 or P3 state, got {label.value}")
    u_sparse, _ = sparse_control_cs(x, v, M, a)
    if label.value == "P1":
        return bool(np.all(u_sparse == 0))
    best = float(bilinear_b(u_sparse, v))
    comp = sample_admissible_controls(v, M, k, rng)
    return bool(np.all(best <= bilinear_b(comp, np.broadcast_to(v, comp.shape)) + 1e-12))


def sparse_control_cd(v, M, E0, eps, E):
    """``u = -eps E v_i/|v_i|`` on the fastest agent (smallest index among ties).

    ``E`` is the current total energy.  Returns ``(u, index)``.
    """
    v = np.asarray(v, dtype=float)
    if eps < 0 or eps > M / E0 * (1 + 1e-12):
        raise ConfigError(f"epsilon must lie in [0, M/E0] = [0, {M / E0}]", "control.epsilon")
    speeds = block_norms(v)
    if float(np.max(speeds)) < ZERO_DIRECTION:
        return np.zeros_like(v), -1
    idx = _classify(speeds, 0.0).indices[0]
    return _unit_push(v, idx, eps * E, v.shape), idx


def j_functional(u, v, eta):
    """``J(u, v) = sum_i v_i . u_i + eta sum_i |u_i|``."""
    u = np.asarray(u, dtype=float)
    return np.sum(u * v, axis=(-2, -1)) + eta * control_mass(u)


@dataclass(frozen=True)
class JMinimum:
    u: np.ndarray
    J: float
    sampled_min: float
    verified: bool


def j_functional_minimize(v, M, E0, eta, E, k, rng) -> JMinimum:
    """Analytic minimiser of ``J`` over ``sum |u_i| <= M E / E0``, checked by sampling."""
    v = np.asarray(v, dtype=float)
    m = M * E / E0
    speeds = block_norms(v)
    top = float(np.max(speeds))
    if top <= eta or top < ZERO_DIRECTION:
        u = np.zeros_like(v)
    else:
        u = _unit_push(v, _classify(speeds, eta).indices[0], m, v.shape)
    J = float(j_functional(u, v, eta))
    if k > 0:
        samples = sample_admissible_controls(v, m, k, rng, directions=v)
        sampled = float(np.min(j_functional(samples, v, eta)))
    else:
        sampled = math.inf
    return JMinimum(u, J, sampled, bool(J <= sampled + 1e-9))


# ---------------------------------------------------------------------------
# decentralised deviations


def leader_p(q):
    """Conjugate exponent ``p`` with ``1/p + 1/q = 1``."""
    if not q > 1 or math.isinf(q):
        raise ConfigError("leader exponent q must be finite and > 1", "control.q")
    return q / (q - 1)


def delta_leader(v, p, q):
    """``Delta_i = v_i^perp / p + v_1^perp / q`` (agent 0 leads)."""
    if not (p > 1 and q > 1) or abs(1 / p + 1 / q - 1) > 1e-12:
        raise ConfigError("leader exponents need 1/p + 1/q = 1 with p, q > 1")
    vp = perp(np.asarray(v, dtype=float))
    return vp / p + vp[..., :1, :] / q


def delta_structured(x, v, phi: KernelSpec, mode="per_agent"):
    """``Delta_i = sum_j phi(|x_i - x_j|) v_j^perp / eta_i``.

    ``mode`` is ``per_agent`` (``eta_i = sum_j phi_ij``) or ``max``
    (one ``eta`` equal to the largest row sum).
    """
    W = phi.of_distance(np.sqrt(pairwise_squared(np.asarray(x, dtype=float))))
    if np.any(W <= 0):
        raise ConfigError("structured weights need phi > 0 everywhere", "control.phi")
    rows = W.sum(axis=-1, keepdims=True)
    if mode == "per_agent":
        eta = rows
    elif mode == "max":
        eta = rows.max(axis=-2, keepdims=True)
    else:
        raise ConfigError(f"unknown eta mode {mode!r}", "control.eta_mode")
    return (W @ perp(np.asarray(v, dtype=float))) / eta


def _local_counts(x, R):
    chi = (pairwise_squared(np.asarray(x, dtype=float)) <= R * R).astype(float)
    return chi, chi.sum(axis=-1).max(axis=-1)


def delta_local_average(x, v, R):
    """``Delta_i = (1/eta_R) sum_j (1 - chi_R(|x_i - x_j|)) (v_i - v_j)``.

    ``eta_R`` is the largest neighbourhood count.  ``R = inf`` gives zero.
    """
    v = np.asarray(v, dtype=float)
    if math.isinf(R):
        return np.zeros_like(v)
    if R < 0:
        raise ConfigError("radius must be nonnegative", "control.R")
    chi, eta = _local_counts(x, R)
    far = 1.0 - chi
    out = far.sum(axis=-1)[..., None] * v - far @ v
    return out / np.asarray(eta)[..., None, None]


def local_average_feedback(x, v, gamma, R):
    """``gamma (N/eta_R)(vbar - v_i) + gamma Delta_i``: the full local-average term."""
    v = np.asarray(v, dtype=float)
    if math.isinf(R):
        return gamma * (v.mean(axis=-2, keepdims=True) - v)
    chi, eta = _local_counts(x, R)
    # N (vbar - v_i) + sum_j (1 - chi_ij)(v_i - v_j) = sum_j chi_ij (v_j - v_i)
    near = chi @ v - chi.sum(axis=-1)[..., None] * v
    return gamma * near / np.asarray(eta)[..., None, None]


# ---------------------------------------------------------------------------
# specification


@dataclass(frozen=True)
class ControlSpec:
    """Active law and its parameters.

    ``M`` is the control budget (None: no budget is monitored).  For the
    sparse Cucker-Dong law ``epsilon = None`` means ``M / E(0)``.  The leader
    law is parametrised by ``q``; ``p`` follows from ``1/p + 1/q = 1``.
    ``sample_hold_dt = None`` recomputes external laws every step.
    """

    law: str = "none"
    M: Optional[float] = None
    alpha: float = 0.0
    gamma: float = 0.0
    epsilon: Optional[float] = None
    eta: float = 0.0
    q: float = 2.0
    R: float = math.inf
    phi: Optional[KernelSpec] = None
    eta_mode: str = "per_agent"
    sample_hold_dt: Optional[float] = None

    def __post_init__(self):
        if self.law not in LAWS:
            raise ConfigError(f"unknown control law {self.law!r}", "control.law")
        for name in ("alpha", "gamma", "eta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative", f"control.{name}")
        if self.M is not None and self.M < 0:
            raise ConfigError("M must be nonnegative", "control.M")
        if self.epsilon is not None and self.epsilon < 0:
            raise ConfigError("epsilon must be nonnegative", "control.epsilon")
        if self.law in ("total", "sparse_cs", "sparse_cd") and self.M is None:
            raise ConfigError(f"{self.law} needs a budget M", "control.M")
        if self.law == "leader":
            leader_p(self.q)
        if self.law == "structured" and self.phi is None:
            raise ConfigError("structured law needs a weight function phi", "control.phi")
        if self.law == "local_average" and self.R < 0:
            raise ConfigError("radius must be nonnegative", "control.R")
        if self.sample_hold_dt is not None and not self.sample_hold_dt > 0:
            raise ConfigError("sample_hold_dt must be positive", "control.sample_hold_dt")

    @property
    def is_external(self):
        return self.law in EXTERNAL

    @property
    def is_stagewise(self):
        return self.law in STAGEWISE

    def feedback(self, x, v):
        """Decentralised feedback added to the velocity equation at every stage."""
        g = self.gamma
        if self.law == "leader":
            vp = perp(v)
            return -g * vp + g * delta_leader(v, leader_p(self.q), self.q)
        if self.law == "structured":
            return -g * perp(v) + g * delta_structured(x, v, self.phi, self.eta_mode)
        if self.law == "local_average":
            return local_average_feedback(x, v, g, self.R)
        raise ConfigError(f"{self.law} is not a decentralised law")
