"""Fixed-step RK4 integration with sample-and-hold control and event monitoring."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .control import (
    ControlSpec,
    control_mass,
    sparse_control_cd,
    sparse_control_cs,
    total_control,
    total_control_bound,
)
from .core import AgentState, cs_region_check, pairwise_squared, spread, upper_pairs
from .dynamics import ModelSpec
from .errors import ConfigError, NumericalBlowupError, SingularConfigurationError

ADMISSIBILITY_SLACK = 1e-9


@dataclass(frozen=True)
class SimConfig:
    h: float = 1e-3
    t_end: float = 50.0
    record_stride: int = 1
    stop_on_region_entry: bool = False
    release_control_on_entry: bool = False
    divergence_radius: float = 1e12
    collision_floor: float = 1e-6
    stop_below_V: Optional[float] = None

    def __post_init__(self):
        if not (self.h > 0 and self.t_end > 0):
            raise ConfigError("h and t_end must be positive", "sim.h")
        if self.h > self.t_end * (1 + 1e-12):
            raise ConfigError("step h exceeds t_end", "sim.h")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ConfigError("record_stride must be a positive integer", "sim.record_stride")
        if not (self.divergence_radius > 0 and self.collision_floor > 0):
            raise ConfigError("divergence_radius and collision_floor must be positive")

    @property
    def steps(self):
        return int(round(self.t_end / self.h))


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    x: np.ndarray
    v: np.ndarray
    X: np.ndarray
    V: np.ndarray
    E: Optional[np.ndarray]
    u: np.ndarray
    u_mass: np.ndarray
    active: np.ndarray
    events: list = field(default_factory=list)
    admissible: bool = True
    budget: Optional[float] = None
    vartheta: Optional[float] = None
    epsilon: Optional[float] = None

    def event_time(self, kind):
        for t, k in self.events:
            if k == kind:
                return t
        return None

    @property
    def region_entry_time(self):
        return self.event_time("region_entry")

    @property
    def final_state(self):
        return AgentState(self.x[-1], self.v[-1])


def rk4_step(rhs, t, x, v, h, u=None):
    """Classical RK4 for ``(x, v)`` with ``u`` held fixed over all four stages."""
    k1x, k1v = rhs(t, x, v, u)
    k2x, k2v = rhs(t + h / 2, x + h / 2 * k1x, v + h / 2 * k1v, u)
    k3x, k3v = rhs(t + h / 2, x + h / 2 * k2x, v + h / 2 * k2v, u)
    k4x, k4v = rhs(t + h, x + h * k3x, v + h * k3v, u)
    dx = (k1x + 2 * k2x + 2 * k3x + k4x) / 6
    dv = (k1v + 2 * k2v + 2 * k3v + k4v) / 6
    if isinstance(dx, float):
        finite = math.isfinite(dx) and math.isfinite(dv)
    else:
        finite = np.isfinite(np.sum(dx)) and np.isfinite(np.sum(dv))
    if not finite:
        raise NumericalBlowupError(f"non-finite derivative at t={t}", t=t,
                                   state=(np.array(x), np.array(v)))
    return x + h * dx, v + h * dv


def closed_loop_rhs(model: ModelSpec, control: ControlSpec):
    """Vector field including any decentralised feedback; ``u`` is the held external control."""
    if not control.is_stagewise:
        return model.rhs
    if model.variant == "cucker_smale" and control.law == "local_average":
        return _fused_local_average(model, control)

    def rhs(t, x, v, u):
        fb = control.feedback(x, v)
        return model.rhs(t, x, v, fb if u is None else fb + u)

    return rhs


def _fused_local_average(model, control):
    """Cucker-Smale plus local-average feedback as one interaction matrix.

    Both terms are of the form ``sum_j K_ij (v_j - v_i)``, so a single
    distance evaluation and matrix product serve the whole vector field.
    """
    a, g, R = model.kernel, control.gamma, control.R

    def rhs(t, x, v, u):
        s = pairwise_squared(x)
        N = x.shape[-2]
        K = a.from_squared_distance(s) / N
        if math.isinf(R):
            K = K + g / N
        elif g:
            chi = (s <= R * R).astype(float)
            eta = chi.sum(axis=-1).max(axis=-1)
            K = K + (g / np.asarray(eta))[..., None, None] * chi
        dv = K @ v - K.sum(axis=-1)[..., None] * v
        if u is not None:
            dv = dv + u
        return v.copy(), dv

    return rhs


class _Controller:
    """Resolves run-start parameters and evaluates the external law."""

    def __init__(self, model: ModelSpec, control: ControlSpec, x0, v0):
        self.model = model
        self.control = control
        self.epsilon = None
        self.E0 = None
        N = x0.shape[0]
        law = control.law
        if law == "total":
            _, V0 = model.functionals(x0, v0)
            bound = total_control_bound(control.M, model.agent_count(N), float(V0))
            if control.alpha > bound * (1 + 1e-12):
                raise ConfigError(f"alpha={control.alpha} exceeds the admissible bound {bound}",
                                  "control.alpha")
        if law == "sparse_cs" and not model.is_alignment:
            raise ConfigError("sparse_cs needs a Cucker-Smale model", "control.law")
        if law == "sparse_cd":
            if model.variant != "cucker_dong":
                raise ConfigError("sparse_cd needs a Cucker-Dong model", "control.law")
            self.E0 = model.energy(x0, v0)
            self.epsilon = control.M / self.E0 if control.epsilon is None else control.epsilon
            if self.epsilon > control.M / self.E0 * (1 + 1e-12):
                raise ConfigError("epsilon exceeds M/E(0)", "control.epsilon")
        if control.is_stagewise and model.variant not in ("cucker_smale", "perturbed_cs"):
            raise ConfigError(f"{law} acts on Cucker-Smale models", "control.law")

    def __call__(self, t, x, v, E=None):
        c = self.control
        if c.law == "total":
            return total_control(v, c.alpha), -1
        if c.law == "sparse_cs":
            return sparse_control_cs(x, v, c.M, self.model.kernel)
        if c.law == "sparse_cd":
            E = self.model.energy(x, v) if E is None else E
            # discretisation error can lift E above E(0); cap so eps*E <= M still holds
            return sparse_control_cd(v, c.M, self.E0, self.epsilon, min(E, self.E0))
        return None, -1


def _region_test(model: ModelSpec, N):
    n_eff = model.agent_count(N)
    if model.is_alignment:
        def inside(x, v, X, V, E):
            return cs_region_check(X, V, model.kernel, n_eff).inside
        return inside, None
    if model.is_cucker_dong:
        theta = model.vartheta(N)
        if math.isinf(theta):
            return (lambda x, v, X, V, E: True), theta
        return (lambda x, v, X, V, E: E <= theta * (1 - 1e-12)), theta
    return None, None


def _min_distance(x):
    N = x.shape[0]
    if N < 2:
        return math.inf
    s = pairwise_squared(x)
    return math.sqrt(float(np.min(s[upper_pairs(N)])))


def simulate(model: ModelSpec, control: ControlSpec, state0: AgentState,
             cfg: SimConfig) -> TrajectoryRecord:
    """Integrate the closed loop and record functionals, controls and events.

    Collisions, divergence and numerical blow-up end the run early with an
    event instead of raising.
    """
    x = np.array(state0.x, dtype=float)
    v = np.array(state0.v, dtype=float)
    N = x.shape[0]
    controller = _Controller(model, control, x, v)
    if model.is_pair:
        # the reduced two-agent systems run on plain floats
        if x.shape != (1, 1):
            raise ConfigError("pair models take a single relative coordinate (N = d = 1)")
        if control.law != "none":
            raise ConfigError("pair models run uncontrolled", "control.law")
        x, v = float(x[0, 0]), float(v[0, 0])
    rhs = closed_loop_rhs(model, control)
    inside, theta = _region_test(model, N)
    is_cd = model.is_cucker_dong
    repulsive = is_cd and not model.repulsion.zero and not model.is_pair
    h = cfg.h
    hold = 1 if control.sample_hold_dt is None else max(1, int(round(control.sample_hold_dt / h)))
    budget = control.M

    rec_t, rec_x, rec_v, rec_X, rec_V, rec_E, rec_u, rec_m, rec_a = ([] for _ in range(9))
    events = []
    admissible = True
    entered = False
    u, active = None, -1
    external_on = controller.control.is_external

    def record(t, x, v, X, V, E, u, active):
        rec_t.append(t)
        rec_x.append(np.array(x, dtype=float).reshape(-1, 1) if model.is_pair else x.copy())
        rec_v.append(np.array(v, dtype=float).reshape(-1, 1) if model.is_pair else v.copy())
        rec_X.append(X)
        rec_V.append(V)
        rec_E.append(E)
        if u is None:
            u = control.feedback(x, v) if control.is_stagewise else np.zeros_like(rec_v[-1])
        rec_u.append(u)
        rec_m.append(float(control_mass(u)))
        rec_a.append(active)

    if repulsive and _min_distance(x) < cfg.collision_floor:
        raise SingularConfigurationError("initial state violates the collision floor")

    steps = cfg.steps
    stop_reason = "end"
    need_xv = inside is not None or cfg.stop_below_V is not None
    for n in range(steps + 1):
        t = n * h
        last = n == steps
        due = last or n % cfg.record_stride == 0
        if need_xv or due:
            X, V = (float(q) for q in model.functionals(x, v))
        if is_cd and (due or not entered or control.law == "sparse_cd"):
            E = model.energy(x, v)
        else:
            E = None
        if inside is not None and not entered and inside(x, v, X, V, E):
            entered = True
            events.append((t, "region_entry"))
            if cfg.release_control_on_entry:
                external_on = False
        if external_on and n % hold == 0:
            u, active = controller(t, x, v, E)
        elif not external_on:
            u, active = None, -1
        if u is not None and budget is not None:
            if float(control_mass(u)) > budget + ADMISSIBILITY_SLACK:
                admissible = False
        stop = (entered and cfg.stop_on_region_entry) or (
            cfg.stop_below_V is not None and V <= cfg.stop_below_V)
        if last or stop or due:
            if is_cd and E is None:
                E = model.energy(x, v)
            record(t, x, v, X, V, E, u, active)
        if last or stop:
            break
        try:
            x, v = rk4_step(rhs, t, x, v, h, u)
        except (NumericalBlowupError, SingularConfigurationError) as exc:
            stop_reason = "collision" if isinstance(exc, SingularConfigurationError) else "divergence"
            events.append((t, stop_reason))
            break
        size = abs(x) if model.is_pair else float(np.max(np.abs(x)))
        if size > cfg.divergence_radius:
            stop_reason = "divergence"
        elif repulsive and _min_distance(x) < cfg.collision_floor:
            stop_reason = "collision"
        if stop_reason != "end":
            t1 = (n + 1) * h
            events.append((t1, stop_reason))
            if np.all(np.isfinite(x)) and np.all(np.isfinite(v)):
                X, V = (float(q) for q in model.functionals(x, v))
                try:
                    E = model.energy(x, v) if is_cd else None
                except SingularConfigurationError:
                    E = math.nan
                record(t1, x, v, X, V, E, None if not external_on else u, active)
            break
    if stop_reason == "end":
        events.append((rec_t[-1], "end"))

    return TrajectoryRecord(
        times=np.array(rec_t),
        x=np.array(rec_x),
        v=np.array(rec_v),
        X=np.array(rec_X),
        V=np.array(rec_V),
        E=np.array(rec_E, dtype=float) if is_cd else None,
        u=np.array(rec_u),
        u_mass=np.array(rec_m),
        active=np.array(rec_a, dtype=int),
        events=events,
        admissible=admissible,
        budget=budget,
        vartheta=theta,
        epsilon=controller.epsilon,
    )


def conserved_quantity_check(record: TrajectoryRecord, model: ModelSpec, kind: str) -> float:
    """``max_t |Q(t) - Q(0)|`` for the mean velocity, the energy or the pair arctan invariant."""
    if kind == "mean_velocity":
        if model.is_pair or model.is_cucker_dong:
            raise ConfigError("mean velocity is conserved only by alignment models")
        vbar = record.v.mean(axis=1)
        return float(np.max(np.linalg.norm(vbar - vbar[0], axis=-1)))
    if kind == "energy":
        if record.E is None:
            raise ConfigError("energy drift needs a Cucker-Dong record")
        return float(np.max(np.abs(record.E - record.E[0])))
    if kind == "arctan_invariant":
        k = model.kernel
        if model.variant != "cs_pair" or k.family != "rational" or k.beta != 1 or k.sigma != 1:
            raise ConfigError("the arctan invariant belongs to the two-agent pair with a/(1+r^2)")
        q = record.v[:, 0, 0] + k.H * np.arctan(record.x[:, 0, 0])
        return float(np.max(np.abs(q - q[0])))
    raise ConfigError(f"unknown conserved quantity {kind!r}")


# ---------------------------------------------------------------------------
# batched runs for Monte-Carlo grids


def simulate_batch(model: ModelSpec, control: ControlSpec, x0, v0, cfg: SimConfig,
                   compact_every: int = 25):
    """Integrate a batch ``(B, N, d)`` of independent systems; return final ``V`` per system.

    Systems stop individually once ``V <= cfg.stop_below_V``.  A system that
    blows up reports ``nan``.  Only the uncontrolled, total and decentralised
    laws are supported, since they vectorise over the batch.
    """
    if control.law in ("sparse_cs", "sparse_cd"):
        raise ConfigError("batched runs support none, total and decentralised laws")
    x = np.array(x0, dtype=float)
    v = np.array(v0, dtype=float)
    B = x.shape[0]
    out = np.full(B, np.nan)
    idx = np.arange(B)
    rhs = closed_loop_rhs(model, control)
    thresh = cfg.stop_below_V
    h = cfg.h
    steps = cfg.steps
    with np.errstate(all="ignore"):
        for n in range(steps + 1):
            if n % compact_every == 0 or n == steps:
                V = spread(v) if not model.is_pair else model.functionals(x, v)[1]
                bad = ~np.isfinite(V)
                done = np.zeros(len(idx), dtype=bool) if thresh is None else V <= thresh
                if n == steps:
                    done[:] = True
                finished = done | bad
                if np.any(finished):
                    out[idx[done & ~bad]] = V[done & ~bad]
                    keep = ~finished
                    idx, x, v = idx[keep], x[keep], v[keep]
                if len(idx) == 0:
                    break
            if n == steps:
                break
            u = total_control(v, control.alpha) if control.law == "total" else None
            x, v = _rk4_unchecked(rhs, n * h, x, v, h, u)
    return out


def _rk4_unchecked(rhs, t, x, v, h, u):
    k1x, k1v = rhs(t, x, v, u)
    k2x, k2v = rhs(t + h / 2, x + h / 2 * k1x, v + h / 2 * k1v, u)
    k3x, k3v = rhs(t + h / 2, x + h / 2 * k2x, v + h / 2 * k2v, u)
    k4x, k4v = rhs(t + h, x + h * k3x, v + h * k3v, u)
    return (x + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x),
            v + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v))


def fitted_decay_rate(times, values, t_stop=None):
    """Least-squares ``lambda`` in ``values ~ C exp(-lambda t)`` over records with ``t <= t_stop``.

    Nonpositive values are dropped; fewer than two usable records give None.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    keep = np.isfinite(y) & (y > 0)
    if t_stop is not None:
        keep &= t <= t_stop + 1e-12
    if np.count_nonzero(keep) < 2 or np.ptp(t[keep]) == 0:
        return None
    slope = np.polyfit(t[keep], np.log(y[keep]), 1)[0]
    return float(-slope)
