"""JSON scenario files: parsing, validation and conversion into run objects.

Every section is a dataclass.  Unknown keys and out-of-range values raise
:class:`ConfigError` carrying the dotted path of the field; :func:`load`
turns that path into a line number in the source file.
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .control import ControlSpec
from .core import AgentState, FrictionSpec, KernelSpec, RepulsionSpec
from .dynamics import ModelSpec
from .errors import ConfigError, SwarmError
from .integrator import SimConfig
from .region import draw_raw, rescale_to

SEED_ENV = "SWARMCTL_SEED"


@dataclass
class KernelConfig:
    family: str = "rational"
    H: float = 1.0
    sigma: float = 1.0
    beta: float = 1.0
    R: float = 1.0
    M: float = 1.0
    tail_mass: float = 1.0
    convention: str = "distance"

    def build(self) -> KernelSpec:
        if self.family == "rational":
            return KernelSpec.rational(self.H, self.sigma, self.beta, self.convention)
        if self.family == "indicator":
            return KernelSpec.indicator(self.R)
        if self.family == "plateau":
            return KernelSpec.plateau(self.M, self.R, self.tail_mass)
        raise ConfigError(f"kernel family {self.family!r} is not available from config", "family")


@dataclass
class ModelConfig:
    variant: str = "cucker_smale"
    N: int = 2
    d: int = 2
    kernel: Optional[KernelConfig] = field(default_factory=KernelConfig)
    repulsion_p: Optional[float] = None
    friction_Lambda: float = 0.0
    friction_b: object = None
    R: float = 1.0
    speed: float = 1.0
    weights: Optional[list] = None

    def build(self) -> ModelSpec:
        if self.N < 1 or self.d < 1:
            raise ConfigError("need N >= 1 and d >= 1", "N" if self.N < 1 else "d")
        k = self.kernel.build() if self.kernel is not None else None
        f = RepulsionSpec.none() if self.repulsion_p is None else RepulsionSpec.power(self.repulsion_p)
        v = self.variant
        if v == "cucker_smale":
            return ModelSpec.cucker_smale(k)
        if v == "cucker_dong":
            return ModelSpec.cucker_dong(k, f, FrictionSpec(self.friction_Lambda, self.friction_b))
        if v == "cs_pair":
            return ModelSpec.cs_pair(k)
        if v == "cd_pair":
            return ModelSpec.cd_pair(k, f)
        if v == "hegselmann_krause":
            return ModelSpec.hegselmann_krause(self.R)
        if v == "vicsek":
            return ModelSpec.vicsek(self.R, self.speed)
        if v == "graph":
            return ModelSpec.graph(np.asarray(self.weights, dtype=float))
        raise ConfigError(f"model variant {v!r} is not available from config", "variant")


@dataclass
class ControlConfig:
    law: str = "none"
    M: Optional[float] = None
    alpha: float = 0.0
    gamma: float = 0.0
    epsilon: Optional[float] = None
    eta: float = 0.0
    q: float = 2.0
    R: float = math.inf
    phi: Optional[KernelConfig] = None
    eta_mode: str = "per_agent"
    sample_hold_dt: Optional[float] = None

    def build(self) -> ControlSpec:
        kw = dataclasses.asdict(self)
        kw["phi"] = self.phi.build() if self.phi is not None else None
        return ControlSpec(**kw)


@dataclass
class InitialConfig:
    """``explicit`` (x, v), ``random`` (uniform boxes) or ``rescaled`` (random draw scaled to X0, V0)."""

    kind: str = "random"
    x: Optional[list] = None
    v: Optional[list] = None
    x_range: list = field(default_factory=lambda: [-1.0, 1.0])
    v_range: list = field(default_factory=lambda: [-1.0, 1.0])
    X0: Optional[float] = None
    V0: Optional[float] = None
    seed: Optional[int] = None

    def build(self, N, d, seed) -> AgentState:
        if self.kind == "explicit":
            if self.x is None or self.v is None:
                raise ConfigError("explicit initial data needs x and v", "x")
            st = AgentState(self.x, self.v)
            if st.x.shape != (N, d):
                raise ConfigError(f"explicit state has shape {st.x.shape}, model declares ({N}, {d})", "x")
            return st
        rng = np.random.default_rng(seed)
        if self.kind == "random":
            return AgentState(rng.uniform(*self.x_range, (N, d)), rng.uniform(*self.v_range, (N, d)))
        if self.kind == "rescaled":
            if self.X0 is None or self.V0 is None:
                raise ConfigError("rescaled initial data needs X0 and V0", "X0")
            return rescale_to(*draw_raw(rng, N, d), self.X0, self.V0)
        raise ConfigError(f"unknown initial-data kind {self.kind!r}", "kind")


@dataclass
class AxisConfig:
    start: float = 0.0
    stop: float = 10.0
    num: int = 21

    def values(self):
        return np.linspace(self.start, self.stop, self.num)


@dataclass
class BoundaryConfig:
    variant: str = "theorem2"
    R: Optional[float] = None
    gamma: float = 0.0


@dataclass
class RegionConfig:
    X0: AxisConfig = field(default_factory=AxisConfig)
    V0: AxisConfig = field(default_factory=AxisConfig)
    trials: int = 20
    contour_level: float = 0.8
    boundaries: list = field(default_factory=lambda: [BoundaryConfig()])


@dataclass
class OutputConfig:
    dir: str = "out"
    prefix: str = "run"


@dataclass
class ScenarioConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    region: Optional[RegionConfig] = None
    output: OutputConfig = field(default_factory=OutputConfig)

    def effective_seed(self, environ=None):
        env = (os.environ if environ is None else environ).get(SEED_ENV)
        if env not in (None, ""):
            try:
                return int(env)
            except ValueError:
                raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}", "seed") from None
        return self.initial.seed if self.initial.seed is not None else self.seed

    def build_model(self):
        return _wrap(self.model.build, "model")

    def build_control(self):
        return _wrap(self.control.build, "control")

    def build_state(self, seed=None):
        seed = self.effective_seed() if seed is None else seed
        return _wrap(lambda: self.initial.build(self.model.N, self.model.d, seed), "initial")

    def validate(self):
        """Build every block once so inconsistencies surface before any run."""
        self.build_model()
        self.build_control()
        self.build_state()
        if self.region is not None:
            for name in ("X0", "V0"):
                ax = getattr(self.region, name)
                if ax.num < 1 or ax.stop < ax.start or ax.start < 0 or (ax.num > 1 and ax.stop == ax.start):
                    raise ConfigError("axis needs 0 <= start < stop and num >= 1", f"region.{name}")
            if self.region.trials < 1:
                raise ConfigError("trials must be at least 1", "region.trials")
            if not 0 < self.region.contour_level < 1:
                raise ConfigError("contour level must lie in (0, 1)", "region.contour_level")
        return self

    def to_dict(self):
        return _encode(dataclasses.asdict(self))


def _wrap(fn, prefix):
    try:
        return fn()
    except ConfigError as exc:
        path = exc.path or ""
        if not path.startswith(prefix):
            path = f"{prefix}.{path}" if path else prefix
        raise ConfigError(str(exc), path) from None
    except SwarmError as exc:
        raise ConfigError(str(exc), prefix) from None


# ---------------------------------------------------------------------------
# dict <-> dataclass

_NESTED = {
    (ScenarioConfig, "model"): ModelConfig,
    (ScenarioConfig, "control"): ControlConfig,
    (ScenarioConfig, "initial"): InitialConfig,
    (ScenarioConfig, "sim"): SimConfig,
    (ScenarioConfig, "region"): RegionConfig,
    (ScenarioConfig, "output"): OutputConfig,
    (ModelConfig, "kernel"): KernelConfig,
    (ControlConfig, "phi"): KernelConfig,
    (RegionConfig, "X0"): AxisConfig,
    (RegionConfig, "V0"): AxisConfig,
}
_FLOAT_TOKENS = {"inf": math.inf, "+inf": math.inf, "-inf": -math.inf, "Infinity": math.inf}


def _coerce(value, ftype, path):
    t = str(ftype)
    if isinstance(value, str) and value in _FLOAT_TOKENS and "float" in t:
        return _FLOAT_TOKENS[value]
    if value is None:
        if "Optional" in t or "None" in t or t == "object":
            return None
        raise ConfigError("value may not be null", path)
    if t in ("float", "Optional[float]"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path)
        return float(value)
    if t in ("int", "Optional[int]"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return value
    if t == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"expected true or false, got {value!r}", path)
        return value
    if t == "str":
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    return value


def from_dict(cls, data, path=""):
    if not isinstance(data, dict):
        raise ConfigError("expected an object", path or None)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in fields:
            raise ConfigError(f"unknown field {key!r}", f"{path}.{key}" if path else key)
    kw = {}
    for name, value in data.items():
        p = f"{path}.{name}" if path else name
        sub = _NESTED.get((cls, name))
        if sub is not None and value is not None:
            kw[name] = from_dict(sub, value, p)
        elif cls is RegionConfig and name == "boundaries":
            if not isinstance(value, list):
                raise ConfigError("expected a list of boundary curves", p)
            kw[name] = [from_dict(BoundaryConfig, b, f"{p}.{i}") for i, b in enumerate(value)]
        else:
            kw[name] = _coerce(value, fields[name].type, p)
    try:
        return cls(**kw)
    except ConfigError as exc:
        sub = exc.path or ""
        if sub.startswith("sim."):
            sub = sub[4:]
        raise ConfigError(str(exc), f"{path}.{sub}" if path and sub else (path or sub or None)) from None


def _encode(obj):
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def parse(data) -> ScenarioConfig:
    return from_dict(ScenarioConfig, data)


def dumps(cfg: ScenarioConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


def locate(text, path):
    """Best-effort line number of the field at dotted ``path`` inside JSON ``text``."""
    pos = 0
    line = None
    for part in (path or "").split("."):
        if not part or part.isdigit():
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(part)).search(text, pos)
        if m is None:
            break
        pos = m.start()
        line = text.count("\n", 0, pos) + 1
    return line


def load(path) -> ScenarioConfig:
    """Read, parse and validate a scenario; errors name the file and line."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    try:
        return parse(data).validate()
    except ConfigError as exc:
        line = locate(text, exc.path)
        where = f"{path}:{line}" if line else str(path)
        field_ = f" [{exc.path}]" if exc.path else ""
        raise ConfigError(f"{where}: {exc}{field_}", exc.path) from None


def set_path(data: dict, dotted: str, value):
    """Assign ``value`` at ``dotted`` inside a raw config dict; the target must be numeric."""
    parts = dotted.split(".")
    node = data
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node or not isinstance(node[p], dict):
            raise ConfigError(f"no config block at {dotted!r}", dotted)
        node = node[p]
    leaf = parts[-1]
    current = node.get(leaf) if isinstance(node, dict) else None
    if isinstance(current, (bool, str, list, dict)):
        raise ConfigError(f"{dotted} is not a numeric field", dotted)
    section = _section_class(parts[:-1])
    names = {f.name: f for f in dataclasses.fields(section)}
    if leaf not in names or not any(t in str(names[leaf].type) for t in ("float", "int")):
        raise ConfigError(f"{dotted} is not a numeric field", dotted)
    node[leaf] = value


def _section_class(parts):
    cls = ScenarioConfig
    for p in parts:
        cls = _NESTED.get((cls, p))
        if cls is None:
            raise ConfigError(f"no config block at {'.'.join(parts)!r}")
    return cls
