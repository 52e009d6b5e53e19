"""Simulation and control of Cucker-Smale and Cucker-Dong multiagent systems."""
from .core import (
    AgentState,
    FrictionSpec,
    KernelSpec,
    RegionCertificate,
    RepulsionSpec,
    bilinear_b,
    cd_condition_b_constant,
    cd_threshold_vartheta,
    cs_region_check,
    cs_region_check_extended,
    epsilon_graph,
    functionals_xv,
    perp_decompose,
    threshold_gamma,
    total_energy,
)
from .control import ControlSpec
from .dynamics import ModelSpec
from .errors import (
    ConfigError,
    DimensionError,
    DomainError,
    NumericalBlowupError,
    SingularConfigurationError,
    SwarmError,
)
from .integrator import SimConfig, TrajectoryRecord, conserved_quantity_check, rk4_step, simulate

__version__ = "0.1.0"
