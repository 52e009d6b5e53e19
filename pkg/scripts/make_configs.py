"""Regenerate every scenario file in configs/.

The Cucker-Dong sparse-control start is frozen as an explicit state: agents
sit at a local minimum of the potential found by BFGS from a seeded random
start, and Gaussian velocities are scaled so that E(0) = 1.2 * vartheta.
Rerunning this script reproduces the committed files byte for byte.
"""
import json
import math
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from swarmctl.core import AgentState, KernelSpec, RepulsionSpec, cd_threshold_vartheta, energy_parts

ROOT = Path(__file__).resolve().parents[1] / "configs"

CS_KERNEL = {"family": "rational", "H": 1.0, "sigma": 1.0, "beta": 1.0, "convention": "distance"}


def cd_kernel(H, beta):
    return {"family": "rational", "H": H, "sigma": 1.0, "beta": beta, "convention": "squared"}


def cd_sparse_start(N=8, d=2, H=5.0, beta=1.1, p=2.0, ratio=1.2, seed=7):
    a = KernelSpec.rational(H, 1.0, beta, "squared")
    f = RepulsionSpec.power(p)
    theta = cd_threshold_vartheta(a, N)
    rng = np.random.default_rng(seed)
    z0 = rng.uniform(-1.0, 1.0, (N, d))
    zero = np.zeros((N, d))

    def potential(z):
        _, att, rep = energy_parts(AgentState(z.reshape(N, d), zero), a, f)
        return att + rep

    res = minimize(potential, z0.ravel(), method="BFGS")
    x = res.x.reshape(N, d)
    x = x - x.mean(axis=0)
    v = rng.standard_normal((N, d))
    kinetic = ratio * theta - potential(x.ravel())
    v *= math.sqrt(kinetic / float(np.sum(v * v)))
    return x.tolist(), v.tolist()


def scenarios():
    out = {}
    out["cs_pair_invariant"] = {
        "model": {"variant": "cs_pair", "N": 1, "d": 1, "kernel": CS_KERNEL},
        "initial": {"kind": "explicit", "x": [[1.0]], "v": [[0.4]]},
        "sim": {"h": 1e-3, "t_end": 50.0, "record_stride": 100},
        "output": {"dir": "out/cs_pair_invariant", "prefix": "pair"},
    }
    out["total_control"] = {
        "seed": 11,
        "model": {"variant": "cucker_smale", "N": 10, "d": 2, "kernel": CS_KERNEL},
        "control": {"law": "total", "M": 10.0, "alpha": 0.5},
        "initial": {"kind": "random"},
        "sim": {"h": 0.01, "t_end": 10.0},
        "output": {"dir": "out/total_control", "prefix": "total"},
    }
    out["cs_sparse"] = {
        "seed": 3,
        "model": {"variant": "cucker_smale", "N": 20, "d": 2, "kernel": CS_KERNEL},
        "control": {"law": "sparse_cs", "M": 1.0},
        "initial": {"kind": "random"},
        "sim": {"h": 0.01, "t_end": 60.0, "release_control_on_entry": True, "stop_below_V": 1e-6},
        "output": {"dir": "out/cs_sparse", "prefix": "sparse_cs"},
    }
    out["plateau_entry"] = {
        "model": {"variant": "cucker_smale", "N": 2, "d": 1,
                  "kernel": {"family": "plateau", "M": math.log(4.0), "R": 4.0, "tail_mass": 0.5}},
        "initial": {"kind": "explicit", "x": [[-2.0], [2.0]], "v": [[1.0], [-1.0]]},
        "sim": {"h": 1e-3, "t_end": 1.0},
        "output": {"dir": "out/plateau_entry", "prefix": "plateau"},
    }
    out["cd_conservation"] = {
        "seed": 5,
        "model": {"variant": "cucker_dong", "N": 8, "d": 2, "kernel": cd_kernel(1.0, 1.1),
                  "repulsion_p": 2.0},
        "initial": {"kind": "random"},
        "sim": {"h": 1e-3, "t_end": 10.0, "record_stride": 10},
        "output": {"dir": "out/cd_conservation", "prefix": "cd"},
    }
    x, v = cd_sparse_start()
    out["cd_sparse"] = {
        "model": {"variant": "cucker_dong", "N": 8, "d": 2, "kernel": cd_kernel(5.0, 1.1),
                  "repulsion_p": 2.0},
        "control": {"law": "sparse_cd", "M": 35.0},
        "initial": {"kind": "explicit", "x": x, "v": v},
        "sim": {"h": 0.01, "t_end": 100.0, "stop_on_region_entry": True},
        "output": {"dir": "out/cd_sparse", "prefix": "cd_sparse"},
    }
    out["cd_counterexample"] = {
        "model": {"variant": "cucker_dong", "N": 2, "d": 2, "kernel": cd_kernel(1.0, 2.0),
                  "repulsion_p": 1.1},
        "control": {"law": "sparse_cd", "M": 1.0},
        "initial": {"kind": "explicit", "x": [[0.0, 0.0], [1.0, 0.0]],
                    "v": [[0.5, 0.0], [-0.5, 0.2]]},
        "sim": {"h": 1e-3, "t_end": 20.0},
        "output": {"dir": "out/cd_counterexample", "prefix": "cd_counter"},
    }
    out["cd_pair_escape"] = {
        "model": {"variant": "cd_pair", "N": 1, "d": 1, "kernel": cd_kernel(1.0, 2.0)},
        "initial": {"kind": "explicit", "x": [[0.0]], "v": [[1.05]]},
        "sim": {"h": 1e-3, "t_end": 100.0, "record_stride": 10},
        "output": {"dir": "out/cd_pair_escape", "prefix": "escape"},
    }
    out["leader_sweep"] = {
        "seed": 2,
        "model": {"variant": "cucker_smale", "N": 10, "d": 2,
                  "kernel": {"family": "rational", "H": 0.01, "sigma": 1.0, "beta": 1.0,
                             "convention": "distance"}},
        "control": {"law": "leader", "gamma": 1.0, "q": 2.0},
        "initial": {"kind": "random"},
        "sim": {"h": 0.01, "t_end": 10.0, "record_stride": 10},
        "output": {"dir": "out/leader_sweep", "prefix": "leader"},
    }
    grid_sim = {"h": 0.01, "t_end": 100.0, "stop_below_V": 1e-6}
    axis = {"start": 0.0, "stop": 10.0, "num": 21}
    out["region_n2"] = {
        "seed": 1,
        "model": {"variant": "cucker_smale", "N": 2, "d": 2, "kernel": CS_KERNEL},
        "sim": grid_sim,
        "region": {"X0": axis, "V0": axis, "trials": 20, "contour_level": 0.8,
                   "boundaries": [{"variant": "theorem2"}]},
        "output": {"dir": "out/region_n2", "prefix": "n2"},
    }
    for R in (1.0, 2.0, 5.0):
        out[f"region_n20_R{int(R)}"] = {
            "seed": 1,
            "model": {"variant": "cucker_smale", "N": 20, "d": 2, "kernel": CS_KERNEL},
            "control": {"law": "local_average", "gamma": 1.0, "R": R},
            "sim": {"h": 0.1, "t_end": 100.0, "stop_below_V": 1e-6},
            "region": {"X0": axis, "V0": axis, "trials": 20, "contour_level": 0.8,
                       "boundaries": [{"variant": "theorem2"},
                                      {"variant": "theorem5", "R": R, "gamma": 1.0}]},
            "output": {"dir": f"out/region_n20_R{int(R)}", "prefix": f"n20_R{int(R)}"},
        }
    return out


def main():
    ROOT.mkdir(exist_ok=True)
    for name, body in scenarios().items():
        (ROOT / f"{name}.json").write_text(json.dumps(body, indent=2) + "\n", encoding="utf-8")
        print("wrote", name)


if __name__ == "__main__":
    main()
