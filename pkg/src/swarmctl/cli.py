"""``swarmctl`` command line: simulate, sweep and region.

Exit codes: 0 on success (a run that never reaches consensus is still a
success), 2 for configuration errors, 3 for internal numerical faults.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .core import cd_condition_b_constant
from .errors import ConfigError, SingularConfigurationError, SwarmError
from .integrator import fitted_decay_rate, simulate
from .region import contour_extract, probability_grid, theoretical_boundary

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def fmt(value):
    """Shortest round-trip text for numbers; empty string for missing values."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    f = float(value)
    if math.isnan(f):
        return "nan"
    if math.isinf(f):
        return "inf" if f > 0 else "-inf"
    return repr(f)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(c) for c in row])


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    return obj


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# simulate


def trajectory_header(N, d, with_energy):
    cols = ["t"]
    cols += [f"x_{i}_{k}" for i in range(N) for k in range(d)]
    cols += [f"v_{i}_{k}" for i in range(N) for k in range(d)]
    cols += ["X", "V"] + (["E"] if with_energy else []) + ["u_mass", "active"]
    return cols


def trajectory_rows(rec):
    n = len(rec.times)
    xs = rec.x.reshape(n, -1)
    vs = rec.v.reshape(n, -1)
    for k in range(n):
        row = [rec.times[k], *xs[k], *vs[k], rec.X[k], rec.V[k]]
        if rec.E is not None:
            row.append(rec.E[k])
        row += [rec.u_mass[k], int(rec.active[k])]
        yield row


def run_summary(rec, scenario, model, state0):
    s = {
        "events": [{"t": t, "kind": k} for t, k in rec.events],
        "region_entry_time": rec.region_entry_time,
        "final": {"t": rec.times[-1], "X": rec.X[-1], "V": rec.V[-1]},
        "initial": {"X": rec.X[0], "V": rec.V[0]},
        "admissible": rec.admissible,
        "budget": rec.budget,
        "max_u_mass": float(np.max(rec.u_mass)),
        "seed": scenario.effective_seed(),
    }
    if rec.E is not None:
        s["initial"]["E"] = rec.E[0]
        s["final"]["E"] = rec.E[-1]
        s["vartheta"] = rec.vartheta
        s["epsilon"] = rec.epsilon
        if model.variant == "cucker_dong" and scenario.control.M is not None:
            c, ok = cd_condition_b_constant(state0, scenario.control.M, model.friction.Lambda,
                                            model.kernel, model.repulsion)
            s["condition_b"] = {"c": c, "satisfied": ok}
    return s


def _prepare(scenario):
    model = scenario.build_model()
    control = scenario.build_control()
    state0 = scenario.build_state()
    return model, control, state0


def _run(scenario):
    model, control, state0 = _prepare(scenario)
    try:
        rec = simulate(model, control, state0, scenario.sim)
    except SingularConfigurationError as exc:
        # only the initial state can trip this; later collisions become events
        raise ConfigError(str(exc), "initial") from None
    return rec, model, state0


def _out_dir(args, scenario):
    out = Path(args.out if args.out else scenario.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args):
    scenario = cfgmod.load(args.config)
    rec, model, state0 = _run(scenario)
    out = _out_dir(args, scenario)
    prefix = scenario.output.prefix
    N, d = state0.x.shape
    write_csv(out / f"{prefix}_trajectory.csv", trajectory_header(N, d, rec.E is not None),
              trajectory_rows(rec))
    write_json(out / f"{prefix}_summary.json", run_summary(rec, scenario, model, state0))
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep


def parse_values(text):
    vals = []
    for tok in (text or "").split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            vals.append(float(tok))
        except ValueError:
            raise ConfigError(f"sweep value {tok!r} is not a number", "--values") from None
    return vals


def cmd_sweep(args):
    scenario = cfgmod.load(args.config)
    raw = scenario.to_dict()
    values = parse_values(args.values)
    # probe the target once so a bad path fails even for an empty sweep
    cfgmod.set_path(copy.deepcopy(raw), args.param, 0.0)
    out = _out_dir(args, scenario)
    prefix = scenario.output.prefix
    rows = []
    for val in values:
        data = copy.deepcopy(raw)
        cfgmod.set_path(data, args.param, val)
        try:
            sc = cfgmod.parse(data).validate()
        except ConfigError as exc:
            raise ConfigError(f"{args.param}={fmt(val)}: {exc}", exc.path) from None
        rec, model, state0 = _run(sc)
        entry = rec.region_entry_time
        series = rec.E if rec.E is not None else rec.V
        rate = fitted_decay_rate(rec.times, series, entry)
        rows.append([val, entry, rec.V[-1], None if rec.E is None else rec.E[-1], rate,
                     int(rec.admissible)])
        write_json(out / f"{prefix}_sweep_{fmt(val)}_summary.json", run_summary(rec, sc, model, state0))
    write_csv(out / f"{prefix}_sweep.csv",
              ["value", "region_entry_time", "final_V", "final_E", "decay_rate", "admissible"], rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# region


def cmd_region(args):
    scenario = cfgmod.load(args.config)
    if scenario.region is None:
        raise ConfigError("region command needs a region block", "region")
    reg = scenario.region
    model, control, _ = _prepare(scenario)
    if not model.is_alignment or model.is_pair:
        raise ConfigError("region grids run on Cucker-Smale models", "model.variant")
    X_axis, V_axis = reg.X0.values(), reg.V0.values()
    N, d = scenario.model.N, scenario.model.d
    grid = cfgmod._wrap(lambda: probability_grid(
        X_axis, V_axis, model, control, scenario.sim, scenario.effective_seed(), N, d,
        trials=reg.trials, jobs=max(1, args.jobs)), "region")
    out = _out_dir(args, scenario)
    prefix = scenario.output.prefix
    lo, hi = grid.wilson()
    P = grid.probability
    rows = []
    for i, X0 in enumerate(X_axis):
        for j, V0 in enumerate(V_axis):
            rows.append([X0, V0, grid.trials[i, j], grid.successes[i, j], P[i, j], lo[i, j], hi[i, j]])
    write_csv(out / f"{prefix}_grid.csv",
              ["X0", "V0", "trials", "successes", "probability", "wilson_lo", "wilson_hi"], rows)
    for b in reg.boundaries:
        Rb = b.R if b.R is not None else control.R
        curve = cfgmod._wrap(lambda: theoretical_boundary(
            X_axis, model.kernel, N, b.variant, Rb, b.gamma), "region.boundaries")
        name = b.variant if b.variant == "theorem2" else f"{b.variant}_R{fmt(Rb)}"
        write_csv(out / f"{prefix}_boundary_{name}.csv", ["X0", "V0_star"], zip(X_axis, curve))
    crow = []
    if len(X_axis) > 1 and len(V_axis) > 1:
        for pid, line in enumerate(contour_extract(P, X_axis, V_axis, reg.contour_level)):
            for k, (xv, vv) in enumerate(line):
                crow.append([pid, k, xv, vv])
    write_csv(out / f"{prefix}_contour.csv", ["polyline", "vertex", "X0", "V0"], crow)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="swarmctl", description="Consensus and flocking experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="integrate one scenario")
    s.add_argument("config")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_simulate)
    s = sub.add_parser("sweep", help="rerun one scenario over values of a numeric field")
    s.add_argument("config")
    s.add_argument("--param", required=True)
    s.add_argument("--values", required=True)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_sweep)
    s = sub.add_parser("region", help="Monte-Carlo consensus probability on an (X0, V0) grid")
    s.add_argument("config")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_region)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"swarmctl: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SwarmError as exc:
        print(f"swarmctl: numerical fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FloatingPointError, ArithmeticError) as exc:
        print(f"swarmctl: numerical fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
