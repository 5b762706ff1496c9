"""Command-line front end: JSON experiment files in, CSV/JSON data out.

Exit status is 0 on success, 2 on invalid input and 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .architect import fit_design, system_from_design
from .closedloop import (KalmanConfig, LoopConfig, NoiseSpec, Plant, linear_sensitivity,
                         pseudo_sensitivity, simulate_loop, step_metrics)
from .harmonics import (NonPeriodicError, find_linear_frequencies, linear_frf, psi_profile,
                        sweep_harmonics)
from .resetsim import ChatteringError, ControlSystem, DivergenceError

SCHEMA_VERSION = 1
COMMANDS = ("bode", "df", "harmonics", "psi", "step", "sens", "design", "loop")

_SIM = {"samples_per_period": 256, "transient_periods": 20, "window_periods": 8}
DEFAULTS = {
    "bode": {"grid": [0.1, 1000.0, 60]},
    "df": {"grid": [0.1, 1000.0, 30], "amplitude": 1.0, **_SIM},
    "harmonics": {"grid": [0.1, 1000.0, 30], "amplitude": 1.0, "n_max": 9, **_SIM},
    "psi": {"grid": [0.01, 1000.0, 200]},
    "sens": {"grid": [0.1, 1000.0, 30], "amplitude": 1.0, **_SIM},
    "step": {"dt": 1e-4, "t_end": 5.0},
    "loop": {"dt": 1e-4, "t_end": 5.0},
    "design": {},
}
REQUIRED = {
    "bode": ("system",), "df": ("system",), "harmonics": ("system",), "psi": ("system",),
    "sens": ("loop",), "step": ("loops",), "loop": ("loop",), "design": ("design",),
}


class ConfigError(ValueError):
    pass


# -- config handling ---------------------------------------------------------

def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> None:
    """Apply ``a.b.c=value`` to a nested dict; ``value`` is JSON or a bare string."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not key=value")
    key, text = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = _parse_value(text)


def parse_grid(spec: str) -> list:
    try:
        start, stop, points = spec.split(":")
        return [float(start), float(stop), int(points)]
    except ValueError:
        raise ConfigError(f"grid {spec!r} is not start:stop:points") from None


def _grid(spec):
    if not (isinstance(spec, (list, tuple)) and len(spec) == 3):
        raise ConfigError("grid must be [start, stop, points]")
    lo, hi, n = float(spec[0]), float(spec[1]), int(spec[2])
    if not (0 < lo < hi) or n < 2:
        raise ConfigError("grid needs 0 < start < stop and at least 2 points")
    return np.logspace(math.log10(lo), math.log10(hi), n)


def _with_defaults(command, cfg):
    allowed = {"schema_version", *REQUIRED[command], *DEFAULTS[command]}
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys for {command}: {unknown}")
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}")
    missing = [k for k in REQUIRED[command] if k not in cfg]
    if missing:
        raise ConfigError(f"missing keys for {command}: {missing}")
    used = sorted(k for k in DEFAULTS[command] if k not in cfg)
    full = {**json.loads(json.dumps(DEFAULTS[command])), **cfg}
    return full, used


def load_system(doc) -> ControlSystem:
    if not isinstance(doc, dict):
        raise ConfigError("system must be an object")
    if "architecture" in doc:
        if "fit" in doc:
            doc = fit_design(doc)
        return system_from_design(doc)
    return ControlSystem.from_json(doc)


def load_signal(spec):
    if spec is None or isinstance(spec, (int, float)):
        return None if spec is None else float(spec)
    if isinstance(spec, list):
        return np.asarray(spec, dtype=float)
    if not isinstance(spec, dict):
        raise ConfigError("signal must be a number, list or object")
    kind = spec.get("type")
    keys = {"step": {"type", "amplitude", "time"},
            "sine": {"type", "amplitude", "omega", "phase"}}.get(kind)
    if keys is None:
        raise ConfigError(f"unknown signal type {kind!r}")
    unknown = sorted(set(spec) - keys)
    if unknown:
        raise ConfigError(f"unknown signal keys: {unknown}")
    a = float(spec.get("amplitude", 1.0))
    if kind == "step":
        t0 = float(spec.get("time", 0.0))
        return lambda t: np.where(np.asarray(t) >= t0, a, 0.0)
    w, ph = float(spec["omega"]), float(spec.get("phase", 0.0))
    return lambda t: a * np.sin(w * np.asarray(t) + ph)


def _check(doc, allowed, what):
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {what} keys: {unknown}")


def load_loop(doc, seed=None) -> LoopConfig:
    if not isinstance(doc, dict):
        raise ConfigError("loop must be an object")
    _check(doc, {"controller", "plant", "reference", "disturbance", "noise", "kalman"}, "loop")
    noise = None
    if doc.get("noise") is not None:
        n = doc["noise"]
        _check(n, {"rms", "bandwidth", "seed"}, "noise")
        noise = NoiseSpec(float(n["rms"]), n.get("bandwidth"),
                          int(seed if seed is not None else n.get("seed", 0)))
    kal = None
    if doc.get("kalman") is not None:
        k = doc["kalman"]
        _check(k, {"Q", "R", "P0"}, "kalman")
        kal = KalmanConfig(k.get("Q", 1e-6), float(k.get("R", 1e-6)), k.get("P0"))
    return LoopConfig(load_system(doc["controller"]), Plant.from_json(doc["plant"]),
                      load_signal(doc.get("reference", 1.0)),
                      load_signal(doc.get("disturbance")), noise, kal)


# -- output helpers ----------------------------------------------------------

def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path: Path, obj) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def _phasor_cols(h):
    if not np.isfinite(h):
        return [math.nan] * 4
    return [h.real, h.imag, 20 * math.log10(abs(h)) if h != 0 else -math.inf,
            math.degrees(np.angle(h))]


def _settings(cfg):
    return {k: cfg[k] for k in _SIM}


# -- commands ----------------------------------------------------------------

def cmd_bode(cfg, out, seed):
    sys_ = load_system(cfg["system"])
    grid = _grid(cfg["grid"])
    H = linear_frf(sys_, grid)
    write_csv(out / "bode.csv", ["omega", "re", "im", "mag_db", "phase_deg"],
              ([w, *_phasor_cols(h)] for w, h in zip(grid, H)))
    return ["bode.csv"], {}


def cmd_df(cfg, out, seed):
    sys_ = load_system(cfg["system"])
    grid = _grid(cfg["grid"])
    rows = []
    for w, spec, err in sweep_harmonics(sys_, grid, float(cfg["amplitude"]), 1,
                                        **_settings(cfg)):
        h = spec.first if spec is not None else complex(math.nan, math.nan)
        rows.append([w, *_phasor_cols(h), err or ""])
    write_csv(out / "df.csv", ["omega", "re", "im", "mag_db", "phase_deg", "error"], rows)
    return ["df.csv"], {"failed_points": sum(1 for r in rows if r[-1])}


def cmd_harmonics(cfg, out, seed):
    sys_ = load_system(cfg["system"])
    grid = _grid(cfg["grid"])
    n_max = int(cfg["n_max"])
    if n_max < 1:
        raise ConfigError("n_max must be at least 1")
    header = ["omega"]
    for n in range(1, n_max + 1):
        header += [f"h{n}_mag_db", f"h{n}_phase_deg"]
    header += [f"h{n}_rel_db" for n in range(2, n_max + 1)] + ["higher_ratio", "error"]
    rows = []
    for w, spec, err in sweep_harmonics(sys_, grid, float(cfg["amplitude"]), n_max,
                                        **_settings(cfg)):
        row = [w]
        if spec is None:
            row += [math.nan] * (len(header) - 2)
        else:
            mags = np.abs(spec.h)
            for n in range(n_max):
                row += [20 * math.log10(mags[n]) if mags[n] > 0 else -math.inf,
                        math.degrees(np.angle(spec.h[n]))]
            row += [20 * math.log10(mags[n] / mags[0]) if mags[n] > 0 else -math.inf
                    for n in range(1, n_max)]
            row.append(spec.higher_ratio)
        rows.append(row + [err or ""])
    write_csv(out / "harmonics.csv", header, rows)
    return ["harmonics.csv"], {"failed_points": sum(1 for r in rows if r[-1])}


def cmd_psi(cfg, out, seed):
    sys_ = load_system(cfg["system"])
    el = sys_.reset_element
    if el is None:
        raise ConfigError("psi needs a system with a reset element")
    grid = _grid(cfg["grid"])
    prof = psi_profile(el, grid)
    write_csv(out / "psi.csv", ["omega", "psi_rad", "psi_deg"],
              ([w, p, math.degrees(p)] for w, p in zip(grid, prof.psi)))
    lf = find_linear_frequencies(prof)
    return ["psi.csv"], {"linear_frequencies": [float(v) for v in lf.points]}


def _trace_rows(tr):
    flags = tr.reset_flags()
    sig = tr.signals
    for k in range(tr.t.size):
        yield [tr.t[k], sig["r"][k], tr.y[k], tr.u[k], sig["e"][k], int(flags[k])]


def cmd_step(cfg, out, seed):
    loops = cfg["loops"]
    if not isinstance(loops, dict) or not loops:
        raise ConfigError("loops must be a non-empty object")
    files, metrics = [], {}
    for name in sorted(loops):
        lc = load_loop(loops[name], seed)
        tr = simulate_loop(lc, float(cfg["dt"]), float(cfg["t_end"]))
        fname = f"step_{name}.csv"
        write_csv(out / fname, ["t", "r", "y", "u", "e", "reset"], _trace_rows(tr))
        m = step_metrics(tr).to_json()
        m["n_resets"] = int(tr.reset_times.size)
        metrics[name] = m
        files.append(fname)
    write_json(out / "metrics.json", metrics)
    return files + ["metrics.json"], {}


def cmd_loop(cfg, out, seed):
    lc = load_loop(cfg["loop"], seed)
    tr = simulate_loop(lc, float(cfg["dt"]), float(cfg["t_end"]))
    tr.to_csv(out / "trace.csv")
    write_json(out / "summary.json", tr.summary())
    return ["trace.csv", "summary.json"], {"n_resets": int(tr.reset_times.size)}


def cmd_sens(cfg, out, seed):
    lc = load_loop(cfg["loop"], seed)
    grid = _grid(cfg["grid"])
    res = pseudo_sensitivity(lc, grid, float(cfg["amplitude"]), **_settings(cfg))
    lin = linear_sensitivity(lc.controller, lc.plant, grid)
    rows = [[w, *_phasor_cols(S), abs(s_lin), err or ""]
            for (w, _, S, err), s_lin in zip(res, lin)]
    write_csv(out / "sens.csv",
              ["omega", "re", "im", "mag_db", "phase_deg", "linear_abs", "error"], rows)
    return ["sens.csv"], {"failed_points": sum(1 for r in rows if r[-1])}


def cmd_design(cfg, out, seed):
    doc = cfg["design"]
    if not isinstance(doc, dict) or "architecture" not in doc:
        raise ConfigError("design must be an object with an architecture tag")
    resolved = fit_design(doc)
    system_from_design(resolved)
    write_json(out / "design.json", {"schema_version": SCHEMA_VERSION, "system": resolved})
    return ["design.json"], {}


HANDLERS = {"bode": cmd_bode, "df": cmd_df, "harmonics": cmd_harmonics, "psi": cmd_psi,
            "step": cmd_step, "sens": cmd_sens, "design": cmd_design, "loop": cmd_loop}


def run(command: str, input_path, output_dir, overrides=(), grid=None, seed=None) -> int:
    out = Path(output_dir)
    raw = Path(input_path).read_bytes()
    try:
        cfg = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse {input_path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("top-level JSON must be an object")
    for o in overrides:
        apply_override(cfg, o)
    if grid is not None:
        cfg["grid"] = parse_grid(grid)
    full, used = _with_defaults(command, cfg)
    out.mkdir(parents=True, exist_ok=True)
    files, results = HANDLERS[command](full, out, seed)
    canonical = json.dumps(full, sort_keys=True, separators=(",", ":"))
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "input_sha256": hashlib.sha256(raw).hexdigest(),
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "overrides": list(overrides),
        "seed": seed,
        "config": full,
        "defaults_used": used,
        "outputs": files,
        "results": results,
        "versions": {"resetctl": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
    }
    write_json(out / "manifest.json", manifest)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="resetctl",
                                description="Reset control analysis from JSON experiment files.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--input", "-i", required=True, help="experiment JSON file")
    p.add_argument("--output", "-o", required=True, help="output directory")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config entry (dotted key, JSON value)")
    p.add_argument("--grid", help="log-spaced frequency grid start:stop:points")
    p.add_argument("--seed", type=int, help="noise seed for every loop")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args.command, args.input, args.output, args.overrides, args.grid, args.seed)
    except (DivergenceError, ChatteringError, NonPeriodicError, ArithmeticError,
            np.linalg.LinAlgError) as exc:
        print(f"resetctl: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError, KeyError, TypeError, OSError) as exc:
        print(f"resetctl: invalid input: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"resetctl: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
