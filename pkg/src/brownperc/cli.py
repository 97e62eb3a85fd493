"""Command-line front end: validated configs in, CSV rows and a JSON run record out.

Exit codes: 0 success, 1 invalid configuration, 2 statistical or certificate check failed,
3 numeric or internal failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
import time
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .boxes import Box
from .errors import BrownpercError, InvalidParameter, NumericFailure, UnbracketedTarget
from .stochastic import RNG_ALGORITHM, derive_stream, radius_distribution_from_dict

FORMAT_VERSION = 1
WORKERS_NOTE = "set BROWNPERC_WORKERS to fix the number of worker processes"

ESTIMATE_COLUMNS = [
    "experiment_id", "d", "lambda", "t", "r", "N", "Delta", "tol", "margin",
    "replicas", "p_hat", "ci_lo", "ci_hi", "level", "seed",
]
PCURVE_COLUMNS = ["param", "p_hat", "ci_lo", "ci_hi", "replicas", "seed"]
EDGE_COLUMNS = [
    "experiment_id", "R", "t", "lambda", "d", "Delta", "tol", "replicas",
    "p_hat", "ci_lo", "ci_hi", "occupancy", "occupancy_lo", "occupancy_hi", "level", "seed",
]
MONO_COLUMNS = ["experiment_id", "separation", "t", "d", "Delta", "tol", "replicas", "p_hat", "ci_lo", "ci_hi", "level", "seed"]
UNIQUE_COLUMNS = [
    "experiment_id", "d", "lambda", "t", "r", "R_in", "R_out", "ratio", "Delta", "tol",
    "replicas", "p_hat", "ci_lo", "ci_hi", "level", "seed",
]
SLAB_COLUMNS = ["experiment_id", "t", "lambda", "k", "p_analytic", "proposed", "kept", "rate", "z", "seed"]
SCALE_COLUMNS = ["experiment_id", "which", "d", "lambda", "t", "N", "Delta", "tol", "margin", "replicas", "p_hat", "ci_lo", "ci_hi", "level", "seed"]
CERT_COLUMNS = ["experiment_id", "n", "log10_L", "log10_a", "log10_inv_L", "ok"]
COUNTING_COLUMNS = ["experiment_id", "preconditions_ok", "conclusion_ok", "S_size", "R_size", "K"]
BRACKET_COLUMNS = ["step", "param", "successes", "replicas", "p_hat", "ci_lo", "ci_hi", "seed"]


class ConfigError(Exception):
    pass


class CheckFailed(Exception):
    pass


# ------------------------------------------------------------------ config schema

MODEL_KEYS = {
    "d": int,
    "lambda": float,
    "t": float,
    "N": float,
    "r": float,
    "Delta": float,
    "tol": float,
    "margin": float,
    "extents": list,
    "origin": list,
    "margin_error": float,
    "radius_law": dict,
}

COMMON_KEYS = {"seed": int, "replicas": int, "level": float, "output": str, "experiment_id": str}

COMMAND_KEYS: dict[str, dict[str, Any]] = {
    "cross": {"model": MODEL_KEYS},
    "threshold": {
        "model": MODEL_KEYS,
        "axis": str,
        "target": float,
        "lo": float,
        "hi": float,
        "max_iters": int,
        "max_boost": int,
        "rel_width": float,
        "synthetic_step": float,
    },
    "sweep": {"model": MODEL_KEYS, "grid": {"lambda": list, "t": list, "r": list, "N": list}},
    "edges": {"grid": list, "lambda": float, "d": int, "Delta": float, "tol": float},
    "mono": {"separations": list, "t": float, "d": int, "Delta": float, "tol": float},
    "scale": {"lambda": float, "t": float, "N": float, "eta": float, "d": int, "Delta": float, "alpha": float, "shared": bool},
    "unique": {"model": MODEL_KEYS, "R_in": float, "ratios": list},
    "slab": {"lambda": float, "t": float, "d": int, "window": list, "K_max": int, "method": str, "Delta": float},
    "certify": {
        "d": int, "R": int, "L0": int, "N": int, "lambda": object, "tail_C": float, "tail_R0": float,
        "c1": object, "c2": object, "c3": object, "c4": object, "a0": object, "n_max": int, "M": int,
    },
    "counting": {"instance": str},
}

PLOT_KINDS = ("snapshot", "pcurve", "bracket-trace")


def _load_file(path: Path) -> dict:
    text = path.read_text(encoding="utf-8")
    suffix = path.suffix.lower()
    try:
        if suffix in (".yaml", ".yml"):
            import yaml

            data = yaml.safe_load(text) or {}
        elif suffix == ".json":
            data = json.loads(text)
        else:
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            data = tomllib.loads(text)
    except Exception as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return data


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _apply_override(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not KEY=VALUE")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} walks into a non-table value")
    node[parts[-1]] = _parse_value(raw)


def _check_type(name: str, value: Any, expected: Any) -> Any:
    if isinstance(expected, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{name} must be a table")
        unknown = set(value) - set(expected)
        if unknown:
            raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")
        return {k: _check_type(f"{name}.{k}", v, expected[k]) for k, v in value.items()}
    if expected is object:
        return value
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number")
        if not math.isfinite(value):
            raise ConfigError(f"{name} must be finite")
        return float(value)
    if expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{name} must be an integer")
        return value
    if expected is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true or false")
        return value
    if not isinstance(value, expected):
        raise ConfigError(f"{name} must be of type {expected.__name__}")
    return value


def validate_config(command: str, cfg: dict) -> dict:
    schema = {**COMMON_KEYS, **COMMAND_KEYS[command]}
    cfg = dict(cfg)
    cfg.pop("command", None)
    unknown = set(cfg) - set(schema)
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    out = {k: _check_type(k, v, schema[k]) for k, v in cfg.items()}
    out.setdefault("seed", 0)
    out.setdefault("level", 0.99)
    if "replicas" in out and out["replicas"] < 1:
        raise ConfigError("replicas must be >= 1")
    if not 0 < out["level"] < 1:
        raise ConfigError("level must lie in (0, 1)")
    if out["seed"] < 0:
        raise ConfigError("seed must be nonnegative")
    return out


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


# ------------------------------------------------------------------ model config


def model_config(block: dict, seed: int):
    from .models import ModelConfig

    required = ("d", "lambda", "t", "N")
    missing = [k for k in required if k not in block]
    if missing:
        raise ConfigError(f"model block is missing {missing}")
    law = block.get("radius_law")
    return ModelConfig(
        d=block["d"],
        lam=block["lambda"],
        t=block["t"],
        N=block["N"],
        r=block.get("r", 0.0),
        step=block.get("Delta", 0.01),
        extents=tuple(block["extents"]) if "extents" in block else None,
        origin=tuple(block["origin"]) if "origin" in block else None,
        margin=block.get("margin"),
        tol=block.get("tol"),
        master_seed=seed,
        radius_law=radius_distribution_from_dict(law) if law is not None else None,
        margin_error=block.get("margin_error", 1e-3),
    )


def _estimate_row(exp_id: str, config, est, seed: int) -> dict:
    return {
        "experiment_id": exp_id,
        "d": config.d,
        "lambda": config.lam,
        "t": config.t,
        "r": config.r,
        "N": config.N,
        "Delta": config.step,
        "tol": config.resolved_tol,
        "margin": config.resolved_margin,
        "replicas": est.replicas,
        "p_hat": est.p_hat,
        "ci_lo": est.ci_lo,
        "ci_hi": est.ci_hi,
        "level": est.level,
        "seed": seed,
    }


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if k not in cfg]
    if missing:
        raise ConfigError(f"missing required keys {missing}")


# ------------------------------------------------------------------ commands
# each returns (columns, rows, results, passed) after validating everything up front


def _cmd_cross(cfg, exp_id):
    from .estimators import crossing_probability

    _require(cfg, "model", "replicas")
    config = model_config(cfg["model"], cfg["seed"]).resolved()

    def run():
        est = crossing_probability(config, cfg["replicas"], derive_stream(cfg["seed"], [("cross", 0)]), level=cfg["level"])
        return ESTIMATE_COLUMNS, [_estimate_row(exp_id, config, est, cfg["seed"])], {"estimate": est.to_dict()}, True

    return run


def _cmd_threshold(cfg, exp_id):
    from .estimators import threshold_bisect

    _require(cfg, "replicas", "lo", "hi")
    axis = cfg.get("axis", "t")
    if axis not in ("t", "lam", "lambda"):
        raise ConfigError("axis must be t or lambda")
    axis = "lam" if axis == "lambda" else axis
    if not 0 <= cfg["lo"] < cfg["hi"]:
        raise ConfigError("need 0 <= lo < hi")
    target = cfg.get("target", 0.5)
    if not 0 < target < 1:
        raise ConfigError("target must lie in (0, 1)")
    counter = None
    template = None
    if "synthetic_step" in cfg:
        jump = cfg["synthetic_step"]

        def counter(value, start, stop):
            return (stop - start) if value > jump else 0

    else:
        _require(cfg, "model")
        template = model_config(cfg["model"], cfg["seed"])
    stream = derive_stream(cfg["seed"], [("threshold", 0)])

    def run():
        b = threshold_bisect(
            template,
            axis,
            target,
            cfg["lo"],
            cfg["hi"],
            cfg["replicas"],
            cfg.get("max_iters", 20),
            stream,
            cfg["level"],
            cfg.get("max_boost", 8),
            cfg.get("rel_width", 0.2),
            counter,
        )
        rows = []
        for value, est in ((b.lo, b.p_lo), (b.hi, b.p_hi)):
            rows.append({"param": value, "p_hat": est.p_hat, "ci_lo": est.ci_lo, "ci_hi": est.ci_hi, "replicas": est.replicas, "seed": cfg["seed"]})
        return PCURVE_COLUMNS, rows, {"bracket": b.to_dict()}, b.flag is None

    return run


def _cmd_sweep(cfg, exp_id):
    from dataclasses import replace

    from .estimators import crossing_probability

    _require(cfg, "model", "replicas")
    base = model_config(cfg["model"], cfg["seed"])
    grid = cfg.get("grid", {})
    axes = {"lambda": "lam", "t": "t", "r": "r", "N": "N"}
    values = {k: list(grid.get(k, [getattr(base, axes[k])])) for k in axes}
    cells = []
    for lam in values["lambda"]:
        for t in values["t"]:
            for r in values["r"]:
                for N in values["N"]:
                    cells.append(replace(base, lam=float(lam), t=float(t), r=float(r), N=float(N)).resolved())

    def run():
        rows, results = [], []
        for idx, config in enumerate(cells):
            est = crossing_probability(config, cfg["replicas"], derive_stream(cfg["seed"], [("sweep", idx)]), level=cfg["level"])
            rows.append(_estimate_row(exp_id, config, est, cfg["seed"]))
            results.append({"cell": idx, "config": config.to_dict(), "estimate": est.to_dict()})
        return ESTIMATE_COLUMNS, rows, {"cells": results}, True

    return run


def _cmd_edges(cfg, exp_id):
    from .estimators import edge_statistics
    from .geometry import default_tol

    _require(cfg, "grid", "replicas")
    d = cfg.get("d", 2)
    lam = cfg.get("lambda", 1.0)
    step = cfg.get("Delta", 0.01)
    tol = cfg.get("tol", default_tol(d, 0.0, step))
    grid = [tuple(float(x) for x in cell) for cell in cfg["grid"]]
    if any(len(c) != 2 or c[0] <= 0 or c[1] < 0 for c in grid):
        raise ConfigError("grid entries must be [R > 0, t >= 0]")
    if lam < 0 or step <= 0 or tol < 0 or d < 1:
        raise ConfigError("need lambda >= 0, Delta > 0, tol >= 0, d >= 1")

    def run():
        rows, results = [], []
        for idx, (R, t) in enumerate(grid):
            e, occ = edge_statistics(R, t, lam, d, step, tol, cfg["replicas"], derive_stream(cfg["seed"], [("edges", idx)]), cfg["level"])
            rows.append({
                "experiment_id": exp_id, "R": R, "t": t, "lambda": lam, "d": d, "Delta": step, "tol": tol,
                "replicas": e.replicas, "p_hat": e.p_hat, "ci_lo": e.ci_lo, "ci_hi": e.ci_hi,
                "occupancy": occ.p_hat, "occupancy_lo": occ.ci_lo, "occupancy_hi": occ.ci_hi,
                "level": e.level, "seed": cfg["seed"],
            })
            results.append({"R": R, "t": t, "edge": e.to_dict(), "occupancy": occ.to_dict()})
        return EDGE_COLUMNS, rows, {"cells": results}, True

    return run


def _cmd_mono(cfg, exp_id):
    from .estimators import path_intersection_probability
    from .geometry import default_tol

    _require(cfg, "separations", "t", "replicas")
    d = cfg.get("d", 2)
    step = cfg.get("Delta", 0.01)
    tol = cfg.get("tol", default_tol(d, 0.0, step))
    seps = [float(s) for s in cfg["separations"]]
    if any(s < 0 for s in seps) or cfg["t"] < 0:
        raise ConfigError("separations and t must be nonnegative")
    if d not in (2, 3) and not (d >= 4 and tol > 0):
        raise ConfigError("mono needs d in {2, 3}, or d >= 4 with tol > 0")

    def run():
        rows, ests = [], []
        for idx, s in enumerate(sorted(seps)):
            e = path_intersection_probability(s, cfg["t"], d, step, tol, cfg["replicas"], derive_stream(cfg["seed"], [("mono", idx)]), cfg["level"])
            ests.append(e)
            rows.append({
                "experiment_id": exp_id, "separation": s, "t": cfg["t"], "d": d, "Delta": step, "tol": tol,
                "replicas": e.replicas, "p_hat": e.p_hat, "ci_lo": e.ci_lo, "ci_hi": e.ci_hi, "level": e.level, "seed": cfg["seed"],
            })
        # non-increasing within CI: no later estimate's interval lies entirely above an earlier one
        ok = all(ests[j].ci_lo <= ests[i].ci_hi for i in range(len(ests)) for j in range(i + 1, len(ests)))
        return MONO_COLUMNS, rows, {"estimates": [e.to_dict() for e in ests], "non_increasing": ok}, ok

    return run


def _cmd_scale(cfg, exp_id):
    from .estimators import rescaled_config, two_proportion_check
    from .models import ModelConfig

    _require(cfg, "lambda", "t", "N", "eta", "replicas")
    if not cfg["eta"] > 0:
        raise ConfigError("eta must be positive")
    base = ModelConfig(d=cfg.get("d", 2), lam=cfg["lambda"], t=cfg["t"], N=cfg["N"], step=cfg.get("Delta", 0.01)).resolved()
    other = rescaled_config(base, cfg["eta"])

    def run():
        rep = two_proportion_check(
            base, other, cfg["replicas"], derive_stream(cfg["seed"], [("scale", 0)]), cfg.get("shared", False), cfg.get("alpha", 0.01), cfg["level"]
        )
        rows = []
        for which, c, e in (("base", base, rep.first), ("rescaled", other, rep.second)):
            row = _estimate_row(exp_id, c, e, cfg["seed"])
            row["which"] = which
            rows.append(row)
        return SCALE_COLUMNS, rows, {"test": rep.to_dict()}, rep.passed

    return run


def _cmd_unique(cfg, exp_id):
    from .estimators import multiple_cluster_frequency

    _require(cfg, "model", "R_in", "ratios", "replicas")
    config = model_config(cfg["model"], cfg["seed"])
    ratios = [float(x) for x in cfg["ratios"]]
    if cfg["R_in"] <= 0 or any(x <= 1 for x in ratios):
        raise ConfigError("need R_in > 0 and ratios > 1")

    def run():
        rows, ests = [], []
        for idx, ratio in enumerate(ratios):
            R_out = cfg["R_in"] * ratio
            e = multiple_cluster_frequency(config, cfg["R_in"], R_out, cfg["replicas"], derive_stream(cfg["seed"], [("unique", idx)]), cfg["level"])
            ests.append({"ratio": ratio, **e.to_dict()})
            rows.append({
                "experiment_id": exp_id, "d": config.d, "lambda": config.lam, "t": config.t, "r": config.r,
                "R_in": cfg["R_in"], "R_out": R_out, "ratio": ratio, "Delta": config.step, "tol": config.resolved_tol,
                "replicas": e.replicas, "p_hat": e.p_hat, "ci_lo": e.ci_lo, "ci_hi": e.ci_hi, "level": e.level, "seed": cfg["seed"],
            })
        return UNIQUE_COLUMNS, rows, {"frequencies": ests}, True

    return run


def _cmd_slab(cfg, exp_id):
    from .estimators import slab_diagnostics

    _require(cfg, "lambda", "t", "replicas")
    d = cfg.get("d", 2)
    if d < 2 or cfg["t"] <= 0 or cfg["lambda"] < 0:
        raise ConfigError("slab needs d >= 2, t > 0, lambda >= 0")
    ext = cfg.get("window", [10.0] * (d - 1))
    if len(ext) != d - 1:
        raise ConfigError("window must list d - 1 extents")
    window = Box.from_extents(tuple(float(x) for x in ext))
    method = cfg.get("method", "exact")
    if method not in ("exact", "euler"):
        raise ConfigError("method must be exact or euler")

    def run():
        diag = slab_diagnostics(
            cfg["lambda"], cfg["t"], d, window, cfg["replicas"], derive_stream(cfg["seed"], [("slab", 0)]), cfg.get("K_max"), method, cfg.get("Delta", 0.01)
        )
        rows = []
        for k in range(diag.analytic.size):
            rows.append({
                "experiment_id": exp_id, "t": diag.t, "lambda": diag.lam, "k": k + 1, "p_analytic": float(diag.analytic[k]),
                "proposed": int(diag.proposed[k]), "kept": int(diag.kept[k]), "rate": float(diag.rates[k]),
                "z": float(diag.z_scores[k]), "seed": cfg["seed"],
            })
        return SLAB_COLUMNS, rows, {"slab": diag.to_dict()}, diag.gof_p_value >= 0.01

    return run


def _parse_number(x):
    if isinstance(x, str):
        try:
            return Fraction(x)
        except ValueError:
            raise ConfigError(f"cannot parse number {x!r}") from None
    return x


def _cmd_certify(cfg, exp_id):
    from .certificate import boundary_tail_bound, renorm_recursion, seed_condition
    from .stochastic import ExponentialTail

    _require(cfg, "d", "R", "L0", "N", "lambda")
    kw = {k: _parse_number(cfg[k]) for k in ("c1", "c2", "c3", "c4", "a0") if k in cfg}
    tail = (cfg.get("tail_C", 1.0), cfg.get("tail_R0", 1.0))

    def run():
        rep = renorm_recursion(cfg["d"], cfg["R"], cfg["L0"], cfg["N"], _parse_number(cfg["lambda"]), tail=tail, n_max=cfg.get("n_max", 20), **kw)
        seed = seed_condition(cfg["d"], cfg["L0"], rep.c1, rep.c4)
        results = {"certificate": rep.to_dict(), "seed_condition": str(seed)}
        if "M" in cfg:
            results["boundary_tail_bound"] = boundary_tail_bound(ExponentialTail(*tail), cfg["M"], cfg["N"], cfg["d"])
        info = rep.to_dict()
        rows = []
        for n, (lL, la) in enumerate(zip(info["log10_scales"], info["log10_bounds"])):
            rows.append({
                "experiment_id": exp_id, "n": n, "log10_L": lL, "log10_a": la,
                "log10_inv_L": -lL if lL is not None else None,
                "ok": la is None or (lL is not None and la <= -lL + 1e-12),
            })
        return CERT_COLUMNS, rows, results, rep.passed

    return run


def _cmd_counting(cfg, exp_id):
    from .certificate import CountingInstance, counting_lemma_check

    _require(cfg, "instance")
    path = Path(cfg["instance"])
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read counting instance: {exc}") from None
    try:
        inst = CountingInstance.from_dict(data)
    except InvalidParameter as exc:
        raise ConfigError(str(exc)) from None

    def run():
        rep = counting_lemma_check(inst)
        row = {
            "experiment_id": exp_id, "preconditions_ok": rep.preconditions_ok, "conclusion_ok": rep.conclusion_ok,
            "S_size": len(inst.S), "R_size": len(inst.R), "K": inst.K,
        }
        results = {"preconditions_ok": rep.preconditions_ok, "conclusion_ok": rep.conclusion_ok, "violations": list(rep.violations)}
        return COUNTING_COLUMNS, [row], results, (not rep.preconditions_ok) or rep.conclusion_ok

    return run


COMMANDS = {
    "cross": _cmd_cross,
    "threshold": _cmd_threshold,
    "sweep": _cmd_sweep,
    "edges": _cmd_edges,
    "mono": _cmd_mono,
    "scale": _cmd_scale,
    "unique": _cmd_unique,
    "slab": _cmd_slab,
    "certify": _cmd_certify,
    "counting": _cmd_counting,
}


# ------------------------------------------------------------------ output


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v: Any) -> Any:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return v


def csv_text(columns: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k)) for k in columns})
    return buf.getvalue()


def _json_default(o: Any) -> Any:
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Fraction):
        return str(o)
    return str(o)


def _output_paths(cfg: dict, command: str) -> tuple[Path, Path]:
    stem = Path(cfg.get("output", f"brownperc_{command}"))
    return stem.with_suffix(".csv"), stem.with_suffix(".json")


def run_command(command: str, cfg: dict) -> int:
    t0 = time.perf_counter()
    try:
        cfg = validate_config(command, cfg)
        # where results are written is not part of what is computed
        digest = config_hash({"command": command, **{k: v for k, v in cfg.items() if k != "output"}})
        exp_id = f"{cfg.get('experiment_id', command)}-{digest[:12]}"
        job = COMMANDS[command](cfg, exp_id)
    except (ConfigError, InvalidParameter, UnbracketedTarget) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        columns, rows, results, passed = job()
    except (InvalidParameter, UnbracketedTarget) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericFailure, BrownpercError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    csv_path, json_path = _output_paths(cfg, command)
    record = {
        "version": __version__,
        "format_version": FORMAT_VERSION,
        "experiment_id": exp_id,
        "command": command,
        "config": cfg,
        "config_hash": digest,
        "csv": str(csv_path),
        "columns": columns,
        "results": results,
        "passed": bool(passed),
        "timing": {"wall_seconds": time.perf_counter() - t0},
        "rng": {"algorithm": RNG_ALGORITHM, "master_seed": cfg["seed"]},
    }
    atomic_write(csv_path, csv_text(columns, rows))
    atomic_write(json_path, json.dumps(record, indent=2, default=_json_default) + "\n")
    print(f"wrote {csv_path} and {json_path}")
    return 0 if passed else 2


# ------------------------------------------------------------------ plot data


def snapshot_rows(sample) -> tuple[list[str], list[dict]]:
    d = sample.positions.shape[2] if sample.positions.ndim == 3 else sample.config.d
    columns = ["chain", "vertex"] + [f"x{k + 1}" for k in range(d)] + ["radius"]
    rows = []
    for c in range(sample.n_chains):
        for v in range(sample.positions.shape[1]):
            row = {"chain": c, "vertex": v, "radius": float(sample.radii[c])}
            for k in range(d):
                row[f"x{k + 1}"] = float(sample.positions[c, v, k])
            rows.append(row)
    return columns, rows


def read_snapshot(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """(positions (m, n, d), radii) from a snapshot CSV."""
    with open(path, encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = [c for c in (reader.fieldnames or []) if c.startswith("x")]
        data: dict[int, list] = {}
        radii: dict[int, float] = {}
        for row in reader:
            c = int(row["chain"])
            data.setdefault(c, []).append([float(row[k]) for k in cols])
            radii[c] = float(row["radius"])
    if not data:
        return np.zeros((0, 0, len(cols))), np.zeros(0)
    keys = sorted(data)
    return np.array([data[k] for k in keys]), np.array([radii[k] for k in keys])


def emit_plot_data(record: dict, kind: str, out: Path, replica: int = 0) -> None:
    if kind not in PLOT_KINDS:
        raise ConfigError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    seed = record.get("rng", {}).get("master_seed", 0)
    command = record.get("command")
    results = record.get("results", {})
    if kind == "snapshot":
        from .models import sample_occupied_set

        cfg = record.get("config", {})
        if "model" not in cfg:
            raise ConfigError("snapshot needs a record with a model block")
        config = model_config(cfg["model"], seed)
        sample = sample_occupied_set(config, derive_stream(seed, [("cross", 0)]).child("replica", replica))
        columns, rows = snapshot_rows(sample)
    elif kind == "pcurve":
        columns, rows = PCURVE_COLUMNS, []
        if command == "threshold":
            for item in results["bracket"]["history"]:
                rows.append({k: item.get(k) for k in ("param", "p_hat", "ci_lo", "ci_hi", "replicas")} | {"seed": seed})
            rows.sort(key=lambda r: r["param"])
        elif command == "sweep":
            cells = results["cells"]
            varying = [k for k in ("lambda", "t", "r", "N") if len({c["config"][k] for c in cells}) > 1]
            key = varying[0] if varying else "t"
            for c in cells:
                e = c["estimate"]
                rows.append({"param": c["config"][key], "p_hat": e["p_hat"], "ci_lo": e["ci_lo"], "ci_hi": e["ci_hi"], "replicas": e["replicas"], "seed": seed})
        elif command == "cross":
            e = results["estimate"]
            rows.append({"param": record["config"]["model"].get("t"), "p_hat": e["p_hat"], "ci_lo": e["ci_lo"], "ci_hi": e["ci_hi"], "replicas": e["replicas"], "seed": seed})
        else:
            raise ConfigError(f"pcurve needs a cross, sweep or threshold record, got {command!r}")
    else:
        if command != "threshold":
            raise ConfigError("bracket-trace needs a threshold record")
        columns = BRACKET_COLUMNS
        rows = [{"step": i, "seed": seed, **item} for i, item in enumerate(results["bracket"]["history"])]
    atomic_write(out, csv_text(columns, rows))


# ------------------------------------------------------------------ entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brownperc", description=__doc__.splitlines()[0], epilog=WORKERS_NOTE)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", nargs="?", help="TOML, YAML or JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config value (dotted keys)")
        p.add_argument("--seed", type=int)
        p.add_argument("--replicas", type=int)
        p.add_argument("--level", type=float)
        p.add_argument("--output", help="output stem; .csv and .json are appended")
    p = sub.add_parser("plot")
    p.add_argument("record", help="JSON run record")
    p.add_argument("--kind", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--replica", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    if args.command == "plot":
        try:
            record = json.loads(Path(args.record).read_text(encoding="utf-8"))
            emit_plot_data(record, args.kind, Path(args.output), args.replica)
        except (ConfigError, OSError, json.JSONDecodeError, KeyError, InvalidParameter) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        return 0
    try:
        cfg = _load_file(Path(args.config)) if args.config else {}
        if "command" in cfg and cfg["command"] != args.command:
            raise ConfigError(f"config is for {cfg['command']!r}, not {args.command!r}")
        for assignment in args.set:
            _apply_override(cfg, assignment)
        for key in ("seed", "replicas", "level", "output"):
            value = getattr(args, key)
            if value is not None:
                cfg[key] = value
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return run_command(args.command, cfg)
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal-failure exit code
        print(f"internal failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
