"""Command-line front end: configuration, experiment commands, emitters.

Usage: ``basinlab <command> --config path [--out dir] [--seed N]``.
Commands map one-to-one onto the experiment battery: sweep, ablate,
cooldown, align, lambda, normctl, tausweep, props, sadiag. Every command
writes its artifacts plus a manifest listing content digests; identical
config + master seed reproduce byte-identical data files.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import jsonschema

from . import __version__, analysis, schemas
from .analysis import (AlignmentStats, BasinGrid, GridSpec, alignment_stats,
                       drift_report, estimate_lipschitz, estimate_mu,
                       estimate_mu_M, estimate_mu_M_field,
                       fixed_point_shift_report, grid_sweep, lambda_sweep,
                       make_field, masks, newton_zero, norm_matched_control,
                       separatrix, sym_eig_max, threshold_sweep, wilson,
                       intervals_overlap)
from .fields import (EstimatorBlowupError, UnrollConfig,
                     UnrollDivergenceError)
from .games import GameSpec, GameValidationError, game_from_config, logit, sigmoid
from .learners import (Schedule, ScheduleError, make_shape_then_cool,
                       paired_run_set, run, write_run_records)
from .analysis import EquilibriumError, sa_diagnostics
from .rng import stream

COMMANDS = ("sweep", "ablate", "cooldown", "align", "lambda", "normctl",
            "tausweep", "props", "sadiag")

_NUMERICAL_ERRORS = (UnrollDivergenceError, EstimatorBlowupError,
                     EquilibriumError, np.linalg.LinAlgError)


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


# ---------------------------------------------------------------------------
# configuration

_BASE_DEFAULTS = {
    "game": {"kind": "stag_hunt"},
    "arms": ["pg", "meta_mapg"],
    "unroll": {"length": 3, "step_own": 0.3, "step_peer": 0.3},
    "schedule": {
        "step_rule": "constant",
        "step_size": 0.2,
        "n0": 10,
        "lambda_rule": "constant",
        "lambda": 1.0,
        "handoff": 1000,
        "rho_cool": 0.99,
        "total_steps": 500,
    },
    "grid": {"n1": 21, "n2": 21, "lo": 0.05, "hi": 0.95},
    "seeds": 1,
    "master_seed": 0,
    "mode": "exact",
    "tau": 0.82,
    "lambda_grid": [0.0, 0.5, 1.0, 2.0, 5.0],
    "tau_grid": [0.78, 0.80, 0.82, 0.84, 0.86],
    "sampling": {"batch": 64, "horizon": 60, "repeats": 400,
                 "bias_horizons": [20, 40, 80],
                 "points": [[0.5, 0.5], [0.35, 0.65], [0.7, 0.3]]},
    "props": {
        "shift_lambdas": [0.05, 0.1, 0.2, 0.4],
        "mu_radius": 0.4,
        "mu_samples": 200,
        "lipschitz_radius": 0.3,
        "lipschitz_samples": 100,
        "drift_samples": 200,
        "corner_proxy": 0.999,
        "cool_lambdas": [1.0, 0.5],
        "deep_inits": 20,
        "deep_lo": 0.8,
        "deep_hi": 0.95,
    },
    "out_dir": "results",
}

_TAG_OVERRIDES = {
    "sweep": {},
    "ablate": {"arms": ["pg", "own_only", "peer_only", "meta_mapg"],
               "seeds": 100},
    "cooldown": {"seeds": 80,
                 "schedule": {"total_steps": 2000, "handoff": 1000}},
    "align": {},
    "lambda": {},
    "normctl": {},
    "tausweep": {"arms": ["pg", "own_only", "peer_only", "meta_mapg"],
                 "seeds": 100},
    "props": {},
    "sadiag": {},
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(here, "unknown field")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(here, f"expected an object, got {type(val).__name__}")
            out[key] = _merge(base[key], val, here)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(tag: str, path: str | None) -> dict:
    """Defaults for the command, deep-merged with the user's JSON file."""
    defaults = _merge(_BASE_DEFAULTS, _TAG_OVERRIDES[tag])
    defaults["game"] = dict(defaults["game"])  # payoffs/discount optional
    user = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(str(path), f"cannot read config ({exc})")
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}", exc.msg)
        if not isinstance(user, dict):
            raise ConfigError(str(path), "top-level config must be an object")
    user = dict(user)
    cfg_tag = user.pop("tag", tag)
    if cfg_tag != tag:
        raise ConfigError("tag", f"config tag {cfg_tag!r} does not match "
                                 f"command {tag!r}")
    game_cfg = user.pop("game", None)
    cfg = _merge(defaults, user)
    if game_cfg is not None:
        if not isinstance(game_cfg, dict) or "kind" not in game_cfg:
            raise ConfigError("game", "must be an object with a 'kind'")
        cfg["game"] = game_cfg
    cfg["tag"] = tag
    _validate(cfg)
    return cfg


def _require(cond: bool, path: str, msg: str):
    if not cond:
        raise ConfigError(path, msg)


def _validate(cfg: dict):
    _require(cfg["mode"] in ("exact", "sampled"), "mode",
             f"must be 'exact' or 'sampled', got {cfg['mode']!r}")
    _require(isinstance(cfg["seeds"], int) and cfg["seeds"] >= 1, "seeds",
             f"must be a positive integer, got {cfg['seeds']!r}")
    _require(isinstance(cfg["master_seed"], int), "master_seed",
             "must be an integer")
    _require(0.0 < cfg["tau"] < 1.0, "tau", f"must lie in (0, 1), got {cfg['tau']}")
    for arm in cfg["arms"]:
        _require(arm in ("pg", "own_only", "peer_only", "meta_mapg"), "arms",
                 f"unknown arm {arm!r}")
    sch = cfg["schedule"]
    _require(sch["step_rule"] in ("constant", "inverse"),
             "schedule.step_rule", f"unknown rule {sch['step_rule']!r}")
    _require(sch["lambda_rule"] in ("constant", "zero_after",
                                    "geometric_after"),
             "schedule.lambda_rule", f"unknown rule {sch['lambda_rule']!r}")
    _require(sch["step_size"] > 0, "schedule.step_size", "must be positive")
    _require(sch["lambda"] >= 0, "schedule.lambda", "must be >= 0")
    _require(isinstance(sch["total_steps"], int) and sch["total_steps"] >= 1,
             "schedule.total_steps", "must be a positive integer")
    g = cfg["grid"]
    _require(isinstance(g["n1"], int) and isinstance(g["n2"], int)
             and g["n1"] >= 1 and g["n2"] >= 1, "grid",
             "axis sizes must be positive integers")
    _require(0.0 < g["lo"] <= g["hi"] < 1.0, "grid",
             "bounds must satisfy 0 < lo <= hi < 1")
    _require(len(cfg["tau_grid"]) > 0, "tau_grid", "must be nonempty")
    s = cfg["sampling"]
    _require(s["batch"] >= 1 and s["horizon"] >= 1, "sampling",
             "batch and horizon must be >= 1")


def build_game(cfg: dict) -> GameSpec:
    return game_from_config(cfg["game"])


def build_unroll(cfg: dict) -> UnrollConfig:
    u = cfg["unroll"]
    return UnrollConfig(u["length"], u["step_own"], u["step_peer"])


def build_schedule(cfg: dict, lam_rule: str | None = None) -> Schedule:
    sch = cfg["schedule"]
    if sch["step_rule"] == "constant":
        step = ("constant", float(sch["step_size"]))
    else:
        step = ("inverse", float(sch["step_size"]), int(sch["n0"]))
    rule = lam_rule or sch["lambda_rule"]
    lam = float(sch["lambda"])
    if rule == "constant":
        shaping = ("constant", lam)
    elif rule == "zero_after":
        shaping = ("zero_after", lam, int(sch["handoff"]))
    else:
        shaping = ("geometric_after", lam, int(sch["handoff"]),
                   float(sch["rho_cool"]))
    return Schedule(step, shaping, int(sch["total_steps"]))


# ---------------------------------------------------------------------------
# emitters

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.9g}"
    return str(x)


class Emitter:
    """Writes artifacts into the output directory and tracks digests."""

    def __init__(self, out_dir: Path, command: str, config: dict):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.config = config
        self.files: dict[str, str] = {}
        self.started = datetime.datetime.now(datetime.timezone.utc)

    def _record(self, name: str, data: bytes):
        (self.out_dir / name).write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()

    def add_file(self, name: str):
        data = (self.out_dir / name).read_bytes()
        self.files[name] = hashlib.sha256(data).hexdigest()

    def write_csv(self, name: str, header: list[str], rows):
        import io

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
        self._record(name, buf.getvalue().encode("utf-8"))

    def write_json(self, name: str, obj: dict, schema: dict):
        jsonschema.validate(obj, schema)
        text = json.dumps(obj, indent=1, sort_keys=True)
        self._record(name, (text + "\n").encode("utf-8"))

    def write_summary(self, data: dict):
        obj = {
            "command": self.command,
            "game_kind": self.config["game"]["kind"],
            "master_seed": self.config["master_seed"],
            "data": data,
        }
        self.write_json("summary.json", obj, schemas.SUMMARY_SCHEMA)

    def finish(self):
        manifest = {
            "command": self.command,
            "config_hash": hashlib.sha256(
                json.dumps(self.config, sort_keys=True).encode("utf-8")
            ).hexdigest(),
            "tool_version": __version__,
            "started": self.started.isoformat(),
            "finished": datetime.datetime.now(
                datetime.timezone.utc).isoformat(),
            "files": dict(sorted(self.files.items())),
        }
        jsonschema.validate(manifest, schemas.MANIFEST_SCHEMA)
        text = json.dumps(manifest, indent=1, sort_keys=True)
        (self.out_dir / "manifest.json").write_text(text + "\n",
                                                    encoding="utf-8")


def _grid_json(bg: BasinGrid) -> dict:
    return {
        "p1_axis": [float(x) for x in bg.p1_axis],
        "p2_axis": [float(x) for x in bg.p2_axis],
        "arms": list(bg.arms),
        "seeds_per_cell": bg.seeds_per_cell,
        "counts": bg.counts.tolist(),
        "game_kind": bg.game_kind,
        "config": bg.config,
    }


def _cells_rows(bg: BasinGrid):
    for a, arm in enumerate(bg.arms):
        for i1, p1 in enumerate(bg.p1_axis):
            for i2, p2 in enumerate(bg.p2_axis):
                yield (i1, i2, p1, p2, arm, int(bg.counts[a, i1, i2]),
                       bg.seeds_per_cell,
                       bg.counts[a, i1, i2] / bg.seeds_per_cell)


def _separatrix_rows(result):
    for pid, line in enumerate(result.polylines):
        for vid, (x, y) in enumerate(line):
            yield (pid, vid, x, y)


def _shift_block(report, max_first_order_error=None) -> dict:
    out = {
        "lambdas": [float(x) for x in report.lambdas],
        "shift_norms": [float(x) for x in report.shift_norms],
        "shifts": [[float(v) for v in row] for row in report.shifts],
        "converged": [bool(b) for b in report.converged],
        "slope": float(report.slope),
        "rel_residual": float(report.rel_residual),
        "first_order_direction": [float(v)
                                  for v in report.first_order_direction],
    }
    if max_first_order_error is not None:
        out["max_first_order_error"] = float(max_first_order_error)
    return out


def _drift_block(report, radius=None, skipped=False, reason=None) -> dict:
    if skipped:
        return {"n_samples": 0, "violations": 0, "worst_margin": 0.0,
                "skipped": True, "reason": reason or ""}
    out = {"n_samples": report.n_samples, "violations": report.violations,
           "worst_margin": report.worst_margin, "skipped": False}
    if radius is not None:
        out["radius"] = float(radius)
    return out


# ---------------------------------------------------------------------------
# commands

def cmd_sweep(cfg: dict, out_dir: Path):
    game = build_game(cfg)
    schedule = build_schedule(cfg)
    unroll = build_unroll(cfg)
    grid = GridSpec(**cfg["grid"])
    bg = grid_sweep(game, cfg["arms"], grid, cfg["seeds"], schedule, unroll,
                    mode=cfg["mode"], master_seed=cfg["master_seed"],
                    tau=cfg["tau"])
    em = Emitter(out_dir, "sweep", cfg)
    em.write_json("grid.json", _grid_json(bg), schemas.GRID_SCHEMA)
    em.write_csv("cells.csv",
                 ["i1", "i2", "p1", "p2", "arm", "successes", "seeds", "rate"],
                 _cells_rows(bg))
    sep = separatrix(bg, "pg") if "pg" in bg.arms else separatrix(
        bg, bg.arms[0])
    em.write_csv("separatrix.csv", ["polyline", "vertex", "p1", "p2"],
                 _separatrix_rows(sep))
    data = {"coverage": {arm: bg.coverage(arm) for arm in bg.arms},
            "separatrix_flag": sep.flag}
    if "pg" in bg.arms and "meta_mapg" in bg.arms:
        cm = masks(bg)
        data["gap"] = bg.coverage("meta_mapg") - bg.coverage("pg")
        data["gained"] = cm.n_gained
        data["lost"] = cm.n_lost
    em.write_summary(data)
    em.finish()
    return em


def _rate_rows(records, arms):
    by_arm = {arm: [r for r in records if r.arm == arm] for arm in arms}
    rows = []
    for arm in arms:
        recs = by_arm[arm]
        k = sum(r.success for r in recs)
        n = len(recs)
        ci = wilson(k, n)
        rows.append((arm, k, n, k / n, ci.lo, ci.hi))
    return rows


def cmd_ablate(cfg: dict, out_dir: Path):
    game = build_game(cfg)
    schedule = build_schedule(cfg)
    unroll = build_unroll(cfg)
    records = paired_run_set(game, cfg["arms"], cfg["seeds"], schedule,
                             unroll, mode=cfg["mode"],
                             master_seed=cfg["master_seed"], tau=cfg["tau"])
    em = Emitter(out_dir, "ablate", cfg)
    rows = _rate_rows(records, cfg["arms"])
    em.write_csv("ablation.csv",
                 ["arm", "successes", "trials", "rate", "wilson_lo",
                  "wilson_hi"], rows)
    write_run_records(records, em.out_dir / "runs.csv")
    em.add_file("runs.csv")
    data = {"rates": {r[0]: r[3] for r in rows}}
    if {"peer_only", "meta_mapg"} <= set(cfg["arms"]):
        ci_p = wilson(*[(r[1], r[2]) for r in rows if r[0] == "peer_only"][0])
        ci_m = wilson(*[(r[1], r[2]) for r in rows if r[0] == "meta_mapg"][0])
        data["peer_meta_overlap"] = intervals_overlap(ci_p, ci_m)
    em.write_summary(data)
    em.finish()
    return em


def _second_half_std(game, rec):
    half = rec.checkpoint_steps >= (rec.steps_done + 1) // 2
    if half.sum() < 2:
        return float("nan")
    from .games import coop_metric

    vals = [coop_metric(game, ck) for ck in rec.checkpoints[half]]
    return float(np.std(vals))


def cmd_cooldown(cfg: dict, out_dir: Path):
    game = build_game(cfg)
    unroll = build_unroll(cfg)
    sch = cfg["schedule"]
    total = int(sch["total_steps"])
    step = (("constant", float(sch["step_size"]))
            if sch["step_rule"] == "constant"
            else ("inverse", float(sch["step_size"]), int(sch["n0"])))
    lam = float(sch["lambda"])
    legs = [
        ("pg", "pg", Schedule(step, ("constant", 0.0), total)),
        ("constant", "meta_mapg", Schedule(step, ("constant", lam), total)),
        ("shape_then_cool", "meta_mapg",
         make_shape_then_cool(lam, int(sch["handoff"]), "hard_zero",
                              total_steps=total, step_rule=step)),
    ]
    records = paired_run_set(game, [leg[1] for leg in legs], cfg["seeds"],
                             [leg[2] for leg in legs], unroll,
                             mode=cfg["mode"], master_seed=cfg["master_seed"],
                             tau=cfg["tau"])
    em = Emitter(out_dir, "cooldown", cfg)
    rows = []
    stats = {name: [0, 0, []] for name, _, _ in legs}
    for i, rec in enumerate(records):
        name = legs[i % 3][0]
        disp = _second_half_std(game, rec)
        rows.append((name, rec.seed, int(rec.success), rec.metric, disp,
                     int(rec.diverged)))
        stats[name][0] += int(rec.success)
        stats[name][1] += 1
        if np.isfinite(disp):
            stats[name][2].append(disp)
    em.write_csv("cooldown.csv",
                 ["schedule", "seed", "success", "metric", "second_half_std",
                  "diverged"], rows)
    data = {"rates": {}, "wilson": {}, "mean_second_half_std": {}}
    for name, (k, n, disps) in stats.items():
        ci = wilson(k, n)
        data["rates"][name] = k / n
        data["wilson"][name] = [ci.lo, ci.hi]
        data["mean_second_half_std"][name] = (float(np.mean(disps))
                                              if disps else None)
    ci_c = wilson(stats["constant"][0], stats["constant"][1])
    cool_rate = stats["shape_then_cool"][0] / stats["shape_then_cool"][1]
    data["cool_within_constant_interval"] = bool(
        ci_c.lo <= cool_rate <= ci_c.hi)
    em.write_summary(data)
    em.finish()
    return em


def cmd_align(cfg: dict, out_dir: Path):
    game = build_game(cfg)
    schedule = build_schedule(cfg)
    unroll = build_unroll(cfg)
    grid = GridSpec(**cfg["grid"])
    arms = ["pg", "meta_mapg"]
    bg = grid_sweep(game, arms, grid, cfg["seeds"], schedule, unroll,
                    mode=cfg["mode"], master_seed=cfg["master_seed"],
                    tau=cfg["tau"])
    cm = masks(bg)
    stats = alignment_stats(game, grid, unroll,
                            lam=float(cfg["schedule"]["lambda"]),
                            cell_masks=cm)
    em = Emitter(out_dir, "align", cfg)
    p1_axis, p2_axis = grid.axes
    rows = []
    for i1, p1 in enumerate(p1_axis):
        for i2, p2 in enumerate(p2_axis):
            c = stats.cosines[i1, i2]
            rows.append((i1, i2, p1, p2,
                         c if np.isfinite(c) else "",
                         int(cm.gained[i1, i2]), int(cm.lost[i1, i2]),
                         int(not np.isfinite(c))))
    em.write_csv("align.csv",
                 ["i1", "i2", "p1", "p2", "cosine", "gained", "lost",
                  "excluded"], rows)
    summary = {
        "mean": stats.mean, "median": stats.median,
        "excluded": stats.excluded,
        "n_gained": cm.n_gained, "n_lost": cm.n_lost,
        "gained_mean": stats.gained_mean,
        "gained_median": stats.gained_median,
        "gained_min": stats.gained_min,
    }
    em.write_json("align_summary.json", summary,
                  schemas.ALIGN_SUMMARY_SCHEMA)
    em.write_summary({"alignment": summary})
    em.finish()
    return em


def cmd_lambda(cfg: dict, out_dir: Path):
    game = build_game(cfg)
    schedule = build_schedule(cfg)
    unroll = build_unroll(cfg)
    grid = GridSpec(**cfg["grid"])
    report = lambda_sweep(game, cfg["lambda_grid"], grid, cfg["seeds"],
                          schedule, unroll, mode=cfg["mode"],
                          master_seed=cfg["master_seed"], tau=cfg["tau"])
    em = Emitter(out_dir, "lambda", cfg)
    em.write_csv("lambda.csv", ["lambda", "coverage"],
                 zip(report.lambdas, report.coverages))
    em.write_summary({
        "lambdas": [float(x) for x in report.lambdas],
        "coverages": [float(x) for x in report.coverages],
        "gap": report.gap(),
        "max_step_decrease": report.max_step_decrease,
    })
    em.finish()
    return em


def cmd_normctl(cfg: dict, out_dir: Path):
    game = build_game(cfg)
    schedule = build_schedule(cfg)
    unroll = build_unroll(cfg)
    grid = GridSpec(**cfg["grid"])
    report = norm_matched_control(game, grid, schedule, unroll,
                                  lam=float(cfg["schedule"]["lambda"]),
                                  mode=cfg["mode"],
                                  master_seed=cfg["master_seed"],
                                  tau=cfg["tau"])
    em = Emitter(out_dir, "normctl", cfg)
    em.write_csv("normctl.csv", ["arm", "coverage"],
                 [("pg", report.pg_coverage),
                  ("meta_mapg", report.meta_coverage),
                  ("matched_pg", report.matched_coverage)])
    em.write_summary({
        "pg_coverage": report.pg_coverage,
        "meta_coverage": report.meta_coverage,
        "matched_coverage": report.matched_coverage,
        "norm_ratio": report.norm_ratio,
        "matched_step": report.matched_step,
        "residual_gap": report.meta_coverage - report.matched_coverage,
    })
    em.finish()
    return em


def cmd_tausweep(cfg: dict, out_dir: Path):
    game = build_game(cfg)
    schedule = build_schedule(cfg)
    unroll = build_unroll(cfg)
    records = paired_run_set(game, cfg["arms"], cfg["seeds"], schedule,
                             unroll, mode=cfg["mode"],
                             master_seed=cfg["master_seed"], tau=cfg["tau"])
    table = threshold_sweep(records, cfg["tau_grid"])
    em = Emitter(out_dir, "tausweep", cfg)
    rows = []
    for tau in sorted(table):
        for arm in cfg["arms"]:
            k, n = table[tau][arm]
            rows.append((tau, arm, k, n, k / n))
    em.write_csv("tausweep.csv", ["tau", "arm", "successes", "trials",
                                  "rate"], rows)
    write_run_records(records, em.out_dir / "runs.csv")
    em.add_file("runs.csv")
    gaps = {}
    peer_arms = [a for a in cfg["arms"] if a in ("peer_only", "meta_mapg")]
    base_arms = [a for a in cfg["arms"] if a in ("pg", "own_only")]
    for tau in sorted(table):
        if peer_arms and base_arms:
            peer = min(table[tau][a][0] / table[tau][a][1] for a in peer_arms)
            base = max(table[tau][a][0] / table[tau][a][1] for a in base_arms)
            gaps[f"{tau:.2f}"] = peer - base
    em.write_summary({"min_peer_gap": min(gaps.values()) if gaps else None,
                      "gaps_by_tau": gaps})
    em.finish()
    return em


def _synthetic_props(pcfg, master_seed):
    """Exactly solvable linear contracting field with a constant correction."""
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    m_const = np.array([0.5, -0.3])
    center = np.array([0.2, -0.1])

    def v_fn(x):
        out = np.empty(2, dtype=object)
        for i in range(2):
            acc = 0.0
            for j in range(2):
                acc = acc + (-A[i, j]) * (x[j] - center[j])
            out[i] = acc
        return out

    def m_fn(x):
        return np.array([m_const[0] + 0.0 * x[0], m_const[1] + 0.0 * x[0]],
                        dtype=object)

    lambdas = pcfg["shift_lambdas"]
    report = fixed_point_shift_report(v_fn, m_fn, center, lambdas)
    Ainv_m = np.linalg.solve(A, m_const)
    worst = max(
        float(np.linalg.norm(report.shifts[i] - lam * Ainv_m))
        for i, lam in enumerate(report.lambdas)
    )
    mu = -sym_eig_max(-0.5 * (A + A.T))
    mu_m = estimate_mu_M_field(m_fn, center).mu_m
    lam0 = float(report.lambdas[-1])
    shifted = center + lam0 * Ainv_m
    rng = stream(master_seed, "props-synth")

    def shaped(x):
        v = v_fn(x)
        m = m_fn(x)
        return np.array([v[0] + lam0 * m[0], v[1] + lam0 * m[1]],
                        dtype=object)

    drift = drift_report(shaped, shifted, mu, mu_m, lam0, radius=1.0,
                         n_samples=pcfg["drift_samples"], rng=rng)
    return {
        "shift": _shift_block(report, max_first_order_error=worst),
        "drift": _drift_block(drift, radius=1.0),
        "mu": float(mu),
        "mu_m": float(mu_m),
    }


def _game_props(cfg, game, unroll, pcfg):
    master_seed = cfg["master_seed"]
    lam_default = float(cfg["schedule"]["lambda"])

    # interior equilibrium: the finite zero of the gradient field in logit
    # coordinates; the shaped zero genuinely displaces O(lambda) there.
    base_field = make_field(game, "pg", 0.0, None, space="logit")
    anchor = newton_zero(base_field, np.zeros(game.n_params))
    interior = {"converged": anchor.converged}
    shift_rep = None
    if anchor.converged:
        shift_rep = analysis.verify_fixed_point_shift(
            game, anchor.zero, unroll, pcfg["shift_lambdas"],
            correction="full", space="logit")
        interior["equilibrium"] = [float(v) for v in anchor.zero]

    # cooperative corner in probability coordinates (saturation pins the
    # corner zero for every lambda; mu_M is evaluated at a nearby proxy)
    d = game.n_params
    corner = np.ones(d)
    rng = stream(master_seed, "props-mu")
    mu_est = estimate_mu(game, corner, pcfg["mu_radius"], pcfg["mu_samples"],
                         rng, space="prob")
    proxy = np.full(d, pcfg["corner_proxy"])
    mum_est = estimate_mu_M(game, proxy, unroll, correction="peer",
                            space="prob")
    shaped_field = make_field(game, "meta_mapg", lam_default, unroll,
                              space="prob")
    lip = estimate_lipschitz(shaped_field, proxy, pcfg["lipschitz_radius"],
                             pcfg["lipschitz_samples"],
                             stream(master_seed, "props-lip"),
                             box=(0.0, 1.0))
    rho_lam = (mu_est.mu + lam_default * mum_est.mu_m) / (2.0 * lip)
    corner_block = {
        "equilibrium": [float(v) for v in corner],
        "proxy_point": [float(v) for v in proxy],
        "mu": float(mu_est.mu),
        "mu_violations": int(mu_est.violations),
        "mu_m": float(mum_est.mu_m),
        "lipschitz": float(lip),
        "certified_radius": float(rho_lam),
        "lambda": lam_default,
        "note": ("corner zero is pinned by sigmoid saturation; the shift "
                 "curve is measured at the interior equilibrium"),
    }
    if mum_est.mu_m > 0 and rho_lam > 0:
        drift = drift_report(shaped_field, corner, mu_est.mu, mum_est.mu_m,
                             lam_default, radius=rho_lam / 2.0,
                             n_samples=pcfg["drift_samples"],
                             rng=stream(master_seed, "props-drift"),
                             box=(0.0, 1.0))
        corner_block["drift"] = _drift_block(drift, radius=rho_lam / 2.0)
    else:
        corner_block["drift"] = _drift_block(
            None, skipped=True,
            reason=f"mu_m = {mum_est.mu_m:.3e} is not positive")

    # cooldown convergence: deep-basin inits, hard-zero handoff vs constant
    sch = cfg["schedule"]
    total = int(sch["total_steps"]) if int(sch["total_steps"]) >= 2000 else 2000
    handoff = total // 2
    step = ("constant", float(sch["step_size"]))
    lams = pcfg["cool_lambdas"]
    rng_init = stream(master_seed, "props-deep")
    inits = rng_init.uniform(pcfg["deep_lo"], pcfg["deep_hi"],
                             size=(pcfg["deep_inits"], d))
    pg_sched = Schedule(step, ("constant", 0.0), total)
    max_cool = 0.0
    const_means = []
    for lam in lams:
        cool_sched = make_shape_then_cool(lam, handoff, "hard_zero",
                                          total_steps=total, step_rule=step)
        const_sched = Schedule(step, ("constant", lam), total)
        dists_const = []
        for row in inits:
            init = logit(row)
            p_pg = sigmoid(run(game, "pg", init, pg_sched, unroll,
                               tau=cfg["tau"]).final)
            p_cool = sigmoid(run(game, "meta_mapg", init, cool_sched, unroll,
                                 tau=cfg["tau"]).final)
            p_const = sigmoid(run(game, "meta_mapg", init, const_sched,
                                  unroll, tau=cfg["tau"]).final)
            max_cool = max(max_cool,
                           float(np.linalg.norm(p_cool - p_pg)))
            dists_const.append(float(np.linalg.norm(p_const - p_pg)))
        const_means.append(float(np.mean(dists_const)))
    ratio = (const_means[1] / const_means[0]
             if len(const_means) > 1 and const_means[0] > 0 else float("nan"))
    cooldown_block = {
        "lambdas": [float(x) for x in lams],
        "max_cool_distance": max_cool,
        "const_distances": const_means,
        "ratio": float(ratio),
        "n_inits": int(pcfg["deep_inits"]),
    }

    game_block = {"corner": corner_block,
                  "cooldown_convergence": cooldown_block}
    if shift_rep is not None:
        game_block["interior_shift"] = _shift_block(shift_rep)
        game_block["interior_equilibrium"] = interior["equilibrium"]
    return game_block


def cmd_props(cfg: dict, out_dir: Path):
    game = build_game(cfg)
    unroll = build_unroll(cfg)
    pcfg = cfg["props"]
    obj = {
        "synthetic": _synthetic_props(pcfg, cfg["master_seed"]),
        "game": _game_props(cfg, game, unroll, pcfg),
    }
    em = Emitter(out_dir, "props", cfg)
    em.write_json("props.json", obj, schemas.PROPS_SCHEMA)
    em.write_summary({
        "synthetic_shift_max_error":
            obj["synthetic"]["shift"]["max_first_order_error"],
        "synthetic_drift_violations":
            obj["synthetic"]["drift"]["violations"],
        "interior_rel_residual":
            obj["game"].get("interior_shift", {}).get("rel_residual"),
        "corner_mu": obj["game"]["corner"]["mu"],
        "corner_mu_m": obj["game"]["corner"]["mu_m"],
        "corner_drift_violations":
            obj["game"]["corner"]["drift"].get("violations"),
        "cooldown_ratio":
            obj["game"]["cooldown_convergence"]["ratio"],
        "max_cool_distance":
            obj["game"]["cooldown_convergence"]["max_cool_distance"],
    })
    em.finish()
    return em


def cmd_sadiag(cfg: dict, out_dir: Path):
    game = build_game(cfg)
    unroll = build_unroll(cfg)
    s = cfg["sampling"]
    lam = float(cfg["schedule"]["lambda"])
    points = []
    for pi, probs in enumerate(s["points"]):
        probs_full = np.repeat(np.asarray(probs, dtype=float), game.n_states)
        params = logit(probs_full)
        rng = stream(cfg["master_seed"], "sadiag", pi)
        diags = sa_diagnostics(game, params, "pg", 0.0, unroll, s["batch"],
                               s["horizon"], s["repeats"], rng,
                               bias_horizons=tuple(s["bias_horizons"]))
        points.append({
            "coop_probs": [float(x) for x in probs_full],
            "noise_mean_norm": diags.noise_mean_norm,
            "sigma_hat": diags.sigma_hat,
            "clt_bound": diags.clt_bound,
            "repeats": diags.repeats,
            "bias_curve": [[float(h), b, se] for h, b, se in
                           diags.bias_curve],
            "second_moments_by_length":
                {str(k): v for k, v in diags.second_moments_by_length.items()},
        })
    em = Emitter(out_dir, "sadiag", cfg)
    em.write_json("sadiag.json", {"points": points, "arm": "pg",
                                  "lambda": lam}, schemas.SADIAG_SCHEMA)
    within = all(p["noise_mean_norm"] <= p["clt_bound"] for p in points)
    em.write_summary({"all_points_within_clt_band": within})
    em.finish()
    return em


_COMMANDS = {
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "cooldown": cmd_cooldown,
    "align": cmd_align,
    "lambda": cmd_lambda,
    "normctl": cmd_normctl,
    "tausweep": cmd_tausweep,
    "props": cmd_props,
    "sadiag": cmd_sadiag,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="basinlab",
        description="Equilibrium-selection experiments on tabular games.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None,
                       help="JSON config (defaults apply when omitted)")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override master_seed")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.command, args.config)
        if args.seed is not None:
            cfg["master_seed"] = int(args.seed)
        out_dir = Path(args.out) if args.out else Path(cfg["out_dir"]) / \
            args.command
    except (ConfigError, GameValidationError, ScheduleError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        _COMMANDS[args.command](cfg, out_dir)
    except (ConfigError, GameValidationError, ScheduleError, ValueError) as exc:
        # configuration-shaped problems discovered while building objects
        if isinstance(exc, _NUMERICAL_ERRORS):
            print(f"numerical failure in {args.command}: {exc}",
                  file=sys.stderr)
            return 3
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure in {args.command}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
