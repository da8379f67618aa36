"""Outer-loop training: schedules, runs, pairing, success classification."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .fields import (ARM_CODES, ARMS, EstimatorBlowupError, UnrollConfig,
                     sampled_update)
from .games import GameSpec, JointParams, check_layout, coop_metric, logit
from .rng import stream
from ._parallel import run_tasks

MAX_CHECKPOINTS = 200


class ScheduleError(ValueError):
    """Invalid schedule rule or parameters."""


@dataclass(frozen=True)
class Schedule:
    """Outer step-size and shaping-weight rules.

    step_rule: ("constant", c) or ("inverse", c, n0) for c / (n + n0); the
    inverse rule has divergent sum and summable squares by construction.
    lam_rule: ("constant", lam), ("zero_after", lam, T) or
    ("geometric_after", lam, T, rho) with rho < 1, so the post-handoff
    shaping mass sum_n alpha_n * lam_n is finite by construction.
    """

    step_rule: tuple
    lam_rule: tuple
    total_steps: int

    def __post_init__(self):
        if self.total_steps < 1:
            raise ScheduleError(f"total_steps must be >= 1, got {self.total_steps}")
        kind = self.step_rule[0]
        if kind == "constant":
            if len(self.step_rule) != 2 or not self.step_rule[1] > 0:
                raise ScheduleError(f"bad constant step rule {self.step_rule}")
        elif kind == "inverse":
            if len(self.step_rule) != 3:
                raise ScheduleError(f"bad inverse step rule {self.step_rule}")
            c, n0 = self.step_rule[1], self.step_rule[2]
            if not (c > 0 and n0 >= 1):
                raise ScheduleError(
                    f"inverse rule needs c > 0 and n0 >= 1, got {self.step_rule}"
                )
        else:
            raise ScheduleError(f"unknown step rule {kind!r}")
        lk = self.lam_rule[0]
        if lk == "constant":
            ok = len(self.lam_rule) == 2 and self.lam_rule[1] >= 0
        elif lk == "zero_after":
            ok = (len(self.lam_rule) == 3 and self.lam_rule[1] >= 0
                  and self.lam_rule[2] >= 1)
        elif lk == "geometric_after":
            ok = (len(self.lam_rule) == 4 and self.lam_rule[1] >= 0
                  and self.lam_rule[2] >= 1)
            if ok and not (0.0 < self.lam_rule[3] < 1.0):
                raise ScheduleError(
                    f"geometric cooldown factor must lie in (0, 1), got "
                    f"{self.lam_rule[3]} (>= 1 leaves the shaping mass infinite)"
                )
        else:
            raise ScheduleError(f"unknown shaping rule {lk!r}")
        if not ok:
            raise ScheduleError(f"bad shaping rule {self.lam_rule}")

    def step_sizes(self) -> np.ndarray:
        n = np.arange(self.total_steps, dtype=float)
        if self.step_rule[0] == "constant":
            return np.full(self.total_steps, float(self.step_rule[1]))
        c, n0 = self.step_rule[1], self.step_rule[2]
        return c / (n + n0)

    def shaping_weights(self) -> np.ndarray:
        n = np.arange(self.total_steps, dtype=float)
        rule = self.lam_rule
        if rule[0] == "constant":
            return np.full(self.total_steps, float(rule[1]))
        if rule[0] == "zero_after":
            lam, T = rule[1], rule[2]
            return np.where(n < T, float(lam), 0.0)
        lam, T, rho = rule[1], rule[2], rule[3]
        return np.where(n < T, float(lam), float(lam) * rho ** (n - T))

    @property
    def handoff_T(self):
        return None if self.lam_rule[0] == "constant" else self.lam_rule[2]

    def tail_shaping_mass(self) -> float:
        """sum_{n >= T} alpha_n * lam_n, finite for the cooled rules."""
        alphas = self.step_sizes()
        lams = self.shaping_weights()
        T = self.handoff_T
        if T is None:
            return float(np.sum(alphas * lams))
        if self.lam_rule[0] == "zero_after":
            return 0.0
        # geometric tail beyond the materialised horizon, constant steps only
        tail = float(np.sum(alphas[T:] * lams[T:]))
        if self.step_rule[0] == "constant":
            rho = self.lam_rule[3]
            tail += float(alphas[-1] * lams[-1] * rho / (1.0 - rho))
        return tail


def make_shape_then_cool(warm_lambda: float, handoff_T: int,
                         cool: str = "hard_zero", rho_cool: float | None = None,
                         total_steps: int = 2000,
                         step_rule: tuple = ("constant", 0.2)) -> Schedule:
    """Warm shaping at ``warm_lambda`` until the handoff, then anneal.

    cool="hard_zero" switches the shaping weight to zero; cool="geometric"
    decays it by ``rho_cool`` per step (rho_cool >= 1 is rejected because
    the post-handoff shaping mass must stay finite).
    """
    if warm_lambda < 0:
        raise ScheduleError(f"warm_lambda must be >= 0, got {warm_lambda}")
    if handoff_T < 1:
        raise ScheduleError(f"handoff_T must be >= 1, got {handoff_T}")
    if cool == "hard_zero":
        lam_rule = ("zero_after", float(warm_lambda), int(handoff_T))
    elif cool == "geometric":
        if rho_cool is None or rho_cool >= 1.0 or rho_cool <= 0.0:
            raise ScheduleError(
                f"geometric cooldown needs rho_cool in (0, 1), got {rho_cool}"
            )
        lam_rule = ("geometric_after", float(warm_lambda), int(handoff_T),
                    float(rho_cool))
    else:
        raise ScheduleError(f"unknown cooldown rule {cool!r}")
    return Schedule(step_rule, lam_rule, total_steps)


@dataclass(frozen=True)
class RunRecord:
    """One learning trajectory and its success classification."""

    arm: str
    seed: int
    init: np.ndarray
    final: np.ndarray
    success: bool
    metric: float
    diverged: bool
    steps_done: int
    checkpoint_steps: np.ndarray
    checkpoints: np.ndarray
    checkpoint_update_norms: np.ndarray
    mode: str


def classify_success(game: GameSpec, final_params, tau: float):
    """(success, metric): metric >= tau on the game's cooperation statistic."""
    if not (0.0 < tau < 1.0):
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    metric = coop_metric(game, final_params)
    return bool(metric >= tau), metric


def _checkpoint_steps(total_steps: int) -> np.ndarray:
    k = min(total_steps, MAX_CHECKPOINTS)
    return np.unique(np.round(np.linspace(1, total_steps, k)).astype(np.int64))


def run(game: GameSpec, arm: str, init, schedule: Schedule, cfg: UnrollConfig,
        mode: str = "exact", rng: np.random.Generator | None = None,
        tau: float = 0.82, seed: int = -1, n_trajectories: int = 64,
        horizon: int = 60) -> RunRecord:
    """One outer-loop trajectory under the assembled per-arm update.

    Divergence (a non-finite iterate, or a sampled-estimator blowup) yields
    a failed record with the divergence flag set rather than an exception.
    """
    if arm not in ARM_CODES:
        raise ValueError(f"unknown arm {arm!r}; expected one of {ARMS}")
    if mode not in ("exact", "sampled"):
        raise ValueError(f"mode must be 'exact' or 'sampled', got {mode!r}")
    if isinstance(init, JointParams):
        check_layout(game, init)
        init_flat = init.flat
    else:
        init_flat = np.asarray(init, dtype=float)
    alphas = schedule.step_sizes()
    lams = schedule.shaping_weights()
    ck_steps = _checkpoint_steps(schedule.total_steps)

    if mode == "exact":
        ck_params, ck_norms, final, diverged, done = _kernels.run_exact(
            game.rewards, game.transitions, game.init_dist, game.discount,
            init_flat, ARM_CODES[arm], alphas, lams, cfg.length,
            cfg.step_own, cfg.step_peer, ck_steps)
        # the divergence step itself is never captured
        side = "left" if diverged else "right"
        n_ck = int(np.searchsorted(ck_steps, done, side=side))
    else:
        if rng is None:
            raise ValueError("sampled mode needs an rng stream")
        final = init_flat.copy()
        ck_params = np.zeros((ck_steps.size, init_flat.size))
        ck_norms = np.zeros(ck_steps.size)
        diverged = False
        done = 0
        ci = 0
        for n in range(schedule.total_steps):
            try:
                upd = sampled_update(game, final, arm, lams[n], cfg,
                                     n_trajectories, horizon, rng).g
            except EstimatorBlowupError:
                diverged = True
                break
            final = final + alphas[n] * upd
            done = n + 1
            if not np.all(np.isfinite(final)):
                diverged = True
                break
            if ci < ck_steps.size and ck_steps[ci] == n + 1:
                ck_params[ci] = final
                ck_norms[ci] = float(np.linalg.norm(upd))
                ci += 1
        n_ck = ci

    if diverged:
        success, metric = False, float("nan")
    else:
        success, metric = classify_success(game, final, tau)
    return RunRecord(arm=arm, seed=int(seed), init=init_flat, final=final,
                     success=success, metric=metric, diverged=bool(diverged),
                     steps_done=int(done), checkpoint_steps=ck_steps[:n_ck],
                     checkpoints=ck_params[:n_ck],
                     checkpoint_update_norms=ck_norms[:n_ck], mode=mode)


def _paired_task(args):
    (game, arm, schedule, cfg, mode, master_seed, tau, seed, init_flat) = args
    rng = stream(master_seed, "run", seed) if mode == "sampled" else None
    return run(game, arm, init_flat, schedule, cfg, mode=mode, rng=rng,
               tau=tau, seed=seed)


def paired_run_set(game: GameSpec, arms: list[str], n_seeds: int,
                   schedules, cfg: UnrollConfig, mode: str = "exact",
                   master_seed: int = 0, tau: float = 0.82,
                   init_rule: str = "uniform-square",
                   init_bounds: tuple = (0.05, 0.95),
                   cell=None) -> list[RunRecord]:
    """Paired runs: one init draw and one sampling stream per seed, shared
    across arms, with streams derived statelessly so execution order (and
    the worker count) cannot change results.

    ``schedules`` is a single Schedule or one per arm. Records come back
    seed-major, arm-minor.
    """
    if n_seeds < 1:
        raise ValueError(f"n_seeds must be >= 1, got {n_seeds}")
    if isinstance(schedules, Schedule):
        schedules = [schedules] * len(arms)
    if len(schedules) != len(arms):
        raise ValueError("need one schedule per arm")
    d = game.n_params
    lo, hi = init_bounds
    tasks = []
    for seed in range(n_seeds):
        if init_rule == "uniform-square":
            probs = stream(master_seed, "init", seed).uniform(lo, hi, size=d)
            init_flat = logit(probs)
        elif init_rule == "grid-cell":
            if cell is None:
                raise ValueError("grid-cell init needs a cell center")
            init_flat = logit(np.repeat(np.asarray(cell, dtype=float),
                                        game.n_states))
        else:
            raise ValueError(f"unknown init rule {init_rule!r}")
        for arm, sched in zip(arms, schedules):
            tasks.append((game, arm, sched, cfg, mode, master_seed, tau,
                          seed, init_flat))
    return run_tasks(_paired_task, tasks)


RUN_CSV_FIELDS = ("seed", "arm", "init", "final", "metric", "success",
                  "diverged")


def write_run_records(records: list[RunRecord], path):
    """Line-oriented CSV: seed,arm,init...,final...,metric,success,diverged."""
    if not records:
        raise ValueError("no records to write")
    d = records[0].init.size
    header = (["seed", "arm"] + [f"init_{i}" for i in range(d)]
              + [f"final_{i}" for i in range(d)]
              + ["metric", "success", "diverged"])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in records:
            row = [r.seed, r.arm]
            row += [f"{x:.9g}" for x in r.init]
            row += [f"{x:.9g}" for x in r.final]
            row += [f"{r.metric:.9g}", int(r.success), int(r.diverged)]
            w.writerow(row)
