"""Measurement layer: basin grids, separatrices, masks, alignment,
confidence intervals, local-geometry estimators and verifiers, sampling
diagnostics, and the sweep-style controls.

Local-geometry operations (stationarity margin mu, correction alignment
mu_M, fixed-point shifts, drift checks) work on a *field*: a callable from
a parameter point to an update vector. Game adapters build these fields in
either coordinate system. For the built-in games the corner equilibria are
finite points only in probability coordinates (logits saturate), so the
game-level wrappers default to ``space="prob"``; the interior mixed
equilibrium is the natural anchor in logit space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff
from .fields import (UnrollConfig, eval_corrections, eval_v, exact_field,
                     sampled_update)
from .games import GameSpec, logit
from .learners import RunRecord, Schedule, run
from .rng import stream
from ._parallel import run_tasks

Z_95 = 1.959964


# ---------------------------------------------------------------------------
# grids, contours, masks


@dataclass(frozen=True)
class GridSpec:
    """Initialisation grid over the cooperate-probability square."""

    n1: int = 21
    n2: int = 21
    lo: float = 0.05
    hi: float = 0.95

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 1:
            raise ValueError("grid must have at least one cell per axis")
        if not (0.0 < self.lo <= self.hi < 1.0):
            raise ValueError("grid bounds must satisfy 0 < lo <= hi < 1")

    @property
    def axes(self):
        return (np.linspace(self.lo, self.hi, self.n1),
                np.linspace(self.lo, self.hi, self.n2))


@dataclass(frozen=True)
class BasinGrid:
    """Per-cell, per-arm success counts over an initialisation grid."""

    p1_axis: np.ndarray
    p2_axis: np.ndarray
    arms: tuple
    counts: np.ndarray        # (n_arms, n1, n2) successes
    seeds_per_cell: int
    game_kind: str
    config: dict

    def arm_index(self, arm: str) -> int:
        try:
            return self.arms.index(arm)
        except ValueError:
            raise ValueError(f"arm {arm!r} not in grid ({self.arms})") from None

    def rates(self, arm: str) -> np.ndarray:
        return self.counts[self.arm_index(arm)] / self.seeds_per_cell

    def success_mask(self, arm: str) -> np.ndarray:
        return self.rates(arm) >= 0.5

    def coverage(self, arm: str) -> float:
        """Fraction of cells where at least half the seeds succeed."""
        return float(self.success_mask(arm).mean())


@dataclass(frozen=True)
class CellMasks:
    """Gained/lost cells of a treatment arm against a baseline arm."""

    gained: np.ndarray
    lost: np.ndarray

    @property
    def n_gained(self) -> int:
        return int(self.gained.sum())

    @property
    def n_lost(self) -> int:
        return int(self.lost.sum())


def _sweep_cell(args):
    (game, arms, schedule, cfg, mode, master_seed, tau, i1, i2, center,
     seeds) = args
    d_states = game.n_states
    init = logit(np.repeat(np.asarray(center, dtype=float), d_states))
    counts = np.zeros(len(arms), dtype=np.int64)
    for s in range(seeds):
        rng_key = (i1, i2, s)
        for a, arm in enumerate(arms):
            rng = (stream(master_seed, "cell", *rng_key)
                   if mode == "sampled" else None)
            rec = run(game, arm, init, schedule, cfg, mode=mode, rng=rng,
                      tau=tau, seed=s)
            counts[a] += int(rec.success)
    return counts


def grid_sweep(game: GameSpec, arms: list[str], grid: GridSpec,
               seeds_per_cell: int, schedule: Schedule, cfg: UnrollConfig,
               mode: str = "exact", master_seed: int = 0,
               tau: float = 0.82) -> BasinGrid:
    """Paired basin sweep: each cell starts every arm from the cell-center
    logits, seed-by-seed, and records success counts."""
    if seeds_per_cell < 1:
        raise ValueError("seeds_per_cell must be >= 1")
    p1_axis, p2_axis = grid.axes
    tasks = []
    for i1, p1 in enumerate(p1_axis):
        for i2, p2 in enumerate(p2_axis):
            tasks.append((game, tuple(arms), schedule, cfg, mode, master_seed,
                          tau, i1, i2, (p1, p2), seeds_per_cell))
    results = run_tasks(_sweep_cell, tasks)
    counts = np.zeros((len(arms), grid.n1, grid.n2), dtype=np.int64)
    k = 0
    for i1 in range(grid.n1):
        for i2 in range(grid.n2):
            counts[:, i1, i2] = results[k]
            k += 1
    config = {
        "schedule": {"step_rule": list(schedule.step_rule),
                     "lam_rule": list(schedule.lam_rule),
                     "total_steps": schedule.total_steps},
        "unroll": [cfg.length, cfg.step_own, cfg.step_peer],
        "mode": mode, "master_seed": master_seed, "tau": tau,
    }
    return BasinGrid(p1_axis, p2_axis, tuple(arms), counts, seeds_per_cell,
                     game.kind, config)


def masks(grid: BasinGrid, base_arm: str = "pg",
          treat_arm: str = "meta_mapg") -> CellMasks:
    """50%-rule gained/lost masks of treat vs base."""
    base = grid.success_mask(base_arm)
    treat = grid.success_mask(treat_arm)
    return CellMasks(gained=treat & ~base, lost=base & ~treat)


@dataclass(frozen=True)
class SeparatrixResult:
    polylines: list
    flag: str  # "ok" | "all_success" | "all_fail"


def _interp(c0, c1, v0, v1, level):
    t = (level - v0) / (v1 - v0)
    return c0 + t * (c1 - c0)


def separatrix(grid: BasinGrid, arm: str, level: float = 0.5
               ) -> SeparatrixResult:
    """0.5-level contour of the success-rate surface via marching squares.

    Returns stitched polylines in (p1, p2) coordinates; an all-success or
    all-fail surface yields no contour and an explicit flag.
    """
    rates = grid.rates(arm)
    if np.all(rates >= level):
        return SeparatrixResult([], "all_success")
    if np.all(rates < level):
        return SeparatrixResult([], "all_fail")
    x, y = grid.p1_axis, grid.p2_axis
    segments = []
    n1, n2 = rates.shape
    for i in range(n1 - 1):
        for j in range(n2 - 1):
            # corners counterclockwise from (i, j)
            v = (rates[i, j], rates[i + 1, j], rates[i + 1, j + 1],
                 rates[i, j + 1])
            idx = sum(1 << k for k, val in enumerate(v) if val >= level)
            if idx in (0, 15):
                continue
            pts = {}
            if (idx & 1) != (idx >> 1 & 1):      # edge (i,j)-(i+1,j)
                pts["s"] = (_interp(x[i], x[i + 1], v[0], v[1], level), y[j])
            if (idx >> 1 & 1) != (idx >> 2 & 1):  # edge (i+1,j)-(i+1,j+1)
                pts["e"] = (x[i + 1], _interp(y[j], y[j + 1], v[1], v[2],
                                              level))
            if (idx >> 3 & 1) != (idx >> 2 & 1):  # edge (i,j+1)-(i+1,j+1)
                pts["n"] = (_interp(x[i], x[i + 1], v[3], v[2], level),
                            y[j + 1])
            if (idx & 1) != (idx >> 3 & 1):      # edge (i,j)-(i,j+1)
                pts["w"] = (x[i], _interp(y[j], y[j + 1], v[0], v[3], level))
            keys = sorted(pts.keys())
            if len(keys) == 2:
                segments.append((pts[keys[0]], pts[keys[1]]))
            elif len(keys) == 4:
                # saddle cell (idx 5 or 10): disambiguate by the center mean.
                # Segments hug the corners cut off from the center's side.
                center_above = (sum(v) / 4.0) >= level
                hug_13 = (("s", "e"), ("n", "w"))   # around corners 1 and 3
                hug_02 = (("s", "w"), ("e", "n"))   # around corners 0 and 2
                pairs = hug_13 if ((idx == 5) == center_above) else hug_02
                for a, b in pairs:
                    segments.append((pts[a], pts[b]))
    return SeparatrixResult(_stitch(segments), "ok")


def _stitch(segments, tol=1e-9):
    """Chain segments that share endpoints into polylines."""
    def key(pt):
        return (round(pt[0] / tol), round(pt[1] / tol))

    adj = {}
    for s_i, (a, b) in enumerate(segments):
        adj.setdefault(key(a), []).append((s_i, 0))
        adj.setdefault(key(b), []).append((s_i, 1))
    used = [False] * len(segments)
    polylines = []
    for s_i in range(len(segments)):
        if used[s_i]:
            continue
        used[s_i] = True
        a, b = segments[s_i]
        chain = [a, b]
        for endpoint, append in ((b, True), (a, False)):
            cur = endpoint
            while True:
                nxt = None
                for t_i, end in adj.get(key(cur), []):
                    if not used[t_i]:
                        nxt = (t_i, end)
                        break
                if nxt is None:
                    break
                t_i, end = nxt
                used[t_i] = True
                other = segments[t_i][1 - end]
                if append:
                    chain.append(other)
                else:
                    chain.insert(0, other)
                cur = other
        polylines.append(np.asarray(chain, dtype=float))
    return polylines


# ---------------------------------------------------------------------------
# alignment


@dataclass(frozen=True)
class AlignmentStats:
    cosines: np.ndarray          # (n1, n2), nan where excluded
    excluded: int
    mean: float
    median: float
    gained_mean: float | None
    gained_median: float | None
    gained_min: float | None


def alignment_stats(game: GameSpec, grid: GridSpec, cfg: UnrollConfig,
                    lam: float = 1.0, cell_masks: CellMasks | None = None
                    ) -> AlignmentStats:
    """Cosine of the first-update peer correction with the cooperative
    direction, per grid cell.

    The correction is mapped to probability space via dp_i = dtheta_i *
    p_i (1 - p_i) and compared with the unit vector from (p1, p2) toward
    (1, 1). Cosines are scale-invariant, so the shaping strength only
    matters for the excluded-cell rule (zero-norm corrections are excluded
    and counted, never imputed). Single-state games only.
    """
    if game.n_states != 1:
        raise ValueError("alignment diagnostics need a 2-d policy square")
    p1_axis, p2_axis = grid.axes
    cos = np.full((grid.n1, grid.n2), np.nan)
    excluded = 0
    for i1, p1 in enumerate(p1_axis):
        for i2, p2 in enumerate(p2_axis):
            th = logit(np.array([p1, p2]))
            _, m_peer = eval_corrections(game, th, cfg)
            p = np.array([p1, p2])
            dp = lam * m_peer * p * (1.0 - p)
            target = 1.0 - p
            ndp = np.linalg.norm(dp)
            nt = np.linalg.norm(target)
            if ndp < 1e-12 or nt < 1e-12:
                excluded += 1
                continue
            cos[i1, i2] = float(dp @ target / (ndp * nt))
    valid = cos[np.isfinite(cos)]
    gained_mean = gained_median = gained_min = None
    if cell_masks is not None:
        g = cos[cell_masks.gained & np.isfinite(cos)]
        if g.size:
            gained_mean = float(g.mean())
            gained_median = float(np.median(g))
            gained_min = float(g.min())
    return AlignmentStats(cos, excluded, float(valid.mean()),
                          float(np.median(valid)), gained_mean,
                          gained_median, gained_min)


# ---------------------------------------------------------------------------
# Wilson intervals


@dataclass(frozen=True)
class WilsonInterval:
    successes: int
    trials: int
    z: float
    lo: float
    hi: float


def wilson(k: int, n: int, z: float = Z_95) -> WilsonInterval:
    """Wilson score interval for a binomial proportion."""
    if n < 1:
        raise ValueError(f"need at least one trial, got n={n}")
    if not 0 <= k <= n:
        raise ValueError(f"successes must satisfy 0 <= k <= n, got k={k} n={n}")
    p_hat = k / n
    denom = 1.0 + z * z / n
    center = (p_hat + z * z / (2 * n)) / denom
    half = (z / denom) * math.sqrt(p_hat * (1 - p_hat) / n
                                   + z * z / (4 * n * n))
    return WilsonInterval(k, n, z, max(0.0, center - half),
                          min(1.0, center + half))


def intervals_overlap(a: WilsonInterval, b: WilsonInterval) -> bool:
    return a.lo <= b.hi and b.lo <= a.hi


# ---------------------------------------------------------------------------
# small symmetric eigenproblems (closed form / cyclic Jacobi)


def sym_eig_max(S: np.ndarray) -> float:
    """Largest eigenvalue of a small symmetric matrix.

    Closed form for 2x2; cyclic Jacobi rotations up to 10x10.
    """
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    if S.shape != (n, n) or n > 10:
        raise ValueError(f"expected a square matrix of size <= 10, got {S.shape}")
    if not np.allclose(S, S.T, atol=1e-10):
        raise ValueError("matrix is not symmetric")
    if n == 1:
        return float(S[0, 0])
    if n == 2:
        mean = 0.5 * (S[0, 0] + S[1, 1])
        disc = math.sqrt((0.5 * (S[0, 0] - S[1, 1])) ** 2 + S[0, 1] ** 2)
        return float(mean + disc)
    A = S.copy()
    scale = max(1.0, np.max(np.abs(A)))
    for _ in range(100):
        off = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off = max(off, abs(A[i, j]))
        if off < 1e-13 * scale:
            break
        for i in range(n):
            for j in range(i + 1, n):
                if abs(A[i, j]) < 1e-15 * scale:
                    continue
                theta = 0.5 * math.atan2(2 * A[i, j], A[i, i] - A[j, j])
                c, s = math.cos(theta), math.sin(theta)
                rot = np.eye(n)
                rot[i, i] = c
                rot[j, j] = c
                rot[i, j] = -s
                rot[j, i] = s
                A = rot.T @ A @ rot
    return float(np.max(np.diag(A)))


def operator_norm(J: np.ndarray) -> float:
    J = np.asarray(J, dtype=float)
    return math.sqrt(max(0.0, sym_eig_max(J.T @ J)))


# ---------------------------------------------------------------------------
# field adapters


class EquilibriumError(ValueError):
    """The supplied point is not near-stationary for the relevant field."""


def _logit_entry(p):
    if isinstance(p, autodiff.Dual):
        return autodiff.log(p) - autodiff.log(1.0 - p)
    return float(np.log(p) - np.log1p(-p))


def _assemble_obj(v, m_own, m_peer, arm, lam):
    if arm == "pg" or lam == 0.0:
        return v
    d = len(v)
    out = np.empty(d, dtype=object)
    for i in range(d):
        if arm == "own_only":
            out[i] = v[i] + lam * m_own[i]
        elif arm == "peer_only":
            out[i] = v[i] + lam * m_peer[i]
        else:
            out[i] = v[i] + lam * (m_own[i] + m_peer[i])
    return out


def make_field(game: GameSpec, arm: str = "pg", lam: float = 0.0,
               cfg: UnrollConfig | None = None, space: str = "logit"):
    """Update field as a callable on flat parameter points.

    space="logit" evaluates at the given logits; space="prob" evaluates the
    pushforward field u * F(logit(p)) with u = p(1-p), the per-step motion
    of the cooperate probabilities. The callable accepts dual numbers (it
    switches to the dual engine when it sees them), so it can be fed to
    the forward-mode jacobian for Newton steps or mu_M.
    """
    if arm != "pg" and cfg is None:
        raise ValueError("shaped fields need an UnrollConfig")
    if space not in ("logit", "prob"):
        raise ValueError(f"unknown space {space!r}")

    def field(x):
        x = np.asarray(x, dtype=object) if not isinstance(x, np.ndarray) else x
        has_dual = any(isinstance(v, autodiff.Dual) for v in x)
        if space == "logit":
            th = x if has_dual else np.asarray(x, dtype=float)
        elif has_dual:
            th = np.empty(len(x), dtype=object)
            for i, v in enumerate(x):
                th[i] = _logit_entry(v)
        else:
            th = logit(np.asarray(x, dtype=float))
        eng = "autodiff" if has_dual else "kernel"
        v = eval_v(game, th, engine=eng)
        if arm == "pg" or lam == 0.0 or (cfg is not None and cfg.length == 0):
            out = v
        else:
            m_own, m_peer = eval_corrections(game, th, cfg, engine=eng)
            if has_dual:
                out = _assemble_obj(v, m_own, m_peer, arm, lam)
            elif arm == "own_only":
                out = v + lam * m_own
            elif arm == "peer_only":
                out = v + lam * m_peer
            else:
                out = v + lam * (m_own + m_peer)
        if space == "prob":
            if has_dual:
                res = np.empty(len(x), dtype=object)
                for i, p in enumerate(x):
                    res[i] = p * (1.0 - p) * out[i]
                return res
            p = np.asarray(x, dtype=float)
            return p * (1.0 - p) * out
        return out

    return field


def make_correction_field(game: GameSpec, cfg: UnrollConfig,
                          correction: str = "peer", space: str = "prob"):
    """The correction component alone (peer or own+peer), as a field."""
    if correction not in ("peer", "full"):
        raise ValueError(f"correction must be 'peer' or 'full', got {correction!r}")

    def field(x):
        x = np.asarray(x, dtype=object) if not isinstance(x, np.ndarray) else x
        has_dual = any(isinstance(v, autodiff.Dual) for v in x)
        if space == "logit":
            th = x if has_dual else np.asarray(x, dtype=float)
        elif has_dual:
            th = np.empty(len(x), dtype=object)
            for i, v in enumerate(x):
                th[i] = _logit_entry(v)
        else:
            th = logit(np.asarray(x, dtype=float))
        eng = "autodiff" if has_dual else "kernel"
        m_own, m_peer = eval_corrections(game, th, cfg, engine=eng)
        if correction == "peer":
            m = m_peer
        elif has_dual:
            m = np.empty(len(x), dtype=object)
            for i in range(len(x)):
                m[i] = m_own[i] + m_peer[i]
        else:
            m = m_own + m_peer
        if space == "prob":
            if has_dual:
                res = np.empty(len(x), dtype=object)
                for i, p in enumerate(x):
                    res[i] = p * (1.0 - p) * m[i]
                return res
            p = np.asarray(x, dtype=float)
            return p * (1.0 - p) * m
        return m

    return field


def _field_floats(field, x):
    out = field(np.asarray(x, dtype=float))
    return np.asarray(out, dtype=float)


# ---------------------------------------------------------------------------
# mu / mu_M estimation


@dataclass(frozen=True)
class MuEstimate:
    mu: float
    violations: int
    n_samples: int


def _ball_samples(center, radius, n_samples, rng, box=None):
    """Uniform samples in the ball, optionally intersected with a box."""
    d = len(center)
    center = np.asarray(center, dtype=float)
    out = []
    attempts = 0
    while len(out) < n_samples:
        attempts += 1
        if attempts > 200 * n_samples:
            raise RuntimeError("ball sampling kept leaving the valid box")
        z = rng.normal(size=d)
        z /= np.linalg.norm(z)
        pt = center + radius * z * rng.random() ** (1.0 / d)
        if np.allclose(pt, center):
            continue
        if box is not None:
            lo, hi = box
            if np.any(pt <= lo) or np.any(pt >= hi):
                continue
        out.append(pt)
    return np.asarray(out)


def estimate_mu_field(field, center, radius: float, n_samples: int,
                      rng: np.random.Generator, box=None) -> MuEstimate:
    """Stationarity margin: min over sampled phi of
    -<field(phi), phi - center> / ||phi - center||^2.

    Requires the center to be near-stationary (||field(center)|| <= 1e-4).
    Samples with non-positive ratios are counted as violations.
    """
    center = np.asarray(center, dtype=float)
    f0 = _field_floats(field, center)
    if np.linalg.norm(f0) > 1e-4:
        raise EquilibriumError(
            f"field norm {np.linalg.norm(f0):.3e} at the candidate point; "
            "need <= 1e-4"
        )
    pts = _ball_samples(center, radius, n_samples, rng, box=box)
    ratios = np.empty(len(pts))
    for i, pt in enumerate(pts):
        delta = pt - center
        ratios[i] = -(_field_floats(field, pt) @ delta) / (delta @ delta)
    return MuEstimate(float(ratios.min()), int(np.sum(ratios <= 0.0)),
                      len(pts))


def estimate_mu(game: GameSpec, equilibrium, radius: float, n_samples: int,
                rng: np.random.Generator, space: str = "prob") -> MuEstimate:
    """Stationarity margin of the plain gradient field around a game
    equilibrium. Probability space by default (finite corner equilibria);
    samples stay inside the open probability square there."""
    field = make_field(game, "pg", 0.0, None, space=space)
    box = (0.0, 1.0) if space == "prob" else None
    return estimate_mu_field(field, np.asarray(equilibrium, dtype=float),
                             radius, n_samples, rng, box=box)


@dataclass(frozen=True)
class MuMEstimate:
    mu_m: float
    jacobian: np.ndarray


def estimate_mu_M_field(field, center) -> MuMEstimate:
    """mu_M = -lambda_max of the symmetrised Jacobian of the correction."""
    center = np.asarray(center, dtype=float)
    J = autodiff.jacobian(field, list(center)).entries
    J = np.asarray(J, dtype=float)
    if not np.all(np.isfinite(J)):
        raise EquilibriumError("correction Jacobian is not finite here")
    sym = 0.5 * (J + J.T)
    return MuMEstimate(-sym_eig_max(sym), J)


def estimate_mu_M(game: GameSpec, equilibrium, cfg: UnrollConfig,
                  correction: str = "peer", space: str = "prob",
                  check_stationary: bool = True) -> MuMEstimate:
    if check_stationary:
        base = make_field(game, "pg", 0.0, None, space=space)
        f0 = _field_floats(base, np.asarray(equilibrium, dtype=float))
        if np.linalg.norm(f0) > 1e-4:
            raise EquilibriumError(
                f"gradient norm {np.linalg.norm(f0):.3e} at the candidate "
                "equilibrium; need <= 1e-4"
            )
    field = make_correction_field(game, cfg, correction=correction,
                                  space=space)
    return estimate_mu_M_field(field, equilibrium)


@dataclass(frozen=True)
class SOSEstimate:
    """Local constants around an equilibrium; rho is definitional."""

    equilibrium: np.ndarray
    mu: float
    mu_m: float
    lipschitz: float

    def certified_radius(self, lam: float) -> float:
        return (self.mu + lam * self.mu_m) / (2.0 * self.lipschitz)


def estimate_lipschitz(field, center, radius: float, n_samples: int,
                       rng: np.random.Generator, box=None) -> float:
    """Max Jacobian operator norm over sampled points in the ball."""
    pts = _ball_samples(center, radius, n_samples, rng, box=box)
    worst = 0.0
    for pt in pts:
        J = np.asarray(autodiff.jacobian(field, list(pt)).entries, dtype=float)
        worst = max(worst, operator_norm(J))
    return worst


# ---------------------------------------------------------------------------
# fixed-point shift and drift


@dataclass(frozen=True)
class NewtonResult:
    zero: np.ndarray
    converged: bool
    iterations: int
    residual: float


def newton_zero(field, x0, damping: float = 0.5, tol: float = 1e-10,
                max_iter: int = 200) -> NewtonResult:
    """Damped Newton on a field callable; Jacobians from the dual engine.

    Non-convergence (iteration cap, singular Jacobian, non-finite step) is
    reported through the ``converged`` flag, not an exception.
    """
    x = np.asarray(x0, dtype=float).copy()
    res = float("inf")
    for it in range(max_iter):
        f = _field_floats(field, x)
        res = float(np.linalg.norm(f))
        if res <= tol:
            return NewtonResult(x, True, it, res)
        try:
            J = np.asarray(autodiff.jacobian(field, list(x)).entries,
                           dtype=float)
            step = np.linalg.solve(J, f)
        except np.linalg.LinAlgError:
            return NewtonResult(x, False, it, res)
        if not np.all(np.isfinite(step)):
            return NewtonResult(x, False, it, res)
        x = x - damping * step
    f = _field_floats(field, x)
    return NewtonResult(x, False, max_iter, float(np.linalg.norm(f)))


@dataclass(frozen=True)
class ShiftReport:
    lambdas: np.ndarray
    shifts: np.ndarray            # per-lambda displacement vectors
    shift_norms: np.ndarray
    converged: np.ndarray
    slope: float                  # through-origin fit of ||shift|| vs lambda
    rel_residual: float
    first_order_direction: np.ndarray   # -J_v^-1 M at the base equilibrium

    def predicted_shift(self, lam: float) -> np.ndarray:
        return lam * self.first_order_direction


_SHIFT_FLOOR = 1e-8  # shifts below Newton resolution read as zero


def fixed_point_shift_report(v_field, m_field, center, lambda_grid
                             ) -> ShiftReport:
    """Zeros of v + lambda * M near the base zero, and the O(lambda) fit."""
    center = np.asarray(center, dtype=float)
    lambdas = np.asarray(lambda_grid, dtype=float)
    d = center.size
    shifts = np.zeros((lambdas.size, d))
    norms = np.zeros(lambdas.size)
    converged = np.zeros(lambdas.size, dtype=bool)
    for i, lam in enumerate(lambdas):
        def shaped(x, lam=lam):
            v = v_field(x)
            m = m_field(x)
            out = np.empty(len(v), dtype=object)
            for k in range(len(v)):
                out[k] = v[k] + lam * m[k]
            return out

        res = newton_zero(shaped, center)
        shifts[i] = res.zero - center
        norms[i] = np.linalg.norm(shifts[i])
        converged[i] = res.converged
    denom = float(lambdas @ lambdas)
    slope = float(lambdas @ norms) / denom if denom > 0 else 0.0
    resid = np.linalg.norm(norms - slope * lambdas)
    rel_residual = float(resid / max(np.linalg.norm(norms), _SHIFT_FLOOR))
    Jv = np.asarray(autodiff.jacobian(v_field, list(center)).entries,
                    dtype=float)
    m0 = _field_floats(m_field, center)
    first_order = -np.linalg.solve(Jv, m0)
    return ShiftReport(lambdas, shifts, norms, converged, slope,
                       rel_residual, first_order)


def verify_fixed_point_shift(game: GameSpec, equilibrium, cfg: UnrollConfig,
                             lambda_grid=(0.05, 0.1, 0.2, 0.4),
                             correction: str = "full",
                             space: str = "logit") -> ShiftReport:
    """Shift of the shaped field's zero near a game equilibrium."""
    v_field = make_field(game, "pg", 0.0, None, space=space)
    m_field = make_correction_field(game, cfg, correction=correction,
                                    space=space)
    return fixed_point_shift_report(v_field, m_field, equilibrium,
                                    lambda_grid)


@dataclass(frozen=True)
class DriftReport:
    n_samples: int
    violations: int
    worst_margin: float   # max over samples of lhs - rhs (<= 0 everywhere is a pass)


def drift_report(field, center, mu: float, mu_m: float, lam: float,
                 radius: float, n_samples: int, rng: np.random.Generator,
                 box=None) -> DriftReport:
    """Check <F(phi), phi - center> <= -(mu + lam*mu_m)/2 * ||phi - center||^2
    over sampled points. Violations are counted, never raised: outside the
    certified region they are expected."""
    center = np.asarray(center, dtype=float)
    pts = _ball_samples(center, radius, n_samples, rng, box=box)
    rate = 0.5 * (mu + lam * mu_m)
    worst = -np.inf
    violations = 0
    for pt in pts:
        delta = pt - center
        lhs = float(_field_floats(field, pt) @ delta)
        rhs = -rate * float(delta @ delta)
        margin = lhs - rhs
        worst = max(worst, margin)
        if margin > 0:
            violations += 1
    return DriftReport(len(pts), violations, float(worst))


def verify_drift(game: GameSpec, equilibrium_shifted, lam: float,
                 cfg: UnrollConfig, ball_radius: float, n_samples: int,
                 rng: np.random.Generator, mu: float, mu_m: float,
                 arm: str = "meta_mapg", space: str = "prob") -> DriftReport:
    field = make_field(game, arm, lam, cfg, space=space)
    box = (0.0, 1.0) if space == "prob" else None
    return drift_report(field, equilibrium_shifted, mu, mu_m, lam,
                        ball_radius, n_samples, rng, box=box)


# ---------------------------------------------------------------------------
# sampling diagnostics


@dataclass(frozen=True)
class SADiagnostics:
    noise_mean_norm: float
    sigma_hat: float
    clt_bound: float          # 3 sigma_hat / sqrt(repeats)
    repeats: int
    second_moments_by_length: dict
    bias_curve: list          # (horizon, bias_norm, standard_error)

    def noise_mean_within_band(self) -> bool:
        return self.noise_mean_norm <= self.clt_bound


def sa_diagnostics(game: GameSpec, params, arm: str, lam: float,
                   cfg: UnrollConfig, n_trajectories: int, horizon: int,
                   repeats: int, rng: np.random.Generator,
                   bias_horizons=(20, 40, 80), bias_repeats: int | None = None,
                   unroll_lengths=(1, 2, 3), _sampler=None) -> SADiagnostics:
    """Noise and bias structure of the sampled update at a fixed point.

    Empirical mean and dispersion of g - exact_field over repeated calls,
    second moments across unroll lengths, and the truncation-bias curve of
    the gradient part against the exact infinite-horizon field.
    """
    if repeats < 50:
        raise ValueError("need at least 50 repeats for the noise statistics")
    target = exact_field(game, params, arm, lam, cfg).assembled

    def default_sampler(pars, length, hor):
        c = UnrollConfig(length, cfg.step_own, cfg.step_peer)
        return sampled_update(game, pars, arm, lam, c, n_trajectories, hor,
                              rng).g

    sampler = _sampler or default_sampler
    xs = np.array([sampler(params, cfg.length, horizon)
                   for _ in range(repeats)])
    xi = xs - target
    mean = xi.mean(axis=0)
    centered = xi - mean
    sigma_hat = float(np.sqrt(np.mean(np.sum(centered ** 2, axis=1))))
    noise_mean_norm = float(np.linalg.norm(mean))
    clt = 3.0 * sigma_hat / math.sqrt(repeats)

    second = {}
    for L in unroll_lengths:
        xsL = np.array([sampler(params, L, horizon) for _ in range(repeats)])
        c = UnrollConfig(L, cfg.step_own, cfg.step_peer)
        tL = exact_field(game, params, arm, lam, c).assembled
        second[L] = float(np.mean(np.sum((xsL - tL) ** 2, axis=1)))

    n_bias = bias_repeats if bias_repeats is not None else repeats
    v_exact = eval_v(game, params)
    curve = []
    for H in bias_horizons:
        samples = np.array([
            (sampler(params, 0, H) if _sampler else
             sampled_update(game, params, "pg", 0.0, cfg, n_trajectories, H,
                            rng).g)
            for _ in range(n_bias)])
        mean_H = samples.mean(axis=0)
        bias = float(np.linalg.norm(mean_H - v_exact))
        se = float(np.sqrt(np.mean(np.sum((samples - mean_H) ** 2, axis=1))
                           / n_bias))
        curve.append((int(H), bias, se))
    return SADiagnostics(noise_mean_norm, sigma_hat, clt, repeats, second,
                         curve)


# ---------------------------------------------------------------------------
# sweep-style controls


@dataclass(frozen=True)
class LambdaSweepReport:
    lambdas: np.ndarray
    coverages: np.ndarray
    max_step_decrease: float   # worst coverage drop between adjacent lambdas

    def gap(self) -> float:
        return float(self.coverages[-1] - self.coverages[0])


def lambda_sweep(game: GameSpec, lambda_grid, grid: GridSpec,
                 seeds_per_cell: int, schedule: Schedule, cfg: UnrollConfig,
                 mode: str = "exact", master_seed: int = 0, tau: float = 0.82,
                 arm: str = "meta_mapg") -> LambdaSweepReport:
    """Basin coverage as a function of the shaping strength.

    The grid must include lambda = 0, whose entry reduces to the plain
    gradient arm exactly.
    """
    lambdas = np.asarray(sorted(lambda_grid), dtype=float)
    if lambdas.size == 0:
        raise ValueError("lambda grid must be nonempty")
    if lambdas[0] != 0.0:
        raise ValueError("lambda grid must include 0 (the unshaped baseline)")
    coverages = np.zeros(lambdas.size)
    for i, lam in enumerate(lambdas):
        sched = Schedule(schedule.step_rule, ("constant", float(lam)),
                         schedule.total_steps)
        g = grid_sweep(game, [arm], grid, seeds_per_cell, sched, cfg,
                       mode=mode, master_seed=master_seed, tau=tau)
        coverages[i] = g.coverage(arm)
    worst = float(np.max(coverages[:-1] - coverages[1:], initial=-np.inf))
    return LambdaSweepReport(lambdas, coverages, worst)


@dataclass(frozen=True)
class NormControlReport:
    pg_coverage: float
    meta_coverage: float
    matched_coverage: float
    norm_ratio: float
    matched_step: float


def norm_matched_control(game: GameSpec, grid: GridSpec, schedule: Schedule,
                         cfg: UnrollConfig, lam: float, mode: str = "exact",
                         master_seed: int = 0, tau: float = 0.82,
                         probe_steps: int = 10) -> NormControlReport:
    """Magnitude control: rescale the plain-gradient step so its average
    early-update norm matches the shaped arm's, then re-run the sweep."""
    meta_sched = Schedule(schedule.step_rule, ("constant", float(lam)),
                          schedule.total_steps)
    pg_sched = Schedule(schedule.step_rule, ("constant", 0.0),
                        schedule.total_steps)
    p1_axis, p2_axis = grid.axes
    probe = Schedule(schedule.step_rule, ("constant", float(lam)), probe_steps)
    probe_pg = Schedule(schedule.step_rule, ("constant", 0.0), probe_steps)
    norms = {"pg": 0.0, "meta": 0.0}
    count = 0
    for p1 in p1_axis:
        for p2 in p2_axis:
            init = logit(np.repeat(np.array([p1, p2]), game.n_states))
            rec_m = run(game, "meta_mapg", init, probe, cfg, tau=tau)
            rec_p = run(game, "pg", init, probe_pg, cfg, tau=tau)
            norms["meta"] += float(rec_m.checkpoint_update_norms.sum())
            norms["pg"] += float(rec_p.checkpoint_update_norms.sum())
            count += probe_steps
    ratio = norms["meta"] / norms["pg"]

    base = grid_sweep(game, ["pg", "meta_mapg"], grid, 1, meta_sched, cfg,
                      mode=mode, master_seed=master_seed, tau=tau)
    if schedule.step_rule[0] != "constant":
        raise ValueError("norm matching assumes a constant outer step")
    matched_step = float(schedule.step_rule[1]) * ratio
    matched_sched = Schedule(("constant", matched_step), ("constant", 0.0),
                             schedule.total_steps)
    matched = grid_sweep(game, ["pg"], grid, 1, matched_sched, cfg, mode=mode,
                         master_seed=master_seed, tau=tau)
    return NormControlReport(base.coverage("pg"), base.coverage("meta_mapg"),
                             matched.coverage("pg"), float(ratio),
                             matched_step)


def threshold_sweep(records: list[RunRecord], tau_grid=(0.78, 0.80, 0.82,
                                                        0.84, 0.86)) -> dict:
    """Reclassify stored metrics across thresholds without re-running.

    Returns {tau: {arm: (successes, trials)}}; diverged runs never count
    as successes.
    """
    taus = list(tau_grid)
    if not taus:
        raise ValueError("tau grid must be nonempty")
    out = {}
    for tau in taus:
        per_arm = {}
        for rec in records:
            k, n = per_arm.get(rec.arm, (0, 0))
            ok = (not rec.diverged) and np.isfinite(rec.metric) and \
                rec.metric >= tau
            per_arm[rec.arm] = (k + int(ok), n + 1)
        out[float(tau)] = per_arm
    return out
