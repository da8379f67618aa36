"""The learning dynamics: plain gradient, shaping corrections, updates.

For each agent the shaped update augments its own policy gradient with the
derivative of its terminal value through a finite chain of simultaneous
inner gradient steps. Splitting that total derivative by path gives the
own-learning part (through the agent's own future parameters; identically
zero at stationary points of the chain) and the peer-learning part (through
the other agent's future parameters; generally nonzero at equilibria, which
is what moves basin boundaries).

Exact evaluations run through the compiled kernels by default
(``engine="kernel"``); ``engine="autodiff"`` evaluates the same quantities
with nested dual numbers, which is slower but fully independent of the
kernel derivation and accepts dual-valued inputs (used for Jacobians of the
correction field in the analysis layer).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels, autodiff
from .games import GameSpec, JointParams, check_layout, exact_value

ARMS = ("pg", "own_only", "peer_only", "meta_mapg")
ARM_CODES = {name: i for i, name in enumerate(ARMS)}


class UnrollDivergenceError(RuntimeError):
    """The inner gradient chain produced a non-finite iterate."""

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"inner unroll diverged at step {step}")


class EstimatorBlowupError(RuntimeError):
    """A sampled update produced non-finite values."""

    def __init__(self, diagnostics: dict):
        self.diagnostics = diagnostics
        super().__init__(f"sampled update blew up: {diagnostics}")


@dataclass(frozen=True)
class UnrollConfig:
    """Inner chain: length and per-role step sizes (own vs peers)."""

    length: int = 3
    step_own: float = 0.3
    step_peer: float = 0.3

    def __post_init__(self):
        if not isinstance(self.length, int) or self.length < 0:
            raise ValueError(f"unroll length must be an int >= 0, got {self.length}")
        for name in ("step_own", "step_peer"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")


@dataclass(frozen=True)
class FieldEval:
    """One evaluation of the dynamics at a parameter point."""

    params: np.ndarray
    v: np.ndarray
    m_own: np.ndarray
    m_peer: np.ndarray
    arm: str
    lam: float
    assembled: np.ndarray


@dataclass(frozen=True)
class SampledUpdate:
    """One sampled update g = v_part + lam * corr_part (exact identity)."""

    g: np.ndarray
    v_part: np.ndarray
    corr_part: np.ndarray
    arm: str
    lam: float
    n_trajectories: int
    horizon: int
    unroll_length: int


def _flat(game, params):
    if isinstance(params, JointParams):
        check_layout(game, params)
        return params.flat
    flat = np.asarray(params, dtype=float)
    if flat.shape != (game.n_params,):
        raise ValueError(f"expected {game.n_params} parameters")
    return flat


def eval_v(game: GameSpec, params, engine: str = "kernel") -> np.ndarray:
    """Stacked per-agent own-block gradients of the exact values."""
    if engine == "kernel":
        return _kernels.self_gradient(
            game.rewards, game.transitions, game.init_dist, game.discount,
            _flat(game, params))
    if engine == "autodiff":
        return _eval_v_autodiff(game, params)
    raise ValueError(f"unknown engine {engine!r}")


def _eval_v_autodiff(game, params):
    """Per-agent gradients by dual-number differentiation of the value solve.

    Accepts dual-valued entries, in which case the result carries them.
    """
    flat = params.flat if isinstance(params, JointParams) else np.asarray(
        params, dtype=object)
    S = game.n_states
    out = np.empty(2 * S, dtype=object)
    for i in range(2):
        def vi(block, i=i):
            full = np.empty(2 * S, dtype=object)
            for m in range(2 * S):
                full[m] = flat[m]
            full[i * S:(i + 1) * S] = block
            return exact_value(game, full)[i]

        gi = autodiff.grad(vi, list(flat[i * S:(i + 1) * S]))
        out[i * S:(i + 1) * S] = gi
    if all(isinstance(v, float) for v in out):
        return out.astype(float)
    return out


def _step_vector(game, cfg, perspective):
    d = game.n_params
    S = game.n_states
    a = np.full(d, cfg.step_own)
    if perspective is not None:
        a[:] = cfg.step_peer
        a[perspective * S:(perspective + 1) * S] = cfg.step_own
    return a


def unroll_inner(game: GameSpec, params, cfg: UnrollConfig,
                 perspective: int | None = None) -> list[JointParams]:
    """Chain of simultaneous inner gradient steps, phi_0 .. phi_L.

    With ``perspective=i`` agent i's block steps with ``step_own`` and the
    other block with ``step_peer`` (the chain agent i differentiates
    through); without a perspective every block uses ``step_own``.
    """
    flat = _flat(game, params)
    a = _step_vector(game, cfg, perspective)
    chain = [JointParams.from_flat(flat, game)]
    th = flat.copy()
    for ell in range(cfg.length):
        g = eval_v(game, th)
        th = th + a * g
        if not np.all(np.isfinite(th)):
            raise UnrollDivergenceError(ell + 1)
        chain.append(JointParams.from_flat(th, game))
    return chain


def eval_corrections(game: GameSpec, params, cfg: UnrollConfig,
                     engine: str = "kernel"):
    """Own-learning and peer-learning correction vectors at ``params``.

    Exact-gradient path split of d V_i(phi_L) / d phi_0^i through each
    agent's perspective chain. Both engines return numerically identical
    results; the kernel path is the production one. Dual-valued inputs
    require the autodiff engine.
    """
    if engine == "autodiff":
        flat = (params.flat if isinstance(params, JointParams)
                else np.asarray(params, dtype=object))
        return _corrections_autodiff(game, flat, cfg)
    flat = _flat(game, params)
    if engine == "kernel":
        v, m_own, m_peer = _kernels.corrections(
            game.rewards, game.transitions, game.init_dist, game.discount,
            flat, cfg.length, cfg.step_own, cfg.step_peer)
        if not (np.all(np.isfinite(m_own)) and np.all(np.isfinite(m_peer))):
            # locate the failing inner step for the error message
            unroll_inner(game, params, cfg, perspective=0)
            unroll_inner(game, params, cfg, perspective=1)
            raise UnrollDivergenceError(cfg.length)
        return m_own, m_peer
    raise ValueError(f"unknown engine {engine!r}")


def _corrections_autodiff(game, flat, cfg):
    """Dual-number route: Jacobian of the chain map, then the path split.

    Differentiates the unrolled map with the forward-mode engine (the chain
    itself consumes gradients, so this nests two levels) and contracts with
    the terminal value gradients. Dual-valued inputs are supported, at one
    extra nesting level.
    """
    S = game.n_states
    d = 2 * S
    m_own = np.empty(d, dtype=object)
    m_peer = np.empty(d, dtype=object)
    flat = np.asarray(flat, dtype=object)

    for i in range(2):
        a = _step_vector(game, cfg, perspective=i)

        def chain_map(th0, a=a):
            th = th0
            for _ in range(cfg.length):
                g = _eval_v_autodiff(game, th)
                nxt = np.empty(d, dtype=object)
                for m in range(d):
                    nxt[m] = th[m] + a[m] * g[m]
                th = nxt
            return th

        X = autodiff.jacobian(chain_map, list(flat)).entries
        thL = chain_map(flat)
        WL_i = _terminal_value_grad(game, thL, i)
        lo, hi = i * S, (i + 1) * S
        olo, ohi = (1 - i) * S, (2 - i) * S
        for nn in range(lo, hi):
            acc_o = 0.0
            for m in range(lo, hi):
                delta = 1.0 if m == nn else 0.0
                acc_o = acc_o + (X[m, nn] - delta) * WL_i[m]
            acc_p = 0.0
            for m in range(olo, ohi):
                acc_p = acc_p + X[m, nn] * WL_i[m]
            m_own[nn] = acc_o
            m_peer[nn] = acc_p
    if all(isinstance(x, float) for x in m_own) and all(
            isinstance(x, float) for x in m_peer):
        return m_own.astype(float), m_peer.astype(float)
    return m_own, m_peer


def _terminal_value_grad(game, thL, i):
    """Full gradient of V_i with respect to every parameter, at thL."""
    d = game.n_params

    def vi(th):
        return exact_value(game, th)[i]

    return autodiff.grad(vi, list(thL))


def assemble_update(game: GameSpec, params, v, m_own, m_peer, arm: str,
                    lam: float) -> FieldEval:
    """Assembled per-arm update.

    pg -> v (lam ignored); own_only -> v + lam * m_own; peer_only ->
    v + lam * m_peer; meta_mapg -> v + lam * (m_own + m_peer). With
    lam = 0 every arm reduces to v bit-exactly.
    """
    if arm not in ARM_CODES:
        raise ValueError(f"unknown arm {arm!r}; expected one of {ARMS}")
    v = np.asarray(v, dtype=float)
    m_own = np.asarray(m_own, dtype=float)
    m_peer = np.asarray(m_peer, dtype=float)
    if not (v.shape == m_own.shape == m_peer.shape):
        raise ValueError("field components must share the parameter layout")
    if arm == "pg" or lam == 0.0:
        assembled = v.copy()
    elif arm == "own_only":
        assembled = v + lam * m_own
    elif arm == "peer_only":
        assembled = v + lam * m_peer
    else:
        assembled = v + lam * (m_own + m_peer)
    return FieldEval(_flat(game, params), v, m_own, m_peer, arm, float(lam),
                     assembled)


def exact_field(game: GameSpec, params, arm: str, lam: float,
                cfg: UnrollConfig, engine: str = "kernel") -> FieldEval:
    """Evaluate v and the corrections, then assemble the given arm."""
    if arm not in ARM_CODES:
        raise ValueError(f"unknown arm {arm!r}; expected one of {ARMS}")
    v = eval_v(game, params, engine=engine)
    if arm == "pg" or lam == 0.0 or cfg.length == 0:
        # corrections are unused (pg / lam 0) or exactly zero (length 0)
        z = np.zeros_like(np.asarray(v, dtype=float))
        return assemble_update(game, params, v, z, z, arm, lam)
    m_own, m_peer = eval_corrections(game, params, cfg, engine=engine)
    return assemble_update(game, params, v, m_own, m_peer, arm, lam)


def _lr_batch(game, flat, n_traj, horizon, rng, want_hess):
    """One sampled batch and its likelihood-ratio gradient estimates."""
    p = 0.5 * (np.tanh(0.5 * flat.reshape(2, game.n_states)) + 1.0)
    u_init = rng.random(n_traj)
    u_steps = rng.random((n_traj, horizon, 3))
    states, actions, rewards = _kernels.sample_paths(
        p, game.rewards, game.transitions, game.init_dist, horizon,
        u_init, u_steps)
    W_hat, Dg_hat = _kernels.lr_gradients(states, actions, rewards, p,
                                          game.discount, want_hess)
    return W_hat, Dg_hat


def sampled_update(game: GameSpec, params, arm: str, lam: float,
                   cfg: UnrollConfig, n_trajectories: int, horizon: int,
                   rng: np.random.Generator) -> SampledUpdate:
    """Monte Carlo estimate of the assembled update.

    The gradient part is a reward-to-go likelihood-ratio estimator,
    unbiased for the truncated-horizon field (truncation bias of order
    gamma^horizon). Corrections re-estimate the inner chain from sampled
    gradients (fresh batch per inner step, plus a terminal batch) and
    differentiate through it with sampled second-order score estimates.
    """
    if arm not in ARM_CODES:
        raise ValueError(f"unknown arm {arm!r}; expected one of {ARMS}")
    if n_trajectories < 1:
        raise ValueError("n_trajectories must be >= 1")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    flat = _flat(game, params)
    S = game.n_states
    d = 2 * S

    W_hat, _ = _lr_batch(game, flat, n_trajectories, horizon, rng, False)
    v_part = np.array([W_hat[m // S, m] for m in range(d)])

    corr = np.zeros(d)
    if arm != "pg" and lam != 0.0 and cfg.length > 0:
        m_own = np.zeros(d)
        m_peer = np.zeros(d)
        shared = cfg.step_own == cfg.step_peer
        chains = {}
        for i in range(2):
            if shared and i == 1:
                X, WL = chains[0]
            else:
                a = _step_vector(game, cfg, perspective=i)
                th = flat.copy()
                X = np.eye(d)
                for _ in range(cfg.length):
                    Wl, Dgl = _lr_batch(game, th, n_trajectories, horizon,
                                        rng, True)
                    g = np.array([Wl[m // S, m] for m in range(d)])
                    X = X + (a[:, None] * Dgl) @ X
                    th = th + a * g
                    if not np.all(np.isfinite(th)):
                        raise EstimatorBlowupError({
                            "where": "sampled inner chain",
                            "perspective": i,
                            "max_abs_param": float(np.nanmax(np.abs(th))),
                        })
                WL, _ = _lr_batch(game, th, n_trajectories, horizon, rng,
                                  False)
                chains[i] = (X, WL)
            lo, hi = i * S, (i + 1) * S
            olo, ohi = (1 - i) * S, (2 - i) * S
            m_own[lo:hi] = (X[lo:hi, lo:hi] - np.eye(S)).T @ WL[i, lo:hi]
            m_peer[lo:hi] = X[olo:ohi, lo:hi].T @ WL[i, olo:ohi]
        if arm == "own_only":
            corr = m_own
        elif arm == "peer_only":
            corr = m_peer
        else:
            corr = m_own + m_peer

    g = v_part + lam * corr if (arm != "pg" and lam != 0.0) else v_part.copy()
    if not np.all(np.isfinite(g)):
        raise EstimatorBlowupError({
            "where": "assembled sampled update",
            "v_part_norm": float(np.linalg.norm(v_part)),
            "corr_norm": float(np.linalg.norm(corr)),
        })
    return SampledUpdate(g, v_part, corr, arm, float(lam),
                         int(n_trajectories), int(horizon), cfg.length)
