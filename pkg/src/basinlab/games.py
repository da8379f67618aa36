"""Tabular two-agent stochastic games with exact values and sampling.

Built-in games: a one-shot Stag Hunt (single state) and a memory-1 iterated
Prisoner's Dilemma (five states: initial plus the four previous joint
outcomes). Policies are Bernoulli per state, parameterised by the logit of
the cooperate probability; action index 0 is cooperate.

Rewards are affinely rescaled into [-1, 1] at construction by dividing by
the largest absolute payoff (a positive scaling, no shift, so best-response
structure and the Nash set are unchanged).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff
from . import _kernels

_ATOL = 1e-12


class GameValidationError(ValueError):
    """Raised when a game specification violates its construction contract."""


def logit(p):
    """Inverse sigmoid; +/-inf at the corners (handled downstream)."""
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(p) - np.log1p(-p)


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


@dataclass(frozen=True)
class GameSpec:
    """A two-agent finite discounted stochastic game.

    rewards: (2, n_states, A0, A1), entries in [-1, 1].
    transitions: (n_states, A0, A1, n_states), rows summing to 1.
    init_dist: (n_states,), summing to 1. discount in [0, 1).
    """

    rewards: np.ndarray
    transitions: np.ndarray
    discount: float
    init_dist: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        rewards = np.ascontiguousarray(self.rewards, dtype=float)
        transitions = np.ascontiguousarray(self.transitions, dtype=float)
        init_dist = np.ascontiguousarray(self.init_dist, dtype=float)
        if rewards.ndim != 4 or rewards.shape[0] != 2:
            raise GameValidationError(
                f"rewards must have shape (2, S, A0, A1), got {rewards.shape}"
            )
        S = rewards.shape[1]
        a0, a1 = rewards.shape[2], rewards.shape[3]
        if transitions.shape != (S, a0, a1, S):
            raise GameValidationError(
                f"transitions shape {transitions.shape} does not match "
                f"rewards layout (expected {(S, a0, a1, S)})"
            )
        if init_dist.shape != (S,):
            raise GameValidationError(
                f"init_dist must have shape ({S},), got {init_dist.shape}"
            )
        if not np.all(np.isfinite(rewards)):
            raise GameValidationError("rewards contain non-finite entries")
        if np.any(np.abs(rewards) > 1.0 + _ATOL):
            raise GameValidationError(
                "reward entries must lie in [-1, 1]; rescale the payoffs"
            )
        if not np.all(np.isfinite(transitions)) or np.any(transitions < -_ATOL):
            raise GameValidationError("transition entries must be finite and >= 0")
        row_sums = transitions.sum(axis=3)
        if np.any(np.abs(row_sums - 1.0) > _ATOL):
            raise GameValidationError(
                "each transition row must sum to 1 within 1e-12"
            )
        if np.any(init_dist < -_ATOL) or abs(init_dist.sum() - 1.0) > _ATOL:
            raise GameValidationError("init_dist must be a probability vector")
        if not (0.0 <= self.discount < 1.0):
            raise GameValidationError(
                f"discount must lie in [0, 1), got {self.discount}"
            )
        for arr in (rewards, transitions, init_dist):
            arr.flags.writeable = False
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "transitions", transitions)
        object.__setattr__(self, "init_dist", init_dist)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def n_agents(self) -> int:
        return 2

    @property
    def n_states(self) -> int:
        return self.rewards.shape[1]

    @property
    def action_counts(self) -> tuple[int, int]:
        return (self.rewards.shape[2], self.rewards.shape[3])

    @property
    def n_params(self) -> int:
        return 2 * self.n_states

    def require_bernoulli(self):
        if self.action_counts != (2, 2):
            raise GameValidationError(
                "Bernoulli-logit policies require 2 actions per agent, "
                f"got action counts {self.action_counts}"
            )


DEFAULT_STAG_PAYOFFS = (
    ((4.0, 4.0), (0.0, 3.0)),   # row cooperates: (C,C), (C,D)
    ((3.0, 0.0), (2.0, 2.0)),   # row defects:    (D,C), (D,D)
)

DEFAULT_IPD_PAYOFFS = (5.0, 3.0, 1.0, 0.0)  # T, R, P, S


def make_stag_hunt(payoffs=DEFAULT_STAG_PAYOFFS, discount=0.9) -> GameSpec:
    """Single-state Stag Hunt; payoffs[a0][a1][agent], action 0 = stag."""
    payoffs = np.asarray(payoffs, dtype=float)
    if payoffs.shape != (2, 2, 2):
        raise GameValidationError(
            f"stag hunt payoffs must be a 2x2x2 tensor, got {payoffs.shape}"
        )
    if not np.all(np.isfinite(payoffs)):
        raise GameValidationError("stag hunt payoffs must be finite")
    scale = np.max(np.abs(payoffs))
    scaled = payoffs / scale if scale > 0 else payoffs
    rewards = np.zeros((2, 1, 2, 2))
    for a0 in range(2):
        for a1 in range(2):
            rewards[0, 0, a0, a1] = scaled[a0, a1, 0]
            rewards[1, 0, a0, a1] = scaled[a0, a1, 1]
    transitions = np.ones((1, 2, 2, 1))
    return GameSpec(rewards, transitions, discount, np.array([1.0]),
                    kind="stag_hunt")


# state encoding for the memory-1 IPD
IPD_STATE_NAMES = ("start", "CC", "CD", "DC", "DD")
_IPD_NEXT = {(0, 0): 1, (0, 1): 2, (1, 0): 3, (1, 1): 4}


def make_ipd(t=DEFAULT_IPD_PAYOFFS[0], r=DEFAULT_IPD_PAYOFFS[1],
             p=DEFAULT_IPD_PAYOFFS[2], s=DEFAULT_IPD_PAYOFFS[3],
             discount=0.96) -> GameSpec:
    """Memory-1 iterated Prisoner's Dilemma as a 5-state game.

    States are the initial state plus the previous joint outcome; the
    next state is a deterministic function of the joint action. Requires
    the dilemma ordering t > r > p > s.
    """
    vals = (t, r, p, s)
    if not all(np.isfinite(v) for v in vals):
        raise GameValidationError("IPD payoffs must be finite")
    if not (t > r > p > s):
        raise GameValidationError(
            f"IPD payoffs need t > r > p > s, got t={t} r={r} p={p} s={s}"
        )
    scale = max(abs(v) for v in vals)
    tt, rr, pp, ss = (v / scale for v in vals)
    # per-step payoff to the row agent; column agent is the transpose
    row = np.array([[rr, ss], [tt, pp]])
    S = 5
    rewards = np.zeros((2, S, 2, 2))
    rewards[0, :] = row
    rewards[1, :] = row.T
    transitions = np.zeros((S, 2, 2, S))
    for st in range(S):
        for a0 in range(2):
            for a1 in range(2):
                transitions[st, a0, a1, _IPD_NEXT[(a0, a1)]] = 1.0
    init = np.zeros(S)
    init[0] = 1.0
    return GameSpec(rewards, transitions, discount, init, kind="ipd")


def game_from_config(cfg: dict) -> GameSpec:
    """Build a game from its JSON form.

    {"kind": "stag_hunt"|"ipd"|"custom", "payoffs": [...], "discount": x};
    custom games supply "rewards", "transitions" and "init_dist" tensors.
    """
    kind = cfg.get("kind")
    if kind == "stag_hunt":
        payoffs = cfg.get("payoffs", DEFAULT_STAG_PAYOFFS)
        return make_stag_hunt(payoffs, cfg.get("discount", 0.9))
    if kind == "ipd":
        payoffs = cfg.get("payoffs", DEFAULT_IPD_PAYOFFS)
        if len(payoffs) != 4:
            raise GameValidationError(
                "ipd payoffs must be [T, R, P, S], got " + repr(payoffs)
            )
        return make_ipd(*payoffs, discount=cfg.get("discount", 0.96))
    if kind == "custom":
        try:
            rewards = cfg["rewards"]
            transitions = cfg["transitions"]
            init_dist = cfg["init_dist"]
            discount = cfg["discount"]
        except KeyError as exc:
            raise GameValidationError(
                f"custom game config missing field {exc}"
            ) from None
        return GameSpec(np.asarray(rewards), np.asarray(transitions),
                        discount, np.asarray(init_dist), kind="custom")
    raise GameValidationError(f"unknown game kind {kind!r}")


@dataclass(frozen=True)
class JointParams:
    """Per-agent blocks of cooperate-probability logits."""

    blocks: tuple

    def __post_init__(self):
        blocks = tuple(np.ascontiguousarray(b, dtype=float) for b in self.blocks)
        for b in blocks:
            if b.ndim != 1:
                raise GameValidationError("parameter blocks must be 1-d")
            if not np.all(np.isfinite(b)):
                raise GameValidationError("parameters must be finite")
            b.flags.writeable = False
        object.__setattr__(self, "blocks", blocks)

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate(self.blocks)

    @property
    def n_params(self) -> int:
        return sum(b.size for b in self.blocks)

    @classmethod
    def from_flat(cls, flat, game: GameSpec) -> "JointParams":
        flat = np.asarray(flat, dtype=float)
        S = game.n_states
        if flat.shape != (2 * S,):
            raise GameValidationError(
                f"expected {2 * S} parameters for this game, got {flat.shape}"
            )
        return cls((flat[:S].copy(), flat[S:].copy()))

    @classmethod
    def from_coop_probs(cls, probs, game: GameSpec) -> "JointParams":
        return cls.from_flat(logit(np.asarray(probs, dtype=float)), game)

    def coop_probs(self) -> np.ndarray:
        return sigmoid(self.flat)


def check_layout(game: GameSpec, params: JointParams):
    game.require_bernoulli()
    if len(params.blocks) != 2 or any(b.size != game.n_states
                                      for b in params.blocks):
        raise GameValidationError(
            "parameter layout does not match the game: expected 2 blocks "
            f"of {game.n_states}, got {[b.size for b in params.blocks]}"
        )


def _as_flat(params, game: GameSpec):
    if isinstance(params, JointParams):
        check_layout(game, params)
        return params.flat
    flat = np.asarray(params)
    if flat.shape != (game.n_params,):
        raise GameValidationError(
            f"expected flat parameter vector of length {game.n_params}"
        )
    return flat


def exact_value(game: GameSpec, params) -> np.ndarray:
    """Per-agent discounted values under the joint policy.

    Solves (I - gamma * P_pi) x_i = r_{i,pi} per agent and combines with the
    initial distribution. Accepts a JointParams, a flat float vector, or a
    vector containing dual numbers (differentiable path).
    """
    game.require_bernoulli()
    if isinstance(params, JointParams):
        check_layout(game, params)
        flat = params.flat
    else:
        flat = params if isinstance(params, np.ndarray) else np.asarray(
            params, dtype=object)
        if len(flat) != game.n_params:
            raise GameValidationError(
                f"expected {game.n_params} parameters, got {len(flat)}"
            )
        if any(isinstance(v, autodiff.Dual) for v in flat):
            return _exact_value_dual(game, flat)
        flat = np.asarray(flat, dtype=float)
    V, _, _ = _kernels.value_pipeline(
        game.rewards, game.transitions, game.init_dist, game.discount,
        flat, 0)
    return V


def _exact_value_dual(game: GameSpec, flat) -> np.ndarray:
    """Dual-number evaluation of the value solve (any nesting level)."""
    S = game.n_states
    gamma = game.discount
    R = game.rewards
    P = game.transitions
    rho = game.init_dist
    p = [[autodiff.sigmoid(flat[i * S + s]) for s in range(S)]
         for i in range(2)]
    K = np.empty((S, S), dtype=object)
    r = np.empty((S, 2), dtype=object)
    for s in range(S):
        for t in range(S):
            K[s, t] = 1.0 if s == t else 0.0
        r[s, 0] = 0.0
        r[s, 1] = 0.0
    for s in range(S):
        q0 = (p[0][s], 1.0 - p[0][s])
        q1 = (p[1][s], 1.0 - p[1][s])
        for a in range(2):
            for b in range(2):
                w = q0[a] * q1[b]
                for t in range(S):
                    if P[s, a, b, t] != 0.0:
                        K[s, t] = K[s, t] - gamma * w * P[s, a, b, t]
                r[s, 0] = r[s, 0] + w * R[0, s, a, b]
                r[s, 1] = r[s, 1] + w * R[1, s, a, b]
    x = autodiff.solve(K, r)
    out = np.empty(2, dtype=object)
    for i in range(2):
        acc = 0.0
        for s in range(S):
            acc = acc + rho[s] * x[s, i]
        out[i] = acc
    return out


def coop_metric(game: GameSpec, params) -> float:
    """Cooperation statistic used for success classification.

    Single-state games: the minimum over agents of the cooperate
    probability. Multi-state games: the discounted mutual-cooperation
    frequency (1 - gamma) * rho . (I - gamma P_pi)^-1 q with
    q[s] = p_0[s] * p_1[s], computed exactly.
    """
    flat = _as_flat(params, game)
    S = game.n_states
    p = sigmoid(flat.reshape(2, S))
    if S == 1:
        return float(np.min(p))
    q = np.stack([p, 1.0 - p], axis=2)
    w = q[0][:, :, None] * q[1][:, None, :]
    Ppi = np.einsum("sab,sabt->st", w, game.transitions)
    K = np.eye(S) - game.discount * Ppi
    cc = p[0] * p[1]
    x = np.linalg.solve(K, cc)
    return float((1.0 - game.discount) * (game.init_dist @ x))


@dataclass(frozen=True)
class TrajectoryBatch:
    """Truncated-horizon Monte Carlo trajectories and their returns."""

    states: np.ndarray      # (B, H) int64
    actions: np.ndarray     # (B, H, 2) int64
    rewards: np.ndarray     # (B, H, 2)
    horizon: int
    discount: float
    behavior: JointParams
    returns: np.ndarray     # (B, 2) discounted from t = 0

    @property
    def n_trajectories(self) -> int:
        return self.states.shape[0]

    def recompute_returns(self) -> np.ndarray:
        disc = self.discount ** np.arange(self.horizon)
        return np.einsum("t,bti->bi", disc, self.rewards)


def sample_trajectories(game: GameSpec, params: JointParams, count: int,
                        horizon: int, rng: np.random.Generator
                        ) -> TrajectoryBatch:
    """I.i.d. truncated-horizon rollouts under the joint policy.

    Reproducible given the generator state: all randomness is pre-drawn as
    uniforms in a fixed order, so the compiled and fallback samplers return
    bit-identical batches.
    """
    check_layout(game, params)
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    u_init = rng.random(count)
    u_steps = rng.random((count, horizon, 3))
    p = sigmoid(params.flat.reshape(2, game.n_states))
    states, actions, rewards = _kernels.sample_paths(
        p, game.rewards, game.transitions, game.init_dist, horizon,
        u_init, u_steps)
    returns = _kernels.discounted_returns(rewards, game.discount)
    return TrajectoryBatch(states, actions, rewards, horizon, game.discount,
                           params, returns)
