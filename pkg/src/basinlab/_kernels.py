"""Hot numeric kernels for 2-agent, 2-action tabular games.

All functions here are written as plain numpy so they run either compiled
(numba ``@njit``, the default) or as pure Python. Set ``BASINLAB_NUMBA=0``
before import to select the uncompiled fallback; ``PY_FUNCS`` always holds
the uncompiled versions so the two paths can be compared directly (see
``benchmarks/kernel_bench.py``).

Parameter layout: ``theta`` is the flat vector of cooperate-probability
logits, agent-0 block first, one entry per state (d = 2 * n_states).

The exact-derivative pipeline propagates first and second derivatives of
the discounted value solve

    (I - gamma * P_pi) x_i = r_{i,pi},   V_i = rho . x_i

through the policy probabilities analytically: a direction m touches one
(agent, state) pair, so dP_pi and dr have a single nonzero row and all
directional solves share one factorised system.
"""

from __future__ import annotations

import os

import numpy as np

NUMBA_ENABLED = os.environ.get("BASINLAB_NUMBA", "1") != "0"


def value_pipeline(R, P, rho, gamma, theta, order):
    """Exact per-agent values and derivatives at ``theta``.

    R: (2, S, 2, 2) rewards, P: (S, 2, 2, S) transitions, rho: (S,) initial
    distribution. Returns (V, W, Dg) where V is (2,), W[i, m] = dV_i/dtheta_m
    (filled for order >= 1) and Dg[m, n] = d^2 V_{agent(m)} / dtheta_m dtheta_n
    (filled for order >= 2), i.e. the Jacobian of the stacked self-gradient
    field g[m] = W[agent(m), m].
    """
    S = rho.shape[0]
    d = 2 * S
    p = np.empty((2, S))
    for i in range(2):
        for s in range(S):
            p[i, s] = 0.5 * (np.tanh(0.5 * theta[i * S + s]) + 1.0)
    u = p * (1.0 - p)
    up = u * (1.0 - 2.0 * p)

    q = np.empty((2, S, 2))
    dq = np.empty((2, S, 2))
    ddq = np.empty((2, S, 2))
    for i in range(2):
        for s in range(S):
            q[i, s, 0] = p[i, s]
            q[i, s, 1] = 1.0 - p[i, s]
            dq[i, s, 0] = u[i, s]
            dq[i, s, 1] = -u[i, s]
            ddq[i, s, 0] = up[i, s]
            ddq[i, s, 1] = -up[i, s]

    K = np.eye(S)
    r = np.zeros((S, 2))
    for s in range(S):
        for a in range(2):
            for b in range(2):
                wab = q[0, s, a] * q[1, s, b]
                for t in range(S):
                    K[s, t] -= gamma * wab * P[s, a, b, t]
                r[s, 0] += wab * R[0, s, a, b]
                r[s, 1] += wab * R[1, s, a, b]

    x = np.linalg.solve(K, r)  # (S, 2)
    V = np.empty(2)
    for i in range(2):
        acc = 0.0
        for s in range(S):
            acc += rho[s] * x[s, i]
        V[i] = acc

    W = np.zeros((2, d))
    Dg = np.zeros((d, d))
    if order < 1:
        return V, W, Dg

    # First derivatives: direction m perturbs only state t = m % S of agent
    # m // S, so the derivative system has a one-row RHS; batch all 2d
    # right-hand sides into a single solve.
    dPpi = np.zeros((d, S))
    dr = np.zeros((d, 2))
    rhs1 = np.zeros((S, 2 * d))
    for m in range(d):
        j = m // S
        t = m % S
        for a in range(2):
            for b in range(2):
                if j == 0:
                    dwab = dq[0, t, a] * q[1, t, b]
                else:
                    dwab = q[0, t, a] * dq[1, t, b]
                for sp in range(S):
                    dPpi[m, sp] += dwab * P[t, a, b, sp]
                dr[m, 0] += dwab * R[0, t, a, b]
                dr[m, 1] += dwab * R[1, t, a, b]
        for i in range(2):
            acc = 0.0
            for sp in range(S):
                acc += dPpi[m, sp] * x[sp, i]
            rhs1[t, 2 * m + i] = dr[m, i] + gamma * acc
    dx = np.linalg.solve(K, rhs1)  # (S, 2d)
    for m in range(d):
        for i in range(2):
            acc = 0.0
            for s in range(S):
                acc += rho[s] * dx[s, 2 * m + i]
            W[i, m] = acc
    if order < 2:
        return V, W, Dg

    # Second derivatives over all direction pairs m <= n. The curvature of
    # the policy weights only appears when both directions touch the same
    # state; the dK_m * dx_n cross terms appear for every pair.
    npair = d * (d + 1) // 2
    rhs2 = np.zeros((S, 2 * npair))
    c = 0
    for m in range(d):
        j = m // S
        t = m % S
        for n in range(m, d):
            k = n // S
            tu = n % S
            if t == tu:
                for a in range(2):
                    for b in range(2):
                        if j == k:
                            if j == 0:
                                ddwab = ddq[0, t, a] * q[1, t, b]
                            else:
                                ddwab = q[0, t, a] * ddq[1, t, b]
                        else:
                            ddwab = dq[0, t, a] * dq[1, t, b]
                        for i in range(2):
                            acc = 0.0
                            for sp in range(S):
                                acc += ddwab * P[t, a, b, sp] * x[sp, i]
                            rhs2[t, 2 * c + i] += (
                                ddwab * R[i, t, a, b] + gamma * acc
                            )
            for i in range(2):
                acc = 0.0
                for sp in range(S):
                    acc += dPpi[m, sp] * dx[sp, 2 * n + i]
                rhs2[t, 2 * c + i] += gamma * acc
                acc = 0.0
                for sp in range(S):
                    acc += dPpi[n, sp] * dx[sp, 2 * m + i]
                rhs2[tu, 2 * c + i] += gamma * acc
            c += 1
    hx = np.linalg.solve(K, rhs2)
    c = 0
    for m in range(d):
        j = m // S
        for n in range(m, d):
            k = n // S
            hm = 0.0
            hn = 0.0
            for s in range(S):
                hm += rho[s] * hx[s, 2 * c + j]
                hn += rho[s] * hx[s, 2 * c + k]
            Dg[m, n] = hm
            Dg[n, m] = hn
            c += 1
    return V, W, Dg


def self_gradient(R, P, rho, gamma, theta):
    """Stacked per-agent gradient g[m] = dV_{agent(m)}/dtheta_m."""
    S = rho.shape[0]
    d = 2 * S
    V, W, Dg = value_pipeline(R, P, rho, gamma, theta, 1)
    g = np.empty(d)
    for m in range(d):
        g[m] = W[m // S, m]
    return g


def unroll_chain(R, P, rho, gamma, theta, length, a_vec):
    """Simultaneous inner gradient chain with its input Jacobian.

    Steps phi <- phi + a_vec * g(phi) for ``length`` steps. Returns
    (X, W_L, phi_L) with X = d phi_L / d phi_0 accumulated through the
    second-derivative field and W_L the full value-gradient matrix at the
    terminal point.
    """
    S = rho.shape[0]
    d = 2 * S
    th = theta.copy()
    X = np.eye(d)
    for _ in range(length):
        V, Wl, Dgl = value_pipeline(R, P, rho, gamma, th, 2)
        g = np.empty(d)
        for m in range(d):
            g[m] = Wl[m // S, m]
        X = X + (a_vec.reshape(d, 1) * Dgl) @ X
        th = th + a_vec * g
    V, WL, Dg0 = value_pipeline(R, P, rho, gamma, th, 1)
    return X, WL, th


def corrections(R, P, rho, gamma, theta, length, a_own, a_peer):
    """Shaping field components (v, m_own, m_peer) at ``theta``.

    Each agent i unrolls its own perspective chain (own block stepped with
    a_own, peer blocks with a_peer) and splits the total derivative of its
    terminal value through phi_0^i into the path through its own future
    parameters (own-learning) and the paths through peers' future
    parameters (peer-learning). The direct path is discarded; the assembled
    update uses v at the current point instead.
    """
    S = rho.shape[0]
    d = 2 * S
    V, W, Dg0 = value_pipeline(R, P, rho, gamma, theta, 1)
    v = np.empty(d)
    for m in range(d):
        v[m] = W[m // S, m]
    m_own = np.zeros(d)
    m_peer = np.zeros(d)
    a0 = np.empty(d)
    for m in range(d):
        a0[m] = a_own if m // S == 0 else a_peer
    X0, W0, th0 = unroll_chain(R, P, rho, gamma, theta, length, a0)
    if a_own == a_peer:
        X1, W1 = X0, W0
    else:
        a1 = np.empty(d)
        for m in range(d):
            a1[m] = a_own if m // S == 1 else a_peer
        X1, W1, th1 = unroll_chain(R, P, rho, gamma, theta, length, a1)
    for i in range(2):
        XL = X0 if i == 0 else X1
        WL = W0 if i == 0 else W1
        lo = i * S
        olo = (1 - i) * S
        for nn in range(lo, lo + S):
            acc_o = 0.0
            for m in range(lo, lo + S):
                delta = 1.0 if m == nn else 0.0
                acc_o += (XL[m, nn] - delta) * WL[i, m]
            acc_p = 0.0
            for m in range(olo, olo + S):
                acc_p += XL[m, nn] * WL[i, m]
            m_own[nn] = acc_o
            m_peer[nn] = acc_p
    return v, m_own, m_peer


def run_exact(R, P, rho, gamma, theta0, arm, alphas, lams, length, a_own,
              a_peer, ckpt_steps):
    """Outer training loop under the exact assembled field.

    arm codes: 0 = pg, 1 = own_only, 2 = peer_only, 3 = meta_mapg. Returns
    (ckpt_params, ckpt_update_norms, theta_final, diverged, steps_done);
    checkpoints are captured after the step counts listed in ``ckpt_steps``
    (strictly increasing, 1-based).
    """
    d = theta0.shape[0]
    S = rho.shape[0]
    n_steps = alphas.shape[0]
    n_ck = ckpt_steps.shape[0]
    ck_params = np.zeros((n_ck, d))
    ck_norms = np.zeros(n_ck)
    th = theta0.copy()
    ci = 0
    diverged = False
    done = 0
    for n in range(n_steps):
        lam = lams[n]
        if arm == 0 or lam == 0.0:
            V, W, Dg0 = value_pipeline(R, P, rho, gamma, th, 1)
            upd = np.empty(d)
            for m in range(d):
                upd[m] = W[m // S, m]
        else:
            v, mo, mp = corrections(R, P, rho, gamma, th, length, a_own,
                                    a_peer)
            if arm == 1:
                upd = v + lam * mo
            elif arm == 2:
                upd = v + lam * mp
            else:
                upd = v + lam * (mo + mp)
        th = th + alphas[n] * upd
        done = n + 1
        ok = True
        for m in range(d):
            if not np.isfinite(th[m]):
                ok = False
        if not ok:
            diverged = True
            break
        if ci < n_ck and ckpt_steps[ci] == n + 1:
            for m in range(d):
                ck_params[ci, m] = th[m]
            ck_norms[ci] = np.sqrt(np.sum(upd * upd))
            ci += 1
    return ck_params, ck_norms, th, diverged, done


def sample_paths(p, R, P, rho, horizon, u_init, u_steps):
    """Monte Carlo trajectories under the joint Bernoulli policy.

    p: (2, S) cooperate probabilities; u_init: (B,) uniforms for the start
    state; u_steps: (B, H, 3) uniforms for (action_0, action_1, next_state).
    Action 0 is cooperate. Returns (states, actions, rewards) with shapes
    (B, H), (B, H, 2), (B, H, 2).
    """
    B = u_init.shape[0]
    S = rho.shape[0]
    states = np.zeros((B, horizon), dtype=np.int64)
    actions = np.zeros((B, horizon, 2), dtype=np.int64)
    rewards = np.zeros((B, horizon, 2))
    for b in range(B):
        acc = 0.0
        s = S - 1
        for t in range(S):
            acc += rho[t]
            if u_init[b] < acc:
                s = t
                break
        for t in range(horizon):
            a0 = 0 if u_steps[b, t, 0] < p[0, s] else 1
            a1 = 0 if u_steps[b, t, 1] < p[1, s] else 1
            states[b, t] = s
            actions[b, t, 0] = a0
            actions[b, t, 1] = a1
            rewards[b, t, 0] = R[0, s, a0, a1]
            rewards[b, t, 1] = R[1, s, a0, a1]
            acc = 0.0
            sn = S - 1
            for sp in range(S):
                acc += P[s, a0, a1, sp]
                if u_steps[b, t, 2] < acc:
                    sn = sp
                    break
            s = sn
    return states, actions, rewards


def discounted_returns(rewards, gamma):
    """Per-trajectory discounted returns from t = 0: (B, 2)."""
    B = rewards.shape[0]
    H = rewards.shape[1]
    out = np.zeros((B, 2))
    for b in range(B):
        disc = 1.0
        for t in range(H):
            out[b, 0] += disc * rewards[b, t, 0]
            out[b, 1] += disc * rewards[b, t, 1]
            disc *= gamma
    return out


def lr_gradients(states, actions, rewards, p, gamma, want_hess):
    """Likelihood-ratio estimates of the value-gradient matrix and the
    self-gradient Jacobian from one trajectory batch.

    W_hat[i, m] uses the reward-to-go form sum_t score_m(t) * G_i(t) with
    G_i(t) = sum_{u>=t} gamma^u r_{i,u}; it is unbiased for the truncated-
    horizon value gradient. Dg_hat uses the full-trajectory second-order
    form G_i * (score_m * score_n + d score_m / d theta_n), the curvature
    term being diagonal for Bernoulli-sigmoid policies. Returns
    (W_hat, Dg_hat); Dg_hat is zeros unless want_hess.
    """
    B = states.shape[0]
    H = states.shape[1]
    S = p.shape[1]
    d = 2 * S
    W_hat = np.zeros((2, d))
    Dg_hat = np.zeros((d, d))
    scores = np.empty(d)
    gtg = np.empty((H, 2))
    for b in range(B):
        # suffix discounted returns
        acc0 = 0.0
        acc1 = 0.0
        for t in range(H - 1, -1, -1):
            disc = gamma ** t
            acc0 += disc * rewards[b, t, 0]
            acc1 += disc * rewards[b, t, 1]
            gtg[t, 0] = acc0
            gtg[t, 1] = acc1
        for m in range(d):
            scores[m] = 0.0
        for t in range(H):
            s = states[b, t]
            for j in range(2):
                m = j * S + s
                sc = (1.0 - p[j, s]) if actions[b, t, j] == 0 else (-p[j, s])
                W_hat[0, m] += sc * gtg[t, 0]
                W_hat[1, m] += sc * gtg[t, 1]
                scores[m] += sc
        if want_hess:
            g0 = gtg[0, 0]
            g1 = gtg[0, 1]
            for m in range(d):
                jm = m // S
                gm = g0 if jm == 0 else g1
                for n in range(d):
                    Dg_hat[m, n] += gm * scores[m] * scores[n]
            # curvature of log pi: d score_(j,s) / d theta_(j,s) = -u per visit
            for t in range(H):
                s = states[b, t]
                for j in range(2):
                    m = j * S + s
                    gm = g0 if j == 0 else g1
                    Dg_hat[m, m] += gm * (-(p[j, s] * (1.0 - p[j, s])))
    W_hat /= B
    if want_hess:
        Dg_hat /= B
    return W_hat, Dg_hat


PY_FUNCS = {
    "value_pipeline": value_pipeline,
    "self_gradient": self_gradient,
    "unroll_chain": unroll_chain,
    "corrections": corrections,
    "run_exact": run_exact,
    "sample_paths": sample_paths,
    "discounted_returns": discounted_returns,
    "lr_gradients": lr_gradients,
}

if NUMBA_ENABLED:
    from numba import njit

    # Rebinding in dependency order: numba resolves module globals at
    # compile time, so inner calls pick up the compiled versions.
    value_pipeline = njit(cache=True)(value_pipeline)
    self_gradient = njit(cache=True)(self_gradient)
    unroll_chain = njit(cache=True)(unroll_chain)
    corrections = njit(cache=True)(corrections)
    run_exact = njit(cache=True)(run_exact)
    sample_paths = njit(cache=True)(sample_paths)
    discounted_returns = njit(cache=True)(discounted_returns)
    lr_gradients = njit(cache=True)(lr_gradients)
