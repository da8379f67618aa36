"""Forward-mode differentiation with nestable dual numbers.

A :class:`Dual` carries a primal and a single tangent slot, one active
direction per forward pass; gradients and Jacobians loop over input
directions (parameter dimension is at most 10 here, so passes are cheap).
Passes nest: each ``grad``/``jacobian`` call opens a fresh level above the
highest level present in its inputs, which keeps simultaneous perturbations
unambiguous without global state. Nesting is capped at ``MAX_NESTING`` = 3
(value -> gradient -> gradient-of-gradient -> one more derivative for
Jacobians of curvature-consuming maps); deeper requests raise
:class:`NestingLimitError` rather than risk a silent mis-evaluation.

Functions passed to the operators must be built from smooth primitives:
``+ - * / **``, ``exp``, ``log``, ``sqrt``, ``sigmoid`` and linear solves
via :func:`solve`. Non-smooth operations (``abs``, comparisons, rounding)
raise :class:`UnsupportedPrimitiveError`.

Closures: a differentiated function must receive every active Dual through
its argument vector. Capturing an active seed from an enclosing pass while
differentiating plain floats would reuse its level; do not do that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MAX_NESTING = 3


class UnsupportedPrimitiveError(TypeError):
    """A non-smooth primitive was applied to a dual number."""


class NestingLimitError(RuntimeError):
    """More than MAX_NESTING simultaneous differentiation levels requested."""


def _level(x) -> int:
    return x.lvl if isinstance(x, Dual) else 0


def _split(x, lvl):
    """(primal, tangent) of x with respect to level ``lvl``."""
    if isinstance(x, Dual) and x.lvl == lvl:
        return x.re, x.ep
    return x, 0.0


class Dual:
    """Dual number ``re + ep * eps_lvl`` at nesting level ``lvl``.

    ``re`` and ``ep`` are floats or lower-level Duals. Arithmetic follows
    the product/chain rules exactly; constants carry a zero tangent.
    """

    __slots__ = ("lvl", "re", "ep")

    def __init__(self, lvl, re, ep=0.0):
        self.lvl = lvl
        self.re = re
        self.ep = ep

    def __repr__(self):
        return f"Dual(lvl={self.lvl}, re={self.re!r}, ep={self.ep!r})"

    def _pair(self, other):
        lvl = max(self.lvl, _level(other))
        a, da = _split(self, lvl)
        b, db = _split(other, lvl)
        return lvl, a, da, b, db

    def __add__(self, other):
        lvl, a, da, b, db = self._pair(other)
        return Dual(lvl, a + b, da + db)

    __radd__ = __add__

    def __sub__(self, other):
        lvl, a, da, b, db = self._pair(other)
        return Dual(lvl, a - b, da - db)

    def __rsub__(self, other):
        lvl, a, da, b, db = self._pair(other)
        return Dual(lvl, b - a, db - da)

    def __mul__(self, other):
        lvl, a, da, b, db = self._pair(other)
        return Dual(lvl, a * b, a * db + b * da)

    __rmul__ = __mul__

    def __truediv__(self, other):
        lvl, a, da, b, db = self._pair(other)
        inv = 1.0 / b
        return Dual(lvl, a * inv, (da - a * inv * db) * inv)

    def __rtruediv__(self, other):
        lvl, a, da, b, db = self._pair(other)
        inv = 1.0 / a
        return Dual(lvl, b * inv, (db - b * inv * da) * inv)

    def __neg__(self):
        return Dual(self.lvl, -self.re, -self.ep)

    def __pow__(self, n):
        if not isinstance(n, (int, float)):
            raise UnsupportedPrimitiveError(
                "dual ** dual is not a supported primitive; use exp/log"
            )
        return Dual(self.lvl, self.re ** n, n * self.re ** (n - 1) * self.ep)

    def __abs__(self):
        raise UnsupportedPrimitiveError(
            "abs() is not differentiable; smooth primitives only"
        )

    def __lt__(self, other):
        raise UnsupportedPrimitiveError(
            "comparisons on dual numbers are not supported; compare primal()"
        )

    __le__ = __gt__ = __ge__ = __lt__

    # method forms so np.exp / np.log / np.sqrt work on object arrays
    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)


def primal(x):
    """Fully unwrapped primal value of a float or (nested) Dual."""
    while isinstance(x, Dual):
        x = x.re
    return float(x)


def exp(x):
    if isinstance(x, Dual):
        e = exp(x.re)
        return Dual(x.lvl, e, e * x.ep)
    return math.exp(x)


def log(x):
    if isinstance(x, Dual):
        return Dual(x.lvl, log(x.re), x.ep / x.re)
    return math.log(x)


def sqrt(x):
    if isinstance(x, Dual):
        s = sqrt(x.re)
        return Dual(x.lvl, s, x.ep / (2.0 * s))
    return math.sqrt(x)


def sigmoid(x):
    if isinstance(x, Dual):
        s = sigmoid(x.re)
        return Dual(x.lvl, s, s * (1.0 - s) * x.ep)
    return 0.5 * (math.tanh(0.5 * x) + 1.0)


def _entry_levels(obj):
    if isinstance(obj, Dual):
        yield obj.lvl
    elif isinstance(obj, np.ndarray):
        for v in obj.flat:
            yield _level(v)
    else:
        for v in obj:
            yield _level(v)


# Highest level currently being evaluated. Opening above both this counter
# and any level visible in the inputs keeps simultaneous perturbations
# distinct even when an enclosing pass's seeds reach the inner function
# through a closure rather than its argument vector. Plain module state:
# passes on one thread nest; cross-process parallelism is unaffected.
_active_level = 0


def _open_level(*containers) -> int:
    lvl = 1 + max(_active_level,
                  max((l for c in containers for l in _entry_levels(c)),
                      default=0))
    if lvl > MAX_NESTING:
        raise NestingLimitError(
            f"differentiation nesting depth {lvl} exceeds the supported "
            f"maximum of {MAX_NESTING}"
        )
    return lvl


def _tangent(y, lvl):
    if isinstance(y, Dual) and y.lvl == lvl:
        return y.ep
    return 0.0


def _as_output_array(values):
    if all(isinstance(v, float) for v in values):
        return np.array(values, dtype=float)
    out = np.empty(len(values), dtype=object)
    for i, v in enumerate(values):
        out[i] = v
    return out


def grad(f, at):
    """Gradient of a scalar map by one forward pass per input direction.

    ``at`` is a 1-d sequence of floats (or Duals, when nested). Matches
    central finite differences on smooth inputs up to float precision.
    """
    global _active_level
    xs = list(at)
    n = len(xs)
    lvl = _open_level(xs)
    prev, _active_level = _active_level, lvl
    try:
        out = []
        for j in range(n):
            seeded = np.empty(n, dtype=object)
            for i in range(n):
                seeded[i] = xs[i]
            seeded[j] = Dual(lvl, xs[j], 1.0)
            y = f(seeded)
            t = _tangent(y, lvl)
            out.append(float(t) if isinstance(t, (int, float)) else t)
    finally:
        _active_level = prev
    return _as_output_array(out)


@dataclass
class JacobianMatrix:
    """Dense Jacobian with rows = outputs, cols = inputs."""

    entries: np.ndarray
    out_labels: tuple = ()
    in_labels: tuple = ()

    @property
    def shape(self):
        return self.entries.shape

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def __getitem__(self, ix):
        return self.entries[ix]


def jacobian(f, at, out_labels=(), in_labels=()):
    """Jacobian of a vector map, one forward pass per input direction."""
    global _active_level
    xs = list(at)
    n = len(xs)
    lvl = _open_level(xs)
    prev, _active_level = _active_level, lvl
    try:
        cols = []
        for j in range(n):
            seeded = np.empty(n, dtype=object)
            for i in range(n):
                seeded[i] = xs[i]
            seeded[j] = Dual(lvl, xs[j], 1.0)
            y = f(seeded)
            col = [_tangent(v, lvl) for v in y]
            cols.append(col)
    finally:
        _active_level = prev
    m = len(cols[0])
    flat = [cols[j][i] for i in range(m) for j in range(n)]
    if all(isinstance(v, (int, float)) for v in flat):
        entries = np.array(flat, dtype=float).reshape(m, n)
    else:
        entries = np.empty((m, n), dtype=object)
        for i in range(m):
            for j in range(n):
                entries[i, j] = cols[j][i]
    return JacobianMatrix(entries, tuple(out_labels), tuple(in_labels))


def second_order_grad(f, at):
    """Hessian of a scalar map by forward-over-forward nesting.

    Top-level use only (it returns plain floats); for derivatives of
    gradient-valued maps inside another pass, compose grad/jacobian.
    """
    global _active_level
    xs = list(at)
    n = len(xs)
    outer = _open_level(xs)
    if outer != 1:
        raise NestingLimitError(
            "second_order_grad does not nest inside another pass; "
            "compose grad and jacobian instead"
        )
    H = np.empty((n, n), dtype=float)
    prev, _active_level = _active_level, outer
    try:
        for j in range(n):
            seeded = [Dual(outer, xs[j], 1.0) if i == j else xs[i]
                      for i in range(n)]
            gcol = grad(f, seeded)
            for i in range(n):
                H[i, j] = primal_or_zero(_tangent_entry(gcol[i], outer))
    finally:
        _active_level = prev
    return H


def _tangent_entry(v, lvl):
    return _tangent(v, lvl)


def primal_or_zero(x):
    if isinstance(x, Dual):
        return primal(x)
    return float(x)


def mat_vec(A, x):
    """Object-safe matrix-vector product (duals allowed in either factor)."""
    A = np.asarray(A)
    m, n = A.shape
    out = np.empty(m, dtype=object)
    for i in range(m):
        acc = A[i, 0] * x[0]
        for j in range(1, n):
            acc = acc + A[i, j] * x[j]
        out[i] = acc
    return out


def solve(A, b):
    """Solve A X = b where entries may be dual numbers.

    Differentiates the solve through the identity
    d(A^-1 b) = A^-1 (db - dA . A^-1 b), applied recursively per nesting
    level; the float base case is a LAPACK solve.
    """
    A = np.asarray(A, dtype=object)
    b = np.asarray(b, dtype=object)
    vec = b.ndim == 1
    B = b.reshape(-1, 1) if vec else b
    lvl = max(
        max((_level(v) for v in A.flat), default=0),
        max((_level(v) for v in B.flat), default=0),
    )
    if lvl == 0:
        X = np.linalg.solve(A.astype(float), B.astype(float))
        out = X.astype(object)
        return out[:, 0] if vec else out

    n, k = B.shape
    A_re = np.empty((n, n), dtype=object)
    A_ep = np.empty((n, n), dtype=object)
    for i in range(n):
        for j in range(n):
            A_re[i, j], A_ep[i, j] = _split(A[i, j], lvl)
    B_re = np.empty((n, k), dtype=object)
    B_ep = np.empty((n, k), dtype=object)
    for i in range(n):
        for j in range(k):
            B_re[i, j], B_ep[i, j] = _split(B[i, j], lvl)

    X = solve(A_re, B_re)
    rhs = np.empty((n, k), dtype=object)
    for i in range(n):
        for j in range(k):
            acc = B_ep[i, j]
            for t in range(n):
                acc = acc - A_ep[i, t] * X[t, j]
            rhs[i, j] = acc
    T = solve(A_re, rhs)
    out = np.empty((n, k), dtype=object)
    for i in range(n):
        for j in range(k):
            out[i, j] = Dual(lvl, X[i, j], T[i, j])
    return out[:, 0] if vec else out
