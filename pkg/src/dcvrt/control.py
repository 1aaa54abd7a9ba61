"""Per-step voltage controllers, device bounds and actuation delay."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.optimize import lsq_linear

from dcvrt.distflow import SensitivityMatrices
from dcvrt.errors import ConfigError, NumericError

KKT_TOL = 1e-8
_TIME_EPS = 1e-9


def _vec(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ControlBounds:
    p_min: np.ndarray
    p_max: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray

    def __post_init__(self):
        for name in ("p_min", "p_max", "q_min", "q_max"):
            object.__setattr__(self, name, _vec(getattr(self, name)))
        n = self.p_min.shape
        if any(getattr(self, k).shape != n for k in ("p_max", "q_min", "q_max")):
            raise ConfigError("bound vectors must share one length")
        if np.any(self.p_min > self.p_max) or np.any(self.q_min > self.q_max):
            raise ConfigError("infeasible bounds: min exceeds max")

    @property
    def n(self) -> int:
        return self.p_min.shape[0]

    @classmethod
    def unbounded(cls, n: int) -> "ControlBounds":
        inf = np.full(n, np.inf)
        return cls(-inf, inf, -inf, inf)

    def clip(self, p, q) -> tuple:
        return np.clip(p, self.p_min, self.p_max), np.clip(q, self.q_min, self.q_max)

    def contains(self, p, q, atol=0.0) -> bool:
        return bool(np.all(p >= self.p_min - atol) and np.all(p <= self.p_max + atol)
                    and np.all(q >= self.q_min - atol) and np.all(q <= self.q_max + atol))


@dataclass(frozen=True)
class CostWeights:
    Q_v: np.ndarray
    W_q: np.ndarray
    W_p: np.ndarray

    def __post_init__(self):
        for name in ("Q_v", "W_q", "W_p"):
            M = np.atleast_2d(np.array(getattr(self, name), dtype=float))
            if M.shape[0] != M.shape[1]:
                raise ConfigError(f"{name} must be square")
            if not np.allclose(M, M.T, atol=1e-12):
                raise ConfigError(f"{name} must be symmetric")
            eigs = np.linalg.eigvalsh(M)
            if eigs.min() < -1e-12 * max(1.0, abs(eigs).max()):
                raise ConfigError(f"{name} is not positive semidefinite")
            M.setflags(write=False)
            object.__setattr__(self, name, M)

    @classmethod
    def diagonal(cls, q_v, w_q, w_p, n: Optional[int] = None) -> "CostWeights":
        """Diagonal weights from scalars or per-node vectors."""
        if n is None:
            n = max(np.size(q_v), np.size(w_q), np.size(w_p))
        mk = lambda w: np.diag(np.broadcast_to(np.asarray(w, dtype=float), (n,)).copy())
        return cls(mk(q_v), mk(w_q), mk(w_p))


@dataclass(frozen=True)
class ControlAction:
    p: np.ndarray
    q: np.ndarray
    issued_at: float = 0.0
    effective_at: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "p", _vec(self.p))
        object.__setattr__(self, "q", _vec(self.q))
        if self.effective_at is None:
            object.__setattr__(self, "effective_at", self.issued_at)


@dataclass(frozen=True)
class GainSchedule:
    k_p: np.ndarray
    k_q: np.ndarray
    v_ref: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "k_p", _vec(self.k_p))
        object.__setattr__(self, "k_q", _vec(self.k_q))
        if self.k_p.shape != self.k_q.shape:
            raise ConfigError("k_p and k_q must have the same length")
        if np.any(self.k_p < 0) or np.any(self.k_q < 0):
            raise ConfigError("gains must be nonnegative")

    @property
    def n(self) -> int:
        return self.k_p.shape[0]

    @classmethod
    def zeros(cls, n: int, v_ref: float = 1.0) -> "GainSchedule":
        return cls(np.zeros(n), np.zeros(n), v_ref)

    def active(self) -> np.ndarray:
        """Indices of nodes that carry a nonzero gain."""
        return np.flatnonzero((self.k_p > 0) | (self.k_q > 0))

    def masked(self, bounds: ControlBounds) -> "GainSchedule":
        """Zero the gains on coordinates the bounds pin to a single value."""
        kp = np.where(bounds.p_max > bounds.p_min, self.k_p, 0.0)
        kq = np.where(bounds.q_max > bounds.q_min, self.k_q, 0.0)
        return replace(self, k_p=kp, k_q=kq)


# ---------------------------------------------------------------------------
# centralized controller


def qp_objective(S: SensitivityMatrices, v0, v_ref, weights: CostWeights, p, q, p_ref=None, q_ref=None) -> float:
    vt = S.R @ p + S.X @ q + (v0 - v_ref)
    dp = p if p_ref is None else p - p_ref
    dq = q if q_ref is None else q - q_ref
    return float(vt @ weights.Q_v @ vt + dq @ weights.W_q @ dq + dp @ weights.W_p @ dp)


def qp_gradient(S, v0, v_ref, weights, p, q, p_ref=None, q_ref=None) -> tuple:
    vt = S.R @ p + S.X @ q + (v0 - v_ref)
    dp = p if p_ref is None else p - p_ref
    dq = q if q_ref is None else q - q_ref
    Qv = weights.Q_v @ vt
    return 2.0 * (S.R.T @ Qv + weights.W_p @ dp), 2.0 * (S.X.T @ Qv + weights.W_q @ dq)


def kkt_residual(S, v0, v_ref, bounds: ControlBounds, weights, p, q, p_ref=None, q_ref=None) -> float:
    """Norm of the projected gradient ``z - clip(z - grad)``; zero exactly at a box-QP optimum."""
    gp, gq = qp_gradient(S, v0, v_ref, weights, p, q, p_ref, q_ref)
    rp = p - np.clip(p - gp, bounds.p_min, bounds.p_max)
    rq = q - np.clip(q - gq, bounds.q_min, bounds.q_max)
    return float(np.sqrt(rp @ rp + rq @ rq))


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(M)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def centralized_step(S: SensitivityMatrices, v0: float, v_ref: float, bounds: ControlBounds,
                     weights: CostWeights, p_ref=None, q_ref=None, t: float = 0.0) -> ControlAction:
    """Box-constrained quadratic dispatch for one time step.

    Minimizes ``v~' Q_v v~ + (q - q_ref)' W_q (q - q_ref) + (p - p_ref)' W_p (p - p_ref)``
    with ``v~ = R p + X q + (v0 - v_ref) 1`` over the bound box. ``p_ref`` and
    ``q_ref`` default to zero.

    The problem is rewritten as a bounded least-squares problem and solved with
    BVLS; the result is accepted only if its projected-gradient norm is below
    ``KKT_TOL``.
    """
    n = S.n
    if bounds.n != n or weights.Q_v.shape[0] != n:
        raise ConfigError("dimension mismatch between network, bounds and weights")
    p_ref = np.zeros(n) if p_ref is None else np.asarray(p_ref, dtype=float)
    q_ref = np.zeros(n) if q_ref is None else np.asarray(q_ref, dtype=float)

    lo = np.concatenate([bounds.p_min, bounds.q_min])
    hi = np.concatenate([bounds.p_max, bounds.q_max])
    G = np.hstack([S.R, S.X])
    zref = np.concatenate([p_ref, q_ref])
    W = np.zeros((2 * n, 2 * n))
    W[:n, :n] = weights.W_p
    W[n:, n:] = weights.W_q

    fixed = hi <= lo
    free = ~fixed
    z = np.where(fixed, lo, 0.0)
    if free.any():
        Lq = _psd_sqrt(weights.Q_v)
        Lw = _psd_sqrt(W)
        offset = np.full(n, v0 - v_ref) + G[:, fixed] @ z[fixed]
        A = np.vstack([Lq @ G[:, free], Lw[:, free]])
        b = -np.concatenate([Lq @ offset, Lw[:, fixed] @ z[fixed] - Lw @ zref])
        # drop identically-zero rows (e.g. unweighted coordinates); BVLS needs a nonempty system
        keep = np.any(A != 0.0, axis=1)
        if keep.any():
            sol = lsq_linear(A[keep], b[keep], bounds=(lo[free], hi[free]), method="bvls", tol=1e-14)
            z[free] = np.clip(sol.x, lo[free], hi[free])
        else:
            z[free] = np.clip(0.0, lo[free], hi[free])

    p, q = z[:n], z[n:]
    res = kkt_residual(S, v0, v_ref, bounds, weights, p, q, p_ref, q_ref)
    if res > KKT_TOL:
        p, q = _polish(S, v0, v_ref, bounds, weights, p, q, p_ref, q_ref)
        res = kkt_residual(S, v0, v_ref, bounds, weights, p, q, p_ref, q_ref)
        if res > KKT_TOL:
            raise NumericError(f"centralized QP did not converge (KKT residual {res:.2e})")
    return ControlAction(p, q, issued_at=t)


def _polish(S, v0, v_ref, bounds, weights, p, q, p_ref, q_ref, iters=50):
    """Fix the active set suggested by the gradient and re-solve the free part exactly."""
    n = S.n
    G = np.hstack([S.R, S.X])
    H = np.zeros((2 * n, 2 * n))
    H[:n, :n] = weights.W_p
    H[n:, n:] = weights.W_q
    H += G.T @ weights.Q_v @ G
    c = G.T @ weights.Q_v @ np.full(n, v0 - v_ref) - np.concatenate([weights.W_p @ p_ref, weights.W_q @ q_ref])
    lo = np.concatenate([bounds.p_min, bounds.q_min])
    hi = np.concatenate([bounds.p_max, bounds.q_max])
    z = np.concatenate([p, q])
    for _ in range(iters):
        g = H @ z + c
        at_lo = (z <= lo) & (g > 0)
        at_hi = (z >= hi) & (g < 0)
        free = ~(at_lo | at_hi | (hi <= lo))
        if not free.any():
            break
        rhs = -(c[free] + H[np.ix_(free, ~free)] @ z[~free])
        z_new = z.copy()
        z_new[free] = np.linalg.lstsq(H[np.ix_(free, free)], rhs, rcond=None)[0]
        z_new = np.clip(z_new, lo, hi)
        if np.allclose(z_new, z, atol=1e-15, rtol=0):
            break
        z = z_new
    return z[:n], z[n:]


# ---------------------------------------------------------------------------
# decentralized controller


def decentralized_step(gains: GainSchedule, prev: ControlAction, v_measured, bounds: ControlBounds,
                       t: Optional[float] = None) -> ControlAction:
    """Incremental local feedback ``u_i <- clip(u_i - k_i (v_i - v_ref))``.

    The clipped value is what gets stored, so the integrator cannot wind up.
    """
    dev = np.asarray(v_measured, dtype=float) - gains.v_ref
    p, q = bounds.clip(prev.p - gains.k_p * dev, prev.q - gains.k_q * dev)
    return ControlAction(p, q, issued_at=prev.issued_at if t is None else t)


def voltvar_restrict(bounds: ControlBounds, nominal_p) -> ControlBounds:
    """Freeze real power at ``nominal_p``; reactive bounds pass through."""
    nominal_p = np.asarray(nominal_p, dtype=float)
    return ControlBounds(nominal_p, nominal_p, bounds.q_min, bounds.q_max)


# ---------------------------------------------------------------------------
# actuation delay


class DelayLine:
    """FIFO of issued actions; each takes effect ``latency`` seconds after issue.

    ``initial`` is what :func:`delay_apply` returns before the first action matures.
    """

    def __init__(self, latency: float, initial: ControlAction):
        if latency < 0:
            raise ConfigError("latency must be >= 0")
        self.latency = float(latency)
        self.pending = deque()
        self.current = initial

    def push(self, action: ControlAction) -> ControlAction:
        if self.pending and action.issued_at < self.pending[-1].issued_at:
            raise ConfigError("actions must be issued in time order")
        action = replace(action, effective_at=action.issued_at + self.latency)
        self.pending.append(action)
        return action

    def reset(self, action: ControlAction) -> None:
        self.pending.clear()
        self.current = action


def delay_apply(line: DelayLine, now: float) -> ControlAction:
    """Most recent action with ``effective_at <= now`` (held until superseded)."""
    while line.pending and line.pending[0].effective_at <= now + _TIME_EPS:
        line.current = line.pending.popleft()
    return line.current
