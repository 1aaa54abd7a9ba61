"""Stability certificates and rollout-based synthesis of decentralized gains.

The incremental law ``u <- u - K (v - v_ref)`` acting on ``v = R p + X q + v0``
gives the error recursion ``v~ <- (I - R K^p - X K^q) v~`` on the coordinates
that carry a gain. Coordinates without a gain do not integrate anything; their
voltages follow the controlled ones, so certificates look at the sub-block of
active coordinates (and fall back to the full matrix when nothing is active,
where the radius is exactly 1).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from dcvrt.control import ControlBounds, CostWeights, GainSchedule
from dcvrt.distflow import SensitivityMatrices
from dcvrt.errors import ConfigError, NotApplicable, NumericError

SPECTRAL = "spectral"
CONVEX_REGION = "convex_region"
FD_STEP = 1e-4


@dataclass(frozen=True)
class ClosedLoopMatrix:
    """``A = I - R K^p - X K^q`` plus the coordinates whose dynamics it governs."""

    A: np.ndarray
    active: np.ndarray = None

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ConfigError("closed-loop matrix must be square")
        active = np.arange(A.shape[0]) if self.active is None else np.asarray(self.active, dtype=int)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "active", active)

    def reduced(self) -> np.ndarray:
        """Block acting on active coordinates; the full matrix if none are active."""
        if self.active.size == 0:
            return self.A
        return self.A[np.ix_(self.active, self.active)]


@dataclass(frozen=True)
class StabilityCertificate:
    spectral_radius: float
    stable: bool
    method: str

    def __post_init__(self):
        object.__setattr__(self, "spectral_radius", float(self.spectral_radius))
        object.__setattr__(self, "stable", bool(self.stable))


def _check_dims(S: SensitivityMatrices, gains: GainSchedule) -> None:
    if gains.n != S.n:
        raise ConfigError(f"gains have {gains.n} entries, network has {S.n} nodes")


def closed_loop(S: SensitivityMatrices, gains: GainSchedule) -> ClosedLoopMatrix:
    _check_dims(S, gains)
    A = np.eye(S.n) - S.R * gains.k_p[None, :] - S.X * gains.k_q[None, :]
    return ClosedLoopMatrix(A, gains.active())


def spectral_radius(M: np.ndarray) -> float:
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise NumericError("matrix has non-finite entries")
    try:
        eig = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigenvalue computation did not converge: {exc}") from None
    return float(np.max(np.abs(eig))) if eig.size else 0.0


def certify_spectral(A) -> StabilityCertificate:
    """Spectral-radius test; accepts a :class:`ClosedLoopMatrix` or a plain square array."""
    M = A.reduced() if isinstance(A, ClosedLoopMatrix) else np.asarray(A, dtype=float)
    rho = spectral_radius(M)
    return StabilityCertificate(rho, rho < 1.0, SPECTRAL)


def _combined_gain(S: SensitivityMatrices, gains: GainSchedule) -> np.ndarray:
    if S.uniform_ratio is None:
        raise NotApplicable("convex-region certificate needs a uniform r/x ratio")
    return S.uniform_ratio * gains.k_p + gains.k_q


def certify_region(S: SensitivityMatrices, gains: GainSchedule, controllable=None) -> StabilityCertificate:
    """Convex-region test ``0 < rho k^p + k^q`` and ``X^(1/2) diag(rho k^p + k^q) X^(1/2) < 2I``.

    ``controllable`` lists the coordinates that must carry a positive combined
    gain; by default those with any nonzero gain. The reported radius is that of
    the active block, read off the symmetric similar form.
    """
    _check_dims(S, gains)
    sk = _combined_gain(S, gains)
    idx = gains.active() if controllable is None else np.asarray(controllable, dtype=int)
    positive = idx.size > 0 and bool(np.all(sk[idx] > 0))
    if not positive:
        return StabilityCertificate(1.0, False, CONVEX_REGION)
    act = np.flatnonzero(sk > 0)
    root = np.sqrt(sk[act])
    Msym = root[:, None] * S.X[np.ix_(act, act)] * root[None, :]
    try:
        lam = np.linalg.eigvalsh(0.5 * (Msym + Msym.T))
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"symmetric eigen-solve did not converge: {exc}") from None
    below = bool(lam.max() < 2.0)
    radius = float(np.max(np.abs(1.0 - lam)))
    return StabilityCertificate(radius, below and lam.min() > 0, CONVEX_REGION)


def certify(S: SensitivityMatrices, gains: GainSchedule, controllable=None) -> StabilityCertificate:
    """Convex-region test when the ratio is uniform, spectral test otherwise."""
    if S.uniform_ratio is not None:
        return certify_region(S, gains, controllable)
    cert = certify_spectral(closed_loop(S, gains))
    if controllable is not None:
        sk = gains.k_p + gains.k_q
        if np.any(sk[np.asarray(controllable, dtype=int)] <= 0):
            return StabilityCertificate(cert.spectral_radius, False, SPECTRAL)
    return cert


def eigen_similarity_check(S: SensitivityMatrices, gains: GainSchedule) -> float:
    """Largest gap between sorted eigenvalues of ``I - X S_k`` and ``I - S_k^(1/2) X S_k^(1/2)``."""
    _check_dims(S, gains)
    sk = _combined_gain(S, gains)
    if np.any(sk < 0):
        raise ConfigError("combined gain must be nonnegative")
    n = S.n
    general = np.linalg.eigvals(np.eye(n) - S.X * sk[None, :])
    if np.max(np.abs(general.imag), initial=0.0) > 1e-9:
        raise NumericError("similar form has complex eigenvalues")
    root = np.sqrt(sk)
    sym = np.eye(n) - root[:, None] * S.X * root[None, :]
    # diagonal written without the sqrt round trip so diagonal X compares exactly
    sym[np.diag_indices(n)] = 1.0 - np.diag(S.X) * sk
    lam_sym = np.linalg.eigvalsh(0.5 * (sym + sym.T))
    return float(np.max(np.abs(np.sort(general.real) - np.sort(lam_sym)), initial=0.0))


def coupled_sensitivity(S: SensitivityMatrices, g_p: float, g_q: float) -> SensitivityMatrices:
    """Add the linearized PCC response ``dv0 = g_p sum(p) + g_q sum(q)`` to every node."""
    ones = np.ones((S.n, S.n))
    R = np.array(S.R) + g_p * ones
    X = np.array(S.X) + g_q * ones
    ratio = None
    if S.uniform_ratio is not None and np.isclose(g_p, S.uniform_ratio * g_q, rtol=1e-12, atol=0.0):
        ratio = S.uniform_ratio
    return SensitivityMatrices(R, X, ratio)


# ---------------------------------------------------------------------------
# rollout cost and gradient descent


@dataclass
class LinearRollout:
    """Cost of running the incremental law for ``steps`` updates against a linear plant.

    ``v_open`` is the open-loop voltage (vector, or one row per step) seen with
    zero control deviation; the plant adds ``R dp + X dq``. The cost sums
    ``v~' Q_v v~ + dq' W_q dq + dp' W_p dp`` over steps ``0..steps-1``, with
    deviations measured from the starting point. Bounds, if given, apply to the
    deviations.
    """

    S: SensitivityMatrices
    v_open: np.ndarray
    weights: CostWeights
    steps: int
    v_ref: float = 1.0
    bounds: Optional[ControlBounds] = None

    def __post_init__(self):
        self.v_open = np.asarray(self.v_open, dtype=float)
        if self.steps < 1:
            raise ConfigError("rollout needs at least one step")
        if self.v_open.shape[-1] != self.S.n:
            raise ConfigError("open-loop voltage has the wrong length")
        if self.v_open.ndim == 2 and self.v_open.shape[0] < self.steps:
            raise ConfigError("open-loop voltage sequence shorter than the rollout")

    def _v_open(self, t: int) -> np.ndarray:
        return self.v_open if self.v_open.ndim == 1 else self.v_open[t]

    def trajectory(self, k_p, k_q) -> tuple:
        """Voltage errors, real and reactive deviations, each ``(steps, n)``."""
        n = self.S.n
        k_p = np.asarray(k_p, dtype=float)
        k_q = np.asarray(k_q, dtype=float)
        dp = np.zeros(n)
        dq = np.zeros(n)
        V = np.empty((self.steps, n))
        DP = np.empty((self.steps, n))
        DQ = np.empty((self.steps, n))
        R, X = self.S.R, self.S.X
        for t in range(self.steps):
            err = self._v_open(t) + R @ dp + X @ dq - self.v_ref
            V[t], DP[t], DQ[t] = err, dp, dq
            dp = dp - k_p * err
            dq = dq - k_q * err
            if self.bounds is not None:
                dp, dq = self.bounds.clip(dp, dq)
        return V, DP, DQ

    def cost_arrays(self, k_p, k_q) -> float:
        V, DP, DQ = self.trajectory(k_p, k_q)
        w = self.weights
        return float(np.einsum("ti,ij,tj->", V, w.Q_v, V) + np.einsum("ti,ij,tj->", DQ, w.W_q, DQ)
                     + np.einsum("ti,ij,tj->", DP, w.W_p, DP))

    def __call__(self, gains: GainSchedule) -> float:
        return self.cost_arrays(gains.k_p, gains.k_q)


def _flatten(gains: GainSchedule, coords: np.ndarray) -> np.ndarray:
    return np.concatenate([gains.k_p, gains.k_q])[coords]


def _rebuild(base: GainSchedule, coords: np.ndarray, theta: np.ndarray) -> GainSchedule:
    full = np.concatenate([base.k_p, base.k_q])
    full[coords] = theta
    n = base.n
    return GainSchedule(full[:n], full[n:], base.v_ref)


def fd_gradient(cost: Callable, gains: GainSchedule, coords=None, h: float = FD_STEP) -> np.ndarray:
    """Central finite differences over the stacked ``[k_p, k_q]`` coordinates in ``coords``.

    Coordinates closer than ``h`` to zero use a forward difference so no gain
    turns negative.
    """
    coords = _default_coords(gains) if coords is None else np.asarray(coords, dtype=int)
    theta = _flatten(gains, coords)
    grad = np.empty(coords.size)
    for j in range(coords.size):
        up = theta.copy()
        up[j] += h
        f_up = cost(_rebuild(gains, coords, up))
        if theta[j] >= h:
            dn = theta.copy()
            dn[j] -= h
            grad[j] = (f_up - cost(_rebuild(gains, coords, dn))) / (2 * h)
        else:
            grad[j] = (f_up - cost(_rebuild(gains, coords, theta))) / h
    return grad


def _default_coords(gains: GainSchedule) -> np.ndarray:
    return np.flatnonzero(np.concatenate([gains.k_p, gains.k_q]) > 0)


@dataclass
class SynthResult:
    gains: GainSchedule
    costs: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    certificates: list = field(default_factory=list)
    message: str = ""


def optimize_gains(S: SensitivityMatrices, evaluator: Callable, init: GainSchedule,
                   learning_rate: float = 1e-3, max_iter: int = 100, h: float = FD_STEP,
                   grad_tol: float = 1e-8, ftol: float = 1e-10, certify_on: Sequence = (),
                   controllable=None, coords=None, max_halvings: int = 40) -> SynthResult:
    """Projected gradient descent on the rollout cost, kept inside the stable set by backtracking.

    Every accepted iterate certifies stable on ``S`` and on each extra matrix set
    in ``certify_on`` (for example the grid-coupled plant), and lowers the cost.
    Stops when the gradient norm drops below ``grad_tol`` or the relative
    improvement below ``ftol``; otherwise the best iterate is returned with
    ``converged=False`` and a :class:`RuntimeWarning`.
    """
    targets = [S, *certify_on]

    def certs(g):
        return [certify(T, g, controllable) for T in targets]

    start = certs(init)
    if not all(c.stable for c in start):
        raise ConfigError("initial gains are not certified stable")
    coords = _default_coords(init) if coords is None else np.asarray(coords, dtype=int)
    gains = init
    cost = evaluator(gains)
    result = SynthResult(gains, [cost], False, 0, start)
    if coords.size == 0:
        result.converged = True
        result.message = "no free coordinates"
        return result
    alpha = learning_rate
    for it in range(1, max_iter + 1):
        grad = fd_gradient(evaluator, gains, coords, h)
        if not np.all(np.isfinite(grad)):
            raise NumericError("non-finite rollout gradient")
        if np.linalg.norm(grad) < grad_tol:
            result.converged = True
            result.message = "gradient below tolerance"
            break
        theta = _flatten(gains, coords)
        accepted = False
        for _ in range(max_halvings):
            cand = _rebuild(gains, coords, np.maximum(theta - alpha * grad, 0.0))
            cand_certs = certs(cand)
            if all(c.stable for c in cand_certs):
                cand_cost = evaluator(cand)
                if cand_cost < cost:
                    accepted = True
                    break
            alpha *= 0.5
        result.iterations = it
        if not accepted:
            result.message = "no descent step found"
            break
        improvement = (cost - cand_cost) / max(abs(cost), 1e-300)
        gains, cost = cand, cand_cost
        result.gains, result.certificates = gains, cand_certs
        result.costs.append(cost)
        alpha *= 2.0
        if improvement < ftol:
            result.converged = True
            result.message = "relative improvement below tolerance"
            break
    else:
        result.message = "iteration limit reached"
    if not result.converged:
        warnings.warn(f"gain synthesis stopped early: {result.message}", RuntimeWarning, stacklevel=2)
    return result


# ---------------------------------------------------------------------------
# scenario plumbing

SYNTH_DEFAULTS = {"steps": 200, "learning_rate": 1e-3, "max_iter": 100, "ftol": 1e-6, "init_gain": 0.005,
                  "grid_coupling": True}


@dataclass
class SynthesisProblem:
    """Everything :func:`optimize_gains` needs for one scenario."""

    S: SensitivityMatrices
    plant: SensitivityMatrices
    evaluator: LinearRollout
    init: GainSchedule
    controllable: np.ndarray
    options: dict


def synthesis_problem(scenario) -> SynthesisProblem:
    """Rollout of the post-fault sag seen from the scenario's starting point.

    The grid is linearized at its final scripted state with the nominal load at
    t = 0; the plant seen by the rollout adds that PCC response to every node
    when ``grid_coupling`` is on. The optional document section ``synthesis``
    overrides :data:`SYNTH_DEFAULTS` and may carry its own ``weights``.
    """
    from dcvrt.extgrid import TheveninGrid, grid_sensitivity, pcc_voltage
    from dcvrt.scenario import weights_from_dict

    opts = dict(SYNTH_DEFAULTS)
    opts.update(scenario.document.get("synthesis", {}))
    S = scenario.sensitivity()
    fleet = scenario.fleet(scenario.build_workload())
    p_nom, q_nom = fleet.nominal(0.0)
    bounds = fleet.bounds(0.0, p_nom)
    P_load, Q_load = -float(np.sum(p_nom)), -float(np.sum(q_nom))

    grid = scenario.build_grid()
    g_p = g_q = 0.0
    if isinstance(grid, TheveninGrid):
        state = grid.state
        for ev in grid.events:
            if ev.kind == "set_emf_setpoint":
                state = type(state)(state.E, ev.value, state.X_th, state.tau)
            else:
                state = type(state)(state.E, state.E_set, ev.value, state.tau)
        E, X_th = state.E_set, state.X_th
        v0 = pcc_voltage(E, X_th, P_load, Q_load)
        if opts["grid_coupling"]:
            g_p, g_q = grid_sensitivity(E, X_th, P_load, Q_load)
    else:
        v0 = float(np.min(grid.source.values))
    plant = coupled_sensitivity(S, g_p, g_q) if (g_p or g_q) else S
    v_open = v0 + S.R @ p_nom + S.X @ q_nom

    weights = scenario.weights()
    if "weights" in opts:
        weights = weights_from_dict(opts["weights"], scenario)
    dev_bounds = ControlBounds(bounds.p_min - p_nom, bounds.p_max - p_nom,
                               bounds.q_min - q_nom, bounds.q_max - q_nom)
    evaluator = LinearRollout(plant, v_open, weights, int(opts["steps"]), 1.0, dev_bounds)

    free_p = bounds.p_max > bounds.p_min
    free_q = bounds.q_max > bounds.q_min
    if scenario.controller.reactive_only:
        free_p = np.zeros_like(free_p)
    k0 = float(opts["init_gain"])
    init = GainSchedule(np.where(free_p, k0, 0.0), np.where(free_q, k0, 0.0))
    controllable = np.flatnonzero(free_p | free_q)
    return SynthesisProblem(S, plant, evaluator, init, controllable, opts)


def synthesize(scenario, init: Optional[GainSchedule] = None) -> SynthResult:
    """Optimize decentralized gains for ``scenario``; certified on the network and the coupled plant."""
    prob = synthesis_problem(scenario)
    start = prob.init if init is None else init
    extra = [prob.plant] if prob.plant is not prob.S else []
    return optimize_gains(prob.S, prob.evaluator, start, learning_rate=float(prob.options["learning_rate"]),
                          max_iter=int(prob.options["max_iter"]), ftol=float(prob.options["ftol"]),
                          certify_on=extra,
                          controllable=prob.controllable)
