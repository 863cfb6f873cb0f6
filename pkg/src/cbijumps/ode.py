"""Riccati-type ODE systems for the Laplace exponents and their long-time limits.

Three right-hand sides are supported:

* ``V``:        v' = -phi(v),               v(0) = lam
* ``VTILDE``:   v~' = lam~ - phi(v~),       v~(0) = 0
* ``VTILDE_A``: v~' = mu(A) - phi^(A)(v~),  v~(0) = 0

The integrator is an explicit Dormand-Prince 5(4) pair with max-norm error
control and its 4th order continuous extension for dense output.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, replace

import numpy as np

from ._validation import as_nonneg_vector, check_time
from .mechanisms import Mechanism, ModifiedMechanism


class OdeFailure(RuntimeError):
    """Integration could not proceed; ``last_time`` is the last accepted time."""

    def __init__(self, msg: str, last_time: float):
        super().__init__(f"{msg} (last valid time {last_time:.6g})")
        self.last_time = last_time


class RhsKind(enum.Enum):
    V = "V"
    VTILDE = "VTILDE"
    VTILDE_A = "VTILDE_A"


@dataclass(frozen=True)
class OdeControl:
    """Tolerances and thresholds for the solvers.

    ``first_step=None`` means ``min(1e-3, T/100)``.
    """

    atol: float = 1e-10
    rtol: float = 1e-8
    first_step: float | None = None
    max_steps: int = 1_000_000
    limit_tol: float = 1e-9
    residual_tol: float = 1e-7
    divergence_threshold: float = 1e8
    max_horizon: float = 2.0 ** 16

    def halved(self) -> "OdeControl":
        return replace(self, atol=self.atol / 2, rtol=self.rtol / 2)


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# difference between the 5th and the embedded 4th order weights (7 stages, FSAL)
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# continuous extension: y(t + s h) = y + h * K^T (P @ [s, s^2, s^3, s^4])
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

# 5-point Gauss-Lobatto rule on [0, 1]
_GL_NODES = 0.5 * (1.0 + np.array([-1.0, -np.sqrt(3 / 7), 0.0, np.sqrt(3 / 7), 1.0]))
_GL_WEIGHTS = 0.5 * np.array([1 / 10, 49 / 90, 32 / 45, 49 / 90, 1 / 10])


@dataclass
class OdeSolution:
    """A trajectory on an adaptive grid with dense output.

    Attributes
    ----------
    grid : ndarray, shape (n+1,)
    values : ndarray, shape (n+1, d)
    kind : RhsKind
    err_estimate : ndarray, shape (n+1,)
        Max-norm local error estimate of the step ending at each grid point
        (0 at ``t = 0``).
    clamp_count : int
        Number of tiny negative excursions that were set to zero.
    stopped_early : bool
        True when integration halted at the divergence threshold.
    """

    grid: np.ndarray
    values: np.ndarray
    kind: RhsKind
    err_estimate: np.ndarray
    stages: np.ndarray
    clamp_count: int = 0
    stopped_early: bool = False

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def t_final(self) -> float:
        return float(self.grid[-1])

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    def _locate(self, t: float):
        if t < 0 or t > self.grid[-1] * (1 + 1e-14):
            raise ValueError(f"t = {t} outside the solved interval [0, {self.grid[-1]}]")
        k = int(np.searchsorted(self.grid, t, side="right")) - 1
        return min(max(k, 0), len(self.grid) - 2)

    def _interp(self, k: int, s):
        h = self.grid[k + 1] - self.grid[k]
        s = np.atleast_1d(s)
        powers = s[:, None] ** np.arange(1, 5)[None, :]
        # (m, 7) @ (7, d)
        coef = powers @ _P.T
        return self.values[k] + h * coef @ self.stages[k]

    def __call__(self, t):
        """Dense output; stored values are returned exactly at grid points."""
        scalar = np.ndim(t) == 0
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((len(ts), self.d))
        for n, tt in enumerate(ts):
            hit = np.flatnonzero(self.grid == tt)
            if hit.size:
                out[n] = self.values[hit[0]]
                continue
            if len(self.grid) == 1:
                raise ValueError("solution has a single point")
            k = self._locate(tt)
            s = (tt - self.grid[k]) / (self.grid[k + 1] - self.grid[k])
            out[n] = self._interp(k, s)[0]
        return out[0] if scalar else out

    def step_integrals(self, g) -> np.ndarray:
        """``∫ g(y(s)) ds`` over each step by 5-point Gauss-Lobatto on the dense output."""
        n = len(self.grid) - 1
        out = np.zeros(n)
        for k in range(n):
            h = self.grid[k + 1] - self.grid[k]
            ys = self._interp(k, _GL_NODES)
            ys[0] = self.values[k]
            ys[-1] = self.values[k + 1]
            out[k] = h * sum(w * g(y) for w, y in zip(_GL_WEIGHTS, ys))
        return out

    def cumulative_integral(self, g) -> np.ndarray:
        """``∫_0^{t_k} g(y(s)) ds`` at every grid point."""
        return np.concatenate([[0.0], np.cumsum(self.step_integrals(g))])

    def integral_to(self, g, t: float) -> float:
        """``∫_0^t g(y(s)) ds`` for any ``t`` in the solved interval."""
        if t == 0:
            return 0.0
        cum = self.cumulative_integral(g)
        hit = np.flatnonzero(self.grid == t)
        if hit.size:
            return float(cum[hit[0]])
        k = self._locate(t)
        h = self.grid[k + 1] - self.grid[k]
        s = (t - self.grid[k]) / h
        ys = self._interp(k, s * _GL_NODES)
        part = s * h * sum(w * g(y) for w, y in zip(_GL_WEIGHTS, ys))
        return float(cum[k] + part)

    def to_csv(self, path=None) -> str:
        """CSV with columns ``t, v_1..v_d, local_err``; returns the text."""
        header = ",".join(["t"] + [f"v_{i + 1}" for i in range(self.d)] + ["local_err"])
        data = np.column_stack([self.grid, self.values, self.err_estimate])
        buf = io.StringIO()
        np.savetxt(buf, data, fmt="%.17g", delimiter=",", header=header, comments="")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


class _Integrator:
    """Resumable DOPRI5 driver; ``advance(T)`` continues from the last state."""

    def __init__(self, f, y0, kind: RhsKind, ctrl: OdeControl, T_hint: float,
                 stop_above: float | None = None):
        self.f = f
        self.kind = kind
        self.ctrl = ctrl
        self.stop_above = stop_above
        y0 = np.array(y0, dtype=float)
        self.t = 0.0
        self.y = y0
        self.k1 = f(y0)
        self.h = ctrl.first_step if ctrl.first_step is not None else min(1e-3, T_hint / 100)
        self.grid = [0.0]
        self.values = [y0.copy()]
        self.errs = [0.0]
        self.stages = []
        self.clamps = 0
        self.steps = 0
        self.stopped = False

    def _step(self, h):
        f, y = self.f, self.y
        K = np.empty((7, len(y)))
        K[0] = self.k1
        for s in range(1, 6):
            K[s] = f(y + h * (np.dot(_A[s], K[:s])))
        y_new = y + h * (_B @ K[:6])
        K[6] = f(y_new)
        err = h * (_E @ K)
        return y_new, K, err

    def advance(self, T: float, stops=()):
        ctrl = self.ctrl
        stops = sorted(s for s in stops if self.t < s < T)
        targets = list(stops) + [T]
        for target in targets:
            while self.t < target and not self.stopped:
                if self.steps >= ctrl.max_steps:
                    raise OdeFailure("maximum number of steps exceeded", self.t)
                h = min(self.h, target - self.t)
                last = h == target - self.t
                if h <= 16 * np.finfo(float).eps * max(1.0, abs(self.t)):
                    raise OdeFailure("step size underflow", self.t)
                y_new, K, err = self._step(h)
                if not np.all(np.isfinite(y_new)):
                    self.h = 0.25 * h
                    continue
                scale = ctrl.atol + ctrl.rtol * np.maximum(np.abs(self.y), np.abs(y_new))
                enorm = float(np.max(np.abs(err) / scale))
                if enorm > 1.0:
                    self.h = h * max(0.2, 0.9 * enorm ** -0.2)
                    continue
                # accepted
                neg = y_new < 0
                if neg.any():
                    if np.min(y_new) < -ctrl.atol:
                        raise OdeFailure(f"solution left the orthant ({np.min(y_new):.3g})", self.t)
                    y_new = np.where(neg, 0.0, y_new)
                    self.clamps += 1
                    K[6] = self.f(y_new)
                if self.kind is not RhsKind.V:
                    tol = ctrl.atol + ctrl.rtol * np.abs(self.y)
                    if np.any(y_new - self.y < -tol):
                        raise OdeFailure("monotonicity of v~ violated beyond tolerance", self.t)
                t_new = target if last else self.t + h
                self.stages.append(K)
                self.grid.append(t_new)
                self.values.append(y_new)
                self.errs.append(float(np.max(np.abs(err))))
                self.t, self.y, self.k1 = t_new, y_new, K[6]
                self.steps += 1
                fac = 5.0 if enorm == 0 else min(5.0, 0.9 * enorm ** -0.2)
                self.h = h * fac if not last else max(self.h, h * fac)
                if self.stop_above is not None and np.any(y_new > self.stop_above):
                    self.stopped = True
        return self

    def solution(self) -> OdeSolution:
        d = len(self.y)
        stages = np.array(self.stages) if self.stages else np.zeros((0, 7, d))
        return OdeSolution(np.array(self.grid), np.array(self.values), self.kind,
                           np.array(self.errs), stages, self.clamps, self.stopped)


def _solve(f, y0, kind, T, ctrl, stops=(), stop_above=None) -> OdeSolution:
    T = check_time(T, "T")
    ctrl = ctrl or OdeControl()
    integ = _Integrator(f, y0, kind, ctrl, T if T > 0 else 1.0, stop_above)
    if T > 0:
        integ.advance(T, stops)
    return integ.solution()


def solve_v(mech: Mechanism, lam, T: float, ctrl: OdeControl | None = None, stops=()) -> OdeSolution:
    """Solve ``v' = -phi(v)``, ``v(0) = lam`` on ``[0, T]``.

    ``stops`` are times the grid is forced to contain.
    """
    lam = as_nonneg_vector(lam, mech.d, "lambda")
    phi = mech._phi
    return _solve(lambda y: -phi(y), lam, RhsKind.V, T, ctrl, stops)


def solve_vtilde(mech: Mechanism, lam_tilde, T: float, ctrl: OdeControl | None = None,
                 stops=(), stop_above=None) -> OdeSolution:
    """Solve ``v~' = lam~ - phi(v~)``, ``v~(0) = 0`` on ``[0, T]``."""
    lt = as_nonneg_vector(lam_tilde, mech.d, "lambda~")
    phi = mech._phi
    return _solve(lambda y: lt - phi(y), np.zeros(mech.d), RhsKind.VTILDE, T, ctrl, stops, stop_above)


def solve_vtilde_A(mech: ModifiedMechanism, mu_A, T: float, ctrl: OdeControl | None = None,
                   stops=(), stop_above=None) -> OdeSolution:
    """Solve ``v~' = mu(A) - phi^(A)(v~)``, ``v~(0) = 0`` on ``[0, T]``."""
    m = as_nonneg_vector(mu_A, mech.d, "mu(A)")
    if isinstance(mech, ModifiedMechanism) and not np.allclose(m, mech.mu_A, rtol=1e-12, atol=0):
        raise ValueError(f"mu(A) = {m} does not match the mechanism's set ({mech.mu_A})")
    phi = mech._phi
    return _solve(lambda y: m - phi(y), np.zeros(mech.d), RhsKind.VTILDE_A, T, ctrl, stops, stop_above)


class LimitStatus(enum.Enum):
    FINITE = "Finite"
    DIVERGES = "DivergesInCoords"
    UNDETERMINED = "Undetermined"


@dataclass(frozen=True)
class LimitResult:
    """Outcome of :func:`limit_vtilde`.

    ``value`` is set for ``FINITE``; ``coords`` (0-based) for ``DIVERGES``.
    """

    status: LimitStatus
    horizon_used: float
    value: np.ndarray | None = None
    coords: tuple = ()
    residual: float = float("nan")
    reason: str = ""


def limit_vtilde(mech: Mechanism, lam_tilde, ctrl: OdeControl | None = None) -> LimitResult:
    """Detect ``lim_{t->inf} v~(t, lam~)`` by integrating over doubling horizons.

    The limit is declared finite when the increment over the last doubling is
    below ``limit_tol`` and ``|phi(x) - lam~|_inf <= residual_tol``.
    """
    ctrl = ctrl or OdeControl()
    lt = as_nonneg_vector(lam_tilde, mech.d, "lambda~")
    if not np.any(lt > 0):
        return LimitResult(LimitStatus.FINITE, 0.0, np.zeros(mech.d), residual=0.0)
    phi = mech._phi
    kind = RhsKind.VTILDE_A if isinstance(mech, ModifiedMechanism) else RhsKind.VTILDE
    integ = _Integrator(lambda y: lt - phi(y), np.zeros(mech.d), kind, ctrl, 1.0,
                        stop_above=ctrl.divergence_threshold)
    T = 1.0
    prev = integ.y.copy()
    try:
        while T <= ctrl.max_horizon:
            integ.advance(T)
            y = integ.y
            if integ.stopped:
                growing = integ.k1 > 0
                big = np.flatnonzero((y > ctrl.divergence_threshold) & growing)
                if big.size:
                    return LimitResult(LimitStatus.DIVERGES, integ.t, coords=tuple(int(i) for i in big),
                                       reason="coordinates exceed the divergence threshold while increasing")
                return LimitResult(LimitStatus.UNDETERMINED, integ.t,
                                   reason="threshold exceeded without growth")
            inc = float(np.max(np.abs(y - prev)))
            res = float(np.max(np.abs(phi(y) - lt)))
            if inc <= ctrl.limit_tol and res <= ctrl.residual_tol:
                return LimitResult(LimitStatus.FINITE, T, y.copy(), residual=res)
            prev = y.copy()
            T *= 2.0
    except OdeFailure as exc:
        return LimitResult(LimitStatus.UNDETERMINED, exc.last_time, reason=str(exc))
    return LimitResult(LimitStatus.UNDETERMINED, integ.t,
                       reason=f"no convergence up to horizon {ctrl.max_horizon:g}")
