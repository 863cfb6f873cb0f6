"""Semi-analytic distributional formulas built on the mechanism and ODE layers."""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ._validation import as_nonneg_vector, check_time
from .mechanisms import ConvergenceError, Mechanism, ModifiedMechanism
from .measure import BallComplement, Box, FullSpace, JumpSet, Rectangle
from .ode import (LimitStatus, OdeControl, OdeSolution, limit_vtilde,
                  solve_v, solve_vtilde, solve_vtilde_A)
from .params import CBIParams, derive_drift, is_irreducible, modify_for_set


class MatrixExpOverflow(OverflowError):
    pass


class ProbabilityClampWarning(RuntimeWarning):
    pass


def _clamp_prob(p: float) -> float:
    if p > 1.0 + 1e-9:
        warnings.warn(f"probability {p!r} exceeds 1 before clamping", ProbabilityClampWarning,
                      stacklevel=3)
    return float(min(1.0, max(0.0, p)))


# --------------------------------------------------------------------------
# Moments
# --------------------------------------------------------------------------

def matrix_exp(M, t: float = 1.0) -> np.ndarray:
    """``exp(t M)`` by scaling and squaring with a Padé approximant.

    Raises
    ------
    MatrixExpOverflow
        When the result is not finite.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if t == 0:
        return np.eye(M.shape[0])
    with np.errstate(over="ignore", invalid="ignore"):
        E = scipy.linalg.expm(t * M)
    if not np.all(np.isfinite(E)):
        raise MatrixExpOverflow(f"exp(tM) overflows for t={t}, |M|={np.abs(M).max():.3g}")
    return E


def mean(params: CBIParams, x, t: float) -> np.ndarray:
    """``E_x X_t = exp(t B~) x + ∫_0^t exp(u B~) beta~ du`` via one augmented exponential."""
    d = params.d
    x = as_nonneg_vector(x, d, "x")
    t = check_time(t)
    if t == 0:
        return x.copy()
    dd = derive_drift(params)
    M = np.zeros((d + 1, d + 1))
    M[:d, :d] = dd.B_tilde
    M[:d, d] = dd.beta_tilde
    E = matrix_exp(M, t)
    return np.maximum(E[:d, :d] @ x + E[:d, d], 0.0)


def integrated_mean(params: CBIParams, x, t: float) -> np.ndarray:
    """``∫_0^t E_x X_u du`` from the exponential of ``[[B~, 0, beta~], [I, 0, 0], [0, 0, 0]]``."""
    d = params.d
    x = as_nonneg_vector(x, d, "x")
    t = check_time(t)
    if t == 0:
        return np.zeros(d)
    dd = derive_drift(params)
    M = np.zeros((2 * d + 1, 2 * d + 1))
    M[:d, :d] = dd.B_tilde
    M[:d, 2 * d] = dd.beta_tilde
    M[d:2 * d, :d] = np.eye(d)
    E = matrix_exp(M, t)
    return np.maximum(E[d:2 * d, :d] @ x + E[d:2 * d, 2 * d], 0.0)


def expected_jump_count(params: CBIParams, x, A: JumpSet, t: float) -> float:
    """``E_x J_t(A) = sum_l mu_l(A) ∫_0^t E X_{u,l} du + t nu(A)``."""
    t = check_time(t)
    mu_A = np.array([m.mass(A) for m in params.mu])
    nu_A = params.nu.mass(A)
    val = t * nu_A
    if np.any(mu_A > 0):
        val += float(mu_A @ integrated_mean(params, x, t))
    return float(val)


# --------------------------------------------------------------------------
# Laplace transforms
# --------------------------------------------------------------------------

def laplace_X(params: CBIParams, x, lam, t: float, ctrl: OdeControl | None = None) -> float:
    """``E_x exp(-<lam, X_t>) = exp(-<x, v(t, lam)> - ∫_0^t psi(v(s, lam)) ds)``."""
    mech = Mechanism(params)
    x = as_nonneg_vector(x, params.d, "x")
    lam = as_nonneg_vector(lam, params.d, "lambda")
    t = check_time(t)
    if t == 0:
        return float(np.exp(-x @ lam))
    sol = solve_v(mech, lam, t, ctrl)
    expo = x @ sol.final + sol.integral_to(mech._psi, t)
    return _clamp_prob(float(np.exp(-expo)))


def laplace_intX(params: CBIParams, x, lam_tilde, t: float, ctrl: OdeControl | None = None) -> float:
    """``E_x exp(-<lam~, ∫_0^t X_u du>) = exp(-<x, v~(t)> - ∫_0^t psi(v~(s)) ds)``."""
    mech = Mechanism(params)
    x = as_nonneg_vector(x, params.d, "x")
    lt = as_nonneg_vector(lam_tilde, params.d, "lambda~")
    t = check_time(t)
    if t == 0:
        return 1.0
    sol = solve_vtilde(mech, lt, t, ctrl)
    expo = x @ sol.final + sol.integral_to(mech._psi, t)
    return _clamp_prob(float(np.exp(-expo)))


# --------------------------------------------------------------------------
# First jump times
# --------------------------------------------------------------------------

class FirstJumpLaw:
    """Law of ``tau_A``, the first time a jump with size in ``A`` occurs.

    ``P_x(tau_A > t) = exp(-nu(A) t - <x, v~^(A)(t, mu(A))> - ∫_0^t psi^(A)(v~^(A)(s)) ds)``

    Parameters
    ----------
    params : CBIParams
    A : JumpSet
    horizon : float
        Largest time of interest; the ODE is solved once on ``[0, horizon]``.
    stops : sequence of float, optional
        Times that are forced onto the solver grid.
    """

    def __init__(self, params: CBIParams, A: JumpSet, horizon: float,
                 ctrl: OdeControl | None = None, stops=()):
        self.params = params
        self.A = A
        self.horizon = check_time(horizon, "horizon")
        self.derived = modify_for_set(params, A)
        self.mech = ModifiedMechanism(params, A)
        self.nu_A = self.mech.nu_A
        self.mu_A = self.mech.mu_A
        self.vtilde_A: OdeSolution = solve_vtilde_A(self.mech, self.mu_A, self.horizon, ctrl, stops)
        self.psi_integral = self.vtilde_A.cumulative_integral(self.mech._psi)

    def exponent(self, t: float, x) -> float:
        t = check_time(t)
        if t > self.horizon * (1 + 1e-14):
            raise ValueError(f"t = {t} beyond the solved horizon {self.horizon}")
        x = as_nonneg_vector(x, self.params.d, "x")
        if t == 0:
            return 0.0
        sol = self.vtilde_A
        hit = np.flatnonzero(sol.grid == t)
        if hit.size:
            v, integral = sol.values[hit[0]], self.psi_integral[hit[0]]
        else:
            v, integral = sol(t), sol.integral_to(self.mech._psi, t)
        return float(self.nu_A * t + x @ v + integral)

    def survival(self, t: float, x) -> float:
        """``P_x(tau_A > t)``, clamped to [0, 1]."""
        return _clamp_prob(float(np.exp(-self.exponent(t, x))))

    def survival_curve(self, ts, x) -> np.ndarray:
        return np.array([self.survival(t, x) for t in ts])


def survival_tau(params: CBIParams, x, A: JumpSet, t: float, ctrl: OdeControl | None = None) -> float:
    """``P_x(tau_A > t)``."""
    t = check_time(t)
    if t == 0:
        return 1.0
    return FirstJumpLaw(params, A, t, ctrl).survival(t, x)


class TauVerdict(enum.Enum):
    ONE = "One"
    ZERO = "Zero"
    VALUE = "Value"
    UNDETERMINED = "Undetermined"


@dataclass(frozen=True)
class TauInfinityResult:
    verdict: TauVerdict
    value: float | None
    reason: str

    @property
    def probability(self) -> float | None:
        if self.verdict is TauVerdict.ONE:
            return 1.0
        if self.verdict is TauVerdict.ZERO:
            return 0.0
        return self.value


def prob_tau_infinite(params: CBIParams, x, A: JumpSet,
                      ctrl: OdeControl | None = None) -> TauInfinityResult:
    """``P_x(tau_A = inf)`` by the case analysis for jump times.

    Returns a tagged verdict; ``UNDETERMINED`` names the hypothesis that
    could not be established.
    """
    x = as_nonneg_vector(x, params.d, "x")
    mod = modify_for_set(params, A)
    nu_A, mu_A = mod.nu_A, mod.mu_A
    if nu_A + mu_A.sum() == 0:
        return TauInfinityResult(TauVerdict.ONE, 1.0, "nu(A) + sum mu_i(A) = 0")
    if nu_A > 0:
        return TauInfinityResult(TauVerdict.ZERO, 0.0, "nu(A) > 0")
    if not params.psi_is_zero:
        if is_irreducible(mod.B_tilde):
            return TauInfinityResult(TauVerdict.ZERO, 0.0,
                                     "nu(A) = 0, mu(A) != 0, modified process irreducible, psi not identically 0")
        return TauInfinityResult(TauVerdict.UNDETERMINED, None,
                                 "psi is not identically 0 but the modified drift B~^(A) is reducible")
    if not np.all(mu_A > 0):
        zero = [i for i in range(params.d) if mu_A[i] == 0]
        return TauInfinityResult(TauVerdict.UNDETERMINED, None,
                                 f"psi = 0 but mu_i(A) = 0 for i in {zero}")
    mech = ModifiedMechanism(params, A)
    lim = limit_vtilde(mech, mu_A, ctrl)
    if lim.status is not LimitStatus.FINITE:
        return TauInfinityResult(TauVerdict.UNDETERMINED, None,
                                 f"limit of v~^(A) not certified finite: {lim.status.value} {lim.reason}".strip())
    if not np.all(lim.value > 0):
        return TauInfinityResult(TauVerdict.UNDETERMINED, None,
                                 "limit of v~^(A) is not in the open orthant")
    try:
        root = mech.inverse_phi(mu_A)
    except ConvergenceError:
        root = lim.value
    p = _clamp_prob(float(np.exp(-x @ root)))
    return TauInfinityResult(TauVerdict.VALUE, p,
                             "psi = 0, mu_i(A) > 0 for all i, v~^(A)(inf) finite and positive")


# --------------------------------------------------------------------------
# Supremum of jumps
# --------------------------------------------------------------------------

def sup_jump_norm_cdf(params: CBIParams, x, r: float, t: float, ctrl: OdeControl | None = None) -> float:
    """``P_x(sup_{s <= t} |dX_s| <= r)``, the survival of jumps of norm ``> r``."""
    if not r > 0:
        raise ValueError(f"r must be positive, got {r}")
    return survival_tau(params, x, BallComplement(r), t, ctrl)


def sup_jump_zero_prob(params: CBIParams, x, t: float, ctrl: OdeControl | None = None) -> float:
    """``P_x(sup_{s <= t} |dX_s| = 0)``: no jump at all up to ``t``."""
    return survival_tau(params, x, FullSpace(), t, ctrl)


def global_sup_constant(params: CBIParams) -> float:
    """Largest atom norm of ``nu + sum_i mu_i``."""
    return max([params.nu.support_sup()] + [m.support_sup() for m in params.mu])


@dataclass(frozen=True)
class SupHypotheses:
    irreducible: bool
    psi_nonzero: bool
    atom_condition: bool
    failures: tuple

    @property
    def ok(self) -> bool:
        return self.irreducible and self.psi_nonzero and self.atom_condition


def check_prop53_hypotheses(params: CBIParams) -> SupHypotheses:
    """Check when the overall largest jump is almost surely the largest atom norm.

    Requires ``B~`` irreducible, ``psi`` not identically zero, and for each
    ``i != j`` with ``B~_ij > 0`` and ``b_ij = 0``: ``mu_j`` charges
    ``{|z| < sup mu_j, z_i != 0}``.
    """
    failures = []
    Bt = derive_drift(params).B_tilde
    irr = is_irreducible(Bt)
    if not irr:
        failures.append("B~ is reducible")
    psi_ok = not params.psi_is_zero
    if not psi_ok:
        failures.append("psi is identically zero")
    atom_ok = True
    d = params.d
    for i in range(d):
        for j in range(d):
            if i == j or not Bt[i, j] > 0 or params.B[i, j] != 0:
                continue
            m = params.mu[j]
            sup = m.support_sup()
            if not (0 < sup < np.inf):
                continue
            norms = np.linalg.norm(m.points, axis=1)
            if not np.any((norms < sup) & (m.points[:, i] != 0)):
                atom_ok = False
                failures.append(f"mu[{j}] has no atom with z[{i}] != 0 strictly inside radius {sup:g}")
    return SupHypotheses(irr, psi_ok, atom_ok, tuple(failures))


class RectVerdict(enum.Enum):
    NULL = "Null"
    POSITIVE = "Positive"
    OUTSIDE = "OutsideTheorem"


class NotAnchoredError(ValueError):
    pass


def _anchored_upper(A: JumpSet):
    if isinstance(A, Rectangle):
        return np.asarray(A.upper)
    if isinstance(A, Box) and A.anchored:
        return np.asarray(A.upper)
    return None


def rect_sup_is_null(params: CBIParams, A: JumpSet, x, t: float) -> RectVerdict:
    """Zero/positive verdict for ``P_x(coordinate-wise sup of jumps up to t lies in A)``.

    Only nondegenerate rectangles anchored at zero are accepted: outside that
    class the dichotomy fails (two jumps (3/4, 1/4) and (1/4, 3/4) have
    coordinate-wise sup (3/4, 3/4), which lands in [1/2, 1]^2 although no
    jump does).
    """
    upper = _anchored_upper(A)
    if upper is None or len(upper) != params.d:
        raise NotAnchoredError(
            f"{A!r} is not a nondegenerate rectangle anchored at zero in dimension {params.d}; "
            "the null/positive dichotomy does not hold for such sets (sup of jumps (3/4,1/4) "
            "and (1/4,3/4) lies in [1/2,1]^2 with no jump there)")
    x = as_nonneg_vector(x, params.d, "x")
    if not check_time(t) > 0:
        raise ValueError("t must be positive")
    rect = Rectangle(upper)
    mass = params.nu.mass(rect) + sum(m.mass(rect) for m in params.mu)
    if mass == 0:
        return RectVerdict.NULL
    if np.all(x > 0) or np.all(params.beta > 0):
        return RectVerdict.POSITIVE
    return RectVerdict.OUTSIDE


def lower_bound_pi(params: CBIParams, x, A: JumpSet, r: float, t: float,
                   ctrl: OdeControl | None = None) -> float:
    """``P_x(tau_{K_r^c \\ A} > t) - P_x(tau_{K_r^c} > t)`` floored at 0,
    where ``K_r^c = {|z| >= r}``."""
    if not r > 0:
        raise ValueError(f"r must be positive, got {r}")
    K = BallComplement(r, closed=True)
    a = survival_tau(params, x, K - A, t, ctrl)
    b = survival_tau(params, x, K, t, ctrl)
    return max(0.0, a - b)
