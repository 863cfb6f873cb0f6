"""Branching and immigration mechanisms, their set-modified versions and the inverse map."""

from __future__ import annotations

import numpy as np

from ._validation import as_nonneg_vector, as_vector
from .measure import JumpSet, complement
from .params import CBIParams


class ConvergenceError(RuntimeError):
    """The inverse mechanism could not be computed to the requested tolerance."""


class Mechanism:
    """Evaluate ``phi`` and ``psi`` of a parameter tuple by exact atom sums.

    ``phi_i(lam) = c_i lam_i^2 - <B e_i, lam>
                   + sum_k w_k (exp(-<lam, z_k>) - 1 + lam_i min(1, z_k,i))``

    ``psi(lam) = <beta, lam> + sum_k w_k (1 - exp(-<lam, r_k>))``
    """

    def __init__(self, params: CBIParams):
        self.params = params
        self.d = params.d
        self._c = params.c
        self._BT = params.B.T.copy()
        self._beta = params.beta
        self._mu = [(m.points, m.weights, np.minimum(1.0, m.points[:, i]))
                    for i, m in enumerate(params.mu)]
        self._nu = (params.nu.points, params.nu.weights)

    def _check(self, lam):
        return as_nonneg_vector(lam, self.d, "lambda")

    # the un-checked kernels are used by the ODE right-hand sides
    def _phi(self, lam: np.ndarray) -> np.ndarray:
        out = self._c * lam * lam - self._BT @ lam
        for i, (z, w, trunc) in enumerate(self._mu):
            if len(w):
                out[i] += np.dot(w, np.expm1(-(z @ lam)) + lam[i] * trunc)
        return out

    def _psi(self, lam: np.ndarray) -> float:
        val = float(self._beta @ lam)
        z, w = self._nu
        if len(w):
            val += float(np.dot(w, -np.expm1(-(z @ lam))))
        return val

    def _jac(self, lam: np.ndarray) -> np.ndarray:
        J = np.diag(2.0 * self._c * lam) - self._BT
        for i, (z, w, trunc) in enumerate(self._mu):
            if len(w):
                e = np.exp(-(z @ lam))
                J[i] -= (w * e) @ z
                J[i, i] += np.dot(w, trunc)
        return J

    def phi(self, lam) -> np.ndarray:
        return self._phi(self._check(lam))

    def psi(self, lam) -> float:
        return self._psi(self._check(lam))

    def jacobian(self, lam) -> np.ndarray:
        """``J[i, j] = d phi_i / d lam_j``."""
        return self._jac(self._check(lam))

    def in_D_phi(self, lam) -> bool:
        """True iff every component of ``phi(lam)`` is strictly positive."""
        return bool(np.all(self.phi(lam) > 0))

    def inverse_phi(self, lam, tol: float = 1e-10, max_iter: int = 100, ode_fallback: bool = True):
        """Solve ``phi(x) = lam`` for ``x`` in ``D_phi``.

        Damped Newton with step halving and projection onto the orthant.
        When Newton stalls, the long-time limit of ``v~(t, lam)`` is used as
        a new starting point (the limit equals the inverse whenever it is
        finite), followed by a short Newton polish.

        Raises
        ------
        ConvergenceError
            When neither route meets ``tol``.
        """
        lam = as_vector(lam, self.d, "lambda")
        if np.any(~(lam > 0)) or not np.all(np.isfinite(lam)):
            raise ValueError(f"inverse_phi needs a strictly positive argument, got {lam}")
        diag = np.maximum(np.diag(self._jac(lam)), 1e-8)
        x0 = lam / diag
        x, res = self._newton(lam, x0, tol, max_iter)
        if res <= tol and self._accept(x):
            return x
        if ode_fallback:
            from .ode import limit_vtilde, OdeControl, LimitStatus
            lim = limit_vtilde(self, lam, OdeControl())
            if lim.status is LimitStatus.FINITE:
                x, res = self._newton(lam, lim.value, tol, max_iter)
                if res <= tol and self._accept(x):
                    return x
        raise ConvergenceError(f"inverse_phi did not converge for lambda={lam} (residual {res:.3g})")

    def _accept(self, x) -> bool:
        return bool(np.all(np.isfinite(x)) and np.all(self._phi(x) > 0))

    def _newton(self, lam, x, tol, max_iter):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        F = self._phi(x) - lam
        res = float(np.max(np.abs(F)))
        for _ in range(max_iter):
            if res <= tol:
                break
            try:
                step = np.linalg.solve(self._jac(x), -F)
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(step)):
                break
            alpha = 1.0
            improved = False
            while alpha >= 2.0 ** -20:
                xn = np.maximum(x + alpha * step, 0.0)
                Fn = self._phi(xn) - lam
                rn = float(np.max(np.abs(Fn)))
                if rn < res:
                    improved = True
                    break
                alpha *= 0.5
            if not improved:
                break
            x, F, res = xn, Fn, rn
        return x, res


class ModifiedMechanism(Mechanism):
    """Mechanisms of the process with every jump in ``A`` removed, from the base tuple.

    ``phi^(A)_l(lam) = phi_l(lam) + ∫_A (1 - exp(-<lam, z>)) mu_l(dz)``
    ``psi^(A)(lam) = <beta, lam> + ∫_{U \\ A} (1 - exp(-<lam, r>)) nu(dr)``

    This evaluates the formulas on the original parameters; the same
    functions are also obtained as ``Mechanism(modify_for_set(p, A).base)``.
    """

    def __init__(self, params: CBIParams, A: JumpSet):
        super().__init__(params)
        self.A = A
        self._extra = [(r.points, r.weights) for r in (m.restrict(A) for m in params.mu)]
        kept = params.nu.restrict(complement(A))
        self._nu = (kept.points, kept.weights)
        self.mu_A = np.array([w.sum() for _, w in self._extra])
        self.nu_A = params.nu.mass(A)

    def _phi(self, lam):
        out = super()._phi(lam)
        for l, (z, w) in enumerate(self._extra):
            if len(w):
                out[l] += np.dot(w, -np.expm1(-(z @ lam)))
        return out

    def _jac(self, lam):
        J = super()._jac(lam)
        for l, (z, w) in enumerate(self._extra):
            if len(w):
                J[l] += (w * np.exp(-(z @ lam))) @ z
        return J
