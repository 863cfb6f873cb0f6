"""Admissible parameter tuples, derived drifts, set modifications and irreducibility."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import as_matrix, as_vector
from .measure import AtomicLevyMeasure, BallComplement, JumpSet, complement


class NotApplicable(ValueError):
    """Raised when a quantity is undefined for the given parameters."""


@dataclass(frozen=True, eq=False)
class CBIParams:
    """The tuple ``(d, c, beta, B, nu, mu)`` of a multi-type CBI process.

    Shapes are checked on construction; admissibility (signs, atoms) is
    checked by :func:`validate`, which reports instead of raising.

    Parameters
    ----------
    c : array_like, shape (d,)
        Diffusion coefficients.
    beta : array_like, shape (d,)
        Immigration drift.
    B : array_like, shape (d, d)
        Branching drift matrix.
    nu : AtomicLevyMeasure
        Immigration jump measure.
    mu : sequence of AtomicLevyMeasure, length d
        Branching jump measures, one per type.
    """

    c: np.ndarray
    beta: np.ndarray
    B: np.ndarray
    nu: AtomicLevyMeasure
    mu: tuple

    def __post_init__(self):
        c = as_vector(self.c, name="c")
        d = len(c)
        beta = as_vector(self.beta, d, "beta")
        B = as_matrix(self.B, d, "B")
        mu = tuple(self.mu)
        if len(mu) != d:
            raise ValueError(f"expected {d} branching measures, got {len(mu)}")
        for m in (self.nu, *mu):
            if not isinstance(m, AtomicLevyMeasure):
                raise TypeError(f"measures must be AtomicLevyMeasure, got {type(m).__name__}")
            if m.dim != d:
                raise ValueError(f"measure of dimension {m.dim} in a {d}-type model")
        for arr in (c, beta, B):
            arr.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "mu", mu)

    @property
    def d(self) -> int:
        return len(self.c)

    def __eq__(self, other):
        if not isinstance(other, CBIParams):
            return NotImplemented
        return (np.array_equal(self.c, other.c) and np.array_equal(self.beta, other.beta)
                and np.array_equal(self.B, other.B) and self.nu == other.nu
                and all(a == b for a, b in zip(self.mu, other.mu)))

    __hash__ = None

    @classmethod
    def zero(cls, d: int) -> "CBIParams":
        e = AtomicLevyMeasure.empty(d)
        return cls(np.zeros(d), np.zeros(d), np.zeros((d, d)), e, (e,) * d)

    def replace(self, **kw) -> "CBIParams":
        fields = dict(c=self.c, beta=self.beta, B=self.B, nu=self.nu, mu=self.mu)
        fields.update(kw)
        return CBIParams(**fields)

    @property
    def total_branching(self) -> AtomicLevyMeasure:
        out = AtomicLevyMeasure.empty(self.d)
        for m in self.mu:
            out = out + m
        return out

    @property
    def psi_is_zero(self) -> bool:
        """True when the immigration mechanism vanishes identically."""
        return not np.any(self.beta != 0) and self.nu.is_zero

    # -- JSON ----------------------------------------------------------------

    def to_dict(self) -> dict:
        return {"d": self.d, "c": self.c.tolist(), "beta": self.beta.tolist(),
                "B": self.B.tolist(), "nu": self.nu.to_dict(),
                "mu": [m.to_dict() for m in self.mu]}

    @classmethod
    def from_dict(cls, obj: dict) -> "CBIParams":
        if not isinstance(obj, dict):
            raise ValueError("parameter file must contain a JSON object")
        missing = [k for k in ("c", "beta", "B") if k not in obj]
        if missing:
            raise ValueError(f"missing parameter fields: {', '.join(missing)}")
        c = as_vector(obj["c"], name="c")
        d = int(obj.get("d", len(c)))
        if d != len(c):
            raise ValueError(f"d = {d} but c has length {len(c)}")
        nu = AtomicLevyMeasure.from_dict(obj.get("nu", {"atoms": []}), dim=d)
        mu_raw = obj.get("mu", [{"atoms": []}] * d)
        mu = tuple(AtomicLevyMeasure.from_dict(m, dim=d) for m in mu_raw)
        return cls(c, obj["beta"], obj["B"], nu, mu)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text: str) -> "CBIParams":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "CBIParams":
        return cls.from_json(Path(path).read_text())


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    clause: str
    message: str

    def __str__(self):
        return f"({self.clause}) {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def ok(self) -> bool:
        return len(self.violations) == 0

    def __bool__(self):
        return self.ok

    def clauses(self) -> set:
        return {v.clause for v in self.violations}

    def __str__(self):
        if self.ok:
            return "ok"
        return "\n".join(str(v) for v in self.violations)


def validate(p: CBIParams) -> ValidationReport:
    """Check admissibility clause by clause and collect every violation.

    Clauses: (i) d positive, (ii) c >= 0, (iii) beta >= 0,
    (iv) B essentially non-negative, (v) nu admissible, (vi) each mu_i admissible.
    Indices in the messages are 0-based.
    """
    out = []
    if p.d < 1:
        out.append(Violation("i", "number of types must be positive"))
    for i, ci in enumerate(p.c):
        if not (np.isfinite(ci) and ci >= 0):
            out.append(Violation("ii", f"c[{i}] = {ci} is negative or not finite"))
    for i, bi in enumerate(p.beta):
        if not (np.isfinite(bi) and bi >= 0):
            out.append(Violation("iii", f"beta[{i}] = {bi} is negative or not finite"))
    if not np.all(np.isfinite(p.B)):
        out.append(Violation("iv", "B has non-finite entries"))
    for i in range(p.d):
        for j in range(p.d):
            if i != j and p.B[i, j] < 0:
                out.append(Violation("iv", f"B[{i}][{j}] = {p.B[i, j]} < 0, B is not essentially non-negative"))
    for msg in p.nu.problems():
        out.append(Violation("v", f"nu: {msg}"))
    for i, m in enumerate(p.mu):
        for msg in m.problems():
            out.append(Violation("vi", f"mu[{i}]: {msg}"))
    return ValidationReport(tuple(out))


# --------------------------------------------------------------------------
# Derived quantities
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DerivedDrift:
    B_tilde: np.ndarray
    beta_tilde: np.ndarray


def derive_drift(p: CBIParams) -> DerivedDrift:
    """``B~_ij = b_ij + ∫(z_i - δ_ij)^+ mu_j(dz)`` and ``beta~ = beta + ∫ r nu(dr)``."""
    d = p.d
    Bt = p.B.copy()
    for j, m in enumerate(p.mu):
        if m.is_zero:
            continue
        for i in range(d):
            Bt[i, j] += m.shifted_positive_moment(i, j)
    bt = p.beta + p.nu.first_moment_vector()
    return DerivedDrift(Bt, bt)


@dataclass(frozen=True, eq=False)
class ModifiedParams:
    """Parameters of the process with all jumps in ``A`` removed.

    Attributes
    ----------
    base : CBIParams
        ``(d, c, beta, B^(A), nu restricted to U\\A, mu restricted to U\\A)``.
    D_A : ndarray
        Diagonal matrix with entries ``∫_A ((z_i - 1)^+ - z_i) mu_i(dz)``, so
        that ``B^(A) = B + D_A``.
    T_A : ndarray
        Matrix whose column ``l`` is ``∫_A z mu_l(dz)``; ``B~^(A) = B~ - T_A``.
    A : JumpSet
    mu_A : ndarray
        ``(mu_1(A), ..., mu_d(A))``.
    nu_A : float
        ``nu(A)``.
    """

    base: CBIParams
    D_A: np.ndarray
    T_A: np.ndarray
    A: JumpSet
    mu_A: np.ndarray
    nu_A: float

    @property
    def B_tilde(self) -> np.ndarray:
        return derive_drift(self.base).B_tilde

    @property
    def total_mass(self) -> float:
        return float(self.nu_A + self.mu_A.sum())


def modify_for_set(p: CBIParams, A: JumpSet) -> ModifiedParams:
    d = p.d
    keep = complement(A)
    D = np.zeros((d, d))
    T = np.zeros((d, d))
    mu_A = np.zeros(d)
    mu_kept = []
    for l, m in enumerate(p.mu):
        inside = m.restrict(A)
        mu_A[l] = inside.mass()
        if not inside.is_zero:
            z = inside.points
            D[l, l] = float(np.sum(inside.weights * (np.maximum(z[:, l] - 1.0, 0.0) - z[:, l])))
            T[:, l] = inside.first_moment_vector()
        mu_kept.append(m.restrict(keep) if not inside.is_zero else m)
    nu_A = p.nu.mass(A)
    nu_kept = p.nu.restrict(keep) if nu_A > 0 else p.nu
    base = CBIParams(p.c, p.beta, p.B + D, nu_kept, tuple(mu_kept))
    return ModifiedParams(base, D, T, A, mu_A, nu_A)


def embed_2d(p: CBIParams) -> CBIParams:
    """The (2d)-type tuple whose second block carries ``∫_0^t X_u du``."""
    d = p.d
    Bs = np.zeros((2 * d, 2 * d))
    Bs[:d, :d] = p.B
    Bs[d:, :d] = np.eye(d)
    zero = AtomicLevyMeasure.empty(2 * d)
    mu = tuple(m.embed(2 * d) for m in p.mu) + (zero,) * d
    return CBIParams(np.concatenate([p.c, np.zeros(d)]), np.concatenate([p.beta, np.zeros(d)]),
                     Bs, p.nu.embed(2 * d), mu)


# --------------------------------------------------------------------------
# Irreducibility
# --------------------------------------------------------------------------

def is_irreducible(M) -> bool:
    """Strong connectivity of the digraph with an edge i -> j when ``M[i, j] > 0``, i != j."""
    M = as_matrix(M, name="M")
    d = M.shape[0]
    if d == 1:
        return True
    adj = (M > 0) & ~np.eye(d, dtype=bool)

    def reaches_all(a):
        seen = np.zeros(d, dtype=bool)
        seen[0] = True
        stack = [0]
        while stack:
            i = stack.pop()
            for j in np.flatnonzero(a[i] & ~seen):
                seen[j] = True
                stack.append(j)
        return seen.all()

    return reaches_all(adj) and reaches_all(adj.T)


def irreducibility_radius(p: CBIParams) -> float:
    """Radius ``r0`` such that removing jumps of norm ``> r`` keeps ``B~`` irreducible for ``r >= r0``.

    Follows the constructive recipe: for each off-diagonal positive entry of
    ``B~`` the radius is ``(1 ∧ max_k sup mu_k) / 2`` when ``b_ij > 0`` and
    otherwise the smallest norm of an atom of ``mu_j`` with ``z_i != 0``.

    Raises
    ------
    NotApplicable
        For ``d = 1``, ``mu = 0`` or reducible ``B~``.
    """
    d = p.d
    if d == 1:
        raise NotApplicable("single-type processes are always irreducible")
    if all(m.is_zero for m in p.mu):
        raise NotApplicable("all branching measures are zero")
    Bt = derive_drift(p).B_tilde
    if not is_irreducible(Bt):
        raise NotApplicable("B~ is reducible")
    sup_max = max(m.support_sup() for m in p.mu)
    radii = []
    for i in range(d):
        for j in range(d):
            if i == j or not Bt[i, j] > 0:
                continue
            if p.B[i, j] > 0:
                radii.append(0.5 * min(1.0, sup_max))
            else:
                m = p.mu[j]
                sel = m.points[:, i] != 0
                radii.append(float(np.min(np.linalg.norm(m.points[sel], axis=1))))
    return max(radii)


def modified_drift_irreducible(p: CBIParams, r: float) -> bool:
    """Whether ``B~`` of the process without jumps of norm ``> r`` is irreducible."""
    return is_irreducible(modify_for_set(p, BallComplement(r)).B_tilde)
