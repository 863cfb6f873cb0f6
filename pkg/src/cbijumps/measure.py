"""Finite atomic Lévy measures on the punctured orthant and jump-size sets.

All integrals against an :class:`AtomicLevyMeasure` are finite sums over
atoms, so every quantity here is exact up to floating point rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


def _as_points(points, dim: int | None) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        if dim is None:
            raise ValueError("dimension must be given for an empty measure")
        return np.zeros((0, dim))
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"atom points must form a (k, d) array, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"atom points have dimension {arr.shape[1]}, expected {dim}")
    return arr


# --------------------------------------------------------------------------
# Jump sets
# --------------------------------------------------------------------------

class JumpSet:
    """A Borel subset of ``R_+^d \\ {0}`` with an exact membership test.

    Subclasses implement :meth:`_contains` on an ``(n, d)`` array; the public
    :meth:`contains` removes the origin, which never belongs to a jump set.
    """

    def contains(self, z) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(z, dtype=float))
        nonzero = np.any(pts != 0.0, axis=1)
        return self._contains(pts) & nonzero

    def __contains__(self, z) -> bool:
        return bool(self.contains(z)[0])

    def _contains(self, pts: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def __or__(self, other: "JumpSet") -> "Union":
        return Union((self, other))

    def __and__(self, other: "JumpSet") -> "Intersection":
        return Intersection((self, other))

    def __sub__(self, other: "JumpSet") -> "Difference":
        return Difference(self, other)

    def to_dict(self) -> dict:
        raise TypeError(f"{type(self).__name__} cannot be serialized")


@dataclass(frozen=True)
class FullSpace(JumpSet):
    """The whole jump space ``R_+^d \\ {0}``."""

    def _contains(self, pts):
        return np.ones(len(pts), dtype=bool)

    def to_dict(self):
        return {"full": True}


@dataclass(frozen=True)
class Rectangle(JumpSet):
    """``(prod_i [0, w_i]) \\ {0}``, a nondegenerate rectangle anchored at zero."""

    upper: tuple

    def __init__(self, upper):
        w = tuple(float(v) for v in np.atleast_1d(upper))
        if any(not v > 0 for v in w):
            raise ValueError(f"rectangle corners must be strictly positive, got {w}")
        object.__setattr__(self, "upper", w)

    def _contains(self, pts):
        return np.all(pts <= np.asarray(self.upper), axis=1)

    def to_dict(self):
        return {"rect": list(self.upper)}


@dataclass(frozen=True)
class Box(JumpSet):
    """Closed box ``prod_i [lo_i, hi_i]`` with the origin removed.

    Unlike :class:`Rectangle` a box need not be anchored at the origin.
    """

    lower: tuple
    upper: tuple

    def __init__(self, lower, upper):
        lo = tuple(float(v) for v in np.atleast_1d(lower))
        hi = tuple(float(v) for v in np.atleast_1d(upper))
        if len(lo) != len(hi) or any(a < 0 or b < a for a, b in zip(lo, hi)):
            raise ValueError(f"invalid box bounds {lo}, {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def anchored(self) -> bool:
        return all(v == 0.0 for v in self.lower) and all(v > 0.0 for v in self.upper)

    def _contains(self, pts):
        return np.all((pts >= np.asarray(self.lower)) & (pts <= np.asarray(self.upper)), axis=1)

    def to_dict(self):
        return {"box": {"lower": list(self.lower), "upper": list(self.upper)}}


@dataclass(frozen=True)
class BallComplement(JumpSet):
    """Jumps of Euclidean norm ``> r`` (or ``>= r`` when ``closed=True``)."""

    radius: float
    closed: bool = False

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")

    def _contains(self, pts):
        norms = np.linalg.norm(pts, axis=1)
        return norms >= self.radius if self.closed else norms > self.radius

    def to_dict(self):
        key = "ball_complement_closed" if self.closed else "ball_complement"
        return {key: self.radius}


@dataclass(frozen=True)
class Points(JumpSet):
    """A finite set of jump sizes, matched by exact equality."""

    points: tuple

    def __init__(self, points):
        arr = np.atleast_2d(np.asarray(points, dtype=float))
        object.__setattr__(self, "points", tuple(tuple(p) for p in arr))

    def _contains(self, pts):
        if not self.points:
            return np.zeros(len(pts), dtype=bool)
        ref = np.asarray(self.points)
        return np.any(np.all(pts[:, None, :] == ref[None, :, :], axis=2), axis=1)

    def to_dict(self):
        return {"points": [list(p) for p in self.points]}


@dataclass(frozen=True)
class Predicate(JumpSet):
    """Membership given by a callable ``f(z) -> bool`` on single points."""

    func: Callable = field(compare=False)

    def _contains(self, pts):
        return np.fromiter((bool(self.func(p)) for p in pts), dtype=bool, count=len(pts))


@dataclass(frozen=True)
class Union(JumpSet):
    parts: tuple

    def __init__(self, parts: Iterable[JumpSet]):
        object.__setattr__(self, "parts", tuple(parts))

    def _contains(self, pts):
        out = np.zeros(len(pts), dtype=bool)
        for s in self.parts:
            out |= s.contains(pts)
        return out

    def to_dict(self):
        return {"union": [s.to_dict() for s in self.parts]}


@dataclass(frozen=True)
class Intersection(JumpSet):
    parts: tuple

    def __init__(self, parts: Iterable[JumpSet]):
        object.__setattr__(self, "parts", tuple(parts))

    def _contains(self, pts):
        out = np.ones(len(pts), dtype=bool)
        for s in self.parts:
            out &= s.contains(pts)
        return out

    def to_dict(self):
        return {"intersection": [s.to_dict() for s in self.parts]}


@dataclass(frozen=True)
class Difference(JumpSet):
    """``base \\ removed``."""

    base: JumpSet
    removed: JumpSet

    def _contains(self, pts):
        return self.base.contains(pts) & ~self.removed.contains(pts)

    def to_dict(self):
        return {"difference": [self.base.to_dict(), self.removed.to_dict()]}


def complement(A: JumpSet) -> JumpSet:
    """``U_d \\ A``."""
    return Difference(FullSpace(), A)


def jumpset_from_dict(obj: dict) -> JumpSet:
    """Inverse of :meth:`JumpSet.to_dict`."""
    if not isinstance(obj, dict) or len(obj) == 0:
        raise ValueError(f"cannot parse jump set from {obj!r}")
    if "full" in obj:
        return FullSpace()
    if "rect" in obj:
        return Rectangle(obj["rect"])
    if "box" in obj:
        return Box(obj["box"]["lower"], obj["box"]["upper"])
    if "ball_complement" in obj:
        return BallComplement(float(obj["ball_complement"]))
    if "ball_complement_closed" in obj:
        return BallComplement(float(obj["ball_complement_closed"]), closed=True)
    if "points" in obj:
        return Points(obj["points"])
    if "union" in obj:
        return Union(jumpset_from_dict(o) for o in obj["union"])
    if "intersection" in obj:
        return Intersection(jumpset_from_dict(o) for o in obj["intersection"])
    if "difference" in obj:
        base, removed = obj["difference"]
        return Difference(jumpset_from_dict(base), jumpset_from_dict(removed))
    raise ValueError(f"unknown jump set kind in {obj!r}")


# --------------------------------------------------------------------------
# Measures
# --------------------------------------------------------------------------

class AtomicLevyMeasure:
    """A finite weighted sum of point masses on ``R_+^d \\ {0}``.

    Construction only checks array shapes. Admissibility of the atoms (in the
    orthant, away from the origin, positive finite weights) is reported by
    :meth:`problems`, so that parameter validation can list every defect.

    Parameters
    ----------
    points : array_like, shape (k, d)
        Atom locations.
    weights : array_like, shape (k,)
        Atom masses.
    dim : int, optional
        Ambient dimension; required when there are no atoms.
    """

    __slots__ = ("points", "weights", "dim")

    def __init__(self, points=(), weights=(), dim: int | None = None):
        pts = _as_points(points, dim)
        w = np.atleast_1d(np.asarray(weights, dtype=float)).reshape(-1)
        if len(w) != len(pts):
            raise ValueError(f"{len(pts)} atoms but {len(w)} weights")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "dim", pts.shape[1])

    def __setattr__(self, name, value):
        raise AttributeError("AtomicLevyMeasure is immutable")

    @classmethod
    def empty(cls, dim: int) -> "AtomicLevyMeasure":
        return cls(np.zeros((0, dim)), np.zeros(0), dim=dim)

    @classmethod
    def point_mass(cls, point, weight: float = 1.0) -> "AtomicLevyMeasure":
        p = np.atleast_1d(np.asarray(point, dtype=float))
        return cls(p[None, :], [weight], dim=len(p))

    @classmethod
    def from_atoms(cls, atoms: Sequence[tuple], dim: int | None = None) -> "AtomicLevyMeasure":
        """Build from ``[(point, weight), ...]``."""
        if len(atoms) == 0:
            if dim is None:
                raise ValueError("dimension must be given for an empty measure")
            return cls.empty(dim)
        pts = [np.atleast_1d(np.asarray(p, dtype=float)) for p, _ in atoms]
        return cls(np.vstack(pts), [w for _, w in atoms], dim=dim)

    # -- basic protocol ----------------------------------------------------

    def __len__(self):
        return len(self.weights)

    def __iter__(self):
        return zip(map(tuple, self.points), self.weights)

    def __eq__(self, other):
        if not isinstance(other, AtomicLevyMeasure):
            return NotImplemented
        return (self.dim == other.dim and np.array_equal(self.points, other.points)
                and np.array_equal(self.weights, other.weights))

    def __hash__(self):
        return hash((self.dim, self.points.tobytes(), self.weights.tobytes()))

    def __repr__(self):
        atoms = ", ".join(f"{tuple(p)}: {w:g}" for p, w in zip(self.points.tolist(), self.weights))
        return f"AtomicLevyMeasure(dim={self.dim}, {{{atoms}}})"

    def __add__(self, other: "AtomicLevyMeasure") -> "AtomicLevyMeasure":
        if other.dim != self.dim:
            raise ValueError("cannot add measures of different dimensions")
        return AtomicLevyMeasure(np.vstack([self.points, other.points]),
                                 np.concatenate([self.weights, other.weights]), dim=self.dim)

    @property
    def is_zero(self) -> bool:
        return len(self.weights) == 0

    def problems(self) -> list[str]:
        """Human readable admissibility defects; empty when the measure is fine."""
        out = []
        for k, (p, w) in enumerate(zip(self.points, self.weights)):
            if not np.all(np.isfinite(p)) or np.any(p < 0):
                out.append(f"atom {k} at {tuple(p)} lies outside the non-negative orthant")
            elif not np.any(p > 0):
                out.append(f"atom {k} sits at the origin")
            if not (np.isfinite(w) and w > 0):
                out.append(f"atom {k} has non-positive or non-finite weight {w}")
        return out

    # -- integrals -----------------------------------------------------------

    def _mask(self, A: JumpSet | None) -> np.ndarray:
        if A is None or isinstance(A, FullSpace):
            return np.ones(len(self.weights), dtype=bool)
        if len(self.weights) == 0:
            return np.zeros(0, dtype=bool)
        return A.contains(self.points)

    def mass(self, A: JumpSet | None = None) -> float:
        """``m(A)``; the total mass when ``A`` is omitted."""
        return float(np.sum(self.weights[self._mask(A)]))

    def exp_integral(self, lam, A: JumpSet | None = None) -> float:
        """``∫_A (1 - exp(-<lam, z>)) m(dz)``."""
        mask = self._mask(A)
        if not mask.any():
            return 0.0
        x = self.points[mask] @ np.asarray(lam, dtype=float)
        return float(np.sum(self.weights[mask] * -np.expm1(-x)))

    def first_moment_vector(self, A: JumpSet | None = None) -> np.ndarray:
        """``∫_A z m(dz)``."""
        mask = self._mask(A)
        return self.weights[mask] @ self.points[mask] if mask.any() else np.zeros(self.dim)

    def shifted_positive_moment(self, i: int, j: int) -> float:
        """``∫ (z_i - δ_ij)^+ m(dz)`` (0-based indices)."""
        shift = 1.0 if i == j else 0.0
        return float(np.sum(self.weights * np.maximum(self.points[:, i] - shift, 0.0)))

    def restrict(self, A: JumpSet) -> "AtomicLevyMeasure":
        """The measure ``m(· ∩ A)``."""
        mask = self._mask(A)
        return AtomicLevyMeasure(self.points[mask], self.weights[mask], dim=self.dim)

    def support_sup(self) -> float:
        """Largest atom norm, or 0 for the zero measure."""
        if self.is_zero:
            return 0.0
        return float(np.max(np.linalg.norm(self.points, axis=1)))

    def embed(self, dim: int) -> "AtomicLevyMeasure":
        """Pad every atom with zeros up to ``dim`` coordinates."""
        pts = np.zeros((len(self.weights), dim))
        pts[:, :self.dim] = self.points
        return AtomicLevyMeasure(pts, self.weights, dim=dim)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {"atoms": [{"point": list(map(float, p)), "weight": float(w)}
                          for p, w in zip(self.points, self.weights)]}

    @classmethod
    def from_dict(cls, obj: dict, dim: int | None = None) -> "AtomicLevyMeasure":
        atoms = obj.get("atoms", []) if isinstance(obj, dict) else None
        if atoms is None:
            raise ValueError(f"measure must be an object with an 'atoms' list, got {obj!r}")
        return cls.from_atoms([(a["point"], a["weight"]) for a in atoms], dim=dim)


def measure_vector(measures: Sequence[AtomicLevyMeasure], A: JumpSet) -> np.ndarray:
    """``(m_1(A), ..., m_d(A))``."""
    return np.array([m.mass(A) for m in measures], dtype=float)
