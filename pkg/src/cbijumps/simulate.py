"""Monte Carlo simulation of the jump-diffusion SDE representation.

Jumps are simulated raw: immigration jumps by an exact Poisson clock with
rate ``nu(U)``, branching jumps of type ``l`` by thinning the state-dependent
rate ``X_l mu_l(U)``. The compensator of the branching jumps is therefore
moved into the drift, whose matrix is ``B~ - ∫ z mu(dz)`` column-wise. The
continuous part is advanced by Euler-Maruyama between event times.
"""

from __future__ import annotations

import io
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ._kernel import simulate_chunk
from ._validation import as_nonneg_vector
from .analytics import expected_jump_count
from .measure import FullSpace, JumpSet
from .params import CBIParams, modify_for_set

IMMIGRATION = -1


@dataclass(frozen=True, eq=False)
class SimConfig:
    """Simulation settings.

    Parameters
    ----------
    params : CBIParams
    x0 : array_like
        Initial state.
    horizon : float
        Simulation end time ``T``.
    step : float, optional
        Euler step ``h``; defaults to ``1e-3 * T``.
    n_paths : int
    seed : int
        Unsigned 64-bit seed.
    record_states : bool
        Keep the state on the full time grid (single paths only).
    """

    params: CBIParams
    x0: np.ndarray
    horizon: float
    step: float | None = None
    n_paths: int = 100_000
    seed: int = 0
    record_states: bool = False

    def __post_init__(self):
        object.__setattr__(self, "x0", as_nonneg_vector(self.x0, self.params.d, "x0"))
        T = float(self.horizon)
        if not (T > 0 and np.isfinite(T)):
            raise ValueError(f"horizon must be positive, got {T}")
        h = 1e-3 * T if self.step is None else float(self.step)
        if not (0 < h <= T):
            raise ValueError(f"step must lie in (0, T], got {h}")
        if int(self.n_paths) < 1:
            raise ValueError("n_paths must be at least 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "horizon", T)
        object.__setattr__(self, "step", h)
        object.__setattr__(self, "n_paths", int(self.n_paths))
        object.__setattr__(self, "seed", int(self.seed))

    def grid(self, extra=()) -> np.ndarray:
        n = max(1, int(math.ceil(self.horizon / self.step - 1e-9)))
        g = np.minimum(np.arange(n + 1) * self.step, self.horizon)
        g[-1] = self.horizon
        extra = [float(e) for e in extra if 0 < e < self.horizon]
        return np.union1d(g, extra) if extra else g


@dataclass(frozen=True)
class JumpEvent:
    time: float
    size: np.ndarray
    channel: int  # IMMIGRATION or the 0-based branching type

    @property
    def is_immigration(self) -> bool:
        return self.channel == IMMIGRATION


@dataclass
class PathRecord:
    events: list
    terminal: np.ndarray
    times: np.ndarray | None = None
    states: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class McEstimate:
    """Sample mean with its standard error.

    For probability estimates ``successes`` holds the count and
    ``std_error = sqrt(p (1 - p) / n)``.
    """

    value: float
    std_error: float
    n: int
    successes: int | None = None

    def upper_bound(self, level: float = 0.99) -> float:
        """One-sided Clopper-Pearson upper bound (probability estimates only)."""
        k, n = self._count()
        if k == n:
            return 1.0
        return float(stats.beta.ppf(level, k + 1, n - k))

    def lower_bound(self, level: float = 0.99) -> float:
        """One-sided Clopper-Pearson lower bound (probability estimates only)."""
        k, n = self._count()
        if k == 0:
            return 0.0
        return float(stats.beta.ppf(1 - level, k, n - k + 1))

    def _count(self):
        if self.successes is None:
            raise ValueError("confidence bounds are only defined for probability estimates")
        return self.successes, self.n

    def z_score(self, reference: float) -> float:
        diff = abs(self.value - reference)
        if self.std_error == 0:
            return 0.0 if diff == 0 else math.inf
        return diff / self.std_error


def _probability(vals: np.ndarray) -> McEstimate:
    n = len(vals)
    k = int(np.count_nonzero(vals))
    p = k / n
    return McEstimate(p, math.sqrt(p * (1 - p) / n), n, k)


def _sample_mean(vals: np.ndarray) -> McEstimate:
    n = len(vals)
    se = float(np.std(vals, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return McEstimate(float(np.mean(vals)), se, n)


# --------------------------------------------------------------------------
# Estimators: per-path statistics computed from a chunk of simulated paths
# --------------------------------------------------------------------------

@dataclass
class _Chunk:
    n: int
    ev_time: np.ndarray
    ev_atom: np.ndarray
    ev_path: np.ndarray
    atoms: "_AtomTable"
    obs_times: np.ndarray
    states: np.ndarray
    integrals: np.ndarray

    def obs_index(self, t: float) -> int:
        hit = np.flatnonzero(self.obs_times == t)
        if not hit.size:
            raise KeyError(f"time {t} was not observed")
        return int(hit[0])

    def before(self, t: float) -> np.ndarray:
        return self.ev_time <= t


class Estimator:
    """Base class; subclasses return one statistic per path."""

    probability = True
    obs_time: float | None = None
    max_time: float = 0.0

    @property
    def name(self) -> str:  # pragma: no cover - abstract
        raise NotImplementedError

    def per_path(self, ch: _Chunk) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def reduce(self, vals: np.ndarray) -> McEstimate:
        return _probability(vals) if self.probability else _sample_mean(vals)


class SurvivalTau(Estimator):
    """Indicator that no jump with size in ``A`` occurs on ``(0, t]``."""

    def __init__(self, A: JumpSet, t: float, label: str | None = None):
        self.A, self.t, self.max_time = A, float(t), float(t)
        self._label = label

    @property
    def name(self):
        return self._label or f"survival_tau[{self.t:g}]"

    def per_path(self, ch):
        hit = ch.atoms.member(self.A)[ch.ev_atom] & ch.before(self.t)
        return np.bincount(ch.ev_path[hit], minlength=ch.n) == 0


class JumpCount(Estimator):
    """Number of jumps with size in ``A`` on ``(0, t]``."""

    probability = False

    def __init__(self, A: JumpSet, t: float, label: str | None = None):
        self.A, self.t, self.max_time = A, float(t), float(t)
        self._label = label

    @property
    def name(self):
        return self._label or f"jump_count[{self.t:g}]"

    def per_path(self, ch):
        hit = ch.atoms.member(self.A)[ch.ev_atom] & ch.before(self.t)
        return np.bincount(ch.ev_path[hit], minlength=ch.n).astype(float)


class SupNormCdf(Estimator):
    """Indicator that the largest jump norm on ``(0, t]`` is at most ``r``."""

    def __init__(self, r: float, t: float, label: str | None = None):
        self.r, self.t, self.max_time = float(r), float(t), float(t)
        self._label = label

    @property
    def name(self):
        return self._label or f"sup_norm_cdf[r={self.r:g},t={self.t:g}]"

    def per_path(self, ch):
        return max_event_norm(ch, self.t) <= self.r


class SupNormEquals(Estimator):
    """Indicator that the largest jump norm on ``(0, t]`` equals ``value`` exactly."""

    def __init__(self, value: float, t: float, label: str | None = None):
        self.value, self.t, self.max_time = float(value), float(t), float(t)
        self._label = label

    @property
    def name(self):
        return self._label or f"sup_norm_equals[{self.value:g},t={self.t:g}]"

    def per_path(self, ch):
        return max_event_norm(ch, self.t) == self.value


class RectSupProb(Estimator):
    """Indicator that the coordinate-wise supremum of jumps on ``(0, t]`` lies in ``A``.

    The supremum is the zero vector on paths without jumps, which never lies
    in a jump set.
    """

    def __init__(self, A: JumpSet, t: float, label: str | None = None):
        self.A, self.t, self.max_time = A, float(t), float(t)
        self._label = label

    @property
    def name(self):
        return self._label or f"rect_sup_prob[{self.t:g}]"

    def per_path(self, ch):
        return self.A.contains(coordinate_sup(ch, self.t))


class BranchingBeforeImmigration(Estimator):
    """Indicator that a branching jump of type ``l`` precedes every immigration jump."""

    def __init__(self, l: int, t: float, label: str | None = None):
        self.l, self.t, self.max_time = int(l), float(t), float(t)
        self._label = label

    @property
    def name(self):
        return self._label or f"branching{self.l}_before_immigration[{self.t:g}]"

    def per_path(self, ch):
        ch_of = ch.atoms.channel[ch.ev_atom]
        keep = ch.before(self.t)
        first_imm = np.full(ch.n, np.inf)
        first_br = np.full(ch.n, np.inf)
        sel = keep & (ch_of == IMMIGRATION)
        np.minimum.at(first_imm, ch.ev_path[sel], ch.ev_time[sel])
        sel = keep & (ch_of == self.l)
        np.minimum.at(first_br, ch.ev_path[sel], ch.ev_time[sel])
        return first_br < first_imm


class LaplaceX(Estimator):
    """``exp(-<lam, X_t>)`` per path."""

    probability = False

    def __init__(self, lam, t: float, label: str | None = None):
        self.lam = np.asarray(lam, dtype=float)
        self.t = self.obs_time = self.max_time = float(t)
        self._label = label

    @property
    def name(self):
        return self._label or f"laplace_X[{self.t:g}]"

    def per_path(self, ch):
        return np.exp(-ch.states[:, ch.obs_index(self.t)] @ self.lam)


class LaplaceIntX(Estimator):
    """``exp(-<lam~, ∫_0^t X_u du>)`` per path."""

    probability = False

    def __init__(self, lam, t: float, label: str | None = None):
        self.lam = np.asarray(lam, dtype=float)
        self.t = self.obs_time = self.max_time = float(t)
        self._label = label

    @property
    def name(self):
        return self._label or f"laplace_intX[{self.t:g}]"

    def per_path(self, ch):
        return np.exp(-ch.integrals[:, ch.obs_index(self.t)] @ self.lam)


class StateCoordinate(Estimator):
    """``X_{t, i}`` per path."""

    probability = False

    def __init__(self, i: int, t: float, label: str | None = None):
        self.i = int(i)
        self.t = self.obs_time = self.max_time = float(t)
        self._label = label

    @property
    def name(self):
        return self._label or f"X{self.i}[{self.t:g}]"

    def per_path(self, ch):
        return ch.states[:, ch.obs_index(self.t), self.i].copy()


def max_event_norm(ch: _Chunk, t: float) -> np.ndarray:
    out = np.zeros(ch.n)
    sel = ch.before(t)
    np.maximum.at(out, ch.ev_path[sel], ch.atoms.norm[ch.ev_atom[sel]])
    return out


def coordinate_sup(ch: _Chunk, t: float) -> np.ndarray:
    out = np.zeros((ch.n, ch.atoms.points.shape[1]))
    sel = ch.before(t)
    np.maximum.at(out, ch.ev_path[sel], ch.atoms.points[ch.ev_atom[sel]])
    return out


# --------------------------------------------------------------------------
# Batch runner
# --------------------------------------------------------------------------

class _AtomTable:
    """All jump sizes: immigration atoms first, then each branching type in order."""

    def __init__(self, params: CBIParams):
        pts = [params.nu.points] + [m.points for m in params.mu]
        self.points = np.vstack(pts) if pts else np.zeros((0, params.d))
        self.channel = np.concatenate(
            [np.full(len(params.nu), IMMIGRATION)] + [np.full(len(m), l) for l, m in enumerate(params.mu)]
        ).astype(np.int64)
        self.norm = np.linalg.norm(self.points, axis=1)
        self._cache = {}

    def member(self, A: JumpSet) -> np.ndarray:
        key = id(A)
        if key not in self._cache:
            self._cache[key] = (A, A.contains(self.points) if len(self.points) else np.zeros(0, bool))
        return self._cache[key][1]


class _Prepared:
    def __init__(self, cfg: SimConfig, obs_times=()):
        p = cfg.params
        d = p.d
        self.cfg = cfg
        self.atoms = _AtomTable(p)
        obs = sorted({float(t) for t in obs_times if 0 <= t <= cfg.horizon})
        self.grid = cfg.grid(obs)
        self.obs_times = np.array(obs)
        self.obs_idx = np.full(len(self.grid), -1, dtype=np.int64)
        for j, t in enumerate(obs):
            self.obs_idx[int(np.flatnonzero(self.grid == t)[0])] = j
        self.x0 = cfg.x0
        self.c = p.c.astype(float)
        self.beta = p.beta.astype(float)
        self.Bd = np.ascontiguousarray(modify_for_set(p, FullSpace()).base.B)
        nu = p.nu
        self.nu_pts = np.ascontiguousarray(nu.points, dtype=float)
        self.nu_tot = float(nu.weights.sum())
        self.nu_cum = (np.cumsum(nu.weights) / self.nu_tot) if self.nu_tot > 0 else np.zeros(0)
        self.mu_pts = np.ascontiguousarray(
            np.vstack([m.points for m in p.mu]) if any(len(m) for m in p.mu) else np.zeros((0, d)))
        self.mu_off = np.concatenate([[0], np.cumsum([len(m) for m in p.mu])]).astype(np.int64)
        self.mu_tot = np.array([m.weights.sum() for m in p.mu], dtype=float)
        cums = [np.cumsum(m.weights) / m.weights.sum() if len(m) else np.zeros(0) for m in p.mu]
        self.mu_cum = np.concatenate(cums) if cums else np.zeros(0)
        try:
            self.expected_events = expected_jump_count(p, cfg.x0, FullSpace(), cfg.horizon)
        except OverflowError:
            self.expected_events = 1e3
        if not np.isfinite(self.expected_events):
            self.expected_events = 1e3

    def run(self, first: int, n: int) -> tuple:
        d = self.cfg.params.d
        n_obs = len(self.obs_times)
        cap = int(n * (2.0 * self.expected_events + 8.0)) + 1024
        while True:
            ev_time = np.empty(cap)
            ev_atom = np.empty(cap, dtype=np.int64)
            ev_path = np.empty(cap, dtype=np.int64)
            states = np.zeros((n, n_obs, d))
            integrals = np.zeros((n, n_obs, d))
            diag = np.zeros(3, dtype=np.int64)
            total = simulate_chunk(first, n, np.uint64(self.cfg.seed), self.grid, self.obs_idx, self.x0,
                                   self.c, self.beta, self.Bd, self.nu_pts, self.nu_cum, self.nu_tot,
                                   self.mu_pts, self.mu_off, self.mu_cum, self.mu_tot,
                                   ev_time, ev_atom, ev_path, states, integrals, diag)
            if total <= cap:
                break
            cap = int(max(2 * cap, 1.25 * total * n))
        ch = _Chunk(n, ev_time[:total], ev_atom[:total], ev_path[:total], self.atoms,
                    self.obs_times, states, integrals)
        return ch, diag


@dataclass
class BatchReport:
    estimates: dict
    diagnostics: dict
    per_path: dict | None = None

    def __getitem__(self, name) -> McEstimate:
        return self.estimates[name]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("estimator,value,std_error,n\n")
        for name, e in self.estimates.items():
            buf.write(f"{name},{e.value:.17g},{e.std_error:.17g},{e.n}\n")
        return buf.getvalue()


def run_batch(cfg: SimConfig, estimators, workers: int = 1, chunk_size: int = 4096,
              keep_per_path: bool = False) -> BatchReport:
    """Simulate ``cfg.n_paths`` paths and evaluate every estimator.

    Paths are split into fixed chunks of ``chunk_size``; each chunk is an
    independent work unit and results are concatenated in path order, so
    the report is bit-identical for any number of ``workers``.
    """
    estimators = list(estimators)
    names = [e.name for e in estimators]
    if len(set(names)) != len(names):
        raise ValueError(f"estimator names must be unique: {names}")
    for e in estimators:
        if e.max_time > cfg.horizon * (1 + 1e-12):
            raise ValueError(f"{e.name}: time {e.max_time} beyond the horizon {cfg.horizon}")
    prep = _Prepared(cfg, [e.obs_time for e in estimators if e.obs_time is not None])
    starts = list(range(0, cfg.n_paths, chunk_size))

    def work(first):
        n = min(chunk_size, cfg.n_paths - first)
        ch, diag = prep.run(first, n)
        return [e.per_path(ch) for e in estimators], diag, len(ch.ev_time)

    if workers <= 1:
        results = [work(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, starts))
    diag = np.sum([r[1] for r in results], axis=0)
    vals = {name: np.concatenate([r[0][k] for r in results]) for k, name in enumerate(names)}
    estimates = {e.name: e.reduce(vals[e.name]) for e in estimators}
    diagnostics = {"floor_corrections": int(diag[0]), "thinning_restarts": int(diag[1]),
                   "substeps": int(diag[2]), "events": int(sum(r[2] for r in results))}
    if diag[2] and diag[0] > 0.01 * diag[2]:
        warnings.warn(f"state floored at 0 in {diag[0]} of {diag[2]} substeps", RuntimeWarning)
    return BatchReport(estimates, diagnostics, vals if keep_per_path else None)


# --------------------------------------------------------------------------
# Convenience wrappers
# --------------------------------------------------------------------------

def simulate_path(cfg: SimConfig, path_index: int) -> PathRecord:
    """Simulate one path; identical to that path inside any batch with the same seed."""
    prep = _Prepared(cfg, cfg.grid() if cfg.record_states else [cfg.horizon])
    ch, diag = prep.run(int(path_index), 1)
    pts, chan = prep.atoms.points, prep.atoms.channel
    events = [JumpEvent(float(t), pts[a].copy(), int(chan[a])) for t, a in zip(ch.ev_time, ch.ev_atom)]
    terminal = ch.states[0, -1].copy()
    rec = PathRecord(events, terminal,
                     diagnostics={"floor_corrections": int(diag[0]), "thinning_restarts": int(diag[1]),
                                  "substeps": int(diag[2])})
    if cfg.record_states:
        rec.times = prep.obs_times.copy()
        rec.states = ch.states[0].copy()
    return rec


def events_csv(cfg: SimConfig, paths) -> str:
    """Event log ``path,time,channel,size_1..size_d``; channel is ``immigration`` or ``branching<l>``."""
    buf = io.StringIO()
    d = cfg.params.d
    buf.write(",".join(["path", "time", "channel"] + [f"size_{i + 1}" for i in range(d)]) + "\n")
    for i in paths:
        for ev in simulate_path(cfg, i).events:
            chan = "immigration" if ev.is_immigration else f"branching{ev.channel + 1}"
            buf.write(",".join([str(i), f"{ev.time:.17g}", chan] + [f"{v:.17g}" for v in ev.size]) + "\n")
    return buf.getvalue()


def estimate_survival_tau(cfg: SimConfig, A: JumpSet, t: float, **kw) -> McEstimate:
    return run_batch(cfg, [SurvivalTau(A, t, "est")], **kw)["est"]


def estimate_jump_count(cfg: SimConfig, A: JumpSet, t: float, **kw) -> McEstimate:
    return run_batch(cfg, [JumpCount(A, t, "est")], **kw)["est"]


def estimate_sup_norm_cdf(cfg: SimConfig, r: float, t: float, **kw) -> McEstimate:
    return run_batch(cfg, [SupNormCdf(r, t, "est")], **kw)["est"]


def estimate_rect_sup_prob(cfg: SimConfig, A: JumpSet, t: float, **kw) -> McEstimate:
    return run_batch(cfg, [RectSupProb(A, t, "est")], **kw)["est"]
