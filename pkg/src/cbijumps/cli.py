"""Command-line driver.

Exit status: 0 success (and every Monte Carlo cross-check within 3 SE),
1 domain or tolerance failure, 2 input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analytics as an
from .fixtures import NAMES as FIXTURES, fixture_path
from .measure import BallComplement, Box, FullSpace, JumpSet, Points, Rectangle
from .mechanisms import Mechanism, ModifiedMechanism
from .ode import OdeFailure
from .params import CBIParams, NotApplicable, irreducibility_radius, is_irreducible, derive_drift, \
    modified_drift_irreducible, validate
from . import simulate as sim

OK, FAIL, INPUT_ERROR = 0, 1, 2


class InputError(Exception):
    pass


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _emit(text: str, args, suffix: str = ""):
    if getattr(args, "out", None):
        path = Path(f"{args.out}{suffix}.csv")
        path.write_text(text)
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------
# Parsing helpers
# --------------------------------------------------------------------------

def load_params(source: str) -> CBIParams:
    """Read a parameter file; ``fixture:NAME`` selects a bundled fixture."""
    if source.startswith("fixture:"):
        name = source.split(":", 1)[1]
        if name not in FIXTURES:
            raise InputError(f"unknown fixture {name!r}; available: {', '.join(FIXTURES)}")
        text = fixture_path(name).read_text()
    else:
        path = Path(source)
        if not path.is_file():
            raise InputError(f"parameter file {source} does not exist")
        text = path.read_text()
    if not text.strip():
        raise InputError(f"parameter file {source} is empty")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed JSON in {source}: line {exc.lineno} column {exc.colno}: {exc.msg}")
    try:
        return CBIParams.from_dict(obj)
    except (ValueError, TypeError, KeyError) as exc:
        raise InputError(f"invalid parameter structure in {source}: {exc}")


def parse_floats(text: str, name: str, sort_check: bool = False) -> np.ndarray:
    try:
        vals = np.array([float(v) for v in text.split(",") if v.strip() != ""])
    except ValueError:
        raise InputError(f"--{name} expects comma separated numbers, got {text!r}")
    if vals.size == 0:
        raise InputError(f"--{name} is empty")
    if sort_check and np.any(np.diff(vals) <= 0):
        raise InputError(f"--{name} grid must be strictly increasing")
    return vals


def parse_set(text: str, p: CBIParams) -> JumpSet:
    """``rect:w1,..,wd`` | ``ball-complement:r`` | ``ball-complement-closed:r`` |
    ``atoms:i1,i2`` | ``full`` | ``box:l1,..,ld;u1,..,ud``.

    ``atoms`` indexes the concatenated atom list nu, mu_1, ..., mu_d from 0.
    """
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    try:
        if kind == "full":
            return FullSpace()
        if kind == "rect":
            w = parse_floats(rest, "set")
            if len(w) != p.d:
                raise InputError(f"rectangle needs {p.d} corners, got {len(w)}")
            return Rectangle(w)
        if kind == "box":
            lo, _, hi = rest.partition(";")
            lo, hi = parse_floats(lo, "set"), parse_floats(hi, "set")
            if len(lo) != p.d or len(hi) != p.d:
                raise InputError(f"box needs {p.d} lower and {p.d} upper bounds")
            return Box(lo, hi)
        if kind in ("ball-complement", "ball-complement-closed"):
            return BallComplement(float(rest), closed=kind.endswith("closed"))
        if kind == "atoms":
            table = sim._AtomTable(p)
            idx = [int(v) for v in rest.split(",") if v.strip()]
            if not idx or any(i < 0 or i >= len(table.points) for i in idx):
                raise InputError(f"atom indices must lie in [0, {len(table.points) - 1}], got {rest!r}")
            return Points(table.points[idx])
    except ValueError as exc:
        raise InputError(f"invalid --set {text!r}: {exc}")
    raise InputError(f"unknown set kind {kind!r} in --set {text!r}")


def parse_vec(text: str | None, d: int, name: str, default=None) -> np.ndarray:
    if text is None:
        if default is None:
            raise InputError(f"--{name} is required")
        return np.asarray(default, dtype=float)
    v = parse_floats(text, name)
    if len(v) != d:
        raise InputError(f"--{name} needs {d} values, got {len(v)}")
    if np.any(v < 0):
        raise InputError(f"--{name} must be non-negative")
    return v


def _sim_cfg(args, p, x, horizon) -> sim.SimConfig:
    return sim.SimConfig(p, x, horizon, step=args.step, n_paths=args.paths, seed=args.seed)


def _checked_params(args) -> CBIParams:
    p = load_params(args.params)
    rep = validate(p)
    if not rep.ok:
        sys.stderr.write(f"parameters are not admissible:\n{rep}\n")
        raise SystemExit(FAIL)
    return p


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_validate(args) -> int:
    p = load_params(args.params)
    rep = validate(p)
    print(str(rep))
    return OK if rep.ok else FAIL


def cmd_mechanism(args) -> int:
    p = _checked_params(args)
    lam = parse_vec(args.lam, p.d, "lam")
    mech = ModifiedMechanism(p, parse_set(args.set, p)) if args.set else Mechanism(p)
    phi = mech.phi(lam)
    rows = [[f"phi_{i + 1}", v] for i, v in enumerate(phi)] + [["psi", mech.psi(lam)],
                                                                ["in_D_phi", mech.in_D_phi(lam)]]
    _emit(_csv(["quantity", "value"], rows), args)
    return OK


def cmd_laplace(args) -> int:
    p = _checked_params(args)
    x = parse_vec(args.x, p.d, "x", np.zeros(p.d))
    lam = parse_vec(args.lam, p.d, "lam")
    ts = parse_floats(args.t, "t", sort_check=True)
    f = an.laplace_intX if args.integrated else an.laplace_X
    status = OK
    values = []
    for t in ts:
        try:
            values.append(f(p, x, lam, t))
        except OdeFailure as exc:
            sys.stderr.write(f"t={t}: {exc}\n")
            values.append(None)
            status = FAIL
    if not args.mc:
        _emit(_csv(["t", "analytic"], zip(ts, values)), args)
        return status
    Est = sim.LaplaceIntX if args.integrated else sim.LaplaceX
    ests = [Est(lam, t, f"t{k}") for k, t in enumerate(ts) if t > 0]
    rep = sim.run_batch(_sim_cfg(args, p, x, ts.max()), ests, workers=args.workers)
    rows = []
    for k, (t, v) in enumerate(zip(ts, values)):
        if t == 0:
            rows.append([t, v, v, 0.0, 0.0, True])
            continue
        e = rep[f"t{k}"]
        z = e.z_score(v) if v is not None else float("nan")
        ok = v is not None and z <= 3
        status = status if ok else FAIL
        rows.append([t, v, e.value, e.std_error, z, ok])
    _emit(_csv(["t", "analytic", "mc", "se", "abs_diff_over_se", "within_3se"], rows), args)
    return status


def cmd_first_jump(args) -> int:
    p = _checked_params(args)
    x = parse_vec(args.x, p.d, "x", np.zeros(p.d))
    A = parse_set(args.set or "full", p)
    ts = parse_floats(args.t, "t", sort_check=True)
    status = OK
    values = []
    try:
        law = an.FirstJumpLaw(p, A, float(ts.max()), stops=ts)
        values = [law.survival(t, x) for t in ts]
    except OdeFailure as exc:
        sys.stderr.write(f"{exc}\n")
        values = [None] * len(ts)
        status = FAIL
    if not args.mc:
        _emit(_csv(["t", "analytic"], zip(ts, values)), args)
        return status
    ests = [sim.SurvivalTau(A, t, f"t{k}") for k, t in enumerate(ts)]
    rep = sim.run_batch(_sim_cfg(args, p, x, max(ts.max(), 1e-12)), ests, workers=args.workers)
    rows = []
    for k, (t, v) in enumerate(zip(ts, values)):
        e = rep[f"t{k}"]
        z = e.z_score(v) if v is not None else float("nan")
        ok = v is not None and z <= 3
        if not ok:
            status = FAIL
        rows.append([t, v, e.value, e.std_error, z, ok])
    _emit(_csv(["t", "analytic", "mc", "se", "abs_diff_over_se", "within_3se"], rows), args)
    return status


def cmd_sup_jump(args) -> int:
    p = _checked_params(args)
    x = parse_vec(args.x, p.d, "x", np.zeros(p.d))
    rs = parse_floats(args.r, "r", sort_check=True)
    t = float(args.t)
    if np.any(rs <= 0) or not t > 0:
        raise InputError("radii and t must be positive")
    values = [an.sup_jump_norm_cdf(p, x, r, t) for r in rs]
    zero = an.sup_jump_zero_prob(p, x, t)
    status = OK
    if not args.mc:
        rows = [[r, v] for r, v in zip(rs, values)] + [[0.0, zero]]
        _emit(_csv(["r", "analytic"], rows), args)
        return status
    ests = [sim.SupNormCdf(r, t, f"r{k}") for k, r in enumerate(rs)]
    rep = sim.run_batch(_sim_cfg(args, p, x, t), ests, workers=args.workers)
    rows = []
    for k, (r, v) in enumerate(zip(rs, values)):
        e = rep[f"r{k}"]
        z = e.z_score(v)
        if z > 3:
            status = FAIL
        rows.append([r, v, e.value, e.std_error, z, z <= 3])
    _emit(_csv(["r", "analytic", "mc", "se", "abs_diff_over_se", "within_3se"], rows), args)
    return status


def cmd_tau_infinity(args) -> int:
    p = _checked_params(args)
    x = parse_vec(args.x, p.d, "x", np.zeros(p.d))
    A = parse_set(args.set or "full", p)
    res = an.prob_tau_infinite(p, x, A)
    _emit(_csv(["verdict", "probability", "reason"],
               [[res.verdict.value, res.probability, res.reason.replace(",", ";")]]), args)
    return OK


def cmd_rect_dichotomy(args) -> int:
    p = _checked_params(args)
    x = parse_vec(args.x, p.d, "x", np.zeros(p.d))
    A = parse_set(args.set, p)
    t = float(args.t)
    try:
        verdict = an.rect_sup_is_null(p, A, x, t).value
        status = OK
    except an.NotAnchoredError as exc:
        sys.stderr.write(f"rejected: {exc}\n")
        verdict = "Rejected"
        status = FAIL
    if not args.mc:
        _emit(_csv(["verdict"], [[verdict]]), args)
        return status
    rep = sim.run_batch(_sim_cfg(args, p, x, t), [sim.RectSupProb(A, t, "pi")], workers=args.workers)
    e = rep["pi"]
    _emit(_csv(["verdict", "mc", "se", "lower99", "upper99"],
               [[verdict, e.value, e.std_error, e.lower_bound(0.99), e.upper_bound(0.99)]]), args)
    if verdict == "Positive" and not e.lower_bound(0.99) > 0:
        status = FAIL
    if verdict == "Null" and e.successes:
        status = FAIL
    return status


def cmd_irreducibility(args) -> int:
    p = _checked_params(args)
    Bt = derive_drift(p).B_tilde
    irr = is_irreducible(Bt)
    try:
        r0 = irreducibility_radius(p)
    except NotApplicable as exc:
        _emit(_csv(["B_tilde_irreducible", "r0", "note"], [[irr, None, str(exc)]]), args)
        return OK
    rs = parse_floats(args.r, "r") if args.r else np.array([r0, 2 * r0, 10 * r0])
    rows = [[r, modified_drift_irreducible(p, r)] for r in rs]
    text = f"# B_tilde_irreducible={irr}\n# r0={_fmt(r0)}\n" + _csv(["r", "modified_irreducible"], rows)
    _emit(text, args)
    return OK if all(ok for r, ok in rows if r >= r0) else FAIL


def cmd_simulate(args) -> int:
    p = _checked_params(args)
    x = parse_vec(args.x, p.d, "x", np.zeros(p.d))
    T = float(args.t)
    cfg = _sim_cfg(args, p, x, T)
    ests = [sim.StateCoordinate(i, T, f"X{i + 1}") for i in range(p.d)]
    ests.append(sim.JumpCount(FullSpace(), T, "jumps"))
    rep = sim.run_batch(cfg, ests, workers=args.workers)
    m = an.mean(p, x, T)
    ej = an.expected_jump_count(p, x, FullSpace(), T)
    rows = []
    status = OK
    for i in range(p.d):
        e = rep[f"X{i + 1}"]
        rows.append([f"E X_{i + 1}(T)", m[i], e.value, e.std_error, e.z_score(m[i])])
    e = rep["jumps"]
    rows.append(["E J_T(U)", ej, e.value, e.std_error, e.z_score(ej)])
    if any(r[-1] > 3 for r in rows):
        status = FAIL
    text = _csv(["quantity", "analytic", "mc", "se", "abs_diff_over_se"], rows)
    text += "".join(f"# {k}={v}\n" for k, v in rep.diagnostics.items())
    _emit(text, args)
    if args.log_paths:
        _emit(sim.events_csv(cfg, range(args.log_paths)), args, "_events")
    return status


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cbijumps", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, mc=False):
        sp.add_argument("--params", required=True,
                        help="parameter JSON file, or fixture:NAME for a bundled fixture")
        sp.add_argument("--out", help="output prefix; CSV goes to PREFIX.csv (default stdout)")
        if mc:
            sp.add_argument("--mc", action="store_true", help="cross-validate by Monte Carlo")
            sp.add_argument("--seed", type=int, default=0)
            sp.add_argument("--paths", type=int, default=100_000)
            sp.add_argument("--step", type=float, default=None, help="Euler step (default 1e-3 T)")
            sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("validate", help="check admissibility")
    common(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("mechanism", help="evaluate phi and psi")
    sp.add_argument("action", choices=["eval"])
    common(sp)
    sp.add_argument("--lam", required=True)
    sp.add_argument("--set", help="evaluate the mechanisms with the jumps in this set removed")
    sp.set_defaults(func=cmd_mechanism)

    sp = sub.add_parser("laplace", help="Laplace transform of X_t or of its time integral")
    common(sp, mc=True)
    sp.add_argument("--x")
    sp.add_argument("--lam", required=True)
    sp.add_argument("--t", required=True)
    sp.add_argument("--integrated", action="store_true")
    sp.set_defaults(func=cmd_laplace)

    sp = sub.add_parser("first-jump", help="survival function of the first jump time in a set")
    common(sp, mc=True)
    sp.add_argument("--x")
    sp.add_argument("--set")
    sp.add_argument("--t", required=True)
    sp.set_defaults(func=cmd_first_jump)

    sp = sub.add_parser("sup-jump", help="distribution function of the largest jump norm")
    common(sp, mc=True)
    sp.add_argument("--x")
    sp.add_argument("--r", required=True)
    sp.add_argument("--t", required=True)
    sp.set_defaults(func=cmd_sup_jump)

    sp = sub.add_parser("tau-infinity", help="probability that no jump in a set ever occurs")
    common(sp)
    sp.add_argument("--x")
    sp.add_argument("--set")
    sp.set_defaults(func=cmd_tau_infinity)

    sp = sub.add_parser("rect-dichotomy", help="null/positive verdict for the coordinate-wise sup of jumps")
    common(sp, mc=True)
    sp.add_argument("--x")
    sp.add_argument("--set", required=True)
    sp.add_argument("--t", default="1")
    sp.set_defaults(func=cmd_rect_dichotomy)

    sp = sub.add_parser("irreducibility", help="irreducibility radius and per-radius check")
    common(sp)
    sp.add_argument("--r")
    sp.set_defaults(func=cmd_irreducibility)

    sp = sub.add_parser("simulate", help="simulate paths and compare moments with their formulas")
    common(sp, mc=True)
    sp.add_argument("--x")
    sp.add_argument("--t", required=True, help="horizon")
    sp.add_argument("--log-paths", type=int, default=0, help="dump the event log of the first N paths")
    sp.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return int(args.func(args))
    except InputError as exc:
        sys.stderr.write(f"input error: {exc}\n")
        return INPUT_ERROR
    except SystemExit as exc:
        return int(exc.code)


if __name__ == "__main__":
    sys.exit(main())
