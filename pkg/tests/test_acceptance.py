"""Acceptance criteria, one test per criterion.

Each test records a pass/fail line that is printed in the terminal summary
(``criterion N: PASS|FAIL ...``). Run directly with ``python3 tests/test_acceptance.py``.
"""

import itertools
import time
from unittest import mock

import numpy as np
import pytest

import cbijumps.analytics as an
from cbijumps import (AtomicLevyMeasure, BallComplement, Box, CBIParams, FullSpace, Mechanism,
                      ModifiedMechanism, Points, Rectangle, embed_2d,
                      irreducibility_radius, is_irreducible, laplace_intX, laplace_X, limit_vtilde,
                      load_fixture, solve_v, solve_vtilde, solve_vtilde_A, survival_tau)
from cbijumps.ode import LimitStatus, OdeControl
from cbijumps.params import derive_drift, modified_drift_irreducible
from cbijumps import simulate as sim
from conftest import random_params, record


def _one_type(c=1.0, b=0.0):
    return CBIParams(c=[c], beta=[0.0], B=[[b]], nu=AtomicLevyMeasure.empty(1),
                     mu=[AtomicLevyMeasure.empty(1)])


# --------------------------------------------------------------------------
# 1. Riccati closed form
# --------------------------------------------------------------------------

def riccati(b, lam, t, c=1.0):
    # v' = b v - c v^2, v(0) = lam
    if b == 0:
        return lam / (1 + c * lam * t)
    e = np.exp(b * t)
    return b * lam * e / (b + c * lam * (e - 1))


# default rtol = 1e-8 allows local errors near 1e-7 when v is about 10, so the
# absolute 1e-8 bounds of the closed-form checks use tighter tolerances
TIGHT = OdeControl(atol=1e-12, rtol=1e-10)


def _riccati_error(ctrl):
    ts = np.linspace(0, 5, 501)
    worst = 0.0
    for b, lam in itertools.product([-1.0, 0.0, 1.0], [0.5, 2.0, 10.0]):
        sol = solve_v(Mechanism(_one_type(1.0, b)), [lam], 5.0, ctrl)
        worst = max(worst, np.max(np.abs(sol(ts)[:, 0] - riccati(b, lam, ts))))
        # the adaptive grid itself
        worst = max(worst, np.max(np.abs(sol.values[:, 0] - riccati(b, lam, sol.grid))))
    return worst


def test_criterion_1_riccati():
    t0 = time.perf_counter()
    worst = _riccati_error(TIGHT)
    elapsed = time.perf_counter() - t0
    default = _riccati_error(None)
    ok = worst <= 1e-8 and elapsed < 1.0
    record(1, ok, f"max error {worst:.2e} (rtol 1e-10), {elapsed:.2f} s; default tolerances give {default:.2e}")
    assert worst <= 1e-8
    assert elapsed < 1.0


# --------------------------------------------------------------------------
# 2. tanh closed form and its limit
# --------------------------------------------------------------------------

def test_criterion_2_tanh():
    ts = np.linspace(0, 10, 1001)
    mech = Mechanism(_one_type(1.0, 0.0))
    worst, default, worst_res, limits_ok = 0.0, 0.0, 0.0, True
    for lt in [1.0, 4.0]:
        exact = np.sqrt(lt) * np.tanh(np.sqrt(lt) * ts)
        sol = solve_vtilde(mech, [lt], 10.0, TIGHT)
        worst = max(worst, np.max(np.abs(sol(ts)[:, 0] - exact)))
        sol = solve_vtilde(mech, [lt], 10.0)
        default = max(default, np.max(np.abs(sol(ts)[:, 0] - exact)))
        lim = limit_vtilde(mech, [lt])
        limits_ok &= lim.status is LimitStatus.FINITE and abs(lim.value[0] - np.sqrt(lt)) <= 1e-7
        worst_res = max(worst_res, lim.residual)
    ok = worst <= 1e-8 and limits_ok and worst_res <= 1e-7
    record(2, ok, f"max error {worst:.2e} (rtol 1e-10; default tolerances give {default:.2e}), "
                  f"limit finite {limits_ok}, residual {worst_res:.2e}")
    assert worst <= 1e-8
    assert limits_ok
    assert worst_res <= 1e-7


# --------------------------------------------------------------------------
# 3. Pure immigration
# --------------------------------------------------------------------------

def test_criterion_3_pure_immigration():
    base = load_fixture("pure_immigration")
    nu2 = AtomicLevyMeasure([[0.2, 0.0], [1.0, 1.0], [0.0, 3.0]], [0.4, 1.3, 0.25])
    fixtures = [base, base.replace(nu=nu2), base.replace(nu=nu2, c=np.array([0.7, 0.2]),
                                                          B=np.array([[-1.0, 0.3], [0.2, -0.5]]))]
    sets = [FullSpace(), Rectangle([1, 1]), BallComplement(0.9), BallComplement(1.0, closed=True),
            Points([[1.0, 1.0]]), Box([0.1, 0.0], [2.0, 0.5])]
    worst = 0.0
    for p in fixtures:
        for A in sets:
            nuA = p.nu.mass(A)
            for x in ([0.0, 0.0], [1.0, 2.0]):
                for t in [0.0, 0.5, 1.0, 3.0]:
                    worst = max(worst, abs(survival_tau(p, x, A, t) - np.exp(-nuA * t)))
    record(3, worst <= 1e-12, f"max error {worst:.2e}")
    assert worst <= 1e-12


# --------------------------------------------------------------------------
# 4. Embedding identity
# --------------------------------------------------------------------------

def test_criterion_4_embedding():
    p = load_fixture("two_type")
    pe = embed_2d(p)
    worst = 0.0
    xs = [[0.0, 0.0], [1.0, 0.5], [2.0, 3.0]]
    lams = [[0.3, 0.1], [1.0, 1.0], [0.0, 2.5]]
    for x, lt, t in itertools.product(xs, lams, [0.25, 1.0, 3.0]):
        a = laplace_intX(p, x, lt, t)
        b = laplace_X(pe, list(x) + [0.0, 0.0], [0.0, 0.0] + list(lt), t)
        worst = max(worst, abs(a - b))
    record(4, worst <= 1e-8, f"max difference {worst:.2e} over 27 points")
    assert worst <= 1e-8


# --------------------------------------------------------------------------
# 5. Inverse mechanism
# --------------------------------------------------------------------------

def _subcritical(d, rng):
    p = random_params(rng, d)
    # make B~ strictly diagonally dominant so phi is a bijection of the orthant
    Bt = derive_drift(p).B_tilde
    off = np.abs(Bt - np.diag(np.diag(Bt))).sum(axis=0)
    B = p.B.copy()
    B[np.diag_indices(d)] -= np.maximum(0, np.diag(Bt) + off + 0.5)
    return p.replace(B=B)


def test_criterion_5_inverse_phi():
    rng = np.random.default_rng(5)
    worst = 0.0
    for d in (1, 2, 3):
        p = _subcritical(d, rng)
        mech = Mechanism(p)
        if d == 1:
            grid = np.logspace(-2, 2, 27)[:, None]
        elif d == 3:
            grid = np.array(list(itertools.product([0.05, 1.0, 20.0], repeat=3)))
        else:
            grid = 10.0 ** rng.uniform(-2, 2, (27, 2))
        for lam in grid:
            worst = max(worst, np.max(np.abs(mech.phi(mech.inverse_phi(lam)) - lam)))
    square = abs(Mechanism(_one_type(1.0, 0.0)).inverse_phi([4.0])[0] - 2.0)
    ok = worst <= 1e-10 and square <= 1e-10
    record(5, ok, f"max residual {worst:.2e}, |inverse_phi(4) - 2| = {square:.1e}")
    assert worst <= 1e-10
    assert square <= 1e-10


# --------------------------------------------------------------------------
# 6-8. Monte Carlo cross-validation on the two-type fixture
# --------------------------------------------------------------------------

MC_X0 = np.array([1.0, 0.5])
MC_A = Rectangle([1.0, 1.0])
MC_TIMES = (0.5, 1.0, 2.0)
MC_RADII = (0.5, 1.0, 2.0)
MC_T_SUP = 1.0


def _mc_estimators():
    ests = [sim.SurvivalTau(MC_A, t, f"surv{t}") for t in MC_TIMES]
    ests += [sim.JumpCount(MC_A, t, f"count{t}") for t in MC_TIMES]
    ests += [sim.SupNormCdf(r, MC_T_SUP, f"sup{r}") for r in MC_RADII]
    return ests


@pytest.fixture(scope="module")
def two_type_run():
    p = load_fixture("two_type")
    cfg = sim.SimConfig(p, MC_X0, horizon=2.0, step=1e-3, n_paths=100_000, seed=2024)
    t0 = time.perf_counter()
    rep = sim.run_batch(cfg, _mc_estimators())
    return p, rep, time.perf_counter() - t0


def test_criterion_6_survival_mc(two_type_run):
    p, rep, elapsed = two_type_run
    zs = [rep[f"surv{t}"].z_score(survival_tau(p, MC_X0, MC_A, t)) for t in MC_TIMES]
    ok = max(zs) <= 3 and elapsed <= 60
    record(6, ok, f"|diff|/SE = {', '.join(f'{z:.2f}' for z in zs)}; {elapsed:.1f} s")
    assert max(zs) <= 3
    assert elapsed <= 60


def test_criterion_7_jump_count_mc(two_type_run):
    p, rep, _ = two_type_run
    zs = [rep[f"count{t}"].z_score(an.expected_jump_count(p, MC_X0, MC_A, t)) for t in MC_TIMES]
    record(7, max(zs) <= 3, f"|diff|/SE = {', '.join(f'{z:.2f}' for z in zs)}")
    assert max(zs) <= 3


def test_criterion_8_sup_jump(two_type_run):
    p, rep, _ = two_type_run
    # shared code path: the sup-norm law is the survival of the ball complement
    calls = []
    real = an.survival_tau

    def spy(params, x, A, t, ctrl=None):
        calls.append(A)
        return real(params, x, A, t, ctrl)

    with mock.patch.object(an, "survival_tau", spy):
        vals = [an.sup_jump_norm_cdf(p, MC_X0, r, MC_T_SUP) for r in MC_RADII]
    shared = [isinstance(A, BallComplement) and not A.closed and A.radius == r
              for A, r in zip(calls, MC_RADII)]
    identical = all(v == survival_tau(p, MC_X0, BallComplement(r), MC_T_SUP) for v, r in zip(vals, MC_RADII))
    zs = [rep[f"sup{r}"].z_score(v) for r, v in zip(MC_RADII, vals)]
    ok = len(calls) == 3 and all(shared) and identical and max(zs) <= 3
    record(8, ok, f"shared path {all(shared)}, identical {identical}, "
                  f"|diff|/SE = {', '.join(f'{z:.2f}' for z in zs)}")
    assert len(calls) == 3 and all(shared)
    assert identical
    assert max(zs) <= 3


# --------------------------------------------------------------------------
# 9. Rectangles not anchored at zero
# --------------------------------------------------------------------------

def test_criterion_9_remark56():
    p = load_fixture("remark56")
    A = Box([0.5, 0.5], [1.0, 1.0])
    B = Rectangle([0.5, 1.0])
    cfg = sim.SimConfig(p, [0.0, 0.0], horizon=1.0, step=1e-3, n_paths=100_000, seed=56)
    rep = sim.run_batch(cfg, [sim.RectSupProb(A, 1.0, "A"), sim.RectSupProb(B, 1.0, "B")])
    upper_A = rep["A"].upper_bound(0.99)
    lower_B = rep["B"].lower_bound(0.99)
    verdict_B = an.rect_sup_is_null(p, B, [0.0, 0.0], 1.0)
    try:
        an.rect_sup_is_null(p, A, [0.0, 0.0], 1.0)
        rejected = False
    except an.NotAnchoredError:
        rejected = True
    # sup lands in A exactly when both atoms have been hit: inclusion-exclusion of survivals
    x0 = [0.0, 0.0]
    exact_A = (1 - survival_tau(p, x0, Points([[0.75, 0.25]]), 1.0)
               - survival_tau(p, x0, Points([[0.25, 0.75]]), 1.0) + survival_tau(p, x0, FullSpace(), 1.0))
    ok = upper_A <= 5e-4 and lower_B > 0 and verdict_B is an.RectVerdict.POSITIVE and rejected
    record(9, ok, f"pi(A) = {rep['A'].value:.4f} (upper 99% {upper_A:.4f}, required <= 5e-4; "
                  f"exact value {exact_A:.4f}); "
                  f"pi(B) lower 99% {lower_B:.4f}; verdict(B) {verdict_B.value}; A rejected {rejected}")
    assert lower_B > 0
    assert verdict_B is an.RectVerdict.POSITIVE
    assert rejected
    assert upper_A <= 5e-4


# --------------------------------------------------------------------------
# 10. No branching before the first immigration from the origin
# --------------------------------------------------------------------------

def test_criterion_10_remark57():
    p = load_fixture("remark57")
    assert np.all(p.beta == 0)
    verdict = an.rect_sup_is_null(p, Rectangle([1.0, 1.0]), [0.0, 0.0], 1.0)
    cfg = sim.SimConfig(p, [0.0, 0.0], horizon=5.0, n_paths=10_000, seed=57)
    rep = sim.run_batch(cfg, [sim.BranchingBeforeImmigration(0, 5.0, "early"),
                              sim.RectSupProb(Rectangle([1.0, 1.0]), 1.0, "pi")])
    early = rep["early"].successes
    ok = verdict is an.RectVerdict.OUTSIDE and early == 0
    record(10, ok, f"verdict {verdict.value}; {early} of 10000 paths branch first; "
                   f"pi estimate {rep['pi'].value:.2e}")
    assert verdict is an.RectVerdict.OUTSIDE
    assert early == 0


# --------------------------------------------------------------------------
# 11. Monotonicity
# --------------------------------------------------------------------------

def test_criterion_11_monotonicity():
    p = load_fixture("two_type")
    mech = Mechanism(p)
    sol = solve_vtilde(mech, [0.7, 1.3], 10.0)
    atol = 1e-10
    vt_ok = bool(np.all(np.diff(sol.values, axis=0) >= -atol))

    ts = np.linspace(0, 5, 51)
    nested = [(Rectangle([0.5, 0.5]), Rectangle([1.0, 1.0])),
              (BallComplement(2.0), BallComplement(1.0)),
              (Points([[0.8, 0.3]]), FullSpace()),
              (BallComplement(1.0, closed=True) - Rectangle([1, 1]), BallComplement(0.5))]
    sub_ok = True
    for A, B in nested:
        mA, mB = ModifiedMechanism(p, A), ModifiedMechanism(p, B)
        vA = solve_vtilde_A(mA, mA.mu_A, 5.0, stops=ts)(ts)
        vB = solve_vtilde_A(mB, mB.mu_A, 5.0, stops=ts)(ts)
        sub_ok &= bool(np.all(vA <= vB + atol))

    surv_ok = True
    for A in (Rectangle([1.0, 1.0]), FullSpace(), BallComplement(1.0)):
        law = an.FirstJumpLaw(p, A, 5.0, stops=ts)
        for x in ([0.0, 0.0], [1.0, 0.5], [2.0, 2.0]):
            s = law.survival_curve(ts, x)
            surv_ok &= bool(np.all(np.diff(s) <= 1e-12))
        for l in range(2):
            xs = [np.eye(2)[l] * k + 0.5 for k in (0.0, 0.5, 1.0, 3.0)]
            for t in (0.5, 2.0, 5.0):
                vals = [law.survival(t, x) for x in xs]
                surv_ok &= bool(np.all(np.diff(vals) <= 1e-12))
    ok = vt_ok and sub_ok and surv_ok
    record(11, ok, f"v~ non-decreasing {vt_ok}; nested sets ordered {sub_ok}; survival monotone {surv_ok}")
    assert vt_ok and sub_ok and surv_ok


# --------------------------------------------------------------------------
# 12. Irreducibility
# --------------------------------------------------------------------------

def irreducible_by_permutations(M) -> bool:
    """Reducible iff some permutation puts M in block upper-triangular form
    (the lower-left block of off-diagonal entries vanishes)."""
    M = np.asarray(M)
    d = M.shape[0]
    if d == 1:
        return True
    for perm in itertools.permutations(range(d)):
        P = M[np.ix_(perm, perm)]
        for k in range(1, d):
            if not np.any(P[k:, :k] > 0):
                return False
    return True


def _random_irreducible_fixtures(rng, count):
    out = []
    while len(out) < count:
        d = int(rng.integers(2, 5))
        p = random_params(rng, d, n_atoms=int(rng.integers(1, 4)), p_zero=0.5)
        if is_irreducible(derive_drift(p).B_tilde):
            out.append(p)
    return out


def test_criterion_12_irreducibility():
    rng = np.random.default_rng(12)
    mismatches = 0
    for _ in range(200):
        d = int(rng.integers(1, 5))
        M = rng.normal(size=(d, d)) * (rng.random((d, d)) < rng.uniform(0.2, 0.7))
        if is_irreducible(M) != irreducible_by_permutations(M):
            mismatches += 1
    radius_fail = 0
    for p in _random_irreducible_fixtures(rng, 20):
        r0 = irreducibility_radius(p)
        for r in (r0, 2 * r0, 10 * r0):
            radius_fail += not modified_drift_irreducible(p, r)
    ok = mismatches == 0 and radius_fail == 0
    record(12, ok, f"{mismatches} mismatches in 200 patterns; {radius_fail} radius failures in 60 checks")
    assert mismatches == 0
    assert radius_fail == 0


# --------------------------------------------------------------------------
# 13. Overall largest jump
# --------------------------------------------------------------------------

def _prop53_run(workers=1):
    p = load_fixture("prop53")
    cfg = sim.SimConfig(p, [0.0, 0.0], horizon=50.0, n_paths=10_000, seed=53)
    return p, sim.run_batch(cfg, [sim.SupNormEquals(an.global_sup_constant(p), 50.0, "hit")],
                            workers=workers)


def test_criterion_13_global_sup():
    p, rep = _prop53_run()
    hyp = an.check_prop53_hypotheses(p)
    frac = rep["hit"].value
    ok = hyp.ok and frac >= 0.99
    record(13, ok, f"hypotheses hold {hyp.ok}; max jump norm = {an.global_sup_constant(p):g} "
                   f"on {100 * frac:.2f}% of 10000 paths")
    assert hyp.ok
    assert frac >= 0.99


# --------------------------------------------------------------------------
# 14. Determinism across worker counts
# --------------------------------------------------------------------------

def test_criterion_14_determinism(tmp_path):
    _, rep1 = _prop53_run(workers=1)
    _, rep8 = _prop53_run(workers=8)
    same_batch = rep1.to_csv() == rep8.to_csv()

    from cbijumps.cli import main
    texts = []
    for w in (1, 8, 8):
        out = tmp_path / f"w{w}_{len(texts)}"
        code = main(["first-jump", "--params", "fixture:two_type", "--x", "1,0.5", "--set", "rect:1,1",
                     "--t", "0.5,1,2", "--mc", "--paths", "20000", "--seed", "7",
                     "--workers", str(w), "--out", str(out)])
        assert code == 0
        texts.append((out.parent / (out.name + ".csv")).read_bytes())
    same_cli = texts[0] == texts[1] == texts[2]
    ok = same_batch and same_cli
    record(14, ok, f"batch CSV identical {same_batch}; CLI CSV identical {same_cli} (workers 1 vs 8)")
    assert same_batch and same_cli


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
