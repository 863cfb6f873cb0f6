import numpy as np
import pytest
import scipy.linalg
from scipy import stats

import cbijumps.simulate as sim
from cbijumps import (AtomicLevyMeasure, BallComplement, CBIParams, FullSpace, Points, Rectangle,
                      load_fixture, mean)
from cbijumps._kernel import uniforms


def pure_drift(B, beta):
    d = len(beta)
    e = AtomicLevyMeasure.empty(d)
    return CBIParams(np.zeros(d), beta, B, e, [e] * d)


class TestStreams:
    def test_uniform_range_and_law(self):
        u = uniforms(0, 0, 200_000)
        assert np.all((u > 0) & (u < 1))
        assert stats.kstest(u, "uniform").pvalue > 1e-3

    def test_independent_keys(self):
        a, b, c = uniforms(0, 0, 50_000), uniforms(0, 1, 50_000), uniforms(1, 0, 50_000)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.02
        assert abs(np.corrcoef(a, c)[0, 1]) < 0.02
        assert not np.array_equal(a[:10], b[:10])

    def test_replayable(self):
        np.testing.assert_array_equal(uniforms(7, 123, 100), uniforms(7, 123, 100))


class TestConfig:
    def test_defaults(self):
        cfg = sim.SimConfig(load_fixture("two_type"), [1.0, 1.0], 2.0)
        assert cfg.step == pytest.approx(2e-3)
        assert cfg.n_paths == 100_000 and cfg.seed == 0

    @pytest.mark.parametrize("kw", [dict(horizon=0.0), dict(step=5.0), dict(n_paths=0), dict(seed=-1)])
    def test_invalid(self, kw):
        args = dict(params=load_fixture("two_type"), x0=[1.0, 1.0], horizon=2.0) | kw
        with pytest.raises(ValueError):
            sim.SimConfig(**args)

    def test_grid_contains_extra_times(self):
        cfg = sim.SimConfig(load_fixture("two_type"), [1.0, 1.0], 1.0, step=0.3)
        g = cfg.grid([0.45])
        assert g[0] == 0 and g[-1] == 1.0 and 0.45 in g
        assert np.all(np.diff(g) > 0)

    def test_estimator_beyond_horizon(self):
        cfg = sim.SimConfig(load_fixture("two_type"), [1.0, 1.0], 1.0, n_paths=10)
        with pytest.raises(ValueError):
            sim.run_batch(cfg, [sim.SurvivalTau(FullSpace(), 2.0)])


class TestEstimates:
    def test_probability_se(self):
        e = sim._probability(np.array([1, 0, 0, 1, 1], dtype=bool))
        assert e.value == 0.6 and e.std_error == pytest.approx(np.sqrt(0.24 / 5)) and e.successes == 3

    def test_clopper_pearson(self):
        zero = sim.McEstimate(0.0, 0.0, 1000, 0)
        assert zero.lower_bound() == 0.0
        # no successes: upper bound solves (1 - p)^n = 1 - level
        assert zero.upper_bound(0.99) == pytest.approx(1 - 0.01 ** (1 / 1000), rel=1e-10)
        e = sim.McEstimate(0.3, 0.0, 100, 30)
        assert e.lower_bound() < 0.3 < e.upper_bound()

    def test_bounds_need_counts(self):
        with pytest.raises(ValueError):
            sim.McEstimate(1.0, 0.1, 10).upper_bound()

    def test_z_score(self):
        assert sim.McEstimate(1.0, 0.5, 10).z_score(2.0) == 2.0
        assert sim.McEstimate(1.0, 0.0, 10).z_score(1.0) == 0.0


class TestPaths:
    def test_deterministic_linear_path(self):
        B = np.array([[-1.0, 0.5], [0.2, -0.3]])
        beta = np.array([1.0, 0.5])
        p = pure_drift(B, beta)
        x0 = np.array([1.0, 2.0])
        T = 2.0
        M = np.zeros((3, 3))
        M[:2, :2], M[:2, 2] = B, beta
        exact = (scipy.linalg.expm(T * M) @ np.append(x0, 1.0))[:2]
        errs = []
        for h in (1e-2, 5e-3):
            rec = sim.simulate_path(sim.SimConfig(p, x0, T, step=h, n_paths=1), 0)
            errs.append(np.max(np.abs(rec.terminal - exact)))
            assert not rec.events
        assert errs[0] < 0.05 and errs[1] < 0.6 * errs[0]

    def test_record_states_nonnegative(self):
        cfg = sim.SimConfig(load_fixture("cir_single"), [0.2], 5.0, step=1e-2, record_states=True)
        rec = sim.simulate_path(cfg, 3)
        assert rec.states.shape == (len(rec.times), 1)
        assert np.all(rec.states >= 0)
        assert rec.times[0] == 0 and rec.times[-1] == 5.0

    def test_events_ordered_and_atoms(self):
        p = load_fixture("two_type")
        cfg = sim.SimConfig(p, [1.0, 0.5], 3.0)
        for i in range(20):
            rec = sim.simulate_path(cfg, i)
            times = [e.time for e in rec.events]
            assert np.all(np.diff(times) > 0)
            for e in rec.events:
                m = p.nu if e.is_immigration else p.mu[e.channel]
                assert any(np.array_equal(e.size, z) for z in m.points)

    def test_path_equals_batch_member(self):
        p = load_fixture("two_type")
        cfg = sim.SimConfig(p, [1.0, 0.5], 1.0, n_paths=50, seed=9)
        rep = sim.run_batch(cfg, [sim.StateCoordinate(0, 1.0, "x"), sim.JumpCount(FullSpace(), 1.0, "n")],
                            chunk_size=16, keep_per_path=True)
        for i in (0, 17, 49):
            rec = sim.simulate_path(cfg, i)
            assert rec.terminal[0] == rep.per_path["x"][i]
            assert len(rec.events) == rep.per_path["n"][i]

    def test_remark57_ordering(self):
        cfg = sim.SimConfig(load_fixture("remark57"), [0.0, 0.0], 5.0, n_paths=1)
        for i in range(200):
            ev = sim.simulate_path(cfg, i).events
            first_imm = min([e.time for e in ev if e.is_immigration], default=np.inf)
            first_br = min([e.time for e in ev if e.channel == 0], default=np.inf)
            assert first_br > first_imm or first_br == np.inf

    def test_events_csv(self):
        cfg = sim.SimConfig(load_fixture("two_type"), [1.0, 0.5], 1.0)
        lines = sim.events_csv(cfg, range(3)).splitlines()
        assert lines[0] == "path,time,channel,size_1,size_2"
        chans = {ln.split(",")[2] for ln in lines[1:]}
        assert chans <= {"immigration", "branching1", "branching2"}


class TestBatch:
    def test_worker_independence(self):
        cfg = sim.SimConfig(load_fixture("two_type"), [1.0, 0.5], 1.0, n_paths=3000, seed=3)
        ests = [sim.SurvivalTau(Rectangle([1, 1]), 1.0), sim.LaplaceIntX([1.0, 1.0], 1.0)]
        a = sim.run_batch(cfg, ests, workers=1, chunk_size=500)
        b = sim.run_batch(cfg, ests, workers=4, chunk_size=500)
        assert a.to_csv() == b.to_csv()
        assert a.diagnostics == b.diagnostics

    def test_seed_changes_result(self):
        p = load_fixture("two_type")
        est = [sim.JumpCount(FullSpace(), 1.0, "n")]
        a = sim.run_batch(sim.SimConfig(p, [1.0, 0.5], 1.0, n_paths=500, seed=1), est)["n"].value
        b = sim.run_batch(sim.SimConfig(p, [1.0, 0.5], 1.0, n_paths=500, seed=2), est)["n"].value
        assert a != b

    def test_duplicate_names(self):
        cfg = sim.SimConfig(load_fixture("two_type"), [1.0, 0.5], 1.0, n_paths=10)
        with pytest.raises(ValueError):
            sim.run_batch(cfg, [sim.SurvivalTau(FullSpace(), 1.0, "a"), sim.JumpCount(FullSpace(), 1.0, "a")])

    def test_coupling_identity(self):
        cfg = sim.SimConfig(load_fixture("two_type"), [1.0, 0.5], 1.0, n_paths=4000, seed=4)
        ests = []
        for r in (0.5, 1.0, 1.6):
            ests += [sim.SupNormCdf(r, 1.0, f"sup{r}"), sim.SurvivalTau(BallComplement(r), 1.0, f"tau{r}")]
        rep = sim.run_batch(cfg, ests, keep_per_path=True)
        for r in (0.5, 1.0, 1.6):
            np.testing.assert_array_equal(rep.per_path[f"sup{r}"], rep.per_path[f"tau{r}"])

    def test_no_jumps(self):
        p = pure_drift(np.array([[-1.0]]), np.array([1.0]))
        cfg = sim.SimConfig(p, [1.0], 1.0, n_paths=200)
        rep = sim.run_batch(cfg, [sim.SupNormCdf(0.01, 1.0, "sup"), sim.RectSupProb(Rectangle([1.0]), 1.0, "rect"),
                                  sim.SurvivalTau(FullSpace(), 1.0, "tau"), sim.JumpCount(FullSpace(), 1.0, "n")])
        assert rep["sup"].value == 1.0 and rep["rect"].value == 0.0
        assert rep["tau"].value == 1.0 and rep["tau"].std_error == 0.0
        assert rep["n"].value == 0.0

    def test_zero_mass_set(self):
        cfg = sim.SimConfig(load_fixture("two_type"), [1.0, 0.5], 1.0, n_paths=300)
        rep = sim.run_batch(cfg, [sim.SurvivalTau(Points([[9.0, 9.0]]), 1.0, "s"),
                                  sim.JumpCount(Points([[9.0, 9.0]]), 1.0, "n")])
        assert rep["s"].value == 1.0 and rep["s"].std_error == 0.0
        assert rep["n"].value == 0.0

    def test_compound_poisson(self):
        rho, r0 = 1.7, np.array([0.4, 1.1])
        p = CBIParams.zero(2).replace(nu=AtomicLevyMeasure.point_mass(r0, rho))
        T = 2.0
        cfg = sim.SimConfig(p, [0.5, 0.0], T, n_paths=20_000, seed=11)
        rep = sim.run_batch(cfg, [sim.JumpCount(FullSpace(), T, "n"), sim.StateCoordinate(1, T, "x2"),
                                  sim.SurvivalTau(FullSpace(), 1.0, "s")])
        assert rep["n"].z_score(rho * T) <= 3
        assert rep["x2"].z_score(r0[1] * rho * T) <= 3
        assert rep["s"].z_score(np.exp(-rho)) <= 3

    def test_mean_matches_formula(self):
        p = load_fixture("cir_single")
        cfg = sim.SimConfig(p, [1.0], 2.0, n_paths=20_000, seed=5)
        rep = sim.run_batch(cfg, [sim.StateCoordinate(0, 1.0, "a"), sim.StateCoordinate(0, 2.0, "b")])
        assert rep["a"].z_score(mean(p, [1.0], 1.0)[0]) <= 3
        assert rep["b"].z_score(mean(p, [1.0], 2.0)[0]) <= 3

    def test_step_halving(self):
        p = load_fixture("two_type")
        A = Rectangle([1.0, 1.0])
        vals = []
        for h in (2e-3, 1e-3):
            cfg = sim.SimConfig(p, [1.0, 0.5], 1.0, step=h, n_paths=20_000, seed=8)
            vals.append(sim.run_batch(cfg, [sim.SurvivalTau(A, 1.0, "s")])["s"])
        assert abs(vals[0].value - vals[1].value) <= 3 * vals[1].std_error

    def test_floor_warning(self):
        # large diffusion from a tiny state floors often
        e = AtomicLevyMeasure.empty(1)
        p = CBIParams([50.0], [0.0], [[0.0]], e, [e])
        cfg = sim.SimConfig(p, [0.01], 1.0, step=0.05, n_paths=200)
        with pytest.warns(RuntimeWarning, match="floored"):
            sim.run_batch(cfg, [sim.StateCoordinate(0, 1.0)])

    def test_report_csv(self):
        cfg = sim.SimConfig(load_fixture("two_type"), [1.0, 0.5], 1.0, n_paths=100)
        text = sim.run_batch(cfg, [sim.SurvivalTau(FullSpace(), 1.0, "s")]).to_csv()
        header, row = text.splitlines()
        assert header == "estimator,value,std_error,n"
        assert row.startswith("s,") and row.endswith(",100")

    def test_wrappers(self):
        cfg = sim.SimConfig(load_fixture("pure_immigration"), [0.0, 0.0], 1.0, n_paths=2000, seed=1)
        nu = cfg.params.nu
        assert sim.estimate_survival_tau(cfg, FullSpace(), 1.0).z_score(np.exp(-nu.mass())) <= 3
        assert sim.estimate_jump_count(cfg, FullSpace(), 1.0).z_score(nu.mass()) <= 3
        assert sim.estimate_sup_norm_cdf(cfg, 5.0, 1.0).value == 1.0
        assert 0 < sim.estimate_rect_sup_prob(cfg, Rectangle([1.0, 1.0]), 1.0).value < 1
