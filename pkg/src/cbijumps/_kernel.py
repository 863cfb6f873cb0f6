"""Compiled per-path simulation kernel.

Random numbers come from a splitmix64 counter stream keyed by
``(seed, path index)``, so each path is replayable on its own and the
results do not depend on how paths are split across workers.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_PATH_SALT = np.uint64(0xD1B54A32D192ED03)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_TWO_M53 = 1.0 / 9007199254740992.0


@njit(cache=True, nogil=True, inline="always")
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def path_key(seed, path):
    return _mix(_mix(np.uint64(seed)) ^ (np.uint64(path) * _PATH_SALT + _GOLDEN))


@njit(cache=True, nogil=True, inline="always")
def _pick(cum, lo, hi, u):
    # index in [lo, hi) with cum[k-1] < u <= cum[k] (cum normalised within the block)
    k = lo + np.searchsorted(cum[lo:hi], u)
    if k >= hi:
        k = hi - 1
    return k


# Helpers take and return scalars only: passing arrays into compiled helpers
# costs a reference-count round trip per array per call, which dominates
# the per-step cost of the kernel.

@njit(cache=True, nogil=True, inline="always")
def _uniform(key, n):
    z = _mix(key + n * _GOLDEN)
    return (np.float64(z >> _S11) + 0.5) * _TWO_M53, n + _ONE


@njit(cache=True, nogil=True, inline="always")
def _exp(key, n):
    u, n = _uniform(key, n)
    return -np.log(u), n


@njit(cache=True, nogil=True, inline="always")
def _polar(key, n):
    # Marsaglia polar method: two independent standard normals
    while True:
        u, n = _uniform(key, n)
        v, n = _uniform(key, n)
        u = 2.0 * u - 1.0
        v = 2.0 * v - 1.0
        s = u * u + v * v
        if 0.0 < s < 1.0:
            break
    f = np.sqrt(-2.0 * np.log(s) / s)
    return u * f, v * f, n


@njit(cache=True, nogil=True)
def uniforms(seed, path, count):
    """First ``count`` uniforms of a path's stream (used by tests)."""
    key = path_key(seed, path)
    n = np.uint64(0)
    out = np.empty(count)
    for i in range(count):
        out[i], n = _uniform(key, n)
    return out


@njit(cache=True, nogil=True)
def simulate_one(path, seed, grid, obs_idx, x0, c, beta, Bd,
                 nu_pts, nu_cum, nu_tot, mu_pts, mu_off, mu_cum, mu_tot,
                 ev_time, ev_atom, ev_start, states, integrals, diag):
    """Simulate one path on ``grid``; write events from ``ev_start`` on.

    Between events the state follows an Euler-Maruyama step of
    ``dX = (beta + Bd X) dt + sqrt(2 c X) dW`` floored at 0. Immigration
    jumps arrive on an exact Poisson clock. Branching jumps of type l are
    thinned from a dominating rate ``factor * (X_l + drift_l^+ * rest) *
    mu_l(U)``; each type carries a unit exponential budget consumed at the
    dominating rate, so rescaling the bound keeps the unused part. A
    candidate whose true intensity exceeds the bound restarts the grid step
    with the factor doubled.

    Returns the index one past the last event. When the event buffer is too
    small the return value exceeds its length and nothing beyond the
    capacity is written; the caller retries with more room.

    diag accumulates (floor corrections, thinning restarts, Euler substeps).
    """
    d = x0.shape[0]
    kn = nu_pts.shape[0]
    cap = ev_time.shape[0]
    key = path_key(seed, path)
    n = np.uint64(0)
    spare = 0.0
    have_spare = False
    X = x0.copy()
    integ = np.zeros(d)
    drift = np.empty(d)
    bound = np.zeros(d)
    budget = np.empty(d)
    t_ref = np.zeros(d)
    cand = np.full(d, np.inf)
    X_save = np.empty(d)
    I_save = np.empty(d)
    b_save = np.empty(d)
    n_floor = 0
    n_restart = 0
    n_sub = 0
    for l in range(d):
        budget[l], n = _exp(key, n)
    n_ev = ev_start
    t_imm = np.inf
    if nu_tot > 0.0:
        e, n = _exp(key, n)
        t_imm = e / nu_tot
    if obs_idx[0] >= 0:
        for i in range(d):
            states[obs_idx[0], i] = X[i]
            integrals[obs_idx[0], i] = 0.0
    for k in range(grid.shape[0] - 1):
        t0 = grid[k]
        t_end = grid[k + 1]
        for i in range(d):
            X_save[i] = X[i]
            I_save[i] = integ[i]
            b_save[i] = budget[i] - bound[i] * (t0 - t_ref[i])
        n_save = n_ev
        timm_save = t_imm
        factor = 1.5
        while True:
            t = t0
            reset = True
            violated = False
            while True:
                if reset:
                    # new dominating rates from the current state
                    for i in range(d):
                        acc = beta[i]
                        for j in range(d):
                            acc += Bd[i, j] * X[j]
                        drift[i] = acc
                    for l in range(d):
                        rem = budget[l] - bound[l] * (t - t_ref[l])
                        budget[l] = rem if rem > 0.0 else 0.0
                        t_ref[l] = t
                        b = 0.0
                        if mu_tot[l] > 0.0:
                            b = factor * (max(X[l], 0.0) + max(drift[l], 0.0) * (t_end - t)) * mu_tot[l]
                        bound[l] = b
                        cand[l] = t + budget[l] / b if b > 0.0 else np.inf
                    reset = False
                l_next = -1
                s = t_imm
                for l in range(d):
                    if cand[l] < s:
                        s = cand[l]
                        l_next = l
                t_stop = s if s < t_end else t_end
                if t_stop > t:
                    # Euler-Maruyama substep on [t, t_stop]
                    dt = t_stop - t
                    sq = np.sqrt(dt)
                    floored = False
                    for i in range(d):
                        acc = beta[i]
                        for j in range(d):
                            acc += Bd[i, j] * X[j]
                        drift[i] = acc
                    for i in range(d):
                        xn = X[i] + drift[i] * dt
                        if c[i] > 0.0 and X[i] > 0.0:
                            if have_spare:
                                z = spare
                                have_spare = False
                            else:
                                z, spare, n = _polar(key, n)
                                have_spare = True
                            xn += np.sqrt(2.0 * c[i] * X[i]) * sq * z
                        if xn < 0.0:
                            xn = 0.0
                            floored = True
                        integ[i] += 0.5 * (X[i] + xn) * dt
                        X[i] = xn
                    if floored:
                        n_floor += 1
                    n_sub += 1
                    t = t_stop
                if s >= t_end:
                    break
                if l_next < 0:
                    # immigration jump
                    u, n = _uniform(key, n)
                    a = _pick(nu_cum, 0, kn, u)
                    for i in range(d):
                        X[i] += nu_pts[a, i]
                    if n_ev < cap:
                        ev_time[n_ev] = t
                        ev_atom[n_ev] = a
                    n_ev += 1
                    e, n = _exp(key, n)
                    t_imm = t + e / nu_tot
                    reset = True
                    continue
                l = l_next
                budget[l], n = _exp(key, n)
                t_ref[l] = t
                intensity = max(X[l], 0.0) * mu_tot[l]
                if intensity > bound[l]:
                    violated = True
                    break
                u, n = _uniform(key, n)
                if u * bound[l] < intensity:
                    u, n = _uniform(key, n)
                    a = _pick(mu_cum, mu_off[l], mu_off[l + 1], u)
                    for i in range(d):
                        X[i] += mu_pts[a, i]
                    if n_ev < cap:
                        ev_time[n_ev] = t
                        ev_atom[n_ev] = kn + a
                    n_ev += 1
                    reset = True
                else:
                    cand[l] = t + budget[l] / bound[l]
            if not violated:
                break
            n_restart += 1
            factor *= 2.0
            for i in range(d):
                X[i] = X_save[i]
                integ[i] = I_save[i]
                budget[i] = b_save[i]
                bound[i] = 0.0
                t_ref[i] = t0
            n_ev = n_save
            t_imm = timm_save
        j = obs_idx[k + 1]
        if j >= 0:
            for i in range(d):
                states[j, i] = X[i]
                integrals[j, i] = integ[i]
    diag[0] += n_floor
    diag[1] += n_restart
    diag[2] += n_sub
    return n_ev


@njit(cache=True, nogil=True)
def simulate_chunk(first_path, n_paths, seed, grid, obs_idx, x0, c, beta, Bd,
                   nu_pts, nu_cum, nu_tot, mu_pts, mu_off, mu_cum, mu_tot,
                   ev_time, ev_atom, ev_path, states, integrals, diag):
    """Simulate paths ``first_path .. first_path + n_paths - 1`` into shared buffers.

    Returns the total number of events, which exceeds the buffer length on
    overflow (the chunk must then be rerun with a larger buffer).
    """
    n_ev = 0
    cap = ev_time.shape[0]
    for p in range(n_paths):
        start = n_ev
        n_ev = simulate_one(first_path + p, seed, grid, obs_idx, x0, c, beta, Bd,
                            nu_pts, nu_cum, nu_tot, mu_pts, mu_off, mu_cum, mu_tot,
                            ev_time, ev_atom, start, states[p], integrals[p], diag)
        hi = min(n_ev, cap)
        for e in range(start, hi):
            ev_path[e] = p
        if n_ev > cap:
            return n_ev
    return n_ev
