"""Event-driven critical branching Brownian motion, compiled with numba.

One particle of mass 1/N lives Exp(2N), then leaves 0 or 2 offspring with
probability 1/2 each at its death position; spatial motion is standard
Brownian, sampled exactly at event times.  The only approximation parameter
of the whole laboratory is N; there is no time-discretization error.

The RNG is a splitmix64 stream seeded per replication, so identical
(seed, replication) pairs give bit-identical output on any thread.
"""

import numpy as np
from numba import njit

__all__ = [
    "branch_to_time",
    "genealogy_to_time",
    "STATUS_OK",
    "STATUS_PARTICLE_CAP",
    "STATUS_STACK_CAP",
]

STATUS_OK = 0
STATUS_PARTICLE_CAP = 1
STATUS_STACK_CAP = 2

_GOLD = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO53 = 1.0 / 9007199254740992.0


@njit(cache=True, nogil=True, inline="always")
def _next_u64(s):
    s[0] = s[0] + _GOLD
    z = s[0]
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True, inline="always")
def _uniform(s):
    # open (0, 1): safe under log()
    return (float(_next_u64(s) >> np.uint64(11)) + 0.5) * _TWO53


@njit(cache=True, nogil=True, inline="always")
def _normal(s):
    u1 = _uniform(s)
    u2 = _uniform(s)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(6.283185307179586 * u2)


@njit(cache=True, nogil=True, inline="always")
def _gauss_move(x, d, sd, s):
    # Box-Muller pairs: one log/sqrt per two coordinates
    k = 0
    while k < d:
        r = sd * np.sqrt(-2.0 * np.log(_uniform(s)))
        a = 6.283185307179586 * _uniform(s)
        x[k] += r * np.cos(a)
        k += 1
        if k < d:
            x[k] += r * np.sin(a)
            k += 1


@njit(cache=True, nogil=True)
def branch_to_time(founders, founder_ids, t, rate, seed, max_particles):
    """Run the branching system from `founders` (time 0) to time `t`.

    Returns (positions, ids, n_out, status); positions/ids are full-capacity
    buffers valid up to n_out.  status != 0 means a resource cap was hit.
    """
    n0, d = founders.shape
    out_pos = np.empty((max_particles, d))
    out_fid = np.empty(max_particles, np.int64)
    scap = 1024 + int(16.0 * rate * t)
    st_pos = np.empty((scap, d))
    st_time = np.empty(scap)
    st_fid = np.empty(scap, np.int64)
    x = np.empty(d)
    s = np.empty(1, np.uint64)
    s[0] = seed
    nout = 0
    status = STATUS_OK
    for i in range(n0):
        if status != STATUS_OK:
            break
        top = 0
        for k in range(d):
            st_pos[0, k] = founders[i, k]
        st_time[0] = 0.0
        st_fid[0] = founder_ids[i]
        top = 1
        while top > 0:
            top -= 1
            tb = st_time[top]
            fid = st_fid[top]
            for k in range(d):
                x[k] = st_pos[top, k]
            life = -np.log(_uniform(s)) / rate
            if tb + life >= t:
                if nout >= max_particles:
                    status = STATUS_PARTICLE_CAP
                    break
                _gauss_move(x, d, np.sqrt(t - tb), s)
                for k in range(d):
                    out_pos[nout, k] = x[k]
                out_fid[nout] = fid
                nout += 1
            elif _uniform(s) < 0.5:
                continue  # death, no offspring
            else:
                if top + 2 > scap:
                    status = STATUS_STACK_CAP
                    break
                td = tb + life
                _gauss_move(x, d, np.sqrt(life), s)
                for j in range(2):
                    for k in range(d):
                        st_pos[top, k] = x[k]
                    st_time[top] = td
                    st_fid[top] = fid
                    top += 1
    return out_pos, out_fid, nout, status


@njit(cache=True, nogil=True)
def genealogy_to_time(founders, founder_ids, t, rate, seed, max_particles):
    """Sample the time-t population via the genealogy of the survivors.

    Law-equivalent to `branch_to_time` (total event rate `rate` = 2N splits
    into birth and death rates N each; the reduced genealogy of the
    survivors of a critical linear birth-death process is a comb whose
    consecutive-leaf coalescence depths are i.i.d. with tail 1/(1+N*s)),
    but runs in O(survivor count) instead of O(event count).

    Returns (positions, ids, depths, n_out, status).  depths[j] is the
    coalescence depth (time before t) between leaf j and the previous leaf
    of the same founder line; leaves starting a founder line carry inf.
    """
    n0, d = founders.shape
    lam = 0.5 * rate  # birth rate of the equivalent birth-death process
    p_more = lam * t / (1.0 + lam * t)
    out_pos = np.empty((max_particles, d))
    out_fid = np.empty(max_particles, np.int64)
    out_dep = np.empty(max_particles)
    kcap = max_particles + 2
    kt = np.empty(kcap)
    kx = np.empty((kcap, d))
    s = np.empty(1, np.uint64)
    s[0] = seed
    nout = 0
    status = STATUS_OK
    for i in range(n0):
        if _uniform(s) < p_more:  # line extinct by t, prob N*t/(1+N*t)
            continue
        if nout >= max_particles:
            status = STATUS_PARTICLE_CAP
            break
        # leftmost survivor: free Brownian path from the founder
        kt[0] = 0.0
        for k in range(d):
            kx[0, k] = founders[i, k]
        sd = np.sqrt(t)
        for k in range(d):
            out_pos[nout, k] = founders[i, k]
        _gauss_move(out_pos[nout], d, sd, s)
        kt[1] = t
        for k in range(d):
            kx[1, k] = out_pos[nout, k]
        ktop = 2
        out_fid[nout] = founder_ids[i]
        out_dep[nout] = np.inf
        nout += 1
        while _uniform(s) < p_more:
            if nout >= max_particles:
                status = STATUS_PARTICLE_CAP
                break
            # depth of coalescence with the previous leaf, conditioned < t
            w = _uniform(s) * p_more
            dep = w / (lam * (1.0 - w))
            sb = t - dep
            j = ktop - 1
            while kt[j] > sb:
                j -= 1
            # Brownian bridge value at sb between knots j and j+1
            ta = kt[j]
            tb = kt[j + 1]
            frac = (sb - ta) / (tb - ta)
            bsd = np.sqrt((sb - ta) * (tb - sb) / (tb - ta))
            for k in range(d):
                kx[j + 1, k] = kx[j, k] + frac * (kx[j + 1, k] - kx[j, k])
            kt[j + 1] = sb
            _gauss_move(kx[j + 1], d, bsd, s)
            # new rightmost survivor: free path from the branch point
            for k in range(d):
                out_pos[nout, k] = kx[j + 1, k]
            _gauss_move(out_pos[nout], d, np.sqrt(dep), s)
            kt[j + 2] = t
            for k in range(d):
                kx[j + 2, k] = out_pos[nout, k]
            ktop = j + 3
            out_fid[nout] = founder_ids[i]
            out_dep[nout] = dep
            nout += 1
        if status != STATUS_OK:
            break
    return out_pos, out_fid, out_dep, nout, status
