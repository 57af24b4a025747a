"""Compiled inner loops: a Philox-4x64 block function used as a keyed source of
normals, and the adaptive particle integrator.

The block function is the same bijection numpy's ``Philox`` bit generator
applies to its counter, so ``philox_block(key, c)`` equals the first four raw
outputs of ``np.random.Philox(key=key, counter=c - e0)``; the test suite
checks this bit for bit.  Normals are produced from the 64-bit words with the
Box-Muller transform.
"""
import math

import numba as nb
import numpy as np

M0 = np.uint64(0xD2E7470EE14C6C93)
M1 = np.uint64(0xCA5A826395121157)
W0 = np.uint64(0x9E3779B97F4A7C15)
W1 = np.uint64(0xBB67AE8584CAA73B)
MASK32 = np.uint64(0xFFFFFFFF)
S32 = np.uint64(32)
S11 = np.uint64(11)
INV53 = 1.0 / 9007199254740992.0
TWO_PI = 2.0 * math.pi

MODE_CONTINUE = 0
MODE_STOP = 1
MODE_RESTART = 2

KIND_INCREMENT = 0
KIND_BRIDGE = 1


@nb.njit(cache=True, inline="always")
def _mulhilo(a, b):
    a_lo = a & MASK32
    a_hi = a >> S32
    b_lo = b & MASK32
    b_hi = b >> S32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    hh = a_hi * b_hi
    mid = (ll >> S32) + (lh & MASK32) + (hl & MASK32)
    hi = hh + (lh >> S32) + (hl >> S32) + (mid >> S32)
    return hi, a * b


@nb.njit(cache=True)
def philox_block(k0, k1, c0, c1, c2, c3, out):
    """Ten Philox-4x64 rounds of counter (c0..c3) under key (k0, k1)."""
    for _ in range(10):
        hi0, lo0 = _mulhilo(M0, c0)
        hi1, lo1 = _mulhilo(M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = k0 + W0
        k1 = k1 + W1
    out[0] = c0
    out[1] = c1
    out[2] = c2
    out[3] = c3


@nb.njit(cache=True)
def keyed_normals(k0, k1, step, node, kind, out):
    """Fill ``out`` with standard normals addressed by (step, node, kind)."""
    raw = np.empty(4, dtype=np.uint64)
    d = out.shape[0]
    n_blocks = (d + 3) // 4
    pos = 0
    for b in range(n_blocks):
        philox_block(k0, k1, np.uint64(step), np.uint64(node), np.uint64(kind), np.uint64(b), raw)
        for pair in range(2):
            u1 = 1.0 - (raw[2 * pair] >> S11) * INV53
            u2 = (raw[2 * pair + 1] >> S11) * INV53
            r = math.sqrt(-2.0 * math.log(u1))
            if pos < d:
                out[pos] = r * math.cos(TWO_PI * u2)
                pos += 1
            if pos < d:
                out[pos] = r * math.sin(TWO_PI * u2)
                pos += 1


@nb.njit(cache=True)
def keyed_normal_table(k0, k1, n_steps, d):
    """Root increments (unit variance) for steps 0..n_steps-1, shape (n_steps, d)."""
    out = np.empty((n_steps, d))
    for k in range(n_steps):
        keyed_normals(k0, k1, k, 1, KIND_INCREMENT, out[k])
    return out


@nb.njit(cache=True, inline="always")
def _drift(x, c, gamma, floor, out):
    d = x.shape[0]
    for i in range(d):
        s = 0.0
        for j in range(d):
            if j != i:
                diff = x[i] - x[j]
                if abs(diff) < floor:
                    diff = floor if diff >= 0 else -floor
                s += 1.0 / diff
        out[i] = -gamma * x[i] + c * s


@nb.njit(cache=True)
def integrate_path(x0, coupling, spb, gamma, dt, n_steps, k0, k1, mode, delta, tol, max_level,
                   noise_ratio, restart_cap, every, root_dw):
    """Adaptive Euler-Maruyama for one path.

    Returns (values, ev_time, ev_index, ev_gap, n_events, first_time,
    first_index, restarts, end_step, refinements, underflows, status) where
    status 1 means the restart cap was exceeded.
    """
    d = x0.shape[0]
    n_rec = n_steps // every + 1
    values = np.full((n_rec, d), np.nan)
    x = x0.copy()
    values[0] = x
    cap_ev = 16
    ev_time = np.empty(cap_ev)
    ev_index = np.empty(cap_ev, dtype=np.int64)
    ev_gap = np.empty(cap_ev)
    n_ev = 0
    first_time = np.inf
    first_index = 0
    restarts = 0
    end_step = -1
    refinements = 0
    underflows = 0
    status = 0
    n_cpl = coupling.shape[0]
    depth = 2 * (max_level + 2)
    st_level = np.empty(depth, dtype=np.int64)
    st_j = np.empty(depth, dtype=np.int64)
    st_dw = np.empty((depth, d))
    drift = np.empty(d)
    y = np.empty(d)
    z = np.empty(d)
    use_root = root_dw.shape[0] > 0
    ended = False
    contact = False
    for k in range(n_steps):
        c = coupling[min(k // spb, n_cpl - 1)]
        top = 0
        st_level[0] = 0
        st_j[0] = 0
        if use_root:
            for i in range(d):
                st_dw[0, i] = root_dw[k, i]
        else:
            keyed_normals(k0, k1, k, 1, KIND_INCREMENT, z)
            sq = math.sqrt(dt)
            for i in range(d):
                st_dw[0, i] = sq * z[i]
        top = 1
        while top > 0 and not ended:
            top -= 1
            level = st_level[top]
            j = st_j[top]
            h = dt / (2.0 ** level)
            # while a pair sits below tol after a logged meeting (continue
            # mode), gaps are floored at tol in the drift and the step rule
            floor = tol if contact else 1e-300
            _drift(x, c, gamma, floor, drift)
            refine = False
            # without interaction the Euler step is exact, so no refinement is needed
            if d >= 2 and c != 0.0:
                gmin = np.inf
                for i in range(d - 1):
                    g = x[i + 1] - x[i]
                    if g < gmin:
                        gmin = g
                if contact and gmin < tol:
                    gmin = tol
                move = 0.0
                for i in range(d):
                    if abs(drift[i]) > move:
                        move = abs(drift[i])
                move *= h
                stiff = move > 0.25 * gmin or noise_ratio * 2.0 * math.sqrt(h) > gmin
                if stiff:
                    if level < max_level:
                        refine = True
                    elif move > 0.25 * gmin:
                        underflows += 1
            if refine:
                refinements += 1
                node = (np.uint64(1) << np.uint64(level)) + np.uint64(j)
                keyed_normals(k0, k1, k, node, KIND_BRIDGE, z)
                half = 0.5 * math.sqrt(h)
                # second half first so that the first half is popped next
                for i in range(d):
                    w1 = 0.5 * st_dw[top, i] + half * z[i]
                    st_dw[top + 1, i] = w1
                    st_dw[top, i] = st_dw[top, i] - w1
                st_level[top] = level + 1
                st_j[top] = 2 * j + 1
                st_level[top + 1] = level + 1
                st_j[top + 1] = 2 * j
                top += 2
                continue
            for i in range(d):
                y[i] = x[i] + drift[i] * h + 1.4142135623730951 * st_dw[top, i]
            if d >= 2:
                gi = 0
                gm = np.inf
                for i in range(d - 1):
                    g = y[i + 1] - y[i]
                    if g < gm:
                        gm = g
                        gi = i
                y.sort()
                if contact:
                    # re-arm detection once every gap has cleared twice the tolerance
                    contact = False
                    for i in range(d - 1):
                        if y[i + 1] - y[i] < 2.0 * tol:
                            contact = True
                if gm < tol and not contact:
                    t_end = (k + (j + 1) / (2.0 ** level)) * dt
                    if n_ev == cap_ev:
                        cap_ev *= 2
                        a = np.empty(cap_ev)
                        a[:n_ev] = ev_time[:n_ev]
                        ev_time = a
                        b = np.empty(cap_ev, dtype=np.int64)
                        b[:n_ev] = ev_index[:n_ev]
                        ev_index = b
                        e = np.empty(cap_ev)
                        e[:n_ev] = ev_gap[:n_ev]
                        ev_gap = e
                    ev_time[n_ev] = t_end
                    ev_index[n_ev] = gi + 2
                    ev_gap[n_ev] = gm
                    n_ev += 1
                    if first_time == np.inf:
                        first_time = t_end
                        first_index = gi + 2
                    if mode == MODE_RESTART:
                        for i in range(d):
                            y[i] += (i + 1) * delta
                        restarts += 1
                        if restarts > restart_cap:
                            status = 1
                    elif mode == MODE_STOP:
                        ended = True
                        end_step = k
                    else:
                        contact = True
            for i in range(d):
                x[i] = y[i]
            if status != 0:
                break
        if (k + 1) % every == 0:
            values[(k + 1) // every] = x
        if status != 0 or ended:
            if (k + 1) % every != 0 and ended:
                values[(k + 1) // every + 1 if (k + 1) // every + 1 < n_rec else n_rec - 1] = x
            break
    return (values, ev_time[:n_ev], ev_index[:n_ev], ev_gap[:n_ev], n_ev, first_time, first_index,
            restarts, end_step, refinements, underflows, status)


@nb.njit(cache=True)
def _matmul(a, b, out):
    d = a.shape[0]
    for i in range(d):
        for j in range(d):
            s = 0j
            for k in range(d):
                s += a[i, k] * b[k, j]
            out[i, j] = s


@nb.njit(cache=True)
def frame_step_batch(O, lam, weight, dt, z, beta):
    """Frame steps O' = polar(O expm(G - C/2)) for a stack of paths.

    ``O`` is complex (paths, d, d); ``z`` holds the unit normals of the upper
    triangle (real parts first, then imaginary parts when beta is 2).
    Returns (O', per-column corrections, flags) where a flag of 1 marks a
    product too far from the group for the Newton-Schulz projection.
    """
    P, d = lam.shape
    m = d * (d - 1) // 2
    out = np.empty_like(O)
    corr = np.zeros((P, d))
    flags = np.zeros(P, dtype=np.int64)
    A = np.empty((d, d), dtype=np.complex128)
    E = np.empty((d, d), dtype=np.complex128)
    term = np.empty((d, d), dtype=np.complex128)
    tmp = np.empty((d, d), dtype=np.complex128)
    X = np.empty((d, d), dtype=np.complex128)
    R = np.empty((d, d), dtype=np.complex128)
    for r in range(P):
        sw = math.sqrt(weight[r])
        sd = math.sqrt(dt[r])
        for i in range(d):
            for j in range(d):
                A[i, j] = 0j
        q = 0
        for i in range(d):
            for j in range(i + 1, d):
                if beta == 1:
                    dw = sd * z[r, q] + 0j
                else:
                    dw = sd * (z[r, q] + 1j * z[r, q + m])
                # G[j, i] = sw dw_ij / (l_i - l_j), G[i, j] = sw conj(dw_ij) / (l_j - l_i)
                A[j, i] = sw * dw / (lam[r, i] - lam[r, j])
                A[i, j] = sw * dw.conjugate() / (lam[r, j] - lam[r, i])
                q += 1
        for i in range(d):
            c = 0.0
            for j in range(d):
                if j != i:
                    g = lam[r, i] - lam[r, j]
                    c += beta / (g * g)
            corr[r, i] = 0.5 * weight[r] * c * dt[r]
            A[i, i] = -corr[r, i] + 0j
        # scaling and squaring with a Taylor series
        norm = 0.0
        for j in range(d):
            s = 0.0
            for i in range(d):
                s += abs(A[i, j])
            if s > norm:
                norm = s
        k = 0
        while norm > 0.25:
            norm *= 0.5
            k += 1
        scale = 2.0 ** (-k)
        for i in range(d):
            for j in range(d):
                A[i, j] *= scale
                term[i, j] = A[i, j]
                E[i, j] = A[i, j]
            E[i, i] += 1.0
        for n in range(2, 20):
            _matmul(term, A, tmp)
            big = 0.0
            for i in range(d):
                for j in range(d):
                    term[i, j] = tmp[i, j] / n
                    E[i, j] += term[i, j]
                    if abs(term[i, j]) > big:
                        big = abs(term[i, j])
            if big < 1e-17:
                break
        for _ in range(k):
            _matmul(E, E, tmp)
            for i in range(d):
                for j in range(d):
                    E[i, j] = tmp[i, j]
        _matmul(O[r], E, X)
        # Newton-Schulz projection onto the group
        for it in range(40):
            res = 0.0
            for i in range(d):
                for j in range(d):
                    s = 0j
                    for kk in range(d):
                        s += X[kk, i].conjugate() * X[kk, j]
                    if i == j:
                        s -= 1.0
                    R[i, j] = s
                    if abs(s) > res:
                        res = abs(s)
            if it == 0 and res >= 0.25:
                flags[r] = 1
                break
            if res < 1e-15:
                break
            for i in range(d):
                for j in range(d):
                    R[i, j] = -0.5 * R[i, j]
                R[i, i] += 1.0
            _matmul(X, R, tmp)
            for i in range(d):
                for j in range(d):
                    X[i, j] = tmp[i, j]
        for i in range(d):
            for j in range(d):
                out[r, i, j] = X[i, j]
    return out, corr, flags
