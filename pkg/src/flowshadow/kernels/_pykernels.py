"""Pure-Python twins of the compiled kernels.

Same contracts as ``_ckernels``; the integrators take Python callables instead
of built-in field codes so they also serve user-defined systems.
"""

import math

import numpy as np

C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
A71, A73, A74, A75, A76 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = (71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200,
                          22 / 525, -1 / 40)
D1, D3, D4 = -12715105075 / 11282082432, 87487479700 / 32700410799, -10690763975 / 1880347072
D5, D6, D7 = 701980252875 / 199316789632, -1453857185 / 822651844, 69997945 / 29380423

MIN_STEP = 1e-14
EPS = np.finfo(float).eps


def _initial_step(f, y0, f0, hmax, tol):
    sk = tol + tol * np.abs(y0)
    dnf = float(np.sum((f0 / sk) ** 2))
    dny = float(np.sum((y0 / sk) ** 2))
    if dnf <= 1e-10 or dny <= 1e-10:
        h = 1e-6
    else:
        h = 0.01 * math.sqrt(dny / dnf)
    h = min(h, hmax)
    f1 = f(y0 + h * f0)
    der2 = math.sqrt(float(np.sum(((f1 - f0) / sk) ** 2))) / h
    der12 = max(der2, math.sqrt(dnf))
    if der12 <= 1e-15:
        h1 = max(1e-6, h * 1e-3)
    else:
        h1 = (0.01 / der12) ** 0.2
    return min(100 * h, h1, hmax)


def dopri(f, y, t, tend, tol, escape, t_out, d, steps=None):
    """Dormand-Prince 5(4) with PI control; returns ``(status, y_end, samples)``."""
    y = np.array(y, dtype=float)
    n = y.size
    n_out = len(t_out)
    out = np.empty((n_out, n))
    iout = 0
    while iout < n_out and t_out[iout] <= t:
        out[iout] = y
        iout += 1
    hmax = tend - t
    if hmax <= 0:
        return 0, y, out
    k1 = f(y)
    h = _initial_step(f, y, k1, hmax, tol)
    facold = 1e-4
    expo1 = 0.2 - 0.04 * 0.75
    reject = False
    status = 0
    snap = 4 * EPS * max(abs(tend), 1.0)
    while True:
        rem = tend - t
        if rem <= snap:
            break
        if h >= rem:
            h = rem
        elif h < MIN_STEP:
            status = 1
            break
        k2 = f(y + h * A21 * k1)
        k3 = f(y + h * (A31 * k1 + A32 * k2))
        k4 = f(y + h * (A41 * k1 + A42 * k2 + A43 * k3))
        k5 = f(y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4))
        k6 = f(y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5))
        y1 = y + h * (A71 * k1 + A73 * k3 + A74 * k4 + A75 * k5 + A76 * k6)
        k7 = f(y1)
        e = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)
        sk = tol + tol * np.maximum(np.abs(y), np.abs(y1))
        err = math.sqrt(float(np.sum((e / sk) ** 2)) / n)
        fac11 = err ** expo1
        fac = min(5.0, max(0.1, fac11 / facold ** 0.04 / 0.9))
        hnew = h / fac
        if err <= 1.0:
            facold = max(err, 1e-4)
            last = h == rem
            if iout < n_out and (t_out[iout] <= t + h or last):
                r2 = y1 - y
                r3 = h * k1 - r2
                r4 = r2 - h * k7 - r3
                r5 = h * (D1 * k1 + D3 * k3 + D4 * k4 + D5 * k5 + D6 * k6 + D7 * k7)
                while iout < n_out and (t_out[iout] <= t + h or last):
                    if t_out[iout] >= tend:
                        out[iout] = y1
                    else:
                        th = (t_out[iout] - t) / h
                        th1 = 1.0 - th
                        out[iout] = y + th * (r2 + th1 * (r3 + th * (r4 + th1 * r5)))
                    iout += 1
            t = tend if last else t + h
            y = y1
            k1 = k7
            nrm = math.sqrt(float(np.dot(y[:d], y[:d])))
            if not nrm <= escape:
                status = 2
                break
            if steps is not None:
                steps.append((t, y.copy()))
            if reject:
                hnew = min(hnew, h)
            reject = False
            if t >= tend:
                break
        else:
            hnew = h / min(5.0, fac11 / 0.9)
            reject = True
        h = hnew
    if status == 0:
        while iout < n_out:
            out[iout] = y
            iout += 1
    return status, y, out


def flow_samples(field, x0, t_out, tol, escape, keep_steps=False):
    x0 = np.asarray(x0, dtype=float)
    d = x0.size
    t_out = np.asarray(t_out, dtype=float)
    steps = [] if keep_steps else None
    status, _, out = dopri(field, x0, t_out[0], t_out[-1], tol, escape, t_out, d, steps)
    if keep_steps and steps:
        st = np.array([s[0] for s in steps])
        sy = np.array([s[1] for s in steps])
    else:
        st, sy = np.empty(0), np.empty((0, d))
    return status, out, st, sy


def flow_tangent(field, jac, starts, durations, tol, escape):
    starts = np.asarray(starts, dtype=float)
    m, d = starts.shape

    def aug(y):
        x = y[:d]
        V = y[d:].reshape(d, d)
        return np.concatenate((field(x), (jac(x) @ V).ravel()))

    ends = np.empty((m, d))
    mats = np.empty((m, d, d))
    eye = np.eye(d).ravel()
    for k in range(m):
        y0 = np.concatenate((starts[k], eye))
        tau = float(durations[k])
        status, _, out = dopri(aug, y0, 0.0, tau, tol, escape, [tau], d)
        if status != 0:
            return status, k, ends, mats
        ends[k] = out[0, :d]
        mats[k] = out[0, d:].reshape(d, d)
    return 0, -1, ends, mats


def frame_from_scratch(u):
    d = u.size
    drop = int(np.argmax(np.abs(u)))
    rows = []
    for j in range(d):
        if j == drop:
            continue
        v = np.zeros(d)
        v[j] = 1.0
        v -= u[j] * u
        for r in rows:
            v -= np.dot(r, v) * r
        rows.append(v / np.linalg.norm(v))
    return np.array(rows)


def transport_frames(u, B0, min_norm=1e-8):
    u = np.asarray(u, dtype=float)
    m, d = u.shape
    bases = np.empty((m, d - 1, d))
    rebuilt = np.zeros(m, dtype=np.int8)
    bases[0] = B0
    for k in range(1, m):
        prev = bases[k - 1]
        uk = u[k]
        cur = prev - np.outer(prev @ uk, uk)
        bad = False
        for r in range(d - 1):
            v = cur[r]
            for l in range(r):
                v = v - np.dot(cur[l], v) * cur[l]
            nrm = math.sqrt(float(np.dot(v, v)))
            if nrm < min_norm:
                bad = True
                break
            v = v / nrm
            if np.dot(v, prev[r]) < 0:
                v = -v
            cur[r] = v
        if bad:
            cur = frame_from_scratch(uk)
            rebuilt[k] = 1
        bases[k] = cur
    return bases, rebuilt


def _qr_pos(Z):
    Q, R = np.linalg.qr(Z)
    sgn = np.sign(np.diag(R))
    sgn[sgn == 0] = 1.0
    return Q * sgn, np.abs(np.diag(R))


def qr_accumulate(steps, Q0, keep_q=False):
    steps = np.asarray(steps, dtype=float)
    m = steps.shape[0]
    Q = np.array(Q0, dtype=float)
    k = Q.shape[1]
    cumlogs = np.empty((m, k))
    qhist = np.empty((m + 1,) + Q.shape) if keep_q else None
    if keep_q:
        qhist[0] = Q
    acc = np.zeros(k)
    mn = np.inf
    with np.errstate(divide="ignore"):
        for s in range(m):
            Q, diag = _qr_pos(steps[s] @ Q)
            mn = min(mn, float(diag.min()))
            acc = acc + np.log(diag)
            cumlogs[s] = acc
            if keep_q:
                qhist[s + 1] = Q
    return cumlogs, qhist, mn


def backward_subspace(steps, V_end):
    steps = np.asarray(steps, dtype=float)
    m = steps.shape[0]
    X, _ = _qr_pos(np.asarray(V_end, dtype=float))
    hist = np.empty((m + 1,) + X.shape)
    hist[m] = X
    for s in range(m - 1, -1, -1):
        X, _ = _qr_pos(np.linalg.solve(steps[s], X))
        hist[s] = X
    return hist


class _SparseTable:
    """Static range max/min over an array, O(1) per (vectorised) query."""

    def __init__(self, vals, op):
        self.op = op
        levels = [np.asarray(vals)]
        j = 1
        while (1 << j) <= len(vals):
            prev = levels[-1]
            half = 1 << (j - 1)
            levels.append(op(prev[:-half], prev[half:]))
            j += 1
        self.levels = levels

    def query(self, lo, hi):
        # inclusive [lo, hi], requires lo <= hi elementwise
        length = hi - lo + 1
        j = np.floor(np.log2(length)).astype(np.int64)
        j = np.minimum(j, len(self.levels) - 1)
        out = np.empty(len(lo), dtype=self.levels[0].dtype)
        for lev in np.unique(j):
            sel = j == lev
            tab = self.levels[lev]
            out[sel] = self.op(tab[lo[sel]], tab[hi[sel] - (1 << lev) + 1])
        return out


def qh_bounds(a, b, dt, eta, slack):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dt = np.asarray(dt, dtype=float)
    k = a.size
    # np.cumsum accumulates sequentially, matching the compiled running sums
    q = np.concatenate(([0.0], np.cumsum(a + eta * dt)))
    w = np.concatenate(([0.0], np.cumsum(b - eta * dt)))
    qt = _SparseTable(q, np.maximum)
    wt = _SparseTable(w, np.maximum)

    # U: leftmost n in [s+1, k] with q[n] > q[s] + slack, by bisection on range max
    s = np.arange(k, dtype=np.int64)
    thr = q[:k] + slack
    lo = s + 1
    hi = np.full(k, k, dtype=np.int64)
    found = qt.query(lo, hi) > thr
    first = np.full(k, k, dtype=np.int64)
    lo_b, hi_b = lo[found], hi[found]
    thr_b = thr[found]
    while True:
        active = lo_b < hi_b
        if not active.any():
            break
        mid = (lo_b + hi_b) // 2
        left = qt.query(lo_b, mid) > thr_b
        hi_b = np.where(active & left, mid, hi_b)
        lo_b = np.where(active & ~left, mid + 1, lo_b)
    first[found] = lo_b

    bad = (a - b + eta * dt) > slack
    nextbad = np.full(k + 1, k, dtype=np.int64)
    for i in range(k - 1, -1, -1):
        nextbad[i] = i if bad[i] else nextbad[i + 1]
    U = np.empty(k + 1, dtype=np.int64)
    U[:k] = np.minimum(first, nextbad[:k])
    U[k] = k

    # L: 1 + rightmost n in [0, e-1] with w[n] > w[e] + slack
    L = np.zeros(k + 1, dtype=np.int64)
    if k > 0:
        e = np.arange(1, k + 1, dtype=np.int64)
        thr = w[1:] + slack
        lo = np.zeros(k, dtype=np.int64)
        hi = e - 1
        found = wt.query(lo, hi) > thr
        lo_b, hi_b, thr_b = lo[found], hi[found], thr[found]
        while True:
            active = lo_b < hi_b
            if not active.any():
                break
            mid = (lo_b + hi_b + 1) // 2
            right = wt.query(mid, hi_b) > thr_b
            lo_b = np.where(active & right, mid, lo_b)
            hi_b = np.where(active & ~right, mid - 1, hi_b)
        last = np.full(k, -1, dtype=np.int64)
        last[found] = lo_b
        L[1:] = last + 1
    return U, L


def maximal_ranges(U, L, t, T):
    U = np.asarray(U, dtype=np.int64)
    L = np.asarray(L, dtype=np.int64)
    t = np.asarray(t, dtype=float)
    k = U.size - 1
    if k <= 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    s = np.arange(k, dtype=np.int64)
    # first end index with duration strictly above T
    emin = np.searchsorted(t, t[:k] + T, side="right")
    emin = np.maximum(emin, s + 1)
    ok = (emin <= k) & (U[:k] >= emin)
    lt = _SparseTable(L, np.minimum)
    best = np.full(k, -1, dtype=np.int64)
    ss = s[ok]
    lo_b = emin[ok]
    hi_b = U[:k][ok]
    has = lt.query(lo_b, hi_b) <= ss
    ss, lo_b, hi_b = ss[has], lo_b[has], hi_b[has]
    while True:
        active = lo_b < hi_b
        if not active.any():
            break
        mid = (lo_b + hi_b + 1) // 2
        right = lt.query(mid, hi_b) <= ss
        lo_b = np.where(active & right, mid, lo_b)
        hi_b = np.where(active & ~right, mid - 1, hi_b)
    best[ss] = lo_b
    starts, ends = [], []
    runmax = -1
    for si in np.flatnonzero(best >= 0):
        e = int(best[si])
        if e > runmax:
            starts.append(int(si))
            ends.append(e)
            runmax = e
    return np.asarray(starts, dtype=np.int64), np.asarray(ends, dtype=np.int64)
