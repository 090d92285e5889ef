# cython: language_level=3, boundscheck=False, wraparound=False
# cython: cdivision=True, initializedcheck=False
"""Compiled inner loops.

The integrator only knows the built-in fields (``code`` 0 = Lorenz with
parameters sigma, rho, beta; ``code`` 1 = the planar Hopf oscillator with a
contracting third axis).  User-defined systems always run through the
pure-Python twin in ``_pykernels``.

Status codes returned by the integrators: 0 ok, 1 step-size underflow,
2 escape radius exceeded.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, pow, log
from libc.stdlib cimport malloc, realloc, free
from libc.string cimport memcpy

cnp.import_array()

DEF MAXD = 8

# Dormand-Prince 5(4) tableau
cdef double C2 = 1.0 / 5.0, C3 = 3.0 / 10.0, C4 = 4.0 / 5.0, C5 = 8.0 / 9.0
cdef double A21 = 1.0 / 5.0
cdef double A31 = 3.0 / 40.0, A32 = 9.0 / 40.0
cdef double A41 = 44.0 / 45.0, A42 = -56.0 / 15.0, A43 = 32.0 / 9.0
cdef double A51 = 19372.0 / 6561.0, A52 = -25360.0 / 2187.0
cdef double A53 = 64448.0 / 6561.0, A54 = -212.0 / 729.0
cdef double A61 = 9017.0 / 3168.0, A62 = -355.0 / 33.0, A63 = 46732.0 / 5247.0
cdef double A64 = 49.0 / 176.0, A65 = -5103.0 / 18656.0
cdef double A71 = 35.0 / 384.0, A73 = 500.0 / 1113.0, A74 = 125.0 / 192.0
cdef double A75 = -2187.0 / 6784.0, A76 = 11.0 / 84.0
cdef double E1 = 71.0 / 57600.0, E3 = -71.0 / 16695.0, E4 = 71.0 / 1920.0
cdef double E5 = -17253.0 / 339200.0, E6 = 22.0 / 525.0, E7 = -1.0 / 40.0
cdef double D1 = -12715105075.0 / 11282082432.0, D3 = 87487479700.0 / 32700410799.0
cdef double D4 = -10690763975.0 / 1880347072.0, D5 = 701980252875.0 / 199316789632.0
cdef double D6 = -1453857185.0 / 822651844.0, D7 = 69997945.0 / 29380423.0

cdef double MIN_STEP = 1e-14


cdef struct Model:
    int code
    const double* p
    int d
    int aug


cdef struct StepBuf:
    double* t
    double* y
    Py_ssize_t count
    Py_ssize_t cap
    int n


cdef inline void field(int code, const double* p, const double* x, double* f) noexcept nogil:
    cdef double r2
    if code == 0:
        f[0] = p[0] * (x[1] - x[0])
        f[1] = x[0] * (p[1] - x[2]) - x[1]
        f[2] = x[0] * x[1] - p[2] * x[2]
    else:
        r2 = x[0] * x[0] + x[1] * x[1]
        f[0] = x[0] * (1.0 - r2) - x[1]
        f[1] = x[1] * (1.0 - r2) + x[0]
        f[2] = -x[2]


cdef inline void jacobian(int code, const double* p, const double* x, double* J) noexcept nogil:
    # row-major 3x3
    if code == 0:
        J[0] = -p[0]; J[1] = p[0]; J[2] = 0.0
        J[3] = p[1] - x[2]; J[4] = -1.0; J[5] = -x[0]
        J[6] = x[1]; J[7] = x[0]; J[8] = -p[2]
    else:
        J[0] = 1.0 - 3.0 * x[0] * x[0] - x[1] * x[1]
        J[1] = -2.0 * x[0] * x[1] - 1.0
        J[2] = 0.0
        J[3] = -2.0 * x[0] * x[1] + 1.0
        J[4] = 1.0 - x[0] * x[0] - 3.0 * x[1] * x[1]
        J[5] = 0.0
        J[6] = 0.0; J[7] = 0.0; J[8] = -1.0


cdef inline void rhs(Model* m, const double* y, double* f) noexcept nogil:
    cdef int d = m.d, i, j, l
    cdef double J[MAXD * MAXD]
    cdef double s
    field(m.code, m.p, y, f)
    if m.aug:
        jacobian(m.code, m.p, y, J)
        for i in range(d):
            for j in range(d):
                s = 0.0
                for l in range(d):
                    s += J[i * d + l] * y[d + l * d + j]
                f[d + i * d + j] = s


cdef int push_step(StepBuf* buf, double t, const double* y) noexcept nogil:
    cdef Py_ssize_t newcap
    cdef double* nt
    cdef double* ny
    if buf.count == buf.cap:
        newcap = 2 * buf.cap + 64
        nt = <double*> realloc(buf.t, newcap * sizeof(double))
        if nt == NULL:
            return -1
        buf.t = nt
        ny = <double*> realloc(buf.y, newcap * buf.n * sizeof(double))
        if ny == NULL:
            return -1
        buf.y = ny
        buf.cap = newcap
    buf.t[buf.count] = t
    memcpy(buf.y + buf.count * buf.n, y, buf.n * sizeof(double))
    buf.count += 1
    return 0


cdef double initial_step(Model* m, int n, const double* y0, const double* f0,
                         double hmax, double tol, double* ytmp, double* ftmp) noexcept nogil:
    cdef double dnf = 0.0, dny = 0.0, sk, h, der2 = 0.0, der12, h1
    cdef int i
    for i in range(n):
        sk = tol + tol * fabs(y0[i])
        dnf += (f0[i] / sk) * (f0[i] / sk)
        dny += (y0[i] / sk) * (y0[i] / sk)
    if dnf <= 1e-10 or dny <= 1e-10:
        h = 1e-6
    else:
        h = 0.01 * sqrt(dny / dnf)
    if h > hmax:
        h = hmax
    for i in range(n):
        ytmp[i] = y0[i] + h * f0[i]
    rhs(m, ytmp, ftmp)
    for i in range(n):
        sk = tol + tol * fabs(y0[i])
        der2 += ((ftmp[i] - f0[i]) / sk) * ((ftmp[i] - f0[i]) / sk)
    der2 = sqrt(der2) / h
    der12 = der2 if der2 > sqrt(dnf) else sqrt(dnf)
    if der12 <= 1e-15:
        h1 = h * 1e-3 if h * 1e-3 > 1e-6 else 1e-6
    else:
        h1 = pow(0.01 / der12, 0.2)
    h = 100.0 * h if 100.0 * h < h1 else h1
    if h > hmax:
        h = hmax
    return h


cdef int dopri(Model* m, int n, double* y, double t, double tend, double tol,
               double escape, const double* t_out, Py_ssize_t n_out, double* y_out,
               StepBuf* steps) noexcept nogil:
    """Advance ``y`` from ``t`` to ``tend``; dense output written at ``t_out``."""
    cdef double* w = <double*> malloc(16 * n * sizeof(double))
    if w == NULL:
        return 3
    cdef double* k1 = w
    cdef double* k2 = w + n
    cdef double* k3 = w + 2 * n
    cdef double* k4 = w + 3 * n
    cdef double* k5 = w + 4 * n
    cdef double* k6 = w + 5 * n
    cdef double* k7 = w + 6 * n
    cdef double* y1 = w + 7 * n
    cdef double* yt = w + 8 * n
    cdef double* r2 = w + 9 * n
    cdef double* r3 = w + 10 * n
    cdef double* r4 = w + 11 * n
    cdef double* r5 = w + 12 * n
    cdef double* tmp = w + 13 * n
    cdef double h, hmax = tend - t, err, sk, e, fac11, fac, hnew, th, th1, rem, nrm
    cdef double facold = 1e-4, expo1 = 0.2 - 0.04 * 0.75
    cdef bint reject = False
    cdef Py_ssize_t iout = 0
    cdef int i, status = 0, d = m.d

    while iout < n_out and t_out[iout] <= t:
        memcpy(y_out + iout * n, y, n * sizeof(double))
        iout += 1
    if hmax <= 0.0:
        free(w)
        return 0
    rhs(m, y, k1)
    h = initial_step(m, n, y, k1, hmax, tol, yt, tmp)

    while True:
        rem = tend - t
        if rem <= 4.0 * 2.220446049250313e-16 * (fabs(tend) if fabs(tend) > 1.0 else 1.0):
            break
        if h >= rem:
            h = rem
        elif h < MIN_STEP:
            status = 1
            break
        for i in range(n):
            yt[i] = y[i] + h * A21 * k1[i]
        rhs(m, yt, k2)
        for i in range(n):
            yt[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i])
        rhs(m, yt, k3)
        for i in range(n):
            yt[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
        rhs(m, yt, k4)
        for i in range(n):
            yt[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
        rhs(m, yt, k5)
        for i in range(n):
            yt[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i]
                                + A65 * k5[i])
        rhs(m, yt, k6)
        for i in range(n):
            y1[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i]
                                + A76 * k6[i])
        rhs(m, y1, k7)
        err = 0.0
        for i in range(n):
            e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i]
                     + E7 * k7[i])
            sk = tol + tol * (fabs(y[i]) if fabs(y[i]) > fabs(y1[i]) else fabs(y1[i]))
            err += (e / sk) * (e / sk)
        err = sqrt(err / n)
        fac11 = pow(err, expo1)
        fac = fac11 / pow(facold, 0.04)
        fac = fac / 0.9
        if fac > 5.0:
            fac = 5.0
        if fac < 0.1:
            fac = 0.1
        hnew = h / fac
        if err <= 1.0:
            facold = err if err > 1e-4 else 1e-4
            if iout < n_out and (t_out[iout] <= t + h or h == rem):
                for i in range(n):
                    r2[i] = y1[i] - y[i]
                    r3[i] = h * k1[i] - r2[i]
                    r4[i] = r2[i] - h * k7[i] - r3[i]
                    r5[i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i]
                                 + D6 * k6[i] + D7 * k7[i])
                while iout < n_out and (t_out[iout] <= t + h or h == rem):
                    if t_out[iout] >= tend:
                        memcpy(y_out + iout * n, y1, n * sizeof(double))
                        iout += 1
                        continue
                    th = (t_out[iout] - t) / h
                    th1 = 1.0 - th
                    for i in range(n):
                        y_out[iout * n + i] = y[i] + th * (r2[i] + th1 * (r3[i] + th * (
                            r4[i] + th1 * r5[i])))
                    iout += 1
            if h == rem:
                t = tend
            else:
                t = t + h
            memcpy(y, y1, n * sizeof(double))
            memcpy(k1, k7, n * sizeof(double))
            nrm = 0.0
            for i in range(d):
                nrm += y[i] * y[i]
            if sqrt(nrm) > escape or nrm != nrm:
                status = 2
                break
            if steps != NULL:
                if push_step(steps, t, y) != 0:
                    status = 3
                    break
            if reject and hnew > h:
                hnew = h
            reject = False
            if t >= tend:
                break
        else:
            hnew = h / (5.0 if fac11 / 0.9 > 5.0 else fac11 / 0.9)
            reject = True
        h = hnew

    if status == 0:
        while iout < n_out:
            memcpy(y_out + iout * n, y, n * sizeof(double))
            iout += 1
    free(w)
    return status


def flow_samples(int code, double[::1] params, double[::1] x0, double[::1] t_out,
                 double tol, double escape, bint keep_steps=False):
    """Integrate a built-in field and sample it at ``t_out`` (t_out[0] is the start).

    Returns ``(status, samples, step_times, step_states)``.
    """
    cdef int d = x0.shape[0]
    cdef Py_ssize_t n_out = t_out.shape[0]
    cdef Model m
    m.code = code
    m.p = &params[0]
    m.d = d
    m.aug = 0
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n_out, d))
    cdef double[::1] y = np.array(x0, dtype=np.float64)
    cdef StepBuf buf
    buf.t = NULL
    buf.y = NULL
    buf.count = 0
    buf.cap = 0
    buf.n = d
    cdef StepBuf* bptr = &buf if keep_steps else NULL
    cdef int status
    cdef double t0 = t_out[0], t1 = t_out[n_out - 1]
    cdef double* op = <double*> out.data
    with nogil:
        status = dopri(&m, d, &y[0], t0, t1, tol, escape, &t_out[0], n_out, op, bptr)
    st = np.empty(buf.count)
    sy = np.empty((buf.count, d))
    cdef Py_ssize_t i, j
    for i in range(buf.count):
        st[i] = buf.t[i]
        for j in range(d):
            sy[i, j] = buf.y[i * d + j]
    free(buf.t)
    free(buf.y)
    return status, out, st, sy


def flow_tangent(int code, double[::1] params, double[:, ::1] starts, double[::1] durations,
                 double tol, double escape):
    """Per-leg state and variational integration with V(0) = I.

    Returns ``(status, failed_leg, ends, mats)``.
    """
    cdef Py_ssize_t m_legs = starts.shape[0], k
    cdef int d = starts.shape[1], n = d + d * d, i, j, status = 0
    cdef Model m
    m.code = code
    m.p = &params[0]
    m.d = d
    m.aug = 1
    ends = np.empty((m_legs, d))
    mats = np.empty((m_legs, d, d))
    cdef double[:, ::1] ev = ends
    cdef double[:, :, ::1] mv = mats
    cdef double y[MAXD + MAXD * MAXD]
    cdef double tout[1]
    cdef double yout[MAXD + MAXD * MAXD]
    cdef Py_ssize_t failed = -1
    with nogil:
        for k in range(m_legs):
            for i in range(d):
                y[i] = starts[k, i]
                for j in range(d):
                    y[d + i * d + j] = 1.0 if i == j else 0.0
            tout[0] = durations[k]
            status = dopri(&m, n, y, 0.0, durations[k], tol, escape, tout, 1, yout, NULL)
            if status != 0:
                failed = k
                break
            for i in range(d):
                ev[k, i] = yout[i]
                for j in range(d):
                    mv[k, i, j] = yout[d + i * d + j]
    return status, failed, ends, mats


cdef inline void frame_from_scratch(const double* u, int d, double* B) noexcept nogil:
    """Gram-Schmidt on the standard basis minus the axis most aligned with ``u``."""
    cdef int drop = 0, j, r = 0, l, i
    cdef double best = -1.0, a, s, nrm
    for j in range(d):
        a = fabs(u[j])
        if a > best:
            best = a
            drop = j
    for j in range(d):
        if j == drop:
            continue
        for i in range(d):
            B[r * d + i] = 1.0 if i == j else 0.0
        s = u[j]
        for i in range(d):
            B[r * d + i] -= s * u[i]
        for l in range(r):
            s = 0.0
            for i in range(d):
                s += B[l * d + i] * B[r * d + i]
            for i in range(d):
                B[r * d + i] -= s * B[l * d + i]
        nrm = 0.0
        for i in range(d):
            nrm += B[r * d + i] * B[r * d + i]
        nrm = sqrt(nrm)
        for i in range(d):
            B[r * d + i] /= nrm
        r += 1


def transport_frames(double[:, ::1] u, double[:, ::1] B0, double min_norm=1e-8):
    """Carry an orthonormal normal basis along unit flow directions ``u``.

    Returns ``(bases, rebuilt)``; ``rebuilt[i]`` is 1 where projection of the
    previous basis degenerated and the frame was rebuilt from scratch.
    """
    cdef Py_ssize_t m = u.shape[0], k
    cdef int d = u.shape[1], nb = d - 1, r, l, i
    bases = np.empty((m, nb, d))
    rebuilt = np.zeros(m, dtype=np.int8)
    cdef double[:, :, ::1] bv = bases
    cdef signed char[::1] rv = rebuilt
    cdef double prev[MAXD * MAXD]
    cdef double cur[MAXD * MAXD]
    cdef double s, nrm
    cdef bint bad
    for r in range(nb):
        for i in range(d):
            bv[0, r, i] = B0[r, i]
    with nogil:
        for k in range(1, m):
            for r in range(nb):
                for i in range(d):
                    prev[r * d + i] = bv[k - 1, r, i]
            bad = False
            for r in range(nb):
                s = 0.0
                for i in range(d):
                    s += prev[r * d + i] * u[k, i]
                for i in range(d):
                    cur[r * d + i] = prev[r * d + i] - s * u[k, i]
                for l in range(r):
                    s = 0.0
                    for i in range(d):
                        s += cur[l * d + i] * cur[r * d + i]
                    for i in range(d):
                        cur[r * d + i] -= s * cur[l * d + i]
                nrm = 0.0
                for i in range(d):
                    nrm += cur[r * d + i] * cur[r * d + i]
                nrm = sqrt(nrm)
                if nrm < min_norm:
                    bad = True
                    break
                for i in range(d):
                    cur[r * d + i] /= nrm
                s = 0.0
                for i in range(d):
                    s += cur[r * d + i] * prev[r * d + i]
                if s < 0.0:
                    for i in range(d):
                        cur[r * d + i] = -cur[r * d + i]
            if bad:
                frame_from_scratch(&u[k, 0], d, cur)
                rv[k] = 1
            for r in range(nb):
                for i in range(d):
                    bv[k, r, i] = cur[r * d + i]
    return bases, rebuilt


cdef inline double mgs_columns(double* Z, int n, int k, double* diag) noexcept nogil:
    """In-place modified Gram-Schmidt (two passes) on the k columns of row-major n x k Z.

    Returns the smallest diagonal entry.
    """
    cdef int j, l, i, p
    cdef double s, nrm, rjj, mn = 1e308
    for j in range(k):
        rjj = 0.0
        for p in range(2):
            for l in range(j):
                s = 0.0
                for i in range(n):
                    s += Z[i * k + l] * Z[i * k + j]
                for i in range(n):
                    Z[i * k + j] -= s * Z[i * k + l]
        nrm = 0.0
        for i in range(n):
            nrm += Z[i * k + j] * Z[i * k + j]
        nrm = sqrt(nrm)
        diag[j] = nrm
        if nrm < mn:
            mn = nrm
        if nrm > 0.0:
            for i in range(n):
                Z[i * k + j] /= nrm
    return mn


def qr_accumulate(double[:, :, ::1] steps, double[:, ::1] Q0, bint keep_q=False):
    """Benettin accumulation of log R diagonals.

    Returns ``(cumlogs, Qhist, min_diag)`` with ``cumlogs[i]`` the running sums
    after step i and ``Qhist[i]`` the frame before step i (``Qhist[m]`` final).
    """
    cdef Py_ssize_t m = steps.shape[0], s
    cdef int n = steps.shape[1], k = Q0.shape[1], i, j, l
    cumlogs = np.empty((m, k))
    cdef double[:, ::1] cv = cumlogs
    qhist = np.empty((m + 1, n, k)) if keep_q else np.empty((1, n, k))
    cdef double[:, :, ::1] qv = qhist
    cdef double Q[MAXD * MAXD]
    cdef double Z[MAXD * MAXD]
    cdef double diag[MAXD]
    cdef double acc[MAXD]
    cdef double mn = 1e308, mstep, sacc
    for i in range(n):
        for j in range(k):
            Q[i * k + j] = Q0[i, j]
            qv[0, i, j] = Q0[i, j]
    for j in range(k):
        acc[j] = 0.0
    with nogil:
        for s in range(m):
            for i in range(n):
                for j in range(k):
                    sacc = 0.0
                    for l in range(n):
                        sacc += steps[s, i, l] * Q[l * k + j]
                    Z[i * k + j] = sacc
            mstep = mgs_columns(Z, n, k, diag)
            if mstep < mn:
                mn = mstep
            for j in range(k):
                acc[j] += log(diag[j]) if diag[j] > 0.0 else -1e308
                cv[s, j] = acc[j]
            memcpy(Q, Z, n * k * sizeof(double))
            if keep_q:
                for i in range(n):
                    for j in range(k):
                        qv[s + 1, i, j] = Q[i * k + j]
    if not keep_q:
        qhist = None
    return cumlogs, qhist, mn


cdef int solve_inplace(double* A, double* X, int n, int k) noexcept nogil:
    """Solve A Y = X for n x k X (row-major) with partial pivoting; A is destroyed."""
    cdef int c, r, piv, j, i
    cdef double best, f, tmp
    for c in range(n):
        piv = c
        best = fabs(A[c * n + c])
        for r in range(c + 1, n):
            if fabs(A[r * n + c]) > best:
                best = fabs(A[r * n + c])
                piv = r
        if best == 0.0:
            return 1
        if piv != c:
            for j in range(n):
                tmp = A[c * n + j]; A[c * n + j] = A[piv * n + j]; A[piv * n + j] = tmp
            for j in range(k):
                tmp = X[c * k + j]; X[c * k + j] = X[piv * k + j]; X[piv * k + j] = tmp
        for r in range(c + 1, n):
            f = A[r * n + c] / A[c * n + c]
            if f != 0.0:
                for j in range(c, n):
                    A[r * n + j] -= f * A[c * n + j]
                for j in range(k):
                    X[r * k + j] -= f * X[c * k + j]
    for c in range(n - 1, -1, -1):
        for j in range(k):
            tmp = X[c * k + j]
            for i in range(c + 1, n):
                tmp -= A[c * n + i] * X[i * k + j]
            X[c * k + j] = tmp / A[c * n + c]
    return 0


def backward_subspace(double[:, :, ::1] steps, double[:, ::1] V_end):
    """Iterate a k-dimensional subspace backwards through the inverse cocycle.

    Returns ``hist`` with ``hist[i]`` an orthonormal n x k basis at sample i.
    """
    cdef Py_ssize_t m = steps.shape[0], s
    cdef int n = steps.shape[1], k = V_end.shape[1], i, j, status = 0
    hist = np.empty((m + 1, n, k))
    cdef double[:, :, ::1] hv = hist
    cdef double A[MAXD * MAXD]
    cdef double X[MAXD * MAXD]
    cdef double diag[MAXD]
    for i in range(n):
        for j in range(k):
            X[i * k + j] = V_end[i, j]
    mgs_columns(X, n, k, diag)
    for i in range(n):
        for j in range(k):
            hv[m, i, j] = X[i * k + j]
    with nogil:
        for s in range(m - 1, -1, -1):
            for i in range(n):
                for j in range(n):
                    A[i * n + j] = steps[s, i, j]
            if solve_inplace(A, X, n, k) != 0:
                status = 1
                break
            mgs_columns(X, n, k, diag)
            for i in range(n):
                for j in range(k):
                    hv[s, i, j] = X[i * k + j]
    if status != 0:
        raise np.linalg.LinAlgError("singular cocycle step")
    return hist


# --- quasi-hyperbolic range bounds (segment trees) ---------------------------

cdef Py_ssize_t tree_size(Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t s = 1
    while s < n:
        s *= 2
    return s


cdef Py_ssize_t first_above(double* tree, Py_ssize_t size, Py_ssize_t node, Py_ssize_t nl,
                            Py_ssize_t nr, Py_ssize_t lo, Py_ssize_t hi, double thr) noexcept nogil:
    """Leftmost index in [lo, hi] whose value exceeds thr (max-tree), else -1."""
    cdef Py_ssize_t mid, res
    if nr < lo or nl > hi or tree[node] <= thr:
        return -1
    if nl == nr:
        return nl
    mid = (nl + nr) // 2
    res = first_above(tree, size, 2 * node, nl, mid, lo, hi, thr)
    if res >= 0:
        return res
    return first_above(tree, size, 2 * node + 1, mid + 1, nr, lo, hi, thr)


cdef Py_ssize_t last_above(double* tree, Py_ssize_t size, Py_ssize_t node, Py_ssize_t nl,
                           Py_ssize_t nr, Py_ssize_t lo, Py_ssize_t hi, double thr) noexcept nogil:
    """Rightmost index in [lo, hi] whose value exceeds thr (max-tree), else -1."""
    cdef Py_ssize_t mid, res
    if nr < lo or nl > hi or tree[node] <= thr:
        return -1
    if nl == nr:
        return nl
    mid = (nl + nr) // 2
    res = last_above(tree, size, 2 * node + 1, mid + 1, nr, lo, hi, thr)
    if res >= 0:
        return res
    return last_above(tree, size, 2 * node, nl, mid, lo, hi, thr)


cdef double* build_max_tree(const double* vals, Py_ssize_t n, Py_ssize_t* size_out) noexcept nogil:
    cdef Py_ssize_t size = tree_size(n), i
    cdef double* tree = <double*> malloc(2 * size * sizeof(double))
    for i in range(2 * size):
        tree[i] = -1e308
    for i in range(n):
        tree[size + i] = vals[i]
    for i in range(size - 1, 0, -1):
        tree[i] = tree[2 * i] if tree[2 * i] > tree[2 * i + 1] else tree[2 * i + 1]
    size_out[0] = size
    return tree


def qh_bounds(double[::1] a, double[::1] b, double[::1] dt, double eta, double slack):
    """Admissible end bound ``U[s]`` and start bound ``L[e]`` for quasi-hyperbolic ranges.

    A range of steps [s, e) satisfies the three inequalities iff
    ``e <= U[s]`` and ``L[e] <= s``.
    """
    cdef Py_ssize_t k = a.shape[0], i, s, e, f, size_q, size_w
    q = np.empty(k + 1)
    w = np.empty(k + 1)
    cdef double[::1] qv = q
    cdef double[::1] wv = w
    U = np.empty(k + 1, dtype=np.int64)
    L = np.empty(k + 1, dtype=np.int64)
    cdef long long[::1] uv = U
    cdef long long[::1] lv = L
    cdef double* tq
    cdef double* tw
    cdef Py_ssize_t nextbad = k
    qv[0] = 0.0
    wv[0] = 0.0
    for i in range(k):
        qv[i + 1] = qv[i] + (a[i] + eta * dt[i])
        wv[i + 1] = wv[i] + (b[i] - eta * dt[i])
    with nogil:
        tq = build_max_tree(&qv[0], k + 1, &size_q)
        tw = build_max_tree(&wv[0], k + 1, &size_w)
        uv[k] = k
        for s in range(k - 1, -1, -1):
            if a[s] - b[s] + eta * dt[s] > slack:
                nextbad = s
            f = first_above(tq, size_q, 1, 0, size_q - 1, s + 1, k, qv[s] + slack)
            if f < 0:
                f = k
            uv[s] = f if f < nextbad else nextbad
        lv[0] = 0
        for e in range(1, k + 1):
            f = last_above(tw, size_w, 1, 0, size_w - 1, 0, e - 1, wv[e] + slack)
            lv[e] = f + 1
        free(tq)
        free(tw)
    return U, L


cdef Py_ssize_t last_le(long long* tree, Py_ssize_t node, Py_ssize_t nl, Py_ssize_t nr,
                        Py_ssize_t lo, Py_ssize_t hi, long long thr) noexcept nogil:
    """Rightmost index in [lo, hi] with value <= thr (min-tree), else -1."""
    cdef Py_ssize_t mid, res
    if nr < lo or nl > hi or tree[node] > thr:
        return -1
    if nl == nr:
        return nl
    mid = (nl + nr) // 2
    res = last_le(tree, 2 * node + 1, mid + 1, nr, lo, hi, thr)
    if res >= 0:
        return res
    return last_le(tree, 2 * node, nl, mid, lo, hi, thr)


def maximal_ranges(long long[::1] U, long long[::1] L, double[::1] t, double T):
    """Inclusion-maximal valid ranges [s, e) with duration t[e] - t[s] > T."""
    cdef Py_ssize_t k = U.shape[0] - 1, size = tree_size(k + 1), i, s, lo, e, emin = 0
    cdef long long runmax = -1
    cdef long long* tree = <long long*> malloc(2 * size * sizeof(long long))
    for i in range(2 * size):
        tree[i] = 9223372036854775807
    for i in range(k + 1):
        tree[size + i] = L[i]
    for i in range(size - 1, 0, -1):
        tree[i] = tree[2 * i] if tree[2 * i] < tree[2 * i + 1] else tree[2 * i + 1]
    starts = []
    ends = []
    for s in range(k):
        if emin <= s:
            emin = s + 1
        while emin <= k and t[emin] - t[s] <= T:
            emin += 1
        if emin > k:
            break
        lo = emin
        if U[s] < lo:
            continue
        e = last_le(tree, 1, 0, size - 1, lo, U[s], s)
        if e < 0:
            continue
        if e > runmax:
            starts.append(s)
            ends.append(e)
            runmax = e
    free(tree)
    return np.asarray(starts, dtype=np.int64), np.asarray(ends, dtype=np.int64)
