# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: tape interpreter and Dormand-Prince 5(4) driver.

Mirrors ``srflow._pykernels`` step for step.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, exp, log, sqrt, atan, pow, fabs, isfinite, fmin, fmax
from libc.stdlib cimport malloc, realloc, free
from libc.string cimport memcpy

cnp.import_array()

cdef enum:
    OP_CONST = 0
    OP_ADD = 1
    OP_SUB = 2
    OP_MUL = 3
    OP_DIV = 4
    OP_NEG = 5
    OP_SIN = 6
    OP_COS = 7
    OP_EXP = 8
    OP_LOG = 9
    OP_SQRT = 10
    OP_ATAN = 11
    OP_POWI = 12
    OP_POWC = 13
    OP_GE = 14
    OP_GT = 15
    OP_LE = 16
    OP_LT = 17
    OP_SELECT = 18

cdef enum:
    STATUS_OK = 0
    STATUS_BLOWUP = 1
    STATUS_NONFINITE = 2
    STATUS_STEPSIZE = 3
    STATUS_MAXSTEPS = 4

cdef struct CTape:
    int m
    int n_in
    int n_out
    const int* ops
    const int* a
    const int* b
    const int* d
    const double* c
    const int* outs
    double* slots


cdef double C2 = 1.0 / 5, C3 = 3.0 / 10, C4 = 4.0 / 5, C5 = 8.0 / 9
cdef double A21 = 1.0 / 5
cdef double A31 = 3.0 / 40, A32 = 9.0 / 40
cdef double A41 = 44.0 / 45, A42 = -56.0 / 15, A43 = 32.0 / 9
cdef double A51 = 19372.0 / 6561, A52 = -25360.0 / 2187, A53 = 64448.0 / 6561, A54 = -212.0 / 729
cdef double A61 = 9017.0 / 3168, A62 = -355.0 / 33, A63 = 46732.0 / 5247, A64 = 49.0 / 176, A65 = -5103.0 / 18656
cdef double A71 = 35.0 / 384, A73 = 500.0 / 1113, A74 = 125.0 / 192, A75 = -2187.0 / 6784, A76 = 11.0 / 84
cdef double E1 = 71.0 / 57600, E3 = -71.0 / 16695, E4 = 71.0 / 1920, E5 = -17253.0 / 339200, E6 = 22.0 / 525, E7 = -1.0 / 40
cdef double D1 = -12715105075.0 / 11282082432.0
cdef double D3 = 87487479700.0 / 32700410799.0
cdef double D4 = -10690763975.0 / 1880347072.0
cdef double D5 = 701980252875.0 / 199316789632.0
cdef double D6 = -1453857185.0 / 822651844.0
cdef double D7 = 69997945.0 / 29380423.0
cdef double SAFETY = 0.9, FAC_MIN = 0.2, FAC_MAX = 10.0


cdef inline double powi(double x, long k) nogil:
    cdef double r = 1.0
    cdef bint inv = k < 0
    if inv:
        k = -k
    while k:
        if k & 1:
            r *= x
        x *= x
        k >>= 1
    return 1.0 / r if inv else r


cdef void run_tape(CTape* tp, const double* x, double t) noexcept nogil:
    cdef int i, s, op
    cdef double* sl = tp.slots
    cdef int n = tp.n_in
    for i in range(n):
        sl[i] = x[i]
    sl[n] = t
    for i in range(tp.m):
        s = n + 1 + i
        op = tp.ops[i]
        if op == OP_CONST:
            sl[s] = tp.c[i]
        elif op == OP_ADD:
            sl[s] = sl[tp.a[i]] + sl[tp.b[i]]
        elif op == OP_SUB:
            sl[s] = sl[tp.a[i]] - sl[tp.b[i]]
        elif op == OP_MUL:
            sl[s] = sl[tp.a[i]] * sl[tp.b[i]]
        elif op == OP_DIV:
            sl[s] = sl[tp.a[i]] / sl[tp.b[i]]
        elif op == OP_NEG:
            sl[s] = -sl[tp.a[i]]
        elif op == OP_SIN:
            sl[s] = sin(sl[tp.a[i]])
        elif op == OP_COS:
            sl[s] = cos(sl[tp.a[i]])
        elif op == OP_EXP:
            sl[s] = exp(sl[tp.a[i]])
        elif op == OP_LOG:
            sl[s] = log(sl[tp.a[i]])
        elif op == OP_SQRT:
            sl[s] = sqrt(sl[tp.a[i]])
        elif op == OP_ATAN:
            sl[s] = atan(sl[tp.a[i]])
        elif op == OP_POWI:
            sl[s] = powi(sl[tp.a[i]], <long>tp.c[i])
        elif op == OP_POWC:
            if sl[tp.a[i]] < 0.0:
                sl[s] = 0.0 / 0.0
            else:
                sl[s] = pow(sl[tp.a[i]], tp.c[i])
        elif op == OP_GE:
            sl[s] = 1.0 if sl[tp.a[i]] >= tp.c[i] else 0.0
        elif op == OP_GT:
            sl[s] = 1.0 if sl[tp.a[i]] > tp.c[i] else 0.0
        elif op == OP_LE:
            sl[s] = 1.0 if sl[tp.a[i]] <= tp.c[i] else 0.0
        elif op == OP_LT:
            sl[s] = 1.0 if sl[tp.a[i]] < tp.c[i] else 0.0
        elif op == OP_SELECT:
            sl[s] = sl[tp.a[i]] if sl[tp.d[i]] != 0.0 else sl[tp.b[i]]


cdef class _TapeHolder:
    """Keeps contiguous copies of the tape arrays alive."""
    cdef cnp.ndarray ops, a, b, d, c, outs, slots
    cdef CTape tp

    def __init__(self, tape):
        self.ops = np.ascontiguousarray(tape.ops, dtype=np.int32)
        self.a = np.ascontiguousarray(tape.a, dtype=np.int32)
        self.b = np.ascontiguousarray(tape.b, dtype=np.int32)
        self.d = np.ascontiguousarray(tape.d, dtype=np.int32)
        self.c = np.ascontiguousarray(tape.c, dtype=np.float64)
        self.outs = np.ascontiguousarray(tape.outputs, dtype=np.int32)
        self.slots = np.zeros(tape.n_in + 1 + len(tape.ops), dtype=np.float64)
        self.tp.m = len(tape.ops)
        self.tp.n_in = tape.n_in
        self.tp.n_out = len(tape.outputs)
        self.tp.ops = <const int*>cnp.PyArray_DATA(self.ops)
        self.tp.a = <const int*>cnp.PyArray_DATA(self.a)
        self.tp.b = <const int*>cnp.PyArray_DATA(self.b)
        self.tp.d = <const int*>cnp.PyArray_DATA(self.d)
        self.tp.c = <const double*>cnp.PyArray_DATA(self.c)
        self.tp.outs = <const int*>cnp.PyArray_DATA(self.outs)
        self.tp.slots = <double*>cnp.PyArray_DATA(self.slots)


def eval_tape(tape, x, double t):
    cdef _TapeHolder h = _TapeHolder(tape)
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(h.tp.n_out)
    cdef int k
    run_tape(&h.tp, &xv[0], t)
    for k in range(h.tp.n_out):
        out[k] = h.tp.slots[h.tp.outs[k]]
    return out


def eval_tape_many(tape, points, times):
    cdef _TapeHolder h = _TapeHolder(tape)
    cdef const double[:, ::1] P = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[::1] tv = np.ascontiguousarray(times, dtype=np.float64)
    cdef Py_ssize_t N = P.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((N, h.tp.n_out))
    cdef int k
    for i in range(N):
        run_tape(&h.tp, &P[i, 0], tv[i])
        for k in range(h.tp.n_out):
            out[i, k] = h.tp.slots[h.tp.outs[k]]
    return out


cdef struct Sys:
    CTape* tp
    int n
    int m
    int mode


cdef bint rhs(Sys* S, double t, const double* y, double* dy) noexcept nogil:
    """Evaluate the augmented right-hand side; returns False on non-finite."""
    cdef CTape* tp = S.tp
    cdef int n = S.n, i, j, k
    cdef double acc
    cdef double* sl = tp.slots
    run_tape(tp, y, t)
    for i in range(n):
        dy[i] = sl[tp.outs[i]]
    if S.mode >= 1:
        # J[i,k] = sl[outs[n + i*n + k]];  dV = J V;  V row-major at y[n:]
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for k in range(n):
                    acc += sl[tp.outs[n + i * n + k]] * y[n + k * n + j]
                dy[n + i * n + j] = acc
    if S.mode == 2:
        for j in range(n):
            acc = 0.0
            for i in range(n):
                acc += y[n + n * n + i] * sl[tp.outs[n + i * n + j]]
            dy[n + n * n + j] = -acc
    for i in range(S.m):
        if not isfinite(dy[i]):
            return False
    return True


cdef inline double rms_scaled(const double* v, const double* sc, int m) noexcept nogil:
    cdef double acc = 0.0, q
    cdef int i
    for i in range(m):
        q = v[i] / sc[i]
        acc += q * q
    return sqrt(acc / m)


cdef class _Store:
    """Growable output buffers."""
    cdef double* ts
    cdef double* ys
    cdef double* dense
    cdef Py_ssize_t count, cap
    cdef int m

    def __cinit__(self, int m):
        self.m = m
        self.cap = 64
        self.count = 0
        self.ts = <double*>malloc(self.cap * sizeof(double))
        self.ys = <double*>malloc(self.cap * m * sizeof(double))
        self.dense = <double*>malloc(self.cap * 5 * m * sizeof(double))
        if self.ts == NULL or self.ys == NULL or self.dense == NULL:
            raise MemoryError()

    def __dealloc__(self):
        free(self.ts)
        free(self.ys)
        free(self.dense)

    cdef int grow(self) except -1:
        cdef Py_ssize_t cap = self.cap * 2
        cdef double* p
        p = <double*>realloc(self.ts, cap * sizeof(double))
        if p == NULL:
            raise MemoryError()
        self.ts = p
        p = <double*>realloc(self.ys, cap * self.m * sizeof(double))
        if p == NULL:
            raise MemoryError()
        self.ys = p
        p = <double*>realloc(self.dense, cap * 5 * self.m * sizeof(double))
        if p == NULL:
            raise MemoryError()
        self.dense = p
        self.cap = cap
        return 0

    cdef int push(self, double t, const double* y) except -1:
        if self.count == self.cap:
            self.grow()
        self.ts[self.count] = t
        memcpy(&self.ys[self.count * self.m], y, self.m * sizeof(double))
        self.count += 1
        return 0

    cdef double* dense_slot(self) noexcept nogil:
        # dense row for the step ending at the next pushed point
        return &self.dense[(self.count - 2) * 5 * self.m]

    def result(self):
        cdef Py_ssize_t N = self.count, m = self.m
        ts = np.empty(N)
        ys = np.empty((N, m))
        dense = np.empty((max(N - 1, 0), 5, m))
        cdef double[::1] tv = ts
        cdef double[:, ::1] yv = ys
        cdef double[:, :, ::1] dv = dense
        if N > 0:
            memcpy(&tv[0], self.ts, N * sizeof(double))
            memcpy(&yv[0, 0], self.ys, N * m * sizeof(double))
        if N > 1:
            memcpy(&dv[0, 0, 0], self.dense, (N - 1) * 5 * m * sizeof(double))
        return ts, ys, dense


def dopri5(tape, int n, int mode, y0, double t0, double t1, double rtol, double atol,
           double max_step, double bound, long max_steps, double h0=0.0):
    """Compiled twin of ``srflow._pykernels.dopri5``."""
    cdef _TapeHolder holder = _TapeHolder(tape)
    cdef double[::1] y0v = np.ascontiguousarray(y0, dtype=np.float64).copy()
    cdef int m = y0v.shape[0]
    cdef Sys S
    S.tp = &holder.tp
    S.n = n
    S.m = m
    S.mode = mode
    cdef _Store store = _Store(m)
    cdef double[:, ::1] W = np.empty((12, m))
    cdef double* y = &W[0, 0]
    cdef double* ynew = &W[1, 0]
    cdef double* k1 = &W[2, 0]
    cdef double* k2 = &W[3, 0]
    cdef double* k3 = &W[4, 0]
    cdef double* k4 = &W[5, 0]
    cdef double* k5 = &W[6, 0]
    cdef double* k6 = &W[7, 0]
    cdef double* k7 = &W[8, 0]
    cdef double* tmp = &W[9, 0]
    cdef double* sc = &W[10, 0]
    cdef double* errv = &W[11, 0]
    cdef double* dn
    cdef double t = t0, span = t1 - t0, direction, h, hs, tnew, remaining, err, fac, nrm
    cdef double d0, d1, d2, hh0, hh1
    cdef long steps = 0
    cdef bint last, rejected_last = False, ok
    cdef int i
    cdef int status = STATUS_OK

    memcpy(y, &y0v[0], m * sizeof(double))
    store.push(t, y)
    if span == 0.0:
        return (STATUS_OK,) + store.result()
    direction = 1.0 if span > 0 else -1.0
    if max_step <= 0:
        max_step = fabs(span)
    else:
        max_step = fmin(max_step, fabs(span))

    if not rhs(&S, t, y, k1):
        return (STATUS_NONFINITE,) + store.result()

    if h0 > 0:
        h = h0
    else:
        for i in range(m):
            sc[i] = atol + rtol * fabs(y[i])
        d0 = rms_scaled(y, sc, m)
        d1 = rms_scaled(k1, sc, m)
        if d0 < 1e-5 or d1 < 1e-5:
            hh0 = 1e-6
        else:
            hh0 = 0.01 * d0 / d1
        for i in range(m):
            tmp[i] = y[i] + direction * hh0 * k1[i]
        if rhs(&S, t + direction * hh0, tmp, k2):
            for i in range(m):
                errv[i] = k2[i] - k1[i]
            d2 = rms_scaled(errv, sc, m) / hh0
        else:
            d2 = 1e300
        if fmax(d1, d2) <= 1e-15:
            hh1 = fmax(1e-6, hh0 * 1e-3)
        else:
            hh1 = pow(0.01 / fmax(d1, d2), 0.2)
        h = fmin(100 * hh0, hh1)
    h = fmin(h, max_step)

    with nogil:
        while True:
            remaining = (t1 - t) * direction
            if remaining <= 0:
                break
            if steps >= max_steps:
                status = STATUS_MAXSTEPS
                break
            if h < 1e-14 * fmax(1.0, fabs(t)):
                status = STATUS_STEPSIZE
                break
            last = h >= remaining
            if last:
                h = remaining
            hs = h * direction
            for i in range(m):
                tmp[i] = y[i] + hs * (A21 * k1[i])
            ok = rhs(&S, t + C2 * hs, tmp, k2)
            if ok:
                for i in range(m):
                    tmp[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i])
                ok = rhs(&S, t + C3 * hs, tmp, k3)
            if ok:
                for i in range(m):
                    tmp[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
                ok = rhs(&S, t + C4 * hs, tmp, k4)
            if ok:
                for i in range(m):
                    tmp[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
                ok = rhs(&S, t + C5 * hs, tmp, k5)
            if ok:
                for i in range(m):
                    tmp[i] = y[i] + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
                ok = rhs(&S, t + hs, tmp, k6)
            if ok:
                for i in range(m):
                    ynew[i] = y[i] + hs * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i])
                tnew = t1 if last else t + hs
                ok = rhs(&S, tnew, ynew, k7)
            steps += 1
            if not ok:
                if h > 1e-10 * fmax(1.0, fabs(span)):
                    h *= 0.25
                    rejected_last = True
                    continue
                status = STATUS_NONFINITE
                break
            for i in range(m):
                errv[i] = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
                sc[i] = atol + rtol * fmax(fabs(y[i]), fabs(ynew[i]))
            err = rms_scaled(errv, sc, m)
            if err != err:
                err = 1e300
            if err <= 1.0:
                with gil:
                    store.push(tnew, ynew)
                dn = store.dense_slot()
                for i in range(m):
                    dn[i] = y[i]
                    dn[m + i] = ynew[i] - y[i]
                    dn[2 * m + i] = hs * k1[i] - dn[m + i]
                    dn[3 * m + i] = dn[m + i] - hs * k7[i] - dn[2 * m + i]
                    dn[4 * m + i] = hs * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i])
                t = tnew
                memcpy(y, ynew, m * sizeof(double))
                memcpy(k1, k7, m * sizeof(double))
                nrm = 0.0
                for i in range(n):
                    nrm += y[i] * y[i]
                if not (sqrt(nrm) <= bound):
                    status = STATUS_BLOWUP
                    break
                if err == 0.0:
                    fac = FAC_MAX
                else:
                    fac = SAFETY * pow(err, -0.2)
                fac = fmin(FAC_MAX, fmax(FAC_MIN, fac))
                if rejected_last:
                    fac = fmin(fac, 1.0)
                rejected_last = False
                h = fmin(h * fac, max_step)
            else:
                fac = fmax(FAC_MIN, SAFETY * pow(err, -0.2))
                h *= fac
                rejected_last = True
    return (status,) + store.result()
