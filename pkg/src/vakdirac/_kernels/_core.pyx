# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False, language_level=3
"""Compiled kernel backend: tape evaluation with forward-mode value /
gradient / Hessian propagation, the bordered Newton solve, and the RK4
drivers.  Mirrors `_pure` op-for-op; see `ops.py` for the instruction
set and status codes.
"""

import numpy as np

from libc.math cimport sin, cos, tan, sqrt, exp, log, pow, fabs
from libc.stdlib cimport malloc, free
from libc.string cimport memset

BACKEND_NAME = "compiled"

cdef enum:
    OP_CONST = 0
    OP_VARQ = 1
    OP_VARV = 2
    OP_ADD = 3
    OP_SUB = 4
    OP_MUL = 5
    OP_DIV = 6
    OP_NEG = 7
    OP_SIN = 8
    OP_COS = 9
    OP_TAN = 10
    OP_SQRT = 11
    OP_EXP = 12
    OP_LOG = 13
    OP_POWI = 14
    OP_POWF = 15
    OP_POWV = 16

cdef enum:
    ST_OK = 0
    ST_NEWTON = 1
    ST_SINGULAR = 2
    ST_DOMAIN = 3


cdef double _powi_d1(double base, int k) nogil:
    if k == 0:
        return 0.0
    if k == 1:
        return 1.0
    return k * pow(base, k - 1)


cdef double _powi_d2(double base, int k) nogil:
    if k == 0 or k == 1:
        return 0.0
    return k * (k - 1.0) * pow(base, k - 2)


cdef int _eval(const int[:, ::1] code, const double[::1] consts, int n,
               const double* q, const double* v, int mode,
               double* vals, double* grads, double* hess,
               int* err_instr) nogil:
    """Forward pass over a tape.  mode: 0 value, 1 +gradient, 2 +Hessian.

    grads is (k, G) flat and hess (k, G, G) flat with G = 2n; entry order
    of the differentiation variables is (q, v).
    """
    cdef int k = code.shape[0]
    cdef int G = 2 * n
    cdef int GG = G * G
    cdef int i, j, l, op, a, b
    cdef double x, y, w, f0, f1, f2, ln, gu_j
    cdef double *ga
    cdef double *gb
    cdef double *g
    cdef double *Ha
    cdef double *Hb
    cdef double *H

    for i in range(k):
        op = code[i, 0]
        a = code[i, 1]
        b = code[i, 2]
        if mode >= 1:
            g = grads + i * G
            memset(g, 0, G * sizeof(double))
        if mode >= 2:
            H = hess + i * GG
            memset(H, 0, GG * sizeof(double))

        if op == OP_CONST:
            vals[i] = consts[a]
            continue
        if op == OP_VARQ:
            vals[i] = q[a]
            if mode >= 1:
                g[a] = 1.0
            continue
        if op == OP_VARV:
            vals[i] = v[a]
            if mode >= 1:
                g[n + a] = 1.0
            continue

        if op == OP_ADD or op == OP_SUB or op == OP_MUL or op == OP_DIV:
            x = vals[a]
            y = vals[b]
            if mode >= 1:
                ga = grads + a * G
                gb = grads + b * G
            if mode >= 2:
                Ha = hess + a * GG
                Hb = hess + b * GG
            if op == OP_ADD:
                vals[i] = x + y
                if mode >= 1:
                    for j in range(G):
                        g[j] = ga[j] + gb[j]
                if mode >= 2:
                    for j in range(GG):
                        H[j] = Ha[j] + Hb[j]
            elif op == OP_SUB:
                vals[i] = x - y
                if mode >= 1:
                    for j in range(G):
                        g[j] = ga[j] - gb[j]
                if mode >= 2:
                    for j in range(GG):
                        H[j] = Ha[j] - Hb[j]
            elif op == OP_MUL:
                vals[i] = x * y
                if mode >= 1:
                    for j in range(G):
                        g[j] = x * gb[j] + y * ga[j]
                if mode >= 2:
                    for j in range(G):
                        for l in range(G):
                            H[j * G + l] = (x * Hb[j * G + l] + y * Ha[j * G + l]
                                            + ga[j] * gb[l] + gb[j] * ga[l])
            else:  # DIV
                if y == 0.0:
                    err_instr[0] = i
                    return ST_DOMAIN
                w = x / y
                vals[i] = w
                if mode >= 1:
                    for j in range(G):
                        g[j] = (ga[j] - w * gb[j]) / y
                if mode >= 2:
                    for j in range(G):
                        for l in range(G):
                            H[j * G + l] = (Ha[j * G + l] - g[j] * gb[l]
                                            - gb[j] * g[l] - w * Hb[j * G + l]) / y
            continue

        if op == OP_POWV:
            x = vals[a]
            if x <= 0.0:
                err_instr[0] = i
                return ST_DOMAIN
            y = vals[b]
            ln = log(x)
            w = pow(x, y)
            vals[i] = w
            if mode >= 1:
                ga = grads + a * G
                gb = grads + b * G
                # gu (derivative of y*ln x) is accumulated into g first
                for j in range(G):
                    g[j] = ln * gb[j] + (y / x) * ga[j]
            if mode >= 2:
                Ha = hess + a * GG
                Hb = hess + b * GG
                for j in range(G):
                    for l in range(G):
                        H[j * G + l] = w * (
                            ln * Hb[j * G + l]
                            + (gb[j] * ga[l] + ga[j] * gb[l]) / x
                            + (y / x) * Ha[j * G + l]
                            - (y / (x * x)) * ga[j] * ga[l]
                            + g[j] * g[l])
            if mode >= 1:
                for j in range(G):
                    g[j] = w * g[j]
            continue

        # remaining ops are unary compositions f(x) with chain rule
        x = vals[a]
        if op == OP_NEG:
            f0 = -x; f1 = -1.0; f2 = 0.0
        elif op == OP_SIN:
            f0 = sin(x); f1 = cos(x); f2 = -f0
        elif op == OP_COS:
            f0 = cos(x); f1 = -sin(x); f2 = -f0
        elif op == OP_TAN:
            f0 = tan(x); f1 = 1.0 + f0 * f0; f2 = 2.0 * f0 * f1
        elif op == OP_SQRT:
            if x < 0.0 or (x == 0.0 and mode >= 1):
                err_instr[0] = i
                return ST_DOMAIN
            f0 = sqrt(x)
            f1 = 0.5 / f0 if mode >= 1 else 0.0
            f2 = -0.25 / (f0 * x) if mode >= 2 else 0.0
        elif op == OP_EXP:
            f0 = exp(x); f1 = f0; f2 = f0
        elif op == OP_LOG:
            if x <= 0.0:
                err_instr[0] = i
                return ST_DOMAIN
            f0 = log(x); f1 = 1.0 / x; f2 = -1.0 / (x * x)
        elif op == OP_POWI:
            if x == 0.0 and b < 0:
                err_instr[0] = i
                return ST_DOMAIN
            f0 = pow(x, b)
            f1 = _powi_d1(x, b)
            f2 = _powi_d2(x, b)
        elif op == OP_POWF:
            if x <= 0.0:
                err_instr[0] = i
                return ST_DOMAIN
            y = consts[b]
            f0 = pow(x, y)
            f1 = y * pow(x, y - 1.0)
            f2 = y * (y - 1.0) * pow(x, y - 2.0)
        else:
            err_instr[0] = i
            return ST_DOMAIN
        vals[i] = f0
        if mode >= 1:
            ga = grads + a * G
            for j in range(G):
                g[j] = f1 * ga[j]
        if mode >= 2:
            Ha = hess + a * GG
            for j in range(G):
                for l in range(G):
                    H[j * G + l] = f1 * Ha[j * G + l] + f2 * ga[j] * ga[l]
    err_instr[0] = -1
    return ST_OK


cdef int _solve_dense(double* A, double* rhs, int s) nogil:
    """In-place Gaussian elimination with partial pivoting.

    Returns ST_SINGULAR when the pivot ratio suggests a condition number
    above ~1e12, mirroring the pure backend's condition estimate.
    """
    cdef int i, j, l, piv
    cdef double best, tmp, factor
    cdef double maxpiv = 0.0, minpiv = 1e300
    for i in range(s):
        piv = i
        best = fabs(A[i * s + i])
        for j in range(i + 1, s):
            if fabs(A[j * s + i]) > best:
                best = fabs(A[j * s + i])
                piv = j
        if best == 0.0:
            return ST_SINGULAR
        if piv != i:
            for l in range(s):
                tmp = A[i * s + l]
                A[i * s + l] = A[piv * s + l]
                A[piv * s + l] = tmp
            tmp = rhs[i]
            rhs[i] = rhs[piv]
            rhs[piv] = tmp
        if best > maxpiv:
            maxpiv = best
        if best < minpiv:
            minpiv = best
        for j in range(i + 1, s):
            factor = A[j * s + i] / A[i * s + i]
            if factor != 0.0:
                for l in range(i, s):
                    A[j * s + l] -= factor * A[i * s + l]
                rhs[j] -= factor * rhs[i]
    if minpiv <= 1e-12 * maxpiv:
        return ST_SINGULAR
    for i in range(s - 1, -1, -1):
        tmp = rhs[i]
        for l in range(i + 1, s):
            tmp -= A[i * s + l] * rhs[l]
        rhs[i] = tmp / A[i * s + i]
    return ST_OK


cdef struct Workspace:
    double* vals
    double* grads
    double* hess
    double* J
    double* F
    double* gq_acc     # n: accumulated d(Lvak)/dq
    double* Fv         # n
    double* Hvv        # n*n
    double* Gmat       # m*n
    double* phivals    # m


cdef int _ws_alloc(Workspace* ws, int max_k, int n, int m) nogil:
    cdef int G = 2 * n
    cdef int s = n + m
    ws.vals = <double*> malloc(max_k * sizeof(double))
    ws.grads = <double*> malloc(max_k * G * sizeof(double))
    ws.hess = <double*> malloc(max_k * G * G * sizeof(double))
    ws.J = <double*> malloc(s * s * sizeof(double))
    ws.F = <double*> malloc(s * sizeof(double))
    ws.gq_acc = <double*> malloc(n * sizeof(double))
    ws.Fv = <double*> malloc(n * sizeof(double))
    ws.Hvv = <double*> malloc(n * n * sizeof(double))
    ws.Gmat = <double*> malloc((m if m > 0 else 1) * n * sizeof(double))
    ws.phivals = <double*> malloc((m if m > 0 else 1) * sizeof(double))
    if (ws.vals == NULL or ws.grads == NULL or ws.hess == NULL or
            ws.J == NULL or ws.F == NULL or ws.gq_acc == NULL or
            ws.Fv == NULL or ws.Hvv == NULL or ws.Gmat == NULL or
            ws.phivals == NULL):
        return 1
    return 0


cdef void _ws_free(Workspace* ws) nogil:
    free(ws.vals); free(ws.grads); free(ws.hess); free(ws.J); free(ws.F)
    free(ws.gq_acc); free(ws.Fv); free(ws.Hvv); free(ws.Gmat); free(ws.phivals)


cdef int _newton(const int[:, ::1] Lc, const double[::1] Lk,
                 const int[:, ::1] pc, const long long[::1] pstarts,
                 const double[::1] pk, const long long[::1] pcstarts,
                 int n, int m, const double* q, const double* p,
                 double* v, double* lam, double tol, int maxiter,
                 Workspace* ws, int* iters, int* tape_id, int* instr) nogil:
    """Bordered Newton solve; v/lam updated in place."""
    cdef int G = 2 * n
    cdef int s = n + m
    cdef int it = 0, st, i, j, a, i0, i1
    cdef double res, aval
    cdef int kL = Lc.shape[0]
    tape_id[0] = -1
    instr[0] = -1
    while True:
        st = _eval(Lc, Lk, n, q, v, 2, ws.vals, ws.grads, ws.hess, instr)
        if st != ST_OK:
            tape_id[0] = 0
            return st
        for i in range(n):
            ws.Fv[i] = ws.grads[(kL - 1) * G + n + i] - p[i]
            for j in range(n):
                ws.Hvv[i * n + j] = ws.hess[(kL - 1) * G * G + (n + i) * G + (n + j)]
        for a in range(m):
            i0 = <int> pstarts[a]
            i1 = <int> pstarts[a + 1]
            st = _eval(pc[i0:i1], pk[pcstarts[a]:pcstarts[a + 1]], n, q, v, 2,
                       ws.vals, ws.grads, ws.hess, instr)
            if st != ST_OK:
                tape_id[0] = 1 + a
                return st
            ws.phivals[a] = ws.vals[i1 - i0 - 1]
            for i in range(n):
                ws.Fv[i] += lam[a] * ws.grads[(i1 - i0 - 1) * G + n + i]
                ws.Gmat[a * n + i] = ws.grads[(i1 - i0 - 1) * G + n + i]
                for j in range(n):
                    ws.Hvv[i * n + j] += lam[a] * ws.hess[(i1 - i0 - 1) * G * G + (n + i) * G + (n + j)]
        res = 0.0
        for i in range(n):
            aval = fabs(ws.Fv[i])
            if aval > res:
                res = aval
        for a in range(m):
            aval = fabs(ws.phivals[a])
            if aval > res:
                res = aval
        if res <= tol:
            iters[0] = it
            return ST_OK
        if it >= maxiter:
            iters[0] = it
            return ST_NEWTON
        for i in range(s):
            for j in range(s):
                ws.J[i * s + j] = 0.0
        for i in range(n):
            for j in range(n):
                ws.J[i * s + j] = ws.Hvv[i * n + j]
            for a in range(m):
                ws.J[i * s + n + a] = ws.Gmat[a * n + i]
                ws.J[(n + a) * s + i] = ws.Gmat[a * n + i]
        for i in range(n):
            ws.F[i] = -ws.Fv[i]
        for a in range(m):
            ws.F[n + a] = -ws.phivals[a]
        st = _solve_dense(ws.J, ws.F, s)
        if st != ST_OK:
            return st
        for i in range(n):
            v[i] += ws.F[i]
        for a in range(m):
            lam[a] += ws.F[n + a]
        it += 1


cdef int _vak_pdot(const int[:, ::1] Lc, const double[::1] Lk,
                   const int[:, ::1] pc, const long long[::1] pstarts,
                   const double[::1] pk, const long long[::1] pcstarts,
                   int n, int m, const double* q, const double* v,
                   const double* lam, Workspace* ws, double* pdot,
                   int* tape_id, int* instr) nogil:
    cdef int G = 2 * n
    cdef int st, i, a, i0, i1
    cdef int kL = Lc.shape[0]
    st = _eval(Lc, Lk, n, q, v, 1, ws.vals, ws.grads, ws.hess, instr)
    if st != ST_OK:
        tape_id[0] = 0
        return st
    for i in range(n):
        pdot[i] = ws.grads[(kL - 1) * G + i]
    for a in range(m):
        i0 = <int> pstarts[a]
        i1 = <int> pstarts[a + 1]
        st = _eval(pc[i0:i1], pk[pcstarts[a]:pcstarts[a + 1]], n, q, v, 1,
                   ws.vals, ws.grads, ws.hess, instr)
        if st != ST_OK:
            tape_id[0] = 1 + a
            return st
        for i in range(n):
            pdot[i] += lam[a] * ws.grads[(i1 - i0 - 1) * G + i]
    tape_id[0] = -1
    return ST_OK


cdef int _max_code_rows(const int[:, ::1] Lc, const int[:, ::1] pc,
                        const long long[::1] pstarts, int m) nogil:
    cdef int mx = Lc.shape[0]
    cdef int a, ln
    for a in range(m):
        ln = <int> (pstarts[a + 1] - pstarts[a])
        if ln > mx:
            mx = ln
    return mx


def tape_value(code, consts, n, q, v):
    code = np.ascontiguousarray(code, dtype=np.int32)
    consts = np.ascontiguousarray(consts, dtype=np.float64)
    q = np.ascontiguousarray(q, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    cdef int[:, ::1] c = code
    cdef double[::1] k = consts
    cdef double[::1] qv = q
    cdef double[::1] vv = v
    cdef int kk = c.shape[0]
    vals = np.empty(kk, dtype=np.float64)
    cdef double[::1] va = vals
    cdef int instr = -1
    cdef int st = _eval(c, k, <int> n, &qv[0], &vv[0], 0, &va[0], NULL, NULL, &instr)
    if st != ST_OK:
        return st, instr, 0.0
    return ST_OK, -1, float(vals[kk - 1])


def tape_grad(code, consts, n, q, v):
    code = np.ascontiguousarray(code, dtype=np.int32)
    consts = np.ascontiguousarray(consts, dtype=np.float64)
    q = np.ascontiguousarray(q, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    cdef int[:, ::1] c = code
    cdef double[::1] k = consts
    cdef double[::1] qv = q
    cdef double[::1] vv = v
    cdef int nn = <int> n
    cdef int G = 2 * nn
    cdef int kk = c.shape[0]
    vals = np.empty(kk, dtype=np.float64)
    grads = np.zeros((kk, G), dtype=np.float64)
    cdef double[::1] va = vals
    cdef double[:, ::1] ga = grads
    cdef int instr = -1
    cdef int st = _eval(c, k, nn, &qv[0], &vv[0], 1, &va[0], &ga[0, 0], NULL, &instr)
    if st != ST_OK:
        return st, instr, 0.0, np.zeros(G)
    return ST_OK, -1, float(vals[kk - 1]), grads[kk - 1].copy()


def tape_hess(code, consts, n, q, v):
    code = np.ascontiguousarray(code, dtype=np.int32)
    consts = np.ascontiguousarray(consts, dtype=np.float64)
    q = np.ascontiguousarray(q, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    cdef int[:, ::1] c = code
    cdef double[::1] k = consts
    cdef double[::1] qv = q
    cdef double[::1] vv = v
    cdef int nn = <int> n
    cdef int G = 2 * nn
    cdef int kk = c.shape[0]
    vals = np.empty(kk, dtype=np.float64)
    grads = np.zeros((kk, G), dtype=np.float64)
    hess = np.zeros((kk, G, G), dtype=np.float64)
    cdef double[::1] va = vals
    cdef double[:, ::1] ga = grads
    cdef double[:, :, ::1] ha = hess
    cdef int instr = -1
    cdef int st = _eval(c, k, nn, &qv[0], &vv[0], 2, &va[0], &ga[0, 0],
                        &ha[0, 0, 0], &instr)
    if st != ST_OK:
        return st, instr, 0.0, np.zeros(G), np.zeros((G, G))
    return ST_OK, -1, float(vals[kk - 1]), grads[kk - 1].copy(), hess[kk - 1].copy()


def _prep(phi_code, phi_starts, phi_consts, phi_cstarts):
    return (np.ascontiguousarray(phi_code, dtype=np.int32).reshape(-1, 3),
            np.ascontiguousarray(phi_starts, dtype=np.int64),
            np.ascontiguousarray(phi_consts, dtype=np.float64),
            np.ascontiguousarray(phi_cstarts, dtype=np.int64))


def solve_bordered(L_code, L_consts, phi_code, phi_starts, phi_consts,
                   phi_cstarts, n, m, q, p, v, lam, tol, maxiter):
    L_code = np.ascontiguousarray(L_code, dtype=np.int32)
    L_consts = np.ascontiguousarray(L_consts, dtype=np.float64)
    phi_code, phi_starts, phi_consts, phi_cstarts = _prep(
        phi_code, phi_starts, phi_consts, phi_cstarts)
    q = np.ascontiguousarray(q, dtype=np.float64)
    p = np.ascontiguousarray(p, dtype=np.float64)
    v = np.array(v, dtype=np.float64)
    lam = np.array(lam, dtype=np.float64).reshape(-1)

    cdef int[:, ::1] Lc = L_code
    cdef double[::1] Lk = L_consts
    cdef int[:, ::1] pc = phi_code
    cdef long long[::1] ps = phi_starts
    cdef double[::1] pk = phi_consts
    cdef long long[::1] pcs = phi_cstarts
    cdef double[::1] qv = q
    cdef double[::1] pv = p
    cdef double[::1] vv = v
    lamb = lam if lam.size else np.zeros(1)
    cdef double[::1] lv = lamb
    cdef int nn = <int> n, mm = <int> m
    cdef Workspace ws
    if _ws_alloc(&ws, _max_code_rows(Lc, pc, ps, mm), nn, mm):
        raise MemoryError()
    cdef int iters = 0, tape_id = -1, instr = -1
    cdef int st
    try:
        st = _newton(Lc, Lk, pc, ps, pk, pcs, nn, mm, &qv[0], &pv[0],
                     &vv[0], &lv[0], float(tol), int(maxiter), &ws,
                     &iters, &tape_id, &instr)
    finally:
        _ws_free(&ws)
    return st, tape_id, instr, v, lam, iters


def integrate_vak_rk4(L_code, L_consts, phi_code, phi_starts, phi_consts,
                      phi_cstarts, n, m, q0, p0, v0, lam0, dt, nsteps,
                      tol, maxiter):
    L_code = np.ascontiguousarray(L_code, dtype=np.int32)
    L_consts = np.ascontiguousarray(L_consts, dtype=np.float64)
    phi_code, phi_starts, phi_consts, phi_cstarts = _prep(
        phi_code, phi_starts, phi_consts, phi_cstarts)

    cdef int nn = <int> n, mm = <int> m
    cdef int N = <int> nsteps
    cdef double h = <double> dt
    cdef double tl = <double> tol
    cdef int mi = <int> maxiter

    Q = np.zeros((N + 1, nn)); P = np.zeros((N + 1, nn))
    V = np.zeros((N + 1, nn)); LAM = np.zeros((N + 1, mm))
    PHIRES = np.zeros(N + 1)
    ITERS = np.zeros(N + 1, dtype=np.int64)

    cdef int[:, ::1] Lc = L_code
    cdef double[::1] Lk = L_consts
    cdef int[:, ::1] pc = phi_code
    cdef long long[::1] ps = phi_starts
    cdef double[::1] pk = phi_consts
    cdef long long[::1] pcs = phi_cstarts
    cdef double[:, ::1] Qv = Q
    cdef double[:, ::1] Pv = P
    cdef double[:, ::1] Vv = V
    cdef double[:, ::1] Lv = LAM if mm else np.zeros((N + 1, 1))
    cdef double[::1] PHIv = PHIRES
    cdef long long[::1] ITv = ITERS

    q_arr = np.array(q0, dtype=np.float64)
    p_arr = np.array(p0, dtype=np.float64)
    v_arr = np.array(v0, dtype=np.float64)
    lam_arr = np.array(lam0, dtype=np.float64).reshape(-1)
    if lam_arr.size == 0:
        lam_arr = np.zeros(1)
    cdef double[::1] q = q_arr
    cdef double[::1] p = p_arr
    cdef double[::1] v = v_arr
    cdef double[::1] lam = lam_arr

    # stage buffers
    kbuf = np.zeros((4, 2, nn))
    cdef double[:, :, ::1] ks = kbuf
    sbuf = np.zeros((2, nn))
    cdef double[:, ::1] stage = sbuf  # stage (q, p)

    cdef Workspace ws
    if _ws_alloc(&ws, _max_code_rows(Lc, pc, ps, mm), nn, mm):
        raise MemoryError()

    cdef int st = ST_OK, tape_id = -1, instr = -1, iters = 0, itn = 0
    cdef int step = -1, stg, i, a, i0, i1
    cdef double frac, phimax, aval
    cdef int failed = 0

    try:
        with nogil:
            for step in range(N + 1):
                for i in range(nn):
                    Qv[step, i] = q[i]
                    Pv[step, i] = p[i]
                st = _newton(Lc, Lk, pc, ps, pk, pcs, nn, mm, &q[0], &p[0],
                             &v[0], &lam[0], tl, mi, &ws, &itn, &tape_id, &instr)
                if st != ST_OK:
                    failed = 1
                    break
                for i in range(nn):
                    Vv[step, i] = v[i]
                for a in range(mm):
                    Lv[step, a] = lam[a]
                phimax = 0.0
                for a in range(mm):
                    i0 = <int> ps[a]
                    i1 = <int> ps[a + 1]
                    if _eval(pc[i0:i1], pk[pcs[a]:pcs[a + 1]], nn, &q[0], &v[0],
                             0, ws.vals, NULL, NULL, &instr) != ST_OK:
                        st = ST_DOMAIN
                        tape_id = 1 + a
                        failed = 1
                        break
                    aval = fabs(ws.vals[i1 - i0 - 1])
                    if aval > phimax:
                        phimax = aval
                if failed:
                    break
                PHIv[step] = phimax
                if step == N:
                    ITv[step] = itn
                    break
                iters = itn
                # k1 at the node
                st = _vak_pdot(Lc, Lk, pc, ps, pk, pcs, nn, mm, &q[0], &v[0],
                               &lam[0], &ws, ws.gq_acc, &tape_id, &instr)
                if st != ST_OK:
                    failed = 1
                    break
                for i in range(nn):
                    ks[0, 0, i] = v[i]
                    ks[0, 1, i] = ws.gq_acc[i]
                for stg in range(1, 4):
                    frac = 0.5 if stg < 3 else 1.0
                    for i in range(nn):
                        stage[0, i] = q[i] + h * frac * ks[stg - 1, 0, i]
                        stage[1, i] = p[i] + h * frac * ks[stg - 1, 1, i]
                    st = _newton(Lc, Lk, pc, ps, pk, pcs, nn, mm, &stage[0, 0],
                                 &stage[1, 0], &v[0], &lam[0], tl, mi, &ws,
                                 &itn, &tape_id, &instr)
                    if st != ST_OK:
                        failed = 1
                        break
                    iters += itn
                    st = _vak_pdot(Lc, Lk, pc, ps, pk, pcs, nn, mm, &stage[0, 0],
                                   &v[0], &lam[0], &ws, ws.gq_acc, &tape_id, &instr)
                    if st != ST_OK:
                        failed = 1
                        break
                    for i in range(nn):
                        ks[stg, 0, i] = v[i]
                        ks[stg, 1, i] = ws.gq_acc[i]
                if failed:
                    break
                ITv[step] = iters
                for i in range(nn):
                    q[i] = q[i] + (h / 6.0) * (ks[0, 0, i] + 2.0 * ks[1, 0, i]
                                               + 2.0 * ks[2, 0, i] + ks[3, 0, i])
                    p[i] = p[i] + (h / 6.0) * (ks[0, 1, i] + 2.0 * ks[1, 1, i]
                                               + 2.0 * ks[2, 1, i] + ks[3, 1, i])
    finally:
        _ws_free(&ws)

    if failed:
        return st, tape_id, instr, step, Q, P, V, LAM, PHIRES, ITERS
    return ST_OK, -1, -1, -1, Q, P, V, LAM, PHIRES, ITERS


cdef int _nonh_rhs_c(const int[:, ::1] Lc, const double[::1] Lk,
                     const int[:, ::1] pc, const long long[::1] pstarts,
                     const double[::1] pk, const long long[::1] pcstarts,
                     int n, int m, const double* q, const double* v,
                     Workspace* ws, double* vdot, double* lam_out,
                     int* tape_id, int* instr) nogil:
    cdef int G = 2 * n
    cdef int s = n + m
    cdef int st, i, j, a, i0, i1
    cdef int kL = Lc.shape[0]
    st = _eval(Lc, Lk, n, q, v, 2, ws.vals, ws.grads, ws.hess, instr)
    if st != ST_OK:
        tape_id[0] = 0
        return st
    # F holds the saddle rhs: (dL/dq - C, -c)
    for i in range(n):
        ws.F[i] = ws.grads[(kL - 1) * G + i]
        for j in range(n):
            ws.F[i] -= ws.hess[(kL - 1) * G * G + (n + i) * G + j] * v[j]
            ws.Hvv[i * n + j] = ws.hess[(kL - 1) * G * G + (n + i) * G + (n + j)]
    for a in range(m):
        i0 = <int> pstarts[a]
        i1 = <int> pstarts[a + 1]
        st = _eval(pc[i0:i1], pk[pcstarts[a]:pcstarts[a + 1]], n, q, v, 1,
                   ws.vals, ws.grads, ws.hess, instr)
        if st != ST_OK:
            tape_id[0] = 1 + a
            return st
        ws.F[n + a] = 0.0
        for i in range(n):
            ws.Gmat[a * n + i] = ws.grads[(i1 - i0 - 1) * G + n + i]
            ws.F[n + a] -= ws.grads[(i1 - i0 - 1) * G + i] * v[i]
    for i in range(s):
        for j in range(s):
            ws.J[i * s + j] = 0.0
    for i in range(n):
        for j in range(n):
            ws.J[i * s + j] = ws.Hvv[i * n + j]
        for a in range(m):
            ws.J[i * s + n + a] = ws.Gmat[a * n + i]
            ws.J[(n + a) * s + i] = ws.Gmat[a * n + i]
    st = _solve_dense(ws.J, ws.F, s)
    if st != ST_OK:
        return st
    for i in range(n):
        vdot[i] = ws.F[i]
    for a in range(m):
        lam_out[a] = -ws.F[n + a]
    tape_id[0] = -1
    return ST_OK


def nonh_rhs(L_code, L_consts, phi_code, phi_starts, phi_consts, phi_cstarts,
             n, m, q, v):
    L_code = np.ascontiguousarray(L_code, dtype=np.int32)
    L_consts = np.ascontiguousarray(L_consts, dtype=np.float64)
    phi_code, phi_starts, phi_consts, phi_cstarts = _prep(
        phi_code, phi_starts, phi_consts, phi_cstarts)
    q = np.ascontiguousarray(q, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    cdef int[:, ::1] Lc = L_code
    cdef double[::1] Lk = L_consts
    cdef int[:, ::1] pc = phi_code
    cdef long long[::1] ps = phi_starts
    cdef double[::1] pk = phi_consts
    cdef long long[::1] pcs = phi_cstarts
    cdef double[::1] qv = q
    cdef double[::1] vv = v
    cdef int nn = <int> n, mm = <int> m
    vdot = np.zeros(nn)
    lam = np.zeros(mm if mm else 1)
    cdef double[::1] vd = vdot
    cdef double[::1] lv = lam
    cdef Workspace ws
    if _ws_alloc(&ws, _max_code_rows(Lc, pc, ps, mm), nn, mm):
        raise MemoryError()
    cdef int tape_id = -1, instr = -1
    cdef int st
    try:
        st = _nonh_rhs_c(Lc, Lk, pc, ps, pk, pcs, nn, mm, &qv[0], &vv[0],
                         &ws, &vd[0], &lv[0], &tape_id, &instr)
    finally:
        _ws_free(&ws)
    if st != ST_OK:
        return st, tape_id, instr, None, None
    return ST_OK, -1, -1, vdot, lam[:mm]


def integrate_nonh_rk4(L_code, L_consts, phi_code, phi_starts, phi_consts,
                       phi_cstarts, n, m, q0, v0, dt, nsteps):
    L_code = np.ascontiguousarray(L_code, dtype=np.int32)
    L_consts = np.ascontiguousarray(L_consts, dtype=np.float64)
    phi_code, phi_starts, phi_consts, phi_cstarts = _prep(
        phi_code, phi_starts, phi_consts, phi_cstarts)

    cdef int nn = <int> n, mm = <int> m
    cdef int N = <int> nsteps
    cdef double h = <double> dt

    Q = np.zeros((N + 1, nn)); V = np.zeros((N + 1, nn))
    P = np.zeros((N + 1, nn)); LAM = np.zeros((N + 1, mm))
    PHIRES = np.zeros(N + 1)

    cdef int[:, ::1] Lc = L_code
    cdef double[::1] Lk = L_consts
    cdef int[:, ::1] pc = phi_code
    cdef long long[::1] ps = phi_starts
    cdef double[::1] pk = phi_consts
    cdef long long[::1] pcs = phi_cstarts
    cdef double[:, ::1] Qv = Q
    cdef double[:, ::1] Vv = V
    cdef double[:, ::1] Pv = P
    cdef double[:, ::1] Lv = LAM if mm else np.zeros((N + 1, 1))
    cdef double[::1] PHIv = PHIRES

    q_arr = np.array(q0, dtype=np.float64)
    v_arr = np.array(v0, dtype=np.float64)
    cdef double[::1] q = q_arr
    cdef double[::1] v = v_arr

    kbuf = np.zeros((4, 2, nn))
    cdef double[:, :, ::1] ks = kbuf
    sbuf = np.zeros((2, nn))
    cdef double[:, ::1] stage = sbuf
    lbuf = np.zeros(mm if mm else 1)
    cdef double[::1] lam = lbuf

    cdef Workspace ws
    if _ws_alloc(&ws, _max_code_rows(Lc, pc, ps, mm), nn, mm):
        raise MemoryError()

    cdef int st = ST_OK, tape_id = -1, instr = -1
    cdef int step = -1, stg, i, a, i0, i1
    cdef int kL = Lc.shape[0]
    cdef double frac, phimax, aval
    cdef int G = 2 * nn
    cdef int failed = 0

    try:
        with nogil:
            for step in range(N + 1):
                for i in range(nn):
                    Qv[step, i] = q[i]
                    Vv[step, i] = v[i]
                st = _eval(Lc, Lk, nn, &q[0], &v[0], 1, ws.vals, ws.grads,
                           ws.hess, &instr)
                if st != ST_OK:
                    tape_id = 0
                    failed = 1
                    break
                for i in range(nn):
                    Pv[step, i] = ws.grads[(kL - 1) * G + nn + i]
                phimax = 0.0
                for a in range(mm):
                    i0 = <int> ps[a]
                    i1 = <int> ps[a + 1]
                    if _eval(pc[i0:i1], pk[pcs[a]:pcs[a + 1]], nn, &q[0], &v[0],
                             0, ws.vals, NULL, NULL, &instr) != ST_OK:
                        st = ST_DOMAIN
                        tape_id = 1 + a
                        failed = 1
                        break
                    aval = fabs(ws.vals[i1 - i0 - 1])
                    if aval > phimax:
                        phimax = aval
                if failed:
                    break
                PHIv[step] = phimax
                st = _nonh_rhs_c(Lc, Lk, pc, ps, pk, pcs, nn, mm, &q[0], &v[0],
                                 &ws, &ks[0, 1, 0], &lam[0], &tape_id, &instr)
                if st != ST_OK:
                    failed = 1
                    break
                for a in range(mm):
                    Lv[step, a] = lam[a]
                if step == N:
                    break
                for i in range(nn):
                    ks[0, 0, i] = v[i]
                for stg in range(1, 4):
                    frac = 0.5 if stg < 3 else 1.0
                    for i in range(nn):
                        stage[0, i] = q[i] + h * frac * ks[stg - 1, 0, i]
                        stage[1, i] = v[i] + h * frac * ks[stg - 1, 1, i]
                        ks[stg, 0, i] = stage[1, i]
                    st = _nonh_rhs_c(Lc, Lk, pc, ps, pk, pcs, nn, mm,
                                     &stage[0, 0], &stage[1, 0], &ws,
                                     &ks[stg, 1, 0], &lam[0], &tape_id, &instr)
                    if st != ST_OK:
                        failed = 1
                        break
                if failed:
                    break
                for i in range(nn):
                    q[i] = q[i] + (h / 6.0) * (ks[0, 0, i] + 2.0 * ks[1, 0, i]
                                               + 2.0 * ks[2, 0, i] + ks[3, 0, i])
                    v[i] = v[i] + (h / 6.0) * (ks[0, 1, i] + 2.0 * ks[1, 1, i]
                                               + 2.0 * ks[2, 1, i] + ks[3, 1, i])
    finally:
        _ws_free(&ws)

    if failed:
        return st, tape_id, instr, step, Q, V, P, LAM, PHIRES
    return ST_OK, -1, -1, -1, Q, V, P, LAM, PHIRES
