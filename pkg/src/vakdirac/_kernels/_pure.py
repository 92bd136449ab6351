"""Pure-Python kernel backend.

Mirrors the compiled extension function-for-function and op-for-op so the
two backends can be swapped freely and compared in the benchmark.  Tape
evaluation carries value / gradient / Hessian with respect to the stacked
coordinates (q, v) by forward propagation.

Errors are signalled by status codes (see `ops`), not exceptions; the
callers in `vakdirac.dynamics` and `vakdirac.expressions` translate them.
"""

from __future__ import annotations

import math

import numpy as np

from . import ops

BACKEND_NAME = "python"


class _DomainError(Exception):
    def __init__(self, instr):
        self.instr = instr


def _value_pass(code, consts, q, v):
    n = len(q)
    k = code.shape[0]
    vals = np.empty(k)
    for i in range(k):
        op, a, b = code[i]
        if op == ops.CONST:
            r = consts[a]
        elif op == ops.VARQ:
            r = q[a]
        elif op == ops.VARV:
            r = v[a]
        elif op == ops.ADD:
            r = vals[a] + vals[b]
        elif op == ops.SUB:
            r = vals[a] - vals[b]
        elif op == ops.MUL:
            r = vals[a] * vals[b]
        elif op == ops.DIV:
            if vals[b] == 0.0:
                raise _DomainError(i)
            r = vals[a] / vals[b]
        elif op == ops.NEG:
            r = -vals[a]
        elif op == ops.SIN:
            r = math.sin(vals[a])
        elif op == ops.COS:
            r = math.cos(vals[a])
        elif op == ops.TAN:
            r = math.tan(vals[a])
        elif op == ops.SQRT:
            if vals[a] < 0.0:
                raise _DomainError(i)
            r = math.sqrt(vals[a])
        elif op == ops.EXP:
            r = math.exp(vals[a])
        elif op == ops.LOG:
            if vals[a] <= 0.0:
                raise _DomainError(i)
            r = math.log(vals[a])
        elif op == ops.POWI:
            if vals[a] == 0.0 and b < 0:
                raise _DomainError(i)
            r = vals[a] ** b
        elif op == ops.POWF:
            if vals[a] <= 0.0:
                raise _DomainError(i)
            r = vals[a] ** consts[b]
        elif op == ops.POWV:
            if vals[a] <= 0.0:
                raise _DomainError(i)
            r = vals[a] ** vals[b]
        else:  # pragma: no cover - compiler never emits other codes
            raise ValueError(f"bad opcode {op}")
        vals[i] = r
    return vals


def tape_value(code, consts, n, q, v):
    """Returns (status, instr, value)."""
    try:
        vals = _value_pass(code, consts, q, v)
    except _DomainError as e:
        return ops.ERR_DOMAIN, e.instr, 0.0
    return ops.OK, -1, float(vals[-1])


def tape_grad(code, consts, n, q, v):
    """Returns (status, instr, value, grad) with grad of length 2n
    ordered (d/dq, d/dv)."""
    G = 2 * n
    k = code.shape[0]
    vals = np.empty(k)
    grads = np.zeros((k, G))
    try:
        for i in range(k):
            op, a, b = code[i]
            g = grads[i]
            if op == ops.CONST:
                vals[i] = consts[a]
            elif op == ops.VARQ:
                vals[i] = q[a]
                g[a] = 1.0
            elif op == ops.VARV:
                vals[i] = v[a]
                g[n + a] = 1.0
            elif op == ops.ADD:
                vals[i] = vals[a] + vals[b]
                np.add(grads[a], grads[b], out=g)
            elif op == ops.SUB:
                vals[i] = vals[a] - vals[b]
                np.subtract(grads[a], grads[b], out=g)
            elif op == ops.MUL:
                vals[i] = vals[a] * vals[b]
                g[:] = vals[a] * grads[b] + vals[b] * grads[a]
            elif op == ops.DIV:
                if vals[b] == 0.0:
                    raise _DomainError(i)
                w = vals[a] / vals[b]
                vals[i] = w
                g[:] = (grads[a] - w * grads[b]) / vals[b]
            elif op == ops.NEG:
                vals[i] = -vals[a]
                np.negative(grads[a], out=g)
            elif op == ops.SIN:
                vals[i] = math.sin(vals[a])
                g[:] = math.cos(vals[a]) * grads[a]
            elif op == ops.COS:
                vals[i] = math.cos(vals[a])
                g[:] = -math.sin(vals[a]) * grads[a]
            elif op == ops.TAN:
                t = math.tan(vals[a])
                vals[i] = t
                g[:] = (1.0 + t * t) * grads[a]
            elif op == ops.SQRT:
                if vals[a] <= 0.0:
                    raise _DomainError(i)
                s = math.sqrt(vals[a])
                vals[i] = s
                g[:] = grads[a] / (2.0 * s)
            elif op == ops.EXP:
                e = math.exp(vals[a])
                vals[i] = e
                g[:] = e * grads[a]
            elif op == ops.LOG:
                if vals[a] <= 0.0:
                    raise _DomainError(i)
                vals[i] = math.log(vals[a])
                g[:] = grads[a] / vals[a]
            elif op == ops.POWI:
                base = vals[a]
                if base == 0.0 and b < 0:
                    raise _DomainError(i)
                vals[i] = base ** b
                if b == 0:
                    g[:] = 0.0
                elif b == 1:
                    g[:] = grads[a]
                else:
                    g[:] = (float(b) * base ** (b - 1)) * grads[a]
            elif op == ops.POWF:
                base = vals[a]
                c = consts[b]
                if base <= 0.0:
                    raise _DomainError(i)
                vals[i] = base ** c
                g[:] = (c * base ** (c - 1.0)) * grads[a]
            elif op == ops.POWV:
                base = vals[a]
                if base <= 0.0:
                    raise _DomainError(i)
                ln = math.log(base)
                w = base ** vals[b]
                vals[i] = w
                g[:] = w * (ln * grads[b] + (vals[b] / base) * grads[a])
            else:  # pragma: no cover
                raise ValueError(f"bad opcode {op}")
    except _DomainError as e:
        return ops.ERR_DOMAIN, e.instr, 0.0, np.zeros(G)
    return ops.OK, -1, float(vals[-1]), grads[-1].copy()


def tape_hess(code, consts, n, q, v):
    """Returns (status, instr, value, grad, hess); hess is (2n, 2n)."""
    G = 2 * n
    k = code.shape[0]
    vals = np.empty(k)
    grads = np.zeros((k, G))
    hesss = np.zeros((k, G, G))
    try:
        for i in range(k):
            op, a, b = code[i]
            g = grads[i]
            H = hesss[i]
            if op == ops.CONST:
                vals[i] = consts[a]
            elif op == ops.VARQ:
                vals[i] = q[a]
                g[a] = 1.0
            elif op == ops.VARV:
                vals[i] = v[a]
                g[n + a] = 1.0
            elif op == ops.ADD:
                vals[i] = vals[a] + vals[b]
                np.add(grads[a], grads[b], out=g)
                np.add(hesss[a], hesss[b], out=H)
            elif op == ops.SUB:
                vals[i] = vals[a] - vals[b]
                np.subtract(grads[a], grads[b], out=g)
                np.subtract(hesss[a], hesss[b], out=H)
            elif op == ops.MUL:
                vals[i] = vals[a] * vals[b]
                g[:] = vals[a] * grads[b] + vals[b] * grads[a]
                H[:] = (vals[a] * hesss[b] + vals[b] * hesss[a]
                        + np.outer(grads[a], grads[b])
                        + np.outer(grads[b], grads[a]))
            elif op == ops.DIV:
                if vals[b] == 0.0:
                    raise _DomainError(i)
                w = vals[a] / vals[b]
                vals[i] = w
                g[:] = (grads[a] - w * grads[b]) / vals[b]
                H[:] = (hesss[a] - np.outer(g, grads[b])
                        - np.outer(grads[b], g) - w * hesss[b]) / vals[b]
            elif op == ops.NEG:
                vals[i] = -vals[a]
                np.negative(grads[a], out=g)
                np.negative(hesss[a], out=H)
            elif op in (ops.SIN, ops.COS, ops.TAN, ops.SQRT, ops.EXP, ops.LOG,
                        ops.POWI, ops.POWF):
                base = vals[a]
                if op == ops.SIN:
                    f0, f1, f2 = math.sin(base), math.cos(base), -math.sin(base)
                elif op == ops.COS:
                    f0, f1, f2 = math.cos(base), -math.sin(base), -math.cos(base)
                elif op == ops.TAN:
                    t = math.tan(base)
                    s = 1.0 + t * t
                    f0, f1, f2 = t, s, 2.0 * t * s
                elif op == ops.SQRT:
                    if base <= 0.0:
                        raise _DomainError(i)
                    s = math.sqrt(base)
                    f0, f1, f2 = s, 0.5 / s, -0.25 / (s * base)
                elif op == ops.EXP:
                    e = math.exp(base)
                    f0 = f1 = f2 = e
                elif op == ops.LOG:
                    if base <= 0.0:
                        raise _DomainError(i)
                    f0, f1, f2 = math.log(base), 1.0 / base, -1.0 / (base * base)
                elif op == ops.POWI:
                    if base == 0.0 and b < 0:
                        raise _DomainError(i)
                    f0 = base ** b
                    f1 = 0.0 if b == 0 else (1.0 if b == 1 else float(b) * base ** (b - 1))
                    f2 = (0.0 if b in (0, 1)
                          else 2.0 if (b == 2 and base == 0.0)
                          else float(b) * float(b - 1) * base ** (b - 2))
                else:  # POWF
                    c = consts[b]
                    if base <= 0.0:
                        raise _DomainError(i)
                    f0 = base ** c
                    f1 = c * base ** (c - 1.0)
                    f2 = c * (c - 1.0) * base ** (c - 2.0)
                vals[i] = f0
                g[:] = f1 * grads[a]
                H[:] = f1 * hesss[a] + f2 * np.outer(grads[a], grads[a])
            elif op == ops.POWV:
                base = vals[a]
                if base <= 0.0:
                    raise _DomainError(i)
                ln = math.log(base)
                w = base ** vals[b]
                gu = ln * grads[b] + (vals[b] / base) * grads[a]
                Hu = (ln * hesss[b]
                      + (np.outer(grads[b], grads[a]) + np.outer(grads[a], grads[b])) / base
                      + (vals[b] / base) * hesss[a]
                      - (vals[b] / (base * base)) * np.outer(grads[a], grads[a]))
                vals[i] = w
                g[:] = w * gu
                H[:] = w * (Hu + np.outer(gu, gu))
            else:  # pragma: no cover
                raise ValueError(f"bad opcode {op}")
    except _DomainError as e:
        return ops.ERR_DOMAIN, e.instr, 0.0, np.zeros(G), np.zeros((G, G))
    return ops.OK, -1, float(vals[-1]), grads[-1].copy(), hesss[-1].copy()


def _phi_tapes(phi_code, phi_starts, phi_consts, phi_cstarts):
    m = len(phi_starts) - 1
    out = []
    for a in range(m):
        out.append((phi_code[phi_starts[a]:phi_starts[a + 1]],
                    phi_consts[phi_cstarts[a]:phi_cstarts[a + 1]]))
    return out


def _bordered_newton(Lt, phits, n, m, q, p, v, lam, tol, maxiter):
    """Newton solve of (dL/dv + lam.dphi/dv - p, phi) = 0 in (v, lam).

    Returns (status, info, iters).  `v` and `lam` are updated in place.
    info = (tape_id, instr) for domain errors, -1 otherwise.
    """
    s = n + m
    for it in range(maxiter + 1):
        st, instr, valL, gL, HL = tape_hess(Lt[0], Lt[1], n, q, v)
        if st != ops.OK:
            return st, (0, instr), it
        Fv = gL[n:].copy() - p
        Hvv = HL[n:, n:].copy()
        Gmat = np.zeros((m, n))
        phivals = np.zeros(m)
        for a in range(m):
            st, instr, val_a, g_a, H_a = tape_hess(phits[a][0], phits[a][1], n, q, v)
            if st != ops.OK:
                return st, (1 + a, instr), it
            Fv += lam[a] * g_a[n:]
            Hvv += lam[a] * H_a[n:, n:]
            Gmat[a] = g_a[n:]
            phivals[a] = val_a
        res = max(np.max(np.abs(Fv)) if n else 0.0,
                  np.max(np.abs(phivals)) if m else 0.0)
        if res <= tol:
            return ops.OK, -1, it
        if it == maxiter:
            return ops.ERR_NEWTON, -1, it
        J = np.zeros((s, s))
        J[:n, :n] = Hvv
        J[:n, n:] = Gmat.T
        J[n:, :n] = Gmat
        F = np.concatenate([Fv, phivals])
        try:
            piv_ok = np.linalg.cond(J) < 1e12
            if not piv_ok:
                return ops.ERR_SINGULAR, -1, it
            delta = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            return ops.ERR_SINGULAR, -1, it
        v += delta[:n]
        lam += delta[n:]
    return ops.ERR_NEWTON, -1, maxiter


def _vak_pdot(Lt, phits, n, m, q, v, lam):
    st, instr, _, gL = tape_grad(Lt[0], Lt[1], n, q, v)
    if st != ops.OK:
        return st, (0, instr), None
    pdot = gL[:n].copy()
    for a in range(m):
        st, instr, _, g_a = tape_grad(phits[a][0], phits[a][1], n, q, v)
        if st != ops.OK:
            return st, (1 + a, instr), None
        pdot += lam[a] * g_a[:n]
    return ops.OK, -1, pdot


def solve_bordered(L_code, L_consts, phi_code, phi_starts, phi_consts,
                   phi_cstarts, n, m, q, p, v, lam, tol, maxiter):
    """Standalone bordered solve; returns (status, tape_id, instr, v, lam, iters)."""
    Lt = (L_code, L_consts)
    phits = _phi_tapes(phi_code, phi_starts, phi_consts, phi_cstarts)
    v = np.array(v, dtype=float)
    lam = np.array(lam, dtype=float)
    st, info, iters = _bordered_newton(Lt, phits, n, m,
                                       np.asarray(q, float), np.asarray(p, float),
                                       v, lam, tol, maxiter)
    tape_id, instr = info if isinstance(info, tuple) else (-1, -1)
    return st, tape_id, instr, v, lam, iters


def integrate_vak_rk4(L_code, L_consts, phi_code, phi_starts, phi_consts,
                      phi_cstarts, n, m, q0, p0, v0, lam0, dt, nsteps,
                      tol, maxiter):
    """RK4 on (q, p) with (v, lam) re-solved at every stage.

    Returns (status, tape_id, instr, fail_step, Q, P, V, LAM, PHIRES, ITERS).
    Row i of the state arrays is the accepted state at t = i*dt; V/LAM hold
    the algebraic solution at that state, PHIRES the constraint residual
    there and ITERS the Newton iterations spent on the step leaving it.
    """
    Lt = (L_code, L_consts)
    phits = _phi_tapes(phi_code, phi_starts, phi_consts, phi_cstarts)
    N = int(nsteps)
    Q = np.zeros((N + 1, n))
    P = np.zeros((N + 1, n))
    V = np.zeros((N + 1, n))
    LAM = np.zeros((N + 1, m))
    PHIRES = np.zeros(N + 1)
    ITERS = np.zeros(N + 1, dtype=np.int64)

    q = np.array(q0, dtype=float)
    p = np.array(p0, dtype=float)
    v = np.array(v0, dtype=float)
    lam = np.array(lam0, dtype=float)

    def fail(st, info, step):
        tape_id, instr = info if isinstance(info, tuple) else (-1, -1)
        return st, tape_id, instr, step, Q, P, V, LAM, PHIRES, ITERS

    for step in range(N + 1):
        Q[step] = q
        P[step] = p
        # stage 1 sits exactly at the accepted state: record its solution
        st, info, it1 = _bordered_newton(Lt, phits, n, m, q, p, v, lam, tol, maxiter)
        if st != ops.OK:
            return fail(st, info, step)
        V[step] = v
        LAM[step] = lam
        phimax = 0.0
        for a in range(m):
            _, _, val_a = tape_value(phits[a][0], phits[a][1], n, q, v)
            phimax = max(phimax, abs(val_a))
        PHIRES[step] = phimax
        if step == N:
            ITERS[step] = it1
            break
        st, info, pdot = _vak_pdot(Lt, phits, n, m, q, v, lam)
        if st != ops.OK:
            return fail(st, info, step)
        ks = [(v.copy(), pdot)]
        iters = it1
        for frac in (0.5, 0.5, 1.0):
            kq, kp = ks[-1]
            qs = q + dt * frac * kq
            pstage = p + dt * frac * kp
            st, info, itn = _bordered_newton(Lt, phits, n, m, qs, pstage, v, lam,
                                             tol, maxiter)
            if st != ops.OK:
                return fail(st, info, step)
            iters += itn
            st, info, pdot = _vak_pdot(Lt, phits, n, m, qs, v, lam)
            if st != ops.OK:
                return fail(st, info, step)
            ks.append((v.copy(), pdot))
        ITERS[step] = iters
        q = q + (dt / 6.0) * (ks[0][0] + 2.0 * ks[1][0] + 2.0 * ks[2][0] + ks[3][0])
        p = p + (dt / 6.0) * (ks[0][1] + 2.0 * ks[1][1] + 2.0 * ks[2][1] + ks[3][1])

    return ops.OK, -1, -1, -1, Q, P, V, LAM, PHIRES, ITERS


def nonh_rhs(L_code, L_consts, phi_code, phi_starts, phi_consts, phi_cstarts,
             n, m, q, v):
    """Lagrange-d'Alembert right-hand side via the saddle solve.

    Returns (status, tape_id, instr, vdot, lam).
    """
    Lt = (L_code, L_consts)
    phits = _phi_tapes(phi_code, phi_starts, phi_consts, phi_cstarts)
    return _nonh_rhs(Lt, phits, n, m, np.asarray(q, float), np.asarray(v, float))


def _nonh_rhs(Lt, phits, n, m, q, v):
    st, instr, _, gL, HL = tape_hess(Lt[0], Lt[1], n, q, v)
    if st != ops.OK:
        return st, 0, instr, None, None
    M = HL[n:, n:]
    C = HL[n:, :n] @ v
    Gmat = np.zeros((m, n))
    c = np.zeros(m)
    for a in range(m):
        st, instr, _, g_a = tape_grad(phits[a][0], phits[a][1], n, q, v)
        if st != ops.OK:
            return st, 1 + a, instr, None, None
        Gmat[a] = g_a[n:]
        c[a] = g_a[:n] @ v
    s = n + m
    K = np.zeros((s, s))
    K[:n, :n] = M
    K[:n, n:] = Gmat.T
    K[n:, :n] = Gmat
    rhs = np.concatenate([gL[:n] - C, -c])
    try:
        if np.linalg.cond(K) > 1e12:
            return ops.ERR_SINGULAR, -1, -1, None, None
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return ops.ERR_SINGULAR, -1, -1, None, None
    return ops.OK, -1, -1, sol[:n], -sol[n:]


def integrate_nonh_rk4(L_code, L_consts, phi_code, phi_starts, phi_consts,
                       phi_cstarts, n, m, q0, v0, dt, nsteps):
    """RK4 on (q, v) for the nonholonomic equations; p = dL/dv recorded.

    Returns (status, tape_id, instr, fail_step, Q, V, P, LAM, PHIRES).
    """
    Lt = (L_code, L_consts)
    phits = _phi_tapes(phi_code, phi_starts, phi_consts, phi_cstarts)
    N = int(nsteps)
    Q = np.zeros((N + 1, n))
    V = np.zeros((N + 1, n))
    P = np.zeros((N + 1, n))
    LAM = np.zeros((N + 1, m))
    PHIRES = np.zeros(N + 1)

    q = np.array(q0, dtype=float)
    v = np.array(v0, dtype=float)

    def fail(st, tape_id, instr, step):
        return st, tape_id, instr, step, Q, V, P, LAM, PHIRES

    for step in range(N + 1):
        Q[step] = q
        V[step] = v
        st, instr, _, gL = tape_grad(Lt[0], Lt[1], n, q, v)
        if st != ops.OK:
            return fail(st, 0, instr, step)
        P[step] = gL[n:]
        phimax = 0.0
        for a in range(m):
            _, _, val_a = tape_value(phits[a][0], phits[a][1], n, q, v)
            phimax = max(phimax, abs(val_a))
        PHIRES[step] = phimax
        st, tape_id, instr, vdot, lam = _nonh_rhs(Lt, phits, n, m, q, v)
        if st != ops.OK:
            return fail(st, tape_id, instr, step)
        LAM[step] = lam
        if step == N:
            break
        k1 = (v.copy(), vdot)
        ks = [k1]
        for frac in (0.5, 0.5, 1.0):
            kq, kv = ks[-1]
            qs = q + dt * frac * kq
            vs = v + dt * frac * kv
            st, tape_id, instr, vdot, _ = _nonh_rhs(Lt, phits, n, m, qs, vs)
            if st != ops.OK:
                return fail(st, tape_id, instr, step)
            ks.append((vs.copy(), vdot))
        q = q + (dt / 6.0) * (ks[0][0] + 2.0 * ks[1][0] + 2.0 * ks[2][0] + ks[3][0])
        v = v + (dt / 6.0) * (ks[0][1] + 2.0 * ks[1][1] + 2.0 * ks[2][1] + ks[3][1])

    return ops.OK, -1, -1, -1, Q, V, P, LAM, PHIRES
