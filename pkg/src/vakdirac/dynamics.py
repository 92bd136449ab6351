"""Implicit vakonomic Euler-Lagrange and nonholonomic Lagrange-d'Alembert
integration.

The vakonomic equations are an index-1 DAE: (q, p) are the differential
states, while (v, lam) are algebraic, pinned at every Runge-Kutta stage
by the bordered Newton system

    dL/dv + lam . dphi/dv - p = 0,      phi(q, v) = 0.

lam therefore has no evolution equation of its own; the supplied lam0 is
only a Newton seed used to build p0.  The nonholonomic equations instead
eliminate the multiplier through a saddle solve and integrate (q, v).

Two execution paths produce the same trajectories: a compiled tape
kernel (preferred when available) and a pure-Python loop that honours
each scalar field's derivative mode (analytic closures for the built-in
systems, dual-number AD for expression-backed ones, finite differences
as the explicit fallback).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import _kernels
from ._kernels import ops
from .bundles import presymp_bar_flat
from .dirac import bar_dirac_residual, hat_dirac_residual
from .errors import (
    AlgebraicSolveError,
    ConstraintViolationError,
    DimensionMismatchError,
    EvalDomainError,
    SingularJacobianError,
)
from .systems import (
    SystemSpec,
    VakState,
    dE,
    dirac_differential,
    vak_energy,
    vak_gradients,
)

__all__ = [
    "InitialData",
    "SolverConfig",
    "Trajectory",
    "SolveResult",
    "solve_algebraic",
    "vak_rhs",
    "nonholonomic_rhs",
    "integrate_vakonomic",
    "integrate_nonholonomic",
    "theorem_equivalence_report",
    "EquivalenceReport",
    "energy_series",
    "pack_system",
]

_COND_LIMIT = 1e12

MODES = ("vakonomic", "nonholonomic")
INTEGRATORS = ("rk4", "midpoint-implicit")
BACKENDS = ("auto", "compiled", "python")


@dataclass(frozen=True)
class PackedSystem:
    """Tape arrays of a system in the flat layout the kernels consume."""

    n: int
    m: int
    L_code: np.ndarray
    L_consts: np.ndarray
    phi_code: np.ndarray
    phi_starts: np.ndarray
    phi_consts: np.ndarray
    phi_cstarts: np.ndarray
    tapes: tuple  # (L tape, phi tapes...) kept for error reporting


def pack_system(spec: SystemSpec) -> Optional[PackedSystem]:
    if not spec.has_tapes():
        return None
    tapes = [spec.L.expr.tape] + [f.expr.tape for f in spec.phi]
    phi_tapes = tapes[1:]
    starts = np.zeros(spec.m + 1, dtype=np.int64)
    cstarts = np.zeros(spec.m + 1, dtype=np.int64)
    for a, t in enumerate(phi_tapes):
        starts[a + 1] = starts[a] + t.code.shape[0]
        cstarts[a + 1] = cstarts[a] + t.consts.shape[0]
    phi_code = (np.concatenate([t.code for t in phi_tapes])
                if phi_tapes else np.zeros((0, 3), dtype=np.int32))
    phi_consts = (np.concatenate([t.consts for t in phi_tapes])
                  if phi_tapes else np.zeros(0))
    return PackedSystem(
        n=spec.n, m=spec.m,
        L_code=np.ascontiguousarray(tapes[0].code, dtype=np.int32),
        L_consts=np.ascontiguousarray(tapes[0].consts, dtype=np.float64),
        phi_code=np.ascontiguousarray(phi_code, dtype=np.int32),
        phi_starts=starts,
        phi_consts=np.ascontiguousarray(phi_consts, dtype=np.float64),
        phi_cstarts=cstarts,
        tapes=tuple(tapes),
    )


def _raise_kernel_error(packed, status, tape_id, instr, t=None):
    if status == ops.OK:
        return
    if status == ops.ERR_DOMAIN:
        tape = packed.tapes[tape_id]
        opname = ops.NAMES.get(int(tape.code[instr, 0]), "?")
        raise EvalDomainError(opname, None, int(tape.offsets[instr]))
    if status == ops.ERR_SINGULAR:
        raise SingularJacobianError(
            f"bordered or saddle matrix numerically singular "
            f"(condition estimate above {_COND_LIMIT:.0e})", t=t)
    raise AlgebraicSolveError("Newton iteration did not converge", t=t)


@dataclass(frozen=True)
class InitialData:
    """(q0, v0, lam0) plus the dynamics mode; lam0 defaults to zeros."""

    q0: np.ndarray
    v0: np.ndarray
    lam0: Optional[np.ndarray] = None
    mode: str = "vakonomic"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "q0", np.asarray(self.q0, dtype=float).reshape(-1))
        object.__setattr__(self, "v0", np.asarray(self.v0, dtype=float).reshape(-1))
        if self.v0.shape != self.q0.shape:
            raise DimensionMismatchError("v0", self.q0.shape[0], self.v0.shape[0])
        if self.lam0 is not None:
            object.__setattr__(self, "lam0",
                               np.asarray(self.lam0, dtype=float).reshape(-1))

    def lam_or_zeros(self, m):
        if self.lam0 is None:
            return np.zeros(m)
        if self.lam0.shape[0] != m:
            raise DimensionMismatchError("lam0", m, self.lam0.shape[0])
        return self.lam0.copy()

    def validate(self, spec: SystemSpec, tol=1e-10):
        if self.q0.shape[0] != spec.n:
            raise DimensionMismatchError("q0", spec.n, self.q0.shape[0])
        if self.mode == "vakonomic":
            res = spec.constraint_values(self.q0, self.v0)
        elif spec.m == 0:
            res = np.zeros(0)
        else:
            if spec.mu is None:
                raise ValueError("nonholonomic mode needs linear constraint "
                                 "one-forms (mu absent)")
            res = spec.mu_matrix(self.q0) @ self.v0
        if res.size and np.max(np.abs(res)) > tol:
            raise ConstraintViolationError(res, tol)


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    t_end: float
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    integrator: str = "rk4"
    backend: str = "auto"

    def __post_init__(self):
        if self.dt <= 0 or self.t_end <= 0:
            raise ValueError("dt and t_end must be positive")
        if self.newton_tol <= 0:
            raise ValueError("newton_tol must be positive")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}")

    @property
    def nsteps(self):
        # guard the float division so t_end = k*dt lands on k steps exactly
        return int(math.floor(self.t_end / self.dt + 1e-9))


@dataclass
class Trajectory:
    """Uniform-grid solution with per-step algebraic values and diagnostics.

    Diagnostics (energy, Dirac residuals) are derived quantities and are
    computed lazily on first access so that reference runs only used for
    their final state stay cheap.
    """

    spec: SystemSpec
    mode: str
    integrator: str
    backend: str
    t: np.ndarray
    q: np.ndarray
    v: np.ndarray
    p: np.ndarray
    lam: np.ndarray
    phi_residual: np.ndarray
    newton_iters: np.ndarray
    warnings: list = field(default_factory=list)
    _diag: Optional[dict] = None

    def __len__(self):
        return self.t.shape[0]

    def state(self, i) -> VakState:
        return VakState(q=self.q[i], v=self.v[i], p=self.p[i],
                        lam=self.lam[i], t=float(self.t[i]))

    def final_state(self) -> VakState:
        return self.state(len(self) - 1)

    def diagnostics(self) -> dict:
        """Per-step energy, constraint residual and Dirac residuals.

        Vakonomic runs are checked against the two graph-structure
        formulations (hat and bar).  Nonholonomic runs are checked
        against the constraint-induced structure instead - the same
        value fills both Dirac columns there, since the hat/bar
        structures encode the vakonomic equations.
        """
        if self._diag is not None:
            return self._diag
        N = len(self)
        energy = np.zeros(N)
        dhat = np.zeros(N)
        dbar = np.zeros(N)
        spec = self.spec
        for i in range(N):
            q, v, p, lam = self.q[i], self.v[i], self.p[i], self.lam[i]
            Lval, gq, gv, phivals = vak_gradients(spec, q, v, lam)
            energy[i] = float(p @ v) - Lval
            if self.mode == "vakonomic":
                pdot = gq
                hat = hat_dirac_residual(
                    spec, (q, p, lam), (v, pdot, np.zeros(spec.m)),
                    dirac_differential(spec, q, v, lam).as_extended_covector())
                state = VakState(q=q, v=v, p=p, lam=lam)
                bar = bar_dirac_residual(
                    spec, state, (v, np.zeros(spec.n), pdot, np.zeros(spec.m)),
                    dE(spec, state))
                dhat[i] = hat.aggregate("max")
                dbar[i] = bar.aggregate("max")
            else:
                # re-derive the acceleration from an independent saddle
                # solve; pdot then follows through the Legendre map
                from .dirac import induced_dirac_residual
                vdot, _ = nonholonomic_rhs(spec, q, v)
                Hvv, Hvq = spec.L.hess_blocks(q, v)
                _, Lgq, _ = spec.L.grad(q, v)
                pdot = Hvv @ vdot + Hvq @ v
                if spec.m:
                    res = induced_dirac_residual(
                        spec, (q, p), ((v, pdot), (-Lgq, v)))
                    dhat[i] = dbar[i] = res.aggregate("max")
        self._diag = {
            "energy": energy,
            "constraint": self.phi_residual.copy(),
            "dirac_hat": dhat,
            "dirac_bar": dbar,
        }
        return self._diag


class SolveResult(NamedTuple):
    v: np.ndarray
    lam: np.ndarray
    iterations: int
    residual: float


def _assemble_bordered(spec, q, p, v, lam):
    n, m = spec.n, spec.m
    _, _, gv = spec.L.grad(q, v)
    Hvv, _ = spec.L.hess_blocks(q, v)
    Fv = gv - p
    Hvv = Hvv.copy()
    G = np.zeros((m, n))
    phivals = np.zeros(m)
    for a, f in enumerate(spec.phi):
        fval, _, fv = f.grad(q, v)
        fHvv, _ = f.hess_blocks(q, v)
        Fv = Fv + lam[a] * fv
        Hvv += lam[a] * fHvv
        G[a] = fv
        phivals[a] = fval
    return Fv, phivals, Hvv, G


def solve_algebraic(spec: SystemSpec, q, p, guess, newton_tol=1e-12,
                    newton_max_iter=50) -> SolveResult:
    """Newton solve of the algebraic subsystem for (v, lam) at fixed (q, p).

    The bordered Jacobian [[d2Lvak/dv2, dphi/dv^T], [dphi/dv, 0]] must be
    nonsingular; a condition estimate above 1e12 aborts with
    `SingularJacobianError` (this is in particular how velocity-independent,
    i.e. holonomic, constraints are rejected).
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    v = np.asarray(guess[0], dtype=float).copy()
    lam = np.asarray(guess[1], dtype=float).reshape(-1).copy()
    n, m = spec.n, spec.m
    it = 0
    while True:
        Fv, phivals, Hvv, G = _assemble_bordered(spec, q, p, v, lam)
        res = max(float(np.max(np.abs(Fv))) if n else 0.0,
                  float(np.max(np.abs(phivals))) if m else 0.0)
        if res <= newton_tol:
            return SolveResult(v=v, lam=lam, iterations=it, residual=res)
        if it >= newton_max_iter:
            raise AlgebraicSolveError(
                f"no convergence in {newton_max_iter} Newton iterations "
                f"(residual {res:.3g})", iterations=it, residual=res)
        J = np.zeros((n + m, n + m))
        J[:n, :n] = Hvv
        J[:n, n:] = G.T
        J[n:, :n] = G
        if np.linalg.cond(J) > _COND_LIMIT:
            hint = ""
            if m and np.max(np.abs(G)) < 1e-12:
                hint = ("; constraints have no velocity dependence "
                        "(holonomic), which is outside the supported "
                        "index-1 setting")
            raise SingularJacobianError(
                f"bordered Jacobian numerically singular{hint}")
        delta = np.linalg.solve(J, -np.concatenate([Fv, phivals]))
        v += delta[:n]
        lam += delta[n:]
        it += 1


def vak_rhs(spec: SystemSpec, q, p, warm_start=None, newton_tol=1e-12,
            newton_max_iter=50):
    """(qdot, pdot, v, lam) of the implicit vakonomic equations at (q, p)."""
    if warm_start is None:
        warm_start = (np.zeros(spec.n), np.zeros(spec.m))
    sol = solve_algebraic(spec, q, p, warm_start, newton_tol, newton_max_iter)
    _, gq, _, _ = vak_gradients(spec, q, sol.v, sol.lam)
    return sol.v.copy(), gq, sol.v, sol.lam


def nonholonomic_rhs(spec: SystemSpec, q, v):
    """(vdot, lam) from the saddle system of the Lagrange-d'Alembert
    equations with the multiplier eliminated."""
    if spec.m and spec.mu is None:
        raise ValueError("nonholonomic dynamics needs linear constraint "
                         "one-forms (mu absent)")
    n, m = spec.n, spec.m
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    _, gq, _ = spec.L.grad(q, v)
    Hvv, Hvq = spec.L.hess_blocks(q, v)
    C = Hvq @ v
    G = np.zeros((m, n))
    c = np.zeros(m)
    for a, f in enumerate(spec.phi):
        _, fq, fv = f.grad(q, v)
        G[a] = fv
        c[a] = fq @ v
    K = np.zeros((n + m, n + m))
    K[:n, :n] = Hvv
    K[:n, n:] = G.T
    K[n:, :n] = G
    if np.linalg.cond(K) > _COND_LIMIT:
        raise SingularJacobianError("saddle matrix numerically singular "
                                    "(mass matrix or constraint rows)")
    sol = np.linalg.solve(K, np.concatenate([gq - C, -c]))
    return sol[:n], -sol[n:]


def _resolve_backend(spec, cfg):
    if cfg.backend == "python":
        return "python"
    compiled_ok = (_kernels.BACKEND == "compiled" and spec.has_tapes()
                   and cfg.integrator == "rk4")
    if cfg.backend == "compiled":
        if not compiled_ok:
            raise ValueError(
                "compiled backend unavailable (extension missing, system "
                "without expressions, or non-rk4 integrator)")
        return "compiled"
    return "compiled" if compiled_ok else "python"


def _finish(spec, mode, cfg, backend, t, Q, V, P, LAM, PHIRES, ITERS):
    traj = Trajectory(spec=spec, mode=mode, integrator=cfg.integrator,
                      backend=backend, t=t, q=Q, v=V, p=P, lam=LAM,
                      phi_residual=PHIRES, newton_iters=ITERS)
    drift = float(np.max(PHIRES)) if PHIRES.size else 0.0
    if drift > 1e3 * cfg.newton_tol:
        traj.warnings.append(
            f"constraint drift {drift:.3g} above {1e3 * cfg.newton_tol:.3g}")
    return traj


def integrate_vakonomic(spec: SystemSpec, init: InitialData,
                        cfg: SolverConfig) -> Trajectory:
    """Integrate the implicit vakonomic Euler-Lagrange equations.

    p0 is constructed from the seed multiplier as the generalized
    Legendre image d(L + lam.phi)/dv at (q0, v0); afterwards lam is
    re-solved from the bordered system at every stage and never
    integrated.  Fixed-step RK4 by default, implicit midpoint optionally.
    """
    init.validate(spec)
    if init.mode != "vakonomic":
        raise ValueError("initial data is for nonholonomic mode")
    lam0 = init.lam_or_zeros(spec.m)
    _, _, gv, _ = vak_gradients(spec, init.q0, init.v0, lam0)
    p0 = gv
    N = cfg.nsteps
    t = np.arange(N + 1) * cfg.dt
    backend = _resolve_backend(spec, cfg)

    if backend == "compiled":
        packed = pack_system(spec)
        (status, tape_id, instr, fail_step, Q, P, V, LAM, PHIRES,
         ITERS) = _kernels.integrate_vak_rk4(
            packed.L_code, packed.L_consts, packed.phi_code,
            packed.phi_starts, packed.phi_consts, packed.phi_cstarts,
            spec.n, spec.m, init.q0, p0, init.v0, lam0,
            cfg.dt, N, cfg.newton_tol, cfg.newton_max_iter)
        _raise_kernel_error(packed, status, tape_id, instr,
                            t=None if fail_step < 0 else fail_step * cfg.dt)
        return _finish(spec, "vakonomic", cfg, backend, t, Q, V, P, LAM,
                       PHIRES, ITERS)

    n, m = spec.n, spec.m
    Q = np.zeros((N + 1, n))
    P = np.zeros((N + 1, n))
    V = np.zeros((N + 1, n))
    LAM = np.zeros((N + 1, m))
    PHIRES = np.zeros(N + 1)
    ITERS = np.zeros(N + 1, dtype=np.int64)

    q = init.q0.copy()
    p = p0.copy()
    v = init.v0.copy()
    lam = lam0.copy()

    def node_solve(qn, pn, vw, lw, step):
        try:
            return solve_algebraic(spec, qn, pn, (vw, lw),
                                   cfg.newton_tol, cfg.newton_max_iter)
        except AlgebraicSolveError as exc:
            exc.t = step * cfg.dt
            raise

    for step in range(N + 1):
        Q[step] = q
        P[step] = p
        sol = node_solve(q, p, v, lam, step)
        v, lam = sol.v, sol.lam
        V[step] = v
        LAM[step] = lam
        PHIRES[step] = (float(np.max(np.abs(spec.constraint_values(q, v))))
                        if m else 0.0)
        if step == N:
            ITERS[step] = sol.iterations
            break
        iters = sol.iterations
        if cfg.integrator == "rk4":
            _, gq, _, _ = vak_gradients(spec, q, v, lam)
            ks = [(v.copy(), gq)]
            for frac in (0.5, 0.5, 1.0):
                kq, kp = ks[-1]
                qs = q + cfg.dt * frac * kq
                ps = p + cfg.dt * frac * kp
                sol = node_solve(qs, ps, v, lam, step)
                v, lam = sol.v, sol.lam
                iters += sol.iterations
                _, gq, _, _ = vak_gradients(spec, qs, v, lam)
                ks.append((v.copy(), gq))
            q = q + (cfg.dt / 6.0) * (ks[0][0] + 2 * ks[1][0] + 2 * ks[2][0] + ks[3][0])
            p = p + (cfg.dt / 6.0) * (ks[0][1] + 2 * ks[1][1] + 2 * ks[2][1] + ks[3][1])
        else:
            q, p, v, lam, extra = _midpoint_step_vak(spec, cfg, q, p, v, lam, step)
            iters += extra
        ITERS[step] = iters
    return _finish(spec, "vakonomic", cfg, backend, t, Q, V, P, LAM,
                   PHIRES, ITERS)


def _midpoint_step_vak(spec, cfg, q, p, v, lam, step):
    """One implicit-midpoint step by fixed-point iteration on (q, p)."""
    qn, pn = q.copy(), p.copy()
    iters = 0
    for _ in range(200):
        qm = 0.5 * (q + qn)
        pm = 0.5 * (p + pn)
        sol = solve_algebraic(spec, qm, pm, (v, lam),
                              cfg.newton_tol, cfg.newton_max_iter)
        v, lam = sol.v, sol.lam
        iters += sol.iterations
        _, gq, _, _ = vak_gradients(spec, qm, v, lam)
        qn_new = q + cfg.dt * v
        pn_new = p + cfg.dt * gq
        delta = max(np.max(np.abs(qn_new - qn)), np.max(np.abs(pn_new - pn)))
        qn, pn = qn_new, pn_new
        scale = max(1.0, float(np.max(np.abs(qn))), float(np.max(np.abs(pn))))
        if delta <= max(cfg.newton_tol, 1e-14) * scale:
            return qn, pn, v, lam, iters
    raise AlgebraicSolveError("implicit midpoint fixed point did not converge",
                              t=step * cfg.dt)


def integrate_nonholonomic(spec: SystemSpec, init: InitialData,
                           cfg: SolverConfig) -> Trajectory:
    """Integrate the Lagrange-d'Alembert equations for linear constraints.

    States are (q, v); the multiplier is eliminated per step through the
    saddle system and recorded, and p = dL/dv is logged alongside.
    """
    if spec.m and spec.mu is None:
        raise ValueError("nonholonomic dynamics needs linear constraint "
                         "one-forms (mu absent)")
    init.validate(spec)
    if init.mode != "nonholonomic":
        raise ValueError("initial data is for vakonomic mode")
    N = cfg.nsteps
    t = np.arange(N + 1) * cfg.dt
    backend = _resolve_backend(spec, cfg)

    if backend == "compiled":
        packed = pack_system(spec)
        (status, tape_id, instr, fail_step, Q, V, P, LAM,
         PHIRES) = _kernels.integrate_nonh_rk4(
            packed.L_code, packed.L_consts, packed.phi_code,
            packed.phi_starts, packed.phi_consts, packed.phi_cstarts,
            spec.n, spec.m, init.q0, init.v0, cfg.dt, N)
        _raise_kernel_error(packed, status, tape_id, instr,
                            t=None if fail_step < 0 else fail_step * cfg.dt)
        iters = np.zeros(N + 1, dtype=np.int64)
        return _finish(spec, "nonholonomic", cfg, backend, t, Q, V, P, LAM,
                       PHIRES, iters)

    n, m = spec.n, spec.m
    Q = np.zeros((N + 1, n))
    V = np.zeros((N + 1, n))
    P = np.zeros((N + 1, n))
    LAM = np.zeros((N + 1, m))
    PHIRES = np.zeros(N + 1)

    q = init.q0.copy()
    v = init.v0.copy()

    def rhs(qs, vs, step):
        try:
            return nonholonomic_rhs(spec, qs, vs)
        except SingularJacobianError as exc:
            exc.t = step * cfg.dt
            raise

    for step in range(N + 1):
        Q[step] = q
        V[step] = v
        _, _, gv = spec.L.grad(q, v)
        P[step] = gv
        PHIRES[step] = (float(np.max(np.abs(spec.constraint_values(q, v))))
                        if m else 0.0)
        vdot, lam = rhs(q, v, step)
        LAM[step] = lam
        if step == N:
            break
        if cfg.integrator == "rk4":
            ks = [(v.copy(), vdot)]
            for frac in (0.5, 0.5, 1.0):
                kq, kv = ks[-1]
                vdot2, _ = rhs(q + cfg.dt * frac * kq, v + cfg.dt * frac * kv, step)
                ks.append(((v + cfg.dt * frac * kv).copy(), vdot2))
            q = q + (cfg.dt / 6.0) * (ks[0][0] + 2 * ks[1][0] + 2 * ks[2][0] + ks[3][0])
            v = v + (cfg.dt / 6.0) * (ks[0][1] + 2 * ks[1][1] + 2 * ks[2][1] + ks[3][1])
        else:
            q, v = _midpoint_step_nonh(spec, cfg, q, v, step)
    iters = np.zeros(N + 1, dtype=np.int64)
    return _finish(spec, "nonholonomic", cfg, backend, t, Q, V, P, LAM,
                   PHIRES, iters)


def _midpoint_step_nonh(spec, cfg, q, v, step):
    qn, vn = q.copy(), v.copy()
    for _ in range(200):
        vdot, _ = nonholonomic_rhs(spec, 0.5 * (q + qn), 0.5 * (v + vn))
        qn_new = q + cfg.dt * 0.5 * (v + vn)
        vn_new = v + cfg.dt * vdot
        delta = max(np.max(np.abs(qn_new - qn)), np.max(np.abs(vn_new - vn)))
        qn, vn = qn_new, vn_new
        scale = max(1.0, float(np.max(np.abs(qn))), float(np.max(np.abs(vn))))
        if delta <= max(cfg.newton_tol, 1e-14) * scale:
            return qn, vn
    raise AlgebraicSolveError("implicit midpoint fixed point did not converge",
                              t=step * cfg.dt)


@dataclass(frozen=True)
class EquivalenceReport:
    """Per-step residuals of the three equivalent formulations of the
    vakonomic dynamics: the direct implicit equations, the energy /
    presymplectic formulation on the full state bundle, and the Dirac
    differential formulation on the momentum-multiplier bundle."""

    direct: np.ndarray
    bar: np.ndarray
    hat: np.ndarray

    @property
    def max_residual(self):
        return float(max(np.max(self.direct), np.max(self.bar),
                         np.max(self.hat)))

    @property
    def max_pairwise_difference(self):
        return float(max(np.max(np.abs(self.direct - self.bar)),
                         np.max(np.abs(self.direct - self.hat)),
                         np.max(np.abs(self.bar - self.hat))))


def theorem_equivalence_report(spec: SystemSpec, traj: Trajectory) -> EquivalenceReport:
    """Evaluate all three residual formulations along a trajectory.

    The trajectory's time derivatives are taken as (qdot, pdot) =
    (v, d(Lvak)/dq) at each step; the three formulations then consume the
    identical blocks through their separate code paths, so their values
    agree to rounding on and off shell.
    """
    N = len(traj)
    direct = np.zeros(N)
    barr = np.zeros(N)
    hatr = np.zeros(N)
    m = spec.m
    for i in range(N):
        q, v, p, lam = traj.q[i], traj.v[i], traj.p[i], traj.lam[i]
        _, gq, gv, phivals = vak_gradients(spec, q, v, lam)
        qdot = v
        pdot = gq
        # (a) direct implicit equations
        direct[i] = max(
            float(np.linalg.norm(p - gv)),
            float(np.linalg.norm(qdot - v)),
            float(np.linalg.norm(pdot - gq)),
            float(np.linalg.norm(phivals)) if m else 0.0,
        )
        # (b) contraction with the state-bundle presymplectic form vs dE
        state = VakState(q=q, v=v, p=p, lam=lam)
        lhs = presymp_bar_flat((q, v, p, lam),
                               (qdot, np.zeros(spec.n), pdot, np.zeros(m)))
        rhs = dE(spec, state)
        barr[i] = max(
            float(np.linalg.norm(lhs.alpha - rhs.alpha)),
            float(np.linalg.norm(lhs.beta - rhs.beta)),
            float(np.linalg.norm(lhs.w - rhs.w)),
            float(np.linalg.norm(lhs.u - rhs.u)) if m else 0.0,
        )
        # (c) Dirac differential against the momentum-multiplier structure
        res = hat_dirac_residual(
            spec, (q, p, lam), (qdot, pdot, np.zeros(m)),
            dirac_differential(spec, q, v, lam).as_extended_covector())
        hatr[i] = max(res.components["u_minus_qdot"],
                      res.components["alpha_plus_pdot"],
                      res.components["w"],
                      res.base_point_violation)
    return EquivalenceReport(direct=direct, bar=barr, hat=hatr)


def energy_series(spec: SystemSpec, traj: Trajectory):
    """(per-step energy, max drift from the initial value)."""
    N = len(traj)
    E = np.zeros(N)
    for i in range(N):
        E[i] = vak_energy(spec, traj.state(i))
    return E, float(np.max(np.abs(E - E[0])))
