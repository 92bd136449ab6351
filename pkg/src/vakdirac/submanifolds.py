"""Numerical pullback of the iterated-bundle symplectic form onto the
vakonomic and nonholonomic dynamical submanifolds.

Both submanifolds are charted by (q, qdot, lam) with the constraints
satisfied at the chart point; tangent vectors are obtained by central
differencing of the embedding along kernel directions of the constraint
linearization (plus the exact multiplier directions), so every reported
"zero" comes with an explicit finite-difference tolerance.

The multiplier directions pair against base directions through the
constraint one-forms themselves; for the vakonomic embedding those
pairings cancel exactly (tangency to the constraint set), while for the
nonholonomic embedding they survive at any multiplier.  The headline
obstruction the dichotomy report tracks is the state-block one, which is
proportional to the multiplier and to the antisymmetrized coordinate
derivatives of the constraint forms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bundles import TTStarPoint, omega_tt
from .errors import ConstraintViolationError, RankDeficiencyError
from .systems import SystemSpec, vak_gradients

__all__ = [
    "SubmanifoldChart",
    "PullbackBasis",
    "PullbackReport",
    "embed",
    "tangent_basis",
    "pullback_form",
    "pullback_on_directions",
    "pullback_matrix",
    "obstruction_coefficient",
    "random_chart",
]

_CHART_TOL = 1e-10
_RANK_RTOL = 1e-10

KINDS = ("vakonomic", "nonholonomic")


@dataclass(frozen=True)
class SubmanifoldChart:
    """Parameter point (q, qdot, lam) of one of the two submanifolds."""

    kind: str
    q: np.ndarray
    qdot: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown chart kind {self.kind!r}")
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(-1))
        object.__setattr__(self, "qdot", np.asarray(self.qdot, dtype=float).reshape(-1))
        object.__setattr__(self, "lam", np.asarray(self.lam, dtype=float).reshape(-1))

    def scale(self):
        return max(1.0, float(np.max(np.abs(self.q))),
                   float(np.max(np.abs(self.qdot))),
                   float(np.max(np.abs(self.lam))) if self.lam.size else 0.0)


def chart_residuals(spec: SystemSpec, chart: SubmanifoldChart):
    if chart.kind == "vakonomic":
        return spec.constraint_values(chart.q, chart.qdot)
    if spec.mu is None:
        raise ValueError("nonholonomic charts need linear constraint "
                         "one-forms (mu absent)")
    return spec.mu_matrix(chart.q) @ chart.qdot


def validate_chart(spec: SystemSpec, chart: SubmanifoldChart, tol=_CHART_TOL):
    res = chart_residuals(spec, chart)
    if res.size and np.max(np.abs(res)) > tol:
        raise ConstraintViolationError(res, tol)


def embed(spec: SystemSpec, chart: SubmanifoldChart) -> TTStarPoint:
    """Map a chart point to the iterated bundle.

    Vakonomic: p and pdot are the (q, v)-derivatives of the multiplier-
    extended Lagrangian.  Nonholonomic: p is the plain Legendre image and
    pdot picks up the multiplier along the constraint one-forms.
    """
    validate_chart(spec, chart)
    q, qdot, lam = chart.q, chart.qdot, chart.lam
    if chart.kind == "vakonomic":
        _, gq, gv, _ = vak_gradients(spec, q, qdot, lam)
        return TTStarPoint(q=q, p=gv, dq=qdot, dp=gq)
    _, gq, gv = spec.L.grad(q, qdot)
    M = spec.mu_matrix(q)
    return TTStarPoint(q=q, p=gv, dq=qdot, dp=gq + M.T @ lam)


def _constraint_jacobian(spec: SystemSpec, chart: SubmanifoldChart):
    """Rows of the constraint linearization in the (q, qdot) parameters."""
    n, m = spec.n, spec.m
    J = np.zeros((m, 2 * n))
    if chart.kind == "vakonomic":
        for a, f in enumerate(spec.phi):
            _, fq, fv = f.grad(chart.q, chart.qdot)
            J[a, :n] = fq
            J[a, n:] = fv
    else:
        M = spec.mu_matrix(chart.q)
        dM = spec.dmu_matrices(chart.q)
        for a in range(m):
            J[a, :n] = dM[a].T @ chart.qdot
            J[a, n:] = M[a]
    return J


@dataclass(frozen=True)
class PullbackBasis:
    """Tangent vectors to a submanifold at an embedded chart point.

    `directions` holds the generating parameter-space directions as rows
    (length 2n + m, ordered (dq, dqdot, dlam)); the first `n_state` rows
    span the kernel of the constraint linearization, the rest are the
    multiplier directions.  `vectors` are their central-difference pushes
    through the embedding.
    """

    vectors: tuple
    directions: np.ndarray
    n_state: int
    fd_step: float


def _push_direction(spec, chart, direction, h):
    n, m = spec.n, spec.m
    dq, dqd, dl = direction[:n], direction[n:2 * n], direction[2 * n:]

    def at(sign):
        shifted = SubmanifoldChart(kind=chart.kind,
                                   q=chart.q + sign * h * dq,
                                   qdot=chart.qdot + sign * h * dqd,
                                   lam=chart.lam + sign * h * dl)
        # the shifted parameters may violate the constraints at O(h^2);
        # evaluate the embedding formulas directly
        q, qdot, lam = shifted.q, shifted.qdot, shifted.lam
        if chart.kind == "vakonomic":
            _, gq, gv, _ = vak_gradients(spec, q, qdot, lam)
            return q, gv, qdot, gq
        _, gq, gv = spec.L.grad(q, qdot)
        M = spec.mu_matrix(q)
        return q, gv, qdot, gq + M.T @ lam

    qp, pp, dqp, dpp = at(+1.0)
    qm, pm, dqm, dpm = at(-1.0)
    return TTStarPoint(q=(qp - qm) / (2 * h), p=(pp - pm) / (2 * h),
                       dq=(dqp - dqm) / (2 * h), dp=(dpp - dpm) / (2 * h))


def tangent_basis(spec: SystemSpec, chart: SubmanifoldChart,
                  fd_step: Optional[float] = None) -> PullbackBasis:
    """2n tangent vectors at the embedded chart point.

    Raises `RankDeficiencyError` when the constraint linearization loses
    row rank (irregular charts are rejected, not regularized).
    """
    validate_chart(spec, chart)
    n, m = spec.n, spec.m
    J = _constraint_jacobian(spec, chart)
    if m:
        U, s, Vt = np.linalg.svd(J)
        if s[-1] <= _RANK_RTOL * s[0]:
            raise RankDeficiencyError(
                f"constraint linearization rank deficient at chart "
                f"(singular values {s})")
        kernel = Vt[m:]          # (2n - m, 2n), orthonormal
    else:
        kernel = np.eye(2 * n)
    h = fd_step if fd_step is not None else 1e-5 * chart.scale()
    dirs = np.zeros((2 * n, 2 * n + m))
    dirs[:2 * n - m, :2 * n] = kernel
    for a in range(m):
        dirs[2 * n - m + a, 2 * n + a] = 1.0
    vectors = tuple(_push_direction(spec, chart, d, h) for d in dirs)
    return PullbackBasis(vectors=vectors, directions=dirs,
                         n_state=2 * n - m, fd_step=h)


def pullback_form(spec: SystemSpec, chart: SubmanifoldChart,
                  u_idx: int, w_idx: int,
                  basis: Optional[PullbackBasis] = None,
                  fd_step: Optional[float] = None) -> float:
    """The iterated-bundle two-form on a pair of tangent-basis vectors."""
    if basis is None:
        basis = tangent_basis(spec, chart, fd_step)
    return omega_tt(basis.vectors[u_idx], basis.vectors[w_idx])


def pullback_on_directions(spec: SystemSpec, chart: SubmanifoldChart,
                           du, dw, fd_step: Optional[float] = None,
                           tangency_tol: float = 1e-8) -> float:
    """The two-form on explicit parameter-space directions (dq, dqdot, dlam).

    Both directions must be tangent: their (q, qdot) parts must lie in
    the kernel of the constraint linearization.
    """
    validate_chart(spec, chart)
    n = spec.n
    J = _constraint_jacobian(spec, chart)
    du = np.asarray(du, dtype=float)
    dw = np.asarray(dw, dtype=float)
    for d in (du, dw):
        if spec.m and np.max(np.abs(J @ d[:2 * n])) > tangency_tol * max(1.0, np.linalg.norm(d)):
            raise ConstraintViolationError(J @ d[:2 * n], tangency_tol)
    h = fd_step if fd_step is not None else 1e-5 * chart.scale()
    V = _push_direction(spec, chart, du, h)
    W = _push_direction(spec, chart, dw, h)
    return omega_tt(V, W)


@dataclass(frozen=True)
class PullbackReport:
    """Antisymmetric matrix of pullback values over a tangent basis.

    `max_abs_state` is the maximum over pairs of state-block directions
    (the multiplier-proportional obstruction the dichotomy tracks);
    `max_abs_full` includes the multiplier-direction pairs, which for the
    nonholonomic embedding carry the constraint forms themselves.
    """

    matrix: np.ndarray
    max_abs_state: float
    max_abs_full: float
    n_state: int
    fd_step: float

    @property
    def antisymmetry_defect(self):
        return float(np.max(np.abs(self.matrix + self.matrix.T)))


def pullback_matrix(spec: SystemSpec, chart: SubmanifoldChart,
                    fd_step: Optional[float] = None) -> PullbackReport:
    basis = tangent_basis(spec, chart, fd_step)
    k = len(basis.vectors)
    P = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            val = omega_tt(basis.vectors[i], basis.vectors[j])
            P[i, j] = val
            P[j, i] = -val
    ns = basis.n_state
    state_block = np.abs(P[:ns, :ns])
    return PullbackReport(
        matrix=P,
        max_abs_state=float(np.max(state_block)) if ns else 0.0,
        max_abs_full=float(np.max(np.abs(P))),
        n_state=ns,
        fd_step=basis.fd_step,
    )


def obstruction_coefficient(spec: SystemSpec, q, lam) -> np.ndarray:
    """Antisymmetrized multiplier-weighted coordinate derivatives of the
    constraint one-forms; entry (i, j) is lam_a (dmu_i/dq_j - dmu_j/dq_i).

    This is the analytic value of the pullback on base-coordinate tangent
    pairs of the nonholonomic submanifold.
    """
    if spec.mu is None:
        raise ValueError("obstruction coefficient needs linear constraint "
                         "one-forms (mu absent)")
    lam = np.asarray(lam, dtype=float).reshape(-1)
    dM = spec.dmu_matrices(np.asarray(q, dtype=float))
    A = np.zeros((spec.n, spec.n))
    for a in range(spec.m):
        A += lam[a] * (dM[a] - dM[a].T)
    return A


def random_chart(spec: SystemSpec, kind: str, rng,
                 lam=None, lam_norm: Optional[float] = None,
                 q_scale: float = 1.0) -> SubmanifoldChart:
    """Sample an admissible chart: random q, a velocity projected (or
    Newton-corrected) onto the constraints, and a random or given lam."""
    n, m = spec.n, spec.m
    q = rng.uniform(-q_scale, q_scale, n)
    qdot = rng.uniform(-1.0, 1.0, n)
    if m:
        if kind == "nonholonomic" or spec.mu is not None:
            M = spec.mu_matrix(q)
            qdot = qdot - M.T @ np.linalg.solve(M @ M.T, M @ qdot)
        else:
            for _ in range(60):
                res = spec.constraint_values(q, qdot)
                if np.max(np.abs(res)) <= 1e-13:
                    break
                G = np.array([f.grad(q, qdot)[2] for f in spec.phi])
                qdot = qdot - G.T @ np.linalg.solve(G @ G.T, res)
    if lam is None:
        lamv = rng.standard_normal(m)
        if lam_norm is not None and m:
            nrm = np.linalg.norm(lamv)
            if nrm == 0.0:
                lamv = np.zeros(m)
                lamv[0] = lam_norm
            else:
                lamv = lamv * (lam_norm / nrm)
    else:
        lamv = np.asarray(lam, dtype=float).reshape(-1)
    return SubmanifoldChart(kind=kind, q=q, qdot=qdot, lam=lamv)
