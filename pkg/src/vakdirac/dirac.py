"""Dirac structures: enumerated bases on sampled vector spaces, and
residual evaluators for the structures living over the dynamical bundles.

The linear case certifies the defining property D = D-orthogonal by
exhibiting a basis of the right dimension on which the symmetric pairing
vanishes.  The structures used by the dynamics (the induced one on the
cotangent bundle and the two presymplectic graphs over the extended
bundles) are represented as residual evaluators instead: membership of a
(tangent, covector) pair is quantified condition by condition, with
Euclidean norms per condition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bundles import BarCovector, ExtendedCovector
from .errors import DimensionMismatchError, RankDeficiencyError
from .systems import SystemSpec, VakState

__all__ = [
    "LinearDiracData",
    "DiracResidual",
    "SelfOrthReport",
    "linear_dirac_basis",
    "check_self_orthogonal",
    "induced_dirac_residual",
    "bar_dirac_residual",
    "hat_dirac_residual",
    "bar_dirac_data",
    "hat_dirac_data",
]

_RANK_RTOL = 1e-10  # relative to the largest singular value


@dataclass(frozen=True)
class LinearDiracData:
    """A two-form and a distribution on a finite-dimensional vector space.

    `Omega` acts as a matrix: the flat map sends v to Omega @ v.  `Delta`
    holds a basis of the distribution in its columns.
    """

    dim: int
    Omega: np.ndarray
    Delta: np.ndarray

    def __post_init__(self):
        Omega = np.asarray(self.Omega, dtype=float)
        Delta = np.asarray(self.Delta, dtype=float)
        if Delta.ndim == 1:
            Delta = Delta.reshape(-1, 1)
        if Omega.shape != (self.dim, self.dim):
            raise DimensionMismatchError("Omega", self.dim, Omega.shape[0])
        if Delta.shape[0] != self.dim and Delta.size:
            raise DimensionMismatchError("Delta", self.dim, Delta.shape[0])
        object.__setattr__(self, "Omega", Omega)
        object.__setattr__(self, "Delta", Delta.reshape(self.dim, -1))

    def validate(self, antisym_tol=1e-14):
        scale = max(1.0, float(np.max(np.abs(self.Omega))))
        skew = float(np.max(np.abs(self.Omega + self.Omega.T)))
        if skew > antisym_tol * scale:
            raise ValueError(f"Omega is not antisymmetric (defect {skew:.3g})")
        if self.Delta.shape[1]:
            s = np.linalg.svd(self.Delta, compute_uv=False)
            if s[-1] <= _RANK_RTOL * s[0]:
                raise RankDeficiencyError(
                    f"Delta is rank deficient (singular values {s})")


@dataclass(frozen=True)
class DiracResidual:
    """How far a (tangent, covector) pair is from membership.

    Each named condition gets a Euclidean norm in `components`; the three
    headline fields group them.  All entries are nonnegative and vanish
    together exactly when the pair belongs to the structure.
    """

    tangent_violation: float
    covector_violation: float
    base_point_violation: float
    components: dict = field(default_factory=dict)

    def aggregate(self, mode="max"):
        vals = (self.tangent_violation, self.covector_violation,
                self.base_point_violation)
        if mode == "max":
            return max(vals)
        if mode == "sum":
            return float(sum(vals))
        raise ValueError(f"unknown aggregation {mode!r}")

    def is_member(self, tol):
        return self.aggregate("max") <= tol


@dataclass(frozen=True)
class SelfOrthReport:
    max_pairing: float
    dim: int
    expected_dim: int

    @property
    def passed(self):
        return self.max_pairing <= 1e-12 and self.dim == self.expected_dim


def linear_dirac_basis(data: LinearDiracData):
    """A basis of the structure determined by (Omega, Delta).

    For each distribution basis vector v the pair (v, Omega @ v) is a
    member; the annihilator of the distribution contributes the remaining
    (0, c) pairs.  The result always has `dim` elements.
    """
    data.validate()
    d = data.dim
    k = data.Delta.shape[1]
    pairs = [(data.Delta[:, j].copy(), data.Omega @ data.Delta[:, j])
             for j in range(k)]
    if k < d:
        # annihilator generators: null space of Delta^T
        if k == 0:
            C = np.eye(d)
        else:
            _, s, Vt = np.linalg.svd(data.Delta.T)
            rank = int(np.sum(s > _RANK_RTOL * s[0]))
            C = Vt[rank:].T
        for j in range(C.shape[1]):
            pairs.append((np.zeros(d), C[:, j].copy()))
    return pairs


def symmetric_pairing(pair_a, pair_b):
    """<<(v, alpha), (w, beta)>> = <alpha, w> + <beta, v>."""
    v, alpha = pair_a
    w, beta = pair_b
    return float(alpha @ w + beta @ v)


def check_self_orthogonal(data: LinearDiracData) -> SelfOrthReport:
    """Max symmetric pairing over normalized basis pairs plus a dimension
    report; a vanishing pairing at full dimension certifies D = D-orth."""
    pairs = linear_dirac_basis(data)
    normed = []
    for v, alpha in pairs:
        scale = np.sqrt(v @ v + alpha @ alpha)
        normed.append((v / scale, alpha / scale))
    worst = 0.0
    for i in range(len(normed)):
        for j in range(i, len(normed)):
            worst = max(worst, abs(symmetric_pairing(normed[i], normed[j])))
    stacked = np.array([np.concatenate(p) for p in normed])
    s = np.linalg.svd(stacked, compute_uv=False)
    dim = int(np.sum(s > _RANK_RTOL * s[0]))
    return SelfOrthReport(max_pairing=worst, dim=dim, expected_dim=data.dim)


def _span_projection_residual(rows, x):
    """Euclidean distance of covector x from the row span of `rows`."""
    if rows.size == 0:
        return float(np.linalg.norm(x))
    Q, R = np.linalg.qr(rows.T)
    diag = np.abs(np.diag(R))
    if diag.size and np.min(diag) <= _RANK_RTOL * np.max(diag):
        raise RankDeficiencyError("constraint one-forms are rank deficient")
    return float(np.linalg.norm(x - Q @ (Q.T @ x)))


def induced_dirac_residual(spec: SystemSpec, base, pair) -> DiracResidual:
    """Membership residual for the constraint-induced structure on the
    cotangent bundle.

    `base` is (q, p); `pair` is ((qdot, pdot), (alpha, w)) with alpha a
    covector on q-directions and w a vector paired against p-directions.
    Conditions: qdot in the distribution, w = qdot, and alpha + pdot in
    the span of the constraint one-forms.
    """
    if spec.mu is None:
        raise ValueError("system carries no linear constraint one-forms (mu absent)")
    q, _p = (np.asarray(x, dtype=float) for x in base)
    (qdot, pdot), (alpha, w) = pair
    qdot = np.asarray(qdot, dtype=float)
    pdot = np.asarray(pdot, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    w = np.asarray(w, dtype=float)
    M = spec.mu_matrix(q)
    tangent = float(np.linalg.norm(M @ qdot))
    covector = _span_projection_residual(M, alpha + pdot)
    basept = float(np.linalg.norm(w - qdot))
    return DiracResidual(
        tangent_violation=tangent,
        covector_violation=covector,
        base_point_violation=basept,
        components={"mu_qdot": tangent,
                    "alpha_plus_pdot_off_span": covector,
                    "w_minus_qdot": basept},
    )


def bar_dirac_residual(spec: SystemSpec, state: VakState, xdot,
                       covector: BarCovector) -> DiracResidual:
    """Membership residual for the presymplectic graph over the full state
    bundle: conditions w = qdot, beta = 0, alpha + pdot = 0, u = 0.

    `xdot` is (qdot, vdot, pdot, lamdot); the vdot and lamdot entries lie
    in the kernel directions and never influence the residual.
    """
    spec.check_state(state)
    qdot, _vdot, pdot, _lamdot = (np.asarray(x, dtype=float) for x in xdot)
    if covector.n != spec.n or covector.m != spec.m:
        raise DimensionMismatchError("covector", spec.n, covector.n)
    comps = {
        "w_minus_qdot": float(np.linalg.norm(covector.w - qdot)),
        "beta": float(np.linalg.norm(covector.beta)),
        "alpha_plus_pdot": float(np.linalg.norm(covector.alpha + pdot)),
        "u": float(np.linalg.norm(covector.u)),
    }
    return DiracResidual(
        tangent_violation=0.0,
        covector_violation=max(comps.values()),
        base_point_violation=0.0,
        components=comps,
    )


def hat_dirac_residual(spec: SystemSpec, base, xdot,
                       covector: ExtendedCovector) -> DiracResidual:
    """Membership residual for the presymplectic graph over the
    momentum-multiplier bundle: u = qdot, alpha + pdot = 0, w = 0, plus
    the base-point matching of the covector's momentum slot.
    """
    q, p, lam = (np.asarray(x, dtype=float).reshape(-1) for x in base)
    qdot, pdot, _lamdot = (np.asarray(x, dtype=float).reshape(-1) for x in xdot)
    if covector.n != spec.n or covector.m != spec.m:
        raise DimensionMismatchError("covector", spec.n, covector.n)
    comps = {
        "u_minus_qdot": float(np.linalg.norm(covector.u - qdot)),
        "alpha_plus_pdot": float(np.linalg.norm(covector.alpha + pdot)),
        "w": float(np.linalg.norm(covector.w)),
    }
    basept = float(np.linalg.norm(p - covector.p))
    return DiracResidual(
        tangent_violation=0.0,
        covector_violation=max(comps.values()),
        base_point_violation=basept,
        components=comps | {"base_momentum": basept},
    )


def bar_dirac_data(n, m) -> LinearDiracData:
    """The graph structure over the full state bundle as linear data on a
    (3n + m)-dimensional space, blocks ordered (q, v, p, lam)."""
    d = 3 * n + m
    O = np.zeros((d, d))
    O[:n, 2 * n:3 * n] = -np.eye(n)
    O[2 * n:3 * n, :n] = np.eye(n)
    return LinearDiracData(dim=d, Omega=O, Delta=np.eye(d))


def hat_dirac_data(n, m) -> LinearDiracData:
    """The graph structure over the momentum-multiplier bundle as linear
    data on a (2n + m)-dimensional space, blocks ordered (q, p, lam)."""
    d = 2 * n + m
    O = np.zeros((d, d))
    O[:n, n:2 * n] = -np.eye(n)
    O[n:2 * n, :n] = np.eye(n)
    return LinearDiracData(dim=d, Omega=O, Delta=np.eye(d))
