"""Coordinate maps between the iterated tangent and cotangent bundles.

Everything here works on a single global chart: a point is a handful of
dense blocks of length ``n`` (plus multiplier blocks of length ``m``),
and the maps are pure permutations and negations of those blocks.  The
sign convention is fixed once for the whole package: the canonical
two-form on the cotangent side is ``dq ^ dp``.

Block orders follow the local formulas verbatim, including the slightly
surprising placement of the base covector *last* in `TStarTPoint`
(``(q, dq, dp, p)``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError

__all__ = [
    "TTStarPoint",
    "TStarTPoint",
    "TStarTStarPoint",
    "ExtendedCovector",
    "VakCotangentPoint",
    "BarCovector",
    "kappa",
    "kappa_inv",
    "omega_flat",
    "omega_flat_inv",
    "gamma",
    "tilde_gamma",
    "tilde_gamma_composed",
    "iota1",
    "iota2",
    "iota2_inv",
    "omega_tt",
    "presymp_hat_flat",
    "presymp_bar_flat",
]


_F64 = np.dtype(np.float64)


def _block(x, name, n=None):
    if type(x) is np.ndarray and x.dtype is _F64 and x.ndim == 1:
        a = x  # hot path: blocks circulate unchanged through the maps
    else:
        a = np.atleast_1d(np.asarray(x, dtype=float))
        if a.ndim != 1:
            raise DimensionMismatchError(name, 1, a.ndim)
    if n is not None and a.shape[0] != n:
        raise DimensionMismatchError(name, n, a.shape[0])
    return a


@dataclass(frozen=True)
class TTStarPoint:
    """Point of the tangent of the cotangent bundle, blocks (q, p, dq, dp).

    Also used as a *tangent vector* container, in which case the blocks
    read (delta-q, delta-p, delta-dq, delta-dp).
    """

    q: np.ndarray
    p: np.ndarray
    dq: np.ndarray
    dp: np.ndarray

    def __post_init__(self):
        q = _block(self.q, "q")
        n = q.shape[0]
        if n < 1:
            raise DimensionMismatchError("q", 1, n)
        object.__setattr__(self, "q", q)
        for name in ("p", "dq", "dp"):
            object.__setattr__(self, name, _block(getattr(self, name), name, n))

    @property
    def n(self):
        return self.q.shape[0]

    def blocks(self):
        return self.q, self.p, self.dq, self.dp


@dataclass(frozen=True)
class TStarTPoint:
    """Point of the cotangent of the tangent bundle, blocks (q, dq, dp, p)."""

    q: np.ndarray
    dq: np.ndarray
    dp: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = _block(self.q, "q")
        n = q.shape[0]
        object.__setattr__(self, "q", q)
        for name in ("dq", "dp", "p"):
            object.__setattr__(self, name, _block(getattr(self, name), name, n))

    @property
    def n(self):
        return self.q.shape[0]


@dataclass(frozen=True)
class TStarTStarPoint:
    """Point of the iterated cotangent bundle, blocks (q, p, -dp, dq).

    `mdp` stores the negated dp block, matching the local form of the
    flat map of the canonical two-form.
    """

    q: np.ndarray
    p: np.ndarray
    mdp: np.ndarray
    dq: np.ndarray

    def __post_init__(self):
        q = _block(self.q, "q")
        n = q.shape[0]
        object.__setattr__(self, "q", q)
        for name in ("p", "mdp", "dq"):
            object.__setattr__(self, name, _block(getattr(self, name), name, n))

    @property
    def n(self):
        return self.q.shape[0]


@dataclass(frozen=True)
class ExtendedCovector:
    """Covector over the momentum-multiplier space: base (q, p, lam) plus
    blocks alpha (q-directions), u (p-directions) and w (lam-directions).
    """

    q: np.ndarray
    p: np.ndarray
    lam: np.ndarray
    alpha: np.ndarray
    u: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        q = _block(self.q, "q")
        n = q.shape[0]
        lam = np.asarray(self.lam, dtype=float).reshape(-1)
        m = lam.shape[0]
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "p", _block(self.p, "p", n))
        object.__setattr__(self, "alpha", _block(self.alpha, "alpha", n))
        object.__setattr__(self, "u", _block(self.u, "u", n))
        w = np.asarray(self.w, dtype=float).reshape(-1)
        if w.shape[0] != m:
            raise DimensionMismatchError("w", m, w.shape[0])
        object.__setattr__(self, "w", w)

    @property
    def n(self):
        return self.q.shape[0]

    @property
    def m(self):
        return self.lam.shape[0]


@dataclass(frozen=True)
class VakCotangentPoint:
    """Covector point over the velocity-multiplier or momentum-multiplier
    space, with positional slots shared by both sides of the extended
    permutation map.

    ``space == "tangent"``: slots read (q, dq, lam | dp, p, w), a covector
    over the velocity-multiplier base (q, dq, lam).

    ``space == "cotangent"``: slots read (q, p, lam | -dp, dq, w), a
    covector over the momentum-multiplier base (q, p, lam); `fiber` then
    holds the momentum p and (`cov_a`, `cov_b`) hold (-dp, dq).
    """

    q: np.ndarray
    fiber: np.ndarray
    lam: np.ndarray
    cov_a: np.ndarray
    cov_b: np.ndarray
    cov_lam: np.ndarray
    space: str = "tangent"

    def __post_init__(self):
        if self.space not in ("tangent", "cotangent"):
            raise ValueError(f"unknown space {self.space!r}")
        q = _block(self.q, "q")
        n = q.shape[0]
        lam = np.asarray(self.lam, dtype=float).reshape(-1)
        m = lam.shape[0]
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "lam", lam)
        for name in ("fiber", "cov_a", "cov_b"):
            object.__setattr__(self, name, _block(getattr(self, name), name, n))
        cov_lam = np.asarray(self.cov_lam, dtype=float).reshape(-1)
        if cov_lam.shape[0] != m:
            raise DimensionMismatchError("cov_lam", m, cov_lam.shape[0])
        object.__setattr__(self, "cov_lam", cov_lam)

    @property
    def n(self):
        return self.q.shape[0]

    @property
    def m(self):
        return self.lam.shape[0]

    def as_extended_covector(self):
        """View a cotangent-space point as an `ExtendedCovector`."""
        if self.space != "cotangent":
            raise ValueError("only cotangent-space points carry (alpha, u, w) blocks")
        return ExtendedCovector(
            q=self.q, p=self.fiber, lam=self.lam,
            alpha=self.cov_a, u=self.cov_b, w=self.cov_lam,
        )


@dataclass(frozen=True)
class BarCovector:
    """Covector over the full state bundle (q, v, p, lam): blocks
    alpha (q-directions), beta (v-directions), w (p-directions) and
    u (lam-directions).
    """

    alpha: np.ndarray
    beta: np.ndarray
    w: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        alpha = _block(self.alpha, "alpha")
        n = alpha.shape[0]
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", _block(self.beta, "beta", n))
        object.__setattr__(self, "w", _block(self.w, "w", n))
        u = np.asarray(self.u, dtype=float).reshape(-1)
        object.__setattr__(self, "u", u)

    @property
    def n(self):
        return self.alpha.shape[0]

    @property
    def m(self):
        return self.u.shape[0]


def kappa(pt: TTStarPoint) -> TStarTPoint:
    """(q, p, dq, dp) -> (q, dq, dp, p)."""
    return TStarTPoint(q=pt.q, dq=pt.dq, dp=pt.dp, p=pt.p)


def kappa_inv(pt: TStarTPoint) -> TTStarPoint:
    """Inverse of `kappa`: (q, dq, dp, p) -> (q, p, dq, dp)."""
    return TTStarPoint(q=pt.q, p=pt.p, dq=pt.dq, dp=pt.dp)


def omega_flat(pt: TTStarPoint) -> TStarTStarPoint:
    """Flat map of dq ^ dp: (q, p, dq, dp) -> (q, p, -dp, dq)."""
    return TStarTStarPoint(q=pt.q, p=pt.p, mdp=-pt.dp, dq=pt.dq)


def omega_flat_inv(pt: TStarTStarPoint) -> TTStarPoint:
    """Inverse of `omega_flat`: (q, p, -dp, dq) -> (q, p, dq, dp)."""
    return TTStarPoint(q=pt.q, p=pt.p, dq=pt.dq, dp=-pt.mdp)


def gamma(pt: TStarTPoint) -> TStarTStarPoint:
    """(q, dq, dp, p) -> (q, p, -dp, dq); equals omega_flat o kappa_inv."""
    return TStarTStarPoint(q=pt.q, p=pt.p, mdp=-pt.dp, dq=pt.dq)


def iota1(pt: VakCotangentPoint):
    """Split a covector over the velocity-multiplier base into its
    bundle factor (q, dq, dp, p) and multiplier factor (lam, w).
    """
    if pt.space != "tangent":
        raise ValueError("iota1 expects a tangent-space covector point")
    return TStarTPoint(q=pt.q, dq=pt.fiber, dp=pt.cov_a, p=pt.cov_b), (pt.lam, pt.cov_lam)


def iota2(pt: VakCotangentPoint):
    """Split a covector over the momentum-multiplier base into its bundle
    factor (q, p, -dp, dq) and multiplier factor (lam, w).
    """
    if pt.space != "cotangent":
        raise ValueError("iota2 expects a cotangent-space covector point")
    return TStarTStarPoint(q=pt.q, p=pt.fiber, mdp=pt.cov_a, dq=pt.cov_b), (pt.lam, pt.cov_lam)


def iota2_inv(bundle: TStarTStarPoint, mult) -> VakCotangentPoint:
    lam, w = mult
    return VakCotangentPoint(
        q=bundle.q, fiber=bundle.p, lam=lam,
        cov_a=bundle.mdp, cov_b=bundle.dq, cov_lam=w,
        space="cotangent",
    )


def tilde_gamma(pt: VakCotangentPoint) -> VakCotangentPoint:
    """(q, dq, lam, dp, p, w) -> (q, p, lam, -dp, dq, w)."""
    if pt.space != "tangent":
        raise ValueError("tilde_gamma expects a tangent-space covector point")
    return VakCotangentPoint(
        q=pt.q, fiber=pt.cov_b, lam=pt.lam,
        cov_a=-pt.cov_a, cov_b=pt.fiber, cov_lam=pt.cov_lam,
        space="cotangent",
    )


def tilde_gamma_composed(pt: VakCotangentPoint) -> VakCotangentPoint:
    """Route `tilde_gamma` through its defining composition: split off the
    multiplier factor, apply `gamma` to the bundle factor, reassemble.
    """
    bundle, mult = iota1(pt)
    return iota2_inv(gamma(bundle), mult)


def omega_tt(V: TTStarPoint, W: TTStarPoint) -> float:
    """Evaluate dq ^ d(dp) + d(dq) ^ dp on two tangent vectors.

    The arguments are tangent vectors to the iterated bundle, packed in
    `TTStarPoint` blocks (delta-q, delta-p, delta-dq, delta-dp).
    """
    if V.n != W.n:
        raise DimensionMismatchError("omega_tt arguments", V.n, W.n)
    return float(
        V.q @ W.dp - W.q @ V.dp + V.dq @ W.p - W.dq @ V.p
    )


def presymp_hat_flat(base, xdot) -> ExtendedCovector:
    """Flat map of the presymplectic form on the momentum-multiplier space:
    (qdot, pdot, lamdot) -> (alpha, u, w) = (-pdot, qdot, 0).
    """
    q, p, lam = base
    qdot, pdot, lamdot = xdot
    q = _block(q, "q")
    n = q.shape[0]
    lam = np.asarray(lam, dtype=float).reshape(-1)
    qdot = _block(qdot, "qdot", n)
    pdot = _block(pdot, "pdot", n)
    lamdot = np.asarray(lamdot, dtype=float).reshape(-1)
    if lamdot.shape[0] != lam.shape[0]:
        raise DimensionMismatchError("lamdot", lam.shape[0], lamdot.shape[0])
    return ExtendedCovector(
        q=q, p=_block(p, "p", n), lam=lam,
        alpha=-pdot, u=qdot, w=np.zeros_like(lam),
    )


def presymp_bar_flat(base, xdot) -> BarCovector:
    """Flat map of the presymplectic form on the full state bundle:
    (qdot, vdot, pdot, lamdot) -> (alpha, beta, w, u) = (-pdot, 0, qdot, 0).

    The v and lam directions span the kernel, so `beta` and `u` vanish
    identically.
    """
    q, v, p, lam = base
    qdot, vdot, pdot, lamdot = xdot
    q = _block(q, "q")
    n = q.shape[0]
    lam = np.asarray(lam, dtype=float).reshape(-1)
    qdot = _block(qdot, "qdot", n)
    pdot = _block(pdot, "pdot", n)
    _block(v, "v", n)
    _block(vdot, "vdot", n)
    lamdot = np.asarray(lamdot, dtype=float).reshape(-1)
    if lamdot.shape[0] != lam.shape[0]:
        raise DimensionMismatchError("lamdot", lam.shape[0], lamdot.shape[0])
    return BarCovector(alpha=-pdot, beta=np.zeros(n), w=qdot, u=np.zeros(lam.shape[0]))
