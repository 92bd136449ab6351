"""Mechanical system definitions and the vakonomic Lagrangian machinery.

A `SystemSpec` bundles a Lagrangian and m velocity constraints, each a
`ScalarField` over (q, v) with three interchangeable gradient modes:
hand-coded analytic closures, forward-mode dual numbers over the parsed
expression, or central finite differences.  On top of it live the
extended Lagrangian with multipliers, its energy, and the differential /
Dirac-differential maps feeding the dynamics and Dirac-structure modules.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .bundles import BarCovector, VakCotangentPoint, tilde_gamma
from .errors import DimensionMismatchError
from .expressions import Expression, parse

__all__ = [
    "ScalarField",
    "SystemSpec",
    "VakState",
    "eval_with_grad",
    "vak_lagrangian",
    "vak_energy",
    "vak_gradients",
    "d_vak_lagrangian",
    "dirac_differential",
    "dE",
    "load_system_file",
    "parse_system_text",
]

_EPS = np.finfo(float).eps
_FD_STEP = _EPS ** (1.0 / 3.0)      # first derivatives
_FD_STEP2 = _EPS ** 0.25            # second differences of the value
_FD_GRAD_STEP = math.sqrt(_EPS)     # differences of an exact gradient

MODES = ("analytic", "ad", "fd")


@dataclass(frozen=True)
class ScalarField:
    """Scalar function of (q, v) with selectable derivative evaluation.

    Exactly one of the backing representations is required per mode:
    `expr` for dual-number AD, the `*_fn` closures for analytic mode.
    Finite-difference mode only needs a value (from either source).
    """

    n: int
    mode: str = "ad"
    expr: Optional[Expression] = None
    value_fn: Optional[Callable] = None
    grad_q_fn: Optional[Callable] = None
    grad_v_fn: Optional[Callable] = None
    hess_vv_fn: Optional[Callable] = None
    hess_vq_fn: Optional[Callable] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown evaluation mode {self.mode!r}")
        if self.mode == "ad" and self.expr is None:
            raise ValueError("AD mode requires an expression")
        if self.mode == "analytic" and (self.grad_q_fn is None or self.grad_v_fn is None):
            raise ValueError("analytic mode requires gradient closures")
        if self.expr is None and self.value_fn is None:
            raise ValueError("a ScalarField needs an expression or a value closure")

    @classmethod
    def from_expression(cls, text_or_expr, n, params=None, mode="ad"):
        expr = (text_or_expr if isinstance(text_or_expr, Expression)
                else parse(text_or_expr, n, params))
        return cls(n=n, mode=mode, expr=expr)

    def with_mode(self, mode):
        return replace(self, mode=mode)

    def value(self, q, v) -> float:
        if self.value_fn is not None and self.mode != "ad":
            return float(self.value_fn(q, v))
        if self.expr is not None:
            return self.expr.value(q, v)
        return float(self.value_fn(q, v))

    def grad(self, q, v):
        """(value, df/dq, df/dv) in the field's evaluation mode."""
        q = np.asarray(q, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.mode == "analytic":
            return (float(self.value_fn(q, v)),
                    np.asarray(self.grad_q_fn(q, v), dtype=float),
                    np.asarray(self.grad_v_fn(q, v), dtype=float))
        if self.mode == "ad":
            return self.expr.grad(q, v)
        return self._fd_grad(q, v)

    def _fd_grad(self, q, v):
        n = self.n
        x = np.concatenate([q, v])
        g = np.zeros(2 * n)
        for i in range(2 * n):
            h = _FD_STEP * max(1.0, abs(x[i]))
            xp = x.copy(); xp[i] += h
            xm = x.copy(); xm[i] -= h
            g[i] = (self.value(xp[:n], xp[n:]) - self.value(xm[:n], xm[n:])) / (2 * h)
        return self.value(q, v), g[:n], g[n:]

    def hess_blocks(self, q, v):
        """Second derivatives needed by the algebraic solves:
        (d2f/dv2, d2f/dvdq) with shapes (n, n) and (n, n)."""
        q = np.asarray(q, dtype=float)
        v = np.asarray(v, dtype=float)
        n = self.n
        if self.mode == "analytic":
            if self.hess_vv_fn is not None and self.hess_vq_fn is not None:
                return (np.asarray(self.hess_vv_fn(q, v), dtype=float),
                        np.asarray(self.hess_vq_fn(q, v), dtype=float))
            return self._fd_hess_from_grad(q, v)
        if self.mode == "ad":
            _, _, H = self.expr.hess(q, v)
            return H[n:, n:], H[n:, :n]
        return self._fd_hess_from_value(q, v)

    def _fd_hess_from_grad(self, q, v):
        # differences of an exact gradient: step sqrt(machine eps)
        n = self.n
        Hvv = np.zeros((n, n))
        Hvq = np.zeros((n, n))
        for j in range(n):
            hv = _FD_GRAD_STEP * max(1.0, abs(v[j]))
            vp = v.copy(); vp[j] += hv
            vm = v.copy(); vm[j] -= hv
            Hvv[:, j] = (self.grad_v_fn(q, vp) - self.grad_v_fn(q, vm)) / (2 * hv)
            hq = _FD_GRAD_STEP * max(1.0, abs(q[j]))
            qp = q.copy(); qp[j] += hq
            qm = q.copy(); qm[j] -= hq
            Hvq[:, j] = (self.grad_v_fn(qp, v) - self.grad_v_fn(qm, v)) / (2 * hq)
        return Hvv, Hvq

    def _fd_hess_from_value(self, q, v):
        n = self.n
        x = np.concatenate([q, v])

        def val(y):
            return self.value(y[:n], y[n:])

        H = np.zeros((2 * n, 2 * n))
        h = np.array([_FD_STEP2 * max(1.0, abs(x[i])) for i in range(2 * n)])
        for i in range(2 * n):
            for j in range(i, 2 * n):
                ei = np.zeros(2 * n); ei[i] = h[i]
                ej = np.zeros(2 * n); ej[j] = h[j]
                H[i, j] = (val(x + ei + ej) - val(x + ei - ej)
                           - val(x - ei + ej) + val(x - ei - ej)) / (4 * h[i] * h[j])
                H[j, i] = H[i, j]
        return H[n:, n:], H[n:, :n]


@dataclass(frozen=True)
class VakState:
    """Point (q, v, p, lam) of the extended state bundle."""

    q: np.ndarray
    v: np.ndarray
    p: np.ndarray
    lam: np.ndarray
    t: Optional[float] = None

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(-1)
        n = q.shape[0]
        object.__setattr__(self, "q", q)
        for name in ("v", "p"):
            a = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if a.shape[0] != n:
                raise DimensionMismatchError(name, n, a.shape[0])
            object.__setattr__(self, name, a)
        object.__setattr__(self, "lam",
                           np.asarray(self.lam, dtype=float).reshape(-1))

    @property
    def n(self):
        return self.q.shape[0]

    @property
    def m(self):
        return self.lam.shape[0]


@dataclass(frozen=True)
class SystemSpec:
    """A mechanical system: Lagrangian, constraints, optional linear forms.

    `mu`, when present, holds the constraint one-forms as callables
    q -> (n,) with phi(q, v) = <mu(q), v>; `dmu` holds their coordinate
    Jacobians q -> (n, n) with entry [i, j] = d mu_i / d q_j.
    """

    name: str
    n: int
    m: int
    L: ScalarField
    phi: tuple = ()
    mu: Optional[tuple] = None
    dmu: Optional[tuple] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "phi", tuple(self.phi))
        if self.mu is not None:
            object.__setattr__(self, "mu", tuple(self.mu))
        if self.dmu is not None:
            object.__setattr__(self, "dmu", tuple(self.dmu))
        if not 0 <= self.m < self.n:
            raise ValueError(f"need m < n, got m={self.m}, n={self.n}")
        if len(self.phi) != self.m:
            raise DimensionMismatchError("phi list", self.m, len(self.phi))
        if self.mu is not None and len(self.mu) != self.m:
            raise DimensionMismatchError("mu list", self.m, len(self.mu))

    def check_state(self, state: VakState):
        if state.n != self.n:
            raise DimensionMismatchError("state q", self.n, state.n)
        if state.m != self.m:
            raise DimensionMismatchError("state lam", self.m, state.m)

    def constraint_values(self, q, v):
        return np.array([f.value(q, v) for f in self.phi])

    def mu_matrix(self, q):
        if self.mu is None:
            return None
        return np.array([np.asarray(mu_a(q), dtype=float) for mu_a in self.mu])

    def dmu_matrices(self, q):
        """List of (n, n) Jacobians of the constraint one-forms, from the
        hand-coded closures when present, otherwise by differencing mu."""
        if self.mu is None:
            return None
        if self.dmu is not None:
            return [np.asarray(d(q), dtype=float) for d in self.dmu]
        q = np.asarray(q, dtype=float)
        out = []
        for mu_a in self.mu:
            J = np.zeros((self.n, self.n))
            for j in range(self.n):
                h = 1e-6 * max(1.0, abs(q[j]))
                qp = q.copy(); qp[j] += h
                qm = q.copy(); qm[j] -= h
                J[:, j] = (np.asarray(mu_a(qp), float) - np.asarray(mu_a(qm), float)) / (2 * h)
            out.append(J)
        return out

    def has_tapes(self):
        return self.L.expr is not None and all(f.expr is not None for f in self.phi)

    def packed_tapes(self):
        from .dynamics import pack_system  # local import to avoid a cycle
        return pack_system(self)

    def with_modes(self, mode):
        return replace(self, L=self.L.with_mode(mode),
                       phi=tuple(f.with_mode(mode) for f in self.phi))


def eval_with_grad(f: ScalarField, q, v):
    """(value, df/dq, df/dv) of a scalar field in its evaluation mode."""
    return f.grad(q, v)


def vak_gradients(spec: SystemSpec, q, v, lam):
    """Value and first derivatives of the extended Lagrangian.

    Returns (Lvak, dq, dv, phivals) where dq = dL/dq + lam.dphi/dq,
    dv likewise, and phivals are the raw constraint values (which are
    exactly the multiplier derivatives of the extended Lagrangian).
    """
    lam = np.asarray(lam, dtype=float).reshape(-1)
    val, gq, gv = spec.L.grad(q, v)
    gq = gq.copy()
    gv = gv.copy()
    phivals = np.zeros(spec.m)
    for a, f in enumerate(spec.phi):
        fval, fq, fv = f.grad(q, v)
        phivals[a] = fval
        val += lam[a] * fval
        gq += lam[a] * fq
        gv += lam[a] * fv
    return val, gq, gv, phivals


def vak_lagrangian(spec: SystemSpec, state: VakState) -> float:
    """L(q, v) + lam_a phi^a(q, v)."""
    spec.check_state(state)
    val = spec.L.value(state.q, state.v)
    for a, f in enumerate(spec.phi):
        val += state.lam[a] * f.value(state.q, state.v)
    return float(val)


def vak_energy(spec: SystemSpec, state: VakState) -> float:
    """<p, v> minus the extended Lagrangian."""
    spec.check_state(state)
    return float(state.p @ state.v) - vak_lagrangian(spec, state)


def d_vak_lagrangian(spec: SystemSpec, q, v, lam) -> VakCotangentPoint:
    """Differential of the extended Lagrangian over its (q, v, lam) base:
    covector blocks (d/dq, d/dv, phi)."""
    _, gq, gv, phivals = vak_gradients(spec, q, v, lam)
    return VakCotangentPoint(q=q, fiber=v, lam=lam,
                             cov_a=gq, cov_b=gv, cov_lam=phivals,
                             space="tangent")


def dirac_differential(spec: SystemSpec, q, v, lam) -> VakCotangentPoint:
    """Dirac differential: the permutation map applied to the differential.

    The result is a covector over the momentum-multiplier base whose base
    momentum slot is the generalized Legendre image d(Lvak)/dv.
    """
    return tilde_gamma(d_vak_lagrangian(spec, q, v, lam))


def dE(spec: SystemSpec, state: VakState) -> BarCovector:
    """Differential of the energy on the full state bundle.

    Blocks (alpha, beta, w, u) = (-dLvak/dq, p - dLvak/dv, v, -phi); the
    multiplier block carries -phi since the energy subtracts the extended
    Lagrangian.
    """
    spec.check_state(state)
    _, gq, gv, phivals = vak_gradients(spec, state.q, state.v, state.lam)
    return BarCovector(alpha=-gq, beta=state.p - gv, w=state.v, u=-phivals)


# ---------------------------------------------------------------------------
# system definition files
#
# A small declarative format:
#
#     name = "vakonomic particle"
#     n = 3
#     m = 1
#     L = "0.5*(v0^2 + v1^2 + v2^2)"
#     phi = ["v2 - q1*v0"]
#     params { mass = 1.0 }
#
# '#' starts a comment.  Parameter names may be used inside the L/phi
# expressions; they are substituted as constants when the file is parsed.

_SYS_TOKEN = re.compile(
    r'\s*(?:(?P<str>"[^"]*")|(?P<num>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)'
    r'|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<punct>[={}\[\],]))'
)


def _tokenize_sysfile(text):
    # strip comments, then tokenize
    lines = []
    for line in text.splitlines():
        if '"' in line:
            out = []
            in_str = False
            for ch in line:
                if ch == '"':
                    in_str = not in_str
                if ch == "#" and not in_str:
                    break
                out.append(ch)
            lines.append("".join(out))
        else:
            lines.append(line.split("#", 1)[0])
    text = "\n".join(lines)
    pos = 0
    tokens = []
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        mobj = _SYS_TOKEN.match(text, pos)
        if mobj is None:
            raise ValueError(f"system file: unexpected character {text[pos]!r}")
        tokens.append(mobj)
        pos = mobj.end()
    return tokens


def parse_system_text(text, name=None) -> SystemSpec:
    """Parse the declarative system-definition format into a `SystemSpec`."""
    tokens = _tokenize_sysfile(text)
    i = 0

    def peek():
        return tokens[i] if i < len(tokens) else None

    def take(group=None, value=None):
        nonlocal i
        t = peek()
        if t is None:
            raise ValueError("system file: unexpected end of input")
        if group is not None and t.group(group) is None:
            raise ValueError(f"system file: expected {group} near {t.group(0).strip()!r}")
        if value is not None and t.group(0).strip() != value:
            raise ValueError(f"system file: expected {value!r}, found {t.group(0).strip()!r}")
        i += 1
        return t

    data = {}
    params = {}
    while peek() is not None:
        key = take("ident").group("ident")
        if key == "params":
            take(value="{")
            while peek() is not None and peek().group(0).strip() != "}":
                pname = take("ident").group("ident")
                take(value="=")
                pval = float(take("num").group("num"))
                params[pname] = pval
                if peek() is not None and peek().group(0).strip() == ",":
                    take()
            take(value="}")
            continue
        take(value="=")
        t = peek()
        if t is None:
            raise ValueError(f"system file: missing value for {key!r}")
        if t.group("str") is not None:
            data[key] = take().group("str")[1:-1]
        elif t.group("num") is not None:
            data[key] = float(take().group("num"))
        elif t.group(0).strip() == "[":
            take()
            items = []
            while peek() is not None and peek().group(0).strip() != "]":
                items.append(take("str").group("str")[1:-1])
                if peek() is not None and peek().group(0).strip() == ",":
                    take()
            take(value="]")
            data[key] = items
        else:
            raise ValueError(f"system file: bad value for {key!r}")

    for required in ("n", "m", "L", "phi"):
        if required not in data:
            raise ValueError(f"system file: missing key {required!r}")
    n = int(data["n"])
    m = int(data["m"])
    phis = data["phi"]
    if isinstance(phis, str):
        phis = [phis]
    if len(phis) != m:
        raise DimensionMismatchError("phi list", m, len(phis))

    L = ScalarField.from_expression(data["L"], n, params=params)
    phi = tuple(ScalarField.from_expression(s, n, params=params) for s in phis)
    spec = SystemSpec(name=str(data.get("name", name or "user system")),
                      n=n, m=m, L=L, phi=phi, params=params)
    mu = _derive_linear_mu(spec)
    if mu is not None:
        spec = replace(spec, mu=mu)
    return spec


def load_system_file(path) -> SystemSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_system_text(fh.read(), name=str(path))


def _derive_linear_mu(spec: SystemSpec, samples=8, tol=1e-9, seed=1234):
    """Detect constraints linear in v and build mu closures from them.

    A constraint is accepted as linear when its value vanishes at v = 0
    and its v-Hessian vanishes at sampled points.
    """
    rng = np.random.default_rng(seed)
    n = spec.n
    for f in spec.phi:
        for _ in range(samples):
            q = rng.uniform(-1.5, 1.5, n)
            v = rng.uniform(-1.5, 1.5, n)
            try:
                if abs(f.value(q, np.zeros(n))) > tol:
                    return None
                Hvv, _ = f.hess_blocks(q, v)
            except ArithmeticError:
                return None
            if np.max(np.abs(Hvv)) > tol:
                return None

    def make_mu(f):
        def mu(q):
            _, _, gv = f.grad(np.asarray(q, dtype=float), np.zeros(n))
            return gv
        return mu

    return tuple(make_mu(f) for f in spec.phi)
