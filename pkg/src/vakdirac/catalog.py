"""Built-in systems: vertical rolling disk, vakonomic particle, skate.

Each carries hand-coded analytic gradients and second derivatives (the
default evaluation mode), an equivalent expression form used by the fast
tape kernels and by the AD/FD cross-checks, and the linear constraint
one-forms with their coordinate Jacobians.
"""

from __future__ import annotations

import math

import numpy as np

from .systems import ScalarField, SystemSpec
from .expressions import parse

__all__ = ["builtin", "builtin_names", "DEFAULT_PARAMS"]

DEFAULT_PARAMS = {
    "particle": {},
    "disk": {"R": 1.0, "I1": 1.0, "I2": 1.0},
    "skate": {"mass": 1.0, "J": 1.0, "g": 9.81, "alpha": math.pi / 6},
}


def _particle(params):
    n = 3

    L = ScalarField(
        n=n, mode="analytic",
        expr=parse("0.5*(v0^2 + v1^2 + v2^2)", n),
        value_fn=lambda q, v: 0.5 * float(v @ v),
        grad_q_fn=lambda q, v: np.zeros(3),
        grad_v_fn=lambda q, v: np.asarray(v, dtype=float).copy(),
        hess_vv_fn=lambda q, v: np.eye(3),
        hess_vq_fn=lambda q, v: np.zeros((3, 3)),
    )

    def phi_val(q, v):
        return v[2] - q[1] * v[0]

    def phi_gq(q, v):
        return np.array([0.0, -v[0], 0.0])

    def phi_gv(q, v):
        return np.array([-q[1], 0.0, 1.0])

    def phi_hvq(q, v):
        H = np.zeros((3, 3))
        H[0, 1] = -1.0
        return H

    phi = ScalarField(
        n=n, mode="analytic",
        expr=parse("v2 - q1*v0", n),
        value_fn=phi_val, grad_q_fn=phi_gq, grad_v_fn=phi_gv,
        hess_vv_fn=lambda q, v: np.zeros((3, 3)), hess_vq_fn=phi_hvq,
    )

    def mu(q):
        return np.array([-q[1], 0.0, 1.0])

    def dmu(q):
        J = np.zeros((3, 3))
        J[0, 1] = -1.0
        return J

    return SystemSpec(name="particle", n=n, m=1, L=L, phi=(phi,),
                      mu=(mu,), dmu=(dmu,), params=dict(params))


def _disk(params):
    n = 4
    R, I1, I2 = params["R"], params["I1"], params["I2"]
    Mdiag = np.array([1.0, 1.0, I1, I2])

    L = ScalarField(
        n=n, mode="analytic",
        expr=parse("0.5*(v0^2 + v1^2 + I1*v2^2 + I2*v3^2)", n, params=params),
        value_fn=lambda q, v: 0.5 * float(Mdiag @ (np.asarray(v) ** 2)),
        grad_q_fn=lambda q, v: np.zeros(4),
        grad_v_fn=lambda q, v: Mdiag * np.asarray(v, dtype=float),
        hess_vv_fn=lambda q, v: np.diag(Mdiag),
        hess_vq_fn=lambda q, v: np.zeros((4, 4)),
    )

    def phi1_val(q, v):
        return v[0] * math.sin(q[2]) - v[1] * math.cos(q[2])

    def phi1_gq(q, v):
        return np.array([0.0, 0.0, v[0] * math.cos(q[2]) + v[1] * math.sin(q[2]), 0.0])

    def phi1_gv(q, v):
        return np.array([math.sin(q[2]), -math.cos(q[2]), 0.0, 0.0])

    def phi1_hvq(q, v):
        H = np.zeros((4, 4))
        H[0, 2] = math.cos(q[2])
        H[1, 2] = math.sin(q[2])
        return H

    def phi2_val(q, v):
        return v[0] * math.cos(q[2]) + v[1] * math.sin(q[2]) - R * v[3]

    def phi2_gq(q, v):
        return np.array([0.0, 0.0, -v[0] * math.sin(q[2]) + v[1] * math.cos(q[2]), 0.0])

    def phi2_gv(q, v):
        return np.array([math.cos(q[2]), math.sin(q[2]), 0.0, -R])

    def phi2_hvq(q, v):
        H = np.zeros((4, 4))
        H[0, 2] = -math.sin(q[2])
        H[1, 2] = math.cos(q[2])
        return H

    zero44 = lambda q, v: np.zeros((4, 4))
    phi1 = ScalarField(n=n, mode="analytic",
                       expr=parse("v0*sin(q2) - v1*cos(q2)", n),
                       value_fn=phi1_val, grad_q_fn=phi1_gq, grad_v_fn=phi1_gv,
                       hess_vv_fn=zero44, hess_vq_fn=phi1_hvq)
    phi2 = ScalarField(n=n, mode="analytic",
                       expr=parse("v0*cos(q2) + v1*sin(q2) - R*v3", n, params=params),
                       value_fn=phi2_val, grad_q_fn=phi2_gq, grad_v_fn=phi2_gv,
                       hess_vv_fn=zero44, hess_vq_fn=phi2_hvq)

    def mu1(q):
        return np.array([math.sin(q[2]), -math.cos(q[2]), 0.0, 0.0])

    def dmu1(q):
        J = np.zeros((4, 4))
        J[0, 2] = math.cos(q[2])
        J[1, 2] = math.sin(q[2])
        return J

    def mu2(q):
        return np.array([math.cos(q[2]), math.sin(q[2]), 0.0, -R])

    def dmu2(q):
        J = np.zeros((4, 4))
        J[0, 2] = -math.sin(q[2])
        J[1, 2] = math.cos(q[2])
        return J

    return SystemSpec(name="disk", n=n, m=2, L=L, phi=(phi1, phi2),
                      mu=(mu1, mu2), dmu=(dmu1, dmu2), params=dict(params))


def _skate(params):
    n = 3
    mass, J, g, alpha = params["mass"], params["J"], params["g"], params["alpha"]
    Mdiag = np.array([mass, mass, J])
    force = mass * g * math.sin(alpha)

    L = ScalarField(
        n=n, mode="analytic",
        expr=parse("0.5*mass*(v0^2 + v1^2) + 0.5*J*v2^2 + mass*g*sin(alpha)*q0",
                   n, params=params),
        value_fn=lambda q, v: 0.5 * float(Mdiag @ (np.asarray(v) ** 2)) + force * q[0],
        grad_q_fn=lambda q, v: np.array([force, 0.0, 0.0]),
        grad_v_fn=lambda q, v: Mdiag * np.asarray(v, dtype=float),
        hess_vv_fn=lambda q, v: np.diag(Mdiag),
        hess_vq_fn=lambda q, v: np.zeros((3, 3)),
    )

    def phi_val(q, v):
        return math.sin(q[2]) * v[0] - math.cos(q[2]) * v[1]

    def phi_gq(q, v):
        return np.array([0.0, 0.0, math.cos(q[2]) * v[0] + math.sin(q[2]) * v[1]])

    def phi_gv(q, v):
        return np.array([math.sin(q[2]), -math.cos(q[2]), 0.0])

    def phi_hvq(q, v):
        H = np.zeros((3, 3))
        H[0, 2] = math.cos(q[2])
        H[1, 2] = math.sin(q[2])
        return H

    phi = ScalarField(n=n, mode="analytic",
                      expr=parse("sin(q2)*v0 - cos(q2)*v1", n),
                      value_fn=phi_val, grad_q_fn=phi_gq, grad_v_fn=phi_gv,
                      hess_vv_fn=lambda q, v: np.zeros((3, 3)),
                      hess_vq_fn=phi_hvq)

    def mu(q):
        return np.array([math.sin(q[2]), -math.cos(q[2]), 0.0])

    def dmu(q):
        Jm = np.zeros((3, 3))
        Jm[0, 2] = math.cos(q[2])
        Jm[1, 2] = math.sin(q[2])
        return Jm

    return SystemSpec(name="skate", n=n, m=1, L=L, phi=(phi,),
                      mu=(mu,), dmu=(dmu,), params=dict(params))


_BUILDERS = {"particle": _particle, "disk": _disk, "skate": _skate}


def builtin_names():
    return sorted(_BUILDERS)


def builtin(name: str, **overrides) -> SystemSpec:
    """Construct a built-in system, optionally overriding its parameters."""
    if name not in _BUILDERS:
        raise KeyError(f"unknown built-in system {name!r}; "
                       f"available: {', '.join(builtin_names())}")
    params = dict(DEFAULT_PARAMS[name])
    for key, value in overrides.items():
        if key not in params:
            raise KeyError(f"system {name!r} has no parameter {key!r}; "
                           f"available: {', '.join(sorted(params)) or 'none'}")
        params[key] = float(value)
    return _BUILDERS[name](params)
