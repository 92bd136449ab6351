"""Parity between the compiled kernel backend and its pure-Python mirror.

When the extension is not built the two moduli coincide and these tests
degenerate to self-consistency checks of the fallback.
"""

import numpy as np
import pytest

from vakdirac._kernels import _pure, ops
from vakdirac.catalog import builtin
from vakdirac.dynamics import pack_system
from vakdirac.expressions import parse

try:
    from vakdirac._kernels import _core
    HAVE_CORE = True
except ImportError:  # pragma: no cover - extension not built
    _core = _pure
    HAVE_CORE = False

GNARLY = ("sin(q0)*v0^2 + exp(q1*v1) + v0/(q1+2) + sqrt(v0+3)^1.5"
          " + q0^v0 + tan(q1)*log(v0+2) - (q0-v1)^3 + q0^2")


def test_backend_names():
    assert _pure.BACKEND_NAME == "python"
    if HAVE_CORE:
        assert _core.BACKEND_NAME == "compiled"


def test_tape_eval_parity():
    t = parse(GNARLY, 2).tape
    rng = np.random.default_rng(0)
    for _ in range(200):
        q = rng.uniform(0.1, 1.5, 2)
        v = rng.uniform(0.1, 1.5, 2)
        sa = _pure.tape_hess(t.code, t.consts, 2, q, v)
        sb = _core.tape_hess(t.code, t.consts, 2, q, v)
        assert sa[0] == sb[0] == ops.OK
        assert sa[2] == sb[2]
        assert np.max(np.abs(sa[3] - sb[3])) <= 1e-14 * max(1, np.max(np.abs(sa[3])))
        assert np.max(np.abs(sa[4] - sb[4])) <= 1e-13 * max(1, np.max(np.abs(sa[4])))


def test_domain_error_status_parity():
    t = parse("log(q0)", 1).tape
    for impl in (_pure, _core):
        status, instr, *_ = impl.tape_value(t.code, t.consts, 1,
                                            np.array([-1.0]), np.array([0.0]))
        assert status == ops.ERR_DOMAIN
        assert t.code[instr, 0] == ops.LOG


def test_powi_edge_semantics_parity():
    for text, q, expected in [("q0^0", 0.0, 1.0), ("q0^3", -2.0, -8.0),
                              ("q0^2", 0.0, 0.0)]:
        t = parse(text, 1).tape
        for impl in (_pure, _core):
            st, _, val, g = impl.tape_grad(t.code, t.consts, 1,
                                           np.array([q]), np.array([0.0]))
            assert st == ops.OK
            assert val == expected


def test_solve_bordered_parity():
    spec = builtin("disk")
    packed = pack_system(spec)
    rng = np.random.default_rng(1)
    for _ in range(10):
        q = rng.standard_normal(4)
        v_true = rng.standard_normal(4)
        lam_true = rng.standard_normal(2)
        from vakdirac.systems import vak_gradients
        _, _, p, _ = vak_gradients(spec, q, v_true, lam_true)
        args = (packed.L_code, packed.L_consts, packed.phi_code,
                packed.phi_starts, packed.phi_consts, packed.phi_cstarts,
                4, 2, q, p)
        guess_v = v_true + 0.1 * rng.standard_normal(4)
        guess_l = lam_true + 0.1 * rng.standard_normal(2)
        ra = _pure.solve_bordered(*args, guess_v.copy(), guess_l.copy(), 1e-12, 50)
        rb = _core.solve_bordered(*args, guess_v.copy(), guess_l.copy(), 1e-12, 50)
        assert ra[0] == rb[0] == ops.OK
        assert np.max(np.abs(ra[3] - rb[3])) <= 1e-13
        assert np.max(np.abs(ra[4] - rb[4])) <= 1e-13
        assert ra[5] == rb[5]  # iteration counts agree


def test_singular_status_parity():
    # holonomic constraint: dphi/dv = 0 makes the bordered matrix singular
    from vakdirac.systems import ScalarField, SystemSpec
    spec = SystemSpec(name="holo", n=2, m=1,
                      L=ScalarField.from_expression("0.5*(v0^2+v1^2)", 2),
                      phi=(ScalarField.from_expression("q0 - 1", 2),))
    packed = pack_system(spec)
    args = (packed.L_code, packed.L_consts, packed.phi_code,
            packed.phi_starts, packed.phi_consts, packed.phi_cstarts,
            2, 1, np.array([2.0, 0.0]), np.zeros(2))
    for impl in (_pure, _core):
        st = impl.solve_bordered(*args, np.zeros(2), np.zeros(1), 1e-12, 50)[0]
        assert st == ops.ERR_SINGULAR


def test_integrate_vak_parity():
    spec = builtin("particle")
    packed = pack_system(spec)
    q0 = np.array([0.0, 1, 0])
    v0 = np.array([1.0, 0, 1])
    lam0 = np.array([2.0])
    from vakdirac.systems import vak_gradients
    _, _, p0, _ = vak_gradients(spec, q0, v0, lam0)
    args = (packed.L_code, packed.L_consts, packed.phi_code,
            packed.phi_starts, packed.phi_consts, packed.phi_cstarts,
            3, 1, q0, p0, v0, lam0, 1e-3, 500, 1e-12, 50)
    ra = _pure.integrate_vak_rk4(*args)
    rb = _core.integrate_vak_rk4(*args)
    assert ra[0] == rb[0] == ops.OK
    for i in (4, 5, 6, 7, 8):
        assert np.max(np.abs(np.asarray(ra[i]) - np.asarray(rb[i]))) <= 1e-13
    assert np.array_equal(ra[9], rb[9])


def test_integrate_nonh_parity():
    spec = builtin("skate")
    packed = pack_system(spec)
    import math
    q0 = np.array([0.0, 0, 0.4])
    v0 = np.array([1.0, math.tan(0.4), 0.8])
    args = (packed.L_code, packed.L_consts, packed.phi_code,
            packed.phi_starts, packed.phi_consts, packed.phi_cstarts,
            3, 1, q0, v0, 1e-3, 500)
    ra = _pure.integrate_nonh_rk4(*args)
    rb = _core.integrate_nonh_rk4(*args)
    assert ra[0] == rb[0] == ops.OK
    for i in (4, 5, 6, 7, 8):
        assert np.max(np.abs(np.asarray(ra[i]) - np.asarray(rb[i]))) <= 1e-12


def test_domain_error_inside_integration_reports_tape():
    # sqrt(q0) loses its domain once the trajectory crosses q0 = 0, which
    # it must: the speed stays bounded below along the downhill potential
    from vakdirac.systems import ScalarField, SystemSpec
    from vakdirac.dynamics import InitialData, SolverConfig, integrate_vakonomic
    from vakdirac.errors import EvalDomainError
    spec = SystemSpec(name="edge", n=1, m=0,
                      L=ScalarField.from_expression("0.5*v0^2 + sqrt(q0)", 1))
    init = InitialData(q0=[1.0], v0=[-2.0], mode="vakonomic")
    with pytest.raises(EvalDomainError) as err:
        integrate_vakonomic(spec, init, SolverConfig(dt=1e-2, t_end=2.0))
    assert err.value.op == "sqrt"


def test_schema_validator_flags_bad_reports():
    from vakdirac.reports import load_run_report_schema, validate_against_schema
    schema = load_run_report_schema()
    assert validate_against_schema({"schema": "nope"}, schema)
    assert any("missing required key" in e
               for e in validate_against_schema({}, schema))
