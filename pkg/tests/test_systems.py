import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from vakdirac.catalog import builtin, builtin_names
from vakdirac.errors import DimensionMismatchError
from vakdirac.expressions import parse
from vakdirac.systems import (
    ScalarField,
    SystemSpec,
    VakState,
    dE,
    d_vak_lagrangian,
    dirac_differential,
    eval_with_grad,
    parse_system_text,
    vak_energy,
    vak_gradients,
    vak_lagrangian,
)

PARTICLE_STATE = VakState(q=[0, 1, 0], v=[1, 0, 1], p=[-1, 0, 3], lam=[2])


def free_particle(n=2):
    return SystemSpec(name="free", n=n, m=0,
                      L=ScalarField.from_expression(
                          "0.5*(" + "+".join(f"v{i}^2" for i in range(n)) + ")", n))


def test_vak_lagrangian_hand_value():
    assert vak_lagrangian(builtin("particle"), PARTICLE_STATE) == 1.0


def test_vak_lagrangian_multiplier_free():
    spec = builtin("particle")
    st = VakState(q=[0.3, -1, 2], v=[0.5, 2, 1], p=np.zeros(3), lam=[0.0])
    assert vak_lagrangian(spec, st) == spec.L.value(st.q, st.v)


def test_vak_lagrangian_on_constraint():
    spec = builtin("particle")
    # v_z = y v_x puts the state on the constraint for any multiplier
    st = VakState(q=[0, 2, 0], v=[3, 1, 6], p=np.zeros(3), lam=[17.0])
    assert vak_lagrangian(spec, st) == spec.L.value(st.q, st.v)


def test_vak_energy_free_particle():
    st = VakState(q=[0, 0], v=[1, 1], p=[1, 1], lam=[])
    assert vak_energy(free_particle(), st) == 1.0


def test_vak_energy_hand_value():
    assert vak_energy(builtin("particle"), PARTICLE_STATE) == 1.0


def test_vak_energy_zero_state():
    spec = builtin("skate")
    st = VakState(q=np.zeros(3), v=np.zeros(3), p=np.zeros(3), lam=[0.0])
    assert vak_energy(spec, st) == -spec.L.value(st.q, st.v)


def test_d_vak_lagrangian_hand_blocks():
    d = d_vak_lagrangian(builtin("particle"), [0, 1, 0], [1, 0, 1], [2])
    assert_allclose(d.cov_a, [0, -2, 0], atol=0)
    assert_allclose(d.cov_b, [-1, 0, 3], atol=0)
    assert_allclose(d.cov_lam, [0], atol=0)
    assert d.space == "tangent"


def test_lambda_block_is_constraint_value_exactly():
    rng = np.random.default_rng(3)
    spec = builtin("disk")
    for _ in range(20):
        q = rng.standard_normal(4)
        v = rng.standard_normal(4)
        lam = rng.standard_normal(2)
        d = d_vak_lagrangian(spec, q, v, lam)
        assert_array_equal(d.cov_lam, spec.constraint_values(q, v))


def test_dirac_differential_hand_blocks():
    dd = dirac_differential(builtin("particle"), [0, 1, 0], [1, 0, 1], [2])
    assert dd.space == "cotangent"
    assert_allclose(dd.fiber, [-1, 0, 3], atol=0)   # base momentum slot
    assert_allclose(dd.cov_a, [0, 2, 0], atol=0)
    assert_allclose(dd.cov_b, [1, 0, 1], atol=0)
    assert_allclose(dd.cov_lam, [0], atol=0)


def test_dirac_differential_base_momentum_matches_velocity_gradient():
    rng = np.random.default_rng(4)
    spec = builtin("skate")
    for _ in range(20):
        q, v = rng.standard_normal(3), rng.standard_normal(3)
        lam = rng.standard_normal(1)
        dd = dirac_differential(spec, q, v, lam)
        _, _, gv, _ = vak_gradients(spec, q, v, lam)
        assert_array_equal(dd.fiber, gv)


def test_dirac_differential_m0_is_classical_local_form():
    spec = free_particle(3)
    rng = np.random.default_rng(5)
    q, v = rng.standard_normal(3), rng.standard_normal(3)
    dd = dirac_differential(spec, q, v, [])
    val, gq, gv = spec.L.grad(q, v)
    assert_allclose(dd.fiber, gv, atol=0)     # dL/dv
    assert_allclose(dd.cov_a, -gq, atol=0)    # -dL/dq
    assert_allclose(dd.cov_b, v, atol=0)      # v


def test_dE_on_shell_blocks_vanish():
    spec = builtin("particle")
    q, v, lam = np.array([0.0, 1, 0]), np.array([1.0, 0, 1]), np.array([2.0])
    _, _, gv, _ = vak_gradients(spec, q, v, lam)
    st = VakState(q=q, v=v, p=gv, lam=lam)
    cov = dE(spec, st)
    assert_array_equal(cov.beta, np.zeros(3))
    assert_array_equal(cov.u, np.zeros(1))


def test_dE_free_particle_beta_block():
    st = VakState(q=[0, 0], v=[0, 1], p=[1, 0], lam=[])
    cov = dE(free_particle(), st)
    assert_allclose(cov.beta, [1, -1], atol=0)


def test_dE_blocks_match_fd_of_energy():
    spec = builtin("skate")
    rng = np.random.default_rng(6)
    q, v = rng.standard_normal(3), rng.standard_normal(3)
    p, lam = rng.standard_normal(3), rng.standard_normal(1)
    st = VakState(q=q, v=v, p=p, lam=lam)
    cov = dE(spec, st)
    h = 1e-6
    fd = np.zeros(10)
    x0 = np.concatenate([q, v, p, lam])

    def energy(x):
        return vak_energy(spec, VakState(q=x[:3], v=x[3:6], p=x[6:9], lam=x[9:]))

    for i in range(10):
        xp = x0.copy(); xp[i] += h
        xm = x0.copy(); xm[i] -= h
        fd[i] = (energy(xp) - energy(xm)) / (2 * h)
    analytic = np.concatenate([cov.alpha, cov.beta, cov.w, cov.u])
    assert np.max(np.abs(analytic - fd)) <= 1e-6 * max(1, np.max(np.abs(analytic)))


@pytest.mark.parametrize("name", ["particle", "disk", "skate"])
def test_gradient_modes_agree(name):
    spec = builtin(name)
    rng = np.random.default_rng(7)
    fields = [("L", spec.L)] + [(f"phi{a}", f) for a, f in enumerate(spec.phi)]
    for _ in range(100):
        q = rng.uniform(-1.5, 1.5, spec.n)
        v = rng.uniform(-1.5, 1.5, spec.n)
        for label, f in fields:
            vals = {}
            for mode in ("analytic", "ad", "fd"):
                val, gq, gv = eval_with_grad(f.with_mode(mode), q, v)
                vals[mode] = (val, np.concatenate([gq, gv]))
            for a in ("analytic", "ad"):
                for b in ("ad", "fd"):
                    ga, gb = vals[a][1], vals[b][1]
                    denom = np.maximum(1.0, np.maximum(np.abs(ga), np.abs(gb)))
                    assert np.max(np.abs(ga - gb) / denom) <= 1e-6, (label, a, b)
                    assert abs(vals[a][0] - vals[b][0]) <= 1e-9 * max(1, abs(vals[a][0]))


@pytest.mark.parametrize("name", ["particle", "disk", "skate"])
def test_builtin_hessians_match_ad(name):
    spec = builtin(name)
    rng = np.random.default_rng(8)
    for _ in range(20):
        q = rng.uniform(-1.5, 1.5, spec.n)
        v = rng.uniform(-1.5, 1.5, spec.n)
        for f in (spec.L, *spec.phi):
            Hvv_a, Hvq_a = f.hess_blocks(q, v)
            Hvv_b, Hvq_b = f.with_mode("ad").hess_blocks(q, v)
            assert_allclose(Hvv_a, Hvv_b, atol=1e-12)
            assert_allclose(Hvq_a, Hvq_b, atol=1e-12)


def test_builtin_dimensions():
    assert builtin("particle").m == 1 and builtin("particle").n == 3
    assert builtin("disk").n == 4 and builtin("disk").m == 2
    assert builtin("skate").n == 3 and builtin("skate").m == 1
    assert builtin_names() == ["disk", "particle", "skate"]


def test_builtin_unknown_name():
    with pytest.raises(KeyError):
        builtin("pendulum")


def test_builtin_param_override():
    spec = builtin("disk", R=2.0)
    assert spec.params["R"] == 2.0
    # constraint uses the overridden radius
    assert spec.phi[1].value([0, 0, 0, 0], [2, 0, 0, 1]) == 0.0
    with pytest.raises(KeyError):
        builtin("particle", R=2.0)


@pytest.mark.parametrize("name", ["particle", "disk", "skate"])
def test_mu_matches_constraints(name):
    spec = builtin(name)
    rng = np.random.default_rng(9)
    for _ in range(50):
        q = rng.uniform(-2, 2, spec.n)
        v = rng.uniform(-2, 2, spec.n)
        M = spec.mu_matrix(q)
        assert np.max(np.abs(M @ v - spec.constraint_values(q, v))) <= 1e-12


@pytest.mark.parametrize("name", ["particle", "disk", "skate"])
def test_dmu_matches_fd(name):
    spec = builtin(name)
    rng = np.random.default_rng(10)
    q = rng.uniform(-1, 1, spec.n)
    dM = spec.dmu_matrices(q)
    h = 1e-6
    for a in range(spec.m):
        fd = np.zeros((spec.n, spec.n))
        for j in range(spec.n):
            qp = q.copy(); qp[j] += h
            qm = q.copy(); qm[j] -= h
            fd[:, j] = (spec.mu[a](qp) - spec.mu[a](qm)) / (2 * h)
        assert np.max(np.abs(dM[a] - fd)) <= 1e-8


def test_state_dimension_checks():
    spec = builtin("particle")
    with pytest.raises(DimensionMismatchError):
        vak_lagrangian(spec, VakState(q=[0, 0], v=[0, 0], p=[0, 0], lam=[0]))
    with pytest.raises(DimensionMismatchError):
        vak_lagrangian(spec, VakState(q=[0, 0, 0], v=[0, 0, 0], p=[0, 0, 0],
                                      lam=[0, 0]))


SYSTEM_FILE = '''
# the vakonomic particle, as a user definition
name = "my particle"
n = 3
m = 1
L = "0.5*(v0^2 + v1^2 + v2^2)"
phi = ["v2 - q1*v0"]
'''


def test_parse_system_text():
    spec = parse_system_text(SYSTEM_FILE)
    assert spec.name == "my particle"
    assert (spec.n, spec.m) == (3, 1)
    assert vak_lagrangian(spec, PARTICLE_STATE) == 1.0
    # mu derived from the linear constraint
    assert spec.mu is not None
    assert_allclose(spec.mu_matrix([0, 1, 0])[0], [-1, 0, 1], atol=0)


def test_parse_system_text_with_params():
    text = '''
name = "scaled"
n = 2
m = 1
L = "0.5*mass*(v0^2 + v1^2)"
phi = ["v1 - slope*v0"]
params { mass = 2.0, slope = 3.0 }
'''
    spec = parse_system_text(text)
    assert spec.params == {"mass": 2.0, "slope": 3.0}
    assert spec.L.value([0, 0], [1, 1]) == 2.0
    assert spec.phi[0].value([0, 0], [1, 3]) == 0.0


def test_parse_system_text_nonlinear_constraint_has_no_mu():
    text = '''
n = 2
m = 1
L = "0.5*(v0^2 + v1^2)"
phi = ["v0^2 + v1^2 - 1"]
'''
    spec = parse_system_text(text)
    assert spec.mu is None


def test_parse_system_text_errors():
    with pytest.raises(ValueError):
        parse_system_text('n = 2\nm = 1\nphi = ["v0"]')  # missing L
    with pytest.raises(DimensionMismatchError):
        parse_system_text('n = 2\nm = 2\nL = "v0"\nphi = ["v0"]')
    with pytest.raises(ValueError):
        parse_system_text('n = 2\nm = 1\nL = "v0"\nphi = ["v0" "v1"]')


def test_spec_validation():
    with pytest.raises(ValueError):
        SystemSpec(name="bad", n=2, m=2,
                   L=ScalarField.from_expression("v0", 2),
                   phi=(ScalarField.from_expression("v0", 2),
                        ScalarField.from_expression("v1", 2)))
