import numpy as np
import pytest
from numpy.testing import assert_allclose

from vakdirac.bundles import ExtendedCovector, presymp_bar_flat, presymp_hat_flat
from vakdirac.catalog import builtin
from vakdirac.dirac import (
    LinearDiracData,
    bar_dirac_data,
    bar_dirac_residual,
    check_self_orthogonal,
    hat_dirac_data,
    hat_dirac_residual,
    induced_dirac_residual,
    linear_dirac_basis,
    symmetric_pairing,
)
from vakdirac.errors import RankDeficiencyError
from vakdirac.systems import VakState


def brute_force_orthogonal(pairs, d):
    """Independent oracle: D-orthogonal as the null space of the pairing
    rows <alpha_i, .> + <., v_i> acting on (u, beta)."""
    rows = np.array([np.concatenate([alpha, v]) for v, alpha in pairs])
    _, s, Vt = np.linalg.svd(rows)
    rank = int(np.sum(s > 1e-10 * s[0]))
    return Vt[rank:].T  # columns span D-orthogonal as (u, beta)


def span_equal(A, B, tol=1e-9):
    """Do the columns of A and B span the same subspace?"""
    if A.shape[1] != B.shape[1]:
        return False
    QA, _ = np.linalg.qr(A)
    QB, _ = np.linalg.qr(B)
    return np.linalg.norm(QA @ (QA.T @ QB) - QB) < tol


def test_basis_example_d2():
    data = LinearDiracData(dim=2, Omega=[[0, 1], [-1, 0]], Delta=[[1], [0]])
    pairs = linear_dirac_basis(data)
    assert len(pairs) == 2
    v0, a0 = pairs[0]
    assert_allclose(v0, [1, 0], atol=0)
    assert_allclose(a0, [0, -1], atol=0)   # flat image of e1 is -e2
    v1, a1 = pairs[1]
    assert_allclose(v1, [0, 0], atol=0)
    # annihilator generator of span{e1} is the second dual basis vector
    assert abs(abs(a1[1]) - 1.0) < 1e-12 and abs(a1[0]) < 1e-12


def test_basis_graph_case():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((4, 4))
    Omega = A - A.T
    data = LinearDiracData(dim=4, Omega=Omega, Delta=np.eye(4))
    pairs = linear_dirac_basis(data)
    assert len(pairs) == 4
    for v, alpha in pairs:
        assert_allclose(alpha, Omega @ v, atol=0)


def test_basis_zero_distribution():
    data = LinearDiracData(dim=3, Omega=np.zeros((3, 3)),
                           Delta=np.zeros((3, 0)))
    pairs = linear_dirac_basis(data)
    assert len(pairs) == 3
    for v, _ in pairs:
        assert not np.any(v)


def test_rank_deficient_delta_rejected():
    data = LinearDiracData(dim=3, Omega=np.zeros((3, 3)),
                           Delta=[[1, 2], [0, 0], [1, 2]])
    with pytest.raises(RankDeficiencyError):
        linear_dirac_basis(data)


def test_self_orthogonal_canonical():
    O = np.zeros((4, 4))
    O[:2, 2:] = -np.eye(2)
    O[2:, :2] = np.eye(2)
    rep = check_self_orthogonal(LinearDiracData(dim=4, Omega=O, Delta=np.eye(4)))
    assert rep.max_pairing <= 1e-12
    assert rep.dim == 4
    assert rep.passed


def test_self_orthogonal_random_instances_with_bruteforce_oracle():
    rng = np.random.default_rng(42)
    for seed in range(100):
        srng = np.random.default_rng(seed)
        d = int(srng.integers(2, 7))
        A = srng.standard_normal((d, d))
        Omega = A - A.T
        k = int(srng.integers(0, d + 1))
        Delta = srng.standard_normal((d, k))
        if k and np.linalg.matrix_rank(Delta) < k:
            continue
        data = LinearDiracData(dim=d, Omega=Omega, Delta=Delta)
        rep = check_self_orthogonal(data)
        assert rep.max_pairing <= 1e-12, seed
        assert rep.dim == d, seed
        # oracle: the orthogonal complement computed by brute force spans
        # exactly the same subspace as the constructed basis
        pairs = linear_dirac_basis(data)
        D = np.array([np.concatenate(p) for p in pairs]).T
        Dperp = brute_force_orthogonal(pairs, d)
        assert Dperp.shape[1] == d, seed
        assert span_equal(D, Dperp), seed


def test_symmetric_form_negative_control():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((4, 4))
    sym = A + A.T
    with pytest.raises(ValueError):
        LinearDiracData(dim=4, Omega=sym, Delta=np.eye(4)).validate()
    # wiring the symmetric graph through the pairing directly must fail
    pairs = [(np.eye(4)[:, j], sym @ np.eye(4)[:, j]) for j in range(4)]
    worst = max(abs(symmetric_pairing(pairs[i], pairs[j]))
                for i in range(4) for j in range(4))
    assert worst > 1e-6


def test_lifted_graph_structures():
    for n, m in ((3, 1), (4, 2)):
        for data in (bar_dirac_data(n, m), hat_dirac_data(n, m)):
            rep = check_self_orthogonal(data)
            assert rep.passed


# --- induced structure on the cotangent bundle ---------------------------

def test_induced_residual_disk_spin_is_member():
    spec = builtin("disk")
    q = np.array([0.2, -0.1, 0.0, 0.5])   # theta = 0
    qdot = np.array([0.0, 0.0, 1.0, 0.0])  # pure theta spin
    pair = ((qdot, np.zeros(4)), (np.zeros(4), qdot))
    res = induced_dirac_residual(spec, (q, np.zeros(4)), pair)
    assert res.aggregate("max") <= 1e-14


def test_induced_residual_base_point_violation():
    spec = builtin("disk")
    q = np.zeros(4)
    qdot = np.array([0.0, 0.0, 1.0, 0.0])
    w = qdot + np.array([0.25, 0, 0, 0])
    res = induced_dirac_residual(spec, (q, np.zeros(4)),
                                 ((qdot, np.zeros(4)), (np.zeros(4), w)))
    assert res.base_point_violation == 0.25


def test_induced_residual_annihilator_membership():
    spec = builtin("disk")
    rng = np.random.default_rng(2)
    q = rng.standard_normal(4)
    qdot = np.zeros(4)
    for c in (0.5, -3.0, 100.0):
        alpha = c * spec.mu[0](q)
        res = induced_dirac_residual(spec, (q, np.zeros(4)),
                                     ((qdot, np.zeros(4)), (alpha, qdot)))
        assert res.covector_violation <= 1e-12 * max(1, abs(c))


def test_induced_residual_requires_mu():
    spec = builtin("particle")
    from dataclasses import replace
    bare = replace(spec, mu=None, dmu=None)
    with pytest.raises(ValueError):
        induced_dirac_residual(bare, (np.zeros(3), np.zeros(3)),
                               ((np.zeros(3), np.zeros(3)),
                                (np.zeros(3), np.zeros(3))))


# --- graph structures over the extended bundles --------------------------

def _random_bar_args(rng, spec):
    state = VakState(q=rng.standard_normal(spec.n), v=rng.standard_normal(spec.n),
                     p=rng.standard_normal(spec.n), lam=rng.standard_normal(spec.m))
    xdot = tuple(rng.standard_normal(spec.n) for _ in range(3)) + (
        rng.standard_normal(spec.m),)
    return state, xdot


def test_bar_residual_graph_membership():
    spec = builtin("particle")
    rng = np.random.default_rng(3)
    state, xdot = _random_bar_args(rng, spec)
    cov = presymp_bar_flat((state.q, state.v, state.p, state.lam), xdot)
    res = bar_dirac_residual(spec, state, xdot, cov)
    assert res.aggregate("max") == 0.0


def test_bar_residual_u_perturbation_is_exact():
    spec = builtin("particle")
    rng = np.random.default_rng(4)
    state, xdot = _random_bar_args(rng, spec)
    cov = presymp_bar_flat((state.q, state.v, state.p, state.lam), xdot)
    from dataclasses import replace
    eps = 3e-7
    cov2 = replace(cov, u=cov.u + np.array([eps]))
    res = bar_dirac_residual(spec, state, xdot, cov2)
    assert res.aggregate("max") == eps


def test_bar_residual_absolutely_homogeneous():
    spec = builtin("skate")
    rng = np.random.default_rng(5)
    state, xdot = _random_bar_args(rng, spec)
    cov = presymp_bar_flat((state.q, state.v, state.p, state.lam),
                           tuple(2 * np.asarray(x) for x in xdot))
    base = bar_dirac_residual(spec, state, xdot, cov)
    for c in (2.0, 0.5, -4.0):
        xdot_c = tuple(c * np.asarray(x) for x in xdot)
        from dataclasses import replace
        cov_c = replace(cov, alpha=c * cov.alpha, beta=c * cov.beta,
                        w=c * cov.w, u=c * cov.u)
        res = bar_dirac_residual(spec, state, xdot_c, cov_c)
        for key in base.components:
            assert np.isclose(res.components[key], abs(c) * base.components[key],
                              rtol=1e-12, atol=0)


def test_bar_residual_ignores_kernel_rates():
    spec = builtin("particle")
    rng = np.random.default_rng(6)
    state, xdot = _random_bar_args(rng, spec)
    cov = presymp_bar_flat((state.q, state.v, state.p, state.lam), xdot)
    qd, vd, pd, ld = xdot
    for _ in range(5):
        res = bar_dirac_residual(spec, state,
                                 (qd, rng.standard_normal(3), pd,
                                  rng.standard_normal(1)), cov)
        assert res.aggregate("max") == 0.0


def test_hat_residual_graph_membership():
    spec = builtin("particle")
    rng = np.random.default_rng(7)
    base = (rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal(1))
    xdot = (rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal(1))
    cov = presymp_hat_flat(base, xdot)
    res = hat_dirac_residual(spec, base, xdot, cov)
    assert res.aggregate("max") == 0.0


def test_hat_residual_lamdot_independent():
    spec = builtin("particle")
    rng = np.random.default_rng(8)
    base = (rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal(1))
    qd, pd = rng.standard_normal(3), rng.standard_normal(3)
    cov = presymp_hat_flat(base, (qd, pd, np.zeros(1)))
    vals = [hat_dirac_residual(spec, base, (qd, pd, rng.standard_normal(1)),
                               cov).aggregate("max") for _ in range(5)]
    assert all(v == 0.0 for v in vals)


def test_hat_residual_base_point_mismatch():
    spec = builtin("particle")
    rng = np.random.default_rng(9)
    q = rng.standard_normal(3)
    p = rng.standard_normal(3)
    lam = rng.standard_normal(1)
    qd, pd = rng.standard_normal(3), rng.standard_normal(3)
    shifted = ExtendedCovector(q=q, p=p + np.array([0.5, 0, 0]), lam=lam,
                               alpha=-pd, u=qd, w=np.zeros(1))
    res = hat_dirac_residual(spec, (q, p, lam), (qd, pd, np.zeros(1)), shifted)
    assert res.base_point_violation == 0.5
    assert res.covector_violation == 0.0


def test_hat_residual_m0_graph_case():
    from vakdirac.systems import ScalarField, SystemSpec
    free = SystemSpec(name="free", n=2, m=0,
                      L=ScalarField.from_expression("0.5*(v0^2+v1^2)", 2))
    rng = np.random.default_rng(10)
    q, p = rng.standard_normal(2), rng.standard_normal(2)
    qd, pd = rng.standard_normal(2), rng.standard_normal(2)
    cov = presymp_hat_flat((q, p, []), (qd, pd, []))
    res = hat_dirac_residual(free, (q, p, []), (qd, pd, []), cov)
    assert res.aggregate("max") == 0.0
    bad = ExtendedCovector(q=q, p=p, lam=[], alpha=-pd, u=qd + 1e-3, w=[])
    res = hat_dirac_residual(free, (q, p, []), (qd, pd, []), bad)
    assert np.isclose(res.covector_violation, 1e-3 * np.sqrt(2), rtol=1e-12)
