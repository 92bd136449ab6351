import numpy as np
import pytest

from vakdirac.errors import (
    EvalDomainError,
    ExpressionSyntaxError,
    UnknownIdentifierError,
)
from vakdirac.expressions import parse

EPS = np.finfo(float).eps


def fd_gradient(expr, q, v):
    """Independent central-difference oracle, step cbrt(eps)*max(1,|x|)."""
    n = len(q)
    x = np.concatenate([q, v])
    g = np.zeros(2 * n)
    for i in range(2 * n):
        h = EPS ** (1 / 3) * max(1.0, abs(x[i]))
        xp = x.copy(); xp[i] += h
        xm = x.copy(); xm[i] -= h
        g[i] = (expr.value(xp[:n], xp[n:]) - expr.value(xm[:n], xm[n:])) / (2 * h)
    return g


def random_expression_text(rng, n, max_depth):
    """Random expression total on |x| <= 2 (guarded logs, roots, divisions)."""
    def leaf():
        c = rng.integers(4)
        if c == 0:
            return f"{rng.uniform(-2, 2):.6g}"
        if c == 1:
            return f"q{rng.integers(n)}"
        return f"v{rng.integers(n)}"

    def build(depth):
        if depth == 0 or rng.random() < 0.25:
            return leaf()
        c = rng.integers(10)
        a = build(depth - 1)
        if c <= 2:
            op = "+-*"[c]
            return f"({a} {op} {build(depth - 1)})"
        if c == 3:
            return f"({a} / (({build(depth - 1)})^2 + {rng.uniform(0.5, 2):.6g}))"
        if c == 4:
            return f"sin({a})"
        if c == 5:
            return f"cos({a})"
        if c == 6:
            return f"exp(0.25*sin({a}))"
        if c == 7:
            return f"log(({a})^2 + {rng.uniform(0.5, 2):.6g})"
        if c == 8:
            return f"sqrt(({a})^2 + {rng.uniform(0.5, 2):.6g})"
        return f"({a})^{int(rng.integers(2, 4))}"

    return build(max_depth)


def test_quadratic_form_example():
    e = parse("0.5*(v0^2+v1^2+v2^2)", 3)
    assert e.value([0, 0, 0], [1, 2, 3]) == 7.0


def test_particle_constraint_example():
    e = parse("v2 - q1*v0", 3)
    assert e.value([0, 1, 0], [1, 0, 1]) == 0.0


def test_unbalanced_paren_offset():
    with pytest.raises(ExpressionSyntaxError) as err:
        parse("sin(q0", 3)
    assert err.value.offset == 7


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifierError) as err:
        parse("q0 + bogus", 2)
    assert err.value.offset == 6


def test_index_out_of_range():
    with pytest.raises(UnknownIdentifierError):
        parse("v5", 3)


def test_trailing_garbage():
    with pytest.raises(ExpressionSyntaxError):
        parse("q0 q1", 2)


def test_unexpected_character():
    with pytest.raises(ExpressionSyntaxError):
        parse("q0 + @", 2)


@pytest.mark.parametrize("text,expected", [
    ("2^3^2", 512.0),            # right-associative
    ("-2^2", -4.0),              # power binds tighter than unary minus
    ("2^-2", 0.25),              # unary minus allowed in the exponent
    ("1-2-3", -4.0),             # left-associative
    ("6/3/2", 1.0),
    ("2*3+4*5", 26.0),
    ("2+3*4^2", 50.0),
    ("-2*3", -6.0),
])
def test_precedence(text, expected):
    assert parse(text, 1).value([0.0], [0.0]) == expected


def test_params_as_constants():
    e = parse("R*v0 + g", 1, params={"R": 2.5, "g": 9.81})
    assert e.value([0.0], [2.0]) == 2.5 * 2.0 + 9.81


def test_grad_quadratic():
    e = parse("0.5*(v0^2+v1^2+v2^2)", 3)
    val, gq, gv = e.grad([9, 9, 9], [3, 4, 0])
    assert val == 12.5
    np.testing.assert_array_equal(gq, np.zeros(3))
    np.testing.assert_array_equal(gv, [3.0, 4.0, 0.0])


def test_disk_constraint_gradient():
    e = parse("v0*cos(q2) + v1*sin(q2) - v3", 4)
    val, gq, gv = e.grad([0, 0, 0, 0], [1, 0, 0, 1])
    assert val == 0.0
    np.testing.assert_allclose(gv, [1.0, 0.0, 0.0, -1.0], atol=0)


def test_ad_matches_fd_on_random_expressions():
    rng = np.random.default_rng(2024)
    checked = 0
    while checked < 100:
        n = int(rng.integers(1, 4))
        text = random_expression_text(rng, n, 6)
        e = parse(text, n)
        q = rng.uniform(-1.5, 1.5, n)
        v = rng.uniform(-1.5, 1.5, n)
        val, gq, gv = e.grad(q, v)
        if not np.isfinite(val) or max(np.max(np.abs(gq)), np.max(np.abs(gv))) > 1e5:
            continue
        fd = fd_gradient(e, q, v)
        ad = np.concatenate([gq, gv])
        denom = np.maximum(1.0, np.maximum(np.abs(ad), np.abs(fd)))
        assert np.max(np.abs(ad - fd) / denom) <= 1e-6, text
        checked += 1


def test_integer_power_negative_base():
    e = parse("q0^3", 1)
    val, gq, _ = e.grad([-2.0], [0.0])
    assert val == -8.0
    assert gq[0] == 12.0


def test_float_power_negative_base_is_domain_error():
    e = parse("q0^0.5", 1)
    with pytest.raises(EvalDomainError):
        e.value([-2.0], [0.0])


def test_variable_power_negative_base_is_domain_error():
    e = parse("q0^v0", 1)
    with pytest.raises(EvalDomainError):
        e.value([-2.0], [1.0])
    # positive base fine
    assert parse("q0^v0", 1).value([2.0], [3.0]) == 8.0


def test_log_domain_error_carries_offset():
    e = parse("v0 + log(q0)", 1)
    with pytest.raises(EvalDomainError) as err:
        e.value([-1.0], [0.0])
    assert err.value.offset == 6


def test_sqrt_domain_error():
    with pytest.raises(EvalDomainError):
        parse("sqrt(q0)", 1).value([-1.0], [0.0])


def test_division_by_exact_zero():
    with pytest.raises(EvalDomainError):
        parse("1/q0", 1).value([0.0], [0.0])


def test_zero_power_zero():
    # 0^0 follows the pow convention (1) and has zero derivative
    e = parse("q0^0", 1)
    val, gq, _ = e.grad([0.0], [0.0])
    assert val == 1.0 and gq[0] == 0.0


def test_hessian_matches_fd():
    rng = np.random.default_rng(5)
    e = parse("sin(q0)*v0^2 + exp(q1*v1) + v0/(q1+2) + q0^v0", 2)
    q = np.array([0.7, 0.3]); v = np.array([1.2, 0.4])
    _, _, H = e.hess(q, v)
    x0 = np.concatenate([q, v])
    h = 1e-4
    Hfd = np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            ei = np.zeros(4); ei[i] = h
            ej = np.zeros(4); ej[j] = h
            f = lambda x: e.value(x[:2], x[2:])
            Hfd[i, j] = (f(x0 + ei + ej) - f(x0 + ei - ej)
                         - f(x0 - ei + ej) + f(x0 - ei - ej)) / (4 * h * h)
    assert np.max(np.abs(H - Hfd)) < 1e-6
    assert np.max(np.abs(H - H.T)) == 0.0
