import itertools
from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taylor_ode.fdb import (derivative_action, fdb_derivative, fdb_partials, jet_matrix,
                            partition_table, partitions)

PARTITION_COUNTS = (1, 2, 3, 5, 7, 11)


def brute_partitions(r):
    return sorted(s for s in itertools.product(range(r + 1), repeat=r)
                  if sum((nu + 1) * x for nu, x in enumerate(s)) == r)


# truncated power series in t, as coefficient arrays c[k] = (d/dt)^k / k!

def series_mul(a, b):
    n = len(a)
    return np.array([sum(a[i] * b[k - i] for i in range(k + 1)) for k in range(n)])


def series_exp(a):
    # e' = a' e
    n = len(a)
    e = np.zeros(n)
    e[0] = np.exp(a[0])
    for k in range(1, n):
        e[k] = sum(j * a[j] * e[k - j] for j in range(1, k + 1)) / k
    return e


def series_sincos(a):
    n = len(a)
    s, c = np.zeros(n), np.zeros(n)
    s[0], c[0] = np.sin(a[0]), np.cos(a[0])
    for k in range(1, n):
        s[k] = sum(j * a[j] * c[k - j] for j in range(1, k + 1)) / k
        c[k] = -sum(j * a[j] * s[k - j] for j in range(1, k + 1)) / k
    return s, c


def series_poly(coeffs, a):
    out = np.zeros(len(a))
    for c in reversed(coeffs):
        out = series_mul(out, a)
        out[0] += c
    return out


def poly_chain(coeffs):
    P = np.polynomial.Polynomial(coeffs)

    def chain(u, n):
        return [P.deriv(m)(u) if m else P(u) for m in range(n + 1)]
    return chain


FUNCS = {
    "exp": (lambda u, n: [np.exp(u)] * (n + 1), series_exp),
    "sin": (lambda u, n: [np.sin(u), np.cos(u), -np.sin(u), -np.cos(u)] * ((n + 4) // 4),
            lambda a: series_sincos(a)[0]),
    "cubic": (poly_chain([0.5, -1.0, 2.0, 0.7]), lambda a: series_poly([0.5, -1.0, 2.0, 0.7], a)),
    "quintic": (poly_chain([1, 0, 0, 0, 0, 1.5]), lambda a: series_poly([1, 0, 0, 0, 0, 1.5], a)),
}


def oracle_derivative(series_fn, jet, r):
    a = np.array([jet[k] / factorial(k) for k in range(r + 1)])
    return series_fn(a)[r] * factorial(r)


@pytest.mark.parametrize("r", range(1, 7))
def test_partition_enumeration(r):
    got = sorted(p.s for p in partitions(r))
    assert got == brute_partitions(r)
    assert len(got) == PARTITION_COUNTS[r - 1]
    for p in partitions(r):
        assert sum((nu + 1) * x for nu, x in enumerate(p.s)) == r
        assert p.weight == factorial(r) // np.prod([factorial(x) for x in p.s])
        assert p.weight >= 1


def test_partitions_r3_and_r1():
    assert {p.s for p in partitions(3)} == {(3, 0, 0), (1, 1, 0), (0, 0, 1)}
    assert [p.s for p in partitions(1)] == [(1,)]


@pytest.mark.parametrize("r", [0, -1])
def test_partitions_rejects(r):
    with pytest.raises(ValueError):
        partitions(r)


def test_partition_table_consistent():
    S, mags, w = partition_table(5)
    assert S.shape == (7, 5)
    assert list(mags) == [p.magnitude for p in partitions(5)]
    assert list(w) == [p.weight for p in partitions(5)]


def test_small_cases():
    chain = poly_chain([0, 0, 1])          # u^2
    assert fdb_derivative(1, chain, [1.0, 3.0]) == pytest.approx(6.0)
    assert fdb_derivative(2, chain, [1.0, 3.0, 4.0]) == pytest.approx(26.0)
    exp = FUNCS["exp"][0]
    assert fdb_derivative(3, exp, [0.0, 1.0, 0.0, 0.0]) == pytest.approx(1.0)


def test_first_order_partials():
    chain = FUNCS["sin"][0]
    z0, z1 = 0.4, -1.3
    d = fdb_partials(1, chain, [z0, z1])
    np.testing.assert_allclose(d, [-np.sin(z0) * z1, np.cos(z0)], rtol=1e-14)


def test_third_order_z0_partial_closed_form():
    # d/dz0 of the r=2 sum is f''' z1^2 + f'' z2
    chain = poly_chain([0.3, 1, -2, 0.5, 0.25])
    z = [0.7, 1.1, -0.4]
    d = fdb_partials(2, chain, z)
    f = chain(z[0], 3)
    assert d[0] == pytest.approx(f[3] * z[1] ** 2 + f[2] * z[2], rel=1e-13)


@pytest.mark.parametrize("name", list(FUNCS))
@pytest.mark.parametrize("r", range(1, 7))
def test_matches_series_oracle(name, r):
    chain, series = FUNCS[name]
    rng = np.random.default_rng(r)
    for _ in range(5):
        jet = rng.uniform(-1, 1, size=r + 1)
        got = fdb_derivative(r, chain, jet)
        want = oracle_derivative(series, jet, r)
        assert abs(got - want) <= 1e-10 * max(1.0, abs(want))


@pytest.mark.parametrize("name", list(FUNCS))
@pytest.mark.parametrize("r", range(1, 7))
def test_partials_match_finite_differences(name, r):
    chain, _ = FUNCS[name]
    rng = np.random.default_rng(100 + r)
    jet = rng.uniform(-1, 1, size=r + 1)
    grad = fdb_partials(r, chain, jet)
    for i in range(r + 1):
        step = 1e-6
        up, down = jet.copy(), jet.copy()
        up[i] += step
        down[i] -= step
        fd = (fdb_derivative(r, chain, up) - fdb_derivative(r, chain, down)) / (2 * step)
        assert abs(grad[i] - fd) <= 1e-6 * max(1.0, abs(fd))


def test_finite_difference_in_time():
    # d^r/dt^r f(u(t)) from samples of t -> f(sum z_j t^j / j!)
    chain = FUNCS["sin"][0]
    jet = np.array([0.2, 0.9, -0.5, 0.3])
    u = lambda t: sum(jet[j] * t ** j / factorial(j) for j in range(4))
    h = 1e-3
    g = lambda t: np.sin(u(t))
    d2 = (g(h) - 2 * g(0) + g(-h)) / h ** 2
    assert fdb_derivative(2, chain, jet) == pytest.approx(d2, rel=1e-6)


def test_jet_matrix_layout():
    jet = [np.array([1.0, 2.0]), np.array([3.0, 4.0]), np.array([6.0, 8.0])]
    A = jet_matrix((1, 1), jet)
    np.testing.assert_allclose(A, [[3.0, 3.0], [4.0, 4.0]])
    A = jet_matrix((2, 0), jet)
    assert A.shape == (2, 2)
    assert jet_matrix((0, 0), jet).shape == (2, 0)


def test_derivative_action_is_multilinear():
    rng = np.random.default_rng(0)
    T = rng.normal(size=(3, 3, 3))
    A = rng.normal(size=(3, 2))
    # symmetric in the input axes, as a derivative tensor is
    T = (T + T.transpose(0, 2, 1)) / 2
    want = np.einsum("ijk,j,k->i", T, A[:, 0], A[:, 1])
    np.testing.assert_allclose(derivative_action(T, A), want, rtol=1e-12)
    with pytest.raises(ValueError):
        derivative_action(T, A[:, :1])


def test_scalar_tensor_contraction_agrees_with_fdb():
    # at M=1 the tensor form f^(|s|) . D^s reduces to the scalar product
    chain = FUNCS["exp"][0]
    jet = [0.1, 0.5, -0.2, 0.7]
    total = 0.0
    for p in partitions(3):
        A = jet_matrix(p.s, jet)
        tensor = np.full((1,) * (p.magnitude + 1), chain(jet[0], p.magnitude)[p.magnitude])
        total += p.weight * float(np.squeeze(derivative_action(tensor, A)))
    assert total == pytest.approx(fdb_derivative(3, chain, jet), rel=1e-13)


@settings(max_examples=60, deadline=None)
@given(r=st.integers(1, 6), seed=st.integers(0, 10 ** 6))
def test_exp_property(r, seed):
    rng = np.random.default_rng(seed)
    jet = rng.uniform(-1, 1, size=r + 1)
    got = fdb_derivative(r, FUNCS["exp"][0], jet)
    want = oracle_derivative(series_exp, jet, r)
    assert abs(got - want) <= 1e-10 * max(1.0, abs(want))
