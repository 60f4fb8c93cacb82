import itertools
import math

import numpy as np
import pytest

from phylosim.polynomials import (CappedPower, ConstantTrait, Cosine, InsufficientArity, IndexOutOfRange,
                                  Lorentzian, PowerExp, Quadratic, TableTrait, TestFunction, certify_tilde,
                                  evaluate, evaluate_with_error, in_generator_domain, index_shift,
                                  replacement_map)
from phylosim.state import FinitePhylogeny, TraitSpace
from phylosim.streams import stream


def enumerate_F(F, chi):
    """Brute-force sum over all ordered n-tuples of clans."""
    w = chi.counts / chi.counts.sum()
    r = chi.physical()
    total = 0.0
    for idx in itertools.product(range(chi.n_clans), repeat=F.n):
        idx = list(idx)
        weight = np.prod(w[idx]) if idx else 1.0
        total += weight * F.h(chi.mass, r[np.ix_(idx, idx)], chi.traits[idx])
    return total


def clans3():
    return FinitePhylogeny(0.25, 0.125, [3, 1, 2], [0.0, 1.0, -0.5], [[0, 2, 3], [2, 0, 1], [3, 1, 0]])


def test_degree_zero_is_mass_function():
    F = TestFunction(0, PowerExp(2, 1.0))
    chi = clans3()
    assert evaluate(F, chi) == pytest.approx(chi.mass**2 * math.exp(-chi.mass))


def test_single_clan_closed_form():
    F = TestFunction(2, PowerExp(1, 0.5), [[0, 1], [1, 0]], (Cosine(1.0), Lorentzian(0.0, 1.0)))
    chi = FinitePhylogeny.single(5, 0.4, 0.1, 0.2)
    m = 1.0
    expected = m * math.exp(-0.5 * m) * math.cos(0.4) / (1 + 0.4**2)
    assert evaluate(F, chi) == pytest.approx(expected)


def test_two_clan_pair_formula():
    d = 0.75
    chi = FinitePhylogeny(0.25, 0.25, [3, 1], [0.0, 0.0], [[0, 3], [3, 0]])
    w = 0.75
    F = TestFunction(2, PowerExp(0, 0.0), [[0, 1], [1, 0]])
    expected = w**2 + (1 - w) ** 2 + 2 * w * (1 - w) * math.exp(-d)
    assert evaluate(F, chi) == pytest.approx(expected, abs=1e-14)


def test_exact_contraction_matches_enumeration():
    chi = clans3()
    fs = [
        TestFunction(1, PowerExp(2, 1.0), None, (Lorentzian(0.3, 0.8),)),
        TestFunction(2, PowerExp(2, 0.5), [[0, 1.5], [1.5, 0]], (Cosine(1.0), Cosine(2.0, 0.3))),
        TestFunction(3, PowerExp(3, 1.0), [[0, 1, 0.5], [1, 0, 2], [0.5, 2, 0]],
                     (Lorentzian(), ConstantTrait(2.0), Cosine(0.5))),
    ]
    for F in fs:
        assert evaluate(F, chi) == pytest.approx(enumerate_F(F, chi), abs=1e-13)


def test_table_form_matches_enumeration():
    ts = TraitSpace.finite(3)
    chi = FinitePhylogeny(0.25, 0.25, [2, 1, 1], [0, 2, 1], [[0, 1, 2], [1, 0, 1], [2, 1, 0]], ts)
    table = np.arange(9, dtype=float).reshape(3, 3) / 9
    F = TestFunction(2, PowerExp(2, 1.0), [[0, 1], [1, 0]], table)
    assert evaluate(F, chi) == pytest.approx(enumerate_F(F, chi), abs=1e-14)


def test_monte_carlo_agrees_with_exact():
    chi = clans3()
    F = TestFunction(2, PowerExp(2, 1.0), [[0, 1], [1, 0]], (Cosine(1.0), Lorentzian()))
    exact = evaluate(F, chi)
    mc = evaluate_with_error(F, chi, force="mc", samples=200_000, rng=stream(1))
    assert mc.mode == "mc"
    assert abs(mc.value - exact) <= 3.5 * mc.stderr


def test_padding_invariance():
    chi = clans3()
    F = TestFunction(2, PowerExp(2, 1.0), [[0, 1], [1, 0]], (Cosine(1.0), Lorentzian()))
    G = F.padded()
    assert G.n == 3
    assert evaluate(G, chi) == pytest.approx(evaluate(F, chi), abs=1e-10)
    ts = TraitSpace.finite(2)
    chi2 = FinitePhylogeny(0.5, 0.5, [1, 2], [0, 1], [[0, 1], [1, 0]], ts)
    T = TestFunction(1, PowerExp(2, 1.0), None, np.array([0.2, 0.9]))
    assert evaluate(T.padded(), chi2) == pytest.approx(evaluate(T, chi2), abs=1e-10)


def test_empty_state_value():
    assert evaluate(TestFunction(1, PowerExp(2, 1.0), None, (Cosine(),)), FinitePhylogeny.empty()) == 0.0
    const = TestFunction(2, PowerExp(0, 0.0), [[0, 1], [1, 0]], (ConstantTrait(3.0), ConstantTrait(2.0)))
    assert evaluate(const, FinitePhylogeny.empty()) == pytest.approx(6.0)
    with pytest.raises(ValueError):
        TestFunction(1, PowerExp(0, 0.0), None, (Cosine(),))


def test_replacement_map():
    r = np.array([[0, 1.0, 2.0], [1.0, 0, 3.0], [2.0, 3.0, 0]])
    k = np.array([0.1, 0.2, 0.3])
    with pytest.raises(IndexOutOfRange):
        replacement_map(r, k, 1, 1)
    r1, k1 = replacement_map(r, k, 1, 2)
    assert r1[0, 1] == 0.0 and k1[1] == k1[0] == 0.1
    assert r1[1, 2] == r[0, 2]
    r2, k2 = replacement_map(r1, k1, 1, 2)
    np.testing.assert_array_equal(r2, r1)
    np.testing.assert_array_equal(k2, k1)
    r3, k3 = replacement_map(r1, k1, 2, 1)
    np.testing.assert_array_equal(r3, r1)


def test_index_shift():
    r = np.arange(16, dtype=float).reshape(4, 4)
    r = r + r.T
    np.fill_diagonal(r, 0)
    k = np.array([1.0, 2.0, 3.0, 4.0])
    r0, k0 = index_shift(r, k, 0)
    np.testing.assert_array_equal(r0, r)
    a = index_shift(*index_shift(r, k, 1), 2)
    b = index_shift(r, k, 3)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    r1, k1 = index_shift(r, k, 1)
    np.testing.assert_array_equal(k1, k[1:])
    np.testing.assert_array_equal(r1, r[1:, 1:])
    with pytest.raises(InsufficientArity):
        index_shift(r, k, 5)


def test_certify_examples():
    assert certify_tilde(TestFunction(0, PowerExp(2, 1.0)), 1.0).ok
    bad = certify_tilde(TestFunction(0, PowerExp(1, 1.0)), 1.0)
    assert not bad.ok and any("g'(0)" in f for f in bad.failures)
    one = TestFunction(1, PowerExp(0, 0.0), None, (ConstantTrait(),))
    assert not certify_tilde(one, 0.5).ok
    assert certify_tilde(one, 0.0).ok
    assert not certify_tilde(TestFunction(1, PowerExp(2, 1.0), None, (Quadratic(),)), 0.0).ok
    assert not certify_tilde(TestFunction(0, CappedPower(5.0, 1)), 0.0).ok
    assert in_generator_domain(TestFunction(0, PowerExp(1, 1.0)))
    assert not in_generator_domain(TestFunction(0, CappedPower(5.0, 1)))


def test_power_exp_derivatives():
    g = PowerExp(3, 0.7)
    h = 1e-5
    for m in (0.3, 1.1, 2.5):
        for k in (1, 2, 3):
            fd = (g.deriv(m + h, k - 1) - g.deriv(m - h, k - 1)) / (2 * h)
            assert g.deriv(m, k) == pytest.approx(fd, rel=1e-6)


def test_trait_function_derivatives():
    for f in (Lorentzian(0.2, 0.7), Cosine(1.3, 0.4), Quadratic()):
        k = np.linspace(-2, 2, 9)
        h = 1e-4
        fd = (f(k + h) - 2 * f(k) + f(k - h)) / h**2
        np.testing.assert_allclose(f.d2(k), fd, rtol=1e-5, atol=1e-6)


def test_json_round_trip():
    for F in (TestFunction(2, PowerExp(2, 1.0), [[0, 1], [1, 0]], (Cosine(1.0), Lorentzian()), "a"),
              TestFunction(1, PowerExp(2, 1.0), None, np.array([0.2, 0.9]), "b"),
              TestFunction(1, CappedPower(3.0, 2), None, (TableTrait((1.0, 2.0)),), "c")):
        G = TestFunction.from_json(F.to_json())
        assert G.to_dict() == F.to_dict()
