import numpy as np
import pytest

from phylosim.generators import (ScaleMismatch, UncertifiedFunction, convergence_gap, hat_beta, hat_gamma,
                                 hat_Gamma, omega_discrete, omega_limit)
from phylosim.polynomials import (CappedPower, ConstantTrait, Cosine, Lorentzian, PowerExp, TestFunction,
                                  evaluate)
from phylosim.rates import PRESETS, cross_immunity, fleming_viot_like, logistic_competition, neutral
from phylosim.state import FinitePhylogeny, TraitSpace, states_from


class DistanceRate:
    """``gamma = r``; used only to check the weighted averages."""

    focal_only = False

    def __call__(self, m, r, k1, k2):
        return np.broadcast_to(np.asarray(r, dtype=float), np.broadcast(r, k1, k2).shape).copy()


def two_clans(N=16, d=3):
    return FinitePhylogeny(1 / N, 1 / N, [3, 1], [0.0, 0.5], [[0, d], [d, 0]])


def test_hat_beta_and_gamma_examples():
    chi = two_clans()
    model = logistic_competition(b=1.7, birth=0.4, u=0.5)
    assert hat_beta(chi, model) == pytest.approx(1.7)
    single = FinitePhylogeny.single(4, 0.3, 1 / 16, 1 / 16)
    m = single.mass
    expected = model.gamma_death(m, np.zeros(1), np.array([0.3]), np.array([0.3]))[0]
    assert hat_gamma(single, model, "death") == pytest.approx(expected)
    assert hat_Gamma(single, model) == pytest.approx(0.4 - expected)

    half = FinitePhylogeny(0.25, 0.25, [1, 1], [0.0, 0.0], [[0, 2], [2, 0]])
    rmodel = model.replace(gamma_death=DistanceRate())
    assert hat_gamma(half, rmodel, "death") == pytest.approx(0.5 / 2)


def test_limit_empty_state_is_zero():
    F = TestFunction(1, PowerExp(2, 1.0), None, (Lorentzian(),))
    for make in PRESETS.values():
        assert omega_limit(FinitePhylogeny.empty(), F, make()).total == 0.0


def test_limit_neutral_closed_form():
    # p = 1, g = 1, f = 1, psi = exp(-r12): Omega F = -2 b E + (2 b / m)(1 - E)
    b = 1.3
    model = neutral(b=b, p=1.0)
    F = TestFunction(2, PowerExp(0, 0.0), [[0, 1], [1, 0]])
    for chi in (two_clans(), FinitePhylogeny(0.125, 0.25, [2, 1, 1], [0.0, 1.0, 2.0],
                                             [[0, 2, 4], [2, 0, 4], [4, 4, 0]])):
        w = chi.counts / chi.counts.sum()
        E = float(w @ np.exp(-chi.physical()) @ w)
        m = chi.mass
        assert omega_limit(chi, F, model).total == pytest.approx(-2 * b * E + 2 * b / m * (1 - E), abs=1e-12)


def test_limit_ignores_dummy_coordinate():
    chi = FinitePhylogeny(0.125, 0.25, [2, 1, 1], [0.0, 1.0, -0.5], [[0, 2, 4], [2, 0, 4], [4, 4, 0]])
    F = TestFunction(2, PowerExp(2, 1.0), [[0, 1], [1, 0]], (Cosine(1.0), Lorentzian(0.2, 1.0)))
    for model in (neutral(p=0.5), logistic_competition(p=0.3), cross_immunity()):
        a = omega_limit(chi, F, model).total
        b = omega_limit(chi, F.padded(), model).total
        assert b == pytest.approx(a, rel=1e-9, abs=1e-12)


def test_discrete_empty_state_is_zero():
    F = TestFunction(0, PowerExp(2, 1.0))
    assert omega_discrete(FinitePhylogeny.empty(), F, neutral(), 16).total == 0.0


def test_discrete_mass_drift_is_m_times_gamma_hat():
    N = 16
    chi = two_clans(N)
    F = TestFunction(0, CappedPower(100.0, 1))
    for model in (logistic_competition(p=0.0), logistic_competition(p=0.4), cross_immunity()):
        expected = chi.mass * hat_Gamma(chi, model)
        assert omega_discrete(chi, F, model, N).total == pytest.approx(expected, abs=1e-12)


def test_discrete_single_particle_two_neighbours():
    b = 0.8
    model = neutral(b=b)
    F = TestFunction(0, PowerExp(2, 1.0))
    g = F.g
    for N in (4, 16, 64):
        z = 1 / N
        chi = FinitePhylogeny.single(1, 0.0, z, z)
        expected = b / z * (g(2 * z) - g(z)) + b / z * (g(0.0) - g(z))
        val = omega_discrete(chi, F, model, N).total
        assert val == pytest.approx(expected, rel=1e-12)
    # g ~ m^2 near zero so the value at one particle vanishes like 2 b / N
    assert abs(omega_discrete(FinitePhylogeny.single(1, 0.0, 1 / 256, 1 / 256), F, model, 256).total) < 3 * b / 256


def test_fused_matches_materialized():
    N = 8
    fv = fleming_viot_like(n_traits=3, selection=0.3)
    cases = [
        (neutral(p=0.5), two_clans(N),
         TestFunction(2, PowerExp(2, 1.0), [[0, 1], [1, 0]], (Cosine(1.0), Lorentzian()))),
        (cross_immunity(), FinitePhylogeny(1 / N, 1 / N, [2, 1, 3], [0.0, 1.0, -0.5],
                                           [[0, 2, 3], [2, 0, 3], [3, 3, 0]]),
         TestFunction(3, PowerExp(1, 0.5), [[0, 1, 0.5], [1, 0, 2], [0.5, 2, 0]],
                      (Lorentzian(), ConstantTrait(2.0), Cosine(0.5)))),
        (fv, FinitePhylogeny(1 / N, 1 / N, [2, 2], [0, 2], [[0, 2], [2, 0]], TraitSpace.finite(3)),
         TestFunction(2, PowerExp(2, 1.0), [[0, 1], [1, 0]], np.arange(9, dtype=float).reshape(3, 3) / 9)),
    ]
    for model, chi, F in cases:
        a = omega_discrete(chi, F, model, N, method="fused")
        b = omega_discrete(chi, F, model, N, method="materialize")
        assert a.total == pytest.approx(b.total, rel=1e-10, abs=1e-12)
        for key in a.parts:
            assert a.parts[key] == pytest.approx(b.parts[key], rel=1e-10, abs=1e-12)


def test_materialized_matches_individual_enumeration():
    # every individual event enumerated by hand for a neutral model without mutation
    N = 8
    b = 1.0
    model = neutral(b=b)
    chi = two_clans(N, d=2)
    F = TestFunction(2, PowerExp(1, 0.5), [[0, 1], [1, 0]], (Cosine(1.0), Lorentzian()))
    F0 = evaluate(F, chi, force="exact")
    total = 0.0
    for y, n in enumerate(chi.counts):
        s = chi.copy()
        s.add_clone(y)
        total += n * b * N * (evaluate(F, s, force="exact") - F0)
        s = chi.copy()
        s.remove_one(y)
        total += n * b * N * (evaluate(F, s, force="exact") - F0)
    assert omega_discrete(chi, F, model, N).total == pytest.approx(total, rel=1e-12)


def test_constant_function_has_zero_gap():
    F = TestFunction(0, PowerExp(0, 0.0))
    geo = {"masses": [0.5, 0.25], "traits": [0.0, 1.0], "distances": [[0, 0.25], [0.25, 0]]}
    table = convergence_gap(F, [geo], neutral(p=0.5), [8, 16])
    assert all(row["gap"] == 0.0 for row in table.rows)


def test_neutral_gap_decreases():
    F = TestFunction(2, PowerExp(2, 1.0), [[0, 1], [1, 0]], (Cosine(1.0), Lorentzian()))
    geo = {"masses": [0.5, 0.25], "traits": [0.0, 1.0], "distances": [[0, 0.25], [0.25, 0]]}
    Ns = [8, 16, 32, 64]
    table = convergence_gap(F, [geo], neutral(p=0.5), Ns)
    gaps = [row["gap"] for row in table.rows]
    assert gaps[-1] < gaps[0]
    assert table.slopes[(F.name, 0)] <= -0.5


def test_errors():
    F = TestFunction(0, PowerExp(2, 1.0))
    chi = states_from({"masses": [0.5], "traits": [0.0], "distances": [[0]]}, 16)
    with pytest.raises(ScaleMismatch):
        omega_discrete(chi, F, neutral(), 32)
    with pytest.raises(UncertifiedFunction):
        omega_limit(chi, TestFunction(0, CappedPower(5.0, 1)), neutral())
    assert omega_limit(chi, TestFunction(0, CappedPower(5.0, 1)), neutral(), require_certified=False).total \
        == pytest.approx(0.0)
