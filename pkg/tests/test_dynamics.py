import math

import numpy as np
import pytest

from phylosim.dynamics import (EVENT_KINDS, NATURAL_BIRTH_MUTANT, NATURAL_DEATH, LineageDisabled, LineageForest,
                               PreconditionViolated, RateBoundExceeded,
                               auxiliary_measures, clan_rates, coupled_domination_run, distance_decomposition_ok,
                               genealogical_distance, genetic_age, particle_birth_rate, particle_death_rate,
                               simulate, step, total_event_rate)
from phylosim.rates import (Bounds, ConstantBeta, ConstantKernel, DistanceKernel, FixedKernel, GaussianStep,
                            RateModel, SigmoidBeta, ZeroKernel, cross_immunity, logistic_competition, neutral)
from phylosim.state import FinitePhylogeny, TraitSpace, is_isometric
from phylosim.streams import run_replicates, stream


class DistanceRate:
    """gamma(m, r, k1, k2) = r (test kernel)."""

    focal_only = False

    def __call__(self, m, r, k1, k2):
        return np.broadcast_to(np.asarray(r, dtype=float), np.broadcast(m, r, k1, k2).shape).copy()

    def to_dict(self):
        return {"kind": "distance"}


def model_with(gamma_death=None, gamma_birth=None, beta=1.0, p=0.0, mutation=None, bounds=None,
               ts=None):
    return RateModel(ConstantBeta(beta), gamma_birth or ZeroKernel(), gamma_death or ZeroKernel(), p,
                     mutation or GaussianStep(1.0), bounds or Bounds(beta, beta, 10.0, 10.0),
                     ts or TraitSpace.real())


def test_particle_rates_examples():
    chi = FinitePhylogeny.single(3, 0.0, 0.5, 0.5)
    assert particle_death_rate(chi, model_with(ConstantKernel(0.7)), 0) == pytest.approx(2.7)
    assert particle_death_rate(chi, model_with(), 0) == pytest.approx(2.0)
    ell = 0.25
    two = FinitePhylogeny(ell, 0.5, [1, 1], [0.0, 0.0], [[0, 1], [1, 0]])
    m = model_with(DistanceRate())
    assert particle_death_rate(two, m, 0) == pytest.approx(2.0 + ell / 2)
    assert particle_birth_rate(two, m, 1) == pytest.approx(2.0)


def test_total_rate_examples():
    assert total_event_rate(FinitePhylogeny.empty(), neutral()).total == 0.0
    assert total_event_rate(FinitePhylogeny.single(1), neutral()).total == pytest.approx(2.0)


def _individual_total_rate(chi, model):
    """Expand the state into individuals and sum pair rates directly."""
    who = np.repeat(np.arange(chi.n_clans), chi.counts)
    K = who.size
    m = chi.mass
    r = chi.physical()
    k = chi.traits
    total = 0.0
    for x2 in who:
        b = float(model.beta(k[x2])) / chi.zeta
        total += 2 * b
        for x1 in who:
            args = (m, r[x1, x2], k[x1], k[x2])
            total += (float(model.gamma_death(*args)) + float(model.gamma_birth(*args))) / K
    return total


def test_rate_reconstruction_random_states():
    rng = np.random.default_rng(3)
    model = RateModel(SigmoidBeta(0.5, 1.5, 0.0, 1.0), ConstantKernel(0.3), DistanceKernel(2.0, 0.5), 0.2,
                      GaussianStep(1.0), Bounds(1.5, 0.5, 0.3, 2.0), TraitSpace.real())
    for _ in range(30):
        C = int(rng.integers(1, 5))
        h = rng.integers(1, 4, size=C)
        dist = (h[:, None] + h[None, :]) * (1 - np.eye(C, dtype=int))
        chi = FinitePhylogeny(0.125, 0.125, rng.integers(1, 4, size=C), rng.normal(size=C), dist)
        assert total_event_rate(chi, model).total == pytest.approx(_individual_total_rate(chi, model), rel=1e-10)
        assert total_event_rate(chi, model).total <= total_event_rate(chi, model).cap + 1e-9


def test_step_without_mutation_never_adds_clans():
    chi = FinitePhylogeny(0.1, 0.1, [3, 2], [0.0, 1.0], [[0, 2], [2, 0]])
    model = neutral(p=0.0)
    rng = stream(0)
    t = 0.0
    for _ in range(200):
        if chi.is_empty():
            break
        n_before = chi.n_clans
        mass_before = chi.mass
        t, rec = step(chi, model, rng, t)
        assert chi.n_clans <= n_before
        assert abs(abs(chi.mass - mass_before) - chi.zeta) < 1e-12


def test_step_fixed_kernel_always_new_clan():
    ts = TraitSpace.finite(2)
    model = model_with(p=1.0, mutation=FixedKernel(matrix=((0.0, 1.0), (1.0, 0.0))), ts=ts,
                       bounds=Bounds(1.0, 1.0, 0.0, 0.0))
    chi = FinitePhylogeny(0.1, 0.1, [10], [0], [[0]], ts)
    rng = stream(4)
    t = 0.0
    births = 0
    while births < 20 and not chi.is_empty():
        before = chi.copy()
        t, rec = step(chi, model, rng, t)
        assert rec.kind in EVENT_KINDS
        if rec.kind == NATURAL_BIRTH_MUTANT:
            births += 1
            assert chi.n_clans == before.n_clans + 1
            new = chi.index_of(rec.clan)
            par = before.index_of(rec.parent)
            # the mutant sits one unit beyond its parent from everybody's point of view
            for i, cid in enumerate(before.ids):
                assert chi.dist[new, chi.index_of(cid)] == before.dist[par, i] + 1
            assert chi.traits[new] != chi.traits[chi.index_of(rec.parent)]
        else:
            assert rec.kind == NATURAL_DEATH
        chi.check_invariants()
    assert births > 0


def test_mutant_distance_from_two_clan_state():
    chi = FinitePhylogeny(0.1, 0.1, [1, 1], [0.0, 0.0], [[0, 3], [3, 0]])
    j = chi.add_mutant(0, 0.5)
    assert chi.dist[j, 0] == 1 and chi.dist[j, 1] == 4


def test_simulate_zero_horizon():
    chi = FinitePhylogeny(0.1, 0.1, [2, 1], [0.0, 1.0], [[0, 2], [2, 0]])
    tr = simulate(chi, neutral(), 0.0, stream(0), observe_times=[0.0])
    assert tr.n_events == 0
    assert is_isometric(tr.final, chi)
    assert is_isometric(tr.snapshots[0], chi)


def test_critical_mean_mass():
    chi = FinitePhylogeny.single(8, 0.0, 1 / 16, 1 / 16)
    model = neutral(p=0.3)
    masses = np.array(run_replicates(lambda k, rng: simulate(chi, model, 0.5, rng).final.mass, 2000, seed=2))
    assert abs(masses.mean() - 0.5) <= 3.5 * masses.std(ddof=1) / math.sqrt(masses.size)


def test_pure_birth_growth_mean():
    chi = FinitePhylogeny.single(8, 0.0, 1 / 16, 1 / 16)
    gb = 0.8
    model = model_with(gamma_birth=ConstantKernel(gb), bounds=Bounds(1.0, 1.0, gb, 0.0))
    masses = np.array(run_replicates(lambda k, rng: simulate(chi, model, 0.5, rng, engine="thinning").final.mass,
                                     2000, seed=3))
    exact = 0.5 * math.exp(gb * 0.5)
    assert abs(masses.mean() - exact) <= 3.5 * masses.std(ddof=1) / math.sqrt(masses.size)


def test_metric_invariants_along_runs():
    for model in (neutral(p=0.5), cross_immunity(), logistic_competition(p=0.3)):
        chi = FinitePhylogeny(1 / 16, 1 / 16, [4, 3], [0.0, 0.5], [[0, 2], [2, 0]])
        for engine in ("reference", "thinning"):
            tr = simulate(chi, model, 0.3, stream(5), engine=engine, check_invariants=True, record_events=True)
            for a, b in zip(tr.events, tr.events[1:]):
                assert abs(abs(b.mass - a.mass) - chi.zeta) < 1e-12


def test_thinning_detects_bound_violation():
    # gamma_birth = 2 while the declared bound says 0.5
    model = model_with(gamma_birth=ConstantKernel(2.0), bounds=Bounds(1.0, 1.0, 0.5, 0.0))
    chi = FinitePhylogeny.single(4, 0.0, 0.25, 0.25)
    with pytest.raises(RateBoundExceeded):
        simulate(chi, model, 5.0, stream(0), engine="thinning")


def test_observation_callbacks_and_holds():
    chi = FinitePhylogeny.single(4, 0.0, 0.25, 0.25)
    held = []
    tr = simulate(chi, neutral(), 1.0, stream(9), observe_times=[0.0, 0.5, 1.0],
                  on_observe=lambda t, s, f: s.mass, on_hold=lambda s, dt: held.append(dt))
    assert tr.times == [0.0, 0.5, 1.0]
    assert tr.snapshots[0] == pytest.approx(1.0)
    assert sum(held) == pytest.approx(1.0)


def test_genetic_age_and_genealogical_distance():
    chi = FinitePhylogeny.single(1, 0.0, 0.1, 0.1)
    f = LineageForest(chi)
    assert genetic_age(f, 0, 0.1) == 0.0
    a = f.birth(0, int(chi.ids[0]), 0.3, mutated=False)
    b = f.birth(0, int(chi.ids[0]), 0.3, mutated=False)
    assert genealogical_distance(f, a, b, 1.0) == pytest.approx(2 * (1.0 - 0.3))
    c = f.birth(a, int(chi.ids[0]), 0.6, mutated=True)
    assert genetic_age(f, c, 0.1) == pytest.approx(0.1)
    assert genealogical_distance(f, c, a, 1.0) == pytest.approx(2 * (1.0 - 0.6))
    assert genealogical_distance(f, c, b, 1.0) == pytest.approx(2 * (1.0 - 0.3))
    with pytest.raises(LineageDisabled):
        genetic_age(None, 0, 0.1)


def test_distance_decomposition_on_simulated_pairs():
    chi = FinitePhylogeny(1 / 16, 1 / 16, [3, 2], [0.0, 1.0], [[0, 3], [3, 0]])
    tr = simulate(chi, neutral(p=0.5), 0.4, stream(8), lineage=True)
    f = tr.forest
    living = f.living()
    for x in living:
        for y in living:
            assert distance_decomposition_ok(tr.final, f, x, y)
    f.check()


def test_auxiliary_measures():
    chi = FinitePhylogeny.single(5, 0.7, 0.2, 0.2)
    aux = auxiliary_measures(chi, LineageForest(chi), need_eta=True)
    np.testing.assert_allclose(aux.trait_mass, [1.0])
    np.testing.assert_allclose(aux.eta_ages, [0.0])
    tr = simulate(chi, neutral(p=0.5), 0.3, stream(2), lineage=True)
    aux = auxiliary_measures(tr.final, tr.forest, roots={0, 1}, need_eta=True)
    assert aux.eta_mass.sum() <= aux.trait_mass.sum() + 1e-12
    with pytest.raises(LineageDisabled):
        auxiliary_measures(chi, None, need_eta=True)


def test_domination_equal_models():
    chi = FinitePhylogeny(0.125, 0.125, [3, 2], [0.0, 1.0], [[0, 2], [2, 0]])
    model = model_with(ConstantKernel(0.5), bounds=Bounds(1.0, 1.0, 0.0, 0.5), p=0.3)
    rep = coupled_domination_run(chi, model, model, 1.0, stream(1))
    assert rep.held and rep.equal_throughout


def test_domination_death_and_birth_orderings():
    chi = FinitePhylogeny(0.125, 0.125, [3, 2], [0.0, 1.0], [[0, 2], [2, 0]])
    heavy = model_with(ConstantKernel(1.0), bounds=Bounds(1.0, 1.0, 0.0, 1.0), p=0.3)
    light = model_with(bounds=Bounds(1.0, 1.0, 0.0, 0.0), p=0.3)
    boosted = model_with(gamma_birth=ConstantKernel(1.0), bounds=Bounds(1.0, 1.0, 1.0, 0.0), p=0.3)
    for m1, m2 in ((heavy, light), (light, boosted)):
        for k in range(20):
            rep = coupled_domination_run(chi, m1, m2, 1.0, stream(6, k))
            assert rep.held and rep.violations == 0
            assert rep.mass1 <= rep.mass2 + 1e-12


def test_domination_preconditions():
    chi = FinitePhylogeny.single(2, 0.0, 0.5, 0.5)
    light = model_with(bounds=Bounds(1.0, 1.0, 0.0, 0.0))
    heavy = model_with(ConstantKernel(1.0), bounds=Bounds(1.0, 1.0, 0.0, 1.0))
    with pytest.raises(PreconditionViolated):
        coupled_domination_run(chi, light, heavy, 1.0, stream(0))
    with pytest.raises(PreconditionViolated):
        coupled_domination_run(chi, logistic_competition(), logistic_competition(), 1.0, stream(0))


def test_engines_agree_small():
    chi = FinitePhylogeny.single(6, 0.0, 1 / 16, 1 / 16)
    model = cross_immunity()
    out = {}
    for engine in ("reference", "thinning"):
        vals = np.array(run_replicates(lambda k, rng: simulate(chi, model, 0.5, rng, engine=engine).final.mass,
                                       1500, seed=10 if engine == "reference" else 11))
        out[engine] = (vals.mean(), vals.std(ddof=1) / math.sqrt(vals.size))
    (a, sa), (b, sb) = out["reference"], out["thinning"]
    assert abs(a - b) <= 3.5 * math.hypot(sa, sb)


def test_clan_rates_channels_sum():
    chi = FinitePhylogeny(0.25, 0.25, [2, 1], [0.0, 1.0], [[0, 1], [1, 0]])
    r = clan_rates(chi, cross_immunity())
    ch = r.channels(chi.counts)
    np.testing.assert_allclose(ch.sum(), np.sum(chi.counts * (r.death + r.birth)))
