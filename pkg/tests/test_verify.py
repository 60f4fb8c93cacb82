import numpy as np
import pytest

from phylosim.dynamics import PreconditionViolated
from phylosim.polynomials import Cosine, Lorentzian, PowerExp, TestFunction
from phylosim.rates import Bounds, ConstantBeta, ConstantKernel, GaussianStep, RateModel, ZeroKernel, cross_immunity, \
    logistic_competition, neutral
from phylosim.state import FinitePhylogeny, TraitSpace
from phylosim.verify import (ExperimentSpec, compact_containment_probe, core_stats, domination_ensemble,
                             engine_comparison, martingale_residual, mass_core, mean_se, moment_bound,
                             moment_bound_check, pattern_label, phylo_patterns, small_mass_escape, snapshot_stats,
                             stat_series, strain_count)

HALF = {"masses": [0.5], "traits": [0.0], "distances": [[0]]}


def pure_birth(rate=2.0):
    return RateModel(ConstantBeta(1.0), ConstantKernel(rate), ZeroKernel(), 0.0, GaussianStep(1.0),
                     Bounds(1.0, 1.0, rate, 0.0), TraitSpace.real())


def test_mean_se():
    mu, se = mean_se([1.0, 2.0, 3.0, 4.0])
    assert mu == 2.5
    assert se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)


def test_moment_bound_formula():
    assert moment_bound(1, 1.0, 1.0, 0.5, 0.0) == 2.0
    assert moment_bound(2, 0.25, 1.0, 0.5, 1.0) == pytest.approx(1.25 * np.exp(3 * 2.5))


def test_moment_bound_holds():
    spec = ExperimentSpec(logistic_competition(), HALF, (16,), 200, 0.5, seed=1, engine="thinning")
    rep = moment_bound_check(spec)
    assert rep.passed
    assert {r["q"] for r in rep.rows} == {1, 2, 3}
    assert all(r["sup_mean"] >= r["mean"] - 1e-12 for r in rep.rows)


def test_moment_preconditions():
    spec = ExperimentSpec(neutral(), FinitePhylogeny.single(1, 0.0, 2.0, 2.0), (16,), 2, 0.1)
    with pytest.raises(PreconditionViolated):
        moment_bound_check(spec)
    spec = ExperimentSpec(neutral(), HALF, (16,), 2, 0.1)
    with pytest.raises(PreconditionViolated):
        moment_bound_check(spec, qs=(4,))
    with pytest.raises(PreconditionViolated):
        small_mass_escape(ExperimentSpec(logistic_competition(), HALF, (16,), 2, 0.1), [0.5], 1.0)
    with pytest.raises(ValueError):
        ExperimentSpec(neutral(), HALF, replicates=1)


def test_small_mass_escape_decreases():
    spec = ExperimentSpec(neutral(), HALF, (16,), 400, 0.5, seed=2, engine="thinning")
    rows = small_mass_escape(spec, [0.5, 0.125], 1.0)
    assert rows[0]["m0"] == 0.5 and rows[1]["m0"] == 0.125
    assert rows[1]["prob"] < rows[0]["prob"]


def test_discrete_residual_within_noise():
    F = [TestFunction(0, PowerExp(2, 1.0), name="mass"),
         TestFunction(2, PowerExp(2, 1.0), [[0, 1], [1, 0]], (Cosine(1.0), Lorentzian()), name="pair")]
    spec = ExperimentSpec(neutral(p=0.5), {"masses": [0.25], "traits": [0.0], "distances": [[0]]}, (8,), 300,
                          0.5, seed=4, engine="thinning")
    rep = martingale_residual(spec, F)
    assert rep.passed
    assert len(rep.rows) == 2 * len(spec.grid)
    assert all(r["residual"] == 0.0 for r in rep.rows if r["t"] == 0.0)


def test_constant_function_residual_is_exactly_zero():
    F = TestFunction(0, PowerExp(0, 0.0), name="one")
    spec = ExperimentSpec(cross_immunity(), HALF, (8,), 20, 0.5, seed=5)
    rep = martingale_residual(spec, [F])
    assert all(r["residual"] == 0.0 and r["passed"] for r in rep.rows)


def test_limit_residual_reports_rows():
    F = TestFunction(0, PowerExp(2, 1.0), name="mass")
    spec = ExperimentSpec(neutral(), HALF, (4,), 50, 0.25, (0.25,), seed=6)
    rep = martingale_residual(spec, [F], generator="limit")
    assert rep.passed and len(rep.rows) == 1 and np.isfinite(rep.rows[0]["residual"])


def test_state_statistics():
    chi = FinitePhylogeny(0.25, 0.125, [5, 2, 1], [0.0, 1.0, 4.0], [[0, 2, 3], [2, 0, 3], [3, 3, 0]])
    assert strain_count(chi, 0.25) == 2
    np.testing.assert_array_equal(mass_core(chi, 0.2), [0, 1])
    dm, cn = core_stats(chi, 0.2)
    assert dm == pytest.approx(0.5) and cn == 2
    s = snapshot_stats(chi, (0.5,), (-1.0, 2.0), 0.25)
    assert s["mass"] == pytest.approx(1.0)
    assert s["escape_mass"] == pytest.approx(0.125)
    assert s["dominant_share"] == pytest.approx(5 / 8)
    assert s["diameter"] == pytest.approx(0.75)
    empty = snapshot_stats(FinitePhylogeny.empty(), (0.5,), (-1.0, 2.0), 0.25)
    assert empty["mass"] == 0.0 and empty["cover_0.5"] == 0.0


def test_stat_series_shapes():
    spec = ExperimentSpec(cross_immunity(), HALF, (8,), 10, 0.3, seed=7, lineage=True)
    series, runs = stat_series(spec)
    assert len(runs) == 10
    assert len(series.means["mass"]) == len(spec.grid)
    assert series.means["mass"][0] == pytest.approx(0.5)
    assert series.ses["mass"][0] == 0.0
    rows = series.long_rows()
    assert {"stat", "t", "mean", "se"} == set(rows[0])


def test_pattern_labels():
    base = {"dominant_share": 0.3, "strains": 3.0, "strain_mass_share": 0.9}
    assert pattern_label([base] * 4, 0.2, 0.05) == "extinct"
    assert pattern_label([dict(base, dominant_share=0.9)] * 4, None, 0.05) == "a"
    assert pattern_label([base] * 4, None, 0.05) == "b"
    assert pattern_label([dict(base, strains=20.0)] * 4, None, 0.05) == "c"
    assert pattern_label([dict(base, strains=20.0, strain_mass_share=0.1)] * 4, None, 0.05) == "d"


def test_pattern_without_mutation_is_single_clan():
    spec = ExperimentSpec(neutral(p=0.0), {"masses": [1.0], "traits": [0.0], "distances": [[0]]}, (8,), 20, 0.5,
                          seed=8)
    rep = phylo_patterns(spec)
    assert all(lab in ("a", "extinct") for lab in rep.labels)
    assert "a" in rep.labels


def test_pattern_extinct():
    doomed = RateModel(ConstantBeta(1.0), ZeroKernel(), ConstantKernel(50.0), 0.0, GaussianStep(1.0),
                       Bounds(1.0, 1.0, 0.0, 50.0), TraitSpace.real())
    spec = ExperimentSpec(doomed, FinitePhylogeny.single(1, 0.0, 1 / 8, 1 / 8), (8,), 10, 2.0, seed=9)
    rep = phylo_patterns(spec)
    assert rep.label == "extinct"
    assert all(t is not None for t in rep.extinction_times)


def test_containment_empty_and_critical():
    spec = ExperimentSpec(neutral(), FinitePhylogeny.empty(), (8, 16), 5, 0.5)
    rep = compact_containment_probe(spec, k_max=2)
    assert rep.uniform_in_N and rep.bounded
    assert all(c["M"] == 0.0 for c in rep.constants.values())

    spec = ExperimentSpec(neutral(p=0.5), {"masses": [0.25], "traits": [0.0], "distances": [[0]]}, (8, 16), 300,
                          0.3, seed=10, engine="thinning")
    rep = compact_containment_probe(spec, k_max=2)
    assert rep.bounded
    assert all(0.5 <= p <= 1.0 for p in rep.joint_probability.values())


def test_containment_supercritical_fails_with_ceiling():
    spec = ExperimentSpec(pure_birth(2.0), HALF, (8,), 20, 1.0, seed=11, engine="thinning")
    rep = compact_containment_probe(spec, k_max=1, mass_ceiling=1.0)
    assert not rep.bounded
    assert rep.constants[(8, 1)]["M"] > 1.0


def test_engine_comparison_small():
    spec = ExperimentSpec(cross_immunity(), HALF, (8,), 300, 0.3, seed=12)
    out = engine_comparison(spec)
    assert set(out) == {"mass", "clans", "diameter", "cover", "trait_mean"}
    assert all(v["z"] <= 3.5 for v in out.values())


def test_domination_ensemble():
    chi = FinitePhylogeny(0.125, 0.125, [3, 2], [0.0, 1.0], [[0, 2], [2, 0]])
    heavy = RateModel(ConstantBeta(1.0), ZeroKernel(), ConstantKernel(1.0), 0.3, GaussianStep(1.0),
                      Bounds(1.0, 1.0, 0.0, 1.0), TraitSpace.real())
    light = heavy.replace(gamma_death=ZeroKernel(), bounds=Bounds(1.0, 1.0, 0.0, 0.0))
    out = domination_ensemble(chi, heavy, light, 0.5, 30, seed=13)
    assert out["violations"] == 0 and out["fraction_held"] == 1.0
    assert out["event_checks"] > 0
    assert not out["all_equal"]
