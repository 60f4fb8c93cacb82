"""Batch experiments: moment bounds, martingale residuals, convergence sweeps,
phylogeny patterns and compact containment.

Every estimate carries a Monte-Carlo standard error and checks pass at the
3.5 standard-error level. Replicates use independent derived streams, so the
results depend only on the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .dynamics import (PreconditionViolated, clan_rates, coupled_domination_run, genealogical_distance,
                       genetic_age,
                       simulate)
from .generators import convergence_gap, omega_discrete, omega_limit
from .polynomials import TestFunction, evaluate
from .rates import RateModel, ZeroKernel
from .state import FinitePhylogeny, cover_clans, in_trait_set, states_from
from .streams import run_replicates

SE_LEVEL = 3.5


@dataclass
class ExperimentSpec:
    """What to run: model, initial state, scales, replicates, horizon, grid, seed.

    ``initial`` is a :class:`FinitePhylogeny`, a geometry dict (embedded at each
    ``N``) or a callable ``N -> FinitePhylogeny``.
    """

    model: RateModel
    initial: Any
    N_list: tuple = (16,)
    replicates: int = 1000
    T: float = 1.0
    grid: tuple = ()
    seed: int = 0
    engine: str = "reference"
    lineage: bool = False
    eps_grid: tuple = (0.5, 0.25, 0.125)
    K0: Any = (-3.0, 3.0)
    strain_threshold: float = 0.05
    workers: int | None = None

    def __post_init__(self):
        if self.replicates < 2:
            raise ValueError("standard errors need at least two replicates")
        if not self.grid:
            self.grid = tuple(np.linspace(0.0, self.T, 6).tolist())

    def initial_state(self, N: int) -> FinitePhylogeny:
        if isinstance(self.initial, FinitePhylogeny):
            return self.initial
        if isinstance(self.initial, dict):
            return states_from(self.initial, N, self.model.trait_space)
        return self.initial(N)

    def replicate_runs(self, fn: Callable):
        return run_replicates(fn, self.replicates, self.seed, self.workers)


def mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    return float(x.mean(axis=0)) if x.ndim == 1 else x.mean(axis=0), (
        float(x.std(ddof=1) / math.sqrt(x.shape[0])) if x.ndim == 1
        else x.std(axis=0, ddof=1) / math.sqrt(x.shape[0]))


# moments


def moment_bound(q: int, m0_moment: float, beta_bar: float, gamma_b_bar: float, t: float) -> float:
    """``(1 + E[m_0^q]) exp((2^q - 1)(2 beta_bar + gamma_b_bar) t)``."""
    return (1.0 + m0_moment) * math.exp((2**q - 1) * (2 * beta_bar + gamma_b_bar) * t)


@dataclass
class MomentReport:
    rows: list[dict]
    passed: bool

    def to_dict(self):
        return {"rows": self.rows, "passed": self.passed}


def _mass_paths(spec: ExperimentSpec, N: int):
    """Per replicate: mass and running-max mass at each grid time."""
    chi0 = spec.initial_state(N)
    grid = np.asarray(spec.grid, dtype=float)

    def one(k, rng):
        peak = [chi0.mass]
        vals = []

        def obs(t, chi, forest):
            vals.append((chi.mass, max(peak[0], chi.mass)))

        def hold(chi, dt):
            peak[0] = max(peak[0], chi.mass)

        simulate(chi0, spec.model, spec.T, rng, N=N, engine=spec.engine, observe_times=grid,
                 on_observe=obs, on_hold=hold)
        return vals

    out = np.asarray(spec.replicate_runs(one), dtype=float)
    return out[:, :, 0], out[:, :, 1]


def moment_bound_check(spec: ExperimentSpec, qs=(1, 2, 3)) -> MomentReport:
    """Compare ``E[m_t^q]`` with the uniform bound at every grid time.

    Raises:
        PreconditionViolated: for ``q`` outside {1, 2, 3} or ``zeta > 1``.
    """
    N = spec.N_list[0]
    chi0 = spec.initial_state(N)
    if chi0.zeta > 1:
        raise PreconditionViolated("moment bounds need zeta <= 1")
    if any(q not in (1, 2, 3) for q in qs):
        raise PreconditionViolated("q must be 1, 2 or 3")
    mass, peak = _mass_paths(spec, N)
    b = spec.model.bounds
    rows = []
    for q in qs:
        for i, t in enumerate(spec.grid):
            mu, se = mean_se(mass[:, i] ** q)
            smu, sse = mean_se(peak[:, i] ** q)
            bound = moment_bound(q, chi0.mass**q, b.beta_bar, b.gamma_b_bar, t)
            rows.append({"q": q, "t": float(t), "mean": mu, "se": se, "sup_mean": smu, "sup_se": sse,
                         "bound": bound, "passed": mu + SE_LEVEL * se <= bound})
    return MomentReport(rows, all(r["passed"] for r in rows))


def small_mass_escape(spec: ExperimentSpec, m0_list, delta: float) -> list[dict]:
    """``P(sup_{s <= T} m_s >= delta)`` for shrinking initial masses (no competition deaths).

    ``spec.initial`` is ignored; each ``m0`` uses a single clan of ``round(m0 N)`` individuals.
    """
    if not isinstance(spec.model.gamma_death, ZeroKernel) and spec.model.bounds.gamma_d_bar > 0:
        raise PreconditionViolated("the small-mass escape bound needs gamma_death == 0")
    N = spec.N_list[0]
    out = []
    for m0 in m0_list:
        count = max(1, int(round(m0 * N)))
        sub = ExperimentSpec(spec.model, FinitePhylogeny.single(count, 0.0 if not spec.model.trait_space.is_finite else 0,
                                                               1.0 / N, 1.0 / N, spec.model.trait_space),
                             (N,), spec.replicates, spec.T, (spec.T,), spec.seed, spec.engine)
        _, peak = _mass_paths(sub, N)
        hit = (peak[:, -1] >= delta - 1e-12).astype(float)
        p, se = mean_se(hit)
        out.append({"m0": count / N, "prob": p, "se": se})
    return out


# martingale residuals


@dataclass
class ResidualReport:
    rows: list[dict]
    passed: bool

    def to_dict(self):
        return {"rows": self.rows, "passed": self.passed}


def _residual_samples(spec: ExperimentSpec, F_list, N: int, generator: str):
    """Per replicate and grid time: ``F(X_t) - F(X_0) - int_0^t Omega F(X_s) ds`` for each F."""
    chi0 = spec.initial_state(N)
    grid = np.asarray(spec.grid, dtype=float)
    model = spec.model
    nF = len(F_list)
    F0 = np.array([evaluate(F, chi0) for F in F_list])

    memo: dict = {}

    def omega(chi):
        if chi.is_empty():
            return np.zeros(nF)
        key = (chi.counts.tobytes(), chi.traits.tobytes(), chi.dist.tobytes())
        hit = memo.get(key)
        if hit is None:
            hit = memo[key] = _omega(chi)
        return hit

    def _omega(chi):
        if generator == "discrete":
            rates = clan_rates(chi, model)
            return np.array([omega_discrete(chi, F, model, N, rates=rates, estimate_error=False).total for F in F_list])
        return np.array([omega_limit(chi, F, model).total for F in F_list])

    def one(k, rng):
        acc = np.zeros(nF)
        clock = [0.0]
        integral_at = np.zeros((grid.size, nF))
        values_at = np.zeros((grid.size, nF))
        gi = [0]

        def hold(chi, dt):
            t0 = clock[0]
            val = omega(chi) if dt > 0 else np.zeros(nF)
            while gi[0] < grid.size and grid[gi[0]] <= t0 + dt + 1e-15:
                integral_at[gi[0]] = acc + val * max(grid[gi[0]] - t0, 0.0)
                gi[0] += 1
            acc[:] = acc + val * dt
            clock[0] = t0 + dt

        def obs(t, chi, forest):
            return np.array([evaluate(F, chi) for F in F_list])

        tr = simulate(chi0, model, spec.T, rng, N=N, engine=spec.engine, observe_times=grid,
                      on_observe=obs, on_hold=hold)
        for i, v in enumerate(tr.snapshots):
            values_at[i] = v
        while gi[0] < grid.size:
            integral_at[gi[0]] = acc
            gi[0] += 1
        return values_at - F0[None, :] - integral_at

    return np.asarray(spec.replicate_runs(one), dtype=float)


def martingale_residual(spec: ExperimentSpec, F_list, generator: str = "discrete") -> ResidualReport:
    """Estimate ``R(t) = E[F(X_t)] - F(X_0) - E[int_0^t Omega F(X_s) ds]`` on the grid.

    ``generator`` is ``"discrete"`` (exact Dynkin identity, residual zero in
    expectation) or ``"limit"`` (residual shrinks as ``N`` grows).
    """
    rows = []
    for N in spec.N_list:
        samples = _residual_samples(spec, F_list, N, generator)
        for j, F in enumerate(F_list):
            for i, t in enumerate(spec.grid):
                r, se = mean_se(samples[:, i, j])
                ratio = abs(r) / se if se > 0 else (0.0 if r == 0 else math.inf)
                rows.append({"F": F.name, "N": int(N), "t": float(t), "residual": r, "se": se,
                             "ratio": ratio, "passed": ratio <= SE_LEVEL})
    passed = all(r["passed"] for r in rows) if generator == "discrete" else True
    return ResidualReport(rows, passed)


def convergence_sweep(spec: ExperimentSpec, F_list, geometries):
    """Gap tables ``|Omega_N F - Omega F|`` over ``spec.N_list``."""
    return convergence_gap(F_list, geometries, spec.model, spec.N_list)


# statistics of states


def diameter(chi: FinitePhylogeny) -> float:
    return chi.ell * float(chi.dist.max()) if not chi.is_empty() else 0.0


def strain_count(chi: FinitePhylogeny, threshold: float) -> int:
    """Clans carrying at least ``threshold`` mass."""
    return int(np.sum(chi.zeta * chi.counts >= threshold - 1e-12))


def mass_core(chi: FinitePhylogeny, eps: float) -> np.ndarray:
    """Largest clans (by count) that together carry at least ``(1 - eps)`` of the mass."""
    order = np.argsort(-chi.counts, kind="stable")
    cum = np.cumsum(chi.counts[order])
    need = (1.0 - eps) * cum[-1]
    k = int(np.searchsorted(cum, need - 1e-9)) + 1
    return np.sort(order[:k])


def core_stats(chi: FinitePhylogeny, eps: float) -> tuple[float, int]:
    """Diameter and ``eps``-covering number of the ``(1 - eps)``-mass core."""
    if chi.is_empty():
        return 0.0, 0
    core = mass_core(chi, eps)
    sub = chi.copy()
    sub._keep(np.isin(np.arange(chi.n_clans), core))
    return diameter(sub), cover_clans(sub, eps).number


def snapshot_stats(chi: FinitePhylogeny, eps_grid, K0, strain_threshold: float,
                   forest=None, t: float = 0.0, rng=None, pair_samples: int = 20) -> dict:
    """All per-time statistics of one state."""
    m = chi.mass
    out = {"mass": m, "mass2": m * m, "mass3": m**3, "clans": float(chi.n_clans),
           "strains": float(strain_count(chi, strain_threshold)), "diameter": diameter(chi)}
    if chi.is_empty():
        for eps in eps_grid:
            out[f"cover_{eps:g}"] = 0.0
        out.update(trait_mean=0.0, trait_var=0.0, dominant_share=0.0, escape_mass=0.0)
        return out
    for eps in eps_grid:
        out[f"cover_{eps:g}"] = float(cover_clans(chi, eps).number)
    w = chi.counts / chi.counts.sum()
    tr = chi.traits.astype(float)
    mu = float(w @ tr)
    out["trait_mean"] = mu
    out["trait_var"] = float(w @ (tr - mu) ** 2)
    out["dominant_share"] = float(w.max())
    out["escape_mass"] = chi.zeta * float(chi.counts[~in_trait_set(chi.traits, K0)].sum())
    if forest is not None:
        living = forest.living()
        ages = np.array([genetic_age(forest, i, chi.zeta) for i in living])
        out["age_median"] = float(np.median(ages))
        out["age_q90"] = float(np.quantile(ages, 0.9))
        if rng is not None and len(living) > 1:
            gen, gea = [], []
            for _ in range(pair_samples):
                x, y = rng.choice(len(living), 2, replace=False)
                x, y = living[x], living[y]
                gen.append(chi.ell * chi.dist[chi.index_of(forest.clan[x]), chi.index_of(forest.clan[y])])
                gea.append(genealogical_distance(forest, x, y, t))
            out["genetic_distance_mean"] = float(np.mean(gen))
            out["genealogical_distance_mean"] = float(np.mean(gea))
    return out


@dataclass
class StatSeries:
    times: list[float]
    means: dict
    ses: dict

    def long_rows(self) -> list[dict]:
        rows = []
        for key in sorted(self.means):
            for i, t in enumerate(self.times):
                rows.append({"stat": key, "t": t, "mean": float(self.means[key][i]),
                             "se": float(self.ses[key][i])})
        return rows


def _series(per_rep: list[list[dict]], times) -> StatSeries:
    keys = sorted(set().union(*[set(d) for rep in per_rep for d in rep]))
    means, ses = {}, {}
    for key in keys:
        arr = np.array([[d.get(key, np.nan) for d in rep] for rep in per_rep], dtype=float)
        ok = ~np.isnan(arr)
        cnt = ok.sum(axis=0)
        filled = np.where(ok, arr, 0.0)
        mu = np.where(cnt > 0, filled.sum(axis=0) / np.maximum(cnt, 1), np.nan)
        ss = np.where(ok, (arr - mu[None, :]) ** 2, 0.0).sum(axis=0)
        sd = np.sqrt(ss / np.maximum(cnt - 1, 1))
        means[key] = mu
        ses[key] = np.where(cnt > 1, sd / np.sqrt(np.maximum(cnt, 1)), np.nan)
    return StatSeries([float(t) for t in times], means, ses)


def stat_series(spec: ExperimentSpec, N: int | None = None) -> tuple[StatSeries, list]:
    """Statistics on the grid averaged over replicates; also returns the raw per-replicate dicts."""
    N = spec.N_list[0] if N is None else N
    chi0 = spec.initial_state(N)

    def one(k, rng):
        def obs(t, chi, forest):
            return snapshot_stats(chi, spec.eps_grid, spec.K0, spec.strain_threshold, forest, t, rng)
        tr = simulate(chi0, spec.model, spec.T, rng, N=N, engine=spec.engine, lineage=spec.lineage,
                      observe_times=spec.grid, on_observe=obs)
        return tr.snapshots, tr.extinction_time

    runs = spec.replicate_runs(one)
    return _series([r[0] for r in runs], spec.grid), runs


# patterns


DOMINANT_SHARE = 0.8
STRAIN_CAP = 10
PROPER_FREQUENCY_MASS = 0.5


def pattern_label(stats: list[dict], extinction_time, strain_threshold: float) -> str:
    """Heuristic label from the late half of one trajectory's statistics.

    ``a``: mean dominant clan share above 0.8. ``b``: at most 10 strains
    (clans above the mass threshold) throughout. ``c``: more strains, but at
    least half the mass sits in strains (frequencies are proper). ``d``:
    otherwise, mass spread over many small clans.
    """
    if extinction_time is not None:
        return "extinct"
    late = stats[len(stats) // 2:]
    share = np.mean([s["dominant_share"] for s in late])
    if share > DOMINANT_SHARE:
        return "a"
    if max(s["strains"] for s in late) <= STRAIN_CAP:
        return "b"
    in_strains = np.mean([s.get("strain_mass_share", 0.0) for s in late])
    return "c" if in_strains >= PROPER_FREQUENCY_MASS else "d"


@dataclass
class PatternReport:
    series: StatSeries
    labels: list[str]
    label: str
    extinction_times: list

    def to_dict(self):
        return {"label": self.label, "labels": self.labels, "extinction_times": self.extinction_times,
                "series": self.series.long_rows()}


def phylo_patterns(spec: ExperimentSpec, N: int | None = None) -> PatternReport:
    """Statistic series plus an a/b/c/d label per replicate and the majority label."""
    N = spec.N_list[0] if N is None else N
    chi0 = spec.initial_state(N)
    thr = spec.strain_threshold

    def one(k, rng):
        def obs(t, chi, forest):
            s = snapshot_stats(chi, spec.eps_grid, spec.K0, thr, forest, t, rng)
            if not chi.is_empty():
                big = chi.zeta * chi.counts >= thr - 1e-12
                s["strain_mass_share"] = float(chi.counts[big].sum() / chi.counts.sum())
            return s
        tr = simulate(chi0, spec.model, spec.T, rng, N=N, engine=spec.engine, lineage=spec.lineage,
                      observe_times=spec.grid, on_observe=obs)
        return tr.snapshots, tr.extinction_time

    runs = spec.replicate_runs(one)
    labels = [pattern_label(s, ext, thr) for s, ext in runs]
    vals, counts = np.unique(labels, return_counts=True)
    return PatternReport(_series([r[0] for r in runs], spec.grid), labels, str(vals[np.argmax(counts)]),
                         [ext for _, ext in runs])


# compact containment


@dataclass
class ContainmentReport:
    constants: dict
    joint_probability: dict
    stable: dict
    uniform_in_N: bool
    bounded: bool

    def to_dict(self):
        return {"constants": {f"{k}": v for k, v in self.constants.items()},
                "joint_probability": {f"{k}": v for k, v in self.joint_probability.items()},
                "stable": {f"{k}": v for k, v in self.stable.items()},
                "uniform_in_N": self.uniform_in_N, "bounded": self.bounded}


def _ratio_ok(a: float, b: float, factor: float) -> bool:
    lo, hi = min(a, b), max(a, b)
    if hi <= 1e-12:
        return True
    return lo > 0 and hi / lo <= factor


def compact_containment_probe(spec: ExperimentSpec, eps0: float = 0.1, k_max: int = 4,
                              quantile: float = 0.95, factor: float = 2.0,
                              mass_ceiling: float | None = None) -> ContainmentReport:
    """Fit containment constants per ``eps = 2^-k`` and compare them across ``N``.

    For each replicate the suprema over the grid of mass, trait-escape mass,
    core diameter and core covering number are recorded; constants
    ``(M_k, K_k, L_k, N_k)`` are their ``quantile``-th percentiles. The
    constants count as uniform in ``N`` when every one agrees within ``factor``
    across ``spec.N_list``; ``bounded`` fails when ``M`` exceeds
    ``mass_ceiling`` at any ``N`` or the joint containment probability drops
    below ``1 - eps0``.
    """
    ks = list(range(1, k_max + 1))
    constants: dict = {}
    joint: dict = {}
    for N in spec.N_list:
        chi0 = spec.initial_state(N)

        def one(rep, rng):
            sup = np.zeros((len(ks), 4))

            def obs(t, chi, forest):
                for a, k in enumerate(ks):
                    eps = 2.0**-k
                    if chi.is_empty():
                        continue
                    dm, cn = core_stats(chi, eps)
                    esc = chi.zeta * float(chi.counts[~in_trait_set(chi.traits, spec.K0)].sum())
                    sup[a] = np.maximum(sup[a], [chi.mass, esc, dm, cn])

            simulate(chi0, spec.model, spec.T, rng, N=N, engine=spec.engine, observe_times=spec.grid,
                     on_observe=obs)
            return sup

        sups = np.asarray(spec.replicate_runs(one))
        for a, k in enumerate(ks):
            c = np.quantile(sups[:, a, :], quantile, axis=0)
            constants[(N, k)] = {"M": float(c[0]), "K": float(c[1]), "L": float(c[2]), "N": float(c[3])}
            inside = np.all(sups[:, a, :] <= c[None, :] + 1e-12, axis=1)
            joint[(N, k)] = float(inside.mean())
    stable = {}
    Ns = list(spec.N_list)
    for k in ks:
        for name in ("M", "K", "L", "N"):
            vals = [constants[(N, k)][name] for N in Ns]
            stable[(k, name)] = all(_ratio_ok(vals[0], v, factor) for v in vals[1:])
    uniform = all(stable.values())
    bounded = all(p >= 1 - eps0 - 1e-12 for p in joint.values())
    if mass_ceiling is not None:
        bounded = bounded and all(c["M"] <= mass_ceiling for c in constants.values())
    return ContainmentReport(constants, joint, stable, uniform, bounded)


# ensemble helpers


ENGINE_STATS = ("mass", "clans", "diameter", "cover", "trait_mean")


def final_statistics(chi: FinitePhylogeny, eps: float) -> dict:
    if chi.is_empty():
        return {"mass": 0.0, "clans": 0.0, "diameter": 0.0, "cover": 0.0, "trait_mean": 0.0}
    w = chi.counts / chi.counts.sum()
    return {"mass": chi.mass, "clans": float(chi.n_clans), "diameter": diameter(chi),
            "cover": float(cover_clans(chi, eps).number), "trait_mean": float(w @ chi.traits.astype(float))}


def ensemble_statistics(spec: ExperimentSpec, engine: str, eps: float = 0.25, N: int | None = None,
                        seed_offset: int = 0) -> dict:
    """Means and standard errors of the final-time statistics for one engine."""
    N = spec.N_list[0] if N is None else N
    chi0 = spec.initial_state(N)

    def one(k, rng):
        tr = simulate(chi0, spec.model, spec.T, rng, N=N, engine=engine)
        return [final_statistics(tr.final, eps)[s] for s in ENGINE_STATS]

    sub = ExperimentSpec(spec.model, spec.initial, spec.N_list, spec.replicates, spec.T, spec.grid,
                         spec.seed + seed_offset, engine, workers=spec.workers)
    arr = np.asarray(sub.replicate_runs(one), dtype=float)
    mu, se = mean_se(arr)
    return {s: (float(mu[i]), float(se[i])) for i, s in enumerate(ENGINE_STATS)}


def engine_comparison(spec: ExperimentSpec, eps: float = 0.25) -> dict:
    """Reference vs thinning engine: per statistic, the z-score of the difference of means."""
    ref = ensemble_statistics(spec, "reference", eps, seed_offset=0)
    thin = ensemble_statistics(spec, "thinning", eps, seed_offset=10**6)
    out = {}
    for s in ENGINE_STATS:
        (a, sa), (b, sb) = ref[s], thin[s]
        se = math.hypot(sa, sb)
        out[s] = {"reference": a, "thinning": b, "se": se,
                  "z": 0.0 if se == 0 and a == b else (abs(a - b) / se if se > 0 else math.inf)}
    return out


def domination_ensemble(chi0: FinitePhylogeny, model1: RateModel, model2: RateModel, T: float,
                        replicates: int, seed: int, workers: int | None = None) -> dict:
    """Run the coupled comparison on many streams; count events where the subset relation held."""
    reports = run_replicates(lambda k, rng: coupled_domination_run(chi0, model1, model2, T, rng),
                             replicates, seed, workers)
    checks = sum(r.n_checks for r in reports)
    bad = sum(r.violations for r in reports)
    return {"replicates": replicates, "event_checks": checks, "violations": bad,
            "fraction_held": 1.0 if checks == 0 else 1.0 - bad / checks,
            "all_equal": all(r.equal_throughout for r in reports)}


__all__ = [
    "ExperimentSpec", "MomentReport", "moment_bound", "moment_bound_check", "small_mass_escape",
    "martingale_residual", "ResidualReport", "convergence_sweep", "StatSeries", "stat_series",
    "phylo_patterns", "PatternReport", "pattern_label", "compact_containment_probe",
    "ContainmentReport", "engine_comparison", "ensemble_statistics", "domination_ensemble",
    "snapshot_stats", "core_stats", "mass_core", "strain_count", "diameter",
]
