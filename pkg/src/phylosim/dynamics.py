"""Exact event-driven simulation of the branching model with mutation and competition.

Two engines produce the same law:

* ``reference`` recomputes every per-clan competition sum before each event
  (``O(C^2)`` per event) and picks the event proportionally to the exact rates;
* ``thinning`` proposes events at the assumption-level upper bounds and accepts
  each proposal with probability true rate / bound.

An optional :class:`LineageForest` tracks individuals (parent, birth time,
mutation count) for age and genealogical-distance statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .rates import RateModel, ZeroKernel, draw_birth, validate
from .state import FinitePhylogeny, sampling_measure_weights

NATURAL_DEATH = "NaturalDeath"
COMPETITION_DEATH = "CompetitionDeath"
NATURAL_BIRTH_CLONE = "NaturalBirthClone"
NATURAL_BIRTH_MUTANT = "NaturalBirthMutant"
ENHANCED_BIRTH_CLONE = "EnhancedBirthClone"
ENHANCED_BIRTH_MUTANT = "EnhancedBirthMutant"
EVENT_KINDS = (NATURAL_DEATH, COMPETITION_DEATH, NATURAL_BIRTH_CLONE, NATURAL_BIRTH_MUTANT,
               ENHANCED_BIRTH_CLONE, ENHANCED_BIRTH_MUTANT)

DEFAULT_EVENT_CAP = 10**8


class Extinct(RuntimeError):
    """No individuals are left, so no event can happen."""


class RateExplosionGuard(RuntimeError):
    """The event cap was reached; the parameters are almost surely misconfigured."""


class RateBoundExceeded(RuntimeError):
    """A true rate exceeded its declared upper bound during thinning."""


class LineageDisabled(RuntimeError):
    """A lineage statistic was requested from a run without lineage tracking."""


class PreconditionViolated(ValueError):
    """Inputs do not satisfy the requirements of the requested experiment."""


@dataclass(frozen=True)
class EventRecord:
    time: float
    kind: str
    clan: int
    parent: int
    mass: float


# rates


@dataclass
class ClanRates:
    """Per-clan rate pieces of a state.

    ``beta[x]`` is the natural rate, ``comp_death[x]`` and ``comp_birth[x]`` the
    competition sums ``sum_{x1} w_{x1} gamma(m, r(x1, x), k(x1), k(x))``.
    """

    beta: np.ndarray
    comp_death: np.ndarray
    comp_birth: np.ndarray
    zeta: float

    def channels(self, counts: np.ndarray) -> np.ndarray:
        """Rates of (natural death, competition death, natural birth, enhanced birth) per clan."""
        nat = counts * self.beta / self.zeta
        return np.stack([nat, counts * self.comp_death, nat, counts * self.comp_birth], axis=1)

    @property
    def death(self) -> np.ndarray:
        return self.beta / self.zeta + self.comp_death

    @property
    def birth(self) -> np.ndarray:
        return self.beta / self.zeta + self.comp_birth


def competition_matrix(kernel, chi: FinitePhylogeny) -> np.ndarray:
    """Matrix ``G[x1, x2] = gamma(m, r(x1, x2), k(x1), k(x2))``."""
    c = chi.n_clans
    if isinstance(kernel, ZeroKernel):
        return np.zeros((c, c))
    k = chi.traits
    return kernel(chi.mass, chi.physical(), k[:, None], k[None, :])


def clan_rates(chi: FinitePhylogeny, model: RateModel) -> ClanRates:
    w = sampling_measure_weights(chi)
    beta = model.beta(chi.traits)
    cd = w @ competition_matrix(model.gamma_death, chi)
    cb = w @ competition_matrix(model.gamma_birth, chi)
    return ClanRates(beta, cd, cb, chi.zeta)


def particle_death_rate(chi: FinitePhylogeny, model: RateModel, x2: int) -> float:
    """Total death rate of one individual of clan index ``x2``."""
    return float(clan_rates(chi, model).death[x2])


def particle_birth_rate(chi: FinitePhylogeny, model: RateModel, x2: int) -> float:
    """Total birth rate of one individual of clan index ``x2``."""
    return float(clan_rates(chi, model).birth[x2])


@dataclass(frozen=True)
class TotalRate:
    total: float
    cap: float


def total_event_rate(chi: FinitePhylogeny, model: RateModel) -> TotalRate:
    """Total jump rate and the bound ``(m/zeta)(2 beta_bar/zeta + gamma_b_bar + (1 v m) gamma_d_bar)``."""
    if chi.is_empty():
        return TotalRate(0.0, 0.0)
    r = clan_rates(chi, model)
    total = float(np.sum(chi.counts * (r.death + r.birth)))
    b = model.bounds
    m = chi.mass
    cap = m / chi.zeta * (2 * b.beta_bar / chi.zeta + b.gamma_b_bar + max(1.0, m) * b.gamma_d_bar)
    return TotalRate(total, cap)


# lineages


class LineageForest:
    """Individual-level genealogy overlaid on the clan state."""

    def __init__(self, chi0: FinitePhylogeny):
        self.initial = chi0.copy()
        self.parent: list[int] = []
        self.birth_time: list[float] = []
        self.mutations: list[int] = []
        self.root: list[int] = []
        self.clan: list[int] = []
        self.alive: list[bool] = []
        self.members: dict[int, list[int]] = {}
        self.root_clan: dict[int, int] = {}
        for cid, n in zip(chi0.ids.tolist(), chi0.counts.tolist()):
            for _ in range(n):
                ind = self._new(-1, 0.0, 0, cid, root=None)
                self.root_clan[ind] = cid

    def _new(self, parent: int, t: float, muts: int, cid: int, root) -> int:
        ind = len(self.parent)
        self.parent.append(parent)
        self.birth_time.append(t)
        self.mutations.append(muts)
        self.root.append(ind if root is None else root)
        self.clan.append(cid)
        self.alive.append(True)
        self.members.setdefault(cid, []).append(ind)
        return ind

    def pick(self, cid: int, rng: np.random.Generator) -> int:
        mem = self.members[cid]
        return mem[int(rng.integers(len(mem)))]

    def kill(self, ind: int) -> None:
        self.alive[ind] = False
        mem = self.members[self.clan[ind]]
        mem.remove(ind)
        if not mem:
            del self.members[self.clan[ind]]

    def birth(self, parent: int, cid: int, t: float, mutated: bool) -> int:
        return self._new(parent, t, self.mutations[parent] + int(mutated), cid, self.root[parent])

    def living(self) -> list[int]:
        return [i for mem in self.members.values() for i in mem]

    def copy(self) -> "LineageForest":
        new = LineageForest.__new__(LineageForest)
        new.initial = self.initial
        new.parent = list(self.parent)
        new.birth_time = list(self.birth_time)
        new.mutations = list(self.mutations)
        new.root = list(self.root)
        new.clan = list(self.clan)
        new.alive = list(self.alive)
        new.members = {k: list(v) for k, v in self.members.items()}
        new.root_clan = dict(self.root_clan)
        return new

    def check(self) -> None:
        for i, p in enumerate(self.parent):
            if p >= 0:
                assert self.birth_time[p] <= self.birth_time[i]
                assert self.mutations[p] <= self.mutations[i]


def _need(forest):
    if forest is None:
        raise LineageDisabled("lineage tracking is off for this run")
    return forest


def genetic_age(forest: LineageForest | None, individual: int, zeta: float) -> float:
    """``zeta`` times the number of mutations since the time-0 ancestor."""
    return zeta * _need(forest).mutations[individual]


def genealogical_distance(forest: LineageForest | None, x: int, y: int, t: float) -> float:
    """Twice the time back to the most recent common ancestor of ``x`` and ``y``."""
    f = _need(forest)
    if x == y:
        return 0.0
    if f.root[x] != f.root[y]:
        return 2.0 * t
    # child-on-line map for x's ancestry: ancestor -> birth time of its child on the line
    split_x = {x: math.inf}
    a = x
    while f.parent[a] >= 0:
        split_x[f.parent[a]] = f.birth_time[a]
        a = f.parent[a]
    b, sy = y, math.inf
    while b not in split_x:
        sy = f.birth_time[b]
        b = f.parent[b]
    split = min(split_x[b], sy)
    return 2.0 * (t - split)


def distance_decomposition_ok(chi: FinitePhylogeny, forest: LineageForest, x: int, y: int) -> bool:
    """Check ``r(x, y) <= ell * (k_x + k_y) + r_0(root(x), root(y))`` for mutation counts ``k``."""
    f = forest
    r = chi.ell * chi.dist[chi.index_of(f.clan[x]), chi.index_of(f.clan[y])]
    init = f.initial
    r0 = init.ell * init.dist[init.index_of(f.root_clan[f.root[x]]), init.index_of(f.root_clan[f.root[y]])]
    return r <= chi.ell * (f.mutations[x] + f.mutations[y]) + r0 + 1e-12


@dataclass
class AuxiliaryMeasures:
    traits: np.ndarray
    trait_mass: np.ndarray
    eta_traits: np.ndarray | None
    eta_ages: np.ndarray | None
    eta_mass: np.ndarray | None


def auxiliary_measures(chi: FinitePhylogeny, forest: LineageForest | None = None,
                       roots=None, need_eta: bool = False) -> AuxiliaryMeasures:
    """Trait marginal and, with lineages, the (trait, age) measure of descendants of ``roots``.

    ``roots`` is a set of time-0 individuals; ``None`` keeps everybody.
    """
    traits = chi.traits.copy()
    mass = chi.zeta * chi.counts.astype(float)
    if forest is None:
        if need_eta:
            raise LineageDisabled("the (trait, age) measure needs lineage tracking")
        return AuxiliaryMeasures(traits, mass, None, None, None)
    keys: dict[tuple, float] = {}
    for ind in forest.living():
        if roots is not None and forest.root[ind] not in roots:
            continue
        k = (chi.traits[chi.index_of(forest.clan[ind])].item(), chi.zeta * forest.mutations[ind])
        keys[k] = keys.get(k, 0.0) + chi.zeta
    items = sorted(keys.items())
    et = np.array([k[0] for k, _ in items])
    ea = np.array([k[1] for k, _ in items])
    em = np.array([v for _, v in items])
    return AuxiliaryMeasures(traits, mass, et, ea, em)


# engines


@dataclass
class Trajectory:
    times: list[float]
    snapshots: list
    final: FinitePhylogeny
    t_end: float
    extinct: bool
    extinction_time: float | None
    n_events: int
    n_proposals: int
    events: list[EventRecord] = field(default_factory=list)
    forest: LineageForest | None = None


def _apply_birth(chi, forest, i, model, N, rng, t):
    mutated, trait = draw_birth(model, chi.traits[i], N, rng)
    parent_id = int(chi.ids[i])
    ind = forest.pick(parent_id, rng) if forest is not None else -1
    if mutated:
        j = chi.add_mutant(i, trait)
    else:
        chi.add_clone(i)
        j = i
    if forest is not None:
        forest.birth(ind, int(chi.ids[j]), t, mutated)
    return mutated, int(chi.ids[j]), parent_id


def _apply_death(chi, forest, i, rng):
    cid = int(chi.ids[i])
    if forest is not None:
        forest.kill(forest.pick(cid, rng))
    chi.remove_one(i)
    return cid


def step(chi: FinitePhylogeny, model: RateModel, rng: np.random.Generator, t: float = 0.0,
         N: int | None = None, forest: LineageForest | None = None):
    """Perform one event of the reference engine in place.

    Returns ``(new_time, EventRecord)``.

    Raises:
        Extinct: if ``chi`` is empty.
    """
    if chi.is_empty():
        raise Extinct("no individuals left")
    N = _scale(chi) if N is None else N
    rates = clan_rates(chi, model)
    ch = rates.channels(chi.counts)
    total = ch.sum()
    t = t + rng.exponential(1.0 / total)
    return t, _fire(chi, model, rng, t, N, forest, ch, total)


def _fire(chi, model, rng, t, N, forest, ch, total):
    flat = np.cumsum(ch.ravel())
    k = int(np.searchsorted(flat, rng.random() * total, side="right"))
    k = min(k, flat.size - 1)
    while ch.ravel()[k] == 0.0:
        k -= 1
    i, c = divmod(k, 4)
    return _apply_channel(chi, model, rng, t, N, forest, i, c)


def _apply_channel(chi, model, rng, t, N, forest, i, c):
    if c < 2:
        cid = _apply_death(chi, forest, i, rng)
        return EventRecord(t, NATURAL_DEATH if c == 0 else COMPETITION_DEATH, cid, cid, chi.mass)
    mutated, cid, pid = _apply_birth(chi, forest, i, model, N, rng, t)
    if c == 2:
        kind = NATURAL_BIRTH_MUTANT if mutated else NATURAL_BIRTH_CLONE
    else:
        kind = ENHANCED_BIRTH_MUTANT if mutated else ENHANCED_BIRTH_CLONE
    return EventRecord(t, kind, cid, pid, chi.mass)


def _partner_rate(kernel, chi, rng, cum, ntot, i, bound):
    j = int(np.searchsorted(cum, rng.integers(ntot), side="right"))
    g = float(kernel(chi.mass, chi.ell * chi.dist[j, i], chi.traits[j], chi.traits[i]))
    if g > bound * (1 + 1e-9) + 1e-12:
        raise RateBoundExceeded(f"competition rate {g:g} above its bound {bound:g}")
    return g


def _thin(chi, model, rng, cum, ntot, i, u, nat, cd_bar, beta_i):
    """Channel of an accepted proposal for a particle of clan ``i``, or None."""
    if beta_i > nat * (1 + 1e-12):
        raise RateBoundExceeded(f"natural rate {beta_i:g} above its bound {nat:g}")
    if u < nat:
        return 0 if u < beta_i else None
    u -= nat
    if u < cd_bar:
        g = _partner_rate(model.gamma_death, chi, rng, cum, ntot, i, cd_bar)
        return 1 if u < g else None
    u -= cd_bar
    if u < nat:
        return 2 if u < beta_i else None
    u -= nat
    g = _partner_rate(model.gamma_birth, chi, rng, cum, ntot, i, model.bounds.gamma_b_bar)
    return 3 if u < g else None


def _scale(chi: FinitePhylogeny) -> int:
    return max(1, int(round(1.0 / chi.zeta)))


def simulate(
    chi0: FinitePhylogeny,
    model: RateModel,
    T: float,
    rng: np.random.Generator,
    *,
    N: int | None = None,
    engine: str = "reference",
    lineage: bool = False,
    observe_times=None,
    on_observe: Callable | None = None,
    on_hold: Callable | None = None,
    record_events: bool = False,
    max_events: int = DEFAULT_EVENT_CAP,
    check_invariants: bool = False,
) -> Trajectory:
    """Run the dynamics from ``chi0`` up to time ``T`` (or extinction).

    Args:
        chi0: initial state (not modified).
        model: validated rate model.
        T: horizon.
        rng: random stream.
        N: scale index for rescaled mutation kernels; defaults to ``round(1/zeta)``.
        engine: ``"reference"`` or ``"thinning"``.
        lineage: track individual genealogies.
        observe_times: times at which ``on_observe(t, state, forest)`` is called
            (or a snapshot copy is stored when no callback is given).
        on_hold: ``on_hold(state, dt)`` for every interval the state is constant.
        record_events: keep an :class:`EventRecord` per event.
        max_events: raise :class:`RateExplosionGuard` beyond this many events.
        check_invariants: assert state invariants after every event.
    """
    if engine not in ("reference", "thinning"):
        raise ValueError(f"unknown engine {engine!r}")
    chi = chi0.copy()
    N = _scale(chi) if N is None else N
    forest = LineageForest(chi) if lineage else None
    obs = np.sort(np.asarray([] if observe_times is None else observe_times, dtype=float))
    obs = obs[obs <= T]
    times: list[float] = []
    snaps: list = []
    events: list[EventRecord] = []
    oi = 0

    def observe_until(t_next):
        nonlocal oi
        while oi < obs.size and obs[oi] < t_next:
            times.append(float(obs[oi]))
            if on_observe is not None:
                snaps.append(on_observe(float(obs[oi]), chi, forest))
            else:
                snaps.append(chi.copy())
            oi += 1

    t = 0.0
    n_events = n_prop = 0
    extinct_at = None
    b = model.bounds
    zeta = chi.zeta
    while True:
        if chi.is_empty():
            extinct_at = t
            observe_until(math.inf)
            if on_hold is not None and T > t:
                on_hold(chi, T - t)
            t = max(t, T)
            break
        if engine == "reference":
            ch = clan_rates(chi, model).channels(chi.counts)
            total = ch.sum()
            t_next = t + rng.exponential(1.0 / total)
            n_prop += 1
            if t_next > T:
                observe_until(math.inf)
                if on_hold is not None:
                    on_hold(chi, T - t)
                t = T
                break
            observe_until(t_next)
            if on_hold is not None:
                on_hold(chi, t_next - t)
            t = t_next
            rec = _fire(chi, model, rng, t, N, forest, ch, total)
        else:
            # thinning: propose at the per-particle bounds until one is accepted
            t_last = t
            ntot = int(chi.counts.sum())
            cum = np.cumsum(chi.counts)
            nat = b.beta_bar / zeta
            cd_bar = max(1.0, chi.mass) * b.gamma_d_bar
            bound = 2 * nat + cd_bar + b.gamma_b_bar
            beta_c = model.beta(chi.traits) / zeta
            channel = None
            while channel is None:
                t_next = t + rng.exponential(1.0 / (ntot * bound))
                n_prop += 1
                if t_next > T:
                    break
                t = t_next
                i = int(np.searchsorted(cum, rng.integers(ntot), side="right"))
                channel = _thin(chi, model, rng, cum, ntot, i, rng.random() * bound, nat, cd_bar,
                                beta_c[i])
            if channel is None:
                observe_until(math.inf)
                if on_hold is not None:
                    on_hold(chi, T - t_last)
                t = T
                break
            observe_until(t)
            if on_hold is not None:
                on_hold(chi, t - t_last)
            rec = _apply_channel(chi, model, rng, t, N, forest, i, channel)
        n_events += 1
        if record_events:
            events.append(rec)
        if check_invariants:
            chi.check_invariants()
            if forest is not None:
                forest.check()
        if n_events >= max_events:
            raise RateExplosionGuard(f"event cap {max_events} reached at t={t:g}")
    return Trajectory(times, snaps, chi, t, extinct_at is not None, extinct_at, n_events, n_prop,
                      events, forest)


# coupled comparison


@dataclass
class DominationReport:
    held: bool
    n_events: int
    n_checks: int
    violations: int
    equal_throughout: bool
    mass1: float
    mass2: float
    min_gap: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _probe_kernel(kernel, ts_points):
    m = np.array([0.0, 0.1, 0.5, 1.0, 2.0, 10.0])[:, None, None, None]
    r = np.array([0.0, 0.1, 1.0, 5.0])[None, :, None, None]
    k1 = ts_points[None, None, :, None]
    k2 = ts_points[None, None, None, :]
    return np.stack([kernel(mm, r, k1, k2) for mm in m[:, 0, 0, 0]])


def check_domination_preconditions(model1: RateModel, model2: RateModel) -> None:
    """Require equal beta, p and mutation, gamma2 ordered against gamma1 and focal-only."""
    if model1.beta.to_dict() != model2.beta.to_dict():
        raise PreconditionViolated("both models need the same natural branching rate")
    if model1.p != model2.p or model1.mutation != model2.mutation:
        raise PreconditionViolated("both models need the same mutation mechanism")
    for kernel in (model2.gamma_birth, model2.gamma_death):
        if not getattr(kernel, "focal_only", False):
            raise PreconditionViolated("model 2 kernels may depend on the focal trait only")
    pts = (model1.trait_space.points().astype(float) if model1.trait_space.is_finite
           else np.linspace(-4, 4, 17))
    if model1.trait_space.is_finite:
        pts = pts.astype(np.int64)
    if np.any(_probe_kernel(model2.gamma_birth, pts) < _probe_kernel(model1.gamma_birth, pts) - 1e-12):
        raise PreconditionViolated("need gamma2_birth >= gamma1_birth pointwise")
    d2 = _probe_kernel(model2.gamma_death, pts)
    b2 = _probe_kernel(model2.gamma_birth, pts)
    if np.any(d2 > _probe_kernel(model1.gamma_death, pts) + 1e-12):
        raise PreconditionViolated("need gamma2_death <= gamma1_death pointwise")
    # population 1 never outweighs population 2, so model 2 must not gain deaths or lose births with mass
    if np.any(np.diff(d2, axis=0) > 1e-12) or np.any(np.diff(b2, axis=0) < -1e-12):
        raise PreconditionViolated("model 2 needs gamma_death non-increasing and gamma_birth "
                                   "non-decreasing in the mass")


def coupled_domination_run(chi0: FinitePhylogeny, model1: RateModel, model2: RateModel, T: float,
                           rng: np.random.Generator, N: int | None = None,
                           max_events: int = DEFAULT_EVENT_CAP) -> DominationReport:
    """Run both models on one proposal stream so that population 1 stays inside population 2.

    Both populations share one clan registry with counts ``c1 <= c2``. Proposals
    arrive at the bound rate for population 2; a proposed individual belongs to
    population 1 with probability ``c1/c2`` of its clan. One uniform decides the
    channel and acceptance for both models, and accepted births share their
    mutation draw. After every event the subset relation ``c1 <= c2`` is checked.
    """
    check_domination_preconditions(model1, model2)
    validate(model1)
    validate(model2)
    N = _scale(chi0) if N is None else N
    reg = chi0.copy()
    c1 = reg.counts.copy()
    zeta = reg.zeta
    b1, b2 = model1.bounds, model2.bounds
    nat = max(b1.beta_bar, b2.beta_bar) / zeta
    t = 0.0
    n_events = n_checks = violations = 0
    equal = True
    min_gap = math.inf

    def comp(kernel, counts, i):
        tot = counts.sum()
        if tot == 0:
            return 0.0
        w = counts / tot
        m = zeta * tot
        g = kernel(m, reg.physical()[:, i], reg.traits, reg.traits[i])
        return float(w @ g)

    while reg.counts.sum() > 0:
        c2 = reg.counts
        n2 = int(c2.sum())
        m1, m2 = zeta * c1.sum(), zeta * n2
        dbar = max(max(1.0, m1) * b1.gamma_d_bar, max(1.0, m2) * b2.gamma_d_bar)
        bbar = max(b1.gamma_b_bar, b2.gamma_b_bar)
        bound = 2 * nat + dbar + bbar
        t += rng.exponential(1.0 / (n2 * bound))
        if t > T:
            break
        i = int(np.searchsorted(np.cumsum(c2), rng.integers(n2), side="right"))
        shared = rng.random() * c2[i] < c1[i]
        u = rng.random() * bound
        beta_i = float(model1.beta(reg.traits[i])) / zeta
        if u < nat + dbar:
            r2 = beta_i + comp(model2.gamma_death, c2, i)
            r1 = beta_i + comp(model1.gamma_death, c1, i) if shared else -1.0
            kill2, kill1 = u < r2, shared and u < r1
            if not (kill1 or kill2):
                continue
            if kill1:
                c1[i] -= 1
            if kill2:
                reg.counts[i] -= 1
        else:
            u -= nat + dbar
            r2 = beta_i + comp(model2.gamma_birth, c2, i)
            r1 = beta_i + comp(model1.gamma_birth, c1, i) if shared else -1.0
            born2, born1 = u < r2, shared and u < r1
            if not (born1 or born2):
                continue
            mutated, trait = draw_birth(model1, reg.traits[i], N, rng)
            if mutated:
                reg.add_mutant(i, trait)
                reg.counts[-1] = int(born2)
                c1 = np.append(c1, int(born1))
            else:
                reg.counts[i] += int(born2)
                c1[i] += int(born1)
        n_events += 1
        n_checks += 1
        ok = bool(np.all(c1 <= reg.counts))
        violations += int(not ok)
        equal = equal and bool(np.all(c1 == reg.counts))
        min_gap = min(min_gap, zeta * float(reg.counts.sum() - c1.sum()))
        # clans empty in population 2 leave the registry (after the check above)
        if np.any(reg.counts == 0):
            keep = reg.counts > 0
            c1 = c1[keep]
            reg._keep(keep)
        if n_events >= max_events:
            raise RateExplosionGuard(f"event cap {max_events} reached at t={t:g}")
    return DominationReport(violations == 0, n_events, n_checks, violations, equal,
                            zeta * float(c1.sum()), zeta * float(reg.counts.sum()),
                            0.0 if min_gap == math.inf else min_gap)
