"""Finite marked metric measure spaces on the (ell, zeta) lattice.

A state is a list of clans. Each clan carries a clone count ``n_x``, a trait
and integer distances (in units of ``ell``) to the other clans. Individuals
with distance zero are always collapsed into one clan and empty clans are
never kept, so the clan list is a faithful description of the measure.
"""

from __future__ import annotations

import itertools
import json
import math
import os
from dataclasses import dataclass
from typing import Any, Iterable, NamedTuple

import numpy as np

DEBUG_CHECKS = bool(os.environ.get("PHYLOSIM_DEBUG"))


def set_debug(flag: bool) -> None:
    """Toggle metric assertions after every mutation of a state."""
    global DEBUG_CHECKS
    DEBUG_CHECKS = bool(flag)


class EmptyState(ValueError):
    """Raised by operations that need at least one clan."""


class ZeroMass(ValueError):
    """Raised when the sampling measure of an empty state is requested."""


class InvalidState(ValueError):
    """Raised when a state violates the lattice or metric invariants."""


@dataclass(frozen=True)
class TraitSpace:
    """Trait space descriptor: the real line or a finite labelled set."""

    kind: str = "real"
    size: int = 0
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("real", "finite"):
            raise ValueError(f"unknown trait space kind {self.kind!r}")
        if self.kind == "finite":
            if self.size < 1:
                raise ValueError("finite trait space needs size >= 1")
            if self.labels and len(self.labels) != self.size:
                raise ValueError("labels must match size")

    @classmethod
    def real(cls) -> "TraitSpace":
        return cls("real")

    @classmethod
    def finite(cls, size: int, labels: Iterable[str] = ()) -> "TraitSpace":
        return cls("finite", int(size), tuple(labels))

    @property
    def is_finite(self) -> bool:
        return self.kind == "finite"

    @property
    def dtype(self):
        return np.int64 if self.is_finite else np.float64

    def check(self, value) -> None:
        if self.is_finite:
            if int(value) != value or not 0 <= int(value) < self.size:
                raise ValueError(f"finite trait {value!r} outside 0..{self.size - 1}")
        elif not math.isfinite(float(value)):
            raise ValueError(f"real trait {value!r} is not finite")

    def points(self) -> np.ndarray:
        """All traits of a finite space."""
        if not self.is_finite:
            raise ValueError("a real trait space has no finite point list")
        return np.arange(self.size, dtype=np.int64)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind}
        if self.is_finite:
            d["size"] = self.size
            if self.labels:
                d["labels"] = list(self.labels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TraitSpace":
        unknown = set(d) - {"kind", "size", "labels"}
        if unknown:
            raise ValueError(f"unknown trait space keys: {sorted(unknown)}")
        return cls(d.get("kind", "real"), int(d.get("size", 0)), tuple(d.get("labels", ())))


class FinitePhylogeny:
    """A finite state: clans with counts, traits and integer unit distances.

    Instances are single-owner builders. Mutating methods update the arrays in
    place; use :meth:`copy` to take a snapshot before handing a state on.

    Args:
        ell: distance unit.
        zeta: mass unit.
        counts: clone count per clan (all >= 1).
        traits: trait per clan.
        dist: symmetric integer matrix of unit distances.
        trait_space: the trait space the traits live in.
        ids: optional stable clan identifiers.
    """

    __slots__ = ("ell", "zeta", "counts", "traits", "dist", "ids", "next_id", "trait_space")

    def __init__(self, ell, zeta, counts, traits, dist, trait_space=None, ids=None, check=True):
        self.ell = float(ell)
        self.zeta = float(zeta)
        self.trait_space = trait_space if trait_space is not None else TraitSpace.real()
        self.counts = np.asarray(counts, dtype=np.int64).reshape(-1).copy()
        c = self.counts.size
        self.traits = np.asarray(traits, dtype=self.trait_space.dtype).reshape(-1).copy()
        self.dist = np.asarray(dist, dtype=np.int64).reshape(c, c).copy() if c else np.zeros((0, 0), np.int64)
        if ids is None:
            self.ids = np.arange(c, dtype=np.int64)
        else:
            self.ids = np.asarray(ids, dtype=np.int64).reshape(-1).copy()
        self.next_id = int(self.ids.max()) + 1 if c else 0
        if check:
            self.check_invariants()

    # construction helpers

    @classmethod
    def empty(cls, ell=1.0, zeta=1.0, trait_space=None) -> "FinitePhylogeny":
        ts = trait_space if trait_space is not None else TraitSpace.real()
        return cls(ell, zeta, [], np.zeros(0, ts.dtype), np.zeros((0, 0)), ts)

    @classmethod
    def single(cls, count, trait=0.0, ell=1.0, zeta=1.0, trait_space=None) -> "FinitePhylogeny":
        return cls(ell, zeta, [count], [trait], [[0]], trait_space)

    def copy(self) -> "FinitePhylogeny":
        new = FinitePhylogeny.__new__(FinitePhylogeny)
        new.ell, new.zeta, new.trait_space = self.ell, self.zeta, self.trait_space
        new.counts = self.counts.copy()
        new.traits = self.traits.copy()
        new.dist = self.dist.copy()
        new.ids = self.ids.copy()
        new.next_id = self.next_id
        return new

    # basic quantities

    @property
    def n_clans(self) -> int:
        return int(self.counts.size)

    @property
    def n_individuals(self) -> int:
        return int(self.counts.sum())

    @property
    def mass(self) -> float:
        return self.zeta * float(self.counts.sum())

    def is_empty(self) -> bool:
        return self.counts.size == 0

    def physical(self) -> np.ndarray:
        """Physical distance matrix ``ell * dist``."""
        return self.ell * self.dist.astype(np.float64)

    def index_of(self, clan_id: int) -> int:
        hits = np.nonzero(self.ids == clan_id)[0]
        if hits.size == 0:
            raise KeyError(f"no clan with id {clan_id}")
        return int(hits[0])

    # invariants

    def check_invariants(self) -> None:
        c = self.counts.size
        if self.ell <= 0 or self.zeta <= 0:
            raise InvalidState("ell and zeta must be positive")
        if self.traits.size != c or self.dist.shape != (c, c) or self.ids.size != c:
            raise InvalidState("clan arrays have inconsistent lengths")
        if c == 0:
            return
        if np.any(self.counts < 1):
            raise InvalidState("every clan needs count >= 1")
        if len(set(self.ids.tolist())) != c:
            raise InvalidState("duplicate clan ids")
        d = self.dist
        if np.any(d != d.T):
            raise InvalidState("distance matrix is not symmetric")
        if np.any(np.diag(d) != 0):
            raise InvalidState("distance matrix has non-zero diagonal")
        off = d[~np.eye(c, dtype=bool)]
        if np.any(off < 1):
            raise InvalidState("distinct clans must be at distance >= 1 unit")
        # triangle inequality: d[i,k] <= d[i,j] + d[j,k] for all j
        via = (d[:, :, None] + d[None, :, :]).min(axis=1)
        if np.any(d > via):
            raise InvalidState("triangle inequality violated")
        for t in self.traits:
            self.trait_space.check(t)

    # in-place updates

    def add_clone(self, i: int, k: int = 1) -> None:
        """Add ``k`` individuals to clan ``i``."""
        self.counts[i] += k

    def add_mutant(self, parent: int, trait) -> int:
        """Append a one-individual clan at unit distance ``dist[parent] + 1``.

        Returns the index of the new clan.
        """
        row = self.dist[parent] + 1
        row[parent] = 1
        return self._append(row, trait, 1)

    def _append(self, row: np.ndarray, trait, count: int) -> int:
        c = self.counts.size
        d = np.empty((c + 1, c + 1), dtype=np.int64)
        d[:c, :c] = self.dist
        d[c, :c] = row
        d[:c, c] = row
        d[c, c] = 0
        self.dist = d
        self.counts = np.append(self.counts, np.int64(count))
        self.traits = np.append(self.traits, np.asarray(trait, dtype=self.traits.dtype))
        self.ids = np.append(self.ids, np.int64(self.next_id))
        self.next_id += 1
        if DEBUG_CHECKS:
            self.check_invariants()
        return c

    def remove_one(self, i: int) -> bool:
        """Remove one individual of clan ``i``; returns True if the clan vanished."""
        if self.is_empty():
            raise EmptyState("cannot remove from the empty state")
        self.counts[i] -= 1
        if self.counts[i] > 0:
            return False
        self._drop(i)
        return True

    def _drop(self, i: int) -> None:
        keep = np.ones(self.counts.size, dtype=bool)
        keep[i] = False
        self._keep(keep)

    def _keep(self, keep: np.ndarray) -> None:
        self.counts = self.counts[keep]
        self.traits = self.traits[keep]
        self.ids = self.ids[keep]
        self.dist = self.dist[np.ix_(keep, keep)]
        if DEBUG_CHECKS:
            self.check_invariants()

    def permuted(self, perm: Iterable[int]) -> "FinitePhylogeny":
        """Copy with the clan list reordered by ``perm``."""
        p = np.asarray(list(perm), dtype=np.int64)
        new = self.copy()
        new.counts = self.counts[p]
        new.traits = self.traits[p]
        new.ids = self.ids[p]
        new.dist = self.dist[np.ix_(p, p)]
        return new

    # serialization

    def to_dict(self) -> dict:
        return {
            "ell": self.ell,
            "zeta": self.zeta,
            "trait_space": self.trait_space.to_dict(),
            "clans": self.ids.tolist(),
            "counts": self.counts.tolist(),
            "traits": self.traits.tolist(),
            "dist": self.dist.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FinitePhylogeny":
        unknown = set(d) - {"ell", "zeta", "trait_space", "clans", "counts", "traits", "dist"}
        if unknown:
            raise ValueError(f"unknown state keys: {sorted(unknown)}")
        ts = TraitSpace.from_dict(d.get("trait_space", {"kind": "real"}))
        counts = d["counts"]
        c = len(counts)
        dist = d.get("dist", [[0]] if c == 1 else None)
        if dist is None:
            raise ValueError("state needs a 'dist' matrix")
        return cls(d["ell"], d["zeta"], counts, d["traits"], np.asarray(dist).reshape(c, c), ts,
                   ids=d.get("clans"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FinitePhylogeny":
        return cls.from_dict(json.loads(text))

    def __repr__(self) -> str:
        return (f"FinitePhylogeny(clans={self.n_clans}, individuals={self.n_individuals}, "
                f"ell={self.ell:g}, zeta={self.zeta:g})")


def total_mass(chi: FinitePhylogeny) -> float:
    """Total mass ``zeta * sum(n_x)``; zero for the empty state."""
    return chi.mass


def sampling_measure_weights(chi: FinitePhylogeny) -> np.ndarray:
    """Normalized clan weights ``n_x / sum(n)``, aligned with the clan list."""
    tot = chi.counts.sum()
    if tot == 0:
        raise ZeroMass("sampling measure of a zero-mass state")
    return chi.counts / float(tot)


@dataclass(frozen=True)
class SampledMatrix:
    """A marked distance matrix drawn from a state."""

    n: int
    r: np.ndarray
    kappas: np.ndarray

    def check(self, tol: float = 1e-12) -> None:
        r = self.r
        if r.shape != (self.n, self.n) or self.kappas.shape != (self.n,):
            raise InvalidState("sampled matrix has wrong shape")
        if np.any(np.abs(r - r.T) > tol) or np.any(np.abs(np.diag(r)) > tol) or np.any(r < -tol):
            raise InvalidState("sampled matrix is not a pseudo-metric")
        via = (r[:, :, None] + r[None, :, :]).min(axis=1)
        if np.any(r > via + tol):
            raise InvalidState("sampled matrix violates the triangle inequality")

    def to_phylip(self) -> str:
        """Square PHYLIP matrix with names S1..Sn and six-decimal entries."""
        lines = [f"{self.n}"]
        for i in range(self.n):
            vals = " ".join(f"{v:.6f}" for v in self.r[i])
            lines.append(f"{'S' + str(i + 1):<10}{vals}")
        return "\n".join(lines) + "\n"


def sample_clans(chi: FinitePhylogeny, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` clan indices i.i.d. from the sampling measure."""
    w = sampling_measure_weights(chi)
    return rng.choice(w.size, size=n, p=w)


def sample_distance_matrix(chi: FinitePhylogeny, n: int, rng: np.random.Generator) -> SampledMatrix:
    """Draw an ``n``-sample and return its physical distances and traits."""
    if n < 1:
        raise ValueError("sample size must be positive")
    idx = sample_clans(chi, n, rng)
    r = chi.ell * chi.dist[np.ix_(idx, idx)].astype(np.float64)
    return SampledMatrix(n, r, chi.traits[idx].copy())


class Cover(NamedTuple):
    number: int
    mode: str
    centers: tuple[int, ...]


def _ball_masks(r: np.ndarray, eps: float) -> list[int]:
    c = r.shape[0]
    inside = r <= eps * (1 + 1e-12)
    return [sum(1 << j for j in range(c) if inside[i, j]) for i in range(c)]


def _greedy_cover(balls: list[int], target: int) -> list[int]:
    covered, chosen = 0, []
    while covered & target != target:
        best = max(range(len(balls)), key=lambda i: bin(balls[i] & target & ~covered).count("1"))
        chosen.append(best)
        covered |= balls[best]
    return chosen


def _exact_cover(balls: list[int]) -> list[int]:
    c = len(balls)
    full = (1 << c) - 1
    coverers = [[i for i in range(c) if balls[i] >> j & 1] for j in range(c)]
    best = _greedy_cover(balls, full)
    maxball = max(bin(b).count("1") for b in balls)

    def rec(covered: int, chosen: list[int]) -> None:
        nonlocal best
        if covered == full:
            if len(chosen) < len(best):
                best = list(chosen)
            return
        left = c - bin(covered).count("1")
        if len(chosen) + -(-left // maxball) >= len(best):
            return
        # branch on the uncovered clan with the fewest covering balls
        free = [j for j in range(c) if not covered >> j & 1]
        j = min(free, key=lambda k: len(coverers[k]))
        opts = sorted(coverers[j], key=lambda i: -bin(balls[i] & ~covered).count("1"))
        for i in opts:
            chosen.append(i)
            rec(covered | balls[i], chosen)
            chosen.pop()

    rec(0, [])
    return sorted(best)


def cover_clans(chi: FinitePhylogeny, eps: float, exact_limit: int = 20) -> Cover:
    """Minimal cover of all clans by closed ``eps``-balls centred at clans.

    Exact search up to ``exact_limit`` clans, greedy beyond.
    """
    if chi.is_empty():
        raise EmptyState("covering number of an empty state")
    balls = _ball_masks(chi.physical(), eps)
    if chi.n_clans <= exact_limit:
        centers = _exact_cover(balls)
        return Cover(len(centers), "exact", tuple(centers))
    centers = _greedy_cover(balls, (1 << chi.n_clans) - 1)
    return Cover(len(centers), "greedy", tuple(sorted(centers)))


def covering_number(chi: FinitePhylogeny, eps: float) -> int:
    """Number of ``eps``-balls needed to cover the clans (see :func:`cover_clans`)."""
    return cover_clans(chi, eps).number


def in_trait_set(traits: np.ndarray, K0) -> np.ndarray:
    """Boolean mask of traits inside ``K0``.

    ``K0`` is a ``(lo, hi)`` interval, a set of finite trait indices, or a
    predicate on a trait array.
    """
    if callable(K0):
        return np.asarray(K0(traits), dtype=bool)
    if isinstance(K0, (set, frozenset, list)):
        return np.isin(traits, list(K0))
    lo, hi = K0
    return (traits >= lo) & (traits <= hi)


class CompactnessReport(NamedTuple):
    mass: float
    trait_escape_mass: float
    diameter: float
    covering_number: int


def compactness_report(chi: FinitePhylogeny, eps: float, K0) -> CompactnessReport:
    """Mass, mass with trait outside ``K0``, diameter and ``eps``-covering number."""
    if chi.is_empty():
        return CompactnessReport(0.0, 0.0, 0.0, 0)
    outside = ~in_trait_set(chi.traits, K0)
    escape = chi.zeta * float(chi.counts[outside].sum())
    diam = chi.ell * float(chi.dist.max())
    return CompactnessReport(chi.mass, escape, diam, covering_number(chi, eps))


def merge_or_insert(chi: FinitePhylogeny, unit_row, trait, count: int = 1) -> int:
    """Add ``count`` individuals at the point with unit distances ``unit_row``.

    If the row puts the point at distance zero from an existing clan, that
    clan's count grows; otherwise a new clan is appended. Returns the clan index.
    """
    row = np.asarray(unit_row, dtype=np.int64).reshape(-1)
    if row.size != chi.n_clans:
        raise ValueError("distance row length does not match the clan count")
    zero = np.nonzero(row == 0)[0]
    if zero.size:
        i = int(zero[0])
        if chi.traits[i] != trait:
            raise InvalidState("distance-0 insertion with a different trait")
        chi.add_clone(i, count)
        return i
    chi.trait_space.check(trait)
    return chi._append(row, trait, count)


def prune_empty(chi: FinitePhylogeny) -> FinitePhylogeny:
    """Drop clans whose count is zero (in place); returns ``chi``."""
    if np.any(chi.counts <= 0):
        chi._keep(chi.counts > 0)
    return chi


def is_isometric(a: FinitePhylogeny, b: FinitePhylogeny, tol: float = 1e-12) -> bool:
    """Exact check for a mass- and trait-preserving isometry (up to 8 clans)."""
    if a.n_clans != b.n_clans:
        return False
    c = a.n_clans
    if c > 8:
        raise ValueError("isometry search is limited to 8 clans")
    ma, mb = a.zeta * a.counts, b.zeta * b.counts
    ra, rb = a.physical(), b.physical()

    def ok(i, j):
        return abs(ma[i] - mb[j]) <= tol and a.traits[i] == b.traits[j]

    for perm in itertools.permutations(range(c)):
        if all(ok(i, perm[i]) for i in range(c)):
            p = np.asarray(perm)
            if np.all(np.abs(ra - rb[np.ix_(p, p)]) <= tol):
                return True
    return c == 0


def states_from(geometry: dict, N: int, trait_space: TraitSpace | None = None) -> FinitePhylogeny:
    """Embed a fixed clan geometry at scale ``N`` (``ell = zeta = 1/N``).

    ``geometry`` has keys ``masses`` (per clan), ``traits`` and ``distances``
    (physical). Unit distances are ``round(N * r)`` and counts ``round(N * m)``,
    clipped to at least 1.
    """
    masses = np.asarray(geometry["masses"], dtype=float)
    r = np.asarray(geometry["distances"], dtype=float).reshape(masses.size, masses.size)
    counts = np.maximum(1, np.rint(masses * N)).astype(np.int64)
    dist = np.rint(r * N).astype(np.int64)
    np.fill_diagonal(dist, 0)
    off = ~np.eye(masses.size, dtype=bool)
    dist[off] = np.maximum(dist[off], 1)
    return FinitePhylogeny(1.0 / N, 1.0 / N, counts, geometry["traits"], dist, trait_space)


def kappa_marginal(chi: FinitePhylogeny) -> tuple[np.ndarray, np.ndarray]:
    """Trait marginal ``zeta * sum n_x delta_kappa`` as (traits, masses)."""
    return chi.traits.copy(), chi.zeta * chi.counts.astype(np.float64)

