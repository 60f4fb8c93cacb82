"""Polynomial test functions ``F(chi) = E_{nu^chi}[h(m, r, kappa)]`` of product form.

``h = g(m) * phi(r) * f(kappa)`` with ``phi(r) = exp(-sum_{i<j} lambda_ij r_ij)``
and ``f`` either a product of one-coordinate trait functions or a table on a
finite trait space. Exact evaluation contracts one clan-indexed tensor per
factor with ``numpy.einsum``; the same contraction with per-position
modifications is reused by the generators.
"""

from __future__ import annotations

import json
import math
import string
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .state import FinitePhylogeny, sampling_measure_weights, sample_clans


class InsufficientArity(ValueError):
    """Index shift asked for more coordinates than available."""


class IndexOutOfRange(ValueError):
    """Sample index outside 1..n (or l1 == l2)."""


# mass functions


@dataclass(frozen=True)
class PowerExp:
    """``g(m) = m^a exp(-lam m)``."""

    a: int = 0
    lam: float = 0.0

    def __post_init__(self):
        if int(self.a) != self.a or self.a < 0 or self.lam < 0:
            raise ValueError("need a non-negative integer a and lam >= 0")

    def deriv(self, m: float, k: int = 0) -> float:
        """k-th derivative at ``m`` (Leibniz rule on the two factors)."""
        m = float(m)
        total = 0.0
        for j in range(k + 1):
            if j > self.a:
                break
            fall = math.prod(range(self.a - j + 1, self.a + 1))
            power = m ** (self.a - j) if self.a - j > 0 else 1.0
            total += math.comb(k, j) * fall * power * (-self.lam) ** (k - j)
        return total * math.exp(-self.lam * m)

    def __call__(self, m: float) -> float:
        return self.deriv(m, 0)

    @property
    def smooth_bounded(self) -> bool:
        return self.lam > 0 or self.a == 0

    def to_dict(self):
        return {"kind": "power_exp", "a": self.a, "lam": self.lam}


@dataclass(frozen=True)
class CappedPower:
    """``g(m) = min(m, L)^q``; test-only (not smooth at ``L``)."""

    L: float
    q: int = 1
    smooth_bounded = False

    def deriv(self, m: float, k: int = 0) -> float:
        m = float(m)
        if m >= self.L:
            return self.L**self.q if k == 0 else 0.0
        if k > self.q:
            return 0.0
        return math.prod(range(self.q - k + 1, self.q + 1)) * m ** (self.q - k)

    def __call__(self, m: float) -> float:
        return self.deriv(m, 0)

    def to_dict(self):
        return {"kind": "capped_power", "L": self.L, "q": self.q}


def mass_function_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "power_exp":
        return PowerExp(int(d.get("a", 0)), float(d.get("lam", 0.0)))
    if kind == "capped_power":
        return CappedPower(float(d["L"]), int(d.get("q", 1)))
    raise ValueError(f"unknown mass function {kind!r}")


# one-coordinate trait functions


@dataclass(frozen=True)
class ConstantTrait:
    c: float = 1.0
    is_constant = True
    bounded = True

    def __call__(self, k):
        return np.full(np.shape(k), float(self.c))

    def d2(self, k):
        return np.zeros(np.shape(k))

    def to_dict(self):
        return {"kind": "constant", "c": self.c}


@dataclass(frozen=True)
class Lorentzian:
    """``1 / (1 + ((k - center) / scale)^2)``."""

    center: float = 0.0
    scale: float = 1.0
    is_constant = False
    bounded = True

    def __call__(self, k):
        u = (np.asarray(k, dtype=float) - self.center) / self.scale
        return 1.0 / (1.0 + u * u)

    def d2(self, k):
        u = (np.asarray(k, dtype=float) - self.center) / self.scale
        return (6.0 * u * u - 2.0) / (1.0 + u * u) ** 3 / self.scale**2

    def to_dict(self):
        return {"kind": "lorentzian", "center": self.center, "scale": self.scale}


@dataclass(frozen=True)
class Cosine:
    """``cos(freq * k + phase)``."""

    freq: float = 1.0
    phase: float = 0.0
    is_constant = False
    bounded = True

    def __call__(self, k):
        return np.cos(self.freq * np.asarray(k, dtype=float) + self.phase)

    def d2(self, k):
        return -self.freq**2 * self(k)

    def to_dict(self):
        return {"kind": "cosine", "freq": self.freq, "phase": self.phase}


@dataclass(frozen=True)
class Quadratic:
    """``k^2``; unbounded, for operator checks only."""

    is_constant = False
    bounded = False

    def __call__(self, k):
        k = np.asarray(k, dtype=float)
        return k * k

    def d2(self, k):
        return np.full(np.shape(k), 2.0)

    def to_dict(self):
        return {"kind": "quadratic"}


@dataclass(frozen=True)
class TableTrait:
    """Arbitrary function on a finite trait space."""

    values: tuple[float, ...]
    bounded = True

    @property
    def is_constant(self) -> bool:
        return len(set(self.values)) <= 1

    def __call__(self, k):
        return np.asarray(self.values, dtype=float)[np.asarray(k, dtype=np.int64)]

    def to_dict(self):
        return {"kind": "table", "values": list(self.values)}


def trait_function_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "constant":
        return ConstantTrait(float(d.get("c", 1.0)))
    if kind == "lorentzian":
        return Lorentzian(float(d.get("center", 0.0)), float(d.get("scale", 1.0)))
    if kind == "cosine":
        return Cosine(float(d.get("freq", 1.0)), float(d.get("phase", 0.0)))
    if kind == "quadratic":
        return Quadratic()
    if kind == "table":
        return TableTrait(tuple(float(v) for v in d["values"]))
    raise ValueError(f"unknown trait function {kind!r}")


# test functions


@dataclass(frozen=True)
class TestFunction:
    """``F^h`` with ``h = g(m) * exp(-sum lam_ij r_ij) * f(kappa)``.

    Args:
        n: declared degree.
        g: mass function.
        lam: ``n x n`` symmetric matrix of distance rates (diagonal ignored).
        f: tuple of ``n`` one-coordinate trait functions (product form), or an
            ``n``-dimensional array indexed by finite traits.
        name: label used in reports.
    """

    __test__ = False  # keep pytest from collecting this class

    n: int
    g: Any
    lam: np.ndarray = field(default=None)
    f: Any = None
    name: str = "F"

    def __post_init__(self):
        lam = np.zeros((self.n, self.n)) if self.lam is None else np.asarray(self.lam, dtype=float)
        if lam.shape != (self.n, self.n):
            raise ValueError("lam must be n x n")
        lam = np.triu(lam, 1)
        lam = lam + lam.T
        if np.any(lam < 0):
            raise ValueError("distance rates must be non-negative")
        object.__setattr__(self, "lam", lam)
        f = self.f
        if f is None:
            f = tuple(ConstantTrait() for _ in range(self.n))
        if isinstance(f, (list, tuple)):
            f = tuple(f)
            if len(f) != self.n:
                raise ValueError("need one trait function per coordinate")
        else:
            f = np.asarray(f, dtype=float)
            if f.ndim != self.n:
                raise ValueError("trait table must have n dimensions")
        object.__setattr__(self, "f", f)
        if self.g(0.0) != 0.0 and not self.f_is_constant:
            raise ValueError("g(0) != 0 needs a constant trait part so that h(0, ., .) is constant")

    @property
    def is_product(self) -> bool:
        return isinstance(self.f, tuple)

    @property
    def f_is_constant(self) -> bool:
        if self.is_product:
            return all(getattr(fi, "is_constant", False) for fi in self.f)
        return bool(np.all(self.f == self.f.flat[0])) if self.f.size else True

    @property
    def f_constant_value(self) -> float:
        if self.is_product:
            return float(np.prod([fi(np.zeros(1, dtype=np.int64))[0] for fi in self.f]))
        return float(self.f.flat[0]) if self.f.size else 1.0

    @property
    def h0(self) -> float:
        """Value on the empty state: ``g(0) * phi(0) * f`` (``f`` constant when ``g(0) != 0``)."""
        g0 = self.g(0.0)
        return 0.0 if g0 == 0.0 else g0 * self.f_constant_value

    def pairs(self):
        for i in range(self.n):
            for j in range(i + 1, self.n):
                if self.lam[i, j] > 0:
                    yield i, j

    def psi(self, r: np.ndarray, kappas: np.ndarray) -> np.ndarray:
        """``phi(r) f(kappa)`` on stacked samples ``r (S, n, n)``, ``kappas (S, n)``."""
        r = np.asarray(r, dtype=float)
        kappas = np.asarray(kappas)
        out = np.exp(-0.5 * np.einsum("ij,sij->s", self.lam, r))
        if self.is_product:
            for i, fi in enumerate(self.f):
                out = out * fi(kappas[:, i])
        else:
            out = out * self.f[tuple(kappas[:, i].astype(np.int64) for i in range(self.n))]
        return out

    def h(self, m: float, r: np.ndarray, kappas: np.ndarray) -> float:
        """``h`` on one sample (``r`` n x n, ``kappas`` length n)."""
        return float(self.g(m) * self.psi(np.asarray(r)[None], np.asarray(kappas)[None])[0])

    def padded(self) -> "TestFunction":
        """Same polynomial declared with one extra unused coordinate."""
        lam = np.zeros((self.n + 1, self.n + 1))
        lam[: self.n, : self.n] = self.lam
        if self.is_product:
            f = self.f + (ConstantTrait(),)
        else:
            if self.f.ndim == 0:
                raise ValueError("cannot pad a degree-0 trait table: trait count unknown")
            f = np.repeat(self.f[..., None], self.f.shape[0], axis=-1)
        return TestFunction(self.n + 1, self.g, lam, f, self.name + "+pad")

    def to_dict(self) -> dict:
        if self.is_product:
            f = {"product": [fi.to_dict() for fi in self.f]}
        else:
            f = {"table": self.f.tolist()}
        return {"name": self.name, "n": self.n, "g": self.g.to_dict(),
                "lam": self.lam.tolist(), "f": f}

    @classmethod
    def from_dict(cls, d: dict) -> "TestFunction":
        unknown = set(d) - {"name", "n", "g", "lam", "f"}
        if unknown:
            raise ValueError(f"unknown test-function keys: {sorted(unknown)}")
        n = int(d["n"])
        fd = d.get("f", {})
        if "table" in fd:
            f = np.asarray(fd["table"], dtype=float)
        elif "product" in fd:
            f = tuple(trait_function_from_dict(x) for x in fd["product"])
        else:
            f = None
        return cls(n, mass_function_from_dict(d["g"]), d.get("lam"), f, d.get("name", "F"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TestFunction":
        return cls.from_dict(json.loads(text))


# contraction engine


_LETTERS = string.ascii_letters


@dataclass
class Contraction:
    """Exact ``E_{mu-bar^n}[psi]`` with per-position modifications.

    Args:
        F: the test function.
        w: clan weights (need not sum to one).
        R: physical clan distance matrix.
        kappa: clan traits.
    """

    F: TestFunction
    w: np.ndarray
    R: np.ndarray
    kappa: np.ndarray

    def __post_init__(self):
        F = self.F
        self._E = {(i, j): np.exp(-F.lam[i, j] * self.R) for i, j in F.pairs()}
        if F.is_product:
            self._fv = [fi(self.kappa) for fi in F.f]
            self._unit = [isinstance(fi, ConstantTrait) and fi.c == 1.0 for fi in F.f]

    def table_on_clans(self, table: np.ndarray) -> np.ndarray:
        idx = self.kappa.astype(np.int64)
        return table[np.ix_(*([idx] * self.F.n))] if self.F.n else table

    def run(self, vec=None, fsub=None, alias=None, table=None, pinned=(), drop_f=(), pair_scale=None,
            extra=(), skip_f=False):
        """Contract; returns a scalar, or a vector over clans when ``pinned`` is non-empty.

        Args:
            vec: ``{l: v}`` extra clan vectors multiplied at position ``l``.
            fsub: ``{l: v}`` replacement clan values of ``f_l`` (product form).
            alias: ``(l1, l2)``: position ``l2`` reuses position ``l1``'s sample.
            table: replacement trait table (table form).
            pinned: positions tied to one output clan, carrying no weight.
            drop_f: positions whose trait factor is left out.
            pair_scale: ``{(i, j): factor}`` multiplying pair factors.
            extra: further ``(operand, subscripts)`` pairs.
            skip_f: leave out the trait part entirely (callers pass it in ``extra``).
        """
        F = self.F
        n = F.n
        vec = vec or {}
        fsub = fsub or {}
        letter = [_LETTERS[i] for i in range(n)]
        out = "z" if pinned else ""
        for l in pinned:
            letter[l] = "Z"
        if alias is not None:
            l1, l2 = alias
            letter[l2] = letter[l1]
        ops, subs = [], []
        seen = set()
        for l in range(n):
            if l in pinned or (alias is not None and l == alias[1]):
                continue
            if letter[l] not in seen:
                ops.append(self.w)
                subs.append(letter[l])
                seen.add(letter[l])
        for l, v in vec.items():
            ops.append(v)
            subs.append(letter[l])
        if skip_f:
            pass
        elif F.is_product:
            for l in range(n):
                if l in drop_f or (self._unit[l] and l not in fsub):
                    continue
                ops.append(fsub.get(l, self._fv[l]))
                subs.append(letter[l])
        else:
            ops.append(self.table_on_clans(F.f if table is None else table))
            subs.append("".join(letter))
        for (i, j), E in self._E.items():
            if letter[i] == letter[j]:
                continue
            s = 1.0 if pair_scale is None else pair_scale.get((i, j), 1.0)
            ops.append(E if s == 1.0 else s * E)
            subs.append(letter[i] + letter[j])
        for op, sub in extra:
            ops.append(op)
            subs.append(sub)
        lhs = ",".join(subs).replace("Z", "z")
        if pinned and "z" not in lhs:
            # nothing depends on the pinned clan
            val = _einsum(lhs + "->", ops) if ops else 1.0
            return np.full(self.w.size, float(val))
        if not ops:
            return 1.0
        return _einsum(lhs + "->" + out, ops)


_PATHS: dict = {}


def _einsum(expr: str, ops: list):
    """``numpy.einsum`` with the greedy contraction path cached per expression and shapes."""
    key = (expr, tuple(np.shape(op) for op in ops))
    path = _PATHS.get(key)
    if path is None:
        dims = {}
        for sub, op in zip(expr.split("->")[0].split(","), ops):
            dims.update(zip(sub, np.shape(op)))
        # direct loops are cheapest while the full index space stays small
        small = len(ops) <= 2 or math.prod(dims.values()) <= 200_000
        path = _PATHS[key] = False if small else np.einsum_path(expr, *ops, optimize="greedy")[0]
    return np.einsum(expr, *ops, optimize=path)


def exact_terms(F: TestFunction, chi: FinitePhylogeny) -> int:
    return chi.n_clans ** F.n


def phi_expectation(F: TestFunction, chi: FinitePhylogeny) -> float:
    """Exact ``E[phi f]`` under the sampling measure (no mass factor)."""
    c = Contraction(F, sampling_measure_weights(chi), chi.physical(), chi.traits)
    return float(c.run())


@dataclass(frozen=True)
class Evaluation:
    value: float
    stderr: float
    mode: str


def evaluate_with_error(F: TestFunction, chi: FinitePhylogeny, *, max_terms: float = 1e6,
                        samples: int = 100_000, rng: np.random.Generator | None = None,
                        force: str | None = None) -> Evaluation:
    """``F(chi)`` exactly when ``C^n <= max_terms``, otherwise by Monte-Carlo."""
    if chi.is_empty():
        return Evaluation(F.h0, 0.0, "empty")
    gm = F.g(chi.mass)
    mode = force or ("exact" if exact_terms(F, chi) <= max_terms else "mc")
    if mode == "exact":
        return Evaluation(gm * phi_expectation(F, chi), 0.0, "exact")
    rng = np.random.default_rng(0) if rng is None else rng
    idx = sample_clans(chi, samples * max(F.n, 1), rng).reshape(samples, max(F.n, 1))[:, : F.n]
    r = chi.physical()[idx[:, :, None], idx[:, None, :]]
    vals = F.psi(r, chi.traits[idx])
    return Evaluation(gm * float(vals.mean()), abs(gm) * float(vals.std(ddof=1)) / math.sqrt(samples), "mc")


def evaluate(F: TestFunction, chi: FinitePhylogeny, **kw) -> float:
    """``F(chi) = int nu^chi(d(r, kappa)) h(m(chi), r, kappa)``."""
    return evaluate_with_error(F, chi, **kw).value


# structural maps on explicit sample arguments


def replacement_map(r: np.ndarray, kappas: np.ndarray, l1: int, l2: int):
    """Replace sample ``l2`` by sample ``l1`` (1-based): ``r_{i,l2} -> r_{i,l1}``, ``k_l2 -> k_l1``."""
    r = np.array(r, dtype=float)
    kappas = np.array(kappas)
    n = kappas.shape[0]
    if not (1 <= l1 <= n and 1 <= l2 <= n) or l1 == l2:
        raise IndexOutOfRange(f"need 1 <= l1 != l2 <= {n}, got ({l1}, {l2})")
    a, b = l1 - 1, l2 - 1
    r[b, :] = r[a, :]
    r[:, b] = r[:, a]
    r[a, b] = r[b, a] = 0.0
    r[b, b] = 0.0
    kappas[b] = kappas[a]
    return r, kappas


def index_shift(r: np.ndarray, kappas: np.ndarray, ell: int):
    """Drop the first ``ell`` samples."""
    kappas = np.asarray(kappas)
    if ell < 0 or ell > kappas.shape[0]:
        raise InsufficientArity(f"cannot shift {kappas.shape[0]} samples by {ell}")
    return np.asarray(r)[ell:, ell:].copy(), kappas[ell:].copy()


# certification


@dataclass
class Certificate:
    ok: bool
    failures: list[str]

    def __bool__(self) -> bool:
        return self.ok


def certify_tilde(F: TestFunction, gamma_d_bar: float) -> Certificate:
    """Closed-form check of the smoothness and decay conditions on ``g``.

    The conditions are ``g in C^3_b``, ``g'(0) = 0`` and boundedness at infinity
    of ``m gt(m) |g'|``, ``m |g''|``, ``(1 v gt(m)) |g|`` and
    ``m (1 v gt(m)) |g'''|`` with ``gt(m) = (1 v m) gamma_d_bar``.
    """
    g = F.g
    fails: list[str] = []
    if not isinstance(g, PowerExp):
        return Certificate(False, ["g is not a certified family (not three times differentiable)"])
    a, lam = g.a, g.lam
    if not g.smooth_bounded:
        fails.append("g not bounded with bounded derivatives")
    if abs(g.deriv(0.0, 1)) > 0:
        fails.append(f"g'(0) = {g.deriv(0.0, 1):g} != 0")
    if lam == 0:
        # polynomial growth: m^a; only constants survive, and then only without competition death
        if a > 0 and gamma_d_bar > 0:
            fails.append("m * gt(m) * |g'(m)| unbounded")
        if a >= 2:
            fails.append("m * |g''(m)| unbounded")
        if a > 0 or gamma_d_bar > 0:
            fails.append("(1 v gt(m)) * |g(m)| unbounded")
        if a >= 3:
            fails.append("m * (1 v gt(m)) * |g'''(m)| unbounded")
    if F.is_product:
        for fi in F.f:
            if not getattr(fi, "bounded", True):
                fails.append(f"trait function {type(fi).__name__} is unbounded")
    return Certificate(not fails, fails)


def in_generator_domain(F: TestFunction) -> bool:
    """Finite-degree product form with ``g`` twice boundedly differentiable."""
    return bool(getattr(F.g, "smooth_bounded", False))
