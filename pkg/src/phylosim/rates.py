"""Rate model: natural branching, competition kernels, mutation kernels.

All rate functions come from closed parametric families so that their bounds
can be checked on a probe set when a model is built. Gamma kernels take
``(m, r, k1, k2)`` and broadcast like numpy ufuncs; ``k2`` is the trait of
the individual that dies or gives birth, ``k1`` the trait of the partner.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any

import numpy as np

from .state import TraitSpace


class AssumptionViolated(ValueError):
    """A model parameter breaks one of the standing model assumptions."""

    def __init__(self, name: str, detail: str = ""):
        self.name = name
        self.detail = detail
        super().__init__(f"{name} violated: {detail}" if detail else f"{name} violated")


class UnsupportedFunction(TypeError):
    """The limit mutation operator cannot act on the given trait function."""


class ConfigError(ValueError):
    """Malformed rate-model configuration."""


def _check_keys(d: dict, allowed: set[str], where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _lookup(table: np.ndarray, k) -> np.ndarray:
    return table[np.asarray(k, dtype=np.int64)]


# natural branching rate families


@dataclass(frozen=True)
class ConstantBeta:
    value: float

    def __call__(self, k) -> np.ndarray:
        return np.full(np.shape(k), float(self.value))

    def to_dict(self):
        return {"kind": "constant", "value": self.value}


@dataclass(frozen=True)
class TableBeta:
    values: tuple[float, ...]

    def __call__(self, k) -> np.ndarray:
        return _lookup(np.asarray(self.values, dtype=float), k)

    def to_dict(self):
        return {"kind": "table", "values": list(self.values)}


@dataclass(frozen=True)
class SigmoidBeta:
    """``low + (high - low) / (1 + exp(-(k - center) / width))``."""

    low: float
    high: float
    center: float = 0.0
    width: float = 1.0

    def __call__(self, k) -> np.ndarray:
        z = (np.asarray(k, dtype=float) - self.center) / self.width
        return self.low + (self.high - self.low) / (1.0 + np.exp(-z))

    def to_dict(self):
        return {"kind": "sigmoid", "low": self.low, "high": self.high,
                "center": self.center, "width": self.width}


def beta_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "constant":
        _check_keys(d, {"kind", "value"}, "beta")
        return ConstantBeta(float(d["value"]))
    if kind == "table":
        _check_keys(d, {"kind", "values"}, "beta")
        return TableBeta(tuple(float(v) for v in d["values"]))
    if kind == "sigmoid":
        _check_keys(d, {"kind", "low", "high", "center", "width"}, "beta")
        return SigmoidBeta(float(d["low"]), float(d["high"]), float(d.get("center", 0.0)),
                           float(d.get("width", 1.0)))
    raise ConfigError(f"unknown beta kind {kind!r}")


# competition kernel families


def _shape(m, r, k1, k2):
    return np.broadcast(np.asarray(r), np.asarray(k1), np.asarray(k2)).shape


@dataclass(frozen=True)
class ZeroKernel:
    focal_only = True

    def __call__(self, m, r, k1, k2):
        return np.zeros(_shape(m, r, k1, k2))

    def to_dict(self):
        return {"kind": "zero"}


@dataclass(frozen=True)
class ConstantKernel:
    c: float
    focal_only = True

    def __call__(self, m, r, k1, k2):
        return np.full(_shape(m, r, k1, k2), float(self.c))

    def to_dict(self):
        return {"kind": "constant", "c": self.c}


@dataclass(frozen=True)
class DistanceKernel:
    """Cross-immunity kernel ``c * exp(-r / rho)``: close relatives compete hardest."""

    c: float
    rho: float
    focal_only = False

    def __call__(self, m, r, k1, k2):
        out = self.c * np.exp(-np.asarray(r, dtype=float) / self.rho)
        return np.broadcast_to(out, _shape(m, r, k1, k2)).copy()

    def to_dict(self):
        return {"kind": "distance_kernel", "c": self.c, "rho": self.rho}


@dataclass(frozen=True)
class TraitTableKernel:
    """``table[k1, k2]`` on a finite trait space."""

    table: tuple[tuple[float, ...], ...]

    @property
    def focal_only(self) -> bool:
        t = np.asarray(self.table)
        return bool(np.all(t == t[0:1, :]))

    def __call__(self, m, r, k1, k2):
        t = np.asarray(self.table, dtype=float)
        out = t[np.asarray(k1, dtype=np.int64), np.asarray(k2, dtype=np.int64)]
        return np.broadcast_to(out, _shape(m, r, k1, k2)).copy()

    def to_dict(self):
        return {"kind": "trait_table", "table": [list(row) for row in self.table]}


@dataclass(frozen=True)
class LogisticDeath:
    """``d(k2) + m * U(k1, k2)``; ``d`` and ``U`` are scalars or finite tables."""

    d: Any = 0.0
    u: Any = 0.0
    focal_only = False

    def __call__(self, m, r, k1, k2):
        dv = np.asarray(self.d, dtype=float)
        uv = np.asarray(self.u, dtype=float)
        dpart = dv if dv.ndim == 0 else dv[np.asarray(k2, dtype=np.int64)]
        if uv.ndim == 0:
            upart = uv
        else:
            upart = uv[np.asarray(k1, dtype=np.int64), np.asarray(k2, dtype=np.int64)]
        out = dpart + float(m) * upart
        return np.broadcast_to(out, _shape(m, r, k1, k2)).copy()

    def to_dict(self):
        def enc(v):
            return np.asarray(v).tolist()
        return {"kind": "logistic", "d": enc(self.d), "u": enc(self.u)}


@dataclass(frozen=True)
class BetaProportional:
    """``c * beta(k2)``: enhanced births at a fixed multiple of the natural rate."""

    c: float
    beta: Any = None
    focal_only = True

    def __call__(self, m, r, k1, k2):
        out = self.c * self.beta(np.asarray(k2))
        return np.broadcast_to(out, _shape(m, r, k1, k2)).copy()

    def to_dict(self):
        return {"kind": "beta_proportional", "c": self.c}


def gamma_from_dict(d: dict, beta=None):
    kind = d.get("kind")
    if kind == "zero":
        _check_keys(d, {"kind"}, "gamma")
        return ZeroKernel()
    if kind == "constant":
        _check_keys(d, {"kind", "c"}, "gamma")
        return ConstantKernel(float(d["c"]))
    if kind == "distance_kernel":
        _check_keys(d, {"kind", "c", "rho"}, "gamma")
        return DistanceKernel(float(d["c"]), float(d["rho"]))
    if kind == "trait_table":
        _check_keys(d, {"kind", "table"}, "gamma")
        return TraitTableKernel(tuple(tuple(float(x) for x in row) for row in d["table"]))
    if kind == "logistic":
        _check_keys(d, {"kind", "d", "u"}, "gamma")
        return LogisticDeath(_freeze(d.get("d", 0.0)), _freeze(d.get("u", 0.0)))
    if kind == "beta_proportional":
        _check_keys(d, {"kind", "c"}, "gamma")
        return BetaProportional(float(d["c"]), beta)
    raise ConfigError(f"unknown gamma kind {kind!r}")


def _freeze(v):
    if isinstance(v, list):
        return tuple(_freeze(x) for x in v)
    return float(v)


# mutation kernels


@lru_cache(maxsize=None)
def _hermite_nodes(order: int):
    """Probabilists' Gauss-Hermite nodes and weights normalised to a standard normal."""
    x, w = np.polynomial.hermite_e.hermegauss(order)
    x.flags.writeable = False
    w = w / math.sqrt(2.0 * math.pi)
    w.flags.writeable = False
    return x, w


@dataclass(frozen=True)
class GaussianStep:
    """Real traits: ``alpha_N(k, .) = Normal(k, sigma^2 / N)``, limit ``A f = sigma^2/2 f''``."""

    sigma: float
    rescaled = True

    def draw(self, k, N, rng):
        return float(k) + self.sigma / math.sqrt(N) * rng.standard_normal()

    def nodes(self, k, N, order: int = 32):
        """Quadrature nodes and weights for ``alpha_N(k, .)``."""
        x, w = _hermite_nodes(order)
        return float(k) + self.sigma / math.sqrt(N) * x, w

    def node_table(self, ks, N, order: int = 32):
        """Nodes for every parent trait at once: ``(len(ks), order)`` nodes and weights."""
        x, w = _hermite_nodes(order)
        ks = np.asarray(ks, dtype=float)
        return ks[:, None] + self.sigma / math.sqrt(N) * x[None, :], np.broadcast_to(w, (ks.size, w.size))

    def limit_apply(self, f, k):
        d2 = getattr(f, "d2", None)
        if d2 is None:
            raise UnsupportedFunction("Gaussian mutation needs a twice differentiable trait function")
        return 0.5 * self.sigma**2 * d2(np.asarray(k, dtype=float))

    def nonclone_mass(self, k, N) -> float:
        return 1.0

    def check(self, trait_space: TraitSpace) -> None:
        if not self.sigma > 0:
            raise AssumptionViolated("Assumption 4", "Gaussian mutation needs sigma > 0")
        if trait_space.is_finite:
            raise AssumptionViolated("Assumption 4", "Gaussian mutation needs real traits")

    def to_dict(self):
        return {"kind": "gaussian_step", "sigma": self.sigma}


@dataclass(frozen=True)
class RareJump:
    """Finite traits: ``alpha_N = (theta/N) a + (1 - theta/N) delta``, limit ``theta (a - I)``."""

    theta: float
    a: tuple[tuple[float, ...], ...]
    rescaled = True

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.a, dtype=float)

    def _row(self, k, N) -> np.ndarray:
        if N <= self.theta:
            raise AssumptionViolated("Assumption 4", f"rare-jump mutation needs N > theta ({N} <= {self.theta})")
        q = self.theta / N
        row = q * self.matrix[int(k)]
        row[int(k)] += 1.0 - q
        return row

    def draw(self, k, N, rng):
        if N <= self.theta:
            raise AssumptionViolated("Assumption 4", f"rare-jump mutation needs N > theta ({N} <= {self.theta})")
        if rng.random() < self.theta / N:
            a = self.matrix[int(k)]
            return int(rng.choice(a.size, p=a))
        return int(k)

    def nodes(self, k, N, order: int = 0):
        row = self._row(k, N)
        return np.arange(row.size), row

    def limit_apply(self, f, k):
        vals = _finite_values(f, self.matrix.shape[0])
        af = self.theta * (self.matrix @ vals - vals)
        return af[np.asarray(k, dtype=np.int64)]

    def generator_matrix(self) -> np.ndarray:
        return self.theta * (self.matrix - np.eye(self.matrix.shape[0]))

    def nonclone_mass(self, k, N) -> float:
        return self.theta / N

    def check(self, trait_space: TraitSpace) -> None:
        a = self.matrix
        if not trait_space.is_finite or a.shape != (trait_space.size, trait_space.size):
            raise AssumptionViolated("Assumption 4", "rare-jump matrix must match the finite trait space")
        if not self.theta > 0:
            raise AssumptionViolated("Assumption 4", "theta must be positive")
        if np.any(a < 0) or np.any(np.abs(a.sum(axis=1) - 1) > 1e-12) or np.any(np.diag(a) != 0):
            raise AssumptionViolated("Assumption 4", "jump matrix must be stochastic with zero diagonal")

    def to_dict(self):
        return {"kind": "rare_jump", "theta": self.theta, "a": [list(r) for r in self.a]}


@dataclass(frozen=True)
class FixedKernel:
    """Unrescaled kernel: a stochastic matrix on finite traits or a Gaussian step on reals."""

    matrix: tuple[tuple[float, ...], ...] | None = None
    sigma: float | None = None
    rescaled = False

    def draw(self, k, N, rng):
        if self.matrix is not None:
            a = np.asarray(self.matrix[int(k)], dtype=float)
            return int(rng.choice(a.size, p=a))
        return float(k) + self.sigma * rng.standard_normal()

    def nodes(self, k, N, order: int = 32):
        if self.matrix is not None:
            a = np.asarray(self.matrix[int(k)], dtype=float)
            return np.arange(a.size), a
        x, w = np.polynomial.hermite_e.hermegauss(order)
        return float(k) + self.sigma * x, w / math.sqrt(2.0 * math.pi)

    def limit_apply(self, f, k):
        raise UnsupportedFunction("a fixed kernel has no rescaled limit operator")

    def nonclone_mass(self, k, N) -> float:
        if self.matrix is not None:
            return 1.0 - float(self.matrix[int(k)][int(k)])
        return 1.0

    def check(self, trait_space: TraitSpace) -> None:
        if (self.matrix is None) == (self.sigma is None):
            raise AssumptionViolated("Assumption 4", "fixed kernel needs exactly one of matrix or sigma")
        if self.matrix is not None:
            a = np.asarray(self.matrix, dtype=float)
            if not trait_space.is_finite or a.shape != (trait_space.size,) * 2:
                raise AssumptionViolated("Assumption 4", "kernel matrix must match the trait space")
            if np.any(a < 0) or np.any(np.abs(a.sum(axis=1) - 1) > 1e-12):
                raise AssumptionViolated("Assumption 4", "kernel rows must be probability vectors")
        elif not self.sigma > 0 or trait_space.is_finite:
            raise AssumptionViolated("Assumption 4", "Gaussian fixed kernel needs sigma > 0 and real traits")

    def to_dict(self):
        if self.matrix is not None:
            return {"kind": "fixed_kernel", "matrix": [list(r) for r in self.matrix]}
        return {"kind": "fixed_kernel", "sigma": self.sigma}


def _finite_values(f, size: int) -> np.ndarray:
    if callable(f):
        return np.asarray(f(np.arange(size)), dtype=float)
    vals = np.asarray(f, dtype=float)
    if vals.shape != (size,):
        raise UnsupportedFunction("trait table has the wrong length")
    return vals


def mutation_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "gaussian_step":
        _check_keys(d, {"kind", "sigma"}, "mutation")
        return GaussianStep(float(d["sigma"]))
    if kind == "rare_jump":
        _check_keys(d, {"kind", "theta", "a"}, "mutation")
        return RareJump(float(d["theta"]), tuple(tuple(float(x) for x in r) for r in d["a"]))
    if kind == "fixed_kernel":
        _check_keys(d, {"kind", "matrix", "sigma"}, "mutation")
        mat = d.get("matrix")
        return FixedKernel(None if mat is None else tuple(tuple(float(x) for x in r) for r in mat),
                           None if d.get("sigma") is None else float(d["sigma"]))
    raise ConfigError(f"unknown mutation kind {kind!r}")


# the model


@dataclass(frozen=True)
class Bounds:
    beta_bar: float
    beta_lower: float
    gamma_b_bar: float
    gamma_d_bar: float

    def to_dict(self):
        return {"beta_bar": self.beta_bar, "beta_lower": self.beta_lower,
                "gamma_b_bar": self.gamma_b_bar, "gamma_d_bar": self.gamma_d_bar}


@dataclass(frozen=True)
class RateModel:
    """All rate parameters of the branching model plus their bound constants."""

    beta: Any
    gamma_birth: Any
    gamma_death: Any
    p: float
    mutation: Any
    bounds: Bounds
    trait_space: TraitSpace = field(default_factory=TraitSpace.real)
    name: str = "custom"

    @property
    def birth_ratio_constant(self) -> float:
        """``C = gamma_b_bar / beta_lower`` with ``gamma_birth <= C * beta(k2)``."""
        return self.bounds.gamma_b_bar / self.bounds.beta_lower

    def gamma_tilde(self, m: float) -> float:
        """Competition-death envelope ``(1 v m) * gamma_d_bar``."""
        return max(1.0, m) * self.bounds.gamma_d_bar

    def Gamma(self, m, r, k1, k2):
        """Net competition drift ``gamma_birth - gamma_death``."""
        return self.gamma_birth(m, r, k1, k2) - self.gamma_death(m, r, k1, k2)

    def replace(self, **kw) -> "RateModel":
        d = dict(beta=self.beta, gamma_birth=self.gamma_birth, gamma_death=self.gamma_death,
                 p=self.p, mutation=self.mutation, bounds=self.bounds,
                 trait_space=self.trait_space, name=self.name)
        d.update(kw)
        return RateModel(**d)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "trait_space": self.trait_space.to_dict(),
            "beta": self.beta.to_dict(),
            "gamma_birth": self.gamma_birth.to_dict(),
            "gamma_death": self.gamma_death.to_dict(),
            "p": self.p,
            "mutation": self.mutation.to_dict(),
            "bounds": self.bounds.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict, validate_model: bool = True) -> "RateModel":
        _check_keys(d, {"name", "trait_space", "beta", "gamma_birth", "gamma_death", "p",
                        "mutation", "bounds"}, "model")
        for key in ("beta", "gamma_birth", "gamma_death", "p", "mutation", "bounds"):
            if key not in d:
                raise ConfigError(f"model config is missing {key!r}")
        ts = TraitSpace.from_dict(d.get("trait_space", {"kind": "real"}))
        beta = beta_from_dict(d["beta"])
        b = d["bounds"]
        _check_keys(b, {"beta_bar", "beta_lower", "gamma_b_bar", "gamma_d_bar"}, "bounds")
        model = cls(
            beta=beta,
            gamma_birth=gamma_from_dict(d["gamma_birth"], beta),
            gamma_death=gamma_from_dict(d["gamma_death"], beta),
            p=float(d["p"]),
            mutation=mutation_from_dict(d["mutation"]),
            bounds=Bounds(float(b["beta_bar"]), float(b["beta_lower"]),
                          float(b["gamma_b_bar"]), float(b["gamma_d_bar"])),
            trait_space=ts,
            name=str(d.get("name", "custom")),
        )
        if validate_model:
            validate(model)
        return model

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str, validate_model: bool = True) -> "RateModel":
        return cls.from_dict(json.loads(text), validate_model)


@dataclass
class ValidationReport:
    checks: dict[str, bool]
    probe_size: int

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


MASS_PROBE = np.array([0.0, 0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 100.0])
DIST_PROBE = np.array([0.0, 0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 20.0])


def default_trait_probe(trait_space: TraitSpace) -> np.ndarray:
    if trait_space.is_finite:
        return trait_space.points()
    return np.linspace(-6.0, 6.0, 49)


def validate(model: RateModel, trait_probe=None, raise_on_failure: bool = True) -> ValidationReport:
    """Check the model assumptions on a probe grid of traits, masses and distances.

    Raises:
        AssumptionViolated: naming the first assumption that fails (unless
            ``raise_on_failure`` is False, in which case the report lists it).
    """
    probe = default_trait_probe(model.trait_space) if trait_probe is None else np.asarray(trait_probe)
    b = model.bounds
    tol = 1e-12
    checks: dict[str, bool] = {}
    details: dict[str, str] = {}

    def record(name, ok, detail):
        ok = bool(ok)
        checks[name] = checks.get(name, True) and ok
        if not ok:
            details.setdefault(name, detail)

    record("mutation probability", 0.0 <= model.p <= 1.0, f"p = {model.p} outside [0, 1]")
    for t in probe:
        model.trait_space.check(t)
    beta = model.beta(probe)
    record("Assumption 1", np.all(beta <= b.beta_bar * (1 + tol)),
           f"max beta {beta.max():g} > beta_bar {b.beta_bar:g}")
    record("Assumption 5", b.beta_lower > 0 and np.all(beta >= b.beta_lower * (1 - tol)),
           f"min beta {beta.min():g} < beta_lower {b.beta_lower:g}")
    m, r, k1, k2 = np.meshgrid(MASS_PROBE, DIST_PROBE, probe, probe, indexing="ij")
    m_col = MASS_PROBE[:, None, None, None]
    gb = np.stack([model.gamma_birth(mm, r[i], k1[i], k2[i]) for i, mm in enumerate(MASS_PROBE)])
    gd = np.stack([model.gamma_death(mm, r[i], k1[i], k2[i]) for i, mm in enumerate(MASS_PROBE)])
    record("non-negative rates", np.all(gb >= 0) and np.all(gd >= 0), "negative competition rate")
    record("Assumption 2", np.all(gb <= b.gamma_b_bar * (1 + tol) + tol),
           f"max gamma_birth {gb.max():g} > gamma_b_bar {b.gamma_b_bar:g}")
    env = np.maximum(1.0, m_col) * b.gamma_d_bar
    record("Assumption 6", np.all(gd <= env * (1 + tol) + tol),
           "gamma_death exceeds (1 v m) * gamma_d_bar")
    if b.beta_lower > 0:
        bound = model.birth_ratio_constant * model.beta(k2)
        record("birth ratio", np.all(gb <= bound * (1 + tol) + tol),
               "gamma_birth exceeds C * beta(k2)")
    try:
        model.mutation.check(model.trait_space)
        record("Assumption 4", True, "")
    except AssumptionViolated as exc:
        record("Assumption 4", False, exc.detail)
    report = ValidationReport(checks, int(probe.size))
    if raise_on_failure:
        for name, ok in checks.items():
            if not ok:
                raise AssumptionViolated(name, details.get(name, ""))
    return report


# mutation draws


def draw_birth(model: RateModel, k2, N, rng) -> tuple[bool, Any]:
    """Decide whether a birth mutates and draw the offspring trait.

    Returns ``(mutated, trait)``. A mutated offspring always founds a new clan,
    even when the drawn trait coincides with the parent's.
    """
    if model.p > 0.0 and (model.p >= 1.0 or rng.random() < model.p):
        return True, model.mutation.draw(k2, N, rng)
    return False, k2


def mixed_mutation_draw(model: RateModel, k2, N, rng):
    """Draw an offspring trait from ``p * alpha_N(k2, .) + (1 - p) * delta_k2``."""
    return draw_birth(model, k2, N, rng)[1]


def limit_mutation_apply(model: RateModel, f, k):
    """Apply the limit mutation operator ``A`` to trait function ``f`` at ``k``."""
    if getattr(f, "is_constant", False):
        return np.zeros(np.shape(k)) if np.ndim(k) else 0.0
    return model.mutation.limit_apply(f, k)


# presets


def neutral(b: float = 1.0, p: float = 0.0, sigma: float = 1.0) -> RateModel:
    """Constant branching, no competition, Gaussian mutation steps."""
    return _checked(RateModel(ConstantBeta(b), ZeroKernel(), ZeroKernel(), p, GaussianStep(sigma),
                              Bounds(b, b, 0.0, 0.0), TraitSpace.real(), "neutral"))


def fleming_viot_like(b: float = 1.0, theta: float = 1.0, n_traits: int = 3,
                      selection: float = 0.0) -> RateModel:
    """Constant branching, rare jumps between finitely many traits, every birth mutates.

    ``selection`` adds a mass-independent trait-table birth bonus for trait 0.
    """
    a = np.full((n_traits, n_traits), 1.0 / (n_traits - 1))
    np.fill_diagonal(a, 0.0)
    table = np.zeros((n_traits, n_traits))
    table[:, 0] = selection
    gb = TraitTableKernel(tuple(map(tuple, table))) if selection > 0 else ZeroKernel()
    return _checked(RateModel(ConstantBeta(b), gb, ZeroKernel(), 1.0,
                              RareJump(theta, tuple(map(tuple, a))),
                              Bounds(b, b, selection, 0.0), TraitSpace.finite(n_traits),
                              "fleming_viot_like"))


def logistic_competition(b: float = 1.0, birth: float = 0.5, death: float = 0.0, u: float = 0.5,
                         p: float = 0.0, sigma: float = 1.0) -> RateModel:
    """Net drift ``birth - death - m * u``: constant enhanced births, logistic deaths."""
    gd_bar = max(death + u, 0.0)
    return _checked(RateModel(ConstantBeta(b), ConstantKernel(birth), LogisticDeath(death, u), p,
                              GaussianStep(sigma), Bounds(b, b, birth, gd_bar), TraitSpace.real(),
                              "logistic_competition"))


def cross_immunity(b: float = 1.0, c: float = 2.0, rho: float = 0.25, birth: float = 0.5,
                   p: float = 0.5, sigma: float = 1.0) -> RateModel:
    """Competition death ``c * exp(-r / rho)``: close relatives compete most."""
    return _checked(RateModel(ConstantBeta(b), ConstantKernel(birth), DistanceKernel(c, rho), p,
                              GaussianStep(sigma), Bounds(b, b, birth, c), TraitSpace.real(),
                              "cross_immunity"))


PRESETS = {
    "neutral": neutral,
    "fleming_viot_like": fleming_viot_like,
    "logistic_competition": logistic_competition,
    "cross_immunity": cross_immunity,
}


def _checked(model: RateModel) -> RateModel:
    validate(model)
    return model
