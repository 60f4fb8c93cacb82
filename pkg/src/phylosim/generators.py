"""Discrete generator ``Omega_N`` and limit generator ``Omega`` on finite states.

Both act on product-form polynomials. ``Omega_N`` is evaluated exactly: either
by materializing every neighbour state and calling :func:`evaluate`, or by a
fused expansion that writes the post-jump sampling measure as a rank-one
perturbation ``c * w + d * e_y`` and expands ``E[psi]`` over the subsets of
sample positions that land on the perturbed clan.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import clan_rates, competition_matrix
from .polynomials import (Contraction, TestFunction, certify_tilde, evaluate,
                          in_generator_domain)
from .rates import RateModel, RareJump, UnsupportedFunction, limit_mutation_apply
from .state import FinitePhylogeny, ZeroMass, sampling_measure_weights, states_from


class ScaleMismatch(ValueError):
    """The state is not on the ``ell = zeta = 1/N`` lattice."""


class NotFiniteDegree(ValueError):
    """The limit generator needs a polynomial of finite degree."""


class UncertifiedFunction(ValueError):
    """The test function is outside the domain on which the generator is defined."""


# state averages


def hat_beta(chi: FinitePhylogeny, model: RateModel) -> float:
    """``sum_x w_x beta(k_x)``."""
    w = sampling_measure_weights(chi)
    return float(w @ model.beta(chi.traits))


def hat_gamma(chi: FinitePhylogeny, model: RateModel, which: str) -> float:
    """``sum_{x1,x2} w w gamma(m, r, k1, k2)`` for ``which`` in {"birth", "death"}."""
    w = sampling_measure_weights(chi)
    kernel = {"birth": model.gamma_birth, "death": model.gamma_death}[which]
    return float(w @ competition_matrix(kernel, chi) @ w)


def hat_Gamma(chi: FinitePhylogeny, model: RateModel) -> float:
    return hat_gamma(chi, model, "birth") - hat_gamma(chi, model, "death")


@dataclass
class GeneratorValue:
    total: float
    parts: dict = field(default_factory=dict)
    quad_error: float = 0.0

    def to_dict(self) -> dict:
        return {"total": self.total, "parts": dict(self.parts), "quad_error": self.quad_error}


# limit generator


def _mutated_table(table: np.ndarray, Q: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(Q, table, axes=(1, axis)), 0, axis)


def omega_limit(chi: FinitePhylogeny, F: TestFunction, model: RateModel,
                require_certified: bool = True) -> GeneratorValue:
    """Limit generator: total mass, trait mutation, growth, Gamma-reweigh, natural branching.

    With ``Phi = E[psi]``, ``B_l = E[beta(k_l) psi]`` and ``Th_{l1 l2}`` the
    expectation of ``beta(k_l1) psi`` with sample ``l2`` replaced by ``l1``:

    * total mass: ``Gh m g' Phi + bh m g'' Phi + 2 g' sum_l (B_l - bh Phi)``
    * trait mutation: ``p g sum_l E[beta_l A_l psi]``
    * growth: ``p g sum_{l1<l2} E[(beta_l1 + beta_l2) d psi / d r_l1l2]``
    * Gamma-reweigh: ``g sum_l (E[G_l psi] - Gh Phi)`` with ``G_l`` the
      Gamma-average of an extra sample against sample ``l``
    * natural branching: ``(g/m) sum_l (bh Phi - B_l)`` plus
      ``(g/m) sum_{l1, l2} (Th_{l1 l2} - B_l1 + bh Phi - B_l2)`` over all ordered
      pairs including ``l1 = l2``.
    """
    parts = dict(total_mass=0.0, trait_mutation=0.0, growth=0.0, gamma_reweigh=0.0,
                 beta_reweigh=0.0, resample=0.0)
    if F.n is None or F.n < 0:
        raise NotFiniteDegree("polynomial degree must be a finite non-negative integer")
    if require_certified and not (certify_tilde(F, model.bounds.gamma_d_bar).ok or in_generator_domain(F)):
        raise UncertifiedFunction(f"{F.name} is outside the generator domain")
    if chi.is_empty():
        return GeneratorValue(0.0, parts)
    n = F.n
    m = chi.mass
    w = sampling_measure_weights(chi)
    kap = chi.traits
    con = Contraction(F, w, chi.physical(), kap)
    b = model.beta(kap)
    bh = float(w @ b)
    Gv = w @ (competition_matrix(model.gamma_birth, chi) - competition_matrix(model.gamma_death, chi))
    Gh = float(Gv @ w)
    g0, g1, g2 = (F.g.deriv(m, k) for k in range(3))
    Phi = float(con.run())
    B = [float(con.run(vec={l: b})) for l in range(n)]

    parts["total_mass"] = Gh * m * g1 * Phi + bh * m * g2 * Phi + 2 * g1 * sum(Bl - bh * Phi for Bl in B)
    if model.p > 0 and n > 0:
        acc = 0.0
        for l in range(n):
            if F.is_product:
                fl = F.f[l]
                if getattr(fl, "is_constant", False):
                    continue
                Af = np.asarray(limit_mutation_apply(model, fl, kap), dtype=float)
                acc += float(con.run(vec={l: b}, fsub={l: Af}))
            else:
                if not isinstance(model.mutation, RareJump):
                    raise UnsupportedFunction("trait tables need the rare-jump mutation family")
                T = _mutated_table(F.f, model.mutation.generator_matrix(), l)
                acc += float(con.run(vec={l: b}, table=T))
        parts["trait_mutation"] = model.p * g0 * acc
        parts["growth"] = model.p * g0 * sum(-F.lam[i, j] * (B[i] + B[j]) for i, j in F.pairs())
    parts["gamma_reweigh"] = g0 * sum(float(con.run(vec={l: Gv})) - Gh * Phi for l in range(n))
    parts["beta_reweigh"] = g0 / m * sum(bh * Phi - Bl for Bl in B)
    res = 0.0
    for l1 in range(n):
        for l2 in range(n):
            th = B[l1] if l1 == l2 else float(con.run(vec={l1: b}, alias=(l1, l2)))
            res += th - B[l1] + bh * Phi - B[l2]
    parts["resample"] = g0 / m * res
    parts["natural_branching"] = parts["beta_reweigh"] + parts["resample"]
    total = (parts["total_mass"] + parts["trait_mutation"] + parts["growth"]
             + parts["gamma_reweigh"] + parts["natural_branching"])
    return GeneratorValue(float(total), parts)


# discrete generator


def check_scale(chi: FinitePhylogeny, N: int, tol: float = 1e-12) -> None:
    if abs(chi.zeta - 1.0 / N) > tol or abs(chi.ell - 1.0 / N) > tol:
        raise ScaleMismatch(f"state has ell={chi.ell:g}, zeta={chi.zeta:g}; expected 1/{N}")


class _MutantNodes:
    """Quadrature nodes of ``alpha_N(k_y, .)`` for every clan, with trait-function values cached."""

    def __init__(self, F, model, kap, N, order):
        table = getattr(model.mutation, "node_table", None)
        if table is not None:
            self.nodes, self.weights = table(kap, N, order)
            self.rows = None
        else:
            self.rows = [model.mutation.nodes(k, N, order) for k in kap]
        self.F = F
        self.values: dict = {}

    def _f(self, i):
        if i not in self.values:
            f = self.F.f[i]
            if self.rows is None:
                self.values[i] = np.asarray(f(self.nodes), dtype=float)
            else:
                self.values[i] = [np.asarray(f(nodes), dtype=float) for nodes, _ in self.rows]
        return self.values[i]

    def expectation(self, S):
        """``E_{alpha_N(k_y, .)}[prod_{i in S} f_i]`` per clan ``y`` (product form)."""
        if self.rows is None:
            vals = np.ones(self.nodes.shape)
            for i in S:
                vals = vals * self._f(i)
            return np.einsum("yq,yq->y", self.weights, vals)
        out = np.empty(len(self.rows))
        for y, (_, weights) in enumerate(self.rows):
            vals = np.ones(len(weights))
            for i in S:
                vals = vals * self._f(i)[y]
            out[y] = float(np.dot(weights, vals))
        return out


def _alpha_matrix(model, kap, N):
    rows = [model.mutation.nodes(k, N)[1] for k in kap]
    return np.asarray(rows, dtype=float)


def _table_subset_operand(F, S, kap):
    """Table with the ``S`` axes merged into one trait axis and the rest indexed by clan."""
    n = F.n
    letters = [chr(ord("a") + l) for l in range(n)]
    src = "".join("t" if l in S else letters[l] for l in range(n))
    keep = [l for l in range(n) if l not in S]
    dst = "".join(letters[l] for l in keep) + "t"
    T = np.einsum(src + "->" + dst, F.f)
    idx = kap.astype(np.int64)
    T = T[np.ix_(*([idx] * len(keep) + [np.arange(T.shape[-1])]))] if keep else T
    return T, "".join(letters[l] for l in keep) + "t"


def _fused_phis(F, chi, model, N, order):
    """Post-jump ``E[psi]`` for death, clone and mutant birth at each clan."""
    n = F.n
    K = int(chi.counts.sum())
    w = sampling_measure_weights(chi)
    kap = chi.traits
    con = Contraction(F, w, chi.physical(), kap)
    C = chi.n_clans
    subsets = [S for s in range(n + 1) for S in itertools.combinations(range(n), s)]
    cb, db = K / (K + 1.0), 1.0 / (K + 1.0)
    cd, dd = (K / (K - 1.0), -1.0 / (K - 1.0)) if K > 1 else (0.0, 0.0)
    phi_d = np.zeros(C)
    phi_c = np.zeros(C)
    phi_m = np.zeros(C)
    alpha = None
    mut = _MutantNodes(F, model, kap, N, order) if model.p > 0 and F.is_product else None
    for S in subsets:
        s = len(S)
        base = np.broadcast_to(np.asarray(con.run(pinned=S), dtype=float), (C,)) if s else np.full(C, float(con.run()))
        phi_d += cd ** (n - s) * dd**s * base
        phi_c += cb ** (n - s) * db**s * base
        if model.p == 0:
            continue
        if s == 0:
            phi_m += cb**n * base
            continue
        scale = {(i, j): math.exp(-F.lam[i, j] * chi.ell) for i, j in F.pairs() if (i in S) != (j in S)}
        if F.is_product:
            ef = mut.expectation(S)
            val = np.asarray(con.run(pinned=S, drop_f=S, pair_scale=scale), dtype=float) * ef
        else:
            if alpha is None:
                alpha = _alpha_matrix(model, kap, N)
            T, sub = _table_subset_operand(F, S, kap)
            sub = sub.replace("t", "T")
            val = np.asarray(con.run(pinned=S, pair_scale=scale, table=None, drop_f=(),
                                     extra=((T, sub), (alpha, "ZT")), skip_f=True), dtype=float)
        phi_m += cb ** (n - s) * db**s * val
    return phi_d, phi_c, phi_m


def _materialized_phis(F, chi, model, N, order):
    C = chi.n_clans
    gd, gc, gm = np.zeros(C), np.zeros(C), np.zeros(C)
    for y in range(C):
        s = chi.copy()
        s.remove_one(y)
        gd[y] = evaluate(F, s, force="exact") if not s.is_empty() else F.h0
        s = chi.copy()
        s.add_clone(y)
        gc[y] = evaluate(F, s, force="exact")
        nodes, weights = model.mutation.nodes(chi.traits[y], N, order)
        acc = 0.0
        for node, wt in zip(nodes, weights):
            if wt == 0.0:
                continue
            s = chi.copy()
            s.add_mutant(y, node)
            acc += wt * evaluate(F, s, force="exact")
        gm[y] = acc
    return gd, gc, gm


def omega_discrete(chi: FinitePhylogeny, F: TestFunction, model: RateModel, N: int,
                   method: str = "fused", order: int = 32, rates=None,
                   estimate_error: bool = True) -> GeneratorValue:
    """Exact ``Omega_N F(chi)`` at scale ``N``.

    Args:
        chi: state with ``ell = zeta = 1/N``.
        F: test function.
        model: rate model (mutation kernel evaluated at ``N``).
        N: scale index.
        method: ``"fused"`` (rank-one expansion) or ``"materialize"``
            (build every neighbour state and evaluate it).
        order: Gauss-Hermite order for Gaussian mutation steps.
        rates: optional precomputed :class:`ClanRates` of ``chi``.
        estimate_error: when set, the quadrature error is estimated from a
            second evaluation at ``order + 8`` for kernels with continuous steps.
    """
    parts = dict(death=0.0, birth_clone=0.0, birth_mutant=0.0)
    if chi.is_empty():
        # the empty state is absorbing and looks the same at every scale
        return GeneratorValue(0.0, parts)
    check_scale(chi, N)
    if method not in ("fused", "materialize"):
        raise ValueError(f"unknown method {method!r}")
    m = chi.mass
    zeta = chi.zeta
    K = int(chi.counts.sum())
    rates = clan_rates(chi, model) if rates is None else rates
    D = chi.counts * rates.death
    B = chi.counts * rates.birth
    F0 = evaluate(F, chi, force="exact")

    def combine(phis, weighted):
        phi_d, phi_c, phi_m = phis
        if weighted:
            Fd = F.g(m - zeta) * phi_d if K > 1 else np.full(phi_d.size, F.h0)
            Fc = F.g(m + zeta) * phi_c
            Fm = F.g(m + zeta) * phi_m
        else:
            Fd, Fc, Fm = phis
        p = model.p
        return (float(D @ (Fd - F0)), float((1 - p) * (B @ (Fc - F0))), float(p * (B @ (Fm - F0))))

    continuous = estimate_error and not (isinstance(model.mutation, RareJump) or getattr(model.mutation, "matrix", None) is not None)
    if method == "fused":
        d, c, mu = combine(_fused_phis(F, chi, model, N, order), True)
        err = 0.0
        if continuous and model.p > 0:
            mu2 = combine(_fused_phis(F, chi, model, N, order + 8), True)[2]
            err = abs(mu2 - mu)
    else:
        d, c, mu = combine(_materialized_phis(F, chi, model, N, order), False)
        err = 0.0
        if continuous and model.p > 0:
            mu2 = combine(_materialized_phis(F, chi, model, N, order + 8), False)[2]
            err = abs(mu2 - mu)
    parts.update(death=d, birth_clone=c, birth_mutant=mu)
    return GeneratorValue(d + c + mu, parts, err)


# convergence experiment


@dataclass
class GapTable:
    rows: list[dict]
    slopes: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        if not self.rows:
            return ""
        keys = list(self.rows[0].keys())
        wr = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
        wr.writeheader()
        for row in self.rows:
            wr.writerow({k: (f"{v:.12g}" if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()


def fitted_slope(Ns, gaps) -> float:
    """Least-squares slope of ``log gap`` against ``log N``; nan when any gap is zero."""
    gaps = np.asarray(gaps, dtype=float)
    if np.any(gaps <= 0):
        return float("nan")
    return float(np.polyfit(np.log(np.asarray(Ns, dtype=float)), np.log(gaps), 1)[0])


def convergence_gap(F_list, geometries, model: RateModel, Ns,
                    method: str = "fused") -> GapTable:
    """``|Omega_N F - Omega F|`` for every geometry embedded at every ``N``.

    Args:
        F_list: test functions (a single one is accepted).
        geometries: dicts with ``masses``, ``traits`` and physical ``distances``.
        model: rate model.
        Ns: scale indices.
    """
    if isinstance(F_list, TestFunction):
        F_list = [F_list]
    rows: list[dict] = []
    slopes: dict = {}
    for F in F_list:
        for sid, geo in enumerate(geometries):
            gaps = []
            for N in Ns:
                chi = states_from(geo, N, model.trait_space)
                dn = omega_discrete(chi, F, model, N, method=method)
                lim = omega_limit(chi, F, model)
                gap = abs(dn.total - lim.total)
                gaps.append(gap)
                rows.append({"F": F.name, "state": sid, "N": int(N), "gap": float(gap),
                             "omega_N": dn.total, "omega": lim.total, "quad_error": dn.quad_error})
            slopes[(F.name, sid)] = fitted_slope(Ns, gaps)
    return GapTable(rows, slopes)


__all__ = [
    "ScaleMismatch", "NotFiniteDegree", "UncertifiedFunction", "ZeroMass", "GeneratorValue",
    "hat_beta", "hat_gamma", "hat_Gamma", "omega_limit", "omega_discrete", "convergence_gap",
    "GapTable", "fitted_slope", "check_scale",
]
