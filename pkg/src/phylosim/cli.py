"""Command-line front end: one JSON config per run, outputs as JSON and CSV.

Exit codes: 0 success, 1 I/O or config error, 2 violated modelling
assumption, 3 failed acceptance check.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import verify
from .dynamics import PreconditionViolated, simulate
from .generators import convergence_gap
from .polynomials import TestFunction
from .rates import PRESETS, AssumptionViolated, Bounds, ConfigError, RateModel, validate
from .state import FinitePhylogeny, sample_distance_matrix
from .streams import run_replicates

SCHEMA_VERSION = 1
SUBCOMMANDS = ("simulate", "sample", "generator-check", "martingale-check", "moments", "stats", "contain",
               "dominate")
EXIT_OK, EXIT_IO, EXIT_ASSUMPTION, EXIT_CHECK = 0, 1, 2, 3


class CheckFailed(RuntimeError):
    pass


# config


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical(cfg).encode()).hexdigest()[:16]


def _resolve(value, base: Path):
    """Inline dicts pass through; strings are JSON file paths relative to the config."""
    if isinstance(value, str):
        path = (base / value) if not Path(value).is_absolute() else Path(value)
        with open(path) as fh:
            return json.load(fh)
    return value


def load_config(path: str | None, args) -> dict:
    """Read the config, inline referenced files and apply command-line overrides."""
    if path is None:
        cfg: dict = {}
        base = Path.cwd()
    else:
        with open(path) as fh:
            cfg = json.load(fh)
        base = Path(path).resolve().parent
    version = cfg.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}")
    cfg["schema_version"] = SCHEMA_VERSION
    for key in ("model", "model2", "initial"):
        if key in cfg:
            cfg[key] = _resolve(cfg[key], base)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.engine is not None:
        cfg["engine"] = args.engine
    if args.lineage:
        cfg["lineage"] = True
    cfg.setdefault("model", {"preset": "neutral"})
    cfg.setdefault("seed", 0)
    cfg.setdefault("engine", "reference")
    cfg.setdefault("lineage", False)
    cfg.setdefault("N", 16)
    cfg.setdefault("T", 1.0)
    cfg.setdefault("replicates", 100)
    Ns = cfg.get("N_list", [cfg["N"]])
    if any(int(N) < 2 for N in Ns):
        raise ConfigError("N must be at least 2")
    if cfg["engine"] not in ("reference", "thinning"):
        raise ConfigError(f"unknown engine {cfg['engine']!r}")
    return cfg


def build_model(d: dict) -> RateModel:
    """``{"preset": name, "params": {...}}`` or a full rate-model dict; always validated."""
    if "preset" in d:
        name = d["preset"]
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        model = PRESETS[name](**d.get("params", {}))
        if "bounds" in d:
            model = model.replace(bounds=Bounds(**{**model.bounds.to_dict(), **d["bounds"]}))
    else:
        model = RateModel.from_dict(d, validate_model=False)
    validate(model)
    return model


def build_initial(d: dict | None, model: RateModel):
    """Geometry (embedded at each ``N``), an explicit state, or a single clan."""
    ts = model.trait_space
    if d is None:
        d = {"single": {"mass": 0.5}}
    if "geometry" in d:
        return d["geometry"]
    if "state" in d:
        return FinitePhylogeny.from_dict(d["state"])
    if "single" in d:
        s = d["single"]
        trait = s.get("trait", 0 if ts.is_finite else 0.0)
        mass = float(s.get("mass", 0.5))

        def make(N):
            return FinitePhylogeny.single(max(1, int(round(mass * N))), trait, 1.0 / N, 1.0 / N, ts)
        return make
    raise ConfigError("initial needs one of 'geometry', 'state' or 'single'")


def build_spec(cfg: dict, model: RateModel | None = None) -> verify.ExperimentSpec:
    model = build_model(cfg["model"]) if model is None else model
    T = float(cfg["T"])
    grid = tuple(cfg.get("grid", np.linspace(0.0, T, 6).tolist()))
    K0 = cfg.get("K0", [-3.0, 3.0])
    return verify.ExperimentSpec(
        model, build_initial(cfg.get("initial"), model), tuple(int(N) for N in cfg.get("N_list", [cfg["N"]])),
        int(cfg["replicates"]), T, grid, int(cfg["seed"]), cfg["engine"], bool(cfg["lineage"]),
        tuple(cfg.get("eps_grid", (0.5, 0.25, 0.125))), tuple(K0) if isinstance(K0, list) else K0,
        float(cfg.get("strain_threshold", 0.05)))


def battery(cfg: dict) -> list[TestFunction]:
    """Test functions from ``cfg["test_functions"]``; defaults to one each of degree 0, 1 and 2."""
    fs = cfg.get("test_functions")
    if not fs:
        g = {"kind": "power_exp", "a": 2, "lam": 1.0}
        fs = [
            {"n": 0, "g": g, "name": "mass"},
            {"n": 1, "g": g, "f": {"product": [{"kind": "lorentzian", "center": 0.0, "scale": 1.0}]},
             "name": "trait"},
            {"n": 2, "g": g, "lam": [[0, 1], [1, 0]], "name": "pair",
             "f": {"product": [{"kind": "constant", "c": 1.0}, {"kind": "constant", "c": 1.0}]}},
        ]
    return [TestFunction.from_dict(f) for f in fs]


# output


class Writer:
    """Collects artifacts in memory; the orchestrator writes them at the end."""

    def __init__(self, out: Path, cfg: dict):
        self.out = out
        self.meta = {"schema_version": SCHEMA_VERSION, "config_hash": config_hash(cfg)}
        self.files: dict[str, str] = {}

    def json(self, name: str, payload: dict) -> None:
        body = dict(self.meta)
        body.update(payload)
        self.files[name] = json.dumps(_plain(body), sort_keys=True, indent=2) + "\n"

    def csv(self, name: str, rows: list[dict], columns: list[str] | None = None) -> None:
        buf = io.StringIO()
        buf.write(f"# schema_version={SCHEMA_VERSION} config_hash={self.meta['config_hash']}\n")
        columns = columns or (list(rows[0]) if rows else [])
        w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k)) for k in columns})
        self.files[name] = buf.getvalue()

    def text(self, name: str, body: str) -> None:
        self.files[name] = body

    def flush(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        for name, body in self.files.items():
            (self.out / name).write_text(body)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else v


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# subcommands


def cmd_simulate(cfg, w: Writer, log):
    spec = build_spec(cfg)
    N = spec.N_list[0]
    chi0 = spec.initial_state(N)

    def one(k, rng):
        def obs(t, chi, forest):
            return verify.final_statistics(chi, 0.25)
        tr = simulate(chi0, spec.model, spec.T, rng, N=N, engine=spec.engine, lineage=spec.lineage,
                      observe_times=spec.grid, on_observe=obs)
        return tr.times, tr.snapshots, tr.final.to_dict(), tr.extinction_time, tr.n_events

    runs = run_replicates(one, spec.replicates, spec.seed)
    rows = []
    for k, (times, snaps, _, _, _) in enumerate(runs):
        for t, s in zip(times, snaps):
            rows.append({"replicate": k, "t": t, **s})
    w.csv("trajectories.csv", rows, ["replicate", "t", "mass", "clans", "diameter", "cover", "trait_mean"])
    w.json("final_states.json", {"states": [r[2] for r in runs]})
    ext = [r[3] for r in runs if r[3] is not None]
    summary = {"replicates": spec.replicates, "N": N, "T": spec.T,
               "mean_final_mass": float(np.mean([r[1][-1]["mass"] if r[1] else 0.0 for r in runs])),
               "extinct_fraction": len(ext) / spec.replicates,
               "mean_events": float(np.mean([r[4] for r in runs]))}
    w.json("summary.json", summary)
    log(f"simulate: {spec.replicates} replicates, mean final mass {summary['mean_final_mass']:.4g}")


def cmd_sample(cfg, w: Writer, log):
    spec = build_spec(cfg)
    N = spec.N_list[0]
    n = int(cfg.get("sample_size", 5))
    chi0 = spec.initial_state(N)

    def one(k, rng):
        tr = simulate(chi0, spec.model, spec.T, rng, N=N, engine=spec.engine)
        if tr.final.is_empty():
            return None
        return sample_distance_matrix(tr.final, n, rng)

    mats = run_replicates(one, spec.replicates, spec.seed)
    w.text("samples.phy", "".join(m.to_phylip() for m in mats if m is not None))
    w.json("samples.json", {"sample_size": n, "samples": [
        None if m is None else {"distances": m.r, "traits": m.kappas} for m in mats]})
    log(f"sample: {sum(m is not None for m in mats)} non-empty samples of size {n}")


def cmd_generator_check(cfg, w: Writer, log):
    model = build_model(cfg["model"])
    Ns = [int(N) for N in cfg.get("N_list", [8, 16, 32, 64, 128])]
    geoms = cfg.get("geometries") or [{
        "masses": [0.5, 0.25, 0.75], "traits": [0.0, 0.5, -0.5] if not model.trait_space.is_finite else [0, 1, 0],
        "distances": [[0, 0.25, 0.5], [0.25, 0, 0.375], [0.5, 0.375, 0]]}]
    table = convergence_gap(battery(cfg), geoms, model, Ns)
    w.text("gaps.csv", f"# schema_version={SCHEMA_VERSION} config_hash={w.meta['config_hash']}\n" + table.to_csv())
    threshold = float(cfg.get("slope_threshold", -0.5))
    slopes = {f"{k[0]}|{k[1]}": v for k, v in table.slopes.items()}
    ok = all(v <= threshold for v in slopes.values())
    first = {(r["F"], r["state"]): r["gap"] for r in table.rows if r["N"] == min(Ns)}
    last = {(r["F"], r["state"]): r["gap"] for r in table.rows if r["N"] == max(Ns)}
    ok = ok and all(last[k] < first[k] for k in first)
    w.json("summary.json", {"slopes": slopes, "threshold": threshold, "passed": ok})
    log(f"generator-check: slopes {', '.join(f'{k}={v:.3f}' for k, v in slopes.items())}")
    if not ok:
        raise CheckFailed("a fitted slope exceeds the threshold or a gap did not shrink")


def cmd_martingale_check(cfg, w: Writer, log):
    spec = build_spec(cfg)
    gen = cfg.get("generator", "discrete")
    rep = verify.martingale_residual(spec, battery(cfg), generator=gen)
    w.csv("residuals.csv", rep.rows, ["F", "N", "t", "residual", "se", "ratio", "passed"])
    w.json("summary.json", {"generator": gen, "passed": rep.passed,
                            "max_ratio": max(r["ratio"] for r in rep.rows)})
    log(f"martingale-check: max |R|/SE = {max(r['ratio'] for r in rep.rows):.3f}")
    if not rep.passed:
        raise CheckFailed("martingale residual beyond 3.5 standard errors")


def cmd_moments(cfg, w: Writer, log):
    spec = build_spec(cfg)
    rep = verify.moment_bound_check(spec, tuple(cfg.get("q", (1, 2, 3))))
    w.csv("moments.csv", rep.rows, ["q", "t", "mean", "se", "sup_mean", "sup_se", "bound", "passed"])
    payload = {"passed": rep.passed}
    if "escape" in cfg:
        e = cfg["escape"]
        payload["escape"] = verify.small_mass_escape(spec, e.get("m0", [0.5, 0.25, 0.125]), float(e.get("delta", 1.0)))
    w.json("summary.json", payload)
    log(f"moments: bound {'held' if rep.passed else 'violated'}")
    if not rep.passed:
        raise CheckFailed("moment bound exceeded beyond 3.5 standard errors")


def cmd_stats(cfg, w: Writer, log):
    spec = build_spec(cfg)
    rep = verify.phylo_patterns(spec)
    w.csv("series.csv", rep.series.long_rows(), ["stat", "t", "mean", "se"])
    w.json("patterns.json", {"label": rep.label, "labels": rep.labels,
                             "extinction_times": rep.extinction_times})
    log(f"stats: majority label {rep.label}")


def cmd_contain(cfg, w: Writer, log):
    spec = build_spec(cfg)
    rep = verify.compact_containment_probe(spec, float(cfg.get("eps0", 0.1)), int(cfg.get("k_max", 4)),
                                           mass_ceiling=cfg.get("mass_ceiling"))
    rows = [{"scale": N, "k": k, "M": c["M"], "K": c["K"], "L": c["L"], "cover": c["N"],
             "joint_probability": rep.joint_probability[(N, k)]}
            for (N, k), c in sorted(rep.constants.items())]
    w.csv("containment.csv", rows, ["scale", "k", "M", "K", "L", "cover", "joint_probability"])
    w.json("containment.json", rep.to_dict())
    log(f"contain: uniform in N {rep.uniform_in_N}, bounded {rep.bounded}")
    if not (rep.uniform_in_N and rep.bounded):
        raise CheckFailed("containment constants are not stable across N")


def cmd_dominate(cfg, w: Writer, log):
    m1 = build_model(cfg["model"])
    if "model2" not in cfg:
        raise ConfigError("dominate needs 'model2'")
    m2 = build_model(cfg["model2"])
    spec = build_spec(cfg, m1)
    chi0 = spec.initial_state(spec.N_list[0])
    rep = verify.domination_ensemble(chi0, m1, m2, spec.T, spec.replicates, spec.seed)
    w.json("domination.json", rep)
    log(f"dominate: {rep['violations']} violations over {rep['event_checks']} event checks")
    if rep["violations"]:
        raise CheckFailed("domination failed at some event")


COMMANDS = {
    "simulate": cmd_simulate, "sample": cmd_sample, "generator-check": cmd_generator_check,
    "martingale-check": cmd_martingale_check, "moments": cmd_moments, "stats": cmd_stats,
    "contain": cmd_contain, "dominate": cmd_dominate,
}


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phylosim", description="Simulate and check trait-structured phylogeny dynamics.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--engine", choices=("reference", "thinning"))
    p.add_argument("--lineage", action="store_true", help="track individual genealogies")
    p.add_argument("--quiet", action="store_true")
    return p


def run(argv=None) -> int:
    args = parser().parse_args(argv)

    def log(msg):
        if not args.quiet:
            print(msg)

    try:
        cfg = load_config(args.config, args)
        w = Writer(Path(args.out), cfg)
        try:
            COMMANDS[args.subcommand](cfg, w, log)
        finally:
            w.flush()
    except AssumptionViolated as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except PreconditionViolated as e:
        print(f"error: precondition violated: {e}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except CheckFailed as e:
        print(f"check failed: {e}", file=sys.stderr)
        return EXIT_CHECK
    except (OSError, ConfigError, json.JSONDecodeError, KeyError, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
