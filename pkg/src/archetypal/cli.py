"""Command-line driver: ``archetypal <command> --config FILE``.

Every artifact carries the SHA-256 of the canonical (seed-resolved) config
and the seed, so two runs of the same config produce identical bytes.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np
import yaml

from . import chain, lattice, laws, pantograph, solver, supercritical
from .errors import ArchetypalError, InvalidLaw
from .rng import set_threads

log = logging.getLogger("archetypal")

EXIT_OK, EXIT_CONFIG, EXIT_PRECONDITION = 0, 1, 2
CAP_WARN_RATE = 0.01
STOCHASTIC = {"simulate", "upsilon", "verify"}
COMMANDS = ("classify", "simulate", "solve", "upsilon", "pantograph", "lattice", "verify")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_count = {"type": "integer", "minimum": 1}
_grid = {
    "type": "object",
    "required": ["x_min", "x_max", "dx"],
    "properties": {"x_min": _num, "x_max": _num, "dx": _pos},
    "additionalProperties": False,
}
_function = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["constant", "sin", "cos2pi", "identity", "uniform_cdf", "step"]},
        "value": _num,
        "amplitude": _num,
    },
    "additionalProperties": False,
}
_rule = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {
            "enum": ["hit_zero", "hit_one", "hit_positive", "small_modulus", "lattice_return", "fixed_horizon"]
        },
        "M": _pos,
        "n": _count,
    },
    "additionalProperties": False,
}
_shift = {
    "type": "object",
    "required": ["kind"],
    "properties": {"kind": {"enum": sorted(laws.SHIFT_KINDS)}, "params": {"type": "object"}},
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "law": {
            "type": "object",
            "required": ["atoms"],
            "properties": {
                "atoms": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["a", "p", "shift"],
                        "properties": {"a": _num, "p": _pos, "shift": _shift},
                        "additionalProperties": False,
                    },
                },
                "q_lattice": {
                    "type": "object",
                    "required": ["q", "m"],
                    "properties": {"q": _num, "m": {"type": "array", "items": {"type": "integer"}}},
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "pantograph": {
            "type": "object",
            "required": ["kappas", "atoms"],
            "properties": {
                "kappas": {"type": "array", "minItems": 1, "items": _num},
                "atoms": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["a", "c", "p"],
                        "properties": {"a": _num, "c": _num, "p": _pos},
                        "additionalProperties": False,
                    },
                },
            },
            "additionalProperties": False,
        },
        "classify": {
            "type": "object",
            "properties": {"tol_K": _pos, "n_paths": _count, "horizon": _count},
            "additionalProperties": False,
        },
        "simulate": {
            "type": "object",
            "required": ["rule"],
            "properties": {
                "x0": _num,
                "rule": _rule,
                "n_paths": _count,
                "cap": _count,
                "observable": _function,
            },
            "additionalProperties": False,
        },
        "solve": {
            "type": "object",
            "required": ["grid", "init"],
            "properties": {
                "grid": _grid,
                "init": _function,
                "max_iter": _count,
                "step_tol": _pos,
                "tail_tol": _pos,
                "refine": _count,
            },
            "additionalProperties": False,
        },
        "upsilon": {
            "type": "object",
            "properties": {
                "n_samples": _count,
                "eps_tail": _pos,
                "cap": _count,
                "n_mc": _count,
                "probes": {"type": "array", "items": _num, "minItems": 1},
                "escape": {
                    "type": "object",
                    "properties": {
                        "x": {"type": "array", "items": _num},
                        "b": _num,
                        "horizon": _count,
                        "n_paths": _count,
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "pantograph_solve": {
            "type": "object",
            "required": ["grid", "init"],
            "properties": {
                "grid": _grid,
                "init": _function,
                "max_iter": _count,
                "step_tol": _pos,
                "cross_validate": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "lattice": {
            "type": "object",
            "properties": {
                "n_theta": _count,
                "n_paths": {"type": "integer", "minimum": 0},
                "cap": _count,
                "values": {"type": "array", "items": _num, "minItems": 1},
                "tol": _pos,
            },
            "additionalProperties": False,
        },
        "verify": {
            "type": "object",
            "required": ["probes", "rule"],
            "properties": {
                "grid_csv": {"type": "string"},
                "grid": _grid,
                "init": _function,
                "probes": {"type": "array", "items": _num, "minItems": 1},
                "rule": _rule,
                "n_paths": _count,
                "cap": _count,
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


class ConfigError(Exception):
    pass


def bundled_configs() -> dict[str, Path]:
    """Name -> path of every config shipped with the package."""
    root = Path(__file__).with_name("configs")
    return {p.stem: p for p in sorted(root.glob("*.yaml"))}


# --------------------------------------------------------------------------
# config helpers


def resolve_config_path(name) -> Path:
    """A filesystem path, or the name of a bundled config such as ``bernoulli_a2``."""
    path = Path(name)
    if not path.exists() and str(name) in bundled_configs():
        return bundled_configs()[str(name)]
    return path


def load_config(path, seed: Optional[int] = None) -> dict:
    path = resolve_config_path(path)
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    if seed is not None:
        cfg["seed"] = int(seed)
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config invalid at {list(exc.absolute_path)}: {exc.message}") from exc
    if "law" not in cfg and "pantograph" not in cfg:
        raise ConfigError("config needs a 'law' or a 'pantograph' section")
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def law_of(cfg: dict) -> laws.CoefficientLaw:
    try:
        if "law" in cfg:
            return laws.CoefficientLaw.from_dict(cfg["law"])
        return pantograph.pantograph_to_archetypal(pantograph_spec_of(cfg))
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"bad law parameters: {exc}") from exc
    except InvalidLaw as exc:
        raise ConfigError(str(exc)) from exc


def pantograph_spec_of(cfg: dict) -> pantograph.PantographSpec:
    try:
        return pantograph.PantographSpec.from_dict(cfg["pantograph"])
    except InvalidLaw as exc:
        raise ConfigError(str(exc)) from exc


def make_function(spec: dict):
    kind = spec["kind"]
    value = float(spec.get("value", 1.0))
    amp = float(spec.get("amplitude", 1.0))
    if kind == "constant":
        return lambda x: np.full(np.shape(x), value, dtype=float)
    if kind == "sin":
        return lambda x: amp * np.sin(x)
    if kind == "cos2pi":
        return lambda x: amp * np.cos(2 * np.pi * np.asarray(x, dtype=float))
    if kind == "identity":
        return lambda x: np.asarray(x, dtype=float)
    if kind == "uniform_cdf":
        return lambda x: np.clip((np.asarray(x, dtype=float) + 2.0) / 4.0, 0.0, 1.0)
    if kind == "step":
        return lambda x: (np.asarray(x, dtype=float) >= value).astype(float)
    raise ConfigError(f"unknown function kind {kind!r}")


def make_rule(spec: dict):
    kind = spec["kind"]
    if kind == "hit_zero":
        return chain.HitZero()
    if kind == "hit_one":
        return chain.HitOne()
    if kind == "hit_positive":
        return chain.HitPositive()
    if kind == "lattice_return":
        return chain.LatticeReturn()
    if kind == "small_modulus":
        if "M" not in spec:
            raise ConfigError("small_modulus needs M")
        return chain.SmallModulus(float(spec["M"]))
    if kind == "fixed_horizon":
        if "n" not in spec:
            raise ConfigError("fixed_horizon needs n")
        return chain.FixedHorizon(int(spec["n"]))
    raise ConfigError(f"unknown rule {kind!r}")


def grid_of(spec: dict, f) -> solver.GridFunction:
    if spec["x_max"] <= spec["x_min"]:
        raise ConfigError("grid needs x_max > x_min")
    return solver.GridFunction.from_function(f, spec["x_min"], spec["x_max"], spec["dx"])


# --------------------------------------------------------------------------
# output


class Output:
    def __init__(self, root: Path, cfg: dict):
        self.root = root
        self.meta = {"config_hash": config_hash(cfg), "seed": cfg.get("seed")}
        self.written: list[str] = []
        self.warnings: list[str] = []

    def json(self, name: str, payload: dict) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / name
        body = dict(payload)
        body.update(self.meta)
        with open(path, "w") as fh:
            json.dump(_clean(body), fh, indent=2, sort_keys=True, allow_nan=False)
            fh.write("\n")
        self.written.append(name)
        return path

    def csv(self, name: str, writer) -> Path:
        """Let ``writer(path)`` produce a CSV, then prepend a provenance comment."""
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / name
        writer(path)
        body = path.read_text()
        stamp = f"# config_hash={self.meta['config_hash']} seed={self.meta['seed']}\n"
        path.write_text(stamp + body)
        self.written.append(name)
        return path

    def check_cap(self, rate: float, what: str) -> None:
        if rate > CAP_WARN_RATE:
            msg = f"{what}: {100 * rate:.2f}% of paths hit the step cap"
            self.warnings.append(msg)
            log.warning(msg)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# --------------------------------------------------------------------------
# commands


def cmd_classify(cfg: dict, out: Output) -> None:
    law = law_of(cfg)
    opts = cfg.get("classify", {})
    report = laws.classify_regime(law, opts.get("tol_K", laws.DEFAULT_TOL_K), rng=cfg.get("seed", 0))
    payload = {"law": law.to_dict(), "report": report.to_dict()}
    if law.unit_modulus and any(at.a == -1.0 for at in law.atoms):
        payload["unit_modulus"] = lattice.classify_unit_modulus(law).to_dict()
    if law.q_lattice is not None:
        payload["lattice_drift"] = str(laws.lattice_drift(law))
    if report.regime is laws.Regime.DEGENERATE_ZERO and "seed" in cfg:
        n_paths = opts.get("n_paths", 100_000)
        horizon = opts.get("horizon", 10)
        batch = chain.simulate_paths(law, 0.0, chain.HitZero(), n_paths, 10_000, cfg["seed"])
        q0 = 1.0 - report.p_zero
        payload["tau0_survival"] = [
            {
                "n": n,
                "empirical": float(np.mean(batch.tau > n)),
                "geometric": q0**n,
                "stderr": math.sqrt(q0**n * (1 - q0**n) / n_paths),
            }
            for n in range(1, horizon + 1)
        ]
    out.json("classify.json", payload)
    print(json.dumps(_clean(report.to_dict()), sort_keys=True))


def cmd_simulate(cfg: dict, out: Output) -> None:
    law = law_of(cfg)
    opts = cfg["simulate"] if "simulate" in cfg else {}
    if "rule" not in opts:
        raise ConfigError("simulate needs a 'simulate.rule' section")
    rule = make_rule(opts["rule"])
    n_paths = opts.get("n_paths", 10_000)
    cap = opts.get("cap", chain.DEFAULT_CAP)
    x0 = float(opts.get("x0", 0.0))
    batch = chain.simulate_paths(law, x0, rule, n_paths, cap, cfg["seed"])
    out.csv("paths.csv", batch.write_csv)
    counts = np.bincount(batch.tau[batch.stopped], minlength=cap + 1)

    def write_hist(path):
        with open(path, "w") as fh:
            fh.write("tau,count,pmf\n")
            total = max(int(counts.sum()), 1)
            for n in np.nonzero(counts)[0]:
                fh.write(f"{int(n)},{int(counts[n])},{counts[n] / total!r}\n")

    out.csv("tau_histogram.csv", write_hist)
    summary = {"n_paths": n_paths, "cap": cap, "x0": x0, "cap_rate": batch.cap_rate}
    if batch.stopped.any():
        summary["tau_mean"] = float(batch.tau[batch.stopped].mean())
    if "observable" in opts:
        y = make_function(opts["observable"])
        vals = np.asarray(y(batch.X[batch.stopped]), dtype=float)
        est, se = chain.sample_mean(vals)
        summary.update({"estimate": est, "stderr": se, "y_x0": float(y(np.array([x0]))[0])})
    out.check_cap(batch.cap_rate, "simulate")
    out.json("simulate.json", summary)


def cmd_solve(cfg: dict, out: Output) -> None:
    law = law_of(cfg)
    if "solve" not in cfg:
        raise ConfigError("solve needs a 'solve' section")
    opts = cfg["solve"]
    y0 = grid_of(opts["grid"], make_function(opts["init"]))
    quad = solver.QuadratureSettings(tail_tol=opts.get("tail_tol", 1e-10), refine=opts.get("refine", 1))
    y, trace = solver.picard_iterate(y0, law, opts.get("max_iter", 500), opts.get("step_tol", 1e-12), quad)
    out.csv("trace.csv", trace.write_csv)
    out.csv("solution.csv", y.write_csv)
    out.json("solution_header.json", y.header())
    out.json(
        "solve.json",
        {
            "iterations": trace.iterations,
            "final_step": trace.step_norms[-1] if trace.step_norms else 0.0,
            "final_dispersion": trace.dispersions[-1] if trace.dispersions else solver.dispersion(y0),
            "final_residual": trace.final_residual,
            "initial_dispersion": solver.dispersion(y0),
        },
    )


def cmd_upsilon(cfg: dict, out: Output) -> None:
    law = law_of(cfg)
    opts = cfg.get("upsilon", {})
    seed = np.random.SeedSequence(cfg["seed"])
    s_samp, s_ver, s_esc = seed.spawn(3)
    sample = supercritical.sample_upsilon_batch(
        law,
        opts.get("n_samples", 100_000),
        opts.get("eps_tail", supercritical.DEFAULT_EPS_TAIL),
        opts.get("cap", supercritical.DEFAULT_CAP),
        s_samp,
    )
    out.check_cap(sample.cap_rate, "upsilon")
    F = supercritical.build_cdf(sample.values)
    out.csv("upsilon_samples.csv", sample.write_csv)
    out.csv("upsilon_cdf.csv", F.write_csv)
    probes = opts.get("probes", list(np.linspace(-3, 3, 25)))
    report = supercritical.verify_solution(F, law, probes, opts.get("n_mc", 100_000), s_ver)
    payload = {
        "diagnostics": sample.diagnostics(),
        "mean": float(sample.values.mean()),
        "variance": float(sample.values.var(ddof=1)) if len(sample) > 1 else 0.0,
        "verification": report.to_dict(),
    }
    if "escape" in opts:
        esc = opts["escape"]
        rows = []
        for x, child in zip(esc.get("x", [0.0]), s_esc.spawn(len(esc.get("x", [0.0])))):
            e = supercritical.estimate_escape_probability(
                law, x, esc.get("b", 0.0), esc.get("horizon"), esc.get("n_paths", 100_000), child
            )
            rows.append({"x": x, "F_upsilon": float(F(x)), **e.to_dict()})
        payload["escape"] = rows
    out.json("upsilon.json", payload)


def cmd_pantograph(cfg: dict, out: Output) -> None:
    if "pantograph" not in cfg:
        raise ConfigError("pantograph needs a 'pantograph' section")
    spec = pantograph_spec_of(cfg)
    law = pantograph.pantograph_to_archetypal(spec)
    payload = {
        "spec": spec.to_dict(),
        "law": law.to_dict(),
        "operator_coefficients": pantograph.differential_coefficients(spec.kappas).tolist(),
        "regime": laws.classify_regime(law, rng=cfg.get("seed", 0)).to_dict(),
    }
    opts = cfg.get("pantograph_solve")
    if opts is not None:
        y0 = grid_of(opts["grid"], make_function(opts["init"]))
        payload["initial_ode_residual"] = pantograph.ode_residual(y0, spec)
        if spec.kappas == (1.0,):
            max_iter = opts.get("max_iter", 200)
            y, trace = pantograph.picard_variation_of_constants(
                y0, spec, max_iter, opts.get("step_tol", 1e-12)
            )
            out.csv("voc_trace.csv", trace.write_csv)
            out.csv("voc_solution.csv", y.write_csv)
            payload["voc"] = {
                "iterations": trace.iterations,
                "final_dispersion": trace.dispersions[-1],
                "final_ode_residual": trace.final_residual,
            }
            if opts.get("cross_validate", False):
                payload["cross_validation"] = pantograph.cross_validate(y0, spec, max_iter).to_dict()
        else:
            payload["voc"] = None
            payload["note"] = "variation of constants is first order only"
    out.json("pantograph.json", payload)


def cmd_lattice(cfg: dict, out: Output) -> None:
    law = law_of(cfg)
    opts = cfg.get("lattice", {})
    tol = opts.get("tol", lattice.SPAN_TOL)
    payload = {}
    if "values" in opts:
        span = lattice.real_gcd_span(opts["values"], tol)
        d = span.to_dict()
        if span.arithmetic:
            d["lambda0"] = lattice.coset_offset(opts["values"], span.lam, tol)
        payload["span"] = d
    if law.q_lattice is not None:
        n_paths = opts.get("n_paths", 0)
        if n_paths and "seed" not in cfg:
            raise ConfigError("empirical span sampling needs a seed")
        rep = lattice.q_lattice_report(
            law, opts.get("n_theta", 50), n_paths, opts.get("cap", 10_000), cfg.get("seed"), tol
        )
        if rep.cap_rate is not None:
            out.check_cap(rep.cap_rate, "lattice")
        payload["q_lattice"] = rep.to_dict()
    if law.unit_modulus and any(at.a == -1.0 for at in law.atoms):
        payload["unit_modulus"] = lattice.classify_unit_modulus(law, tol).to_dict()
    if not payload:
        raise lattice.Inapplicable("law has neither a q_lattice nor |alpha| = 1, and no values given")
    out.json("lattice.json", payload)


def cmd_verify(cfg: dict, out: Output, config_dir: Path) -> None:
    law = law_of(cfg)
    if "verify" not in cfg:
        raise ConfigError("verify needs a 'verify' section")
    opts = cfg["verify"]
    if "grid_csv" in opts:
        path = Path(opts["grid_csv"])
        if not path.is_absolute():
            path = config_dir / path
        try:
            y = solver.GridFunction.read_csv(path)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read grid CSV: {exc}") from exc
    elif "grid" in opts and "init" in opts:
        y = grid_of(opts["grid"], make_function(opts["init"]))
    else:
        raise ConfigError("verify needs grid_csv or grid + init")
    rule = make_rule(opts["rule"])
    seeds = np.random.SeedSequence(cfg["seed"]).spawn(len(opts["probes"]))
    rows = []
    worst_cap = 0.0
    for x, s in zip(opts["probes"], seeds):
        est = chain.stopped_mean(y, law, x, rule, opts.get("n_paths", 10_000), opts.get("cap", chain.DEFAULT_CAP), s)
        yx = float(y(np.array([x]))[0])
        rows.append(
            {
                "x": x,
                "y": yx,
                "estimate": est.estimate,
                "stderr": est.stderr,
                "cap_rate": est.cap_rate,
                "within_3se": abs(est.estimate - yx) <= 3 * est.stderr + 1e-12,
            }
        )
        worst_cap = max(worst_cap, est.cap_rate)
    out.check_cap(worst_cap, "verify")
    out.json("verify.json", {"residual_sup": solver.residual_sup(y, law), "probes": rows})


def _precondition_report(cfg: dict) -> Optional[dict]:
    try:
        return laws.classify_regime(law_of(cfg), rng=cfg.get("seed", 0)).to_dict()
    except Exception:  # the report is best-effort context for the error
        return None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="archetypal", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="YAML experiment config, or a bundled config name")
    p.add_argument("--out", help="output directory (default: $ARCHETYPAL_OUT or ./out)")
    p.add_argument("--seed", type=int, help="master seed; overrides the config")
    p.add_argument("--threads", type=int, help="worker threads for path simulation")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if args.threads:
        set_threads(args.threads)
    try:
        cfg = load_config(args.config, args.seed)
        if args.command in STOCHASTIC and "seed" not in cfg:
            raise ConfigError(f"'{args.command}' is stochastic and needs a seed")
        root = Path(args.out or os.environ.get("ARCHETYPAL_OUT") or "out")
        out = Output(root / args.command, cfg)
        if args.command == "verify":
            cmd_verify(cfg, out, resolve_config_path(args.config).resolve().parent)
        else:
            globals()[f"cmd_{args.command}"](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArchetypalError as exc:
        print(f"precondition failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        report = _precondition_report(cfg)
        if report is not None:
            print(json.dumps(_clean(report), sort_keys=True), file=sys.stderr)
        return EXIT_PRECONDITION
    for w in out.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
