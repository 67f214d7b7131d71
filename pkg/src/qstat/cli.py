"""Command-line driver: ``qstat {simulate,infer,info,jumps,validate} CONFIG``.

Exit codes: 0 success, 2 validation error, 3 numerical error, 4 I/O error.
Errors are also written to stderr as a one-line JSON object.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import bank, inference, information, jumps, optomech
from .errors import QstatError, ResourceLimitError, ValidationError
from .gaussmarkov import GaussianRecord, hgmm_sample

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

_range = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_bound = {"type": ["number", "null"]}
_region = {"type": "object", "properties": {
    "s_a": {"type": "array", "items": _bound, "minItems": 2, "maxItems": 2},
    "s_b": {"type": "array", "items": _bound, "minItems": 2, "maxItems": 2}},
    "additionalProperties": False}
_theta = {"type": "object", "required": ["s_a", "s_b"],
          "properties": {"s_a": {"type": "number", "minimum": 0},
                         "s_b": {"type": "number", "minimum": 0}}}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "units": {"enum": ["gamma_b", "si"]},
        "optomech": {
            "type": "object", "required": ["g", "gamma_a", "gamma_b", "s_a_prime"],
            "properties": {
                "g": {"oneOf": [{"type": "number"}, _range]},
                "gamma_a": {"type": "number", "exclusiveMinimum": 0},
                "gamma_b": {"type": "number", "exclusiveMinimum": 0},
                "s_a_prime": {"type": "number", "minimum": 0}}},
        "theta": _theta,
        "record": {"type": "object", "required": ["dt", "duration"], "properties": {
            "dt": {"type": "number", "exclusiveMinimum": 0},
            "duration": {"type": "number", "minimum": 0},
            "scheme": {"enum": ["exact", "euler"]}}},
        "grid": {"type": "object", "properties": {
            "sa_range": _range, "sb_range": _range,
            "shape": {"type": "array", "items": {"type": "integer", "minimum": 2},
                      "minItems": 2, "maxItems": 2},
            "refine": {"type": "boolean"}}},
        "prior": {"oneOf": [{"enum": ["uniform", "jeffreys"]},
                            {"type": "object", "required": ["file"],
                             "properties": {"file": {"type": "string"}}}]},
        "credible_level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "hypotheses": {"oneOf": [
            {"type": "array", "items": {
                "type": "object", "required": ["name", "prior", "theta_prior"],
                "properties": {"name": {"type": "string"},
                               "prior": {"type": "number", "minimum": 0},
                               "theta_prior": {"type": "object", "required": ["kind"]},
                               "constraint": _region}}},
            {"type": "object", "required": ["preset"], "properties": {
                "preset": {"enum": ["sideband", "zero_point"]},
                "eps": {"type": "number", "minimum": 0}}}]},
        "seed": {"type": "integer", "minimum": 0},
        "workers": {"type": "integer", "minimum": 1},
        "output_dir": {"type": "string"},
        "records_dir": {"type": "string"},
        "info": {"type": "object", "properties": {
            "theta0": _theta, "theta1": _theta,
            "duration": {"type": "number", "exclusiveMinimum": 0},
            "n_omega": {"type": "integer", "minimum": 16}}},
        "jumps": {"type": "object", "required": ["gamma", "s"], "properties": {
            "gamma": {"type": "number", "exclusiveMinimum": 0},
            "s": {"type": "number", "exclusiveMinimum": 0},
            "truth": {"enum": ["H0", "H1"]},
            "duration": {"type": "number", "minimum": 0},
            "dt": {"type": "number", "exclusiveMinimum": 0},
            "n_samples": {"type": "integer", "minimum": 1},
            "sample_interval": {"type": "number", "exclusiveMinimum": 0},
            "sampling": {"enum": ["path", "steady_state"]}}},
    },
}


# configuration -------------------------------------------------------------

def _set_path(cfg: dict, dotted: str, value):
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path, overrides=()) -> dict:
    """Read, override (``key.sub=value``), validate and normalize units."""
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from None
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        _set_path(cfg, k, _parse_value(v))
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValidationError(f"config invalid at {where}: {exc.message}") from None
    return normalize_units(cfg)


def normalize_units(cfg: dict) -> dict:
    """Convert an SI config (rates in 1/s, times in s) to units of gamma_b."""
    cfg = copy.deepcopy(cfg)
    if cfg.get("units", "gamma_b") != "si":
        return cfg
    if "optomech" in cfg:
        unit = float(cfg["optomech"]["gamma_b"])
    elif "jumps" in cfg:
        unit = float(cfg["jumps"]["gamma"])
    else:
        raise ValidationError("SI units need optomech.gamma_b or jumps.gamma as the rate scale")
    om = cfg.get("optomech")
    if om:
        g = om["g"]
        om["g"] = [v / unit for v in g] if isinstance(g, list) else g / unit
        om["gamma_a"] /= unit
        om["gamma_b"] /= unit
    for sec, keys in (("record", ("dt", "duration")), ("info", ("duration",)),
                      ("jumps", ("duration", "dt", "sample_interval"))):
        for k in keys:
            if sec in cfg and k in cfg[sec]:
                cfg[sec][k] *= unit
    if "jumps" in cfg:
        cfg["jumps"]["gamma"] /= unit
    cfg["units"] = "gamma_b"
    cfg["si_rate_unit"] = unit
    return cfg


def _require(cfg, *keys):
    for k in keys:
        if k not in cfg:
            raise ValidationError(f"config section {k!r} is required for this command")


def _optomech(cfg) -> optomech.OptomechConfig:
    return optomech.OptomechConfig.from_dict(cfg["optomech"])


def _theta(doc) -> optomech.Theta:
    return optomech.Theta(doc["s_a"], doc["s_b"])


def _fingerprint(cfg) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def _out_dir(cfg, args) -> Path:
    out = Path(args.out or cfg.get("output_dir", "qstat_out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc):
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# commands ------------------------------------------------------------------

def cmd_simulate(cfg, args) -> dict:
    _require(cfg, "optomech", "theta", "record")
    config = _optomech(cfg)
    theta = _theta(cfg["theta"])
    rec = cfg["record"]
    dt, n = float(rec["dt"]), int(round(rec["duration"] / rec["dt"]))
    seed = cfg.get("seed", 0)
    children = np.random.SeedSequence(seed).spawn(2)
    fp = _fingerprint({k: cfg[k] for k in ("optomech", "theta", "record")})
    out = _out_dir(cfg, args)
    written = []
    for det, child, stem in ((optomech.Detuning.RED, children[0], "record_minus"),
                             (optomech.Detuning.BLUE, children[1], "record_plus")):
        model = optomech.build_model(config, theta, det)
        _, r = hgmm_sample(model, n, seed=child, dt=dt, scheme=rec.get("scheme", "exact"))
        r = GaussianRecord(dt, r.increments.reshape(n, 2), seed=seed, fingerprint=fp,
                           meta={"detuning": det.value, "units": "gamma_b"})
        written += [str(p) for p in r.write(out / stem)]
    return {"written": written}


def _read_records(cfg, args):
    src = Path(args.records or cfg.get("records_dir") or args.out or cfg.get("output_dir", "."))
    return (GaussianRecord.read(src / "record_minus"), GaussianRecord.read(src / "record_plus"))


def _grid(cfg) -> bank.ThetaGrid:
    g = cfg.get("grid", {})
    return bank.ThetaGrid.uniform(tuple(g.get("sa_range", (0.0, 2.0))),
                                  tuple(g.get("sb_range", (0.0, 3.0))),
                                  tuple(g.get("shape", (41, 41))))


def _prior(cfg, choice, config, grid, duration):
    if choice in (None, "uniform"):
        return inference.uniform_prior(grid)
    if choice == "jeffreys":
        return inference.jeffreys_prior(config, grid, duration)
    path = choice["file"] if isinstance(choice, dict) else choice
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] != grid.n_cells or not np.allclose(data[:, :2], grid.points()):
        raise ValidationError("prior file does not match the inference grid")
    return inference.normalize_density(grid, data[:, 2].reshape(grid.shape))


def _hypotheses(cfg):
    h = cfg.get("hypotheses")
    if h is None:
        return inference.sideband_hypotheses()
    if isinstance(h, dict):
        if h["preset"] == "sideband":
            return inference.sideband_hypotheses()
        return inference.zero_point_hypotheses(float(h.get("eps", 0.0)))
    return [inference.HypothesisSpec.from_dict(d) for d in h]


def cmd_infer(cfg, args) -> dict:
    _require(cfg, "optomech")
    config = _optomech(cfg)
    rm, rp = _read_records(cfg, args)
    workers = args.workers or cfg.get("workers") or bank.default_workers()
    grid = _grid(cfg)
    surface = coarse = bank.loglik_surface(config, grid, rm, rp, workers=workers)
    if cfg.get("grid", {}).get("refine", False):
        # hypotheses stay on the full box; the posterior uses the zoomed grid
        grid = bank.refine_grid(surface)
        surface = bank.loglik_surface(config, grid, rm, rp, workers=workers)
    out = _out_dir(cfg, args)
    surface.write(out / "loglik_surface")
    choice = args.prior or cfg.get("prior", "uniform")
    prior = _prior(cfg, choice, config, grid, max(rm.duration, rp.duration, 1e-12))
    post = inference.posterior(surface, prior)
    post.write_csv(out / "posterior.csv")
    level = float(cfg.get("credible_level", 0.95))
    region = inference.credible_region(post, level)
    mean, cov = inference.posterior_moments(post)
    pts = grid.points()[region.mask.ravel()]
    summary = {"credible_level": level, "credible_mass": region.mass,
               "credible_cells": pts.tolist(), "posterior_mean": mean.tolist(),
               "posterior_cov": cov.tolist(), "log_evidence": post.log_normalizer,
               "prior": choice if isinstance(choice, str) else "file",
               "max_loglik_cell": list(surface.argmax()), "failed_cells": len(surface.errors)}
    _write_json(out / "posterior_summary.json", summary)
    hyps = _hypotheses(cfg)
    result = inference.composite_test(coarse, hyps)
    result.write_json(out / "hypotheses.json")
    return {"posterior_mean": mean.tolist(), "hypotheses": result.to_dict()["hypotheses"]}


def cmd_info(cfg, args) -> dict:
    _require(cfg, "optomech")
    config = _optomech(cfg)
    info = cfg.get("info", {})
    t1 = info.get("theta1", cfg.get("theta"))
    t0 = info.get("theta0", t1)
    if t1 is None:
        raise ValidationError("info needs info.theta1 (or theta)")
    T = float(info.get("duration", cfg.get("record", {}).get("duration", 1.0)))
    omega = information.default_omega(config, int(info.get("n_omega", 4096)))
    report = information.info_report(config, (t0["s_a"], t0["s_b"]),
                                     (t1["s_a"], t1["s_b"]), T, omega)
    spacing = None
    if report["crb"] is not None:
        spacing = (0.25 * np.sqrt(np.diag(report["crb"]))).tolist()
    out = _out_dir(cfg, args)
    doc = {"info_measures": report, "recommended_grid_spacing": spacing}
    _write_json(out / "info_report.json", doc)
    theta = _theta(t1)
    np.savetxt(out / "spectra.csv", optomech.spectra_table(config, theta, omega), delimiter=",",
               header="omega,S_minus,S_plus", comments="", fmt="%.17g")
    return doc


def cmd_jumps(cfg, args) -> dict:
    _require(cfg, "jumps")
    j = cfg["jumps"]
    gamma, s = float(j["gamma"]), float(j["s"])
    truth = j.get("truth", "H1")
    seed = cfg.get("seed", 0)
    seeds = np.random.SeedSequence(seed).spawn(3)
    T = float(j.get("duration", 20.0 / gamma))
    dt = float(j.get("dt", 0.01 / gamma))
    out = _out_dir(cfg, args)
    h0 = jumps.EnergyModelH0(gamma, s)
    jumps.simulate_energy_sde(h0, T, dt, seed=seeds[0]).write_csv(out / "energy_h0.csv")
    if s >= 0.5:
        h1 = jumps.EnergyModelH1(gamma, s)
        jumps.gillespie_jump(h1, T, seed=seeds[1]).write_csv(out / "energy_h1.csv")
    elif truth == "H1":
        raise ValidationError("H1 needs S >= 0.5")
    n = int(j.get("n_samples", 1000))
    interval = float(j.get("sample_interval", 10.0 / gamma))
    if j.get("sampling", "path") == "steady_state":
        samples = jumps.sample_steady_state(truth, s, n, seed=seeds[2])
    elif truth == "H1":
        path = jumps.gillespie_jump(jumps.EnergyModelH1(gamma, s), n * interval, seed=seeds[2])
        samples = jumps.sample_sparse(path, interval, n)
    else:
        path = jumps.simulate_energy_sde(h0, n * interval, dt, seed=seeds[2])
        samples = jumps.sample_sparse(path, interval, n)
    res = jumps.iid_energy_test(samples, s)
    res.write_json(out / "jump_test.json")
    return res.to_dict()


def cmd_validate(cfg, args) -> dict:
    checks = []
    if "optomech" in cfg:
        config = _optomech(cfg)
        for det in optomech.Detuning:
            optomech.check_hurwitz(optomech.drift_matrix(config, det))
        checks.append("optomech stable")
        if not config.weak_coupling:
            checks.append(f"warning: cooperativity {config.cooperativity:.3g} >= 0.1")
    if "theta" in cfg:
        _theta(cfg["theta"])
    if "grid" in cfg:
        _grid(cfg)
        checks.append("grid ok")
    if isinstance(cfg.get("prior"), dict):
        if not Path(cfg["prior"]["file"]).exists():
            raise FileNotFoundError(cfg["prior"]["file"])
    if "hypotheses" in cfg and "grid" in cfg:
        grid = _grid(cfg)
        for h in _hypotheses(cfg):
            h.density(grid)
        checks.append("hypotheses ok")
    if "jumps" in cfg and cfg["jumps"].get("truth", "H1") == "H1":
        jumps.EnergyModelH1(cfg["jumps"]["gamma"], cfg["jumps"]["s"])
    return {"valid": True, "checks": checks}


COMMANDS = {"simulate": cmd_simulate, "infer": cmd_infer, "info": cmd_info,
            "jumps": cmd_jumps, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qstat", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", help="experiment JSON config")
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. --set record.duration=100")
        if name == "infer":
            sp.add_argument("--records", help="directory with record_minus/record_plus")
            sp.add_argument("--workers", type=int,
                            help="parallel workers (default: $QSTAT_WORKERS or 1)")
            sp.add_argument("--prior", help="uniform, jeffreys, or a prior CSV path")
    return p


def _fail(code, exc):
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc),
                                 "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    try:
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        cfg = load_config(args.config, overrides)
        if getattr(args, "workers", None) is not None and args.workers < 1:
            raise ValidationError("--workers must be >= 1")
        result = COMMANDS[args.command](cfg, args)
    except (ValidationError, jsonschema.ValidationError, KeyError, TypeError) as exc:
        return _fail(EXIT_VALIDATION, exc)
    except ResourceLimitError as exc:
        return _fail(EXIT_NUMERICAL, exc)
    except (QstatError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERICAL, exc)
    except OSError as exc:
        return _fail(EXIT_IO, exc)
    sys.stdout.write(json.dumps(result, sort_keys=True) + "\n")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
