"""Command-line front end.

Subcommands: simulate, fit-rule, evaluate, msm, icer, subgroups,
plot-data. Every run resolves a single configuration (defaults, then the
RC_POLICY_SEED environment variable, then a JSON --config overlay, then
explicit flags), echoes it into an audit block on every artifact, and is
byte-reproducible: identical inputs, config, and seed produce identical
files. Exit codes: 0 success, 1 validation error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import asdict, replace

import numpy as np

from . import __version__
from .config import PipelineConfig, config_hash
from .data import ColumnSchema, Dataset, ingest_csv, scale_outcome, write_csv
from .dgp import (
    DGP_KINDS,
    adaptr_like,
    constant_blip,
    continuous_blip,
    generate,
    null_effect,
    one_interaction,
    oracle,
)
from .icer import icer_curve, ratio
from .learners import fit_blip, fit_outcome, fit_propensity, subgroup_scan
from .msm import msm_with_bootstrap
from .rule import blip_atoms, build_policy
from .tmle import contrast_estimates, derive_seed, evaluate_grid

__all__ = ["main", "build_parser", "CliError"]

_DGP_FACTORIES = {
    "adaptr_like": adaptr_like,
    "constant_blip": constant_blip,
    "continuous_blip": continuous_blip,
    "null_effect": null_effect,
    "one_interaction": one_interaction,
}

# argparse dest -> PipelineConfig field, for flags that overlay the config
_PIPELINE_FLAGS = {
    "folds": "folds",
    "seed": "seed",
    "g_known": "g_known",
    "g_estimate": "g_estimate",
    "g_min": "g_min",
    "outcome_library": "outcome_library",
    "blip_library": "blip_library",
    "shared_blip": "shared_blip",
    "ci_level": "ci_level",
    "threads": "threads",
    "bootstrap": "bootstrap_replicates",
    "mode": "bootstrap_mode",
    "effect_units": "effect_units",
    "epsilon_den": "epsilon_den",
}

# JSON config keys that are not PipelineConfig fields, per subcommand
_DATA_KEYS = {
    "data",
    "columns",
    "treatment_col",
    "outcome_col",
    "cost_col",
    "covariate_cols",
    "outcome_kind",
    "y_bounds",
}
_EXTRA_KEYS = {
    "simulate": {"dgp", "n", "out", "oracle", "kappa_grid", "unit_cost", "cost_noise_sd", "no_cost"},
    "fit-rule": _DATA_KEYS | {"kappa", "out", "save_model", "assignments"},
    "evaluate": _DATA_KEYS | {"kappa_grid", "out"},
    "msm": _DATA_KEYS | {"kappa_grid", "out", "plot_out"},
    "icer": _DATA_KEYS | {"kappa_grid", "comparator", "out", "plane_out"},
    "subgroups": _DATA_KEYS | {"alpha", "max_levels", "out"},
    "plot-data": {"what", "model", "results", "out"},
}


class CliError(Exception):
    """Validation problem; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    # raise instead of exiting so main() owns the exit-code mapping
    def error(self, message):
        raise CliError(message)


def _sanitize(obj):
    """JSON-safe copy: numpy scalars unboxed, non-finite floats -> null."""
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def _emit_json(payload: dict, out: str | None) -> None:
    text = json.dumps(_sanitize(payload), indent=2, allow_nan=False) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return repr(f) if math.isfinite(f) else ""
    if isinstance(v, (np.integer, int)) and not isinstance(v, bool):
        return str(int(v))
    return str(v)


def _emit_csv(header: list[str], rows, out: str | None, meta: dict | None = None) -> None:
    """Write CSV to a path (with a .meta.json sidecar) or to stdout."""
    if out is None:
        writer = csv.writer(sys.stdout)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_csv_cell(v) for v in row])
        return
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_csv_cell(v) for v in row])
    if meta is not None:
        _emit_json(meta, out + ".meta.json")


def parse_kappa_grid(text: str) -> list[float]:
    """Inclusive start:end:step grid; the step must divide the range."""
    parts = text.split(":")
    if len(parts) != 3:
        raise CliError(f"--kappa-grid expects start:end:step, got {text!r}")
    try:
        start, end, step = (float(p) for p in parts)
    except ValueError:
        raise CliError(f"--kappa-grid has a non-numeric part: {text!r}") from None
    if step <= 0:
        raise CliError("--kappa-grid step must be positive")
    if end < start:
        raise CliError("--kappa-grid end must be >= start")
    count = (end - start) / step
    m = round(count)
    if abs(count - m) > 1e-9:
        raise CliError(f"--kappa-grid step {step:g} does not divide the range [{start:g}, {end:g}]")
    grid = [round(start + i * step, 10) for i in range(int(m) + 1)]
    for k in grid:
        if not 0.0 <= k <= 1.0:
            raise CliError(f"kappa {k:g} outside [0, 1]")
    return grid


def _parse_kappa_arg(text: str) -> tuple[list[float], bool]:
    """A single kappa or a start:end:step grid. Returns (values, is_single)."""
    if ":" not in text:
        try:
            k = float(text)
        except ValueError:
            raise CliError(f"--kappa expects a number or start:end:step, got {text!r}") from None
        if not 0.0 <= k <= 1.0:
            raise CliError(f"kappa {k:g} outside [0, 1]")
        return [k], True
    return parse_kappa_grid(text), False


def _split_names(value) -> tuple[str, ...]:
    if isinstance(value, str):
        parts = [p.strip() for p in value.split(",")]
    else:
        parts = [str(p) for p in value]
    return tuple(p for p in parts if p)


def _resolve_config(args) -> tuple[PipelineConfig, dict]:
    """Defaults < RC_POLICY_SEED < JSON --config < explicit flags.

    Returns the pipeline config plus the command-specific keys found in
    the JSON file (flags still override those; see _extra).
    """
    base: dict = {}
    env_seed = os.environ.get("RC_POLICY_SEED")
    if env_seed is not None:
        try:
            base["seed"] = int(env_seed)
        except ValueError:
            raise CliError(f"RC_POLICY_SEED must be an integer, got {env_seed!r}") from None
    extras: dict = {}
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path) as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise CliError(f"--config {config_path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise CliError(f"--config {config_path}: invalid JSON ({exc})") from None
        if not isinstance(loaded, dict):
            raise CliError(f"--config {config_path}: top level must be a JSON object")
        allowed_extras = _EXTRA_KEYS[args.command]
        for key, val in loaded.items():
            if key in PipelineConfig.field_names():
                base[key] = val
            elif key in allowed_extras:
                extras[key] = val
            else:
                raise CliError(f"--config {config_path}: unknown key {key!r}")
    for dest, field in _PIPELINE_FLAGS.items():
        val = getattr(args, dest, None)
        if val is not None:
            base[field] = val
    for key in ("outcome_library", "blip_library"):
        if key in base:
            base[key] = _split_names(base[key])
    try:
        cfg = PipelineConfig.from_dict(base)
    except (ValueError, TypeError) as exc:
        raise CliError(str(exc)) from None
    return cfg, extras


def _extra(args, extras: dict, name: str, default=None):
    val = getattr(args, name, None)
    if val is not None:
        return val
    return extras.get(name, default)


def _audit(cfg: PipelineConfig, context: dict) -> dict:
    resolved = cfg.to_dict()
    resolved.update(_sanitize(context))
    return {
        "config": resolved,
        "config_hash": config_hash(_sanitize(resolved)),
        "seed": cfg.seed,
        "version": __version__,
    }


def _read_header(path: str) -> list[str]:
    try:
        with open(path, newline="") as fh:
            row = next(csv.reader(fh), None)
    except OSError as exc:
        raise CliError(f"--data {path}: {exc}") from None
    if not row:
        raise CliError(f"--data {path}: empty file")
    return row


def _parse_bounds(text) -> tuple[float, float]:
    if isinstance(text, (list, tuple)) and len(text) == 2:
        return float(text[0]), float(text[1])
    parts = str(text).split(":")
    if len(parts) != 2:
        raise CliError(f"--y-bounds expects lo:hi, got {text!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError:
        raise CliError(f"--y-bounds has a non-numeric part: {text!r}") from None
    if hi <= lo:
        raise CliError("--y-bounds upper bound must exceed the lower bound")
    return lo, hi


def _load_dataset(args, extras: dict, need_cost: bool = False) -> Dataset:
    path = _extra(args, extras, "data")
    if not path:
        raise CliError("--data is required")
    columns = extras.get("columns", {})
    if not isinstance(columns, dict):
        raise CliError("config key 'columns' must be a JSON object")
    treatment = _extra(args, extras, "treatment_col", columns.get("treatment")) or "a"
    outcome = _extra(args, extras, "outcome_col", columns.get("outcome")) or "y"
    cost = _extra(args, extras, "cost_col", columns.get("cost"))
    covs = _extra(args, extras, "covariate_cols", columns.get("covariates"))
    if covs is not None:
        covs = _split_names(covs)
    if cost is None and "c" in _read_header(path) and (covs is None or "c" not in covs):
        cost = "c"  # package CSV convention, like the a/y defaults
    if need_cost and cost is None:
        raise CliError("this command needs a cost column; pass --cost-col")
    if covs is None:
        special = {treatment, outcome} | ({cost} if cost else set())
        covs = tuple(c for c in _read_header(path) if c not in special)
        if not covs:
            raise CliError(f"--data {path}: no covariate columns left after {sorted(special)}")
    kind = _extra(args, extras, "outcome_kind")
    if kind in (None, "auto"):
        kind = None
    elif kind not in ("binary", "bounded_real"):
        raise CliError(f"--outcome-kind must be auto, binary, or bounded_real, got {kind!r}")
    bounds_arg = _extra(args, extras, "y_bounds")
    bounds = None if bounds_arg is None else _parse_bounds(bounds_arg)
    schema = ColumnSchema(
        treatment=treatment,
        outcome=outcome,
        covariates=covs,
        cost=cost,
        outcome_kind=kind,
        y_bounds=bounds,
    )
    return ingest_csv(path, schema)


def _dataset_context(args, extras: dict, ds: Dataset) -> dict:
    return {
        "command": args.command,
        "data": _extra(args, extras, "data"),
        "n": ds.n,
        "covariates": list(ds.covariate_names),
        "outcome_kind": ds.outcome_kind,
    }


# ---------------------------------------------------------------------------
# subcommands


def _cmd_simulate(args) -> None:
    cfg, extras = _resolve_config(args)
    kind = _extra(args, extras, "dgp")
    if kind not in _DGP_FACTORIES:
        raise CliError(f"--dgp must be one of {', '.join(DGP_KINDS)}")
    n = _extra(args, extras, "n")
    if n is None:
        raise CliError("--n is required")
    n = int(n)
    out = _extra(args, extras, "out")
    if not out:
        raise CliError("--out is required")
    with_cost = not bool(_extra(args, extras, "no_cost", False))
    spec = _DGP_FACTORIES[kind](seed=cfg.seed, with_cost=with_cost)
    unit_cost = _extra(args, extras, "unit_cost")
    if unit_cost is not None:
        spec = replace(spec, unit_cost=float(unit_cost))
    noise = _extra(args, extras, "cost_noise_sd")
    if noise is not None:
        spec = replace(spec, cost_noise_sd=float(noise))
    ds = generate(spec, n)
    write_csv(ds, out)
    context = {"command": "simulate", "dgp": kind, "n": n, "out": out, "with_cost": with_cost,
               "unit_cost": spec.unit_cost, "cost_noise_sd": spec.cost_noise_sd}
    audit = _audit(cfg, context)
    header = list(ds.covariate_names) + ["a", "y"] + (["c"] if ds.c is not None else [])
    _emit_json({"columns": header, "rows": n, "audit": audit}, out + ".meta.json")
    oracle_out = _extra(args, extras, "oracle")
    if oracle_out:
        grid = parse_kappa_grid(_extra(args, extras, "kappa_grid", "0:1:0.1"))
        rep = oracle(spec, grid)
        rows = []
        for i, k in enumerate(rep.kappas):
            eff_none = float(rep.effect_vs_none[i])
            eff_all = float(rep.effect_vs_all[i])
            rows.append({
                "kappa": float(k),
                "value": float(rep.values[i]),
                "tau": float(rep.taus[i]),
                "tie_prob": float(rep.tie_probs[i]),
                "pct_treated": float(rep.treated_fractions[i]),
                "chord": float(rep.chord[i]),
                "cost_vs_none": float(rep.cost_vs_none[i]),
                "effect_vs_none_pp": 100.0 * eff_none,
                "icer_vs_none": ratio(float(rep.cost_vs_none[i]), 100.0 * eff_none),
                "cost_vs_all": float(rep.cost_vs_all[i]),
                "effect_vs_all_pp": 100.0 * eff_all,
                "icer_vs_all": ratio(float(rep.cost_vs_all[i]), 100.0 * eff_all),
            })
        payload = {
            "dgp": kind,
            "ate": rep.ate,
            "ey0": rep.ey0,
            "ey1": rep.ey1,
            "grid": rows,
            "audit": audit,
        }
        _emit_json(payload, oracle_out)


def _cmd_fit_rule(args) -> None:
    cfg, extras = _resolve_config(args)
    kappa_arg = _extra(args, extras, "kappa")
    if kappa_arg is None:
        raise CliError("--kappa is required")
    kappas, single = _parse_kappa_arg(str(kappa_arg))
    ds = _load_dataset(args, extras)
    ds_s = scale_outcome(ds)
    q = fit_outcome(ds_s, cfg.outcome_library, folds=cfg.folds, seed=derive_seed(cfg.seed, 11))
    g = fit_propensity(ds_s, known_value=cfg.g_known, estimate=cfg.g_estimate, g_min=cfg.g_min)
    blip = fit_blip(ds_s, q, g, cfg.blip_library, folds=cfg.folds, seed=derive_seed(cfg.seed, 12))
    blips = np.asarray(blip.predict(ds_s.w), dtype=float)
    warnings = list(dict.fromkeys([*q.warnings, *g.warnings, *blip.warnings]))

    blocks = []
    policies = []
    for k in kappas:
        pol = build_policy(blip, ds_s, k)
        sol = pol.threshold
        policies.append(pol)
        blocks.append({
            "kappa": sol.kappa,
            "tau": sol.tau,
            "eta": sol.eta,
            "s_at_tau": sol.s_at_tau,
            "tie_mass": sol.tie_mass,
            "tie_prob": sol.tie_prob,
            "pct_treated": pol.pct_treated,
            "pct_stochastic": pol.pct_stochastic,
        })

    context = _dataset_context(args, extras, ds)
    context["kappa"] = kappas
    audit = _audit(cfg, context)
    if single:
        payload = {**blocks[0], "warnings": warnings, "audit": audit}
    else:
        payload = {"rules": blocks, "warnings": warnings, "audit": audit}
    _emit_json(payload, _extra(args, extras, "out"))

    model_out = _extra(args, extras, "save_model")
    if model_out:
        _emit_json({
            "covariate_names": list(ds.covariate_names),
            "y_scale": list(ds_s.y_scale) if ds_s.y_scale else None,
            "blip": blip.to_dict(),
            "blip_atoms": [{"blip_value": v, "count": c} for v, c in blip_atoms(blips)],
            "rules": blocks,
            "audit": audit,
        }, model_out)

    assign_out = _extra(args, extras, "assignments")
    if assign_out:
        header = ["row", "blip"] + [f"treat_kappa_{k:g}" for k in kappas]
        assign_cols = [pol.assign_from_blips(blips) for pol in policies]
        rows = (
            [i, blips[i]] + [col[i] for col in assign_cols]
            for i in range(ds.n)
        )
        _emit_csv(header, rows, assign_out, meta={"audit": audit})


def _contrast_block(est, static, z) -> dict:
    c = contrast_estimates(est, static, z)
    return {"diff": c.diff, "se": c.se, "ci_lo": c.ci[0], "ci_hi": c.ci[1]}


def _static_block(est) -> dict:
    return {
        "label": est.label,
        "psi": est.psi,
        "se": est.se,
        "ci_lo": est.ci[0],
        "ci_hi": est.ci[1],
        "pct_treated": est.pct_treated,
    }


def _cmd_evaluate(args) -> None:
    cfg, extras = _resolve_config(args)
    grid_arg = _extra(args, extras, "kappa_grid")
    if grid_arg is None:
        raise CliError("--kappa-grid is required")
    kappas = parse_kappa_grid(str(grid_arg))
    ds = _load_dataset(args, extras)
    result = evaluate_grid(ds, kappas, cfg)
    z = cfg.z_value
    entries = []
    for est in result.estimates:
        entries.append({
            "kappa": est.kappa,
            "psi": est.psi,
            "se": est.se,
            "ci_lo": est.ci[0],
            "ci_hi": est.ci[1],
            "tau": est.tau,
            "pct_treated": est.pct_treated,
            "pct_stochastic": est.pct_stochastic,
            "epsilon": est.epsilon,
            "score": est.score,
            "vs_treat_all": _contrast_block(est, result.treat_all, z),
            "vs_treat_none": _contrast_block(est, result.treat_none, z),
            "warnings": list(est.warnings),
        })
    context = _dataset_context(args, extras, ds)
    context["kappa_grid"] = kappas
    payload = {
        "grid": entries,
        "treat_all": _static_block(result.treat_all),
        "treat_none": _static_block(result.treat_none),
        "n": ds.n,
        "warnings": list(result.nuisance.warnings),
        "audit": _audit(cfg, context),
    }
    _emit_json(payload, _extra(args, extras, "out"))


def _cmd_msm(args) -> None:
    cfg, extras = _resolve_config(args)
    grid_arg = _extra(args, extras, "kappa_grid")
    if grid_arg is None:
        raise CliError("--kappa-grid is required")
    kappas = parse_kappa_grid(str(grid_arg))
    ds = _load_dataset(args, extras)
    fit = msm_with_bootstrap(ds, kappas, cfg)
    ci = fit.boot_ci or {}
    plot_rows = [
        {"kappa": k, "value": v, "fitted": f, "chord": ch}
        for k, v, f, ch in fit.plot_rows()
    ]
    context = _dataset_context(args, extras, ds)
    context["kappa_grid"] = kappas
    payload = {
        "beta0": fit.beta0,
        "beta1": fit.beta1,
        "chord": {"intercept": fit.chord[0], "slope": fit.chord[1]},
        "contrasts": {"contrast0": fit.contrast[0], "contrast1": fit.contrast[1]},
        "ci": {key: [lo, hi] for key, (lo, hi) in ci.items()},
        "mode": fit.boot_mode,
        "replicates": fit.boot_replicates,
        "resample_redraws": fit.boot_redraws,
        "kappas": list(fit.kappas),
        "values": list(fit.values),
        "plot_rows": plot_rows,
        "audit": _audit(cfg, context),
    }
    _emit_json(payload, _extra(args, extras, "out"))
    plot_out = _extra(args, extras, "plot_out")
    if plot_out:
        rows = ([r["kappa"], r["value"], r["fitted"], r["chord"]] for r in plot_rows)
        _emit_csv(["kappa", "value", "fitted", "chord"], rows, plot_out,
                  meta={"audit": payload["audit"]})


def _cmd_icer(args) -> None:
    cfg, extras = _resolve_config(args)
    grid_arg = _extra(args, extras, "kappa_grid")
    if grid_arg is None:
        raise CliError("--kappa-grid is required")
    kappas = parse_kappa_grid(str(grid_arg))
    comparator = str(_extra(args, extras, "comparator", "treat-none")).replace("-", "_")
    if comparator not in ("treat_none", "treat_all"):
        raise CliError("--comparator must be treat-none or treat-all")
    ds = _load_dataset(args, extras, need_cost=True)
    curve = icer_curve(ds, kappas, comparator=comparator, config=cfg)
    den_key = "denominator_pp" if curve.estimates[0].effect_units == "pp" else "denominator"
    rows = []
    for e in curve.estimates:
        rows.append({
            "kappa": e.kappa,
            "numerator": e.numerator,
            den_key: e.denominator,
            "icer": e.ratio,
            "se": e.se,
            "ci_lo": None if e.ci is None else e.ci[0],
            "ci_hi": None if e.ci is None else e.ci[1],
            "unstable": e.unstable,
        })
    plane = [
        {den_key: float(d), "numerator": float(nu), "kappa": float(k)}
        for d, nu, k in curve.plane_points()
    ]
    context = _dataset_context(args, extras, ds)
    context.update({"kappa_grid": kappas, "comparator": comparator})
    payload = {
        "comparator": comparator,
        "rows": rows,
        "plane": plane,
        "n": ds.n,
        "audit": _audit(cfg, context),
    }
    _emit_json(payload, _extra(args, extras, "out"))
    plane_out = _extra(args, extras, "plane_out")
    if plane_out:
        csv_rows = ([p[den_key], p["numerator"], p["kappa"]] for p in plane)
        _emit_csv([den_key, "numerator", "kappa"], csv_rows, plane_out,
                  meta={"audit": payload["audit"]})


def _cmd_subgroups(args) -> None:
    cfg, extras = _resolve_config(args)
    alpha = float(_extra(args, extras, "alpha", 0.1))
    max_levels = int(_extra(args, extras, "max_levels", 10))
    ds = _load_dataset(args, extras)
    results = subgroup_scan(ds, alpha=alpha, max_levels=max_levels)
    blocks = []
    for r in results:
        blocks.append({
            "covariate": r.covariate,
            "p_value": r.p_value,
            "flagged": r.flagged,
            "note": r.note,
            "levels": [asdict(lv) for lv in r.levels],
        })
    context = _dataset_context(args, extras, ds)
    context["alpha"] = alpha
    payload = {"alpha": alpha, "results": blocks, "audit": _audit(cfg, context)}
    _emit_json(payload, _extra(args, extras, "out"))


_PLOT_SPECS = {
    # what -> (source flag, key in the source JSON, columns to project)
    "value-curve": ("results", "grid", ["kappa", "psi", "ci_lo", "ci_hi", "tau", "pct_treated"]),
    "msm": ("results", "plot_rows", ["kappa", "value", "fitted", "chord"]),
    "blip-hist": ("model", "blip_atoms", ["blip_value", "count"]),
    "ce-plane": ("results", "plane", None),  # columns depend on the effect units
}


def _cmd_plot_data(args) -> None:
    _, extras = _resolve_config(args)
    what = _extra(args, extras, "what")
    if what not in _PLOT_SPECS:
        raise CliError(f"--what must be one of {', '.join(sorted(_PLOT_SPECS))}")
    flag, key, columns = _PLOT_SPECS[what]
    source = _extra(args, extras, flag)
    if not source:
        raise CliError(f"plot-data --what {what} needs --{flag} <file.json>")
    try:
        with open(source) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise CliError(f"--{flag} {source}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"--{flag} {source}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict) or key not in doc:
        producer = {"grid": "evaluate", "plot_rows": "msm", "blip_atoms": "fit-rule --save-model",
                    "plane": "icer"}[key]
        raise CliError(f"--{flag} {source}: no {key!r} section; expected output of `{producer}`")
    records = doc[key]
    if columns is None:  # ce-plane: pick up denominator naming from the artifact
        first = records[0] if records else {}
        den_key = "denominator_pp" if "denominator_pp" in first else "denominator"
        columns = [den_key, "numerator", "kappa"]
    rows = ([rec.get(col) for col in columns] for rec in records)
    meta = {"source": os.path.basename(source), "what": what, "audit": doc.get("audit")}
    _emit_csv(columns, rows, _extra(args, extras, "out"), meta=meta)


# ---------------------------------------------------------------------------
# parser


def _add_pipeline_flags(p: argparse.ArgumentParser, bootstrap: bool = False, icer: bool = False):
    grp = p.add_argument_group("pipeline")
    grp.add_argument("--config", help="JSON config file overlaying the defaults")
    grp.add_argument("--folds", type=int, help="cross-validation folds (default 10)")
    grp.add_argument("--seed", type=int, help="master seed (default 0; env RC_POLICY_SEED)")
    grp.add_argument("--g-known", type=float, dest="g_known",
                     help="known treatment probability, e.g. 0.5 in a balanced trial")
    grp.add_argument("--g-estimate", action=argparse.BooleanOptionalAction, dest="g_estimate",
                     default=None, help="force propensity estimation on or off")
    grp.add_argument("--g-min", type=float, dest="g_min", help="propensity truncation bound")
    grp.add_argument("--outcome-library", dest="outcome_library",
                     help="comma-separated outcome learners (mean,glm,univariate,step_aic)")
    grp.add_argument("--blip-library", dest="blip_library",
                     help="comma-separated blip learners")
    grp.add_argument("--shared-blip", action=argparse.BooleanOptionalAction, dest="shared_blip",
                     default=None, help="fit one full-data blip model instead of per-fold fits")
    grp.add_argument("--ci-level", type=float, dest="ci_level", help="confidence level (default 0.95)")
    grp.add_argument("--threads", type=int, help="worker cap for parallel sections")
    if bootstrap:
        grp.add_argument("--bootstrap", type=int, help="bootstrap replicates (default 1000)")
        grp.add_argument("--mode", choices=["refit", "fixed-rule"], help="bootstrap mode")
    if icer:
        grp.add_argument("--effect-units", choices=["pp", "probability"], dest="effect_units",
                         help="denominator units for binary outcomes (default pp)")
        grp.add_argument("--epsilon-den", type=float, dest="epsilon_den",
                         help="denominator instability guard (default 1e-4)")


def _add_data_flags(p: argparse.ArgumentParser):
    grp = p.add_argument_group("data")
    grp.add_argument("--data", help="input CSV with header row")
    grp.add_argument("--treatment-col", dest="treatment_col", help="treatment column (default a)")
    grp.add_argument("--outcome-col", dest="outcome_col", help="outcome column (default y)")
    grp.add_argument("--cost-col", dest="cost_col",
                     help="cost column (default: a column named c, when present)")
    grp.add_argument("--covariate-cols", dest="covariate_cols",
                     help="comma-separated covariates (default: all other columns)")
    grp.add_argument("--outcome-kind", dest="outcome_kind",
                     choices=["auto", "binary", "bounded_real"],
                     help="outcome type (default auto-detect)")
    grp.add_argument("--y-bounds", dest="y_bounds",
                     help="lo:hi bounds for bounded_real outcomes")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="rcpolicy",
        description="Budget-constrained treatment rules: estimation, value inference, "
                    "summary curves, and cost-effectiveness.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", help="draw a synthetic dataset (optionally with its oracle)")
    p.add_argument("--dgp", choices=list(DGP_KINDS), help="generating process")
    p.add_argument("--n", type=int, help="sample size")
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--oracle", help="also write the closed-form truth to this JSON path")
    p.add_argument("--kappa-grid", dest="kappa_grid", help="oracle grid (default 0:1:0.1)")
    p.add_argument("--unit-cost", type=float, dest="unit_cost", help="cost per treated unit")
    p.add_argument("--cost-noise-sd", type=float, dest="cost_noise_sd",
                   help="sd of additive cost noise")
    p.add_argument("--no-cost", action="store_true", dest="no_cost",
                   help="omit the cost column")
    _add_pipeline_flags(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit-rule", help="fit the constrained rule at one or more budgets")
    p.add_argument("--kappa", help="budget: a number or start:end:step")
    p.add_argument("--out", help="rule JSON path (default stdout)")
    p.add_argument("--save-model", dest="save_model", help="write the fitted blip model JSON here")
    p.add_argument("--assignments", help="write per-row treatment probabilities CSV here")
    _add_data_flags(p)
    _add_pipeline_flags(p)
    p.set_defaults(func=_cmd_fit_rule)

    p = sub.add_parser("evaluate", help="cross-validated value estimates over a budget grid")
    p.add_argument("--kappa-grid", "--kappa", dest="kappa_grid", help="start:end:step budget grid")
    p.add_argument("--out", help="results JSON path (default stdout)")
    _add_data_flags(p)
    _add_pipeline_flags(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("msm", help="summarize the budget-response curve with a working line")
    p.add_argument("--kappa-grid", dest="kappa_grid", help="start:end:step budget grid")
    p.add_argument("--out", help="results JSON path (default stdout)")
    p.add_argument("--plot-out", dest="plot_out", help="plot-data CSV (kappa,value,fitted,chord)")
    _add_data_flags(p)
    _add_pipeline_flags(p, bootstrap=True)
    p.set_defaults(func=_cmd_msm)

    p = sub.add_parser("icer", help="incremental cost-effectiveness along the budget grid")
    p.add_argument("--kappa-grid", dest="kappa_grid", help="start:end:step budget grid")
    p.add_argument("--comparator", choices=["treat-none", "treat-all"],
                   help="static comparator (default treat-none)")
    p.add_argument("--out", help="results JSON path (default stdout)")
    p.add_argument("--plane-out", dest="plane_out", help="cost-effectiveness plane CSV")
    _add_data_flags(p)
    _add_pipeline_flags(p, icer=True)
    p.set_defaults(func=_cmd_icer)

    p = sub.add_parser("subgroups", help="scan covariates for treatment-effect heterogeneity")
    p.add_argument("--alpha", type=float, help="flagging level (default 0.1)")
    p.add_argument("--max-levels", type=int, dest="max_levels",
                   help="max distinct values for per-level summaries (default 10)")
    p.add_argument("--out", help="results JSON path (default stdout)")
    _add_data_flags(p)
    _add_pipeline_flags(p)
    p.set_defaults(func=_cmd_subgroups)

    p = sub.add_parser("plot-data", help="project saved results into plot-ready CSV")
    p.add_argument("--what", choices=sorted(_PLOT_SPECS), help="which figure data to emit")
    p.add_argument("--results", help="results JSON from evaluate/msm/icer")
    p.add_argument("--model", help="model JSON from fit-rule --save-model")
    p.add_argument("--out", help="output CSV path (default stdout)")
    p.add_argument("--config", help="JSON config file (rarely needed here)")
    p.set_defaults(func=_cmd_plot_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version print and stop
        return int(exc.code or 0)
    try:
        args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
