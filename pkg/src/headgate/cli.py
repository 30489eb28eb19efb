"""Command-line entry point.

Subcommands: ``simulate`` (cost-model sweeps), ``orchestrate`` (restart
sessions replayed from a manifest), ``evaluate`` (fidelity metrics) and
``pfi-demo`` (projection error versus critical timestep).

Settings resolve as command-line flag > config file section > built-in
default; the master seed may also come from ``HEADGATE_SEED``.  The
effective settings are echoed into every JSON report.

Exit codes: 0 success, 2 usage or validation error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import zlib
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .cost_model import (
    CT_GRID,
    CostModelParams,
    expected_time_saved_closed_form,
    simulate_time_saved,
)
from .errors import ConfigurationError, DataError, HeadgateError, ParameterError, ScheduleError
from .evaluation import build_report, ingest_manifest
from .gating import PUBLISHED_PROFILES, DetectorProfile
from .orchestrator import SessionConfig, replay_from_manifest
from .pfi import NoiseSchedule, reconstruction_errors

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3
SEED_ENV = "HEADGATE_SEED"

DEFAULTS: dict[str, dict[str, Any]] = {
    "simulate": {
        "p": 0.4,
        "k": 3,
        "recall": 0.934,
        "tn_rate": 0.7695,
        "ct_grid": list(CT_GRID),
        "published_profiles": False,
        "total_steps": 50,
        "unit_time": 1.0,
        "overhead": 0.0,
        "sims": 100_000,
        "rng_seed": 0,
        "threads": 1,
        "out_dir": "headgate-out",
    },
    "orchestrate": {
        "ct": 25,
        "total_steps": 50,
        "max_restarts": 5,
        "tolerance": 0.05,
        "recall": None,
        "tn_rate": None,
        "no_relations": False,
        "restart_fallback": False,
        "rng_seed": 0,
        "threads": 1,
        "out_dir": "headgate-out",
    },
    "evaluate": {
        "n_min": 1,
        "n_max": None,
        "tolerance": 0.05,
        "ct": None,
        "rng_seed": 0,
        "threads": 1,
        "out_dir": "headgate-out",
    },
    "pfi_demo": {
        "schedule": None,
        "total_steps": 50,
        "dim": 64,
        "ct_grid": list(CT_GRID),
        "sigma": 0.1,
        "trials": 32,
        "rng_seed": 0,
        "threads": 1,
        "out_dir": "headgate-out",
    },
}


class UsageError(HeadgateError):
    pass


def substream(master: int, name: str, *index: int) -> np.random.SeedSequence:
    """Named, indexable child of the master seed."""
    return np.random.SeedSequence([master, zlib.crc32(name.encode()), *index])


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _load_toml(path: str) -> dict[str, Any]:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}")
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"invalid config {path}: {exc}")


def resolve(command: str, args: argparse.Namespace) -> dict[str, Any]:
    defaults = DEFAULTS[command]
    section: dict[str, Any] = {}
    if args.config:
        cfg = _load_toml(args.config)
        section = cfg.get(command, cfg.get(command.replace("_", "-"), {}))
        if not isinstance(section, dict):
            raise UsageError(f"config section [{command}] must be a table")
        unknown = set(section) - set(defaults)
        if unknown:
            raise UsageError(f"unknown keys in config section [{command}]: {sorted(unknown)}")
    eff = {**defaults, **section}
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            eff["rng_seed"] = int(env_seed)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env_seed!r}")
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            eff[key] = value
    if eff["threads"] < 1:
        raise UsageError("--threads must be >= 1")
    return eff


def provenance(cfg: dict[str, Any]) -> dict[str, Any]:
    """Effective settings that can influence results; thread count and output location cannot."""
    return {k: v for k, v in cfg.items() if k not in ("threads", "out_dir")}


def _write_json(path: Path, payload: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else v for v in row])


def _fmt(v: float | None, spec: str = ".2f") -> str:
    return "null" if v is None else format(v, spec)


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = resolve("simulate", args)
    if cfg["sims"] < 1:
        raise UsageError("--sims must be >= 1")
    if cfg["published_profiles"]:
        rows_in = [(ct, prof) for ct, prof in PUBLISHED_PROFILES]
    else:
        profile = DetectorProfile(cfg["recall"], cfg["tn_rate"], "flags")
        if not cfg["ct_grid"]:
            raise UsageError("--ct-grid is empty")
        rows_in = [(ct, profile) for ct in cfg["ct_grid"]]

    params_list = [
        CostModelParams(
            p_complete=cfg["p"],
            profile=prof,
            num_objects=cfg["k"],
            critical_timestep=ct,
            total_steps=cfg["total_steps"],
            unit_time=cfg["unit_time"],
            check_overhead=cfg["overhead"],
        )
        for ct, prof in rows_in
    ]
    rows, records = [], []
    for i, params in enumerate(params_list):
        closed = expected_time_saved_closed_form(params)
        mc = simulate_time_saved(params, cfg["sims"], substream(cfg["rng_seed"], "simulate", i), cfg["threads"])
        rows.append((params.critical_timestep, params.profile.recall, params.profile.tn_rate,
                     params.p_complete, params.num_objects, closed, mc.time_saved_fraction, mc.std_error))
        records.append({
            "label": params.profile.label,
            "ct": params.critical_timestep,
            "recall": params.profile.recall,
            "tn_rate": params.profile.tn_rate,
            "p": params.p_complete,
            "k": params.num_objects,
            "saving_closed_form": closed,
            "saving_mc": mc.time_saved_fraction,
            "std_error": mc.std_error,
            "mean_time_with_head": mc.mean_time_with_head,
            "mean_time_baseline": mc.mean_time_baseline,
            "num_simulations": mc.num_simulations,
        })

    out = Path(cfg["out_dir"])
    header = ["ct", "recall", "tn_rate", "p", "k", "saving_closed_form", "saving_mc", "std_error"]
    _write_csv(out / "simulate.csv", header, rows)
    _write_json(out / "simulate.json", {"command": "simulate", "config": provenance(cfg), "rows": records})

    print(f"{'label':<10} {'ct':>3} {'recall':>7} {'tn':>7} {'closed%':>8} {'mc%':>8} {'se%':>6}")
    for r in records:
        print(f"{r['label']:<10} {r['ct']:>3} {r['recall']:>7.4f} {r['tn_rate']:>7.4f} "
              f"{100 * r['saving_closed_form']:>8.2f} {100 * r['saving_mc']:>8.2f} {100 * r['std_error']:>6.2f}")
    print(f"wrote {out / 'simulate.csv'} and {out / 'simulate.json'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# orchestrate


def cmd_orchestrate(args: argparse.Namespace) -> int:
    cfg = resolve("orchestrate", args)
    session = SessionConfig(
        critical_timestep=cfg["ct"],
        total_steps=cfg["total_steps"],
        max_restarts=cfg["max_restarts"],
        tolerance=cfg["tolerance"],
        resume_fallback=not cfg["restart_fallback"],
    )
    profile = None
    if cfg["recall"] is not None or cfg["tn_rate"] is not None:
        profile = DetectorProfile(
            1.0 if cfg["recall"] is None else cfg["recall"],
            1.0 if cfg["tn_rate"] is None else cfg["tn_rate"],
            "flags",
        )
    records = ingest_manifest(args.manifest)
    if not records:
        raise UsageError("manifest contains no records")

    by_prompt: dict[str, list] = {}
    for r in records:
        by_prompt.setdefault(r.prompt, []).append(r)
    prompts = list(by_prompt)

    def run(i: int) -> dict[str, Any]:
        rng = np.random.default_rng(substream(cfg["rng_seed"], "detector", i))
        try:
            res = replay_from_manifest(session, by_prompt[prompts[i]], profile, rng, not cfg["no_relations"])
        except (ConfigurationError, DataError, ParameterError) as exc:
            return {"prompt": prompts[i], "error": str(exc)}
        return {"prompt": prompts[i], "result": res.to_dict()}

    if cfg["threads"] == 1:
        entries = [run(i) for i in range(len(prompts))]
    else:
        with ThreadPoolExecutor(max_workers=cfg["threads"]) as pool:
            entries = list(pool.map(run, range(len(prompts))))

    ok = [e["result"] for e in entries if "result" in e]
    total = sum(r["total_steps_consumed"] for r in ok)
    baseline = sum(r["baseline_steps"] for r in ok) if ok else 0
    tp = fp = tn = fn = 0
    for r in ok:
        for a in r["attempts"]:
            if a["truth_complete"] is None:
                continue
            if a["truth_complete"]:
                tp += a["presence_ok"]
                fn += not a["presence_ok"]
            else:
                fp += a["presence_ok"]
                tn += not a["presence_ok"]
    aggregate = {
        "prompts": len(prompts),
        "failed_prompts": len(prompts) - len(ok),
        "total_steps": total,
        "baseline_steps": baseline,
        "steps_saved_fraction": 1.0 - total / baseline if baseline else None,
        "attempts": sum(len(r["attempts"]) for r in ok),
        "aborted_attempts": sum(1 for r in ok for a in r["attempts"] if not a["proceed"] and not a["fallback"]),
        "fallbacks": sum(r["fallback_used"] for r in ok),
        "counts": {"tp": tp, "fp": fp, "tn": tn, "fn": fn},
        "recall": 100.0 * tp / (tp + fn) if tp + fn else None,
        "tn_rate": 100.0 * tn / (tn + fp) if tn + fp else None,
    }
    out = Path(cfg["out_dir"])
    _write_json(out / "orchestrate.json",
                {"command": "orchestrate", "config": provenance(cfg), "aggregate": aggregate, "sessions": entries})

    for e in entries:
        if "error" in e:
            print(f"error: {e['prompt']!r}: {e['error']}", file=sys.stderr)
    saved = aggregate["steps_saved_fraction"]
    print(f"prompts={len(prompts)} failed={aggregate['failed_prompts']} steps={total} baseline={baseline} "
          f"saved={_fmt(None if saved is None else 100 * saved)}% "
          f"recall={_fmt(aggregate['recall'])} tn_rate={_fmt(aggregate['tn_rate'])}")
    print(f"wrote {out / 'orchestrate.json'}")
    return EXIT_DATA if not ok else EXIT_OK


# ---------------------------------------------------------------------------
# evaluate


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = resolve("evaluate", args)
    records = ingest_manifest(args.manifest)
    if not records:
        raise UsageError("manifest contains no records")
    n_max = cfg["n_max"] or max(len(r.requested_objects) for r in records)
    if cfg["n_min"] < 1 or n_max < cfg["n_min"]:
        raise UsageError(f"invalid N range {cfg['n_min']}..{n_max}")
    report = build_report(records, range(cfg["n_min"], n_max + 1), cfg["tolerance"], cfg["ct"])

    out = Path(cfg["out_dir"])
    _write_json(out / "evaluate.json", {"command": "evaluate", "config": provenance(cfg), "report": report.to_dict()})
    _write_csv(out / "evaluate.csv", ["metric", "n", "mean", "std", "count"], report.csv_rows())

    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"{'N':>3} {'MG mean':>8} {'std':>6}")
    for n, (mean, std) in sorted(report.mg.items()):
        print(f"{n:>3} {mean:>8.2f} {_fmt(std):>6}")
    print(f"mg_loc={_fmt(report.mg_loc)} relation_consistency={_fmt(report.relation_consistency)} "
          f"recall={_fmt(report.recall)} tn_rate={_fmt(report.tn_rate)}")
    print(f"wrote {out / 'evaluate.json'} and {out / 'evaluate.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# pfi-demo


def cmd_pfi_demo(args: argparse.Namespace) -> int:
    cfg = resolve("pfi_demo", args)
    schedule_cfg = cfg["schedule"]
    if isinstance(schedule_cfg, str):
        loaded = _load_toml(schedule_cfg)
        schedule_cfg = loaded.get("schedule", loaded)
    if schedule_cfg is None:
        schedule_cfg = {"total_steps": cfg["total_steps"]}
    if not isinstance(schedule_cfg, dict):
        raise UsageError("schedule must be a table")
    schedule = NoiseSchedule.from_config(schedule_cfg)
    grid = [t for t in cfg["ct_grid"] if t <= schedule.total_steps]
    if not grid:
        raise UsageError("no critical timestep within the schedule length")
    rng = np.random.default_rng(substream(cfg["rng_seed"], "pfi"))
    errors = reconstruction_errors(schedule, grid, cfg["dim"], cfg["sigma"], cfg["trials"], rng)

    rows = [(t, float(schedule.alpha_bar[t]), schedule.noise_amplification(t), e) for t, e in errors.items()]
    out = Path(cfg["out_dir"])
    _write_csv(out / "pfi_demo.csv", ["ct", "alpha_bar", "amplification", "mean_relative_error"], rows)
    _write_json(out / "pfi_demo.json", {
        "command": "pfi-demo",
        "config": {**provenance(cfg), "schedule": schedule_cfg},
        "rows": [dict(zip(("ct", "alpha_bar", "amplification", "mean_relative_error"), r)) for r in rows],
    })
    print(f"{'ct':>3} {'alpha_bar':>10} {'amplif.':>10} {'rel.err':>10}")
    for t, ab, amp, e in rows:
        print(f"{t:>3} {ab:>10.4g} {amp:>10.4g} {e:>10.4g}")
    print(f"wrote {out / 'pfi_demo.csv'} and {out / 'pfi_demo.json'}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, command: str) -> None:
    d = DEFAULTS[command]
    p.add_argument("--config", metavar="FILE", help="TOML file; keys are read from the "
                   f"[{command}] table and are overridden by flags")
    p.add_argument("--rng-seed", dest="rng_seed", type=int, metavar="INT",
                   help=f"master random seed (env {SEED_ENV} also accepted; default {d['rng_seed']})")
    p.add_argument("--threads", type=int, metavar="INT",
                   help="worker threads; output does not depend on this (default 1)")
    p.add_argument("--out-dir", dest="out_dir", metavar="DIR",
                   help=f"directory for CSV/JSON reports (default {d['out_dir']})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="headgate",
        description="Early-abort gating, restart orchestration and cost simulation for image generation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}",
                        help="print version and exit")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    d = DEFAULTS["simulate"]
    p = sub.add_parser("simulate", help="sweep expected time saved over critical timesteps",
                       description="Closed-form and Monte Carlo time saved per critical timestep.")
    p.add_argument("--p", type=float, metavar="FLOAT",
                   help=f"probability a fresh seed gives a complete image (default {d['p']})")
    p.add_argument("--k", type=int, metavar="INT", help=f"objects per prompt (default {d['k']})")
    p.add_argument("--recall", type=float, metavar="FLOAT", help=f"per-object detector recall (default {d['recall']})")
    p.add_argument("--tn-rate", dest="tn_rate", type=float, metavar="FLOAT",
                   help=f"per-object detector TN-rate (default {d['tn_rate']})")
    p.add_argument("--ct-grid", dest="ct_grid", type=_int_list, metavar="LIST",
                   help="comma-separated critical timesteps (default: the 18-point recording grid)")
    p.add_argument("--published-profiles", dest="published_profiles", action="store_const", const=True,
                   help="one row per published (CT, recall, TN-rate) detector profile instead of --ct-grid")
    p.add_argument("--total-steps", dest="total_steps", type=int, metavar="INT",
                   help=f"denoising steps per full run (default {d['total_steps']})")
    p.add_argument("--unit-time", dest="unit_time", type=float, metavar="FLOAT",
                   help="time of one full run (default 1.0)")
    p.add_argument("--overhead", type=float, metavar="FLOAT",
                   help="extra time charged per gate evaluation (default 0)")
    p.add_argument("--sims", type=int, metavar="INT", help=f"Monte Carlo simulations per row (default {d['sims']})")
    _common(p, "simulate")
    p.set_defaults(func=cmd_simulate)

    d = DEFAULTS["orchestrate"]
    p = sub.add_parser("orchestrate", help="replay restart sessions from a manifest",
                       description="Run the seed-restart state machine per prompt over recorded seeds.")
    p.add_argument("manifest", help="JSON manifest of generation records")
    p.add_argument("--ct", type=int, metavar="INT", help=f"critical timestep (default {d['ct']})")
    p.add_argument("--total-steps", dest="total_steps", type=int, metavar="INT",
                   help=f"denoising steps per full run (default {d['total_steps']})")
    p.add_argument("--max-restarts", dest="max_restarts", type=int, metavar="INT",
                   help=f"attempts before falling back to the best seed (default {d['max_restarts']})")
    p.add_argument("--tolerance", type=float, metavar="FLOAT",
                   help=f"relation margin as a fraction of image size (default {d['tolerance']})")
    p.add_argument("--recall", type=float, metavar="FLOAT",
                   help="perturb recorded labels with this per-object recall (default: labels used as-is)")
    p.add_argument("--tn-rate", dest="tn_rate", type=float, metavar="FLOAT",
                   help="perturb recorded labels with this per-object TN-rate (default: labels used as-is)")
    p.add_argument("--no-relations", dest="no_relations", action="store_const", const=True,
                   help="gate on object presence only, ignoring recorded relations")
    p.add_argument("--restart-fallback", dest="restart_fallback", action="store_const", const=True,
                   help="charge the fallback seed a full run instead of resuming from the critical timestep")
    _common(p, "orchestrate")
    p.set_defaults(func=cmd_orchestrate)

    d = DEFAULTS["evaluate"]
    p = sub.add_parser("evaluate", help="compute MG-N, relation and confusion metrics",
                       description="Fidelity metrics from a manifest of labeled generations.")
    p.add_argument("manifest", help="JSON manifest of generation records")
    p.add_argument("--n-min", dest="n_min", type=int, metavar="INT", help=f"smallest N for MG-N (default {d['n_min']})")
    p.add_argument("--n-max", dest="n_max", type=int, metavar="INT",
                   help="largest N for MG-N (default: most objects requested by any record)")
    p.add_argument("--tolerance", type=float, metavar="FLOAT",
                   help=f"relation margin as a fraction of image size (default {d['tolerance']})")
    p.add_argument("--ct", type=int, metavar="INT",
                   help="critical timestep whose recorded predictions feed recall / TN-rate (default: skip)")
    _common(p, "evaluate")
    p.set_defaults(func=cmd_evaluate)

    d = DEFAULTS["pfi_demo"]
    p = sub.add_parser("pfi-demo", help="projection error versus critical timestep",
                       description="Mean relative error of the predicted final latent under a noisy noise estimate.")
    p.add_argument("--schedule", metavar="FILE",
                   help="TOML schedule: alpha_bar = [...] or total_steps / beta_start / beta_end / scale")
    p.add_argument("--total-steps", dest="total_steps", type=int, metavar="INT",
                   help=f"steps of the default linear-beta schedule (default {d['total_steps']})")
    p.add_argument("--dim", type=int, metavar="INT", help=f"latent dimension (default {d['dim']})")
    p.add_argument("--ct-grid", dest="ct_grid", type=_int_list, metavar="LIST",
                   help="comma-separated timesteps (default: the 18-point recording grid)")
    p.add_argument("--sigma", type=float, metavar="FLOAT",
                   help=f"std of the error added to the noise estimate (default {d['sigma']})")
    p.add_argument("--trials", type=int, metavar="INT", help=f"latents averaged per timestep (default {d['trials']})")
    _common(p, "pfi_demo")
    p.set_defaults(func=cmd_pfi_demo)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ParameterError, ScheduleError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except HeadgateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
