"""Command-line harness: ``retrovlc run | fixtures | verify``.

Exit codes: 0 success, 1 verification mismatch, 2 scenario error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .decoder import decode_swmsmf
from .errors import RetroVLCError, ScenarioError
from .experiments import CSV_SCHEMA_VERSION, EXPERIMENTS
from .fixtures import gen_fixtures, load_corpus, sha256_file
from .scenario import Scenario, load_scenario, parse_scenario
from .signal import build_frame

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
SEED_ENV = "RVLC_SEED"


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if v == 0:
            return "0"
        return format(v, ".10g")
    return str(v)


def render_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format_value(v) for v in r])
    return buf.getvalue()


def _run_one(args) -> list[tuple]:
    text, name, seed = args
    return EXPERIMENTS[name].run(parse_scenario(text), seed)


def run_scenario(sc: Scenario, out_dir, jobs: int = 1) -> dict:
    """Run every experiment of ``sc`` into ``out_dir``; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "library_version": __version__,
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "scenario_sha256": sc.sha256(),
        "seeds": list(sc.seeds),
        "scenario_text": sc.text,
        "experiments": {},
    }
    for name in sc.experiments:
        exp = EXPERIMENTS[name]
        if jobs > 1 and len(sc.seeds) > 1:
            # workers re-parse the text; the seed travels separately
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                parts = list(pool.map(_run_one, [(sc.text, name, s) for s in sc.seeds]))
        else:
            parts = [exp.run(sc, s) for s in sc.seeds]
        rows = [r for part in parts for r in part]
        rows.sort(key=lambda r: r[0])  # stable: keeps each seed's own row order
        csv_name = f"{name}.csv"
        (out / csv_name).write_bytes(render_csv(exp.columns, rows).encode())
        entry = {"csv": csv_name, "columns": list(exp.columns), "rows": len(rows)}
        if exp.summarize is not None:
            entry["summary"] = exp.summarize(sc, rows)
        manifest["experiments"][name] = entry
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _seed_override(arg_seed: int | None) -> list[int] | None:
    if arg_seed is not None:
        return [arg_seed]
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return [int(s) for s in env.split(",") if s.strip()]
        except ValueError:
            raise ScenarioError(f"{SEED_ENV} must hold integer seeds, got {env!r}") from None
    return None


def check_models(sc: Scenario) -> None:
    """Build every model once so bad values surface as scenario errors."""
    from .experiments import channel_config, geometry_config, harvest_model

    for section, build in (("channel", channel_config), ("geometry", geometry_config),
                           ("tag", harvest_model)):
        try:
            build(sc)
        except ValueError as e:
            raise ScenarioError(f"[{section}] {e}") from None


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    check_models(sc)
    seeds = _seed_override(args.seed)
    if seeds is not None:
        sc = sc.with_seeds(seeds)
    m = run_scenario(sc, args.out, args.jobs)
    for name, e in m["experiments"].items():
        print(f"{name}: {e['rows']} rows -> {Path(args.out) / e['csv']}")
    return EXIT_OK


def cmd_fixtures(args) -> int:
    index = gen_fixtures(args.dir, args.seed, args.snr_db)
    for name in index["cases"]:
        print(f"{name}: {Path(args.dir) / index['cases'][name]['waveform']}")
    return EXIT_OK


def _verify_corpus(d: Path) -> list[str]:
    index = json.loads((d / "corpus.json").read_text())
    problems = []
    with tempfile.TemporaryDirectory() as tmp:
        fresh = gen_fixtures(tmp, index["seed"], index["snr_db"])
    for name, e in sorted(index["cases"].items()):
        on_disk = (sha256_file(d / e["waveform"]), sha256_file(d / e["bits"]))
        if on_disk != (e["sha256"], e["bits_sha256"]):
            problems.append(f"{name}: file does not match its recorded hash")
        if fresh["cases"].get(name, {}).get("sha256") != e["sha256"]:
            problems.append(f"{name}: regenerated waveform differs")
    for name, (wave, payload) in load_corpus(d).items():
        try:
            r = decode_swmsmf(wave, None, None, len(payload))
            if r.bit_errors(build_frame(payload).bits) or not r.crc_ok:
                problems.append(f"{name}: decode mismatch")
        except RetroVLCError as e:
            problems.append(f"{name}: {e}")
    return problems


def _verify_run(d: Path) -> list[str]:
    manifest = json.loads((d / "manifest.json").read_text())
    sc = parse_scenario(manifest["scenario_text"]).with_seeds(manifest["seeds"])
    problems = []
    if sc.sha256() != manifest["scenario_sha256"]:
        problems.append("scenario text does not match its recorded hash")
    with tempfile.TemporaryDirectory() as tmp:
        fresh = run_scenario(sc, tmp)
        for name, e in manifest["experiments"].items():
            old, new = d / e["csv"], Path(tmp) / fresh["experiments"][name]["csv"]
            if not old.exists():
                problems.append(f"{e['csv']}: missing")
            elif old.read_bytes() != new.read_bytes():
                problems.append(f"{e['csv']}: differs from a fresh run")
    return problems


def cmd_verify(args) -> int:
    d = Path(args.dir)
    if (d / "manifest.json").exists():
        problems = _verify_run(d)
    elif (d / "corpus.json").exists():
        problems = _verify_corpus(d)
    else:
        raise ScenarioError(f"{d} holds neither manifest.json nor corpus.json")
    for p in problems:
        print(f"MISMATCH {p}")
    if not problems:
        print("OK")
    return EXIT_MISMATCH if problems else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="retrovlc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("scenario")
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=None, help=f"overrides {SEED_ENV} and the scenario")
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(func=cmd_run)

    f = sub.add_parser("fixtures", help="write the distortion fixture corpus")
    f.add_argument("dir")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--snr-db", type=float, default=20.0)
    f.set_defaults(func=cmd_fixtures)

    v = sub.add_parser("verify", help="re-run a result or corpus directory and compare")
    v.add_argument("dir")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (RetroVLCError, ValueError, ArithmeticError) as e:
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
