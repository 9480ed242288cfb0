"""``pramana`` command line: segment, run, eval, stats, synth, sweep.

Exit codes: 0 success, 1 per-item failures, 2 usage or configuration error,
3 external dependency (adapter) failure. Progress goes to stderr; results go
to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from .errors import AdapterUnavailable, ConfigError, ManifestError
from .evalharness import FORMATS, evaluate, report_table
from .pipeline import (
    PRESETS,
    IncompatibleCheckpoint,
    PipelineConfig,
    PipelineError,
    ablation_preset,
    load_config_dict,
    report_from_manifest,
    run_pipeline,
)
from .segmentation import VadConfig, segment_wav
from .synthcorpus import SynthConfig, TranscriberProfile, generate, sweep, sweep_csv
from .transcribers import make_transcriber

log = logging.getLogger("pramana")

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, EXIT_EXTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(d: dict, overrides) -> dict:
    """Apply ``dotted.key=value`` overrides; every key must already exist."""
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        parts = key.split(".")
        node = d
        for i, part in enumerate(parts):
            last = i == len(parts) - 1
            if isinstance(node, list):
                if not part.isdigit() or int(part) >= len(node):
                    raise ConfigError(f"unknown config key {key!r}")
                part = int(part)
            elif not isinstance(node, dict) or part not in node:
                raise ConfigError(f"unknown config key {key!r}")
            if last:
                node[part] = parse_value(value)
            else:
                node = node[part]
    return d


def _check_output(path, overwrite: bool):
    if Path(path).exists() and not overwrite:
        raise UsageError(f"{path} exists; pass --overwrite to replace it")


def _write(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# -- segment -----------------------------------------------------------------

def cmd_segment(args) -> int:
    src = Path(args.input_dir)
    if not src.is_dir():
        raise UsageError(f"input directory {src} does not exist")
    _check_output(args.output, args.overwrite)
    vad = asdict(VadConfig())
    if args.config:
        vad.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
    try:
        cfg = VadConfig(**apply_overrides(vad, args.set))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    failures = 0
    rows = []
    for wav in sorted(src.glob("*.wav")):
        try:
            segs = segment_wav(wav, cfg, domain=args.domain)
        except Exception as exc:  # unreadable or unsupported audio
            log.warning("skipping %s: %s", wav, exc)
            failures += 1
            if not args.keep_going:
                break
            continue
        log.info("%s: %d segments", wav.name, len(segs))
        rows += [s.to_row() for s in segs]
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.writelines(json.dumps(r, ensure_ascii=False) + "\n" for r in rows)
    if failures and not args.keep_going:
        return EXIT_PARTIAL
    return EXIT_OK


# -- run -----------------------------------------------------------------------

def build_pipeline_config(args) -> PipelineConfig:
    d = load_config_dict(args.config)
    cfg = PipelineConfig.from_dict(d)
    if args.set:
        cfg = PipelineConfig.from_dict(apply_overrides(cfg.to_dict(), args.set))
    if args.preset:
        cfg = ablation_preset(args.preset, cfg)
    workers = os.environ.get("PRAMANA_WORKERS")
    if args.workers is not None:
        workers = args.workers
    if workers is not None:
        try:
            workers = int(workers)
        except ValueError:
            raise ConfigError(f"workers must be an integer, got {workers!r}") from None
        cfg = PipelineConfig.from_dict({**cfg.to_dict(), "workers": workers})
    return cfg


def cmd_run(args) -> int:
    cfg = build_pipeline_config(args)
    if not args.resume:
        _check_output(args.output, args.overwrite)
    if not args.skip_healthcheck:
        for spec in cfg.transcribers:
            adapter = make_transcriber(spec)
            try:
                adapter.healthcheck()
            finally:
                adapter.close()
    report = run_pipeline(cfg, args.input, args.output, resume=args.resume)
    print(report.format_funnel(), file=sys.stderr)
    out = json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n"
    if args.report:
        _write(args.report, out)
    else:
        sys.stdout.write(out)
    return EXIT_OK


def cmd_stats(args) -> int:
    report = report_from_manifest(args.manifest)
    print(report.format_funnel(), file=sys.stderr)
    sys.stdout.write(json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n")
    return EXIT_OK


# -- eval ----------------------------------------------------------------------

def cmd_eval(args) -> int:
    systems = {}
    for item in args.hyp:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).stem, item
        if name in systems:
            raise UsageError(f"duplicate system name {name!r}")
        systems[name] = path
    report = evaluate(args.ref, systems)
    by_domain, by_duration = args.by_domain, args.by_duration
    if not by_domain and not by_duration:
        by_domain = by_duration = True
    _write(args.output, report_table(report, args.format, by_domain, by_duration))
    return EXIT_OK


# -- synth / sweep ---------------------------------------------------------------

def cmd_synth(args) -> int:
    d = SynthConfig().to_dict()
    if args.config:
        d.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
    if args.seed is not None:
        d["seed"] = args.seed
    if args.n_segments is not None:
        d["n_segments"] = args.n_segments
    if args.profile:
        profiles = []
        for item in args.profile:
            pid, sep, rate = item.partition(":")
            if not sep:
                raise UsageError(f"profile {item!r} is not ID:RATE")
            try:
                profiles.append(asdict(TranscriberProfile(pid, float(rate))))
            except ValueError:
                raise UsageError(f"profile {item!r}: rate is not a number") from None
        d["transcriber_profiles"] = profiles
    cfg = SynthConfig.from_dict(apply_overrides(d, args.set))
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.overwrite:
        raise UsageError(f"{out} is not empty; pass --overwrite")
    corpus = generate(cfg, out)
    log.info("wrote %d segments to %s", cfg.n_segments, corpus.root)
    return EXIT_OK


def cmd_sweep(args) -> int:
    rhos = [json.loads(r) for r in args.rho] if args.rho else [{}]
    for r in rhos:
        if not isinstance(r, dict):
            raise UsageError(f"--rho expects a JSON object, got {r!r}")
    rows = sweep(args.corpus, args.tau, args.delta, rhos, args.lam, args.comparison)
    _write(args.output, sweep_csv(rows))
    return EXIT_OK


# -- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pramana", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="energy VAD over a directory of PCM16 mono WAVs")
    p.add_argument("input_dir")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--config", help="JSON file with VAD settings")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--domain")
    p.add_argument("--keep-going", action="store_true")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("run", aliases=["label"], help="pseudo-label an input manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--workers", type=int)
    p.add_argument("--report", help="write the yield report JSON here instead of stdout")
    p.add_argument("--skip-healthcheck", action="store_true")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("stats", help="yield funnel of a labeled manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("eval", help="per-domain / per-duration WER tables")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", action="append", required=True, metavar="[NAME=]PATH")
    p.add_argument("--by-domain", action="store_true")
    p.add_argument("--by-duration", action="store_true")
    p.add_argument("--format", choices=FORMATS, default="text")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-segments", type=int)
    p.add_argument("--profile", action="append", metavar="ID:CER")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sweep", help="threshold sweep over a synthetic corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--tau", type=float, nargs="+", default=[1.0])
    p.add_argument("--delta", type=int, nargs="+", default=[1])
    p.add_argument("--rho", action="append", metavar="JSON")
    p.add_argument("--lam", type=int, nargs="+", default=[2])
    p.add_argument("--comparison", choices=("ge", "gt"), default="ge")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, ManifestError, IncompatibleCheckpoint, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AdapterUnavailable, PipelineError) as exc:
        print(f"external failure: {exc}", file=sys.stderr)
        return EXIT_EXTERNAL


if __name__ == "__main__":
    sys.exit(main())
