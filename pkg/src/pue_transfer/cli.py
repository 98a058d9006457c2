"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 runtime error, 3 attack
detected by ``cluster``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .akd import AKD, suggest_labels
from .core import ConfigError, DimensionError, read_dataset, write_dataset
from .harness import (OUT_DIR_ENV, PRESETS, ExperimentConfig, alignment_votes, apply_overrides,
                      emit_report, load_config, preset, report_csv, run_sweep, trial_frame)
from .igmm import gibbs_cluster
from .metrics import attack_detected
from .transfer import merge_decisions, update_akd

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_ATTACK = 0, 1, 2, 3

log = logging.getLogger("pue_transfer")


def _config(args) -> ExperimentConfig:
    if getattr(args, "config", None) and getattr(args, "preset", None):
        raise ConfigError("give either --preset or --config, not both")
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif getattr(args, "preset", None):
        cfg = preset(args.preset)
    else:
        cfg = ExperimentConfig()
    overrides = {}
    for item in getattr(args, "set", None) or ():
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects NAME=VALUE, got {item!r}")
        try:
            overrides[key] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key] = raw
    if getattr(args, "trials", None) is not None:
        overrides["trials"] = args.trials
    return apply_overrides(cfg, overrides) if overrides else cfg


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_DIR_ENV, "."))


def cmd_cluster(args) -> int:
    cfg = _config(args)
    frame = read_dataset(args.dataset).stripped()
    hp = cfg.hyper.resolve(frame.features)
    bayes = gibbs_cluster(frame, hp, cfg.gibbs, args.seed)
    final = bayes
    if args.akd:
        akd, stored = AKD.load(args.akd, expect_dim=frame.dim)
        params = (stored or cfg.akd_params).resolved(frame.features)
        suggestions = suggest_labels(akd, frame, params)
        votes = alignment_votes(akd, frame, params, cfg.policy)
        final = merge_decisions(bayes, suggestions, cfg.policy, votes)
        if args.save_akd:
            update_akd(akd, frame, final, suggestions, params, alignment=votes).save(args.save_akd, params)
    detected = attack_detected(final, frame, cfg.min_support)
    doc = {
        "n_fingerprints": len(frame),
        "n_clusters": final.n_labels,
        "attack_detected": detected,
        "labels": list(final.labels),
    }
    print(json.dumps(doc))
    return EXIT_ATTACK if detected else EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    report = run_sweep(cfg, workers=args.workers)
    if args.out or os.environ.get(OUT_DIR_ENV):
        csv_path, json_path = emit_report(report, _out_dir(args), args.stem)
        log.info("wrote %s and %s", csv_path, json_path)
    sys.stdout.write(report_csv(report))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    report = run_sweep(cfg, workers=args.workers)
    csv_path, json_path = emit_report(report, _out_dir(args), args.stem)
    print(csv_path)
    print(json_path)
    return EXIT_OK


def cmd_generate(args) -> int:
    frame = trial_frame(_config(args), args.trial)
    write_dataset(args.output, frame)
    print(args.output)
    return EXIT_OK


def cmd_akd_inspect(args) -> int:
    akd, params = AKD.load(args.snapshot)
    per_label: dict[int, int] = {}
    for e in akd:
        per_label[e.label] = per_label.get(e.label, 0) + 1
    w = akd.weights()
    print(f"entries:    {len(akd)}")
    print(f"dimension:  {akd.dim}")
    print(f"labels:     {len(per_label)} (next free {akd.next_label})")
    if len(akd):
        print(f"weights:    min {w.min():g}  max {w.max():g}  mean {w.mean():g}")
    if params is not None:
        print(f"epsilon:    {params.epsilon}")
    for lab in sorted(per_label):
        print(f"  label {lab}: {per_label[lab]} entries")
    return EXIT_OK


def cmd_akd_export(args) -> int:
    akd, params = AKD.load(args.snapshot)
    text = json.dumps(akd.to_json(params), indent=1) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _add_config_args(p, presets: bool = True):
    if presets:
        p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--config", help="JSON file mirroring ExperimentConfig fields")
    p.add_argument("--set", action="append", metavar="NAME=VALUE",
                   help="override one dotted parameter, e.g. scenario.n_devices=10 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pue-transfer", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cluster", help="cluster a dataset file and report an attack verdict")
    p.add_argument("dataset", help=".jsonl or .csv fingerprint file")
    _add_config_args(p, presets=False)
    p.add_argument("--akd", help="AKD snapshot to transfer knowledge from")
    p.add_argument("--save-akd", help="write the updated AKD snapshot here (needs --akd)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_cluster)

    for name, func, helptext in (("simulate", cmd_simulate, "run an experiment and print its CSV"),
                                 ("sweep", cmd_sweep, "run an experiment and write CSV + JSON sidecar")):
        p = sub.add_parser(name, help=helptext)
        _add_config_args(p)
        p.add_argument("--out", help=f"output directory (default ${OUT_DIR_ENV} or .)")
        p.add_argument("--stem", default="report")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--trials", type=int)
        p.set_defaults(func=func)

    p = sub.add_parser("generate", help="write one synthetic frame as a dataset file")
    _add_config_args(p)
    p.add_argument("output", help="destination .jsonl or .csv")
    p.add_argument("--trial", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("akd", help="AKD snapshot utilities")
    akd_sub = p.add_subparsers(dest="akd_command", required=True)
    q = akd_sub.add_parser("inspect", help="summarise a snapshot")
    q.add_argument("snapshot")
    q.set_defaults(func=cmd_akd_inspect)
    q = akd_sub.add_parser("export", help="re-emit a validated snapshot")
    q.add_argument("snapshot")
    q.add_argument("--format", choices=["json"], default="json")
    q.add_argument("--output")
    q.set_defaults(func=cmd_akd_export)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "save_akd", None) and not getattr(args, "akd", None):
        print("error: --save-akd needs --akd", file=sys.stderr)
        return EXIT_CONFIG
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, DimensionError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
