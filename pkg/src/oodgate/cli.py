"""Command-line front-end: gen, corrupt, calibrate, evaluate, report.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 internal error.
Errors print as one machine-parsable line on stderr:
``error: <kind>: <message>``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .cascade import load_gates, save_gates
from .config import RunConfig
from .corruptions import FAMILIES, CorruptionSpec, build_corrupted_corpus
from .datagen import KINDS, CorpusSpec, write_corpus
from .errors import ConfigError, DataError, OodgateError
from .metrics import write_histogram_csv, write_report_csv
from .pipeline import (
    build_backbone,
    calibrate_pipeline,
    evaluate_pipeline,
    load_samples,
)
from .she import load_bank, save_bank
from .tensor import read_tensor

JOBS_ENV = "CASCADE_GATE_JOBS"


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    p.add_argument("--backbone-seed", type=int, dest="backbone_seed")
    p.add_argument("--classes", type=int)
    p.add_argument("--extents", help="input extents as CxHxW, e.g. 3x32x32")
    p.add_argument("--ses-top-k", type=int, dest="ses_top_k")
    p.add_argument("--ses-epsilon", type=float, dest="ses_epsilon")
    p.add_argument("--ses-global-omega", action="store_const", const=True, dest="ses_global_omega")
    p.add_argument("--she-weighting", choices=("uniform", "self-consistent"), dest="she_weighting")
    p.add_argument("--she-kappa-mode", choices=("vmf", "uniform"), dest="she_kappa_mode")
    p.add_argument(
        "--she-no-l2",
        action="store_const",
        const=False,
        dest="she_l2_normalize",
        help="ablation: score raw dot products instead of cosines",
    )
    p.add_argument("--early-retention", dest="early_retention",
                   help="comma-separated per-gate ID retention targets, e.g. 0.995,0.995")
    p.add_argument("--final-tpr", type=float, dest="final_tpr")
    p.add_argument("--final-scorer", choices=("energy", "msp"), dest="final_scorer")
    p.add_argument("--split-seed", type=int, dest="split_seed")
    p.add_argument("--jobs", type=int, help=f"worker threads (default: ${JOBS_ENV} or 1)")


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig.from_json(args.config) if args.config else RunConfig()
    overrides = {}
    for name in (
        "backbone_seed",
        "classes",
        "ses_top_k",
        "ses_epsilon",
        "ses_global_omega",
        "she_weighting",
        "she_kappa_mode",
        "she_l2_normalize",
        "final_tpr",
        "final_scorer",
        "split_seed",
        "jobs",
    ):
        overrides[name] = getattr(args, name, None)
    if getattr(args, "extents", None):
        try:
            overrides["input_extents"] = tuple(int(x) for x in args.extents.lower().split("x"))
        except ValueError as e:
            raise ConfigError(f"--extents must look like 3x32x32, got {args.extents!r}") from e
    if getattr(args, "early_retention", None):
        try:
            overrides["early_retention"] = tuple(float(r) for r in args.early_retention.split(","))
        except ValueError as e:
            raise ConfigError("--early-retention must be comma-separated floats") from e
    if overrides.get("jobs") is None and os.environ.get(JOBS_ENV):
        try:
            overrides["jobs"] = int(os.environ[JOBS_ENV])
        except ValueError as e:
            raise ConfigError(f"${JOBS_ENV} must be an integer, got {os.environ[JOBS_ENV]!r}") from e
    return cfg.override(**overrides)


def _write_config_sidecar(cfg: RunConfig, path: Path):
    path.write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")


def cmd_gen(args) -> int:
    if args.kind not in KINDS:
        raise ConfigError(f"--kind must be one of {KINDS}, got {args.kind!r}")
    extents = (3, 32, 32)
    if args.extents:
        extents = tuple(int(x) for x in args.extents.lower().split("x"))
    spec = CorpusSpec(kind=args.kind, n=args.n, classes=args.classes, extents=extents, seed=args.seed)
    manifest = write_corpus(spec, args.out_dir, prefix=args.prefix)
    print(f"wrote {len(manifest['entries'])} tensors to {args.out_dir}")
    return 0


def cmd_corrupt(args) -> int:
    samples = load_samples(args.manifest)
    families = args.families.split(",")
    for fam in families:
        if fam not in FAMILIES:
            raise ConfigError(f"--families entries must be in {FAMILIES}, got {fam!r}")
    severities = [int(s) for s in args.severities.split(",")]
    specs = [
        CorruptionSpec(family=fam, severity=sev, seed=args.seed)
        for fam in families
        for sev in severities
    ]
    entries = [(s.sample_id, read_tensor(s.payload)) for s in samples]
    manifest = build_corrupted_corpus(entries, specs, args.out_dir)
    print(f"wrote {len(manifest['entries'])} corrupted tensors to {args.out_dir}")
    return 0


def cmd_calibrate(args) -> int:
    cfg = _config_from_args(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = load_samples(args.id_manifest)
    backbone = build_backbone(cfg)
    result = calibrate_pipeline(samples, backbone, cfg)
    save_bank(result.bank, out_dir / "prototypes")
    extra = {
        "config": cfg.to_dict(),
        "split": result.split,
    }
    if result.omega is not None:
        extra["ses_omega"] = [int(i) for i in result.omega]
    save_gates(result.gates, out_dir / "gates.json", extra=extra)
    _write_config_sidecar(cfg, out_dir / "calibrate.config.json")
    print(f"calibrated {len(result.gates)} gates -> {out_dir / 'gates.json'}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config_from_args(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    gates, extras = load_gates(args.gates)
    omega = np.asarray(extras["ses_omega"], dtype=np.intp) if "ses_omega" in extras else None
    bank = load_bank(Path(args.bank))
    backbone = build_backbone(cfg)
    id_samples = load_samples(args.id_manifest)
    ood_corpora = {}
    for spec in args.ood:
        if "=" not in spec:
            raise ConfigError(f"--ood expects name=manifest.json, got {spec!r}")
        name, path = spec.split("=", 1)
        ood_corpora[name] = load_samples(path)
    if not ood_corpora:
        raise ConfigError("at least one --ood corpus is required")
    rows, hists, _ = evaluate_pipeline(
        id_samples, ood_corpora, backbone, bank, gates, cfg, omega=omega
    )
    write_report_csv(rows, out_dir / "report.csv")
    for name, hist in hists.items():
        write_histogram_csv(hist, out_dir / f"hist_{name}.csv")
    _write_config_sidecar(cfg, out_dir / "report.config.json")
    print(f"wrote {out_dir / 'report.csv'} ({len(rows)} corpora)")
    return 0


def cmd_report(args) -> int:
    header = None
    merged = []
    for path in args.inputs:
        lines = Path(path).read_text().splitlines()
        if not lines:
            raise DataError(f"report {path} is empty")
        if header is None:
            header = lines[0]
        elif lines[0] != header:
            raise DataError(f"report {path} has a different column set")
        merged.extend(lines[1:])
    out_lines = [header] + merged
    text = "\n".join(out_lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oodgate",
        description="Training-free cascaded early-rejection engine for OOD detection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--kind", required=True, help=f"one of {KINDS}")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--extents", default=None, help="CxHxW, default 3x32x32")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prefix", default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("corrupt", help="apply degradation families to an image corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--families", required=True, help=f"comma list from {FAMILIES}")
    p.add_argument("--severities", default="1,2,3,4,5")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_corrupt)

    p = sub.add_parser("calibrate", help="fit prototypes and calibrate gates from an ID corpus")
    _add_config_flags(p)
    p.add_argument("--id-manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("evaluate", help="run the cascade over ID and OOD corpora")
    _add_config_flags(p)
    p.add_argument("--gates", required=True)
    p.add_argument("--bank", required=True, help="prototype bank path prefix")
    p.add_argument("--id-manifest", required=True)
    p.add_argument("--ood", action="append", default=[], help="name=manifest.json (repeatable)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("report", help="merge evaluation reports")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"error: config: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"error: data: {e}", file=sys.stderr)
        return 3
    except OodgateError as e:
        print(f"error: internal: {e}", file=sys.stderr)
        return 4
    except Exception as e:  # noqa: BLE001 - the CLI boundary reports, not raises
        print(f"error: internal: {type(e).__name__}: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
