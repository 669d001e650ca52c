"""Command-line entry point: ``quasiboot {fit,bootstrap,report,simulate}``.

Exit codes: 0 success, 2 formula/usage error, 3 ingest error, 4 fit
failure, 5 bootstrap abort, 1 anything else.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import secrets
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .bootstrap import (
    DEFAULT_RESAMPLES,
    BootstrapConfig,
    BootstrapOutput,
    base_report,
    run_bootstrap,
    summarize,
)
from .exceptions import (
    BootstrapAbortError,
    FitError,
    FormulaError,
    IngestError,
    QuasibootError,
)
from .formula import parse_formula
from .glmm import FitResult, fit
from .io import ingest_csv, render
from .simulate import (
    GENERATOR_ASSUMPTIONS,
    SimConfig,
    config_dict,
    evaluate_cell,
    run_cell,
    write_cell_summaries,
    write_width_ratios,
)

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_PARSE = 2
EXIT_INGEST = 3
EXIT_FIT = 4
EXIT_BOOTSTRAP = 5

log = logging.getLogger("quasiboot")


@dataclass
class RunManifest:
    """Everything needed to replay a run against the same input file."""

    command: str
    input_path: str | None = None
    input_sha256: str | None = None
    formula: str | None = None
    config: dict = field(default_factory=dict)
    version: str = __version__
    started: float = field(default_factory=time.time)
    elapsed_seconds: float = 0.0

    def write(self, directory):
        path = Path(directory) / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2))
        return path


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _resolve_seed(seed):
    if seed is None:
        seed = secrets.randbits(63)
        print(f"seed: {seed}", file=sys.stderr)
    return seed


def _emit(text, out_dir, name):
    sys.stdout.write(text)
    if out_dir is not None:
        (Path(out_dir) / name).write_text(text)


def _prepare_out(args):
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args, extra_factors=()):
    spec = parse_formula(args.formula)
    table = ingest_csv(args.data, spec, extra_factors)
    return spec, table


def cmd_fit(args):
    out = _prepare_out(args)
    manifest = RunManifest("fit", str(args.data), _sha256(args.data), args.formula,
                           {"format": args.format})
    spec, table = _load(args)
    base = fit(table, spec)
    if out is not None:
        (out / "fit.json").write_text(json.dumps(base.to_dict(), indent=2))
    _emit(render(base_report(base, args.alpha), args.format, base.random_effects),
          out, f"report.{args.format}")
    manifest.elapsed_seconds = time.time() - manifest.started
    if out is not None:
        manifest.write(out)
    return EXIT_OK


def cmd_bootstrap(args):
    out = _prepare_out(args)
    seed = _resolve_seed(args.seed)
    factors = tuple(args.factor or ())
    config = BootstrapConfig(
        R=args.resamples, alpha=args.alpha, seed=seed, workers=args.workers,
        mode=args.mode, factors=factors, max_failure_fraction=args.max_failure_fraction,
    )
    manifest = RunManifest("bootstrap", str(args.data), _sha256(args.data), args.formula,
                           {**asdict(config), "format": args.format})
    spec, table = _load(args, factors)
    base = fit(table, spec)
    boot = run_bootstrap(table, spec, config, base=base)
    report = summarize(base, boot)
    if out is not None:
        (out / "fit.json").write_text(json.dumps(base.to_dict(), indent=2))
        (out / "bootstrap.json").write_text(json.dumps(boot.to_dict()))
    _emit(render(report, args.format, base.random_effects), out, f"report.{args.format}")
    manifest.elapsed_seconds = time.time() - manifest.started
    if out is not None:
        manifest.write(out)
    return EXIT_OK


def cmd_report(args):
    run = Path(args.run)
    try:
        base = FitResult.from_dict(json.loads((run / "fit.json").read_text()))
    except FileNotFoundError:
        raise IngestError(f"{run}: no fit.json found") from None
    boot_path = run / "bootstrap.json"
    if boot_path.exists():
        boot = BootstrapOutput.from_dict(json.loads(boot_path.read_text()))
        report = summarize(base, boot, args.alpha)
    else:
        report = base_report(base, args.alpha or 0.05)
    sys.stdout.write(render(report, args.format, base.random_effects))
    return EXIT_OK


def cmd_simulate(args):
    out = _prepare_out(args)
    seed = _resolve_seed(args.seed)
    summaries = []
    configs = []
    for rho in args.rho:
        cfg = SimConfig(
            rows=args.rows, n_fixed=args.n_fixed, levels=tuple(args.levels),
            crossed=not args.nested, effects_null=not args.effects, noise=args.noise,
            rho=rho, replicates=args.replicates, resamples=args.resamples,
            alpha=args.alpha, seed=seed, workers=args.workers,
        )
        configs.append(cfg)
        t0 = time.time()
        results = run_cell(cfg)
        s = evaluate_cell(results, cfg)
        summaries.append(s)
        log.info("cell %s done in %.1fs", cfg.cell_id, time.time() - t0)
        print(
            f"{s.cell_id}: boot rejection {s.pooled_boot_rejection:.3f}, "
            f"base rejection {s.pooled_base_rejection:.3f}, "
            f"null band [{s.band[0]:.3f}, {s.band[1]:.3f}], "
            f"mean width ratio {s.mean_width_ratio:.3f} "
            f"({s.n_replicates} ok, {s.n_failed} failed)"
        )
    if out is not None:
        write_cell_summaries(summaries, out / "cells.csv")
        write_width_ratios(summaries, out / "width_ratios.csv")
        RunManifest("simulate", config={
            "cells": [config_dict(c) for c in configs],
            "generator_assumptions": GENERATOR_ASSUMPTIONS,
        }).write(out)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="quasiboot",
        description="Quasi-likelihood logistic regression for proportions with "
                    "bootstrap-t inference.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_args(p):
        p.add_argument("--data", required=True, type=Path, help="input CSV with a header row")
        p.add_argument("--formula", required=True,
                       help='model formula, e.g. "y ~ x1 + x2 + (1|subject)"')
        p.add_argument("--format", choices=["text", "json", "csv"], default="text")
        p.add_argument("--out", type=Path, help="directory for outputs and manifest.json")
        p.add_argument("--alpha", type=float, default=0.05)

    p = sub.add_parser("fit", help="fit the base model only")
    data_args(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("bootstrap", help="fit the base model and run the bootstrap")
    data_args(p)
    p.add_argument("--resamples", type=int, default=DEFAULT_RESAMPLES)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--mode", choices=["block", "pigeonhole"], default="block")
    p.add_argument("--factor", action="append",
                   help="resampling factor (overrides entropy choice; twice for pigeonhole)")
    p.add_argument("--max-failure-fraction", type=float, default=0.01)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("report", help="re-render a saved fit/bootstrap run")
    p.add_argument("--run", required=True, type=Path, help="directory written by --out")
    p.add_argument("--format", choices=["text", "json", "csv"], default="text")
    p.add_argument("--alpha", type=float)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("simulate", help="run a simulation cell per rho value")
    p.add_argument("--rows", type=int, default=1000)
    p.add_argument("--n-fixed", type=int, default=3)
    p.add_argument("--levels", type=int, nargs="+", default=[40])
    p.add_argument("--nested", action="store_true", help="nest two factors instead of crossing")
    p.add_argument("--effects", action="store_true", help="non-null fixed effects")
    p.add_argument("--noise", choices=["beta", "uniform"], default="beta")
    p.add_argument("--rho", type=float, nargs="+", default=[0.6])
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--resamples", type=int, default=1000)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FormulaError as exc:
        print(f"formula error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except IngestError as exc:
        print(f"ingest error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except FitError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    except BootstrapAbortError as exc:
        print(f"bootstrap aborted: {exc}", file=sys.stderr)
        return EXIT_BOOTSTRAP
    except QuasibootError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
