"""Command-line entry point: ``specdict <command> [options]``.

Exit codes: 0 success, 2 partial (some items failed and were logged),
1 fatal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .errors import SpecDictError
from .pipeline import EXIT_FATAL, EXIT_OK, ExperimentConfig

log = logging.getLogger("specdict")


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="YAML experiment config")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override a config entry, e.g. --set train.epochs=1 (repeatable)",
    )
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for evaluation sweeps")
    parser.add_argument(
        "--out", type=Path,
        help=f"output directory (default: config output_dir, then ${pipeline.OUTPUT_ROOT_ENV}, then ./specdict_out)",
    )
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specdict", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate the two-well population")
    _common(p)
    p = sub.add_parser("estimate", help="RRR operator per trajectory (reference operators)")
    _common(p)
    p = sub.add_parser("train-dict", help="learn a dictionary from the training operators")
    _common(p)
    p.add_argument("--d", type=int, help="number of atoms (default: train.d)")
    p = sub.add_parser("eval-short", help="truncated-trajectory evaluation of all methods")
    _common(p)
    p.add_argument("--dictionary", type=Path)
    p = sub.add_parser("detect-switches", help="rolling codes on a regime-switching trajectory")
    _common(p)
    p.add_argument("--dictionary", type=Path)
    p.add_argument("--windows", type=int, nargs="+")
    p = sub.add_parser("distance-matrix", help="pairwise divergences between operator files")
    _common(p)
    p.add_argument("operators", nargs="*", type=Path, help="operator JSON files (default: all in <out>/operators)")
    p.add_argument("--output", type=Path, help="CSV path (default: <out>/distances.csv)")
    p = sub.add_parser("selftest", help="quick numerical self-checks")
    _common(p)
    return parser


def selftest() -> int:
    """Small end-to-end sanity checks on random data."""
    from . import _backend
    from .manifold import project_tangent, tangency_error
    from .sgot import SgotConfig, sgot_divergence
    from .spectral_core import assemble_operator, spectral_decompose

    rng = np.random.default_rng(0)
    p, r = 6, 3
    a = rng.normal(size=(p, r)) + 1j * rng.normal(size=(p, r))
    b = rng.normal(size=(p, r)) + 1j * rng.normal(size=(p, r))
    sd = spectral_decompose(a @ b.conj().T, r)
    checks = {}
    checks["biorthogonality"] = sd.biorth_error() < 1e-8
    back = spectral_decompose(assemble_operator(sd), r)
    checks["round trip"] = np.allclose(assemble_operator(back).matrix, assemble_operator(sd).matrix, atol=1e-8)
    amb = (rng.normal(size=r) + 0j, rng.normal(size=(p, r)) + 0j, rng.normal(size=(p, r)) + 0j)
    checks["tangent projection"] = tangency_error(sd, project_tangent(sd, amb)) < 1e-8
    checks["divergence identity"] = sgot_divergence(sd, sd, SgotConfig()) < 1e-12
    m = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    ev, _, status = _backend.schur_eig(m)
    ref = np.linalg.eigvals(m)
    checks[f"eigensolver ({_backend.BACKEND})"] = status == 0 and all(np.min(np.abs(ref - e)) < 1e-9 for e in ev)
    for name, ok in checks.items():
        print(f"{'ok  ' if ok else 'FAIL'} {name}")
    return EXIT_OK if all(checks.values()) else EXIT_FATAL


def run(args) -> int:
    if args.command == "selftest":
        return selftest()
    cfg = ExperimentConfig.load(args.config, args.overrides, args.seed)
    out = cfg.output_dir(args.out)
    if args.command == "simulate":
        return pipeline.run_simulate(cfg, out)
    if args.command == "estimate":
        return pipeline.run_estimate(cfg, out)
    if args.command == "train-dict":
        return pipeline.run_train_dict(cfg, out, args.d)
    if args.command == "eval-short":
        return pipeline.run_eval_short(cfg, out, args.dictionary, threads=args.threads)
    if args.command == "detect-switches":
        return pipeline.run_detect_switches(cfg, out, args.dictionary, args.windows)
    if args.command == "distance-matrix":
        paths = args.operators or sorted((out / "operators").glob("*.json"))
        return pipeline.run_distance_matrix(paths, cfg.sgot(), args.output or out / "distances.csv")
    raise AssertionError(args.command)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return run(args)
    except (SpecDictError, ValueError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
