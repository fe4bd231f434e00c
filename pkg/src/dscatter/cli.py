"""``dscatter <subcommand> --config <path> [--seed N] [--out DIR] [--workers K] [--snapshots]``.

Exit codes: 0 success, 2 validation or configuration error, 3 numerical
divergence, 4 precondition unsatisfiable.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checks import run_checks
from .errors import ConfigurationError, DScatterError
from .experiments import (
    ExperimentSpec,
    randomized_datum,
    run_free_decay,
    run_large_deviation,
    run_member,
    run_scattering_ensemble,
    write_ensemble,
)
from .io import save_snapshot, write_csv, write_json
from .randomization import CoefficientLaw

log = logging.getLogger("dscatter")

SUBCOMMANDS = ("randomize", "free-decay", "large-dev", "solve", "gp-solve", "ensemble", "check")
FAILURE_EXIT = {"validation": 2, "divergence": 3, "nonconvergence": 3, "numerical": 3, "threshold": 3,
                "precondition": 4}


def load_spec(path: str | None, seed: int | None, out: str | None) -> ExperimentSpec:
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    spec = ExperimentSpec.from_dict(doc)
    if seed is not None:
        spec = replace(spec, master_seed=int(seed), seeds=())
    if out is not None:
        spec = replace(spec, outputs=out)
    return spec


def cmd_randomize(spec: ExperimentSpec, args) -> int:
    out = Path(spec.outputs)
    rows = []
    for k, seed in enumerate(spec.member_seeds()):
        field = randomized_datum(spec, seed)
        save_snapshot(field, out / f"datum{k:04d}", 0.0)
        vals = field.values()
        rows.append({"index": k, "seed": seed, "l2": float(np.sqrt(np.sum(np.abs(vals) ** 2) * spec.grid.cell_volume)),
                     "sup": float(np.max(np.abs(vals)))})
    write_csv(out / "summary.csv", rows)
    write_json(out / "report.json", {"spec": spec.to_dict(), "members": rows})
    return 0


def cmd_free_decay(spec: ExperimentSpec, args) -> int:
    res = run_free_decay(spec, workers=args.workers)
    out = Path(spec.outputs)
    write_csv(out / "free_decay.csv", res.rows)
    write_csv(out / "summary.csv", res.mean_rows)
    write_json(out / "report.json", {"spec": spec.to_dict(), "params": res.params,
                                     "fit": None if res.fit is None else res.fit.to_dict(),
                                     "exponent": res.exponent, "epsilon0": res.epsilon0, "passes": res.passes()})
    return 0


def _coefficient_vectors(desc) -> list[np.ndarray]:
    vectors = []
    for v in desc:
        if isinstance(v, dict):
            kind = v.get("kind", "one-hot")
            size = int(v.get("size", 1))
            if kind == "one-hot":
                c = np.zeros(size)
                c[0] = 1.0
            elif kind == "flat":
                c = np.ones(size) / np.sqrt(size)
            else:
                raise ConfigurationError(f"unknown coefficient vector kind {kind!r}")
            vectors.append(c)
        else:
            vectors.append(np.asarray(v, dtype=complex))
    return vectors


def cmd_large_dev(spec: ExperimentSpec, args) -> int:
    ld = spec.large_deviation
    laws = ld.get("laws", [spec.law.to_dict()])
    vectors = _coefficient_vectors(ld.get("vectors", [{"kind": "one-hot", "size": 1}, {"kind": "flat", "size": 16}]))
    alphas = ld.get("alphas", [2, 3, 4, 6, 8])
    samples = int(ld.get("samples", 100_000))
    rows, reports = [], []
    for law in laws:
        law = CoefficientLaw(law.get("family", "gaussian"), float(law.get("scale", 1.0)))
        res = run_large_deviation(law, vectors, alphas, samples, spec.master_seed)
        rows.extend(res["rows"])
        reports.append({k: v for k, v in res.items() if k != "rows"})
    out = Path(spec.outputs)
    write_csv(out / "summary.csv", rows)
    write_json(out / "report.json", {"spec": spec.to_dict(), "laws": reports})
    return 0


def _single(spec: ExperimentSpec, args) -> int:
    seed = spec.member_seeds()[0]
    snaps = str(Path(spec.outputs) / "snapshots") if args.snapshots else None
    row, report = run_member(spec, 0, seed, snaps)
    out = Path(spec.outputs)
    write_csv(out / "summary.csv", [row])
    write_json(out / "report.json", {"spec": spec.to_dict(), **report})
    if row["status"] != "ok":
        log.error("run failed (%s): %s", row["failure"], report.get("error"))
        return FAILURE_EXIT.get(row["failure"], 1)
    return 0


def cmd_solve(spec: ExperimentSpec, args) -> int:
    if spec.is_gp:
        raise ConfigurationError("use gp-solve for the Gross-Pitaevskii system")
    spec.build_system()
    return _single(spec, args)


def cmd_gp_solve(spec: ExperimentSpec, args) -> int:
    if not spec.is_gp:
        spec = replace(spec, system={"name": "gp"}, randomization="h1dot")
    return _single(spec, args)


def cmd_ensemble(spec: ExperimentSpec, args) -> int:
    snaps = str(Path(spec.outputs) / "snapshots") if args.snapshots else None
    summary = run_scattering_ensemble(spec, workers=args.workers, snapshot_dir=snaps)
    write_ensemble(summary, spec, spec.outputs)
    log.info("success fraction %.3f, verified fraction %.3f", summary.success_fraction, summary.verified_fraction)
    return 0


def cmd_check(spec: ExperimentSpec, args) -> int:
    checks = run_checks(spec.master_seed)
    out = Path(spec.outputs)
    write_csv(out / "check.csv", [c.row() for c in checks])
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.value:.3e} (tol {c.tolerance:.0e})")
    return 0 if all(c.passed for c in checks) else 3


COMMANDS = {
    "randomize": cmd_randomize,
    "free-decay": cmd_free_decay,
    "large-dev": cmd_large_dev,
    "solve": cmd_solve,
    "gp-solve": cmd_gp_solve,
    "ensemble": cmd_ensemble,
    "check": cmd_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dscatter", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment document")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--workers", type=int, default=1, help="parallel ensemble members")
        p.add_argument("--snapshots", action="store_true", help="write binary field snapshots")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.workers < 1:
        print("error: --workers must be positive", file=sys.stderr)
        return 2
    try:
        spec = load_spec(args.config, args.seed, args.out)
        return COMMANDS[args.command](spec, args)
    except DScatterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
