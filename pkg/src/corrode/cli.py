"""Command-line front end: ``corrode {forward,kernel,runge,sweep,reconstruct,verify}``.

Exit status is 0 on success, 1 on a numerical failure (or a failing property
under ``verify``) and 2 on a configuration error.  Failures print a JSON object
with ``error``, ``message`` and, for configuration errors, ``key``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .config import PRESETS, ExperimentConfig, load_config, preset, write_config
from .errors import ConfigurationError, CorrodeError
from .inverse import write_samples_csv
from .mesh import ACCESSIBLE, INACCESSIBLE, write_mesh

COMMANDS = ("forward", "kernel", "runge", "sweep", "reconstruct", "verify")


def clean(obj):
    """JSON-ready copy: numpy scalars and arrays to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(clean(obj), indent=2, allow_nan=False) + "\n")


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        out.writerows(rows)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="configuration file")
    common.add_argument("--preset", choices=PRESETS, help="named configuration (ignored with --config)")
    common.add_argument("--out", help="output directory (default: run.out, then $CORRODE_OUT, then ./corrode_out)")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads for per-pair work")
    common.add_argument("--filter", help="verify: run only this property or group")
    parser = argparse.ArgumentParser(prog="corrode", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def resolve_config(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        # the property suite defaults to the n=16 mesh
        cfg = preset(args.preset or ("small" if args.command == "verify" else "flagship"))
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.threads < 1:
        raise ConfigurationError("--threads must be at least 1", key="threads")
    return cfg


def output_dir(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out or cfg.run.out or os.environ.get("CORRODE_OUT") or "corrode_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_forward(cfg, out: Path, args) -> int:
    from .experiments import run_forward
    res = run_forward(cfg)
    mesh = res.mesh
    write_mesh(mesh, out / "mesh.txt")
    _write_rows(out / "solution.csv", ["node", "x", "y", "u"],
                [[i, _fmt(x), _fmt(y), _fmt(u)] for i, ((x, y), u) in enumerate(zip(mesh.nodes, res.u))])
    trace_rows, flux_rows = [], []
    for tag, flux in ((ACCESSIBLE, res.flux_accessible), (INACCESSIBLE, res.flux_inaccessible)):
        part = mesh.partition(tag)
        for nd, s, fv, fw in zip(part.nodes, part.arclength, flux.values, flux.weights):
            trace_rows.append([tag.value.lower(), nd, _fmt(s), _fmt(res.u[nd])])
            flux_rows.append([tag.value.lower(), nd, _fmt(s), _fmt(fv), _fmt(fw)])
    _write_rows(out / "trace.csv", ["tag", "node", "arclength", "u"], trace_rows)
    _write_rows(out / "flux.csv", ["tag", "node", "arclength", "flux", "weight"], flux_rows)
    write_json(out / "report.json", res.report)
    return 0


def cmd_kernel(cfg, out: Path, args) -> int:
    from .experiments import run_kernel
    write_json(out / "kernel.json", run_kernel(cfg))
    return 0


def cmd_runge(cfg, out: Path, args) -> int:
    from .experiments import run_runge
    cert, report = run_runge(cfg)
    write_json(out / "runge.json", report)
    return 0


def cmd_sweep(cfg, out: Path, args) -> int:
    from .experiments import run_sweep
    mesh, sweep, report = run_sweep(cfg)
    part = mesh.partition(INACCESSIBLE)
    rows = []
    for i in np.flatnonzero(sweep.ok):
        for nd, s, u in zip(part.nodes, part.arclength, sweep.traces[i]):
            rows.append([_fmt(sweep.t_grid[i]), nd, _fmt(s), _fmt(u)])
    _write_rows(out / "sweep_traces.csv", ["t", "node", "arclength", "u"], rows)
    write_json(out / "sweep.json", report)
    return 0


def cmd_reconstruct(cfg, out: Path, args) -> int:
    from .experiments import indistinguishability, run_reconstruct
    run = run_reconstruct(cfg, args.threads)
    write_samples_csv(out / "samples.csv", run.samples)
    g = run.grid
    rows = []
    for i, (nd, s) in enumerate(zip(g.nodes, g.arclength)):
        for j, k in enumerate(g.k):
            if g.counts[i, j]:
                rows.append([nd, _fmt(s), k, _fmt(g.z0 + k * g.dz), _fmt(g.mean_z[i, j]),
                             g.counts[i, j], _fmt(g.values[i, j])])
    _write_rows(out / "grid.csv", ["node", "arclength", "bin", "z_center", "mean_z", "count", "value"], rows)
    report = run.report
    if cfg.nonlinearity.alternative:
        report = {**report, "indistinguishability": indistinguishability(cfg, args.threads)}
    write_json(out / "report.json", report)
    write_config(cfg, out / "config.ini")
    return 0


def cmd_verify(cfg, out: Path, args) -> int:
    from .verify import run_checks, select, summary_table
    if args.filter and not select(args.filter):
        raise ConfigurationError(f"no property matches {args.filter!r}", key="filter")
    results = run_checks(cfg, args.filter)
    print(summary_table(results))
    failed = [r.name for r in results if not r.passed]
    write_json(out / "verify.json", {"passed": not failed, "failed": failed,
                                     "results": [{"name": r.name, "passed": r.passed, "detail": r.detail}
                                                 for r in results]})
    if failed:
        print("failed: " + ", ".join(failed))
        return 1
    return 0


HANDLERS = {"forward": cmd_forward, "kernel": cmd_kernel, "runge": cmd_runge, "sweep": cmd_sweep,
            "reconstruct": cmd_reconstruct, "verify": cmd_verify}


def _fail(status: int, exc: Exception, out: Path | None) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigurationError):
        payload["key"] = exc.key
    text = json.dumps(payload)
    print(text)
    if out is not None:
        (out / "error.json").write_text(text + "\n")
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = None
    try:
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
        cfg = resolve_config(args)
        out = output_dir(args, cfg)
        return HANDLERS[args.command](cfg, out, args)
    except ConfigurationError as exc:
        return _fail(2, exc, out)
    except (CorrodeError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        return _fail(1, exc, out)


if __name__ == "__main__":
    sys.exit(main())
