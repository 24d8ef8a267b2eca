"""Command-line interface.

Subcommands: forward, acquire, reconstruct2d, reconstruct3d, sweep,
verify.  Exit codes: 0 success, 1 identity/assertion failure, 2
configuration error, 3 numerical failure.  POWERDENSE_THREADS caps
worker threads; POWERDENSE_KERNELS selects the kernel backend.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .acquisition import load_power_density
from .errors import ConfigError, IdentityFailure, PowerDenseError
from .experiments import (
    ExperimentConfig,
    Report,
    noise_sweep,
    pipeline_acquire,
    pipeline_forward,
    run_pipeline,
    verify_identities,
)
from .fields import ScalarField, write_field
from .forward import Illumination
from .recon2d import reconstruct_2d
from .recon3d import covering_from_data, global_reconstruct_3d, load_covering

__all__ = ["main", "build_parser"]


def _floats(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse '{text}' as comma-separated numbers") from exc


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_ini(args.config)
    if getattr(args, "out", None):
        cfg.out = args.out
    return cfg


def _outdir(args, cfg=None):
    out = getattr(args, "out", None) or (cfg.out if cfg is not None else None)
    return Path(out) if out else None


def _cmd_forward(args) -> int:
    cfg = _load_config(args)
    pipeline_forward(cfg, outdir=_outdir(args, cfg))
    return 0


def _cmd_acquire(args) -> int:
    cfg = _load_config(args)
    pipeline_acquire(cfg, outdir=_outdir(args, cfg), seed_override=args.seed)
    return 0


def _cmd_run(args) -> int:
    cfg = _load_config(args)
    run_pipeline(cfg, outdir=_outdir(args, cfg))
    return 0


def _cmd_reconstruct2d(args) -> int:
    data, _manifest = load_power_density(args.data)
    if data.grid.dim != 2:
        raise ConfigError("reconstruct2d: data is not 2-dimensional")
    x0 = _floats(args.anchor_x0)
    if len(x0) != 2:
        raise ConfigError("--anchor-x0 needs exactly two coordinates x,y")
    ill_path = (
        Path(args.illumination)
        if args.illumination
        else Path(args.data).parent / "g1.csv"
    )
    if not ill_path.exists():
        raise ConfigError(
            f"reconstruct2d: illumination file '{ill_path}' not found; "
            "pass --illumination or keep g1.csv beside the data manifest"
        )
    g1 = Illumination.load_csv(ill_path, data.grid, name="g1")
    rec = reconstruct_2d(data, g1, np.asarray(x0), args.log_sigma0, c0=args.c0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_field(out / "log_sigma.field", rec.log_sigma)
    write_field(out / "theta.field", rec.theta)
    write_field(out / "half_log_grad.field", rec.half_log_grad)
    report = Report()
    report.add(row="reconstruct2d", **rec.diagnostics)
    report.manifest = {
        "grid_hash": data.grid.hash_str(),
        "anchor_x0": list(x0),
        "log_sigma0": args.log_sigma0,
        "c0": args.c0,
    }
    report.write(out)
    return 0


def _parse_anchor3d(text: str):
    parts = text.split(",")
    if len(parts) < 5:
        raise ConfigError(
            "--anchor needs x1,x2,x3,logsigma0,R0-file (frame file of 9 numbers)"
        )
    try:
        x0 = [float(p) for p in parts[:3]]
        ls0 = float(parts[3])
    except ValueError as exc:
        raise ConfigError(f"--anchor: bad numbers in '{text}'") from exc
    frame_file = ",".join(parts[4:])
    raw = np.loadtxt(frame_file, dtype=float).ravel()
    if raw.size != 9:
        raise ConfigError(f"--anchor: frame file '{frame_file}' must hold 9 numbers")
    return np.asarray(x0), ls0, raw.reshape(3, 3)


def _cmd_reconstruct3d(args) -> int:
    data, _manifest = load_power_density(args.data)
    if data.grid.dim != 3:
        raise ConfigError("reconstruct3d: data is not 3-dimensional")
    x0, ls0, frame = _parse_anchor3d(args.anchor)
    if args.covering == "auto":
        covering = covering_from_data(data)
    else:
        covering = load_covering(args.covering)
    rec = global_reconstruct_3d(
        data,
        covering,
        x0,
        ls0,
        frame,
        c0=args.c0,
        waypoint_fraction=args.waypoint_fraction,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    filled = np.where(rec.mask, rec.log_sigma_values, ls0)
    write_field(
        out / "log_sigma.field", ScalarField(data.grid, filled, name="log_sigma")
    )
    per = rec.per_node
    with open(out / "recon3d_nodes.csv", "w", encoding="ascii") as fh:
        fh.write("chain_length,max_drift,max_projection,min_log_det_sqrt\n")
        k = per["chain_length"].ravel()
        dr = per["max_drift"].ravel()
        pr = per["max_projection"].ravel()
        ld = per["min_log_det_sqrt"].ravel()
        for i in range(len(k)):
            fh.write(f"{int(k[i])},{dr[i]!r},{pr[i]!r},{ld[i]!r}\n")
    report = Report()
    report.add(row="reconstruct3d", **rec.diagnostics)
    report.manifest = {
        "grid_hash": data.grid.hash_str(),
        "anchor_x0": [float(v) for v in x0],
        "log_sigma0": ls0,
        "c0": args.c0,
        "num_slabs": len(covering.slabs),
    }
    report.write(out)
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_config(args)
    amplitudes = _floats(args.amplitudes)
    noise_sweep(cfg, amplitudes, outdir=_outdir(args, cfg))
    return 0


def _cmd_verify(args) -> int:
    cfg = _load_config(args)
    if args.corrupt:
        cfg.corrupt = True
    verify_identities(cfg, outdir=_outdir(args, cfg))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="powerdense",
        description="Conductivity reconstruction from interior power densities.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("forward", help="solve the configured Dirichlet problems")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_forward)

    p = sub.add_parser("acquire", help="forward solves plus power-density data")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None, help="pin the noise seed")
    p.set_defaults(func=_cmd_acquire)

    p = sub.add_parser("run", help="full pipeline with truth comparison")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("reconstruct2d", help="2D reconstruction from a data manifest")
    p.add_argument("--data", required=True, help="path to data.json")
    p.add_argument("--anchor-x0", required=True, help="x,y inside the domain")
    p.add_argument("--log-sigma0", type=float, required=True)
    p.add_argument("--c0", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--illumination",
        default=None,
        help="boundary CSV for g1 (default: g1.csv beside the manifest)",
    )
    p.set_defaults(func=_cmd_reconstruct2d)

    p = sub.add_parser("reconstruct3d", help="3D reconstruction from a data manifest")
    p.add_argument("--data", required=True, help="path to data.json")
    p.add_argument(
        "--covering", default="auto", help="covering file, or 'auto' (CGO data)"
    )
    p.add_argument(
        "--anchor",
        required=True,
        help="x1,x2,x3,logsigma0,R0-file (9-number frame file)",
    )
    p.add_argument("--c0", type=float, default=0.0)
    p.add_argument("--waypoint-fraction", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_reconstruct3d)

    p = sub.add_parser("sweep", help="noise-amplitude stability sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--amplitudes", default="1e-4,1e-3,1e-2")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("verify", help="identity verification suite")
    p.add_argument("--config", required=True)
    p.add_argument("--corrupt", action="store_true", help="negative control")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        if code in (None, 0):
            return 0
        return 2  # argparse usage errors are configuration errors
    try:
        return int(args.func(args) or 0)
    except IdentityFailure as exc:
        print(f"powerdense identity failure: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        stage = getattr(exc, "stage", None)
        where = f" [stage {stage}]" if stage else ""
        print(f"powerdense config error{where}: {exc}", file=sys.stderr)
        return 2
    except PowerDenseError as exc:
        stage = getattr(exc, "stage", None)
        where = f" [stage {stage}]" if stage else ""
        print(
            f"powerdense {type(exc).__name__}{where}: {exc}", file=sys.stderr
        )
        return 3


if __name__ == "__main__":
    sys.exit(main())
