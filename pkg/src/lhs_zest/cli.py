"""Command-line front end: sample / decompose / fit / experiment / qq.

All randomness is keyed by ``--seed``; re-running any command with the
same flags produces byte-identical data files.  Every command records a
manifest (flags, seed, version, timestamps, sha256 digests of emitted
files) next to its outputs.

Exit codes: 0 success, 1 validation error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .anova import VectorField, grand_mean, remainder_covariance
from .design import DesignMatrix, generate
from .errors import LhsZestError, NumericalError, ValidationError
from .glm import generate_dataset, get_model, make_psi, mean_problem, score_field
from .harness import (
    ExperimentConfig,
    asymptotic_oracle,
    qq_data,
    run_sweep,
)
from .rngperm import StreamKey
from .zsolve import solve


def _fmt(x: float) -> str:
    """Full double precision: 17 significant digits round-trips exactly."""
    return format(float(x), ".17g")


def _utcnow() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _write_manifest(command: str, args: argparse.Namespace, outputs, started: str):
    outputs = [Path(p) for p in outputs]
    flags = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "command": command,
        "flags": {k: (str(v) if isinstance(v, Path) else v) for k, v in flags.items()},
        "master_seed": getattr(args, "seed", None),
        "version": __version__,
        "started_utc": started,
        "finished_utc": _utcnow(),
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    if getattr(args, "outdir", None) is not None:
        target = Path(args.outdir) / "manifest.json"
    else:
        target = outputs[0].with_name(outputs[0].name + ".manifest.json")
    target.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"{text!r} is not a positive integer")
    return value


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in unsigned 64 bits")
    return value


def parse_sizes(text: str) -> tuple:
    """``start:stop:step`` (stop included when aligned) or a comma list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValidationError(f"malformed range {text!r}; expected start:stop:step")
        try:
            start, stop, step = (int(p) for p in parts)
        except ValueError:
            raise ValidationError(f"malformed range {text!r}") from None
        if step <= 0 or start <= 0 or stop < start:
            raise ValidationError(f"malformed range {text!r}")
        return tuple(range(start, stop + 1, step))
    try:
        sizes = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise ValidationError(f"malformed sizes {text!r}") from None
    if not sizes or any(s <= 0 for s in sizes):
        raise ValidationError(f"malformed sizes {text!r}")
    return sizes


def write_design_csv(path: Path, design: DesignMatrix) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{j + 1}" for j in range(design.d)])
        for row in design.points:
            writer.writerow([_fmt(v) for v in row])


def read_design_csv(path: Path, method: str = "iid", seed: int = 0) -> DesignMatrix:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    pts = np.array(rows, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != len(header):
        raise ValidationError(f"design file {path} is malformed")
    return DesignMatrix(
        points=pts,
        method=method,
        n=pts.shape[0],
        d=pts.shape[1],
        seed=StreamKey(master_seed=seed),
    )


# Built-in fields for the decompose command.
def _field_registry() -> dict:
    def product12(pts, aux):
        return (pts[:, 0] * pts[:, 1])[:, None]

    def sum12(pts, aux):
        return (pts[:, 0] + pts[:, 1])[:, None]

    fields = {
        "x1x2": VectorField(fn=product12, d=2, q=1),
        "sum-x1-x2": VectorField(fn=sum12, d=2, q=1),
    }
    model = get_model("poisson-log-d9")
    fields["poisson-score-d9"] = score_field(
        model.family(), model.theta0, model.theta0, model.d, model.theta_box
    )
    return fields


def _cmd_sample(args) -> int:
    started = _utcnow()
    key = StreamKey(master_seed=args.seed)
    design = generate(args.method, args.n, args.d, key)
    out = Path(args.out)
    write_design_csv(out, design)
    _write_manifest("sample", args, [out], started)
    return 0


def _cmd_decompose(args) -> int:
    started = _utcnow()
    fields = _field_registry()
    if args.field not in fields:
        raise ValidationError(
            f"--field must be one of {sorted(fields)}, got {args.field!r}"
        )
    fld = fields[args.field]
    key = StreamKey(master_seed=args.seed, purpose="oracle")
    if args.design_file is not None:
        design = read_design_csv(Path(args.design_file))
        if design.d != fld.d:
            raise ValidationError(
                f"design file has d={design.d}, field needs d={fld.d}"
            )
    report = remainder_covariance(
        fld, outer=args.outer, bins=args.bins, inner=args.inner, seed=key
    )
    payload = {
        "field": args.field,
        "settings": dict(report.mc_sizes, seed=args.seed),
        "G": [float(v) for v in report.G],
        "R": [[float(v) for v in row] for row in report.R],
        "full_cov": [[float(v) for v in row] for row in report.full_cov],
        "residual": [[float(v) for v in row] for row in report.residual],
        "standard_errors": [[float(v) for v in row] for row in report.standard_errors],
        "psd_tolerance": float(report.psd_tolerance),
        "min_eigenvalue": float(report.min_eigenvalue),
    }
    out = Path(args.out)
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _write_manifest("decompose", args, [out], started)
    return 0


def _fit_report_payload(report, model_name: str, seed: int) -> dict:
    payload = {
        "model": model_name,
        "seed": seed,
        "n": report.n,
        "design_method": report.design_method,
        "theta_hat": [float(v) for v in report.theta_hat],
        "iterations": report.iterations,
        "residual_norm": float(report.residual_norm),
        "converged": bool(report.converged),
        "A_hat": [[float(v) for v in row] for row in report.A_hat],
        "B_iid": [[float(v) for v in row] for row in report.B_iid],
        "sandwich_iid": [[float(v) for v in row] for row in report.sandwich_iid],
        "sandwich_lhs": None
        if report.sandwich_lhs is None
        else [[float(v) for v in row] for row in report.sandwich_lhs],
    }
    return payload


def _cmd_fit(args) -> int:
    started = _utcnow()
    model = get_model(args.model)
    theta0 = model.theta0 if args.theta0 is None else np.array(
        [float(v) for v in args.theta0.split(",")]
    )
    if theta0.shape != model.theta0.shape:
        raise ValidationError(
            f"--theta0 must have {model.theta0.shape[0]} components"
        )
    key = StreamKey(master_seed=args.seed)
    design = generate(args.method, args.n, model.d, key)
    if model.kind == "glm":
        family = model.family()
        dataset = generate_dataset(
            family, theta0, design, key, stratify_aux=args.stratify_aux
        )
        problem = make_psi(family, model.d, model.theta_box)
        channel = dataset.responses
    else:
        problem = mean_problem(model.theta_box)
        channel = np.zeros(args.n)
    extra_outputs = []
    if args.dump_data is not None:
        data_path = Path(args.dump_data)
        with open(data_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([f"x{j + 1}" for j in range(model.d)] + ["z"])
            for row, z in zip(design.points, channel):
                writer.writerow([_fmt(v) for v in row] + [_fmt(z)])
        extra_outputs.append(data_path)
    report = solve(problem, design, channel)
    if model.kind == "glm" and args.lhs_cov_budget > 0:
        fld = score_field(
            family, report.theta_hat, report.theta_hat, model.d, model.theta_box
        )
        decomposition = remainder_covariance(
            fld,
            outer=args.lhs_cov_budget,
            bins=32,
            inner=256,
            seed=key.with_fields(purpose="oracle"),
            residual_check=False,
        )
        R = decomposition.R
        # project out MC negativity before the PSD-gated sandwich
        w, V = np.linalg.eigh(0.5 * (R + R.T))
        R = (V * np.maximum(w, 0.0)) @ V.T
        report = report.with_lhs_covariance(R)
    out = Path(args.out)
    out.write_text(
        json.dumps(_fit_report_payload(report, args.model, args.seed), indent=2, sort_keys=True)
        + "\n"
    )
    _write_manifest("fit", args, [out] + extra_outputs, started)
    return 0


def _cmd_experiment(args) -> int:
    started = _utcnow()
    methods = tuple(m.strip() for m in args.methods.split(","))
    sizes = parse_sizes(args.sizes)
    config = ExperimentConfig(
        model=args.model,
        methods=methods,
        sizes=sizes,
        replications=args.reps,
        master_seed=args.seed,
        n_oracle=args.oracle_budget,
        stratify_aux=args.stratify_aux,
        threads=args.threads,
    )
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    outputs = []

    table = run_sweep(config)
    sweep_path = outdir / "sweep.csv"
    with open(sweep_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["method", "n", "param", "variance", "sq_bias", "mse", "norm_var", "failures"]
        )
        for row in table.rows:
            writer.writerow(
                [
                    row["method"],
                    row["n"],
                    row["param"],
                    _fmt(row["variance"]),
                    _fmt(row["sq_bias"]),
                    _fmt(row["mse"]),
                    _fmt(row["norm_var"]),
                    row["failures"],
                ]
            )
    outputs.append(sweep_path)

    oracle = asymptotic_oracle(args.model, args.oracle_budget, args.seed)
    oracle_path = outdir / "oracle.json"
    oracle_path.write_text(
        json.dumps(
            {
                "model": args.model,
                "n_oracle": oracle.n_oracle,
                "normalized_variances": [float(v) for v in oracle.normalized_variances],
                "covariance": [[float(v) for v in row] for row in oracle.covariance],
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    outputs.append(oracle_path)

    for n in sizes:
        method = "lhs" if "lhs" in methods else methods[0]
        qq = qq_data(
            args.model,
            n,
            config.replications,
            args.seed,
            standardization="oracle",
            method=method,
            oracle_values=oracle.normalized_variances,
            estimates=table.estimates[(method, n)],
        )
        qq_path = outdir / f"qq_{n}.csv"
        with open(qq_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["param", "p", "empirical_q", "normal_q"])
            for j in range(qq.empirical_q.shape[1]):
                for i in range(qq.empirical_q.shape[0]):
                    writer.writerow(
                        [
                            j + 1,
                            _fmt(qq.probs[i]),
                            _fmt(qq.empirical_q[i, j]),
                            _fmt(qq.normal_q[i]),
                        ]
                    )
        outputs.append(qq_path)

    _write_manifest("experiment", args, outputs, started)
    return 0


def _cmd_qq(args) -> int:
    started = _utcnow()
    qq = qq_data(
        args.model,
        args.n,
        args.reps,
        args.seed,
        standardization=args.standardization,
        method=args.method,
        stratify_aux=args.stratify_aux,
        threads=args.threads,
    )
    out = Path(args.out)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["param", "p", "empirical_q", "normal_q", "correlation"])
        for j in range(qq.empirical_q.shape[1]):
            for i in range(qq.empirical_q.shape[0]):
                writer.writerow(
                    [
                        j + 1,
                        _fmt(qq.probs[i]),
                        _fmt(qq.empirical_q[i, j]),
                        _fmt(qq.normal_q[i]),
                        _fmt(qq.correlations[j]),
                    ]
                )
    _write_manifest("qq", args, [out], started)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lhs-zest",
        description="Latin hypercube sampling and Z-estimation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="generate a design and write it as CSV")
    p.add_argument("--method", choices=("lhs", "iid"), required=True)
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--d", type=_positive_int, required=True)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("decompose", help="additive decomposition of a built-in field")
    p.add_argument("--field", required=True)
    p.add_argument("--outer", type=_positive_int, default=100_000)
    p.add_argument("--bins", type=_positive_int, default=64)
    p.add_argument("--inner", type=_positive_int, default=2048)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--design-file", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_decompose)

    p = sub.add_parser("fit", help="generate one synthetic dataset and fit it")
    p.add_argument("--model", required=True)
    p.add_argument("--method", choices=("lhs", "iid"), required=True)
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--theta0", default=None, help="comma-separated generating truth")
    p.add_argument("--stratify-aux", action="store_true")
    p.add_argument(
        "--lhs-cov-budget",
        type=int,
        default=0,
        help="MC budget for the stratified-design covariance (0 disables)",
    )
    p.add_argument("--dump-data", default=None, help="also write the dataset as x1,...,xd,z CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("experiment", help="replicated sweep with oracle and Q-Q files")
    p.add_argument("--model", required=True)
    p.add_argument("--methods", default="lhs,iid")
    p.add_argument("--sizes", required=True, help="start:stop:step or comma list")
    p.add_argument("--reps", type=_positive_int, required=True)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--oracle-budget", type=_positive_int, default=1_000_000)
    p.add_argument("--stratify-aux", action="store_true")
    p.add_argument("--threads", type=_positive_int, default=None)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("qq", help="Q-Q table of standardized estimates")
    p.add_argument("--model", required=True)
    p.add_argument("--method", choices=("lhs", "iid"), default="lhs")
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--reps", type=_positive_int, required=True)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--standardization", choices=("oracle", "empirical"), default="oracle")
    p.add_argument("--stratify-aux", action="store_true")
    p.add_argument("--threads", type=_positive_int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_qq)

    return parser


def parse_and_dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except LhsZestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(parse_and_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
