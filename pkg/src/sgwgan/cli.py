"""``sgwgan`` command-line entry point.

Every command prints its resolved configuration first (``# key = value``
lines), then its results. Exit codes: 0 success, 1 computation failure,
2 usage or input error. ``--json`` prints one JSON object instead.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import EmbeddingSet, SeededRng, load_embeddings, pairwise_distances, split_by_label
from .errors import InvalidInput, MalformedFile, NonFiniteLoss, NumericalOverflow, SgwError
from .gw_exact import BRUTEFORCE_CAP, default_epsilon, gw_bruteforce, gw_entropic
from .gw_sliced import sample_basis, sgw_fast
from .metrics import psnr, read_image, ssim
from .trainer import PRESETS, format_config, load_config, read_report, train, write_report


class UsageError(Exception):
    pass


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text!r}")
    return v


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}") from None
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return v


def fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "inf" if v == math.inf else repr(v)
    return str(v)


def emit(out, config: dict, results: dict, as_json: bool) -> None:
    if as_json:
        def clean(x):
            if isinstance(x, float) and not math.isfinite(x):
                return fmt(x)
            if isinstance(x, dict):
                return {k: clean(v) for k, v in x.items()}
            return x

        out.write(json.dumps({"config": clean(config), "results": clean(results)}, indent=2) + "\n")
        return
    for k, v in config.items():
        out.write(f"# {k} = {fmt(v)}\n")
    for k, v in results.items():
        out.write(f"{k} = {fmt(v)}\n")


def _load(path, fmt_name):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{path}: no such file")
    return load_embeddings(p, fmt_name)


def _equalise(X: EmbeddingSet, Y: EmbeddingSet, seed: int):
    """Subsample the larger set down to the smaller size (seeded)."""
    if X.n == Y.n:
        return X, Y
    rng = SeededRng(seed)
    if X.n > Y.n:
        return X.subset(np.sort(rng.choice(X.n, Y.n))), Y
    return X, Y.subset(np.sort(rng.choice(Y.n, X.n)))


# --------------------------------------------------------------- commands


def cmd_sgw(args, out):
    X, Y = _load(args.x, args.format), _load(args.y, args.format)
    if X.d != Y.d:
        raise UsageError(f"dimension mismatch: {args.x} has d={X.d}, {args.y} has d={Y.d}")
    sub_seed = args.seed if args.subsample is None else args.subsample
    config = {
        "command": "sgw",
        "x": args.x,
        "y": args.y,
        "projections": args.projections,
        "seed": args.seed,
        "subsample_seed": sub_seed,
        "n_x": X.n,
        "n_y": Y.n,
        "d": X.d,
    }
    X, Y = _equalise(X, Y, sub_seed)
    basis = sample_basis(SeededRng(args.seed), args.projections, X.d)
    res = sgw_fast(X, Y, basis)
    per = res.per_slice_values
    results = {
        "n": X.n,
        "sgw2": res.value,
        "slice_mean": float(np.mean(per)),
        "slice_sd": float(np.std(per, ddof=1)) if per.size > 1 else 0.0,
        "basis_seed": basis.seed,
    }
    emit(out, config, results, args.json)
    return 0


def cmd_gw(args, out):
    X, Y = _load(args.x, args.format), _load(args.y, args.format)
    config = {"command": "gw", "x": args.x, "y": args.y, "n_x": X.n, "n_y": Y.n}
    if args.brute_force:
        config.update({"method": "brute-force", "cap": BRUTEFORCE_CAP})
        res = gw_bruteforce(X, Y)
    else:
        eps = args.epsilon if args.epsilon is not None else default_epsilon(pairwise_distances(X).values)
        config.update(
            {
                "method": "entropic",
                "epsilon": eps,
                "epsilon_source": "flag" if args.epsilon is not None else "default",
                "max_iter": args.max_iter,
                "tol": args.tol,
            }
        )
        res = gw_entropic(X, Y, eps, args.max_iter, args.tol)
    results = {"gw2": res.value, "iterations": res.iterations, "converged": res.converged}
    if res.bias_bound is not None:
        results["bias_bound"] = res.bias_bound
    emit(out, config, results, args.json)
    return 0


RELATIONAL_HEADER = ("label", "n_x", "n_y", "gw2", "epsilon", "status")


def cmd_eval_relational(args, out, err):
    X, Y = _load(args.x, args.format), _load(args.y, args.format)
    if X.labels is None or Y.labels is None:
        missing = args.x if X.labels is None else args.y
        raise UsageError(f"{missing}: file has no label column")
    gx, gy = split_by_label(X), split_by_label(Y)
    labels = list(gx) + [l for l in gy if l not in gx]
    config = {
        "command": "eval-relational",
        "x": args.x,
        "y": args.y,
        "epsilon": "default" if args.epsilon is None else args.epsilon,
        "cap": args.cap,
        "seed": args.seed,
    }
    from .trainer import evaluate_relational

    ev = evaluate_relational(None, X, Y, args.epsilon, args.cap, args.seed)
    rows = []
    for lab in labels:
        nx = gx[lab].n if lab in gx else 0
        ny = gy[lab].n if lab in gy else 0
        if lab in ev.per_class:
            status = "ok" if ev.converged.get(lab, True) else "not_converged"
            rows.append([lab, nx, ny, ev.per_class[lab], ev.epsilons[lab], status])
        else:
            where = "y" if lab in gx else "x"
            err.write(f"warning: label {lab!r} missing from {args.y if where == 'y' else args.x}; value omitted\n")
            rows.append([lab, nx, ny, "", "", f"missing_in_{where}"])
    overall = ev.overall if ev.per_class else math.nan
    if args.json:
        results = {
            "per_label": {r[0]: (None if r[5].startswith("missing") else r[3]) for r in rows},
            "status": {r[0]: r[5] for r in rows},
            "overall": overall,
        }
        emit(out, config, results, True)
        return 0
    for k, v in config.items():
        out.write(f"# {k} = {fmt(v)}\n")
    w = csv.writer(out, delimiter="\t", lineterminator="\n")
    w.writerow(RELATIONAL_HEADER)
    for r in rows:
        w.writerow([r[0], r[1], r[2], fmt(r[3]) if r[3] != "" else "", fmt(r[4]) if r[4] != "" else "", r[5]])
    w.writerow(["__overall__", sum(r[1] for r in rows), sum(r[2] for r in rows), fmt(overall), "", "weighted_mean"])
    return 0


def cmd_train(args, out):
    base = PRESETS[args.preset]
    if args.config is not None:
        if not Path(args.config).is_file():
            raise UsageError(f"{args.config}: config file not found")
        cfg = load_config(args.config, base)
    else:
        cfg = base
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.ablate_sgw:
        overrides["lambda_sgw"] = 0.0
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    ckpt = outdir / "checkpoint.sgwn"
    report = train(cfg, checkpoint_path=ckpt)
    write_report(report, outdir / "report.jsonl")
    if not args.no_figures:
        from .plotting import plot_losses

        plot_losses(read_report(outdir / "report.jsonl")["steps"], outdir / "losses.png")
    config = {"command": "train", "preset": args.preset, "config_file": args.config or "", "out": str(outdir)}
    config.update(cfg.to_dict())
    rel = report.final_relational
    results = {
        "steps": len(report.history),
        "initial_sgw_raw": report.initial_sgw_raw,
        "initial_sgw_generator": report.initial_sgw_generator,
        "final_sgw": report.final_sgw,
        "final_relational_overall": rel.overall,
    }
    results.update({f"final_relational[{k}]": v for k, v in rel.per_class.items()})
    results.update({"report": str(outdir / "report.jsonl"), "checkpoint": str(ckpt)})
    emit(out, config, results, args.json)
    return 0


def cmd_metrics(args, out):
    for p in (args.a, args.b):
        if not Path(p).is_file():
            raise UsageError(f"{p}: no such file")
    a, b = read_image(args.a), read_image(args.b)
    config = {"command": "metrics", "a": args.a, "b": args.b, "range": a.dynamic_range}
    results = {"psnr_db": psnr(a, b)}
    try:
        results["ssim"] = ssim(a, b)
    except InvalidInput as exc:
        if args.require_ssim:
            raise
        results["ssim"] = f"unavailable ({exc})"
    emit(out, config, results, args.json)
    return 0


PLOT_COLUMNS = ("step", "rmse", "sgw", "adv", "total")


def cmd_export_plotdata(args, out):
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    config = {"command": "export-plotdata", "out": str(outdir)}
    results = {}
    if args.report is not None:
        if not Path(args.report).is_file():
            raise UsageError(f"{args.report}: no such file")
        rep = read_report(args.report)
        path = outdir / "losses.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PLOT_COLUMNS)
            for r in rep["steps"]:
                w.writerow([r["step"], fmt(float(r["rmse_term"])), fmt(float(r["sgw_term"])), fmt(float(r["adv_term"])), fmt(float(r["total_generator"]))])
        config["report"] = args.report
        results["losses_csv"] = str(path)
        results["loss_rows"] = len(rep["steps"])
        if not args.no_figures:
            from .plotting import plot_losses

            plot_losses(rep["steps"], outdir / "losses.png")
            results["losses_png"] = str(outdir / "losses.png")
    if args.sgw_x is not None:
        X, Y = _load(args.sgw_x, None), _load(args.sgw_y, None)
        X, Y = _equalise(X, Y, args.seed)
        levels = [int(v) for v in args.levels.split(",")]
        if any(v < 1 for v in levels):
            raise UsageError("--levels must be positive integers")
        root = SeededRng(args.seed)
        path = outdir / "sgw_convergence.csv"
        means, sds = [], []
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("L", "bases", "mean", "sd"))
            for li, L in enumerate(levels):
                rng = root.spawn(li)
                vals = [sgw_fast(X, Y, sample_basis(rng, L, X.d)).value for _ in range(args.bases)]
                means.append(float(np.mean(vals)))
                sds.append(float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0)
                w.writerow((L, args.bases, fmt(means[-1]), fmt(sds[-1])))
        config.update({"sgw_x": args.sgw_x, "sgw_y": args.sgw_y, "levels": args.levels, "bases": args.bases, "seed": args.seed})
        results["convergence_csv"] = str(path)
        if not args.no_figures:
            from .plotting import plot_convergence

            plot_convergence(levels, means, sds, outdir / "sgw_convergence.png")
            results["convergence_png"] = str(outdir / "sgw_convergence.png")
    if args.report is None and args.sgw_x is None:
        raise UsageError("nothing to export: pass --report and/or --sgw-x/--sgw-y")
    emit(out, config, results, args.json)
    return 0


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sgwgan", description="Gromov-Wasserstein discrepancies and SGW-regularised adversarial training.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, formats=True):
        sp.add_argument("--json", action="store_true", help="print one JSON object instead of text")
        if formats:
            sp.add_argument("--format", choices=("csv", "raw-f64"), default=None, help="embedding file format (default: sniff)")

    s = sub.add_parser("sgw", help="sliced GW^2 between two embedding files")
    s.add_argument("x")
    s.add_argument("y")
    s.add_argument("--projections", "-L", type=_positive_int, default=256)
    s.add_argument("--seed", type=_nonneg_int, default=0)
    s.add_argument("--subsample", type=_nonneg_int, default=None, help="seed for subsampling the larger file (default: --seed)")
    common(s)

    g = sub.add_parser("gw", help="full GW^2 (entropic, or exhaustive for n <= 9)")
    g.add_argument("x")
    g.add_argument("y")
    g.add_argument("--epsilon", type=_positive_float, default=None, help="default: 1e-2 * median squared distance of x")
    g.add_argument("--max-iter", type=_positive_int, default=200)
    g.add_argument("--tol", type=_positive_float, default=1e-7)
    g.add_argument("--brute-force", action="store_true")
    common(g)

    e = sub.add_parser("eval-relational", help="per-label entropic GW^2 between two labelled files")
    e.add_argument("x", help="enhanced / generated embeddings")
    e.add_argument("y", help="reference (high-quality) embeddings")
    e.add_argument("--epsilon", type=_positive_float, default=None)
    e.add_argument("--cap", type=_positive_int, default=64, help="max points per class and side")
    e.add_argument("--seed", type=_nonneg_int, default=0)
    common(e)

    t = sub.add_parser("train", help="desk-scale adversarial training on synthetic data")
    t.add_argument("--config", default=None, help="flat key = value file overriding the preset")
    t.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    t.add_argument("--ablate-sgw", action="store_true", help="set lambda_sgw = 0")
    t.add_argument("--seed", type=_nonneg_int, default=None)
    t.add_argument("--epochs", type=_nonneg_int, default=None)
    t.add_argument("--out", default="sgwgan-run")
    t.add_argument("--no-figures", action="store_true")
    common(t, formats=False)

    m = sub.add_parser("metrics", help="PSNR and SSIM between two images (P2/P3 or raw-f64)")
    m.add_argument("a")
    m.add_argument("b")
    m.add_argument("--require-ssim", action="store_true", help="fail instead of skipping SSIM on small images")
    common(m, formats=False)

    x = sub.add_parser("export-plotdata", help="CSV series (and PNG figures) for loss curves and SGW convergence")
    x.add_argument("--report", default=None, help="report.jsonl written by train")
    x.add_argument("--sgw-x", default=None)
    x.add_argument("--sgw-y", default=None)
    x.add_argument("--levels", default="8,32,128")
    x.add_argument("--bases", type=_positive_int, default=30)
    x.add_argument("--seed", type=_nonneg_int, default=0)
    x.add_argument("--out", default="plotdata")
    x.add_argument("--no-figures", action="store_true")
    common(x, formats=False)
    return p


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "export-plotdata" and (args.sgw_x is None) != (args.sgw_y is None):
        err.write("sgwgan: error: --sgw-x and --sgw-y go together\n")
        return 2
    handlers = {
        "sgw": cmd_sgw,
        "gw": cmd_gw,
        "eval-relational": lambda a, o: cmd_eval_relational(a, o, err),
        "train": cmd_train,
        "metrics": cmd_metrics,
        "export-plotdata": cmd_export_plotdata,
    }
    try:
        return handlers[args.command](args, out)
    except (UsageError, MalformedFile, InvalidInput, OSError) as exc:
        err.write(f"sgwgan {args.command}: error: {exc}\n")
        return 2
    except (NonFiniteLoss, NumericalOverflow, SgwError) as exc:
        err.write(f"sgwgan {args.command}: failed: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
