"""Command-line interface: ``gklpca {gen,pca,spectrum,bench,regress}``.

Every run writes ``manifest.json`` (command, resolved arguments, seed and
library versions) next to its outputs. All numeric outputs are deterministic
for a fixed seed; only fields named ``wall_time_s`` vary between runs.

Exit codes: 0 success, 2 not converged (outputs are still written and
flagged), 3 unreadable or malformed input, 4 invalid usage.
"""

import argparse
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy
import scipy.linalg
import sklearn
from threadpoolctl import threadpool_limits

from . import ingest, rmt, synth
from .gkl import GklOptions, error_metric_l1, svdl
from .ingest import FormatError
from .linops import CenteredScaledOperator, MatrixOperator
from .regress import RankDeficientError, ols_fit, pc_adjusted_fit
from .subspace import subspace_iterate

__all__ = ["main", "build_parser"]

log = logging.getLogger("gklpca")

EXIT_OK = 0
EXIT_UNCONVERGED = 2
EXIT_FORMAT = 3
EXIT_USAGE = 4

BENCH_ALGOS = ("gkl-pro-nr", "gkl-fro-nr", "gkl-pro-tr", "gkl-fro-tr", "subspace-qr", "subspace-normalize")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage, which is reserved for non-convergence here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _versions():
    from . import __version__

    return {
        "gklpca": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
        "python": platform.python_version(),
    }


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _write_manifest(out, command, args, extra=None):
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command")}
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in config.items()}
    manifest = {
        "command": command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "versions": _versions(),
    }
    if extra:
        manifest.update(extra)
    _dump_json(Path(out) / "manifest.json", manifest)


def _outdir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_operator(path, scheme):
    """Read the input matrix and wrap it, standardized by rows unless ``scheme == "none"``."""
    X = ingest.read_matrix(path)
    if scheme == "none":
        return MatrixOperator(X), X
    means, scales, _ = ingest.row_scaling(X, scheme)
    return CenteredScaledOperator(X, means, scales), X


def _gkl_options(args, reorth=None, restart=None):
    return GklOptions(
        k=args.k,
        tol=args.tol,
        max_mvps=args.max_mvps,
        reorth=reorth or args.reorth,
        omega=args.omega,
        restart=restart or args.restart,
        max_subspace=args.max_subspace,
        keep=args.keep,
        seed=args.seed,
        one_sided=getattr(args, "one_sided", False),
        record_history=getattr(args, "history", False),
    )


# ---------------------------------------------------------------- gen


def cmd_gen(args):
    nsignal = None if args.nsignal == "full" else int(args.nsignal)
    params = synth.ModelParams(args.m, args.n, args.r, nsignal, args.rkins, args.seed)
    out = _outdir(args.out)
    g = synth.model(params)
    ingest.write_dense(out / "matrix.gmx", g.dosages)
    files = ["matrix.gmx"]
    if args.bed:
        ingest.write_bed(g, out / "matrix")
        files += ["matrix.bed", "matrix.bim", "matrix.fam"]
    _write_manifest(out, "gen", args, {"outputs": files, "n_signal": params.n_signal, "n_kinship": params.n_kinship})
    return EXIT_OK


# ---------------------------------------------------------------- pca


def run_pca(op, args):
    """Run the configured solver; returns ``(s, U, V, stats_dict, converged)``."""
    if args.algo == "gkl":
        res = svdl(op, _gkl_options(args))
        stats = res.stats.to_dict()
        stats.update(
            algorithm="gkl",
            error_l1=error_metric_l1(res.ritz, min(args.k, len(res.ritz))),
            err_estimates=[float(e) for e in res.ritz.err_estimates],
            converged_flags=[bool(c) for c in res.converged],
        )
        return res.s, res.U, res.V, stats, res.stats.converged
    res = subspace_iterate(op, args.k, args.variant, args.tol, args.max_iter, args.seed, not args.unscaled_delta)
    stats = res.stats_dict()
    stats.update(
        algorithm=f"subspace-{args.variant}",
        error_l1=float(np.sum(res.err_estimates)),
        err_estimates=[float(e) for e in res.err_estimates],
    )
    return res.s, res.U, res.V, stats, res.converged


def cmd_pca(args):
    op, _ = _load_operator(args.input, args.standardize)
    out = _outdir(args.out)
    s, U, V, stats, converged = run_pca(op, args)
    stats["shape"] = list(op.shape)
    ingest.write_csv(out / "singular_values.csv", s)
    ingest.write_dense(out / "U.gmx", U)
    ingest.write_dense(out / "V.gmx", V)
    _dump_json(out / "stats.json", stats)
    _write_manifest(out, "pca", args, {"outputs": ["singular_values.csv", "U.gmx", "V.gmx", "stats.json"]})
    if not converged:
        log.warning("solver did not converge; results are flagged in stats.json")
        return EXIT_UNCONVERGED
    return EXIT_OK


# ---------------------------------------------------------------- spectrum


def cmd_spectrum(args):
    out = _outdir(args.out)
    if args.singvals is not None:
        s = ingest.read_csv(args.singvals)[:, 0]
        if args.aspect is None:
            raise UsageError("--aspect is required with --singvals")
        hint = args.aspect
    else:
        if args.input is None:
            raise UsageError("one of --input or --singvals is required")
        op, X = _load_operator(args.input, args.standardize)
        A = X if args.standardize == "none" else op.to_dense()
        t0 = time.perf_counter()
        s = scipy.linalg.svd(A, compute_uv=False, lapack_driver="gesdd")
        log.info("dense SVD of %dx%d took %.2fs", *A.shape, time.perf_counter() - t0)
        hint = args.aspect if args.aspect is not None else max(A.shape) / min(A.shape)
    try:
        report = rmt.spectrum_report(s, hint, bins=args.bins, factor=args.factor, trim_quantile=args.trim_quantile)
    except ValueError as exc:
        raise UsageError(f"spectrum fit failed: {exc}") from exc

    edges, dens = report.histogram
    x = 0.5 * (edges[:-1] + edges[1:])
    model = rmt.mp_pdf_sv(x, report.fitted) * report.bulk_fraction
    hist = np.column_stack([edges[:-1], edges[1:], dens, model])
    header = "bin_lo,bin_hi,density,mp_density"
    np.savetxt(out / "histogram.csv", hist, delimiter=",", header=header, comments="", fmt="%.17g")
    np.savetxt(out / "outliers.csv", report.outliers, header="singular_value", comments="", fmt="%.17g")
    ingest.write_csv(out / "singular_values.csv", report.singvals)
    summary = report.to_dict()
    summary["aspect_hint"] = hint
    _dump_json(out / "spectrum.json", summary)
    _write_manifest(out, "spectrum", args, {"outputs": ["histogram.csv", "outliers.csv", "singular_values.csv", "spectrum.json"]})
    return EXIT_OK


# ---------------------------------------------------------------- bench


def _bench_one(op, name, args):
    kind, _, variant = name.partition("-")
    if kind == "gkl":
        reorth = {"pro": "partial", "fro": "full"}[variant[:3]]
        restart = {"nr": "none", "tr": "thick"}[variant[4:]]
        res = svdl(op, _gkl_options(args, reorth=reorth, restart=restart))
        return res.s, error_metric_l1(res.ritz, min(args.k, len(res.ritz))), res.stats.mvps, res.stats.wall_time, res.stats.converged
    res = subspace_iterate(op, args.k, variant, args.subspace_tol, args.max_iter, args.seed)
    return res.s, float(np.sum(res.err_estimates)), res.mvps, res.wall_time, res.converged


def cmd_bench(args):
    op, X = _load_operator(args.input, args.standardize)
    out = _outdir(args.out)
    algos = args.algos.split(",")
    unknown = [a for a in algos if a not in BENCH_ALGOS]
    if unknown:
        raise UsageError(f"unknown algorithm(s) {unknown}; choose from {', '.join(BENCH_ALGOS)}")

    oracle = None
    if min(op.shape) <= args.oracle_cap:
        oracle = scipy.linalg.svd(op.to_dense(), compute_uv=False)[: args.k]
    else:
        log.warning("min(m, n) = %d exceeds --oracle-cap %d; relative errors are not computed", min(op.shape), args.oracle_cap)

    rows = []
    all_converged = True
    for name in algos:
        s, err_l1, mvps, wall, conv = _bench_one(op, name, args)
        rel = None
        if oracle is not None and s.size >= args.k:
            rel = float(abs(s[args.k - 1] - oracle[-1]) / oracle[-1])
        rows.append(
            {"algorithm": name, "mvps": int(mvps), "wall_time_s": wall, "error_l1": err_l1, "rel_err": rel, "converged": bool(conv)}
        )
        all_converged &= bool(conv)

    with open(out / "bench.csv", "w") as fh:
        fh.write("algorithm,mvps,error_l1,rel_err,converged\n")
        for r in rows:
            rel = "" if r["rel_err"] is None else f"{r['rel_err']:.17g}"
            fh.write(f"{r['algorithm']},{r['mvps']},{r['error_l1']:.17g},{rel},{int(r['converged'])}\n")
    _dump_json(out / "bench.json", {"k": args.k, "shape": list(op.shape), "oracle": None if oracle is None else oracle.tolist(), "rows": rows})
    _write_manifest(out, "bench", args, {"outputs": ["bench.csv", "bench.json"]})

    print(f"{'algorithm':<20}{'mvps':>8}{'time (s)':>11}{'err_l1':>12}{'rel. err':>12}")
    for r in rows:
        rel = "n/a" if r["rel_err"] is None else f"{r['rel_err']:.2e}"
        print(f"{r['algorithm']:<20}{r['mvps']:>8}{r['wall_time_s']:>11.3f}{r['error_l1']:>12.2e}{rel:>12}")
    return EXIT_OK if all_converged else EXIT_UNCONVERGED


# ---------------------------------------------------------------- regress


def _read_vector(path):
    y = ingest.read_csv(path)
    if y.shape[1] != 1:
        raise FormatError(f"{path}: expected a single column, found {y.shape[1]}")
    return y[:, 0]


def _sample_pcs(args):
    """Top ``k`` right singular vectors (sample side) of the marker-major input."""
    op, X = _load_operator(args.genotypes, args.standardize)
    args_pca = argparse.Namespace(**vars(args))
    args_pca.algo = "gkl"
    s, U, V, stats, converged = run_pca(op, args_pca)
    return X, V, s, converged


def cmd_regress(args):
    out = _outdir(args.out)
    y = _read_vector(args.phenotype)
    converged = True
    X = None
    summary = {"k": args.k}

    if args.covariates is not None:
        Z = ingest.read_csv(args.covariates)
    elif args.k > 0:
        if args.genotypes is None:
            raise UsageError("PCs need --genotypes (or pass --covariates)")
        X, V, s, converged = _sample_pcs(args)
        Z = V
        summary["singular_values"] = [float(v) for v in s]
    else:
        Z = np.zeros((y.size, 0))
    if Z.shape[0] != y.size:
        raise UsageError(f"covariates have {Z.shape[0]} rows but the phenotype has {y.size}")

    def fit(D):
        return pc_adjusted_fit(D, Z, y) if Z.shape[1] else ols_fit(D, y)

    if args.design is not None:
        D = ingest.read_csv(args.design)
        try:
            summary["fit"] = fit(D).to_dict()
        except RankDeficientError as exc:
            summary["fit"] = {"error": str(exc), "column": exc.column}
    else:
        if X is None:
            if args.genotypes is None:
                raise UsageError("need --genotypes or --design")
            X = ingest.read_matrix(args.genotypes)
        if X.shape[1] != y.size:
            raise UsageError(f"genotypes have {X.shape[1]} samples but the phenotype has {y.size}")
        ones = np.ones(y.size)
        markers = []
        for i in range(X.shape[0]):
            try:
                res = fit(np.column_stack([ones, X[i]]))
                markers.append({"marker": i, **res.to_dict()})
            except RankDeficientError as exc:
                markers.append({"marker": i, "error": str(exc), "column": exc.column})
        summary["markers"] = markers
        summary["n_rank_deficient"] = sum("error" in mk for mk in markers)

    summary["pcs_converged"] = converged
    _dump_json(out / "regression.json", summary)
    _write_manifest(out, "regress", args, {"outputs": ["regression.json"]})
    return EXIT_OK if converged else EXIT_UNCONVERGED


# ---------------------------------------------------------------- parser


def _add_solver_flags(p):
    p.add_argument("-k", type=int, default=10, help="number of singular triplets")
    p.add_argument("--tol", type=float, default=1e-8, help="relative residual tolerance (GKL) or delta-Y tolerance (subspace)")
    p.add_argument("--reorth", choices=("partial", "full"), default="partial")
    p.add_argument("--omega", type=float, default=1e-8, help="partial reorthogonalization threshold")
    p.add_argument("--restart", choices=("none", "thick"), default="none")
    p.add_argument("--max-subspace", type=int, default=20, help="basis size that triggers a thick restart")
    p.add_argument("--keep", type=int, default=None, help="Ritz vectors kept at a thick restart")
    p.add_argument("--max-mvps", type=int, default=None)
    p.add_argument("--one-sided", action="store_true", help="reorthogonalize only the shorter side")
    p.add_argument("--max-iter", type=int, default=1000, help="subspace iteration limit")
    p.add_argument("--standardize", choices=("none", "unit_variance", "binomial"), default="none")


def build_parser():
    parser = _Parser(prog="gklpca", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None, help="BLAS threads (default: library default)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic genotype matrix")
    p.add_argument("--m", type=int, required=True, help="markers")
    p.add_argument("--n", type=int, required=True, help="samples")
    p.add_argument("--r", type=int, default=10, help="population-structure blocks")
    p.add_argument("--nsignal", default="full", help="point mutations, or 'full' for m*n")
    p.add_argument("--rkins", type=float, default=0.017, help="fraction of duplicated marker rows")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bed", action="store_true", help="also write a PLINK fileset")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("pca", help="top-k singular triplets")
    p.add_argument("input", help="GMX1, CSV or PLINK fileset")
    p.add_argument("--algo", choices=("gkl", "subspace"), default="gkl")
    p.add_argument("--variant", choices=("normalize", "qr"), default="qr")
    p.add_argument("--unscaled-delta", action="store_true", help="plain Frobenius delta-Y")
    p.add_argument("--history", action="store_true", help="record Ritz values at each check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_pca)

    p = sub.add_parser("spectrum", help="full spectrum and Marchenko-Pastur fit")
    p.add_argument("input", nargs="?", default=None)
    p.add_argument("--singvals", default=None, help="CSV of precomputed singular values")
    p.add_argument("--aspect", type=float, default=None, help="aspect-ratio hint (default max/min of the shape)")
    p.add_argument("--bins", type=int, default=30)
    p.add_argument("--factor", type=float, default=1.1, help="outlier threshold as a multiple of sigma_plus")
    p.add_argument("--trim-quantile", type=float, default=0.99)
    p.add_argument("--standardize", choices=("none", "unit_variance", "binomial"), default="none")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("bench", help="compare solvers on one input")
    p.add_argument("input")
    p.add_argument("--algos", default="gkl-pro-nr,gkl-fro-tr,subspace-qr")
    p.add_argument("--subspace-tol", type=float, default=1e-8)
    p.add_argument("--oracle-cap", type=int, default=2000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("regress", help="PC-adjusted association regression")
    p.add_argument("--genotypes", default=None, help="marker-major matrix (markers x samples)")
    p.add_argument("--phenotype", required=True, help="one-column CSV with a header row")
    p.add_argument("--design", default=None, help="CSV design matrix fitted once instead of per marker")
    p.add_argument("--covariates", default=None, help="CSV covariates used instead of computed PCs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_regress)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except FormatError as exc:
        print(f"gklpca: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        print(f"gklpca: cannot read input: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (UsageError, ValueError) as exc:
        print(f"gklpca: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
