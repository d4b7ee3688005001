"""Command-line interface: ``mixrelabel {simulate,sample,relabel,diagnose,rhat,compare}``.

Every command writes into the directory given by ``--out``.  Outputs that
depend only on the inputs and seed are byte-reproducible; wall-clock
timings go to ``timings.csv`` so that they never disturb the other files.

Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .diagnostics import (density_curves, diagnose, gelman_rubin, match_to_reference,
                          posterior_summary)
from .exceptions import DataFormatError, MixRelabelError, NumericalError
from .fixtures import EXPERIMENTS, get_experiment
from .model import Dataset, MixtureSpec, Trace, flatten
from .relabel import RELABELLERS, MinimumVarianceRelabeller, make_relabeller
from .relabel.base import RelabelResult
from .sampler import SamplerConfig, run_gibbs

logger = logging.getLogger("mixrelabel")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
METHODS = tuple(RELABELLERS)

DATA_FILE = "data.csv"
TRACE_FILE = "trace.csv"


class UsageError(Exception):
    """Invalid combination of command-line arguments."""


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def coordinate_names(K: int, d: int) -> list:
    """Names of the flattened parameter coordinates in flatten order."""
    rows, cols = np.tril_indices(d)
    names = []
    for k in range(1, K + 1):
        names.append(f"w_{k}")
        names += [f"mu_{k}_{a + 1}" for a in range(d)]
        names += [f"sigma_{k}_{a + 1}_{b + 1}" for a, b in zip(rows, cols)]
    return names


def _dims(text: Optional[str]):
    if text is None:
        return None
    try:
        dims = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--dims must be three comma-separated integers, got {text!r}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise UsageError(f"--dims must be three positive integers, got {text!r}")
    return dims


def _methods(selector: str) -> list:
    if selector == "all":
        return list(METHODS)
    names = [s.strip() for s in selector.split(",") if s.strip()]
    unknown = [s for s in names if s not in RELABELLERS]
    if unknown or not names:
        raise UsageError(f"unknown method(s) {unknown or selector!r}; "
                         f"choose from {', '.join(METHODS)} or all")
    return names


def _make_dataset(args) -> Dataset:
    if getattr(args, "data", None):
        return io.read_dataset(args.data)
    if args.experiment is None or args.experiment == "custom":
        raise UsageError("give --data or a built-in --experiment "
                         f"({', '.join(EXPERIMENTS)})")
    exp = get_experiment(args.experiment)
    n = getattr(args, "n", None)
    if n is not None and n < 1:
        raise UsageError(f"--n must be a positive integer, got {n}")
    kwargs = {}
    if exp.name == "spatial":
        kwargs["dims"] = _dims(getattr(args, "dims", None))
    elif exp.name != "galaxy":
        kwargs["n"] = n
    return exp.dataset(seed=args.seed, **kwargs)


def _sampler_config(args, data: Dataset, seed: int) -> SamplerConfig:
    exp = EXPERIMENTS.get(args.experiment or "")
    if args.K is not None and args.K < 1:
        raise UsageError(f"--K must be a positive integer, got {args.K}")
    K = args.K or (exp.K if exp else data.K_true)
    if K is None:
        raise UsageError("--K is required for a dataset without a known number of components")
    iters = args.iters or (exp.iterations if exp else 10000)
    burn = args.burnin if args.burnin is not None else (exp.burn_in if exp else iters // 5)
    kappa, dims = None, None
    if "lattice_dims" in data.meta:
        dims = tuple(int(v) for v in str(data.meta["lattice_dims"]).split(","))
        kappa = args.kappa if args.kappa is not None else float(data.meta.get("kappa", 0.3))
    inject = args.switch_injection or bool(exp and exp.switch_injection)
    return SamplerConfig(iters, burn, seed, K, inject, kappa, dims)


def _sample(args, data: Dataset, seed: int) -> Trace:
    cfg = _sampler_config(args, data, seed)
    if data.true_spec is not None and data.true_spec.d != data.d:
        raise DataFormatError("dataset truth and points disagree on dimension")
    return run_gibbs(data, cfg)


def _write_timings(out: Path, rows) -> None:
    io.write_table(out / "timings.csv", ["method", "seconds"],
                   [(m, float(s)) for m, s in rows])


def _relabel(trace: Trace, data: Optional[Dataset], methods, m: int, direction: str,
             out: Path) -> dict:
    results = {}
    for name in methods:
        logger.info("relabelling with %s", name)
        rel = make_relabeller(name, m=m, marin_direction=direction)
        res = rel.result(trace, data=data)
        results[name] = res
        io.write_trace(out / f"relabelled_{name}.csv", res.relabelled,
                       {"relabel_method": name, "relabel_m": m,
                        "excluded_count": len(res.excluded)})
        io.write_permutation_log(out / f"permutations_{name}.csv", trace.iters, res.permutations)
        if name == "fs":
            io.write_table(out / "excluded_fs.csv", ["iter"],
                           [(int(trace.iters[j]),) for j in res.excluded])
    _write_timings(out, [(k, r.wall_time) for k, r in results.items()])
    return results


def _map_spec(trace: Trace) -> MixtureSpec:
    if trace.log_posterior is None:
        raise DataFormatError("MAP reference density needs a log_post column")
    return trace.spec(int(np.argmax(trace.log_posterior)))


def _fmt_row(values):
    return [("NA" if isinstance(v, float) and not np.isfinite(v) else v) for v in values]


def _diagnose(results: dict, data: Optional[Dataset], out: Path,
              reference: Optional[MixtureSpec], reference_label: str) -> list:
    """Write every report file; returns the DiagnosticsReports."""
    reports, empty = [], []
    for name, res in results.items():
        if len(res.relabelled) == 0:
            logger.warning("%s retained no draws; its metrics are reported as NA", name)
            empty.append(name)
            continue
        data_for_mis = data if data is not None and data.true_allocation is not None else None
        rep = diagnose(res, data_for_mis, reference=reference)
        reports.append(rep)
        if rep.misclassification is not None:
            mis = rep.misclassification
            K = mis.matrix.shape[1]
            header = ["true_component"] + [f"inferred_{int(c) + 1}" for c in mis.label_map[:K]]
            io.write_table(out / f"misclassification_{name}.csv", header,
                           [[i + 1, *map(int, row)] for i, row in enumerate(mis.matrix)])
    summary_rows = {r.method: _fmt_row([r.method, r.kl, r.misclassification_rate,
                                        r.total_variance, r.excluded_fraction])
                    + [reference_label] for r in reports}
    summary_rows.update({name: [name, "NA", "NA", "NA", 1.0, reference_label] for name in empty})
    io.write_table(out / "summary.csv",
                   ["method", "kl", "misclassification_rate", "total_variance",
                    "excluded_fraction", "kl_reference"],
                   [summary_rows[name] for name in results])
    # parameter estimates: one row per method and coordinate
    rows = []
    truth = data.true_spec if data is not None else None
    for r in reports:
        s = r.summary
        names = coordinate_names(s.K, s.d)
        matched = np.full(s.mean.size, np.nan)
        if truth is not None and (truth.K, truth.d) == (s.K, s.d):
            # report each inferred component next to the true component it matches
            nu = match_to_reference(s.mean_spec(), truth)
            matched = flatten(truth).reshape(s.K, -1)[np.argsort(nu)].reshape(-1)
        for i, nm in enumerate(names):
            rows.append(_fmt_row([r.method, nm, float(s.mean[i]), float(np.sqrt(s.var[i])),
                                  float(matched[i])]))
    io.write_table(out / "estimates.csv",
                   ["method", "coordinate", "mean", "sd", "matched_true"], rows)
    # density curves (univariate only)
    if reports and reports[0].summary.d == 1:
        specs = {}
        if reference is not None:
            specs[reference_label] = reference
        for r in reports:
            specs[r.method] = r.summary.mean_spec()
        allm = np.concatenate([s.means[:, 0] for s in specs.values()])
        sd = np.sqrt(max(float(s.covs.max()) for s in specs.values()))
        x = np.linspace(allm.min() - 5 * sd, allm.max() + 5 * sd, 2001)
        curves = density_curves(specs, x)
        header = ["x"] + list(curves)
        table = np.column_stack([x] + [curves[k] for k in curves])
        io.write_table(out / "density_curves.csv", header, [list(map(float, row)) for row in table])
    _write_report(out / "report.txt", reports, reference_label, empty)
    return reports


def _write_report(path: Path, reports, reference_label: str, empty=()) -> None:
    lines = [f"KL reference density: {reference_label}", "",
             f"{'method':<14}{'KL':>12}{'misclass':>12}{'total var':>14}{'excluded':>10}"]
    for r in reports:
        lines.append(f"{r.method:<14}{r.kl:>12.4g}{r.misclassification_rate:>12.4g}"
                     f"{r.total_variance:>14.4g}{r.excluded_fraction:>10.3g}")
    for name in empty:
        lines.append(f"{name:<14}{'NA':>12}{'NA':>12}{'NA':>14}{1.0:>10.3g}")
    for r in reports:
        if r.misclassification is not None:
            lines += ["", f"misclassification matrix ({r.method}; rows = true components):"]
            lines += ["  " + " ".join(f"{v:6d}" for v in row) for row in r.misclassification.matrix]
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise DataFormatError(f"cannot write {path}: {exc.strerror}") from exc


def _reference_for(data: Optional[Dataset], trace: Optional[Trace], experiment):
    """True mixture when known; otherwise (e.g. galaxy data) the MAP draw's mixture."""
    if experiment != "galaxy" and data is not None and data.true_spec is not None:
        return data.true_spec, "truth"
    if trace is not None and trace.log_posterior is not None:
        return _map_spec(trace), "map"
    return None, "none"


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    out = io.ensure_dir(args.out)
    data = _make_dataset(args)
    io.write_dataset(out / DATA_FILE, data)
    logger.info("wrote %d observations to %s", data.n, out / DATA_FILE)
    return EXIT_OK


def cmd_sample(args) -> int:
    out = io.ensure_dir(args.out)
    data = _make_dataset(args)
    if args.K is not None and args.K < 1:
        raise UsageError(f"--K must be a positive integer, got {args.K}")
    if args.K is not None and data.true_spec is not None and args.K != data.true_spec.K:
        raise DataFormatError(f"--K {args.K} disagrees with the dataset's generating mixture "
                              f"(K={data.true_spec.K})")
    trace = _sample(args, data, args.seed)
    io.write_trace(out / TRACE_FILE, trace)
    logger.info("wrote %d draws to %s", len(trace), out / TRACE_FILE)
    return EXIT_OK


def _load_trace_and_data(args):
    if not args.trace:
        raise UsageError("--trace is required")
    trace = io.read_trace(args.trace)
    data = io.read_dataset(args.data) if args.data else None
    if data is not None:
        if data.d != trace.d:
            raise DataFormatError(f"dataset has d={data.d} but trace has d={trace.d}")
        if trace.n is not None and trace.n != data.n:
            raise DataFormatError(f"dataset has n={data.n} but trace allocations have n={trace.n}")
    return trace, data


def cmd_relabel(args) -> int:
    out = io.ensure_dir(args.out)
    methods = _methods(args.method)
    trace, data = _load_trace_and_data(args)
    _relabel(trace, data, methods, args.m, args.marin_direction, out)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    out = io.ensure_dir(args.out)
    methods = _methods(args.method)
    src = Path(args.relabelled or args.out)
    data = io.read_dataset(args.data) if args.data else None
    trace = io.read_trace(args.trace) if args.trace else None
    results = {}
    for name in methods:
        path = src / f"relabelled_{name}.csv"
        relabelled = io.read_trace(path)
        _, perms = io.read_permutation_log(src / f"permutations_{name}.csv")
        excluded = int(relabelled.meta.get("excluded_count", 0))
        results[name] = RelabelResult(name, perms, relabelled, list(range(excluded)))
    experiment = args.experiment or (data.dataset_id if data is not None else None)
    if trace is None and experiment == "galaxy":
        # the MAP parameter set is label-invariant, so any relabelled trace serves
        trace = next(iter(results.values())).relabelled
    reference, label = _reference_for(data, trace, experiment)
    _diagnose(results, data, out, reference, label)
    return EXIT_OK


def cmd_compare(args) -> int:
    out = io.ensure_dir(args.out)
    methods = _methods(args.method)
    data = _make_dataset(args)
    io.write_dataset(out / DATA_FILE, data)
    trace = _sample(args, data, args.seed)
    io.write_trace(out / TRACE_FILE, trace)
    results = _relabel(trace, data, methods, args.m, args.marin_direction, out)
    reference, label = _reference_for(data, trace, args.experiment or data.dataset_id)
    _diagnose(results, data, out, reference, label)
    return EXIT_OK


def _divergent_dataset(data: Dataset, j: int) -> Dataset:
    """Chain ``j``'s data moved ``2 j`` data ranges away, so chains cannot agree."""
    span = float(np.ptp(data.points, axis=0).max()) or 1.0
    shift = 2.0 * span * j
    spec = data.true_spec
    if spec is None:
        raise DataFormatError("--divergent needs a dataset with a known generating mixture")
    shifted = MixtureSpec(spec.weights, spec.means + shift, spec.covs)
    return Dataset(data.points + shift, data.true_allocation, shifted,
                   f"{data.dataset_id}+{shift:g}", dict(data.meta))


def cmd_rhat(args) -> int:
    if args.chains < 2:
        raise UsageError(f"--chains must be at least 2, got {args.chains}")
    out = io.ensure_dir(args.out)
    data = _make_dataset(args)
    chains = []
    reference_mean = None
    for j in range(args.chains):
        chain_data = _divergent_dataset(data, j) if args.divergent else data
        trace = _sample(args, chain_data, args.seed + j)
        rel = MinimumVarianceRelabeller(m=args.m, reference_mean=reference_mean)
        res = rel.result(trace)
        if reference_mean is None:
            reference_mean = res.relabelled.flat().mean(axis=0)
        chains.append(res)
        logger.info("chain %d relabelled (total variance %.4g)", j,
                    posterior_summary(res).total_variance)
    rep = gelman_rubin(chains)
    names = coordinate_names(chains[0].relabelled.K, chains[0].relabelled.d)
    io.write_table(out / "rhat.csv", ["coordinate", "W", "B", "var_hat", "rhat"],
                   [_fmt_row([names[i], float(rep.W[i]), float(rep.B[i]),
                              float(rep.var_hat[i]), float(rep.rhat[i])])
                    for i in range(len(names))])
    print(f"max R-hat over {len(names)} coordinates, {rep.n_chains} chains of "
          f"{rep.chain_length} draws: {rep.max_rhat:.4f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixrelabel",
        description="Simulate mixtures, run Gibbs samplers, undo label switching and "
                    "compare relabelling algorithms.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log one line per stage")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, sampler=False, relabel=False):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        if data:
            p.add_argument("--experiment", choices=list(EXPERIMENTS) + ["custom"])
            p.add_argument("--data", help="dataset CSV (overrides --experiment simulation)")
            p.add_argument("--n", type=int, help="number of observations to simulate")
            p.add_argument("--dims", help="lattice dimensions for spatial data, e.g. 10,10,4")
        if sampler:
            p.add_argument("--K", type=int, help="number of mixture components")
            p.add_argument("--iters", type=int, help="total Gibbs iterations")
            p.add_argument("--burnin", type=int, help="discarded initial iterations")
            p.add_argument("--kappa", type=float, help="Potts interaction for spatial data")
            p.add_argument("--switch-injection", action="store_true",
                           help="randomly permute every retained draw")
        if relabel:
            p.add_argument("--method", default="all",
                           help=f"one of {', '.join(METHODS)}, a comma list, or all")
            p.add_argument("--m", type=int, default=100, help="reference window size")
            p.add_argument("--marin-direction", choices=["max", "min"], default="max")

    p = sub.add_parser("simulate", help="write a dataset CSV")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sample", help="run the Gibbs sampler and write a trace")
    common(p, sampler=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("relabel", help="relabel a trace with one or more methods")
    common(p, data=False, relabel=True)
    p.add_argument("--trace", help="trace CSV written by 'sample'")
    p.add_argument("--data", help="dataset CSV, used to derive allocations when absent")
    p.set_defaults(func=cmd_relabel)

    p = sub.add_parser("diagnose", help="summarise relabelled traces")
    common(p, data=False, relabel=True)
    p.add_argument("--relabelled", help="directory of relabelled traces (default: --out)")
    p.add_argument("--data", help="dataset CSV with truth")
    p.add_argument("--trace", help="original trace (for the MAP reference density)")
    p.add_argument("--experiment", choices=list(EXPERIMENTS) + ["custom"])
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("rhat", help="Gelman-Rubin statistics over minvar-relabelled chains")
    common(p, sampler=True, relabel=True)
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--divergent", action="store_true",
                   help="shift chain j's data by 2*j data ranges to produce non-converging chains")
    p.set_defaults(func=cmd_rhat)

    p = sub.add_parser("compare", help="simulate, sample, relabel and diagnose in one go")
    common(p, sampler=True, relabel=True)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mixrelabel {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"mixrelabel {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataFormatError, MixRelabelError) as exc:
        print(f"mixrelabel {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except np.linalg.LinAlgError as exc:
        print(f"mixrelabel {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
