"""Command-line entry point.

Every command writes its outputs plus ``config.json`` (the fully resolved
options, seed included) into ``--out``.  Passing that file back through
``--config`` reproduces the run.  Exit codes: 0 success, 2 input/data error,
3 estimation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import ingest
from ._variance import VarianceSpec
from .bandwidth import BandwidthSpec
from .bootstrap import BootstrapPlan, run_bootstrap
from .core import Sample
from .errors import DataError, EstimationError
from .pipeline import GeConfig, run_ge
from .plots import binned_plot_data, treatment_fraction_histogram, write_histogram_csv
from .rdd import EstimationRequest, estimate
from .sweeps import balance_table, best_threshold, sweep_bandwidth, sweep_threshold, write_sweep

log = logging.getLogger("rdge")

EXIT_OK, EXIT_DATA, EXIT_ESTIMATION = 0, 2, 3


def _grid(text: str | None):
    """``start:stop:step`` (inclusive) or a comma list."""
    if text is None:
        return None
    if ":" in text:
        a, b, s = (float(v) for v in text.split(":"))
        return np.round(np.arange(a, b + s / 2, s), 10)
    return np.array([float(v) for v in text.split(",") if v.strip()])


def _add_estimation_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("estimation")
    g.add_argument("--data", help="CSV file with one row per observation")
    g.add_argument("--running", default="literacy", help="running-variable column")
    g.add_argument("--outcome", default="y", help="outcome column")
    g.add_argument("--exposure", default=None, help="treatment column (fuzzy design)")
    g.add_argument("--cluster", default=None, help="cluster column")
    g.add_argument("--weight", default=None, help="sampling-weight column")
    g.add_argument("--cutoff", type=float, default=ingest.DEFAULT_THRESHOLD)
    g.add_argument("--p", type=int, default=1, help="local polynomial order")
    g.add_argument("--kernel", default="triangular")
    g.add_argument("--vce", default="nn", help="hc0, hc1, hc2, hc3, nn or cluster")
    g.add_argument("--h", type=float, default=None, help="manual estimation bandwidth")
    g.add_argument("--b", type=float, default=None, help="manual bias bandwidth")
    g.add_argument("--rho", type=float, default=None, help="stored h/b ratio for manual h")
    g.add_argument("--donut", type=float, default=0.0, help="donut radius in running-variable units")
    g.add_argument("--weighted", action="store_true", help="use sampling weights in the fits")
    g.add_argument("--treated-above", action="store_true",
                   help="report right minus left instead of left minus right")
    g.add_argument("--no-cluster-correction", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdge", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--out", default="rdge_out", help="output directory")
    parser.add_argument("--config", default=None, help="JSON file of option defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="link districts and build the person sample")
    p.add_argument("--districts", required=False)
    p.add_argument("--lineage", required=False)
    p.add_argument("--persons", required=False)
    p.add_argument("--threshold", type=float, default=ingest.DEFAULT_THRESHOLD)
    p.add_argument("--sd-threshold", type=float, default=ingest.SD_THRESHOLD)
    p.add_argument("--de-minimis", type=float, default=ingest.DE_MINIMIS)
    p.add_argument("--no-trim", action="store_true", help="keep survey weights untrimmed")

    p = sub.add_parser("estimate", help="sharp or fuzzy RDD estimate")
    _add_estimation_options(p)

    p = sub.add_parser("sweep-threshold", help="estimate at a grid of cutoffs")
    _add_estimation_options(p)
    p.add_argument("--grid", default="0.30:0.50:0.005")

    p = sub.add_parser("sweep-bandwidth", help="estimate at a grid of bandwidths")
    _add_estimation_options(p)
    p.add_argument("--grid", default="0.02:0.20:0.01")

    p = sub.add_parser("balance", help="covariate balance p-values")
    p.add_argument("--data")
    p.add_argument("--running", default="literacy")
    p.add_argument("--covariates", default="", help="comma-separated covariate columns")
    p.add_argument("--thresholds", default="0.3929,0.40,0.41")

    p = sub.add_parser("plot", help="binned plot data and treatment histogram")
    _add_estimation_options(p)
    p.add_argument("--rule", default="mse_evenly_spaced",
                   choices=["mse_evenly_spaced", "variance_mimicking", "manual"])
    p.add_argument("--bins", default=None, help="J_left,J_right for the manual rule")
    p.add_argument("--poly-order", type=int, default=4)
    p.add_argument("--hist-width", type=float, default=0.01)
    p.add_argument("--hist-treatment", default=None, help="treatment column for the histogram")

    p = sub.add_parser("ge", help="general-equilibrium premia and elasticities")
    p.add_argument("--data", help="person sample CSV as written by the ingest command")
    p.add_argument("--cutoff", type=float, default=ingest.DEFAULT_THRESHOLD)
    p.add_argument("--method", default="both", choices=["decomposition", "revised", "both"])
    p.add_argument("--replications", type=int, default=1500)
    p.add_argument("--kernel", default="triangular")
    p.add_argument("--vce", default="cluster")
    p.add_argument("--weighted", action="store_true")
    p.add_argument("--log-theta-ratio", type=float, default=0.0)

    p = sub.add_parser("bootstrap", help="bootstrap an RDD estimate")
    _add_estimation_options(p)
    p.add_argument("--replications", type=int, default=1500)
    p.add_argument("--by-cluster", action="store_true")
    return parser


# ---------------------------------------------------------------------------


def _read_frame(path) -> pd.DataFrame:
    if path is None:
        raise DataError("--data is required")
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    try:
        return pd.read_csv(path)
    except (pd.errors.ParserError, UnicodeDecodeError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def _require(df: pd.DataFrame, *cols):
    missing = [c for c in cols if c and c not in df.columns]
    if missing:
        raise DataError(f"missing columns: {missing}")


def _sample(args, df: pd.DataFrame, cutoff: float | None = None) -> Sample:
    _require(df, args.running, args.outcome, args.exposure, args.cluster, args.weight)
    return Sample.from_frame(df, args.running, args.outcome, t=args.exposure, cluster=args.cluster,
                             weight=args.weight, cutoff=args.cutoff if cutoff is None else cutoff)


def _request(args) -> EstimationRequest:
    if args.h is not None and args.b is not None:
        bw = BandwidthSpec(mode="manual_both", h=args.h, b=args.b, p=args.p, kernel=args.kernel)
    elif args.h is not None:
        bw = BandwidthSpec(mode="manual", h=args.h, rho=args.rho, p=args.p, kernel=args.kernel)
    else:
        bw = BandwidthSpec(p=args.p, kernel=args.kernel)
    vs = VarianceSpec(args.vce, small_cluster_correction=not args.no_cluster_correction)
    return EstimationRequest(outcome=args.outcome, exposure=args.exposure, cutoff=args.cutoff,
                             bandwidth=bw, variance=vs, donut_radius=args.donut,
                             weighted=args.weighted, treated_below=not args.treated_above)


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, default=_jsonable), encoding="utf-8")


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _row(r) -> str:
    lo, hi = r.ci_robust
    return (f"{r.kind:<8} tau={r.tau_conventional:.6g} tau_bc={r.tau_bias_corrected:.6g} "
            f"se_rb={r.se_robust:.4g} ci=[{lo:.4g}, {hi:.4g}] p={r.p_value_robust:.4g} "
            f"h={r.bandwidths.h:.4g} b={r.bandwidths.b:.4g} N={r.n_left}+{r.n_right}")


def cmd_ingest(args, out: Path) -> int:
    if not (args.districts and args.lineage and args.persons):
        raise DataError("ingest needs --districts, --lineage and --persons")
    records = ingest.read_districts(args.districts)
    edges = ingest.read_lineage(args.lineage)
    persons = ingest.read_persons(args.persons)
    links = ingest.link_districts(records, edges, args.sd_threshold, args.de_minimis)
    frame, rep = ingest.build_person_sample(persons, links, args.threshold)
    if not args.no_trim and len(frame):
        frame["weight"] = ingest.trim_weights(frame["weight"].to_numpy(float))
    frame.to_csv(out / "sample.csv", index=False)
    ingest.district_frame(records, links, args.threshold).to_csv(out / "districts_linked.csv", index=False)
    rep.to_json(out / "exclusions.json")
    print(f"{rep.output_rows} of {rep.input_rows} person rows kept; excluded {rep.excluded}")
    return EXIT_OK


def cmd_estimate(args, out: Path) -> int:
    df = _read_frame(args.data)
    r = estimate(_sample(args, df), _request(args))
    _dump(out / "result.json", r.to_dict())
    (out / "result.txt").write_text(_row(r) + "\n", encoding="utf-8")
    print(_row(r))
    for note in r.notes:
        print("note:", note)
    return EXIT_OK


def cmd_sweep_threshold(args, out: Path) -> int:
    df = _read_frame(args.data)
    rows = sweep_threshold(_sample(args, df), _request(args), _grid(args.grid), args.workers)
    write_sweep(rows, out / "sweep_threshold.csv", out / "sweep_threshold_plot.csv")
    print(f"max robust |t| at cutoff {best_threshold(rows):g}; "
          f"{sum(r.result is None for r in rows)} grid points failed")
    return EXIT_OK


def cmd_sweep_bandwidth(args, out: Path) -> int:
    df = _read_frame(args.data)
    req = _request(args)
    rows, ref = sweep_bandwidth(_sample(args, df), req, _grid(args.grid), args.workers)
    write_sweep(rows, out / "sweep_bandwidth.csv", out / "sweep_bandwidth_plot.csv")
    print(f"automatic h={ref.h:.4g}, b={ref.b:.4g}, rho={ref.rho:.4g}")
    return EXIT_OK


def cmd_balance(args, out: Path) -> int:
    covs = [c.strip() for c in args.covariates.split(",") if c.strip()]
    if covs:
        df = _read_frame(args.data)
        _require(df, args.running, *covs)
    else:
        df = pd.DataFrame({args.running: []})
    table = balance_table(df, covs, _grid(args.thresholds), args.running, workers=args.workers)
    table.to_csv(out / "balance.csv")
    print(table.to_string() if covs else "no covariates requested")
    return EXIT_OK


def cmd_plot(args, out: Path) -> int:
    df = _read_frame(args.data)
    s = _sample(args, df)
    rule = args.rule
    if rule == "manual":
        if not args.bins:
            raise DataError("manual rule needs --bins J_left,J_right")
        rule = tuple(int(v) for v in args.bins.split(","))
    data = binned_plot_data(s, rule, args.poly_order)
    data.to_csv(out / "plot_bins.csv")
    data.to_json(out / "plot_fit.json")
    data.to_svg(out / "plot.svg")
    if args.hist_treatment:
        _require(df, args.hist_treatment)
        d = df[[args.running, args.hist_treatment]].dropna()
        bins = treatment_fraction_histogram(d[args.running], d[args.hist_treatment], args.hist_width)
        write_histogram_csv(bins, out / "treatment_histogram.csv")
    print(f"{len(data.bins)} bins ({data.j_left} left, {data.j_right} right), rule {data.binning_rule}")
    return EXIT_OK


def cmd_ge(args, out: Path) -> int:
    df = _read_frame(args.data)
    _require(df, "literacy", "treatment", "district_id", "age", "schooling", "wage")
    methods = ("decomposition", "revised") if args.method == "both" else (args.method,)
    cfg = GeConfig(cutoff=args.cutoff, bandwidth=BandwidthSpec(kernel=args.kernel),
                   variance=VarianceSpec(args.vce), weighted=args.weighted,
                   log_theta_ratio=args.log_theta_ratio, methods=methods,
                   weight="weight" if args.weighted else None)
    rep = run_ge(df, cfg, args.replications, args.seed, args.workers)
    rep.to_json(out / "ge.json")
    (out / "ge.txt").write_text(rep.table() + "\n", encoding="utf-8")
    print(rep.table())
    return EXIT_OK


class _EstimateStatistic:
    def __init__(self, req: EstimationRequest):
        self.req = req

    def __call__(self, s: Sample) -> dict[str, float]:
        r = estimate(s, self.req)
        return {"tau_conventional": r.tau_conventional, "tau_bias_corrected": r.tau_bias_corrected}


def cmd_bootstrap(args, out: Path) -> int:
    df = _read_frame(args.data)
    s = _sample(args, df)
    plan = BootstrapPlan(_EstimateStatistic(_request(args)), args.replications,
                         "by_cluster" if args.by_cluster else "iid", args.seed)
    summ = run_bootstrap(s, plan, workers=args.workers)
    _dump(out / "bootstrap.json", {k: v.to_dict() for k, v in summ.items()})
    for k, v in summ.items():
        print(f"{k}: point={v.point:.6g} se={v.se:.4g} median={v.median:.6g} "
              f"p_one_sided={v.p_one_sided:.4g} failed={v.n_failed}")
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest, "estimate": cmd_estimate, "sweep-threshold": cmd_sweep_threshold,
    "sweep-bandwidth": cmd_sweep_bandwidth, "balance": cmd_balance, "plot": cmd_plot,
    "ge": cmd_ge, "bootstrap": cmd_bootstrap,
}


def _parse(argv) -> argparse.Namespace:
    parser = build_parser()
    pre, _ = parser.parse_known_args(argv)
    if pre.config:
        cfg = json.loads(Path(pre.config).read_text(encoding="utf-8"))
        cfg.pop("command", None)
        cfg.pop("config", None)
        parser.set_defaults(**cfg)
        for action in parser._subparsers._group_actions:
            for sp in action.choices.values():
                sp.set_defaults(**{k: v for k, v in cfg.items()
                                   if any(a.dest == k for a in sp._actions)})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    try:
        args = _parse(argv)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        _dump(out / "config.json", vars(args))
        return COMMANDS[args.command](args, out)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EstimationError as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
