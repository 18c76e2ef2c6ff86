"""Sensitivity sweeps over cutoffs and bandwidths, and covariate balance tests."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from ._variance import VarianceSpec
from .bandwidth import BandwidthPair, BandwidthSpec, manual_pair
from .core import Sample
from .errors import RdgeError
from .inference import RddResult
from .rdd import EstimationRequest, estimate, prepare, resolve_bandwidths

#: Plot files clip interval ends to this band; results files never are.
PLOT_CLIP = 3.0


def default_threshold_grid() -> np.ndarray:
    return np.round(np.arange(0.30, 0.50 + 1e-9, 0.005), 6)


def default_bandwidth_grid() -> np.ndarray:
    return np.round(np.arange(0.02, 0.20 + 1e-9, 0.01), 6)


@dataclass(frozen=True)
class SweepRow:
    grid_value: float
    result: RddResult | None
    error: str | None = None
    flagged: bool = False

    def record(self) -> dict:
        r = self.result
        base = {"grid_value": self.grid_value, "flagged": int(self.flagged), "error": self.error or ""}
        if r is None:
            keys = ("tau_conventional", "tau_bias_corrected", "se_robust", "ci_low", "ci_high",
                    "t_robust", "p_value_robust", "h", "b", "n_left", "n_right")
            return {**base, **{k: float("nan") for k in keys}}
        return {**base, "tau_conventional": r.tau_conventional, "tau_bias_corrected": r.tau_bias_corrected,
                "se_robust": r.se_robust, "ci_low": r.ci_robust[0], "ci_high": r.ci_robust[1],
                "t_robust": r.t_robust, "p_value_robust": r.p_value_robust,
                "h": r.bandwidths.h, "b": r.bandwidths.b, "n_left": r.n_left, "n_right": r.n_right}


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def sweep_threshold(sample: Sample, req: EstimationRequest, grid=None, workers: int = 1) -> list[SweepRow]:
    """Re-center, reselect bandwidths and re-estimate at every candidate cutoff.

    Failures at a grid point are recorded and the sweep continues.  Rows come
    back in grid order.
    """
    grid = default_threshold_grid() if grid is None else np.asarray(grid, dtype=float)

    def one(c):
        try:
            return SweepRow(float(c), estimate(sample, replace(req, cutoff=float(c))))
        except RdgeError as exc:
            return SweepRow(float(c), None, f"{type(exc).__name__}: {exc}")

    return _map(one, grid, workers)


def best_threshold(rows: list[SweepRow]) -> float:
    """Grid value with the largest robust |t|."""
    ts = np.array([abs(r.result.t_robust) if r.result is not None else -np.inf for r in rows])
    ts = np.where(np.isfinite(ts), ts, -np.inf)
    return rows[int(np.argmax(ts))].grid_value


def sweep_bandwidth(sample: Sample, req: EstimationRequest, grid=None, workers: int = 1,
                    reference: BandwidthPair | None = None) -> tuple[list[SweepRow], BandwidthPair]:
    """Estimates on a grid of ``h`` with ``b = h / rho`` from the automatic pair.

    The automatic ``h`` is inserted into the grid if absent and its row is
    flagged.
    """
    grid = default_bandwidth_grid() if grid is None else np.asarray(grid, dtype=float)
    prepared = prepare(sample, req)
    if reference is None:
        auto_req = replace(req, bandwidth=req.bandwidth.automatic())
        reference = resolve_bandwidths(prepared, auto_req, fuzzy=req.exposure is not None)
    hs = sorted(set(float(h) for h in grid) | {reference.h})

    def one(h):
        bw = manual_pair(h, reference)
        try:
            return SweepRow(h, estimate(sample, req, bw), flagged=h == reference.h)
        except RdgeError as exc:
            return SweepRow(h, None, f"{type(exc).__name__}: {exc}", flagged=h == reference.h)

    return _map(one, hs, workers), reference


def write_sweep(rows: list[SweepRow], path, plot_path=None) -> None:
    """Results CSV (unclipped) and, optionally, a plot CSV with clipped intervals."""
    recs = [r.record() for r in rows]
    pd.DataFrame(recs).to_csv(path, index=False)
    if plot_path is not None:
        plot = pd.DataFrame(recs)[["grid_value", "tau_bias_corrected", "ci_low", "ci_high", "flagged"]]
        for c in ("tau_bias_corrected", "ci_low", "ci_high"):
            plot[c] = plot[c].clip(-PLOT_CLIP, PLOT_CLIP)
        plot.to_csv(plot_path, index=False)


def balance_table(frame: pd.DataFrame, covariates: list[str], thresholds, running: str = "literacy",
                  bandwidth: BandwidthSpec | None = None, workers: int = 1) -> pd.DataFrame:
    """Robust bias-corrected p-values (HC3) per covariate and threshold.

    Rows are covariates, columns thresholds; failed cells are NaN.
    """
    thresholds = [float(c) for c in thresholds]
    out = pd.DataFrame(index=pd.Index(covariates, name="covariate"),
                       columns=[f"{c:g}" for c in thresholds], dtype=float)
    if not covariates:
        return out
    req = EstimationRequest(bandwidth=bandwidth or BandwidthSpec(vce="hc3"),
                            variance=VarianceSpec("hc3"), treated_below=True)
    cells = [(v, c) for v in covariates for c in thresholds]

    def one(cell):
        v, c = cell
        df = frame[[running, v]].dropna()
        try:
            s = Sample(df[running].to_numpy(float), df[v].to_numpy(float), cutoff=c)
            return estimate(s, req).p_value_robust
        except RdgeError:
            return float("nan")

    for (v, c), p in zip(cells, _map(one, cells, workers)):
        out.loc[v, f"{c:g}"] = p
    return out
