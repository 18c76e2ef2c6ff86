"""Binned discontinuity-plot data and the treatment-fraction histogram.

Bin-count rules (per side, ``n`` is the full sample size, ``R`` the side's
support length)::

    IMSE evenly spaced      J = ceil((2 B / V)^(1/3) n^(1/3))
                            B = R^2 / (12 n) * sum_i m'(x_i)^2
                            V = 1 / (2 R) * sum_i (x_(i) - x_(i-1)) (y_(i) - y_(i-1))^2
    variance mimicking      J = ceil(var(y) / V * n / log(n)^2)

``m'`` is the derivative of a global polynomial of ``poly_order`` fitted on
the side, and ``V`` is a spacings-based estimate of the side's integrated
conditional variance.  Files written here are plot data only; nothing is
rendered beyond a minimal SVG.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import LEFT, RIGHT, Sample, weighted_polyfit
from .errors import InsufficientData

RULES = ("mse_evenly_spaced", "variance_mimicking", "manual")


@dataclass(frozen=True)
class Bin:
    side: str
    lower: float
    upper: float
    center: float
    mean_y: float
    count: int


@dataclass(frozen=True)
class PlotData:
    """Bins and per-side global polynomial fits, in raw running-variable units.

    Fit coefficients are in increasing powers of ``x - cutoff``.
    """

    bins: tuple[Bin, ...]
    fit_left: tuple[float, ...]
    fit_right: tuple[float, ...]
    binning_rule: str
    poly_order: int
    cutoff: float
    j_left: int
    j_right: int
    support: tuple[float, float] = field(default=(0.0, 0.0))

    def fitted(self, x) -> np.ndarray:
        """Evaluate the side-appropriate polynomial at raw ``x``."""
        xc = np.asarray(x, dtype=float) - self.cutoff
        left = np.polynomial.polynomial.polyval(xc, self.fit_left)
        right = np.polynomial.polynomial.polyval(xc, self.fit_right)
        return np.where(xc >= 0, right, left)

    def to_csv(self, path) -> None:
        """Columns: side, lower, upper, center, mean_y, count."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["side", "lower", "upper", "center", "mean_y", "count"])
            for b in self.bins:
                wr.writerow([b.side, repr(b.lower), repr(b.upper), repr(b.center), repr(b.mean_y), b.count])

    def to_json(self, path) -> None:
        """Keys: cutoff, binning_rule, poly_order, j_left, j_right, fit_left, fit_right."""
        payload = {
            "cutoff": self.cutoff,
            "binning_rule": self.binning_rule,
            "poly_order": self.poly_order,
            "j_left": self.j_left,
            "j_right": self.j_right,
            "fit_left": list(self.fit_left),
            "fit_right": list(self.fit_right),
            "coefficient_basis": "increasing powers of (x - cutoff)",
        }
        Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")

    def to_svg(self, path, width: int = 640, height: int = 400) -> None:
        Path(path).write_text(render_svg(self, width, height), encoding="utf-8")


def _support_edges(xc: np.ndarray, side: str, J: int) -> np.ndarray:
    if side == LEFT:
        return np.linspace(xc.min(), 0.0, J + 1)
    return np.linspace(0.0, xc.max(), J + 1)


def _bin_side(xc, y, side, J, cutoff) -> list[Bin]:
    edges = _support_edges(xc, side, J)
    # half-open bins; the outermost observation on each side closes its bin
    idx = np.searchsorted(edges, xc, side="right") - 1
    idx = np.clip(idx, 0, J - 1)
    counts = np.bincount(idx, minlength=J)
    sums = np.bincount(idx, weights=y, minlength=J)
    out = []
    for j in range(J):
        if counts[j] == 0:
            continue
        lo, hi = edges[j], edges[j + 1]
        out.append(Bin(side, float(lo + cutoff), float(hi + cutoff), float((lo + hi) / 2 + cutoff),
                       float(sums[j] / counts[j]), int(counts[j])))
    return out


def _spacing_variance(xc, y, length) -> float:
    order = np.lexsort((y, xc))
    dx = np.diff(xc[order])
    dy = np.diff(y[order])
    return float(np.sum(dx * dy ** 2) / (2 * length))


def _choose_j(xc, y, n, rule, poly_order, coef) -> int:
    length = float(np.ptp(xc)) if xc.size > 1 else 0.0
    length = max(length, float(np.max(np.abs(xc))))
    V = _spacing_variance(xc, y, length) if length > 0 else 0.0
    if V <= 0 or not np.isfinite(V):
        return 1
    if rule == "mse_evenly_spaced":
        deriv = np.polynomial.polynomial.polyder(coef)
        mu1 = np.polynomial.polynomial.polyval(xc, deriv)
        B = length ** 2 / (12.0 * n) * float(np.sum(mu1 ** 2))
        if B <= 0:
            return 1
        return max(1, math.ceil((2 * B / V) ** (1 / 3) * n ** (1 / 3)))
    var_y = float(np.var(y, ddof=1)) if y.size > 1 else 0.0
    return max(1, math.ceil(var_y / V * n / math.log(n) ** 2))


def _global_fit(xc, y, order):
    order = min(order, xc.size - 1)
    scale = float(np.max(np.abs(xc))) or 1.0
    coef = weighted_polyfit(xc, y, np.ones_like(xc), order, scale=scale).coef
    return np.asarray(coef, dtype=float)


def binned_plot_data(sample: Sample, rule: str | tuple[int, int] = "mse_evenly_spaced",
                     poly_order: int = 4) -> PlotData:
    """Bin means and global polynomial overlays on either side of the cutoff.

    ``rule`` is ``"mse_evenly_spaced"``, ``"variance_mimicking"`` or a
    ``(J_left, J_right)`` tuple for manual bin counts.  Empty bins are omitted.
    """
    if poly_order < 0:
        raise ValueError("poly_order must be nonnegative")
    manual = not isinstance(rule, str)
    if manual:
        j_manual = tuple(int(j) for j in rule)
        if len(j_manual) != 2 or min(j_manual) < 1:
            raise ValueError("manual rule needs two positive bin counts")
        label = f"manual({j_manual[0]}, {j_manual[1]})"
    else:
        if rule not in RULES[:2]:
            raise ValueError(f"unknown binning rule {rule!r}")
        label = rule
    n = sample.n
    bins, fits, js = [], {}, {}
    for k, side in enumerate((LEFT, RIGHT)):
        m = sample.side_mask(side)
        xc, y = sample.xc[m], sample.y[m]
        if xc.size == 0:
            raise InsufficientData(f"no observations on the {side} of the cutoff")
        coef = _global_fit(xc, y, poly_order)
        if np.max(np.abs(xc)) == 0:
            # every right-side point sits on the cutoff
            J = 1
            bins.append(Bin(side, sample.cutoff, sample.cutoff, sample.cutoff, float(y.mean()), int(y.size)))
        else:
            J = j_manual[k] if manual else _choose_j(xc, y, n, rule, poly_order, coef)
            bins.extend(_bin_side(xc, y, side, J, sample.cutoff))
        fits[side] = coef
        js[side] = J
    bins.sort(key=lambda b: b.center)
    return PlotData(tuple(bins), tuple(fits[LEFT]), tuple(fits[RIGHT]), label, poly_order,
                    sample.cutoff, js[LEFT], js[RIGHT],
                    (float(sample.x.min()), float(sample.x.max())))


@dataclass(frozen=True)
class HistogramBin:
    lower: float
    upper: float
    fraction: float
    count: int
    treated: int


def treatment_fraction_histogram(literacy, treated, bin_width: float,
                                 start: float | None = None, stop: float | None = None) -> list[HistogramBin]:
    """Share of treated districts per interval ``[k w, (k+1) w)``.

    Intervals run from the one containing ``start`` (default: the smallest
    value) to the one containing ``stop`` (default: the largest).  Empty
    intervals carry ``count = 0`` and a NaN fraction.
    """
    if not bin_width > 0:
        raise ValueError("bin width must be positive")
    lit = np.asarray(literacy, dtype=float)
    tr = np.asarray(treated, dtype=float)
    if lit.shape != tr.shape:
        raise ValueError("literacy and treatment must have the same length")
    if lit.size == 0:
        return []
    # rounding guards against 0.41 / 0.01 = 40.99999...
    k = np.floor(np.round(lit / bin_width, 9)).astype(np.int64)
    k_lo = int(np.floor(round(start / bin_width, 9))) if start is not None else int(k.min())
    k_hi = int(np.floor(round(stop / bin_width, 9))) if stop is not None else int(k.max())
    out = []
    for j in range(k_lo, k_hi + 1):
        m = k == j
        c = int(m.sum())
        t = int(round(float(tr[m].sum())))
        out.append(HistogramBin(round(j * bin_width, 12), round((j + 1) * bin_width, 12),
                                t / c if c else float("nan"), c, t))
    return out


def write_histogram_csv(bins: list[HistogramBin], path) -> None:
    """Columns: lower, upper, fraction, count, treated."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["lower", "upper", "fraction", "count", "treated"])
        for b in bins:
            wr.writerow([repr(b.lower), repr(b.upper), "" if b.count == 0 else repr(b.fraction), b.count, b.treated])


def render_svg(data: PlotData, width: int = 640, height: int = 400) -> str:
    """Self-contained SVG: bin means as dots, polynomial fits as lines."""
    pad = 40
    xs = np.array([b.center for b in data.bins])
    ys = np.array([b.mean_y for b in data.bins])
    x0, x1 = data.support if data.support[1] > data.support[0] else (xs.min(), xs.max())
    grid_l = np.linspace(x0, data.cutoff, 100)
    grid_r = np.linspace(data.cutoff, x1, 100)
    fl = data.fitted(np.clip(grid_l, None, np.nextafter(data.cutoff, -np.inf)))
    fr = data.fitted(grid_r)
    allv = np.concatenate([ys, fl, fr])
    y0, y1 = float(np.min(allv)), float(np.max(allv))
    if y1 <= y0:
        y0, y1 = y0 - 1, y1 + 1
    if x1 <= x0:
        x0, x1 = x0 - 1, x1 + 1

    def sx(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(v):
        return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

    def line(gx, gy):
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(gx, gy))
        return f'<polyline fill="none" stroke="black" points="{pts}"/>'

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<line x1="{sx(data.cutoff):.2f}" y1="{pad}" x2="{sx(data.cutoff):.2f}" '
             f'y2="{height - pad}" stroke="grey" stroke-dasharray="4"/>',
             line(grid_l, fl), line(grid_r, fr)]
    parts += [f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="3"/>' for a, b in zip(xs, ys)]
    parts.append("</svg>")
    return "\n".join(parts)
