"""Sandwich variances and robust bias-corrected inference for the jump.

Construction used for the bias-corrected estimate and its variance (per side,
``q = p + 1``)::

    conventional intercept   a_cl' y,   a_cl = e_0' G_p^{-1} R_p' W_h
    bias                     c * m_{p+1},
                             c = e_0' G_p^{-1} R_p' W_h x^{p+1}
                             m_{p+1} = e_{p+1}' G_q^{-1} R_q' W_b y
    bias-corrected           a_bc' y,   a_bc = a_cl - c * e_{p+1}' G_q^{-1} R_q' W_b

Because the corrected estimate is a single linear functional of ``y`` whose
weights combine both fits, its sandwich variance automatically contains the
variance of the bias estimate and its covariance with the conventional
estimate, whatever the relation between ``h`` and ``b``.  Conventional
variances use residuals from the order-``p`` fit at ``h``; robust variances
use residuals from the order-``q`` fit at ``b``.  Sides are independent and
their variances add.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import _variance as var
from ._variance import VarianceSpec, nn_residuals
from .bandwidth import BandwidthPair
from .core import LEFT, RIGHT, Kernel, LocalFit, Sample, kernel_weight, weighted_polyfit
from .errors import InsufficientData, ZeroFirstStage

log = logging.getLogger(__name__)

#: First-stage |t| below this (F < ~10) is flagged as weak in the result notes.
WEAK_FIRST_STAGE_T = 3.16
#: First-stage jumps this small relative to the exposure scale are round-off zeros.
ZERO_TOL = 1e-12


def side_variance(fit: LocalFit, spec: VarianceSpec, clusters: np.ndarray | None = None,
                  coefficient: int = 0) -> float:
    """Sandwich variance of one coefficient of a single one-sided fit.

    ``clusters`` are cluster codes for the *whole* sample (indexed through
    ``fit.index``); required for the clustered flavour.
    """
    a = fit.influence[coefficient]
    k = fit.order + 1
    if spec.flavor == "nn":
        e = nn_residuals(fit.x, fit.y, spec.nn_neighbors)
    else:
        e = var.adjust_residuals(fit.residuals, fit.hat_diagonals, spec.flavor, k, fit.index)
    cl = None
    if spec.clustered:
        cl = var.require_clusters(clusters)[fit.index]
    return var.aggregate(a, e, cl, k=k, correction=spec.small_cluster_correction)


def sandwich_variance(left: LocalFit, right: LocalFit, spec: VarianceSpec,
                      clusters: np.ndarray | None = None) -> float:
    """Variance of ``right.intercept - left.intercept``: the two sides add."""
    return side_variance(left, spec, clusters) + side_variance(right, spec, clusters)


def cluster_by_running_variable(sample: Sample) -> Sample:
    """Assign one cluster per distinct raw running-variable value."""
    _, codes = np.unique(sample.x, return_inverse=True)
    return sample.with_clusters(codes.astype(np.int64))


@dataclass(frozen=True)
class RddResult:
    """Output of a sharp or fuzzy estimation.

    Signs follow the requested convention (``treated_below``): with it set,
    every jump is the left limit minus the right limit.
    """

    tau_conventional: float
    tau_bias_corrected: float
    bias_estimate: float
    se_conventional: float
    se_robust: float
    ci_robust: tuple[float, float]
    ci_conventional: tuple[float, float]
    p_value_robust: float
    p_value_conventional: float
    bandwidths: BandwidthPair
    n_left: int
    n_right: int
    p: int = 1
    q: int = 2
    kernel: str = "triangular"
    vce: str = "nn"
    confidence: float = 0.95
    kind: str = "sharp"
    treated_below: bool = False
    first_stage: "RddResult | None" = None
    reduced_form: "RddResult | None" = None
    first_stage_t: float | None = None
    notes: tuple[str, ...] = field(default_factory=tuple)

    @property
    def t_robust(self) -> float:
        return self.tau_bias_corrected / self.se_robust if self.se_robust > 0 else np.nan

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bandwidths"] = asdict(self.bandwidths)
        d["ci_robust"] = list(self.ci_robust)
        d["ci_conventional"] = list(self.ci_conventional)
        d["notes"] = list(self.notes)
        for key in ("first_stage", "reduced_form"):
            sub = getattr(self, key)
            d[key] = None if sub is None else sub.to_dict()
        return d


# ---------------------------------------------------------------------------


@dataclass
class _SideParts:
    rows: np.ndarray          # sample rows in the max(h, b) window
    a_cl: np.ndarray          # influence of conventional intercept over rows
    a_bc: np.ndarray          # influence of bias-corrected intercept over rows
    slope_q: np.ndarray       # influence of the order-(p+1) coefficient of the q-fit
    bias_mult: float          # c in the module docstring
    fit_p: tuple              # (rows mask within window, solve)
    fit_q: tuple
    n_h: int


def _side_parts(sample: Sample, side: str, p: int, q: int, kernel: Kernel, bw: BandwidthPair,
                use_weights: bool) -> _SideParts:
    h, b = bw.h, bw.b
    xc = sample.xc
    side_mask = sample.side_mask(side)
    reach = max(h, b)
    rows = np.flatnonzero(side_mask & (np.abs(xc) <= reach))
    x = xc[rows]
    w = sample.w[rows] if use_weights else np.ones(rows.size)
    kh = kernel_weight(kernel, x / h) * w
    kb = kernel_weight(kernel, x / b) * w
    mh, mb = kh > 0, kb > 0
    if mh.sum() < p + 1:
        raise InsufficientData(
            f"{int(mh.sum())} observations with positive weight at h on the {side} side; need {p + 1}")
    if mb.sum() < q + 1:
        raise InsufficientData(
            f"{int(mb.sum())} observations with positive weight at b on the {side} side; need {q + 1}")
    sp = weighted_polyfit(x[mh], np.zeros(mh.sum()), kh[mh], p, scale=h)
    sq = weighted_polyfit(x[mb], np.zeros(mb.sum()), kb[mb], q, scale=b)
    a_cl = np.zeros(rows.size)
    a_cl[mh] = sp.influence[0]
    bias_mult = float(sp.influence[0] @ x[mh] ** (p + 1))
    slope = np.zeros(rows.size)
    slope[mb] = sq.influence[p + 1]
    a_bc = a_cl - bias_mult * slope
    return _SideParts(rows, a_cl, a_bc, slope, bias_mult, (mh, sp), (mb, sq), int(mh.sum()))


def _residual_pair(parts: _SideParts, x: np.ndarray, v: np.ndarray, p: int, q: int,
                   spec: VarianceSpec):
    """Adjusted residuals of ``v`` for the conventional and robust variances."""
    if spec.flavor == "nn":
        e = nn_residuals(x, v, spec.nn_neighbors)
        return e, e
    out = []
    for (mask, sol), order in ((parts.fit_p, p), (parts.fit_q, q)):
        xs = x[mask]
        coef = sol.influence @ v[mask]
        resid = v[mask] - np.vander(xs, order + 1, increasing=True) @ coef
        e = np.zeros(x.size)
        e[mask] = var.adjust_residuals(resid, sol.hat, spec.flavor, order + 1, parts.rows[mask])
        out.append(e)
    return out[0], out[1]


def _estimate(sample: Sample, outcomes: list[np.ndarray], p: int, kernel: Kernel,
              bw: BandwidthPair, spec: VarianceSpec, q: int | None, use_weights: bool,
              treated_below: bool):
    """Jumps (conventional and corrected) of each outcome plus per-side residual data."""
    q = p + 1 if q is None else q
    kernel = Kernel.parse(kernel)
    sign = -1.0 if treated_below else 1.0
    parts = {s: _side_parts(sample, s, p, q, kernel, bw, use_weights) for s in (LEFT, RIGHT)}
    clusters = var.require_clusters(sample.cluster) if spec.clustered else None
    jumps = []
    resid = {s: [] for s in parts}
    for v in outcomes:
        cl_, bc_ = {}, {}
        for s, pt in parts.items():
            vv = v[pt.rows]
            cl_[s] = pt.a_cl @ vv
            bc_[s] = pt.a_bc @ vv
            resid[s].append(_residual_pair(pt, sample.xc[pt.rows], vv, p, q, spec))
        jumps.append((sign * (cl_[RIGHT] - cl_[LEFT]), sign * (bc_[RIGHT] - bc_[LEFT])))
    return parts, jumps, resid, clusters, q


def _variances(parts, combos, clusters, spec: VarianceSpec, p: int):
    """Conventional and robust variances given per-side combined residuals."""
    v_cl = v_bc = 0.0
    for s, pt in parts.items():
        e_cl, e_bc = combos[s]
        cl = None if clusters is None else clusters[pt.rows]
        corr = spec.small_cluster_correction
        v_cl += var.aggregate(pt.a_cl, e_cl, cl, k=p + 1, correction=corr)
        v_bc += var.aggregate(pt.a_bc, e_bc, cl, k=p + 1, correction=corr)
    return v_cl, v_bc


def _all_zero(combos) -> bool:
    return all(not np.any(e[0]) and not np.any(e[1]) for e in combos.values())


def _finish(tau_cl, tau_bc, v_cl, v_bc, parts, bw, p, q, kernel, spec, kind, treated_below,
            notes, **extra) -> RddResult:
    z = stats.norm.ppf(0.5 + spec.confidence / 2.0)
    se_cl = float(np.sqrt(max(v_cl, 0.0)))
    se_bc = float(np.sqrt(max(v_bc, 0.0)))

    def pval(t, se):
        if se == 0:
            return 0.0 if t != 0 else 1.0
        return float(2.0 * stats.norm.sf(abs(t / se)))

    return RddResult(
        tau_conventional=float(tau_cl), tau_bias_corrected=float(tau_bc),
        bias_estimate=float(tau_cl - tau_bc), se_conventional=se_cl, se_robust=se_bc,
        ci_robust=(float(tau_bc - z * se_bc), float(tau_bc + z * se_bc)),
        ci_conventional=(float(tau_cl - z * se_cl), float(tau_cl + z * se_cl)),
        p_value_robust=pval(tau_bc, se_bc), p_value_conventional=pval(tau_cl, se_cl),
        bandwidths=bw, n_left=parts[LEFT].n_h, n_right=parts[RIGHT].n_h, p=p, q=q,
        kernel=Kernel.parse(kernel).value, vce=spec.flavor, confidence=spec.confidence,
        kind=kind, treated_below=treated_below, notes=tuple(notes), **extra,
    )


def _hc3_fallback(spec: VarianceSpec, notes: list) -> VarianceSpec:
    msg = ("nearest-neighbour residuals are all zero (outcome constant among neighbours); "
           "switching to HC3")
    warnings.warn(msg, RuntimeWarning, stacklevel=3)
    log.warning(msg)
    notes.append(msg)
    return VarianceSpec("hc3", spec.nn_neighbors, spec.confidence, spec.small_cluster_correction)


def robust_bias_corrected(sample: Sample, p: int = 1, kernel: Kernel | str = Kernel.TRIANGULAR,
                          bw: BandwidthPair | None = None, vspec: VarianceSpec | None = None, *,
                          q: int | None = None, use_weights: bool = False,
                          treated_below: bool = False) -> RddResult:
    """Conventional and robust bias-corrected sharp jump estimate at fixed ``(h, b)``."""
    if bw is None:
        raise ValueError("a bandwidth pair is required; see rdge.rdd for automatic selection")
    spec = vspec or VarianceSpec()
    notes: list[str] = []
    parts, jumps, resid, clusters, q = _estimate(sample, [sample.y], p, kernel, bw, spec, q,
                                                 use_weights, treated_below)
    combos = {s: resid[s][0] for s in parts}
    if spec.flavor == "nn" and _all_zero(combos):
        spec = _hc3_fallback(spec, notes)
        parts, jumps, resid, clusters, q = _estimate(sample, [sample.y], p, kernel, bw, spec, q,
                                                     use_weights, treated_below)
        combos = {s: resid[s][0] for s in parts}
    v_cl, v_bc = _variances(parts, combos, clusters, spec, p)
    tau_cl, tau_bc = jumps[0]
    return _finish(tau_cl, tau_bc, v_cl, v_bc, parts, bw, p, q, kernel, spec, "sharp",
                   treated_below, notes)


def robust_bias_corrected_fuzzy(sample: Sample, p: int = 1,
                                kernel: Kernel | str = Kernel.TRIANGULAR,
                                bw: BandwidthPair | None = None,
                                vspec: VarianceSpec | None = None, *, q: int | None = None,
                                use_weights: bool = False,
                                treated_below: bool = False) -> RddResult:
    """Fuzzy (ratio) estimate with delta-method variances.

    Reduced form and first stage share kernel, bandwidths and rows, so the
    ratio of their jumps is exactly the fuzzy estimate.  The linearisation
    ``(e_y - tau e_t) / tau_t`` uses the conventional ratio for both the
    conventional and the bias-corrected variance.
    """
    if bw is None:
        raise ValueError("a bandwidth pair is required")
    if sample.t is None:
        raise ValueError("fuzzy estimation needs a treatment/exposure column")
    spec = vspec or VarianceSpec()
    notes: list[str] = []

    def run(spec):
        parts, jumps, resid, clusters, qq = _estimate(
            sample, [sample.y, sample.t], p, kernel, bw, spec, q, use_weights, treated_below)
        (y_cl, y_bc), (t_cl, t_bc) = jumps
        scale = max(1.0, float(np.max(np.abs(sample.t))))
        if abs(t_cl) <= ZERO_TOL * scale or abs(t_bc) <= ZERO_TOL * scale:
            raise ZeroFirstStage(f"first-stage jump is zero up to round-off ({t_cl:.3g})")
        tau = y_cl / t_cl
        combos = {}
        for s in parts:
            (ey_cl, ey_bc), (et_cl, et_bc) = resid[s]
            combos[s] = ((ey_cl - tau * et_cl) / t_cl, (ey_bc - tau * et_bc) / t_cl)
        return parts, jumps, resid, clusters, qq, combos

    parts, jumps, resid, clusters, qq, combos = run(spec)
    if spec.flavor == "nn" and _all_zero(combos):
        spec = _hc3_fallback(spec, notes)
        parts, jumps, resid, clusters, qq, combos = run(spec)
    (y_cl, y_bc), (t_cl, t_bc) = jumps
    v_cl, v_bc = _variances(parts, combos, clusters, spec, p)

    # component results (each with its own sandwich) for diagnostics
    def component(idx, label):
        comp = {s: resid[s][idx] for s in parts}
        vc, vb = _variances(parts, comp, clusters, spec, p)
        c_cl, c_bc = jumps[idx]
        return _finish(c_cl, c_bc, vc, vb, parts, bw, p, qq, kernel, spec, label,
                       treated_below, [])

    reduced = component(0, "reduced_form")
    first = component(1, "first_stage")
    t_first = first.tau_conventional / first.se_conventional if first.se_conventional > 0 else np.inf
    if abs(t_first) < WEAK_FIRST_STAGE_T:
        notes.append(f"weak first stage: conventional t = {t_first:.3g}")
    return _finish(y_cl / t_cl, y_bc / t_bc, v_cl, v_bc, parts, bw, p, qq, kernel, spec, "fuzzy",
                   treated_below, notes, first_stage=first, reduced_form=reduced,
                   first_stage_t=float(t_first))
