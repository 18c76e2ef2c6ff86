"""MSE-optimal bandwidth selection and the manual-override ratio rule.

The selector is the usual three-stage plug-in for local-polynomial jump
estimation.  For a coefficient of order ``nu`` estimated with a polynomial of
order ``o`` at bandwidth ``h``, the one-sided estimator has

    bias  ~ h**(o + 1 - nu) * B,     B = Bconst * m_{o+1}
    var   ~ V / h**(2 nu + 1)

so the bandwidth minimising the squared bias of the *difference* across the
cutoff plus the summed variance is

    h* = [ (2 nu + 1) (V_l + V_r) / (2 (o + 1 - nu) ((B_r - B_l)**2 + R)) ] ** (1 / (2 o + 3))

``V`` is ``h_V**(2 nu + 1)`` times the sandwich variance of the pilot
coefficient at the pilot bandwidth ``h_V``; ``Bconst`` is the kernel bias
constant measured on the same pilot fit; ``m_{o+1}`` is the order-``o+1``
coefficient from a wider, higher-order fit; ``R`` is a regulariser equal to
``REGULARIZATION`` times the sampling variance of the bias term.

Stages (``q = p + 1`` by default):

1. ``d``: derivative ``q+1`` at order ``q+1``, curvature from a global
   one-sided fit of order ``q+2`` (quartic when ``p = 1``); no regulariser.
2. ``b``: derivative ``p+1`` at order ``q``, curvature from order ``q+1`` at ``d``.
3. ``h``: intercept at order ``p``, curvature from order ``q`` at ``b``.

The pilot bandwidth is the rule of thumb
``PILOT_CONSTANT[kernel] * min(sd(x), IQR(x)/1.349) * n**(-1/5)``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import _variance as var
from .core import LEFT, RIGHT, Kernel, Sample, kernel_weight, weighted_polyfit
from .errors import DegeneratePilot, InsufficientData, ZeroFirstStage

log = logging.getLogger(__name__)

#: Rule-of-thumb constants relating the pilot bandwidth to the spread of x.
PILOT_CONSTANT = {
    Kernel.TRIANGULAR: 2.576,
    Kernel.UNIFORM: 1.843,
    Kernel.EPANECHNIKOV: 2.345,
}
#: Multiplier on the estimated variance of the squared-bias plug-in.
REGULARIZATION = 3.0
#: Relative widening applied to the range so a global pilot gives every point positive weight.
GLOBAL_PAD = 1e-6
#: Relative size below which an estimated derivative is treated as exactly zero.
FLAT_TOL = 1e-10


@dataclass(frozen=True)
class BandwidthPair:
    h: float
    b: float
    rho: float

    def __post_init__(self):
        if not (self.h > 0 and self.b > 0):
            raise ValueError(f"bandwidths must be positive, got h={self.h}, b={self.b}")

    @classmethod
    def of(cls, h: float, b: float) -> "BandwidthPair":
        return cls(float(h), float(b), float(h) / float(b))


@dataclass(frozen=True)
class BandwidthSpec:
    """How to obtain the bandwidth pair.

    ``mode``:
      * ``"mse"`` -- data-driven (default);
      * ``"manual"`` -- estimation bandwidth ``h`` fixed; ``b = h / rho`` where
        ``rho`` is taken from the field if given, else from an automatic
        selection on the same specification;
      * ``"manual_both"`` -- both ``h`` and ``b`` fixed.

    ``vce`` names the residual type used for the selector's variance inputs;
    ``cluster_aware`` aggregates those residuals within clusters.
    """

    mode: str = "mse"
    h: float | None = None
    b: float | None = None
    rho: float | None = None
    p: int = 1
    q: int | None = None
    kernel: Kernel = Kernel.TRIANGULAR
    cluster_aware: bool = False
    weighted: bool = False
    vce: str = "nn"
    nn_neighbors: int = 3
    on_degenerate: str = "fallback"

    def __post_init__(self):
        object.__setattr__(self, "kernel", Kernel.parse(self.kernel))
        if self.q is None:
            object.__setattr__(self, "q", self.p + 1)
        if self.p < 0 or self.q <= self.p:
            raise ValueError(f"need 0 <= p < q, got p={self.p}, q={self.q}")
        if self.mode not in ("mse", "manual", "manual_both"):
            raise ValueError(f"unknown bandwidth mode {self.mode!r}")
        if self.mode in ("manual", "manual_both") and not (self.h is not None and self.h > 0):
            raise ValueError("manual bandwidth must be positive")
        if self.mode == "manual_both" and not (self.b is not None and self.b > 0):
            raise ValueError("manual_both needs a positive b")
        if self.rho is not None and not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.on_degenerate not in ("fallback", "raise"):
            raise ValueError("on_degenerate must be 'fallback' or 'raise'")
        if self.vce == "cluster":
            object.__setattr__(self, "vce", "hc0")
            object.__setattr__(self, "cluster_aware", True)
        var.VarianceSpec(flavor=self.vce)  # validates the name

    def automatic(self) -> "BandwidthSpec":
        return replace(self, mode="mse", h=None, b=None, rho=None)


def manual_pair(h: float, reference: BandwidthPair) -> BandwidthPair:
    """Fix the estimation bandwidth at ``h`` and keep the reference ``h/b`` ratio."""
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    if h == reference.h:
        return reference
    return BandwidthPair(float(h), float(h) / reference.rho, reference.rho)


# ---------------------------------------------------------------------------
# plug-in machinery


@dataclass
class _SideData:
    x: np.ndarray
    y: np.ndarray
    w: np.ndarray
    cl: np.ndarray | None

    @property
    def range(self) -> float:
        return float(np.max(np.abs(self.x))) if self.x.size else 0.0


def _widen(absx: np.ndarray, h: float, need: int) -> float:
    """Smallest bandwidth >= h leaving ``need`` points strictly inside the window."""
    if np.count_nonzero(absx < h) >= need:
        return h
    if absx.size < need:
        raise InsufficientData(f"side has {absx.size} observations; the pilot needs {need}")
    d = np.partition(absx, need - 1)[need - 1]
    return max(h, d * (1 + 1e-6) + 1e-12)


def _side_constants(sd: _SideData, kernel: Kernel, o: int, nu: int, o_B: int, h_V: float,
                    h_B: float, spec: BandwidthSpec, regularize: bool):
    absx = np.abs(sd.x)
    h_V = _widen(absx, h_V, o + 2)
    k = kernel_weight(kernel, sd.x / h_V)
    sel = k > 0
    x, y = sd.x[sel], sd.y[sel]
    W = k[sel] * sd.w[sel]
    cl = None if sd.cl is None else sd.cl[sel]
    fit = weighted_polyfit(x, y, W, o, scale=h_V)
    e = _residuals(x, y, fit, o, spec)
    v_nu = var.aggregate(fit.influence[nu], e, cl if spec.cluster_aware else None, k=o + 1)
    V = h_V ** (2 * nu + 1) * v_nu
    bconst = h_V ** nu * float(fit.influence[nu] @ (x / h_V) ** (o + 1))

    h_B = _widen(absx, h_B, o_B + 2)
    kb = kernel_weight(kernel, sd.x / h_B)
    selb = kb > 0
    xb, yb = sd.x[selb], sd.y[selb]
    Wb = kb[selb] * sd.w[selb]
    fitb = weighted_polyfit(xb, yb, Wb, o_B, scale=h_B)
    curvature = float(fitb.coef[o + 1])
    # curvature at round-off level relative to the outcome scale counts as zero
    flat = abs(curvature) * h_B ** (o + 1) <= FLAT_TOL * float(np.max(np.abs(yb)))
    B = 0.0 if flat else bconst * curvature
    R = 0.0
    if regularize:
        clb = None if sd.cl is None else sd.cl[selb]
        eb = _residuals(xb, yb, fitb, o_B, spec)
        v_b = var.aggregate(fitb.influence[o + 1], eb, clb if spec.cluster_aware else None,
                            k=o_B + 1)
        R = REGULARIZATION * bconst ** 2 * v_b
    return V, B, R, flat


def _residuals(x, y, fit, order, spec: BandwidthSpec):
    if spec.vce == "nn":
        return var.nn_residuals(x, y, spec.nn_neighbors)
    resid = y - np.vander(x, order + 1, increasing=True) @ fit.coef
    return var.adjust_residuals(resid, fit.hat, spec.vce, order + 1)


def _optimal(left, right, o: int, nu: int) -> float:
    (Vl, Bl, Rl, fl), (Vr, Br, Rr, fr) = left, right
    if fl and fr:
        raise DegeneratePilot("estimated curvature is zero on both sides")
    den = 2.0 * (o + 1 - nu) * ((Br - Bl) ** 2 + Rl + Rr)
    num = (2.0 * nu + 1.0) * (Vl + Vr)
    if not (den > 0 and np.isfinite(den)) or not (num >= 0 and np.isfinite(num)):
        raise DegeneratePilot(f"plug-in denominator {den!r}, numerator {num!r}")
    return float((num / den) ** (1.0 / (2 * o + 3)))


def _pilot_bandwidth(xc: np.ndarray, kernel: Kernel, cap: float) -> float:
    sd = float(np.std(xc, ddof=1))
    q75, q25 = np.percentile(xc, [75, 25])
    spread = min(sd, (q75 - q25) / 1.349) if q75 > q25 else sd
    c = PILOT_CONSTANT[kernel] * spread * xc.size ** (-0.2)
    return float(min(c, cap)) if c > 0 else cap


def _sides(sample: Sample, y: np.ndarray, spec: BandwidthSpec):
    w = sample.w if spec.weighted else np.ones(sample.n)
    cl = sample.cluster
    if spec.cluster_aware:
        var.require_clusters(cl)
    out = []
    for side in (LEFT, RIGHT):
        m = sample.side_mask(side)
        out.append(_SideData(sample.xc[m], y[m], w[m], None if cl is None else cl[m]))
    return out


def select_mse_bandwidth(sample: Sample, spec: BandwidthSpec | None = None,
                         y: np.ndarray | None = None) -> BandwidthPair:
    """Data-driven MSE-optimal ``(h, b)`` for the jump in ``y`` at the cutoff.

    ``y`` defaults to the sample outcome.  Raises :class:`InsufficientData`
    when either side has fewer than ``3 (p + 2)`` observations.  A pilot with
    exactly zero estimated curvature either raises :class:`DegeneratePilot`
    or, by default, falls back to the range of x on the narrower side.
    """
    spec = spec or BandwidthSpec()
    p, q, kernel = spec.p, spec.q, spec.kernel
    yy = sample.y if y is None else np.asarray(y, dtype=float)
    left, right = _sides(sample, yy, spec)
    need = 3 * (p + 2)
    for sd, name in ((left, LEFT), (right, RIGHT)):
        if sd.x.size < need:
            raise InsufficientData(f"{sd.x.size} observations on the {name} side; need {need}")
    bw_max = max(left.range, right.range)
    narrow = min(left.range, right.range)
    c = _pilot_bandwidth(sample.xc, kernel, bw_max)

    def stage(o, nu, o_B, hB_left, hB_right, regularize):
        cl_ = _side_constants(left, kernel, o, nu, o_B, c, hB_left, spec, regularize)
        cr_ = _side_constants(right, kernel, o, nu, o_B, c, hB_right, spec, regularize)
        return _optimal(cl_, cr_, o, nu)

    def pilot(o, nu, o_B, hB_left, hB_right, regularize):
        # a flat pilot leaves nothing to trade off; use the widest window
        try:
            return min(stage(o, nu, o_B, hB_left, hB_right, regularize), bw_max)
        except DegeneratePilot:
            return bw_max

    try:
        d = pilot(q + 1, q + 1, q + 2, left.range * (1 + GLOBAL_PAD),
                  right.range * (1 + GLOBAL_PAD), False)
        b = pilot(q, p + 1, q + 1, d, d, True)
        h = min(stage(p, 0, q, b, b, True), bw_max)
    except DegeneratePilot as exc:
        if spec.on_degenerate == "raise":
            raise
        msg = f"degenerate pilot ({exc}); falling back to h = b = {narrow:.6g}"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        log.warning(msg)
        h = b = narrow
    return BandwidthPair.of(h, b)


def select_bandwidth(sample: Sample, spec: BandwidthSpec, y: np.ndarray | None = None,
                     t: np.ndarray | None = None) -> BandwidthPair:
    """Resolve a :class:`BandwidthSpec` to a concrete pair.

    With ``t`` given (fuzzy designs) the automatic selector targets the
    linearised ratio outcome ``y - tau * t``, where ``tau`` is a conventional
    fuzzy estimate at a first-pass bandwidth chosen for ``y``.
    """
    if spec.mode == "manual_both":
        return BandwidthPair.of(spec.h, spec.b)
    if spec.mode == "manual" and spec.rho is not None:
        return BandwidthPair(float(spec.h), float(spec.h) / spec.rho, float(spec.rho))
    if t is None:
        ref = select_mse_bandwidth(sample, spec.automatic(), y=y)
    else:
        ref = _select_fuzzy(sample, spec.automatic(), y, t)
    if spec.mode == "manual":
        return manual_pair(spec.h, ref)
    return ref


def _select_fuzzy(sample, spec, y, t):
    from .core import fit_local_poly

    yy = sample.y if y is None else np.asarray(y, dtype=float)
    tt = np.asarray(t, dtype=float)
    first = select_mse_bandwidth(sample, spec, y=yy)
    jumps = []
    for v in (yy, tt):
        fl = fit_local_poly(sample, LEFT, spec.p, first.h, spec.kernel, spec.weighted, y=v)
        fr = fit_local_poly(sample, RIGHT, spec.p, first.h, spec.kernel, spec.weighted, y=v)
        jumps.append(fr.intercept - fl.intercept)
    if jumps[1] == 0:
        raise ZeroFirstStage("first-stage jump is exactly zero at the pilot bandwidth")
    tau = jumps[0] / jumps[1]
    return select_mse_bandwidth(sample, spec, y=yy - tau * tt)
