"""Data model, kernels and the one-sided weighted local-polynomial engine.

Every estimator in the package reduces to weighted least squares of an
outcome on ``(1, x, ..., x**p)`` on one side of the cutoff, with weights
``w_i * K(x_i / h)``.  The solve goes through a QR factorisation of the
column-equilibrated, weight-scaled design; raw powers of the running variable
are never formed in normal-equation form.

Side convention: centred ``x >= 0`` is the *right* side, ``x < 0`` the left.
An observation sitting exactly on the cutoff therefore belongs to the right.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple

import numpy as np
import pandas as pd
from scipy.linalg import solve_triangular

from .errors import DataError, InsufficientData, SingularDesign

RANK_TOL = 1e-10

LEFT = "left"
RIGHT = "right"


class Kernel(str, Enum):
    TRIANGULAR = "triangular"
    UNIFORM = "uniform"
    EPANECHNIKOV = "epanechnikov"

    @classmethod
    def parse(cls, value: "Kernel | str") -> "Kernel":
        if isinstance(value, cls):
            return value
        aliases = {"tri": "triangular", "uni": "uniform", "rectangular": "uniform",
                   "epa": "epanechnikov"}
        key = str(value).lower()
        return cls(aliases.get(key, key))


def kernel_weight(kernel: Kernel | str, u):
    """Evaluate the kernel at ``u``; scalar in, scalar out."""
    kernel = Kernel.parse(kernel)
    a = np.abs(np.asarray(u, dtype=float))
    if kernel is Kernel.TRIANGULAR:
        out = np.maximum(0.0, 1.0 - a)
    elif kernel is Kernel.UNIFORM:
        out = (a <= 1.0).astype(float)
    else:
        out = np.maximum(0.0, 0.75 * (1.0 - a * a))
    if np.ndim(out) == 0:
        return float(out)
    return out


class Observation(NamedTuple):
    x: float
    y: float
    t: int = 0
    cluster: object = None
    w: float = 1.0


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Sample:
    """Observations around a cutoff, stored column-wise.

    ``x`` is the raw running variable; :attr:`xc` is ``x - cutoff``.  Cluster
    keys are stored as integer codes; their original labels are irrelevant to
    every estimator.
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray | None = None
    cluster: np.ndarray | None = None
    w: np.ndarray | None = None
    cutoff: float = 0.0
    xc: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        x = np.array(self.x, dtype=float).ravel()
        y = np.array(self.y, dtype=float).ravel()
        n = x.size
        if y.size != n:
            raise DataError(f"x has {n} rows but y has {y.size}")
        if not np.all(np.isfinite(x)):
            raise DataError("running variable contains non-finite values")
        if not np.all(np.isfinite(y)):
            raise DataError("outcome contains missing or non-finite values; drop them at ingestion")
        w = np.ones(n) if self.w is None else np.array(self.w, dtype=float).ravel()
        if w.size != n:
            raise DataError("weight column length mismatch")
        if n and not np.all(w > 0):
            raise DataError("sampling weights must be positive")
        t = None
        if self.t is not None:
            t = np.array(self.t, dtype=float).ravel()
            if t.size != n or not np.all(np.isfinite(t)):
                raise DataError("treatment column is missing values or has the wrong length")
        cl = None
        if self.cluster is not None:
            raw = np.asarray(self.cluster).ravel()
            if raw.size != n:
                raise DataError("cluster column length mismatch")
            if raw.dtype.kind in "iu":
                cl = raw.astype(np.int64)
            else:
                codes, _ = pd.factorize(raw, use_na_sentinel=True)
                if np.any(codes < 0):
                    raise DataError("cluster keys contain missing values")
                cl = codes.astype(np.int64)
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "w", _frozen(w))
        object.__setattr__(self, "t", None if t is None else _frozen(t))
        object.__setattr__(self, "cluster", None if cl is None else _frozen(cl))
        object.__setattr__(self, "cutoff", float(self.cutoff))
        object.__setattr__(self, "xc", _frozen(x - float(self.cutoff)))

    # construction ---------------------------------------------------------

    @classmethod
    def from_observations(cls, observations: Iterable[Observation], cutoff: float = 0.0) -> "Sample":
        obs = [Observation(*o) if not isinstance(o, Observation) else o for o in observations]
        clusters = [o.cluster for o in obs]
        has_cl = any(c is not None for c in clusters)
        return cls(
            x=[o.x for o in obs], y=[o.y for o in obs], t=[o.t for o in obs],
            cluster=np.array(clusters, dtype=object) if has_cl else None,
            w=[o.w for o in obs], cutoff=cutoff,
        )

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, x: str, y: str, *, t: str | None = None,
                   cluster: str | None = None, weight: str | None = None,
                   cutoff: float = 0.0) -> "Sample":
        """Build a sample from named columns, dropping rows with missing values."""
        cols = [c for c in (x, y, t, cluster, weight) if c is not None]
        sub = frame.loc[frame[cols].notna().all(axis=1), cols]
        return cls(
            x=sub[x].to_numpy(float), y=sub[y].to_numpy(float),
            t=None if t is None else sub[t].to_numpy(float),
            cluster=None if cluster is None else sub[cluster].to_numpy(),
            w=None if weight is None else sub[weight].to_numpy(float),
            cutoff=cutoff,
        )

    # views ------------------------------------------------------------------

    @property
    def n(self) -> int:
        return int(self.x.size)

    @property
    def has_clusters(self) -> bool:
        return self.cluster is not None

    def side_mask(self, side: str) -> np.ndarray:
        if side == RIGHT:
            return self.xc >= 0
        if side == LEFT:
            return self.xc < 0
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")

    def subset(self, mask) -> "Sample":
        mask = np.asarray(mask)
        return Sample(
            x=self.x[mask], y=self.y[mask],
            t=None if self.t is None else self.t[mask],
            cluster=None if self.cluster is None else self.cluster[mask],
            w=self.w[mask], cutoff=self.cutoff,
        )

    def _copy(self, **changes) -> "Sample":
        fields = dict(x=self.x, y=self.y, t=self.t, cluster=self.cluster, w=self.w,
                      cutoff=self.cutoff)
        fields.update(changes)
        return Sample(**fields)

    def with_cutoff(self, cutoff: float) -> "Sample":
        return self._copy(cutoff=cutoff)

    def with_outcome(self, y) -> "Sample":
        return self._copy(y=y)

    def with_treatment(self, t) -> "Sample":
        return self._copy(t=t)

    def with_clusters(self, cluster) -> "Sample":
        return self._copy(cluster=cluster)

    def with_weights(self, w) -> "Sample":
        return self._copy(w=w)

    def observations(self) -> list[Observation]:
        t = self.t if self.t is not None else np.zeros(self.n)
        cl = self.cluster if self.cluster is not None else [None] * self.n
        return [Observation(float(a), float(b), int(c), d, float(e))
                for a, b, c, d, e in zip(self.x, self.y, t, cl, self.w)]


@dataclass(frozen=True, eq=False)
class LocalFit:
    """One-sided weighted polynomial fit.

    Arrays are restricted to the fitted subsample (positive kernel weight);
    ``index`` maps them back to rows of the originating sample.
    ``influence`` is the ``(p+1, m)`` matrix taking the outcome vector to the
    coefficient vector, so ``coefficients == influence @ y``.
    """

    side: str
    order: int
    bandwidth: float
    kernel: Kernel
    coefficients: np.ndarray
    residuals: np.ndarray
    hat_diagonals: np.ndarray
    kernel_weights: np.ndarray
    weights: np.ndarray
    index: np.ndarray
    x: np.ndarray
    y: np.ndarray
    influence: np.ndarray

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    @property
    def effective_n(self) -> int:
        return int(self.index.size)


class _Solve(NamedTuple):
    coef: np.ndarray        # (k,) in original x units
    influence: np.ndarray   # (k, m) in original x units
    hat: np.ndarray         # (m,)


def weighted_polyfit(x: np.ndarray, y: np.ndarray, w: np.ndarray, order: int,
                     scale: float | None = None) -> _Solve:
    """Weighted least squares of ``y`` on ``(1, x, ..., x**order)``.

    ``w`` must be strictly positive.  The basis is built in ``x / scale`` and
    columns are equilibrated before the QR solve; coefficients are mapped back
    to original units.
    """
    x = np.asarray(x, dtype=float)
    m = x.size
    k = order + 1
    if m < k:
        raise InsufficientData(f"{m} points with positive weight; order {order} needs {k}")
    if scale is None:
        scale = float(np.max(np.abs(x))) if m else 1.0
    if not scale > 0:
        scale = 1.0
    u = x / scale
    U = np.vander(u, k, increasing=True)
    sw = np.sqrt(w)
    Xw = U * sw[:, None]
    norms = np.linalg.norm(Xw, axis=0)
    if np.any(norms == 0):
        raise SingularDesign("a basis column vanishes on the fitted subsample")
    Q, R = np.linalg.qr(Xw / norms, mode="reduced")
    sv = np.linalg.svd(R, compute_uv=False)
    if sv[-1] < RANK_TOL * sv[0]:
        raise SingularDesign(f"design condition {sv[0] / max(sv[-1], 1e-300):.3g} exceeds tolerance")
    # coefficients in original units: beta_j = beta_u_j / (norm_j * scale**j)
    unscale = 1.0 / (norms * scale ** np.arange(k))
    influence = solve_triangular(R, Q.T * sw[None, :]) * unscale[:, None]
    coef = influence @ np.asarray(y, dtype=float)
    hat = np.einsum("ij,ij->i", Q, Q)
    return _Solve(coef, influence, hat)


def _side_window(xc: np.ndarray, side: str, h: float) -> np.ndarray:
    if side == RIGHT:
        return (xc >= 0) & (xc <= h)
    return (xc < 0) & (xc >= -h)


def fit_local_poly(sample: Sample, side: str, p: int, h: float,
                   kernel: Kernel | str = Kernel.TRIANGULAR, use_weights: bool = True,
                   y: np.ndarray | None = None) -> LocalFit:
    """Fit an order-``p`` polynomial on one side of the cutoff with bandwidth ``h``.

    ``y`` optionally replaces the sample outcome (same length as the sample),
    which lets the first stage of a fuzzy design reuse the outcome's kernel
    weights exactly.
    """
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    kernel = Kernel.parse(kernel)
    yy = sample.y if y is None else np.asarray(y, dtype=float)
    xc = sample.xc
    win = np.flatnonzero(_side_window(xc, side, h))
    kw = kernel_weight(kernel, xc[win] / h)
    keep = kw > 0
    idx = win[keep]
    kw = np.asarray(kw)[keep]
    wt = kw * sample.w[idx] if use_weights else kw
    if idx.size < p + 1:
        raise InsufficientData(
            f"{idx.size} observations with positive kernel weight on the {side} side; need {p + 1}")
    xs, ys = xc[idx], yy[idx]
    sol = weighted_polyfit(xs, ys, wt, p, scale=h)
    resid = ys - np.vander(xs, p + 1, increasing=True) @ sol.coef
    return LocalFit(
        side=side, order=p, bandwidth=float(h), kernel=kernel,
        coefficients=_frozen(sol.coef), residuals=_frozen(resid),
        hat_diagonals=_frozen(sol.hat), kernel_weights=_frozen(kw), weights=_frozen(wt),
        index=_frozen(idx), x=_frozen(xs.copy()), y=_frozen(ys.copy()),
        influence=_frozen(sol.influence),
    )


def jump_estimate(left: LocalFit, right: LocalFit) -> float:
    """Right intercept minus left intercept."""
    return right.intercept - left.intercept


__all__ = [
    "Kernel", "kernel_weight", "Observation", "Sample", "LocalFit", "fit_local_poly",
    "jump_estimate", "weighted_polyfit", "LEFT", "RIGHT",
]
