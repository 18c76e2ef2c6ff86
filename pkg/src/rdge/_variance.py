"""Residual adjustments and sandwich aggregation shared by the selector and
the inference layer.

A linear estimator ``theta = sum_i a_i y_i`` has sandwich variance
``sum_i a_i**2 e_i**2`` (heteroskedastic flavours) or
``sum_g (sum_{i in g} a_i e_i)**2`` (clustered), where ``e`` are suitably
adjusted residuals.  Every variance in the package is computed this way from
an influence row ``a`` and a residual vector ``e``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientData, LeverageOne, MissingCluster

FLAVORS = ("hc0", "hc1", "hc2", "hc3", "nn", "cluster")
_ALIASES = {"conventional_hc0": "hc0", "hc3_jackknife": "hc3", "jackknife": "hc3",
            "nearest_neighbor": "nn", "nearest-neighbor": "nn"}
LEVERAGE_TOL = 1e-10


@dataclass(frozen=True)
class VarianceSpec:
    """Which sandwich to use and at what confidence level.

    ``flavor`` is one of ``hc0``, ``hc1``, ``hc2``, ``hc3`` (the jackknife
    approximation), ``nn`` (nearest-neighbour residual variances with
    ``nn_neighbors`` matches) or ``cluster`` (cluster keys are read from the
    sample).  ``small_cluster_correction`` multiplies clustered variances by
    ``G/(G-1) * (n-1)/(n-k)``.
    """

    flavor: str = "nn"
    nn_neighbors: int = 3
    confidence: float = 0.95
    small_cluster_correction: bool = True

    def __post_init__(self):
        flavor = _ALIASES.get(str(self.flavor).lower(), str(self.flavor).lower())
        if flavor not in FLAVORS:
            raise ValueError(f"unknown variance flavor {self.flavor!r}; expected one of {FLAVORS}")
        object.__setattr__(self, "flavor", flavor)
        if self.nn_neighbors < 1:
            raise ValueError("nearest-neighbour variance needs at least one neighbour")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence level must lie in (0, 1)")

    @property
    def clustered(self) -> bool:
        return self.flavor == "cluster"


def nn_residuals(x: np.ndarray, y: np.ndarray, neighbors: int = 3) -> np.ndarray:
    """Nearest-neighbour residuals ``sqrt(J/(J+1)) * (y_i - mean of J nearest y)``.

    Neighbours are the ``J`` other observations closest in ``x``; among
    candidates at equal distance the lower observation index wins.  Residuals
    are averaged differences, so neighbours with identical ``y`` give an exact
    zero.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    m = x.size
    if m < 2:
        return np.zeros(m)
    J = min(neighbors, m - 1)
    rows = np.arange(m)
    order = np.lexsort((rows, x))
    xs, ys = x[order], y[order]
    offsets = np.concatenate([np.arange(-J, 0), np.arange(1, J + 1)])
    pos = rows[:, None] + offsets[None, :]
    valid = (pos >= 0) & (pos < m)
    posc = np.clip(pos, 0, m - 1)
    dist = np.where(valid, np.abs(xs[posc] - xs[:, None]), np.inf)
    # the J smallest distances always lie within J sorted positions
    dJ = np.sort(dist, axis=1)[:, J - 1]
    closer = dist < dJ[:, None]
    need = J - closer.sum(axis=1)
    diff_sum = np.where(closer, ys[:, None] - ys[posc], 0.0).sum(axis=1)

    # candidates at exactly distance dJ sit in at most two runs of equal x
    tie = valid & (dist == dJ[:, None])
    zero = dJ == 0
    left_tie = tie & (offsets < 0)[None, :]
    right_tie = tie & (offsets > 0)[None, :]
    has_l = left_tie.any(axis=1) | zero
    has_r = right_tie.any(axis=1) & ~zero
    v_l = np.where(zero, xs, xs[posc[rows, np.argmax(left_tie, axis=1)]])
    v_r = xs[posc[rows, np.argmax(right_tie, axis=1)]]
    k = np.arange(J + 1)
    runs = []
    for v, has in ((v_l, has_l), (v_r, has_r)):
        lo = np.searchsorted(xs, v, side="left")
        hi = np.searchsorted(xs, v, side="right")
        cand = lo[:, None] + k[None, :]
        ok = has[:, None] & (cand < hi[:, None]) & (cand != rows[:, None])
        runs.append((cand, ok))
    cand = np.concatenate([runs[0][0], runs[1][0]], axis=1)
    ok = np.concatenate([runs[0][1], runs[1][1]], axis=1)
    candc = np.clip(cand, 0, m - 1)
    key = np.where(ok, order[candc], np.iinfo(np.int64).max)
    pick = np.argsort(key, axis=1, kind="stable")
    chosen = np.take_along_axis(candc, pick, axis=1)
    take = np.arange(cand.shape[1])[None, :] < need[:, None]
    diff_sum += np.where(take, ys[:, None] - ys[chosen], 0.0).sum(axis=1)

    out = np.empty(m)
    out[order] = np.sqrt(J / (J + 1.0)) * diff_sum / J
    return out


def adjust_residuals(resid: np.ndarray, hat: np.ndarray | None, flavor: str, k: int,
                     index: np.ndarray | None = None) -> np.ndarray:
    """Apply the HC0-HC3 residual scaling. ``cluster`` uses raw residuals."""
    resid = np.asarray(resid, dtype=float)
    m = resid.size
    if flavor in ("hc0", "cluster", "nn"):
        return resid
    if flavor == "hc1":
        if m <= k:
            raise InsufficientData(f"HC1 needs more than {k} observations, have {m}")
        return resid * np.sqrt(m / (m - k))
    one_minus = 1.0 - np.asarray(hat, dtype=float)
    bad = np.flatnonzero(one_minus <= LEVERAGE_TOL)
    if bad.size:
        where = int(bad[0]) if index is None else int(index[bad[0]])
        raise LeverageOne(where)
    if flavor == "hc2":
        return resid / np.sqrt(one_minus)
    return resid / one_minus


def aggregate(a: np.ndarray, e: np.ndarray, clusters: np.ndarray | None = None,
              k: int = 1, correction: bool = True) -> float:
    """Sandwich variance of ``sum a_i y_i`` given adjusted residuals ``e``.

    With ``clusters`` the scores ``a_i e_i`` are summed within cluster first.
    Only rows with ``a_i != 0`` count toward ``n`` and ``G`` in the
    small-sample correction.
    """
    s = np.asarray(a, dtype=float) * np.asarray(e, dtype=float)
    if clusters is None:
        return float(np.dot(s, s))
    used = np.asarray(a) != 0
    codes = np.asarray(clusters)[used]
    if codes.size == 0:
        return 0.0
    _, inv = np.unique(codes, return_inverse=True)
    sums = np.bincount(inv, weights=s[used])
    v = float(np.dot(sums, sums))
    if correction:
        G = sums.size
        n = int(used.sum())
        if G > 1 and n > k:
            v *= G / (G - 1.0) * (n - 1.0) / (n - k)
    return v


def require_clusters(clusters):
    if clusters is None:
        raise MissingCluster("clustered variance requested but the sample carries no cluster keys")
    return clusters
