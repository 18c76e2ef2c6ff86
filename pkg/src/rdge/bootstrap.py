"""Seeded nonparametric bootstrap with iid or cluster resampling.

Replication ``i`` draws from ``numpy.random.default_rng([seed, i])``, so the
replication stream does not depend on how replications are scheduled across
workers.  Results are folded in replication order.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
import pandas as pd

from .core import Sample
from .errors import AllReplicationsFailed, MissingCluster, RdgeError

log = logging.getLogger(__name__)

Statistic = Callable[[object], "float | Mapping[str, float]"]


@dataclass(frozen=True)
class BootstrapPlan:
    """Replication count, resampling scheme and seed.

    ``resampling`` is ``"iid"`` or ``"by_cluster"``.  For data frames,
    ``cluster_key`` names the cluster column; samples use their own cluster
    codes.  ``statistic`` maps a resampled data set to a float or a mapping of
    named floats.
    """

    statistic: Statistic
    replications: int = 1500
    resampling: str = "iid"
    seed: int = 0
    cluster_key: str | None = None

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("need at least one replication")
        if self.resampling not in ("iid", "by_cluster"):
            raise ValueError(f"unknown resampling scheme {self.resampling!r}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class BootstrapSummary:
    point: float
    se: float
    median: float
    p_one_sided: float
    n_failed: int
    replications: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _cluster_codes(data, key):
    if isinstance(data, Sample):
        if data.cluster is None:
            raise MissingCluster("cluster resampling needs cluster keys on the sample")
        return np.asarray(data.cluster)
    if key is None or key not in data.columns:
        raise MissingCluster(f"cluster column {key!r} not found")
    col = data[key]
    if col.isna().any():
        raise MissingCluster(f"cluster column {key!r} has missing values")
    return pd.factorize(col)[0]


def _rows(data):
    return data.n if isinstance(data, Sample) else len(data)


def _take(data, idx: np.ndarray):
    if isinstance(data, Sample):
        return data.subset(idx)
    return data.iloc[idx].reset_index(drop=True)


def resample_indices(n: int, rng: np.random.Generator, clusters: np.ndarray | None = None) -> np.ndarray:
    """Row indices of one bootstrap draw.

    With ``clusters``, ``G`` clusters are drawn with replacement and each
    contributes all of its rows in original order.
    """
    if clusters is None:
        return rng.integers(0, n, size=n)
    codes, inv = np.unique(clusters, return_inverse=True)
    G = codes.size
    order = np.argsort(inv, kind="stable")
    starts = np.searchsorted(inv[order], np.arange(G))
    ends = np.append(starts[1:], n)
    picks = rng.integers(0, G, size=G)
    return np.concatenate([order[starts[g]:ends[g]] for g in picks])


def resample(data, resampling: str, rng: np.random.Generator, cluster_key: str | None = None):
    """One bootstrap draw of a :class:`Sample` or data frame.

    Rows are copied verbatim, including their original cluster keys, so a
    cluster drawn twice appears as two copies under the same key.
    """
    clusters = _cluster_codes(data, cluster_key) if resampling == "by_cluster" else None
    return _take(data, resample_indices(_rows(data), rng, clusters))


def _as_mapping(value) -> dict[str, float]:
    if isinstance(value, Mapping):
        return {str(k): float(v) for k, v in value.items()}
    return {"statistic": float(value)}


def _one(args):
    data, plan, i = args
    rng = np.random.default_rng([int(plan.seed), i])
    try:
        return _as_mapping(plan.statistic(resample(data, plan.resampling, rng, plan.cluster_key)))
    except (RdgeError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        return exc


def sign_p_value(point: float, draws: np.ndarray) -> float:
    """Share of draws with sign opposite ``point``; exact zeros count half."""
    if draws.size == 0 or point == 0 or not np.isfinite(point):
        return float("nan")
    opposite = np.sum(np.sign(draws) == -np.sign(point))
    ties = np.sum(draws == 0)
    return float((opposite + 0.5 * ties) / draws.size)


def summarize(point: float, draws) -> BootstrapSummary:
    draws = np.asarray(draws, dtype=float)
    ok = draws[np.isfinite(draws)]
    failed = draws.size - ok.size
    se = float(np.std(ok, ddof=1)) if ok.size > 1 else (0.0 if ok.size else float("nan"))
    med = float(np.median(ok)) if ok.size else float("nan")
    p = sign_p_value(point, ok)
    if p != p and point == 0 and ok.size:
        p = 0.0 if np.all(ok == 0) else float("nan")
    return BootstrapSummary(float(point), se, med, p, int(failed), int(draws.size))


def run_bootstrap(data, plan: BootstrapPlan, workers: int = 1,
                  executor: str = "thread") -> dict[str, BootstrapSummary]:
    """Recompute ``plan.statistic`` on resampled data; one summary per output.

    The statistic is computed end to end in every replication, so anything it
    does internally (bandwidth selection included) is redone.  Replications
    that raise an estimation error are counted in ``n_failed`` and excluded
    from the moments; if all fail, :class:`AllReplicationsFailed` is raised.
    ``executor`` is ``"thread"`` or ``"process"`` (the statistic must then be
    picklable).
    """
    point = _as_mapping(plan.statistic(data))
    jobs = [(data, plan, i) for i in range(plan.replications)]
    if workers <= 1:
        results = [_one(j) for j in jobs]
    else:
        pool_cls = ProcessPoolExecutor if executor == "process" else ThreadPoolExecutor
        with pool_cls(max_workers=workers) as pool:
            results = list(pool.map(_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    good = [r for r in results if not isinstance(r, BaseException)]
    n_failed = len(results) - len(good)
    if not good:
        raise AllReplicationsFailed(f"all {plan.replications} replications failed; "
                                    f"first error: {results[0]!r}")
    if n_failed:
        msg = f"{n_failed} of {plan.replications} bootstrap replications failed and were dropped"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        log.warning(msg)
    out = {}
    for name, value in point.items():
        draws = np.array([r.get(name, np.nan) if not isinstance(r, BaseException) else np.nan
                          for r in results])
        s = summarize(value, draws)
        out[name] = s
    return out
