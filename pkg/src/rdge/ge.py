"""Skill premia, general-equilibrium effects and elasticities of substitution.

Notation: ``a`` is an age group (``young``/``old``), ``s``/``u`` the skilled
and unskilled, ``D`` the treatment regime and ``Delta`` a treated-minus-
untreated difference.  Mean log wages decompose as

    Delta logw_a = l_{s,1} Delta logw_s + l_{u,1} Delta logw_u + Delta l_s * beta_0
                 = l_{s,0} Delta logw_s + l_{u,0} Delta logw_u + Delta l_s * beta_1

with ``beta_D = logw_{s,D} - logw_{u,D}``.  The ``decomposition`` method solves these for
``beta_0`` and ``beta_1``; the ``revised`` method reads them off directly from
levels built as ``level -/+ Delta/2``.  Both give
``beta_1 - beta_0 = Delta logw_s - Delta logw_u`` whenever the share levels
satisfy ``l_{s,1} - l_{s,0} = Delta l_s``.

The CES premium model behind the elasticities is

    Delta beta_a = Delta log(theta_s/theta_u)
                   + (1/sigma_A - 1/sigma_E) Delta log(L_s/L_u)
                   - (1/sigma_A) Delta log(l_as/l_au).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping

import numpy as np
import pandas as pd

from .core import Kernel, Sample, kernel_weight
from .errors import (DegenerateDenominator, DegenerateShareChange, EmptyCell, InsufficientData,
                     ZeroSchoolingGap)

log = logging.getLogger(__name__)

AGES = ("young", "old")
SKILLS = ("s", "u")
METHODS = ("decomposition", "revised")
MAX_AGE = 75


@dataclass(frozen=True)
class CellAggregates:
    """Per-cell means keyed by ``(age, skill, D)``.

    ``share[(a, s, D)]`` is the fraction of age group ``a``'s workers in
    regime ``D`` who are in skill cell ``s``; ``logw_age[(a, D)]`` is the
    age-group mean log wage.  ``labor_share[D]`` is the skilled share pooled
    over ages, used for the aggregate skill ratio.  ``source`` records whether
    the levels are subsample means or kernel-mean splits.
    """

    logw: Mapping[tuple, float]
    share: Mapping[tuple, float]
    schooling: Mapping[tuple, float]
    logw_age: Mapping[tuple, float]
    labor_share: Mapping[int, float] = field(default_factory=dict)
    counts: Mapping[tuple, int] = field(default_factory=dict)
    ages: tuple[str, ...] = AGES
    source: str = "subsample"

    def __post_init__(self):
        for key, v in self.share.items():
            if not 0 <= v <= 1:
                raise ValueError(f"share {key} = {v} outside [0, 1]")

    def premium(self, age: str, D: int) -> float:
        return self.logw[(age, "s", D)] - self.logw[(age, "u", D)]

    def schooling_gap(self, age: str, D: int) -> float:
        return self.schooling[(age, "s", D)] - self.schooling[(age, "u", D)]

    def log_share_ratio(self, age: str, D: int) -> float:
        return float(np.log(self.share[(age, "s", D)] / self.share[(age, "u", D)]))


def _wmean(v, w):
    return float(np.sum(v * w) / np.sum(w))


def cell_aggregates(frame: pd.DataFrame, skill_cut: float = 8, young_cut: float = 35, *,
                    weight: str | None = None, ages: tuple[str, ...] = AGES,
                    age: str = "age", schooling: str = "schooling", wage: str = "wage",
                    treatment: str = "treatment") -> CellAggregates:
    """Subsample means per cell for wage earners aged at most 75.

    Skilled means ``schooling >= skill_cut``; young means ``age < young_cut``.
    Only rows with a positive wage enter any aggregate, schooling included.
    All aggregates are (optionally weighted) means.
    """
    df = frame[(frame[age] <= MAX_AGE) & (frame[wage] > 0)]
    if df[treatment].isna().any():
        df = df[df[treatment].notna()]
    w_all = df[weight].to_numpy(float) if weight else np.ones(len(df))
    group = np.where(df[age].to_numpy() < young_cut, "young", "old")
    skill = np.where(df[schooling].to_numpy() >= skill_cut, "s", "u")
    D = df[treatment].to_numpy().astype(int)
    lw = np.log(df[wage].to_numpy(float))
    sch = df[schooling].to_numpy(float)
    logw, share, school, logw_age, counts = {}, {}, {}, {}, {}
    for a in ages:
        for d in (0, 1):
            in_ad = (group == a) & (D == d)
            for s in SKILLS:
                m = in_ad & (skill == s)
                counts[(a, s, d)] = int(m.sum())
                if not m.any():
                    raise EmptyCell(f"no wage earners in cell age={a}, skill={s}, D={d}")
                logw[(a, s, d)] = _wmean(lw[m], w_all[m])
                school[(a, s, d)] = _wmean(sch[m], w_all[m])
                share[(a, s, d)] = float(w_all[m].sum() / w_all[in_ad].sum())
            logw_age[(a, d)] = _wmean(lw[in_ad], w_all[in_ad])
    pooled = {}
    for d in (0, 1):
        m = D == d
        pooled[d] = float(w_all[m & (skill == "s")].sum() / w_all[m].sum())
    return CellAggregates(logw, share, school, logw_age, pooled, counts, tuple(ages))


def accounting_identity_check(agg: CellAggregates) -> dict[str, float]:
    """Absolute residuals of both wage decompositions and of the share sums."""
    out = {}
    for a in agg.ages:
        ls1, lu1 = agg.share[(a, "s", 1)], agg.share[(a, "u", 1)]
        ls0, lu0 = agg.share[(a, "s", 0)], agg.share[(a, "u", 0)]
        d_age = agg.logw_age[(a, 1)] - agg.logw_age[(a, 0)]
        d_s = agg.logw[(a, "s", 1)] - agg.logw[(a, "s", 0)]
        d_u = agg.logw[(a, "u", 1)] - agg.logw[(a, "u", 0)]
        d_ls = ls1 - ls0
        out[f"{a}_eq1"] = abs(d_age - (ls1 * d_s + lu1 * d_u + d_ls * agg.premium(a, 0)))
        out[f"{a}_eq2"] = abs(d_age - (ls0 * d_s + lu0 * d_u + d_ls * agg.premium(a, 1)))
        out[f"{a}_shares"] = max(abs(ls1 + lu1 - 1), abs(ls0 + lu0 - 1))
    return out


@dataclass(frozen=True)
class DeltaInputs:
    """Treated-minus-untreated differences, typically fuzzy RDD estimates.

    Old-cohort fields are needed only for the elasticities; schooling fields
    only for per-year scaling with split levels.  ``provenance`` maps each
    field name to a description of the estimate behind it.
    """

    logw_y: float
    logw_sy: float
    logw_uy: float
    share_sy: float
    logw_o: float = float("nan")
    logw_so: float = float("nan")
    logw_uo: float = float("nan")
    share_so: float = float("nan")
    school_sy: float = float("nan")
    school_uy: float = float("nan")
    labor_share: float = float("nan")
    log_theta_ratio: float = 0.0
    provenance: Mapping[str, dict] = field(default_factory=dict)

    def for_age(self, age: str) -> tuple[float, float, float, float]:
        if age == "young":
            return self.logw_y, self.logw_sy, self.logw_uy, self.share_sy
        return self.logw_o, self.logw_so, self.logw_uo, self.share_so


@dataclass(frozen=True)
class GeEstimates:
    beta0: float
    beta1: float
    delta_beta: float
    method: str
    beta0_per_year: float = float("nan")
    beta1_per_year: float = float("nan")
    delta_beta_per_year: float = float("nan")
    sigma_A: float = float("nan")
    sigma_E: float = float("nan")
    identity_gap: float = 0.0
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["notes"] = list(self.notes)
        return d

    def statistics(self) -> dict[str, float]:
        keys = ("beta0", "beta1", "delta_beta", "beta0_per_year", "beta1_per_year",
                "delta_beta_per_year", "sigma_A", "sigma_E")
        return {k: getattr(self, k) for k in keys}


def eq5(deltas: DeltaInputs, age: str = "young") -> float:
    _, d_s, d_u, _ = deltas.for_age(age)
    return d_s - d_u


def decomposition_premia(deltas: DeltaInputs, agg: CellAggregates, age: str = "young",
               tol: float = 1e-9) -> GeEstimates:
    """Premia solved from the two decompositions, plus the direct difference.

    Share levels come from ``agg``; when their difference disagrees with
    ``deltas.share_sy`` the two routes to the GE effect part ways, which is
    reported as ``identity_gap`` with a warning.
    """
    d_age, d_s, d_u, d_ls = deltas.for_age(age)
    if d_ls == 0:
        raise DegenerateShareChange(f"share change for age group {age} is exactly zero")
    ls1, lu1 = agg.share[(age, "s", 1)], agg.share[(age, "u", 1)]
    ls0, lu0 = agg.share[(age, "s", 0)], agg.share[(age, "u", 0)]
    beta0 = (d_age - ls1 * d_s - lu1 * d_u) / d_ls
    beta1 = (d_age - ls0 * d_s - lu0 * d_u) / d_ls
    delta = d_s - d_u
    gap = (beta1 - beta0) - delta
    notes = []
    if abs(gap) > tol * max(1.0, abs(delta)):
        msg = (f"share levels differ by {ls1 - ls0:.6g} but the estimated share change is "
               f"{d_ls:.6g}; premia difference misses the direct GE effect by {gap:.3g}")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        log.warning(msg)
        notes.append(msg)
    return GeEstimates(beta0, beta1, delta, "decomposition", identity_gap=float(gap), notes=tuple(notes))


def revised_premia(agg: CellAggregates, age: str = "young") -> GeEstimates:
    """Premia read off directly as skilled minus unskilled mean log wage."""
    b0, b1 = agg.premium(age, 0), agg.premium(age, 1)
    return GeEstimates(b0, b1, b1 - b0, "revised")


def per_year(ge: GeEstimates, agg: CellAggregates, method: str | None = None,
             age: str = "young") -> GeEstimates:
    """Scale premia by schooling gaps.

    ``decomposition`` divides all three by the untreated gap; ``revised`` divides each
    regime's premium by its own gap and differences the results.
    """
    method = method or ge.method
    gap0 = agg.schooling_gap(age, 0)
    if method == "decomposition":
        if gap0 == 0:
            raise ZeroSchoolingGap("untreated skilled-unskilled schooling gap is zero")
        return replace(ge, beta0_per_year=ge.beta0 / gap0, beta1_per_year=ge.beta1 / gap0,
                       delta_beta_per_year=ge.delta_beta / gap0)
    if method != "revised":
        raise ValueError(f"unknown method {method!r}")
    gap1 = agg.schooling_gap(age, 1)
    if gap0 == 0 or gap1 == 0:
        raise ZeroSchoolingGap(f"schooling gap is zero (untreated {gap0}, treated {gap1})")
    b0, b1 = ge.beta0 / gap0, ge.beta1 / gap1
    return replace(ge, beta0_per_year=b0, beta1_per_year=b1, delta_beta_per_year=b1 - b0)


def _delta_log_ratio(agg: CellAggregates, age: str) -> float:
    return agg.log_share_ratio(age, 1) - agg.log_share_ratio(age, 0)


def _delta_log_labor(agg: CellAggregates) -> float:
    l1, l0 = agg.labor_share[1], agg.labor_share[0]
    return float(np.log(l1 / (1 - l1)) - np.log(l0 / (1 - l0)))


def _invert(x: float) -> float:
    return float("inf") if x == 0 else 1.0 / x


def elasticities(deltas: DeltaInputs, agg: CellAggregates, method: str = "revised") -> tuple[float, float]:
    """``(sigma_A, sigma_E)`` from the young/old premium changes.

    ``decomposition`` assumes the old cohort's skill ratio is unchanged by treatment;
    ``revised`` keeps that term in both the age-difference equation and the
    old-cohort equation used for ``sigma_E``.  A zero inverse elasticity is
    reported as ``inf``.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    db_y, db_o = eq5(deltas, "young"), eq5(deltas, "old")
    dl_y = _delta_log_ratio(agg, "young")
    dl_o = _delta_log_ratio(agg, "old") if method == "revised" else 0.0
    denom = dl_y - dl_o
    if denom == 0 or not np.isfinite(denom):
        raise DegenerateDenominator("young-minus-old change in log skill ratio is zero")
    inv_A = -(db_y - db_o) / denom
    dL = _delta_log_labor(agg)
    if dL == 0 or not np.isfinite(dL):
        raise DegenerateDenominator("change in aggregate log skill ratio is zero")
    inv_E = inv_A - (db_o - deltas.log_theta_ratio + inv_A * dl_o) / dL
    return _invert(inv_A), _invert(inv_E)


def kernel_weighted_mean(sample: Sample, h: float, kernel: Kernel | str = Kernel.TRIANGULAR,
                         use_weights: bool = True) -> float:
    """``sum w K v / sum w K`` over observations within ``h`` of the cutoff."""
    k = kernel_weight(kernel, sample.xc / h)
    if use_weights:
        k = k * sample.w
    total = k.sum()
    if total <= 0:
        raise InsufficientData("no observations carry kernel weight")
    return float(np.dot(k, sample.y) / total)


def revised_level_split(sample: Sample, delta: float, h: float,
                        kernel: Kernel | str = Kernel.TRIANGULAR,
                        use_weights: bool = True) -> tuple[float, float]:
    """Untreated and treated levels ``level -/+ delta/2`` around the kernel mean."""
    level = kernel_weighted_mean(sample, h, kernel, use_weights)
    return level - delta / 2, level + delta / 2


def estimate(deltas: DeltaInputs, agg: CellAggregates, method: str = "revised") -> GeEstimates:
    """Premia, per-year premia and elasticities for one method."""
    if method == "decomposition":
        ge = decomposition_premia(deltas, agg)
    elif method == "revised":
        ge = revised_premia(agg)
    else:
        raise ValueError(f"unknown method {method!r}")
    notes = list(ge.notes)
    try:
        ge = per_year(ge, agg, method)
    except ZeroSchoolingGap as exc:
        notes.append(str(exc))
    if "old" in agg.ages and np.isfinite(eq5(deltas, "old")):
        try:
            sa, se = elasticities(deltas, agg, method)
            ge = replace(ge, sigma_A=sa, sigma_E=se)
        except DegenerateDenominator as exc:
            notes.append(str(exc))
    return replace(ge, notes=tuple(notes))
