"""Input files, district lineage, intention-to-treat and person-level variables.

File schemas (UTF-8 CSV with a header row, ``.`` as decimal separator,
literacy as a fraction in [0, 1]):

``districts.csv``
    district_id, name, female_literacy_1991, population_1991, treatment
    (0/1, may be blank); any further numeric columns are kept as covariates.
``lineage.csv``
    child_id, parent_id, population_contribution (fraction of the child's
    population coming from the parent; sums to 1 per child).
``persons.csv``
    district_id (child id), age, schooling_raw, literate_without_schooling
    (0/1), activity_wages (``;``-separated wage amounts), week_fraction in
    (0, 1], survey_weight (> 0).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .errors import DataError, MalformedRows

DEFAULT_THRESHOLD = 0.3929
SD_THRESHOLD = 0.01
DE_MINIMIS = 0.99
CONTRIBUTION_TOL = 1e-6
YOUNG_CUT = 35
MAX_AGE = 75
SKILL_CUT = 8

DISTRICT_COLUMNS = ("district_id", "name", "female_literacy_1991", "population_1991")
LINEAGE_COLUMNS = ("child_id", "parent_id", "population_contribution")
PERSON_COLUMNS = ("district_id", "age", "schooling_raw", "literate_without_schooling",
                  "activity_wages", "week_fraction", "survey_weight")


def national_rate(numerator: int, denominator: int) -> float:
    """Exact ratio of two counts."""
    if denominator == 0:
        raise ZeroDivisionError("denominator count is zero")
    if numerator < 0 or denominator < 0:
        raise ValueError("counts must be nonnegative")
    return numerator / denominator


def assign_itt(literacy, threshold: float = DEFAULT_THRESHOLD):
    """1 where literacy is strictly below ``threshold``, else 0; NaN stays NaN."""
    lit = np.asarray(literacy, dtype=float)
    out = np.where(np.isnan(lit), np.nan, (lit < threshold).astype(float))
    return int(out) if out.ndim == 0 and not np.isnan(out) else out


# ---------------------------------------------------------------------------
# lineage


@dataclass(frozen=True)
class DistrictRecord:
    district_id: str
    name: str
    female_literacy_1991: float
    population_1991: float
    treatment: float | None = None
    covariates: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.female_literacy_1991 <= 1:
            raise DataError(f"district {self.district_id}: literacy {self.female_literacy_1991} "
                            "is not a fraction in [0, 1]")
        if not self.population_1991 > 0:
            raise DataError(f"district {self.district_id}: population must be positive")


@dataclass(frozen=True)
class LineageEdge:
    child_id: str
    parent_id: str
    population_contribution: float


@dataclass(frozen=True)
class Assignment:
    """Linked literacy for one child district; NaN literacy means excluded."""

    child_id: str
    literacy: float
    retained: bool
    reason: str
    n_parents: int
    weighted_sd: float
    treatment: float | None
    parent_id: str


def link_districts(records: Iterable[DistrictRecord], edges: Iterable[LineageEdge],
                   sd_threshold: float = SD_THRESHOLD,
                   de_minimis: float = DE_MINIMIS) -> dict[str, Assignment]:
    """Literacy per child district from its parents.

    A child with several parents is retained at the contribution-weighted
    mean literacy when the weighted standard deviation of parent literacy is
    below ``sd_threshold`` or one parent contributes at least ``de_minimis``
    of its population; otherwise it is excluded (missing, never untreated).
    Treatment is taken from the largest contributor.  Edges are processed in
    sorted parent order, so results do not depend on input order.
    """
    parents = {str(r.district_id): r for r in records}
    by_child: dict[str, list[LineageEdge]] = {}
    for e in edges:
        if str(e.parent_id) not in parents:
            raise DataError(f"lineage edge {e.child_id} <- {e.parent_id}: unknown parent district")
        if not 0 < e.population_contribution <= 1 + CONTRIBUTION_TOL:
            raise DataError(f"lineage edge {e.child_id} <- {e.parent_id}: contribution "
                            f"{e.population_contribution} outside (0, 1]")
        by_child.setdefault(str(e.child_id), []).append(e)
    out = {}
    for child in sorted(by_child):
        es = sorted(by_child[child], key=lambda e: str(e.parent_id))
        wts = np.array([e.population_contribution for e in es], dtype=float)
        if abs(math.fsum(wts) - 1) > CONTRIBUTION_TOL:
            raise DataError(f"child district {child}: contributions sum to {math.fsum(wts):.8g}, not 1")
        lit = np.array([parents[str(e.parent_id)].female_literacy_1991 for e in es])
        mean = math.fsum(wts * lit) / math.fsum(wts)
        sd = math.sqrt(math.fsum(wts * (lit - mean) ** 2) / math.fsum(wts))
        top = int(np.argmax(wts))  # first maximum, i.e. lowest parent id on ties
        top_parent = parents[str(es[top].parent_id)]
        if len(es) == 1:
            keep, reason = True, "single_parent"
        elif wts[top] >= de_minimis:
            keep, reason = True, "de_minimis"
        elif sd < sd_threshold:
            keep, reason = True, "low_dispersion"
        else:
            keep, reason = False, "parent_literacy_dispersion"
        out[child] = Assignment(child, mean if keep else float("nan"), keep, reason, len(es), sd,
                                top_parent.treatment if keep else None, str(top_parent.district_id))
    return out


# ---------------------------------------------------------------------------
# file readers


def _read_csv(path, required: tuple[str, ...]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: cannot parse CSV ({exc})") from exc
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    return df


def _num(value: str) -> float:
    value = value.strip()
    if value == "":
        return float("nan")
    return float(value)


def _line(i: int) -> int:
    # header is line 1
    return i + 2


def read_districts(path) -> list[DistrictRecord]:
    df = _read_csv(path, DISTRICT_COLUMNS)
    extra = [c for c in df.columns if c not in DISTRICT_COLUMNS and c != "treatment"]
    out, problems = [], []
    for i, row in enumerate(df.to_dict("records")):
        try:
            lit = _num(row["female_literacy_1991"])
            if lit > 1:
                raise DataError(f"literacy {lit} > 1 looks like a percentage; supply fractions")
            t = _num(row.get("treatment", ""))
            if t == t and t not in (0.0, 1.0):
                raise DataError(f"treatment {t} is not 0/1")
            cov = {c: _num(row[c]) for c in extra}
            out.append(DistrictRecord(row["district_id"], row["name"], lit,
                                      _num(row["population_1991"]), None if t != t else t, cov))
        except (ValueError, DataError) as exc:
            problems.append((_line(i), str(exc)))
    if problems:
        raise MalformedRows(str(path), problems)
    return out


def read_lineage(path) -> list[LineageEdge]:
    df = _read_csv(path, LINEAGE_COLUMNS)
    out, problems = [], []
    for i, row in enumerate(df.to_dict("records")):
        try:
            c = _num(row["population_contribution"])
            if not c == c:
                raise ValueError("blank contribution")
            out.append(LineageEdge(row["child_id"], row["parent_id"], c))
        except ValueError as exc:
            problems.append((_line(i), str(exc)))
    if problems:
        raise MalformedRows(str(path), problems)
    return out


@dataclass(frozen=True)
class PersonRecord:
    district_id: str
    age: float
    schooling_raw: float
    literate_without_schooling: bool
    activity_wages: tuple[float, ...]
    week_fraction: float
    survey_weight: float
    line: int = 0

    def __post_init__(self):
        if not 0 < self.week_fraction <= 1:
            raise DataError(f"week fraction {self.week_fraction} outside (0, 1]")
        if not self.survey_weight > 0:
            raise DataError(f"survey weight {self.survey_weight} must be positive")
        if not self.age >= 0:
            raise DataError(f"age {self.age} invalid")
        if any(not (w >= 0) for w in self.activity_wages):
            raise DataError("activity wages must be nonnegative numbers")


def read_persons(path) -> list[PersonRecord]:
    df = _read_csv(path, PERSON_COLUMNS)
    out, problems = [], []
    for i, row in enumerate(df.to_dict("records")):
        try:
            wages = tuple(_num(v) for v in row["activity_wages"].split(";") if v.strip() != "")
            flag = row["literate_without_schooling"].strip()
            if flag not in ("0", "1", ""):
                raise DataError(f"literate_without_schooling must be 0/1, got {flag!r}")
            out.append(PersonRecord(row["district_id"], _num(row["age"]), _num(row["schooling_raw"]),
                                    flag == "1", wages, _num(row["week_fraction"]),
                                    _num(row["survey_weight"]), _line(i)))
        except (ValueError, DataError) as exc:
            problems.append((_line(i), str(exc)))
    if problems:
        raise MalformedRows(str(path), problems)
    return out


# ---------------------------------------------------------------------------
# person sample


@dataclass
class ExclusionReport:
    input_rows: int = 0
    output_rows: int = 0
    excluded: dict[str, int] = field(default_factory=dict)
    excluded_districts: dict[str, str] = field(default_factory=dict)

    def add(self, reason: str, k: int = 1) -> None:
        self.excluded[reason] = self.excluded.get(reason, 0) + k

    def balanced(self) -> bool:
        return self.input_rows == self.output_rows + sum(self.excluded.values())

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2), encoding="utf-8")


def schooling_years(raw: float, literate_without_schooling: bool,
                    mapping: Mapping[float, float] | None = None) -> float:
    """Years of schooling from a raw code; literate-without-schooling counts as 0."""
    if literate_without_schooling:
        return 0.0
    if mapping is None:
        return float(raw)
    if raw not in mapping:
        raise DataError(f"unknown schooling code {raw!r}")
    return float(mapping[raw])


def person_wage(activity_wages: Iterable[float], week_fraction: float) -> float:
    """Wages summed over all activities, scaled to a full week."""
    if not 0 < week_fraction <= 1:
        raise DataError(f"week fraction {week_fraction} outside (0, 1]")
    return math.fsum(activity_wages) / week_fraction


def build_person_sample(persons: Iterable[PersonRecord], assignments: Mapping[str, Assignment],
                        threshold: float = DEFAULT_THRESHOLD,
                        schooling_map: Mapping[float, float] | None = None,
                        ) -> tuple[pd.DataFrame, ExclusionReport]:
    """One row per usable person, plus an itemized account of dropped rows.

    Columns: district_id, literacy, itt, treatment, age, age_group, schooling,
    skilled, wage, log_wage (NaN unless wage > 0), weight, line.
    """
    rep = ExclusionReport()
    rows = []
    for p in persons:
        rep.input_rows += 1
        a = assignments.get(str(p.district_id))
        if a is None:
            rep.add("unlinked_district")
            continue
        if not a.retained:
            rep.add("district_excluded_by_lineage")
            rep.excluded_districts[a.child_id] = a.reason
            continue
        if p.age > MAX_AGE:
            rep.add("age_over_75")
            continue
        if schooling_map is not None and not p.literate_without_schooling and p.schooling_raw not in schooling_map:
            rep.add("unknown_schooling_code")
            continue
        school = schooling_years(p.schooling_raw, p.literate_without_schooling, schooling_map)
        if not np.isfinite(school):
            rep.add("missing_schooling")
            continue
        wage = person_wage(p.activity_wages, p.week_fraction)
        rows.append({
            "district_id": str(p.district_id),
            "literacy": a.literacy,
            "itt": float(a.literacy < threshold),
            "treatment": np.nan if a.treatment is None else float(a.treatment),
            "age": p.age,
            "age_group": "young" if p.age < YOUNG_CUT else "old",
            "schooling": school,
            "skilled": float(school >= SKILL_CUT),
            "wage": wage,
            "log_wage": math.log(wage) if wage > 0 else np.nan,
            "weight": p.survey_weight,
            "line": p.line,
        })
    rep.output_rows = len(rows)
    cols = ["district_id", "literacy", "itt", "treatment", "age", "age_group", "schooling",
            "skilled", "wage", "log_wage", "weight", "line"]
    return pd.DataFrame(rows, columns=cols), rep


def trim_weights(weights) -> np.ndarray:
    """Cap weights at ``median + 5 * IQR`` (quartiles by linear interpolation)."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        return w.copy()
    if not np.all(w > 0):
        raise DataError("weights must be positive")
    q1, med, q3 = np.quantile(w, [0.25, 0.5, 0.75], method="linear")
    return np.minimum(w, med + 5 * (q3 - q1))


def district_frame(records: Iterable[DistrictRecord], assignments: Mapping[str, Assignment] | None = None,
                   threshold: float = DEFAULT_THRESHOLD) -> pd.DataFrame:
    """District-level table (one row per 1991 district, or per linked child)."""
    recs = {r.district_id: r for r in records}
    rows = []
    if assignments is None:
        for r in recs.values():
            rows.append({"district_id": r.district_id, "literacy": r.female_literacy_1991,
                         "treatment": r.treatment, "population": r.population_1991, **r.covariates})
    else:
        for a in assignments.values():
            cov = recs[a.parent_id].covariates
            rows.append({"district_id": a.child_id, "literacy": a.literacy, "treatment": a.treatment,
                         "population": recs[a.parent_id].population_1991, **cov})
    df = pd.DataFrame(rows)
    df["itt"] = assign_itt(df["literacy"].to_numpy(float), threshold)
    return df
