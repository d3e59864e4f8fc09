"""Reference Standard vs MACS Cohort comparison.

Baseline characteristics are compared as level percentages (categorical)
or medians (continuous); survival is compared through KM medians and, within
each cohort, an HR+/HER2- vs triple-negative log-rank test.  Every
difference is reference minus MACS with an independent-resampling percentile
bootstrap CI.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import stats
from .cohort import followup_months, hr_her2_at_mbc
from .errors import DataIntegrityError, InputError
from .stats import RngSpec

SUPPRESSION_THRESHOLD = 5
DAYS_PER_YEAR = 365.25
BOOTSTRAP_MODE = "independent"
AGE_BINS = ((19, 35, "19-34"), (35, 50, "35-50"), (50, 65, "50-64"), (65, 75, "65-74"), (75, math.inf, "75+"))
SUBGROUPS = ("HR+/HER2-", "Triple negative")


@dataclass(frozen=True)
class CohortPair:
    reference_ids: frozenset
    macs_ids: frozenset

    def __post_init__(self):
        if not self.macs_ids <= self.reference_ids:
            raise DataIntegrityError("MACS cohort must be a subset of the reference standard")

    @property
    def missed(self) -> int:
        return len(self.reference_ids) - len(self.macs_ids)


def build_cohorts(test_labels: dict, test_flags: dict) -> CohortPair:
    """Reference = all test positives; MACS = positives the model also flagged."""
    if set(test_labels) != set(test_flags):
        raise InputError("labels and flags are not aligned by patient id")
    ref = frozenset(pid for pid, lab in test_labels.items() if lab)
    macs = frozenset(pid for pid in ref if test_flags[pid])
    return CohortPair(ref, macs)


# --------------------------------------------------------------------------
# Characteristic roster
# --------------------------------------------------------------------------


@dataclass
class CharacteristicSpec:
    name: str
    kind: str  # "categorical" | "continuous"
    extractor: Callable
    category_order: Optional[list] = None


def _age(birth, on):
    if birth is None or on is None:
        return None
    years = on.year - birth.year - ((on.month, on.day) < (birth.month, birth.day))
    return years


def age_bin(age) -> str:
    if age is None:
        return "Unknown"
    for lo, hi, label in AGE_BINS:
        if lo <= age < hi:
            return label
    return AGE_BINS[0][2] if age < AGE_BINS[0][0] else AGE_BINS[-1][2]


def _float_or_nan(x):
    return math.nan if x is None else float(x)


def standard_characteristics() -> list[CharacteristicSpec]:
    bins = [label for _, _, label in AGE_BINS] + ["Unknown"]
    return [
        CharacteristicSpec("Median age at primary breast cancer diagnosis, years", "continuous",
                           lambda p: _float_or_nan(_age(p.birth_date, p.initial_dx_date))),
        CharacteristicSpec("Age at primary breast cancer diagnosis category", "categorical",
                           lambda p: age_bin(_age(p.birth_date, p.initial_dx_date)), bins),
        CharacteristicSpec("Median age at mBC diagnosis, years", "continuous",
                           lambda p: _float_or_nan(_age(p.birth_date, p.mbc_dx_date))),
        CharacteristicSpec("Age at mBC diagnosis category", "categorical",
                           lambda p: age_bin(_age(p.birth_date, p.mbc_dx_date)), bins),
        CharacteristicSpec("Gender", "categorical", lambda p: p.gender, ["Female", "Male"]),
        CharacteristicSpec("Race/ethnicity", "categorical", lambda p: p.race,
                           ["White", "Black or African American", "Asian", "Other", "Unknown"]),
        CharacteristicSpec("Practice type", "categorical", lambda p: p.practice_type, ["Academic", "Community"]),
        CharacteristicSpec("Stage at primary breast cancer diagnosis", "categorical", lambda p: p.stage_at_dx,
                           ["0", "I", "II", "III", "IV", "Not documented"]),
        CharacteristicSpec("HR status at mBC diagnosis", "categorical",
                           lambda p: hr_her2_at_mbc(p.biomarker_tests, p.mbc_dx_date).hr,
                           ["Positive", "Negative", "Unknown"]),
        CharacteristicSpec("HER2 status at mBC diagnosis", "categorical",
                           lambda p: hr_her2_at_mbc(p.biomarker_tests, p.mbc_dx_date).her2,
                           ["Positive", "Negative", "Equivocal", "Unknown"]),
        CharacteristicSpec("BRCA status (germline)", "categorical", lambda p: p.brca_status,
                           ["Positive", "Negative", "Other", "Unknown"]),
        CharacteristicSpec("Median number of visits", "continuous", lambda p: float(len(p.visits))),
        CharacteristicSpec("Median number of lines of therapy", "continuous", lambda p: float(p.line_count)),
        CharacteristicSpec("Median follow-up time from mBC diagnosis, months", "continuous",
                           lambda p: followup_months(p.mbc_dx_date, p.last_activity_date)),
        CharacteristicSpec("Year of mBC diagnosis", "categorical", lambda p: str(p.mbc_dx_date.year),
                           [str(y) for y in range(2011, 2019)]),
    ]


# --------------------------------------------------------------------------
# Baseline comparison
# --------------------------------------------------------------------------


@dataclass
class ReportRow:
    characteristic: str
    level: Optional[str]
    ref_value: float
    macs_value: float
    difference: float
    ci_lo: float
    ci_hi: float
    suppressed: bool = False
    ref_count: Optional[int] = None
    macs_count: Optional[int] = None
    ref_iqr: Optional[tuple] = None
    macs_iqr: Optional[tuple] = None

    def to_dict(self):
        d = {
            "characteristic": self.characteristic,
            "level": self.level,
            "ref_value": self.ref_value,
            "macs_value": self.macs_value,
            "difference": self.difference,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
            "suppressed": self.suppressed,
        }
        if self.level is not None:
            d["ref_count"] = self.ref_count
            d["macs_count"] = self.macs_count
            if self.suppressed:
                # small cells are masked in the serialized report only
                d["ref_value"] = d["macs_value"] = d["ref_count"] = d["macs_count"] = "< 5"
        else:
            d["ref_iqr"] = list(self.ref_iqr)
            d["macs_iqr"] = list(self.macs_iqr)
        return d

    def render(self) -> str:
        label = self.characteristic if self.level is None else f"{self.characteristic}: {self.level}"
        if self.suppressed:
            ref = macs = "< 5"
        else:
            ref, macs = _fmt(self.ref_value), _fmt(self.macs_value)
        return f"{label} {ref} vs {macs}, diff {_fmt(self.difference)}, CI [{_fmt(self.ci_lo)}, {_fmt(self.ci_hi)}]"


def _fmt(x) -> str:
    if x is None:
        return "NR"
    r = round(float(x), 2)
    return f"{r + 0.0:g}"


def _median_ignoring_nan(values):
    v = values[~np.isnan(values)]
    if v.size == 0:
        return None
    return stats.quantile(v, 0.5)


def _resolve(pair_ids, patients):
    try:
        return [patients[pid] for pid in sorted(pair_ids)]
    except KeyError as exc:
        raise InputError(f"cohort id {exc.args[0]} not found among patients") from None


def compare_characteristics(pair: CohortPair, patients: dict, specs=None, n_boot: int = 1000,
                            rng: RngSpec | None = None, workers: int = 1) -> list[ReportRow]:
    specs = specs if specs is not None else standard_characteristics()
    rng = rng or RngSpec(0)
    ref = _resolve(pair.reference_ids, patients)
    macs = _resolve(pair.macs_ids, patients)
    if not ref or not macs:
        raise InputError("both cohorts must be non-empty")
    rows = []
    for spec in specs:
        a = [spec.extractor(p) for p in ref]
        b = [spec.extractor(p) for p in macs]
        if spec.kind == "continuous":
            va, vb = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
            diff, lo, hi = stats.bootstrap_diff_ci(
                _median_ignoring_nan, va, vb, n_boot, rng.child(spec.name), workers=workers, name=spec.name
            )
            fa, fb = va[~np.isnan(va)], vb[~np.isnan(vb)]
            da, db = stats.describe(fa), stats.describe(fb)
            rows.append(ReportRow(spec.name, None, da[0], db[0], diff, lo, hi,
                                  ref_iqr=(da[1], da[2]), macs_iqr=(db[1], db[2])))
            continue
        levels = list(spec.category_order or [])
        levels += sorted({x for x in a + b} - set(levels))
        code = {lev: k for k, lev in enumerate(levels)}
        ca = np.array([code[x] for x in a])
        cb = np.array([code[x] for x in b])
        for lev in levels:
            k = code[lev]

            def pct(arr, k=k):
                return 100.0 * float(np.mean(arr == k))

            diff, lo, hi = stats.bootstrap_diff_ci(
                pct, ca, cb, n_boot, rng.child(f"{spec.name}|{lev}"), workers=workers, name=spec.name
            )
            na, nb = int(np.sum(ca == k)), int(np.sum(cb == k))
            rows.append(ReportRow(
                spec.name, lev, pct(ca), pct(cb), diff, lo, hi,
                suppressed=na < SUPPRESSION_THRESHOLD or nb < SUPPRESSION_THRESHOLD,
                ref_count=na, macs_count=nb,
            ))
    return rows


# --------------------------------------------------------------------------
# Example survival analyses
# --------------------------------------------------------------------------


def survival_rows(patients) -> np.ndarray:
    """(time_days, event) rows indexed at the metastatic diagnosis date."""
    out = np.empty((len(patients), 2))
    for i, p in enumerate(patients):
        if p.mbc_dx_date is None:
            raise DataIntegrityError(f"{p.patient_id}: no metastatic diagnosis date")
        end = p.death_date if p.death_date is not None else p.last_activity_date
        days = (end - p.mbc_dx_date).days
        if days < 0:
            raise DataIntegrityError(f"{p.patient_id}: negative survival time")
        out[i] = (days, 1.0 if p.death_date is not None else 0.0)
    return out


def _km_median_rows(rows):
    return stats.km_median(stats.km_fit(rows[:, 0], rows[:, 1].astype(bool)))


def _years(x):
    return None if x is None else x / DAYS_PER_YEAR


def _summarize(rows, n_boot, rng, workers):
    curve = stats.km_fit(rows[:, 0], rows[:, 1].astype(bool))
    med = stats.km_median(curve)
    n_events = int(rows[:, 1].sum())
    if n_events >= 2:
        lo, hi = stats.km_median_ci(rows[:, 0], rows[:, 1].astype(bool), n_boot, rng, workers=workers)
    else:
        lo = hi = None
    return curve, {
        "n": int(rows.shape[0]),
        "events": n_events,
        "median_years": _years(med),
        "median_ci_years": [_years(lo), _years(hi)],
    }


def _median_diff(rows_a, rows_b, n_boot, rng, workers):
    try:
        d, lo, hi = stats.bootstrap_diff_ci(_km_median_rows, rows_a, rows_b, n_boot, rng,
                                            workers=workers, name="median OS")
    except (InputError, ValueError) as exc:
        return {"difference_years": None, "ci_years": [None, None], "note": str(exc)}
    return {"difference_years": d / DAYS_PER_YEAR, "ci_years": [lo / DAYS_PER_YEAR, hi / DAYS_PER_YEAR]}


@dataclass
class ExampleAnalyses:
    results: dict
    curves: dict = field(default_factory=dict)


def run_example_analyses(pair: CohortPair, patients: dict, n_boot: int = 1000, rng: RngSpec | None = None,
                         workers: int = 1) -> ExampleAnalyses:
    rng = rng or RngSpec(0)
    cohorts = {"reference": _resolve(pair.reference_ids, patients), "macs": _resolve(pair.macs_ids, patients)}
    if not cohorts["reference"] or not cohorts["macs"]:
        raise InputError("both cohorts must be non-empty")
    rows = {name: survival_rows(members) for name, members in cohorts.items()}
    groups = {
        name: np.array([hr_her2_at_mbc(p.biomarker_tests, p.mbc_dx_date).subgroup or "" for p in members])
        for name, members in cohorts.items()
    }

    curves = {}
    overall = {}
    for name in cohorts:
        curves[(name, "all")], overall[name] = _summarize(rows[name], n_boot, rng.child(f"os|{name}"), workers)
    overall["difference"] = _median_diff(rows["reference"], rows["macs"], n_boot, rng.child("os|diff"), workers)

    by_status = {}
    for name in cohorts:
        entry = {}
        for g in SUBGROUPS:
            sub = rows[name][groups[name] == g]
            if sub.shape[0] == 0:
                entry[g] = {"n": 0, "events": 0, "median_years": None, "median_ci_years": [None, None]}
                continue
            curves[(name, g)], entry[g] = _summarize(sub, n_boot, rng.child(f"sub|{name}|{g}"), workers)
        a = rows[name][groups[name] == SUBGROUPS[0]]
        b = rows[name][groups[name] == SUBGROUPS[1]]
        try:
            lr = stats.logrank(a[:, 0], a[:, 1].astype(bool), b[:, 0], b[:, 1].astype(bool))
            entry["logrank"] = {"statistic": lr.statistic, "p_value": lr.p_value}
        except ValueError as exc:
            entry["logrank"] = {"statistic": None, "p_value": None, "note": str(exc)}
        by_status[name] = entry
    by_status["difference"] = {}
    for g in SUBGROUPS:
        a = rows["reference"][groups["reference"] == g]
        b = rows["macs"][groups["macs"] == g]
        if a.shape[0] and b.shape[0]:
            by_status["difference"][g] = _median_diff(a, b, n_boot, rng.child(f"sub|diff|{g}"), workers)
        else:
            by_status["difference"][g] = {"difference_years": None, "ci_years": [None, None]}

    return ExampleAnalyses({"overall_survival": overall, "os_by_hr_her2": by_status}, curves)


# --------------------------------------------------------------------------
# Report
# --------------------------------------------------------------------------


@dataclass
class BiasReport:
    rows: list
    example_analyses: ExampleAnalyses
    n_reference: int
    n_macs: int
    bootstrap_mode: str = BOOTSTRAP_MODE

    def to_dict(self):
        return {
            "n_reference": self.n_reference,
            "n_macs": self.n_macs,
            "difference_convention": "reference - macs",
            "bootstrap_mode": self.bootstrap_mode,
            "rows": [r.to_dict() for r in self.rows],
            "example_analyses": self.example_analyses.results,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["characteristic", "level", "ref_count", "ref_value", "macs_count", "macs_value",
                "difference", "ci_lo", "ci_hi", "suppressed"]
        w = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            d = r.to_dict()
            d.setdefault("ref_count", "")
            d.setdefault("macs_count", "")
            w.writerow({k: ("" if d.get(k) is None else d.get(k)) for k in cols})
        return buf.getvalue()

    def km_csvs(self) -> dict:
        """File name -> CSV text for every KM curve."""
        out = {}
        for (cohort, group), curve in self.example_analyses.curves.items():
            slug = group.lower().replace("+", "pos").replace("-", "neg").replace("/", "_").replace(" ", "_")
            out[f"km_{cohort}_{slug}.csv"] = curve.to_csv()
        return out


def bias_analysis(pair: CohortPair, patients: dict, n_boot: int = 1000, rng: RngSpec | None = None,
                  specs=None, workers: int = 1) -> BiasReport:
    rng = rng or RngSpec(0)
    rows = compare_characteristics(pair, patients, specs, n_boot, rng.child("baseline"), workers)
    examples = run_example_analyses(pair, patients, n_boot, rng.child("examples"), workers)
    return BiasReport(rows, examples, len(pair.reference_ids), len(pair.macs_ids))
