"""Structured-data pre-filter and clinical derivations."""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass

from .errors import InputError

BREAST_CANCER_PREFIXES = ("174", "175", "C50")
DEFAULT_ACTIVITY_DATE = dt.date(2011, 1, 1)
DEFAULT_CUTOFF_DATE = dt.date(2018, 2, 1)
BIOMARKER_WINDOW_DAYS = 60
SUCCESSFUL_RESULTS = frozenset({"Positive", "Negative", "Equivocal"})
DAYS_PER_MONTH = 30.4375


def has_breast_cancer_code(codes) -> bool:
    """True if any (code, date) pair carries an ICD-9 174/175 or ICD-10 C50 code."""
    for code, _ in codes:
        norm = code.upper().replace(".", "")
        if norm.startswith(BREAST_CANCER_PREFIXES):
            return True
    return False


def meets_activity_criterion(visits, activity_date: dt.date = DEFAULT_ACTIVITY_DATE) -> bool:
    """At least two visits on distinct dates strictly after ``activity_date``."""
    return len({v for v in visits if v > activity_date}) >= 2


def passes_immortal_time_filter(patient, activity_date: dt.date = DEFAULT_ACTIVITY_DATE) -> bool:
    mbc = patient.mbc_dx_date
    return mbc is None or mbc >= activity_date


@dataclass
class CandidateSet:
    patient_ids: list
    cutoff_date: dt.date = DEFAULT_CUTOFF_DATE
    activity_date: dt.date = DEFAULT_ACTIVITY_DATE

    def to_json(self) -> str:
        return json.dumps(self.patient_ids)


def select_candidates(corpus, activity_date: dt.date = DEFAULT_ACTIVITY_DATE,
                      cutoff_date: dt.date = DEFAULT_CUTOFF_DATE) -> CandidateSet:
    """Ids of patients passing the ICD, activity and immortal-time filters, sorted.

    ``cutoff_date`` is recorded on the result; the generator never emits
    activity after the study cutoff.
    """
    corpus = list(corpus)
    if not corpus:
        raise InputError("select_candidates() needs a non-empty corpus")
    ids = [
        p.patient_id
        for p in corpus
        if has_breast_cancer_code(p.icd_codes)
        and meets_activity_criterion(p.visits, activity_date)
        and passes_immortal_time_filter(p, activity_date)
    ]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate patient ids in corpus")
    return CandidateSet(sorted(ids), cutoff_date, activity_date)


# --------------------------------------------------------------------------
# HR / HER2 status at metastatic diagnosis
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BiomarkerStatus:
    hr: str
    her2: str
    er: str = "Unknown"
    pr: str = "Unknown"

    @property
    def subgroup(self):
        """'HR+/HER2-', 'Triple negative' or None."""
        if self.her2 != "Negative":
            return None
        if self.hr == "Positive":
            return "HR+/HER2-"
        if self.hr == "Negative":
            return "Triple negative"
        return None


def _closest_by_date_rule(tests, index_date: dt.date):
    """Closest test within the window, else the latest test before the index date.

    Window is symmetric and inclusive; at equal distance the pre-index test
    wins, and remaining ties keep input order.
    """
    best = None
    best_key = None
    for t in tests:
        delta = (t.date - index_date).days
        if abs(delta) <= BIOMARKER_WINDOW_DAYS:
            key = (abs(delta), delta > 0)
            if best_key is None or key < best_key:
                best, best_key = t, key
    if best is not None:
        return best
    for t in tests:
        if t.date < index_date and (best is None or t.date > best.date):
            best = t
    return best


def marker_status_at(tests, marker: str, index_date: dt.date) -> str:
    mine = [t for t in tests if t.marker == marker]
    ok = [t for t in mine if t.result in SUCCESSFUL_RESULTS]
    chosen = _closest_by_date_rule(ok, index_date)
    if chosen is not None:
        return chosen.result
    # only pending/inconclusive/unknown results remain; the selected one is still unusable
    return "Unknown"


def combine_hr(er: str, pr: str) -> str:
    if er == "Positive" or pr == "Positive":
        return "Positive"
    if er == "Negative" and pr == "Negative":
        return "Negative"
    return "Unknown"


def hr_her2_at_mbc(tests, mbc_dx_date: dt.date) -> BiomarkerStatus:
    if mbc_dx_date is None:
        raise InputError("hr_her2_at_mbc() needs a metastatic diagnosis date")
    tests = list(tests)
    er = marker_status_at(tests, "ER", mbc_dx_date)
    pr = marker_status_at(tests, "PR", mbc_dx_date)
    her2 = marker_status_at(tests, "HER2", mbc_dx_date)
    return BiomarkerStatus(hr=combine_hr(er, pr), her2=her2, er=er, pr=pr)


def followup_months(mbc_dx_date: dt.date, last_activity_date: dt.date) -> float:
    days = (last_activity_date - mbc_dx_date).days
    if days < 0:
        raise InputError("last activity precedes metastatic diagnosis")
    return days / DAYS_PER_MONTH
