"""Seeded synthetic breast-cancer EHR corpus.

The proprietary source data cannot be shared, so every pipeline stage is
exercised against patients drawn here.  Marginals (prevalence, demographics,
HR/HER2 mix, subgroup survival) follow a real-world mBC cohort;
per-practice and per-document-count distributions are invented defaults.

Each patient ``i`` draws from its own stream ``SeedSequence([seed, i])`` so
the corpus is a pure function of the config and may be generated in any
order.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .errors import ConfigError

ISO = "%Y-%m-%d"
DAYS_PER_YEAR = 365.25
ACTIVITY_DATE = dt.date(2011, 1, 1)

RELEVANT_CATEGORIES = (
    "visit note",
    "pathology report",
    "procedure and operative report",
    "radiology report",
)
OTHER_CATEGORIES = (
    "lab report",
    "discharge summary",
    "medication list",
    "consent form",
    "insurance document",
    "correspondence",
    "nursing note",
    "referral",
    "patient questionnaire",
    "infusion record",
    "telephone encounter",
    "vital signs flowsheet",
    "genetic counseling report",
    "social work note",
    "nutrition note",
    "physical therapy note",
    "prescription",
    "billing statement",
    "outside records",
    "miscellaneous",
)
DOCUMENT_CATEGORIES = RELEVANT_CATEGORIES + OTHER_CATEGORIES

GENDERS = ("Female", "Male")
RACES = ("White", "Black or African American", "Asian", "Other", "Unknown")
RACE_WEIGHTS = (0.645, 0.115, 0.031, 0.114, 0.095)
PRACTICE_TYPES = ("Academic", "Community")
BRCA_LEVELS = ("Positive", "Negative", "Other", "Unknown")
BRCA_WEIGHTS = (0.030, 0.182, 0.006, 0.782)
STAGES = ("0", "I", "II", "III", "IV", "Not documented")
POSITIVE_STAGE_WEIGHTS = (0.003, 0.092, 0.240, 0.209, 0.308, 0.148)
NEGATIVE_STAGE_WEIGHTS = (0.12, 0.36, 0.30, 0.10, 0.0, 0.12)
MARKERS = ("ER", "PR", "HER2")
TEST_RESULTS = ("Positive", "Negative", "Equivocal", "Pending", "Inconclusive", "Unknown")

BREAST_CODES = ("174.9", "174.4", "174.8", "175.9", "C50.911", "C50.912", "C50.919", "C50.411", "C50.811")
OTHER_CODES = ("I10", "E11.9", "E78.5", "Z79.811", "K21.9", "F41.9", "M81.0", "Z12.31")

# subgroup -> (HR positive, HER2 positive, share of positives)
SUBGROUPS = {
    "hr_pos_her2_neg": (True, False, 0.72),
    "triple_negative": (False, False, 0.18),
    "hr_pos_her2_pos": (True, True, 0.05),
    "hr_neg_her2_pos": (False, True, 0.05),
}
OTHER_SUBGROUP_MEDIAN_YEARS = 2.5

BACKGROUND_DOCS_PER_YEAR = 3.0
POST_MBC_DOCS_PER_YEAR = 6.0
OTHER_DOCS_PER_YEAR = 1.5
MAX_DOCS_PER_SEGMENT = 40


# --------------------------------------------------------------------------
# Token dictionaries
# --------------------------------------------------------------------------

_BACKGROUND = """
patient presents today for follow up visit reports feeling well denies fever chills
night sweats weight loss appetite good energy fair sleep adequate reviewed history
medications allergies family social tobacco alcohol exercise diet examination vital
signs stable blood pressure heart rate temperature respiratory oxygen saturation general
appearance alert oriented comfortable heent normocephalic atraumatic neck supple
lymph nodes palpable axillary supraclavicular cervical chest clear auscultation
bilaterally cardiac regular rhythm murmur abdomen soft nontender nondistended extremities
edema skin rash neurologic intact cranial nerves strength sensation gait breast
examination left right nipple areola mass palpable tenderness incision healing well
scar mammogram ultrasound biopsy core needle specimen received formalin fixed paraffin
embedded sections show invasive ductal carcinoma lobular grade nuclear mitotic margins
clear closest margin millimeters tumor size centimeters sentinel node dissection
receptor estrogen progesterone immunohistochemistry staining percent intensity
fluorescence hybridization ratio ki67 index plan continue current therapy tamoxifen
letrozole anastrozole exemestane adjuvant chemotherapy radiation completed cycles tolerated
nausea fatigue neuropathy mild grade labs reviewed hemoglobin platelets white count
creatinine within normal limits discussed options questions answered agrees return
clinic weeks months survivorship counseling genetic referral lumpectomy mastectomy
reconstruction surgeon oncologist radiologist pathologist procedure performed under
sedation consent obtained time out sterile prep drape local anesthesia lidocaine
complications none estimated blood loss minimal tolerated procedure transferred recovery
impression findings technique comparison prior study dated density heterogeneously
dense scattered fibroglandular tissue calcifications architectural distortion birads
category assessment recommend routine screening annual diagnostic workup additional
views compression magnification spot
""".split()

_INDICATORS = """
metastatic metastases mets bone liver brain osseous hepatic lytic sclerotic
carcinomatosis leptomeningeal visceral widespread disseminated recurrence recurrent
progression progressive palliative denosumab zoledronic fulvestrant palbociclib
capecitabine eribulin stage4 spine vertebral
""".split()

_CONFUSABLES = (
    "no evidence of metastatic disease",
    "metastasis ruled out",
    "bone scan negative",
    "liver lesion benign cyst",
    "no distant metastases",
    "negative for recurrence",
    "brain imaging unremarkable",
    "lesions stable benign",
    "rule out metastases",
    "no osseous lesions",
    "sclerotic focus likely benign island",
    "hepatic steatosis without focal lesion",
)


def token_dictionaries() -> tuple[tuple[str, ...], tuple[str, ...], tuple[str, ...]]:
    """(background_tokens, indicator_tokens, confusable_phrases); fixed lists."""
    background = tuple(dict.fromkeys(_BACKGROUND))
    return background, tuple(_INDICATORS), _CONFUSABLES


# --------------------------------------------------------------------------
# Record types
# --------------------------------------------------------------------------


def _date(value) -> Optional[dt.date]:
    if value is None or isinstance(value, dt.date):
        return value
    return dt.datetime.strptime(value, ISO).date()


def _iso(value: Optional[dt.date]) -> Optional[str]:
    return None if value is None else value.isoformat()


@dataclass
class Document:
    doc_id: str
    category: str
    date: dt.date
    text: str

    def to_dict(self):
        return {"doc_id": self.doc_id, "category": self.category, "date": _iso(self.date), "text": self.text}

    @classmethod
    def from_dict(cls, d):
        return cls(d["doc_id"], d["category"], _date(d["date"]), d["text"])


@dataclass
class BiomarkerTest:
    marker: str
    date: dt.date
    result: str

    def to_dict(self):
        return {"marker": self.marker, "date": _iso(self.date), "result": self.result}

    @classmethod
    def from_dict(cls, d):
        return cls(d["marker"], _date(d["date"]), d["result"])


@dataclass
class PatientRecord:
    patient_id: str
    gender: str
    race: str
    practice_type: str
    birth_date: Optional[dt.date]
    icd_codes: list  # of (code, date)
    visits: list
    documents: list
    biomarker_tests: list
    brca_status: str
    initial_dx_date: dt.date
    stage_at_dx: str
    mbc_dx_date: Optional[dt.date]
    death_date: Optional[dt.date]
    last_activity_date: dt.date
    line_count: int

    @property
    def is_positive(self) -> bool:
        return self.mbc_dx_date is not None

    def to_dict(self):
        return {
            "patient_id": self.patient_id,
            "gender": self.gender,
            "race": self.race,
            "practice_type": self.practice_type,
            "birth_date": _iso(self.birth_date),
            "icd_codes": [[code, _iso(d)] for code, d in self.icd_codes],
            "visits": [_iso(v) for v in self.visits],
            "documents": [doc.to_dict() for doc in self.documents],
            "biomarker_tests": [t.to_dict() for t in self.biomarker_tests],
            "brca_status": self.brca_status,
            "initial_dx_date": _iso(self.initial_dx_date),
            "stage_at_dx": self.stage_at_dx,
            "mbc_dx_date": _iso(self.mbc_dx_date),
            "death_date": _iso(self.death_date),
            "last_activity_date": _iso(self.last_activity_date),
            "line_count": self.line_count,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            patient_id=d["patient_id"],
            gender=d["gender"],
            race=d["race"],
            practice_type=d["practice_type"],
            birth_date=_date(d.get("birth_date")),
            icd_codes=[(code, _date(day)) for code, day in d["icd_codes"]],
            visits=[_date(v) for v in d["visits"]],
            documents=[Document.from_dict(x) for x in d["documents"]],
            biomarker_tests=[BiomarkerTest.from_dict(x) for x in d["biomarker_tests"]],
            brca_status=d["brca_status"],
            initial_dx_date=_date(d["initial_dx_date"]),
            stage_at_dx=d["stage_at_dx"],
            mbc_dx_date=_date(d.get("mbc_dx_date")),
            death_date=_date(d.get("death_date")),
            last_activity_date=_date(d["last_activity_date"]),
            line_count=int(d["line_count"]),
        )


@dataclass
class GeneratorConfig:
    n_patients: int = 1000
    seed: int = 0
    prevalence: float = 0.0859
    signal_strength: float = 0.85
    leak_rate: float = 0.05
    date_range: tuple = (dt.date(2009, 1, 1), dt.date(2018, 2, 1))
    survival_median_hrpos_years: float = 3.03
    survival_median_tn_years: float = 1.16
    censor_rate: float = 0.40

    def __post_init__(self):
        self.date_range = tuple(_date(d) for d in self.date_range)
        self.validate()

    def validate(self):
        if not isinstance(self.n_patients, int) or self.n_patients < 0:
            raise ConfigError("n_patients must be a non-negative integer")
        if not (isinstance(self.seed, int) and 0 <= self.seed < 2**64):
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if not 0.0 < self.prevalence < 1.0:
            raise ConfigError("prevalence must satisfy 0 < prevalence < 1")
        if not 0.0 <= self.leak_rate < self.signal_strength <= 1.0:
            raise ConfigError("rates must satisfy 0 <= leak_rate < signal_strength <= 1")
        if len(self.date_range) != 2 or not self.date_range[0] < self.date_range[1]:
            raise ConfigError("date_range must satisfy start_date < end_date")
        if not (self.survival_median_hrpos_years > 0 and self.survival_median_tn_years > 0):
            raise ConfigError("survival medians must be strictly positive")
        if not 0.0 <= self.censor_rate <= 1.0:
            raise ConfigError("censor_rate must be a probability")

    def to_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["date_range"] = [_iso(d) for d in self.date_range]
        return out

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown generator fields: {sorted(unknown)}")
        return cls(**d)


# --------------------------------------------------------------------------
# Generation
# --------------------------------------------------------------------------


class _Sampler:
    """Per-patient draws on top of one numpy Generator."""

    def __init__(self, rng: np.random.Generator, background, bg_cdf, indicators, confusables):
        self.rng = rng
        self.background = background
        self.bg_cdf = bg_cdf
        self.indicators = indicators
        self.confusables = confusables

    def choice(self, options, weights=None):
        if weights is None:
            return options[int(self.rng.integers(len(options)))]
        cdf = np.cumsum(weights)
        k = int(np.searchsorted(cdf, self.rng.random() * cdf[-1], side="right"))
        return options[min(k, len(options) - 1)]

    def day_between(self, lo: int, hi: int) -> int:
        """Uniform ordinal day in [lo, hi]."""
        if hi <= lo:
            return lo
        return int(self.rng.integers(lo, hi + 1))

    def doc_text(self, signal: bool, leak: bool) -> str:
        n = int(self.rng.integers(20, 50))
        idx = np.searchsorted(self.bg_cdf, self.rng.random(n), side="right")
        words = [self.background[i] for i in idx.tolist()]
        if signal:
            for _ in range(int(self.rng.integers(2, 6))):
                pos = int(self.rng.integers(0, len(words) + 1))
                words.insert(pos, self.indicators[int(self.rng.integers(len(self.indicators)))])
        if leak:
            phrase = self.confusables[int(self.rng.integers(len(self.confusables)))].split()
            pos = int(self.rng.integers(0, len(words) + 1))
            words[pos:pos] = phrase
        # sentence casing and punctuation exercise the normalizer downstream
        text = " ".join(words)
        return text[:1].upper() + text[1:] + "."


def _docs_in_window(s: _Sampler, lo: int, hi: int, rate_per_year: float, categories, cat_weights,
                    signal_p: float, leak_p: float):
    if hi < lo:
        return []
    years = (hi - lo + 1) / DAYS_PER_YEAR
    n = min(int(s.rng.poisson(rate_per_year * years)), MAX_DOCS_PER_SEGMENT)
    out = []
    for _ in range(n):
        day = s.day_between(lo, hi)
        cat = s.choice(categories, cat_weights)
        signal = bool(s.rng.random() < signal_p)
        leak = bool(s.rng.random() < leak_p)
        out.append((day, cat, s.doc_text(signal, leak)))
    return out


def _biomarker_tests(s: _Sampler, index_day: int, initial_day: int, hr_pos: bool, her2_pos: bool,
                     positive: bool):
    er = "Positive" if hr_pos else "Negative"
    pr = ("Positive" if s.rng.random() < 0.7 else "Negative") if hr_pos else "Negative"
    truth = {"ER": er, "PR": pr, "HER2": "Positive" if her2_pos else "Negative"}
    tests = []
    for marker in MARKERS:
        result = truth[marker]
        if marker == "HER2" and s.rng.random() < 0.06:
            result = "Equivocal"
        if positive:
            u = s.rng.random()
            if u < 0.90:
                tests.append((marker, index_day + int(s.rng.integers(-45, 46)), result))
            elif u < 0.95:
                tests.append((marker, index_day - int(s.rng.integers(61, 400)), result))
            else:
                pending = ("Pending", "Inconclusive", "Unknown")[int(s.rng.integers(3))]
                tests.append((marker, index_day + int(s.rng.integers(-30, 31)), pending))
        if initial_day != index_day and s.rng.random() < 0.8:
            # historical test from the primary diagnosis, occasionally discordant
            old = truth[marker]
            if s.rng.random() < 0.1:
                old = "Negative" if old == "Positive" else "Positive"
            tests.append((marker, initial_day, old))
    return tests


def _survival_days(s: _Sampler, median_years: float) -> int:
    rate = math.log(2.0) / (median_years * DAYS_PER_YEAR)
    return max(1, int(round(s.rng.exponential(1.0 / rate))))


def _generate_patient(i: int, config: GeneratorConfig, dicts, bg_cdf) -> PatientRecord:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, i])))
    background, indicators, confusables = dicts
    s = _Sampler(rng, background, bg_cdf, indicators, confusables)
    start, end = (d.toordinal() for d in config.date_range)
    # every patient gets >= 2 distinct visits strictly after the activity date
    floor = max(ACTIVITY_DATE.toordinal(), start) + 2
    floor = min(floor, end)

    positive = bool(rng.random() < config.prevalence)
    gender = "Male" if rng.random() < 0.0074 else "Female"
    race = s.choice(RACES, RACE_WEIGHTS)
    practice = "Academic" if rng.random() < 0.067 else "Community"
    brca = s.choice(BRCA_LEVELS, BRCA_WEIGHTS)

    mbc_day = death_day = None
    hr_pos, her2_pos = True, False
    if positive:
        stage = s.choice(STAGES, POSITIVE_STAGE_WEIGHTS)
        mbc_day = s.day_between(start, end - 1)
        if stage == "IV":
            initial_day = mbc_day
        else:
            initial_day = mbc_day - 90 - int(rng.exponential(3.5 * DAYS_PER_YEAR))
        names = list(SUBGROUPS)
        sub = s.choice(names, [SUBGROUPS[k][2] for k in names])
        hr_pos, her2_pos = SUBGROUPS[sub][:2]
        if sub == "hr_pos_her2_neg":
            median = config.survival_median_hrpos_years
        elif sub == "triple_negative":
            median = config.survival_median_tn_years
        else:
            median = OTHER_SUBGROUP_MEDIAN_YEARS
        death = mbc_day + _survival_days(s, median)
        if death < floor:
            # memoryless redraw: patients diagnosed before the activity date survive past it
            death = floor + _survival_days(s, median)
        lo_censor = max(mbc_day, floor)
        censor = s.day_between(lo_censor, end) if rng.random() < config.censor_rate else end
        if death <= censor:
            death_day, last_day = death, death
        else:
            last_day = censor
    else:
        stage = s.choice(STAGES, NEGATIVE_STAGE_WEIGHTS)
        initial_day = s.day_between(start, end - 30)
        last_day = s.day_between(max(initial_day, floor), end)
        hr_pos = bool(rng.random() < 0.8)
        her2_pos = bool(rng.random() < 0.15)

    age_years = float(np.clip(rng.normal(59.0, 13.0), 19.0, 95.0))
    birth_day = initial_day - int(age_years * DAYS_PER_YEAR)
    birth = None if rng.random() < 0.009 else dt.date.fromordinal(birth_day)

    # visits
    first_visit = max(start, initial_day)
    n_visits = max(2, int(round(rng.lognormal(math.log(30.0), 0.9))))
    visit_days = set(rng.integers(first_visit, last_day + 1, size=n_visits).tolist())
    q_lo = min(floor - 1, last_day)
    qualifying = [d for d in visit_days if d > ACTIVITY_DATE.toordinal()]
    while len(set(qualifying)) < 2 and last_day > q_lo:
        d = s.day_between(q_lo, last_day)
        if d > ACTIVITY_DATE.toordinal():
            visit_days.add(d)
            qualifying.append(d)
    visit_days.add(last_day)
    visits = sorted(visit_days)

    # documents
    rel_w = (0.55, 0.15, 0.10, 0.20)
    other_w = None
    docs = []
    doc_lo = max(start, initial_day)
    if positive:
        pre_hi = mbc_day - 1
        docs += _docs_in_window(s, doc_lo, pre_hi, BACKGROUND_DOCS_PER_YEAR, RELEVANT_CATEGORIES, rel_w,
                                config.leak_rate, config.leak_rate)
        # the imaging or pathology report that establishes the metastatic diagnosis
        dx_cat = "radiology report" if rng.random() < 0.7 else "pathology report"
        docs.append((mbc_day, dx_cat, s.doc_text(bool(rng.random() < config.signal_strength),
                                                 bool(rng.random() < config.leak_rate))))
        # follow-up documents scale with time since metastasis, so recent cases carry little text
        docs += _docs_in_window(s, mbc_day + 1, last_day, POST_MBC_DOCS_PER_YEAR, RELEVANT_CATEGORIES, rel_w,
                                config.signal_strength, config.leak_rate)
    else:
        docs += _docs_in_window(s, doc_lo, last_day, BACKGROUND_DOCS_PER_YEAR, RELEVANT_CATEGORIES, rel_w,
                                0.0, config.leak_rate)
    other_signal = config.signal_strength if positive else 0.0
    docs += _docs_in_window(s, doc_lo, last_day, OTHER_DOCS_PER_YEAR, OTHER_CATEGORIES, other_w,
                            other_signal, config.leak_rate)
    docs.sort(key=lambda x: x[0])

    pid = f"P{i:07d}"
    documents = [
        Document(f"{pid}-D{k:04d}", cat, dt.date.fromordinal(day), text)
        for k, (day, cat, text) in enumerate(docs)
    ]

    tests = _biomarker_tests(s, mbc_day if positive else initial_day, initial_day, hr_pos, her2_pos, positive)
    biomarker_tests = [BiomarkerTest(m, dt.date.fromordinal(d), r) for m, d, r in tests]

    code_day = max(start, initial_day)
    codes = [(s.choice(BREAST_CODES), dt.date.fromordinal(code_day))]
    for _ in range(int(rng.integers(0, 3))):
        codes.append((s.choice(OTHER_CODES), dt.date.fromordinal(s.day_between(code_day, last_day))))

    if positive:
        line_count = 0 if rng.random() < 0.1 else 1 + int(rng.poisson(1.0))
    else:
        line_count = int(rng.poisson(0.5))

    return PatientRecord(
        patient_id=pid,
        gender=gender,
        race=race,
        practice_type=practice,
        birth_date=birth,
        icd_codes=codes,
        visits=[dt.date.fromordinal(d) for d in visits],
        documents=documents,
        biomarker_tests=biomarker_tests,
        brca_status=brca,
        initial_dx_date=dt.date.fromordinal(initial_day),
        stage_at_dx=stage,
        mbc_dx_date=None if mbc_day is None else dt.date.fromordinal(mbc_day),
        death_date=None if death_day is None else dt.date.fromordinal(death_day),
        last_activity_date=dt.date.fromordinal(last_day),
        line_count=line_count,
    )


def _zipf_cdf(n: int) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** 0.8
    cdf = np.cumsum(w / w.sum())
    cdf[-1] = 1.0
    return cdf


def generate_corpus(config: GeneratorConfig) -> list[PatientRecord]:
    config.validate()
    dicts = token_dictionaries()
    cdf = _zipf_cdf(len(dicts[0]))
    return [_generate_patient(i, config, dicts, cdf) for i in range(config.n_patients)]


def write_corpus(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), separators=(",", ":")))
            fh.write("\n")


def read_corpus(path) -> list[PatientRecord]:
    with open(path, encoding="utf-8") as fh:
        return [PatientRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
