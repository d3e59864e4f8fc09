import datetime as dt

import pytest
from hypothesis import settings

from macs.datagen import BiomarkerTest, Document, PatientRecord

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

D0 = dt.date(2014, 6, 1)


def make_patient(pid="p", *, mbc=D0, death=None, last=None, birth=dt.date(1950, 1, 1),
                 practice="Community", race="White", tests=(), visits=None, docs=(),
                 codes=None, initial=None, stage="II", gender="Female", lines=1, brca="Unknown"):
    """Hand-built PatientRecord for fixtures."""
    last = last or (death or (mbc or D0) + dt.timedelta(days=400))
    return PatientRecord(
        patient_id=pid,
        gender=gender,
        race=race,
        practice_type=practice,
        birth_date=birth,
        icd_codes=list(codes) if codes is not None else [("C50.911", dt.date(2012, 1, 1))],
        visits=list(visits) if visits is not None else [dt.date(2012, 1, 5), dt.date(2012, 2, 5)],
        documents=list(docs),
        biomarker_tests=list(tests),
        brca_status=brca,
        initial_dx_date=initial or dt.date(2011, 3, 1),
        stage_at_dx=stage,
        mbc_dx_date=mbc,
        death_date=death,
        last_activity_date=last,
        line_count=lines,
    )


def doc(doc_id, category, date, text):
    return Document(doc_id, category, date, text)


def marker(m, days, result, index=D0):
    return BiomarkerTest(m, index + dt.timedelta(days=days), result)


@pytest.fixture
def index_date():
    return D0


# ---------------------------------------------------------------- acceptance report

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when == "teardown":
        return
    if rep.when == "call" or rep.failed:
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        _criteria[mark.args[0]] = (mark.args[1], rep.passed and rep.when == "call", detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_criteria):
        title, ok, detail = _criteria[n]
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
