"""Survival estimators, quantiles and the seeded bootstrap engine.

Randomness is drawn from numpy's PCG64 generator.  Every bootstrap
iteration gets its own stream derived from ``SeedSequence([seed, stream, b])``
so results do not depend on how iterations are scheduled across workers.
"""

from __future__ import annotations

import hashlib
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTestError, InputError, UndefinedMetricError

MAX_UNDEFINED_FRACTION = 0.05


# --------------------------------------------------------------------------
# RNG streams
# --------------------------------------------------------------------------


def stream_id(name: str) -> int:
    """Stable 32-bit identifier for a named random stream."""
    return zlib.crc32(name.encode("utf-8"))


@dataclass(frozen=True)
class RngSpec:
    seed: int
    stream: int = 0

    def __post_init__(self):
        if not (0 <= self.seed < 2**64 and 0 <= self.stream < 2**64):
            raise InputError("seed and stream must be 64-bit unsigned integers")

    def generator(self, *path: int) -> np.random.Generator:
        """Independent generator for the sub-stream ``path`` below this spec."""
        seq = np.random.SeedSequence([self.seed, self.stream, *path])
        return np.random.Generator(np.random.PCG64(seq))

    def child(self, name_or_id) -> "RngSpec":
        sub = stream_id(name_or_id) if isinstance(name_or_id, str) else int(name_or_id)
        mixed = np.random.SeedSequence([self.seed, self.stream, sub]).generate_state(2, np.uint32)
        return RngSpec(self.seed, int(mixed[0]) << 32 | int(mixed[1]))


# --------------------------------------------------------------------------
# Descriptive statistics
# --------------------------------------------------------------------------


def quantile(values, q: float) -> float:
    """Linear-interpolation quantile between closest order statistics.

    Position ``h = (n - 1) * q`` on the sorted values.  Infinite values are
    allowed; any interpolation touching one returns that infinity.
    """
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise InputError("quantile of an empty sample")
    if not 0.0 <= q <= 1.0:
        raise InputError(f"quantile level {q} outside [0, 1]")
    h = (v.size - 1) * q
    lo = int(math.floor(h))
    frac = h - lo
    if lo + 1 >= v.size or frac == 0.0:
        return float(v[lo])
    a, b = v[lo], v[lo + 1]
    if math.isinf(a) or math.isinf(b):
        return float(b if math.isinf(b) else a)
    return float(a + frac * (b - a))


def describe(values) -> tuple[float, float, float]:
    """(median, q25, q75) of a non-empty sample."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise InputError("describe() of an empty sample")
    return quantile(v, 0.5), quantile(v, 0.25), quantile(v, 0.75)


def category_percentages(items) -> dict:
    items = list(items)
    if not items:
        raise InputError("category_percentages() of an empty sample")
    counts: dict = {}
    for it in items:
        counts[it] = counts.get(it, 0) + 1
    return {k: 100.0 * c / len(items) for k, c in counts.items()}


# --------------------------------------------------------------------------
# Chi-square tail
# --------------------------------------------------------------------------


def chi2_sf(x: float, df: int = 1) -> float:
    """Upper tail of the chi-square distribution with one degree of freedom.

    For df=1 the survival function is ``erfc(sqrt(x / 2))``; ``math.erfc``
    is accurate to a few ulp over the whole real line.
    """
    if df != 1:
        raise InputError("only df=1 is supported")
    if x < 0 or math.isnan(x):
        raise InputError(f"chi-square statistic must be non-negative, got {x}")
    return math.erfc(math.sqrt(x / 2.0))


# --------------------------------------------------------------------------
# Kaplan-Meier and log-rank
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SurvivalObservation:
    time_days: float
    event: bool

    def __post_init__(self):
        if not (self.time_days >= 0 and math.isfinite(self.time_days)):
            raise InputError(f"invalid survival time {self.time_days}")


@dataclass
class KMCurve:
    event_times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    deaths: np.ndarray

    def to_csv(self) -> str:
        lines = ["time,survival,at_risk,deaths"]
        for t, s, n, d in zip(self.event_times, self.survival, self.at_risk, self.deaths):
            lines.append(f"{t:.6g},{s:.12g},{int(n)},{int(d)}")
        return "\n".join(lines) + "\n"


def _as_survival_arrays(times, events=None):
    if events is None:
        obs = list(times)
        times = [o.time_days for o in obs]
        events = [o.event for o in obs]
    t = np.asarray(times, dtype=float)
    e = np.asarray(events, dtype=bool)
    if t.shape != e.shape:
        raise InputError("times and events must have the same length")
    if t.size and (np.any(t < 0) or not np.all(np.isfinite(t))):
        raise InputError("survival times must be finite and non-negative")
    return t, e


def km_fit(times, events=None) -> KMCurve:
    """Product-limit estimate.

    Accepts either parallel ``times``/``events`` arrays or a single sequence
    of SurvivalObservation.  Subjects censored at an event time are counted
    at risk at that time.
    """
    t, e = _as_survival_arrays(times, events)
    if t.size == 0:
        raise InputError("km_fit() needs at least one observation")
    event_times = np.unique(t[e])
    # at risk = #{time >= t_i}
    sorted_t = np.sort(t)
    at_risk = t.size - np.searchsorted(sorted_t, event_times, side="left")
    ev = np.sort(t[e])
    deaths = np.searchsorted(ev, event_times, side="right") - np.searchsorted(ev, event_times, side="left")
    # (n - d) / n rounds once per factor, unlike 1 - d / n
    survival = np.cumprod((at_risk - deaths) / at_risk)
    return KMCurve(event_times, survival, at_risk.astype(int), deaths.astype(int))


def km_median(curve: KMCurve):
    """Smallest event time with S(t) <= 0.5, or None when not reached."""
    hit = np.nonzero(curve.survival <= 0.5)[0]
    if hit.size == 0:
        return None
    return float(curve.event_times[hit[0]])


def _median_from_rows(rows: np.ndarray) -> float:
    m = km_median(km_fit(rows[:, 0], rows[:, 1].astype(bool)))
    return math.inf if m is None else m


def km_median_ci(times, events=None, n_boot: int = 1000, rng: RngSpec | None = None,
                 level: float = 0.95, workers: int = 1):
    """Percentile-bootstrap interval for the KM median.

    Resamples without a median count as +inf.  If more than 2.5% of them do,
    the upper bound is reported as None ("not reached").
    """
    t, e = _as_survival_arrays(times, events)
    if int(e.sum()) < 2:
        raise InputError("km_median_ci() needs at least two events")
    rng = rng or RngSpec(0)
    rows = np.column_stack([t, e.astype(float)])
    meds = bootstrap_values(_median_from_rows, rows, n_boot, rng, workers=workers)
    alpha = _tail(level)
    n_inf = int(np.isinf(meds).sum())
    finite = meds[np.isfinite(meds)]
    lo_q, hi_q = alpha, 1.0 - alpha
    if n_inf > alpha * meds.size:
        hi = None
        lo = quantile(meds, lo_q)
        lo = None if math.isinf(lo) else lo
    else:
        # at most alpha of the mass is infinite: cap it at the largest finite value
        capped = np.where(np.isinf(meds), finite.max(), meds)
        lo, hi = quantile(capped, lo_q), quantile(capped, hi_q)
    return lo, hi


@dataclass(frozen=True)
class LogRankResult:
    statistic: float
    p_value: float
    observed_a: float
    expected_a: float
    variance: float


def logrank(times_a, events_a, times_b, events_b) -> LogRankResult:
    """Two-sample log-rank test (1 df chi-square)."""
    ta, ea = _as_survival_arrays(times_a, events_a)
    tb, eb = _as_survival_arrays(times_b, events_b)
    if not ea.any() or not eb.any():
        raise InputError("log-rank test needs at least one event in each group")
    t = np.concatenate([ta, tb])
    e = np.concatenate([ea, eb])
    in_a = np.concatenate([np.ones(ta.size, bool), np.zeros(tb.size, bool)])
    times = np.unique(t[e])

    sorted_all = np.sort(t)
    sorted_a = np.sort(ta)
    n = t.size - np.searchsorted(sorted_all, times, side="left")
    n_a = ta.size - np.searchsorted(sorted_a, times, side="left")
    ev_all = np.sort(t[e])
    ev_a = np.sort(t[e & in_a])
    d = np.searchsorted(ev_all, times, side="right") - np.searchsorted(ev_all, times, side="left")
    d_a = np.searchsorted(ev_a, times, side="right") - np.searchsorted(ev_a, times, side="left")

    frac = n_a / n
    expected = d * frac
    with np.errstate(invalid="ignore", divide="ignore"):
        var = np.where(n > 1, d * frac * (1.0 - frac) * (n - d) / (n - 1.0), 0.0)
    total_var = float(var.sum())
    if total_var <= 0.0:
        raise DegenerateTestError("log-rank variance is zero")
    diff = float(d_a.sum() - expected.sum())
    stat = diff * diff / total_var
    return LogRankResult(stat, chi2_sf(stat), float(d_a.sum()), float(expected.sum()), total_var)


# --------------------------------------------------------------------------
# Bootstrap engine
# --------------------------------------------------------------------------


def _evaluate(stat, sample):
    try:
        value = stat(sample)
    except UndefinedMetricError:
        return math.nan
    if value is None:
        return math.nan
    return float(value)


def bootstrap_values(stat, sample, n_boot: int, rng: RngSpec, workers: int = 1) -> np.ndarray:
    """Statistic evaluated on ``n_boot`` resamples (rows drawn with replacement).

    Iteration ``b`` draws its indices from ``rng.generator(b)``.  Undefined
    statistics (None, NaN or UndefinedMetricError) come back as NaN.
    """
    sample = np.asarray(sample)
    n = sample.shape[0]
    if n == 0:
        raise InputError("cannot bootstrap an empty sample")

    def one(b):
        idx = rng.generator(b).integers(0, n, size=n)
        return _evaluate(stat, sample[idx])

    return _run_iterations(one, n_boot, workers)


def _run_iterations(fn, n_boot, workers):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(fn, range(n_boot)))
    else:
        out = [fn(b) for b in range(n_boot)]
    return np.asarray(out, dtype=float)


def _tail(level: float) -> float:
    # (1 - 0.95) / 2 is 0.025000000000000022 in binary; snap to the decimal intent
    return round((1.0 - level) / 2.0, 12)


def percentile_ci(values, level: float = 0.95, name: str = "statistic"):
    """(lo, hi) from bootstrap replicates, dropping undefined (NaN) ones."""
    v = np.asarray(values, dtype=float)
    undefined = np.isnan(v)
    if undefined.mean() > MAX_UNDEFINED_FRACTION:
        raise UndefinedMetricError(
            f"{name} undefined in {undefined.sum()} of {v.size} bootstrap resamples"
        )
    v = v[~undefined]
    alpha = _tail(level)
    return quantile(v, alpha), quantile(v, 1.0 - alpha)


def sample_key(sample) -> int:
    """64-bit digest of a sample's contents, used to key its resampling stream."""
    a = np.ascontiguousarray(sample)
    h = hashlib.sha256(repr((a.shape, a.dtype.str)).encode())
    h.update(a.tobytes())
    return int.from_bytes(h.digest()[:8], "little")


def bootstrap_diff_ci(stat, sample_a, sample_b, n_boot: int = 1000, rng: RngSpec | None = None,
                      level: float = 0.95, workers: int = 1, name: str = "statistic"):
    """Point difference stat(A) - stat(B) with a percentile bootstrap CI.

    A and B are resampled independently at their original sizes.  Each
    sample's indices in iteration ``b`` come from ``rng.generator(b, key)``
    where ``key`` digests the sample's contents, so swapping A and B negates
    every replicate exactly (and identical samples resample identically).
    """
    a = np.asarray(sample_a)
    b_ = np.asarray(sample_b)
    if a.shape[0] == 0 or b_.shape[0] == 0:
        raise InputError("bootstrap_diff_ci() needs two non-empty samples")
    rng = rng or RngSpec(0)
    point_a, point_b = _evaluate(stat, a), _evaluate(stat, b_)
    if math.isnan(point_a) or math.isnan(point_b):
        raise UndefinedMetricError(f"{name} undefined on the original samples")
    key_a, key_b = sample_key(a), sample_key(b_)

    def one(i):
        ia = rng.generator(i, key_a).integers(0, a.shape[0], size=a.shape[0])
        ib = rng.generator(i, key_b).integers(0, b_.shape[0], size=b_.shape[0])
        return _evaluate(stat, a[ia]) - _evaluate(stat, b_[ib])

    diffs = _run_iterations(one, n_boot, workers)
    lo, hi = percentile_ci(diffs, level, name)
    return point_a - point_b, lo, hi
