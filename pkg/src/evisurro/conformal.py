"""Split conformal calibration of evidential intervals.

Each grid element is treated as an independent one-dimensional regression
target. Calibration members score the element's raw interval with two
non-conformity values (lower and upper deviations); finite-sample
quantiles of those scores shift the raw bounds outward (or inward, when
scores are negative).

Because the two score sets are calibrated separately and their miss
events are disjoint (a point cannot fall below the lower bound and above
the upper bound at once), each side receives half the miscoverage
budget: the side quantile sits at rank ceil((n+1)(1 - alpha/2)). Under
exchangeability the calibrated interval then covers with probability at
least 1 - alpha, and at most 1 - alpha + 2/(n+1) when scores are
distinct. Calibrating both sides at the full level 1 - alpha would lose
roughly alpha of coverage (misses add), which the coverage audit makes
immediately visible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .container import read_container, write_container
from .evidential import RawInterval

__all__ = [
    "MiscoverageLevel",
    "CalibrationTable",
    "CalibratedInterval",
    "CoverageStats",
    "LevelAudit",
    "CoverageReport",
    "ConformalError",
    "SplitOverlapError",
    "nonconformity_scores",
    "rank_index",
    "finite_sample_quantile",
    "max_confidence",
    "build_table",
    "table_quantiles",
    "calibrate",
    "calibrated_intervals",
    "coverage_audit",
    "save_table",
    "load_table",
]

UNATTAINABLE = float("inf")


class ConformalError(Exception):
    """Calibration preconditions violated."""


class SplitOverlapError(ConformalError):
    """A member id appears in more than one split."""


@dataclass(frozen=True)
class MiscoverageLevel:
    """Target miscoverage alpha; coverage aim is 1 - alpha."""

    value: float

    def __post_init__(self):
        if not 0.0 < self.value < 1.0:
            raise ValueError("miscoverage level must lie in (0, 1)")


@dataclass(frozen=True)
class CalibrationTable:
    """Per-element sorted non-conformity scores from the calibration split.

    ``e_lo`` and ``e_hi`` have shape (n, n_elements), ascending along the
    first axis. ``delta`` records the raw-interval confidence complement
    used to produce the scores; prediction-time raw intervals must use
    the same delta.
    """

    grid_shape: tuple
    e_lo: np.ndarray
    e_hi: np.ndarray
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "grid_shape", tuple(int(g) for g in self.grid_shape))
        n_elements = int(np.prod(self.grid_shape))
        if self.e_lo.shape != self.e_hi.shape or self.e_lo.ndim != 2:
            raise ValueError("score arrays must share shape (n, n_elements)")
        if self.e_lo.shape[1] != n_elements:
            raise ValueError("score arrays do not match the grid shape")
        if self.e_lo.shape[0] < 1:
            raise ValueError("need at least one calibration member")
        if np.any(np.diff(self.e_lo, axis=0) < 0) or np.any(
            np.diff(self.e_hi, axis=0) < 0
        ):
            raise ValueError("score arrays must be sorted ascending")

    @property
    def n(self):
        return self.e_lo.shape[0]


@dataclass(frozen=True)
class CalibratedInterval:
    """Conformally adjusted interval; ``clamped`` marks degenerate elements
    that were collapsed to their midpoint."""

    lo: object
    hi: object
    level: MiscoverageLevel
    clamped: object = None

    def __post_init__(self):
        if np.any(np.asarray(self.lo) > np.asarray(self.hi)):
            raise ValueError("calibrated interval requires lo <= hi")

    @property
    def width(self):
        return np.asarray(self.hi) - np.asarray(self.lo)


def nonconformity_scores(raw: RawInterval, y):
    """Lower and upper deviations of y from the raw interval.

    Both are negative exactly when y lies strictly inside.
    """
    y = np.asarray(y, dtype=np.float64)
    return np.asarray(raw.lo) - y, y - np.asarray(raw.hi)


def rank_index(n, alpha):
    """k = ceil((n+1)(1-alpha)), in exact rational arithmetic.

    Floating ceil would misround cases like n=19, alpha=0.1 (where
    20 * float(0.9) lands just above 18).
    """
    if n < 1:
        raise ValueError("need n >= 1")
    return math.ceil((n + 1) * (1 - Fraction(alpha)))


def max_confidence(n):
    """Largest attainable confidence with n calibration members.

    Two-sided calibration needs rank ceil((n+1)(1 - alpha/2)) <= n on
    each side, i.e. alpha >= 2/(n+1), so the bound is 1 - 2/(n+1).
    """
    return 1.0 - 2.0 / (n + 1)


def finite_sample_quantile(scores, level: MiscoverageLevel):
    """The k-th smallest score with k = ceil((n+1)(1-alpha)).

    Returns the infinite-width sentinel when k exceeds n, i.e. the level
    is unattainable with this calibration size.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size < 1:
        raise ValueError("scores must be a nonempty 1-D array")
    n = scores.size
    k = rank_index(n, level.value)
    if k > n:
        return UNATTAINABLE
    return float(np.sort(scores, kind="stable")[k - 1])


def _split_ids(dataset, name):
    return {m.member_id for m in dataset.split(name)}


def _check_disjoint(dataset, *names):
    seen = {}
    for name in names:
        for mid in _split_ids(dataset, name):
            if mid in seen and seen[mid] != name:
                raise SplitOverlapError(
                    f"member {mid} appears in both {seen[mid]!r} and {name!r};"
                    " independence of calibration data is essential"
                )
            seen[mid] = name


def build_table(checkpoint, dataset, delta, split="calibration") -> CalibrationTable:
    """Score every calibration member against the raw interval at 1 - delta.

    Scores are per grid element, sorted ascending over members.
    """
    _check_disjoint(dataset, "train", split)
    members = dataset.split(split)
    if not members:
        raise ConformalError(f"{split} split is empty")
    x = np.stack([m.params for m in members]).astype(np.float64)
    y = np.stack([m.field for m in members]).astype(np.float64)
    raw = checkpoint.raw_intervals(x, delta)
    e_lo, e_hi = nonconformity_scores(raw, y)
    n = len(members)
    e_lo = np.sort(e_lo.reshape(n, -1), axis=0, kind="stable")
    e_hi = np.sort(e_hi.reshape(n, -1), axis=0, kind="stable")
    return CalibrationTable(
        grid_shape=dataset.grid_shape, e_lo=e_lo, e_hi=e_hi, delta=float(delta)
    )


def table_quantiles(table: CalibrationTable, level: MiscoverageLevel):
    """Per-element (Q_lo, Q_hi) at the requested level, grid-shaped.

    Each side is calibrated at alpha/2 (rank ceil((n+1)(1 - alpha/2))),
    which is what makes the two-sided interval cover at 1 - alpha.
    Returns (q_lo, q_hi, attainable); unattainable levels yield infinite
    sentinels.
    """
    k = rank_index(table.n, level.value / 2.0)
    if k > table.n:
        full = np.full(table.grid_shape, UNATTAINABLE)
        return full, full.copy(), False
    q_lo = table.e_lo[k - 1].reshape(table.grid_shape)
    q_hi = table.e_hi[k - 1].reshape(table.grid_shape)
    return q_lo, q_hi, True


def calibrate(raw: RawInterval, q_lo, q_hi, level: MiscoverageLevel) -> CalibratedInterval:
    """Shift the raw bounds by the score quantiles (Eq.-13-style update).

    Negative quantiles tighten the band; positive ones widen it. If the
    shifted bounds cross, both collapse to their midpoint and the element
    is marked in ``clamped``.
    """
    lo = np.asarray(raw.lo, dtype=np.float64) - np.asarray(q_lo, dtype=np.float64)
    hi = np.asarray(raw.hi, dtype=np.float64) + np.asarray(q_hi, dtype=np.float64)
    crossed = lo > hi
    if np.any(crossed):
        mid = 0.5 * (lo + hi)
        lo = np.where(crossed, mid, lo)
        hi = np.where(crossed, mid, hi)
    return CalibratedInterval(lo=lo, hi=hi, level=level, clamped=crossed)


def calibrated_intervals(checkpoint, table: CalibrationTable, x, level: MiscoverageLevel):
    """Calibrated interval for input(s) x, in original units."""
    raw = checkpoint.raw_intervals(x, table.delta)
    q_lo, q_hi, _ = table_quantiles(table, level)
    return calibrate(raw, q_lo, q_hi, level)


@dataclass(frozen=True)
class CoverageStats:
    coverage: float
    mean_width: float
    median_width: float
    per_element_coverage: np.ndarray
    per_member_coverage: np.ndarray
    flagged_elements: int


@dataclass(frozen=True)
class LevelAudit:
    level: float
    attainable: bool
    calibrated: CoverageStats | None
    uncalibrated: CoverageStats


@dataclass(frozen=True)
class CoverageReport:
    n_cal: int
    n_test: int
    audits: list

    def to_records(self):
        """One record per (level, variant, aggregation), JSON-friendly."""
        records = []
        for audit in self.audits:
            for variant, stats in (
                ("calibrated", audit.calibrated),
                ("uncalibrated", audit.uncalibrated),
            ):
                if stats is None:
                    continue
                for aggregation, cov in (
                    ("overall", stats.coverage),
                    ("element", float(np.mean(stats.per_element_coverage))),
                    ("member", float(np.mean(stats.per_member_coverage))),
                ):
                    records.append(
                        {
                            "level": audit.level,
                            "variant": variant,
                            "aggregation": aggregation,
                            "coverage": cov,
                            "mean_width": stats.mean_width,
                            "median_width": stats.median_width,
                            "flagged_elements": stats.flagged_elements,
                            "attainable": audit.attainable,
                        }
                    )
        return records

    def to_jsonl(self):
        return "".join(json.dumps(r) + "\n" for r in self.to_records())

    def summary_table(self):
        cal_note = (
            "no calibration table"
            if self.n_cal == 0
            else f"max attainable confidence = {max_confidence(self.n_cal):.6f}"
        )
        lines = [
            f"calibration size n = {self.n_cal}, test members = {self.n_test},"
            f" {cal_note}",
            f"{'alpha':>7} {'variant':>13} {'coverage':>9} {'mean_w':>10}"
            f" {'median_w':>10} {'flagged':>8}",
        ]
        for audit in self.audits:
            for variant, stats in (
                ("calibrated", audit.calibrated),
                ("uncalibrated", audit.uncalibrated),
            ):
                if stats is None:
                    continue
                note = "" if audit.attainable or variant == "uncalibrated" else "  (unattainable)"
                lines.append(
                    f"{audit.level:>7.3f} {variant:>13} {stats.coverage:>9.4f}"
                    f" {stats.mean_width:>10.4f} {stats.median_width:>10.4f}"
                    f" {stats.flagged_elements:>8d}{note}"
                )
        return "\n".join(lines)


def _coverage_stats(y, lo, hi, flagged):
    hits = (y >= lo) & (y <= hi)
    widths = hi - lo
    grid_axes = tuple(range(1, y.ndim))
    return CoverageStats(
        coverage=float(np.mean(hits)),
        mean_width=float(np.mean(widths)),
        median_width=float(np.median(widths)),
        per_element_coverage=hits.mean(axis=0),
        per_member_coverage=hits.mean(axis=grid_axes),
        flagged_elements=int(flagged),
    )


def coverage_audit(
    checkpoint, table: CalibrationTable | None, dataset, levels, split="test"
) -> CoverageReport:
    """Empirical coverage and widths on the test split, per level.

    Calibrated intervals come from the table (raw intervals at the
    table's delta plus per-element quantile shifts); the uncalibrated
    comparison uses raw intervals directly at confidence 1 - alpha.
    Without a table only the uncalibrated family is reported.
    """
    _check_disjoint(dataset, "train", "calibration", split)
    members = dataset.split(split)
    if not members:
        raise ConformalError(f"{split} split is empty")
    x = np.stack([m.params for m in members]).astype(np.float64)
    y = np.stack([m.field for m in members]).astype(np.float64)
    raw = None if table is None else checkpoint.raw_intervals(x, table.delta)

    audits = []
    for level_value in levels:
        level = level_value if isinstance(level_value, MiscoverageLevel) else MiscoverageLevel(float(level_value))
        attainable = True
        cal_stats = None
        if table is not None:
            q_lo, q_hi, attainable = table_quantiles(table, level)
            cal = calibrate(raw, q_lo, q_hi, level)
            flagged = int(np.sum(cal.clamped))
            if not attainable:
                flagged = int(np.prod(table.grid_shape))
            cal_stats = _coverage_stats(
                y, np.asarray(cal.lo), np.asarray(cal.hi), flagged
            )

        raw_level = checkpoint.raw_intervals(x, level.value)
        unc_stats = _coverage_stats(
            y, np.asarray(raw_level.lo), np.asarray(raw_level.hi), 0
        )
        audits.append(
            LevelAudit(
                level=level.value,
                attainable=attainable,
                calibrated=cal_stats,
                uncalibrated=unc_stats,
            )
        )
    return CoverageReport(
        n_cal=0 if table is None else table.n, n_test=len(members), audits=audits
    )


def save_table(table: CalibrationTable, path):
    """Same container format as checkpoints, table-tagged sections."""
    write_container(
        path,
        {
            "table/grid_shape": np.array(table.grid_shape, dtype=np.int64),
            "table/delta": np.array(table.delta),
            "table/e_lo": table.e_lo,
            "table/e_hi": table.e_hi,
        },
    )


def load_table(path) -> CalibrationTable:
    s = read_container(path)
    return CalibrationTable(
        grid_shape=tuple(int(g) for g in s["table/grid_shape"]),
        e_lo=s["table/e_lo"],
        e_hi=s["table/e_hi"],
        delta=float(s["table/delta"]),
    )
