"""Weekly lice-count files: parsing, farming-period selection and the two
calibration datasets (green segments and removal-count distributions).

Input files are delimiter-separated with a header row. Columns are mapped to
the canonical names in :data:`CANONICAL_COLUMNS` through ``column_map.json``
(aliases plus ignorable columns); that mapping is the adaptation point for
differently named exports.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

CANONICAL_COLUMNS = (
    "locality_id",
    "year",
    "week",
    "adult_female_lpf",
    "moving_lpf",
    "stuck_lpf",
    "mechanical",
    "medicinal",
    "cleanerfish",
    "region",
)
_LPF_COLUMNS = ("adult_female_lpf", "moving_lpf", "stuck_lpf")
_FLAG_COLUMNS = ("mechanical", "medicinal", "cleanerfish")
_TRUE = {"1", "true", "yes", "ja", "x", "y"}
_FALSE = {"", "0", "false", "no", "nei", "n"}
WEEKS_PER_YEAR = 52


@dataclass(frozen=True)
class LiceRecord:
    locality_id: str
    year: int
    week: int
    adult_female_lpf: float | None
    moving_lpf: float | None = None
    stuck_lpf: float | None = None
    mechanical: bool = False
    medicinal: bool = False
    cleanerfish: bool = False
    region: str = ""

    def __post_init__(self):
        week_index(self.year, self.week)
        for name in _LPF_COLUMNS:
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be >= 0, got {v}")

    @property
    def reported(self) -> bool:
        return self.adult_female_lpf is not None


def week_index(year: int, week: int) -> int:
    """Running week number; consecutive ISO weeks differ by exactly one."""
    try:
        monday = dt.date.fromisocalendar(int(year), int(week), 1)
    except ValueError as exc:
        raise ValueError(f"invalid ISO (year, week) = ({year}, {week}): {exc}") from None
    return monday.toordinal() // 7


def year_week(index: int) -> tuple[int, int]:
    iso = dt.date.fromordinal(index * 7 + 1).isocalendar()
    return iso[0], iso[1]


# --- parsing ---------------------------------------------------------------------


def load_column_map(path: str | Path | None = None) -> tuple[dict[str, str], set[str]]:
    if path is None:
        text = resources.files("aquaharvest.data").joinpath("column_map.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    data = json.loads(text)
    return dict(data.get("aliases", {})), set(data.get("ignore", []))


def load_region_table() -> dict[str, str]:
    text = resources.files("aquaharvest.data").joinpath("regions.json").read_text(encoding="utf-8")
    table = {}
    for canonical, names in json.loads(text).items():
        for name in [canonical, *names]:
            table[name.casefold()] = canonical
    return table


def normalize_region(name: str, table: dict[str, str] | None = None) -> str:
    table = load_region_table() if table is None else table
    key = name.strip().casefold()
    return table.get(key, name.strip())


def _float_or_none(text: str, decimal_comma: bool) -> float | None:
    text = text.strip()
    if not text:
        return None
    if decimal_comma:
        text = text.replace(",", ".")
    return float(text)


def _flag(text: str) -> bool:
    t = text.strip().casefold()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ValueError(f"not a boolean flag: {text!r}")


def parse_lice_file(path: str | Path, column_map: str | Path | None = None) -> list[LiceRecord]:
    """Parse a weekly lice export into :class:`LiceRecord` objects.

    Empty numeric cells become ``None``. Unknown columns are rejected;
    malformed rows are skipped and counted in a warning.
    """
    aliases, ignore = load_column_map(column_map)
    raw = Path(path).read_text(encoding="utf-8-sig")
    first = raw.splitlines()[0] if raw else ""
    delim = max([",", ";", "\t"], key=first.count) if first else ","
    reader = csv.reader(io.StringIO(raw), delimiter=delim)
    try:
        header = next(reader)
    except StopIteration:
        return []

    columns: list[str | None] = []
    unknown = []
    for name in header:
        name = name.strip()
        canon = name if name in CANONICAL_COLUMNS else aliases.get(name)
        if canon is None and name not in ignore:
            unknown.append(name)
        columns.append(canon)
    if unknown:
        raise ValueError(
            f"unknown column(s) {unknown}; expected schema: {list(CANONICAL_COLUMNS)} "
            "(or aliases listed in the column map)"
        )
    required = {"locality_id", "year", "week", "adult_female_lpf"}
    missing = required - set(c for c in columns if c)
    if missing:
        raise ValueError(f"missing required column(s) {sorted(missing)}; expected schema: {list(CANONICAL_COLUMNS)}")

    decimal_comma = delim != ","
    records, skipped = [], 0
    for lineno, row in enumerate(reader, start=2):
        if not any(cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            skipped += 1
            continue
        values = {c: v for c, v in zip(columns, row) if c}
        try:
            rec = LiceRecord(
                locality_id=values["locality_id"].strip(),
                year=int(values["year"]),
                week=int(values["week"]),
                adult_female_lpf=_float_or_none(values["adult_female_lpf"], decimal_comma),
                moving_lpf=_float_or_none(values.get("moving_lpf", ""), decimal_comma),
                stuck_lpf=_float_or_none(values.get("stuck_lpf", ""), decimal_comma),
                mechanical=_flag(values.get("mechanical", "")),
                medicinal=_flag(values.get("medicinal", "")),
                cleanerfish=_flag(values.get("cleanerfish", "")),
                region=values.get("region", "").strip(),
            )
        except (ValueError, KeyError) as exc:
            log.debug("line %d skipped: %s", lineno, exc)
            skipped += 1
            continue
        records.append(rec)
    if skipped:
        warnings.warn(f"{path}: skipped {skipped} malformed row(s)", RuntimeWarning, stacklevel=2)
    return records


def write_lice_file(records: Iterable[LiceRecord], path: str | Path, delimiter: str = ",") -> None:
    """Write records with the canonical header; inverse of :func:`parse_lice_file`."""

    def cell(v):
        if v is None:
            return ""
        if isinstance(v, bool):
            return "1" if v else "0"
        if isinstance(v, float):
            return repr(v)
        return str(v)

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(CANONICAL_COLUMNS)
        for r in records:
            w.writerow([cell(getattr(r, c)) for c in CANONICAL_COLUMNS])


# --- farming periods ---------------------------------------------------------------


@dataclass
class FarmingPeriod:
    """Contiguous weekly records of one rotation at one locality.

    Weeks inside the period without a row are filled with unreported
    placeholder records, so ``records[k]`` is week offset ``k``.
    """

    locality_id: str
    start: tuple[int, int]
    end: tuple[int, int]
    records: list[LiceRecord]
    mechanical_times: list[int] = field(default_factory=list)

    @property
    def n_weeks(self) -> int:
        return len(self.records)

    def mechanical_years(self) -> list[Fraction]:
        return [Fraction(k, WEEKS_PER_YEAR) for k in self.mechanical_times]


def _split_periods(records: Sequence[LiceRecord], gap_weeks: int) -> list[FarmingPeriod]:
    by_week: dict[int, LiceRecord] = {}
    for rec in records:
        idx = week_index(rec.year, rec.week)
        prev = by_week.get(idx)
        # duplicate weeks: keep the reported row and merge treatment flags
        if prev is None or (not prev.reported and rec.reported):
            merged = rec
        else:
            merged = prev
        if prev is not None:
            merged = replace(
                merged,
                mechanical=prev.mechanical or rec.mechanical,
                medicinal=prev.medicinal or rec.medicinal,
                cleanerfish=prev.cleanerfish or rec.cleanerfish,
            )
        by_week[idx] = merged

    reported = sorted(i for i, r in by_week.items() if r.reported)
    runs: list[tuple[int, int]] = []
    for i in reported:
        if runs and i - runs[-1][1] - 1 < gap_weeks:
            runs[-1] = (runs[-1][0], i)
        else:
            runs.append((i, i))

    periods = []
    for lo, hi in runs:
        template = by_week[lo]
        recs = []
        for i in range(lo, hi + 1):
            rec = by_week.get(i)
            if rec is None:
                y, w = year_week(i)
                rec = LiceRecord(template.locality_id, y, w, None, region=template.region)
            recs.append(rec)
        periods.append(
            FarmingPeriod(
                locality_id=template.locality_id,
                start=year_week(lo),
                end=year_week(hi),
                records=recs,
                mechanical_times=[k for k, r in enumerate(recs) if r.mechanical],
            )
        )
    return periods


def select_mechanical_only_periods(
    records: Sequence[LiceRecord], region: str | None, gap_weeks: int = 4
) -> list[FarmingPeriod]:
    """Farming periods in ``region`` that used no medicinal or cleaner-fish treatment.

    A period is a maximal stretch of reported weeks; ``gap_weeks`` or more
    consecutive weeks without a lice count end it. ``region=None`` keeps all
    regions.
    """
    table = load_region_table()
    want = normalize_region(region, table) if region is not None else None
    by_loc: dict[str, list[LiceRecord]] = {}
    for rec in records:
        if want is not None and normalize_region(rec.region, table) != want:
            continue
        by_loc.setdefault(rec.locality_id, []).append(rec)

    selected = []
    for loc in sorted(by_loc):
        for period in _split_periods(by_loc[loc], gap_weeks):
            if any(r.medicinal or r.cleanerfish for r in period.records):
                continue
            selected.append(period)
    return selected


def flatten(periods: Iterable[FarmingPeriod]) -> list[LiceRecord]:
    return [rec for p in periods for rec in p.records]


# --- calibration datasets ----------------------------------------------------------


@dataclass
class GreenSegment:
    locality_id: str
    times: np.ndarray
    lpf: np.ndarray


def extract_green_segments(periods: Sequence[FarmingPeriod], min_points: int = 2) -> list[GreenSegment]:
    """Lice counts from the start of each period up to its first mechanical removal.

    The segment stops early at the first unreported week. Periods without a
    removal, or whose segment has fewer than ``min_points`` points, yield
    nothing.
    """
    out = []
    for p in periods:
        if not p.mechanical_times:
            continue
        first = p.mechanical_times[0]
        lpf = []
        for rec in p.records[:first]:
            if rec.adult_female_lpf is None:
                break
            lpf.append(rec.adult_female_lpf)
        if len(lpf) < min_points:
            continue
        times = np.array([float(Fraction(k, WEEKS_PER_YEAR)) for k in range(len(lpf))])
        out.append(GreenSegment(p.locality_id, times, np.asarray(lpf, dtype=float)))
    return out


@dataclass
class RemovalDistribution:
    """Empirical distribution of cumulative removal counts at time ``t``."""

    t: float
    counts: np.ndarray
    mean: float
    std: float

    @classmethod
    def from_counts(cls, t: float, counts) -> "RemovalDistribution":
        counts = np.asarray(counts, dtype=np.int64)
        if counts.size == 0:
            raise ValueError("empty count sample")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        return cls(t=float(t), counts=counts, mean=float(counts.mean()), std=float(counts.std()))

    def histogram(self) -> tuple[np.ndarray, np.ndarray]:
        """Count values ``0..max`` and their relative frequencies."""
        freq = np.bincount(self.counts) / self.counts.size
        return np.arange(freq.size), freq

    def to_dict(self) -> dict:
        return {"t": self.t, "counts": self.counts.tolist(), "mean": self.mean, "std": self.std}

    @classmethod
    def from_dict(cls, d: dict) -> "RemovalDistribution":
        return cls.from_counts(d["t"], d["counts"])


def removal_distribution_at(periods: Sequence[FarmingPeriod], t: float) -> RemovalDistribution:
    """Cumulative mechanical removals with week offset ``<= t`` (years), per period."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if not periods:
        raise ValueError("no farming periods")
    # k/52 <= t compared in weeks, tolerant to float round-off in t
    limit = t * WEEKS_PER_YEAR + 1e-9
    counts = [sum(1 for k in p.mechanical_times if k <= limit) for p in periods]
    return RemovalDistribution.from_counts(t, counts)


# --- persistence -------------------------------------------------------------------


def save_segments(segments: Sequence[GreenSegment], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["segment", "locality_id", "t", "lpf"])
        for i, s in enumerate(segments):
            for t, v in zip(s.times, s.lpf):
                w.writerow([i, s.locality_id, repr(float(t)), repr(float(v))])


def load_segments(path: str | Path) -> list[GreenSegment]:
    rows: dict[int, list[tuple[str, float, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(int(row["segment"]), []).append((row["locality_id"], float(row["t"]), float(row["lpf"])))
    return [
        GreenSegment(v[0][0], np.array([x[1] for x in v]), np.array([x[2] for x in v])) for _, v in sorted(rows.items())
    ]


def save_distributions(dists: Sequence[RemovalDistribution], path: str | Path) -> None:
    Path(path).write_text(json.dumps([d.to_dict() for d in dists], indent=1))


def load_distributions(path: str | Path) -> list[RemovalDistribution]:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = [data]
    return [RemovalDistribution.from_dict(d) for d in data]
