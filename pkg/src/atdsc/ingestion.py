"""Trip-record and zone-adjacency ingestion, plus time-bucketed aggregation.

Trip files are header-first CSV in the TLC-like schema::

    pickup_datetime,dropoff_datetime,pickup_zone,dropoff_zone,
    trip_distance,total_amount,payment_type,passenger_count[,driver_id]

The optional trailing ``driver_id`` column enables cruise-gap inference.
"""
from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping

TRIP_COLUMNS = (
    "pickup_datetime",
    "dropoff_datetime",
    "pickup_zone",
    "dropoff_zone",
    "trip_distance",
    "total_amount",
    "payment_type",
    "passenger_count",
)
DRIVER_COLUMN = "driver_id"

WEEKPART = ("weekday", "weekend")
WEEKDAYS = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")

STATS_FORMAT_VERSION = 1


class IngestionError(ValueError):
    """Fatal input problem (unreadable stream, bad header, bad adjacency)."""


def _lines(stream) -> Iterator[str]:
    """Yield decoded text lines from a binary or text stream."""
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    try:
        for raw in stream:
            if isinstance(raw, (bytes, bytearray)):
                raw = raw.decode("utf-8")
            yield raw
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestionError(f"unreadable stream: {exc}") from exc


# --------------------------------------------------------------------------
# Zone graph
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ZoneGraph:
    """Undirected zone adjacency. ``neighbors`` is always symmetric."""

    zones: tuple[int, ...]
    neighbors: Mapping[int, frozenset[int]]
    zone_names: Mapping[int, str] = field(default_factory=dict)

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[int, int]], zones: Iterable[int] = (),
                   zone_names: Mapping[int, str] | None = None) -> "ZoneGraph":
        adj: dict[int, set[int]] = defaultdict(set)
        for z in zones:
            adj[int(z)]
        for a, b in edges:
            a, b = int(a), int(b)
            if a == b:
                raise IngestionError(f"zone {a} lists itself as a neighbor")
            adj[a].add(b)
            adj[b].add(a)
        if len(adj) < 2:
            raise IngestionError(f"a zone graph needs at least 2 zones, got {len(adj)}")
        return cls(
            zones=tuple(sorted(adj)),
            neighbors={z: frozenset(adj[z]) for z in sorted(adj)},
            zone_names=dict(zone_names or {}),
        )

    def __len__(self) -> int:
        return len(self.zones)

    def __contains__(self, zone) -> bool:
        return zone in self.neighbors

    def index(self) -> dict[int, int]:
        return {z: i for i, z in enumerate(self.zones)}

    def edges(self) -> list[tuple[int, int]]:
        return sorted((a, b) for a in self.zones for b in self.neighbors[a] if a < b)

    def adjacent(self, a: int, b: int) -> bool:
        return b in self.neighbors.get(a, ())

    def components(self) -> dict[int, int]:
        """Map zone -> component label (smallest zone id in the component)."""
        label: dict[int, int] = {}
        for root in self.zones:
            if root in label:
                continue
            stack = [root]
            label[root] = root
            while stack:
                z = stack.pop()
                for n in self.neighbors[z]:
                    if n not in label:
                        label[n] = root
                        stack.append(n)
        return label

    def connected(self, a: int, b: int) -> bool:
        comp = self.components()
        return comp[a] == comp[b]


def load_zone_adjacency(stream) -> ZoneGraph:
    """Parse ``zone_id: n1,n2,...`` lines; ``#`` starts a comment."""
    edges = []
    seen: set[int] = set()
    for lineno, line in enumerate(_lines(stream), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        head, sep, tail = line.partition(":")
        if not sep:
            raise IngestionError(f"line {lineno}: expected 'zone_id: neighbors'")
        try:
            zone = int(head)
            nbrs = [int(tok) for tok in tail.replace(" ", "").split(",") if tok]
        except ValueError as exc:
            raise IngestionError(f"line {lineno}: {exc}") from exc
        if zone in seen:
            raise IngestionError(f"line {lineno}: duplicate line for zone {zone}")
        seen.add(zone)
        for n in nbrs:
            if n == zone:
                raise IngestionError(f"line {lineno}: zone {zone} lists itself as a neighbor")
            edges.append((zone, n))
    return ZoneGraph.from_edges(edges, zones=seen)


def write_zone_adjacency(graph: ZoneGraph, fh: IO[str]) -> None:
    for z in graph.zones:
        fh.write(f"{z}: {','.join(str(n) for n in sorted(graph.neighbors[z]))}\n")


# --------------------------------------------------------------------------
# Trip records
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TripRecord:
    pickup_time: datetime
    dropoff_time: datetime
    pickup_zone: int
    dropoff_zone: int
    trip_distance: float
    total_payment: float
    payment_type: int
    passenger_count: int
    driver_id: str | None = None

    @property
    def duration_minutes(self) -> float:
        return (self.dropoff_time - self.pickup_time).total_seconds() / 60.0


@dataclass
class RejectionReport:
    malformed: int = 0
    unknown_zone: int = 0
    nonpositive_duration: int = 0

    @property
    def total(self) -> int:
        return self.malformed + self.unknown_zone + self.nonpositive_duration


def _parse_row(row: list[str], with_driver: bool) -> TripRecord:
    rec = TripRecord(
        pickup_time=datetime.fromisoformat(row[0].strip()),
        dropoff_time=datetime.fromisoformat(row[1].strip()),
        pickup_zone=int(row[2]),
        dropoff_zone=int(row[3]),
        trip_distance=float(row[4]),
        total_payment=float(row[5]),
        payment_type=int(row[6]),
        passenger_count=int(row[7]),
        driver_id=(row[8].strip() or None) if with_driver else None,
    )
    if not (rec.trip_distance >= 0 and rec.total_payment >= 0 and rec.passenger_count >= 0):
        raise ValueError("negative quantity")
    if not (math.isfinite(rec.trip_distance) and math.isfinite(rec.total_payment)):
        raise ValueError("non-finite quantity")
    return rec


def parse_trip_records(stream, graph: ZoneGraph) -> tuple[list[TripRecord], RejectionReport]:
    """Parse a trip CSV, dropping (and counting) rows that fail validation."""
    reader = csv.reader(_lines(stream))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise IngestionError("empty trip stream: missing header") from None
    except csv.Error as exc:
        raise IngestionError(f"unreadable trip stream: {exc}") from exc
    if tuple(header[:len(TRIP_COLUMNS)]) != TRIP_COLUMNS or len(header) > len(TRIP_COLUMNS) + 1 \
            or (len(header) == len(TRIP_COLUMNS) + 1 and header[-1] != DRIVER_COLUMN):
        raise IngestionError(f"unexpected trip header: {','.join(header)}")
    with_driver = len(header) == len(TRIP_COLUMNS) + 1
    ncols = len(header)

    records: list[TripRecord] = []
    report = RejectionReport()
    while True:
        try:
            row = next(reader)
        except StopIteration:
            break
        except csv.Error:
            report.malformed += 1
            continue
        if not row:
            continue
        if len(row) != ncols:
            report.malformed += 1
            continue
        try:
            rec = _parse_row(row, with_driver)
        except ValueError:
            report.malformed += 1
            continue
        if rec.pickup_zone not in graph or rec.dropoff_zone not in graph:
            report.unknown_zone += 1
            continue
        if rec.dropoff_time <= rec.pickup_time:
            report.nonpositive_duration += 1
            continue
        records.append(rec)
    return records, report


def write_trip_records(records: Iterable[TripRecord], fh: IO[str], with_driver: bool = False) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(TRIP_COLUMNS + ((DRIVER_COLUMN,) if with_driver else ()))
    for r in records:
        row = [
            r.pickup_time.isoformat(sep=" "),
            r.dropoff_time.isoformat(sep=" "),
            r.pickup_zone,
            r.dropoff_zone,
            f"{r.trip_distance:.2f}",
            f"{r.total_payment:.2f}",
            r.payment_type,
            r.passenger_count,
        ]
        if with_driver:
            row.append(r.driver_id or "")
        writer.writerow(row)


# --------------------------------------------------------------------------
# Time buckets
# --------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class TimeBucket:
    month: int
    day_kind: str
    hour: int

    @property
    def key(self) -> str:
        return f"{self.month:02d}-{self.day_kind}-{self.hour:02d}"

    @classmethod
    def from_key(cls, key: str) -> "TimeBucket":
        month, kind, hour = key.strip().split("-")
        return cls(int(month), kind, int(hour))

    def __str__(self) -> str:
        return self.key


@dataclass(frozen=True)
class BucketConfig:
    """``weekpart`` groups days into weekday/weekend; ``weekday`` keeps all seven."""

    day_kinds: str = "weekpart"

    def __post_init__(self):
        if self.day_kinds not in ("weekpart", "weekday"):
            raise ValueError(f"unknown day_kinds {self.day_kinds!r}")

    @property
    def kinds(self) -> tuple[str, ...]:
        return WEEKPART if self.day_kinds == "weekpart" else WEEKDAYS

    def kind_of(self, ts: datetime) -> str:
        wd = ts.weekday()
        if self.day_kinds == "weekpart":
            return "weekend" if wd >= 5 else "weekday"
        return WEEKDAYS[wd]

    def bucket_of(self, ts: datetime) -> TimeBucket:
        return TimeBucket(ts.month, self.kind_of(ts), ts.hour)

    def days_per_week(self, kind: str) -> int:
        if self.day_kinds == "weekday":
            return 1
        return 5 if kind == "weekday" else 2

    def buckets(self, months: Iterable[int]) -> list[TimeBucket]:
        """Every bucket for the given months: months x day-kinds x 24."""
        return [TimeBucket(m, k, h) for m in sorted(set(months)) for k in self.kinds for h in range(24)]


# --------------------------------------------------------------------------
# Aggregation
# --------------------------------------------------------------------------

@dataclass
class RunningStats:
    """Welford accumulator; ``merge`` is associative so shards can be combined."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, x: float) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def merge(self, other: "RunningStats") -> "RunningStats":
        n = self.count + other.count
        if n == 0:
            return RunningStats()
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return RunningStats(n, mean, m2)

    @property
    def std(self) -> float:
        return math.sqrt(self.m2 / self.count) if self.count > 0 else 0.0


@dataclass
class ZoneCell:
    pickups: int = 0
    payment: float = 0.0
    minutes: float = 0.0


@dataclass
class AreaStatsTable:
    """Per (zone, bucket) aggregates. Keys use zone ids and :class:`TimeBucket`."""

    zones: tuple[int, ...]
    bucket_config: BucketConfig
    cells: dict[tuple[int, TimeBucket], ZoneCell]
    prior_counts: dict[tuple[int, TimeBucket], int]
    delivery_pairs: dict[tuple[int, int, TimeBucket], RunningStats]
    cruise_pairs: dict[tuple[int, int, TimeBucket], RunningStats]
    global_delivery: dict[int, RunningStats]
    global_cruise: dict[int, RunningStats]
    durations: dict[int, list[float]]

    def months(self) -> list[int]:
        return sorted(self.global_delivery)

    def buckets(self, month: int | None = None) -> list[TimeBucket]:
        months = self.months() if month is None else [month]
        return self.bucket_config.buckets(months)

    def pickup_count(self, zone: int, bucket: TimeBucket) -> int:
        cell = self.cells.get((zone, bucket))
        return cell.pickups if cell else 0

    def prior_count(self, zone: int, bucket: TimeBucket) -> int:
        return self.prior_counts.get((zone, bucket), 0)

    def delivery_minutes(self, zone: int, bucket: TimeBucket) -> float:
        cell = self.cells.get((zone, bucket))
        return cell.minutes if cell else 0.0

    def raw_income(self, zone: int, bucket: TimeBucket) -> float:
        """Total payment / total delivery minutes; NaN marks an empty cell."""
        cell = self.cells.get((zone, bucket))
        if cell is None or cell.pickups == 0 or cell.minutes <= 0:
            return math.nan
        return cell.payment / cell.minutes

    def dropoff_dist(self, zone: int, bucket: TimeBucket) -> dict[int, float]:
        counts = {d: s.count for (p, d, b), s in self._pairs_from(zone, bucket)}
        total = sum(counts.values())
        return {d: c / total for d, c in sorted(counts.items())} if total else {}

    def _pairs_from(self, zone, bucket):
        index = self.__dict__.get("_pair_index")
        if index is None:
            index = defaultdict(list)
            for key, s in self.delivery_pairs.items():
                index[(key[0], key[2])].append((key, s))
            self.__dict__["_pair_index"] = index
        return index.get((zone, bucket), [])

    def month_counts(self, month: int, prior: bool = False) -> dict[int, int]:
        """Per-zone pickups summed over every bucket of ``month``."""
        src = self.prior_counts if prior else {k: c.pickups for k, c in self.cells.items()}
        out = {z: 0 for z in self.zones}
        for (z, b), n in src.items():
            if b.month == month:
                out[z] += n
        return out

    def average_counts(self, month: int, prior: bool = False) -> dict[int, float]:
        """Per-zone average pickups per bucket over ``month``."""
        nb = len(self.buckets(month))
        return {z: n / nb for z, n in self.month_counts(month, prior).items()}

    def total_pickups(self) -> int:
        return sum(c.pickups for c in self.cells.values())

    def __eq__(self, other) -> bool:
        if not isinstance(other, AreaStatsTable):
            return NotImplemented
        names = ("zones", "bucket_config", "cells", "prior_counts", "delivery_pairs",
                 "cruise_pairs", "global_delivery", "global_cruise", "durations")
        return all(getattr(self, n) == getattr(other, n) for n in names)


def count_pickups(records: Iterable[TripRecord], bucket_config: BucketConfig) -> dict[tuple[int, TimeBucket], int]:
    counts: dict[tuple[int, TimeBucket], int] = defaultdict(int)
    for r in records:
        counts[(r.pickup_zone, bucket_config.bucket_of(r.pickup_time))] += 1
    return dict(counts)


def build_area_stats(records: Iterable[TripRecord], graph: ZoneGraph,
                     bucket_config: BucketConfig = BucketConfig(),
                     prior: Iterable[TripRecord] | Mapping[tuple[int, TimeBucket], int] | None = None,
                     max_cruise_gap: float = 60.0) -> AreaStatsTable:
    """Aggregate accepted records into an :class:`AreaStatsTable`.

    Prior-year data may be raw records (bucketed with the same config; the
    year is ignored) or a precomputed ``(zone, bucket) -> count`` mapping.
    Cruise gaps are only inferred when records carry a driver id; gaps longer
    than ``max_cruise_gap`` minutes are treated as off-duty and ignored.
    """
    records = list(records)
    if not records:
        raise IngestionError("cannot build area statistics from an empty record set")

    cells: dict[tuple[int, TimeBucket], ZoneCell] = {}
    pairs: dict[tuple[int, int, TimeBucket], RunningStats] = {}
    global_del: dict[int, RunningStats] = {}
    durations: dict[int, list[float]] = defaultdict(list)
    by_driver: dict[str, list[TripRecord]] = defaultdict(list)

    for r in records:
        b = bucket_config.bucket_of(r.pickup_time)
        minutes = r.duration_minutes
        cell = cells.get((r.pickup_zone, b))
        if cell is None:
            cell = cells[(r.pickup_zone, b)] = ZoneCell()
        cell.pickups += 1
        cell.payment += r.total_payment
        cell.minutes += minutes
        key = (r.pickup_zone, r.dropoff_zone, b)
        if key not in pairs:
            pairs[key] = RunningStats()
        pairs[key].add(minutes)
        global_del.setdefault(b.month, RunningStats()).add(minutes)
        durations[b.month].append(minutes)
        if r.driver_id is not None:
            by_driver[r.driver_id].append(r)

    cruise: dict[tuple[int, int, TimeBucket], RunningStats] = {}
    global_cru: dict[int, RunningStats] = {}
    for driver in sorted(by_driver):
        trips = sorted(by_driver[driver], key=lambda t: t.pickup_time)
        for prev, nxt in zip(trips, trips[1:]):
            gap = (nxt.pickup_time - prev.dropoff_time).total_seconds() / 60.0
            if not 0 < gap <= max_cruise_gap:
                continue
            b = bucket_config.bucket_of(prev.dropoff_time)
            key = (prev.dropoff_zone, nxt.pickup_zone, b)
            if key not in cruise:
                cruise[key] = RunningStats()
            cruise[key].add(gap)
            global_cru.setdefault(b.month, RunningStats()).add(gap)

    if prior is None:
        prior_counts: dict[tuple[int, TimeBucket], int] = {}
    elif isinstance(prior, Mapping):
        prior_counts = {(int(z), b): int(n) for (z, b), n in prior.items()}
    else:
        prior_counts = count_pickups((r for r in prior if r.pickup_zone in graph), bucket_config)

    return AreaStatsTable(
        zones=graph.zones,
        bucket_config=bucket_config,
        cells=cells,
        prior_counts=prior_counts,
        delivery_pairs=pairs,
        cruise_pairs=cruise,
        global_delivery=global_del,
        global_cruise=global_cru,
        durations=dict(durations),
    )


# --------------------------------------------------------------------------
# Prior-count files and stats snapshots
# --------------------------------------------------------------------------

def read_prior_counts(stream) -> dict[tuple[int, TimeBucket], int]:
    """Read a ``zone_id,bucket_key,pickup_count`` CSV (header optional)."""
    out = {}
    for lineno, row in enumerate(csv.reader(_lines(stream)), start=1):
        if not row or row[0].strip().startswith("#"):
            continue
        if lineno == 1 and row[0].strip() == "zone_id":
            continue
        try:
            out[(int(row[0]), TimeBucket.from_key(row[1]))] = int(row[2])
        except (ValueError, IndexError) as exc:
            raise IngestionError(f"prior counts line {lineno}: {exc}") from exc
    return out


def write_prior_counts(counts: Mapping[tuple[int, TimeBucket], int], fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["zone_id", "bucket_key", "pickup_count"])
    for (z, b), n in sorted(counts.items()):
        writer.writerow([z, b.key, n])


def _write_csv(path: Path, header: list[str], rows: Iterable[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _read_csv(path: Path) -> Iterator[list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        yield from reader


SNAPSHOT_FILES = ("meta.csv", "zones.csv", "cells.csv", "prior.csv", "delivery_pairs.csv",
                  "cruise_pairs.csv", "global.csv", "durations.csv")


def save_stats(table: AreaStatsTable, out_dir: str | Path) -> list[Path]:
    """Write a CSV snapshot. Floats use ``repr`` so reloading is exact."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "meta.csv", ["key", "value"],
               [["format_version", STATS_FORMAT_VERSION], ["day_kinds", table.bucket_config.day_kinds]])
    _write_csv(out / "zones.csv", ["zone_id"], [[z] for z in table.zones])
    _write_csv(out / "cells.csv", ["zone_id", "bucket_key", "pickups", "payment", "minutes"],
               [[z, b.key, c.pickups, repr(float(c.payment)), repr(float(c.minutes))]
                for (z, b), c in sorted(table.cells.items())])
    _write_csv(out / "prior.csv", ["zone_id", "bucket_key", "pickup_count"],
               [[z, b.key, n] for (z, b), n in sorted(table.prior_counts.items())])
    for name, pairs in (("delivery_pairs.csv", table.delivery_pairs), ("cruise_pairs.csv", table.cruise_pairs)):
        _write_csv(out / name, ["from_zone", "to_zone", "bucket_key", "count", "mean", "m2"],
                   [[a, b, bk.key, s.count, repr(float(s.mean)), repr(float(s.m2))]
                    for (a, b, bk), s in sorted(pairs.items())])
    rows = [["delivery", m, s.count, repr(float(s.mean)), repr(float(s.m2))] for m, s in sorted(table.global_delivery.items())]
    rows += [["cruise", m, s.count, repr(float(s.mean)), repr(float(s.m2))] for m, s in sorted(table.global_cruise.items())]
    _write_csv(out / "global.csv", ["kind", "month", "count", "mean", "m2"], rows)
    _write_csv(out / "durations.csv", ["month", "minutes"],
               [[m, repr(float(x))] for m, xs in sorted(table.durations.items()) for x in xs])
    return [out / f for f in SNAPSHOT_FILES]


def load_stats(in_dir: str | Path) -> AreaStatsTable:
    src = Path(in_dir)
    missing = [f for f in SNAPSHOT_FILES if not (src / f).exists()]
    if missing:
        raise IngestionError(f"{src}: incomplete snapshot, missing {', '.join(missing)}")
    meta = dict(_read_csv(src / "meta.csv"))
    if int(meta.get("format_version", -1)) != STATS_FORMAT_VERSION:
        raise IngestionError(f"{src}: unsupported snapshot version {meta.get('format_version')}")
    key = TimeBucket.from_key
    cells = {(int(z), key(b)): ZoneCell(int(n), float(p), float(m)) for z, b, n, p, m in _read_csv(src / "cells.csv")}
    prior = {(int(z), key(b)): int(n) for z, b, n in _read_csv(src / "prior.csv")}

    def pairs(name):
        return {(int(a), int(b), key(bk)): RunningStats(int(n), float(mu), float(m2))
                for a, b, bk, n, mu, m2 in _read_csv(src / name)}

    gdel, gcru = {}, {}
    for kind, m, n, mu, m2 in _read_csv(src / "global.csv"):
        (gdel if kind == "delivery" else gcru)[int(m)] = RunningStats(int(n), float(mu), float(m2))
    durations: dict[int, list[float]] = defaultdict(list)
    for m, x in _read_csv(src / "durations.csv"):
        durations[int(m)].append(float(x))
    return AreaStatsTable(
        zones=tuple(int(z) for (z,) in _read_csv(src / "zones.csv")),
        bucket_config=BucketConfig(meta["day_kinds"]),
        cells=cells,
        prior_counts=prior,
        delivery_pairs=pairs("delivery_pairs.csv"),
        cruise_pairs=pairs("cruise_pairs.csv"),
        global_delivery=gdel,
        global_cruise=gcru,
        durations=dict(durations),
    )
