"""Wafer and junction data model, measurement-file I/O and spread statistics."""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import IO

from .errors import DomainError, ParseError, StatisticsError, ValidationError

SCHEMA_VERSION = 1
DEFAULT_GROUPS = frozenset({1, 2, 3})
CSV_HEADER = (
    "wafer_id",
    "die_row",
    "die_col",
    "qubit_index",
    "group",
    "x_um",
    "y_um",
    "round",
    "resistance_ohm",
)
WINDOW_LOW = 0.80
WINDOW_HIGH = 1.20


class Status(str, Enum):
    AS_FABRICATED = "AsFabricated"
    TUNED = "Tuned"
    OUT_OF_SPEC = "OutOfSpec"
    FAILED = "Failed"


@dataclass(frozen=True)
class Junction:
    junction_id: str
    die_row: int
    die_col: int
    qubit_index: int
    group: int
    position: tuple[float, float]
    resistance_history: tuple[tuple[int, float], ...]
    status: Status = Status.AS_FABRICATED

    def __post_init__(self):
        if not self.resistance_history:
            raise ValidationError(f"junction {self.junction_id}: empty resistance history")
        rounds = [r for r, _ in self.resistance_history]
        if any(b <= a for a, b in zip(rounds, rounds[1:])):
            raise ValidationError(f"junction {self.junction_id}: rounds must increase")
        for _, ohms in self.resistance_history:
            if not (math.isfinite(ohms) and ohms > 0):
                raise ValidationError(
                    f"junction {self.junction_id}: resistance must be positive, got {ohms!r}"
                )

    @property
    def latest(self) -> float:
        return self.resistance_history[-1][1]

    @property
    def initial(self) -> float:
        return self.resistance_history[0][1]

    @property
    def last_round(self) -> int:
        return self.resistance_history[-1][0]

    @property
    def die(self) -> tuple[int, int]:
        return (self.die_row, self.die_col)

    def measured(self, round_index: int, ohms: float, status: Status | None = None) -> Junction:
        """Copy with a new measurement appended."""
        return replace(
            self,
            resistance_history=self.resistance_history + ((round_index, float(ohms)),),
            status=self.status if status is None else status,
        )


@dataclass(frozen=True)
class Wafer:
    wafer_id: str
    junctions: tuple[Junction, ...]
    layout_ref: str = "ring8"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "junctions", tuple(self.junctions))
        ids = set()
        slots = set()
        for j in self.junctions:
            if j.junction_id in ids:
                raise ValidationError(f"duplicate junction id {j.junction_id!r}")
            slot = (j.die_row, j.die_col, j.qubit_index)
            if slot in slots:
                raise ValidationError(f"duplicate die/qubit slot {slot}")
            ids.add(j.junction_id)
            slots.add(slot)

    def __len__(self) -> int:
        return len(self.junctions)

    def by_id(self) -> dict[str, Junction]:
        return {j.junction_id: j for j in self.junctions}

    def dies(self) -> dict[tuple[int, int], list[Junction]]:
        """Junctions per die, dies in row-major order, qubits by index."""
        out: dict[tuple[int, int], list[Junction]] = defaultdict(list)
        for j in self.junctions:
            out[j.die].append(j)
        return {
            die: sorted(out[die], key=lambda j: j.qubit_index) for die in sorted(out)
        }

    def replace_junctions(self, junctions: Iterable[Junction]) -> Wafer:
        return replace(self, junctions=tuple(junctions))


@dataclass(frozen=True)
class SpreadStats:
    """Spread of the in-window population.

    For :func:`normalized_spread_stats` ``median`` and ``mean`` are
    dimensionless (resistance over group median) rather than ohms.
    """

    count_total: int
    count_in_window: int
    median: float
    mean: float
    sigma_percent: float
    yield_percent: float

    def to_dict(self) -> dict:
        return {
            "count_total": self.count_total,
            "count_in_window": self.count_in_window,
            "median": self.median,
            "mean": self.mean,
            "sigma_percent": self.sigma_percent,
            "yield_percent": self.yield_percent,
        }

    @classmethod
    def from_dict(cls, data: dict) -> SpreadStats:
        return cls(**{k: data[k] for k in cls.__dataclass_fields__})


def junction_id_for(die_row: int, die_col: int, qubit_index: int) -> str:
    return f"r{die_row}c{die_col}q{qubit_index}"


# ---------------------------------------------------------------------------
# Parsing and serialisation
# ---------------------------------------------------------------------------


def _read_text(source: bytes | str | IO) -> str:
    if isinstance(source, bytes):
        data = source
    elif isinstance(source, str):
        return source
    else:
        data = source.read()
        if isinstance(data, str):
            return data
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"source is not valid UTF-8: {exc}") from None


def _check_group(group: int, groups: frozenset[int] | None, line: int | None = None):
    if groups is not None and group not in groups:
        raise ValidationError(
            f"unknown group label {group!r}" + (f" on line {line}" if line else "")
        )


def _positive_resistance(text: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"resistance {text!r} is not a number", line) from None
    if not (math.isfinite(value) and value > 0):
        raise ParseError(f"resistance {text!r} must be a positive finite number", line)
    return value


def _parse_csv(text: str, groups: frozenset[int] | None) -> Wafer:
    lines = text.splitlines()
    start = 0
    while start < len(lines) and lines[start].startswith("#"):
        comment = lines[start].lstrip("#").strip()
        if comment.startswith("schema_version"):
            version = comment.split("=", 1)[-1].strip()
            if version != str(SCHEMA_VERSION):
                raise ValidationError(f"unsupported schema_version {version}")
        start += 1
    reader = csv.reader(lines[start:])
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty CSV source", start + 1) from None
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise ParseError(f"header must be {','.join(CSV_HEADER)}", start + 1)

    wafer_id = None
    slots: dict[tuple[int, int, int], dict] = {}
    for offset, row in enumerate(reader):
        line = start + 2 + offset
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(CSV_HEADER):
            raise ParseError(f"expected {len(CSV_HEADER)} columns, got {len(row)}", line)
        wid, srow, scol, sq, sgroup, sx, sy, sround, sres = (c.strip() for c in row)
        try:
            die_row, die_col, q, group, rnd = (int(v) for v in (srow, scol, sq, sgroup, sround))
            x, y = float(sx), float(sy)
        except ValueError as exc:
            raise ParseError(f"malformed field: {exc}", line) from None
        resistance = _positive_resistance(sres, line)
        if wafer_id is None:
            wafer_id = wid
        elif wid != wafer_id:
            raise ValidationError(f"line {line}: mixed wafer ids {wafer_id!r} and {wid!r}")
        _check_group(group, groups, line)
        key = (die_row, die_col, q)
        entry = slots.setdefault(key, {"group": group, "pos": (x, y), "history": {}})
        if entry["group"] != group or entry["pos"] != (x, y):
            raise ValidationError(f"line {line}: inconsistent group/position for {key}")
        if rnd in entry["history"]:
            raise ValidationError(f"line {line}: duplicate round {rnd} for {key}")
        entry["history"][rnd] = resistance

    junctions = []
    for (die_row, die_col, q), entry in slots.items():
        history = tuple(sorted(entry["history"].items()))
        junctions.append(
            Junction(
                junction_id=junction_id_for(die_row, die_col, q),
                die_row=die_row,
                die_col=die_col,
                qubit_index=q,
                group=entry["group"],
                position=entry["pos"],
                resistance_history=history,
                status=Status.TUNED if len(history) > 1 else Status.AS_FABRICATED,
            )
        )
    return Wafer(wafer_id or "", tuple(junctions))


def _reject_constant(name: str):
    raise ParseError(f"non-finite number {name} is not permitted")


def _parse_json(text: str, groups: frozenset[int] | None) -> Wafer:
    try:
        data = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from None
    if not isinstance(data, dict):
        raise ParseError("top level must be an object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema_version {version!r}")
    junctions = []
    try:
        for idx, item in enumerate(data["junctions"]):
            group = int(item["group"])
            _check_group(group, groups)
            history = []
            for h in item["history"]:
                ohms = float(h["resistance_ohm"])
                if not (math.isfinite(ohms) and ohms > 0):
                    raise ValidationError(
                        f"junction {item['junction_id']!r}: resistance must be positive"
                    )
                history.append((int(h["round"]), ohms))
            junctions.append(
                Junction(
                    junction_id=str(item["junction_id"]),
                    die_row=int(item["die"]["row"]),
                    die_col=int(item["die"]["col"]),
                    qubit_index=int(item["qubit_index"]),
                    group=group,
                    position=(float(item["position_um"]["x"]), float(item["position_um"]["y"])),
                    resistance_history=tuple(history),
                    status=Status(item.get("status", Status.AS_FABRICATED.value)),
                )
            )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"junction entry {len(junctions)} is malformed: {exc!r}") from None
    return Wafer(
        wafer_id=str(data["wafer_id"]),
        junctions=tuple(junctions),
        layout_ref=str(data.get("layout_ref", "ring8")),
        metadata=dict(data.get("metadata", {})),
    )


def parse_wafer(
    source: bytes | str | IO,
    format: str = "json",
    *,
    groups: Iterable[int] | None = DEFAULT_GROUPS,
) -> Wafer:
    """Parse a wafer from CSV or JSON.

    ``groups`` lists the accepted frequency-group labels; pass ``None`` to
    accept any integer label.
    """
    text = _read_text(source)
    allowed = None if groups is None else frozenset(groups)
    fmt = format.lower()
    if fmt == "csv":
        return _parse_csv(text, allowed)
    if fmt == "json":
        return _parse_json(text, allowed)
    raise ValueError(f"unknown wafer format {format!r}")


def wafer_to_dict(wafer: Wafer) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "wafer_id": wafer.wafer_id,
        "layout_ref": wafer.layout_ref,
        "metadata": wafer.metadata,
        "junctions": [
            {
                "junction_id": j.junction_id,
                "die": {"row": j.die_row, "col": j.die_col},
                "qubit_index": j.qubit_index,
                "group": j.group,
                "position_um": {"x": j.position[0], "y": j.position[1]},
                "history": [{"round": r, "resistance_ohm": ohms} for r, ohms in j.resistance_history],
                "status": j.status.value,
            }
            for j in wafer.junctions
        ],
    }


def serialize_wafer(wafer: Wafer, format: str = "json") -> str:
    """Canonical text form; JSON output is sorted and indented."""
    if format.lower() == "json":
        return json.dumps(wafer_to_dict(wafer), indent=2, sort_keys=True, allow_nan=False) + "\n"
    if format.lower() != "csv":
        raise ValueError(f"unknown wafer format {format!r}")
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for j in wafer.junctions:
        for rnd, ohms in j.resistance_history:
            writer.writerow(
                [wafer.wafer_id, j.die_row, j.die_col, j.qubit_index, j.group,
                 repr(j.position[0]), repr(j.position[1]), rnd, repr(ohms)]
            )
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


def yield_window(
    junctions: Sequence[Junction],
    low_frac: float = WINDOW_LOW,
    high_frac: float = WINDOW_HIGH,
) -> tuple[list[Junction], list[Junction]]:
    """Split by latest resistance relative to the collection median.

    Bounds are inclusive.  Junctions outside come back with status OutOfSpec.
    """
    if not junctions:
        raise DomainError("yield window needs at least one junction")
    median = statistics.median(j.latest for j in junctions)
    inside, outside = [], []
    for j in junctions:
        ratio = j.latest / median
        if low_frac <= ratio <= high_frac:
            inside.append(j)
        else:
            outside.append(j if j.status is Status.OUT_OF_SPEC else replace(j, status=Status.OUT_OF_SPEC))
    return inside, outside


def _coefficient_of_variation(values: Sequence[float]) -> tuple[float, float]:
    mean = statistics.fmean(values)
    return mean, 100.0 * statistics.stdev(values, mean) / mean


def spread_stats(
    junctions: Sequence[Junction],
    low_frac: float = WINDOW_LOW,
    high_frac: float = WINDOW_HIGH,
) -> SpreadStats:
    if len(junctions) < 2:
        raise StatisticsError(f"need at least 2 junctions, have {len(junctions)}")
    inside, _ = yield_window(junctions, low_frac, high_frac)
    if len(inside) < 2:
        raise StatisticsError(f"need at least 2 in-window junctions, have {len(inside)}")
    values = [j.latest for j in inside]
    mean, sigma = _coefficient_of_variation(values)
    return SpreadStats(
        count_total=len(junctions),
        count_in_window=len(inside),
        median=statistics.median(values),
        mean=mean,
        sigma_percent=sigma,
        yield_percent=100.0 * len(inside) / len(junctions),
    )


def normalized_spread_stats(
    junctions: Sequence[Junction],
    low_frac: float = WINDOW_LOW,
    high_frac: float = WINDOW_HIGH,
) -> SpreadStats:
    """Pooled spread over several design groups.

    Each group is windowed against its own median and its in-window
    resistances are divided by that median before pooling, so groups with
    different target resistances can share one histogram.
    """
    if not junctions:
        raise StatisticsError("no junctions")
    pooled: list[float] = []
    for members in group_by_design(junctions).values():
        median = statistics.median(j.latest for j in members)
        inside, _ = yield_window(members, low_frac, high_frac)
        pooled.extend(j.latest / median for j in inside)
    if len(pooled) < 2:
        raise StatisticsError(f"need at least 2 in-window junctions, have {len(pooled)}")
    mean, sigma = _coefficient_of_variation(pooled)
    return SpreadStats(
        count_total=len(junctions),
        count_in_window=len(pooled),
        median=statistics.median(pooled),
        mean=mean,
        sigma_percent=sigma,
        yield_percent=100.0 * len(pooled) / len(junctions),
    )


def group_by_design(wafer: Wafer | Iterable[Junction]) -> dict[int, list[Junction]]:
    junctions = wafer.junctions if isinstance(wafer, Wafer) else wafer
    out: dict[int, list[Junction]] = defaultdict(list)
    for j in junctions:
        out[j.group].append(j)
    return {g: out[g] for g in sorted(out)}
