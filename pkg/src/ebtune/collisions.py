"""QPU coupling graphs and frequency-collision detection.

Predicates, with f_d = f_t for a cross-resonance gate c -> t and spectator k
adjacent to c (k != t).  alpha is the (negative) anharmonicity:

    A1  edge i,j, once          |f_i - f_j|                  < d_A1
    A2  edge i,j, both ways     |f_i - (f_j + alpha/2)|      < d_A2
    C1  edge, control = higher  margin to (0, |alpha|) window < d_C1
    D1  edge i,j, both ways     |f_i + alpha/2 - f_j|        < d_D1
    E1  gate c->t               |f_d - f_c|                  < d_E1
    E2  gate c->t               |f_d - (f_c + alpha/2)|      < d_E2
    S1  gate c->t, spectator k  |f_d - f_k|                  < d_S1
    S2  gate c->t, spectator k  |f_d - (f_k + alpha)|        < d_S2
    T1  gate c->t, spectator k  |2 f_d - (f_c + f_k)|        < d_T1

Each edge yields two directed gates.  The C1 detuning is the signed margin
to the nearer window edge (negative outside the window), so unlike the
other types a C1 hit can carry a detuning larger than its threshold.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from itertools import product

from .errors import DomainError, LayoutError, ValidationError
from .physics import Physics
from .wafer import Junction, Status, Wafer

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class CollisionType(str, Enum):
    A1 = "A1"
    A2 = "A2"
    C1 = "C1"
    D1 = "D1"
    E1 = "E1"
    E2 = "E2"
    S1 = "S1"
    S2 = "S2"
    T1 = "T1"


ALL_TYPES = tuple(CollisionType)
MHZ = 1e6

DEFAULT_THRESHOLDS = {
    CollisionType.A1: 17 * MHZ,
    CollisionType.A2: 4 * MHZ,
    CollisionType.C1: 10 * MHZ,
    CollisionType.D1: 25 * MHZ,
    CollisionType.E1: 17 * MHZ,
    CollisionType.E2: 4 * MHZ,
    CollisionType.S1: 17 * MHZ,
    CollisionType.S2: 4 * MHZ,
    CollisionType.T1: 17 * MHZ,
}
DEFAULT_ENABLED = frozenset(ALL_TYPES) - {CollisionType.E1, CollisionType.E2}

RING8_PATTERN = (1, 2, 1, 3, 1, 2, 1, 3)
# Chosen by search_zero_spread_targets() over a 5 MHz grid with group 1
# anchored at 4.85 GHz; only S1 fires at zero spread with default params.
DEFAULT_TARGETS_HZ = {1: 4.85e9, 2: 5.005e9, 3: 4.69e9}


@dataclass(frozen=True)
class QpuLayout:
    qubit_count: int
    edges: tuple[tuple[int, int], ...]
    group_of: tuple[int, ...]
    target_frequency: dict[int, float]

    def __post_init__(self):
        edges = tuple(tuple(sorted((int(a), int(b)))) for a, b in self.edges)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "group_of", tuple(int(g) for g in self.group_of))
        seen = set()
        for a, b in edges:
            if a == b:
                raise ValidationError(f"self-loop on qubit {a}")
            if not (0 <= a < self.qubit_count and 0 <= b < self.qubit_count):
                raise ValidationError(f"edge ({a}, {b}) references a missing qubit")
            if (a, b) in seen:
                raise ValidationError(f"duplicate edge ({a}, {b})")
            seen.add((a, b))
        if len(self.group_of) != self.qubit_count:
            raise ValidationError("every qubit needs a group")
        missing = set(self.group_of) - set(self.target_frequency)
        if missing:
            raise ValidationError(f"groups without target frequency: {sorted(missing)}")

    @classmethod
    def ring(
        cls,
        pattern: Sequence[int] = RING8_PATTERN,
        targets: Mapping[int, float] | None = None,
    ) -> QpuLayout:
        n = len(pattern)
        if n < 2:
            edges: tuple = ()
        elif n == 2:
            edges = ((0, 1),)
        else:
            edges = tuple((i, (i + 1) % n) for i in range(n))
        return cls(n, edges, tuple(pattern), dict(targets or DEFAULT_TARGETS_HZ))

    def neighbours(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.qubit_count)]
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        return [sorted(n) for n in adj]

    def target_frequencies(self) -> list[float]:
        return [self.target_frequency[g] for g in self.group_of]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "qubit_count": self.qubit_count,
            "edges": [list(e) for e in self.edges],
            "group_of": list(self.group_of),
            "target_frequency_hz": {str(g): f for g, f in sorted(self.target_frequency.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> QpuLayout:
        return cls(
            qubit_count=int(data["qubit_count"]),
            edges=tuple((int(a), int(b)) for a, b in data["edges"]),
            group_of=tuple(int(g) for g in data["group_of"]),
            target_frequency={int(g): float(f) for g, f in data["target_frequency_hz"].items()},
        )


def default_layout() -> QpuLayout:
    return QpuLayout.ring()


@dataclass(frozen=True)
class CollisionParams:
    anharmonicity: float = -200 * MHZ
    delta_thresholds: dict[CollisionType, float] = field(
        default_factory=lambda: dict(DEFAULT_THRESHOLDS)
    )
    enabled_types: frozenset[CollisionType] = DEFAULT_ENABLED

    def __post_init__(self):
        thresholds = dict(DEFAULT_THRESHOLDS)
        thresholds.update({CollisionType(k): float(v) for k, v in self.delta_thresholds.items()})
        for k, v in thresholds.items():
            if not v >= 0:
                raise ValidationError(f"threshold for {k.value} must be >= 0")
        object.__setattr__(self, "delta_thresholds", thresholds)
        object.__setattr__(
            self, "enabled_types", frozenset(CollisionType(t) for t in self.enabled_types)
        )

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "anharmonicity_hz": self.anharmonicity,
            "thresholds_hz": {t.value: self.delta_thresholds[t] for t in ALL_TYPES},
            "enabled": [t.value for t in ALL_TYPES if t in self.enabled_types],
        }

    @classmethod
    def from_dict(cls, data: dict) -> CollisionParams:
        return cls(
            anharmonicity=float(data.get("anharmonicity_hz", -200 * MHZ)),
            delta_thresholds={CollisionType(k): float(v) for k, v in data.get("thresholds_hz", {}).items()},
            enabled_types=frozenset(CollisionType(t) for t in data.get("enabled", [t.value for t in DEFAULT_ENABLED])),
        )


@dataclass(frozen=True)
class CollisionHit:
    collision_type: CollisionType
    participants: tuple[int, ...]
    detuning: float

    def to_dict(self) -> dict:
        return {
            "type": self.collision_type.value,
            "participants": list(self.participants),
            "detuning_hz": self.detuning,
        }


@dataclass(frozen=True)
class CollisionReport:
    per_type_counts: dict[CollisionType, int]
    hits: tuple[CollisionHit, ...]
    total_excluding_s1: int
    enabled_types: frozenset[CollisionType] = DEFAULT_ENABLED

    @property
    def total(self) -> int:
        return sum(self.per_type_counts[t] for t in ALL_TYPES if t in self.enabled_types)

    def to_dict(self) -> dict:
        return {
            "per_type_counts": {t.value: self.per_type_counts[t] for t in ALL_TYPES},
            "total_excluding_s1": self.total_excluding_s1,
            "enabled": [t.value for t in ALL_TYPES if t in self.enabled_types],
            "hits": [h.to_dict() for h in self.hits],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


class CollisionEngine:
    """Precompiled predicate evaluation for one layout and parameter set.

    Building the edge and spectator lists once makes repeated evaluation
    (wafer maps, local search) cheap.
    """

    def __init__(self, layout: QpuLayout, params: CollisionParams):
        if not params.anharmonicity < 0:
            raise DomainError("anharmonicity must be negative")
        self.layout = layout
        self.params = params
        adj = layout.neighbours()
        self.edges = layout.edges
        self.gates = [(c, t) for a, b in layout.edges for c, t in ((a, b), (b, a))]
        self.triples = [(c, t, k) for c, t in self.gates for k in adj[c] if k != t]
        self.enabled = params.enabled_types
        self.th = params.delta_thresholds

    def _hits(self, f: Sequence[float]) -> list[CollisionHit]:
        alpha = self.params.anharmonicity
        half = alpha / 2
        th, on = self.th, self.enabled
        T = CollisionType
        hits: list[CollisionHit] = []

        def check(kind, parts, detuning):
            if kind in on and abs(detuning) < th[kind]:
                hits.append(CollisionHit(kind, parts, detuning))

        for i, j in self.edges:
            check(T.A1, (i, j), f[i] - f[j])
            for a, b in ((i, j), (j, i)):
                check(T.A2, (a, b), f[a] - (f[b] + half))
            if T.C1 in on:
                c, t = (i, j) if f[i] >= f[j] else (j, i)
                gap = f[c] - f[t]
                margin = min(gap, -alpha - gap)
                if margin <= 0 or margin < th[T.C1]:
                    hits.append(CollisionHit(T.C1, (c, t), margin))
            for a, b in ((i, j), (j, i)):
                check(T.D1, (a, b), f[a] + half - f[b])
        for c, t in self.gates:
            fd = f[t]
            check(T.E1, (c, t), fd - f[c])
            check(T.E2, (c, t), fd - (f[c] + half))
        for c, t, k in self.triples:
            fd = f[t]
            check(T.S1, (c, t, k), fd - f[k])
            check(T.S2, (c, t, k), fd - (f[k] + alpha))
            check(T.T1, (c, t, k), 2 * fd - (f[c] + f[k]))
        return hits

    def _as_list(self, freqs: Mapping[int, float] | Sequence[float]) -> list[float]:
        n = self.layout.qubit_count
        if isinstance(freqs, Mapping):
            try:
                f = [float(freqs[q]) for q in range(n)]
            except KeyError as exc:
                raise LayoutError(f"no frequency for qubit {exc.args[0]}") from None
        else:
            f = [float(v) for v in freqs]
            if len(f) != n:
                raise LayoutError(f"expected {n} frequencies, got {len(f)}")
        if any(not v > 0 for v in f):
            raise DomainError("frequencies must be positive")
        return f

    def detect(self, freqs: Mapping[int, float] | Sequence[float]) -> CollisionReport:
        hits = self._hits(self._as_list(freqs))
        counts = Counter(h.collision_type for h in hits)
        per_type = {t: counts.get(t, 0) for t in ALL_TYPES}
        total = sum(per_type[t] for t in ALL_TYPES if t in self.enabled)
        s1 = per_type[CollisionType.S1] if CollisionType.S1 in self.enabled else 0
        return CollisionReport(per_type, tuple(hits), total - s1, self.enabled)

    def count_excluding_s1(self, freqs: Sequence[float]) -> int:
        return sum(1 for h in self._hits(freqs) if h.collision_type is not CollisionType.S1)


def detect_collisions(
    freqs: Mapping[int, float] | Sequence[float],
    layout: QpuLayout,
    params: CollisionParams,
) -> CollisionReport:
    return CollisionEngine(layout, params).detect(freqs)


def zero_spread_assessment(layout: QpuLayout, params: CollisionParams) -> CollisionReport:
    """Collisions with every qubit exactly on its group target."""
    return detect_collisions(layout.target_frequencies(), layout, params)


def search_zero_spread_targets(
    pattern: Sequence[int] = RING8_PATTERN,
    params: CollisionParams | None = None,
    anchor_hz: float = DEFAULT_TARGETS_HZ[1],
    offsets_hz: Iterable[float] | None = None,
) -> dict[int, float] | None:
    """Coarse grid search for targets where only S1 fires at zero spread.

    Group 1 stays at ``anchor_hz``; groups 2 and 3 take offsets from the
    grid.  Among admissible candidates the one with the largest worst-case
    slack (|detuning| minus threshold, over every non-S1 predicate) wins;
    ties go to the first in grid order.
    """
    params = params or CollisionParams()
    if offsets_hz is None:
        offsets_hz = [k * 5 * MHZ for k in range(-40, 41)]
    offsets = list(offsets_hz)
    probe = CollisionParams(
        params.anharmonicity,
        params.delta_thresholds,
        frozenset(ALL_TYPES) - {CollisionType.S1} & params.enabled_types,
    )
    best, best_slack = None, -float("inf")
    for o2, o3 in product(offsets, offsets):
        if o2 <= 0 or o3 >= 0:
            continue  # one group above and one below group 1, by convention
        targets = {1: anchor_hz, 2: anchor_hz + o2, 3: anchor_hz + o3}
        layout = QpuLayout.ring(pattern, targets)
        engine = CollisionEngine(layout, probe)
        if engine.detect(layout.target_frequencies()).total:
            continue
        slack = _min_slack(engine, layout.target_frequencies())
        if slack > best_slack:
            best, best_slack = targets, slack
    return best


def _min_slack(engine: CollisionEngine, f: Sequence[float]) -> float:
    """Smallest distance from any enabled predicate to its hit boundary."""
    loose = CollisionParams(
        engine.params.anharmonicity,
        {t: float("inf") for t in ALL_TYPES},
        engine.enabled,
    )
    th = engine.params.delta_thresholds
    slack = float("inf")
    for hit in CollisionEngine(engine.layout, loose)._hits(f):
        slack = min(slack, abs(hit.detuning) - th[hit.collision_type])
    return slack


# ---------------------------------------------------------------------------
# Wafer level
# ---------------------------------------------------------------------------


def assign_frequencies(
    die: Sequence[Junction], layout: QpuLayout, physics: Physics | None = None
) -> tuple[dict[int, float], set[int]]:
    """Qubit frequencies from latest resistances, plus out-of-spec qubits."""
    physics = physics or Physics()
    by_q = {}
    for j in die:
        if j.qubit_index in by_q:
            raise LayoutError(f"qubit {j.qubit_index} has two junctions")
        by_q[j.qubit_index] = j
    missing = [q for q in range(layout.qubit_count) if q not in by_q]
    if missing:
        raise LayoutError(f"die is missing qubits {missing}")
    freqs = {q: physics.frequency(by_q[q].latest) for q in range(layout.qubit_count)}
    flagged = {q for q, j in by_q.items() if j.status in (Status.OUT_OF_SPEC, Status.FAILED)}
    return freqs, flagged


@dataclass(frozen=True)
class WaferCollisionMap:
    reports: dict[tuple[int, int], CollisionReport]
    skipped: tuple[tuple[int, int], ...] = ()

    def histogram(self) -> dict[int, int]:
        """Die count per total collisions excluding S1."""
        counts = Counter(r.total_excluding_s1 for r in self.reports.values())
        return {k: counts[k] for k in sorted(counts)}

    def totals(self) -> dict[tuple[int, int], int]:
        return {die: r.total_excluding_s1 for die, r in self.reports.items()}

    def to_dict(self, include_hits: bool = False) -> dict:
        dies = []
        for (row, col), rep in self.reports.items():
            entry = {
                "row": row,
                "col": col,
                "total_excluding_s1": rep.total_excluding_s1,
                "per_type_counts": {t.value: rep.per_type_counts[t] for t in ALL_TYPES},
            }
            if include_hits:
                entry["hits"] = [h.to_dict() for h in rep.hits]
            dies.append(entry)
        return {
            "schema_version": SCHEMA_VERSION,
            "dies": dies,
            "histogram_excluding_s1": {str(k): v for k, v in self.histogram().items()},
            "skipped_dies": [list(d) for d in self.skipped],
        }


def _die_report(args) -> CollisionReport:
    die, layout, params, physics = args
    freqs, _ = assign_frequencies(die, layout, physics)
    return CollisionEngine(layout, params).detect(freqs)


def wafer_collision_map(
    wafer: Wafer,
    layout: QpuLayout,
    params: CollisionParams,
    physics: Physics | None = None,
    workers: int = 1,
) -> WaferCollisionMap:
    physics = physics or Physics()
    complete, skipped = {}, []
    for die, members in wafer.dies().items():
        if sorted(j.qubit_index for j in members) != list(range(layout.qubit_count)):
            log.warning("die %s is incomplete; skipped", die)
            skipped.append(die)
            continue
        complete[die] = members
    if workers > 1 and len(complete) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(
                pool.map(_die_report, [(m, layout, params, physics) for m in complete.values()])
            )
    else:
        engine = CollisionEngine(layout, params)
        reports = [engine.detect(assign_frequencies(m, layout, physics)[0]) for m in complete.values()]
    return WaferCollisionMap(dict(zip(complete, reports)), tuple(skipped))
