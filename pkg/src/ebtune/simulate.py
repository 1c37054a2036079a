"""Synthetic wafers, the virtual anneal, and end-to-end tuning campaigns.

Every random draw comes from a stream keyed on (seed, purpose, junction
id, round), so results do not depend on iteration order or on how the
work is split across processes.
"""

from __future__ import annotations

import math
import statistics
import zlib
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from .collisions import (
    CollisionParams,
    QpuLayout,
    WaferCollisionMap,
    default_layout,
    wafer_collision_map,
)
from .dose import DoseResponseModel
from .errors import StatisticsError, ValidationError
from .physics import Physics
from .planner import (
    CampaignConfig,
    TunePlan,
    advance_wafer,
    converged,
    plan_round,
)
from .wafer import (
    Junction,
    SpreadStats,
    Wafer,
    group_by_design,
    junction_id_for,
    normalized_spread_stats,
    spread_stats,
    yield_window,
)

SCHEMA_VERSION = 1
_GEN, _ANNEAL = 1, 2

HIST_LOW, HIST_HIGH, HIST_STEP = 0.80, 1.20, 0.005


def _stream(seed: int, purpose: int, junction_id: str, round_index: int = 0) -> np.random.Generator:
    key = zlib.crc32(junction_id.encode("utf-8"))
    return np.random.default_rng([seed & 0xFFFFFFFF, purpose, key, round_index])


@dataclass(frozen=True)
class WaferSpec:
    """Recipe for a synthetic as-fabricated wafer.

    ``rel_sigma_percent`` is either one value for all groups or a map per
    group.  ``max_dies`` keeps only the dies nearest the wafer centre.
    """

    dies: tuple[int, int] = (1, 1)
    layout: QpuLayout = field(default_factory=default_layout)
    group_medians: dict[int, float] | None = None
    rel_sigma_percent: float | dict[int, float] = 3.11
    seed: int = 0
    outlier_fraction: float = 0.0
    max_dies: int | None = None
    die_pitch_um: float = 10_000.0
    wafer_id: str = "synthetic"

    def __post_init__(self):
        rows, cols = self.dies
        if rows < 1 or cols < 1:
            raise ValidationError("wafer needs at least one die")
        sigmas = self.rel_sigma_percent.values() if isinstance(self.rel_sigma_percent, Mapping) else [self.rel_sigma_percent]
        if any(s < 0 for s in sigmas):
            raise ValidationError("rel_sigma_percent must be >= 0")
        if not 0 <= self.outlier_fraction <= 1:
            raise ValidationError("outlier_fraction must lie in [0, 1]")

    def sigma_for(self, group: int) -> float:
        if isinstance(self.rel_sigma_percent, Mapping):
            return float(self.rel_sigma_percent[group])
        return float(self.rel_sigma_percent)

    def medians(self, physics: Physics | None = None) -> dict[int, float]:
        if self.group_medians is not None:
            return dict(self.group_medians)
        physics = physics or Physics()
        return {g: physics.resistance(f) for g, f in self.layout.target_frequency.items()}

    def die_positions(self) -> list[tuple[int, int]]:
        rows, cols = self.dies
        grid = [(r, c) for r in range(rows) for c in range(cols)]
        if self.max_dies is None or self.max_dies >= len(grid):
            return grid
        cr, cc = (rows - 1) / 2, (cols - 1) / 2
        nearest = sorted(grid, key=lambda rc: ((rc[0] - cr) ** 2 + (rc[1] - cc) ** 2, rc))
        return sorted(nearest[: self.max_dies])

    def to_dict(self) -> dict:
        sig = self.rel_sigma_percent
        return {
            "schema_version": SCHEMA_VERSION,
            "wafer_id": self.wafer_id,
            "dies": {"rows": self.dies[0], "cols": self.dies[1]},
            "max_dies": self.max_dies,
            "layout": self.layout.to_dict(),
            "group_medians_ohm": None
            if self.group_medians is None
            else {str(g): v for g, v in sorted(self.group_medians.items())},
            "rel_sigma_percent": {str(g): v for g, v in sorted(sig.items())} if isinstance(sig, Mapping) else sig,
            "seed": self.seed,
            "outlier_fraction": self.outlier_fraction,
            "die_pitch_um": self.die_pitch_um,
        }

    @classmethod
    def from_dict(cls, data: dict) -> WaferSpec:
        dies = data.get("dies", {"rows": 1, "cols": 1})
        sig = data.get("rel_sigma_percent", 3.11)
        if isinstance(sig, Mapping):
            sig = {int(g): float(v) for g, v in sig.items()}
        medians = data.get("group_medians_ohm")
        return cls(
            dies=(int(dies["rows"]), int(dies["cols"])) if isinstance(dies, Mapping) else (int(dies[0]), int(dies[1])),
            layout=QpuLayout.from_dict(data["layout"]) if "layout" in data else default_layout(),
            group_medians=None if medians is None else {int(g): float(v) for g, v in medians.items()},
            rel_sigma_percent=sig,
            seed=int(data.get("seed", 0)),
            outlier_fraction=float(data.get("outlier_fraction", 0.0)),
            max_dies=data.get("max_dies"),
            die_pitch_um=float(data.get("die_pitch_um", 10_000.0)),
            wafer_id=str(data.get("wafer_id", "synthetic")),
        )


def generate_wafer(spec: WaferSpec, physics: Physics | None = None) -> Wafer:
    """Normal per-group resistances; outliers land outside the 80-120 % window."""
    medians = spec.medians(physics)
    layout = spec.layout
    ring_r = spec.die_pitch_um / 5
    junctions = []
    for row, col in spec.die_positions():
        for q in range(layout.qubit_count):
            group = layout.group_of[q]
            jid = junction_id_for(row, col, q)
            rng = _stream(spec.seed, _GEN, jid)
            median = medians[group]
            if spec.outlier_fraction and rng.random() < spec.outlier_fraction:
                low = rng.random() < 0.5
                factor = rng.uniform(0.55, 0.78) if low else rng.uniform(1.22, 1.45)
                r = median * factor
            else:
                r = median * (1 + spec.sigma_for(group) / 100 * rng.standard_normal())
            angle = 2 * math.pi * q / layout.qubit_count
            pos = (
                col * spec.die_pitch_um + ring_r * math.cos(angle),
                row * spec.die_pitch_um + ring_r * math.sin(angle),
            )
            junctions.append(
                Junction(jid, row, col, q, group, pos, ((0, float(r)),))
            )
    metadata = {
        "generator": "ebtune.simulate",
        "seed": spec.seed,
        "acceleration_voltage_kv": 100,
    }
    return Wafer(spec.wafer_id, tuple(junctions), "ring8", metadata)


def _lognormal_unit_mean(rng: np.random.Generator, rel_std: float) -> float:
    if rel_std == 0:
        return 1.0
    s2 = math.log1p(rel_std**2)
    return float(math.exp(-s2 / 2 + math.sqrt(s2) * rng.standard_normal()))


def apply_plan(wafer: Wafer, plan: TunePlan, model: DoseResponseModel, seed: int = 0) -> Wafer:
    """Virtual anneal: dose shifts with unit-mean lognormal noise, ageing on all."""
    noise = {
        e.junction_id: _lognormal_unit_mean(
            _stream(seed, _ANNEAL, e.junction_id, plan.round_index), model.noise_rel_std
        )
        for e in plan.entries
    }
    return advance_wafer(wafer, plan, model, noise)


# ---------------------------------------------------------------------------
# Campaign
# ---------------------------------------------------------------------------


def _opt_float(v) -> float | None:
    return None if v is None else float(v)


@dataclass(frozen=True)
class RoundSummary:
    round_index: int
    sigma_percent_overall: float | None
    sigma_percent_by_group: dict[int, float | None]
    yield_percent: float
    collision_histogram: dict[int, int]
    collision_map: dict[tuple[int, int], int]
    resistance_histograms: dict[int, list[int]]
    planned_count: int = 0
    partially_tunable_count: int = 0

    def to_dict(self) -> dict:
        return {
            "round": self.round_index,
            "sigma_percent_overall": self.sigma_percent_overall,
            "sigma_percent_by_group": {str(g): v for g, v in self.sigma_percent_by_group.items()},
            "yield_percent": self.yield_percent,
            "collision_histogram": {str(k): v for k, v in self.collision_histogram.items()},
            "collision_map": [
                {"row": r, "col": c, "total_excluding_s1": v} for (r, c), v in self.collision_map.items()
            ],
            "resistance_histograms": {str(g): v for g, v in self.resistance_histograms.items()},
            "planned_count": self.planned_count,
            "partially_tunable_count": self.partially_tunable_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> RoundSummary:
        return cls(
            round_index=int(d["round"]),
            sigma_percent_overall=_opt_float(d["sigma_percent_overall"]),
            sigma_percent_by_group={int(g): _opt_float(v) for g, v in d["sigma_percent_by_group"].items()},
            yield_percent=float(d["yield_percent"]),
            collision_histogram={int(k): int(v) for k, v in d["collision_histogram"].items()},
            collision_map={(int(e["row"]), int(e["col"])): int(e["total_excluding_s1"]) for e in d["collision_map"]},
            resistance_histograms={int(g): list(v) for g, v in d["resistance_histograms"].items()},
            planned_count=int(d["planned_count"]),
            partially_tunable_count=int(d["partially_tunable_count"]),
        )


@dataclass(frozen=True)
class JunctionShift:
    junction_id: str
    group: int
    r_initial: float
    r_final: float
    tuned: bool

    @property
    def shift(self) -> float:
        return self.r_final - self.r_initial


@dataclass(frozen=True)
class CampaignReport:
    per_round: tuple[RoundSummary, ...]
    initial: SpreadStats
    final: SpreadStats
    tuned_vs_untuned_shift: tuple[float | None, float | None]
    junction_shifts: tuple[JunctionShift, ...]
    die_grid: tuple[int, int]
    seed: int
    metadata: dict = field(default_factory=dict)

    @property
    def rounds_run(self) -> int:
        return len(self.per_round) - 1

    @property
    def yield_delta(self) -> float:
        return self.final.yield_percent - self.initial.yield_percent

    def to_dict(self) -> dict:
        tuned, untuned = self.tuned_vs_untuned_shift
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "die_grid": {"rows": self.die_grid[0], "cols": self.die_grid[1]},
            "metadata": self.metadata,
            "initial": self.initial.to_dict(),
            "final": self.final.to_dict(),
            "yield_delta_percent": self.yield_delta,
            "tuned_vs_untuned_shift_ohm": {"tuned": tuned, "untuned": untuned},
            "per_round": [r.to_dict() for r in self.per_round],
            "junctions": [
                {
                    "junction_id": s.junction_id,
                    "group": s.group,
                    "r_initial_ohm": s.r_initial,
                    "r_final_ohm": s.r_final,
                    "tuned": s.tuned,
                }
                for s in self.junction_shifts
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> CampaignReport:
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValidationError(f"unsupported report schema_version {d.get('schema_version')!r}")
        shift = d["tuned_vs_untuned_shift_ohm"]
        return cls(
            per_round=tuple(RoundSummary.from_dict(r) for r in d["per_round"]),
            initial=SpreadStats.from_dict(d["initial"]),
            final=SpreadStats.from_dict(d["final"]),
            tuned_vs_untuned_shift=(shift["tuned"], shift["untuned"]),
            junction_shifts=tuple(
                JunctionShift(j["junction_id"], int(j["group"]), float(j["r_initial_ohm"]),
                              float(j["r_final_ohm"]), bool(j["tuned"]))
                for j in d["junctions"]
            ),
            die_grid=(int(d["die_grid"]["rows"]), int(d["die_grid"]["cols"])),
            seed=int(d["seed"]),
            metadata=dict(d.get("metadata", {})),
        )


def _histogram(junctions: list[Junction]) -> list[int]:
    median = statistics.median(j.latest for j in junctions)
    edges = np.arange(HIST_LOW, HIST_HIGH + HIST_STEP / 2, HIST_STEP)
    counts, _ = np.histogram([j.latest / median for j in junctions], bins=edges)
    return [int(c) for c in counts]


def _safe_sigma(fn, members) -> float | None:
    try:
        return fn(members).sigma_percent
    except StatisticsError:
        return None


def summarize_round(
    wafer: Wafer,
    round_index: int,
    cmap: WaferCollisionMap,
    plan: TunePlan | None = None,
) -> RoundSummary:
    groups = group_by_design(wafer)
    in_window = sum(len(yield_window(m)[0]) for m in groups.values())
    return RoundSummary(
        round_index=round_index,
        sigma_percent_overall=_safe_sigma(normalized_spread_stats, wafer.junctions),
        sigma_percent_by_group={g: _safe_sigma(spread_stats, m) for g, m in groups.items()},
        yield_percent=100.0 * in_window / len(wafer) if len(wafer) else 0.0,
        collision_histogram=cmap.histogram(),
        collision_map=cmap.totals(),
        resistance_histograms={g: _histogram(m) for g, m in groups.items()},
        planned_count=0 if plan is None else len(plan.entries),
        partially_tunable_count=0 if plan is None else len(plan.partially_tunable),
    )


def run_campaign(
    source: WaferSpec | Wafer,
    cfg: CampaignConfig,
    model: DoseResponseModel,
    params: CollisionParams,
    layout: QpuLayout | None = None,
    physics: Physics | None = None,
    collect_collisions: bool = True,
) -> tuple[CampaignReport, Wafer, list[TunePlan]]:
    """Plan, anneal and re-measure for up to ``cfg.max_rounds`` rounds.

    Returns the report, the final wafer and the executed plans.  With
    ``collect_collisions`` off the collision maps are skipped (they stay
    empty in the report) and the stop rule only looks at the spread.
    """
    physics = physics or Physics()
    if isinstance(source, WaferSpec):
        layout = layout or source.layout
        wafer = generate_wafer(source, physics)
    else:
        wafer = source
    layout = layout or default_layout()
    empty_map = WaferCollisionMap({})

    def collision_map(w: Wafer) -> WaferCollisionMap:
        if not collect_collisions:
            return empty_map
        return wafer_collision_map(w, layout, params, physics, workers=cfg.workers)

    initial_wafer = wafer
    summaries = [summarize_round(wafer, 0, collision_map(wafer))]
    plans: list[TunePlan] = []
    tuned_ids: set[str] = set()
    for done in range(cfg.max_rounds):
        if collect_collisions:
            if converged(wafer, cfg, layout, params, physics, workers=cfg.workers):
                break
        elif (summaries[-1].sigma_percent_overall or 0.0) <= cfg.stop_sigma_percent:
            break
        plan = plan_round(
            wafer, cfg, model, layout, params, physics, rounds_remaining=cfg.max_rounds - done
        )
        wafer = apply_plan(wafer, plan, model, cfg.seed)
        plans.append(plan)
        tuned_ids.update(e.junction_id for e in plan.entries)
        summaries.append(summarize_round(wafer, plan.round_index, collision_map(wafer), plan))

    final_by_id = wafer.by_id()
    shifts = tuple(
        JunctionShift(j.junction_id, j.group, j.latest, final_by_id[j.junction_id].latest, j.junction_id in tuned_ids)
        for j in initial_wafer.junctions
    )
    tuned = [s.shift for s in shifts if s.tuned]
    untuned = [s.shift for s in shifts if not s.tuned]
    rows = max((j.die_row for j in wafer.junctions), default=-1) + 1
    cols = max((j.die_col for j in wafer.junctions), default=-1) + 1
    report = CampaignReport(
        per_round=tuple(summaries),
        initial=normalized_spread_stats(initial_wafer.junctions),
        final=normalized_spread_stats(wafer.junctions),
        tuned_vs_untuned_shift=(
            statistics.fmean(tuned) if tuned else None,
            statistics.fmean(untuned) if untuned else None,
        ),
        junction_shifts=shifts,
        die_grid=(rows, cols),
        seed=cfg.seed,
        metadata={
            "strategy": cfg.strategy.value,
            # worker count is an execution detail; reports must not depend on it
            "config": {k: v for k, v in cfg.to_dict().items() if k != "workers"},
            "dose_model": model.to_dict(),
            "collision_params": params.to_dict(),
            "physics": physics.to_dict(),
        },
    )
    return report, wafer, plans
