"""Turn measured resistances into per-junction shot plans.

Three strategies share one plan format:

* ``EnsembleBelowMedian``: every in-window junction below its group median
  gets the same dose.
* ``TargetedInverse``: each junction gets the dose that lifts it to a group
  target, saturating where the target is out of reach.
* ``CollisionAware``: per-die local search over shot counts, trading the
  collision count against the spread.

Tuning can only raise resistance, so every target sits at or above the
current resistances it is meant to reach.
"""

from __future__ import annotations

import json
import math
import statistics
from collections.abc import Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .collisions import CollisionEngine, CollisionParams, QpuLayout, wafer_collision_map
from .dose import (
    CENTERED,
    DEFAULT_HEADROOM,
    BeamPlacement,
    DoseResponseModel,
    ambient_ageing,
    delta_r,
    invert_dose,
    max_shift,
)
from .errors import ApplicationError, PlanningError, SelectionError, StatisticsError, ValidationError
from .physics import Physics
from .wafer import Junction, Status, Wafer, group_by_design, normalized_spread_stats, yield_window

SCHEMA_VERSION = 1
TARGET_RULES = ("spread-optimal", "in-window-max")


class Strategy(str, Enum):
    ENSEMBLE = "EnsembleBelowMedian"
    TARGETED = "TargetedInverse"
    COLLISION_AWARE = "CollisionAware"

    @classmethod
    def parse(cls, name: str) -> Strategy:
        aliases = {"ensemble": cls.ENSEMBLE, "targeted": cls.TARGETED, "collision-aware": cls.COLLISION_AWARE}
        if name in aliases:
            return aliases[name]
        return cls(name)


@dataclass(frozen=True)
class PlanEntry:
    junction_id: str
    shots: int
    placement: BeamPlacement = CENTERED

    def __post_init__(self):
        if self.shots < 1:
            raise ValidationError(f"plan entry {self.junction_id}: shots must be >= 1")


@dataclass(frozen=True)
class TunePlan:
    round_index: int
    entries: tuple[PlanEntry, ...]
    strategy: Strategy
    predicted_post: dict[str, float]
    partially_tunable: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    def shots_by_id(self) -> dict[str, int]:
        return {e.junction_id: e.shots for e in self.entries}

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "round": self.round_index,
            "strategy": self.strategy.value,
            "entries": [
                {
                    "junction_id": e.junction_id,
                    "shots": e.shots,
                    "distance_um": e.placement.distance_um,
                    "area_um": e.placement.area_um,
                }
                for e in self.entries
            ],
            "predicted_post": dict(self.predicted_post),
            "partially_tunable": list(self.partially_tunable),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> TunePlan:
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ValidationError(f"unsupported plan schema_version {data.get('schema_version')!r}")
        try:
            entries = tuple(
                PlanEntry(
                    str(e["junction_id"]),
                    int(e["shots"]),
                    BeamPlacement(float(e.get("distance_um", 0.0)), float(e.get("area_um", 15.0))),
                )
                for e in data["entries"]
            )
            return cls(
                round_index=int(data["round"]),
                entries=entries,
                strategy=Strategy(data["strategy"]),
                predicted_post={str(k): float(v) for k, v in data.get("predicted_post", {}).items()},
                partially_tunable=tuple(data.get("partially_tunable", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed plan: {exc!r}") from None


@dataclass(frozen=True)
class CampaignConfig:
    max_rounds: int = 3
    strategy: Strategy = Strategy.TARGETED
    group_targets: dict[int, float] | None = None
    target_unit: str = "ohm"  # or "hz"
    target_rule: str = "spread-optimal"  # or "in-window-max"; used without group_targets
    objective_weights: tuple[float, float] = (1.0, 1.0)  # (w_spread, w_collisions)
    stop_sigma_percent: float = 0.5
    ensemble_shots: int = 8
    headroom_frac: float = DEFAULT_HEADROOM
    max_sweeps: int = 50
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValidationError("max_rounds must be >= 1")
        w_spread, w_coll = self.objective_weights
        if w_spread < 0 or w_coll < 0 or (w_spread == 0 and w_coll == 0):
            raise ValidationError("objective weights must be >= 0 and not both zero")
        if self.target_unit not in ("ohm", "hz"):
            raise ValidationError(f"target_unit must be 'ohm' or 'hz', got {self.target_unit!r}")
        if self.target_rule not in TARGET_RULES:
            raise ValidationError(f"target_rule must be one of {TARGET_RULES}")
        if self.ensemble_shots < 1:
            raise ValidationError("ensemble_shots must be >= 1")
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy) if isinstance(self.strategy, str) else self.strategy)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "max_rounds": self.max_rounds,
            "strategy": self.strategy.value,
            "group_targets": None
            if self.group_targets is None
            else {str(g): v for g, v in sorted(self.group_targets.items())},
            "target_unit": self.target_unit,
            "target_rule": self.target_rule,
            "objective_weights": {"spread": self.objective_weights[0], "collisions": self.objective_weights[1]},
            "stop_sigma_percent": self.stop_sigma_percent,
            "ensemble_shots": self.ensemble_shots,
            "headroom_frac": self.headroom_frac,
            "max_sweeps": self.max_sweeps,
            "seed": self.seed,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, data: dict) -> CampaignConfig:
        d = cls()
        weights = data.get("objective_weights", {})
        if isinstance(weights, Mapping):
            weights = (float(weights.get("spread", d.objective_weights[0])),
                       float(weights.get("collisions", d.objective_weights[1])))
        targets = data.get("group_targets")
        return cls(
            max_rounds=int(data.get("max_rounds", d.max_rounds)),
            strategy=Strategy.parse(data.get("strategy", d.strategy.value)),
            group_targets=None if targets is None else {int(g): float(v) for g, v in targets.items()},
            target_unit=data.get("target_unit", d.target_unit),
            target_rule=data.get("target_rule", d.target_rule),
            objective_weights=tuple(weights),
            stop_sigma_percent=float(data.get("stop_sigma_percent", d.stop_sigma_percent)),
            ensemble_shots=int(data.get("ensemble_shots", d.ensemble_shots)),
            headroom_frac=float(data.get("headroom_frac", d.headroom_frac)),
            max_sweeps=int(data.get("max_sweeps", d.max_sweeps)),
            seed=int(data.get("seed", d.seed)),
            workers=int(data.get("workers", d.workers)),
        )


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


def predict_post(
    junctions: Sequence[Junction], entries: Sequence[PlanEntry], model: DoseResponseModel
) -> dict[str, float]:
    """Noiseless post-round resistance, ambient ageing included."""
    dose = {e.junction_id: delta_r(e.shots, e.placement, model) for e in entries}
    age = ambient_ageing(1, model)
    return {j.junction_id: j.latest + dose.get(j.junction_id, 0.0) + age for j in junctions}


def advance_wafer(
    wafer: Wafer,
    plan: TunePlan,
    model: DoseResponseModel,
    noise: Mapping[str, float] | None = None,
) -> Wafer:
    """Append one measurement round to every junction.

    ``noise`` holds multiplicative factors on the dose shift per junction
    id; missing ids get 1.
    """
    by_id = wafer.by_id()
    unknown = [e.junction_id for e in plan.entries if e.junction_id not in by_id]
    if unknown:
        raise ApplicationError(f"plan references unknown junctions: {unknown[:5]}")
    last = max((j.last_round for j in wafer.junctions), default=-1)
    if plan.round_index <= last:
        raise ApplicationError(f"plan round {plan.round_index} is not after measured round {last}")
    age = ambient_ageing(1, model)
    planned = {e.junction_id: e for e in plan.entries}
    noise = noise or {}
    out = []
    for j in wafer.junctions:
        r = j.latest + age
        status = j.status
        entry = planned.get(j.junction_id)
        if entry is not None:
            r += delta_r(entry.shots, entry.placement, model) * noise.get(j.junction_id, 1.0)
            if status is Status.AS_FABRICATED:
                status = Status.TUNED
        out.append(j.measured(plan.round_index, r, status))
    return wafer.replace_junctions(out)


def _make_plan(junctions, entries, strategy, round_index, model, partial=()) -> TunePlan:
    return TunePlan(
        round_index=round_index,
        entries=tuple(entries),
        strategy=strategy,
        predicted_post=predict_post(junctions, entries, model),
        partially_tunable=tuple(partial),
    )


# ---------------------------------------------------------------------------
# Strategies
# ---------------------------------------------------------------------------


def select_below_median(group: Sequence[Junction]) -> list[Junction]:
    """In-window junctions strictly below the in-window median."""
    if not group:
        raise SelectionError("empty group")
    inside, _ = yield_window(group)
    if len(inside) < 2:
        raise SelectionError(f"need at least 2 in-window junctions, have {len(inside)}")
    median = statistics.median(j.latest for j in inside)
    return [j for j in inside if j.latest < median]


def ensemble_plan(
    selected: Sequence[Junction],
    shots: int,
    round_index: int,
    model: DoseResponseModel | None = None,
) -> TunePlan:
    if shots < 1:
        raise PlanningError("ensemble dose must be at least one shot")
    model = model or DoseResponseModel()
    entries = [PlanEntry(j.junction_id, shots) for j in selected]
    return _make_plan(selected, entries, Strategy.ENSEMBLE, round_index, model)


def default_group_target(group: Sequence[Junction], model: DoseResponseModel) -> float:
    """In-window maximum plus one round of expected ageing."""
    inside, _ = yield_window(group)
    return max(j.latest for j in inside) + ambient_ageing(1, model)


def spread_optimal_target(
    group: Sequence[Junction],
    model: DoseResponseModel,
    rounds_remaining: int = 1,
    headroom_frac: float = DEFAULT_HEADROOM,
) -> float:
    """Group target that minimises the predicted in-window spread.

    A junction below the target can climb at most ``rounds_remaining``
    saturated doses; junctions above it stay put.  Candidate targets are
    the in-window resistances at or above the median; ties go to the lowest.
    The result includes one round of ageing, like :func:`default_group_target`.
    """
    inside, _ = yield_window(group)
    r = np.array([j.latest for j in inside], dtype=float)
    reach = max(1, rounds_remaining) * max_shift(CENTERED, model, headroom_frac)
    candidates = np.unique(r[r >= np.median(r)])
    if len(r) < 2 or reach <= 0:
        return float(candidates[-1]) + ambient_ageing(1, model)
    post = r[None, :] + np.clip(candidates[:, None] - r[None, :], 0.0, reach)
    cv = post.std(axis=1, ddof=1) / post.mean(axis=1)
    return float(candidates[int(np.argmin(cv))]) + ambient_ageing(1, model)


def targeted_plan(
    wafer_group: Sequence[Junction],
    target: float,
    model: DoseResponseModel,
    round_index: int,
    headroom_frac: float = DEFAULT_HEADROOM,
) -> TunePlan:
    """Per-junction inverse dose towards ``target`` ohms.

    Out-of-window junctions are left alone.  Junctions needing more than
    the headroom allows are dosed at saturation and listed as partially
    tunable.
    """
    if not wafer_group:
        return _make_plan([], [], Strategy.TARGETED, round_index, model)
    inside, _ = yield_window(wafer_group)
    median = statistics.median(j.latest for j in wafer_group)
    if target < median:
        raise PlanningError(
            f"target {target:.1f} ohm is below the group median {median:.1f} ohm; tuning only raises R"
        )
    age = ambient_ageing(1, model)
    saturation = invert_dose(max_shift(CENTERED, model, headroom_frac), CENTERED, model, headroom_frac)
    entries, partial = [], []
    for j in inside:
        need = target - j.latest - age
        if need <= 0:
            continue
        shots = invert_dose(need, CENTERED, model, headroom_frac)
        if shots is None:
            shots = saturation
            partial.append(j.junction_id)
        if shots:
            entries.append(PlanEntry(j.junction_id, shots))
    return _make_plan(wafer_group, entries, Strategy.TARGETED, round_index, model, partial)


def _pooled_sigma(values: Sequence[float], groups: Sequence[int]) -> float:
    by_group: dict[int, list[float]] = {}
    for v, g in zip(values, groups):
        by_group.setdefault(g, []).append(v)
    pooled = []
    for members in by_group.values():
        med = statistics.median(members)
        pooled.extend(v / med for v in members)
    if len(pooled) < 2:
        return 0.0
    mean = statistics.fmean(pooled)
    return 100.0 * statistics.stdev(pooled, mean) / mean


def shot_grid(model: DoseResponseModel, headroom_frac: float = DEFAULT_HEADROOM) -> list[int]:
    """Coarse levels {0, n0, 2 n0, 4 n0, saturation}, capped at saturation."""
    sat = invert_dose(max_shift(CENTERED, model, headroom_frac), CENTERED, model, headroom_frac) or 0
    n0 = max(1, math.ceil(model.shots_scale))
    return sorted({min(level, sat) for level in (0, n0, 2 * n0, 4 * n0, sat)})


class DieObjective:
    """J(shots) = w_collisions * collisions excluding S1 + w_spread * sigma%."""

    def __init__(
        self,
        die: Sequence[Junction],
        layout: QpuLayout,
        model: DoseResponseModel,
        params: CollisionParams,
        weights: tuple[float, float],
        physics: Physics,
        headroom_frac: float = DEFAULT_HEADROOM,
    ):
        self.die = sorted(die, key=lambda j: j.qubit_index)
        if [j.qubit_index for j in self.die] != list(range(layout.qubit_count)):
            raise PlanningError("die does not carry a full qubit set")
        self.engine = CollisionEngine(layout, params)
        self.w_spread, self.w_collisions = weights
        self.groups = [j.group for j in self.die]
        self.max_shots = shot_grid(model, headroom_frac)[-1]
        age = ambient_ageing(1, model)
        self.resistance = [
            [j.latest + age + delta_r(s, CENTERED, model) for s in range(self.max_shots + 1)]
            for j in self.die
        ]
        self.frequency = [[physics.frequency(r) for r in row] for row in self.resistance]
        self._cache: dict[tuple[int, ...], float] = {}

    def __call__(self, shots: Sequence[int]) -> float:
        key = tuple(shots)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        value = 0.0
        if self.w_collisions:
            freqs = [self.frequency[q][s] for q, s in enumerate(key)]
            value += self.w_collisions * self.engine.count_excluding_s1(freqs)
        if self.w_spread:
            rs = [self.resistance[q][s] for q, s in enumerate(key)]
            value += self.w_spread * _pooled_sigma(rs, self.groups)
        self._cache[key] = value
        return value


def collision_aware_plan(
    wafer_die: Sequence[Junction],
    layout: QpuLayout,
    model: DoseResponseModel,
    params: CollisionParams,
    cfg: CampaignConfig,
    physics: Physics | None = None,
    round_index: int = 1,
) -> TunePlan:
    """Local search over per-junction shot counts on one die.

    Coordinate descent over the coarse shot grid (coordinate order drawn
    from ``cfg.seed``), then steepest single-junction moves over every
    integer shot count until nothing improves.  Starts from the empty plan
    and only accepts strict improvements, so the result never scores worse
    than doing nothing.
    """
    physics = physics or Physics()
    objective = DieObjective(
        wafer_die, layout, model, params, cfg.objective_weights, physics, cfg.headroom_frac
    )
    n = layout.qubit_count
    grid = shot_grid(model, cfg.headroom_frac)
    rng = np.random.default_rng(cfg.seed)
    current = [0] * n
    best = objective(current)
    eps = 1e-12

    for _ in range(cfg.max_sweeps):
        changed = False
        for q in rng.permutation(n):
            for level in grid:
                if level == current[q]:
                    continue
                trial = current.copy()
                trial[q] = level
                score = objective(trial)
                if score < best - eps:
                    best, current, changed = score, trial, True
        if not changed:
            break

    while True:
        move = None
        for q in range(n):
            for s in range(objective.max_shots + 1):
                if s == current[q]:
                    continue
                trial = current.copy()
                trial[q] = s
                score = objective(trial)
                if score < best - eps:
                    best, move = score, (q, s)
        if move is None:
            break
        current[move[0]] = move[1]

    entries = [
        PlanEntry(j.junction_id, s) for j, s in zip(objective.die, current) if s > 0
    ]
    return _make_plan(objective.die, entries, Strategy.COLLISION_AWARE, round_index, model)


# ---------------------------------------------------------------------------
# Rounds and campaigns
# ---------------------------------------------------------------------------


def merge_plans(plans: Sequence[TunePlan], strategy: Strategy, round_index: int) -> TunePlan:
    entries, predicted, partial = [], {}, []
    for p in plans:
        entries.extend(p.entries)
        predicted.update(p.predicted_post)
        partial.extend(p.partially_tunable)
    return TunePlan(round_index, tuple(entries), strategy, predicted, tuple(partial))


def resolve_group_targets(
    wafer: Wafer,
    cfg: CampaignConfig,
    model: DoseResponseModel,
    physics: Physics,
    rounds_remaining: int = 1,
) -> dict[int, float]:
    groups = group_by_design(wafer)
    if cfg.group_targets is None:
        if cfg.target_rule == "in-window-max":
            return {g: default_group_target(m, model) for g, m in groups.items()}
        return {
            g: spread_optimal_target(m, model, rounds_remaining, cfg.headroom_frac)
            for g, m in groups.items()
        }
    targets = {}
    for g in groups:
        if g not in cfg.group_targets:
            raise PlanningError(f"no target configured for group {g}")
        value = cfg.group_targets[g]
        targets[g] = physics.resistance(value) if cfg.target_unit == "hz" else value
    return targets


def _die_plan(args) -> TunePlan:
    return collision_aware_plan(*args)


def plan_round(
    wafer: Wafer,
    cfg: CampaignConfig,
    model: DoseResponseModel,
    layout: QpuLayout,
    params: CollisionParams,
    physics: Physics | None = None,
    round_index: int | None = None,
    rounds_remaining: int = 1,
) -> TunePlan:
    """One round of the configured strategy over the whole wafer.

    ``rounds_remaining`` (this one included) lets the spread-optimal target
    rule account for the reach of later rounds.
    """
    physics = physics or Physics()
    if round_index is None:
        round_index = max(j.last_round for j in wafer.junctions) + 1 if wafer.junctions else 1
    strategy = cfg.strategy
    if strategy is Strategy.ENSEMBLE:
        plans = []
        for members in group_by_design(wafer).values():
            try:
                selected = select_below_median(members)
            except SelectionError:
                continue
            plans.append(ensemble_plan(selected, cfg.ensemble_shots, round_index, model))
        plan = merge_plans(plans, strategy, round_index)
    elif strategy is Strategy.TARGETED:
        targets = resolve_group_targets(wafer, cfg, model, physics, rounds_remaining)
        plans = [
            targeted_plan(members, targets[g], model, round_index, cfg.headroom_frac)
            for g, members in group_by_design(wafer).items()
        ]
        plan = merge_plans(plans, strategy, round_index)
    else:
        dies = [
            m for m in wafer.dies().values()
            if [j.qubit_index for j in m] == list(range(layout.qubit_count))
        ]
        jobs = [(m, layout, model, params, cfg, physics, round_index) for m in dies]
        if cfg.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                plans = list(pool.map(_die_plan, jobs))
        else:
            plans = [_die_plan(job) for job in jobs]
        plan = merge_plans(plans, strategy, round_index)
    # junctions outside every sub-plan still age
    predicted = predict_post(wafer.junctions, plan.entries, model)
    return replace(plan, predicted_post=predicted)


def wafer_sigma(wafer: Wafer) -> float:
    try:
        return normalized_spread_stats(wafer.junctions).sigma_percent
    except StatisticsError:
        return math.inf


def converged(
    wafer: Wafer,
    cfg: CampaignConfig,
    layout: QpuLayout,
    params: CollisionParams,
    physics: Physics | None = None,
    workers: int = 1,
) -> bool:
    """Spread at or below the stop level and no collisions other than S1."""
    if wafer_sigma(wafer) > cfg.stop_sigma_percent:
        return False
    cmap = wafer_collision_map(wafer, layout, params, physics, workers=workers)
    return all(total == 0 for total in cmap.totals().values())


def run_campaign_plan(
    wafer: Wafer,
    cfg: CampaignConfig,
    model: DoseResponseModel,
    layout: QpuLayout,
    params: CollisionParams,
    physics: Physics | None = None,
) -> list[TunePlan]:
    """Plan up to ``max_rounds`` rounds, advancing the wafer noiselessly between them."""
    physics = physics or Physics()
    plans = []
    for done in range(cfg.max_rounds):
        if converged(wafer, cfg, layout, params, physics):
            break
        plan = plan_round(
            wafer, cfg, model, layout, params, physics, rounds_remaining=cfg.max_rounds - done
        )
        plans.append(plan)
        wafer = advance_wafer(wafer, plan, model)
    return plans
