import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import FIVE_COLLISION_DIE, count_excluding_s1_batch, exhaustive_min_collisions, freq_from_r, ring_edges

from ebtune.collisions import CollisionEngine, CollisionParams, default_layout
from ebtune.dose import CENTERED, DoseResponseModel, delta_r, invert_dose, max_shift
from ebtune.errors import ApplicationError, PlanningError, SelectionError, ValidationError
from ebtune.physics import Physics
from ebtune.planner import (
    CampaignConfig,
    DieObjective,
    PlanEntry,
    Strategy,
    TunePlan,
    advance_wafer,
    collision_aware_plan,
    ensemble_plan,
    plan_round,
    run_campaign_plan,
    select_below_median,
    shot_grid,
    spread_optimal_target,
    targeted_plan,
    wafer_sigma,
)
from ebtune.simulate import WaferSpec, generate_wafer
from ebtune.wafer import Junction, Status, Wafer

M = DoseResponseModel()
NOISELESS = DoseResponseModel(noise_rel_std=0.0)
LAYOUT = default_layout()
PARAMS = CollisionParams()
PHYS = Physics()
CA = CampaignConfig(strategy=Strategy.COLLISION_AWARE)


def group(values, g=1):
    return [Junction(f"j{i}", 0, i, 0, g, (0.0, 0.0), ((0, float(v)),)) for i, v in enumerate(values)]


def die(resistances, row=0, col=0):
    return [
        Junction(f"r{row}c{col}q{q}", row, col, q, LAYOUT.group_of[q], (0.0, 0.0), ((0, float(r)),))
        for q, r in enumerate(resistances)
    ]


def on_target():
    return [PHYS.resistance(f) for f in LAYOUT.target_frequencies()]


# --- selection and ensemble --------------------------------------------------


def test_select_below_median():
    chosen = select_below_median(group([100, 102, 98, 104]))
    assert sorted(j.latest for j in chosen) == [98, 100]
    assert select_below_median(group([5, 5, 5])) == []
    with pytest.raises(SelectionError):
        select_below_median([])
    with pytest.raises(SelectionError):
        select_below_median(group([100]))


def test_select_roughly_half_of_gaussian_group():
    rng = np.random.default_rng(1)
    members = group(8000 * (1 + 0.03 * rng.standard_normal(400)))
    assert 180 <= len(select_below_median(members)) <= 200


def test_ensemble_plan():
    chosen = group([100, 98])
    plan = ensemble_plan(chosen, 8, 1, M)
    assert [e.shots for e in plan.entries] == [8, 8]
    shifts = [plan.predicted_post[j.junction_id] - j.latest for j in chosen]
    assert shifts[0] == pytest.approx(shifts[1], rel=1e-15)
    assert len(ensemble_plan([], 8, 1, M)) == 0
    with pytest.raises(PlanningError):
        ensemble_plan(chosen, 0, 1, M)


# --- targeted ----------------------------------------------------------------


def test_targeted_examples():
    target = 8000.0
    members = group([8000.0, 7900.0, 7600.0, 8000.0, 7990.0])
    plan = targeted_plan(members, target, M, 1)
    shots = plan.shots_by_id()
    assert "j0" not in shots and "j3" not in shots
    assert shots["j1"] == invert_dose(100.0 - 15.0, CENTERED, M)
    sat = invert_dose(max_shift(CENTERED, M), CENTERED, M)
    assert shots["j2"] == sat and plan.partially_tunable == ("j2",)
    # within ageing of the target: nothing to do
    assert "j4" not in shots


def test_targeted_rejects_target_below_median():
    with pytest.raises(PlanningError):
        targeted_plan(group([8000, 8100, 8200]), 8050.0, M, 1)


def test_targeted_leaves_out_of_window_junctions_alone():
    plan = targeted_plan(group([8000, 8050, 7990, 5000]), 8100.0, M, 1)
    assert "j3" not in plan.shots_by_id()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(7700.0, 8300.0), min_size=4, max_size=30), st.floats(0.0, 200.0))
def test_noiseless_targeted_lands_within_one_shot(values, above):
    members = group(values)
    target = max(values) + above
    plan = targeted_plan(members, target, NOISELESS, 1)
    after = advance_wafer(Wafer("W", tuple(members)), plan, NOISELESS).by_id()
    partial = set(plan.partially_tunable)
    for j in members:
        r = after[j.junction_id].latest
        assert r >= j.latest
        n = plan.shots_by_id().get(j.junction_id, 0)
        if j.junction_id in partial or n == 0:
            continue
        step = delta_r(n, CENTERED, NOISELESS) - delta_r(n - 1, CENTERED, NOISELESS)
        assert 0 <= r - target < step + 1e-9


def test_spread_optimal_target_is_a_member_plus_ageing():
    values = [7800.0, 7900.0, 8000.0, 8050.0, 8400.0]
    t = spread_optimal_target(group(values), M, rounds_remaining=1)
    assert t - 15.0 in values and t - 15.0 >= 8000.0


# --- collision-aware ---------------------------------------------------------


def test_collision_free_die_gets_empty_plan():
    plan = collision_aware_plan(die(on_target()), LAYOUT, M, PARAMS, CA)
    assert plan.entries == ()


def test_single_a1_pair_resolved():
    r = on_target()
    # qubits 0 and 1 parked 15 MHz apart; qubit 1 has the lower resistance
    r[0] = PHYS.resistance(4.860e9)
    r[1] = PHYS.resistance(4.875e9)
    engine = CollisionEngine(LAYOUT, PARAMS)
    before = engine.detect([PHYS.frequency(x) for x in r])
    assert before.per_type_counts["A1"] == 1
    best, _, _ = exhaustive_min_collisions(r, ring_edges(8))
    assert best == 0
    plan = collision_aware_plan(die(r), LAYOUT, M, PARAMS, CA)
    post = [plan.predicted_post[f"r0c0q{q}"] for q in range(8)]
    assert engine.detect([PHYS.frequency(x) for x in post]).total_excluding_s1 == 0
    assert "r0c0q1" in plan.shots_by_id()


def test_five_collision_die_exhaustive_certificate():
    pre = count_excluding_s1_batch(freq_from_r(np.array([FIVE_COLLISION_DIE])), ring_edges(8))[0]
    assert pre == 5
    best, arg, _ = exhaustive_min_collisions(FIVE_COLLISION_DIE, ring_edges(8))
    assert best == 0
    assert shot_grid(M) == [0, 4, 8, 12]


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_local_search_never_worse_than_nothing(seed):
    rng = np.random.default_rng(seed)
    r = [x * (1 - rng.uniform(0, 0.03)) for x in on_target()]
    cfg = CampaignConfig(strategy=Strategy.COLLISION_AWARE, seed=seed, max_sweeps=5)
    plan = collision_aware_plan(die(r), LAYOUT, M, PARAMS, cfg)
    obj = DieObjective(die(r), LAYOUT, M, PARAMS, cfg.objective_weights, PHYS)
    shots = [plan.shots_by_id().get(f"r0c0q{q}", 0) for q in range(8)]
    assert obj(shots) <= obj([0] * 8)
    assert all(plan.predicted_post[j.junction_id] >= j.latest for j in die(r))


def test_collision_aware_is_deterministic():
    a = collision_aware_plan(die(FIVE_COLLISION_DIE), LAYOUT, M, PARAMS, CA)
    b = collision_aware_plan(die(FIVE_COLLISION_DIE), LAYOUT, M, PARAMS, CA)
    assert a.to_json() == b.to_json()


def test_incomplete_die_rejected():
    with pytest.raises(PlanningError):
        collision_aware_plan(die(on_target())[:7], LAYOUT, M, PARAMS, CA)


# --- rounds ------------------------------------------------------------------


@pytest.fixture(scope="module")
def wafer():
    return generate_wafer(WaferSpec(dies=(4, 4), rel_sigma_percent=3.11, seed=2))


def test_plan_round_parallel_matches_sequential(wafer):
    one = plan_round(wafer, CA, M, LAYOUT, PARAMS)
    two = plan_round(wafer, CampaignConfig(strategy=Strategy.COLLISION_AWARE, workers=2), M, LAYOUT, PARAMS)
    assert one.to_json() == two.to_json()
    assert set(one.predicted_post) == {j.junction_id for j in wafer.junctions}


@pytest.mark.parametrize("strategy", list(Strategy))
def test_predicted_post_never_decreases(wafer, strategy):
    plan = plan_round(wafer, CampaignConfig(strategy=strategy), M, LAYOUT, PARAMS)
    for j in wafer.junctions:
        assert plan.predicted_post[j.junction_id] >= j.latest
    assert all(e.shots >= 1 for e in plan.entries)


def test_campaign_plan_sigma_non_increasing(wafer):
    cfg = CampaignConfig(stop_sigma_percent=0.0)
    plans = run_campaign_plan(wafer, cfg, NOISELESS, LAYOUT, PARAMS)
    assert len(plans) == 3
    sigmas = [wafer_sigma(wafer)]
    w = wafer
    for p in plans:
        w = advance_wafer(w, p, NOISELESS)
        sigmas.append(wafer_sigma(w))
    assert all(b <= a + 1e-12 for a, b in zip(sigmas, sigmas[1:]))
    assert sigmas[-1] < sigmas[0]


def test_campaign_plan_stops_before_round_one():
    w = Wafer("W", tuple(die(on_target())))
    assert run_campaign_plan(w, CampaignConfig(), M, LAYOUT, PARAMS) == []


def test_group_targets_in_hertz(wafer):
    cfg = CampaignConfig(group_targets={1: 4.80e9, 2: 4.95e9, 3: 4.64e9}, target_unit="hz")
    plan = plan_round(wafer, cfg, M, LAYOUT, PARAMS)
    assert len(plan) > 0
    with pytest.raises(PlanningError):
        plan_round(wafer, CampaignConfig(group_targets={1: 9000.0}), M, LAYOUT, PARAMS)


def test_advance_wafer_contract(wafer):
    plan = plan_round(wafer, CampaignConfig(), M, LAYOUT, PARAMS)
    after = advance_wafer(wafer, plan, M)
    planned = plan.shots_by_id()
    for j in after.junctions:
        assert j.last_round == 1
        assert j.status is (Status.TUNED if j.junction_id in planned else Status.AS_FABRICATED)
        assert j.latest == pytest.approx(plan.predicted_post[j.junction_id], rel=1e-15)
    with pytest.raises(ApplicationError):
        advance_wafer(after, plan, M)
    bogus = TunePlan(2, (PlanEntry("nope", 3),), Strategy.TARGETED, {})
    with pytest.raises(ApplicationError):
        advance_wafer(after, bogus, M)


def test_plan_json_round_trip(wafer):
    plan = plan_round(wafer, CampaignConfig(), M, LAYOUT, PARAMS)
    back = TunePlan.from_dict(json.loads(plan.to_json()))
    assert back == plan and back.to_json() == plan.to_json()
    with pytest.raises(ValidationError):
        TunePlan.from_dict({"schema_version": 1, "round": 1})


def test_config_validation():
    with pytest.raises(ValidationError):
        CampaignConfig(max_rounds=0)
    with pytest.raises(ValidationError):
        CampaignConfig(objective_weights=(0.0, 0.0))
    with pytest.raises(ValidationError):
        CampaignConfig(objective_weights=(-1.0, 1.0))
    with pytest.raises(ValidationError):
        PlanEntry("a", 0)
    cfg = CampaignConfig(strategy="collision-aware", objective_weights=(0.5, 2.0), group_targets={1: 8000.0})
    assert CampaignConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    assert Strategy.parse("ensemble") is Strategy.ENSEMBLE
    assert math.isfinite(CampaignConfig().stop_sigma_percent)
