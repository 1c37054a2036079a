import json
import math

import numpy as np
import pytest

from ebtune.collisions import CollisionParams, default_layout
from ebtune.dose import CENTERED, DoseResponseModel, delta_r
from ebtune.errors import ApplicationError, ValidationError
from ebtune.physics import Physics
from ebtune.planner import CampaignConfig, PlanEntry, Strategy, TunePlan
from ebtune.simulate import (
    CampaignReport,
    WaferSpec,
    _lognormal_unit_mean,
    _stream,
    apply_plan,
    generate_wafer,
    run_campaign,
)
from ebtune.wafer import serialize_wafer

M = DoseResponseModel()
NOISELESS = DoseResponseModel(noise_rel_std=0.0)
PARAMS = CollisionParams()


def test_zero_sigma_lands_on_medians():
    spec = WaferSpec(dies=(2, 2), rel_sigma_percent=0.0, group_medians={1: 8000.0, 2: 7800.0, 3: 8800.0})
    w = generate_wafer(spec)
    assert {(j.group, j.latest) for j in w.junctions} == {(1, 8000.0), (2, 7800.0), (3, 8800.0)}


def test_default_medians_follow_layout_targets():
    w = generate_wafer(WaferSpec(rel_sigma_percent=0.0))
    physics = Physics()
    for j in w.junctions:
        assert j.latest == pytest.approx(physics.resistance(default_layout().target_frequency[j.group]))


def test_wafer_scale_and_determinism():
    spec = WaferSpec(dies=(9, 9), max_dies=69, seed=17, outlier_fraction=0.02)
    a, b = generate_wafer(spec), generate_wafer(spec)
    assert len(a) == 552
    assert serialize_wafer(a) == serialize_wafer(b)
    assert serialize_wafer(a) != serialize_wafer(generate_wafer(WaferSpec(dies=(9, 9), max_dies=69, seed=18)))
    assert len(a.dies()) == 69


def test_outliers_fall_outside_window():
    spec = WaferSpec(dies=(6, 6), rel_sigma_percent=0.0, outlier_fraction=1.0)
    medians = spec.medians()
    for j in generate_wafer(spec).junctions:
        ratio = j.latest / medians[j.group]
        assert ratio < 0.8 or ratio > 1.2


def test_spec_validation_and_json():
    with pytest.raises(ValidationError):
        WaferSpec(dies=(0, 3))
    with pytest.raises(ValidationError):
        WaferSpec(rel_sigma_percent=-1.0)
    spec = WaferSpec(dies=(3, 4), rel_sigma_percent={1: 2.76, 2: 3.59, 3: 2.99}, seed=4, max_dies=10)
    assert WaferSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


def test_lognormal_noise_has_unit_mean():
    rng = np.random.default_rng(0)
    draws = np.array([_lognormal_unit_mean(rng, 0.15) for _ in range(40000)])
    assert draws.mean() == pytest.approx(1.0, abs=0.005)
    assert draws.std() == pytest.approx(0.15, rel=0.05)
    assert (draws > 0).all()


def test_streams_are_independent_of_order():
    a = _stream(3, 2, "r0c0q1", 1).standard_normal()
    _stream(3, 2, "r0c0q0", 1).standard_normal()
    assert _stream(3, 2, "r0c0q1", 1).standard_normal() == a


@pytest.fixture(scope="module")
def small():
    return generate_wafer(WaferSpec(dies=(2, 3), rel_sigma_percent=3.11, seed=1))


def test_empty_plan_only_ages(small):
    out = apply_plan(small, TunePlan(1, (), Strategy.TARGETED, {}), M, seed=0)
    for before, after in zip(small.junctions, out.junctions):
        assert after.latest - before.latest == pytest.approx(15.0, abs=1e-9)
        assert after.resistance_history[:-1] == before.resistance_history


def test_saturation_dose_noiseless(small):
    jid = small.junctions[0].junction_id
    out = apply_plan(small, TunePlan(1, (PlanEntry(jid, 400),), Strategy.TARGETED, {}), NOISELESS, 0)
    shifts = {j.junction_id: j.latest - b.latest for j, b in zip(out.junctions, small.junctions)}
    assert shifts[jid] == pytest.approx(250.0 + 15.0, rel=1e-12)
    assert all(v == pytest.approx(15.0) for k, v in shifts.items() if k != jid)


def test_apply_rejects_unknown_ids(small):
    with pytest.raises(ApplicationError):
        apply_plan(small, TunePlan(1, (PlanEntry("ghost", 2),), Strategy.TARGETED, {}), M, 0)


def test_apply_is_seeded(small):
    plan = TunePlan(1, tuple(PlanEntry(j.junction_id, 6) for j in small.junctions), Strategy.ENSEMBLE, {})
    a, b, c = (apply_plan(small, plan, M, s) for s in (5, 5, 6))
    assert serialize_wafer(a) == serialize_wafer(b) != serialize_wafer(c)


def test_zero_spread_campaign_stops_at_round_zero():
    spec = WaferSpec(dies=(2, 2), rel_sigma_percent=0.0)
    report, final, plans = run_campaign(spec, CampaignConfig(), NOISELESS, PARAMS)
    assert plans == [] and report.rounds_run == 0
    assert report.tuned_vs_untuned_shift == (None, 0.0)


@pytest.fixture(scope="module")
def campaign():
    spec = WaferSpec(dies=(5, 5), rel_sigma_percent=3.11, seed=9, outlier_fraction=0.03)
    return run_campaign(spec, CampaignConfig(stop_sigma_percent=0.0), M, PARAMS)


def test_report_invariants(campaign):
    report, final, plans = campaign
    assert [r.round_index for r in report.per_round] == list(range(len(plans) + 1))
    dies = len(final.dies())
    for r in report.per_round:
        assert sum(r.collision_histogram.values()) == dies
        assert len(r.collision_map) == dies
    for j in final.junctions:
        ohms = [v for _, v in j.resistance_history]
        assert ohms == sorted(ohms)
    assert report.yield_delta == pytest.approx(report.final.yield_percent - report.initial.yield_percent)
    assert report.per_round[-1].yield_percent == pytest.approx(report.final.yield_percent)
    assert report.final.sigma_percent < report.initial.sigma_percent


def test_noiseless_targeted_improves_sigma():
    spec = WaferSpec(dies=(3, 3), rel_sigma_percent=3.11, seed=3)
    report, _, _ = run_campaign(spec, CampaignConfig(max_rounds=1, stop_sigma_percent=0.0), NOISELESS, PARAMS)
    assert report.final.sigma_percent < report.initial.sigma_percent


def test_report_round_trip(campaign):
    report = campaign[0]
    doc = json.dumps(report.to_dict(), allow_nan=False)
    back = CampaignReport.from_dict(json.loads(doc))
    assert back.to_dict() == report.to_dict()


def test_parallel_campaign_is_identical():
    spec = WaferSpec(dies=(3, 3), rel_sigma_percent=3.11, seed=4)
    cfg1 = CampaignConfig(strategy=Strategy.COLLISION_AWARE, max_sweeps=5)
    cfg2 = CampaignConfig(strategy=Strategy.COLLISION_AWARE, max_sweeps=5, workers=2)
    a = run_campaign(spec, cfg1, M, PARAMS)[0].to_dict()
    b = run_campaign(spec, cfg2, M, PARAMS)[0].to_dict()
    assert a == b


def test_ensemble_shift_separation_noiseless():
    model = DoseResponseModel(delta_r_sat=200.0 / (1 - math.exp(-2)), noise_rel_std=0.0)
    assert delta_r(8, CENTERED, model) == pytest.approx(200.0, rel=1e-14)
    spec = WaferSpec(dies=(4, 4), rel_sigma_percent=3.11, seed=0)
    cfg = CampaignConfig(max_rounds=1, strategy=Strategy.ENSEMBLE, ensemble_shots=8, stop_sigma_percent=0.0)
    report, _, _ = run_campaign(spec, cfg, model, PARAMS, collect_collisions=False)
    tuned, untuned = report.tuned_vs_untuned_shift
    assert tuned - untuned == pytest.approx(200.0, abs=1e-9)
    assert untuned == pytest.approx(15.0, abs=1e-9)
