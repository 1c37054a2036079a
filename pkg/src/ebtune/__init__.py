"""Wafer-scale Josephson-junction e-beam tuning planner and simulator."""

from .collisions import (
    CollisionHit,
    CollisionParams,
    CollisionReport,
    CollisionType,
    QpuLayout,
    assign_frequencies,
    default_layout,
    detect_collisions,
    wafer_collision_map,
    zero_spread_assessment,
)
from .dose import (
    BeamPlacement,
    DoseResponseModel,
    ambient_ageing,
    delta_r,
    fit_dose_response,
    invert_dose,
    proximity_factor,
)
from .physics import (
    MaterialParams,
    PhysicalConstants,
    Physics,
    QubitDesign,
    critical_current,
    frequency_from_resistance,
    josephson_energy,
    qubit_frequency,
    resistance_for_frequency,
)
from .planner import (
    CampaignConfig,
    Strategy,
    TunePlan,
    collision_aware_plan,
    ensemble_plan,
    run_campaign_plan,
    select_below_median,
    targeted_plan,
)
from .reports import emit_reports
from .simulate import CampaignReport, WaferSpec, apply_plan, generate_wafer, run_campaign
from .wafer import (
    Junction,
    SpreadStats,
    Status,
    Wafer,
    group_by_design,
    parse_wafer,
    serialize_wafer,
    spread_stats,
    yield_window,
)

__version__ = "0.1.0"
