"""Phenomenological e-beam dose response.

A junction exposed with ``n`` shots at signed beam offset ``D`` gains

    dR = g(D) * dR_sat * (1 - exp(-n / n0)),    g(D) = exp(-D^2 / (2 s^2))

on top of an ambient ageing drift that every junction sees each round.
Tuning only ever raises resistance.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import least_squares

from .errors import DomainError, FitError

DEFAULT_HEADROOM = 0.95


@dataclass(frozen=True)
class DoseResponseModel:
    delta_r_sat: float = 250.0  # ohm
    shots_scale: float = 4.0  # n0, shots
    proximity_sigma: float = 13.0  # um
    ageing_per_round: float = 15.0  # ohm
    noise_rel_std: float = 0.15

    def __post_init__(self):
        if not self.delta_r_sat >= 0:
            raise DomainError("delta_r_sat must be >= 0")
        if not self.shots_scale > 0:
            raise DomainError("shots_scale must be > 0")
        if not self.proximity_sigma > 0:
            raise DomainError("proximity_sigma must be > 0")
        if not self.ageing_per_round >= 0:
            raise DomainError("ageing_per_round must be >= 0")
        if not self.noise_rel_std >= 0:
            raise DomainError("noise_rel_std must be >= 0")

    def to_dict(self) -> dict:
        return {
            "delta_r_sat_ohm": self.delta_r_sat,
            "shots_scale": self.shots_scale,
            "proximity_sigma_um": self.proximity_sigma,
            "ageing_per_round_ohm": self.ageing_per_round,
            "noise_rel_std": self.noise_rel_std,
        }

    @classmethod
    def from_dict(cls, data: dict) -> DoseResponseModel:
        default = cls()
        return cls(
            delta_r_sat=float(data.get("delta_r_sat_ohm", default.delta_r_sat)),
            shots_scale=float(data.get("shots_scale", default.shots_scale)),
            proximity_sigma=float(data.get("proximity_sigma_um", default.proximity_sigma)),
            ageing_per_round=float(data.get("ageing_per_round_ohm", default.ageing_per_round)),
            noise_rel_std=float(data.get("noise_rel_std", default.noise_rel_std)),
        )


@dataclass(frozen=True)
class BeamPlacement:
    """Signed beam-centre offset from the junction and exposure square side."""

    distance_um: float = 0.0
    area_um: float = 15.0

    def __post_init__(self):
        if not self.area_um > 0:
            raise DomainError("area_um must be > 0")


CENTERED = BeamPlacement()


def proximity_factor(d: BeamPlacement, m: DoseResponseModel) -> float:
    return math.exp(-(d.distance_um**2) / (2 * m.proximity_sigma**2))


def delta_r(shots: int, d: BeamPlacement, m: DoseResponseModel) -> float:
    if shots < 0:
        raise DomainError("shots must be >= 0")
    return proximity_factor(d, m) * m.delta_r_sat * -math.expm1(-shots / m.shots_scale)


def max_shift(d: BeamPlacement, m: DoseResponseModel, headroom_frac: float = DEFAULT_HEADROOM) -> float:
    """Largest shift the planner will request at this placement."""
    return headroom_frac * proximity_factor(d, m) * m.delta_r_sat


def invert_dose(
    target_shift: float,
    d: BeamPlacement,
    m: DoseResponseModel,
    headroom_frac: float = DEFAULT_HEADROOM,
) -> int | None:
    """Fewest shots whose shift reaches ``target_shift``; None if unreachable."""
    if target_shift < 0:
        raise DomainError("target shift must be >= 0")
    if target_shift == 0:
        return 0
    ceiling = max_shift(d, m, headroom_frac)
    if target_shift > ceiling or ceiling <= 0:
        return None
    amp = proximity_factor(d, m) * m.delta_r_sat
    shots = max(1, math.ceil(-m.shots_scale * math.log1p(-target_shift / amp)))
    # repair the float ceiling so the exact bracketing contract holds
    while shots > 1 and delta_r(shots - 1, d, m) >= target_shift:
        shots -= 1
    while delta_r(shots, d, m) < target_shift:
        shots += 1
    return shots


def ambient_ageing(rounds: int, m: DoseResponseModel) -> float:
    if rounds < 0:
        raise DomainError("rounds must be >= 0")
    return rounds * m.ageing_per_round


@dataclass(frozen=True)
class DoseFit:
    model: DoseResponseModel
    offset: float  # ohm, shift common to all points including zero dose
    residual_norm: float


def _saturating(params, shots):
    sat, n0, offset = params
    return offset + sat * -np.expm1(-shots / n0)


def fit_dose_response(
    samples: Sequence[tuple[float, float]],
    base: DoseResponseModel | None = None,
) -> DoseFit:
    """Least-squares fit of (dR_sat, n0) plus a constant ageing offset.

    ``samples`` are (shots, mean shift) pairs.  Fields not fitted are taken
    from ``base``; the offset becomes the model's per-round ageing.
    """
    base = base or DoseResponseModel()
    if len(samples) < 3:
        raise FitError("need at least 3 samples")
    shots = np.array([s for s, _ in samples], dtype=float)
    shift = np.array([r for _, r in samples], dtype=float)
    if not (np.all(np.isfinite(shots)) and np.all(np.isfinite(shift))):
        raise FitError("samples must be finite")
    if np.any(shots < 0):
        raise FitError("shot counts must be >= 0")
    if len(np.unique(shots)) < 3:
        raise FitError("need at least 3 distinct shot counts")
    span = float(shift.max() - shift.min())
    if span <= 1e-12 * max(1.0, float(np.abs(shift).max())):
        raise FitError("all shifts are equal; saturation is not identifiable")

    order = np.argsort(shots)
    s_sorted, r_sorted = shots[order], shift[order]
    offset0 = max(0.0, float(r_sorted[0]))
    sat0 = max(span, 1e-9)
    level = r_sorted[0] + (1 - math.exp(-1)) * span
    idx = int(np.searchsorted(r_sorted, level)) if np.all(np.diff(r_sorted) >= 0) else len(s_sorted) // 2
    n0_guess = float(s_sorted[min(max(idx, 1), len(s_sorted) - 1)])
    positive = s_sorted[s_sorted > 0]
    n_lo = 1e-3 * float(positive.min())
    n_hi = 1e3 * float(s_sorted.max())
    n0_guess = min(max(n0_guess, n_lo * 10), n_hi / 10)

    result = least_squares(
        lambda p: _saturating(p, shots) - shift,
        x0=[sat0, n0_guess, offset0],
        bounds=([0.0, n_lo, 0.0], [10 * span + abs(float(shift.max())), n_hi, np.inf]),
        x_scale=[sat0, n0_guess, max(span, 1.0)],
        xtol=1e-15,
        ftol=1e-15,
        gtol=1e-15,
        max_nfev=10_000,
    )
    if not result.success:
        raise FitError(f"fit did not converge: {result.message}")
    sat, n0, offset = (float(v) for v in result.x)
    model = replace(base, delta_r_sat=sat, shots_scale=n0, ageing_per_round=offset)
    return DoseFit(model=model, offset=offset, residual_norm=float(np.linalg.norm(result.fun)))
