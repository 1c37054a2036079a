"""Transmon resistance-to-frequency pipeline.

Normal-state junction resistance sets the critical current through the
Ambegaokar-Baratoff relation, the critical current sets the Josephson
energy, and together with the charging energy that fixes the 0-1
transition frequency of the transmon:

    I_c = pi * Delta / (2 e R_n)
    E_J = hbar * I_c / (2 e)
    f01 = (sqrt(8 E_J E_C) - E_C) / h

All frequencies are in hertz and all energies in joules.  Constants are
the exact SI (CODATA 2018) values of e and h; hbar is derived from h.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import DomainError, RegimeError

ELECTRON_CHARGE = 1.602176634e-19  # C, exact
PLANCK_H = 6.62607015e-34  # J s, exact
ELECTRON_VOLT = ELECTRON_CHARGE  # J per eV

DEFAULT_GAP_EV = 170e-6
DEFAULT_CHARGING_HZ = 200e6
TRANSMON_MIN_RATIO = 20.0


@dataclass(frozen=True)
class PhysicalConstants:
    electron_charge: float = ELECTRON_CHARGE
    planck_h: float = PLANCK_H
    planck_hbar: float = PLANCK_H / (2 * math.pi)

    def __post_init__(self):
        for name in ("electron_charge", "planck_h", "planck_hbar"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        expected = self.planck_h / (2 * math.pi)
        if abs(self.planck_hbar - expected) > 1e-12 * expected:
            raise DomainError("planck_hbar must equal planck_h / 2pi")


CODATA = PhysicalConstants()


@dataclass(frozen=True)
class MaterialParams:
    """Superconducting gap of the junction electrodes, in joules."""

    gap_delta: float = DEFAULT_GAP_EV * ELECTRON_VOLT

    def __post_init__(self):
        if not self.gap_delta > 0:
            raise DomainError("gap_delta must be positive")

    @classmethod
    def from_ev(cls, gap_ev: float) -> MaterialParams:
        return cls(gap_ev * ELECTRON_VOLT)

    @property
    def gap_ev(self) -> float:
        return self.gap_delta / ELECTRON_VOLT


@dataclass(frozen=True)
class QubitDesign:
    """Transmon shunt capacitance and the energies derived from it."""

    capacitance: float
    constants: PhysicalConstants = field(default=CODATA, repr=False)

    def __post_init__(self):
        if not self.capacitance > 0:
            raise DomainError("capacitance must be positive")

    @classmethod
    def from_charging_frequency(
        cls, e_c_hz: float = DEFAULT_CHARGING_HZ, k: PhysicalConstants = CODATA
    ) -> QubitDesign:
        if not e_c_hz > 0:
            raise DomainError("charging energy must be positive")
        e_c = e_c_hz * k.planck_h
        return cls(k.electron_charge**2 / (2 * e_c), k)

    @property
    def charging_energy(self) -> float:
        return self.constants.electron_charge**2 / (2 * self.capacitance)

    @property
    def charging_frequency(self) -> float:
        return self.charging_energy / self.constants.planck_h

    @property
    def anharmonicity(self) -> float:
        """Transmon anharmonicity in hertz, taken as -E_C/h."""
        return -self.charging_frequency


def critical_current(r_n: float, m: MaterialParams, k: PhysicalConstants = CODATA) -> float:
    """Ambegaokar-Baratoff critical current in amperes."""
    if not r_n > 0:
        raise DomainError(f"resistance must be positive, got {r_n!r}")
    return math.pi * m.gap_delta / (2 * k.electron_charge * r_n)


def josephson_energy(i_c: float, k: PhysicalConstants = CODATA) -> float:
    if not i_c >= 0:
        raise DomainError(f"critical current must be non-negative, got {i_c!r}")
    return k.planck_hbar * i_c / (2 * k.electron_charge)


def qubit_frequency(
    e_j: float,
    e_c: float,
    k: PhysicalConstants = CODATA,
    *,
    allow_non_transmon: bool = False,
) -> float:
    """0-1 transition frequency in hertz.

    Raises RegimeError when E_J/E_C < 20 unless ``allow_non_transmon`` is set.
    """
    if not e_c > 0:
        raise DomainError("charging energy must be positive")
    if e_j < 0:
        raise DomainError("Josephson energy must be non-negative")
    if not allow_non_transmon and e_j / e_c < TRANSMON_MIN_RATIO:
        raise RegimeError(
            f"E_J/E_C = {e_j / e_c:.3g} is below the transmon limit {TRANSMON_MIN_RATIO:g}"
        )
    return (math.sqrt(8 * e_j * e_c) - e_c) / k.planck_h


def frequency_from_resistance(
    r_n: float,
    m: MaterialParams,
    d: QubitDesign,
    k: PhysicalConstants = CODATA,
    *,
    allow_non_transmon: bool = False,
) -> float:
    e_j = josephson_energy(critical_current(r_n, m, k), k)
    return qubit_frequency(e_j, d.charging_energy, k, allow_non_transmon=allow_non_transmon)


def max_frequency(m: MaterialParams, k: PhysicalConstants = CODATA) -> float:
    """Pair-breaking ceiling 2*Delta/h; no transmon can be targeted at or above it."""
    return 2 * m.gap_delta / k.planck_h


def resistance_for_frequency(
    f_target: float,
    m: MaterialParams,
    d: QubitDesign,
    k: PhysicalConstants = CODATA,
) -> float:
    """Closed-form inverse of :func:`frequency_from_resistance`."""
    if not f_target > 0:
        raise DomainError(f"target frequency must be positive, got {f_target!r}")
    if f_target >= max_frequency(m, k):
        raise DomainError(
            f"target {f_target:.6g} Hz is above the gap-limited maximum "
            f"{max_frequency(m, k):.6g} Hz"
        )
    e_c = d.charging_energy
    e_j = (k.planck_h * f_target + e_c) ** 2 / (8 * e_c)
    if e_j / e_c < TRANSMON_MIN_RATIO:
        raise RegimeError(f"target {f_target:.6g} Hz lies outside the transmon regime")
    # E_J = pi Delta hbar / (4 e^2 R)
    return math.pi * m.gap_delta * k.planck_hbar / (4 * k.electron_charge**2 * e_j)


def frequency_slope(
    r_n: float, m: MaterialParams, d: QubitDesign, k: PhysicalConstants = CODATA
) -> float:
    """Analytic d(f01)/d(R_n) in Hz per ohm (negative)."""
    if not r_n > 0:
        raise DomainError("resistance must be positive")
    scale = math.pi * m.gap_delta * k.planck_hbar / (4 * k.electron_charge**2)
    return -math.sqrt(8 * scale * d.charging_energy) / (2 * k.planck_h) * r_n**-1.5


@dataclass(frozen=True)
class Physics:
    """Bundle of the three configuration objects the pipeline needs."""

    material: MaterialParams = field(default_factory=MaterialParams)
    design: QubitDesign = field(default_factory=QubitDesign.from_charging_frequency)
    constants: PhysicalConstants = CODATA

    def frequency(self, r_n: float) -> float:
        return frequency_from_resistance(r_n, self.material, self.design, self.constants)

    def resistance(self, f: float) -> float:
        return resistance_for_frequency(f, self.material, self.design, self.constants)

    @property
    def anharmonicity(self) -> float:
        return self.design.anharmonicity

    def to_dict(self) -> dict:
        return {
            "gap_delta_ev": self.material.gap_ev,
            "charging_energy_hz": self.design.charging_frequency,
        }

    @classmethod
    def from_dict(cls, data: dict) -> Physics:
        return cls(
            material=MaterialParams.from_ev(float(data.get("gap_delta_ev", DEFAULT_GAP_EV))),
            design=QubitDesign.from_charging_frequency(
                float(data.get("charging_energy_hz", DEFAULT_CHARGING_HZ))
            ),
        )
